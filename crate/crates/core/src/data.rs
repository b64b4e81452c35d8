//! Labeled and unlabeled collections of fixed-length signal windows.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// How raw windows are turned into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    /// Per-window zero mean, unit variance.
    #[default]
    Standardize,
    /// Standardized one-sided magnitude spectrum (`L / 2` bins, DC excluded).
    Spectrum,
}

impl Preprocessing {
    pub fn input_len(self, window_len: usize) -> usize {
        match self {
            Preprocessing::Standardize => window_len,
            Preprocessing::Spectrum => window_len / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Tensor,
    labels: Option<Vec<usize>>,
    /// Ground truth kept out of training, for diagnostics only.
    withheld: Option<Vec<usize>>,
    domain: Domain,
}

impl Dataset {
    pub fn new(windows: Tensor, labels: Option<Vec<usize>>, domain: Domain) -> Result<Self> {
        if windows.shape().len() != 2 {
            return Err(Error::Input(format!(
                "windows must be [samples, length], got {:?}",
                windows.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != windows.rows() {
                return Err(Error::Input(format!(
                    "{} labels for {} windows",
                    l.len(),
                    windows.rows()
                )));
            }
        }
        Ok(Self { windows, labels, withheld: None, domain })
    }

    pub fn len(&self) -> usize {
        self.windows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.windows.row_len()
    }

    pub fn windows(&self) -> &Tensor {
        &self.windows
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn withheld_labels(&self) -> Option<&[usize]> {
        self.withheld.as_deref()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Input(format!("{} dataset is unlabeled", self.domain.as_str())))
    }

    /// Moves the labels out of sight of training code.
    pub fn withhold_labels(mut self) -> Self {
        if let Some(l) = self.labels.take() {
            self.withheld = Some(l);
        }
        self
    }

    /// `1 + max label` over visible or withheld labels.
    pub fn class_count_hint(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .or(self.withheld.as_ref())
            .and_then(|l| l.iter().max())
            .map(|m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |l: &Vec<usize>| indices.iter().map(|&i| l[i]).collect::<Vec<_>>();
        Ok(Self {
            windows: self.windows.select_rows(indices)?,
            labels: self.labels.as_ref().map(pick),
            withheld: self.withheld.as_ref().map(pick),
            domain: self.domain,
        })
    }

    pub fn preprocess(&self, mode: Preprocessing) -> Result<Self> {
        let n = self.len();
        let rows: Vec<Vec<f64>> = match mode {
            Preprocessing::Standardize => (0..n).map(|i| standardize(self.windows.row(i))).collect(),
            Preprocessing::Spectrum => {
                let len = self.window_len();
                let fft = FftPlanner::new().plan_fft_forward(len);
                (0..n)
                    .map(|i| standardize(&magnitude_spectrum(&fft, &standardize(self.windows.row(i)))))
                    .collect()
            }
        };
        Ok(Self { windows: Tensor::from_rows(&rows)?, ..self.clone() })
    }
}

/// Zero mean, unit variance; constant windows become all zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 0.0 {
        x.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; x.len()]
    }
}

fn magnitude_spectrum(fft: &Arc<dyn rustfft::Fft<f64>>, x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[1..=x.len() / 2].iter().map(|c| c.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_windows_have_zero_mean_unit_variance() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin() * 5.0 + 2.0).collect();
        let z = standardize(&x);
        let mean = z.iter().sum::<f64>() / 64.0;
        let var = z.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(standardize(&[3.0; 8]), vec![0.0; 8]);
    }

    #[test]
    fn withholding_hides_labels() {
        let w = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let d = Dataset::new(w, Some(vec![1, 0]), Domain::Target).unwrap().withhold_labels();
        assert!(d.labels().is_none());
        assert_eq!(d.withheld_labels(), Some(&[1, 0][..]));
        assert!(d.require_labels().is_err());
        assert_eq!(d.class_count_hint(), Some(2));
    }

    #[test]
    fn spectrum_halves_the_input() {
        let x: Vec<f64> = (0..64).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 64.0).sin()).collect();
        let d = Dataset::new(Tensor::from_rows(&[x]).unwrap(), None, Domain::Source).unwrap();
        let s = d.preprocess(Preprocessing::Spectrum).unwrap();
        assert_eq!(s.window_len(), Preprocessing::Spectrum.input_len(64));
        let row = s.windows().row(0);
        let peak = crate::nn::argmax(row);
        assert_eq!(peak + 1, 5);
    }
}
