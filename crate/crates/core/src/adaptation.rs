//! Marginal, class-conditional and joint MMD penalties on feature batches.
//!
//! The kernel feature map is the network's feature layer itself, so every
//! discrepancy here is the squared Euclidean distance between feature means
//! (biased estimator, computed per mini-batch).

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// Marginal distribution adaptation only.
    Mda,
    /// Marginal plus per-class conditional adaptation.
    Jda,
}

impl AdaptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdaptMode::Mda => "mda",
            AdaptMode::Jda => "jda",
        }
    }
}

/// Features of one domain's half-batch with true (source) or pseudo (target) labels.
#[derive(Debug, Clone)]
pub struct FeatureBatch<'a> {
    pub features: &'a Tensor,
    pub labels: &'a [usize],
    pub domain: Domain,
}

impl<'a> FeatureBatch<'a> {
    pub fn new(features: &'a Tensor, labels: &'a [usize], domain: Domain) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() == 0 {
            return Err(Error::Input(format!(
                "feature batch must be a non-empty [n, F] tensor, got {:?}",
                features.shape()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Input(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        Ok(Self { features, labels, domain })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.row_len()
    }
}

/// A discrepancy value and its gradient with respect to every feature row.
/// Rows that do not take part in the term carry zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdTerm {
    pub value: f64,
    pub grad_source: Tensor,
    pub grad_target: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyResult {
    pub marginal_mmd2: f64,
    /// One entry per class; `None` where the class is absent from either batch
    /// (and always `None` in MDA mode).
    pub conditional_mmd2: Vec<Option<f64>>,
    pub total: f64,
    pub dfeatures_source: Tensor,
    pub dfeatures_target: Tensor,
}

impl PenaltyResult {
    pub fn conditional_sum(&self) -> f64 {
        self.conditional_mmd2.iter().flatten().sum()
    }
}

fn check_widths(src: &FeatureBatch, tgt: &FeatureBatch) -> Result<()> {
    if src.width() != tgt.width() {
        return Err(Error::Input(format!(
            "feature widths differ: {} vs {}",
            src.width(),
            tgt.width()
        )));
    }
    Ok(())
}

fn mean_of(features: &Tensor, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; features.row_len()];
    for &i in members {
        mean.iter_mut().zip(features.row(i)).for_each(|(m, v)| *m += v);
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Squared mean difference over the member rows of each batch.
fn mean_discrepancy(src: &FeatureBatch, tgt: &FeatureBatch, src_rows: &[usize], tgt_rows: &[usize]) -> MmdTerm {
    let ms = mean_of(src.features, src_rows);
    let mt = mean_of(tgt.features, tgt_rows);
    let diff: Vec<f64> = ms.iter().zip(&mt).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|d| d * d).sum();

    let fill = |batch: &FeatureBatch, rows: &[usize], scale: f64| {
        let mut g = Tensor::zeros(batch.features.shape().to_vec());
        for &i in rows {
            g.row_mut(i).iter_mut().zip(&diff).for_each(|(gv, d)| *gv = scale * d);
        }
        g
    };
    MmdTerm {
        value,
        grad_source: fill(src, src_rows, 2.0 / src_rows.len() as f64),
        grad_target: fill(tgt, tgt_rows, -2.0 / tgt_rows.len() as f64),
    }
}

/// `|| mean(src) - mean(tgt) ||^2` with per-row gradients
/// `2/n_s (mean_s - mean_t)` and `2/n_t (mean_t - mean_s)`.
pub fn marginal_mmd2(src: &FeatureBatch, tgt: &FeatureBatch) -> Result<MmdTerm> {
    check_widths(src, tgt)?;
    let all_s: Vec<usize> = (0..src.len()).collect();
    let all_t: Vec<usize> = (0..tgt.len()).collect();
    Ok(mean_discrepancy(src, tgt, &all_s, &all_t))
}

/// The marginal discrepancy restricted to rows labeled `class`; `None` if
/// either batch has no such rows.
pub fn conditional_mmd2(src: &FeatureBatch, tgt: &FeatureBatch, class: usize) -> Result<Option<MmdTerm>> {
    check_widths(src, tgt)?;
    let members = |b: &FeatureBatch| -> Vec<usize> {
        b.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    };
    let (s, t) = (members(src), members(tgt));
    if s.is_empty() || t.is_empty() {
        return Ok(None);
    }
    Ok(Some(mean_discrepancy(src, tgt, &s, &t)))
}

/// Marginal term plus (in JDA mode) the sum of the conditional terms over
/// `num_classes` classes, with summed feature gradients.
pub fn jda_penalty(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    mode: AdaptMode,
    num_classes: usize,
) -> Result<PenaltyResult> {
    for batch in [src, tgt] {
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
        }
    }
    let marginal = marginal_mmd2(src, tgt)?;
    let mut total = marginal.value;
    let mut dsrc = marginal.grad_source;
    let mut dtgt = marginal.grad_target;
    let mut conditional = vec![None; num_classes];
    if mode == AdaptMode::Jda {
        for (class, slot) in conditional.iter_mut().enumerate() {
            if let Some(term) = conditional_mmd2(src, tgt, class)? {
                total += term.value;
                dsrc.add_assign(&term.grad_source)?;
                dtgt.add_assign(&term.grad_target)?;
                *slot = Some(term.value);
            }
        }
    }
    Ok(PenaltyResult {
        marginal_mmd2: marginal.value,
        conditional_mmd2: conditional,
        total,
        dfeatures_source: dsrc,
        dfeatures_target: dtgt,
    })
}

/// Predicted classes for the whole target pool.
pub fn assign_pseudo_labels(net: &Network, target: &Dataset) -> Result<Vec<usize>> {
    net.predict(target.windows())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_discrepancy() {
        let f = t(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]]);
        let l = [0, 1, 0];
        let a = FeatureBatch::new(&f, &l, Domain::Source).unwrap();
        let b = FeatureBatch::new(&f, &l, Domain::Target).unwrap();
        let m = marginal_mmd2(&a, &b).unwrap();
        assert_eq!(m.value, 0.0);
        assert!(m.grad_source.data().iter().all(|&g| g == 0.0));
        assert!(m.grad_target.data().iter().all(|&g| g == 0.0));
        assert_eq!(jda_penalty(&a, &b, AdaptMode::Jda, 2).unwrap().total, 0.0);
    }

    #[test]
    fn mean_difference_example() {
        let fs = t(&[vec![0.0, 0.0], vec![4.0, 0.0]]);
        let ft = t(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let l = [0, 0];
        let s = FeatureBatch::new(&fs, &l, Domain::Source).unwrap();
        let tg = FeatureBatch::new(&ft, &l, Domain::Target).unwrap();
        assert_eq!(marginal_mmd2(&s, &tg).unwrap().value, 1.0);
        assert_eq!(marginal_mmd2(&tg, &s).unwrap().value, 1.0);
    }

    #[test]
    fn one_dimensional_conditional_example() {
        let fs = t(&[vec![0.0], vec![9.0]]);
        let ft = t(&[vec![2.0], vec![-5.0]]);
        let (ls, lt) = ([1, 0], [1, 2]);
        let s = FeatureBatch::new(&fs, &ls, Domain::Source).unwrap();
        let tg = FeatureBatch::new(&ft, &lt, Domain::Target).unwrap();
        let term = conditional_mmd2(&s, &tg, 1).unwrap().unwrap();
        assert_eq!(term.value, 4.0);
        assert_eq!(term.grad_source.data(), &[-4.0, 0.0]);
        assert_eq!(term.grad_target.data(), &[4.0, 0.0]);
        assert!(conditional_mmd2(&s, &tg, 0).unwrap().is_none());
        assert!(conditional_mmd2(&s, &tg, 2).unwrap().is_none());
    }

    #[test]
    fn mda_mode_is_marginal_only() {
        let fs = t(&[vec![0.0, 1.0], vec![3.0, -1.0]]);
        let ft = t(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let l = [0, 1];
        let s = FeatureBatch::new(&fs, &l, Domain::Source).unwrap();
        let tg = FeatureBatch::new(&ft, &l, Domain::Target).unwrap();
        let p = jda_penalty(&s, &tg, AdaptMode::Mda, 2).unwrap();
        assert_eq!(p.total, p.marginal_mmd2);
        assert!(p.conditional_mmd2.iter().all(Option::is_none));
    }

    #[test]
    fn single_class_doubles_the_marginal_term() {
        let fs = t(&[vec![0.3, 1.0], vec![3.0, -1.0], vec![0.0, 0.7]]);
        let ft = t(&[vec![1.0, 1.5], vec![2.0, 2.0]]);
        let (ls, lt) = ([0; 3], [0; 2]);
        let s = FeatureBatch::new(&fs, &ls, Domain::Source).unwrap();
        let tg = FeatureBatch::new(&ft, &lt, Domain::Target).unwrap();
        let p = jda_penalty(&s, &tg, AdaptMode::Jda, 4).unwrap();
        assert_eq!(p.total, 2.0 * p.marginal_mmd2);
        assert_eq!(p.conditional_mmd2[1..], [None, None, None]);
    }

    #[test]
    fn widths_and_labels_are_validated() {
        let a = t(&[vec![0.0, 1.0]]);
        let b = t(&[vec![0.0]]);
        let l = [0];
        let s = FeatureBatch::new(&a, &l, Domain::Source).unwrap();
        let tg = FeatureBatch::new(&b, &l, Domain::Target).unwrap();
        assert!(marginal_mmd2(&s, &tg).is_err());
        assert!(FeatureBatch::new(&a, &[0, 1], Domain::Source).is_err());
        let bad = [5];
        let s2 = FeatureBatch::new(&a, &bad, Domain::Source).unwrap();
        assert!(jda_penalty(&s2, &s, AdaptMode::Jda, 2).is_err());
    }
}
