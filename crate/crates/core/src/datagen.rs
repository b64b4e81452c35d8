//! Parametric fault-signal generator, stock transfer tasks, and CSV exchange.
//!
//! A sample is `amplitude * (shaft harmonics + severity * impulse train + noise)`.
//! The impulse train repeats at `fault_multiple * rotation_hz`; each impulse is
//! an exponentially decaying ring at the class resonance.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, sub_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    /// Impulse repetition frequency as a multiple of the rotation frequency.
    pub fault_multiple: f64,
    /// Exponential decay rate of each impulse, 1/s.
    pub decay: f64,
    /// Ringing frequency of each impulse, Hz.
    pub resonance_hz: f64,
    /// Amplitudes of the 1x, 2x, ... shaft harmonics.
    pub harmonics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub window_len: usize,
    pub samples_per_class: usize,
    pub rotation_hz: f64,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub amplitude: f64,
    /// Relative per-sample spread applied to speed, resonance and impulse amplitude.
    pub jitter: f64,
    pub classes: Vec<ClassSignature>,
    /// Impulse amplitude per class; 0 means no fault impulses.
    pub severity: Vec<f64>,
    pub seed: u64,
}

impl DomainSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if c < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {c}")));
        }
        if self.window_len < 64 {
            return Err(Error::Spec(format!("window length {} is below 64", self.window_len)));
        }
        if self.severity.len() != c {
            return Err(Error::Spec(format!("{} severities for {c} classes", self.severity.len())));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Spec("samples per class must be positive".into()));
        }
        let positive = [self.rotation_hz, self.sample_rate_hz, self.amplitude];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Spec("rates and amplitude must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && (0.0..0.5).contains(&self.jitter)) {
            return Err(Error::Spec("noise must be >= 0 and jitter in [0, 0.5)".into()));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        let top = 1.0 + self.jitter;
        for (k, class) in self.classes.iter().enumerate() {
            let checks = [
                ("shaft harmonic", self.rotation_hz * class.harmonics.len() as f64),
                ("fault frequency", self.rotation_hz * class.fault_multiple),
                ("resonance", class.resonance_hz),
            ];
            for (what, f) in checks {
                if f * top >= nyquist {
                    return Err(Error::Spec(format!(
                        "class {k}: {what} {f:.1} Hz aliases at sampling rate {} Hz",
                        self.sample_rate_hz
                    )));
                }
            }
            if !(class.decay > 0.0 && class.fault_multiple > 0.0) {
                return Err(Error::Spec(format!("class {k}: decay and fault multiple must be positive")));
            }
        }
        Ok(())
    }
}

fn synthesize<R: Rng>(spec: &DomainSpec, class: usize, rng: &mut R) -> Vec<f64> {
    let sig = &spec.classes[class];
    let fs = spec.sample_rate_hz;
    let n = spec.window_len;
    let spread = |rng: &mut R| 1.0 + spec.jitter * rng.random_range(-1.0..1.0);
    let speed = spec.rotation_hz * spread(rng);
    let mut x = vec![0.0; n];

    for (h, &weight) in sig.harmonics.iter().enumerate() {
        let phase = rng.random_range(0.0..TAU);
        let f = speed * (h + 1) as f64;
        for (i, v) in x.iter_mut().enumerate() {
            *v += weight * (TAU * f * i as f64 / fs + phase).sin();
        }
    }

    let severity = spec.severity[class];
    let period = 1.0 / (sig.fault_multiple * speed);
    let resonance = sig.resonance_hz * spread(rng);
    let ring = ((9.0 / sig.decay) * fs).ceil() as usize;
    let duration = n as f64 / fs;
    // Impulses that start before the window still ring into it.
    let mut t = rng.random_range(0.0..period) - ring as f64 / fs;
    while t < duration {
        let amp = severity * spread(rng);
        let start = ((t * fs).ceil().max(0.0)) as usize;
        for (i, v) in x.iter_mut().enumerate().skip(start).take(ring) {
            let tau = i as f64 / fs - t;
            *v += amp * (-sig.decay * tau).exp() * (TAU * resonance * tau).sin();
        }
        t += period * (1.0 + 0.02 * rng.random_range(-1.0..1.0));
    }

    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("noise std is finite and >= 0");
        x.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    x.iter_mut().for_each(|v| *v *= spec.amplitude);
    x
}

/// Draws `samples_per_class` windows per class, class-major order, labels attached.
/// Every sample has its own sub-seed so the result is a pure function of the spec.
pub fn generate_domain(spec: &DomainSpec) -> Result<Dataset> {
    spec.validate()?;
    let per = spec.samples_per_class;
    let mut rows = Vec::with_capacity(per * spec.num_classes());
    let mut labels = Vec::with_capacity(rows.capacity());
    for class in 0..spec.num_classes() {
        for i in 0..per {
            let mut rng = seeded_rng(sub_seed(spec.seed, (class * per + i) as u64));
            rows.push(synthesize(spec, class, &mut rng));
            labels.push(class);
        }
    }
    Dataset::new(Tensor::from_rows(&rows)?, Some(labels), Domain::Source)
}

/// Per-window `[rms, peak]` of the raw signal.
pub fn raw_signal_features(data: &Dataset) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let w = data.windows().row(i);
            let rms = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
            let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            vec![rms, peak]
        })
        .collect();
    Tensor::from_rows(&rows).expect("two features per row")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTask {
    pub name: String,
    pub source: DomainSpec,
    pub target: DomainSpec,
    /// Unlabeled adaptation pool size, per class.
    pub unlabeled_per_class: usize,
    /// Labeled test pool size, per class.
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub source: Dataset,
    /// Labels are withheld (see [`Dataset::withheld_labels`]).
    pub target_unlabeled: Dataset,
    pub target_test: Dataset,
}

pub const STOCK_TASKS: [&str; 4] = ["identity", "operating-shift", "severity-shift", "type-shift"];

const SAMPLE_RATE: f64 = 12_000.0;

fn base_classes() -> Vec<ClassSignature> {
    let sig = |fault_multiple, decay, resonance_hz, harmonics: &[f64]| ClassSignature {
        fault_multiple,
        decay,
        resonance_hz,
        harmonics: harmonics.to_vec(),
    };
    vec![
        sig(1.0, 900.0, 1800.0, &[1.0, 0.3, 0.1]),
        sig(3.1, 900.0, 1800.0, &[1.0, 0.3, 0.1]),
        sig(5.4, 700.0, 2600.0, &[1.0, 0.3, 0.1]),
        sig(4.2, 500.0, 3400.0, &[1.0, 0.3, 0.1]),
    ]
}

fn base_domain(seed: u64) -> DomainSpec {
    DomainSpec {
        window_len: 512,
        samples_per_class: 250,
        rotation_hz: 30.0,
        sample_rate_hz: SAMPLE_RATE,
        noise_std: 0.25,
        amplitude: 1.0,
        jitter: 0.05,
        classes: base_classes(),
        severity: vec![0.0, 1.5, 1.5, 1.5],
        seed,
    }
}

impl TransferTask {
    /// A stock task family; `seed` determines every draw.
    pub fn stock(name: &str, seed: u64) -> Result<Self> {
        let source = base_domain(sub_seed(seed, 1));
        let mut target = base_domain(sub_seed(seed, 2));
        match name {
            "identity" => {}
            "operating-shift" => {
                target.rotation_hz = 36.0;
                target.amplitude = 1.6;
            }
            "severity-shift" => {
                // Every fault weakens to two thirds of its source severity.
                target.severity = vec![0.0, 1.0, 1.0, 1.0];
            }
            "type-shift" => {
                // Resonances drift toward class 2's band from both sides.
                target.classes[1].resonance_hz = 2450.0;
                target.classes[3].resonance_hz = 2950.0;
            }
            other => {
                return Err(Error::Input(format!(
                    "unknown stock task '{other}'; available: {}",
                    STOCK_TASKS.join(", ")
                )))
            }
        }
        Ok(Self {
            name: name.to_string(),
            source,
            target,
            unlabeled_per_class: 250,
            test_per_class: 100,
        })
    }

    /// Same task definition with every draw re-derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut task = self.clone();
        task.source.seed = sub_seed(seed, 1);
        task.target.seed = sub_seed(seed, 2);
        task
    }

    pub fn num_classes(&self) -> usize {
        self.source.num_classes()
    }
}

/// Source set plus two disjoint target draws (distinct sub-seeds): an
/// unlabeled adaptation pool and a labeled test pool.
pub fn make_transfer_task(task: &TransferTask) -> Result<TaskData> {
    if task.source.num_classes() != task.target.num_classes()
        || task.source.window_len != task.target.window_len
    {
        return Err(Error::Spec("source and target must share classes and window length".into()));
    }
    let source = generate_domain(&task.source)?.with_domain(Domain::Source);
    let draw = |stream: u64, per_class: usize| -> Result<Dataset> {
        let spec = DomainSpec {
            samples_per_class: per_class,
            seed: sub_seed(task.target.seed, stream),
            ..task.target.clone()
        };
        Ok(generate_domain(&spec)?.with_domain(Domain::Target))
    };
    Ok(TaskData {
        source,
        target_unlabeled: draw(1, task.unlabeled_per_class)?.withhold_labels(),
        target_test: draw(2, task.test_per_class)?,
    })
}

/// One window per row: label (empty when unlabeled) then the values.
pub fn export_csv(data: &Dataset) -> String {
    let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let labels = data.labels();
    for i in 0..data.len() {
        let label = labels.map_or(String::new(), |l| l[i].to_string());
        let values = data.windows().row(i).iter().map(f64::to_string);
        writer.write_record(std::iter::once(label).chain(values)).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Parses [`export_csv`]-style text. A first line whose value cells are not
/// numeric is taken as a header. Row numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str, domain: Domain) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let label_cell = record.get(0).unwrap_or("");
        let cells: Vec<&str> = record.iter().skip(1).collect();
        let values = match cells.iter().map(|c| c.parse::<f64>()).collect::<std::result::Result<Vec<f64>, _>>() {
            Ok(v) => v,
            Err(_) if row == 1 => continue,
            Err(e) => {
                let bad = cells.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or(&"");
                return Err(Error::Parse { row, message: format!("non-numeric cell '{bad}': {e}") });
            }
        };
        if values.is_empty() {
            return Err(Error::Parse { row, message: "no signal values".into() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse { row, message: format!("non-finite value {v}") });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {w} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        let label = if label_cell.is_empty() {
            None
        } else {
            Some(label_cell.parse::<usize>().map_err(|_| Error::Parse {
                row,
                message: format!("label '{label_cell}' is not a non-negative integer"),
            })?)
        };
        if labels.first().is_some_and(|first| first.is_some() != label.is_some()) {
            return Err(Error::Parse { row, message: "file mixes labeled and unlabeled rows".into() });
        }
        rows.push(values);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Parse { row: 0, message: "no data rows".into() });
    }
    let labels: Option<Vec<usize>> = labels.into_iter().collect();
    Dataset::new(Tensor::from_rows(&rows)?, labels, domain)
}

pub fn import_csv(path: &Path, domain: Domain) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, domain).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DomainSpec {
        DomainSpec { window_len: 128, samples_per_class: 3, ..base_domain(seed) }
    }

    #[test]
    fn stock_tasks_are_valid() {
        for name in STOCK_TASKS {
            let task = TransferTask::stock(name, 1).unwrap();
            task.source.validate().unwrap();
            task.target.validate().unwrap();
        }
        let err = TransferTask::stock("nope", 1).unwrap_err().to_string();
        assert!(err.contains("severity-shift") && err.contains("type-shift"), "{err}");
    }

    #[test]
    fn aliasing_is_rejected() {
        let mut spec = small(1);
        spec.classes[2].resonance_hz = 7000.0;
        assert!(matches!(generate_domain(&spec), Err(Error::Spec(_))));
        let mut spec = small(1);
        spec.window_len = 32;
        assert!(generate_domain(&spec).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_domain(&small(4)).unwrap();
        let b = generate_domain(&small(4)).unwrap();
        let c = generate_domain(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let labels = a.labels().unwrap();
        for class in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == class).count(), 3);
        }
    }

    #[test]
    fn clean_healthy_class_is_pure_harmonics() {
        let mut spec = small(2);
        spec.noise_std = 0.0;
        spec.jitter = 0.0;
        let d = generate_domain(&spec).unwrap();
        let fs = spec.sample_rate_hz;
        let w = d.windows().row(0);
        // Sum of three unit-frequency-multiple sinusoids: bounded by the harmonic weights.
        let bound: f64 = spec.classes[0].harmonics.iter().sum();
        assert!(w.iter().all(|v| v.abs() <= bound + 1e-12));
        // One revolution later the signal repeats.
        let period = (fs / spec.rotation_hz) as usize;
        let long = DomainSpec { window_len: 2 * period, ..spec };
        let d = generate_domain(&long).unwrap();
        let w = d.windows().row(1);
        for i in 0..period {
            assert!((w[i] - w[i + period]).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let d = generate_domain(&small(3)).unwrap();
        let back = parse_csv(&export_csv(&d), Domain::Source).unwrap();
        assert_eq!(back, d);

        let unlabeled = parse_csv(",1.0,2.0\n,3.0,4.0\n", Domain::Target).unwrap();
        assert!(unlabeled.labels().is_none());
        assert_eq!(unlabeled.len(), 2);

        let with_header = parse_csv("label,x0,x1\n1,0.5,0.25\n", Domain::Source).unwrap();
        assert_eq!(with_header.labels(), Some(&[1][..]));

        match parse_csv("0,1,2,3\n1,1,2\n", Domain::Source) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv("0,1,2\n1,1,abc\n", Domain::Source) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_csv("0,1,2\n,1,2\n", Domain::Source).is_err());
    }

    #[test]
    fn target_pools_are_disjoint_draws() {
        let mut task = TransferTask::stock("identity", 8).unwrap();
        task.unlabeled_per_class = 5;
        task.test_per_class = 4;
        task.source.samples_per_class = 5;
        let data = make_transfer_task(&task).unwrap();
        assert!(data.target_unlabeled.labels().is_none());
        assert_eq!(data.target_unlabeled.withheld_labels().unwrap().len(), 20);
        assert_eq!(data.target_test.len(), 16);
        for i in 0..data.target_test.len() {
            let t = data.target_test.windows().row(i);
            for j in 0..data.target_unlabeled.len() {
                assert_ne!(t, data.target_unlabeled.windows().row(j));
            }
        }
    }
}
