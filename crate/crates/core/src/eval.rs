//! Accuracy, confusion matrices, the three-method comparison, and CSV /
//! key-value report writers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptMode;
use crate::data::{Dataset, Preprocessing};
use crate::datagen::{make_transfer_task, TaskData, TransferTask};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Network};
use crate::rng::sub_seed;
use crate::training::{adapt, pretrain, AdaptHistory, EpochRecord, StopReason, TrainConfig};

const INIT_STREAM: u64 = 0x494E_4954;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Input("prediction and label counts differ".into()));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Input(format!("class index outside [0, {classes})")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Row-normalized matrix; rows without support are `None`.
    pub fn normalized(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row.iter().map(|&c| c as f64 / n as f64).collect())
            })
            .collect()
    }

    /// `true_class,support,p0..p{C-1}`; zero-support rows read `no-support`.
    pub fn to_csv(&self) -> String {
        let c = self.num_classes();
        let mut out = String::from("true_class,support");
        for j in 0..c {
            write!(out, ",pred_{j}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.normalized().iter().enumerate() {
            write!(out, "{i},{}", self.support(i)).unwrap();
            match row {
                Some(r) => r.iter().for_each(|v| write!(out, ",{v:.6}").unwrap()),
                None => (0..c).for_each(|_| out.push_str(",no-support")),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(net: &Network, labeled: &Dataset) -> Result<Evaluation> {
    let truth = labeled.require_labels()?;
    let predicted = net.predict(labeled.windows())?;
    let hits = truth.iter().zip(&predicted).filter(|(t, p)| t == p).count();
    Ok(Evaluation {
        accuracy: hits as f64 / truth.len() as f64,
        confusion: ConfusionMatrix::from_predictions(truth, &predicted, net.num_classes())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Source-only network, no adaptation.
    #[serde(alias = "none")]
    Cnn,
    #[serde(alias = "mda")]
    DtnMda,
    #[serde(alias = "jda")]
    DtnJda,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cnn, Method::DtnMda, Method::DtnJda];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cnn => "cnn",
            Method::DtnMda => "dtn-mda",
            Method::DtnJda => "dtn-jda",
        }
    }

    pub fn adapt_mode(self) -> Option<AdaptMode> {
        match self {
            Method::Cnn => None,
            Method::DtnMda => Some(AdaptMode::Mda),
            Method::DtnJda => Some(AdaptMode::Jda),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" | "none" => Ok(Method::Cnn),
            "dtn-mda" | "mda" => Ok(Method::DtnMda),
            "dtn-jda" | "jda" => Ok(Method::DtnJda),
            other => Err(Error::Input(format!("unknown method '{other}'; use cnn, mda or jda"))),
        }
    }
}

/// Everything besides the data that a seeded run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunSettings {
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub preprocessing: Preprocessing,
}

impl RunSettings {
    /// Settings used for the stock-task comparisons: the defaults with the
    /// outer loop capped at 20 iterations.
    pub fn benchmark() -> Self {
        Self {
            train: TrainConfig { lambda: 1e-2, max_outer_iterations: 20, ..TrainConfig::default() },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub network: Network,
    pub evaluation: Evaluation,
    pub history: Option<AdaptHistory>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub pretrain_history: Vec<EpochRecord>,
    pub pretrained: Network,
    pub results: Vec<MethodResult>,
}

/// Preprocesses all three pools of a task.
pub fn prepare(data: &TaskData, mode: Preprocessing) -> Result<TaskData> {
    Ok(TaskData {
        source: data.source.preprocess(mode)?,
        target_unlabeled: data.target_unlabeled.preprocess(mode)?,
        target_test: data.target_test.preprocess(mode)?,
    })
}

/// Generates a task's three pools and applies the input preprocessing.
pub fn make_task_data(task: &TransferTask, mode: Preprocessing) -> Result<TaskData> {
    prepare(&make_transfer_task(task)?, mode)
}

/// Builds the network for `seed` and trains it on the (already preprocessed)
/// source pool.
pub fn pretrain_network(data: &TaskData, settings: &RunSettings, seed: u64) -> Result<(Network, Vec<EpochRecord>)> {
    let classes = data
        .source
        .class_count_hint()
        .ok_or_else(|| Error::Input("source pool is unlabeled".into()))?
        .max(data.target_test.class_count_hint().unwrap_or(0));
    let cfg = TrainConfig { seed, ..settings.train.clone() };
    let mut net = Network::new(
        &settings.architecture,
        data.source.window_len(),
        classes,
        sub_seed(seed, INIT_STREAM),
    )?;
    let history = pretrain(&mut net, &data.source, &cfg)?;
    Ok((net, history))
}

/// Evaluates each method on the target test pool, adapted methods branching
/// from copies of `pretrained`.
pub fn apply_methods(
    data: &TaskData,
    methods: &[Method],
    settings: &RunSettings,
    seed: u64,
    pretrained: &Network,
) -> Result<Vec<MethodResult>> {
    let cfg = TrainConfig { seed, ..settings.train.clone() };
    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let (network, history) = match method.adapt_mode() {
            None => (pretrained.clone(), None),
            Some(mode) => {
                let mut adapted = pretrained.clone();
                let cfg = TrainConfig { mode, ..cfg.clone() };
                let h = adapt(&mut adapted, &data.source, &data.target_unlabeled, &cfg, Some(&data.target_test))?;
                (adapted, Some(h))
            }
        };
        let evaluation = evaluate(&network, &data.target_test)?;
        results.push(MethodResult { method, network, evaluation, history });
    }
    Ok(results)
}

/// Pretrains once, then runs every method from that network.
pub fn run_methods(data: &TaskData, methods: &[Method], settings: &RunSettings, seed: u64) -> Result<RunOutcome> {
    let (pretrained, pretrain_history) = pretrain_network(data, settings, seed)?;
    let results = apply_methods(data, methods, settings, seed, &pretrained)?;
    Ok(RunOutcome { seed, pretrain_history, pretrained, results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub lambda: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub outer_iterations: usize,
    pub stop: Option<StopReason>,
}

impl ComparisonCell {
    pub fn new(task: &str, seed: u64, lambda: f64, result: &MethodResult) -> Self {
        Self {
            task: task.to_string(),
            method: result.method,
            seed,
            lambda,
            accuracy: result.evaluation.accuracy,
            confusion: result.evaluation.confusion.clone(),
            outer_iterations: result.history.as_ref().map_or(0, |h| h.records.len()),
            stop: result.history.as_ref().map(|h| h.stop),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub settings: RunSettings,
    pub cells: Vec<ComparisonCell>,
}

fn percent(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

impl ComparisonReport {
    pub fn cells_for(&self, method: Method) -> impl Iterator<Item = &ComparisonCell> {
        self.cells.iter().filter(move |c| c.method == method)
    }

    /// Mean and sample standard deviation of accuracy per method, in first-seen order.
    pub fn summaries(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<Method> = Vec::new();
        for c in &self.cells {
            if !methods.contains(&c.method) {
                methods.push(c.method);
            }
        }
        methods
            .into_iter()
            .map(|method| {
                let acc: Vec<f64> = self.cells_for(method).map(|c| c.accuracy).collect();
                let n = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / n;
                let std = if acc.len() > 1 {
                    (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                MethodSummary { method, runs: acc.len(), mean, std }
            })
            .collect()
    }

    pub fn mean_accuracy(&self, method: Method) -> Option<f64> {
        self.summaries().into_iter().find(|s| s.method == method).map(|s| s.mean)
    }

    /// `key = value` lines; accuracies in percent with one decimal.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        write_settings(&mut out, &self.settings);
        for s in self.summaries() {
            let m = s.method.as_str();
            writeln!(out, "summary.{m}.runs = {}", s.runs).unwrap();
            writeln!(out, "summary.{m}.mean_accuracy = {}", percent(s.mean)).unwrap();
            writeln!(out, "summary.{m}.std_accuracy = {}", percent(s.std)).unwrap();
        }
        for (i, c) in self.cells.iter().enumerate() {
            writeln!(out, "run.{i}.task = {}", c.task).unwrap();
            writeln!(out, "run.{i}.method = {}", c.method.as_str()).unwrap();
            writeln!(out, "run.{i}.seed = {}", c.seed).unwrap();
            writeln!(out, "run.{i}.lambda = {}", c.lambda).unwrap();
            writeln!(out, "run.{i}.accuracy = {}", percent(c.accuracy)).unwrap();
            writeln!(out, "run.{i}.outer_iterations = {}", c.outer_iterations).unwrap();
            writeln!(out, "run.{i}.stop = {}", c.stop.map_or("skipped", StopReason::as_str)).unwrap();
        }
        out
    }
}

pub fn write_settings(out: &mut String, s: &RunSettings) {
    let t = &s.train;
    writeln!(out, "config.learning_rate = {}", t.learning_rate).unwrap();
    writeln!(out, "config.batch_size = {}", t.batch_size).unwrap();
    writeln!(out, "config.pretrain_epochs = {}", t.pretrain_epochs).unwrap();
    writeln!(out, "config.max_outer_iterations = {}", t.max_outer_iterations).unwrap();
    let steps = t.steps_per_outer.map_or("epoch".to_string(), |s| s.to_string());
    writeln!(out, "config.steps_per_outer = {steps}").unwrap();
    writeln!(out, "config.lambda = {}", t.lambda).unwrap();
    writeln!(out, "config.objective_tolerance = {}", t.objective_tolerance).unwrap();
    let blocks: Vec<String> = s
        .architecture
        .conv_blocks
        .iter()
        .map(|b| format!("{}x{}/{}", b.filters, b.kernel, b.pool))
        .collect();
    writeln!(out, "config.conv_blocks = {}", blocks.join(" ")).unwrap();
    writeln!(out, "config.hidden = {}", s.architecture.hidden).unwrap();
    let pre = match s.preprocessing {
        Preprocessing::Standardize => "standardize",
        Preprocessing::Spectrum => "spectrum",
    };
    writeln!(out, "config.preprocessing = {pre}").unwrap();
}

/// Runs every method for every seed. Each seed regenerates the task data,
/// initializes and pretrains one network, and branches the adapted methods
/// from that same pretrained network.
pub fn run_comparison(
    task: &TransferTask,
    methods: &[Method],
    seeds: &[u64],
    settings: &RunSettings,
) -> Result<ComparisonReport> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let data = make_task_data(&task.reseeded(seed), settings.preprocessing)?;
        let outcome = run_methods(&data, methods, settings, seed)?;
        for r in &outcome.results {
            cells.push(ComparisonCell::new(&task.name, seed, settings.train.lambda, r));
        }
    }
    Ok(ComparisonReport { settings: settings.clone(), cells })
}

/// `domain,label,f0..f{F-1}` per sample, taken at the feature layer. The label
/// is the visible one, else the withheld ground truth, else -1.
pub fn export_features(net: &Network, datasets: &[&Dataset]) -> Result<String> {
    let width = net.feature_width();
    let mut out = String::from("domain,label");
    for j in 0..width {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for data in datasets {
        let (_, features) = net.infer(data.windows())?;
        let labels = data.labels().or(data.withheld_labels());
        for i in 0..data.len() {
            let label = labels.map_or(-1, |l| l[i] as i64);
            write!(out, "{},{label}", data.domain().as_str()).unwrap();
            for v in features.row(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub const HISTORY_HEADER: &str = "iteration,ce_loss,marginal_mmd2,conditional_mmd2_sum,penalty_total,objective,test_accuracy,pseudo_label_changes";

pub fn export_history(history: &AdaptHistory) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in &history.records {
        let acc = r.test_accuracy.map_or(String::new(), |a| a.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{acc},{}",
            r.iteration, r.ce_loss, r.marginal, r.conditional, r.penalty, r.objective, r.pseudo_label_changes
        )
        .unwrap();
    }
    out
}
