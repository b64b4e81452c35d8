//! The subcommands. Each returns its output files in memory; the caller
//! commits them only when the whole command succeeded.

use std::fmt::Write as _;
use std::path::Path;

use jda_core::data::Dataset;
use jda_core::datagen::{export_csv, import_csv};
use jda_core::eval::{
    apply_methods, evaluate, export_features, export_history, prepare, pretrain_network, write_settings,
    ComparisonCell, ComparisonReport, Evaluation, Method,
};
use jda_core::training::AdaptHistory;
use jda_core::{Domain, Network, Preprocessing};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::output::Outputs;
use crate::CliError;

/// A trained network together with the input transform it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub preprocessing: Preprocessing,
    pub network: Network,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid model {}: {e}", path.display())))
    }
}

fn percent(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn write_evaluation(out: &mut String, prefix: &str, e: &Evaluation) {
    writeln!(out, "{prefix}accuracy = {}", percent(e.accuracy)).unwrap();
    for (i, row) in e.confusion.counts().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(out, "{prefix}confusion.{i} = {}", cells.join(" ")).unwrap();
    }
}

fn write_adaptation(out: &mut String, history: Option<&AdaptHistory>) {
    let Some(h) = history else {
        writeln!(out, "adaptation = skipped").unwrap();
        return;
    };
    writeln!(out, "adaptation = completed").unwrap();
    writeln!(out, "adaptation.outer_iterations = {}", h.records.len()).unwrap();
    writeln!(out, "adaptation.stop = {}", h.stop.as_str()).unwrap();
    if let Some(a) = h.initial_pseudo_label_accuracy {
        writeln!(out, "adaptation.initial_pseudo_label_accuracy = {}", percent(a)).unwrap();
    }
    if let Some(a) = h.records.last().and_then(|r| r.pseudo_label_accuracy) {
        writeln!(out, "adaptation.final_pseudo_label_accuracy = {}", percent(a)).unwrap();
    }
}

/// Writes the three pools of a synthetic task as CSV.
pub fn generate(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let source = cfg.data_source()?;
    if let DataSource::Csv(_) = source {
        return Err(CliError::Config("generate needs a stock or custom task, not CSV data".into()));
    }
    let data = source.load(cfg.seed)?;
    let mut out = Outputs::new();
    out.add("source.csv", export_csv(&data.source));
    out.add("target_unlabeled.csv", export_csv(&data.target_unlabeled));
    out.add("target_test.csv", export_csv(&data.target_test));
    Ok(out)
}

/// Pretrain, adapt with the configured method, evaluate on the target test pool.
pub fn run(cfg: &RunConfig) -> Result<Outputs, CliError> {
    cfg.validate()?;
    let source = cfg.data_source()?;
    let settings = cfg.settings();
    let data = prepare(&source.load(cfg.seed)?, settings.preprocessing)?;
    let (pretrained, pretrain_history) = pretrain_network(&data, &settings, cfg.seed)?;
    let result = apply_methods(&data, &[cfg.method], &settings, cfg.seed, &pretrained)?.remove(0);

    let mut summary = String::new();
    writeln!(summary, "task = {}", source.name()).unwrap();
    writeln!(summary, "method = {}", cfg.method.as_str()).unwrap();
    writeln!(summary, "seed = {}", cfg.seed).unwrap();
    write_settings(&mut summary, &settings);
    writeln!(summary, "mode = {}", cfg.method.adapt_mode().map_or("none", |m| m.as_str())).unwrap();
    if let Some(last) = pretrain_history.last() {
        writeln!(summary, "pretrain.final_loss = {}", last.loss).unwrap();
        writeln!(summary, "pretrain.final_accuracy = {}", percent(last.accuracy)).unwrap();
    }
    write_adaptation(&mut summary, result.history.as_ref());
    write_evaluation(&mut summary, "target.", &result.evaluation);

    let empty = AdaptHistory {
        records: Vec::new(),
        stop: jda_core::training::StopReason::IterationCap,
        initial_pseudo_label_accuracy: None,
        pseudo_labels: Vec::new(),
    };
    let mut out = Outputs::new();
    out.add("summary.txt", summary);
    out.add("confusion.csv", result.evaluation.confusion.to_csv());
    out.add("history.csv", export_history(result.history.as_ref().unwrap_or(&empty)));
    let model = |network: &Network| ModelFile { preprocessing: settings.preprocessing, network: network.clone() };
    out.add("model.json", model(&result.network).to_json());
    out.add("pretrained.json", model(&pretrained).to_json());
    Ok(out)
}

/// Every (lambda, seed, method) cell of a grid. Pretraining does not depend on
/// lambda, so it runs once per seed.
pub fn sweep(cfg: &RunConfig) -> Result<(ComparisonReport, Outputs), CliError> {
    cfg.validate()?;
    let source = cfg.data_source()?;
    let lambdas = cfg.sweep_lambdas();
    let seeds = cfg.sweep_seeds();
    let methods = cfg.sweep_methods();
    let base = cfg.settings();

    let mut cells: Vec<(usize, ComparisonCell)> = Vec::new();
    for &seed in &seeds {
        let data = prepare(&source.load(seed)?, base.preprocessing)?;
        let (pretrained, _) = pretrain_network(&data, &base, seed)?;
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mut settings = base.clone();
            settings.train.lambda = lambda;
            for r in apply_methods(&data, &methods, &settings, seed, &pretrained)? {
                cells.push((li, ComparisonCell::new(&source.name(), seed, lambda, &r)));
            }
        }
    }
    cells.sort_by_key(|(li, _)| *li);
    let report = ComparisonReport { settings: base.clone(), cells: cells.into_iter().map(|(_, c)| c).collect() };

    let mut text = String::new();
    writeln!(text, "task = {}", source.name()).unwrap();
    let join = |v: Vec<String>| v.join(" ");
    writeln!(text, "grid.lambdas = {}", join(lambdas.iter().map(f64::to_string).collect())).unwrap();
    writeln!(text, "grid.seeds = {}", join(seeds.iter().map(u64::to_string).collect())).unwrap();
    writeln!(text, "grid.methods = {}", join(methods.iter().map(|m| m.as_str().to_string()).collect())).unwrap();
    writeln!(text, "grid.runs = {}", report.cells.len()).unwrap();
    let mut settings_text = String::new();
    write_settings(&mut settings_text, &base);
    for line in settings_text.lines().filter(|l| !l.starts_with("config.lambda ")) {
        writeln!(text, "{line}").unwrap();
    }
    let mut index = 0;
    for &lambda in &lambdas {
        let subset = ComparisonReport {
            settings: base.clone(),
            cells: report.cells.iter().filter(|c| c.lambda == lambda).cloned().collect(),
        };
        for s in subset.summaries() {
            writeln!(text, "summary.{index}.lambda = {lambda}").unwrap();
            writeln!(text, "summary.{index}.method = {}", s.method.as_str()).unwrap();
            writeln!(text, "summary.{index}.runs = {}", s.runs).unwrap();
            writeln!(text, "summary.{index}.mean_accuracy = {}", percent(s.mean)).unwrap();
            writeln!(text, "summary.{index}.std_accuracy = {}", percent(s.std)).unwrap();
            index += 1;
        }
    }
    for (i, c) in report.cells.iter().enumerate() {
        writeln!(text, "run.{i}.lambda = {}", c.lambda).unwrap();
        writeln!(text, "run.{i}.seed = {}", c.seed).unwrap();
        writeln!(text, "run.{i}.method = {}", c.method.as_str()).unwrap();
        writeln!(text, "run.{i}.accuracy = {}", percent(c.accuracy)).unwrap();
        writeln!(text, "run.{i}.outer_iterations = {}", c.outer_iterations).unwrap();
        writeln!(text, "run.{i}.stop = {}", c.stop.map_or("skipped", |s| s.as_str())).unwrap();
    }

    let mut csv = String::from("lambda,seed,method,accuracy,outer_iterations,stop\n");
    for c in &report.cells {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.lambda,
            c.seed,
            c.method.as_str(),
            c.accuracy,
            c.outer_iterations,
            c.stop.map_or("skipped", |s| s.as_str())
        )
        .unwrap();
    }
    let mut out = Outputs::new();
    out.add("report.txt", text);
    out.add("sweep.csv", csv);
    Ok((report, out))
}

fn labeled_csv(path: &Path, domain: Domain) -> Result<Dataset, CliError> {
    let data = import_csv(path, domain)?;
    data.require_labels()?;
    Ok(data)
}

/// Scores a saved model on a labeled CSV file or on the task's target test pool.
pub fn eval(cfg: &RunConfig, model_path: &Path, data_path: Option<&Path>) -> Result<Outputs, CliError> {
    let model = ModelFile::load(model_path)?;
    let raw = match data_path {
        Some(p) => labeled_csv(p, Domain::Target)?,
        None => cfg.data_source()?.load(cfg.seed)?.target_test,
    };
    let data = raw.preprocess(model.preprocessing)?;
    let evaluation = evaluate(&model.network, &data)?;
    let mut text = String::new();
    writeln!(text, "samples = {}", data.len()).unwrap();
    write_evaluation(&mut text, "", &evaluation);
    let mut out = Outputs::new();
    out.add("eval.txt", text);
    out.add("confusion.csv", evaluation.confusion.to_csv());
    Ok(out)
}

/// Feature-layer activations of a saved model for a CSV file or for all three task pools.
pub fn features(
    cfg: &RunConfig,
    model_path: &Path,
    data_path: Option<&Path>,
    domain: Domain,
) -> Result<Outputs, CliError> {
    let model = ModelFile::load(model_path)?;
    let pools: Vec<Dataset> = match data_path {
        Some(p) => vec![import_csv(p, domain)?],
        None => {
            let d = cfg.data_source()?.load(cfg.seed)?;
            vec![d.source, d.target_unlabeled, d.target_test]
        }
    };
    let prepared = pools
        .iter()
        .map(|d| d.preprocess(model.preprocessing))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Dataset> = prepared.iter().collect();
    let mut out = Outputs::new();
    out.add("features.csv", export_features(&model.network, &refs)?);
    Ok(out)
}

/// Parses a comma-separated method list such as `cnn,mda,jda`.
pub fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    text.split(',').map(|s| s.trim().parse::<Method>().map_err(CliError::from)).collect()
}
