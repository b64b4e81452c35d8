//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use jda_core::datagen::{import_csv, make_transfer_task, TaskData, TransferTask};
use jda_core::eval::{Method, RunSettings};
use jda_core::nn::Architecture;
use jda_core::{Domain, Preprocessing, TrainConfig};
use serde::Deserialize;

use crate::CliError;

/// CSV pools supplied instead of a synthetic task.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    /// Labeled source windows.
    pub source: PathBuf,
    /// Target windows; any labels present are withheld from training.
    pub target: PathBuf,
    /// Labeled target windows for evaluation.
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Stock task name.
    pub task: Option<String>,
    /// Full task definition; its own seeds are replaced by the root seed.
    pub custom_task: Option<TransferTask>,
    pub data: Option<CsvData>,
    /// Root seed of a single run.
    pub seed: u64,
    /// Seeds of a sweep; defaults to `[seed]`.
    pub seeds: Option<Vec<u64>>,
    pub method: Method,
    /// Methods of a sweep; defaults to `[method]`.
    pub methods: Option<Vec<Method>>,
    /// Regularization grid of a sweep; defaults to the standard grid.
    pub lambdas: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub preprocessing: Preprocessing,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            custom_task: None,
            data: None,
            seed: 0,
            seeds: None,
            method: Method::DtnJda,
            methods: None,
            lambdas: None,
            out: None,
            train: TrainConfig::default(),
            architecture: Architecture::default(),
            preprocessing: Preprocessing::default(),
        }
    }
}

/// Where the windows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Task(TransferTask),
    Csv(CsvData),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Applies the stock task flag, which replaces any configured data source.
    pub fn set_task(&mut self, name: &str) {
        self.task = Some(name.to_string());
        self.custom_task = None;
        self.data = None;
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
            architecture: self.architecture.clone(),
            preprocessing: self.preprocessing,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        self.data_source()?;
        if let Some(l) = &self.lambdas {
            if l.is_empty() {
                return Err(CliError::Config("lambda grid is empty".into()));
            }
            if let Some(bad) = l.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(CliError::Config(format!("lambda must be >= 0, got {bad}")));
            }
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.methods.as_ref().is_some_and(Vec::is_empty) {
            return Err(CliError::Config("method list is empty".into()));
        }
        Ok(())
    }

    /// The single configured data source.
    pub fn data_source(&self) -> Result<DataSource, CliError> {
        let given = [self.task.is_some(), self.custom_task.is_some(), self.data.is_some()];
        match given.iter().filter(|&&g| g).count() {
            0 => return Err(CliError::Config("no data source: set task, custom_task or data".into())),
            1 => {}
            _ => return Err(CliError::Config("specify exactly one of task, custom_task or data".into())),
        }
        if let Some(name) = &self.task {
            return Ok(DataSource::Task(TransferTask::stock(name, 0)?));
        }
        if let Some(task) = &self.custom_task {
            return Ok(DataSource::Task(task.clone()));
        }
        Ok(DataSource::Csv(self.data.clone().expect("counted above")))
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set out".into()))
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn sweep_methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| vec![self.method])
    }

    pub fn sweep_lambdas(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| jda_core::training::LAMBDA_GRID.to_vec())
    }
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Task(t) => t.name.clone(),
            DataSource::Csv(c) => format!("csv:{}", c.source.display()),
        }
    }

    /// Raw (unpreprocessed) pools for one seed. CSV pools do not depend on it.
    pub fn load(&self, seed: u64) -> Result<TaskData, CliError> {
        match self {
            DataSource::Task(task) => Ok(make_transfer_task(&task.reseeded(seed))?),
            DataSource::Csv(csv) => {
                let source = import_csv(&csv.source, Domain::Source)?;
                source.require_labels()?;
                let target = import_csv(&csv.target, Domain::Target)?.withhold_labels();
                let test_path = csv
                    .test
                    .as_ref()
                    .ok_or_else(|| CliError::Config("data.test is required to evaluate CSV pools".into()))?;
                let target_test = import_csv(test_path, Domain::Target)?;
                target_test.require_labels()?;
                Ok(TaskData { source, target_unlabeled: target, target_test })
            }
        }
    }
}
