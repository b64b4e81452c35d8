//! Source pretraining and the pseudo-label adaptation loop.

use std::collections::VecDeque;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{assign_pseudo_labels, jda_penalty, AdaptMode, FeatureBatch};
use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, GradientSet, Network};
use crate::rng::{seeded_rng, sub_seed};
use crate::tensor::Tensor;

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const ADAPT_STREAM: u64 = 0x4144_4150;

/// The regularization grid searched for the adaptation weight.
pub const LAMBDA_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub max_outer_iterations: usize,
    /// SGD steps per outer iteration; `None` means one epoch of paired batches.
    pub steps_per_outer: Option<usize>,
    pub lambda: f64,
    pub mode: AdaptMode,
    pub seed: u64,
    /// Stop once the mean objective moves by less than this between outer iterations.
    pub objective_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            pretrain_epochs: 30,
            max_outer_iterations: 50,
            steps_per_outer: None,
            lambda: 1e-2,
            mode: AdaptMode::Jda,
            seed: 0,
            objective_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        if self.steps_per_outer == Some(0) {
            return Err(Error::Input("steps per outer iteration must be positive".into()));
        }
        Ok(())
    }

    /// Seed of the paired-batch stream used by [`adapt`].
    pub fn adapt_batch_seed(&self) -> u64 {
        sub_seed(self.seed, ADAPT_STREAM)
    }
}

/// Pretraining epoch summary; accuracy is counted on each batch before its update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-outer-iteration record of the adaptation loop. Loss fields are means
/// over the SGD steps of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRecord {
    pub iteration: usize,
    pub ce_loss: f64,
    pub marginal: f64,
    pub conditional: f64,
    pub penalty: f64,
    pub objective: f64,
    pub test_accuracy: Option<f64>,
    pub pseudo_label_changes: usize,
    /// Pseudo-label accuracy against withheld ground truth, when present.
    pub pseudo_label_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LabelFixpoint,
    ObjectiveConverged,
    IterationCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::LabelFixpoint => "label-fixpoint",
            StopReason::ObjectiveConverged => "objective-converged",
            StopReason::IterationCap => "iteration-cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptHistory {
    pub records: Vec<AdaptRecord>,
    pub stop: StopReason,
    pub initial_pseudo_label_accuracy: Option<f64>,
    pub pseudo_labels: Vec<usize>,
}

/// Index pairs for one SGD step: equally many source and target samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// One epoch of paired batches. The smaller pool keeps every sample once and is
/// topped up with draws (with replacement) to the larger pool's size; both
/// sequences are shuffled and cut into batches, the remainder forming a final
/// shorter batch.
pub fn paired_epoch<R: Rng>(n_source: usize, n_target: usize, batch_size: usize, rng: &mut R) -> Vec<PairedBatch> {
    assert!(n_source > 0 && n_target > 0 && batch_size > 0);
    let n = n_source.max(n_target);
    let mut fill = |m: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.extend((m..n).map(|_| rng.random_range(0..m)));
        idx.shuffle(rng);
        idx
    };
    let source = fill(n_source);
    let target = fill(n_target);
    let b = batch_size.min(n);
    source
        .chunks(b)
        .zip(target.chunks(b))
        .map(|(s, t)| PairedBatch { source: s.to_vec(), target: t.to_vec() })
        .collect()
}

pub fn make_batches(source: &Dataset, target: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<PairedBatch>> {
    if source.is_empty() || target.is_empty() || batch_size == 0 {
        return Err(Error::Input("batching needs non-empty pools and a positive batch size".into()));
    }
    Ok(paired_epoch(source.len(), target.len(), batch_size, &mut seeded_rng(seed)))
}

/// Endless sequence of paired batches, epoch after epoch, from one seeded stream.
pub struct PairedBatchStream {
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    pending: VecDeque<PairedBatch>,
}

impl PairedBatchStream {
    pub fn new(n_source: usize, n_target: usize, batch_size: usize, seed: u64) -> Self {
        Self { n_source, n_target, batch_size, rng: seeded_rng(seed), pending: VecDeque::new() }
    }

    /// Number of batches in one epoch.
    pub fn epoch_len(&self) -> usize {
        self.n_source.max(self.n_target).div_ceil(self.batch_size)
    }
}

impl Iterator for PairedBatchStream {
    type Item = PairedBatch;

    fn next(&mut self) -> Option<PairedBatch> {
        if self.pending.is_empty() {
            self.pending
                .extend(paired_epoch(self.n_source, self.n_target, self.batch_size, &mut self.rng));
        }
        self.pending.pop_front()
    }
}

/// One plain cross-entropy SGD step. Returns the batch loss and the number of
/// samples the network classified correctly before the update.
pub fn source_step(net: &mut Network, inputs: &Tensor, labels: &[usize], lr: f64) -> Result<(f64, usize)> {
    let pass = net.forward(inputs)?;
    let (loss, dlogits) = softmax_cross_entropy(&pass.logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("source cross-entropy".into()));
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(b, &l)| argmax(pass.logits.row(b)) == l)
        .count();
    let grads = net.backward(&pass.cache, &dlogits, None)?;
    net.sgd_step(&grads, lr)?;
    Ok((loss, correct))
}

/// Value of `ce(source) + lambda * penalty` at one paired batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParts {
    pub ce_loss: f64,
    pub marginal: f64,
    pub conditional: f64,
    pub penalty: f64,
    pub objective: f64,
}

/// Evaluates the adaptation objective and its parameter gradient: cross-entropy
/// on the source half plus `lambda` times the discrepancy of the two halves'
/// features, chained back through the network.
#[allow(clippy::too_many_arguments)]
pub fn composite_gradient(
    net: &Network,
    source: &Tensor,
    source_labels: &[usize],
    target: &Tensor,
    target_pseudo: &[usize],
    lambda: f64,
    mode: AdaptMode,
) -> Result<(ObjectiveParts, GradientSet)> {
    let ns = source.rows();
    let joint = Tensor::concat_rows(&[source, target])?;
    let pass = net.forward(&joint)?;
    let src_logits = pass.logits.slice_rows(0, ns)?;
    let (ce_loss, d_src) = softmax_cross_entropy(&src_logits, source_labels)?;
    let tgt_zero = Tensor::zeros(vec![target.rows(), net.num_classes()]);
    let dlogits = Tensor::concat_rows(&[&d_src, &tgt_zero])?;

    let fs = pass.features.slice_rows(0, ns)?;
    let ft = pass.features.slice_rows(ns, joint.rows())?;
    let penalty = jda_penalty(
        &FeatureBatch::new(&fs, source_labels, Domain::Source)?,
        &FeatureBatch::new(&ft, target_pseudo, Domain::Target)?,
        mode,
        net.num_classes(),
    )?;
    let dfeatures = if lambda > 0.0 {
        let mut d = Tensor::concat_rows(&[&penalty.dfeatures_source, &penalty.dfeatures_target])?;
        d.scale(lambda);
        Some(d)
    } else {
        None
    };
    let grads = net.backward(&pass.cache, &dlogits, dfeatures.as_ref())?;
    let parts = ObjectiveParts {
        ce_loss,
        marginal: penalty.marginal_mmd2,
        conditional: penalty.conditional_sum(),
        penalty: penalty.total,
        objective: ce_loss + lambda * penalty.total,
    };
    Ok((parts, grads))
}

fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(bad) => Err(Error::Input(format!("label {bad} outside [0, {classes})"))),
        None => Ok(()),
    }
}

/// Mini-batch SGD on source cross-entropy for `cfg.pretrain_epochs` epochs.
pub fn pretrain(net: &mut Network, source: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let labels = source.require_labels()?;
    check_labels(labels, net.num_classes())?;
    if cfg.batch_size < net.num_classes() {
        warn!("batch size {} is smaller than the class count {}", cfg.batch_size, net.num_classes());
    }
    let mut rng = seeded_rng(sub_seed(cfg.seed, PRETRAIN_STREAM));
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut history = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 1..=cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = source.windows().select_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, hits) = source_step(net, &x, &y, cfg.learning_rate)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} in pretraining epoch {epoch}")),
                    other => other,
                })?;
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / source.len() as f64,
            accuracy: correct as f64 / source.len() as f64,
        });
    }
    Ok(history)
}

/// Alternates pseudo-labelling of the full target pool with SGD on the
/// adaptation objective until the pseudo labels stop changing, the objective
/// stalls, or the iteration cap is hit.
pub fn adapt(
    net: &mut Network,
    source: &Dataset,
    target: &Dataset,
    cfg: &TrainConfig,
    target_test: Option<&Dataset>,
) -> Result<AdaptHistory> {
    cfg.validate()?;
    let labels = source.require_labels()?;
    check_labels(labels, net.num_classes())?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Input("adaptation needs non-empty source and target pools".into()));
    }
    let test = match target_test {
        Some(t) => Some((t, t.require_labels()?)),
        None => None,
    };
    let hidden_truth = target.withheld_labels().or(target.labels());

    let mut stream = PairedBatchStream::new(source.len(), target.len(), cfg.batch_size, cfg.adapt_batch_seed());
    let steps = cfg.steps_per_outer.unwrap_or_else(|| stream.epoch_len());
    let mut pseudo = assign_pseudo_labels(net, target)?;
    let initial_pseudo_label_accuracy = hidden_truth.map(|t| accuracy(&pseudo, t));
    let mut records: Vec<AdaptRecord> = Vec::new();
    let mut stop = StopReason::IterationCap;

    for iteration in 1..=cfg.max_outer_iterations {
        let mut sums = [0.0; 5];
        for step in 0..steps {
            let batch = stream.next().expect("stream is endless");
            let xs = source.windows().select_rows(&batch.source)?;
            let ys: Vec<usize> = batch.source.iter().map(|&i| labels[i]).collect();
            let xt = target.windows().select_rows(&batch.target)?;
            let yt: Vec<usize> = batch.target.iter().map(|&i| pseudo[i]).collect();
            let (parts, grads) = composite_gradient(net, &xs, &ys, &xt, &yt, cfg.lambda, cfg.mode)?;
            if !(parts.objective.is_finite() && parts.penalty.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "adaptation objective at outer iteration {iteration}, step {step}"
                )));
            }
            net.sgd_step(&grads, cfg.learning_rate).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at outer iteration {iteration}, step {step}"))
                }
                other => other,
            })?;
            for (s, v) in sums
                .iter_mut()
                .zip([parts.ce_loss, parts.marginal, parts.conditional, parts.penalty, parts.objective])
            {
                *s += v;
            }
        }
        let [ce_loss, marginal, conditional, penalty, objective] = sums.map(|s| s / steps as f64);

        let updated = assign_pseudo_labels(net, target)?;
        let changes = updated.iter().zip(&pseudo).filter(|(a, b)| a != b).count();
        pseudo = updated;
        let test_accuracy = match &test {
            Some((t, truth)) => Some(accuracy(&net.predict(t.windows())?, truth)),
            None => None,
        };
        let previous_objective = records.last().map(|r| r.objective);
        records.push(AdaptRecord {
            iteration,
            ce_loss,
            marginal,
            conditional,
            penalty,
            objective,
            test_accuracy,
            pseudo_label_changes: changes,
            pseudo_label_accuracy: hidden_truth.map(|t| accuracy(&pseudo, t)),
        });
        if changes == 0 {
            stop = StopReason::LabelFixpoint;
            break;
        }
        if previous_objective.is_some_and(|p| (objective - p).abs() < cfg.objective_tolerance) {
            stop = StopReason::ObjectiveConverged;
            break;
        }
    }
    Ok(AdaptHistory { records, stop, initial_pseudo_label_accuracy, pseudo_labels: pseudo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_fills_the_smaller_pool() {
        let mut rng = seeded_rng(1);
        let batches = paired_epoch(100, 60, 20, &mut rng);
        assert_eq!(batches.len(), 5);
        for b in &batches {
            assert_eq!(b.source.len(), 20);
            assert_eq!(b.target.len(), 20);
        }
        let mut src: Vec<usize> = batches.iter().flat_map(|b| b.source.clone()).collect();
        src.sort_unstable();
        assert_eq!(src, (0..100).collect::<Vec<_>>());
        let mut tgt: Vec<usize> = batches.iter().flat_map(|b| b.target.clone()).collect();
        tgt.sort_unstable();
        tgt.dedup();
        assert_eq!(tgt, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn equal_pools_use_every_sample_once() {
        let batches = paired_epoch(50, 50, 16, &mut seeded_rng(2));
        assert_eq!(batches.len(), 4);
        for side in [0, 1] {
            let mut all: Vec<usize> = batches
                .iter()
                .flat_map(|b| if side == 0 { b.source.clone() } else { b.target.clone() })
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batching_is_seed_deterministic() {
        let a = paired_epoch(70, 30, 8, &mut seeded_rng(9));
        let b = paired_epoch(70, 30, 8, &mut seeded_rng(9));
        let c = paired_epoch(70, 30, 8, &mut seeded_rng(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_continues_across_epochs() {
        let mut s = PairedBatchStream::new(10, 10, 4, 3);
        assert_eq!(s.epoch_len(), 3);
        let first: Vec<_> = s.by_ref().take(3).collect();
        let mut rng = seeded_rng(3);
        assert_eq!(first, paired_epoch(10, 10, 4, &mut rng));
        assert_eq!(s.next().unwrap(), paired_epoch(10, 10, 4, &mut rng)[0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
