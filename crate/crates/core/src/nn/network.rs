use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, Dense, Layer, LayerCache};
use super::loss::argmax;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per chunk for inference-only passes.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Layer-stack recipe: `[Conv1d -> ReLU -> MaxPool]*` then a hidden ReLU dense
/// layer (the feature layer) and a linear classification layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub conv_blocks: Vec<ConvBlock>,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let block = ConvBlock { filters: 16, kernel: 9, pool: 4 };
        Self { conv_blocks: vec![block, block], hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    feature_layer: usize,
    input_len: usize,
    num_classes: usize,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[batch, classes]`
    pub logits: Tensor,
    /// `[batch, feature_width]`, activations of the feature layer.
    pub features: Tensor,
    pub cache: ForwardCache,
}

/// One gradient tensor per parameter tensor, in [`Network::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl Network {
    /// Builds and initializes a network from an architecture recipe.
    pub fn new(arch: &Architecture, input_len: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let (mut channels, mut len) = (1, input_len);
        for block in &arch.conv_blocks {
            let conv = Conv1d::new(channels, block.filters, block.kernel, &mut rng);
            len = conv.output_len(len).ok_or_else(|| Error::Config {
                layer: layers.len(),
                message: format!("kernel length {} exceeds input length {len}", block.kernel),
            })?;
            layers.push(Layer::Conv1d(conv));
            layers.push(Layer::Relu);
            if block.pool > 1 {
                layers.push(Layer::MaxPool { window: block.pool });
                len /= block.pool;
            }
            channels = block.filters;
        }
        let feature_layer = layers.len();
        layers.push(Layer::Dense(Dense::new(channels * len, arch.hidden, &mut rng)));
        layers.push(Layer::Relu);
        layers.push(Layer::Dense(Dense::new(arch.hidden, num_classes, &mut rng)));
        Self::from_layers(layers, feature_layer, input_len)
    }

    /// Wraps an explicit layer stack. `feature_layer` must index a dense layer
    /// strictly before the final (classification) dense layer.
    pub fn from_layers(layers: Vec<Layer>, feature_layer: usize, input_len: usize) -> Result<Self> {
        let last = layers
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Input("empty layer stack".into()))?;
        let num_classes = match &layers[last] {
            Layer::Dense(d) => d.outputs,
            other => {
                return Err(Error::Config {
                    layer: last,
                    message: format!("final layer must be dense, found {}", other.kind()),
                })
            }
        };
        if feature_layer >= last || !matches!(layers[feature_layer], Layer::Dense(_)) {
            return Err(Error::Config {
                layer: feature_layer,
                message: "feature layer must be a dense layer before the classifier".into(),
            });
        }
        let mut shape = vec![1, input_len];
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape, i)?;
        }
        Ok(Self { layers, feature_layer, input_len, num_classes })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn feature_layer_index(&self) -> usize {
        self.feature_layer
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_width(&self) -> usize {
        match &self.layers[self.feature_layer] {
            Layer::Dense(d) => d.outputs,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Index of the layer whose output is the feature map: the feature dense
    /// layer, or its activation when a ReLU directly follows it.
    fn feature_tap(&self) -> usize {
        match self.layers.get(self.feature_layer + 1) {
            Some(Layer::Relu) => self.feature_layer + 1,
            _ => self.feature_layer,
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn as_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let shape = batch.shape();
        let ok = match shape {
            [_, l] => *l == self.input_len,
            [_, 1, l] => *l == self.input_len,
            _ => false,
        };
        if !ok {
            return Err(Error::Config {
                layer: 0,
                message: format!(
                    "expected [batch, {}] input, got {shape:?}",
                    self.input_len
                ),
            });
        }
        batch.clone().reshape(vec![shape[0], 1, self.input_len])
    }

    fn run(&self, batch: &Tensor, keep: bool) -> Result<(Tensor, Tensor, Vec<LayerCache>)> {
        let tap = self.feature_tap();
        let mut x = self.as_batch(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut features = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(x, i, keep)?;
            caches.push(cache);
            if i == tap {
                features = Some(y.clone());
            }
            x = y;
        }
        let features = features.expect("feature tap lies inside the stack");
        Ok((x, features, caches))
    }

    /// Forward pass retaining what backpropagation needs.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardPass> {
        let rows = batch.rows();
        let (logits, features, layers) = self.run(batch, true)?;
        Ok(ForwardPass { logits, features, cache: ForwardCache { layers, batch: rows } })
    }

    /// Backpropagates `dlogits`, adding `dfeatures` at the feature layer output when given.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Tensor,
        dfeatures: Option<&Tensor>,
    ) -> Result<GradientSet> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Internal("cache was produced by a different network".into()));
        }
        if dlogits.shape() != [cache.batch, self.num_classes] {
            return Err(Error::Internal(format!(
                "dlogits shape {:?} does not match batch {} x {} classes",
                dlogits.shape(),
                cache.batch,
                self.num_classes
            )));
        }
        if let Some(df) = dfeatures {
            if df.shape() != [cache.batch, self.feature_width()] {
                return Err(Error::Internal(format!(
                    "dfeatures shape {:?} does not match batch {} x {} features",
                    df.shape(),
                    cache.batch,
                    self.feature_width()
                )));
            }
        }
        let tap = self.feature_tap();
        let mut per_layer: Vec<Option<(Tensor, Tensor)>> = vec![None; self.layers.len()];
        let mut grad = dlogits.clone();
        for i in (0..self.layers.len()).rev() {
            if i == tap {
                if let Some(df) = dfeatures {
                    grad.add_assign(df)?;
                }
            }
            let (dx, params) = self.layers[i].backward(&cache.layers[i], &grad, i)?;
            per_layer[i] = params;
            grad = dx;
        }
        let tensors = per_layer
            .into_iter()
            .flatten()
            .flat_map(|(dw, db)| [dw, db])
            .collect();
        Ok(GradientSet { tensors })
    }

    /// In-place `theta <- theta - lr * grad`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Input(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient; training aborted".into()));
        }
        let params = self.parameters_mut();
        if params.len() != grads.tensors.len() {
            return Err(Error::Internal("gradient set does not match network".into()));
        }
        for (p, g) in params.into_iter().zip(&grads.tensors) {
            if p.shape() != g.shape() {
                return Err(Error::Internal("gradient shape does not match parameter".into()));
            }
            p.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(w, d)| *w -= lr * d);
        }
        Ok(())
    }

    /// Inference-only pass returning `(logits, features)`, processed in chunks.
    pub fn infer(&self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = inputs.rows();
        let mut logits = Vec::new();
        let mut features = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let chunk = inputs.slice_rows(start, end)?;
            let (l, f, _) = self.run(&chunk, false)?;
            logits.push(l);
            features.push(f);
            start = end;
        }
        let logits = Tensor::concat_rows(&logits.iter().collect::<Vec<_>>())?;
        let features = Tensor::concat_rows(&features.iter().collect::<Vec<_>>())?;
        Ok((logits, features))
    }

    /// Argmax class per sample (ties go to the lowest index).
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.infer(inputs)?;
        Ok((0..logits.rows()).map(|b| argmax(logits.row(b))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;
    use rand::Rng;

    fn tiny() -> Network {
        let arch = Architecture {
            conv_blocks: vec![
                ConvBlock { filters: 3, kernel: 5, pool: 2 },
                ConvBlock { filters: 4, kernel: 3, pool: 2 },
            ],
            hidden: 6,
        };
        Network::new(&arch, 32, 3, 5).unwrap()
    }

    fn random_batch(rows: usize, len: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, len], (0..rows * len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn default_architecture_shapes() {
        let net = Network::new(&Architecture::default(), 512, 4, 0).unwrap();
        let pass = net.forward(&random_batch(2, 512, 1)).unwrap();
        assert_eq!(pass.logits.shape(), &[2, 4]);
        assert_eq!(pass.features.shape(), &[2, 64]);
        assert_eq!(net.feature_layer_index(), 6);
    }

    #[test]
    fn wrong_input_length_reports_layer() {
        let net = tiny();
        assert!(matches!(
            net.forward(&random_batch(1, 31, 0)),
            Err(Error::Config { layer: 0, .. })
        ));
    }

    #[test]
    fn feature_layer_must_precede_classifier() {
        let net = tiny();
        let layers = net.layers().to_vec();
        let last = layers.len() - 1;
        assert!(Network::from_layers(layers.clone(), last, 32).is_err());
        assert!(Network::from_layers(layers, 0, 32).is_err());
    }

    #[test]
    fn gradients_are_shape_congruent() {
        let net = tiny();
        let pass = net.forward(&random_batch(4, 32, 2)).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&pass.logits, &[0, 1, 2, 0]).unwrap();
        let grads = net.backward(&pass.cache, &dlogits, None).unwrap();
        let params = net.parameters();
        assert_eq!(grads.tensors.len(), params.len());
        for (g, p) in grads.tensors.iter().zip(params) {
            assert_eq!(g.shape(), p.shape());
        }
    }

    #[test]
    fn feature_injection_alone_leaves_classifier_untouched() {
        let net = tiny();
        let pass = net.forward(&random_batch(3, 32, 3)).unwrap();
        let zero = Tensor::zeros(vec![3, 3]);
        let g = random_batch(3, 6, 4);
        let grads = net.backward(&pass.cache, &zero, Some(&g)).unwrap();
        let n = grads.tensors.len();
        assert!(grads.tensors[n - 2].data().iter().all(|&v| v == 0.0));
        assert!(grads.tensors[n - 1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_cache_is_internal_error() {
        let net = tiny();
        let pass = net.forward(&random_batch(3, 32, 3)).unwrap();
        let wrong = Tensor::zeros(vec![2, 3]);
        assert!(matches!(net.backward(&pass.cache, &wrong, None), Err(Error::Internal(_))));
    }

    #[test]
    fn sgd_step_definition() {
        let mut net = tiny();
        let before = net.clone();
        let zero = GradientSet {
            tensors: net.parameters().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        };
        net.sgd_step(&zero, 0.5).unwrap();
        assert_eq!(net, before);

        let mut grads = zero.clone();
        grads.tensors[0].data_mut()[0] = 2.0;
        net.parameters_mut()[0].data_mut()[0] = 1.0;
        net.sgd_step(&grads, 0.01).unwrap();
        assert!((net.parameters()[0].data()[0] - 0.98).abs() < 1e-15);

        let mut other = before.clone();
        let mut same = before.clone();
        other.sgd_step(&grads, 0.3).unwrap();
        same.sgd_step(&grads, 0.3).unwrap();
        assert_eq!(other, same);
    }

    #[test]
    fn sgd_step_rejects_non_finite_gradient() {
        let mut net = tiny();
        let mut grads = GradientSet {
            tensors: net.parameters().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        };
        grads.tensors[1].data_mut()[0] = f64::NAN;
        assert!(matches!(net.sgd_step(&grads, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn inference_matches_training_forward() {
        let net = tiny();
        let x = random_batch(300, 32, 9);
        let pass = net.forward(&x).unwrap();
        let (logits, features) = net.infer(&x).unwrap();
        assert_eq!(logits, pass.logits);
        assert_eq!(features, pass.features);
    }
}
