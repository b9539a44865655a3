//! The deconvolution → convolution network: construction, forward and
//! backward passes, feature taps and checkpoints.
//!
//! Layers carry ids `L1, L2, ...` in stack order. For the six-stage imaging
//! phase these coincide with the reference layer table: `L1..L12` alternate
//! deconvolution and ReLU, `L13..L20` alternate convolution and
//! ReLU → max-pool, and `L21` is the fully-connected head.

mod checkpoint;
mod config;

pub use checkpoint::{read_header, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{plan_deconv_phase, Architecture, DeconvStage, ModelConfig, Task, CONV_CHANNELS, CONV_KERNEL, IMAGE_SIZE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, fc_backward, fc_forward, maxpool2,
    maxpool2_backward, relu, relu_backward, softmax, ConvKernel, FcLayer, Padding, PoolCache,
};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Tap name for the raw network input in [`Model::extract_features`].
pub const INPUT_TAP: &str = "input";

/// A single layer of the stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar> {
    Deconv(ConvKernel<T>),
    Relu,
    Conv { kernel: ConvKernel<T>, padding: Padding },
    /// ReLU followed by 2×2 max pooling, counted as one layer.
    ReluMaxPool,
    Fc(FcLayer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Deconv(_) => "deconv",
            Layer::Relu => "relu",
            Layer::Conv { .. } => "conv",
            Layer::ReluMaxPool => "relu-maxpool",
            Layer::Fc(_) => "fc",
        }
    }

    fn params(&self) -> Vec<&Tensor4<T>> {
        match self {
            Layer::Deconv(k) | Layer::Conv { kernel: k, .. } => vec![&k.weights, &k.bias],
            Layer::Fc(fc) => vec![&fc.weights, &fc.bias],
            Layer::Relu | Layer::ReluMaxPool => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        match self {
            Layer::Deconv(k) | Layer::Conv { kernel: k, .. } => vec![&mut k.weights, &mut k.bias],
            Layer::Fc(fc) => vec![&mut fc.weights, &mut fc.bias],
            Layer::Relu | Layer::ReluMaxPool => vec![],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerSlot<T: Scalar> {
    pub id: String,
    pub layer: Layer<T>,
}

/// What a layer needs to run its backward pass.
#[derive(Debug, Clone)]
enum LayerCache<T: Scalar> {
    Input(Tensor4<T>),
    ReluPool { input: Tensor4<T>, pool: PoolCache },
}

/// Per-layer state kept by a caching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    layers: Vec<LayerCache<T>>,
    batch: usize,
}

/// Result of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Scalar> {
    /// Softmax probabilities for classification, raw predictions for regression.
    pub output: Tensor4<T>,
    /// Output of the last layer before any softmax.
    pub logits: Tensor4<T>,
    pub cache: Option<ForwardCache<T>>,
}

/// One gradient tensor per parameter, in [`Model::param_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub tensors: Vec<Tensor4<T>>,
}

/// A built network together with its momentum buffers.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    arch: Architecture,
    config: Option<ModelConfig>,
    layers: Vec<LayerSlot<T>>,
    velocities: Vec<Tensor4<T>>,
}

impl<T: Scalar> Model<T> {
    /// Builds the standard network for `config`, He-initialized from its seed.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "config asks for {} precision but the model scalar is {}",
                config.precision,
                T::PRECISION
            )));
        }
        let mut model = Model::from_architecture(config.architecture()?, config.seed)?;
        model.config = Some(*config);
        Ok(model)
    }

    /// Builds an arbitrary architecture, He-initialized from `seed`.
    pub fn from_architecture(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut id = 0usize;
        let mut push = |layer: Layer<T>, layers: &mut Vec<LayerSlot<T>>| {
            id += 1;
            layers.push(LayerSlot {
                id: format!("L{id}"),
                layer,
            });
        };
        let mut channels = arch.input_channels;
        for stage in &arch.deconv {
            let kern = ConvKernel::he_normal(stage.kernel, channels, stage.out_channels, 1, &mut rng)?;
            push(Layer::Deconv(kern), &mut layers);
            push(Layer::Relu, &mut layers);
            channels = stage.out_channels;
        }
        let mut size = arch.image_size();
        for &out in &arch.conv_channels {
            let kern = ConvKernel::he_normal(arch.conv_kernel, channels, out, 1, &mut rng)?;
            push(
                Layer::Conv {
                    kernel: kern,
                    padding: Padding::same_bottom_right(arch.conv_kernel),
                },
                &mut layers,
            );
            push(Layer::ReluMaxPool, &mut layers);
            channels = out;
            size /= 2;
        }
        let fc = FcLayer::he_normal(size * size * channels, arch.task.outputs(), &mut rng)?;
        push(Layer::Fc(fc), &mut layers);
        let velocities = layers
            .iter()
            .flat_map(|s| s.layer.params())
            .map(|p| Tensor4::zeros(p.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            arch,
            config: None,
            layers,
            velocities,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// The configuration this model was built from, if it is a standard model.
    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn task(&self) -> Task {
        self.arch.task
    }

    pub fn input_channels(&self) -> usize {
        self.arch.input_channels
    }

    pub fn layers(&self) -> &[LayerSlot<T>] {
        &self.layers
    }

    pub fn layer_ids(&self) -> Vec<&str> {
        self.layers.iter().map(|s| s.id.as_str()).collect()
    }

    /// Id of the last imaging-phase layer whose output is the generated image
    /// before its ReLU (`L11` for six stages).
    pub fn image_layer_id(&self) -> &str {
        &self.layers[2 * self.arch.deconv.len() - 2].id
    }

    /// `"<layer id>.weight"` / `"<layer id>.bias"` for every parameter tensor.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|s| {
                let n = s.layer.params().len();
                ["weight", "bias"][..n].iter().map(move |suffix| format!("{}.{suffix}", s.id))
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor4<T>> {
        self.layers.iter().flat_map(|s| s.layer.params()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.shape().len()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.layers.iter_mut().flat_map(|s| s.layer.params_mut()).collect()
    }

    /// Parameters and their momentum buffers, pairwise.
    pub fn params_and_velocities(&mut self) -> (Vec<&mut Tensor4<T>>, &mut [Tensor4<T>]) {
        let params = self.layers.iter_mut().flat_map(|s| s.layer.params_mut()).collect();
        (params, &mut self.velocities)
    }

    pub fn velocities(&self) -> &[Tensor4<T>] {
        &self.velocities
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.h != 1 || s.w != 1 || s.c != self.arch.input_channels {
            return Err(Error::Shape(format!(
                "model expects input [b, 1, 1, {}], got {s}",
                self.arch.input_channels
            )));
        }
        Ok(())
    }

    fn layer_index(&self, id: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Input(format!("unknown layer id '{id}'")))
    }

    /// Runs layers `0..=last`, optionally keeping caches, recording each output shape.
    fn run(
        &self,
        x: &Tensor4<T>,
        last: usize,
        mut caches: Option<&mut Vec<LayerCache<T>>>,
        mut trace: Option<&mut Vec<(String, Shape4)>>,
    ) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for slot in &self.layers[..=last] {
            let (next, cache) = match &slot.layer {
                Layer::Deconv(k) => (deconv2d_forward(&cur, k)?, LayerCache::Input(cur)),
                Layer::Relu => (relu(&cur), LayerCache::Input(cur)),
                Layer::Conv { kernel, padding } => (conv2d_forward(&cur, kernel, *padding)?, LayerCache::Input(cur)),
                Layer::ReluMaxPool => {
                    let (y, pool) = maxpool2(&relu(&cur))?;
                    (y, LayerCache::ReluPool { input: cur, pool })
                }
                Layer::Fc(fc) => (fc_forward(&cur, fc)?, LayerCache::Input(cur)),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push((slot.id.clone(), next.shape()));
            }
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
            cur = next;
        }
        Ok(cur)
    }

    fn head(&self, logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.arch.task {
            Task::Classification { .. } => softmax(logits),
            Task::Regression => Ok(logits.clone()),
        }
    }

    /// Full forward pass on a `[b, 1, 1, c]` batch.
    pub fn forward(&self, x: &Tensor4<T>, keep_cache: bool) -> Result<ForwardPass<T>> {
        let mut caches = keep_cache.then(Vec::new);
        let logits = self.run(x, self.layers.len() - 1, caches.as_mut(), None)?;
        let output = self.head(&logits)?;
        Ok(ForwardPass {
            output,
            logits,
            cache: caches.map(|layers| ForwardCache {
                layers,
                batch: x.shape().b,
            }),
        })
    }

    /// Output shape of every layer for the given batch, from an actual forward run.
    pub fn shape_trace(&self, x: &Tensor4<T>) -> Result<Vec<(String, Shape4)>> {
        let mut trace = vec![(INPUT_TAP.to_string(), x.shape())];
        self.run(x, self.layers.len() - 1, None, Some(&mut trace))?;
        Ok(trace)
    }

    /// Activation after layer `layer_id` (or the input itself for `"input"`).
    pub fn extract_features(&self, x: &Tensor4<T>, layer_id: &str) -> Result<Tensor4<T>> {
        if layer_id == INPUT_TAP {
            self.check_input(x)?;
            return Ok(x.clone());
        }
        let idx = self.layer_index(layer_id)?;
        self.run(x, idx, None, None)
    }

    /// Backpropagates `head_grad`, the gradient of the loss with respect to
    /// the last layer's output (the logits, before any softmax).
    pub fn backward(&self, cache: &ForwardCache<T>, head_grad: &Tensor4<T>) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State(format!(
                "forward cache holds {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let want = Shape4::new(cache.batch, 1, 1, self.arch.task.outputs())?;
        if head_grad.shape() != want {
            return Err(Error::Shape(format!(
                "upstream gradient {} does not match model output {want}",
                head_grad.shape()
            )));
        }
        let mut grads: Vec<Option<(Tensor4<T>, Tensor4<T>)>> = vec![None; self.layers.len()];
        let mut g = head_grad.clone();
        for (i, (slot, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input = i > 0;
            g = match (&slot.layer, lc) {
                (Layer::Deconv(k), LayerCache::Input(x)) => {
                    let pg = deconv2d_backward(x, k, &g, need_input)?;
                    grads[i] = Some((pg.weights, pg.bias));
                    pg.input.unwrap_or(g)
                }
                (Layer::Conv { kernel, padding }, LayerCache::Input(x)) => {
                    let pg = conv2d_backward(x, kernel, *padding, &g, need_input)?;
                    grads[i] = Some((pg.weights, pg.bias));
                    pg.input.unwrap_or(g)
                }
                (Layer::Fc(fc), LayerCache::Input(x)) => {
                    let pg = fc_backward(x, fc, &g, need_input)?;
                    grads[i] = Some((pg.weights, pg.bias));
                    pg.input.unwrap_or(g)
                }
                (Layer::Relu, LayerCache::Input(x)) => relu_backward(x, &g)?,
                (Layer::ReluMaxPool, LayerCache::ReluPool { input, pool }) => {
                    relu_backward(input, &maxpool2_backward(pool, &g)?)?
                }
                _ => {
                    return Err(Error::State(format!(
                        "forward cache for {} does not match its layer kind",
                        slot.id
                    )))
                }
            };
        }
        Ok(Gradients {
            tensors: grads.into_iter().flatten().flat_map(|(w, b)| [w, b]).collect(),
        })
    }

    /// Replaces every parameter, checking shapes; momentum buffers are reset.
    pub fn set_params(&mut self, values: Vec<Tensor4<T>>) -> Result<()> {
        let params = self.params_mut();
        if values.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter().zip(&values) {
            if p.shape() != v.shape() {
                return Err(Error::Shape(format!("parameter shape {} vs {}", p.shape(), v.shape())));
            }
        }
        for (p, v) in params.into_iter().zip(values) {
            *p = v;
        }
        for v in &mut self.velocities {
            v.fill(T::zero());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(c: usize, d: usize, task: Task) -> ModelConfig {
        ModelConfig::new(c, d, task, 1)
    }

    #[test]
    fn layer_ids_and_kinds_follow_table() {
        let m = Model::<f32>::build(&cfg(28, 6, Task::Classification { classes: 2 })).unwrap();
        assert_eq!(m.layers().len(), 21);
        let kinds: Vec<_> = m.layers().iter().map(|s| s.layer.kind()).collect();
        for (i, k) in kinds.iter().enumerate().take(12) {
            assert_eq!(*k, if i % 2 == 0 { "deconv" } else { "relu" });
        }
        for (i, k) in kinds.iter().enumerate().skip(12).take(8) {
            assert_eq!(*k, if i % 2 == 0 { "conv" } else { "relu-maxpool" });
        }
        assert_eq!(kinds[20], "fc");
        assert_eq!(m.layer_ids()[20], "L21");
        assert_eq!(m.image_layer_id(), "L11");
    }

    #[test]
    fn precision_mismatch_rejected() {
        let c = ModelConfig::new(4, 3, Task::Regression, 0);
        assert!(Model::<f64>::build(&c).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let c = cfg(16, 4, Task::Regression);
        let a = Model::<f32>::build(&c).unwrap();
        let b = Model::<f32>::build(&c).unwrap();
        assert_eq!(a.params(), b.params());
        let other = Model::<f32>::build(&ModelConfig { seed: 2, ..c }).unwrap();
        assert_ne!(a.params(), other.params());
    }

    #[test]
    fn zero_input_zero_bias_gives_softmax_of_head_bias() {
        let mut m = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Classification { classes: 3 }), 5).unwrap();
        let last = m.params_mut().pop().unwrap();
        last.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = Tensor4::zeros(Shape4::new(2, 1, 1, 4).unwrap()).unwrap();
        let out = m.forward(&x, false).unwrap().output;
        let bias = Tensor4::from_vec(Shape4::new(1, 1, 1, 3).unwrap(), vec![0.5, -1.0, 2.0]).unwrap();
        let want = softmax(&bias).unwrap();
        for row in out.data().chunks(3) {
            assert_eq!(row, want.data());
        }
    }

    #[test]
    fn extract_features_taps() {
        let m = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Regression), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor4::from_vec(Shape4::new(3, 1, 1, 4).unwrap(), (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(m.extract_features(&x, INPUT_TAP).unwrap(), x);
        assert_eq!(m.extract_features(&x, m.image_layer_id()).unwrap().shape(), Shape4::new(3, 8, 8, 1).unwrap());
        assert!(matches!(m.extract_features(&x, "L99"), Err(Error::Input(_))));
        let last = m.layer_ids().last().unwrap().to_string();
        assert_eq!(m.extract_features(&x, &last).unwrap(), m.forward(&x, false).unwrap().logits);
    }

    #[test]
    fn backward_rejects_bad_cache_and_grad() {
        let m = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Regression), 3).unwrap();
        let x = Tensor4::zeros(Shape4::new(2, 1, 1, 4).unwrap()).unwrap();
        let pass = m.forward(&x, true).unwrap();
        let cache = pass.cache.unwrap();
        let bad = Tensor4::zeros(Shape4::new(3, 1, 1, 1).unwrap()).unwrap();
        assert!(matches!(m.backward(&cache, &bad), Err(Error::Shape(_))));
        let empty = ForwardCache { layers: vec![], batch: 2 };
        assert!(matches!(m.backward(&empty, &pass.output), Err(Error::State(_))));
        let other = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Classification { classes: 2 }), 3).unwrap();
        let g = Tensor4::zeros(Shape4::new(2, 1, 1, 2).unwrap()).unwrap();
        let mut swapped = other.forward(&x, true).unwrap().cache.unwrap();
        swapped.layers.swap(6, 7);
        assert!(matches!(other.backward(&swapped, &g), Err(Error::State(_))));
    }

    #[test]
    fn input_channel_mismatch() {
        let m = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Regression), 3).unwrap();
        let x = Tensor4::zeros(Shape4::new(2, 1, 1, 5).unwrap()).unwrap();
        assert!(matches!(m.forward(&x, false), Err(Error::Shape(_))));
    }
}
