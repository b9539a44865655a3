//! Training loop, evaluation and the finite-difference gradient checker.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{BatchPlan, Dataset, Targets};
use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, fc_backward, fc_forward, maxpool2,
    maxpool2_backward, relu, relu_backward, softmax, softmax_backward, ConvKernel, FcLayer, Padding,
};
use crate::loss::{cross_entropy, mse_loss, one_hot, rmse, top1_accuracy};
use crate::model::{Architecture, Model, Task};
use crate::optim::{scheduled_lr, step, SgdConfig};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Samples per inference batch in [`evaluate`] and [`predict`].
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Drives the per-epoch shuffles.
    pub seed: u64,
    /// Evaluate on the test set every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 9,
            batch_size: 64,
            sgd: SgdConfig::default(),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch size and eval interval must be at least 1".into()));
        }
        self.sgd.validate()?;
        if self.sgd.total_epochs != self.epochs {
            return Err(Error::Config(format!(
                "optimizer schedule covers {} epochs but training runs {}",
                self.sgd.total_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Top1,
    Rmse,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        if task.is_classification() {
            MetricKind::Top1
        } else {
            MetricKind::Rmse
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Top1 => "top1",
            MetricKind::Rmse => "rmse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub metric: MetricKind,
    pub value: f64,
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch losses.
    pub train_loss: f64,
    pub test: Option<Evaluation>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Loss of the very first mini-batch, before any update.
    pub first_batch_loss: f64,
}

impl TrainReport {
    pub fn final_test(&self) -> Option<Evaluation> {
        self.epochs.last().and_then(|e| e.test)
    }
}

fn check_compatible<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<()> {
    if ds.attributes() != model.input_channels() {
        return Err(Error::Config(format!(
            "model expects {} input attributes, dataset has {}",
            model.input_channels(),
            ds.attributes()
        )));
    }
    match (model.task(), &ds.targets) {
        (Task::Classification { classes }, Targets::Classes { labels, .. }) => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::Config(format!("label {bad} out of range for a {classes}-class model")));
            }
            Ok(())
        }
        (Task::Regression, Targets::Values(_)) => Ok(()),
        (task, _) => Err(Error::Config(format!("dataset targets do not match the model task {task:?}"))),
    }
}

/// Loss and its gradient with respect to the logits for the batch `idx`.
fn batch_loss<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    idx: &[usize],
    output: &Tensor4<T>,
) -> Result<crate::loss::LossValue<T>> {
    match (&ds.targets, model.task()) {
        (Targets::Classes { labels, .. }, Task::Classification { classes }) => {
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            cross_entropy(output, &one_hot(&batch_labels, classes)?)
        }
        (Targets::Values(v), Task::Regression) => {
            let batch_targets: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            mse_loss(output, &batch_targets)
        }
        _ => Err(Error::Config("dataset targets do not match the model task".into())),
    }
}

/// Trains in place for `cfg.epochs` epochs. Every step is a deterministic
/// function of the model seed, `cfg.seed` and the data.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(model, train_ds, test_ds, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress<T: Scalar>(
    model: &mut Model<T>,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut first_batch_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        let outcome = train_epoch(model, train_ds, test_ds, cfg, epoch)?;
        if epoch == 1 {
            first_batch_loss = outcome.first_batch_loss;
        }
        on_epoch(&outcome.metrics);
        epochs.push(outcome.metrics);
    }
    Ok(TrainReport {
        epochs,
        first_batch_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub metrics: EpochMetrics,
    pub first_batch_loss: f64,
}

/// Runs epoch `epoch` (1-based) of the schedule in `cfg`. Calling this for
/// `1..=cfg.epochs` in order is exactly what [`train`] does.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    cfg.validate()?;
    check_compatible(model, train_ds)?;
    if let Some(t) = test_ds {
        check_compatible(model, t)?;
    }
    if train_ds.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let start = Instant::now();
    let lr = scheduled_lr(&cfg.sgd, epoch)?;
    let plan = BatchPlan::new(train_ds.len(), cfg.batch_size, cfg.seed, epoch)?;
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut first_batch_loss = f64::NAN;
    for (b, idx) in plan.batches().enumerate() {
        let x = train_ds.batch_input::<T>(idx)?;
        let pass = model.forward(&x, true)?;
        let loss = batch_loss(model, train_ds, idx, &pass.output)?;
        if !loss.value.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: b + 1,
                loss: loss.value,
            });
        }
        if b == 0 {
            first_batch_loss = loss.value;
        }
        let cache = pass.cache.ok_or_else(|| Error::State("forward pass kept no cache".into()))?;
        let grads = model.backward(&cache, &loss.grad)?;
        let (mut params, velocities) = model.params_and_velocities();
        step(&mut params, velocities, &grads.tensors, lr, cfg.sgd.momentum)?;
        loss_sum += loss.value;
        batches += 1;
    }
    let test = match test_ds {
        Some(t) if !t.is_empty() && (epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.epochs) => Some(evaluate(model, t)?),
        _ => None,
    };
    Ok(EpochOutcome {
        metrics: EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            test,
            seconds: start.elapsed().as_secs_f64(),
        },
        first_batch_loss,
    })
}

/// Network outputs (probabilities or predictions) for every sample, row-major
/// `n × outputs`, computed in batches without caches.
pub fn predict<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<Vec<f64>> {
    if ds.attributes() != model.input_channels() {
        return Err(Error::Config(format!(
            "model expects {} input attributes, dataset has {}",
            model.input_channels(),
            ds.attributes()
        )));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len() * model.task().outputs());
    for idx in all.chunks(EVAL_BATCH) {
        let pass = model.forward(&ds.batch_input::<T>(idx)?, false)?;
        out.extend(pass.output.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Top-1 accuracy (classification) or RMSE (regression) over `ds`.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<Evaluation> {
    check_compatible(model, ds)?;
    if ds.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let outputs = predict(model, ds)?;
    let value = match &ds.targets {
        Targets::Classes { labels, .. } => {
            let m = model.task().outputs();
            let probs = Tensor4::<f64>::from_vec(Shape4::new(ds.len(), 1, 1, m)?, outputs)?;
            top1_accuracy(&probs, labels)?
        }
        Targets::Values(v) => rmse(&outputs, v)?,
    };
    Ok(Evaluation {
        metric: MetricKind::for_task(model.task()),
        value,
    })
}

/// Writes `epoch,lr,train_loss,metric_name,metric_value,seconds`. With
/// `timing == false` the seconds column is written as 0 so that repeated runs
/// compare byte-for-byte.
pub fn write_metrics_csv(path: impl AsRef<Path>, epochs: &[EpochMetrics], timing: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,lr,train_loss,metric_name,metric_value,seconds").map_err(io)?;
    for e in epochs {
        let (name, value) = match e.test {
            Some(t) => (format!("test_{}", t.metric.name()), t.value.to_string()),
            None => (String::new(), String::new()),
        };
        let secs = if timing { format!("{:.3}", e.seconds) } else { "0".into() };
        writeln!(w, "{},{},{},{name},{value},{secs}", e.epoch, e.lr, e.train_loss).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Finite-difference step used by [`gradcheck`].
pub const FD_STEP: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// What [`gradcheck`] exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckScope {
    Deconv2d,
    Conv2d,
    Relu,
    Maxpool,
    Fc,
    Softmax,
    CrossEntropy,
    Mse,
    /// The reduced end-to-end network.
    FullSmall,
}

impl GradcheckScope {
    pub const ALL: [GradcheckScope; 9] = [
        GradcheckScope::Deconv2d,
        GradcheckScope::Conv2d,
        GradcheckScope::Relu,
        GradcheckScope::Maxpool,
        GradcheckScope::Fc,
        GradcheckScope::Softmax,
        GradcheckScope::CrossEntropy,
        GradcheckScope::Mse,
        GradcheckScope::FullSmall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradcheckScope::Deconv2d => "deconv2d",
            GradcheckScope::Conv2d => "conv2d",
            GradcheckScope::Relu => "relu",
            GradcheckScope::Maxpool => "maxpool",
            GradcheckScope::Fc => "fc",
            GradcheckScope::Softmax => "softmax",
            GradcheckScope::CrossEntropy => "cross_entropy",
            GradcheckScope::Mse => "mse",
            GradcheckScope::FullSmall => "full-small",
        }
    }
}

impl fmt::Display for GradcheckScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradcheckScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradcheckScope::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown gradcheck scope '{s}'")))
    }
}

/// Worst disagreement for one checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub scope: GradcheckScope,
    pub tensor: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference gradient of `f` with respect to every coordinate of
/// every tensor in `point`.
pub fn numeric_gradient(
    point: &[Tensor4<f64>],
    step_size: f64,
    f: impl Fn(&[Tensor4<f64>]) -> Result<f64>,
) -> Result<Vec<Tensor4<f64>>> {
    let mut work = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for t in 0..point.len() {
        let mut g = Tensor4::zeros(point[t].shape())?;
        for i in 0..point[t].data().len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step_size;
            let plus = f(&work)?;
            work[t].data_mut()[i] = orig - step_size;
            let minus = f(&work)?;
            work[t].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * step_size);
        }
        out.push(g);
    }
    Ok(out)
}

fn compare(
    scope: GradcheckScope,
    names: &[&str],
    analytic: &[Tensor4<f64>],
    numeric: &[Tensor4<f64>],
) -> Result<Vec<GradcheckEntry>> {
    names
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|(name, (a, n))| {
            a.check_same_shape(n)?;
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            for (&x, &y) in a.data().iter().zip(n.data()) {
                rel = rel.max(relative_error(x, y));
                abs = abs.max((x - y).abs());
            }
            Ok(GradcheckEntry {
                scope,
                tensor: name.to_string(),
                coordinates: a.data().len(),
                max_rel_err: rel,
                max_abs_err: abs,
            })
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize) -> Result<Tensor4<f64>> {
    let shape = Shape4::new(b, h, w, c)?;
    Tensor4::from_vec(shape, (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect())
}

/// Values bounded away from zero so that no ReLU kink lies within a step.
fn off_kink_tensor(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize) -> Result<Tensor4<f64>> {
    let shape = Shape4::new(b, h, w, c)?;
    let data = (0..shape.len())
        .map(|_| {
            let mag = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor4::from_vec(shape, data)
}

/// Distinct values at least 0.01 apart, so pooling winners never swap within a step.
fn distinct_tensor(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize) -> Result<Tensor4<f64>> {
    let shape = Shape4::new(b, h, w, c)?;
    let mut data: Vec<f64> = (0..shape.len()).map(|i| 0.05 * i as f64 - 1.0).collect();
    data.shuffle(rng);
    Tensor4::from_vec(shape, data)
}

fn inner(a: &Tensor4<f64>, b: &Tensor4<f64>) -> Result<f64> {
    a.dot(b)
}

fn check_scope(scope: GradcheckScope, seed: u64) -> Result<Vec<GradcheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    match scope {
        GradcheckScope::Deconv2d => {
            let mut entries = Vec::new();
            for (stride, k) in [(1, 3), (2, 3), (3, 2)] {
                let x = random_tensor(&mut rng, 2, 3, 2, 2)?;
                let kern = ConvKernel::new(random_tensor(&mut rng, k, k, 2, 3)?, random_tensor(&mut rng, 1, 1, 1, 3)?, stride)?;
                let y = deconv2d_forward(&x, &kern)?;
                let g = random_tensor(&mut rng, y.shape().b, y.shape().h, y.shape().w, y.shape().c)?;
                let pg = deconv2d_backward(&x, &kern, &g, true)?;
                let analytic = [pg.input.expect("input gradient requested"), pg.weights, pg.bias];
                let numeric = numeric_gradient(&[x, kern.weights.clone(), kern.bias.clone()], h, |p| {
                    let k = ConvKernel::new(p[1].clone(), p[2].clone(), stride)?;
                    inner(&deconv2d_forward(&p[0], &k)?, &g)
                })?;
                let names = [format!("s{stride}.input"), format!("s{stride}.weight"), format!("s{stride}.bias")];
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                entries.extend(compare(scope, &names, &analytic, &numeric)?);
            }
            Ok(entries)
        }
        GradcheckScope::Conv2d => {
            let mut entries = Vec::new();
            for (stride, k, pad) in [(1, 2, Padding::same_bottom_right(2)), (1, 3, Padding::uniform(1)), (2, 3, Padding::NONE)] {
                let x = random_tensor(&mut rng, 2, 5, 5, 2)?;
                let kern = ConvKernel::new(random_tensor(&mut rng, k, k, 2, 3)?, random_tensor(&mut rng, 1, 1, 1, 3)?, stride)?;
                let y = conv2d_forward(&x, &kern, pad)?;
                let g = random_tensor(&mut rng, y.shape().b, y.shape().h, y.shape().w, y.shape().c)?;
                let pg = conv2d_backward(&x, &kern, pad, &g, true)?;
                let analytic = [pg.input.expect("input gradient requested"), pg.weights, pg.bias];
                let numeric = numeric_gradient(&[x, kern.weights.clone(), kern.bias.clone()], h, |p| {
                    let k = ConvKernel::new(p[1].clone(), p[2].clone(), stride)?;
                    inner(&conv2d_forward(&p[0], &k, pad)?, &g)
                })?;
                let names = [format!("k{k}s{stride}.input"), format!("k{k}s{stride}.weight"), format!("k{k}s{stride}.bias")];
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                entries.extend(compare(scope, &names, &analytic, &numeric)?);
            }
            Ok(entries)
        }
        GradcheckScope::Relu => {
            let x = off_kink_tensor(&mut rng, 2, 3, 3, 2)?;
            let g = random_tensor(&mut rng, 2, 3, 3, 2)?;
            let analytic = [relu_backward(&x, &g)?];
            let numeric = numeric_gradient(&[x], h, |p| inner(&relu(&p[0]), &g))?;
            compare(scope, &["input"], &analytic, &numeric)
        }
        GradcheckScope::Maxpool => {
            let x = distinct_tensor(&mut rng, 2, 4, 6, 2)?;
            let (y, cache) = maxpool2(&x)?;
            let g = random_tensor(&mut rng, y.shape().b, y.shape().h, y.shape().w, y.shape().c)?;
            let analytic = [maxpool2_backward(&cache, &g)?];
            let numeric = numeric_gradient(&[x], h, |p| inner(&maxpool2(&p[0])?.0, &g))?;
            compare(scope, &["input"], &analytic, &numeric)
        }
        GradcheckScope::Fc => {
            let x = random_tensor(&mut rng, 3, 2, 2, 3)?;
            let fc = FcLayer {
                weights: random_tensor(&mut rng, 1, 1, 12, 4)?,
                bias: random_tensor(&mut rng, 1, 1, 1, 4)?,
            };
            let g = random_tensor(&mut rng, 3, 1, 1, 4)?;
            let pg = fc_backward(&x, &fc, &g, true)?;
            let analytic = [pg.input.expect("input gradient requested"), pg.weights, pg.bias];
            let numeric = numeric_gradient(&[x, fc.weights.clone(), fc.bias.clone()], h, |p| {
                let fc = FcLayer {
                    weights: p[1].clone(),
                    bias: p[2].clone(),
                };
                inner(&fc_forward(&p[0], &fc)?, &g)
            })?;
            compare(scope, &["input", "weight", "bias"], &analytic, &numeric)
        }
        GradcheckScope::Softmax => {
            let z = random_tensor(&mut rng, 3, 1, 1, 4)?;
            let g = random_tensor(&mut rng, 3, 1, 1, 4)?;
            let analytic = [softmax_backward(&softmax(&z)?, &g)?];
            let numeric = numeric_gradient(&[z], h, |p| inner(&softmax(&p[0])?, &g))?;
            compare(scope, &["logits"], &analytic, &numeric)
        }
        GradcheckScope::CrossEntropy => {
            let z = random_tensor(&mut rng, 4, 1, 1, 3)?;
            let targets = one_hot::<f64>(&[0, 2, 1, 2], 3)?;
            let analytic = [cross_entropy(&softmax(&z)?, &targets)?.grad];
            let numeric = numeric_gradient(&[z], h, |p| Ok(cross_entropy(&softmax(&p[0])?, &targets)?.value))?;
            compare(scope, &["logits"], &analytic, &numeric)
        }
        GradcheckScope::Mse => {
            let pred = random_tensor(&mut rng, 5, 1, 1, 1)?;
            let targets: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            let analytic = [mse_loss(&pred, &targets)?.grad];
            let numeric = numeric_gradient(&[pred], h, |p| Ok(mse_loss(&p[0], &targets)?.value))?;
            compare(scope, &["prediction"], &analytic, &numeric)
        }
        GradcheckScope::FullSmall => {
            let mut model = Model::<f64>::from_architecture(Architecture::reduced(4, Task::Classification { classes: 2 }), seed)?;
            // Zero biases put whole regions exactly on ReLU kinks; move off them.
            let mut point: Vec<Tensor4<f64>> = model.params().into_iter().cloned().collect();
            for (p, name) in point.iter_mut().zip(model.param_names()) {
                if name.ends_with(".bias") {
                    for v in p.data_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = 0.1 * z;
                    }
                }
            }
            model.set_params(point.clone())?;
            let x = random_tensor(&mut rng, 2, 1, 1, 4)?;
            let targets = one_hot::<f64>(&[0, 1], 2)?;
            let pass = model.forward(&x, true)?;
            let loss = cross_entropy(&pass.output, &targets)?;
            let cache = pass.cache.ok_or_else(|| Error::State("forward pass kept no cache".into()))?;
            let analytic = model.backward(&cache, &loss.grad)?.tensors;
            let numeric = numeric_gradient(&point, h, |p| {
                let mut m = model.clone();
                m.set_params(p.to_vec())?;
                Ok(cross_entropy(&m.forward(&x, false)?.output, &targets)?.value)
            })?;
            let names = model.param_names();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            compare(scope, &names, &analytic, &numeric)
        }
    }
}

/// Compares analytic gradients with central differences (step [`FD_STEP`])
/// on small random double-precision instances of each scope.
pub fn gradcheck(scopes: &[GradcheckScope], tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let mut entries = Vec::new();
    for &scope in scopes {
        entries.extend(check_scope(scope, seed)?);
    }
    Ok(GradcheckReport { tolerance, entries })
}
