//! Dataset ingestion, `[-1, 1]` normalization, splitting, mini-batching and
//! synthetic generators.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Per-sample supervision.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Label or target of sample `i` as text.
    pub fn display(&self, i: usize) -> String {
        match self {
            Targets::Classes { labels, .. } => labels[i].to_string(),
            Targets::Values(v) => format!("{}", v[i]),
        }
    }
}

/// Per-attribute `(min, max)` captured from a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormStats {
    pub fn len(&self) -> usize {
        self.mins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mins.is_empty()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "attribute,min,max").map_err(io)?;
        for (i, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            writeln!(w, "{i},{lo},{hi}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .quoting(false)
            .from_path(path)
            .map_err(|e| csv_error(&name, e))?;
        let mut stats = NormStats {
            mins: vec![],
            maxs: vec![],
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&name, e))?;
            let field = |c: usize| -> Result<f64> {
                rec.get(c).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Format {
                    path: name.clone(),
                    message: format!("row {}: bad normalization entry", row + 2),
                })
            };
            stats.mins.push(field(1)?);
            stats.maxs.push(field(2)?);
        }
        Ok(stats)
    }
}

/// Feature matrix plus targets. Features are stored row-major `n × attributes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    attributes: usize,
    pub targets: Targets,
    /// Statistics used to normalize `features`, if they have been normalized.
    pub norm_stats: Option<NormStats>,
    /// Original label text per class index, when loaded from a file.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, attributes: usize, targets: Targets) -> Result<Self> {
        if attributes == 0 {
            return Err(Error::Input("dataset needs at least one attribute".into()));
        }
        if features.len() != attributes * targets.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of {attributes} attributes",
                features.len(),
                targets.len()
            )));
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
            }
        }
        Ok(Dataset {
            features,
            attributes,
            targets,
            norm_stats: None,
            class_names: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn attributes(&self) -> usize {
        self.attributes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.attributes..(i + 1) * self.attributes]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn classes(&self) -> Option<usize> {
        match self.targets {
            Targets::Classes { classes, .. } => Some(classes),
            Targets::Values(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Classes { .. } => None,
        }
    }

    /// Label of sample `i`: the original class text if known, else the index
    /// or regression target.
    pub fn label_text(&self, i: usize) -> String {
        match &self.targets {
            Targets::Classes { labels, .. } if labels[i] < self.class_names.len() => self.class_names[labels[i]].clone(),
            t => t.display(i),
        }
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            attributes: self.attributes,
            targets: self.targets.select(idx),
            norm_stats: self.norm_stats.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Network input `[idx.len(), 1, 1, attributes]` for the selected rows.
    pub fn batch_input<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor4<T>> {
        let data = idx
            .iter()
            .flat_map(|&i| self.row(i).iter().map(|&v| T::from_f64_lossy(v)))
            .collect();
        Tensor4::from_vec(Shape4::new(idx.len(), 1, 1, self.attributes)?, data)
    }

    /// Writes `f0..f{k-1},label` rows with a header line.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        let header: Vec<String> = (0..self.attributes).map(|i| format!("f{i}")).chain(["label".into()]).collect();
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.len() {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", row.join(","), self.label_text(i)).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Position of the label field in a CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
}

impl FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(LabelColumn::First),
            "last" => Ok(LabelColumn::Last),
            other => Err(Error::Input(format!("label column must be 'first' or 'last', got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub label_column: LabelColumn,
    pub has_header: bool,
    pub target: TargetKind,
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.into(),
            source,
        },
        other => Error::Format {
            path: path.to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// Loads a comma-separated numeric table. Class labels (any text) are mapped
/// to indices in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Dataset> {
    load_csv_with_vocab(path, schema, &mut Vec::new())
}

/// Like [`load_csv`], but class labels are looked up in `vocab` first and
/// unseen ones appended, so a test file shares the training file's mapping.
pub fn load_csv_with_vocab(path: impl AsRef<Path>, schema: CsvSchema, vocab: &mut Vec<String>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .quoting(false)
        .flexible(true)
        .from_reader(file);
    let fmt_err = |message: String| Error::Format {
        path: name.clone(),
        message,
    };
    let mut width = None;
    let mut features = Vec::new();
    let mut label_ids: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(fmt_err(format!("row {line}: expected {w} fields, found {}", rec.len())));
        }
        if w < 2 {
            return Err(fmt_err(format!("row {line}: need at least one feature and a label")));
        }
        let label_idx = match schema.label_column {
            LabelColumn::First => 0,
            LabelColumn::Last => w - 1,
        };
        for (col, field) in rec.iter().enumerate() {
            let field = field.trim();
            if col == label_idx {
                match schema.target {
                    TargetKind::Classification => {
                        let id = *label_ids.entry(field.to_string()).or_insert_with(|| {
                            vocab.push(field.to_string());
                            vocab.len() - 1
                        });
                        labels.push(id);
                    }
                    TargetKind::Regression => values.push(field.parse::<f64>().map_err(|_| {
                        fmt_err(format!("row {line}, column {}: cannot parse target '{field}'", col + 1))
                    })?),
                }
            } else {
                let v: f64 = field
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| fmt_err(format!("row {line}, column {}: cannot parse '{field}' as a number", col + 1)))?;
                features.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(fmt_err("file contains no data rows".into()));
    };
    let targets = match schema.target {
        TargetKind::Classification => Targets::Classes {
            labels,
            classes: vocab.len(),
        },
        TargetKind::Regression => Targets::Values(values),
    };
    let mut ds = Dataset::new(features, w - 1, targets)?;
    if schema.target == TargetKind::Classification {
        ds.class_names = vocab.clone();
    }
    Ok(ds)
}

/// Per-attribute min/max of a (training) dataset.
pub fn fit_normalize(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Input("cannot fit normalization on an empty dataset".into()));
    }
    let d = train.attributes();
    let mut stats = NormStats {
        mins: vec![f64::INFINITY; d],
        maxs: vec![f64::NEG_INFINITY; d],
    };
    for i in 0..train.len() {
        for (j, &v) in train.row(i).iter().enumerate() {
            stats.mins[j] = stats.mins[j].min(v);
            stats.maxs[j] = stats.maxs[j].max(v);
        }
    }
    Ok(stats)
}

/// `x' = 2(x - min)/(max - min) - 1` per attribute; constant attributes map to 0.
pub fn apply_normalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.len() != ds.attributes() {
        return Err(Error::Shape(format!(
            "normalization has {} attributes, dataset has {}",
            stats.len(),
            ds.attributes()
        )));
    }
    let d = ds.attributes();
    let features = ds
        .features
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = (stats.mins[i % d], stats.maxs[i % d]);
            if hi > lo {
                2.0 * (x - lo) / (hi - lo) - 1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(Dataset {
        features,
        attributes: d,
        targets: ds.targets.clone(),
        norm_stats: Some(stats.clone()),
        class_names: ds.class_names.clone(),
    })
}

/// Inverse of [`apply_normalize`] for non-constant attributes.
pub fn denormalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.len() != ds.attributes() {
        return Err(Error::Shape("normalization width mismatch".into()));
    }
    let d = ds.attributes();
    let features = ds
        .features
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = (stats.mins[i % d], stats.maxs[i % d]);
            if hi > lo {
                (x + 1.0) * (hi - lo) / 2.0 + lo
            } else {
                lo
            }
        })
        .collect();
    Ok(Dataset {
        features,
        attributes: d,
        targets: ds.targets.clone(),
        norm_stats: None,
        class_names: ds.class_names.clone(),
    })
}

/// Seeded shuffle, then the first `ceil(f·n)` rows train and the rest test.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Input(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    if ds.is_empty() {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ds.len() as f64).ceil() as usize;
    Ok((ds.subset(&order[..n_train]), ds.subset(&order[n_train..])))
}

/// Visiting order of one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub order: Vec<usize>,
}

impl BatchPlan {
    /// Permutation of `0..n` drawn from stream `epoch` of the base seed, so
    /// every epoch reshuffles while staying reproducible.
    pub fn new(n: usize, batch_size: usize, base_seed: u64, epoch: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(BatchPlan { batch_size, order })
    }

    /// Consecutive index slices; the last batch may be short.
    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }
}

/// Built-in synthetic problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Two concentric rings in the first two attributes.
    TwoRings,
    /// Four blobs at `(±1, ±1)`; the class is the XOR of the two signs.
    XorBlobs,
    /// Uniform points labelled by a random hyperplane through the origin.
    Linear2Class,
    /// `y = sin(w·x) + noise` for a fixed random `w`.
    SineRegression,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::TwoRings,
        SynthKind::XorBlobs,
        SynthKind::Linear2Class,
        SynthKind::SineRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::TwoRings => "two_rings",
            SynthKind::XorBlobs => "xor_blobs",
            SynthKind::Linear2Class => "linear_2class",
            SynthKind::SineRegression => "sine_regression",
        }
    }

    pub fn is_regression(self) -> bool {
        self == SynthKind::SineRegression
    }

    /// Noise level used when none is given. The linear problem stays exactly
    /// separable; the others need spread around their blobs and rings.
    pub fn default_noise(self) -> f64 {
        match self {
            SynthKind::Linear2Class => 0.0,
            _ => 0.1,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown synthetic dataset kind '{s}'")))
    }
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gauss(rng, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Deterministic synthetic dataset. Classification kinds are balanced to
/// within one sample; attributes beyond the informative ones carry only noise.
pub fn synth_dataset(kind: SynthKind, n: usize, attributes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Input(format!("synthetic datasets need at least 4 samples, got {n}")));
    }
    if attributes < 2 {
        return Err(Error::Input(format!("synthetic datasets need at least 2 attributes, got {attributes}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Input(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * attributes);
    match kind {
        SynthKind::SineRegression => {
            // ‖w‖ = 2 keeps w·x mostly within a couple of radians for uniform x.
            let w: Vec<f64> = unit_vector(&mut rng, attributes).into_iter().map(|v| 2.0 * v).collect();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..attributes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sin() + gauss(&mut rng, noise);
                features.extend_from_slice(&x);
                values.push(y);
            }
            Dataset::new(features, attributes, Targets::Values(values))
        }
        SynthKind::Linear2Class => {
            let w = unit_vector(&mut rng, attributes);
            let quota = [n - n / 2, n / 2];
            let mut count = [0usize; 2];
            let mut labels = Vec::with_capacity(n);
            while labels.len() < n {
                let x: Vec<f64> = (0..attributes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                let label = usize::from(score > 0.0);
                if count[label] == quota[label] {
                    continue;
                }
                count[label] += 1;
                features.extend(x.iter().map(|&v| v + gauss(&mut rng, noise)));
                labels.push(label);
            }
            Dataset::new(features, attributes, Targets::Classes { labels, classes: 2 })
        }
        SynthKind::XorBlobs | SynthKind::TwoRings => {
            // Alternate classes, then shuffle rows, for an exact 50/50 split.
            let mut rows: Vec<(Vec<f64>, usize)> = (0..n)
                .map(|i| {
                    let label = i % 2;
                    let mut x = vec![0.0; attributes];
                    match kind {
                        SynthKind::XorBlobs => {
                            let sx = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                            let sy = if label == 1 { -sx } else { sx };
                            x[0] = sx + gauss(&mut rng, noise);
                            x[1] = sy + gauss(&mut rng, noise);
                        }
                        _ => {
                            let r = if label == 0 { 1.0 } else { 2.0 };
                            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                            x[0] = r * theta.cos() + gauss(&mut rng, noise);
                            x[1] = r * theta.sin() + gauss(&mut rng, noise);
                        }
                    }
                    for v in &mut x[2..] {
                        *v = gauss(&mut rng, noise);
                    }
                    (x, label)
                })
                .collect();
            rows.shuffle(&mut rng);
            let mut labels = Vec::with_capacity(n);
            for (x, l) in rows {
                features.extend(x);
                labels.push(l);
            }
            Dataset::new(features, attributes, Targets::Classes { labels, classes: 2 })
        }
    }
}

/// Streams `sample_id,label,f0..f{k-1}` rows, one per batch item.
pub struct FeatureCsvWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
    width: usize,
    rows: usize,
}

impl FeatureCsvWriter {
    /// Creates the file and writes the header for `width` feature columns.
    pub fn create(path: impl AsRef<Path>, width: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let header: Vec<String> = ["sample_id".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..width).map(|i| format!("f{i}")))
            .collect();
        writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(&path, e))?;
        Ok(FeatureCsvWriter {
            out,
            path,
            width,
            rows: 0,
        })
    }

    pub fn write_batch<T: Scalar>(&mut self, sample_ids: &[usize], labels: &[String], features: &Tensor4<T>) -> Result<()> {
        let shape = features.shape();
        if sample_ids.len() != shape.b || labels.len() != shape.b || shape.per_sample() != self.width {
            return Err(Error::Shape(format!(
                "{} ids and {} labels for features {shape}, expected width {}",
                sample_ids.len(),
                labels.len(),
                self.width
            )));
        }
        for (b, (id, label)) in sample_ids.iter().zip(labels).enumerate() {
            let vals: Vec<String> = features.sample(b).iter().map(|v| v.to_string()).collect();
            writeln!(self.out, "{id},{label},{}", vals.join(",")).map_err(|e| Error::io(&self.path, e))?;
        }
        self.rows += shape.b;
        Ok(())
    }

    /// Flushes and returns the number of data rows written.
    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.rows)
    }
}
