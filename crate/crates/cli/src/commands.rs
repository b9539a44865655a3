use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dcnet_core::data::{
    apply_normalize, fit_normalize, load_csv_with_vocab, split, synth_dataset, CsvSchema, Dataset, FeatureCsvWriter,
    NormStats, TargetKind,
};
use dcnet_core::model::{read_header, Model, ModelConfig, Task, INPUT_TAP};
use dcnet_core::optim::SgdConfig;
use dcnet_core::train::{
    evaluate, gradcheck, train_epoch, train_with_progress, write_metrics_csv, EpochMetrics, GradcheckScope,
    TrainConfig, TrainReport, EVAL_BATCH,
};
use dcnet_core::{Error, Precision, Scalar};

use crate::{Cli, Command, DataArgs, EvalArgs, ExportArgs, GradcheckArgs, SynthArgs, TrainArgs};

pub const EXIT_DATA: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_GRADCHECK: u8 = 4;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.dcn";
pub const NORM_FILE: &str = "norm_stats.csv";
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Param(_) => EXIT_USAGE,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        dcnet_core::set_threads(n).map_err(|e| usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => match a.precision {
            Precision::Single => cmd_train::<f32>(&a),
            Precision::Double => cmd_train::<f64>(&a),
        },
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::ExportFeatures(a) => cmd_export(&a),
    }
}

fn synth(data: &DataArgs, seed: u64) -> Result<Dataset, Failure> {
    let kind = data.synth.ok_or_else(|| usage("no dataset given: pass a CSV path or --synth"))?;
    synth_dataset(kind, data.n, data.attrs, data.noise.unwrap_or(kind.default_noise()), seed).map_err(|e| usage(e.to_string()))
}

fn read_vocab(path: &Path) -> Result<Vec<String>, Failure> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn train_task(a: &TrainArgs) -> Result<Task, Failure> {
    let from_flags = match (a.classes, a.regression) {
        (Some(classes), _) => Some(Task::Classification { classes }),
        (None, true) => Some(Task::Regression),
        (None, false) => None,
    };
    if a.train_csv.is_some() {
        return from_flags.ok_or_else(|| usage("CSV training needs --classes N or --regression"));
    }
    let kind = a.data.synth.ok_or_else(|| usage("no dataset given: pass --train-csv or --synth"))?;
    let natural = if kind.is_regression() {
        Task::Regression
    } else {
        Task::Classification { classes: 2 }
    };
    match from_flags {
        Some(t) if t != natural => Err(usage(format!("synthetic set {kind} implies task {natural:?}, flags ask for {t:?}"))),
        _ => Ok(natural),
    }
}

fn cmd_train<T: Scalar>(a: &TrainArgs) -> CmdResult {
    let task = train_task(a)?;
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(usage(format!("--train-fraction must be in (0, 1), got {}", a.train_fraction)));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        sgd: SgdConfig {
            initial_lr: a.lr,
            momentum: a.momentum,
            decay_factor: a.decay,
            decay_every: a.decay_every,
            total_epochs: a.epochs,
        },
        seed: a.seed,
        eval_every: a.eval_every,
    };
    cfg.validate()?;
    ModelConfig::new(1, a.deconv, task, a.seed).validate()?;

    let mut vocab = Vec::new();
    let (train_raw, test_raw) = match &a.train_csv {
        Some(path) => {
            let schema = CsvSchema {
                label_column: a.data.label_col,
                has_header: a.data.header,
                target: if task.is_classification() {
                    TargetKind::Classification
                } else {
                    TargetKind::Regression
                },
            };
            let train = load_csv_with_vocab(path, schema, &mut vocab)?;
            match &a.test_csv {
                Some(test_path) => {
                    let test = load_csv_with_vocab(test_path, schema, &mut vocab)?;
                    (train, test)
                }
                None => split(&train, a.train_fraction, a.seed)?,
            }
        }
        None => split(&synth(&a.data, a.seed)?, a.train_fraction, a.seed)?,
    };
    if let Task::Classification { classes } = task {
        if vocab.len() > classes {
            return Err(Failure {
                code: EXIT_DATA,
                message: format!("found {} distinct labels but --classes is {classes}", vocab.len()),
            });
        }
    }
    if test_raw.attributes() != train_raw.attributes() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "training data has {} attributes, test data {}",
                train_raw.attributes(),
                test_raw.attributes()
            ),
        });
    }
    let stats = fit_normalize(&train_raw)?;
    let train_ds = apply_normalize(&train_raw, &stats)?;
    let test_ds = apply_normalize(&test_raw, &stats)?;

    let model_cfg = ModelConfig {
        precision: T::PRECISION,
        ..ModelConfig::new(train_ds.attributes(), a.deconv, task, a.seed)
    };
    let mut model = Model::<T>::build(&model_cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", a.out.display()),
    })?;
    stats.save_csv(a.out.join(NORM_FILE))?;
    if !vocab.is_empty() {
        write_file(&a.out.join(CLASSES_FILE), &(vocab.join("\n") + "\n"))?;
    }
    if !a.quiet {
        eprintln!(
            "training D={} on {} samples ({} attributes), testing on {}, {} parameters",
            a.deconv,
            train_ds.len(),
            train_ds.attributes(),
            test_ds.len(),
            model.param_count()
        );
    }
    let report = if a.checkpoint_every_epoch {
        train_epochwise(&mut model, &train_ds, &test_ds, &cfg, a)?
    } else {
        train_with_progress(&mut model, &train_ds, Some(&test_ds), &cfg, |e| progress(a, e))?
    };
    write_metrics_csv(a.out.join(METRICS_FILE), &report.epochs, !a.no_timing)?;
    model.save(a.out.join(MODEL_FILE))?;
    if let Some(t) = report.final_test() {
        println!("test_{} {}", t.metric.name(), t.value);
    }
    Ok(ExitCode::SUCCESS)
}

fn progress(a: &TrainArgs, e: &EpochMetrics) {
    if a.quiet {
        return;
    }
    let test = e.test.map_or(String::new(), |t| format!("  test_{} {:.4}", t.metric.name(), t.value));
    eprintln!("epoch {}  lr {}  train_loss {:.6}{test}  ({:.1}s)", e.epoch, e.lr, e.train_loss, e.seconds);
}

/// Same schedule as an uninterrupted run, with a checkpoint after each epoch.
fn train_epochwise<T: Scalar>(
    model: &mut Model<T>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    a: &TrainArgs,
) -> Result<TrainReport, Failure> {
    let mut epochs = Vec::new();
    let mut first_batch_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        let r = train_epoch(model, train_ds, Some(test_ds), cfg, epoch)?;
        progress(a, &r.metrics);
        if epoch == 1 {
            first_batch_loss = r.first_batch_loss;
        }
        model.save(a.out.join(format!("model-epoch{epoch}.dcn")))?;
        epochs.push(r.metrics);
    }
    Ok(TrainReport {
        epochs,
        first_batch_loss,
    })
}

/// Dataset for `eval` / `export-features`, normalized with the training statistics.
fn load_for_model(
    model_path: &Path,
    csv: Option<&PathBuf>,
    data: &DataArgs,
    seed: u64,
    norm: Option<&PathBuf>,
    task: Task,
) -> Result<Dataset, Failure> {
    let dir = model_path.parent().unwrap_or(Path::new("."));
    let raw = match csv {
        Some(path) => {
            let schema = CsvSchema {
                label_column: data.label_col,
                has_header: data.header,
                target: if task.is_classification() {
                    TargetKind::Classification
                } else {
                    TargetKind::Regression
                },
            };
            let mut vocab = read_vocab(&dir.join(CLASSES_FILE))?;
            load_csv_with_vocab(path, schema, &mut vocab)?
        }
        None => synth(data, seed)?,
    };
    let norm_path = norm.cloned().unwrap_or_else(|| dir.join(NORM_FILE));
    let stats = NormStats::load_csv(&norm_path)?;
    Ok(apply_normalize(&raw, &stats)?)
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let header = read_header(&a.model)?;
    let ds = load_for_model(&a.model, a.csv.as_ref(), &a.data, a.seed, a.norm_stats.as_ref(), header.config.task)?;
    let result = match header.config.precision {
        Precision::Single => evaluate(&Model::<f32>::load(&a.model)?, &ds)?,
        Precision::Double => evaluate(&Model::<f64>::load(&a.model)?, &ds)?,
    };
    println!("{} {} (n={})", result.metric.name(), result.value, ds.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(usage(format!("--tolerance must be positive, got {}", a.tolerance)));
    }
    let scopes = if a.scope.is_empty() {
        GradcheckScope::ALL.to_vec()
    } else {
        a.scope.clone()
    };
    let report = gradcheck(&scopes, a.tolerance, a.seed)?;
    println!("{:<14} {:<16} {:>7} {:>12} {:>12}  result", "scope", "tensor", "coords", "max_rel_err", "max_abs_err");
    for e in &report.entries {
        let verdict = if e.max_rel_err < report.tolerance { "PASS" } else { "FAIL" };
        println!(
            "{:<14} {:<16} {:>7} {:>12.3e} {:>12.3e}  {verdict}",
            e.scope.name(),
            e.tensor,
            e.coordinates,
            e.max_rel_err,
            e.max_abs_err
        );
    }
    let failed = report.entries.iter().filter(|e| e.max_rel_err >= report.tolerance).count();
    println!(
        "{} of {} tensors within tolerance {:e} (worst {:.3e})",
        report.entries.len() - failed,
        report.entries.len(),
        report.tolerance,
        report.max_rel_err()
    );
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_GRADCHECK))
    }
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let ds = synth_dataset(a.kind, a.n, a.attrs, a.noise.unwrap_or(a.kind.default_noise()), a.seed).map_err(|e| usage(e.to_string()))?;
    ds.save_csv(&a.out)?;
    println!("wrote {} samples of {} to {}", ds.len(), a.kind, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(a: &ExportArgs) -> CmdResult {
    let header = read_header(&a.model)?;
    match header.config.precision {
        Precision::Single => export::<f32>(a, header.config.task),
        Precision::Double => export::<f64>(a, header.config.task),
    }
}

fn export<T: Scalar>(a: &ExportArgs, task: Task) -> CmdResult {
    let model = Model::<T>::load(&a.model)?;
    let layer = a.layer.clone().unwrap_or_else(|| model.image_layer_id().to_string());
    if layer != INPUT_TAP && !model.layer_ids().contains(&layer.as_str()) {
        return Err(usage(format!(
            "unknown layer '{layer}'; choose {INPUT_TAP} or one of {}",
            model.layer_ids().join(", ")
        )));
    }
    let ds = load_for_model(&a.model, a.csv.as_ref(), &a.data, a.seed, a.norm_stats.as_ref(), task)?;
    let n = a.limit.map_or(ds.len(), |l| l.min(ds.len()));
    let ids: Vec<usize> = (0..n).collect();
    let probe = model.extract_features(&ds.batch_input::<T>(&ids[..n.min(1)])?, &layer)?;
    let mut writer = FeatureCsvWriter::create(&a.out, probe.shape().per_sample())?;
    for chunk in ids.chunks(EVAL_BATCH) {
        let feats = model.extract_features(&ds.batch_input::<T>(chunk)?, &layer)?;
        let labels: Vec<String> = chunk.iter().map(|&i| ds.label_text(i)).collect();
        writer.write_batch(chunk, &labels, &feats)?;
    }
    let rows = writer.finish()?;
    println!("wrote {rows} rows of layer {layer} ({} values each) to {}", probe.shape().per_sample(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
