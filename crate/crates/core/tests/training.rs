use dcnet_core::data::{split, synth_dataset, Dataset, SynthKind, Targets};
use dcnet_core::model::{Model, ModelConfig, Task};
use dcnet_core::optim::{scheduled_lr, step, SgdConfig};
use dcnet_core::train::{evaluate, predict, train, write_metrics_csv, MetricKind, TrainConfig, TrainReport};
use dcnet_core::{Error, Precision, Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn short_config(epochs: usize, batch_size: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        sgd: SgdConfig {
            initial_lr: lr,
            total_epochs: epochs,
            ..SgdConfig::default()
        },
        seed: 4,
        eval_every: 1,
    }
}

fn xor_split(n: usize) -> (Dataset, Dataset) {
    split(&synth_dataset(SynthKind::XorBlobs, n, 6, 0.1, 2).unwrap(), 0.75, 3).unwrap()
}

fn classifier(seed: u64) -> Model<f64> {
    let cfg = ModelConfig {
        precision: Precision::Double,
        ..ModelConfig::new(6, 6, Task::Classification { classes: 2 }, seed)
    };
    Model::build(&cfg).unwrap()
}

fn without_timing(mut r: TrainReport) -> TrainReport {
    r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
    r
}

#[test]
fn equal_seeds_give_bit_identical_runs() {
    let (tr, te) = xor_split(160);
    let cfg = short_config(2, 16, 0.01);
    let run = || {
        let mut m = classifier(9);
        let report = train(&mut m, &tr, Some(&te), &cfg).unwrap();
        (without_timing(report), m.params().into_iter().cloned().collect::<Vec<_>>())
    };
    let (r1, p1) = run();
    let (r2, p2) = run();
    assert_eq!(r1, r2);
    assert_eq!(p1, p2);
    let mut other = classifier(9);
    let shuffled = train(&mut other, &tr, Some(&te), &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(without_timing(shuffled), r1);
}

#[test]
fn metrics_follow_the_schedule() {
    let (tr, te) = xor_split(40);
    let mut cfg = short_config(9, 32, 0.01);
    cfg.eval_every = 4;
    let mut m = classifier(1);
    let report = train(&mut m, &tr, Some(&te), &cfg).unwrap();
    let lrs: Vec<f64> = report.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, [0.01, 0.01, 0.01, 0.009, 0.009, 0.009, 0.0081, 0.0081, 0.0081]);
    let evaluated: Vec<usize> = report.epochs.iter().filter(|e| e.test.is_some()).map(|e| e.epoch).collect();
    assert_eq!(evaluated, [4, 8, 9]);
    assert!(report.epochs.iter().all(|e| e.train_loss.is_finite()));
    assert_eq!(report.final_test().unwrap().metric, MetricKind::Top1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &report.epochs, false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,metric_name,metric_value,seconds");
    assert_eq!(lines.len(), 10);
    assert!(lines[4].starts_with("4,0.009,") && lines[4].contains(",test_top1,") && lines[4].ends_with(",0"));
    assert!(lines[1].starts_with("1,0.01,") && lines[1].ends_with(",,,0"));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let (tr, te) = xor_split(80);
    let mut m = classifier(3);
    train(&mut m, &tr, None, &short_config(1, 20, 0.01)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dcn");
    m.save(&path).unwrap();
    let loaded = Model::<f64>::load(&path).unwrap();
    assert_eq!(predict(&m, &te).unwrap(), predict(&loaded, &te).unwrap());
    assert_eq!(evaluate(&m, &te).unwrap(), evaluate(&loaded, &te).unwrap());
    assert!(Model::<f32>::load(&path).is_err());
}

#[test]
fn model_reproduces_its_own_regression_outputs() {
    let cfg = ModelConfig {
        precision: Precision::Double,
        ..ModelConfig::new(4, 6, Task::Regression, 8)
    };
    let model = Model::<f64>::build(&cfg).unwrap();
    let ds = synth_dataset(SynthKind::SineRegression, 50, 4, 0.0, 1).unwrap();
    let own = Dataset::new(ds.features().to_vec(), 4, Targets::Values(predict(&model, &ds).unwrap())).unwrap();
    let eval = evaluate(&model, &own).unwrap();
    assert_eq!((eval.metric, eval.value), (MetricKind::Rmse, 0.0));
}

#[test]
fn exploding_regression_reports_divergence() {
    let cfg = ModelConfig {
        precision: Precision::Double,
        ..ModelConfig::new(4, 6, Task::Regression, 8)
    };
    let mut model = Model::<f64>::build(&cfg).unwrap();
    let ds = synth_dataset(SynthKind::SineRegression, 64, 4, 0.0, 1).unwrap();
    let err = train(&mut model, &ds, None, &short_config(3, 8, 1e6)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn label_independent_predictions_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 2000;
    let features: Vec<f64> = (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(0.5))).collect();
    let ds = Dataset::new(features, 6, Targets::Classes { labels, classes: 2 }).unwrap();
    let acc = evaluate(&classifier(12), &ds).unwrap().value;
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn mismatched_data_is_a_config_error() {
    let ds = synth_dataset(SynthKind::XorBlobs, 20, 5, 0.1, 0).unwrap();
    let mut m = classifier(0);
    assert!(matches!(train(&mut m, &ds, None, &short_config(1, 4, 0.01)), Err(Error::Config(_))));
    let regression = synth_dataset(SynthKind::SineRegression, 20, 6, 0.1, 0).unwrap();
    assert!(matches!(evaluate(&m, &regression), Err(Error::Config(_))));
}

#[test]
fn lr_trace_over_nine_epochs() {
    let cfg = SgdConfig::default();
    let trace: Vec<f64> = (1..=9).map(|e| scheduled_lr(&cfg, e).unwrap()).collect();
    assert_eq!(trace, [0.01, 0.01, 0.01, 0.009, 0.009, 0.009, 0.0081, 0.0081, 0.0081]);
}

/// Heavy ball on `f(w) = a·w²/2` is the linear recurrence
/// `w[t+1] = (1 + μ - η·a)·w[t] - μ·w[t-1]` with `w[-1] = w[0]`; this solves it
/// through the roots of its characteristic polynomial.
fn closed_form(w0: f64, a: f64, lr: f64, mu: f64, t: usize) -> f64 {
    let p = 1.0 + mu - lr * a;
    let disc = p * p - 4.0 * mu;
    let w1 = w0 - lr * a * w0;
    let t = t as i32;
    if disc > 0.0 {
        let (l1, l2) = ((p + disc.sqrt()) / 2.0, (p - disc.sqrt()) / 2.0);
        let c2 = (w1 - l1 * w0) / (l2 - l1);
        let c1 = w0 - c2;
        c1 * l1.powi(t) + c2 * l2.powi(t)
    } else {
        let r = mu.sqrt();
        let theta = (p / (2.0 * r)).acos();
        // w[t] = r^t (A cos tθ + B sin tθ)
        let a_coef = w0;
        let b_coef = (w1 / r - a_coef * theta.cos()) / theta.sin();
        let tf = f64::from(t);
        r.powi(t) * (a_coef * (tf * theta).cos() + b_coef * (tf * theta).sin())
    }
}

proptest! {
    #[test]
    fn momentum_iterates_match_the_closed_form(
        a in 0.1f64..10.0,
        lr in 1e-3f64..0.1,
        mu in 0.05f64..0.95,
        w0 in -2.0f64..2.0,
    ) {
        let p = 1.0 + mu - lr * a;
        let disc = p * p - 4.0 * mu;
        // Near a double root the two-root formula is ill-conditioned.
        prop_assume!(disc.abs() > 1e-3);
        let one = Shape4::new(1, 1, 1, 1).unwrap();
        let mut w = Tensor4::from_vec(one, vec![w0]).unwrap();
        let mut v = vec![Tensor4::zeros(one).unwrap()];
        for t in 1..=200 {
            let g = w.map(|x| a * x);
            step(&mut [&mut w], &mut v, &[g], lr, mu).unwrap();
            let want = closed_form(w0, a, lr, mu, t);
            prop_assert!((w.data()[0] - want).abs() <= 1e-12, "step {}: {} vs {}", t, w.data()[0], want);
        }
    }
}
