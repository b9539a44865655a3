//! Training losses and evaluation metrics.
//!
//! Loss values are accumulated in `f64` regardless of the model precision;
//! the gradient is returned in the model's scalar type.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// A scalar loss and its gradient with respect to the network's head input
/// (logits for classification, raw predictions for regression).
#[derive(Debug, Clone)]
pub struct LossValue<T: Scalar> {
    pub value: f64,
    pub grad: Tensor4<T>,
}

/// One-hot `(b, 1, 1, classes)` encoding of class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor4<T>> {
    let mut t = Tensor4::zeros(Shape4::new(labels.len(), 1, 1, classes)?)?;
    for (n, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Input(format!("label {l} out of range for {classes} classes")));
        }
        t.set(n, 0, 0, l, T::one());
    }
    Ok(t)
}

fn check_head(shape: Shape4, what: &str) -> Result<()> {
    if shape.h != 1 || shape.w != 1 {
        return Err(Error::Shape(format!("{what}: expected [b, 1, 1, m], got {shape}")));
    }
    Ok(())
}

/// Per-unit binary cross-entropy averaged over the `N × M` outputs of a
/// softmax head:
///
/// `L = -1/(N·M) · Σ_{n,m} [p log p̂ + (1 - p) log(1 - p̂)]`
///
/// `probs` are softmax outputs and `targets` one-hot rows. The returned
/// gradient is taken through the softmax, i.e. with respect to the logits.
pub fn cross_entropy<T: Scalar>(probs: &Tensor4<T>, targets: &Tensor4<T>) -> Result<LossValue<T>> {
    probs.check_same_shape(targets)?;
    let shape = probs.shape();
    check_head(shape, "cross_entropy")?;
    let m = shape.c;
    let norm = (shape.b * m) as f64;
    let mut value = 0.0f64;
    let mut grad = Tensor4::zeros(shape)?;
    let mut g = vec![0.0f64; m];
    let mut q = vec![0.0f64; m];
    for (n, (pr, tr)) in probs.data().chunks(m).zip(targets.data().chunks(m)).enumerate() {
        let ones = tr.iter().filter(|&&v| v == T::one()).count();
        if ones != 1 || tr.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Input(format!("target row {n} is not one-hot")));
        }
        for (qi, &v) in q.iter_mut().zip(pr) {
            *qi = v.as_f64();
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-6 || q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!("probability row {n} is not a distribution (sums to {total})")));
        }
        for j in 0..m {
            let p = tr[j].as_f64();
            // 1 - q_j as the sum of the other entries keeps precision when q_j is near 1.
            let rest: f64 = q.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).sum();
            let in_range = |v: f64| v > LOG_CLAMP && v < 1.0 - LOG_CLAMP;
            let qc = q[j].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            let rc = rest.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            value -= (p * qc.ln() + (1.0 - p) * rc.ln()) / norm;
            let mut dq = 0.0;
            if p != 0.0 && in_range(q[j]) {
                dq -= p / qc;
            }
            if p != 1.0 && in_range(rest) {
                dq += (1.0 - p) / rc;
            }
            g[j] = dq / norm;
        }
        let inner: f64 = g.iter().zip(&q).map(|(a, b)| a * b).sum();
        for j in 0..m {
            grad.set(n, 0, 0, j, T::from_f64_lossy(q[j] * (g[j] - inner)));
        }
    }
    Ok(LossValue { value, grad })
}

/// Mean squared error `L = 1/N · Σ (y - ŷ)²` on a `(b, 1, 1, 1)` prediction.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, targets: &[f64]) -> Result<LossValue<T>> {
    let shape = pred.shape();
    check_head(shape, "mse_loss")?;
    if shape.c != 1 || shape.b != targets.len() {
        return Err(Error::Shape(format!(
            "mse_loss: prediction {shape} does not match {} targets",
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut value = 0.0;
    let mut grad = Tensor4::zeros(shape)?;
    for (i, (&yh, &y)) in pred.data().iter().zip(targets).enumerate() {
        let r = y - yh.as_f64();
        value += r * r / n;
        grad.data_mut()[i] = T::from_f64_lossy(-2.0 * r / n);
    }
    Ok(LossValue { value, grad })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose highest-scoring class equals the label.
pub fn top1_accuracy<T: Scalar>(probs: &Tensor4<T>, labels: &[usize]) -> Result<f64> {
    let shape = probs.shape();
    check_head(shape, "top1_accuracy")?;
    if shape.b != labels.len() {
        return Err(Error::Shape(format!(
            "top1_accuracy: {} rows but {} labels",
            shape.b,
            labels.len()
        )));
    }
    let mut correct = 0usize;
    for (row, &label) in probs.data().chunks(shape.c).zip(labels) {
        if label >= shape.c {
            return Err(Error::Input(format!("label {label} out of range for {} classes", shape.c)));
        }
        if argmax(row) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub fn rmse(pred: &[f64], targets: &[f64]) -> Result<f64> {
    if pred.len() != targets.len() {
        return Err(Error::Shape(format!(
            "rmse: {} predictions vs {} targets",
            pred.len(),
            targets.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("rmse of an empty set".into()));
    }
    let mse = pred.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(b: usize, m: usize, v: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(b, 1, 1, m).unwrap(), v).unwrap()
    }

    /// The loss as a plain scalar sum, written out term by term.
    fn ce_oracle(q: &[Vec<f64>], p: &[Vec<f64>]) -> f64 {
        let (n, m) = (q.len(), q[0].len());
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                let qc = q[i][j].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
                s += p[i][j] * qc.ln() + (1.0 - p[i][j]) * (1.0 - qc).ln();
            }
        }
        -s / (n * m) as f64
    }

    #[test]
    fn half_half_is_ln2() {
        let q = rows(1, 2, vec![0.5, 0.5]);
        let p = rows(1, 2, vec![1.0, 0.0]);
        let l = cross_entropy(&q, &p).unwrap();
        let oracle = ce_oracle(&[vec![0.5, 0.5]], &[vec![1.0, 0.0]]);
        assert!((oracle - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l.value - oracle).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_near_zero() {
        let q = rows(1, 3, vec![1.0, 0.0, 0.0]);
        let l = cross_entropy(&q, &q).unwrap();
        assert!(l.value >= 0.0 && l.value < 1e-11);
    }

    #[test]
    fn matches_scalar_oracle_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (b, m) = (rng.gen_range(1..=8), rng.gen_range(2..=10));
            let z = rows(b, m, (0..b * m).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let q = softmax(&z).unwrap();
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..m)).collect();
            let p = one_hot::<f64>(&labels, m).unwrap();
            let qv: Vec<Vec<f64>> = q.data().chunks(m).map(|r| r.to_vec()).collect();
            let pv: Vec<Vec<f64>> = p.data().chunks(m).map(|r| r.to_vec()).collect();
            let l = cross_entropy(&q, &p).unwrap();
            assert!((l.value - ce_oracle(&qv, &pv)).abs() < 1e-12);
            assert!(l.value >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_targets_and_probs() {
        let q = rows(1, 2, vec![0.5, 0.5]);
        assert!(matches!(cross_entropy(&q, &rows(1, 2, vec![1.0, 1.0])), Err(Error::Input(_))));
        assert!(matches!(cross_entropy(&q, &rows(1, 2, vec![0.5, 0.5])), Err(Error::Input(_))));
        assert!(matches!(cross_entropy(&rows(1, 2, vec![0.9, 0.5]), &rows(1, 2, vec![1.0, 0.0])), Err(Error::Input(_))));
    }

    #[test]
    fn mse_examples() {
        let pred = rows(2, 1, vec![0.5, -1.0]);
        let l = mse_loss(&pred, &[0.5, -1.0]).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));

        let l = mse_loss(&rows(1, 1, vec![0.0]), &[1.0]).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.grad.data(), &[-2.0]);

        let y = [0.3, -0.7, 1.1];
        let yh = [0.1, 0.2, 0.4];
        let base = mse_loss(&rows(3, 1, yh.to_vec()), &y).unwrap().value;
        let c = 3.0;
        let scaled_pred: Vec<f64> = y.iter().zip(&yh).map(|(a, b)| a - c * (a - b)).collect();
        let scaled = mse_loss(&rows(3, 1, scaled_pred), &y).unwrap().value;
        assert!((scaled - c * c * base).abs() < 1e-12);

        assert!(matches!(mse_loss(&rows(2, 1, vec![0.0, 0.0]), &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn top1_examples() {
        let probs = rows(4, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]);
        assert_eq!(top1_accuracy(&probs, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&probs, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&probs, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(top1_accuracy(&probs, &[0, 1, 2, 0]), Err(Error::Input(_))));
        // ties go to the lowest index
        assert_eq!(top1_accuracy(&rows(1, 3, vec![0.4, 0.4, 0.2]), &[0]).unwrap(), 1.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        let (p, y) = ([0.2, -0.5, 1.5], [0.0, 0.1, 1.0]);
        let r = rmse(&p, &y).unwrap();
        let m = mse_loss(&rows(3, 1, p.to_vec()), &y).unwrap().value;
        assert!((r * r - m).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }
}
