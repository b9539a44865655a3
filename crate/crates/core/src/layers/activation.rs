use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.max(T::zero()))
}

/// Passes `dout` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, dout: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.check_same_shape(dout)?;
    let mut dx = dout.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(dx)
}

fn check_logits<T: Scalar>(x: &Tensor4<T>) -> Result<()> {
    let s = x.shape();
    if s.h != 1 || s.w != 1 || s.c < 2 {
        return Err(Error::Shape(format!("softmax expects [b, 1, 1, l>=2], got {s}")));
    }
    Ok(())
}

/// Per-sample softmax over channels with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_logits(logits)?;
    let l = logits.shape().c;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(l) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

/// `dz = q ⊙ (dq − ⟨dq, q⟩)` per sample, given softmax outputs `q`.
pub fn softmax_backward<T: Scalar>(probs: &Tensor4<T>, dout: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_logits(probs)?;
    probs.check_same_shape(dout)?;
    let l = probs.shape().c;
    let mut dz = dout.clone();
    for (g, q) in dz.data_mut().chunks_mut(l).zip(probs.data().chunks(l)) {
        let inner: T = g.iter().zip(q).map(|(&a, &b)| a * b).sum();
        for (gi, &qi) in g.iter_mut().zip(q) {
            *gi = qi * (*gi - inner);
        }
    }
    Ok(dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, v.len()).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&row(&[-1.0, 0.0, 2.5])).data(), &[0.0, 0.0, 2.5]);
        assert!(relu(&row(&[-1.0, -3.0, -0.1])).data().iter().all(|&v| v == 0.0));
        let pos = row(&[0.0, 1.0, 7.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_backward_passes_positive_region() {
        let x = row(&[0.5, 2.0, 3.0]);
        let g = row(&[1.0, -2.0, 0.25]);
        assert_eq!(relu_backward(&x, &g).unwrap(), g);
        let x = row(&[-0.5, 0.0, 3.0]);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 0.25]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&row(&[0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let q = softmax(&row(&[1.0f64.ln(), 3.0f64.ln()])).unwrap();
        assert!((q.data()[0] - 0.25).abs() < 1e-15);
        assert!((q.data()[1] - 0.75).abs() < 1e-15);
        let a = softmax(&row(&[0.3, -1.2, 2.0])).unwrap();
        let b = softmax(&row(&[100.3, 98.8, 102.0])).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let q = softmax(&row(&[1e4, -1e4, 0.0])).unwrap();
        assert!(q.is_finite());
        assert!((q.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_spatial_or_single_class() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 1, 3).unwrap()).unwrap();
        assert!(softmax(&x).is_err());
        assert!(softmax(&row(&[1.0])).is_err());
    }
}
