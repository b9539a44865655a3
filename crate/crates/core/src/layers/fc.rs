use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{add_into, ParamGrads};
use crate::tensor::{gemm, MatView, Scalar, Shape4, Tensor4};

/// Fully-connected layer. Weights are stored `(1, 1, in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<T: Scalar> {
    pub weights: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> FcLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        Ok(FcLayer {
            weights: Tensor4::zeros(Shape4::new(1, 1, inputs, outputs)?)?,
            bias: Tensor4::zeros(Shape4::new(1, 1, 1, outputs)?)?,
        })
    }

    pub fn he_normal<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Ok(FcLayer {
            weights: Tensor4::he_normal(Shape4::new(1, 1, inputs, outputs)?, inputs, rng)?,
            bias: Tensor4::zeros(Shape4::new(1, 1, 1, outputs)?)?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape().w
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape().c
    }

    fn check(&self, x: Shape4) -> Result<()> {
        if x.per_sample() != self.inputs() {
            return Err(Error::Shape(format!(
                "fc: flattened input size {} (from {x}) does not match weight input dim {}",
                x.per_sample(),
                self.inputs()
            )));
        }
        Ok(())
    }
}

/// `out[b,0,0,j] = Σ_i W[i,j]·flatten(x[b])[i] + bias[j]`.
pub fn fc_forward<T: Scalar>(x: &Tensor4<T>, fc: &FcLayer<T>) -> Result<Tensor4<T>> {
    fc.check(x.shape())?;
    let (b, n_in, n_out) = (x.shape().b, fc.inputs(), fc.outputs());
    let mut out = Tensor4::zeros(Shape4::new(b, 1, 1, n_out)?)?;
    for row in out.data_mut().chunks_mut(n_out) {
        row.copy_from_slice(fc.bias.data());
    }
    gemm(
        x.data(),
        MatView::dense(b, n_in),
        fc.weights.data(),
        MatView::dense(n_in, n_out),
        T::one(),
        out.data_mut(),
        MatView::dense(b, n_out),
    );
    Ok(out)
}

pub fn fc_backward<T: Scalar>(x: &Tensor4<T>, fc: &FcLayer<T>, dout: &Tensor4<T>, need_input: bool) -> Result<ParamGrads<T>> {
    fc.check(x.shape())?;
    let (b, n_in, n_out) = (x.shape().b, fc.inputs(), fc.outputs());
    if dout.shape() != Shape4::new(b, 1, 1, n_out)? {
        return Err(Error::Shape(format!(
            "fc backward: upstream gradient {} does not match output [{b}, 1, 1, {n_out}]",
            dout.shape()
        )));
    }
    let xv = MatView::dense(b, n_in);
    let dv = MatView::dense(b, n_out);
    let wv = MatView::dense(n_in, n_out);
    let mut dw = Tensor4::zeros(fc.weights.shape())?;
    gemm(x.data(), xv.t(), dout.data(), dv, T::zero(), dw.data_mut(), wv);
    let mut db = Tensor4::zeros(fc.bias.shape())?;
    for row in dout.data().chunks(n_out) {
        add_into(db.data_mut(), row);
    }
    let input = if need_input {
        let mut dx = Tensor4::zeros(x.shape())?;
        gemm(dout.data(), dv, fc.weights.data(), wv.t(), T::zero(), dx.data_mut(), xv);
        Some(dx)
    } else {
        None
    };
    Ok(ParamGrads {
        input,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        let x = Tensor4::<f32>::zeros(Shape4::new(3, 2, 2, 512).unwrap()).unwrap();
        let fc = FcLayer::zeros(2048, 5).unwrap();
        assert_eq!(fc_forward(&x, &fc).unwrap().shape(), Shape4::new(3, 1, 1, 5).unwrap());
    }

    #[test]
    fn identity_weights() {
        let n = 6;
        let mut fc = FcLayer::<f64>::zeros(n, n).unwrap();
        for i in 0..n {
            fc.weights.set(0, 0, i, i, 1.0);
        }
        let x = Tensor4::from_vec(Shape4::new(2, 1, 3, 2).unwrap(), (0..12).map(|v| v as f64 - 4.0).collect()).unwrap();
        let y = fc_forward(&x, &fc).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_constant_bias() {
        let mut fc = FcLayer::<f64>::zeros(4, 3).unwrap();
        fc.bias.fill(1.25);
        let x = Tensor4::full(Shape4::new(5, 2, 2, 1).unwrap(), 9.0).unwrap();
        assert!(fc_forward(&x, &fc).unwrap().data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn dim_mismatch() {
        let fc = FcLayer::<f64>::zeros(4, 3).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 1, 1, 5).unwrap()).unwrap();
        assert!(matches!(fc_forward(&x, &fc), Err(Error::Shape(_))));
    }
}
