use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Argmax routing recorded by [`maxpool2`]: for each pooled cell, the flat
/// offset of the selected input element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolCache {
    pub input_shape: Shape4,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the first maximum in row-major
/// window order.
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, PoolCache)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {s}")));
    }
    let os = Shape4::new(s.b, s.h / 2, s.w / 2, s.c)?;
    let mut out = Tensor4::zeros(os)?;
    let mut argmax = vec![0usize; os.len()];
    let xd = x.data();
    for b in 0..os.b {
        for i in 0..os.h {
            for j in 0..os.w {
                for c in 0..os.c {
                    let mut best = s.offset(b, 2 * i, 2 * j, c);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let o = s.offset(b, 2 * i + di, 2 * j + dj, c);
                        if xd[o] > xd[best] {
                            best = o;
                        }
                    }
                    let oo = os.offset(b, i, j, c);
                    out.data_mut()[oo] = xd[best];
                    argmax[oo] = best;
                }
            }
        }
    }
    Ok((out, PoolCache { input_shape: s, argmax }))
}

/// Routes each upstream value to its cached argmax position; zero elsewhere.
pub fn maxpool2_backward<T: Scalar>(cache: &PoolCache, dout: &Tensor4<T>) -> Result<Tensor4<T>> {
    if dout.shape().len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool2 backward: upstream gradient {} does not match cached output of {} cells",
            dout.shape(),
            cache.argmax.len()
        )));
    }
    let mut dx = Tensor4::zeros(cache.input_shape)?;
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dout.data()) {
        d[idx] += g;
    }
    Ok(dx)
}
