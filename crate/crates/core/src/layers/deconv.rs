use crate::error::{Error, Result};
use crate::layers::{add_into, check_channels, conv2d_naive, par_map_chunks, reduce_chunks, ConvKernel, Padding, ParamGrads};
use crate::tensor::{gemm, MatView, Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy)]
struct DeconvGeom {
    h: usize,
    w: usize,
    c_in: usize,
    k: usize,
    s: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
}

impl DeconvGeom {
    fn new<T: Scalar>(x: Shape4, kern: &ConvKernel<T>) -> Result<Self> {
        kern.validate()?;
        check_channels(x, kern.c_in(), "deconv2d")?;
        let (k, s) = (kern.k(), kern.stride);
        Ok(DeconvGeom {
            h: x.h,
            w: x.w,
            c_in: x.c,
            k,
            s,
            c_out: kern.c_out(),
            oh: (x.h - 1) * s + k,
            ow: (x.w - 1) * s + k,
        })
    }

    fn out_shape(&self, b: usize) -> Result<Shape4> {
        Shape4::new(b, self.oh, self.ow, self.c_out)
    }

    /// Width of a scatter row: one `c_out` slab per kernel tap.
    fn row_len(&self) -> usize {
        self.k * self.k * self.c_out
    }

    fn in_positions(&self) -> usize {
        self.h * self.w
    }

    fn out_per_sample(&self) -> usize {
        self.oh * self.ow * self.c_out
    }

    /// Calls `f(row_offset, out_offset)` for every (input cell, kernel tap)
    /// pair of `nb` samples, pairing a `c_out` slab of the scatter matrix with
    /// the output slab it lands on.
    #[inline]
    fn for_each_tap(&self, nb: usize, mut f: impl FnMut(usize, usize)) {
        let rl = self.row_len();
        for n in 0..nb {
            for i in 0..self.h {
                for j in 0..self.w {
                    let row = ((n * self.h + i) * self.w + j) * rl;
                    for p in 0..self.k {
                        let oh = i * self.s + p;
                        for q in 0..self.k {
                            let ow = j * self.s + q;
                            let dst = n * self.out_per_sample() + (oh * self.ow + ow) * self.c_out;
                            f(row + (p * self.k + q) * self.c_out, dst);
                        }
                    }
                }
            }
        }
    }
}

/// Kernel rearranged to `c_in × (kh, kw, c_out)` so one GEMM maps input
/// cells onto scatter rows.
fn scatter_weights<T: Scalar>(kern: &ConvKernel<T>) -> Vec<T> {
    let (k, ci, co) = (kern.k(), kern.c_in(), kern.c_out());
    let mut wt = vec![T::zero(); ci * k * k * co];
    let src = kern.weights.data();
    for pq in 0..k * k {
        for c in 0..ci {
            let s = (pq * ci + c) * co;
            let d = (c * k * k + pq) * co;
            wt[d..d + co].copy_from_slice(&src[s..s + co]);
        }
    }
    wt
}

fn gather_weights<T: Scalar>(wt: &[T], k: usize, ci: usize, co: usize) -> Vec<T> {
    let mut w = vec![T::zero(); wt.len()];
    for pq in 0..k * k {
        for c in 0..ci {
            let d = (pq * ci + c) * co;
            let s = (c * k * k + pq) * co;
            w[d..d + co].copy_from_slice(&wt[s..s + co]);
        }
    }
    w
}

/// Direct scatter form of the transposed convolution:
/// `out[b, i·s+p, j·s+q, o] += x[b,i,j,ci] · W[p,q,ci,o]`, plus bias.
pub fn deconv2d_naive<T: Scalar>(x: &Tensor4<T>, kern: &ConvKernel<T>) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let g = DeconvGeom::new(xs, kern)?;
    let mut out = Tensor4::zeros(g.out_shape(xs.b)?)?;
    for b in 0..xs.b {
        for i in 0..g.h {
            for j in 0..g.w {
                for ci in 0..g.c_in {
                    let v = x.get(b, i, j, ci);
                    for p in 0..g.k {
                        for q in 0..g.k {
                            for o in 0..g.c_out {
                                let (oh, ow) = (i * g.s + p, j * g.s + q);
                                let cur = out.get(b, oh, ow, o);
                                out.set(b, oh, ow, o, cur + v * kern.w(p, q, ci, o));
                            }
                        }
                    }
                }
            }
        }
    }
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += kern.bias.data()[i % g.c_out];
    }
    Ok(out)
}

/// Transposed convolution realized literally as zero insertion followed by an
/// ordinary convolution: `s - 1` zeros between neighbouring input cells, a
/// `k - 1` zero border, then a unit-stride convolution with the spatially
/// flipped kernel.
pub fn deconv_as_conv_oracle<T: Scalar>(x: &Tensor4<T>, kern: &ConvKernel<T>) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let g = DeconvGeom::new(xs, kern)?;
    let dilated = Shape4::new(xs.b, (xs.h - 1) * g.s + 1, (xs.w - 1) * g.s + 1, xs.c)?;
    let mut z = Tensor4::zeros(dilated)?;
    for b in 0..xs.b {
        for i in 0..xs.h {
            for j in 0..xs.w {
                for c in 0..xs.c {
                    z.set(b, i * g.s, j * g.s, c, x.get(b, i, j, c));
                }
            }
        }
    }
    let mut flipped = ConvKernel::zeros(g.k, g.c_in, g.c_out, 1)?;
    for p in 0..g.k {
        for q in 0..g.k {
            for ci in 0..g.c_in {
                for co in 0..g.c_out {
                    flipped
                        .weights
                        .set(p, q, ci, co, kern.w(g.k - 1 - p, g.k - 1 - q, ci, co));
                }
            }
        }
    }
    flipped.bias = kern.bias.clone();
    conv2d_naive(&z, &flipped, Padding::uniform(g.k - 1))
}

/// Transposed convolution with stride `s` and no output cropping:
/// spatial size `(in - 1)·s + k`.
pub fn deconv2d_forward<T: Scalar>(x: &Tensor4<T>, kern: &ConvKernel<T>) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let g = DeconvGeom::new(xs, kern)?;
    let mut out = Tensor4::zeros(g.out_shape(xs.b)?)?;
    let wt = scatter_weights(kern);
    let (rl, np) = (g.row_len(), g.in_positions());
    let bias = kern.bias.data();
    par_map_chunks(x.data(), xs.per_sample(), out.data_mut(), g.out_per_sample(), |nb, xc, oc| {
        let mut rows = vec![T::zero(); nb * np * rl];
        gemm(
            xc,
            MatView::dense(nb * np, g.c_in),
            &wt,
            MatView::dense(g.c_in, rl),
            T::zero(),
            &mut rows,
            MatView::dense(nb * np, rl),
        );
        g.for_each_tap(nb, |src, dst| add_into(&mut oc[dst..dst + g.c_out], &rows[src..src + g.c_out]));
        for cell in oc.chunks_mut(g.c_out) {
            add_into(cell, bias);
        }
    });
    Ok(out)
}

/// Backward pass of [`deconv2d_forward`]. The input gradient is an ordinary
/// convolution of `dout`; it is skipped when `need_input` is false.
pub fn deconv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    dout: &Tensor4<T>,
    need_input: bool,
) -> Result<ParamGrads<T>> {
    let xs = x.shape();
    let g = DeconvGeom::new(xs, kern)?;
    let expected = g.out_shape(xs.b)?;
    if dout.shape() != expected {
        return Err(Error::Shape(format!(
            "deconv2d backward: upstream gradient {} does not match output {expected}",
            dout.shape()
        )));
    }
    let wt = scatter_weights(kern);
    let (rl, np, ops) = (g.row_len(), g.in_positions(), g.out_per_sample());
    let mut dx = if need_input { Some(Tensor4::zeros(xs)?) } else { None };
    let (dwt, db) = {
        let dx_buf: &mut [T] = match dx.as_mut() {
            Some(t) => t.data_mut(),
            None => &mut [],
        };
        reduce_chunks(
            xs.b,
            dx_buf,
            xs.per_sample(),
            || (vec![T::zero(); wt.len()], vec![T::zero(); g.c_out]),
            |start, end, dxc, (mut dw, mut db)| {
                let nb = end - start;
                let xc = &x.data()[start * xs.per_sample()..end * xs.per_sample()];
                let dc = &dout.data()[start * ops..end * ops];
                let mut rows = vec![T::zero(); nb * np * rl];
                g.for_each_tap(nb, |r, o| rows[r..r + g.c_out].copy_from_slice(&dc[o..o + g.c_out]));
                let rv = MatView::dense(nb * np, rl);
                let xv = MatView::dense(nb * np, g.c_in);
                gemm(xc, xv.t(), &rows, rv, T::zero(), &mut dw, MatView::dense(g.c_in, rl));
                for cell in dc.chunks(g.c_out) {
                    add_into(&mut db, cell);
                }
                if !dxc.is_empty() {
                    gemm(&rows, rv, &wt, MatView::dense(g.c_in, rl).t(), T::zero(), dxc, xv);
                }
                (dw, db)
            },
            |acc, p| {
                add_into(&mut acc.0, &p.0);
                add_into(&mut acc.1, &p.1);
            },
        )
    };
    Ok(ParamGrads {
        input: dx,
        weights: Tensor4::from_vec(kern.weights.shape(), gather_weights(&dwt, g.k, g.c_in, g.c_out))?,
        bias: Tensor4::from_vec(kern.bias.shape(), db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape4) -> Tensor4<f64> {
        Tensor4::from_vec(s, (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor4::<f32>::zeros(Shape4::new(2, 1, 1, 5).unwrap()).unwrap();
        let kern = ConvKernel::he_normal(2, 5, 512, 1, &mut rng).unwrap();
        assert_eq!(deconv2d_forward(&x, &kern).unwrap().shape(), Shape4::new(2, 2, 2, 512).unwrap());
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 4, 4, 256).unwrap()).unwrap();
        let kern = ConvKernel::he_normal(5, 256, 128, 1, &mut rng).unwrap();
        assert_eq!(deconv2d_forward(&x, &kern).unwrap().shape(), Shape4::new(1, 8, 8, 128).unwrap());
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 2, 1).unwrap()).unwrap();
        let kern = ConvKernel::he_normal(3, 1, 1, 2, &mut rng).unwrap();
        assert_eq!(deconv2d_forward(&x, &kern).unwrap().shape(), Shape4::new(1, 7, 5, 1).unwrap());
    }

    #[test]
    fn single_scalar_scatters_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kern = ConvKernel::<f64>::he_normal(3, 1, 4, 1, &mut rng).unwrap();
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 1).unwrap(), vec![2.5]).unwrap();
        let y = deconv2d_forward(&x, &kern).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 3, 4).unwrap());
        for p in 0..3 {
            for q in 0..3 {
                for o in 0..4 {
                    assert_eq!(y.get(0, p, q, o), 2.5 * kern.w(p, q, 0, o));
                }
            }
        }
    }

    #[test]
    fn zero_input_gives_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut kern = ConvKernel::<f64>::he_normal(3, 2, 3, 1, &mut rng).unwrap();
        kern.bias = rand_tensor(&mut rng, kern.bias.shape());
        let x = Tensor4::zeros(Shape4::new(2, 3, 3, 2).unwrap()).unwrap();
        for y in [deconv2d_forward(&x, &kern).unwrap(), deconv_as_conv_oracle(&x, &kern).unwrap()] {
            for (i, v) in y.data().iter().enumerate() {
                assert_eq!(*v, kern.bias.data()[i % 3]);
            }
        }
    }

    #[test]
    fn unit_kernel_scales_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut kern = ConvKernel::<f64>::zeros(1, 1, 1, 1).unwrap();
        kern.weights.fill(-1.5);
        kern.bias.fill(0.25);
        let x = rand_tensor(&mut rng, Shape4::new(3, 4, 2, 1).unwrap());
        let want = x.map(|v| -1.5 * v + 0.25);
        assert!(deconv2d_forward(&x, &kern).unwrap().max_abs_diff(&want).unwrap() < 1e-15);
        assert!(deconv_as_conv_oracle(&x, &kern).unwrap().max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn channel_mismatch() {
        let kern = ConvKernel::<f64>::zeros(2, 3, 1, 1).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 2, 2, 2).unwrap()).unwrap();
        assert!(matches!(deconv2d_forward(&x, &kern), Err(Error::Shape(_))));
        assert!(matches!(deconv_as_conv_oracle(&x, &kern), Err(Error::Shape(_))));
        assert!(matches!(deconv2d_naive(&x, &kern), Err(Error::Shape(_))));
    }

    #[test]
    fn three_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let (k, s) = (rng.gen_range(1..=4), rng.gen_range(1..=3));
            let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let shape = Shape4::new(rng.gen_range(1..=10), rng.gen_range(1..=4), rng.gen_range(1..=4), ci).unwrap();
            let x = rand_tensor(&mut rng, shape);
            let mut kern = ConvKernel::he_normal(k, ci, co, s, &mut rng).unwrap();
            kern.bias = rand_tensor(&mut rng, kern.bias.shape());
            let a = deconv2d_forward(&x, &kern).unwrap();
            assert!(a.max_abs_diff(&deconv2d_naive(&x, &kern).unwrap()).unwrap() < 1e-12);
            assert!(a.max_abs_diff(&deconv_as_conv_oracle(&x, &kern).unwrap()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn weight_permutation_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kern = ConvKernel::<f64>::he_normal(3, 4, 5, 1, &mut rng).unwrap();
        let wt = scatter_weights(&kern);
        assert_eq!(gather_weights(&wt, 3, 4, 5), kern.weights.data());
    }
}
