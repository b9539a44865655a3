use crate::error::{Error, Result};
use crate::layers::{add_into, check_channels, par_map_chunks, reduce_chunks, ConvKernel, Padding, ParamGrads};
use crate::tensor::{gemm, MatView, Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    c_in: usize,
    k: usize,
    s: usize,
    pad: Padding,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(x: Shape4, kern: &ConvKernel<T>, pad: Padding) -> Result<Self> {
        kern.validate()?;
        check_channels(x, kern.c_in(), "conv2d")?;
        let (k, s) = (kern.k(), kern.stride);
        let hp = x.h + pad.top + pad.bottom;
        let wp = x.w + pad.left + pad.right;
        if hp < k || wp < k {
            return Err(Error::Shape(format!(
                "conv2d: padded input {hp}x{wp} smaller than kernel {k}"
            )));
        }
        if !(hp - k).is_multiple_of(s) || !(wp - k).is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "conv2d: padded input {hp}x{wp} with kernel {k} and stride {s} gives a non-integral output size"
            )));
        }
        Ok(ConvGeom {
            h: x.h,
            w: x.w,
            c_in: x.c,
            k,
            s,
            pad,
            oh: (hp - k) / s + 1,
            ow: (wp - k) / s + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.c_in
    }

    fn out_positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate read by output `(o, tap)` along one axis, if not padding.
    #[inline]
    fn src(o: usize, tap: usize, s: usize, before: usize, len: usize) -> Option<usize> {
        let i = (o * s + tap).checked_sub(before)?;
        (i < len).then_some(i)
    }

    /// Patch matrix for `nb` samples: one row per output position, columns `(p, q, ci)`.
    fn im2col<T: Scalar>(&self, x: &[T], nb: usize, cols: &mut [T]) {
        let in_ps = self.h * self.w * self.c_in;
        let pl = self.patch_len();
        cols.fill(T::zero());
        for n in 0..nb {
            let xs = &x[n * in_ps..(n + 1) * in_ps];
            for oh in 0..self.oh {
                for ow in 0..self.ow {
                    let row = ((n * self.oh + oh) * self.ow + ow) * pl;
                    for p in 0..self.k {
                        let Some(ih) = Self::src(oh, p, self.s, self.pad.top, self.h) else {
                            continue;
                        };
                        for q in 0..self.k {
                            let Some(iw) = Self::src(ow, q, self.s, self.pad.left, self.w) else {
                                continue;
                            };
                            let src = (ih * self.w + iw) * self.c_in;
                            let dst = row + (p * self.k + q) * self.c_in;
                            cols[dst..dst + self.c_in].copy_from_slice(&xs[src..src + self.c_in]);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add patch rows back onto the input grid.
    fn col2im<T: Scalar>(&self, cols: &[T], nb: usize, dx: &mut [T]) {
        let in_ps = self.h * self.w * self.c_in;
        let pl = self.patch_len();
        dx.fill(T::zero());
        for n in 0..nb {
            let xs = &mut dx[n * in_ps..(n + 1) * in_ps];
            for oh in 0..self.oh {
                for ow in 0..self.ow {
                    let row = ((n * self.oh + oh) * self.ow + ow) * pl;
                    for p in 0..self.k {
                        let Some(ih) = Self::src(oh, p, self.s, self.pad.top, self.h) else {
                            continue;
                        };
                        for q in 0..self.k {
                            let Some(iw) = Self::src(ow, q, self.s, self.pad.left, self.w) else {
                                continue;
                            };
                            let dst = (ih * self.w + iw) * self.c_in;
                            let src = row + (p * self.k + q) * self.c_in;
                            add_into(&mut xs[dst..dst + self.c_in], &cols[src..src + self.c_in]);
                        }
                    }
                }
            }
        }
    }
}

/// Direct evaluation of the windowed sum, used as the reference for the
/// lowered implementation:
/// `out[b,m,n,o] = Σ_{p,q,ci} W[p,q,ci,o] · x_pad[b, m·s+p, n·s+q, ci] + bias[o]`.
pub fn conv2d_naive<T: Scalar>(x: &Tensor4<T>, kern: &ConvKernel<T>, pad: Padding) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let g = ConvGeom::new(xs, kern, pad)?;
    let c_out = kern.c_out();
    let mut out = Tensor4::zeros(Shape4::new(xs.b, g.oh, g.ow, c_out)?)?;
    for b in 0..xs.b {
        for m in 0..g.oh {
            for n in 0..g.ow {
                for o in 0..c_out {
                    let mut acc = kern.bias.data()[o];
                    for p in 0..g.k {
                        let Some(ih) = ConvGeom::src(m, p, g.s, pad.top, g.h) else {
                            continue;
                        };
                        for q in 0..g.k {
                            let Some(iw) = ConvGeom::src(n, q, g.s, pad.left, g.w) else {
                                continue;
                            };
                            for ci in 0..g.c_in {
                                acc += kern.w(p, q, ci, o) * x.get(b, ih, iw, ci);
                            }
                        }
                    }
                    out.set(b, m, n, o, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Convolution lowered to a patch matrix times the `(k·k·c_in) × c_out` weight matrix.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, kern: &ConvKernel<T>, pad: Padding) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let g = ConvGeom::new(xs, kern, pad)?;
    let c_out = kern.c_out();
    let mut out = Tensor4::zeros(Shape4::new(xs.b, g.oh, g.ow, c_out)?)?;
    let (pl, np) = (g.patch_len(), g.out_positions());
    let wv = MatView::dense(pl, c_out);
    let bias = kern.bias.data();
    par_map_chunks(x.data(), xs.per_sample(), out.data_mut(), np * c_out, |nb, xc, oc| {
        let mut cols = vec![T::zero(); nb * np * pl];
        g.im2col(xc, nb, &mut cols);
        for row in oc.chunks_mut(c_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            &cols,
            MatView::dense(nb * np, pl),
            kern.weights.data(),
            wv,
            T::one(),
            oc,
            MatView::dense(nb * np, c_out),
        );
    });
    Ok(out)
}

/// Backward pass of [`conv2d_forward`].
///
/// The input gradient is the transposed convolution of `dout`; it is skipped
/// when `need_input` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    kern: &ConvKernel<T>,
    pad: Padding,
    dout: &Tensor4<T>,
    need_input: bool,
) -> Result<ParamGrads<T>> {
    let xs = x.shape();
    let g = ConvGeom::new(xs, kern, pad)?;
    let c_out = kern.c_out();
    let expected = Shape4::new(xs.b, g.oh, g.ow, c_out)?;
    if dout.shape() != expected {
        return Err(Error::Shape(format!(
            "conv2d backward: upstream gradient {} does not match output {expected}",
            dout.shape()
        )));
    }
    let (pl, np) = (g.patch_len(), g.out_positions());
    let mut dx = if need_input { Some(Tensor4::zeros(xs)?) } else { None };
    let wlen = pl * c_out;
    let (dw, db) = {
        let dx_buf: &mut [T] = match dx.as_mut() {
            Some(t) => t.data_mut(),
            None => &mut [],
        };
        reduce_chunks(
            xs.b,
            dx_buf,
            xs.per_sample(),
            || (vec![T::zero(); wlen], vec![T::zero(); c_out]),
            |start, end, dxc, (mut dw, mut db)| {
                let nb = end - start;
                let xc = &x.data()[start * xs.per_sample()..end * xs.per_sample()];
                let dc = &dout.data()[start * np * c_out..end * np * c_out];
                let mut cols = vec![T::zero(); nb * np * pl];
                g.im2col(xc, nb, &mut cols);
                let cv = MatView::dense(nb * np, pl);
                let dv = MatView::dense(nb * np, c_out);
                gemm(&cols, cv.t(), dc, dv, T::zero(), &mut dw, MatView::dense(pl, c_out));
                for row in dc.chunks(c_out) {
                    add_into(&mut db, row);
                }
                if !dxc.is_empty() {
                    gemm(dc, dv, kern.weights.data(), MatView::dense(pl, c_out).t(), T::zero(), &mut cols, cv);
                    g.col2im(&cols, nb, dxc);
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
        weights: Tensor4::from_vec(kern.weights.shape(), dw)?,
        bias: Tensor4::from_vec(kern.bias.shape(), db)?,
    })
}
