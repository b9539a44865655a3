//! Forward and backward kernels for every layer type in the network.
//!
//! Batch-parallel work is split into fixed-size chunks of [`BATCH_CHUNK`]
//! samples. Parameter gradients are summed chunk by chunk in chunk order, so
//! results do not depend on how many worker threads rayon uses.

mod activation;
mod conv;
mod deconv;
mod fc;
mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_naive};
pub use deconv::{deconv2d_backward, deconv2d_forward, deconv2d_naive, deconv_as_conv_oracle};
pub use fc::{fc_backward, fc_forward, FcLayer};
pub use pool::{maxpool2, maxpool2_backward, PoolCache};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Samples per work unit for batch-parallel kernels.
pub const BATCH_CHUNK: usize = 8;

/// Chunks whose partial gradients are held in memory at once.
const CHUNK_GROUP: usize = 8;

/// Square convolution kernel, stored `(kh, kw, c_in, c_out)`, with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T: Scalar> {
    pub weights: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub stride: usize,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor4<T>, bias: Tensor4<T>, stride: usize) -> Result<Self> {
        let kern = ConvKernel { weights, bias, stride };
        kern.validate()?;
        Ok(kern)
    }

    pub fn zeros(k: usize, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        ConvKernel::new(
            Tensor4::zeros(Shape4::new(k, k, c_in, c_out)?)?,
            Tensor4::zeros(Shape4::new(1, 1, 1, c_out)?)?,
            stride,
        )
    }

    /// He-normal weights with fan-in `k·k·c_in`, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(k: usize, c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Result<Self> {
        ConvKernel::new(
            Tensor4::he_normal(Shape4::new(k, k, c_in, c_out)?, k * k * c_in, rng)?,
            Tensor4::zeros(Shape4::new(1, 1, 1, c_out)?)?,
            stride,
        )
    }

    pub fn k(&self) -> usize {
        self.weights.shape().b
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().w
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().c
    }

    #[inline]
    pub(crate) fn w(&self, p: usize, q: usize, ci: usize, co: usize) -> T {
        self.weights.get(p, q, ci, co)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.shape();
        if ws.b != ws.h {
            return Err(Error::Shape(format!("kernel must be square, got {ws}")));
        }
        let bs = self.bias.shape();
        if bs.b != 1 || bs.h != 1 || bs.w != 1 || bs.c != ws.c {
            return Err(Error::Shape(format!("bias shape {bs} does not match c_out {}", ws.c)));
        }
        if self.stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Zero padding applied to each spatial side before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Stride-1 "same" padding: `k - 1` zeros on the bottom and right only.
    pub fn same_bottom_right(k: usize) -> Self {
        Padding {
            top: 0,
            bottom: k - 1,
            left: 0,
            right: k - 1,
        }
    }
}

/// Gradients produced by a parameterized layer's backward pass.
#[derive(Debug, Clone)]
pub struct ParamGrads<T: Scalar> {
    /// `None` when the caller did not request the input gradient.
    pub input: Option<Tensor4<T>>,
    pub weights: Tensor4<T>,
    pub bias: Tensor4<T>,
}

pub(crate) fn check_channels(x: Shape4, c_in: usize, what: &str) -> Result<()> {
    if x.c != c_in {
        return Err(Error::Shape(format!(
            "{what}: input has {} channels, kernel expects {c_in}",
            x.c
        )));
    }
    Ok(())
}

fn chunk_ranges(batch: usize) -> Vec<(usize, usize)> {
    (0..batch)
        .step_by(BATCH_CHUNK)
        .map(|start| (start, (start + BATCH_CHUNK).min(batch)))
        .collect()
}

/// Run `work` over each batch chunk, giving it the chunk's input slice and
/// mutable output slice.
pub(crate) fn par_map_chunks<T: Scalar>(
    input: &[T],
    in_per_sample: usize,
    output: &mut [T],
    out_per_sample: usize,
    work: impl Fn(usize, &[T], &mut [T]) + Sync,
) {
    input
        .par_chunks(BATCH_CHUNK * in_per_sample)
        .zip(output.par_chunks_mut(BATCH_CHUNK * out_per_sample))
        .for_each(|(x, y)| work(x.len() / in_per_sample, x, y));
}

/// Compute per-chunk partial parameter gradients and sum them in chunk order.
///
/// `work(start, end, out, acc)` gets the chunk's sample range, its disjoint
/// slice of `output` (empty when `output` is empty) and a zeroed accumulator,
/// and returns the filled accumulator.
pub(crate) fn reduce_chunks<T: Scalar, P: Send>(
    batch: usize,
    output: &mut [T],
    out_per_sample: usize,
    zero: impl Fn() -> P + Sync,
    work: impl Fn(usize, usize, &mut [T], P) -> P + Sync,
    add: impl Fn(&mut P, &P),
) -> P {
    let ranges = chunk_ranges(batch);
    let mut slices: Vec<&mut [T]> = if output.is_empty() {
        ranges.iter().map(|_| <&mut [T]>::default()).collect()
    } else {
        output.chunks_mut(BATCH_CHUNK * out_per_sample).collect()
    };
    debug_assert_eq!(slices.len(), ranges.len());
    let mut total = zero();
    let mut start = 0;
    while start < ranges.len() {
        let end = (start + CHUNK_GROUP).min(ranges.len());
        let group: Vec<_> = ranges[start..end].iter().copied().zip(slices.drain(..end - start)).collect();
        let partials: Vec<P> = group
            .into_par_iter()
            .map(|((s, e), out)| work(s, e, out, zero()))
            .collect();
        for p in &partials {
            add(&mut total, p);
        }
        start = end;
    }
    total
}

pub(crate) fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}
