//! DCNet: a 1-D feature vector is grown into a 32×32 single-channel image by
//! a stack of transposed convolutions, then classified (or regressed) by a
//! small 2-D CNN. Everything, including backpropagation, is implemented here
//! on NHWC tensors.
//!
//! ```no_run
//! use dcnet_core::data::{apply_normalize, fit_normalize, split, synth_dataset, SynthKind};
//! use dcnet_core::model::{Model, ModelConfig, Task};
//! use dcnet_core::train::{train, TrainConfig};
//!
//! let ds = synth_dataset(SynthKind::XorBlobs, 1000, 8, 0.2, 1)?;
//! let (tr, te) = split(&ds, 0.8, 1)?;
//! let stats = fit_normalize(&tr)?;
//! let (tr, te) = (apply_normalize(&tr, &stats)?, apply_normalize(&te, &stats)?);
//! let mut model = Model::<f32>::build(&ModelConfig::new(8, 6, Task::Classification { classes: 2 }, 1))?;
//! let report = train(&mut model, &tr, Some(&te), &TrainConfig::default())?;
//! println!("{:?}", report.final_test());
//! # Ok::<(), dcnet_core::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Shape4, Tensor4};

/// Sizes the global worker pool. Results do not depend on the count.
/// Only the first call in a process has an effect.
pub fn set_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure worker threads: {e}")))
}
