use crate::error::{Error, Result};
use crate::tensor::Precision;

/// What the final layer predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Softmax head over `classes` outputs.
    Classification { classes: usize },
    /// Single linear output unit.
    Regression,
}

impl Task {
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// One transposed-convolution stage of the imaging phase (stride 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvStage {
    pub kernel: usize,
    pub out_channels: usize,
}

const fn stage(kernel: usize, out_channels: usize) -> DeconvStage {
    DeconvStage { kernel, out_channels }
}

/// Side length of the generated image.
pub const IMAGE_SIZE: usize = 32;

/// Output channels of the four conv → ReLU → max-pool blocks.
pub const CONV_CHANNELS: [usize; 4] = [3, 128, 256, 512];

/// Kernel size of every convolution-phase layer.
pub const CONV_KERNEL: usize = 2;

/// Imaging-phase layer plan for `deconv_layers` stages. Every plan grows a
/// 1×1 input to a 32×32×1 map: with unit stride each stage adds `k - 1`
/// pixels, and the kernels sum to `31 + D`.
pub fn plan_deconv_phase(deconv_layers: usize) -> Result<Vec<DeconvStage>> {
    let plan: &[DeconvStage] = match deconv_layers {
        6 => &[stage(2, 512), stage(3, 256), stage(5, 128), stage(9, 64), stage(9, 3), stage(9, 1)],
        5 => &[stage(9, 512), stage(9, 128), stage(9, 64), stage(5, 3), stage(4, 1)],
        4 => &[stage(9, 512), stage(9, 64), stage(9, 3), stage(8, 1)],
        3 => &[stage(11, 512), stage(11, 64), stage(12, 1)],
        d => {
            return Err(Error::Config(format!(
                "number of deconvolution layers must be in 3..=6, got {d}"
            )))
        }
    };
    Ok(plan.to_vec())
}

/// User-facing model description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Attribute count of the dataset; the input is `[b, 1, 1, input_channels]`.
    pub input_channels: usize,
    pub deconv_layers: usize,
    pub task: Task,
    pub seed: u64,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn new(input_channels: usize, deconv_layers: usize, task: Task, seed: u64) -> Self {
        ModelConfig {
            input_channels,
            deconv_layers,
            task,
            seed,
            precision: Precision::Single,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input channel count must be at least 1".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config(format!("classification needs at least 2 classes, got {classes}")));
            }
        }
        plan_deconv_phase(self.deconv_layers)?;
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.validate()?;
        Ok(Architecture {
            input_channels: self.input_channels,
            deconv: plan_deconv_phase(self.deconv_layers)?,
            conv_channels: CONV_CHANNELS.to_vec(),
            conv_kernel: CONV_KERNEL,
            task: self.task,
        })
    }
}

/// Fully resolved layer stack: imaging stages, conv blocks, head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_channels: usize,
    pub deconv: Vec<DeconvStage>,
    /// One conv → ReLU → 2×2 max-pool block per entry.
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub task: Task,
}

impl Architecture {
    /// Miniature network for end-to-end gradient checks: a 1×1×`input_channels`
    /// input grown to 8×8×1 by three stages, two conv blocks down to 2×2×3,
    /// then the head.
    pub fn reduced(input_channels: usize, task: Task) -> Self {
        Architecture {
            input_channels,
            deconv: vec![stage(3, 3), stage(3, 2), stage(4, 1)],
            conv_channels: vec![2, 3],
            conv_kernel: CONV_KERNEL,
            task,
        }
    }

    /// Side length of the image produced by the imaging phase.
    pub fn image_size(&self) -> usize {
        1 + self.deconv.iter().map(|s| s.kernel - 1).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.deconv.is_empty() {
            return Err(Error::Config("architecture needs inputs and at least one deconvolution".into()));
        }
        if self.deconv.iter().any(|s| s.kernel == 0 || s.out_channels == 0) || self.conv_channels.contains(&0) {
            return Err(Error::Config("kernel sizes and channel counts must be positive".into()));
        }
        if self.conv_kernel == 0 {
            return Err(Error::Config("conv kernel must be positive".into()));
        }
        let size = self.image_size();
        let blocks = self.conv_channels.len() as u32;
        if !size.is_multiple_of(2usize.pow(blocks)) {
            return Err(Error::Config(format!(
                "image size {size} is not divisible by 2^{blocks} for the pooling blocks"
            )));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config(format!("classification needs at least 2 classes, got {classes}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_end_at_32_by_32_by_1() {
        for d in 3..=6 {
            let plan = plan_deconv_phase(d).unwrap();
            assert_eq!(plan.len(), d);
            assert_eq!(plan.iter().map(|s| s.kernel - 1).sum::<usize>(), 31);
            assert_eq!(plan.last().unwrap().out_channels, 1);
        }
    }

    #[test]
    fn six_layer_plan_sizes() {
        let mut size = 1;
        let mut sizes = vec![size];
        for s in plan_deconv_phase(6).unwrap() {
            size += s.kernel - 1;
            sizes.push(size);
        }
        assert_eq!(sizes, vec![1, 2, 4, 8, 16, 24, 32]);
    }

    #[test]
    fn three_layer_plan_sizes() {
        let mut size = 1;
        let mut sizes = vec![size];
        for s in plan_deconv_phase(3).unwrap() {
            size += s.kernel - 1;
            sizes.push(size);
        }
        assert_eq!(sizes, vec![1, 11, 21, 32]);
    }

    #[test]
    fn out_of_range_depth() {
        for d in [0, 1, 2, 7, 100] {
            assert!(matches!(plan_deconv_phase(d), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(28, 6, Task::Classification { classes: 2 }, 0).validate().is_ok());
        assert!(ModelConfig::new(28, 6, Task::Classification { classes: 1 }, 0).validate().is_err());
        assert!(ModelConfig::new(0, 6, Task::Regression, 0).validate().is_err());
        assert!(ModelConfig::new(16, 2, Task::Regression, 0).validate().is_err());
        assert_eq!(Task::Regression.outputs(), 1);
    }

    #[test]
    fn reduced_architecture_is_valid() {
        let a = Architecture::reduced(4, Task::Classification { classes: 2 });
        assert_eq!(a.image_size(), 8);
        a.validate().unwrap();
    }
}
