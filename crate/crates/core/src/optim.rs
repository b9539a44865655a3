//! Heavy-ball SGD with a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            initial_lr: 1e-2,
            momentum: 0.9,
            decay_factor: 0.9,
            decay_every: 3,
            total_epochs: 9,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial learning rate must be positive, got {}", self.initial_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must be in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_every == 0 || self.total_epochs == 0 {
            return Err(Error::Config("decay interval and epoch count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based `epoch`:
/// `initial_lr · decay_factor^floor((epoch - 1) / decay_every)`, rounded to
/// 15 significant digits so that e.g. `0.01 · 0.9` is exactly `0.009`.
pub fn scheduled_lr(cfg: &SgdConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > cfg.total_epochs {
        return Err(Error::Input(format!(
            "epoch {epoch} outside 1..={}",
            cfg.total_epochs
        )));
    }
    let steps = ((epoch - 1) / cfg.decay_every) as i32;
    let lr = cfg.initial_lr * cfg.decay_factor.powi(steps);
    Ok(format!("{lr:.14e}").parse().expect("formatted float parses"))
}

/// `v ← μ·v − lr·g; w ← w + v` for every parameter tensor.
pub fn step<T: Scalar>(
    params: &mut [&mut Tensor4<T>],
    velocities: &mut [Tensor4<T>],
    grads: &[Tensor4<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != velocities.len() || params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "optimizer got {} params, {} velocities, {} grads",
            params.len(),
            velocities.len(),
            grads.len()
        )));
    }
    for ((p, v), g) in params.iter().zip(velocities.iter()).zip(grads) {
        p.check_same_shape(v)?;
        p.check_same_shape(g)?;
    }
    let (lr, mu) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum));
    for ((p, v), g) in params.iter_mut().zip(velocities.iter_mut()).zip(grads) {
        for ((w, vel), &gr) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mu * *vel - lr * gr;
            *w += *vel;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn scalar(v: f64) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, 1).unwrap(), vec![v]).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let cfg = SgdConfig::default();
        assert_eq!(scheduled_lr(&cfg, 1).unwrap(), 0.01);
        assert_eq!(scheduled_lr(&cfg, 4).unwrap(), 0.009);
        assert_eq!(scheduled_lr(&cfg, 9).unwrap(), 0.0081);
        assert!(scheduled_lr(&cfg, 0).is_err());
        assert!(scheduled_lr(&cfg, 10).is_err());
    }

    #[test]
    fn schedule_non_increasing_and_blockwise_constant() {
        let cfg = SgdConfig {
            total_epochs: 30,
            ..SgdConfig::default()
        };
        let lrs: Vec<f64> = (1..=30).map(|e| scheduled_lr(&cfg, e).unwrap()).collect();
        for w in lrs.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for block in lrs.chunks(3) {
            assert!(block.iter().all(|&v| v == block[0]));
        }
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut w = scalar(1.0);
        let mut v = vec![scalar(0.0)];
        step(&mut [&mut w], &mut v, &[scalar(0.5)], 0.1, 0.0).unwrap();
        assert_eq!(w.data(), &[1.0 - 0.1 * 0.5]);
    }

    #[test]
    fn zero_lr_zero_momentum_is_identity() {
        let mut w = scalar(3.25);
        let mut v = vec![scalar(0.0)];
        step(&mut [&mut w], &mut v, &[scalar(7.0)], 0.0, 0.0).unwrap();
        assert_eq!(w.data(), &[3.25]);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut w = scalar(0.0);
        let mut v = vec![scalar(1.0)];
        let mut prev_w = 0.0;
        for t in 1..=50 {
            step(&mut [&mut w], &mut v, &[scalar(0.0)], 0.1, 0.9).unwrap();
            assert!((v[0].data()[0] - 0.9f64.powi(t)).abs() < 1e-12);
            assert!(w.data()[0] > prev_w);
            prev_w = w.data()[0];
        }
        // w converges to Σ 0.9^t = 9
        assert!((w.data()[0] - 9.0).abs() < 0.1);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = scalar(0.0);
        let mut v = vec![Tensor4::zeros(Shape4::new(1, 1, 1, 2).unwrap()).unwrap()];
        assert!(matches!(step(&mut [&mut w], &mut v, &[scalar(0.0)], 0.1, 0.9), Err(Error::Shape(_))));
        let mut v = vec![scalar(0.0)];
        assert!(matches!(step(&mut [&mut w], &mut v, &[], 0.1, 0.9), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { initial_lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { decay_factor: 1.5, ..Default::default() }.validate().is_err());
    }
}
