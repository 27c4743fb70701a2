//! SGD and Adam with piecewise learning-rate schedules.

use crate::error::{LabError, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Learning rate as a function of (epoch, fraction of the epoch done).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear ramp `start → peak` over `warmup_epochs`, then `peak` scaled by
    /// `factor` once for every entry of `decay_epochs` already reached.
    WarmupStepDecay {
        start: f64,
        peak: f64,
        warmup_epochs: usize,
        decay_epochs: Vec<usize>,
        factor: f64,
    },
    /// `base · factor^(epoch / every)`.
    StepEvery { base: f64, every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize, progress: f64) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::WarmupStepDecay {
                start,
                peak,
                warmup_epochs,
                decay_epochs,
                factor,
            } => {
                if epoch < *warmup_epochs {
                    let t = (epoch as f64 + progress) / *warmup_epochs as f64;
                    start + (peak - start) * t.min(1.0)
                } else {
                    let n = decay_epochs.iter().filter(|&&e| epoch >= e).count();
                    peak * factor.powi(n as i32)
                }
            }
            LrSchedule::StepEvery {
                base,
                every,
                factor,
            } => base * factor.powi((epoch / (*every).max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let zeros = |ps: &ParamSet| ps.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (zeros(params), zeros(params)),
        };
        Optimizer {
            kind,
            first_moment,
            second_moment,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(LabError::dim("optimizer_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(LabError::dim("optimizer_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                if lr == 0.0 {
                    return Ok(());
                }
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
                    let m = self.first_moment[i].data_mut();
                    let v = self.second_moment[i].data_mut();
                    for (j, &gv) in g.data().iter().enumerate() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gv;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gv * gv;
                    }
                    if lr == 0.0 {
                        continue;
                    }
                    for (j, pv) in p.data_mut().iter_mut().enumerate() {
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *pv -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("p", Tensor::scalar(v));
        ps
    }

    #[test]
    fn sgd_step() {
        let mut ps = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &ps);
        opt.step(&mut ps, &[Tensor::scalar(1.0)], 0.1).unwrap();
        assert!((ps.tensors()[0].data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut ps = single(0.37);
            let mut opt = Optimizer::new(kind, &ps);
            for _ in 0..3 {
                opt.step(&mut ps, &[Tensor::scalar(0.0)], 0.01).unwrap();
            }
            assert_eq!(ps.tensors()[0].data()[0], 0.37);
        }
    }

    #[test]
    fn zero_learning_rate_is_bitwise_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut ps = single(-0.0);
            ps.add("q", Tensor::vector(vec![1.5, -2.25]));
            let before = ps.clone();
            let mut opt = Optimizer::new(kind, &ps);
            let grads = vec![Tensor::scalar(-0.5), Tensor::vector(vec![3.0, 7.0])];
            opt.step(&mut ps, &grads, 0.0).unwrap();
            for (a, b) in ps.tensors().iter().zip(before.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε) ≈ −lr for g = 1.
        let mut ps = single(2.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &ps);
        opt.step(&mut ps, &[Tensor::scalar(1.0)], 0.01).unwrap();
        let moved = ps.tensors()[0].data()[0] - 2.0;
        assert!((moved + 0.01 / (1.0 + ADAM_EPS)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ps = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &ps);
        assert!(matches!(
            opt.step(&mut ps, &[Tensor::vector(vec![1.0, 2.0])], 0.1),
            Err(LabError::Dimension { .. })
        ));
    }

    #[test]
    fn schedules() {
        let s = LrSchedule::WarmupStepDecay {
            start: 2e-4,
            peak: 2e-3,
            warmup_epochs: 3,
            decay_epochs: vec![10, 12],
            factor: 0.2,
        };
        assert!((s.lr(0, 0.0) - 2e-4).abs() < 1e-18);
        assert!((s.lr(1, 0.5) - (2e-4 + 1.8e-3 * 0.5)).abs() < 1e-15);
        assert_eq!(s.lr(5, 0.3), 2e-3);
        assert!((s.lr(10, 0.0) - 4e-4).abs() < 1e-15);
        assert!((s.lr(14, 0.0) - 8e-5).abs() < 1e-15);
        let s = LrSchedule::StepEvery {
            base: 2e-3,
            every: 3,
            factor: 0.1,
        };
        assert_eq!(s.lr(2, 0.9), 2e-3);
        assert!((s.lr(3, 0.0) - 2e-4).abs() < 1e-18);
    }
}
