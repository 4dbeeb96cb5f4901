//! AdamW with decoupled weight decay, gradient clipping, and the learning
//! rate schedules.

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Global-norm gradient clip applied before every optimizer step.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Cosine,
    ReduceOnPlateau,
    None,
}

/// First and second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamWState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let m = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect::<Vec<_>>();
        AdamWState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Slice-level AdamW update for 1-based step `step`. Weight decay is
/// decoupled: parameters shrink by `1 - lr * wd` before the bias-corrected
/// moment update, so decay never passes through the adaptive denominator.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    let t = step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for ((p, &g), (m, v)) in param
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *p *= 1.0 - lr * weight_decay;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One AdamW step over every trainable tensor. Grads must align with
/// `params.tensors()`; non-finite gradients abort the step.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    for (t, g) in params.tensors().iter().zip(grads) {
        if t.trainable && g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {}",
                t.name
            )));
        }
    }
    state.step += 1;
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        if !tensor.trainable {
            continue;
        }
        adamw_update(
            &mut tensor.data,
            &grads[i],
            &mut state.m[i],
            &mut state.v[i],
            state.step,
            lr,
            weight_decay,
        );
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// Plateau tracking for the reduce-on-plateau schedule.
#[derive(Debug, Clone)]
pub struct RopState {
    factor: f64,
    best: Option<f64>,
    stale: usize,
}

impl RopState {
    pub fn new() -> Self {
        RopState {
            factor: 1.0,
            best: None,
            stale: 0,
        }
    }

    /// Record a validation metric; after `patience` consecutive
    /// non-improving epochs the factor shrinks by `rop_factor`.
    pub fn observe(&mut self, metric: f64, higher_better: bool, cfg: &TrainConfig) {
        let improved = match self.best {
            None => true,
            Some(best) => {
                if higher_better {
                    metric > best
                } else {
                    metric < best
                }
            }
        };
        if improved {
            self.best = Some(metric);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= cfg.rop_patience {
                self.factor *= cfg.rop_factor;
                self.stale = 0;
            }
        }
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

impl Default for RopState {
    fn default() -> Self {
        Self::new()
    }
}

/// Learning rate for a given epoch: linear warmup from zero over
/// `warmup_epochs`, then the configured decay. Cosine decays to zero at
/// `epochs`; reduce-on-plateau multiplies by the tracked factor.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig, rop: &RopState) -> f64 {
    let warm = cfg.warmup_epochs;
    if epoch < warm {
        return cfg.lr * epoch as f64 / warm as f64;
    }
    match cfg.scheduler {
        SchedulerKind::Cosine => {
            let span = cfg.epochs.saturating_sub(warm);
            if span == 0 {
                return cfg.lr;
            }
            let progress = (epoch - warm) as f64 / span as f64;
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
        }
        SchedulerKind::ReduceOnPlateau => cfg.lr * rop.factor(),
        SchedulerKind::None => cfg.lr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::MetricKind;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = [1.0, -2.0, 0.5];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adamw_update(&mut p, &[0.0; 3], &mut m, &mut v, 1, 0.01, 0.0);
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_grad_pure_decay_scales_params() {
        let mut p = [1.0, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adamw_update(&mut p, &[0.0; 2], &mut m, &mut v, 1, 0.01, 0.1);
        assert!((p[0] - 0.999).abs() < 1e-15);
        assert!((p[1] + 2.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_bias_corrected_unit() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-3, 0.0);
        let expect = -1e-3 / (1.0 + ADAM_EPS);
        assert!((p[0] - expect).abs() < 1e-18, "{} vs {}", p[0], expect);
    }

    #[test]
    fn adamw_without_decay_is_adam() {
        // Independent plain-Adam oracle.
        let grads_per_step = [
            [0.3, -1.2, 0.07],
            [-0.9, 0.4, 0.0],
            [2.0, -0.1, -0.5],
        ];
        let mut ours = [0.5, -0.25, 1.5];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for (i, g) in grads_per_step.iter().enumerate() {
            adamw_update(&mut ours, g, &mut m, &mut v, (i + 1) as u64, 0.01, 0.0);
        }

        let mut adam = [0.5, -0.25, 1.5];
        let (mut am, mut av) = ([0.0; 3], [0.0; 3]);
        for (step, g) in grads_per_step.iter().enumerate() {
            let t = (step + 1) as f64;
            for j in 0..3 {
                am[j] = 0.9 * am[j] + 0.1 * g[j];
                av[j] = 0.999 * av[j] + 0.001 * g[j] * g[j];
                let mh = am[j] / (1.0 - 0.9f64.powf(t));
                let vh = av[j] / (1.0 - 0.999f64.powf(t));
                adam[j] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for j in 0..3 {
            assert!((ours[j] - adam[j]).abs() < 1e-15, "component {j}");
        }
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![vec![3.0, 4.0]]; // norm 5
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        let new_norm: f64 = grads[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);
        // Already-small gradients are untouched.
        let mut small = vec![vec![0.3, 0.4]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], vec![0.3, 0.4]);
    }

    fn cfg(epochs: usize, warmup: usize, scheduler: SchedulerKind) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: warmup,
            scheduler,
            lr: 0.001,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_starts_at_zero() {
        let c = cfg(950, 50, SchedulerKind::Cosine);
        assert_eq!(lr_schedule(0, &c, &RopState::new()), 0.0);
    }

    #[test]
    fn warmup_end_hits_full_lr() {
        let c = cfg(950, 50, SchedulerKind::Cosine);
        assert_eq!(lr_schedule(50, &c, &RopState::new()), 0.001);
    }

    #[test]
    fn cosine_midpoint_is_half() {
        let c = cfg(100, 0, SchedulerKind::Cosine);
        let lr = lr_schedule(50, &c, &RopState::new());
        assert!((lr - 0.0005).abs() < 1e-12, "{lr}");
    }

    #[test]
    fn cosine_end_is_zero() {
        let c = cfg(100, 0, SchedulerKind::Cosine);
        assert!(lr_schedule(100, &c, &RopState::new()).abs() < 1e-18);
    }

    #[test]
    fn rop_halves_after_patience() {
        let mut c = cfg(100, 0, SchedulerKind::ReduceOnPlateau);
        c.rop_patience = 3;
        c.rop_factor = 0.5;
        c.metric = MetricKind::Mae;
        let mut rop = RopState::new();
        rop.observe(1.0, false, &c);
        for _ in 0..3 {
            rop.observe(2.0, false, &c);
        }
        assert_eq!(rop.factor(), 0.5);
        assert_eq!(lr_schedule(10, &c, &rop), 0.0005);
    }
}
