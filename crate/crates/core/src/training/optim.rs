use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

use super::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moments per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub steps: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(params: &[Matrix], lr: f64) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { m: zeros(), v: zeros(), steps: 0, lr }
    }
}

/// One bias-corrected Adam update with decoupled weight decay, in place.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let lr = state.lr;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.shape(), g.shape());
        let p = p.as_mut_slice();
        for (((p, g), m), v) in p.iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    /// Non-improving epochs tolerated after the best one.
    pub patience: usize,
    /// Relative improvement that counts as progress.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.7, patience: 10, threshold: 1e-3, min_lr: 1e-7 }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig) -> Self {
        Self { cfg, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - self.cfg.threshold) || self.best == f64::INFINITY {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.cfg.patience {
            self.bad_epochs = 0;
            return (lr * self.cfg.factor).max(self.cfg.min_lr);
        }
        lr
    }
}

/// Learning rate after replaying a validation history from `lr`.
pub fn lr_on_plateau(history: &[f64], lr: f64, cfg: PlateauConfig) -> f64 {
    let mut s = PlateauScheduler::new(cfg);
    history.iter().fold(lr, |lr, &loss| s.observe(loss, lr))
}

/// Linear ramp from zero at `start_epoch` to `final_weights` at
/// `end_epoch`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annealing {
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub final_weights: LossWeights,
}

impl Annealing {
    pub fn weights(&self, epoch: usize) -> LossWeights {
        let frac = if self.end_epoch <= self.start_epoch {
            if epoch >= self.end_epoch { 1.0 } else { 0.0 }
        } else if epoch <= self.start_epoch {
            0.0
        } else {
            ((epoch - self.start_epoch) as f64 / (self.end_epoch - self.start_epoch) as f64).min(1.0)
        };
        self.final_weights.scaled(frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -2.0, 7.5] {
            let mut p = vec![Matrix::filled(1, 1, 0.0)];
            let mut st = AdamState::new(&p, 0.01);
            adam_step(&mut p, &[Matrix::filled(1, 1, g)], &mut st, &AdamConfig::default());
            assert!((p[0][(0, 0)].abs() - 0.01).abs() < 1e-9);
            assert_eq!(p[0][(0, 0)].signum(), -g.signum());
        }
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = vec![Matrix::filled(2, 2, 0.4)];
        let mut st = AdamState::new(&p, 0.01);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        adam_step(&mut p, &[Matrix::zeros(2, 2)], &mut st, &cfg);
        assert_eq!(p[0], Matrix::filled(2, 2, 0.4));
    }

    #[test]
    fn two_steps_match_reference() {
        // hand-rolled reference for a scalar
        let (b1, b2, eps, wd, lr) = (0.9f64, 0.999f64, 1e-8, 1e-4, 0.05);
        let grads = [0.5, -0.2];
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let step = (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            x -= lr * step + lr * wd * x;
        }
        let mut p = vec![Matrix::filled(1, 1, 1.0)];
        let mut st = AdamState::new(&p, lr);
        for g in grads {
            adam_step(&mut p, &[Matrix::filled(1, 1, g)], &mut st, &AdamConfig::default());
        }
        assert!((p[0][(0, 0)] - x).abs() < 1e-15);
    }

    #[test]
    fn plateau_cases() {
        let cfg = PlateauConfig::default();
        let improving: Vec<f64> = (0..40).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(lr_on_plateau(&improving, 1.0, cfg), 1.0);
        // best epoch followed by `patience` flat epochs
        assert_eq!(lr_on_plateau(&[1.0; 10], 1.0, cfg), 1.0);
        assert!((lr_on_plateau(&[1.0; 11], 1.0, cfg) - 0.7).abs() < 1e-15);
        // jitter below the relative threshold is not progress
        let noisy: Vec<f64> = (0..11).map(|i| if i % 2 == 0 { 1.0 } else { 1.0 - 4e-4 }).collect();
        assert!((lr_on_plateau(&noisy, 1.0, cfg) - 0.7).abs() < 1e-15);
        // repeated plateaus keep decaying
        assert!((lr_on_plateau(&[1.0; 21], 1.0, cfg) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn annealing_ramp() {
        let fw = LossWeights { ae: 0.2, fit: 1.0, input: 0.01, rank: 0.004 };
        let a = Annealing { start_epoch: 0, end_epoch: 10, final_weights: fw };
        assert_eq!(a.weights(0), LossWeights::zero());
        let mid = a.weights(5);
        assert!((mid.fit - 0.5).abs() < 1e-15 && (mid.ae - 0.1).abs() < 1e-15);
        assert_eq!(a.weights(10), fw);
        assert_eq!(a.weights(99), fw);
        let mut prev = LossWeights::zero();
        for e in 0..20 {
            let w = a.weights(e);
            assert!(w.ae >= prev.ae && w.fit >= prev.fit && w.input >= prev.input && w.rank >= prev.rank);
            prev = w;
        }
    }
}
