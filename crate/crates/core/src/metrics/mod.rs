//! Trajectory-level errors and frequency analysis.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::koopman::{KoopmanError, KoopmanModel, POSE_DIM};
use crate::numerics::Matrix;
use crate::trajgen::{Pose, Scenario, Trajectory};

pub const PROVENANCE_NOTE: &str =
    "pose-space errors on normalized coordinates; not comparable with pixel-space MSE/MAE";

/// Per-step errors over one sequence. Invisible steps carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepErrors {
    pub per_step: Vec<Option<f64>>,
    /// Mean over visible steps; `None` when nothing is visible.
    pub aggregate: Option<f64>,
}

fn step_errors(pred: &[Pose], truth: &[Pose], visible: &[bool], f: impl Fn(f64) -> f64) -> StepErrors {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    assert_eq!(pred.len(), visible.len(), "visibility length differs");
    let per_step: Vec<Option<f64>> = pred
        .iter()
        .zip(truth)
        .zip(visible)
        .map(|((p, t), &v)| {
            v.then(|| p.to_array().iter().zip(t.to_array()).map(|(a, b)| f(a - b)).sum::<f64>() / POSE_DIM as f64)
        })
        .collect();
    let vis: Vec<f64> = per_step.iter().flatten().copied().collect();
    let aggregate = (!vis.is_empty()).then(|| vis.iter().sum::<f64>() / vis.len() as f64);
    StepErrors { per_step, aggregate }
}

/// Squared error averaged over the four pose components, per step.
pub fn pose_mse(pred: &[Pose], truth: &[Pose], visible: &[bool]) -> StepErrors {
    step_errors(pred, truth, visible, |d| d * d)
}

pub fn pose_mae(pred: &[Pose], truth: &[Pose], visible: &[bool]) -> StepErrors {
    step_errors(pred, truth, visible, f64::abs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantFrequency {
    pub bin: usize,
    pub magnitude: f64,
    /// `bin / N`.
    pub cycles_per_step: f64,
}

/// Strongest non-DC bin of the discrete Fourier transform, or `None` for
/// a (numerically) constant series.
pub fn dominant_frequency(series: &[f64]) -> Option<DominantFrequency> {
    let n = series.len();
    if n < 2 {
        return None;
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let (bin, magnitude) = (1..=n / 2).map(|k| (k, buf[k].norm())).fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if bin == 0 || magnitude <= 1e-9 * scale * n as f64 {
        return None;
    }
    Some(DominantFrequency { bin, magnitude, cycles_per_step: bin as f64 / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub trajectories: usize,
    pub horizon: usize,
    /// Mean over trajectories visible at each step; `None` if none are.
    pub per_step_mse: Vec<Option<f64>>,
    pub per_step_mae: Vec<Option<f64>>,
    pub per_step_visible: Vec<usize>,
    /// Mean over every visible (trajectory, step).
    pub mse: f64,
    pub mae: f64,
    /// Same aggregates ignoring visibility.
    pub mse_all_steps: f64,
    pub mae_all_steps: f64,
    pub note: String,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} trajectories={} horizon={}", self.scenario, self.trajectories, self.horizon);
        let _ = writeln!(s, "# {}", self.note);
        let _ = writeln!(s, "{:>5} {:>8} {:>14} {:>14}", "step", "visible", "mse", "mae");
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
        for i in 0..self.horizon {
            let _ = writeln!(
                s,
                "{:>5} {:>8} {:>14} {:>14}",
                i + 1,
                self.per_step_visible[i],
                fmt(self.per_step_mse[i]),
                fmt(self.per_step_mae[i])
            );
        }
        let _ = writeln!(s, "{:>5} {:>8} {:>14} {:>14}", "all", "", format!("{:.6e}", self.mse), format!("{:.6e}", self.mae));
        s
    }
}

/// Predictions for every trajectory: the last `T_s` of the first `K`
/// poses seed a rollout to the end of the sequence.
pub fn predict_all(
    model: &KoopmanModel,
    trajectories: &[Trajectory],
    k_override: Option<&Matrix>,
) -> Result<Vec<Vec<Pose>>, KoopmanError> {
    let Some(first) = trajectories.first() else { return Ok(Vec::new()) };
    let ts = model.state_delays();
    let (len, k) = (first.len(), first.input_len);
    if k < ts {
        return Err(KoopmanError::TooShort { need: ts, got: k });
    }
    if trajectories.iter().any(|t| t.len() != len || t.input_len != k) {
        return Err(KoopmanError::Shape("trajectories differ in length or conditioning frames".into()));
    }
    let cols: Vec<Vec<f64>> = trajectories.iter().map(|t| crate::koopman::stack_state(&t.poses[k - ts..k])).collect();
    let states = Matrix::from_fn(POSE_DIM * ts, cols.len(), |i, j| cols[j][i]);
    let out = model.rollout_batch(&states, len - k, k_override)?;
    Ok((0..trajectories.len())
        .map(|j| out.poses.iter().map(|p| Pose::new(p[(0, j)], p[(1, j)], p[(2, j)], p[(3, j)])).collect())
        .collect())
}

/// Prediction errors on the frames after the conditioning window.
pub fn evaluate(model: &KoopmanModel, trajectories: &[Trajectory], k_override: Option<&Matrix>) -> Result<EvalReport, KoopmanError> {
    let preds = predict_all(model, trajectories, k_override)?;
    let scenario = trajectories.first().map_or(Scenario::Circular, |t| t.scenario);
    let horizon = trajectories.first().map_or(0, |t| t.len() - t.input_len);
    let mut sums = vec![(0.0, 0.0, 0usize); horizon];
    let (mut all_mse, mut all_mae) = (0.0, 0.0);
    for (t, p) in trajectories.iter().zip(&preds) {
        let k = t.input_len;
        let truth = &t.poses[k..];
        let mse = pose_mse(p, truth, &t.visible[k..]);
        let mae = pose_mae(p, truth, &t.visible[k..]);
        for (i, (a, b)) in mse.per_step.iter().zip(&mae.per_step).enumerate() {
            if let (Some(a), Some(b)) = (a, b) {
                sums[i].0 += a;
                sums[i].1 += b;
                sums[i].2 += 1;
            }
        }
        let every = vec![true; truth.len()];
        all_mse += pose_mse(p, truth, &every).aggregate.unwrap_or(0.0);
        all_mae += pose_mae(p, truth, &every).aggregate.unwrap_or(0.0);
    }
    let visible: usize = sums.iter().map(|s| s.2).sum();
    let n = trajectories.len().max(1) as f64;
    let per = |f: fn(&(f64, f64, usize)) -> f64| -> Vec<Option<f64>> {
        sums.iter().map(|s| (s.2 > 0).then(|| f(s) / s.2 as f64)).collect()
    };
    Ok(EvalReport {
        scenario,
        trajectories: trajectories.len(),
        horizon,
        per_step_mse: per(|s| s.0),
        per_step_mae: per(|s| s.1),
        per_step_visible: sums.iter().map(|s| s.2).collect(),
        mse: if visible > 0 { sums.iter().map(|s| s.0).sum::<f64>() / visible as f64 } else { 0.0 },
        mae: if visible > 0 { sums.iter().map(|s| s.1).sum::<f64>() / visible as f64 } else { 0.0 },
        mse_all_steps: all_mse / n,
        mae_all_steps: all_mae / n,
        note: PROVENANCE_NOTE.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize, f: impl Fn(usize) -> [f64; 4]) -> Vec<Pose> {
        (0..n).map(|i| Pose::from(f(i))).collect()
    }

    #[test]
    fn identical_sequences_have_zero_error() {
        let a = seq(5, |i| [0.1 * i as f64, 0.0, 0.2, -0.1]);
        let r = pose_mse(&a, &a, &[true; 5]);
        assert_eq!(r.aggregate, Some(0.0));
        assert_eq!(pose_mae(&a, &a, &[true; 5]).aggregate, Some(0.0));
    }

    #[test]
    fn single_coordinate_offset() {
        let a = seq(4, |i| [0.1 * i as f64, 0.0, 0.2, -0.1]);
        let b = seq(4, |i| [0.1 * i as f64 + 0.3, 0.0, 0.2, -0.1]);
        let r = pose_mse(&b, &a, &[true; 4]);
        for s in r.per_step.iter().flatten() {
            assert!((s - 0.09 / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = seq(9, |_| [0.0; 4]).iter().map(|_| Pose::from([(); 4].map(|_| rng.gen_range(-0.9..0.9)))).collect::<Vec<_>>();
        let b = a.iter().map(|_| Pose::from([(); 4].map(|_| rng.gen_range(-0.9..0.9)))).collect::<Vec<_>>();
        let vis: Vec<bool> = (0..9).map(|i| i % 3 != 1).collect();
        let r = pose_mse(&a, &b, &vis);
        let (mut total, mut count) = (0.0, 0);
        for i in 0..9 {
            if vis[i] {
                let (x, y) = (a[i].to_array(), b[i].to_array());
                let mut s = 0.0;
                for c in 0..4 {
                    s += (x[c] - y[c]) * (x[c] - y[c]);
                }
                total += s / 4.0;
                count += 1;
            } else {
                assert_eq!(r.per_step[i], None);
            }
        }
        assert!((r.aggregate.unwrap() - total / count as f64).abs() < 1e-15);
        let mae = pose_mae(&a, &b, &vis);
        for (m, e) in mae.per_step.iter().zip(&r.per_step) {
            if let (Some(m), Some(e)) = (m, e) {
                assert!(*m <= (e * 4.0).sqrt());
            }
        }
    }

    #[test]
    fn dominant_frequency_cases() {
        let n = 64;
        let sine: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).sin()).collect();
        assert_eq!(dominant_frequency(&sine).unwrap().bin, 3);
        assert!(dominant_frequency(&[0.7; 32]).is_none());
        let mix: Vec<f64> = (0..n)
            .map(|t| {
                let x = 2.0 * std::f64::consts::PI * t as f64 / n as f64;
                0.4 * (5.0 * x).cos() + 1.1 * (9.0 * x).sin() + 0.2
            })
            .collect();
        assert_eq!(dominant_frequency(&mix).unwrap().bin, 9);
    }
}
