use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::koopman::{stack_state, KoopmanModel, ModelVars, POSE_DIM};
use crate::numerics::{nuclear_norm, Matrix};
use crate::trajgen::Trajectory;

use super::{LossWeights, TrainError};

/// Whole trajectories laid out time-major: one column per trajectory in
/// every per-step matrix.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    pub state_delays: usize,
    /// `T - T_s + 1` matrices of shape `4 T_s x B`.
    states: Vec<Matrix>,
    state_masks: Vec<Matrix>,
    /// `T` matrices of shape `4 x B`.
    poses: Vec<Matrix>,
    pose_masks: Vec<Matrix>,
    /// Trajectories with no visible frame in the prediction window.
    pub invisible_prediction: usize,
}

impl Batch {
    pub fn new(trajectories: &[&Trajectory], state_delays: usize) -> Result<Self, TrainError> {
        let Some(first) = trajectories.first() else {
            return Err(TrainError::Data("empty batch".into()));
        };
        let len = first.len();
        if state_delays == 0 || len < state_delays + 1 {
            return Err(TrainError::Data(format!("trajectories of length {len} are too short for {state_delays} delays")));
        }
        if trajectories.iter().any(|t| t.len() != len || t.visible.len() != len) {
            return Err(TrainError::Data("trajectories in a batch must share their length".into()));
        }
        let b = trajectories.len();
        let vis = |t: usize, j: usize| if trajectories[j].visible[t] { 1.0 } else { 0.0 };
        let poses: Vec<Matrix> = (0..len)
            .map(|t| Matrix::from_fn(POSE_DIM, b, |r, j| trajectories[j].poses[t].to_array()[r]))
            .collect();
        let pose_masks: Vec<Matrix> = (0..len).map(|t| Matrix::from_fn(POSE_DIM, b, |_, j| vis(t, j))).collect();
        let n_states = len - state_delays + 1;
        let mut states = Vec::with_capacity(n_states);
        let mut state_masks = Vec::with_capacity(n_states);
        for i in 0..n_states {
            let cols: Vec<Vec<f64>> = trajectories.iter().map(|t| stack_state(&t.poses[i..i + state_delays])).collect();
            states.push(Matrix::from_fn(POSE_DIM * state_delays, b, |r, j| cols[j][r]));
            // block k of state i holds pose i + T_s - 1 - k
            state_masks.push(Matrix::from_fn(POSE_DIM * state_delays, b, |r, j| vis(i + state_delays - 1 - r / POSE_DIM, j)));
        }
        let invisible_prediction =
            trajectories.iter().filter(|t| !t.visible[state_delays..].iter().any(|v| *v)).count();
        Ok(Self { size: b, len, state_delays, states, state_masks, poses, pose_masks, invisible_prediction })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}

/// Tape nodes of every loss component (already averaged per trajectory)
/// and of the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub recon_pred: Var,
    pub fit: Var,
    pub ae: Var,
    pub input: Var,
    pub rank: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_pred: f64,
    pub fit: f64,
    pub ae: f64,
    pub input: f64,
    pub rank: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            recon_pred: tape.scalar_value(self.recon_pred),
            fit: tape.scalar_value(self.fit),
            ae: tape.scalar_value(self.ae),
            input: tape.scalar_value(self.input),
            rank: tape.scalar_value(self.rank),
            total: tape.scalar_value(self.total),
        }
    }
}

fn cat_cols(ms: &[Matrix]) -> Matrix {
    let refs: Vec<&Matrix> = ms.iter().collect();
    Matrix::concat_cols(&refs).expect("equal row counts")
}

/// `sum(f((pred - target) * mask))` with `f` squaring or taking `|.|`.
fn masked_error(
    tape: &mut Tape,
    pred: Var,
    target: Matrix,
    mask: &Matrix,
    l1: bool,
) -> Result<Var, AutodiffError> {
    let t = tape.leaf(target);
    let d = tape.sub(pred, t)?;
    let d = tape.mul_const(d, mask)?;
    let e = if l1 { tape.abs(d) } else { tape.square(d) };
    Ok(tape.sum(e))
}

fn add_all(tape: &mut Tape, terms: &[Var]) -> Result<Var, AutodiffError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Records the full objective for `batch` on `tape`.
///
/// * `recon_pred`: squared pose error of (a) the autoencoded first block
///   of every state and (b) the closed-loop prediction from the first
///   state, on visible frames.
/// * `fit`: squared error between `g_{i+1}` and `K g_i + K_U u_i`.
/// * `ae`: absolute state error of (a) two-step-ahead decodes and (b)
///   every decoded closed-loop state.
/// * `input`: absolute sum of the inputs of the true states.
/// * `rank`: nuclear norm of `K`.
pub fn build_objective(
    tape: &mut Tape,
    mv: &ModelVars,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<LossTerms, AutodiffError> {
    let b = batch.size;
    let n = batch.n_states();
    let ts = batch.state_delays;
    let sd = POSE_DIM * ts;
    let inv_b = 1.0 / b as f64;

    let s_all = tape.leaf(cat_cols(&batch.states));
    let g_all = mv.encode(tape, s_all)?;
    let u_all = mv.input_map(tape, s_all)?;

    // (a) autoencoder reconstruction of the current pose
    let d_all = mv.decode(tape, g_all)?;
    let first = tape.slice_rows(d_all, 0, POSE_DIM)?;
    let recon = masked_error(
        tape,
        first,
        cat_cols(&batch.poses[ts - 1..]),
        &cat_cols(&batch.pose_masks[ts - 1..]),
        false,
    )?;

    // one-step propagation of every state but the last
    let g_prev = tape.slice_cols(g_all, 0, (n - 1) * b)?;
    let g_next = tape.slice_cols(g_all, b, (n - 1) * b)?;
    let u_prev = u_all.map(|u| tape.slice_cols(u, 0, (n - 1) * b)).transpose()?;
    let g_hat = mv.step(tape, g_prev, u_prev)?;
    let fit_diff = tape.sub(g_next, g_hat)?;
    let fit_sq = tape.square(fit_diff);
    let fit = tape.sum(fit_sq);

    let mut ae_terms = Vec::new();
    if n >= 3 {
        let g1 = tape.slice_cols(g_hat, 0, (n - 2) * b)?;
        let u1 = u_all.map(|u| tape.slice_cols(u, b, (n - 2) * b)).transpose()?;
        let g2 = mv.step(tape, g1, u1)?;
        let s2 = mv.decode(tape, g2)?;
        ae_terms.push(masked_error(tape, s2, cat_cols(&batch.states[2..]), &cat_cols(&batch.state_masks[2..]), true)?);
    }

    // closed loop from the first state; observables are never re-encoded
    let mut g = tape.slice_cols(g_all, 0, b)?;
    let mut est = tape.leaf(batch.states[0].clone());
    let mut pred_terms = Vec::with_capacity(n - 1);
    for h in 1..n {
        let u = mv.input_map(tape, est)?;
        g = mv.step(tape, g, u)?;
        let dec = mv.decode(tape, g)?;
        let pose = tape.slice_rows(dec, 0, POSE_DIM)?;
        let t = h + ts - 1;
        pred_terms.push(masked_error(tape, pose, batch.poses[t].clone(), &batch.pose_masks[t], false)?);
        ae_terms.push(masked_error(tape, dec, batch.states[h].clone(), &batch.state_masks[h], true)?);
        est = if ts > 1 {
            let tail = tape.slice_rows(est, 0, sd - POSE_DIM)?;
            tape.concat_rows(&[pose, tail])?
        } else {
            pose
        };
    }

    let mut rp = vec![recon];
    rp.extend(pred_terms);
    let recon_pred = add_all(tape, &rp)?;
    let recon_pred = tape.scale(recon_pred, inv_b);
    let fit = tape.scale(fit, inv_b);
    let ae = add_all(tape, &ae_terms)?;
    let ae = tape.scale(ae, inv_b);
    let input = match u_all {
        Some(u) => {
            let a = tape.abs(u);
            let s = tape.sum(a);
            tape.scale(s, inv_b)
        }
        None => tape.scalar(0.0),
    };
    let rank = tape.nuclear_norm(mv.k)?;

    let parts = [
        recon_pred,
        tape.scale(fit, weights.fit),
        tape.scale(ae, weights.ae),
        tape.scale(input, weights.input),
        tape.scale(rank, weights.rank),
    ];
    let total = add_all(tape, &parts)?;
    Ok(LossTerms { recon_pred, fit, ae, input, rank, total })
}

/// Loss values of `model` on a set of equal-length trajectories.
pub fn evaluate_losses(
    model: &KoopmanModel,
    trajectories: &[&Trajectory],
    weights: &LossWeights,
) -> Result<(LossBreakdown, usize), TrainError> {
    let batch = Batch::new(trajectories, model.state_delays())?;
    let mut tape = Tape::new();
    let vars = tape.register(&model.parameters());
    let mv = ModelVars::bind(model, &vars)?;
    let terms = build_objective(&mut tape, &mv, &batch, weights)?;
    Ok((terms.values(&tape), batch.invisible_prediction))
}

/// Reconstruction plus closed-loop prediction error. The flag is set when
/// the prediction window has no visible frame.
pub fn recon_pred_loss(model: &KoopmanModel, trajectory: &Trajectory) -> Result<(f64, bool), TrainError> {
    let (l, invisible) = evaluate_losses(model, &[trajectory], &LossWeights::zero())?;
    Ok((l.recon_pred, invisible > 0))
}

pub fn fit_loss(model: &KoopmanModel, trajectory: &Trajectory) -> Result<f64, TrainError> {
    Ok(evaluate_losses(model, &[trajectory], &LossWeights::zero())?.0.fit)
}

pub fn ae_loss(model: &KoopmanModel, trajectory: &Trajectory) -> Result<f64, TrainError> {
    Ok(evaluate_losses(model, &[trajectory], &LossWeights::zero())?.0.ae)
}

/// `sum |u|` over every entry.
pub fn input_sparsity(inputs: &[Vec<f64>]) -> f64 {
    inputs.iter().flatten().map(|v| v.abs()).sum()
}

pub fn rank_penalty(k: &Matrix) -> Result<f64, TrainError> {
    Ok(nuclear_norm(k)?.value)
}

/// Weighted objective averaged over `trajectories`.
pub fn total_objective(
    model: &KoopmanModel,
    trajectories: &[&Trajectory],
    weights: &LossWeights,
) -> Result<f64, TrainError> {
    Ok(evaluate_losses(model, trajectories, weights)?.0.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use crate::koopman::{Decoder, Encoder, KoopmanConfig};
    use crate::numerics::{lstsq, svd};
    use crate::trajgen::{Pose, Scenario, Split};

    fn traj(len: usize, f: impl Fn(usize) -> [f64; 4]) -> Trajectory {
        Trajectory {
            scenario: Scenario::Circular,
            split: Split::Train,
            seed: 0,
            input_len: 3,
            poses: (0..len).map(|i| Pose::from(f(i))).collect(),
            visible: vec![true; len],
            bounces: Vec::new(),
        }
    }

    fn circle(len: usize, phase: f64) -> Trajectory {
        traj(len, |i| {
            let a = 0.35 * i as f64 + phase;
            [0.5 * a.cos(), 0.4 * a.sin(), 0.0, 0.0]
        })
    }

    fn tiny(inputs: bool, seed: u64) -> KoopmanModel {
        let cfg = KoopmanConfig { state_delays: 2, obs_dim: 4, input_dim: 2, hidden: 6, depth: 4, inputs_enabled: inputs };
        let mut m = KoopmanModel::new(cfg, seed).unwrap();
        m.k = Matrix::from_fn(4, 4, |i, j| {
            if i == j { 0.95 - 0.2 * i as f64 } else { 0.05 * (((i * 4 + j) as f64) * 1.7 + seed as f64).sin() }
        });
        m
    }

    #[test]
    fn all_invisible_is_zero_and_flagged() {
        let mut t = circle(8, 0.0);
        t.visible = vec![false; 8];
        let (l, flagged) = recon_pred_loss(&tiny(false, 1), &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(flagged);
    }

    #[test]
    fn perfect_model_on_own_output_is_zero() {
        // With zero biases the origin is a fixed point of every map, so the
        // rollout from rest is reproduced exactly.
        let m = tiny(true, 2);
        let rest = [Pose::default(); 2];
        let r = m.rollout(&rest, 6, None).unwrap();
        let mut poses = rest.to_vec();
        poses.extend(r.poses);
        let t = traj(poses.len(), |i| poses[i].to_array());
        let w = LossWeights { ae: 1.0, fit: 1.0, input: 1.0, rank: 0.0 };
        let (l, _) = evaluate_losses(&m, &[&t], &w).unwrap();
        assert_eq!((l.recon_pred, l.fit, l.ae, l.input, l.total), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn two_step_toy_matches_closed_form() {
        // T_s = 1, M = 1, single affine layer per map
        let cfg = KoopmanConfig { state_delays: 1, obs_dim: 1, input_dim: 0, hidden: 1, depth: 1, inputs_enabled: false };
        let mut m = KoopmanModel::new(cfg, 0).unwrap();
        let we = [0.5, -0.25, 0.0, 0.0];
        let wd = [0.8, -0.6, 0.1, 0.2];
        let (be, k) = (0.1, 0.7);
        if let Encoder::Mlp(e) = &mut m.encoder {
            e.layers[0].weight = Matrix::from_vec(1, 4, we.to_vec()).unwrap();
            e.layers[0].bias = vec![be];
        }
        if let Decoder::Mlp(d) = &mut m.decoder {
            d.layers[0].weight = Matrix::column(&wd);
            d.layers[0].bias = vec![0.0; 4];
        }
        m.k = Matrix::filled(1, 1, k);
        let p0 = [0.3, 0.2, 0.0, 0.0];
        let p1 = [0.1, 0.4, 0.05, 0.0];
        let t = traj(2, |i| if i == 0 { p0 } else { p1 });

        let enc = |p: &[f64; 4]| we.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + be;
        let dec = |g: f64| wd.map(|w| (w * g).tanh());
        let sq = |a: [f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let recon = sq(dec(enc(&p0)), &p0) + sq(dec(enc(&p1)), &p1);
        let pred = sq(dec(k * enc(&p0)), &p1);
        let fit = (enc(&p1) - k * enc(&p0)).powi(2);
        let ae: f64 = dec(k * enc(&p0)).iter().zip(&p1).map(|(a, b)| (a - b).abs()).sum();

        let (l, _) = evaluate_losses(&m, &[&t], &LossWeights::zero()).unwrap();
        assert!((l.recon_pred - (recon + pred)).abs() < 1e-14);
        assert!((l.fit - fit).abs() < 1e-14);
        assert!((l.ae - ae).abs() < 1e-14);
    }

    #[test]
    fn least_squares_k_zeroes_fit() {
        let cfg = KoopmanConfig { state_delays: 1, obs_dim: 8, input_dim: 0, hidden: 10, depth: 3, inputs_enabled: false };
        let mut m = KoopmanModel::new(cfg, 5).unwrap();
        let t = circle(6, 0.2);
        let states = Matrix::from_fn(4, 6, |r, c| t.poses[c].to_array()[r]);
        let g = m.encode_batch(&states);
        let (x, y) = (g.slice_cols(0, 5), g.slice_cols(1, 5));
        let sol = lstsq(&x.transpose(), &y.transpose()).unwrap();
        m.k = sol.x.transpose();
        assert!(fit_loss(&m, &t).unwrap() < 1e-10);
    }

    #[test]
    fn zero_k_fit_is_sum_of_squares() {
        let mut m = tiny(false, 3);
        m.k = Matrix::zeros(4, 4);
        let t = circle(7, 0.0);
        let states = Matrix::from_fn(8, 6, |r, c| stack_state(&t.poses[c..c + 2])[r]);
        let g = m.encode_batch(&states);
        let expect: f64 = g.slice_cols(1, 5).as_slice().iter().map(|v| v * v).sum();
        assert!((fit_loss(&m, &t).unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn fit_scales_quadratically() {
        let mut m = tiny(true, 4);
        let t = circle(7, 0.4);
        let base = fit_loss(&m, &t).unwrap();
        // scaling the encoder output layer scales every observable
        if let Encoder::Mlp(e) = &mut m.encoder {
            let last = e.layers.last_mut().unwrap();
            last.weight = last.weight.scale(3.0);
            last.bias.iter_mut().for_each(|b| *b *= 3.0);
        }
        m.k_u = m.k_u.scale(3.0);
        assert!((fit_loss(&m, &t).unwrap() - 9.0 * base).abs() < 1e-10 * base.max(1.0));
    }

    #[test]
    fn sparsity_and_rank_helpers() {
        assert_eq!(input_sparsity(&vec![vec![0.0; 3]; 4]), 0.0);
        assert_eq!(input_sparsity(&[vec![0.0, -0.6, 0.0]]), 0.6);
        let u = vec![vec![0.1, -0.2], vec![0.3, 0.4]];
        assert!((input_sparsity(&u) - 1.0).abs() < 1e-15);
        assert!((rank_penalty(&Matrix::diag(&[3.0, 4.0])).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_total_is_recon_pred() {
        let m = tiny(true, 6);
        let t1 = circle(9, 0.0);
        let t2 = circle(9, 1.0);
        let (l, _) = evaluate_losses(&m, &[&t1, &t2], &LossWeights::zero()).unwrap();
        assert_eq!(l.total, l.recon_pred);
        for v in [l.recon_pred, l.fit, l.ae, l.input, l.rank] {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for inputs in [false, true] {
            let m = tiny(inputs, 7);
            let mut t1 = circle(7, 0.3);
            t1.visible[4] = false;
            let t2 = circle(7, 2.0);
            let batch = Batch::new(&[&t1, &t2], 2).unwrap();
            let w = LossWeights { ae: 0.3, fit: 0.7, input: 0.2, rank: 0.05 };
            let sig = svd(&m.k).unwrap().sigma;
            assert!(sig.windows(2).all(|p| p[0] - p[1] > 1e-6) && sig[3] > 1e-6);
            let report = grad_check(
                &m.parameters(),
                |tape, vars| {
                    let mv = ModelVars::bind(&m, vars).map_err(|e| AutodiffError::Invalid { op: "bind", msg: e.to_string() })?;
                    Ok(build_objective(tape, &mv, &batch, &w)?.total)
                },
                GradCheckOptions::default(),
                &[],
            )
            .unwrap();
            assert!(report.passed(), "{report:#?}");
        }
    }
}
