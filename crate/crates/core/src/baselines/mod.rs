//! Classical operator identification: DMD on raw delayed states and EDMD
//! on a fixed dictionary of them.

mod dictionary;

pub use dictionary::Dictionary;

use thiserror::Error;

use crate::koopman::{stack_state, KoopmanError, KoopmanModel, POSE_DIM};
use crate::numerics::{lstsq, Matrix, NumericsError};
use crate::trajgen::Trajectory;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least {need} snapshot pairs, got {got}")]
    NotEnoughSnapshots { need: usize, got: usize },
    #[error("dictionary has {features} features but only {snapshots} snapshot pairs")]
    DictionaryTooLarge { features: usize, snapshots: usize },
    #[error("snapshot shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
}

/// Consecutive state pairs of every trajectory, as columns of `X` and `Y`.
pub fn snapshot_pairs(trajectories: &[Trajectory], state_delays: usize) -> Result<(Matrix, Matrix), BaselineError> {
    if state_delays == 0 {
        return Err(BaselineError::Shape("state_delays must be at least 1".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in trajectories {
        let states: Vec<Vec<f64>> = t.poses.windows(state_delays).map(stack_state).collect();
        for w in states.windows(2) {
            x.push(w[0].clone());
            y.push(w[1].clone());
        }
    }
    let n = POSE_DIM * state_delays;
    Ok((Matrix::from_fn(n, x.len(), |i, j| x[j][i]), Matrix::from_fn(n, y.len(), |i, j| y[j][i])))
}

#[derive(Debug, Clone)]
pub struct OperatorFit {
    pub k: Matrix,
    /// `||Y - K X||_F` in the fitted coordinates.
    pub residual: f64,
    pub rank: usize,
    /// The snapshot matrix was rank deficient; `k` is the minimum-norm
    /// solution.
    pub rank_deficient: bool,
}

/// `argmin_K ||Y - K X||_F`.
pub fn fit_operator(x: &Matrix, y: &Matrix) -> Result<OperatorFit, BaselineError> {
    if x.cols() != y.cols() {
        return Err(BaselineError::Shape(format!("X has {} columns, Y has {}", x.cols(), y.cols())));
    }
    let sol = lstsq(&x.transpose(), &y.transpose())?;
    let k = sol.x.transpose();
    if sol.rank_deficient {
        log::warn!("snapshot matrix has rank {} < {}; using the minimum-norm operator", sol.rank, x.rows());
    }
    Ok(OperatorFit { residual: residual(&k, x, y)?, k, rank: sol.rank, rank_deficient: sol.rank_deficient })
}

pub fn residual(k: &Matrix, x: &Matrix, y: &Matrix) -> Result<f64, BaselineError> {
    Ok(y.sub(&k.matmul(x)?)?.frobenius_norm())
}

/// DMD on snapshot columns.
pub fn dmd_from_snapshots(x: &Matrix, y: &Matrix) -> Result<OperatorFit, BaselineError> {
    if x.cols() < x.rows() {
        return Err(BaselineError::NotEnoughSnapshots { need: x.rows(), got: x.cols() });
    }
    fit_operator(x, y)
}

/// DMD on the raw delayed states of `trajectories`.
pub fn dmd_fit(trajectories: &[Trajectory], state_delays: usize) -> Result<OperatorFit, BaselineError> {
    let (x, y) = snapshot_pairs(trajectories, state_delays)?;
    dmd_from_snapshots(&x, &y)
}

#[derive(Debug, Clone)]
pub struct EdmdFit {
    pub dictionary: Dictionary,
    pub state_dim: usize,
    pub fit: OperatorFit,
    /// Linear map from features back to the state.
    pub recovery: Matrix,
    /// `||Y - C K Psi(X)||_F` over states.
    pub state_residual: f64,
}

impl EdmdFit {
    /// One-step prediction of every column of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, BaselineError> {
        Ok(self.recovery.matmul(&self.fit.k.matmul(&self.dictionary.features(x))?)?)
    }

    /// The fit as a model file with a dictionary encoder.
    pub fn to_model(&self) -> Result<KoopmanModel, BaselineError> {
        if self.state_dim % POSE_DIM != 0 {
            return Err(BaselineError::Shape(format!("state dimension {} is not a whole number of poses", self.state_dim)));
        }
        Ok(KoopmanModel::from_dictionary(self.dictionary.clone(), self.state_dim / POSE_DIM, self.fit.k.clone())?)
    }
}

pub fn edmd_from_snapshots(x: &Matrix, y: &Matrix, dictionary: &Dictionary) -> Result<EdmdFit, BaselineError> {
    let features = dictionary.len(x.rows());
    if features > x.cols() {
        return Err(BaselineError::DictionaryTooLarge { features, snapshots: x.cols() });
    }
    let (px, py) = (dictionary.features(x), dictionary.features(y));
    let fit = fit_operator(&px, &py)?;
    let recovery = dictionary.recovery(x.rows());
    let state_residual = y.sub(&recovery.matmul(&fit.k.matmul(&px)?)?)?.frobenius_norm();
    Ok(EdmdFit { dictionary: dictionary.clone(), state_dim: x.rows(), fit, recovery, state_residual })
}

pub fn edmd_fit(trajectories: &[Trajectory], state_delays: usize, dictionary: &Dictionary) -> Result<EdmdFit, BaselineError> {
    let (x, y) = snapshot_pairs(trajectories, state_delays)?;
    edmd_from_snapshots(&x, &y, dictionary)
}

/// Raw-state DMD exported as an identity-dictionary model.
pub fn dmd_model(trajectories: &[Trajectory], state_delays: usize) -> Result<KoopmanModel, BaselineError> {
    let fit = dmd_fit(trajectories, state_delays)?;
    Ok(KoopmanModel::from_dictionary(Dictionary::identity(), state_delays, fit.k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::eig;
    use crate::trajgen::{gen_circular, CircularParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random matrix rescaled to the given spectral radius.
    fn stable(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let r = eig(&a).unwrap().values[0].norm();
        a.scale(rho / r)
    }

    fn simulate(a: &Matrix, pairs: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
        let n = a.rows();
        let mut cols_x = Vec::new();
        let mut cols_y = Vec::new();
        // restart often so the snapshots do not all decay to zero
        let mut s: Vec<f64> = Vec::new();
        for i in 0..pairs {
            if i % 10 == 0 {
                s = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            }
            let next = a.apply(&s);
            cols_x.push(s.clone());
            cols_y.push(next.clone());
            s = next;
        }
        (Matrix::from_fn(n, pairs, |i, j| cols_x[j][i]), Matrix::from_fn(n, pairs, |i, j| cols_y[j][i]))
    }

    #[test]
    fn recovers_a_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = stable(8, 0.9, &mut rng);
        let (x, y) = simulate(&a, 500, &mut rng);
        let fit = dmd_from_snapshots(&x, &y).unwrap();
        assert!(fit.k.sub(&a).unwrap().frobenius_norm() < 1e-6);
        assert!(!fit.rank_deficient);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let p = CircularParams { x0: 0.2, y0: -0.1, radius: 0.0, angular_step: 0.3 };
        let trajs: Vec<_> = (0..3).map(|s| gen_circular(&p, 0.0, s).unwrap()).collect();
        let fit = dmd_fit(&trajs, 1).unwrap();
        assert!(fit.rank_deficient);
        let c = [0.2, -0.1, 0.0, 0.0];
        let out = fit.k.apply(&c);
        for (a, b) in out.iter().zip(c) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn circle_gives_a_unit_rotation_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let omega = 0.35;
        let trajs: Vec<_> = (0..6)
            .map(|s| {
                let p = CircularParams { x0: rng.gen_range(-0.3..0.3), y0: rng.gen_range(-0.3..0.3), radius: 0.3, angular_step: omega };
                gen_circular(&p, 0.0, s).unwrap()
            })
            .collect();
        let fit = dmd_fit(&trajs, 3).unwrap();
        let e = eig(&fit.k).unwrap();
        let pair = (0..e.values.len()).find(|&j| e.partner(j).is_some()).unwrap();
        let l = e.values[pair];
        assert!((l.norm() - 1.0).abs() < 1e-3);
        assert!((l.arg().abs() - omega).abs() < 1e-6);
    }

    #[test]
    fn identity_dictionary_matches_dmd_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = stable(6, 0.8, &mut rng);
        let (x, y) = simulate(&a, 60, &mut rng);
        let dmd = dmd_from_snapshots(&x, &y).unwrap();
        let edmd = edmd_from_snapshots(&x, &y, &Dictionary::identity()).unwrap();
        assert_eq!(dmd.k, edmd.fit.k);
    }

    #[test]
    fn quadratic_map_is_captured_by_degree_two() {
        // x1' = 0.9 x1,  x2' = 0.5 x2 + 0.3 x1^2
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let x = Matrix::from_fn(2, n, |i, j| pts[j][i]);
        let y = Matrix::from_fn(2, n, |i, j| if i == 0 { 0.9 * pts[j][0] } else { 0.5 * pts[j][1] + 0.3 * pts[j][0] * pts[j][0] });
        let quad = edmd_from_snapshots(&x, &y, &Dictionary::polynomial(2)).unwrap();
        assert!(quad.state_residual < 1e-8);
        let lin = edmd_from_snapshots(&x, &y, &Dictionary::identity()).unwrap();
        assert!(lin.state_residual > 1e-2);
    }

    #[test]
    fn nested_dictionaries_never_fit_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 150;
        let x = Matrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let y = x.map(|v| (1.7 * v).sin());
        let mut prev = f64::INFINITY;
        for d in 1..=4 {
            let r = edmd_from_snapshots(&x, &y, &Dictionary::polynomial(d)).unwrap().state_residual;
            assert!(r <= prev + 1e-10, "degree {d}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn perturbing_k_never_helps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Matrix::from_fn(5, 40, |_, _| rng.gen_range(-1.0..1.0));
        let y = Matrix::from_fn(5, 40, |_, _| rng.gen_range(-1.0..1.0));
        let fit = dmd_from_snapshots(&x, &y).unwrap();
        for _ in 0..50 {
            let d = Matrix::from_fn(5, 5, |_, _| rng.gen_range(-1e-3..1e-3));
            assert!(residual(&fit.k.add(&d).unwrap(), &x, &y).unwrap() >= fit.residual);
        }
    }

    #[test]
    fn too_few_snapshots() {
        let x = Matrix::zeros(4, 3);
        assert!(matches!(dmd_from_snapshots(&x, &x), Err(BaselineError::NotEnoughSnapshots { need: 4, got: 3 })));
        let e = edmd_from_snapshots(&Matrix::zeros(4, 10), &Matrix::zeros(4, 10), &Dictionary::default());
        assert!(matches!(e, Err(BaselineError::DictionaryTooLarge { .. })));
    }

    #[test]
    fn exported_model_predicts_like_the_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trajs: Vec<_> = (0..20)
            .map(|s| {
                let p = CircularParams { x0: rng.gen_range(-0.3..0.3), y0: 0.0, radius: 0.2, angular_step: rng.gen_range(0.3..0.4) };
                gen_circular(&p, 0.0, s).unwrap()
            })
            .collect();
        let fit = edmd_fit(&trajs, 2, &Dictionary::default()).unwrap();
        let model = fit.to_model().unwrap();
        let back = KoopmanModel::from_json(&model.to_json()).unwrap();
        let (x, _) = snapshot_pairs(&trajs[..1], 2).unwrap();
        let want = fit.predict(&x).unwrap();
        let g = back.step_batch(&back.encode_batch(&x), &Matrix::zeros(0, x.cols()));
        let got = back.decode_batch(&g);
        assert!(got.sub(&want.map(|v| v.clamp(-1.0, 1.0))).unwrap().max_abs() < 1e-12);
    }
}
