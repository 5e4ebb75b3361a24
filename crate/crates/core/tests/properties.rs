use kidd::analysis::{self, Edit, Manipulation, Ranking};
use kidd::baselines::{dmd_from_snapshots, edmd_from_snapshots, residual, Dictionary};
use kidd::koopman::{KoopmanConfig, KoopmanModel};
use kidd::metrics::{pose_mae, pose_mse};
use kidd::numerics::{eig, nuclear_norm, svd, Complex64, Matrix};
use kidd::trajgen::{collision_poses, CollisionParams, Pose};
use proptest::prelude::*;

fn matrix(n: usize, m: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0f64..2.0, n * m).prop_map(move |v| Matrix::from_vec(n, m, v).unwrap())
}

fn square(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max).prop_flat_map(|n| matrix(n, n))
}

fn pose() -> impl Strategy<Value = Pose> {
    proptest::array::uniform4(-0.99f64..0.99).prop_map(Pose::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eig_residual_is_small(a in square(64)) {
        let e = eig(&a).unwrap();
        let norm = svd(&a).unwrap().sigma.first().copied().unwrap_or(0.0);
        let n = a.rows();
        for j in 0..n {
            let v = e.vector(j);
            let vnorm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((vnorm - 1.0).abs() < 1e-10);
            let mut res = 0.0;
            for i in 0..n {
                let mut av = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    av += a[(i, k)] * v[k];
                }
                res += (av - e.values[j] * v[i]).norm_sqr();
            }
            prop_assert!(res.sqrt() <= 1e-8 * norm.max(f64::MIN_POSITIVE), "residual {} at n={}", res.sqrt(), n);
            if let Some(p) = e.partner(j) {
                prop_assert!((e.values[j] - e.values[p].conj()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn conjugate_closure_reconstructs(a in square(24)) {
        let s = analysis::spectrum(&a).unwrap();
        prop_assume!(s.condition_number < 1e6);
        let r = s.reconstruct(&s.eigenvalues).unwrap();
        prop_assert!(r.k.sub(&a).unwrap().frobenius_norm() < 1e-6);
        prop_assert!(r.imag_leak < 1e-9 * a.max_abs().max(1.0));
    }

    #[test]
    fn nuclear_norm_bounds_and_homogeneity(a in (1usize..12, 1usize..12).prop_flat_map(|(n, m)| matrix(n, m)), c in -5.0f64..5.0) {
        let nn = nuclear_norm(&a).unwrap().value;
        let s1 = svd(&a).unwrap().sigma[0];
        prop_assert!(nn >= s1 - 1e-12 && s1 >= 0.0);
        let scaled = nuclear_norm(&a.scale(c)).unwrap().value;
        prop_assert!((scaled - c.abs() * nn).abs() <= 1e-10 * (1.0 + nn * c.abs()));
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal(a in (1usize..10, 1usize..10).prop_flat_map(|(n, m)| matrix(n, m))) {
        let s = svd(&a).unwrap();
        let fro = a.frobenius_norm();
        prop_assert!(s.reconstruct().sub(&a).unwrap().frobenius_norm() <= 1e-8 * fro.max(1e-300) + 1e-14);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        let vtv = s.v.transpose().matmul(&s.v).unwrap();
        prop_assert!(utu.sub(&Matrix::identity(utu.rows())).unwrap().max_abs() < 1e-8);
        prop_assert!(vtv.sub(&Matrix::identity(vtv.rows())).unwrap().max_abs() < 1e-8);
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reductions_and_edits_stay_real_and_keep_spectra(a in square(10), keep in 1usize..10) {
        let s = analysis::spectrum(&a).unwrap();
        prop_assume!(s.condition_number < 1e6);
        let keep = keep.min(a.rows());
        let r = analysis::reduce_model(&a, keep, &Ranking::Magnitude).unwrap();
        let after = eig(&r.k).unwrap().values;
        let mut want: Vec<Complex64> = r.kept.iter().map(|&i| s.eigenvalues[i]).collect();
        want.resize(a.rows(), Complex64::new(0.0, 0.0));
        prop_assert!(analysis::eigenvalue_distance(&after, &want) < 1e-6);

        let edit = Manipulation { pair: 0, radius: Some(Edit::Scale(0.5)), angle: None };
        let m = analysis::manipulate(&a, &edit).unwrap();
        let after = eig(&m.k).unwrap().values;
        prop_assert!(analysis::eigenvalue_distance(&after, &m.eigenvalues) < 1e-6);
    }

    #[test]
    fn spectra_distance_is_a_metric(a in matrix(5, 5), b in matrix(5, 5), c in matrix(5, 5)) {
        let ab = analysis::spectra_distance(&a, &b).unwrap();
        let ba = analysis::spectra_distance(&b, &a).unwrap();
        let bc = analysis::spectra_distance(&b, &c).unwrap();
        let ac = analysis::spectra_distance(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
        prop_assert!(ac <= ab + bc + 1e-10);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn dmd_is_the_least_squares_minimum(x in matrix(4, 30), y in matrix(4, 30), d in matrix(4, 4)) {
        let fit = dmd_from_snapshots(&x, &y).unwrap();
        let worse = residual(&fit.k.add(&d.scale(1e-3)).unwrap(), &x, &y).unwrap();
        prop_assert!(worse >= fit.residual - 1e-12);
        let edmd = edmd_from_snapshots(&x, &y, &Dictionary::identity()).unwrap();
        prop_assert_eq!(edmd.fit.k, fit.k);
    }

    #[test]
    fn mse_mae_relations(a in proptest::collection::vec(pose(), 1..20), seed in 0u64..1000) {
        let b: Vec<Pose> = a.iter().enumerate().map(|(i, p)| {
            let mut q = p.to_array();
            q[(i + seed as usize) % 4] += ((seed + i as u64) % 7) as f64 * 0.01;
            Pose::from(q)
        }).collect();
        let vis: Vec<bool> = (0..a.len()).map(|i| (i as u64 + seed) % 3 != 0).collect();
        let mse = pose_mse(&a, &b, &vis);
        let mae = pose_mae(&a, &b, &vis);
        for (m, e) in mae.per_step.iter().zip(&mse.per_step) {
            if let (Some(m), Some(e)) = (m, e) {
                prop_assert!(*e >= 0.0);
                prop_assert!(*m <= (e * 4.0).sqrt() + 1e-15);
            }
        }
        prop_assert_eq!(pose_mse(&a, &a, &vis).aggregate.unwrap_or(0.0), 0.0);
    }

    #[test]
    fn collision_restitution_is_exact(x0 in -0.85f64..0.85, y0 in -0.85f64..0.85, angle in 0.0f64..std::f64::consts::TAU) {
        let (poses, bounces) = collision_poses(&CollisionParams { x0, y0, angle, speed: 0.3 }, 40, 0.9);
        for b in bounces {
            let r = b.wall.restitution();
            prop_assert!(r == 0.8 || r == 1.25);
            prop_assert_eq!(b.post, -r * b.pre);
            prop_assert!((b.post.abs() / b.pre.abs() - r).abs() <= 2.0 * f64::EPSILON);
        }
        prop_assert!(poses.iter().all(|p| p.to_array().iter().all(|v| v.abs() < 1.0)));
    }

    #[test]
    fn rollout_observables_are_linear_and_poses_bounded(seed in 0u64..200, window in proptest::collection::vec(pose(), 2)) {
        let cfg = KoopmanConfig { state_delays: 2, obs_dim: 5, input_dim: 2, hidden: 8, depth: 3, inputs_enabled: true };
        let mut m = KoopmanModel::new(cfg, seed).unwrap();
        m.k = Matrix::from_fn(5, 5, |i, j| if i == j { 1.02 } else { 0.1 * ((i * 5 + j + seed as usize) % 3) as f64 - 0.1 });
        let r = m.rollout(&window, 30, None).unwrap();
        for t in 0..30 {
            let next = m.step(&r.observables[t], &r.inputs[t]);
            for (a, b) in next.iter().zip(&r.observables[t + 1]) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        prop_assert!(r.poses.iter().all(|p| p.to_array().iter().all(|v| v.abs() <= 1.0)));
    }
}
