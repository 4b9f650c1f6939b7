//! Gaussian motion model: density oracle, propagation invariants, goal ranking.

use hit_core::behavior::{
    observation_density, propagate_gaussian, sequence_likelihood, BehaviorParams, GaussianBelief,
    GoalSpec, Matrix, Vector,
};
use hit_core::tree::IntentionId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn factor(a: f64, b: f64, c: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[a, 0.0, b, c])
}

/// `L L^T` is PSD by construction.
fn psd2(a: f64, b: f64, c: f64) -> Matrix {
    let l = factor(a, b, c);
    &l * l.transpose()
}

/// Bivariate normal density written out with the explicit 2x2 inverse.
fn normal_pdf_2d(mean: [f64; 2], cov: [[f64; 2]; 2], x: [f64; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let d = [x[0] - mean[0], x[1] - mean[1]];
    let q =
        d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

proptest! {
    #[test]
    fn density_matches_quadratic_form(
        mx in -1.0..1.0f64, my in -1.0..1.0f64,
        a in 0.05..0.5f64, b in -0.3..0.3f64, c in 0.05..0.5f64,
        ox in -1.0..1.0f64, oy in -1.0..1.0f64,
    ) {
        let cov = psd2(a, b, c);
        let belief = GaussianBelief {
            mean: Vector::from_column_slice(&[mx, my]),
            cov: cov.clone(),
            cross_cov_goal: Matrix::zeros(2, 2),
        };
        let got = observation_density(&belief, &Vector::from_column_slice(&[ox, oy]), 0.0).unwrap();
        let want = normal_pdf_2d(
            [mx, my],
            [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
            [ox, oy],
        );
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn propagation_keeps_covariance_symmetric_psd(
        alpha in 0.0..=1.0f64,
        s in (0.0..0.5f64, -0.5..0.5f64, 0.0..0.5f64),
        g in (0.0..0.5f64, -0.5..0.5f64, 0.0..0.5f64),
        w in (0.0..0.5f64, -0.5..0.5f64, 0.0..0.5f64),
        rho in -1.0..=1.0f64,
    ) {
        let ls = factor(s.0, s.1, s.2);
        let lg = factor(g.0, g.1, g.2);
        let cov = &ls * ls.transpose();
        let goal_cov = &lg * lg.transpose();
        // X = Ls z1, G = Lg (rho z1 + sqrt(1 - rho^2) z2) gives Cov(X, G) = rho Ls Lg^T.
        let cross = &ls * lg.transpose() * rho;
        let belief = GaussianBelief {
            mean: Vector::from_column_slice(&[0.1, 0.2]),
            cov,
            cross_cov_goal: cross,
        };
        let goal = GoalSpec {
            kind: hit_core::behavior::GoalKind::StaticRegion,
            mean: Vector::from_column_slice(&[0.5, -0.3]),
            cov: goal_cov,
            intention: IntentionId(0),
        };
        let out = propagate_gaussian(&belief, &goal, alpha, &psd2(w.0, w.1, w.2)).unwrap();
        prop_assert_eq!(out.cov[(0, 1)], out.cov[(1, 0)]);
        let eig = out.cov.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|v| *v >= -1e-15), "{eig:?}");
    }
}

/// Goals share one distance from the start, so every goal sees the same
/// step gain and process noise and the predicted covariances are equal.
#[test]
fn straight_motion_ranks_the_true_goal_first() {
    let params = BehaviorParams::default();
    for speed in [0.1, 0.5] {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = Vector::from_column_slice(&[
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.3..0.0),
            ]);
            let radius = rng.random_range(0.2..0.9);
            let goals: Vec<Vector> = (0..5)
                .map(|_| {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    &start + Vector::from_column_slice(&[a.cos(), a.sin()]) * radius
                })
                .collect();
            let k = rng.random_range(0..goals.len());
            let dir = (&goals[k] - &start).normalize();
            let obs = vec![&start + dir * (speed * params.dt)];
            let lik: Vec<f64> = goals
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let spec = GoalSpec::fixed(IntentionId(i), g.clone(), params.goal_var);
                    sequence_likelihood(&start, &obs, &spec, speed, &params).unwrap()
                })
                .collect();
            for (j, l) in lik.iter().enumerate() {
                assert!(
                    lik[k] >= *l,
                    "speed {speed} seed {seed}: goal {k} {} < goal {j} {l}",
                    lik[k]
                );
            }
        }
    }
}
