use ive_core::linalg::{complex_normal_mat, max_abs, re, CMat, C64};
use ive_core::score::{empirical_nu, normalize, CellDensity, GaussianModelState};
use ive_core::{SourceModel, TriProduct};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_models() -> Vec<SourceModel> {
    vec![
        SourceModel::Rati,
        SourceModel::Gauss { mu: None },
        SourceModel::GaussCirc { mu: None },
        SourceModel::GaussTri { product: TriProduct::Exact },
        SourceModel::GaussTri { product: TriProduct::Banded(2) },
    ]
}

/// Correlated, mildly non-circular samples.
fn correlated(k: usize, n: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = CMat::identity(k, k) + complex_normal_mat(k, k, &mut rng) * re(0.3);
    &mix * complex_normal_mat(k, n, &mut rng).map(|z| z + z.conj() * 0.3)
}

fn variances(s: &CMat) -> Vec<f64> {
    s.row_iter().map(|r| r.norm_squared() / s.ncols() as f64).collect()
}

/// Central-difference Wirtinger derivatives of `phi_k` at column `j`.
fn fd_derivatives(density: &dyn CellDensity, x: &CMat, k: usize, j: usize, h: f64) -> (C64, C64) {
    let col = x.column(j).into_owned();
    let phi_at = |dir: C64| {
        let mut p = CMat::from_columns(&[col.clone()]);
        p[(k, 0)] += dir * h;
        let up = density.score(&p)[(k, 0)];
        p[(k, 0)] -= dir * (2.0 * h);
        (up - density.score(&p)[(k, 0)]) / (2.0 * h)
    };
    let dx = phi_at(re(1.0));
    let dy = phi_at(C64::i());
    // d/ds^* = (d/dx + i d/dy) / 2, d/ds = (d/dx - i d/dy) / 2
    ((dx + C64::i() * dy) * 0.5, (dx - C64::i() * dy) * 0.5)
}

#[test]
fn analytic_score_derivatives_match_finite_differences() {
    for (m, model) in all_models().iter().enumerate() {
        for k_dim in [1usize, 3] {
            let s = correlated(k_dim, 200, 10 + m as u64);
            let sigma2 = variances(&s);
            let density = model.fit(&s, &sigma2).unwrap();
            let x = normalize(&s, &sigma2);
            let (dconj, dplain) = density.score_derivatives(&x);
            for j in 0..10 {
                for k in 0..k_dim {
                    let (fc, fp) = fd_derivatives(density.as_ref(), &x, k, j, 1e-6);
                    let scale = dconj[(k, j)].norm().max(1e-3);
                    assert!((fc - dconj[(k, j)]).norm() < 1e-6 * scale.max(1.0), "{} d/ds*: {fc} vs {}", model.name(), dconj[(k, j)]);
                    assert!((fp - dplain[(k, j)]).norm() < 1e-6 * dplain[(k, j)].norm().max(1.0), "{} d/ds: {fp} vs {}", model.name(), dplain[(k, j)]);
                }
            }
        }
    }
}

#[test]
fn score_is_negative_conjugate_gradient_of_log_density() {
    for model in all_models() {
        let s = correlated(3, 50, 3);
        let sigma2 = variances(&s);
        let density = model.fit(&s, &sigma2).unwrap();
        let x = normalize(&s, &sigma2);
        let phi = density.score(&x);
        let h = 1e-6;
        for j in 0..5 {
            for k in 0..3 {
                let mut p = CMat::from_columns(&[x.column(j).into_owned()]);
                let mut probe = |dir: C64| {
                    p[(k, 0)] += dir * h;
                    let up = density.log_density(&p)[0];
                    p[(k, 0)] -= dir * (2.0 * h);
                    let down = density.log_density(&p)[0];
                    p[(k, 0)] += dir * h;
                    (up - down) / (2.0 * h)
                };
                let dx = probe(re(1.0));
                let dy = probe(C64::i());
                // phi_k = -d log f / d s_k = -(d/dx - i d/dy) / 2
                let fd = -(C64::new(dx, 0.0) - C64::i() * dy) * 0.5;
                assert!((fd - phi[(k, j)]).norm() < 1e-6 * phi[(k, j)].norm().max(1.0), "{}: {fd} vs {}", model.name(), phi[(k, j)]);
            }
        }
    }
}

#[test]
fn unit_nu_for_random_gaussian_states() {
    for seed in 0..5 {
        let s = correlated(4, 300, 100 + seed);
        let sigma2 = variances(&s);
        let x = normalize(&s, &sigma2);
        for model in [SourceModel::Gauss { mu: Some(0.0) }, SourceModel::GaussCirc { mu: Some(0.0) }] {
            let density = model.fit(&s, &sigma2).unwrap();
            for nu in empirical_nu(&density.score(&x), &x) {
                assert!((nu - 1.0).norm() < 1e-10, "{}: {nu}", model.name());
            }
            let (nu, _) = density.analytic_stats().unwrap();
            assert!(nu.iter().all(|v| (v - 1.0).norm() == 0.0));
        }
    }
}

#[test]
fn loading_breaks_unit_nu() {
    let s = correlated(3, 300, 7);
    let sigma2 = variances(&s);
    let x = normalize(&s, &sigma2);
    let density = SourceModel::Gauss { mu: Some(0.5) }.fit(&s, &sigma2).unwrap();
    let nu = empirical_nu(&density.score(&x), &x);
    assert!(nu.iter().all(|v| (v - 1.0).norm() > 1e-3));
}

#[test]
fn rho_matches_monte_carlo_derivative_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let k = 3;
    // s = A z + B z^* with circular unit z has covariance A A^H + B B^H and
    // pseudo-covariance A B^T + B A^T
    let a = CMat::identity(k, k) + complex_normal_mat(k, k, &mut rng) * re(0.4);
    let b = complex_normal_mat(k, k, &mut rng) * re(0.2);
    let sigma = &a * a.adjoint() + &b * b.adjoint();
    let gamma = &a * b.transpose() + &b * a.transpose();
    let lambda: Vec<f64> = (0..k).map(|i| 1.0 / sigma[(i, i)].re.sqrt()).collect();
    let state = GaussianModelState::from_parts(sigma, gamma, lambda.clone(), 0.0).unwrap();
    let (_, rho) = state.analytic_stats().unwrap();

    let n = 100_000;
    let z = complex_normal_mat(k, n, &mut rng);
    let mut x = &a * &z + &b * z.conjugate();
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= re(lambda[i]);
    }
    let (dconj, _) = state.score_derivatives(&x);
    for i in 0..k {
        let mc = dconj.row(i).sum() / n as f64;
        assert!((mc - rho[i]).norm() < 0.02 * rho[i].norm(), "k={i}: {mc} vs {}", rho[i]);
    }
}

#[test]
fn circular_gaussian_recorrelation_is_identity() {
    let s = correlated(4, 500, 11);
    let sigma2 = variances(&s);
    let density = SourceModel::GaussCirc { mu: Some(0.0) }.fit(&s, &sigma2).unwrap();
    let x = normalize(&s, &sigma2);
    let phi = density.score(&x);
    // E[phi x^T] over the building samples
    let xi = &phi * x.transpose() / re(500.0);
    assert!(max_abs(&(xi - CMat::identity(4, 4))) < 1e-10);
}

#[test]
fn tridiagonal_model_reduces_to_circular_for_uncorrelated_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // exactly uncorrelated rows with unit power
    let q = complex_normal_mat(64, 4, &mut rng).qr().q();
    let x = q.adjoint() * re(8.0);
    let density = SourceModel::GaussTri { product: TriProduct::Exact }.fit(&x, &[1.0; 4]).unwrap();
    let phi = density.score(&x);
    assert!(max_abs(&(phi - x.conjugate())) < 1e-10);
}
