use std::sync::Arc;

use cbs_core::bench::gaussian_ensemble;
use cbs_core::engine::iteration_noise;
use cbs_core::gaussian::sweep::random_instance;
use cbs_core::gaussian::{continuous_moment_flow, discrete_moment_step, gaussian_weighted_moments, GaussianState, GaussianTarget};
use cbs_core::objectives::{bayes_potential, quadratic, BayesSetup};
use cbs_core::{cbs_step, Mode, Objective};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn reweighted_gaussian_matches_monte_carlo() {
    const N: usize = 1_000_000;
    let (target, state) = random_instance(3, 21).unwrap();
    let beta = 1.0;
    let (m_beta, c_beta) = gaussian_weighted_moments(&state, &target, beta).unwrap();

    let l = state.c.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut samples = Vec::with_capacity(N);
    let mut logw = Vec::with_capacity(N);
    for _ in 0..N {
        let z = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
        let x = &state.m + &l * z;
        logw.push(-beta * target.potential(&x));
        samples.push(x);
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = samples.iter().zip(&w).fold(DVector::zeros(3), |acc, (x, wi)| acc + x * *wi) / total;

    // self-normalized estimator of E[g] and its standard error
    let estimate = |g: &dyn Fn(&DVector<f64>) -> f64| {
        let est = samples.iter().zip(&w).map(|(x, wi)| wi * g(x)).sum::<f64>() / total;
        let var = samples.iter().zip(&w).map(|(x, wi)| (wi * (g(x) - est)).powi(2)).sum::<f64>();
        (est, var.sqrt() / total)
    };
    for i in 0..3 {
        let (est, se) = estimate(&|x| x[i]);
        assert!((est - m_beta[i]).abs() <= 3.0 * se, "mean {i}: {est} vs {} (se {se})", m_beta[i]);
    }
    for i in 0..3 {
        for k in i..3 {
            let (est, se) = estimate(&|x| (x[i] - mean[i]) * (x[k] - mean[k]));
            assert!(
                (est - c_beta[(i, k)]).abs() <= 3.0 * se,
                "cov ({i},{k}): {est} vs {} (se {se})",
                c_beta[(i, k)]
            );
        }
    }
}

#[test]
fn flow_converges_at_fourth_order() {
    for (seed, mode) in [(3, Mode::Sampling), (5, Mode::Optimization)] {
        let (target, state) = random_instance(3, seed).unwrap();
        let beta = 2.0;
        let lambda = mode.lambda(beta);
        let at = |dt: f64| continuous_moment_flow(&state, &target, lambda, beta, 2.0, dt).unwrap();
        let (a, b, c) = (at(0.2), at(0.1), at(0.05));
        let gap = |x: &GaussianState, y: &GaussianState| (&x.m - &y.m).amax().max((&x.c - &y.c).amax());
        let ratio = gap(&a, &b) / gap(&b, &c);
        assert!((12.0..20.0).contains(&ratio), "{mode}: step-halving ratio {ratio}");
    }
}

#[test]
fn one_step_matches_exact_recursion() {
    let j = 40_000;
    let (alpha, beta) = (0.5, 1.0);
    let lambda = Mode::Sampling.lambda(beta);
    let (m0, c0) = (1.0, 2.0f64);
    let ensemble = gaussian_ensemble(8, j, &[m0], c0.sqrt()).unwrap();
    let f: Vec<f64> = ensemble.rows().iter().map(|r| 0.5 * r[0] * r[0]).collect();
    let next = cbs_step(&ensemble, &f, alpha, beta, lambda, &iteration_noise(8, 0, j, 1)).unwrap();

    let target = GaussianTarget::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    let state = GaussianState::new(DVector::from_element(1, m0), DMatrix::from_element(1, 1, c0)).unwrap();
    let exact = discrete_moment_step(&state, alpha, lambda, beta, &target).unwrap();
    let tol = 5.0 / (j as f64).sqrt();
    assert!((next.mean()[0] - exact.m[0]).abs() < tol, "{} vs {}", next.mean()[0], exact.m[0]);
    assert!((next.covariance()[(0, 0)] - exact.c[(0, 0)]).abs() < tol);
}

#[test]
fn linear_forward_map_gives_conjugate_quadratic() {
    let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 1.0, -1.0]);
    let gamma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 2.0]));
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
    let y = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let gg = g.clone();
    let potential = bayes_potential(BayesSetup {
        forward: Arc::new(move |t: &[f64]| Some((&gg * DVector::from_column_slice(t)).iter().copied().collect())),
        data: y.clone(),
        noise_cov: gamma.clone(),
        prior_cov: sigma.clone(),
    })
    .unwrap();

    let gamma_inv = gamma.try_inverse().unwrap();
    let precision = g.transpose() * &gamma_inv * &g + sigma.try_inverse().unwrap();
    let cov = precision.clone().try_inverse().unwrap();
    let mean = &cov * g.transpose() * &gamma_inv * &y;
    let q = quadratic(mean.clone(), &cov).unwrap();
    let base = potential.evaluate(mean.as_slice());
    for theta in [[0.0, 0.0], [1.5, -2.0], [-3.0, 4.0], [10.0, 0.1]] {
        let lhs = potential.evaluate(&theta) - base;
        let rhs = q.evaluate(&theta);
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs), "{theta:?}: {lhs} vs {rhs}");
    }
}
