//! Fits of linear models against the closed-form prior-regularized
//! generalized least-squares solution.

use bma_core::prelude::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Design {
    pub model: ModelInstance,
    pub data: SampleSet,
    pub est: CovarianceEstimate,
}

/// Random polynomial design with correlated noise and random priors.
pub fn random_design(seed: u64) -> Design {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let degree = rng.random_range(0..=3usize);
    let d = rng.random_range(degree + 2..=12);
    let n = rng.random_range(d + 2..=60);
    let mut x: Vec<f64> = Vec::with_capacity(d);
    let mut cur = rng.random_range(0.1..1.0);
    for _ in 0..d {
        x.push(cur);
        cur += rng.random_range(0.2..1.5);
    }
    let coeffs: Vec<f64> = (0..=degree).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x_max = x.iter().cloned().fold(f64::MIN, f64::max);
    let noise = rng.random_range(0.05..1.0);
    let rho: f64 = rng.random_range(0.0..0.7);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut prev = 0.0;
            x.iter()
                .zip(&z)
                .map(|(&xi, &zi)| {
                    prev = rho * prev + (1.0 - rho * rho).sqrt() * zi;
                    let u = xi / x_max;
                    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c) + noise * prev
                })
                .collect()
        })
        .collect();
    let data = SampleSet::new(x.clone(), rows, "design").unwrap();
    let est = estimate_covariance(&data, DEFAULT_SVD_CUTOFF).unwrap();
    let central: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
    let width: Vec<f64> = (0..=degree).map(|_| rng.random_range(0.3..20.0)).collect();
    let model = ModelInstance::new(
        ModelFamily::Polynomial { degree, x_scale: None },
        SubsetSelector::keep_all(d),
        PriorSpec::new(central, width, 1.0).unwrap(),
        format!("poly{degree}"),
    )
    .unwrap();
    Design { model, data, est }
}

/// `a* = (N XᵀΣ⁻¹X + P)⁻¹ (N XᵀΣ⁻¹ȳ + P ã)`, `Σ* = (N XᵀΣ⁻¹X + P)⁻¹`, with a
/// plain LU inverse of the sample covariance.
fn closed_form(design: &Design) -> (DVector<f64>, DMatrix<f64>) {
    let x = design.data.abscissa();
    let k = design.model.params_count();
    let x_max = x.iter().cloned().fold(f64::MIN, f64::max);
    let xmat = DMatrix::from_fn(x.len(), k, |i, j| (x[i] / x_max).powi(j as i32));
    let n = design.data.n_samples() as f64;
    let sigma_inv = design.est.cov().clone().try_inverse().unwrap();
    let prior = design.model.prior();
    let p = DMatrix::from_diagonal(&DVector::from_iterator(k, prior.width().iter().map(|w| 1.0 / (w * w))));
    let a_tilde = DVector::from_column_slice(prior.central());
    let normal = xmat.transpose() * &sigma_inv * &xmat * n + &p;
    let rhs = xmat.transpose() * &sigma_inv * design.est.mean() * n + &p * a_tilde;
    let cov = normal.clone().try_inverse().unwrap();
    (&cov * rhs, cov)
}

fn check_design(seed: u64) -> std::result::Result<(), String> {
    let design = random_design(seed);
    let res = fit(&design.model, &design.data, &design.est, &FitOptions::default()).map_err(|e| e.to_string())?;
    if !res.converged {
        return Err(format!("seed {seed}: not converged"));
    }
    let (a, cov) = closed_form(&design);
    let k = a.len();
    for x in 0..k {
        let scale = a[x].abs().max(cov[(x, x)].sqrt());
        let rel = (res.params[x] - a[x]).abs() / scale;
        if rel > 1e-8 {
            return Err(format!("seed {seed}: param {x} rel {rel:e}"));
        }
        for y in 0..k {
            let scale = (cov[(x, x)] * cov[(y, y)]).sqrt();
            let rel = (res.param_cov[x][y] - cov[(x, y)]).abs() / scale;
            if rel > 1e-6 {
                return Err(format!("seed {seed}: cov ({x},{y}) rel {rel:e}"));
            }
        }
    }
    Ok(())
}

#[test]
fn fits_match_closed_form_over_designs() {
    for seed in 0..50 {
        check_design(seed).unwrap();
    }
}

#[test]
fn finite_difference_hessian_matches_normal_matrix() {
    let design = random_design(1234);
    let problem = FitProblem::new(&design.model, &design.data, &design.est, RestrictMode::default()).unwrap();
    let a: Vec<f64> = design.model.prior().central().to_vec();
    let h = hessian_chi2aug(&problem, &a, 1e-4).unwrap();
    let (_, cov) = closed_form(&design);
    let normal = cov.try_inverse().unwrap();
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            let scale = (normal[(i, i)] * normal[(j, j)]).sqrt();
            assert!((h[(i, j)] - normal[(i, j)]).abs() < 1e-6 * scale);
        }
    }
}

#[test]
fn independent_gradient_check_at_minimum() {
    for seed in [3, 17, 41] {
        let design = random_design(seed);
        let res = fit(&design.model, &design.data, &design.est, &FitOptions::default()).unwrap();
        let problem = FitProblem::new(&design.model, &design.data, &design.est, RestrictMode::default()).unwrap();
        // central differences of the objective value itself
        for x in 0..res.params.len() {
            let h = 1e-6 * res.params[x].abs().max(1.0);
            let mut up = res.params.clone();
            let mut dn = res.params.clone();
            up[x] += h;
            dn[x] -= h;
            let g = (problem.chi2_aug(&up).unwrap().total - problem.chi2_aug(&dn).unwrap().total) / (2.0 * h);
            assert!(g.abs() < 1e-6 * problem.chi2_aug(&res.params).unwrap().total.max(1.0), "seed {seed} grad {g}");
        }
        assert!(res.gradient_norm < 1e-8);
        assert!((res.chi2_aug - res.chi2_data - res.chi2_prior).abs() <= 1e-10 * res.chi2_aug);
        // Σ* symmetric positive definite
        let cov = res.param_cov_matrix();
        assert!(cov.clone().cholesky().is_some());
        assert!((&cov - cov.transpose()).amax() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn linear_fits_agree_with_closed_form(seed in 1000u64..100_000) {
        prop_assert!(check_design(seed).is_ok(), "{:?}", check_design(seed));
    }
}
