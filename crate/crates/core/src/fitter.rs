//! Minimization of the augmented chi-squared and the quantities derived at the
//! best-fit point: the Laplace covariance, the p-value and the bias-correction
//! trace `tr[J⁻¹ I]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{restrict, CovarianceEstimate, RestrictMode, SampleSet};
use crate::error::{check_len, Error, Result};
use crate::models::{self, Chi2Breakdown, ModelFamily, ModelInstance};
use crate::synth::effective_mass;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative chi-squared decrease below which a step counts as stalled.
    pub rel_tol: f64,
    /// Max-norm bound on the gradient of the augmented chi-squared.
    pub grad_tol: f64,
    /// Relative finite-difference step for the Hessian.
    pub hessian_step: f64,
    pub restrict_mode: RestrictMode,
    pub compute_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            hessian_step: 1e-4,
            restrict_mode: RestrictMode::SubmatrixThenInvert,
            compute_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartPoint {
    PriorCenter,
    Given(Vec<f64>),
}

/// A model paired with its restricted data.
#[derive(Debug, Clone)]
pub struct FitProblem {
    model: ModelInstance,
    samples: SampleSet,
    est: CovarianceEstimate,
    n_cut: usize,
}

impl FitProblem {
    /// Cuts the samples and slices the full-data covariance estimate for `model`.
    pub fn new(model: &ModelInstance, full: &SampleSet, full_est: &CovarianceEstimate, mode: RestrictMode) -> Result<Self> {
        check_len(full.dim(), full_est.dim())?;
        let (samples, n_cut) = models::apply_cut(model, full)?;
        let est = restrict(full_est, model.selector(), mode)?;
        Ok(Self {
            model: model.clone(),
            samples,
            est,
            n_cut,
        })
    }

    pub fn model(&self) -> &ModelInstance {
        &self.model
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn estimate(&self) -> &CovarianceEstimate {
        &self.est
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn chi2_aug(&self, a: &[f64]) -> Result<Chi2Breakdown> {
        models::chi2_aug(&self.model, a, &self.est)
    }

    fn sqrt_n(&self) -> f64 {
        (self.est.n_samples() as f64).sqrt()
    }

    /// Whitened data residuals stacked on the prior residuals `(aₓ − ãₓ)/σ̃ₓ`.
    fn residuals(&self, a: &[f64]) -> Result<DVector<f64>> {
        let f = self.model.family().predict(a, self.est.abscissa())?;
        let data = self.est.whitener() * (self.est.mean() - f) * self.sqrt_n();
        let prior = self.model.prior();
        let k = a.len();
        let mut r = DVector::zeros(data.len() + k);
        r.rows_mut(0, data.len()).copy_from(&data);
        for x in 0..k {
            r[data.len() + x] = (a[x] - prior.central()[x]) / prior.width()[x];
        }
        Ok(r)
    }

    fn residual_jacobian(&self, a: &[f64]) -> Result<DMatrix<f64>> {
        let jf = self.model.family().jacobian(a, self.est.abscissa())?;
        let data = self.est.whitener() * jf * (-self.sqrt_n());
        let k = a.len();
        let rows = data.nrows();
        let mut j = DMatrix::zeros(rows + k, k);
        j.rows_mut(0, rows).copy_from(&data);
        for x in 0..k {
            j[(rows + x, x)] = 1.0 / self.model.prior().width()[x];
        }
        Ok(j)
    }

    /// Analytic gradient of the augmented chi-squared.
    pub fn gradient(&self, a: &[f64]) -> Result<DVector<f64>> {
        let r = self.residuals(a)?;
        let j = self.residual_jacobian(a)?;
        Ok(j.tr_mul(&r) * 2.0)
    }
}

/// Best-fit parameters and everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub label: String,
    pub param_labels: Vec<String>,
    pub params: Vec<f64>,
    /// Rows of the best-fit covariance `Σ*`.
    pub param_cov: Vec<Vec<f64>>,
    pub chi2_data: f64,
    pub chi2_prior: f64,
    pub chi2_aug: f64,
    pub k: usize,
    pub n_cut: usize,
    pub n_kept: usize,
    pub dof: i64,
    pub p_value: Option<f64>,
    pub tic_trace: Option<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn param_index(&self, label: &str) -> Option<usize> {
        self.param_labels.iter().position(|l| l == label)
    }

    /// Best-fit value and standard error of a labelled parameter.
    pub fn param(&self, label: &str) -> Option<(f64, f64)> {
        self.param_index(label)
            .map(|i| (self.params[i], self.param_cov[i][i].sqrt()))
    }

    pub fn param_cov_matrix(&self) -> DMatrix<f64> {
        let k = self.params.len();
        DMatrix::from_fn(k, k, |i, j| self.param_cov[i][j])
    }
}

/// Sample information matrices at the best-fit point.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrices {
    /// `I_N`
    pub fisher: DMatrix<f64>,
    /// `J_N`
    pub hessian: DMatrix<f64>,
    /// `tr[J_N⁻¹ I_N]`
    pub trace_term: f64,
}

/// Damped least-squares minimization of the augmented chi-squared.
///
/// A non-converged fit is still returned with `converged == false`.
pub fn minimize(problem: &FitProblem, init: &StartPoint, opts: &FitOptions) -> Result<FitResult> {
    let k = problem.model.params_count();
    let mut a = match init {
        StartPoint::PriorCenter => problem.model.prior().central().to_vec(),
        StartPoint::Given(v) => {
            check_len(k, v.len())?;
            v.clone()
        }
    };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite starting point".into()));
    }

    let mut r = problem.residuals(&a)?;
    let mut jac = problem.residual_jacobian(&a)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut ever_solved = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let g = jac.tr_mul(&r);
        let jtj = jac.tr_mul(&jac);
        let diag_floor = jtj.diagonal().max() * 1e-12;

        let mut accepted = None;
        loop {
            let mut damped = jtj.clone();
            for x in 0..k {
                damped[(x, x)] += lambda * jtj[(x, x)].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            if let Some(chol) = damped.cholesky() {
                ever_solved = true;
                let step = chol.solve(&(-&g));
                let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
                let trial_r = problem.residuals(&trial)?;
                let trial_cost = trial_r.norm_squared();
                // near the minimum the cost change drops below rounding; a step that
                // keeps the cost within rounding and reduces the gradient still counts
                let downhill = trial_cost < cost
                    || (trial_cost <= cost * (1.0 + COST_NOISE)
                        && problem.residual_jacobian(&trial)?.tr_mul(&trial_r).amax() < g.amax());
                if trial_cost.is_finite() && downhill {
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = Some((trial, trial_r, trial_cost));
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }

        match accepted {
            Some((trial, trial_r, trial_cost)) => {
                let rel = (cost - trial_cost) / trial_cost.max(f64::MIN_POSITIVE);
                a = trial;
                r = trial_r;
                jac = problem.residual_jacobian(&a)?;
                cost = trial_cost;
                if rel < opts.rel_tol && gradient_small(&jac, &r, &a, opts.grad_tol) {
                    converged = true;
                    break;
                }
            }
            None => {
                if !ever_solved {
                    return Err(Error::SingularNormalEquations);
                }
                // no downhill step at any damping: stationary to working precision
                converged = gradient_small(&jac, &r, &a, opts.grad_tol);
                break;
            }
        }
    }

    finish(problem, a, converged, iterations, opts)
}

// Relative cost change treated as rounding noise.
const COST_NOISE: f64 = 1e-12;

// The gradient is below `grad_tol`, or every component is within what a few
// ulps of the matching parameter can resolve (`|g_x| ≤ 8ε|a_x|·∂²χ²/∂a_x²`).
fn gradient_small(jac: &DMatrix<f64>, r: &DVector<f64>, a: &[f64], grad_tol: f64) -> bool {
    let g = jac.tr_mul(r) * 2.0;
    if g.amax() < grad_tol {
        return true;
    }
    (0..a.len()).all(|x| {
        let curvature = 2.0 * jac.column(x).norm_squared();
        g[x].abs() <= 8.0 * f64::EPSILON * a[x].abs() * curvature
    })
}

fn finish(problem: &FitProblem, a: Vec<f64>, converged: bool, n_iterations: usize, opts: &FitOptions) -> Result<FitResult> {
    let model = &problem.model;
    let k = model.params_count();
    let breakdown = problem.chi2_aug(&a)?;
    let hess = hessian_chi2aug(problem, &a, opts.hessian_step)?;
    let cov = hess.cholesky().ok_or(Error::SingularHessian)?.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    let n_kept = problem.est.dim();
    let dof = n_kept as i64 - k as i64;
    let p = if dof >= 1 {
        Some(p_value(breakdown.chi2_data, dof)?)
    } else {
        None
    };
    let tic_trace = if opts.compute_trace {
        Some(bias_matrices(problem, &a)?.trace_term)
    } else {
        None
    };
    let gradient_norm = problem.gradient(&a)?.amax();
    Ok(FitResult {
        label: model.label().to_string(),
        param_labels: model.param_labels(),
        param_cov: (0..k).map(|i| cov.row(i).iter().cloned().collect()).collect(),
        params: a,
        chi2_data: breakdown.chi2_data,
        chi2_prior: breakdown.chi2_prior,
        chi2_aug: breakdown.total,
        k,
        n_cut: problem.n_cut,
        n_kept,
        dof,
        p_value: p,
        tic_trace,
        converged,
        n_iterations,
        gradient_norm,
    })
}

/// Fits `model` to the full data set, slicing the full-data covariance.
///
/// Starts from the prior center; multi-exponential models also start from an
/// effective-mass estimate, and the lower augmented chi-squared wins.
pub fn fit(model: &ModelInstance, full: &SampleSet, full_est: &CovarianceEstimate, opts: &FitOptions) -> Result<FitResult> {
    let problem = FitProblem::new(model, full, full_est, opts.restrict_mode)?;
    let mut starts = vec![StartPoint::PriorCenter];
    if let Some(seed) = effective_mass_start(&problem) {
        starts.push(StartPoint::Given(seed));
    }
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for start in &starts {
        match minimize(&problem, start, opts) {
            Ok(res) => {
                best = Some(match best {
                    None => res,
                    Some(prev) => prefer(prev, res),
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one start is always tried"),
    }
}

// Lowest chi2_aug wins; near-ties go to the smaller parameter vector.
fn prefer(a: FitResult, b: FitResult) -> FitResult {
    if a.converged != b.converged {
        return if a.converged { a } else { b };
    }
    let delta = b.chi2_aug - a.chi2_aug;
    if delta.abs() < 1e-10 {
        let norm = |r: &FitResult| r.params.iter().map(|v| v * v).sum::<f64>();
        if norm(&b) < norm(&a) {
            b
        } else {
            a
        }
    } else if delta < 0.0 {
        b
    } else {
        a
    }
}

/// Starting point for multi-exponential fits seeded from the effective mass of
/// the kept data.
pub fn effective_mass_start(problem: &FitProblem) -> Option<Vec<f64>> {
    let (n_decay, n_osc) = match *problem.model.family() {
        ModelFamily::MultiExponential {
            n_decay,
            n_oscillating,
        } => (n_decay, n_oscillating),
        ModelFamily::Polynomial { .. } => return None,
    };
    let t = problem.est.abscissa();
    let c = problem.est.mean().as_slice();
    let meff = effective_mass(c);
    let (i, e0) = meff
        .iter()
        .enumerate()
        .find_map(|(i, m)| m.filter(|_| (t[i + 1] - t[i] - 1.0).abs() < 1e-9).map(|m| (i, m)))?;
    let a0 = c[i] * (e0 * t[i]).exp();
    if !a0.is_finite() {
        return None;
    }
    let mut seed = Vec::with_capacity(2 * (n_decay + n_osc));
    for s in 0..n_decay {
        seed.push(a0);
        seed.push(e0 + 0.5 * s as f64);
    }
    for s in 0..n_osc {
        seed.push(0.1 * a0);
        seed.push(e0 + 0.3 + 0.5 * s as f64);
    }
    Some(seed)
}

/// Half the Hessian of the augmented chi-squared, by central differences of
/// the analytic gradient with steps `hₓ = ε·max(|aₓ|, 1)`.
pub fn hessian_chi2aug(problem: &FitProblem, a: &[f64], eps: f64) -> Result<DMatrix<f64>> {
    let k = problem.model.params_count();
    check_len(k, a.len())?;
    let mut h = DMatrix::zeros(k, k);
    for x in 0..k {
        let step = eps * a[x].abs().max(1.0);
        let mut up = a.to_vec();
        let mut dn = a.to_vec();
        up[x] += step;
        dn[x] -= step;
        let diff = (problem.gradient(&up)? - problem.gradient(&dn)?) / (2.0 * step);
        h.row_mut(x).copy_from(&(diff * 0.5).transpose());
    }
    let h = (&h + h.transpose()) * 0.5;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian);
    }
    Ok(h)
}

/// Sample Fisher information `I_N`, negative sample Hessian `J_N` and `tr[J_N⁻¹ I_N]`.
///
/// Per-sample terms use the sample-based chi-squared `χᵢ²`. The prior is
/// spread evenly over the samples: each gets `χ²_p / N`, so the per-sample
/// terms sum to the augmented chi-squared up to a constant.
pub fn bias_matrices(problem: &FitProblem, a_star: &[f64]) -> Result<BiasMatrices> {
    let model = &problem.model;
    let family = model.family();
    let k = model.params_count();
    check_len(k, a_star.len())?;
    let est = &problem.est;
    let n = problem.samples.n_samples();
    let nf = n as f64;
    let abscissa = est.abscissa();
    let f = family.predict(a_star, abscissa)?;
    let jf = family.jacobian(a_star, abscissa)?;
    let inv = est.inv_cov();
    let precision = model.prior().precision();
    let prior_shift = DVector::from_iterator(
        k,
        a_star
            .iter()
            .zip(model.prior().central())
            .map(|(x, c)| x - c),
    );
    let prior_grad = &precision * prior_shift * (2.0 / nf);

    let mut fisher = DMatrix::zeros(k, k);
    for i in 0..n {
        let w = inv * (problem.samples.row(i) - &f);
        let g = jf.tr_mul(&w) * (-2.0) + &prior_grad;
        fisher += &g * g.transpose();
    }
    fisher /= 4.0 * (nf - 1.0);

    let wbar = inv * (est.mean() - &f);
    let curvature = family.second_derivative_contraction(a_star, abscissa, wbar.as_slice())?;
    let hessian = jf.tr_mul(&(inv * &jf)) - curvature + precision / nf;
    let fisher = (&fisher + fisher.transpose()) * 0.5;
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let solved = hessian.clone().lu().solve(&fisher).ok_or(Error::SingularHessian)?;
    let trace_term = solved.trace();
    if !trace_term.is_finite() {
        return Err(Error::SingularHessian);
    }
    Ok(BiasMatrices {
        fisher,
        hessian,
        trace_term,
    })
}

/// Upper-tail chi-squared probability `Q(dof/2, chi2/2)`.
pub fn p_value(chi2: f64, dof: i64) -> Result<f64> {
    if dof < 1 {
        return Err(Error::InvalidDof(dof));
    }
    if chi2.is_nan() {
        return Ok(f64::NAN);
    }
    if chi2 <= 0.0 {
        return Ok(1.0);
    }
    if chi2.is_infinite() {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::gamma_ur(dof as f64 / 2.0, chi2 / 2.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{estimate_covariance, SubsetSelector};
    use crate::models::PriorSpec;
    use approx::assert_relative_eq;

    fn const_model(d: usize, width: f64) -> ModelInstance {
        ModelInstance::new(
            ModelFamily::Polynomial {
                degree: 0,
                x_scale: None,
            },
            SubsetSelector::keep_all(d),
            PriorSpec::uniform(1, 0.0, width).unwrap(),
            "const",
        )
        .unwrap()
    }

    #[test]
    fn p_value_reference_points() {
        assert_eq!(p_value(0.0, 3).unwrap(), 1.0);
        assert_relative_eq!(p_value(10.0, 10).unwrap(), 0.440_493_285_065_212, max_relative = 1e-10);
        assert_eq!(p_value(f64::INFINITY, 4).unwrap(), 0.0);
        assert!(p_value(1e4, 4).unwrap() < 1e-300);
        assert!(matches!(p_value(1.0, 0), Err(Error::InvalidDof(0))));
    }

    #[test]
    fn constant_model_curvature() {
        // identity covariance, d points, N samples: ½∂²χ² = N·d + 1/σ̃²
        let d = 3;
        let n = 4;
        let abscissa: Vec<f64> = (1..=d).map(|x| x as f64).collect();
        let est = CovarianceEstimate::from_parts(
            abscissa.clone(),
            DVector::from_column_slice(&[1.0, 1.2, 0.9]),
            DMatrix::identity(d, d),
            n,
            1e-12,
        )
        .unwrap();
        let rows = vec![vec![1.0, 1.2, 0.9], vec![1.0, 1.2, 0.9]];
        let samples = SampleSet::new(abscissa, rows, "").unwrap();
        let model = const_model(d, 2.0);
        let problem = FitProblem {
            model,
            samples,
            est,
            n_cut: 0,
        };
        let h = hessian_chi2aug(&problem, &[0.7], 1e-4).unwrap();
        assert_relative_eq!(h[(0, 0)], (n * d) as f64 + 0.25, max_relative = 1e-8);
    }

    #[test]
    fn noiseless_exponential_is_recovered() {
        let t: Vec<f64> = (0..16).map(f64::from).collect();
        let truth: Vec<f64> = t.iter().map(|&x| 2.0 * (-0.8 * x).exp()).collect();
        // two samples with tiny fractional spread so the covariance is invertible,
        // symmetric about the truth so the mean is exact
        let rows = vec![
            truth.iter().enumerate().map(|(i, v)| v * (1.0 + 1e-3 * (1.0 + i as f64 * 0.01))).collect(),
            truth.iter().enumerate().map(|(i, v)| v * (1.0 - 1e-3 * (1.0 + i as f64 * 0.01))).collect(),
        ];
        let data = SampleSet::new(t.clone(), rows, "").unwrap();
        let est = estimate_covariance(&data, 1e-12).unwrap();
        let model = ModelInstance::new(
            ModelFamily::MultiExponential {
                n_decay: 1,
                n_oscillating: 0,
            },
            SubsetSelector::keep_all(16),
            PriorSpec::new(vec![1.0, 1.0], vec![1e6, 1e6], 1.0).unwrap(),
            "exp1",
        )
        .unwrap();
        let opts = FitOptions {
            compute_trace: false,
            ..FitOptions::default()
        };
        let res = fit(&model, &data, &est, &opts).unwrap();
        assert!(res.converged);
        assert!((res.params[0] - 2.0).abs() < 1e-6, "{:?}", res.params);
        assert!((res.params[1] - 0.8).abs() < 1e-6, "{:?}", res.params);
    }

    #[test]
    fn pure_prior_curvature() {
        // data coordinate is independent of the parameter when the abscissa
        // makes the Jacobian vanish: E at t = 0 has no effect
        let est = CovarianceEstimate::from_parts(
            vec![0.0],
            DVector::from_element(1, 1.0),
            DMatrix::identity(1, 1),
            5,
            1e-12,
        )
        .unwrap();
        let samples = SampleSet::new(vec![0.0], vec![vec![1.0], vec![1.0]], "").unwrap();
        let model = ModelInstance::new(
            ModelFamily::MultiExponential {
                n_decay: 1,
                n_oscillating: 0,
            },
            SubsetSelector::keep_all(1),
            PriorSpec::new(vec![1.0, 0.5], vec![2.0, 0.25], 1.0).unwrap(),
            "e",
        )
        .unwrap();
        let problem = FitProblem {
            model,
            samples,
            est,
            n_cut: 0,
        };
        let h = hessian_chi2aug(&problem, &[1.0, 0.5], 1e-4).unwrap();
        // E entry is pure prior; A entry also sees the data (N·1 at t = 0)
        assert_relative_eq!(h[(1, 1)], 16.0, max_relative = 1e-8);
        assert!(h[(0, 1)].abs() < 1e-8);
        assert_relative_eq!(h[(0, 0)], 5.0 + 0.25, max_relative = 1e-8);
    }

    #[test]
    fn prefer_breaks_ties_toward_small_params() {
        let base = FitResult {
            label: "x".into(),
            param_labels: vec!["a0".into()],
            params: vec![2.0],
            param_cov: vec![vec![1.0]],
            chi2_data: 1.0,
            chi2_prior: 0.0,
            chi2_aug: 1.0,
            k: 1,
            n_cut: 0,
            n_kept: 2,
            dof: 1,
            p_value: Some(0.5),
            tic_trace: None,
            converged: true,
            n_iterations: 1,
            gradient_norm: 0.0,
        };
        let mut small = base.clone();
        small.params = vec![-1.0];
        small.chi2_aug = 1.0 + 1e-12;
        assert_eq!(prefer(base.clone(), small.clone()).params, vec![-1.0]);
        let mut better = base.clone();
        better.params = vec![5.0];
        better.chi2_aug = 0.5;
        assert_eq!(prefer(base, better).params, vec![5.0]);
    }
}
