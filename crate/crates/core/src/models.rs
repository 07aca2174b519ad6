//! Model families, Gaussian parameter priors and the augmented chi-squared.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{chi2_mean_based, CovarianceEstimate, SampleSet, SubsetSelector};
use crate::error::{check_len, Error, Result};

/// A family of fit functions.
///
/// Multi-exponential parameters are ordered `[A0, E0, A1, E1, ..., B0, F0, ...]`:
/// decaying amplitude/energy pairs first, then oscillating pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    /// `Σⱼ aⱼ (x / x_scale)ʲ`. `x_scale` defaults to the largest abscissa value.
    Polynomial { degree: usize, x_scale: Option<f64> },
    /// `Σᵢ Aᵢ e^(−Eᵢ t) + (−1)ᵗ Σⱼ Bⱼ e^(−Fⱼ t)`.
    MultiExponential { n_decay: usize, n_oscillating: usize },
}

impl ModelFamily {
    pub fn params_count(&self) -> usize {
        match *self {
            ModelFamily::Polynomial { degree, .. } => degree + 1,
            ModelFamily::MultiExponential {
                n_decay,
                n_oscillating,
            } => 2 * (n_decay + n_oscillating),
        }
    }

    /// Family-defined parameter labels, shared across family members.
    pub fn param_labels(&self) -> Vec<String> {
        match *self {
            ModelFamily::Polynomial { degree, .. } => (0..=degree).map(|j| format!("a{j}")).collect(),
            ModelFamily::MultiExponential {
                n_decay,
                n_oscillating,
            } => {
                let mut labels = Vec::with_capacity(self.params_count());
                for i in 0..n_decay {
                    labels.push(format!("A{i}"));
                    labels.push(format!("E{i}"));
                }
                for j in 0..n_oscillating {
                    labels.push(format!("B{j}"));
                    labels.push(format!("F{j}"));
                }
                labels
            }
        }
    }

    /// Whether predictions are linear in the parameters.
    pub fn is_linear(&self) -> bool {
        matches!(self, ModelFamily::Polynomial { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ModelFamily::Polynomial { x_scale, .. } => {
                if let Some(s) = x_scale {
                    if !(s.is_finite() && s != 0.0) {
                        return Err(Error::InvalidModel(format!("x_scale {s} must be finite and nonzero")));
                    }
                }
            }
            ModelFamily::MultiExponential {
                n_decay,
                n_oscillating,
            } => {
                if n_decay + n_oscillating == 0 {
                    return Err(Error::InvalidModel("multi-exponential model with no states".into()));
                }
            }
        }
        Ok(())
    }

    fn x_scale(&self, abscissa: &[f64]) -> f64 {
        match *self {
            ModelFamily::Polynomial { x_scale: Some(s), .. } => s,
            _ => {
                let m = abscissa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m.is_finite() && m != 0.0 {
                    m
                } else {
                    1.0
                }
            }
        }
    }

    pub fn predict(&self, a: &[f64], abscissa: &[f64]) -> Result<DVector<f64>> {
        check_len(self.params_count(), a.len())?;
        Ok(match *self {
            ModelFamily::Polynomial { .. } => {
                let scale = self.x_scale(abscissa);
                DVector::from_iterator(
                    abscissa.len(),
                    abscissa.iter().map(|&x| {
                        let u = x / scale;
                        // Horner
                        a.iter().rev().fold(0.0, |acc, &c| acc * u + c)
                    }),
                )
            }
            ModelFamily::MultiExponential { n_decay, .. } => DVector::from_iterator(
                abscissa.len(),
                abscissa.iter().map(|&t| {
                    a.chunks_exact(2)
                        .enumerate()
                        .map(|(i, p)| stagger(i >= n_decay, t) * p[0] * (-p[1] * t).exp())
                        .sum()
                }),
            ),
        })
    }

    /// Derivative of each prediction with respect to each parameter (`d × k`).
    pub fn jacobian(&self, a: &[f64], abscissa: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.params_count();
        check_len(k, a.len())?;
        let d = abscissa.len();
        let mut jac = DMatrix::zeros(d, k);
        match *self {
            ModelFamily::Polynomial { .. } => {
                let scale = self.x_scale(abscissa);
                for (t, &x) in abscissa.iter().enumerate() {
                    let u = x / scale;
                    let mut pow = 1.0;
                    for j in 0..k {
                        jac[(t, j)] = pow;
                        pow *= u;
                    }
                }
            }
            ModelFamily::MultiExponential { n_decay, .. } => {
                for (t, &time) in abscissa.iter().enumerate() {
                    for (i, p) in a.chunks_exact(2).enumerate() {
                        let e = stagger(i >= n_decay, time) * (-p[1] * time).exp();
                        jac[(t, 2 * i)] = e;
                        jac[(t, 2 * i + 1)] = -time * p[0] * e;
                    }
                }
            }
        }
        Ok(jac)
    }

    /// `Σₜ wₜ ∂²fₜ/∂aₓ∂a_y` for a weight vector `w` over the abscissa.
    pub fn second_derivative_contraction(&self, a: &[f64], abscissa: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.params_count();
        check_len(k, a.len())?;
        check_len(abscissa.len(), w.len())?;
        let mut out = DMatrix::zeros(k, k);
        if let ModelFamily::MultiExponential { n_decay, .. } = *self {
            for (&time, &wt) in abscissa.iter().zip(w) {
                for (i, p) in a.chunks_exact(2).enumerate() {
                    let e = wt * stagger(i >= n_decay, time) * (-p[1] * time).exp();
                    let (ia, ie) = (2 * i, 2 * i + 1);
                    out[(ia, ie)] -= time * e;
                    out[(ie, ia)] -= time * e;
                    out[(ie, ie)] += time * time * p[0] * e;
                }
            }
        }
        Ok(out)
    }
}

fn stagger(oscillating: bool, t: f64) -> f64 {
    if oscillating && (t.round() as i64).rem_euclid(2) == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Independent Gaussian priors on each parameter plus the model prior weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    central: Vec<f64>,
    width: Vec<f64>,
    model_prior_weight: f64,
}

impl PriorSpec {
    pub fn new(central: Vec<f64>, width: Vec<f64>, model_prior_weight: f64) -> Result<Self> {
        check_len(central.len(), width.len())?;
        if let Some(w) = width.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidPrior(format!("width {w} must be positive")));
        }
        if central.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPrior("non-finite prior center".into()));
        }
        if !(model_prior_weight > 0.0 && model_prior_weight <= 1.0) {
            return Err(Error::InvalidPrior(format!(
                "model prior weight {model_prior_weight} outside (0, 1]"
            )));
        }
        Ok(Self {
            central,
            width,
            model_prior_weight,
        })
    }

    /// Same center and width for all `k` parameters.
    pub fn uniform(k: usize, central: f64, width: f64) -> Result<Self> {
        Self::new(vec![central; k], vec![width; k], 1.0)
    }

    pub fn central(&self) -> &[f64] {
        &self.central
    }

    pub fn width(&self) -> &[f64] {
        &self.width
    }

    pub fn model_prior_weight(&self) -> f64 {
        self.model_prior_weight
    }

    pub fn len(&self) -> usize {
        self.central.len()
    }

    pub fn is_empty(&self) -> bool {
        self.central.is_empty()
    }

    /// `log det Σ̃` of the diagonal prior covariance.
    pub fn log_det(&self) -> f64 {
        self.width.iter().map(|w| 2.0 * w.ln()).sum()
    }

    /// Diagonal inverse prior covariance `Σ̃⁻¹`.
    pub fn precision(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.len(),
            self.width.iter().map(|w| 1.0 / (w * w)),
        ))
    }
}

/// One member of a model family together with its data cut and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    family: ModelFamily,
    selector: SubsetSelector,
    prior: PriorSpec,
    label: String,
}

impl ModelInstance {
    pub fn new(family: ModelFamily, selector: SubsetSelector, prior: PriorSpec, label: impl Into<String>) -> Result<Self> {
        family.validate()?;
        if prior.len() != family.params_count() {
            return Err(Error::InvalidPrior(format!(
                "prior has {} entries but the model has {} parameters",
                prior.len(),
                family.params_count()
            )));
        }
        if selector.n_kept() == 0 {
            return Err(Error::EmptyKeepSet);
        }
        Ok(Self {
            family,
            selector,
            prior,
            label: label.into(),
        })
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    pub fn selector(&self) -> &SubsetSelector {
        &self.selector
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params_count(&self) -> usize {
        self.family.params_count()
    }

    pub fn param_labels(&self) -> Vec<String> {
        self.family.param_labels()
    }

    pub fn n_cut(&self) -> usize {
        self.selector.n_cut()
    }
}

pub fn predict(model: &ModelInstance, a: &[f64], abscissa: &[f64]) -> Result<DVector<f64>> {
    model.family.predict(a, abscissa)
}

/// Prior quadratic form `Σₓ (aₓ − ãₓ)² / σ̃ₓ²`.
pub fn chi2_prior(model: &ModelInstance, a: &[f64]) -> Result<f64> {
    check_len(model.params_count(), a.len())?;
    let p = &model.prior;
    Ok(a.iter()
        .zip(&p.central)
        .zip(&p.width)
        .map(|((x, c), w)| ((x - c) / w).powi(2))
        .sum())
}

/// Data, prior and total parts of the augmented chi-squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Breakdown {
    pub chi2_data: f64,
    pub chi2_prior: f64,
    pub total: f64,
}

/// Augmented chi-squared; `est` must already be restricted to the kept coordinates.
pub fn chi2_aug(model: &ModelInstance, a: &[f64], est: &CovarianceEstimate) -> Result<Chi2Breakdown> {
    let f = predict(model, a, est.abscissa())?;
    let chi2_data = chi2_mean_based(est, f.as_slice())?;
    let chi2_prior = chi2_prior(model, a)?;
    Ok(Chi2Breakdown {
        chi2_data,
        chi2_prior,
        total: chi2_data + chi2_prior,
    })
}

/// Drops the cut coordinates; returns the kept samples and `N_cut`.
pub fn apply_cut(model: &ModelInstance, full: &SampleSet) -> Result<(SampleSet, usize)> {
    let kept = full.select(&model.selector)?;
    Ok((kept, model.selector.n_cut()))
}
