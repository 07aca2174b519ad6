//! Information-criterion model weights and model-averaged estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::FitResult;

/// Which `−2·log pr(M|D)` estimate to use for model weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `χ²_aug + 2k`
    Aic,
    /// `χ²_aug + 2k + 2·N_cut`
    #[default]
    AicCut,
    /// `χ²_aug + 2·tr[J⁻¹I] + 2·N_cut`
    Tic,
    /// TIC plus `log det Σ̃ − log det Σ*`
    GaussianFull,
    /// `χ²_aug` alone, with no bias correction.
    Naive,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Aic,
        Criterion::AicCut,
        Criterion::Tic,
        Criterion::GaussianFull,
        Criterion::Naive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::AicCut => "aic_cut",
            Criterion::Tic => "tic",
            Criterion::GaussianFull => "gaussian_full",
            Criterion::Naive => "naive",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Parse(format!("unknown criterion `{s}`")))
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Log-determinants entering [`Criterion::GaussianFull`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDets {
    /// `log det Σ̃`
    pub prior: f64,
    /// `log det Σ*`
    pub posterior: f64,
}

impl LogDets {
    pub fn from_fit(fit: &FitResult, prior: &crate::models::PriorSpec) -> Result<Self> {
        let chol = fit
            .param_cov_matrix()
            .cholesky()
            .ok_or(Error::SingularHessian)?;
        let posterior = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            prior: prior.log_det(),
            posterior,
        })
    }
}

/// The raw information criterion (`−2·log pr(M|D)` up to a model-independent constant).
///
/// `model_prior` is `None` for flat model priors, in which case the constant
/// `−2·log pr(M)` is left out.
pub fn criterion_value(fit: &FitResult, model_prior: Option<f64>, kind: Criterion, log_dets: Option<LogDets>) -> Result<f64> {
    let prior_term = match model_prior {
        Some(p) if p > 0.0 => -2.0 * p.ln(),
        Some(p) => return Err(Error::InvalidPrior(format!("model prior {p} must be positive"))),
        None => 0.0,
    };
    let base = prior_term + fit.chi2_aug;
    let cut = 2.0 * fit.n_cut as f64;
    let trace = || fit.tic_trace.ok_or_else(|| Error::MissingTrace(fit.label.clone()));
    Ok(match kind {
        Criterion::Naive => base,
        Criterion::Aic => base + 2.0 * fit.k as f64,
        Criterion::AicCut => base + 2.0 * fit.k as f64 + cut,
        Criterion::Tic => base + 2.0 * trace()? + cut,
        Criterion::GaussianFull => {
            let dets = log_dets.ok_or_else(|| {
                Error::InvalidPrior("gaussian_full needs prior and posterior log-determinants".into())
            })?;
            base + 2.0 * trace()? + cut + dets.prior - dets.posterior
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub model_label: String,
    pub criterion: Criterion,
    pub raw_ic: f64,
    pub log_weight: f64,
    pub weight: f64,
    pub model_prior: f64,
}

impl WeightRecord {
    pub fn new(model_label: impl Into<String>, criterion: Criterion, raw_ic: f64, model_prior: f64) -> Self {
        Self {
            model_label: model_label.into(),
            criterion,
            raw_ic,
            log_weight: -raw_ic / 2.0,
            weight: f64::NAN,
            model_prior,
        }
    }
}

/// Normalizes `exp(−raw/2)` over the model set in log space.
pub fn normalize_weights(mut records: Vec<WeightRecord>) -> Result<Vec<WeightRecord>> {
    let first = records.first().ok_or(Error::EmptyModelSet)?.criterion;
    if records.iter().any(|r| r.criterion != first) {
        return Err(Error::MixedCriteria);
    }
    let raw_min = records.iter().map(|r| r.raw_ic).fold(f64::INFINITY, f64::min);
    if !raw_min.is_finite() {
        return Err(Error::EmptyModelSet);
    }
    let mut total = 0.0;
    for r in records.iter_mut() {
        r.log_weight = -r.raw_ic / 2.0;
        r.weight = (-(r.raw_ic - raw_min) / 2.0).exp();
        total += r.weight;
    }
    for r in records.iter_mut() {
        r.weight /= total;
    }
    Ok(records)
}

/// One model's estimate of a common parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub model_label: String,
    pub mean: f64,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedEstimate {
    pub mean: f64,
    pub var_total: f64,
    pub var_statistical: f64,
    pub var_systematic: f64,
    pub contributions: Vec<Contribution>,
}

impl AveragedEstimate {
    pub fn sigma_total(&self) -> f64 {
        self.var_total.sqrt()
    }
}

/// Pairs each fit's value of `parameter` with its weight, matched by label.
pub fn extract_parameter(fits: &[FitResult], weights: &[WeightRecord], parameter: &str) -> Result<Vec<Contribution>> {
    fits.iter()
        .map(|fit| {
            let (mean, sigma) = fit
                .param(parameter)
                .ok_or_else(|| Error::MissingCommonParameter(parameter.to_string()))?;
            let weight = weights
                .iter()
                .find(|w| w.model_label == fit.label)
                .map(|w| w.weight)
                .ok_or_else(|| Error::MissingCommonParameter(format!("{parameter} (no weight for {})", fit.label)))?;
            Ok(Contribution {
                model_label: fit.label.clone(),
                mean,
                sigma,
                weight,
            })
        })
        .collect()
}

/// Model-averaged mean with its statistical and model-choice variances.
///
/// Weights are used as given and should already be normalized.
pub fn average(contributions: Vec<Contribution>) -> Result<AveragedEstimate> {
    if contributions.is_empty() {
        return Err(Error::EmptyModelSet);
    }
    let mean: f64 = contributions.iter().map(|c| c.mean * c.weight).sum();
    let var_statistical: f64 = contributions.iter().map(|c| c.sigma * c.sigma * c.weight).sum();
    // centered form of Σ pr·⟨a⟩² − (Σ pr·⟨a⟩)²; no cancellation, never negative
    let var_systematic: f64 = contributions
        .iter()
        .map(|c| c.weight * (c.mean - mean).powi(2))
        .sum();
    Ok(AveragedEstimate {
        mean,
        var_total: var_statistical + var_systematic,
        var_statistical,
        var_systematic,
        contributions,
    })
}

/// First-order expansion in the weight `p` of a disfavored second model.
///
/// Each argument is `(mean, sigma)`. Returns `(mean, variance)`.
pub fn two_model_expansion(model1: (f64, f64), model2: (f64, f64), p: f64) -> (f64, f64) {
    let (m1, s1) = model1;
    let (m2, s2) = model2;
    let dm = m2 - m1;
    (m1 + dm * p, s1 * s1 + (s2 * s2 - s1 * s1 + dm * dm) * p)
}

/// One model's input to [`full_width_systematic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullWidthEntry {
    pub model_label: String,
    pub mean: f64,
    pub sigma: f64,
    pub weight: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullWidth {
    /// Label of the highest-weight qualifying fit.
    pub reference: String,
    pub mean_ref: f64,
    pub sigma_ref: f64,
    /// Half of `max − min` over qualifying means.
    pub half_width: f64,
    pub n_qualifying: usize,
}

/// Spread of means over all fits with `p_value > p_threshold`.
pub fn full_width_systematic(entries: &[FullWidthEntry], p_threshold: f64) -> Result<FullWidth> {
    let qualifying: Vec<&FullWidthEntry> = entries
        .iter()
        .filter(|e| e.p_value.is_some_and(|p| p > p_threshold))
        .collect();
    let best = qualifying
        .iter()
        .copied()
        .reduce(|a, b| if b.weight > a.weight { b } else { a })
        .ok_or(Error::NoQualifyingModels(p_threshold))?;
    let lo = qualifying.iter().map(|e| e.mean).fold(f64::INFINITY, f64::min);
    let hi = qualifying.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
    Ok(FullWidth {
        reference: best.model_label.clone(),
        mean_ref: best.mean,
        sigma_ref: best.sigma,
        half_width: (hi - lo) / 2.0,
        n_qualifying: qualifying.len(),
    })
}
