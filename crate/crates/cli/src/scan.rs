//! Fits every grid point, weights the converged fits and averages the
//! requested parameters.

use bma_core::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridPoint, ScanConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub model: ModelInstance,
    pub grid_x: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub model_label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionWeights {
    pub criterion: Criterion,
    pub records: Vec<WeightRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterAverage {
    pub parameter: String,
    pub criterion: Criterion,
    pub estimate: AveragedEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullWidthRow {
    pub parameter: String,
    pub result: FullWidth,
    /// `sqrt(σ_ref² + half_width²)`
    pub error: f64,
    /// `sqrt(σ_ref² + (max − min)²)`
    pub full_spread_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEstimate {
    pub parameter: String,
    pub model_label: String,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub data_tag: String,
    pub n_samples: usize,
    pub dim: usize,
    pub criterion: Criterion,
    pub p_threshold: f64,
    pub svd_cutoff: f64,
    pub parameters: Vec<String>,
    /// Successful fits, in grid order, converged or not.
    pub fits: Vec<FitRow>,
    /// Grid points whose fit returned an error.
    pub excluded: Vec<Excluded>,
    pub weights: Vec<CriterionWeights>,
    pub averages: Vec<ParameterAverage>,
    pub full_width: Vec<FullWidthRow>,
    pub fixed: Vec<FixedEstimate>,
    pub warnings: Vec<String>,
}

impl ScanReport {
    /// Fits that enter the weights and averages.
    pub fn usable(&self) -> impl Iterator<Item = &FitRow> {
        self.fits.iter().filter(|r| r.fit.converged)
    }

    pub fn weights_for(&self, criterion: Criterion) -> Option<&[WeightRecord]> {
        self.weights
            .iter()
            .find(|w| w.criterion == criterion)
            .map(|w| w.records.as_slice())
    }

    pub fn average_for(&self, parameter: &str, criterion: Criterion) -> Option<&AveragedEstimate> {
        self.averages
            .iter()
            .find(|a| a.parameter == parameter && a.criterion == criterion)
            .map(|a| &a.estimate)
    }

    pub fn full_width_for(&self, parameter: &str) -> Option<&FullWidthRow> {
        self.full_width.iter().find(|f| f.parameter == parameter)
    }

    pub fn fixed_for(&self, parameter: &str) -> Option<&FixedEstimate> {
        self.fixed.iter().find(|f| f.parameter == parameter)
    }
}

/// Runs the fits on a pool of `workers` threads (all cores when `None`).
/// Results come back in grid order regardless of scheduling.
pub fn fit_grid(
    points: &[GridPoint],
    data: &SampleSet,
    est: &CovarianceEstimate,
    opts: &FitOptions,
    workers: Option<usize>,
) -> CliResult<Vec<bma_core::Result<FitResult>>> {
    let run = || -> Vec<_> {
        points
            .par_iter()
            .map(|p| fit(&p.model, data, est, opts))
            .collect()
    };
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// Fits the grid to `data` and aggregates. Writes nothing.
pub fn scan(config: &ScanConfig, data: &SampleSet) -> CliResult<ScanReport> {
    config.validate()?;
    let points = config.build_models(data.abscissa())?;
    let est = estimate_covariance(data, config.svd_cutoff).map_err(|e| CliError::Data(e.to_string()))?;
    let opts = config.fit_options();
    let results = fit_grid(&points, data, &est, &opts, config.workers)?;

    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    for (point, res) in points.iter().zip(results) {
        match res {
            Ok(fit) => {
                if !fit.converged {
                    warnings.push(format!(
                        "{}: not converged after {} iterations (gradient {:e}); excluded from averaging",
                        fit.label, fit.n_iterations, fit.gradient_norm
                    ));
                }
                fits.push(FitRow {
                    model: point.model.clone(),
                    grid_x: point.grid_x,
                    fit,
                });
            }
            Err(e) => excluded.push(Excluded {
                model_label: point.model.label().to_string(),
                reason: e.to_string(),
            }),
        }
    }

    let mut report = ScanReport {
        data_tag: data.tag().to_string(),
        n_samples: data.n_samples(),
        dim: data.dim(),
        criterion: config.criterion,
        p_threshold: config.p_threshold,
        svd_cutoff: config.svd_cutoff,
        parameters: Vec::new(),
        fits,
        excluded,
        weights: Vec::new(),
        averages: Vec::new(),
        full_width: Vec::new(),
        fixed: Vec::new(),
        warnings,
    };
    if report.usable().next().is_none() {
        report.warnings.push("no converged fits; nothing to average".into());
        return Ok(report);
    }

    report.parameters = if config.parameters.is_empty() {
        common_parameters(&report)
    } else {
        config.parameters.clone()
    };
    let mut extra = Vec::new();
    report.weights = compute_weights(&report, &mut extra);
    report.warnings.extend(extra);

    let usable: Vec<FitResult> = report.usable().map(|r| r.fit.clone()).collect();
    for parameter in report.parameters.clone() {
        let has_param: Vec<FitResult> = usable.iter().filter(|f| f.param_index(&parameter).is_some()).cloned().collect();
        if has_param.len() < usable.len() {
            report
                .warnings
                .push(format!("{parameter}: not shared by all models; averaging over those that have it"));
        }
        if has_param.is_empty() {
            report.warnings.push(format!("{parameter}: no model has this parameter"));
            continue;
        }
        for cw in &report.weights.clone() {
            // renormalize over the models that carry the parameter
            let records: Vec<WeightRecord> = cw
                .records
                .iter()
                .filter(|w| has_param.iter().any(|f| f.label == w.model_label))
                .cloned()
                .collect();
            let estimate = normalize_weights(records)
                .and_then(|w| extract_parameter(&has_param, &w, &parameter))
                .and_then(average);
            match estimate {
                Ok(estimate) => report.averages.push(ParameterAverage {
                    parameter: parameter.clone(),
                    criterion: cw.criterion,
                    estimate,
                }),
                Err(e) => report.warnings.push(format!("{parameter} ({}): {e}", cw.criterion)),
            }
        }

        if let Some(w) = report.weights_for(config.criterion) {
            let entries: Vec<FullWidthEntry> = has_param
                .iter()
                .map(|f| {
                    let (mean, sigma) = f.param(&parameter).expect("filtered on parameter");
                    FullWidthEntry {
                        model_label: f.label.clone(),
                        mean,
                        sigma,
                        weight: w.iter().find(|r| r.model_label == f.label).map_or(0.0, |r| r.weight),
                        p_value: f.p_value,
                    }
                })
                .collect();
            match full_width_systematic(&entries, config.p_threshold) {
                Ok(result) => {
                    let spread = 2.0 * result.half_width;
                    report.full_width.push(FullWidthRow {
                        parameter: parameter.clone(),
                        error: result.sigma_ref.hypot(result.half_width),
                        full_spread_error: result.sigma_ref.hypot(spread),
                        result,
                    })
                }
                Err(e) => report.warnings.push(format!("{parameter} full width: {e}")),
            }
        }

        if let Some(label) = &config.fixed_model {
            match has_param.iter().find(|f| &f.label == label) {
                Some(f) => {
                    let (mean, sigma) = f.param(&parameter).expect("filtered on parameter");
                    report.fixed.push(FixedEstimate {
                        parameter: parameter.clone(),
                        model_label: label.clone(),
                        mean,
                        sigma,
                    });
                }
                None => report
                    .warnings
                    .push(format!("{parameter}: fixed model `{label}` is not among the usable fits")),
            }
        }
    }
    Ok(report)
}

fn common_parameters(report: &ScanReport) -> Vec<String> {
    let mut usable = report.usable();
    let first = usable.next().map(|r| r.fit.param_labels.clone()).unwrap_or_default();
    let rest: Vec<&FitRow> = usable.collect();
    first
        .into_iter()
        .filter(|l| rest.iter().all(|r| r.fit.param_labels.contains(l)))
        .collect()
}

/// Weights under every criterion that can be evaluated on the usable fits.
/// Criteria that fail (for example a missing trace) are reported in `warnings`.
fn compute_weights(report: &ScanReport, warnings: &mut Vec<String>) -> Vec<CriterionWeights> {
    let usable: Vec<&FitRow> = report.usable().collect();
    let flat = {
        let w0 = usable[0].model.prior().model_prior_weight();
        usable.iter().all(|r| r.model.prior().model_prior_weight() == w0)
    };
    let mut out = Vec::new();
    for criterion in Criterion::ALL {
        let records: bma_core::Result<Vec<WeightRecord>> = usable
            .iter()
            .map(|r| {
                let dets = match criterion {
                    Criterion::GaussianFull => Some(LogDets::from_fit(&r.fit, r.model.prior())?),
                    _ => None,
                };
                let prior_weight = r.model.prior().model_prior_weight();
                let model_prior = if flat { None } else { Some(prior_weight) };
                let raw = criterion_value(&r.fit, model_prior, criterion, dets)?;
                Ok(WeightRecord::new(r.fit.label.clone(), criterion, raw, prior_weight))
            })
            .collect();
        match records.and_then(normalize_weights) {
            Ok(records) => out.push(CriterionWeights { criterion, records }),
            Err(e) => warnings.push(format!("{criterion} weights: {e}")),
        }
    }
    out
}
