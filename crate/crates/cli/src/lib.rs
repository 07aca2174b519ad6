//! Command-line driver for model-averaged fits: data generation, single fits,
//! grid scans and replica scaling studies.

pub mod config;
pub mod error;
pub mod report;
pub mod scaling;
pub mod scan;

use bma_core::prelude::*;

pub use config::{DataSource, GridEntry, IntSet, PriorTemplate, ScanConfig};
pub use error::{CliError, CliResult};
pub use scaling::{run_scaling_study, write_scaling_outputs, ScalingOptions, ScalingReport};
pub use scan::{scan, ScanReport};

/// Loads the data, runs the scan and writes every artifact to
/// `config.output_dir`. Nothing is written if the config or data is invalid.
///
/// Returns [`CliError::AllFitsFailed`] after writing the report when no fit
/// converged.
pub fn run_scan(config: &ScanConfig) -> CliResult<ScanReport> {
    config.validate()?;
    let data = config.load_data()?;
    let report = scan(config, &data)?;
    report::write_scan_outputs(config, &data, &report, &config.output_dir)?;
    if report.usable().next().is_none() {
        let n = report.fits.len() + report.excluded.len();
        return Err(CliError::AllFitsFailed(format!("none of {n} grid points converged")));
    }
    Ok(report)
}

/// Fits the single grid point labelled `label`.
pub fn run_fit(config: &ScanConfig, label: &str) -> CliResult<FitResult> {
    config.validate()?;
    let data = config.load_data()?;
    let point = config
        .build_models(data.abscissa())?
        .into_iter()
        .find(|p| p.model.label() == label)
        .ok_or_else(|| CliError::Config(format!("no grid point labelled `{label}`")))?;
    let est = estimate_covariance(&data, config.svd_cutoff).map_err(|e| CliError::Data(e.to_string()))?;
    let opts = config.fit_options();
    fit(&point.model, &data, &est, &opts).map_err(|e| CliError::AllFitsFailed(format!("{label}: {e}")))
}
