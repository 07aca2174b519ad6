//! Output files for a scan: report.json, fits.csv, weights.csv and
//! plotdata/*.csv.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use bma_core::prelude::*;

use crate::config::ScanConfig;
use crate::error::{output_err, CliResult};
use crate::scan::ScanReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Splits a `;`-joined list written by [`write_fits_csv`].
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
        .collect()
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| output_err(format!("{}: {e}", path.display())))
}

pub const FITS_HEADER: [&str; 17] = [
    "model_label",
    "grid_x",
    "k",
    "n_kept",
    "n_cut",
    "dof",
    "chi2_data",
    "chi2_prior",
    "chi2_aug",
    "p_value",
    "tic_trace",
    "converged",
    "n_iterations",
    "gradient_norm",
    "param_labels",
    "params",
    "param_sigmas",
];

pub fn write_fits_csv(report: &ScanReport, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(FITS_HEADER).map_err(output_err)?;
    for row in &report.fits {
        let f = &row.fit;
        let cov = f.param_cov_matrix();
        w.write_record([
            f.label.clone(),
            row.grid_x.to_string(),
            f.k.to_string(),
            f.n_kept.to_string(),
            f.n_cut.to_string(),
            f.dof.to_string(),
            f.chi2_data.to_string(),
            f.chi2_prior.to_string(),
            f.chi2_aug.to_string(),
            opt(f.p_value),
            opt(f.tic_trace),
            f.converged.to_string(),
            f.n_iterations.to_string(),
            f.gradient_norm.to_string(),
            f.param_labels.join(";"),
            join(f.params.iter().copied()),
            join((0..f.k).map(|i| cov[(i, i)].sqrt())),
        ])
        .map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}

pub fn write_weights_csv(report: &ScanReport, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["criterion", "model_label", "raw_ic", "log_weight", "weight", "model_prior"])
        .map_err(output_err)?;
    for cw in &report.weights {
        for r in &cw.records {
            w.write_record([
                cw.criterion.to_string(),
                r.model_label.clone(),
                r.raw_ic.to_string(),
                r.log_weight.to_string(),
                r.weight.to_string(),
                r.model_prior.to_string(),
            ])
            .map_err(output_err)?;
        }
    }
    w.flush().map_err(output_err)
}

/// Data means with standard errors and, where defined, the effective mass.
pub fn write_data_plot(data: &SampleSet, path: &Path) -> CliResult<()> {
    let est = estimate_covariance(data, DEFAULT_SVD_CUTOFF).map_err(output_err)?;
    let mean: Vec<f64> = est.mean().iter().copied().collect();
    let meff = effective_mass(&mean);
    let n = data.n_samples() as f64;
    let mut w = csv_writer(path)?;
    w.write_record(["x", "mean", "sigma_mean", "effective_mass"]).map_err(output_err)?;
    for (i, x) in data.abscissa().iter().enumerate() {
        w.write_record([
            x.to_string(),
            mean[i].to_string(),
            (est.cov()[(i, i)] / n).sqrt().to_string(),
            opt(meff.get(i).copied().flatten()),
        ])
        .map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}

/// Per-model values of `parameter` against the scan axis, with p-values and
/// weights (the lower panels of the scan figures).
pub fn write_parameter_plot(report: &ScanReport, parameter: &str, path: &Path) -> CliResult<()> {
    let mut header = vec![
        "model_label".to_string(),
        "grid_x".into(),
        "mean".into(),
        "sigma".into(),
        "p_value".into(),
        "converged".into(),
    ];
    header.extend(report.weights.iter().map(|w| format!("weight_{}", w.criterion)));
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(output_err)?;
    for row in &report.fits {
        let Some((mean, sigma)) = row.fit.param(parameter) else {
            continue;
        };
        let mut rec = vec![
            row.fit.label.clone(),
            row.grid_x.to_string(),
            mean.to_string(),
            sigma.to_string(),
            opt(row.fit.p_value),
            row.fit.converged.to_string(),
        ];
        for cw in &report.weights {
            let weight = cw.records.iter().find(|r| r.model_label == row.fit.label).map(|r| r.weight);
            rec.push(opt(weight));
        }
        w.write_record(&rec).map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}

/// One row per estimator of `parameter`.
pub fn write_estimator_plot(report: &ScanReport, parameter: &str, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["estimator", "mean", "sigma", "sigma_statistical", "sigma_systematic"])
        .map_err(output_err)?;
    for a in report.averages.iter().filter(|a| a.parameter == parameter) {
        let e = &a.estimate;
        w.write_record([
            format!("average_{}", a.criterion),
            e.mean.to_string(),
            e.sigma_total().to_string(),
            e.var_statistical.sqrt().to_string(),
            e.var_systematic.sqrt().to_string(),
        ])
        .map_err(output_err)?;
    }
    if let Some(fw) = report.full_width_for(parameter) {
        let r = &fw.result;
        w.write_record([
            "full_width".to_string(),
            r.mean_ref.to_string(),
            fw.error.to_string(),
            r.sigma_ref.to_string(),
            r.half_width.to_string(),
        ])
        .map_err(output_err)?;
    }
    if let Some(f) = report.fixed_for(parameter) {
        w.write_record([
            format!("fixed_{}", f.model_label),
            f.mean.to_string(),
            f.sigma.to_string(),
            f.sigma.to_string(),
            "0".to_string(),
        ])
        .map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| output_err(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(output_err)
}

/// Writes every scan artifact under `dir`.
pub fn write_scan_outputs(config: &ScanConfig, data: &SampleSet, report: &ScanReport, dir: &Path) -> CliResult<()> {
    let plot_dir = dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(|e| output_err(format!("{}: {e}", plot_dir.display())))?;
    write_json(config, &dir.join("config.json"))?;
    write_json(report, &dir.join("report.json"))?;
    write_fits_csv(report, &dir.join("fits.csv"))?;
    write_weights_csv(report, &dir.join("weights.csv"))?;
    write_data_plot(data, &plot_dir.join("data.csv"))?;
    for p in &report.parameters {
        let name = safe_name(p);
        write_parameter_plot(report, p, &plot_dir.join(format!("fits_{name}.csv")))?;
        write_estimator_plot(report, p, &plot_dir.join(format!("estimates_{name}.csv")))?;
    }
    Ok(())
}
