//! Replica study of the estimators against the number of samples.

use std::fs;
use std::path::Path;

use bma_core::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ScanConfig};
use crate::error::{output_err, CliError, CliResult};
use crate::report::write_json;
use crate::scan::scan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    pub n_values: Vec<usize>,
    pub n_replicas: usize,
    /// Replica `r` uses seed `base_seed + r` at every `N`.
    pub base_seed: u64,
    pub parameter: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub n_samples: usize,
    pub replica: usize,
    pub seed: u64,
    /// Average under the configured criterion.
    pub average: Option<Estimate>,
    pub naive: Option<Estimate>,
    pub fixed: Option<Estimate>,
    /// Highest-weight qualifying fit with the half-width systematic.
    pub full_width: Option<Estimate>,
    /// Error with the full max − min spread as systematic instead.
    pub full_spread_error: Option<f64>,
    pub n_usable: usize,
    pub n_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummaryRow {
    pub n_samples: usize,
    pub estimator: String,
    pub n_cells: usize,
    pub mean: f64,
    /// Mean over replicas of the quoted error.
    pub mean_error: f64,
    /// Replica-to-replica standard deviation of the central value.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub criterion: Criterion,
    pub options: ScalingOptions,
    pub cells: Vec<ScalingCell>,
    pub summary: Vec<ScalingSummaryRow>,
}

impl ScalingReport {
    /// Fraction of cells where `pred` holds, over the cells where it is
    /// defined (`Some`). Returns `(fraction, n_defined, n_total)`.
    pub fn fraction(&self, pred: impl Fn(&ScalingCell) -> Option<bool>) -> (f64, usize, usize) {
        let outcomes: Vec<bool> = self.cells.iter().filter_map(&pred).collect();
        let hits = outcomes.iter().filter(|&&b| b).count();
        let frac = if outcomes.is_empty() {
            0.0
        } else {
            hits as f64 / outcomes.len() as f64
        };
        (frac, outcomes.len(), self.cells.len())
    }
}

pub fn run_scaling_study(config: &ScanConfig, opts: &ScalingOptions) -> CliResult<ScalingReport> {
    config.validate()?;
    if opts.n_values.is_empty() {
        return Err(CliError::Config("N list is empty".into()));
    }
    if opts.n_replicas == 0 {
        return Err(CliError::Config("need at least one replica".into()));
    }
    let DataSource::Generator(spec) = &config.data else {
        return Err(CliError::Config("a scaling study needs a generator data source".into()));
    };
    let jobs: Vec<(usize, usize)> = opts
        .n_values
        .iter()
        .flat_map(|&n| (0..opts.n_replicas).map(move |r| (n, r)))
        .collect();
    let mut inner = config.clone();
    inner.workers = None;
    inner.seed = None;
    if !inner.parameters.contains(&opts.parameter) {
        inner.parameters = vec![opts.parameter.clone()];
    }

    let run_cell = |&(n, replica): &(usize, usize)| -> CliResult<ScalingCell> {
        let seed = opts.base_seed.wrapping_add(replica as u64);
        let mut cfg = inner.clone();
        cfg.data = DataSource::Generator(spec.clone().with_samples(n).with_seed(seed));
        let data = cfg.load_data()?;
        let report = scan(&cfg, &data)?;
        let p = &opts.parameter;
        let avg = |c: Criterion| {
            report.average_for(p, c).map(|e| Estimate {
                mean: e.mean,
                error: e.sigma_total(),
            })
        };
        let fw = report.full_width_for(p);
        Ok(ScalingCell {
            n_samples: n,
            replica,
            seed,
            average: avg(config.criterion),
            naive: avg(Criterion::Naive),
            fixed: report.fixed_for(p).map(|f| Estimate {
                mean: f.mean,
                error: f.sigma,
            }),
            full_width: fw.map(|f| Estimate {
                mean: f.result.mean_ref,
                error: f.error,
            }),
            full_spread_error: fw.map(|f| f.full_spread_error),
            n_usable: report.usable().count(),
            n_warnings: report.warnings.len(),
        })
    };
    let cells: CliResult<Vec<ScalingCell>> = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| jobs.par_iter().map(run_cell).collect()),
        None => jobs.par_iter().map(run_cell).collect(),
    };
    let cells = cells?;
    let summary = summarize(&cells, &opts.n_values);
    Ok(ScalingReport {
        criterion: config.criterion,
        options: opts.clone(),
        cells,
        summary,
    })
}

fn summarize(cells: &[ScalingCell], n_values: &[usize]) -> Vec<ScalingSummaryRow> {
    type Pick = fn(&ScalingCell) -> Option<Estimate>;
    let estimators: [(&str, Pick); 4] = [
        ("average", |c| c.average),
        ("fixed", |c| c.fixed),
        ("full_width", |c| c.full_width),
        ("naive", |c| c.naive),
    ];
    let mut rows = Vec::new();
    for &n in n_values {
        for (name, pick) in estimators {
            let est: Vec<Estimate> = cells.iter().filter(|c| c.n_samples == n).filter_map(pick).collect();
            if est.is_empty() {
                continue;
            }
            let len = est.len() as f64;
            let mean = est.iter().map(|e| e.mean).sum::<f64>() / len;
            let mean_error = est.iter().map(|e| e.error).sum::<f64>() / len;
            let spread = if est.len() > 1 {
                (est.iter().map(|e| (e.mean - mean).powi(2)).sum::<f64>() / (len - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(ScalingSummaryRow {
                n_samples: n,
                estimator: name.to_string(),
                n_cells: est.len(),
                mean,
                mean_error,
                spread,
            });
        }
    }
    rows
}

pub fn write_scaling_outputs(report: &ScalingReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| output_err(format!("{}: {e}", dir.display())))?;
    write_json(report, &dir.join("scaling.json"))?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let path = dir.join("scaling.csv");
    let mut w = csv::Writer::from_path(&path).map_err(output_err)?;
    w.write_record([
        "n_samples",
        "replica",
        "seed",
        "average_mean",
        "average_error",
        "fixed_mean",
        "fixed_error",
        "full_width_mean",
        "full_width_error",
        "full_spread_error",
        "naive_mean",
        "naive_error",
        "n_usable",
    ])
    .map_err(output_err)?;
    for c in &report.cells {
        let pair = |e: Option<Estimate>| (opt(e.map(|e| e.mean)), opt(e.map(|e| e.error)));
        let (am, ae) = pair(c.average);
        let (fm, fe) = pair(c.fixed);
        let (wm, we) = pair(c.full_width);
        let (nm, ne) = pair(c.naive);
        w.write_record([
            c.n_samples.to_string(),
            c.replica.to_string(),
            c.seed.to_string(),
            am,
            ae,
            fm,
            fe,
            wm,
            we,
            opt(c.full_spread_error),
            nm,
            ne,
            c.n_usable.to_string(),
        ])
        .map_err(output_err)?;
    }
    w.flush().map_err(output_err)?;

    let path = dir.join("scaling_summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(output_err)?;
    w.write_record(["n_samples", "estimator", "n_cells", "mean", "mean_error", "spread"])
        .map_err(output_err)?;
    for r in &report.summary {
        w.write_record([
            r.n_samples.to_string(),
            r.estimator.clone(),
            r.n_cells.to_string(),
            r.mean.to_string(),
            r.mean_error.to_string(),
            r.spread.to_string(),
        ])
        .map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}
