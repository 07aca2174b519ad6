//! Scan configuration: where the data comes from, which models to fit and
//! how to weight them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use bma_core::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A SampleSet file, `.json` or CSV.
    Path(PathBuf),
    Generator(GeneratorSpec),
}

/// Integers given either as a list or as an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntSet {
    List(Vec<i64>),
    Range { from: i64, to: i64 },
}

impl IntSet {
    pub fn values(&self) -> Vec<i64> {
        match self {
            IntSet::List(v) => v.clone(),
            IntSet::Range { from, to } => (*from..=*to).collect(),
        }
    }
}

/// One family of grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GridEntry {
    /// Degrees `m` fit to all data.
    Polynomial {
        degrees: IntSet,
        #[serde(default)]
        x_scale: Option<f64>,
        prior: String,
    },
    /// A fixed state content fit on `[t_min, t_max]` for each `t_min`.
    MultiExponential {
        #[serde(default = "one")]
        n_decay: usize,
        #[serde(default)]
        n_oscillating: usize,
        t_min: IntSet,
        #[serde(default)]
        t_max: Option<f64>,
        prior: String,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorValue {
    pub central: f64,
    pub width: f64,
}

/// Gaussian prior applied to every parameter, with per-label overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTemplate {
    pub central: f64,
    pub width: f64,
    #[serde(default)]
    pub overrides: BTreeMap<String, PriorValue>,
    #[serde(default = "unit")]
    pub model_prior_weight: f64,
}

fn unit() -> f64 {
    1.0
}

impl PriorTemplate {
    pub fn new(central: f64, width: f64) -> Self {
        Self {
            central,
            width,
            overrides: BTreeMap::new(),
            model_prior_weight: 1.0,
        }
    }

    pub fn with_override(mut self, label: &str, central: f64, width: f64) -> Self {
        self.overrides.insert(label.to_string(), PriorValue { central, width });
        self
    }

    pub fn build(&self, labels: &[String]) -> Result<PriorSpec> {
        let (central, width) = labels
            .iter()
            .map(|l| match self.overrides.get(l) {
                Some(v) => (v.central, v.width),
                None => (self.central, self.width),
            })
            .unzip();
        PriorSpec::new(central, width, self.model_prior_weight)
    }
}

/// One grid point: the model plus the value plotted on the scan axis
/// (the degree, or `t_min`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub model: ModelInstance,
    pub grid_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub data: DataSource,
    pub models: Vec<GridEntry>,
    pub priors: BTreeMap<String, PriorTemplate>,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_p_threshold")]
    pub p_threshold: f64,
    #[serde(default = "default_svd_cutoff")]
    pub svd_cutoff: f64,
    /// Overrides the generator seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Parameters to average; empty means every label shared by all models.
    #[serde(default)]
    pub parameters: Vec<String>,
    /// Label of a single model reported alongside the averages.
    #[serde(default)]
    pub fixed_model: Option<String>,
    #[serde(default)]
    pub restrict_mode: RestrictMode,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

fn default_p_threshold() -> f64 {
    0.1
}

fn default_svd_cutoff() -> f64 {
    DEFAULT_SVD_CUTOFF
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bma-out")
}

impl ScanConfig {
    /// Degrees 0..=5 with `N(0, 10²)` priors on the quadratic benchmark data.
    pub fn polynomial_benchmark(n_samples: usize, seed: u64) -> Self {
        let mut priors = BTreeMap::new();
        priors.insert("poly".to_string(), PriorTemplate::new(0.0, 10.0));
        Self {
            data: DataSource::Generator(GeneratorSpec::polynomial_benchmark(n_samples, seed)),
            models: vec![GridEntry::Polynomial {
                degrees: IntSet::Range { from: 0, to: 5 },
                x_scale: Some(16.0),
                prior: "poly".into(),
            }],
            priors,
            criterion: Criterion::Aic,
            p_threshold: 0.1,
            svd_cutoff: DEFAULT_SVD_CUTOFF,
            seed: None,
            output_dir: default_output_dir(),
            workers: None,
            parameters: vec!["a0".into()],
            fixed_model: Some(poly_label(2)),
            restrict_mode: RestrictMode::default(),
            max_iterations: None,
        }
    }

    /// Single exponential on `[t_min, 31]` for `t_min = 1..=28` on the
    /// two-state correlator benchmark data.
    pub fn correlator_benchmark(n_samples: usize, seed: u64) -> Self {
        let mut priors = BTreeMap::new();
        priors.insert(
            "exp".to_string(),
            PriorTemplate::new(0.0, 100.0).with_override("E0", 1.0, 10.0),
        );
        Self {
            data: DataSource::Generator(GeneratorSpec::correlator_benchmark(n_samples, seed)),
            models: vec![GridEntry::MultiExponential {
                n_decay: 1,
                n_oscillating: 0,
                t_min: IntSet::Range { from: 1, to: 28 },
                t_max: None,
                prior: "exp".into(),
            }],
            priors,
            criterion: Criterion::AicCut,
            p_threshold: 0.1,
            svd_cutoff: DEFAULT_SVD_CUTOFF,
            seed: None,
            output_dir: default_output_dir(),
            workers: None,
            parameters: vec!["E0".into()],
            fixed_model: Some(exp_label(1, 0, 16)),
            restrict_mode: RestrictMode::default(),
            max_iterations: None,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ScanConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.models.is_empty() {
            return bad("model grid is empty".into());
        }
        for entry in &self.models {
            let (prior, values) = match entry {
                GridEntry::Polynomial { prior, degrees, .. } => (prior, degrees.values()),
                GridEntry::MultiExponential { prior, t_min, .. } => (prior, t_min.values()),
            };
            if !self.priors.contains_key(prior) {
                return bad(format!("grid entry references undeclared prior `{prior}`"));
            }
            if values.is_empty() {
                return bad("grid entry has no points".into());
            }
            if let GridEntry::Polynomial { degrees, .. } = entry {
                if degrees.values().iter().any(|&m| m < 0) {
                    return bad("polynomial degrees must be non-negative".into());
                }
            }
            if let GridEntry::MultiExponential { n_decay, n_oscillating, .. } = entry {
                if n_decay + n_oscillating == 0 {
                    return bad("multi-exponential entry has no states".into());
                }
            }
        }
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return bad(format!("p_threshold {} outside (0, 1)", self.p_threshold));
        }
        if !(self.svd_cutoff.is_finite() && self.svd_cutoff >= 0.0 && self.svd_cutoff < 1.0) {
            return bad(format!("svd_cutoff {} outside [0, 1)", self.svd_cutoff));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1".into());
        }
        if let DataSource::Generator(spec) = &self.data {
            self.generator_spec(spec)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn generator_spec(&self, spec: &GeneratorSpec) -> GeneratorSpec {
        match self.seed {
            Some(s) => spec.clone().with_seed(s),
            None => spec.clone(),
        }
    }

    /// Reads or generates the data set.
    ///
    /// A missing or empty data file is a configuration error; unreadable
    /// contents are a data error.
    pub fn load_data(&self) -> CliResult<SampleSet> {
        match &self.data {
            DataSource::Generator(spec) => {
                generate(&self.generator_spec(spec)).map_err(|e| CliError::Data(e.to_string()))
            }
            DataSource::Path(path) => {
                let meta = std::fs::metadata(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if meta.len() == 0 {
                    return Err(CliError::Config(format!("{}: data file is empty", path.display())));
                }
                let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let reader = BufReader::new(file);
                let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                let set = if is_json {
                    SampleSet::read_json(reader)
                } else {
                    SampleSet::read_csv(reader)
                };
                set.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        let defaults = FitOptions::default();
        FitOptions {
            restrict_mode: self.restrict_mode,
            max_iterations: self.max_iterations.unwrap_or(defaults.max_iterations),
            ..defaults
        }
    }

    /// Expands the grid against the data abscissa.
    pub fn build_models(&self, abscissa: &[f64]) -> CliResult<Vec<GridPoint>> {
        let cfg_err = |e: bma_core::Error| CliError::Config(e.to_string());
        let mut out = Vec::new();
        for entry in &self.models {
            match entry {
                GridEntry::Polynomial { degrees, x_scale, prior } => {
                    for m in degrees.values() {
                        let family = ModelFamily::Polynomial {
                            degree: m as usize,
                            x_scale: *x_scale,
                        };
                        let spec = self.priors[prior].build(&family.param_labels()).map_err(cfg_err)?;
                        let model =
                            ModelInstance::new(family, SubsetSelector::keep_all(abscissa.len()), spec, poly_label(m))
                                .map_err(cfg_err)?;
                        out.push(GridPoint {
                            model,
                            grid_x: m as f64,
                        });
                    }
                }
                GridEntry::MultiExponential {
                    n_decay,
                    n_oscillating,
                    t_min,
                    t_max,
                    prior,
                } => {
                    for t in t_min.values() {
                        let family = ModelFamily::MultiExponential {
                            n_decay: *n_decay,
                            n_oscillating: *n_oscillating,
                        };
                        let sel = SubsetSelector::window(abscissa, Some(t as f64), *t_max)
                            .map_err(|e| CliError::Config(format!("t_min = {t}: {e}")))?;
                        let spec = self.priors[prior].build(&family.param_labels()).map_err(cfg_err)?;
                        let label = exp_label(*n_decay, *n_oscillating, t);
                        let model = ModelInstance::new(family, sel, spec, label).map_err(cfg_err)?;
                        out.push(GridPoint {
                            model,
                            grid_x: t as f64,
                        });
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for p in &out {
            if !seen.insert(p.model.label().to_string()) {
                return Err(CliError::Config(format!("duplicate grid point `{}`", p.model.label())));
            }
        }
        Ok(out)
    }
}

pub fn poly_label(degree: i64) -> String {
    format!("poly_m{degree}")
}

pub fn exp_label(n_decay: usize, n_oscillating: usize, t_min: i64) -> String {
    format!("exp_{n_decay}+{n_oscillating}_tmin{t_min}")
}
