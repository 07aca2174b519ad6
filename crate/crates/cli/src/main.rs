use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bma_cli::{run_fit, run_scan, run_scaling_study, write_scaling_outputs, CliError, CliResult, ScalingOptions, ScanConfig};
use bma_core::prelude::*;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bma", version, about = "Model-averaged least-squares fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Polynomial,
    Correlator,
}

#[derive(clap::Args)]
struct Overrides {
    /// Scan configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// aic, aic_cut, tic, gaussian_full or naive.
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn load(&self) -> CliResult<ScanConfig> {
        let mut cfg = ScanConfig::load(&self.config)?;
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(c) = self.criterion {
            cfg.criterion = c;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic SampleSet (CSV, or JSON for a `.json` path) and its
    /// generator spec next to it.
    Gen {
        /// Built-in benchmark generator.
        #[arg(long, value_enum, conflicts_with = "spec")]
        kind: Option<Benchmark>,
        /// Generator spec (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit a single grid point and print the result as JSON.
    Fit {
        #[command(flatten)]
        overrides: Overrides,
        /// Grid point label, e.g. poly_m2 or exp_1+0_tmin10.
        #[arg(long)]
        model: String,
    },
    /// Fit the whole grid, weight and average.
    Scan {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Replica study of the estimators against sample size.
    Scaling {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [20, 40, 80, 160, 320, 640])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        replicas: usize,
        /// Parameter to track; defaults to the first configured one.
        #[arg(long)]
        parameter: Option<String>,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

fn gen(kind: Option<Benchmark>, spec: Option<PathBuf>, samples: Option<usize>, seed: Option<u64>, output: &Path) -> CliResult<()> {
    let mut spec = match (kind, spec) {
        (_, Some(path)) => {
            let f = File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_reader::<_, GeneratorSpec>(f).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (Some(Benchmark::Polynomial), None) => GeneratorSpec::polynomial_benchmark(160, 0),
        (Some(Benchmark::Correlator), None) => GeneratorSpec::correlator_benchmark(500, 0),
        (None, None) => return Err(CliError::Config("give --kind or --spec".into())),
    };
    if let Some(n) = samples {
        spec = spec.with_samples(n);
    }
    if let Some(s) = seed {
        spec = spec.with_seed(s);
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = generate(&spec).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = BufWriter::new(File::create(output).map_err(|e| io_err(output, e))?);
    let is_json = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        data.write_json(file)
    } else {
        data.write_csv(file)
    }
    .map_err(|e| io_err(output, e))?;
    let mut spec_path = output.as_os_str().to_owned();
    spec_path.push(".spec.json");
    let spec_path = PathBuf::from(spec_path);
    let f = File::create(&spec_path).map_err(|e| io_err(&spec_path, e))?;
    serde_json::to_writer_pretty(f, &spec).map_err(|e| io_err(&spec_path, e))?;
    println!("wrote {} ({} samples × {} points)", output.display(), data.n_samples(), data.dim());
    Ok(())
}

fn print_scan(report: &bma_cli::ScanReport) {
    let usable = report.usable().count();
    println!(
        "{} fits ({} converged, {} excluded), criterion {}",
        report.fits.len(),
        usable,
        report.excluded.len(),
        report.criterion
    );
    for p in &report.parameters {
        for c in [report.criterion, Criterion::Naive] {
            if let Some(a) = report.average_for(p, c) {
                println!(
                    "  <{p}> [{c}] = {:.6} ± {:.6} (stat {:.6}, syst {:.6})",
                    a.mean,
                    a.sigma_total(),
                    a.var_statistical.sqrt(),
                    a.var_systematic.sqrt()
                );
            }
        }
        if let Some(fw) = report.full_width_for(p) {
            println!(
                "  {p} [full width, ref {}] = {:.6} ± {:.6}",
                fw.result.reference, fw.result.mean_ref, fw.error
            );
        }
        if let Some(f) = report.fixed_for(p) {
            println!("  {p} [fixed {}] = {:.6} ± {:.6}", f.model_label, f.mean, f.sigma);
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen {
            kind,
            spec,
            samples,
            seed,
            output,
        } => gen(kind, spec, samples, seed, &output),
        Command::Fit { overrides, model } => {
            let cfg = overrides.load()?;
            let res = run_fit(&cfg, &model)?;
            println!("{}", serde_json::to_string_pretty(&res).map_err(|e| CliError::Output(e.to_string()))?);
            Ok(())
        }
        Command::Scan { overrides } => {
            let cfg = overrides.load()?;
            let result = run_scan(&cfg);
            match &result {
                Ok(report) => print_scan(report),
                Err(CliError::AllFitsFailed(_)) => {}
                Err(_) => return result.map(|_| ()),
            }
            println!("outputs in {}", cfg.output_dir.display());
            result.map(|_| ())
        }
        Command::Scaling {
            overrides,
            n,
            replicas,
            parameter,
        } => {
            let cfg = overrides.load()?;
            let parameter = match parameter.or_else(|| cfg.parameters.first().cloned()) {
                Some(p) => p,
                None => return Err(CliError::Config("no parameter to track; pass --parameter".into())),
            };
            let opts = ScalingOptions {
                n_values: n,
                n_replicas: replicas,
                base_seed: cfg.seed.unwrap_or(0),
                parameter,
            };
            let report = run_scaling_study(&cfg, &opts)?;
            write_scaling_outputs(&report, &cfg.output_dir)?;
            for r in &report.summary {
                println!(
                    "N={:<5} {:<11} {:.6} ± {:.6} (spread {:.6}, {} cells)",
                    r.n_samples, r.estimator, r.mean, r.mean_error, r.spread, r.n_cells
                );
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
