//! Command-line driver: simulate, identify, validate, estimate, compare, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use kdmhe::config::{presets, RunConfig};
use kdmhe::identify::KoopmanModel;
use kdmhe::io::{self, Metadata};
use kdmhe::pipeline::{self, Comparison, Dataset, EstimationReport, ValidationReport};
use kdmhe::simulate::Trajectory;
use kdmhe::Error;

#[derive(Parser, Debug)]
#[command(
    name = "kdmhe",
    version,
    about = "Koopman subsystem identification and distributed MHE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file, or a preset name (cstr, agro, linear).
    #[arg(long, short)]
    config: String,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the process and write train/validate/test trajectories.
    Simulate(Common),
    /// Fit subsystem models on a training trajectory.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Training trajectory (default: <out>/train.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Open-loop rollout of a model over a validation trajectory.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Model file (default: <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Validation trajectory (default: <out>/validate.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the distributed estimator over a test trajectory.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Model file (default: <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Test trajectory (default: <out>/test.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare Koopman and linearized estimators on the same data.
    Compare(Common),
    /// Run the whole pipeline and write a summary.
    Report(Common),
}

/// Files written by one command, with what produced them.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    config: String,
    config_hash: String,
    seed: u64,
    software_version: String,
    artifacts: Vec<String>,
}

struct Context {
    config: RunConfig,
    hash: String,
    out: PathBuf,
    parallel: bool,
    artifacts: Vec<String>,
}

impl Context {
    fn new(common: &Common) -> Result<Self, Error> {
        let mut config = load_config(&common.config)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be positive".into()));
            }
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                warn!("thread pool already initialised: {e}");
            }
        }
        std::fs::create_dir_all(&common.out)?;
        Ok(Context {
            hash: config.hash(),
            config,
            out: common.out.clone(),
            parallel: common.threads != Some(1),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn meta(&self, kind: &str) -> Metadata {
        Metadata::new(kind, self.config.seed, &self.hash)
    }

    fn finish(self, command: &str) -> Result<(), Error> {
        let manifest = Manifest {
            command: command.into(),
            config: self.config.name.clone(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            software_version: io::SOFTWARE_VERSION.into(),
            artifacts: self.artifacts,
        };
        io::write_json(self.out.join(format!("{command}.manifest.json")), &manifest)
    }
}

fn load_config(spec: &str) -> Result<RunConfig, Error> {
    let path = Path::new(spec);
    if path.exists() {
        return RunConfig::from_file(path);
    }
    presets::by_name(spec)
        .ok_or_else(|| Error::Config(format!("'{spec}' is neither a file nor a preset")))
}

fn write_dataset(ctx: &mut Context, data: &Dataset) -> Result<(), Error> {
    for (name, traj) in data.segments() {
        let path = ctx.path(&format!("{name}.csv"));
        io::write_trajectory(&path, traj, &ctx.hash)?;
        info!("wrote {} ({} samples)", path.display(), traj.len());
    }
    Ok(())
}

fn write_model(ctx: &mut Context, model: &KoopmanModel) -> Result<(), Error> {
    let path = ctx.path("model.json");
    model.save(&path)?;
    io::write_metadata(&path, &ctx.meta("model"))?;
    let rows: Vec<Vec<f64>> = model
        .subsystems
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.diagnostics.map(|d| (i, d)))
        .map(|(i, d)| {
            vec![
                i as f64,
                d.regressors as f64,
                d.rank as f64,
                d.samples as f64,
                d.normal_residual,
                d.rms_residual,
            ]
        })
        .collect();
    for r in &rows {
        println!(
            "subsystem {}: lifted {} regressors {} rank {} rms residual {:.3e}",
            r[0],
            model.topology.subsystem(r[0] as usize).lifted_dim,
            r[1],
            r[2],
            r[5]
        );
        if r[2] < r[1] {
            warn!("subsystem {}: regressor rank {} below {}", r[0], r[2], r[1]);
        }
    }
    let table = io::Table {
        header: [
            "subsystem",
            "regressors",
            "rank",
            "samples",
            "normal_residual",
            "rms_residual",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    };
    let path = ctx.path("diagnostics.csv");
    io::write_table(&path, "diagnostics", &table)?;
    io::write_metadata(&path, &ctx.meta("diagnostics"))
}

fn write_validation(
    ctx: &mut Context,
    data: &Trajectory,
    report: &ValidationReport,
) -> Result<(), Error> {
    let path = ctx.path("prediction.csv");
    io::write_prediction(
        &path,
        &data.time,
        &report.prediction,
        &ctx.meta("prediction"),
    )?;
    let path = ctx.path("validation_rmse.csv");
    io::write_rmse(&path, &report.rmse_per_state, &ctx.meta("rmse"))?;
    for (g, r) in report.rmse_per_state.iter().enumerate() {
        println!("state {g}: validation rmse {r:.4e}");
    }
    println!("validation rmse {:.4e}", report.rmse);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateSummary {
    rmse: f64,
    mean_solve_time: f64,
    solves: usize,
    max_violation: f64,
    min_covariance_eigenvalue: f64,
    max_covariance_asymmetry: f64,
}

fn write_estimation(
    ctx: &mut Context,
    prefix: &str,
    data: &Trajectory,
    report: &EstimationReport,
) -> Result<(), Error> {
    let est = &report.estimate;
    let path = ctx.path(&format!("{prefix}estimate.csv"));
    io::write_estimate(&path, &data.time, est, &ctx.meta("estimate"))?;
    let path = ctx.path(&format!("{prefix}error_norms.csv"));
    io::write_error_norms(
        &path,
        &data.time,
        &report.error_norms,
        &ctx.meta("error-norms"),
    )?;
    let path = ctx.path(&format!("{prefix}timing.csv"));
    io::write_timing(&path, &est.solves, &ctx.meta("timing"))?;
    let summary = EstimateSummary {
        rmse: report.rmse,
        mean_solve_time: report.mean_solve_time,
        solves: est.solves.len(),
        max_violation: est.max_violation,
        min_covariance_eigenvalue: est.covariance.min_eigenvalue,
        max_covariance_asymmetry: est.covariance.max_asymmetry,
    };
    let path = ctx.path(&format!("{prefix}summary.json"));
    io::write_json(&path, &summary)?;
    println!(
        "{}rmse {:.4e}, mean solve {:.3e} s over {} solves",
        prefix, report.rmse, report.mean_solve_time, summary.solves
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonRecord {
    method: String,
    rmse: f64,
}

fn write_comparison(ctx: &mut Context, cmp: &Comparison) -> Result<(), Error> {
    let rows = cmp.rows();
    let records: Vec<ComparisonRecord> = rows
        .iter()
        .map(|r| ComparisonRecord {
            method: r.method.clone(),
            rmse: r.rmse,
        })
        .collect();
    let path = ctx.path("comparison.csv");
    io::write_records(&path, "comparison", &records)?;
    io::write_metadata(&path, &ctx.meta("comparison"))?;
    let path = ctx.path("comparison_timing.csv");
    io::write_records(&path, "comparison-timing", &rows)?;
    println!("{:<18} {:>12} {:>14}", "method", "rmse", "mean solve (s)");
    for r in &rows {
        println!(
            "{:<18} {:>12.4e} {:>14.3e}",
            r.method, r.rmse, r.mean_solve_time
        );
    }
    println!("rmse ratio (linearized / koopman) {:.2}", cmp.ratio());
    Ok(())
}

fn simulate(common: &Common) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let data = pipeline::simulate(&ctx.config)?;
    write_dataset(&mut ctx, &data)?;
    let path = ctx.path("config.toml");
    std::fs::write(path, ctx.config.to_toml()?)?;
    ctx.finish("simulate")
}

fn identify(common: &Common, data: Option<&Path>) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let train = io::read_trajectory(
        data.map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.out.join("train.csv")),
    )?;
    let model = pipeline::identify(&ctx.config, &train, ctx.parallel)?;
    write_model(&mut ctx, &model)?;
    ctx.finish("identify")
}

fn validate(common: &Common, model: Option<&Path>, data: Option<&Path>) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let model = KoopmanModel::load(
        model
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.out.join("model.json")),
    )?;
    let data = io::read_trajectory(
        data.map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.out.join("validate.csv")),
    )?;
    let report = pipeline::validate(&model, &data)?;
    write_validation(&mut ctx, &data, &report)?;
    ctx.finish("validate")
}

fn estimate(common: &Common, model: Option<&Path>, data: Option<&Path>) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let model = KoopmanModel::load(
        model
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.out.join("model.json")),
    )?;
    let data = io::read_trajectory(
        data.map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.out.join("test.csv")),
    )?;
    let report = pipeline::estimate(&ctx.config, &model, &data, &model.scaler, ctx.parallel)?;
    write_estimation(&mut ctx, "", &data, &report)?;
    ctx.finish("estimate")
}

fn compare(common: &Common) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let data = pipeline::simulate(&ctx.config)?;
    let model = pipeline::identify(&ctx.config, &data.train, ctx.parallel)?;
    let cmp = pipeline::compare(&ctx.config, &model, &data, ctx.parallel)?;
    write_comparison(&mut ctx, &cmp)?;
    ctx.finish("compare")
}

fn report(common: &Common) -> Result<(), Error> {
    let mut ctx = Context::new(common)?;
    let t = std::time::Instant::now();
    let data = pipeline::simulate(&ctx.config)?;
    write_dataset(&mut ctx, &data)?;
    let model = pipeline::identify(&ctx.config, &data.train, ctx.parallel)?;
    write_model(&mut ctx, &model)?;
    let validation = pipeline::validate(&model, &data.validate)?;
    write_validation(&mut ctx, &data.validate, &validation)?;
    if ctx.config.baseline.is_some() {
        let cmp = pipeline::compare(&ctx.config, &model, &data, ctx.parallel)?;
        write_estimation(&mut ctx, "", &data.test, &cmp.koopman)?;
        write_estimation(&mut ctx, "baseline_", &data.test, &cmp.baseline)?;
        write_comparison(&mut ctx, &cmp)?;
    } else {
        let est = pipeline::estimate(&ctx.config, &model, &data.test, &model.scaler, ctx.parallel)?;
        write_estimation(&mut ctx, "", &data.test, &est)?;
    }
    println!("pipeline finished in {:.1} s", t.elapsed().as_secs_f64());
    ctx.finish("report")
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Identify { common, data } => identify(common, data.as_deref()),
        Command::Validate {
            common,
            model,
            data,
        } => validate(common, model.as_deref(), data.as_deref()),
        Command::Estimate {
            common,
            model,
            data,
        } => estimate(common, model.as_deref(), data.as_deref()),
        Command::Compare(c) => compare(c),
        Command::Report(c) => report(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
