//! Command-line interface.
//!
//! Every tunable flag may also be set in a TOML file given with `--config`:
//! global keys at the top level and per-command keys in a table named after
//! the command, using the long flag name (`burn-in = 500` under `[fit]`).
//! Flags given on the command line win.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sstqr_core::optimizer::{aic_scan_traced, fit_mle_from, fit_shell, problem_dimensions, AicScan, TraceRow};
use sstqr_core::sampler::run_chain;
use sstqr_core::simulation::{
    generate_dataset, BayesFitter, Fitter, MlFitter, OracleFitter, SimConfig, DEFAULT_GRID,
};
use sstqr_core::{Dataset, McmcConfig, OptimConfig, QuantileModel};

use crate::error::{AppError, Result};
use crate::export::{default_lattice, export_grid, GridMode, GridRequest};
use crate::io::{build_dataset, read_observations_path, write_observations, Observation};
use crate::persist::{self, Artifact};

#[derive(Debug, Parser)]
#[command(name = "sstqr", version, about = "Spatio-temporal simultaneous quantile regression")]
pub struct Cli {
    /// Random seed for simulation and sampling [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the benchmark [default: available cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with default flag values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the benchmark surfaces
    Simulate(SimulateArgs),
    /// Fit a model by maximum likelihood or posterior sampling
    Fit(FitArgs),
    /// Evaluate a fitted model or posterior samples on a grid
    Predict(PredictArgs),
    /// Fit a range of knot counts and keep the lowest AIC
    AicScan(AicScanArgs),
    /// Run the simulation benchmark and report mean squared errors
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of sites [default: 50]
    #[arg(long)]
    sites: Option<usize>,
    /// Observations per site on an equidistant time grid, at least 2 [default: 10]
    #[arg(long)]
    n: Option<usize>,
    /// Replication index; selects an independent random stream [default: 0]
    #[arg(long)]
    replication: Option<usize>,
    /// Output observation CSV
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file describing the generating model
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimArgs {
    /// Initial global step size [default: 1]
    #[arg(long)]
    s_initial: Option<f64>,
    /// Step decay in the first run [default: 2]
    #[arg(long)]
    rho1: Option<f64>,
    /// Step decay in later runs [default: 1.5]
    #[arg(long)]
    rho2: Option<f64>,
    /// A run stops when the step falls below this [default: 0.1]
    #[arg(long)]
    phi: Option<f64>,
    /// Floor for downward jumps [default: 0.01]
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum gain that keeps the step size [default: 0.1]
    #[arg(long)]
    tol_fun_1: Option<f64>,
    /// Minimum gain of a run that triggers another run [default: 0.1]
    #[arg(long)]
    tol_fun_2: Option<f64>,
    /// Iterations per run [default: 5000]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Maximum number of runs [default: 200]
    #[arg(long)]
    max_runs: Option<usize>,
}

#[derive(Debug, Args)]
struct McmcArgs {
    /// Sweeps over all blocks [default: 10000]
    #[arg(long)]
    iterations: Option<usize>,
    /// Leading sweeps discarded [default: 1000]
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every k-th sweep after burn-in [default: 1]
    #[arg(long)]
    thin: Option<usize>,
    /// Proposal spread r > 1 for multipliers drawn from U(1/r, r) [default: 1.3]
    #[arg(long)]
    r: Option<f64>,
    /// Smallest spacing a proposal may hold [default: 1e-8]
    #[arg(long)]
    floor: Option<f64>,
    /// Visit blocks in random order each sweep
    #[arg(long)]
    random_scan: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitMode {
    Ml,
    Bayes,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Observation CSV with columns site_id, z1..zd, time, value
    #[arg(long)]
    data: PathBuf,
    /// Maximum likelihood or posterior sampling [default: ml]
    #[arg(long, value_enum)]
    mode: Option<FitMode>,
    /// Time-basis intervals; without p1 and p2 the AIC scan picks them
    #[arg(long)]
    p1: Option<usize>,
    /// Spatial-basis intervals per axis
    #[arg(long)]
    p2: Option<usize>,
    /// Knot counts scanned when p1/p2 are absent (p1 = p2) [default: 3,4,5,6]
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Starting model for sampling; skips the maximum likelihood stage
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output model (ml) or samples (bayes) file
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON run report
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optional CSV trace of the optimiser
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    mcmc: McmcArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictMode {
    Quantile,
    Slope,
    Threshold,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model or samples file
    #[arg(long)]
    model: PathBuf,
    /// What to evaluate [default: quantile]
    #[arg(long, value_enum)]
    mode: Option<PredictMode>,
    /// Quantile levels [default: 0.5]
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Times in original units [default: the last time in the data]
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Lattice points per axis, e.g. 50x50 [default: 50 per axis]
    #[arg(long)]
    grid: Option<String>,
    /// Lower lattice corner in original units [default: data minimum]
    #[arg(long, value_delimiter = ',')]
    z_min: Option<Vec<f64>>,
    /// Upper lattice corner in original units [default: data maximum]
    #[arg(long, value_delimiter = ',')]
    z_max: Option<Vec<f64>>,
    /// Response level for threshold mode, in original units
    #[arg(long)]
    threshold: Option<f64>,
    /// Posterior interval mass [default: 0.95]
    #[arg(long)]
    mass: Option<f64>,
    /// Output CSV; `-` for standard output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AicScanArgs {
    /// Observation CSV
    #[arg(long)]
    data: PathBuf,
    /// Knot counts with p1 = p2 [default: 3,4,5,6]
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Where to write the selected model
    #[arg(long)]
    out: PathBuf,
    /// AIC table CSV [default: standard output]
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Methods among ml, bayes, oracle [default: ml,bayes]
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Observations per site [default: 5,10,20]
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Replications per setting [default: 50]
    #[arg(long)]
    reps: Option<usize>,
    /// Sites per dataset [default: 50]
    #[arg(long)]
    sites: Option<usize>,
    /// Knot counts scanned by the fitters [default: 3,4,5,6]
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Output CSV [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    mcmc: McmcArgs,
}

/// Values from the optional TOML file.
struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                table: toml::Table::new(),
            });
        };
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| AppError::Validation(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }

    fn get<T: DeserializeOwned>(&self, section: Option<&str>, key: &str) -> Result<Option<T>> {
        let table = match section {
            Some(s) => match self.table.get(s) {
                Some(toml::Value::Table(t)) => t,
                _ => return Ok(None),
            },
            None => &self.table,
        };
        let value = table.get(key).or_else(|| table.get(&key.replace('-', "_")));
        match value {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| AppError::Validation(format!("config key `{key}`: {e}"))),
        }
    }

    /// Flag, else config value, else default.
    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, section: &str, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get(Some(section), key)?.unwrap_or(default))
    }
}

fn optim_config(a: &OptimArgs, cfg: &FileConfig, section: &str, seed: u64) -> Result<OptimConfig> {
    let d = OptimConfig::default();
    let c = OptimConfig {
        s_initial: cfg.pick(a.s_initial, section, "s-initial", d.s_initial)?,
        rho1: cfg.pick(a.rho1, section, "rho1", d.rho1)?,
        rho2: cfg.pick(a.rho2, section, "rho2", d.rho2)?,
        phi: cfg.pick(a.phi, section, "phi", d.phi)?,
        lambda: cfg.pick(a.lambda, section, "lambda", d.lambda)?,
        tol_fun_1: cfg.pick(a.tol_fun_1, section, "tol-fun-1", d.tol_fun_1)?,
        tol_fun_2: cfg.pick(a.tol_fun_2, section, "tol-fun-2", d.tol_fun_2)?,
        max_iter: cfg.pick(a.max_iter, section, "max-iter", d.max_iter)?,
        max_runs: cfg.pick(a.max_runs, section, "max-runs", d.max_runs)?,
        seed,
    };
    c.validate()?;
    Ok(c)
}

fn mcmc_config(a: &McmcArgs, cfg: &FileConfig, section: &str, seed: u64) -> Result<McmcConfig> {
    let d = McmcConfig::default();
    let random_scan = if a.random_scan {
        true
    } else {
        cfg.pick(None, section, "random-scan", d.random_scan)?
    };
    let c = McmcConfig {
        iterations: cfg.pick(a.iterations, section, "iterations", d.iterations)?,
        burn_in: cfg.pick(a.burn_in, section, "burn-in", d.burn_in)?,
        thin: cfg.pick(a.thin, section, "thin", d.thin)?,
        r: cfg.pick(a.r, section, "r", d.r)?,
        floor: cfg.pick(a.floor, section, "floor", d.floor)?,
        random_scan,
        seed,
    };
    c.validate()?;
    Ok(c)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AppError::io(path, e))
}

fn finish<W: Write>(mut w: W, path: &Path) -> Result<()> {
    w.flush().map_err(|e| AppError::io(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    build_dataset(&read_observations_path(path)?)
}

fn square_grid(values: &[usize]) -> Result<Vec<(usize, usize)>> {
    if values.is_empty() {
        return Err(AppError::Validation("knot grid is empty".into()));
    }
    Ok(values.iter().map(|p| (*p, *p)).collect())
}

struct Context {
    seed: u64,
    threads: usize,
    file: FileConfig,
}

fn cmd_simulate(a: SimulateArgs, ctx: &Context) -> Result<()> {
    let s = "simulate";
    let config = SimConfig {
        sites: ctx.file.pick(a.sites, s, "sites", 50)?,
        points_per_site: ctx.file.pick(a.n, s, "n", 10)?,
        replications: 1,
        seed: ctx.seed,
    };
    config.validate()?;
    let rep = ctx.file.pick(a.replication, s, "replication", 0)?;
    let data = generate_dataset(&config, rep)?;
    let obs: Vec<Observation> = data
        .sites()
        .iter()
        .flat_map(|site| {
            site.obs.iter().map(|(x, y)| Observation {
                site_id: site.id.clone(),
                coords: site.coords.clone(),
                time: *x,
                value: *y,
            })
        })
        .collect();
    let w = create(&a.out)?;
    write_observations(w, &obs)?;
    if let Some(path) = &a.truth {
        #[derive(Serialize)]
        struct TruthDoc<'a> {
            schema: &'a str,
            generator: &'a str,
            sites: usize,
            points_per_site: usize,
            seed: u64,
            replication: usize,
        }
        let doc = TruthDoc {
            schema: "sstqr-truth/1",
            generator: "benchmark-surfaces",
            sites: config.sites,
            points_per_site: config.points_per_site,
            seed: ctx.seed,
            replication: rep,
        };
        let text = serde_json::to_string_pretty(&doc).expect("truth documents always serialise") + "\n";
        std::fs::write(path, text).map_err(|e| AppError::io(path, e))?;
    }
    log::info!("wrote {} observations to {}", obs.len(), a.out.display());
    Ok(())
}

struct TraceFile {
    writer: Option<csv::Writer<BufWriter<File>>>,
    dim: usize,
    error: Option<AppError>,
}

impl TraceFile {
    fn open(path: Option<&Path>, dim: usize) -> Result<Self> {
        let writer = match path {
            Some(p) => {
                let mut w = csv::Writer::from_writer(create(p)?);
                w.write_record([
                    "p1",
                    "p2",
                    "spacing_dim",
                    "free_dim",
                    "run",
                    "iteration",
                    "step",
                    "objective",
                ])?;
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            writer,
            dim,
            error: None,
        })
    }

    fn row(&mut self, (p1, p2): (usize, usize), r: &TraceRow) {
        let Some(w) = self.writer.as_mut() else {
            return;
        };
        let blocks = 2 * (p2 + 3).pow(self.dim as u32);
        let k = p1 + 2 - 1;
        let rec = [
            p1.to_string(),
            p2.to_string(),
            (blocks * k).to_string(),
            (blocks * (k - 1)).to_string(),
            r.run.to_string(),
            r.iteration.to_string(),
            r.step.to_string(),
            r.objective.to_string(),
        ];
        if let Err(e) = w.write_record(&rec) {
            self.error.get_or_insert(e.into());
        }
    }

    fn close(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if let Some(mut w) = self.writer {
            w.flush().map_err(|e| AppError::io("<trace>", e))?;
        }
        Ok(())
    }
}

/// ML fit for fixed knots or by AIC scan.
fn fit_ml(
    data: &Dataset,
    pair: Option<(usize, usize)>,
    grid: &[(usize, usize)],
    optim: &OptimConfig,
    trace: &mut TraceFile,
) -> Result<(QuantileModel, Option<AicScan>)> {
    let mut sink = |cell: (usize, usize), r: &TraceRow| trace.row(cell, r);
    match pair {
        Some((p1, p2)) => {
            let shell = fit_shell(data, p1, p2)?;
            let init = shell.coeffs().clone();
            let mut cell = |r: &TraceRow| sink((p1, p2), r);
            let (m, out) = fit_mle_from(data, &shell, &init, optim, Some(&mut cell))?;
            let (sd, fd) = problem_dimensions(m.coeffs());
            log::info!(
                "ml fit p1={p1} p2={p2}: {sd} spacings ({fd} free), {} runs, {} iterations",
                out.runs,
                out.iterations
            );
            Ok((m, None))
        }
        None => {
            let scan = aic_scan_traced(data, grid, optim, Some(&mut sink))?;
            for c in &scan.table {
                match &c.aic {
                    Ok(a) => log::info!("aic p1={} p2={}: {a}", c.p1, c.p2),
                    Err(e) => log::warn!("aic p1={} p2={} failed: {e}", c.p1, c.p2),
                }
            }
            Ok((scan.best.clone(), Some(scan)))
        }
    }
}

#[derive(Serialize)]
struct FitReport {
    mode: &'static str,
    p1: usize,
    p2: usize,
    dim: usize,
    sites: usize,
    observations: usize,
    log_likelihood: f64,
    aic: f64,
    param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_acceptance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rates: Option<Vec<f64>>,
    seed: u64,
    wall_time_seconds: f64,
}

fn cmd_fit(a: FitArgs, ctx: &Context) -> Result<()> {
    let started = Instant::now();
    let s = "fit";
    let mode = match a.mode {
        Some(m) => m == FitMode::Bayes,
        None => match ctx.file.get::<String>(Some(s), "mode")?.as_deref() {
            None | Some("ml") => false,
            Some("bayes") => true,
            Some(other) => return Err(AppError::Validation(format!("unknown mode `{other}`"))),
        },
    };
    let data = load_dataset(&a.data)?;
    let p1 = a.p1.map_or_else(|| ctx.file.get(Some(s), "p1"), |v| Ok(Some(v)))?;
    let p2 = a.p2.map_or_else(|| ctx.file.get(Some(s), "p2"), |v| Ok(Some(v)))?;
    let pair = match (p1, p2) {
        (Some(x), Some(y)) => Some((x, y)),
        (None, None) => None,
        _ => return Err(AppError::Validation("give both --p1 and --p2, or neither".into())),
    };
    let grid = square_grid(&ctx.file.pick(a.grid, s, "grid", DEFAULT_GRID.iter().map(|g| g.0).collect())?)?;
    let optim = optim_config(&a.optim, &ctx.file, s, ctx.seed)?;
    let mcmc = if mode { Some(mcmc_config(&a.mcmc, &ctx.file, s, ctx.seed)?) } else { None };
    if a.init.is_some() && !mode {
        return Err(AppError::Validation("--init is only used with --mode bayes".into()));
    }

    let mut trace = TraceFile::open(a.trace.as_deref(), data.dim())?;
    let start = match &a.init {
        Some(path) => match persist::load(path)? {
            Artifact::Model(m) => {
                if m.dim() != data.dim() {
                    return Err(AppError::Data("starting model and data differ in dimension".into()));
                }
                QuantileModel::new(
                    m.time_basis().clone(),
                    m.space_basis().clone(),
                    m.coeffs().clone(),
                    data.transforms().clone(),
                )?
            }
            Artifact::Samples { .. } => {
                return Err(AppError::Validation("--init expects a model file, not samples".into()))
            }
        },
        None => fit_ml(&data, pair, &grid, &optim, &mut trace)?.0,
    };
    trace.close()?;

    let (artifact, report_model, draws, acceptance) = match mcmc {
        None => (Artifact::Model(start.clone()), start.clone(), None, None),
        Some(cfg) => {
            let samples = run_chain(&data, start.coeffs(), &start, &cfg)?;
            let mean = start.with_coeffs(samples.mean_field()?)?;
            log::info!(
                "sampled {} draws, mean acceptance {:.3}",
                samples.draws.len(),
                samples.mean_acceptance()
            );
            let draws = samples.draws.len();
            let acc = samples.acceptance_rates.clone();
            (
                Artifact::Samples {
                    shell: start.clone(),
                    samples,
                },
                mean,
                Some(draws),
                Some(acc),
            )
        }
    };
    persist::save(&a.out, &artifact)?;
    if let Some(path) = &a.report {
        let ll = report_model.log_likelihood(&data)?;
        let report = FitReport {
            mode: if mode { "bayes" } else { "ml" },
            p1: report_model.time_basis().intervals(),
            p2: report_model.space_basis().intervals(),
            dim: data.dim(),
            sites: data.sites().len(),
            observations: data.observation_count(),
            log_likelihood: ll,
            aic: 2.0 * report_model.param_count() as f64 - 2.0 * ll,
            param_count: report_model.param_count(),
            draws,
            mean_acceptance: acceptance
                .as_ref()
                .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64),
            acceptance_rates: acceptance,
            seed: ctx.seed,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&report).expect("reports always serialise") + "\n";
        std::fs::write(path, text).map_err(|e| AppError::io(path, e))?;
    }
    Ok(())
}

fn parse_counts(spec: &str, dim: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(['x', 'X']).collect();
    let counts = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| AppError::Validation(format!("grid `{spec}` is not of the form 50x50")))?;
    match counts.len() {
        1 => Ok(vec![counts[0]; dim]),
        n if n == dim => Ok(counts),
        n => Err(AppError::Validation(format!("grid has {n} axes, model has {dim}"))),
    }
}

fn cmd_predict(a: PredictArgs, ctx: &Context) -> Result<()> {
    let s = "predict";
    let artifact = persist::load(&a.model)?;
    let model = artifact.model();
    let dim = model.dim();
    let mode = match a.mode {
        Some(m) => m,
        None => match ctx.file.get::<String>(Some(s), "mode")?.as_deref() {
            None | Some("quantile") => PredictMode::Quantile,
            Some("slope") => PredictMode::Slope,
            Some("threshold") => PredictMode::Threshold,
            Some(other) => return Err(AppError::Validation(format!("unknown mode `{other}`"))),
        },
    };
    let grid_spec = ctx.file.pick(a.grid, s, "grid", "50".to_string())?;
    let mut axes = default_lattice(model, &parse_counts(&grid_spec, dim)?)?;
    let corner = |v: Option<Vec<f64>>, key: &str| -> Result<Option<Vec<f64>>> {
        let v = match v {
            Some(v) => Some(v),
            None => ctx.file.get(Some(s), key)?,
        };
        if let Some(v) = &v {
            if v.len() != dim {
                return Err(AppError::Validation(format!("--{key} needs {dim} values")));
            }
        }
        Ok(v)
    };
    if let Some(lo) = corner(a.z_min, "z-min")? {
        axes.iter_mut().zip(lo).for_each(|(ax, v)| ax.min = v);
    }
    if let Some(hi) = corner(a.z_max, "z-max")? {
        axes.iter_mut().zip(hi).for_each(|(ax, v)| ax.max = v);
    }
    let request = GridRequest {
        taus: ctx.file.pick(a.tau, s, "tau", vec![0.5])?,
        xs: ctx.file.pick(a.x, s, "x", vec![model.transforms().time.max])?,
        z_grid: axes,
        mode: match mode {
            PredictMode::Quantile => GridMode::Quantile,
            PredictMode::Slope => GridMode::SlopeIntercept,
            PredictMode::Threshold => GridMode::ThresholdQuantile,
        },
        threshold: match a.threshold {
            Some(t) => Some(t),
            None => ctx.file.get(Some(s), "threshold")?,
        },
        mass: ctx.file.pick(a.mass, s, "mass", 0.95)?,
    };
    if a.out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        export_grid(&artifact, &request, stdout.lock())
    } else {
        let w = create(&a.out)?;
        export_grid(&artifact, &request, w)
    }
}

fn cmd_aic_scan(a: AicScanArgs, ctx: &Context) -> Result<()> {
    let s = "aic-scan";
    let data = load_dataset(&a.data)?;
    let grid = square_grid(&ctx.file.pick(a.grid, s, "grid", DEFAULT_GRID.iter().map(|g| g.0).collect())?)?;
    let optim = optim_config(&a.optim, &ctx.file, s, ctx.seed)?;
    let mut trace = TraceFile::open(None, data.dim())?;
    let (best, scan) = fit_ml(&data, None, &grid, &optim, &mut trace)?;
    let scan = scan.expect("scan results are returned for a grid");
    persist::save(&a.out, &Artifact::Model(best))?;
    let write_table = |w: &mut dyn Write| -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["p1", "p2", "aic", "selected", "error"])?;
        for (i, c) in scan.table.iter().enumerate() {
            let (aic, err) = match &c.aic {
                Ok(v) => (v.to_string(), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            cw.write_record([
                c.p1.to_string(),
                c.p2.to_string(),
                aic,
                (i == scan.best_index).to_string(),
                err,
            ])?;
        }
        cw.flush().map_err(|e| AppError::io("<table>", e))
    };
    match &a.table {
        Some(p) => {
            let mut w = create(p)?;
            write_table(&mut w)?;
            finish(w, p)
        }
        None => write_table(&mut std::io::stdout().lock()),
    }
}

fn cmd_benchmark(a: BenchmarkArgs, ctx: &Context) -> Result<()> {
    let s = "benchmark";
    let methods: Vec<String> = ctx.file.pick(a.methods, s, "methods", vec!["ml".into(), "bayes".into()])?;
    let n_values: Vec<usize> = ctx.file.pick(a.n, s, "n", vec![5, 10, 20])?;
    let config = SimConfig {
        sites: ctx.file.pick(a.sites, s, "sites", 50)?,
        points_per_site: n_values.first().copied().unwrap_or(2),
        replications: ctx.file.pick(a.reps, s, "reps", 50)?,
        seed: ctx.seed,
    };
    let grid = square_grid(&ctx.file.pick(a.grid, s, "grid", DEFAULT_GRID.iter().map(|g| g.0).collect())?)?;
    let ml = MlFitter {
        grid,
        config: optim_config(&a.optim, &ctx.file, s, ctx.seed)?,
    };
    let bayes = BayesFitter {
        ml: ml.clone(),
        mcmc: mcmc_config(&a.mcmc, &ctx.file, s, ctx.seed)?,
    };
    let mut fitters: Vec<&dyn Fitter> = Vec::new();
    for m in &methods {
        match m.trim() {
            "ml" => fitters.push(&ml),
            "bayes" => fitters.push(&bayes),
            "oracle" => fitters.push(&OracleFitter),
            other => return Err(AppError::Validation(format!("unknown method `{other}`"))),
        }
    }
    let result = crate::bench::run_parallel(&fitters, &n_values, &config, ctx.threads)?;
    match &a.out {
        Some(p) => {
            let w = create(p)?;
            crate::bench::write_csv(&result, w)
        }
        None => crate::bench::write_csv(&result, std::io::stdout().lock()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = match cli.seed {
        Some(s) => s,
        None => file.get(None, "seed")?.unwrap_or(0),
    };
    let threads = match cli.threads {
        Some(t) => t,
        None => file
            .get(None, "threads")?
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    if threads == 0 {
        return Err(AppError::Validation("--threads must be at least 1".into()));
    }
    let ctx = Context { seed, threads, file };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, &ctx),
        Command::Fit(a) => cmd_fit(a, &ctx),
        Command::Predict(a) => cmd_predict(a, &ctx),
        Command::AicScan(a) => cmd_aic_scan(a, &ctx),
        Command::Benchmark(a) => cmd_benchmark(a, &ctx),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
