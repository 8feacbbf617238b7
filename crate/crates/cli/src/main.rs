//! `skpd` command-line front end.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use skpd::eval::evaluate;
use skpd::experiment::{find_preset, presets, reproduce, StudySettings, Table};
use skpd::fit::naive_hyper;
use skpd::io;
use skpd::moments::MomentsStrategy;
use skpd::selection::{default_grid, grid_search_with, GridSpec, SearchGrid};
use skpd::simgen::{generate_dataset, parse_mask, CovFamily, SignalShape, SimConfig};
use skpd::{fit, preprocess, HyperParams, InitScheme, SkpdError, SkpdProblem};

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn runtime(e: SkpdError) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

fn config_err(e: SkpdError) -> CliError {
    usage(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "skpd",
    version,
    about = "Sparse three-block CCA with Kronecker-structured image coefficients"
)]
struct Cli {
    /// TOML run configuration; flags and SKPD_* variables take precedence.
    #[arg(long, global = true, env = "SKPD_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "SKPD_SEED")]
    seed: Option<u64>,
    /// Worker threads for grid cells and replicates.
    #[arg(long, global = true, env = "SKPD_PARALLELISM")]
    parallelism: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SKPD_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate(SimulateArgs),
    /// List the built-in simulation presets.
    Presets,
    /// Fit one model with fixed penalties and rank.
    Fit(FitArgs),
    /// Select penalties and rank by BIC over a grid.
    Tune(TuneArgs),
    /// Score a fitted model against a simulated dataset's ground truth.
    Evaluate(EvaluateArgs),
    /// Rerun a reference simulation table and compare.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Preset name, e.g. `table3-1block` (with --rho) or `table3-1block-0.8-0.6`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, num_args = 2, value_names = ["RHO1", "RHO2"])]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, num_args = 1..=3)]
    image_dims: Option<Vec<usize>>,
    /// one_block, three_block or butterfly.
    #[arg(long)]
    shape: Option<String>,
    /// Text mask ('#' signal, '.' background) overriding --shape.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    /// identity or toeplitz.
    #[arg(long)]
    cov: Option<String>,
    #[arg(long)]
    theta_sparsity: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, env = "SKPD_DATA")]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, num_args = 1..=3)]
    block_dims: Option<Vec<usize>>,
    /// Voxel-wise blocks (1, 1, 1) and rank one.
    #[arg(long)]
    naive: bool,
    /// constant, uniform or normal.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_outer_iter: Option<usize>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long, env = "SKPD_DATA")]
    data: Option<PathBuf>,
    /// JSON or TOML grid with lambda1_values, lambda2_values, rank_values, block_dims.
    #[arg(long)]
    grid_file: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    ranks: Option<Vec<usize>>,
    #[arg(long, num_args = 1..=3)]
    block_dims: Option<Vec<usize>>,
    #[arg(long)]
    naive: bool,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// lambda_max divided by the smallest grid value.
    #[arg(long)]
    grid_ratio: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, env = "SKPD_DATA")]
    data: Option<PathBuf>,
    /// Directory holding model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    method: String,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// 3, 4, 7 or A1.
    #[arg(long)]
    table: Option<String>,
    /// Shapes (1-block, 3-block, butterfly) or full preset names.
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<String>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    grid_ratio: Option<f64>,
    #[arg(long)]
    max_rank: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    fit: FitSection,
    #[serde(default)]
    tune: TuneSection,
    #[serde(default)]
    evaluate: EvaluateSection,
    #[serde(default)]
    reproduce: ReproduceSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    preset: Option<String>,
    rho1: Option<f64>,
    rho2: Option<f64>,
    n: Option<usize>,
    q: Option<usize>,
    image_dims: Option<Vec<usize>>,
    shape: Option<String>,
    mask_file: Option<PathBuf>,
    cov: Option<String>,
    toeplitz_decay: Option<f64>,
    theta_sparsity: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    data: Option<PathBuf>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    rank: Option<usize>,
    block_dims: Option<Vec<usize>>,
    naive: Option<bool>,
    init: Option<String>,
    tau: Option<f64>,
    max_outer_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneSection {
    data: Option<PathBuf>,
    grid_file: Option<PathBuf>,
    lambda1_values: Option<Vec<f64>>,
    lambda2_values: Option<Vec<f64>>,
    rank_values: Option<Vec<usize>>,
    block_dims: Option<Vec<usize>>,
    naive: Option<bool>,
    init: Option<String>,
    grid_points: Option<usize>,
    grid_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateSection {
    data: Option<PathBuf>,
    model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReproduceSection {
    table: Option<String>,
    cells: Option<Vec<String>>,
    replicates: Option<usize>,
    init: Option<String>,
    grid_points: Option<usize>,
    grid_ratio: Option<f64>,
    max_rank: Option<usize>,
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

struct Common {
    seed: u64,
    parallelism: usize,
    out: Option<PathBuf>,
}

impl Common {
    fn out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

fn parse_init(name: Option<String>) -> CliResult<InitScheme> {
    name.map_or(Ok(InitScheme::Ones), |n| InitScheme::from_name(&n).map_err(config_err))
}

fn existing_dir(path: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| usage(format!("--{what} is required")))?;
    if !p.is_dir() {
        return Err(usage(format!("{what} directory {} does not exist", p.display())));
    }
    Ok(p)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let cfg = load_config(cli.config.as_deref())?;
    let common = Common {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        parallelism: cli.parallelism.or(cfg.parallelism).unwrap_or(1).max(1),
        out: cli.out.or(cfg.out),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, cfg.sim, &common),
        Command::Presets => cmd_presets(),
        Command::Fit(a) => cmd_fit(a, cfg.fit, &common),
        Command::Tune(a) => cmd_tune(a, cfg.tune, &common),
        Command::Evaluate(a) => cmd_evaluate(a, cfg.evaluate, &common),
        Command::Reproduce(a) => cmd_reproduce(a, cfg.reproduce, &common),
    }
}

fn sim_config(a: SimulateArgs, s: SimSection, seed: u64) -> CliResult<(SimConfig, Option<String>)> {
    let rho = match a.rho {
        Some(r) => Some((r[0], r[1])),
        None => s.rho1.zip(s.rho2),
    };
    let preset = match a.preset.or(s.preset) {
        Some(name) => Some(find_preset(&name, rho).map_err(config_err)?),
        None => None,
    };
    let mut cfg = match &preset {
        Some(p) => p.sim_config().map_err(config_err)?,
        None => SimConfig::default(),
    };
    if let Some((r1, r2)) = rho {
        cfg.rho1 = r1;
        cfg.rho2 = r2;
    }
    if let Some(n) = a.n.or(s.n) {
        cfg.n = n;
    }
    if let Some(q) = a.q.or(s.q) {
        cfg.q = q;
    }
    if let Some(d) = a.image_dims.or(s.image_dims) {
        cfg.image_dims = d;
    }
    if let Some(k) = a.theta_sparsity.or(s.theta_sparsity) {
        cfg.theta_sparsity = k;
    }
    if let Some(name) = a.cov.or(s.cov) {
        cfg.cov_family = CovFamily::from_name(&name).map_err(config_err)?;
    }
    if let (Some(decay), CovFamily::Toeplitz { .. }) = (s.toeplitz_decay, cfg.cov_family) {
        cfg.cov_family = CovFamily::Toeplitz { decay };
    }
    if let Some(name) = a.shape.or(s.shape) {
        cfg.shape = SignalShape::from_name(&name).map_err(config_err)?;
    }
    if let Some(path) = a.mask_file.or(s.mask_file) {
        let text = fs::read_to_string(&path).map_err(|e| usage(format!("cannot read mask {}: {e}", path.display())))?;
        cfg.shape = SignalShape::Custom {
            mask: parse_mask(&text).map_err(config_err)?,
        };
    }
    cfg.seed = seed;
    cfg.validate().map_err(config_err)?;
    Ok((cfg, preset.map(|p| p.name)))
}

fn cmd_simulate(a: SimulateArgs, s: SimSection, common: &Common) -> CliResult<u8> {
    let out = common.out()?.to_path_buf();
    let (cfg, preset) = sim_config(a, s, common.seed)?;
    let (data, truth) = generate_dataset(&cfg).map_err(runtime)?;
    let manifest = io::write_dataset(&out, &data, Some(&cfg), Some(&truth), preset.as_deref()).map_err(runtime)?;
    println!("{}", manifest.display());
    Ok(0)
}

fn cmd_presets() -> CliResult<u8> {
    for p in presets() {
        println!("{}\t{}\t{}\trho=({}, {})", p.name, p.shape, p.cov, p.rho1, p.rho2);
    }
    Ok(0)
}

fn load_preprocessed(dir: &Path) -> CliResult<(io::Manifest, skpd::Dataset)> {
    let (m, raw) = io::read_dataset(dir).map_err(runtime)?;
    let data = preprocess(&raw).map_err(runtime)?;
    Ok((m, data))
}

#[derive(Serialize)]
struct FitReport<'a> {
    command: &'a str,
    seed: u64,
    init: InitScheme,
    converged: bool,
    degenerate: bool,
    iterations: usize,
    objective: Option<f64>,
    wall_time_seconds: f64,
    warning: Option<String>,
}

fn warn_degenerate(degenerate: bool) -> Option<String> {
    degenerate.then(|| {
        let w = "degenerate fit: theta and the location indicators are all zero".to_string();
        eprintln!("warning: {w}");
        w
    })
}

fn cmd_fit(a: FitArgs, s: FitSection, common: &Common) -> CliResult<u8> {
    let out = common.out()?.to_path_buf();
    let dir = existing_dir(a.data.or(s.data), "data")?;
    let lambda1 = a.lambda1.or(s.lambda1).ok_or_else(|| usage("--lambda1 is required"))?;
    let lambda2 = a.lambda2.or(s.lambda2).ok_or_else(|| usage("--lambda2 is required"))?;
    let init = parse_init(a.init.or(s.init))?;
    let (_, data) = load_preprocessed(&dir)?;
    let mut hp = HyperParams::new(
        lambda1,
        lambda2,
        a.rank.or(s.rank).unwrap_or(1),
        &a.block_dims.or(s.block_dims).unwrap_or_else(|| vec![8, 8]),
    );
    if let Some(t) = a.tau.or(s.tau) {
        hp.tau = t;
    }
    if let Some(m) = a.max_outer_iter.or(s.max_outer_iter) {
        hp.max_outer_iter = m;
    }
    if a.naive || s.naive.unwrap_or(false) {
        hp = naive_hyper(&hp, data.image_dims());
    }
    hp.validate(data.image_dims()).map_err(config_err)?;
    let model = fit(&data, &hp, init, common.seed).map_err(runtime)?;
    let path = io::write_model(&out, &model).map_err(runtime)?;
    let report = FitReport {
        command: "fit",
        seed: common.seed,
        init,
        converged: model.converged,
        degenerate: model.degenerate,
        iterations: model.iterations,
        objective: model.objective_trace.last().copied(),
        wall_time_seconds: model.wall_time_seconds,
        warning: warn_degenerate(model.degenerate),
    };
    io::write_json(&out.join("fit_report.json"), &report).map_err(runtime)?;
    println!("{}", path.display());
    Ok(0)
}

fn read_grid_file(path: &Path) -> CliResult<SearchGrid> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read grid {}: {e}", path.display())))?;
    let grid: SearchGrid = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| usage(format!("invalid grid {}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid grid {}: {e}", path.display())))?
    };
    grid.validate().map_err(config_err)?;
    Ok(grid)
}

#[derive(Serialize)]
struct TuneSummary<'a> {
    grid: &'a SearchGrid,
    best_index: usize,
    best: &'a skpd::selection::CellResult,
    cells: usize,
    wall_time_seconds: f64,
    warning: Option<String>,
}

fn cmd_tune(a: TuneArgs, s: TuneSection, common: &Common) -> CliResult<u8> {
    let out = common.out()?.to_path_buf();
    let dir = existing_dir(a.data.or(s.data), "data")?;
    let init = parse_init(a.init.or(s.init))?;
    let naive = a.naive || s.naive.unwrap_or(false);
    let (_, data) = load_preprocessed(&dir)?;
    let dims = data.image_dims().to_vec();

    let file_grid = match a.grid_file.or(s.grid_file) {
        Some(p) => Some(read_grid_file(&p)?),
        None => match (s.lambda1_values, s.lambda2_values) {
            (Some(l1), Some(l2)) => Some(
                SearchGrid::new(
                    l1,
                    l2,
                    s.rank_values.clone().unwrap_or_else(|| vec![1]),
                    s.block_dims.clone().unwrap_or_else(|| vec![8, 8]),
                )
                .map_err(config_err)?,
            ),
            (None, None) => None,
            _ => return Err(usage("lambda1_values and lambda2_values must be given together")),
        },
    };
    let mut spec = GridSpec::default();
    if let Some(r) = a.ranks.or(s.rank_values) {
        spec.rank_values = r;
    }
    if let Some(b) = a.block_dims.or(s.block_dims) {
        spec.block_dims = b;
    }
    if let Some(p) = a.grid_points.or(s.grid_points) {
        spec.points = p;
    }
    if let Some(r) = a.grid_ratio.or(s.grid_ratio) {
        spec.ratio = r;
    }
    let block_dims = match &file_grid {
        Some(g) => g.block_dims.clone(),
        None => spec.block_dims.clone(),
    };
    let mut base = HyperParams {
        block_dims,
        ..HyperParams::default()
    };
    if naive {
        base = naive_hyper(&base, &dims);
        spec.block_dims = base.block_dims.clone();
        spec.rank_values = vec![1];
    }
    base.validate(&dims).map_err(config_err)?;

    let timer = Instant::now();
    let problem = SkpdProblem::new(&data, &base.block_dims, base.tau, MomentsStrategy::Auto).map_err(runtime)?;
    let grid = match file_grid {
        Some(mut g) => {
            if naive {
                g.block_dims = base.block_dims.clone();
                g.rank_values = vec![1];
            }
            g
        }
        None => default_grid(&problem, &spec, init, common.seed).map_err(runtime)?,
    };
    let report =
        grid_search_with(&data, &problem, &grid, &base, init, common.seed, common.parallelism).map_err(runtime)?;
    let elapsed = timer.elapsed().as_secs_f64();

    io::write_model(&out, &report.best_model).map_err(runtime)?;
    io::write_bic_csv(&out.join("cells.csv"), &report).map_err(runtime)?;
    let summary = TuneSummary {
        grid: &report.grid,
        best_index: report.best_index,
        best: report.best(),
        cells: report.cells.len(),
        wall_time_seconds: elapsed,
        warning: warn_degenerate(report.best_model.degenerate),
    };
    io::write_json(&out.join("tune_report.json"), &summary).map_err(runtime)?;
    io::write_json(&out.join("bic_report.json"), &report).map_err(runtime)?;
    let best = report.best();
    println!(
        "best: rank={} lambda1={} lambda2={} bic={}",
        best.rank,
        best.lambda1,
        best.lambda2,
        best.bic.map_or("NA".to_string(), |b| b.to_string())
    );
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs, s: EvaluateSection, common: &Common) -> CliResult<u8> {
    let dir = existing_dir(a.data.or(s.data), "data")?;
    let model_dir = existing_dir(a.model.or(s.model), "model")?;
    let manifest = io::read_manifest(&dir).map_err(runtime)?;
    let truth = io::read_truth(&dir, &manifest).map_err(|e| usage(e.to_string()))?;
    let model = io::read_model(&model_dir).map_err(runtime)?;
    let report = evaluate(&model, &truth, &a.method, 0).map_err(runtime)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| runtime(e.into()))?;
    if let Some(out) = &common.out {
        io::write_json(&out.join("evaluation.json"), &report).map_err(runtime)?;
    }
    println!("{text}");
    Ok(0)
}

fn cmd_reproduce(a: ReproduceArgs, s: ReproduceSection, common: &Common) -> CliResult<u8> {
    let out = common.out()?.to_path_buf();
    let table_name = a.table.or(s.table).ok_or_else(|| usage("--table is required"))?;
    let table = Table::from_name(&table_name).map_err(config_err)?;
    let cells = a.cells.or(s.cells);
    let defaults = StudySettings::default();
    let settings = StudySettings {
        replicates: a.replicates.or(s.replicates).unwrap_or(defaults.replicates),
        base_seed: common.seed,
        init: parse_init(a.init.or(s.init))?,
        parallelism: common.parallelism,
        grid_points: a.grid_points.or(s.grid_points).unwrap_or(defaults.grid_points),
        grid_ratio: a.grid_ratio.or(s.grid_ratio).unwrap_or(defaults.grid_ratio),
        max_rank: a.max_rank.or(s.max_rank).unwrap_or(defaults.max_rank),
        ..defaults
    };
    if settings.replicates == 0
        || settings.grid_points < 2
        || settings.grid_ratio.is_nan()
        || settings.grid_ratio <= 1.0
    {
        return Err(usage(
            "replicates must be positive, grid_points >= 2 and grid_ratio > 1",
        ));
    }
    let rep = reproduce(table, cells.as_deref(), &settings).map_err(|e| match e {
        SkpdError::InvalidInput(_) => config_err(e),
        other => runtime(other),
    })?;

    io::write_records(&out.join("comparison.csv"), &rep.rows).map_err(runtime)?;
    io::write_records(&out.join("summary.csv"), &rep.summary_rows()).map_err(runtime)?;
    io::write_json(&out.join("reproduction.json"), &rep).map_err(runtime)?;

    for (cell, err) in &rep.cell_errors {
        eprintln!("cell {cell} failed: {err}");
    }
    for r in rep.rows.iter().filter(|r| r.acceptance) {
        let verdict = match r.pass {
            Some(true) => "PASS",
            _ => "FAIL",
        };
        println!(
            "{verdict} table {} {} {} {}: {} (reference {}, required {})",
            r.table,
            r.cell,
            r.method,
            r.metric,
            r.reproduced.map_or("NA".into(), |v| format!("{v:.3}")),
            r.reference.map_or("NA".into(), |v| format!("{v:.3}")),
            r.tolerance
        );
    }
    println!("{}", out.join("comparison.csv").display());
    Ok(if rep.acceptance_failures() > 0 {
        EXIT_ACCEPTANCE
    } else {
        0
    })
}
