//! Choosing `(lambda1, lambda2, R)` by the modified BIC over a grid.
//!
//! Within a rank the grid is walked as a chain: along descending `lambda2`
//! for each `lambda1`, and from the first cell of one `lambda1` row to the
//! first cell of the next. Each cell starts from the previous cell's
//! indicators and dictionaries unless that fit was degenerate or failed.
//! Ranks are independent chains and may run in parallel.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SkpdError};
use crate::fit::{expand_block_dims, fit_term, penalty, HyperParams, InitScheme, SkpdModel, SkpdProblem, Start};
use crate::moments::MomentsStrategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub rank_values: Vec<usize>,
    pub block_dims: Vec<usize>,
}

fn check_descending(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(SkpdError::InvalidInput(format!("{name} grid is empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(SkpdError::InvalidInput(format!(
            "{name} values must be finite and >= 0"
        )));
    }
    if v.windows(2).any(|w| w[0] <= w[1]) {
        return Err(SkpdError::InvalidInput(format!(
            "{name} values must be strictly descending"
        )));
    }
    Ok(())
}

impl SearchGrid {
    pub fn new(lambda1: Vec<f64>, lambda2: Vec<f64>, ranks: Vec<usize>, block_dims: Vec<usize>) -> Result<Self> {
        let grid = Self {
            lambda1_values: lambda1,
            lambda2_values: lambda2,
            rank_values: ranks,
            block_dims,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        check_descending("lambda1", &self.lambda1_values)?;
        check_descending("lambda2", &self.lambda2_values)?;
        if self.rank_values.is_empty() || self.rank_values.contains(&0) {
            return Err(SkpdError::InvalidInput(
                "rank values must be nonempty and positive".into(),
            ));
        }
        let mut ranks = self.rank_values.clone();
        ranks.sort_unstable();
        ranks.dedup();
        if ranks.len() != self.rank_values.len() {
            return Err(SkpdError::InvalidInput("rank values repeat".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.lambda1_values.len() * self.lambda2_values.len() * self.rank_values.len()
    }
}

/// `points` values from `max` down to `max / ratio`, evenly spaced on a log scale.
pub fn log_grid(max: f64, ratio: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![max];
    }
    let step = ratio.ln() / (points - 1) as f64;
    (0..points).map(|k| max * (-(k as f64) * step).exp()).collect()
}

/// Grid defaults: 10 log-spaced values per penalty from `lambda_max` down to
/// `lambda_max / 10`. BIC tends to pick the smallest penalties on offer, so
/// the floor matters; `/ 100` admits many noise blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub ratio: f64,
    pub rank_values: Vec<usize>,
    pub block_dims: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 10,
            ratio: 10.0,
            rank_values: vec![1, 2, 3, 4, 5],
            block_dims: vec![8, 8],
        }
    }
}

/// Builds the penalty grids from the penalties that fully shrink each
/// coefficient at the (normalized) initialization of the smallest rank.
pub fn default_grid(problem: &SkpdProblem, spec: &GridSpec, init: InitScheme, seed: u64) -> Result<SearchGrid> {
    let rank = *spec
        .rank_values
        .iter()
        .min()
        .ok_or_else(|| SkpdError::InvalidInput("rank values must be nonempty".into()))?;
    let (l1, l2) = problem.lambda_max(rank, &Start::Scheme { init, seed })?;
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(SkpdError::Numerical(format!("lambda_max is not positive ({l1}, {l2})")));
    }
    SearchGrid::new(
        log_grid(l1, spec.ratio, spec.points),
        log_grid(l2, spec.ratio, spec.points),
        spec.rank_values.clone(),
        spec.block_dims.clone(),
    )
}

/// `-fit + (ln n / n)(||theta||_1 + sum_r ||alpha_r||_1)`.
pub fn bic_score(data: &Dataset, model: &SkpdModel) -> Result<f64> {
    let n = data.n() as f64;
    let w = n.ln() / n;
    Ok(-fit_term(data, model)? + penalty(model, w, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub rank: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub bic: Option<f64>,
    pub objective: Option<f64>,
    pub converged: bool,
    pub degenerate: bool,
    pub iterations: usize,
    pub active_blocks: usize,
    pub theta_nonzeros: usize,
    pub warm_started: bool,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicReport {
    pub grid: SearchGrid,
    pub cells: Vec<CellResult>,
    pub best_index: usize,
    pub best_model: SkpdModel,
    pub wall_time_seconds: f64,
}

impl BicReport {
    pub fn best(&self) -> &CellResult {
        &self.cells[self.best_index]
    }
}

fn rank_seed(seed: u64, rank: usize) -> u64 {
    seed.wrapping_add((rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct ChainOutput {
    cells: Vec<CellResult>,
    models: Vec<Option<SkpdModel>>,
}

fn run_chain(
    data: &Dataset,
    problem: &SkpdProblem,
    grid: &SearchGrid,
    base: &HyperParams,
    rank: usize,
    init: InitScheme,
    seed: u64,
) -> ChainOutput {
    let scheme = Start::Scheme {
        init,
        seed: rank_seed(seed, rank),
    };
    let warm = |m: &SkpdModel| Start::Warm {
        alphas: m.alpha_matrix(),
        betas: m.beta_matrix(),
    };
    let mut cells = Vec::new();
    let mut models = Vec::new();
    let mut row_head: Option<SkpdModel> = None;
    for &l1 in &grid.lambda1_values {
        let mut prev = row_head.clone();
        for (k2, &l2) in grid.lambda2_values.iter().enumerate() {
            let hp = HyperParams {
                lambda1: l1,
                lambda2: l2,
                rank,
                ..base.clone()
            };
            let start = match prev.as_ref().filter(|m| m.is_usable_start()) {
                Some(m) => warm(m),
                None => scheme.clone(),
            };
            let warm_started = matches!(start, Start::Warm { .. });
            let outcome = problem.fit(&hp, &start).and_then(|m| {
                let bic = bic_score(data, &m)?;
                Ok((m, bic))
            });
            match outcome {
                Ok((m, bic)) => {
                    cells.push(CellResult {
                        rank,
                        lambda1: l1,
                        lambda2: l2,
                        bic: Some(bic),
                        objective: m.objective_trace.last().copied(),
                        converged: m.converged,
                        degenerate: m.degenerate,
                        iterations: m.iterations,
                        active_blocks: m.active_blocks().len(),
                        theta_nonzeros: m.theta_support().len(),
                        warm_started,
                        wall_time_seconds: m.wall_time_seconds,
                        error: None,
                    });
                    if k2 == 0 {
                        row_head = Some(m.clone());
                    }
                    prev = Some(m.clone());
                    models.push(Some(m));
                }
                Err(e) => {
                    cells.push(CellResult {
                        rank,
                        lambda1: l1,
                        lambda2: l2,
                        bic: None,
                        objective: None,
                        converged: false,
                        degenerate: false,
                        iterations: 0,
                        active_blocks: 0,
                        theta_nonzeros: 0,
                        warm_started,
                        wall_time_seconds: 0.0,
                        error: Some(e.to_string()),
                    });
                    models.push(None);
                }
            }
        }
    }
    ChainOutput { cells, models }
}

/// Order on candidate cells: lower BIC, then larger `lambda1`, larger
/// `lambda2`, smaller rank.
fn better(a: &CellResult, b: &CellResult) -> bool {
    let (Some(x), Some(y)) = (a.bic, b.bic) else {
        return a.bic.is_some();
    };
    match x.total_cmp(&y) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match a.lambda1.total_cmp(&b.lambda1) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match a.lambda2.total_cmp(&b.lambda2) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => a.rank < b.rank,
            },
        },
    }
}

/// Fits every cell of the grid and keeps the one with the smallest BIC.
/// `parallelism` bounds the number of rank chains fitted at once.
pub fn grid_search_with(
    data: &Dataset,
    problem: &SkpdProblem,
    grid: &SearchGrid,
    base: &HyperParams,
    init: InitScheme,
    seed: u64,
    parallelism: usize,
) -> Result<BicReport> {
    grid.validate()?;
    let timer = std::time::Instant::now();
    let run = || -> Vec<ChainOutput> {
        grid.rank_values
            .par_iter()
            .map(|&r| run_chain(data, problem, grid, base, r, init, seed))
            .collect()
    };
    let chains = if parallelism <= 1 {
        grid.rank_values
            .iter()
            .map(|&r| run_chain(data, problem, grid, base, r, init, seed))
            .collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| SkpdError::InvalidInput(format!("cannot build worker pool: {e}")))?
            .install(run)
    };

    let mut cells = Vec::with_capacity(grid.n_cells());
    let mut models = Vec::with_capacity(grid.n_cells());
    for chain in chains {
        cells.extend(chain.cells);
        models.extend(chain.models);
    }
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.bic.is_some() && best.is_none_or(|b| better(c, &cells[b])) {
            best = Some(i);
        }
    }
    let best_index = match best {
        Some(b) => b,
        None => {
            let first = cells.iter().find_map(|c| c.error.clone()).unwrap_or_default();
            return Err(SkpdError::Numerical(format!(
                "every grid cell failed; first error: {first}"
            )));
        }
    };
    let best_model = models[best_index].take().expect("scored cell has a model");
    Ok(BicReport {
        grid: grid.clone(),
        cells,
        best_index,
        best_model,
        wall_time_seconds: timer.elapsed().as_secs_f64(),
    })
}

/// [`grid_search_with`] on a fresh problem built from `data` with default
/// solver settings.
pub fn grid_search(
    data: &Dataset,
    grid: &SearchGrid,
    init: InitScheme,
    seed: u64,
    parallelism: usize,
) -> Result<BicReport> {
    let block_dims = expand_block_dims(&grid.block_dims, data.image_dims());
    let base = HyperParams {
        block_dims: block_dims.clone(),
        ..HyperParams::default()
    };
    let problem = SkpdProblem::new(data, &block_dims, base.tau, MomentsStrategy::Auto)?;
    grid_search_with(data, &problem, grid, &base, init, seed, parallelism)
}
