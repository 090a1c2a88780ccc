//! Discrete rebalancing of a continuous trading signal.
//!
//! The trader holds `Y_{t_i}` on `[t_i, t_{i+1})` with `t_i = i T / n`. A
//! trade of size `delta` at a rebalancing date moves the price by
//! `delta f(X-)` and costs the half-square liquidity term
//! `1/2 delta^2 f(X-)` on top of the mark-to-market move. As the number of
//! rebalancing dates grows this converges to the continuous dynamics at rate
//! `n^{-1}` in mean square, which `convergence_study` estimates at matched
//! noise.

use crate::error::{Error, Result};
use crate::model::MarketModel;
use crate::path::{euler_step, Control, MarketState, PathResult, TimeGrid, TradingSignal};
use crate::stats::{self, LineFit};
use crate::{csvio, rng};
use rayon::prelude::*;

/// Configuration for discrete-rebalancing runs.
#[derive(Debug, Clone)]
pub struct DiscreteRunConfig {
    /// Number of rebalancing dates for a single run.
    pub n: usize,
    pub mc_paths: usize,
    /// Fine simulation grid; must be a multiple of every rebalancing count.
    pub base_grid_steps: usize,
    pub seed: u64,
}

impl DiscreteRunConfig {
    fn check_divides(&self, n: usize) -> Result<()> {
        if n == 0 || self.base_grid_steps % n != 0 {
            return Err(Error::invalid(format!(
                "base_grid_steps = {} must be a positive multiple of n = {n}",
                self.base_grid_steps
            )));
        }
        Ok(())
    }
}

fn constant_controls(signal: &TradingSignal) -> Result<(f64, f64)> {
    match (&signal.a, &signal.b) {
        (Control::Constant(a), Control::Constant(b)) => Ok((*a, *b)),
        _ => Err(Error::invalid(
            "discrete rebalancing requires constant (a, b) controls",
        )),
    }
}

/// States of the discrete dynamics at every fine-grid node (post-trade at
/// rebalancing dates).
fn discrete_states(
    model: &MarketModel,
    a: f64,
    b: f64,
    y0: f64,
    stride: usize,
    grid: &TimeGrid,
    increments: &[f64],
    x0: f64,
) -> Result<Vec<MarketState>> {
    let dt = grid.dt();
    let mut state = MarketState::new(x0, y0, 0.0);
    let mut y_signal = y0;
    let mut states = Vec::with_capacity(grid.steps + 1);
    for i in 0..=grid.steps {
        if i > 0 && i % stride == 0 {
            let delta = y_signal - state.y;
            let fx = model.impact.value(state.x);
            let dxj = delta * fx;
            state.v += state.y * dxj + 0.5 * delta * delta * fx;
            state.x += dxj;
            state.y = y_signal;
            if !model.price_box.contains(state.x) {
                return Err(Error::DomainEscape {
                    x: state.x,
                    lo: model.price_box.lo,
                    hi: model.price_box.hi,
                    context: "discrete rebalancing",
                });
            }
        }
        states.push(state);
        if i < grid.steps {
            y_signal += b * dt + a * increments[i];
            euler_step(model, &mut state, dt, increments[i], 0.0, 0.0)?;
        }
    }
    Ok(states)
}

/// States of the continuous-limit dynamics on the same grid and noise.
fn limit_states(
    model: &MarketModel,
    a: f64,
    b: f64,
    y0: f64,
    grid: &TimeGrid,
    increments: &[f64],
    x0: f64,
) -> Result<Vec<MarketState>> {
    let dt = grid.dt();
    let mut state = MarketState::new(x0, y0, 0.0);
    let mut states = Vec::with_capacity(grid.steps + 1);
    for i in 0..=grid.steps {
        states.push(state);
        if i < grid.steps {
            euler_step(model, &mut state, dt, increments[i], a, b)?;
        }
    }
    Ok(states)
}

/// Simulates the discrete-rebalancing dynamics `(X^n, Y^n, V^n)` for one
/// path (Monte Carlo index 0), rebalancing `cfg.n` times.
pub fn simulate_discrete(
    model: &MarketModel,
    signal: &TradingSignal,
    cfg: &DiscreteRunConfig,
) -> Result<PathResult> {
    if !signal.jumps.is_empty() {
        return Err(Error::invalid("discrete rebalancing takes a jump-free signal"));
    }
    cfg.check_divides(cfg.n)?;
    let (a, b) = constant_controls(signal)?;
    let grid = TimeGrid::new(0.0, model.horizon, cfg.base_grid_steps)?;
    let increments = rng::brownian_increments(cfg.seed, 0, grid.steps, grid.dt());
    let states = discrete_states(
        model,
        a,
        b,
        signal.y0,
        cfg.base_grid_steps / cfg.n,
        &grid,
        &increments,
        model.price_box.center(),
    )?;
    Ok(PathResult {
        grid,
        states,
        increments,
        jumps: Vec::new(),
        warnings: Vec::new(),
    })
}

/// One row of a convergence table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRow {
    pub param: f64,
    pub mse: f64,
    pub std_err: f64,
}

/// Mean-square errors against a refinement parameter with a fitted log-log
/// slope.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceTable {
    pub param_name: &'static str,
    pub mse_name: &'static str,
    pub rows: Vec<ConvergenceRow>,
    pub fit: LineFit,
}

impl ConvergenceTable {
    /// Columns `param, mse, std_err, slope`; the slope cell is filled on the
    /// last row only.
    pub fn to_csv(&self) -> String {
        let last = self.rows.len().saturating_sub(1);
        let rows = self.rows.iter().enumerate().map(|(i, r)| {
            vec![
                csvio::fmt(r.param),
                csvio::fmt(r.mse),
                csvio::fmt(r.std_err),
                if i == last {
                    csvio::fmt(self.fit.slope)
                } else {
                    String::new()
                },
            ]
        });
        csvio::document(&[self.param_name, self.mse_name, "std_err", "slope"], rows)
    }
}

const JACKKNIFE_BLOCKS: usize = 20;

pub(crate) fn block_ranges(paths: usize) -> Vec<std::ops::Range<u64>> {
    let blocks = JACKKNIFE_BLOCKS.min(paths / 2).max(2);
    let base = paths / blocks;
    let extra = paths % blocks;
    let mut out = Vec::with_capacity(blocks);
    let mut start = 0u64;
    for b in 0..blocks {
        let len = base + usize::from(b < extra);
        out.push(start..start + len as u64);
        start += len as u64;
    }
    out
}

/// Estimates `sup_t E|Z^n - Z|^2` for each `n` at matched noise and fits the
/// log-log slope against `n`.
pub fn convergence_study(
    model: &MarketModel,
    signal: &TradingSignal,
    n_list: &[usize],
    cfg: &DiscreteRunConfig,
) -> Result<ConvergenceTable> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.is_empty() {
        return Err(Error::invalid("n_list must be nonempty and increasing"));
    }
    for &n in n_list {
        cfg.check_divides(n)?;
    }
    if cfg.mc_paths < 4 {
        return Err(Error::invalid("need at least 4 Monte Carlo paths"));
    }
    if !signal.jumps.is_empty() {
        return Err(Error::invalid("discrete rebalancing takes a jump-free signal"));
    }
    let (a, b) = constant_controls(signal)?;
    let grid = TimeGrid::new(0.0, model.horizon, cfg.base_grid_steps)?;
    let x0 = model.price_box.center();
    let nodes = cfg.base_grid_steps + 1;

    let ranges = block_ranges(cfg.mc_paths);
    let block_results: Vec<Result<Vec<Vec<f64>>>> = ranges
        .par_iter()
        .map(|range| {
            let mut acc = vec![vec![0.0; nodes]; n_list.len()];
            for path in range.clone() {
                let incs = rng::brownian_increments(cfg.seed, path, grid.steps, grid.dt());
                let limit = limit_states(model, a, b, signal.y0, &grid, &incs, x0)?;
                for (k, &n) in n_list.iter().enumerate() {
                    let disc = discrete_states(
                        model,
                        a,
                        b,
                        signal.y0,
                        cfg.base_grid_steps / n,
                        &grid,
                        &incs,
                        x0,
                    )?;
                    for (node, (zd, zl)) in disc.iter().zip(&limit).enumerate() {
                        acc[k][node] += zd.sq_distance(zl);
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let counts: Vec<usize> = ranges.iter().map(|r| (r.end - r.start) as usize).collect();
    let mut per_n_blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_list.len()];
    for block in block_results {
        let block = block?;
        for (k, node_sums) in block.into_iter().enumerate() {
            per_n_blocks[k].push(node_sums);
        }
    }

    let mut rows = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let (mse, se) = stats::sup_mean_jackknife(&per_n_blocks[k], &counts);
        rows.push(ConvergenceRow {
            param: n as f64,
            mse,
            std_err: se,
        });
    }
    let params: Vec<f64> = rows.iter().map(|r| r.param).collect();
    let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let fit = stats::loglog_fit(&params, &mses);

    Ok(ConvergenceTable {
        param_name: "n",
        mse_name: "sup_node_mse",
        rows,
        fit,
    })
}
