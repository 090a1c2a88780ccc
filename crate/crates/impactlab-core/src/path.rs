//! Continuous-time trading dynamics.
//!
//! Between trades the price diffuses; an Ito trading signal `Y` with
//! loadings `(a, b)` feeds back into the price through the impact slope:
//!
//! ```text
//! dX = sigma(X) dW + f(X) dY + (mu(X) + a (sigma f')(X)) dt
//! dV = Y dX + 1/2 a^2 f(X) dt
//! ```
//!
//! Block orders enter as jumps of the state through the impact-curve jump
//! map. All simulations are Euler-Maruyama on a uniform grid and are
//! deterministic given `(model, signal, grid, seed)`.

use crate::error::{Error, Result};
use crate::impact::ImpactCurve;
use crate::model::MarketModel;
use crate::{csvio, rng};
use std::sync::Arc;

/// Uniform time grid `t0 + i dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > t0) || steps == 0 {
            return Err(Error::invalid(format!(
                "degenerate time grid [{t0}, {t_end}] with {steps} steps"
            )));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.t0 + self.dt() * i as f64
    }

    /// Nearest grid node to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.dt()).round();
        (i.max(0.0) as usize).min(self.steps)
    }
}

/// State triple `Z = (X, Y, V)`: price, shares held, portfolio value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarketState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

impl MarketState {
    pub fn new(x: f64, y: f64, v: f64) -> Self {
        MarketState { x, y, v }
    }

    pub fn sq_distance(&self, other: &MarketState) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dv = self.v - other.v;
        dx * dx + dy * dy + dv * dv
    }
}

type ControlCallback = Arc<dyn Fn(f64, &MarketState) -> f64 + Send + Sync>;

/// One control coordinate of a trading signal, evaluated at grid nodes.
#[derive(Clone)]
pub enum Control {
    Constant(f64),
    /// Pathwise signals depending on the current state.
    Callback(ControlCallback),
}

impl Control {
    #[inline]
    pub fn eval(&self, t: f64, state: &MarketState) -> f64 {
        match self {
            Control::Constant(c) => *c,
            Control::Callback(f) => f(t, state),
        }
    }
}

impl std::fmt::Debug for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Control::Constant(c) => write!(f, "Constant({c})"),
            Control::Callback(_) => write!(f, "Callback"),
        }
    }
}

/// A block order `(time, size)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// Ito trading signal with an optional finite list of block orders.
#[derive(Debug, Clone)]
pub struct TradingSignal {
    pub y0: f64,
    pub a: Control,
    pub b: Control,
    pub jumps: Vec<Jump>,
    /// Admissibility bound `k`: `|a|, |b| <= k` and `|Y| <= k` (monitored).
    pub bound: f64,
}

impl TradingSignal {
    pub fn constant(y0: f64, a: f64, b: f64, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::invalid("signal bound must be positive"));
        }
        if a.abs() > bound || b.abs() > bound {
            return Err(Error::invalid(format!(
                "|a| = {}, |b| = {} exceed the admissibility bound {bound}",
                a.abs(),
                b.abs()
            )));
        }
        Ok(TradingSignal {
            y0,
            a: Control::Constant(a),
            b: Control::Constant(b),
            jumps: Vec::new(),
            bound,
        })
    }

    pub fn with_jumps(mut self, jumps: Vec<Jump>) -> Result<Self> {
        // equal times are allowed: an immediate round trip is two orders at
        // the same instant
        for pair in jumps.windows(2) {
            if pair[1].time < pair[0].time {
                return Err(Error::invalid("jump times must be nondecreasing"));
            }
        }
        if jumps.len() as f64 > self.bound {
            return Err(Error::invalid(format!(
                "{} jumps exceed the admissibility bound {}",
                jumps.len(),
                self.bound
            )));
        }
        if let Some(j) = jumps.iter().find(|j| j.size.abs() > self.bound) {
            return Err(Error::invalid(format!(
                "jump size {} exceeds the admissibility bound {}",
                j.size, self.bound
            )));
        }
        self.jumps = jumps;
        Ok(self)
    }

    /// Smallest gap between consecutive jump times.
    pub fn min_jump_separation(&self) -> f64 {
        self.jumps
            .windows(2)
            .map(|p| p[1].time - p[0].time)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A jump applied at a grid node, with both one-sided limits of the state.
#[derive(Debug, Clone, Copy)]
pub struct JumpEvent {
    pub node: usize,
    pub requested_time: f64,
    pub size: f64,
    pub pre: MarketState,
    pub post: MarketState,
}

/// Simulated path: post-jump states at every node plus the noise that drove
/// them.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub grid: TimeGrid,
    pub states: Vec<MarketState>,
    /// Brownian increments, `increments[i]` drives the step from node `i`.
    pub increments: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub warnings: Vec<String>,
}

impl PathResult {
    pub fn terminal(&self) -> MarketState {
        *self.states.last().unwrap()
    }

    /// One row per grid node: `t, X, Y, V, dW` (the increment consumed by the
    /// step leaving the node; 0 on the last row).
    pub fn to_csv(&self) -> String {
        let rows = (0..self.states.len()).map(|i| {
            let s = &self.states[i];
            let dw = self.increments.get(i).copied().unwrap_or(0.0);
            vec![
                csvio::fmt(self.grid.node(i)),
                csvio::fmt(s.x),
                csvio::fmt(s.y),
                csvio::fmt(s.v),
                csvio::fmt(dw),
            ]
        });
        csvio::document(&["t", "X", "Y", "V", "dW"], rows)
    }
}

/// One Euler-Maruyama step of the continuous dynamics, shared by every
/// simulation mode so that matched configurations agree bit for bit.
#[inline]
pub(crate) fn euler_step(
    model: &MarketModel,
    state: &mut MarketState,
    dt: f64,
    dw: f64,
    a: f64,
    b: f64,
) -> Result<()> {
    let x = state.x;
    let fx = model.impact.value(x);
    let dy = b * dt + a * dw;
    let dx = model.sigma(x) * dw + fx * dy + (model.mu(x) + a * model.sigma(x) * model.impact.d1(x)) * dt;
    let dv = state.y * dx + 0.5 * a * a * fx * dt;
    state.x += dx;
    state.y += dy;
    state.v += dv;
    if !model.price_box.contains(state.x) {
        return Err(Error::DomainEscape {
            x: state.x,
            lo: model.price_box.lo,
            hi: model.price_box.hi,
            context: "path simulation",
        });
    }
    Ok(())
}

fn snap_jumps(signal: &TradingSignal, grid: &TimeGrid) -> Result<Vec<(usize, Jump)>> {
    let mut snapped: Vec<(usize, Jump)> = Vec::with_capacity(signal.jumps.len());
    for j in &signal.jumps {
        if j.time < grid.t0 || j.time > grid.t_end {
            return Err(Error::invalid(format!(
                "jump at t = {} lies outside the grid [{}, {}]",
                j.time, grid.t0, grid.t_end
            )));
        }
        let node = grid.nearest_node(j.time);
        if let Some((prev, prev_jump)) = snapped.last() {
            if *prev == node && prev_jump.time != j.time {
                return Err(Error::invalid(format!(
                    "two jumps snap to the same grid node {node}; refine the grid past the jump separation"
                )));
            }
        }
        snapped.push((node, *j));
    }
    Ok(snapped)
}

fn simulate(
    model: &MarketModel,
    curve: &ImpactCurve,
    signal: &TradingSignal,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
    initial: MarketState,
    allow_jumps: bool,
) -> Result<PathResult> {
    if !allow_jumps && !signal.jumps.is_empty() {
        return Err(Error::invalid(
            "simulate_continuous requires a jump-free signal",
        ));
    }
    let snapped = snap_jumps(signal, grid)?;
    let dt = grid.dt();
    let increments = rng::brownian_increments(seed, path_index, grid.steps, dt);

    let mut state = initial;
    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut jump_cursor = 0;
    let mut bound_breached = false;

    for i in 0..=grid.steps {
        let t = grid.node(i);
        while jump_cursor < snapped.len() && snapped[jump_cursor].0 == i {
            let (_, jump) = snapped[jump_cursor];
            let pre = state;
            let (x, y, v) = curve.round_trip_state(pre.x, pre.y, pre.v, jump.size)?;
            state = MarketState::new(x, y, v);
            events.push(JumpEvent {
                node: i,
                requested_time: jump.time,
                size: jump.size,
                pre,
                post: state,
            });
            if (jump.time - t).abs() > 0.5 * dt * 1e-9 + f64::EPSILON {
                warnings.push(format!(
                    "jump requested at t = {} snapped to node {i} (t = {t})",
                    jump.time
                ));
            }
            jump_cursor += 1;
        }
        if !bound_breached && state.y.abs() > signal.bound {
            warnings.push(format!(
                "position |Y| = {} exceeded the admissibility bound {} at node {i}",
                state.y.abs(),
                signal.bound
            ));
            bound_breached = true;
        }
        states.push(state);
        if i < grid.steps {
            let a = signal.a.eval(t, &state);
            let b = signal.b.eval(t, &state);
            if !bound_breached && (a.abs() > signal.bound || b.abs() > signal.bound) {
                warnings.push(format!(
                    "controls |a| = {}, |b| = {} exceeded the bound {} at node {i}",
                    a.abs(),
                    b.abs(),
                    signal.bound
                ));
                bound_breached = true;
            }
            euler_step(model, &mut state, dt, increments[i], a, b)?;
        }
    }

    Ok(PathResult {
        grid: *grid,
        states,
        increments,
        jumps: events,
        warnings,
    })
}

/// Integrates the jump-free continuous dynamics for one path.
pub fn simulate_continuous(
    model: &MarketModel,
    signal: &TradingSignal,
    grid: &TimeGrid,
    seed: u64,
) -> Result<PathResult> {
    simulate_continuous_path(model, signal, grid, seed, 0, default_initial(model, signal))
}

/// `simulate_continuous` for a specific Monte Carlo path index and initial
/// state.
pub fn simulate_continuous_path(
    model: &MarketModel,
    signal: &TradingSignal,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
    initial: MarketState,
) -> Result<PathResult> {
    let curve = model.curve();
    simulate(
        model, &curve, signal, grid, seed, path_index, initial, false,
    )
}

/// Integrates the dynamics with block orders applied through the exact jump
/// map at their (snapped) grid nodes.
pub fn simulate_with_jumps(
    model: &MarketModel,
    signal: &TradingSignal,
    grid: &TimeGrid,
    seed: u64,
) -> Result<PathResult> {
    simulate_with_jumps_path(model, signal, grid, seed, 0, default_initial(model, signal))
}

pub fn simulate_with_jumps_path(
    model: &MarketModel,
    signal: &TradingSignal,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
    initial: MarketState,
) -> Result<PathResult> {
    let curve = model.curve();
    simulate(model, &curve, signal, grid, seed, path_index, initial, true)
}

fn default_initial(model: &MarketModel, signal: &TradingSignal) -> MarketState {
    MarketState::new(model.price_box.center(), signal.y0, 0.0)
}
