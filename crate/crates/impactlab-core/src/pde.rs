//! Quasi-linear super-hedging PDE.
//!
//! The super-hedging price `w(t, x)` of a claim `(g0, g1)` solves, backward
//! from its terminal condition `G`,
//!
//! ```text
//! 0 = -dw/dt - hat_mu(x, y) [w_x + I_x(x, y)]
//!            - 1/2 hat_sigma(x, y)^2 [w_xx + I_xx(x, y)]
//! ```
//!
//! evaluated at the feedback position `y = yhat[w](t, x)`, the order size
//! that lifts the post-liquidation price `x` to `x + f(x) w_x`:
//!
//! ```text
//! yhat[w](t, x) = x^{-1}(x, x + f(x) w_x(t, x))
//! ```
//!
//! The coefficients come from the impact flow,
//!
//! ```text
//! hat_sigma(x, y) = sigma(u) f(x) / f(u)
//! hat_mu(x, y)    = 1/2 sigma(u)^2 f(x) (f'(x) - f'(u)) / f(u)^2,  u = x(x, y)
//! ```
//!
//! and the `I`-terms are the closed-form spatial derivatives of the
//! liquidity cost. The scheme is backward Euler: implicit in the diffusion
//! term, explicit upwinded first-order term, with the nonlinearity resolved
//! by Picard iteration at each step. Boundaries impose a vanishing second
//! derivative (linear extrapolation); the grid must sit inside a wide enough
//! price box that boundary influence on the evaluation region is below
//! tolerance.
//!
//! `solve_transformed` solves the same equation after the monotone change of
//! variable `Phi' = f(Phi)` (requires `inf f > 0`) and maps back, providing
//! an independent discretization against which `solve` can be checked.

use crate::csvio;
use crate::error::{Error, Result};
use crate::impact::ImpactCurve;
use crate::interp::{Axis, BicubicSurface};
use crate::model::{DeliveryKind, MarketModel};

/// Boundary treatment of the spatial domain truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BoundaryTreatment {
    /// `w_xx = 0` at both edges (linear extrapolation).
    SecondDerivativeZero,
}

/// Space-time grid for the backward solve.
#[derive(Debug, Clone, Copy)]
pub struct PdeGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Number of spatial intervals; nodes are `0..=space_intervals`.
    pub space_intervals: usize,
    /// Number of backward time steps; nodes are `0..=time_steps`.
    pub time_steps: usize,
    pub horizon: f64,
    pub boundary: BoundaryTreatment,
}

impl PdeGrid {
    pub fn new(
        x_lo: f64,
        x_hi: f64,
        space_intervals: usize,
        time_steps: usize,
        horizon: f64,
    ) -> Result<Self> {
        if !(x_hi > x_lo) || space_intervals < 8 || time_steps < 2 || !(horizon > 0.0) {
            return Err(Error::invalid(format!(
                "degenerate PDE grid [{x_lo}, {x_hi}] with {space_intervals}x{time_steps} cells"
            )));
        }
        Ok(PdeGrid {
            x_lo,
            x_hi,
            space_intervals,
            time_steps,
            horizon,
            boundary: BoundaryTreatment::SecondDerivativeZero,
        })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.space_intervals as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    #[inline]
    pub fn x_node(&self, i: usize) -> f64 {
        self.x_lo + self.dx() * i as f64
    }

    #[inline]
    pub fn t_node(&self, j: usize) -> f64 {
        self.dt() * j as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..=self.space_intervals).map(|i| self.x_node(i)).collect()
    }

    /// Doubled resolution in both directions, same extent.
    pub fn refined(&self) -> PdeGrid {
        PdeGrid {
            space_intervals: self.space_intervals * 2,
            time_steps: self.time_steps * 2,
            ..*self
        }
    }
}

/// Solver knobs.
#[derive(Debug, Clone, Copy)]
pub struct PdeParams {
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Scan density for the general terminal fixed point.
    pub terminal_scan_points: usize,
}

impl Default for PdeParams {
    fn default() -> Self {
        PdeParams {
            picard_tol: 1e-9,
            picard_max_iters: 50,
            terminal_scan_points: 512,
        }
    }
}

/// Hat coefficients of the post-liquidation price dynamics at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatCoefficients {
    pub hat_mu: f64,
    pub hat_sigma: f64,
}

/// Evaluates the hat coefficients through the flow identity
/// `d_x x(x, y) = f(x(x,y)) / f(x)`.
pub fn hat_coefficients(
    curve: &ImpactCurve,
    model: &MarketModel,
    x: f64,
    y: f64,
) -> Result<HatCoefficients> {
    let u = curve.flow(x, y)?;
    Ok(hat_at(curve, model, x, u))
}

#[inline]
fn hat_at(curve: &ImpactCurve, model: &MarketModel, x: f64, u: f64) -> HatCoefficients {
    let f = curve.impact();
    let fx = f.value(x);
    let fu = f.value(u);
    let su = model.sigma(u);
    HatCoefficients {
        hat_mu: 0.5 * su * su * fx * (f.d1(x) - f.d1(u)) / (fu * fu),
        hat_sigma: su * fx / fu,
    }
}

/// Nonlinear coefficient bundle at one node, evaluated at the feedback
/// position determined by the gradient combination `p = f(x) w_x`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct QuasiCoeffs {
    pub y_hat: f64,
    pub hat_mu: f64,
    pub hat_sigma: f64,
    /// `hat_mu I_x + 1/2 hat_sigma^2 I_xx`, the inhomogeneous part.
    pub source: f64,
}

pub(crate) fn quasi_coefficients(
    curve: &ImpactCurve,
    model: &MarketModel,
    x: f64,
    p: f64,
    y_guess: f64,
) -> Result<QuasiCoeffs> {
    let target = x + p;
    let y = curve.inverse_flow_from(x, target, y_guess)?;
    let u = target;
    let hat = hat_at(curve, model, x, u);
    let i_x = curve.cost_dx(x, y, u);
    let i_xx = curve.cost_dxx(x, y, u);
    Ok(QuasiCoeffs {
        y_hat: y,
        hat_mu: hat.hat_mu,
        hat_sigma: hat.hat_sigma,
        source: hat.hat_mu * i_x + 0.5 * hat.hat_sigma * hat.hat_sigma * i_xx,
    })
}

/// Terminal condition evaluated on price nodes.
#[derive(Debug, Clone)]
pub struct TerminalCondition {
    pub values: Vec<f64>,
    /// Number of admissible fixed-point roots found per node.
    pub root_multiplicity: Vec<usize>,
    /// Nodes where no admissible position exists (values are `+inf` there).
    pub infeasible_nodes: Vec<usize>,
}

/// Computes `G` (or `G_k` when `k_bound` is given) at the price nodes `xs`:
/// the cheapest terminal wealth consistent with delivering
/// `y = g1(x(x, y))` shares, settling `g0`, and unwinding through the impact
/// curve. For a cash-settled claim this is just `g0`; for constant delivery
/// `q` it is `q x(x,q) + g0(x(x,q)) - I(x,q)`; in general the scalar fixed
/// point is located by a sign-change scan over the admissible bracket and
/// the minimizing root is taken (multiplicity reported).
pub fn terminal_condition(
    model: &MarketModel,
    curve: &ImpactCurve,
    k_bound: Option<f64>,
    xs: &[f64],
    params: &PdeParams,
) -> Result<TerminalCondition> {
    let claim = &model.claim;
    let n = xs.len();
    let mut values = vec![0.0; n];
    let mut mult = vec![0usize; n];
    let mut infeasible = Vec::new();

    match claim.g1.kind() {
        DeliveryKind::Zero => {
            for (i, &x) in xs.iter().enumerate() {
                values[i] = claim.g0.value(x);
                mult[i] = 1;
            }
        }
        DeliveryKind::Constant => {
            let q = claim.g1.value(0.0);
            for (i, &x) in xs.iter().enumerate() {
                if k_bound.map_or(false, |k| q.abs() > k) {
                    values[i] = f64::INFINITY;
                    infeasible.push(i);
                    continue;
                }
                let (u, cost) = curve.flow_and_cost(x, q)?;
                values[i] = q * u + claim.g0.value(u) - cost;
                mult[i] = 1;
            }
        }
        DeliveryKind::General => {
            // Roots satisfy |y| = |g1(x(x, y))|, so a sampled bound on |g1|
            // brackets every admissible position.
            let g1_max = model
                .price_box
                .samples(2049)
                .map(|x| claim.g1.value(x).abs())
                .fold(0.0, f64::max);
            let scan_k = k_bound.unwrap_or(g1_max + 1.0);
            let inset = 1e-9 * model.price_box.width();
            for (i, &x) in xs.iter().enumerate() {
                let y_lo = curve
                    .inverse_flow(x, model.price_box.lo + inset)?
                    .max(-scan_k);
                let y_hi = curve
                    .inverse_flow(x, model.price_box.hi - inset)?
                    .min(scan_k);
                let roots = scan_fixed_points(curve, claim, x, y_lo, y_hi, params)?;
                if roots.is_empty() {
                    values[i] = f64::INFINITY;
                    infeasible.push(i);
                    continue;
                }
                mult[i] = roots.len();
                let mut best = f64::INFINITY;
                for y in roots {
                    let (u, cost) = curve.flow_and_cost(x, y)?;
                    best = best.min(y * u + claim.g0.value(u) - cost);
                }
                values[i] = best;
            }
        }
    }

    if k_bound.is_none() && !infeasible.is_empty() {
        return Err(Error::TerminalFixedPoint { nodes: infeasible });
    }
    Ok(TerminalCondition {
        values,
        root_multiplicity: mult,
        infeasible_nodes: infeasible,
    })
}

fn scan_fixed_points(
    curve: &ImpactCurve,
    claim: &crate::model::Claim,
    x: f64,
    y_lo: f64,
    y_hi: f64,
    params: &PdeParams,
) -> Result<Vec<f64>> {
    if y_hi <= y_lo {
        return Ok(Vec::new());
    }
    let n = params.terminal_scan_points.max(8);
    let h = (y_hi - y_lo) / n as f64;
    let resid = |y: f64| -> Result<f64> { Ok(y - claim.g1.value(curve.flow(x, y)?)) };
    let mut roots = Vec::new();
    let mut prev_y = y_lo;
    let mut prev_r = resid(prev_y)?;
    for k in 1..=n {
        let y = y_lo + h * k as f64;
        let r = resid(y)?;
        if prev_r == 0.0 {
            roots.push(prev_y);
        } else if prev_r * r < 0.0 {
            let (mut a, mut b, mut ra) = (prev_y, y, prev_r);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                let rm = resid(mid)?;
                if ra * rm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    ra = rm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_y = y;
        prev_r = r;
    }
    if prev_r == 0.0 {
        roots.push(prev_y);
    }
    Ok(roots)
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PdeDiagnostics {
    /// Picard iterations used at each backward step.
    pub picard_iterations: Vec<usize>,
    pub max_picard_residual: f64,
    pub terminal_max_multiplicity: usize,
    pub terminal_infeasible_nodes: usize,
}

/// Solved surface with gradient and hedge map on the grid.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub grid: PdeGrid,
    /// `values[j][i]` at time node `j`, price node `i`.
    pub values: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
    /// Feedback position `yhat(t_j, x_i)`.
    pub hedge: Vec<Vec<f64>>,
    pub diagnostics: PdeDiagnostics,
}

impl PdeSolution {
    /// Bicubic interpolant of the value surface.
    pub fn surface(&self) -> BicubicSurface {
        let t_axis = Axis {
            start: 0.0,
            step: self.grid.dt(),
            count: self.grid.time_steps + 1,
        };
        let x_axis = Axis {
            start: self.grid.x_lo,
            step: self.grid.dx(),
            count: self.grid.space_intervals + 1,
        };
        let mut flat = Vec::with_capacity(t_axis.count * x_axis.count);
        for row in &self.values {
            flat.extend_from_slice(row);
        }
        BicubicSurface::new(t_axis, x_axis, flat)
    }

    /// Long-format CSV: one row per `(s, x)` node.
    pub fn to_csv(&self) -> String {
        let rows =
            (0..=self.grid.time_steps).flat_map(|j| (0..=self.grid.space_intervals).map(move |i| (j, i)));
        let body = rows.map(|(j, i)| {
            vec![
                csvio::fmt(self.grid.t_node(j)),
                csvio::fmt(self.grid.x_node(i)),
                csvio::fmt(self.values[j][i]),
                csvio::fmt(self.gradient[j][i]),
                csvio::fmt(self.hedge[j][i]),
            ]
        });
        csvio::document(&["s", "x", "w", "dw_dx", "y_hat"], body)
    }

    /// Max-abs difference against another solution of the same layout over
    /// an interior margin (a fraction of the extent trimmed from each end).
    pub fn max_abs_diff(&self, other: &PdeSolution, margin_fraction: f64) -> f64 {
        let m = self.grid.space_intervals;
        let lo = ((m as f64) * margin_fraction).ceil() as usize;
        let hi = m - lo;
        let mut worst: f64 = 0.0;
        for (row_a, row_b) in self.values.iter().zip(&other.values) {
            for i in lo..=hi {
                worst = worst.max((row_a[i] - row_b[i]).abs());
            }
        }
        worst
    }
}

fn central_gradient(row: &[f64], dx: f64) -> Vec<f64> {
    let m = row.len() - 1;
    let mut g = vec![0.0; m + 1];
    g[0] = (row[1] - row[0]) / dx;
    g[m] = (row[m] - row[m - 1]) / dx;
    for i in 1..m {
        g[i] = (row[i + 1] - row[i - 1]) / (2.0 * dx);
    }
    g
}

/// Thomas solve of a tridiagonal system; the solution replaces `rhs`.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

fn require_elliptic(model: &MarketModel) -> Result<()> {
    if !(model.coefficients.sigma_floor > 0.0) {
        return Err(Error::ModelAssumption(
            "pricing requires a strictly positive volatility floor".into(),
        ));
    }
    let inf_f = model.sampled_inf_f(4097);
    if !(inf_f > 0.0) {
        return Err(Error::ModelAssumption(
            "pricing requires inf f > 0 on the box".into(),
        ));
    }
    Ok(())
}

fn check_grid(model: &MarketModel, grid: &PdeGrid) -> Result<()> {
    if grid.x_lo < model.price_box.lo || grid.x_hi > model.price_box.hi {
        return Err(Error::invalid(
            "PDE grid must lie inside the model's price box",
        ));
    }
    if (grid.horizon - model.horizon).abs() > 1e-12 * model.horizon {
        return Err(Error::invalid(
            "PDE grid horizon differs from the model horizon",
        ));
    }
    Ok(())
}

struct ImplicitStep<'a> {
    m: usize,
    dt: f64,
    dx: f64,
    reaction: f64,
    diffusion: &'a [f64],
}

/// One implicit diffusion step: solves
/// `(1 + reaction dt) u - dt/2 diffusion u_xx = rhs` with vanishing second
/// derivative at both edges (which decouples rows `1` and `m-1`).
fn implicit_diffusion_step(step: &ImplicitStep, rhs: &[f64]) -> Vec<f64> {
    let m = step.m;
    let denom = 1.0 + step.reaction * step.dt;
    let mut u = vec![0.0; m + 1];
    if m >= 4 {
        let inner = m - 3; // unknowns 2..=m-2
        let u1 = rhs[0] / denom;
        let um1 = rhs[m - 2] / denom;
        let mut lower = vec![0.0; inner];
        let mut diag = vec![0.0; inner];
        let mut upper = vec![0.0; inner];
        let mut b = vec![0.0; inner];
        for (k, i) in (2..=m - 2).enumerate() {
            let alpha = 0.5 * step.dt * step.diffusion[i] / (step.dx * step.dx);
            lower[k] = -alpha;
            diag[k] = denom + 2.0 * alpha;
            upper[k] = -alpha;
            b[k] = rhs[i - 1];
        }
        let alpha2 = 0.5 * step.dt * step.diffusion[2] / (step.dx * step.dx);
        b[0] += alpha2 * u1;
        let alpham = 0.5 * step.dt * step.diffusion[m - 2] / (step.dx * step.dx);
        b[inner - 1] += alpham * um1;
        thomas(&lower, &diag, &upper, &mut b);
        u[1] = u1;
        u[m - 1] = um1;
        for (k, i) in (2..=m - 2).enumerate() {
            u[i] = b[k];
        }
    } else {
        for i in 1..m {
            u[i] = rhs[i - 1] / denom;
        }
    }
    u[0] = 2.0 * u[1] - u[2];
    u[m] = 2.0 * u[m - 1] - u[m - 2];
    u
}

/// Backward solve of the pricing equation on `grid`.
pub fn solve(
    model: &MarketModel,
    curve: &ImpactCurve,
    grid: &PdeGrid,
    params: &PdeParams,
) -> Result<PdeSolution> {
    require_elliptic(model)?;
    check_grid(model, grid)?;

    let m = grid.space_intervals;
    let n_t = grid.time_steps;
    let dx = grid.dx();
    let dt = grid.dt();
    let xs = grid.x_nodes();

    let terminal = terminal_condition(model, curve, None, &xs, params)?;
    let mut values = vec![Vec::new(); n_t + 1];
    values[n_t] = terminal.values.clone();

    let mut y_warm: Vec<f64> = central_gradient(&values[n_t], dx);
    let mut picard_iterations = Vec::with_capacity(n_t);
    let mut max_resid: f64 = 0.0;

    let mut mu_row = vec![0.0; m + 1];
    let mut sig2_row = vec![0.0; m + 1];
    let mut src_row = vec![0.0; m + 1];

    for j in (0..n_t).rev() {
        let next = values[j + 1].clone();
        let mut u_old = next.clone();
        let mut iterations = 0;
        let mut resid = f64::INFINITY;

        while iterations < params.picard_max_iters {
            iterations += 1;
            let grad = central_gradient(&u_old, dx);
            for i in 1..m {
                let p = curve.impact().value(xs[i]) * grad[i];
                let c = quasi_coefficients(curve, model, xs[i], p, y_warm[i])?;
                y_warm[i] = c.y_hat;
                mu_row[i] = c.hat_mu;
                sig2_row[i] = c.hat_sigma * c.hat_sigma;
                src_row[i] = c.source;
            }
            let max_wind = mu_row[1..m].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if max_wind * dt > dx {
                return Err(Error::StabilityViolation(format!(
                    "explicit first-order term violates its CFL bound: |hat_mu| dt = {:.3e} > dx = {:.3e}",
                    max_wind * dt,
                    dx
                )));
            }

            let mut rhs = vec![0.0; m - 1];
            for i in 1..m {
                let upw = if mu_row[i] >= 0.0 {
                    (u_old[i + 1] - u_old[i]) / dx
                } else {
                    (u_old[i] - u_old[i - 1]) / dx
                };
                rhs[i - 1] = next[i] + dt * (mu_row[i] * upw + src_row[i]);
            }
            let u_new = implicit_diffusion_step(
                &ImplicitStep {
                    m,
                    dt,
                    dx,
                    reaction: 0.0,
                    diffusion: &sig2_row,
                },
                &rhs,
            );

            resid = u_new
                .iter()
                .zip(&u_old)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            u_old = u_new;
            if resid <= params.picard_tol {
                break;
            }
        }
        if resid > params.picard_tol {
            return Err(Error::PicardFailure {
                time_index: j,
                residual: resid,
                iterations,
            });
        }
        picard_iterations.push(iterations);
        max_resid = max_resid.max(resid);
        values[j] = u_old;
    }
    picard_iterations.reverse();

    finish_solution(
        curve,
        grid,
        values,
        PdeDiagnostics {
            picard_iterations,
            max_picard_residual: max_resid,
            terminal_max_multiplicity: terminal
                .root_multiplicity
                .iter()
                .copied()
                .max()
                .unwrap_or(0),
            terminal_infeasible_nodes: terminal.infeasible_nodes.len(),
        },
    )
}

/// Wraps externally computed surface values (e.g. a closed-form solution)
/// into a `PdeSolution` with consistent gradient and hedge map.
pub fn solution_from_values(
    curve: &ImpactCurve,
    grid: &PdeGrid,
    values: Vec<Vec<f64>>,
) -> Result<PdeSolution> {
    finish_solution(
        curve,
        grid,
        values,
        PdeDiagnostics {
            picard_iterations: Vec::new(),
            max_picard_residual: 0.0,
            terminal_max_multiplicity: 0,
            terminal_infeasible_nodes: 0,
        },
    )
}

fn finish_solution(
    curve: &ImpactCurve,
    grid: &PdeGrid,
    values: Vec<Vec<f64>>,
    diagnostics: PdeDiagnostics,
) -> Result<PdeSolution> {
    let dx = grid.dx();
    let xs = grid.x_nodes();
    let mut gradient = Vec::with_capacity(values.len());
    let mut hedge = Vec::with_capacity(values.len());
    for row in &values {
        let grad = central_gradient(row, dx);
        let mut h = vec![0.0; row.len()];
        for i in 0..row.len() {
            let p = curve.impact().value(xs[i]) * grad[i];
            h[i] = curve.inverse_flow_from(xs[i], xs[i] + p, grad[i])?;
        }
        gradient.push(grad);
        hedge.push(h);
    }
    Ok(PdeSolution {
        grid: *grid,
        values,
        gradient,
        hedge,
        diagnostics,
    })
}

/// Solves the transformed equation in `u = Phi^{-1}(x)` with discount `rho`
/// and maps the result back to the price grid. `Phi` integrates
/// `Phi' = f(Phi)` anchored at the grid center, so it reuses the impact
/// flow; `inf f > 0` makes it a bijection.
pub fn solve_transformed(
    model: &MarketModel,
    curve: &ImpactCurve,
    grid: &PdeGrid,
    rho: f64,
    params: &PdeParams,
) -> Result<PdeSolution> {
    require_elliptic(model)?;
    check_grid(model, grid)?;
    if !(rho >= 0.0) {
        return Err(Error::invalid("rho must be nonnegative"));
    }

    let m = grid.space_intervals;
    let n_t = grid.time_steps;
    let dt = grid.dt();
    let anchor = 0.5 * (grid.x_lo + grid.x_hi);

    // u-domain covering [x_lo, x_hi]: Phi(u) = flow(anchor, u).
    let u_lo = curve.inverse_flow(anchor, grid.x_lo)?;
    let u_hi = curve.inverse_flow(anchor, grid.x_hi)?;
    let du = (u_hi - u_lo) / m as f64;
    let mut phi = vec![0.0; m + 1];
    phi[0] = grid.x_lo;
    for i in 1..=m {
        phi[i] = curve.flow(phi[i - 1], du)?;
    }

    let terminal_g = terminal_condition(model, curve, None, &phi, params)?;
    let horizon = grid.horizon;
    let mut values = vec![Vec::new(); n_t + 1];
    values[n_t] = terminal_g
        .values
        .iter()
        .map(|g| (rho * horizon).exp() * g)
        .collect();

    let f = curve.impact();
    let mut y_warm = vec![0.0; m + 1];
    let mut picard_iterations = Vec::with_capacity(n_t);
    let mut max_resid: f64 = 0.0;

    let mut conv_row = vec![0.0; m + 1];
    let mut diff_row = vec![0.0; m + 1];
    let mut src_row = vec![0.0; m + 1];

    for j in (0..n_t).rev() {
        let t = grid.t_node(j);
        let scale = (-rho * t).exp();
        let next = values[j + 1].clone();
        let mut u_old = next.clone();
        let mut iterations = 0;
        let mut resid = f64::INFINITY;

        while iterations < params.picard_max_iters {
            iterations += 1;
            let grad = central_gradient(&u_old, du);
            for i in 1..m {
                let x = phi[i];
                let p = scale * grad[i];
                let c = quasi_coefficients(curve, model, x, p, y_warm[i])?;
                y_warm[i] = c.y_hat;
                let fx = f.value(x);
                let a2 = c.hat_sigma * c.hat_sigma;
                conv_row[i] = c.hat_mu / fx - 0.5 * a2 * f.d1(x) / (fx * fx);
                diff_row[i] = a2 / (fx * fx);
                src_row[i] = (rho * t).exp() * c.source;
            }
            let max_wind = conv_row[1..m].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if max_wind * dt > du {
                return Err(Error::StabilityViolation(format!(
                    "transformed first-order term violates its CFL bound: {:.3e} > {:.3e}",
                    max_wind * dt,
                    du
                )));
            }

            let mut rhs = vec![0.0; m - 1];
            for i in 1..m {
                let upw = if conv_row[i] >= 0.0 {
                    (u_old[i + 1] - u_old[i]) / du
                } else {
                    (u_old[i] - u_old[i - 1]) / du
                };
                rhs[i - 1] = next[i] + dt * (conv_row[i] * upw + src_row[i]);
            }
            let u_new = implicit_diffusion_step(
                &ImplicitStep {
                    m,
                    dt,
                    dx: du,
                    reaction: rho,
                    diffusion: &diff_row,
                },
                &rhs,
            );

            resid = u_new
                .iter()
                .zip(&u_old)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            u_old = u_new;
            if resid <= params.picard_tol {
                break;
            }
        }
        if resid > params.picard_tol {
            return Err(Error::PicardFailure {
                time_index: j,
                residual: resid,
                iterations,
            });
        }
        picard_iterations.push(iterations);
        max_resid = max_resid.max(resid);
        values[j] = u_old;
    }
    picard_iterations.reverse();

    // Map back to the price grid: v(t, x) = e^{-rho t} vtilde(t, Phi^{-1}(x)).
    let u_axis = Axis {
        start: u_lo,
        step: du,
        count: m + 1,
    };
    let xs = grid.x_nodes();
    let mut u_of_x = vec![0.0; m + 1];
    for i in 0..=m {
        u_of_x[i] = curve.inverse_flow(anchor, xs[i])?;
    }
    let mut back = Vec::with_capacity(n_t + 1);
    for (j, row) in values.iter().enumerate() {
        let t = grid.t_node(j);
        let damp = (-rho * t).exp();
        let mapped: Vec<f64> = u_of_x
            .iter()
            .map(|&u| damp * crate::interp::cubic1d(u_axis, row, u))
            .collect();
        back.push(mapped);
    }

    finish_solution(
        curve,
        grid,
        back,
        PdeDiagnostics {
            picard_iterations,
            max_picard_residual: max_resid,
            terminal_max_multiplicity: terminal_g
                .root_multiplicity
                .iter()
                .copied()
                .max()
                .unwrap_or(0),
            terminal_infeasible_nodes: terminal_g.infeasible_nodes.len(),
        },
    )
}

/// Verification diagnostic: max-abs residual of the solved surface against a
/// centered (Crank-Nicolson style) re-discretization of the equation on the
/// interior region.
pub fn residual_linf(
    model: &MarketModel,
    curve: &ImpactCurve,
    sol: &PdeSolution,
    margin_fraction: f64,
) -> Result<f64> {
    let grid = &sol.grid;
    let m = grid.space_intervals;
    let dx = grid.dx();
    let dt = grid.dt();
    let xs = grid.x_nodes();
    let lo = (((m as f64) * margin_fraction).ceil() as usize).max(1);
    let hi = (m - lo).min(m - 1);
    let eval = |row: &[f64]| -> Result<Vec<f64>> {
        let grad = central_gradient(row, dx);
        let mut q = vec![0.0; m + 1];
        for i in lo..=hi {
            let p = curve.impact().value(xs[i]) * grad[i];
            let c = quasi_coefficients(curve, model, xs[i], p, grad[i])?;
            let wxx = (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (dx * dx);
            q[i] = c.hat_mu * grad[i] + 0.5 * c.hat_sigma * c.hat_sigma * wxx + c.source;
        }
        Ok(q)
    };
    let mut worst: f64 = 0.0;
    let mut q_next = eval(&sol.values[grid.time_steps])?;
    for j in (0..grid.time_steps).rev() {
        let q_here = eval(&sol.values[j])?;
        for i in lo..=hi {
            let r = -(sol.values[j + 1][i] - sol.values[j][i]) / dt
                - 0.5 * (q_here[i] + q_next[i]);
            worst = worst.max(r.abs());
        }
        q_next = q_here;
    }
    Ok(worst)
}
