//! Impact-curve primitives.
//!
//! A trade of infinitesimal size `ds` moves the quoted price by `f(x) ds`.
//! Feeding a block order of total size `delta` through that rule drives the
//! price along the autonomous flow
//!
//! ```text
//! x'(s) = f(x(s)),   x(0) = x,   s in [0, delta]
//! ```
//!
//! This module computes the flow `x(x, delta)`, the induced price move
//! `delta_x`, the liquidity cost
//!
//! ```text
//! I(x, z) = ∫_0^z s f(x(x, s)) ds
//! ```
//!
//! and the inverse map `y = x^{-1}(x, target)`, together with the closed-form
//! spatial derivatives of the flow and of `I` that the pricing PDE needs.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Working price domain. Trajectories leaving it are an error rather than an
/// extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceBox {
    pub lo: f64,
    pub hi: f64,
}

impl PriceBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("degenerate price box [{lo}, {hi}]")));
        }
        Ok(PriceBox { lo, hi })
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Uniformly spaced sample points covering the box, endpoints included.
    pub fn samples(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let n = n.max(2);
        let step = self.width() / (n - 1) as f64;
        (0..n).map(move |i| self.lo + i as f64 * step)
    }

    fn escape(&self, x: f64, context: &'static str) -> Error {
        Error::DomainEscape {
            x,
            lo: self.lo,
            hi: self.hi,
            context,
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Impact slope `f` with first and second derivatives.
///
/// Registry kinds carry analytic derivatives. `Custom` impact functions may
/// omit them, in which case central differences with step `1e-5` are used and
/// the function reports `uses_fd_derivatives`.
#[derive(Clone)]
pub enum ImpactFunction {
    /// `f(x) = lambda`
    Constant { lambda: f64 },
    /// `f(x) = intercept + slope * x`, positive on the working box only.
    AffineBounded { intercept: f64, slope: f64 },
    /// `f(x) = base + amplitude * sin(wavenumber * x)`
    SinusoidalPerturbed {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    Custom {
        f: ScalarFn,
        df: Option<ScalarFn>,
        ddf: Option<ScalarFn>,
        /// Declared strictly positive lower bound, if the model states one.
        inf_bound: Option<f64>,
    },
}

const FD_STEP: f64 = 1e-5;

impl ImpactFunction {
    pub fn constant(lambda: f64) -> Self {
        ImpactFunction::Constant { lambda }
    }

    pub fn affine_bounded(intercept: f64, slope: f64) -> Self {
        ImpactFunction::AffineBounded { intercept, slope }
    }

    pub fn sinusoidal(base: f64, amplitude: f64, wavenumber: f64) -> Self {
        ImpactFunction::SinusoidalPerturbed {
            base,
            amplitude,
            wavenumber,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ImpactFunction::Constant { lambda } => *lambda,
            ImpactFunction::AffineBounded { intercept, slope } => intercept + slope * x,
            ImpactFunction::SinusoidalPerturbed {
                base,
                amplitude,
                wavenumber,
            } => base + amplitude * (wavenumber * x).sin(),
            ImpactFunction::Custom { f, .. } => f(x),
        }
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        match self {
            ImpactFunction::Constant { .. } => 0.0,
            ImpactFunction::AffineBounded { slope, .. } => *slope,
            ImpactFunction::SinusoidalPerturbed {
                amplitude,
                wavenumber,
                ..
            } => amplitude * wavenumber * (wavenumber * x).cos(),
            ImpactFunction::Custom { f, df, .. } => match df {
                Some(df) => df(x),
                None => (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP),
            },
        }
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        match self {
            ImpactFunction::Constant { .. } | ImpactFunction::AffineBounded { .. } => 0.0,
            ImpactFunction::SinusoidalPerturbed {
                amplitude,
                wavenumber,
                ..
            } => -amplitude * wavenumber * wavenumber * (wavenumber * x).sin(),
            ImpactFunction::Custom { f, ddf, .. } => match ddf {
                Some(ddf) => ddf(x),
                None => (f(x + FD_STEP) - 2.0 * f(x) + f(x - FD_STEP)) / (FD_STEP * FD_STEP),
            },
        }
    }

    /// True when any derivative falls back to finite differences.
    pub fn uses_fd_derivatives(&self) -> bool {
        matches!(
            self,
            ImpactFunction::Custom { df: None, .. } | ImpactFunction::Custom { ddf: None, .. }
        )
    }

    /// Declared strictly positive lower bound on `f`, if any.
    pub fn declared_inf(&self) -> Option<f64> {
        match self {
            ImpactFunction::Constant { lambda } => Some(*lambda),
            ImpactFunction::Custom { inf_bound, .. } => *inf_bound,
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ImpactFunction::Constant { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImpactFunction::Constant { .. } => "constant",
            ImpactFunction::AffineBounded { .. } => "affine_bounded",
            ImpactFunction::SinusoidalPerturbed { .. } => "sinusoidal_perturbed",
            ImpactFunction::Custom { .. } => "custom",
        }
    }
}

impl fmt::Debug for ImpactFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpactFunction::Constant { lambda } => write!(f, "Constant(lambda={lambda})"),
            ImpactFunction::AffineBounded { intercept, slope } => {
                write!(f, "AffineBounded({intercept} + {slope} x)")
            }
            ImpactFunction::SinusoidalPerturbed {
                base,
                amplitude,
                wavenumber,
            } => write!(f, "Sinusoidal({base} + {amplitude} sin({wavenumber} x))"),
            ImpactFunction::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Result of a flow evaluation with a step-doubling accuracy estimate.
#[derive(Debug, Clone, Copy)]
pub struct FlowEval {
    pub value: f64,
    /// Richardson estimate `|x_h - x_{2h}| / 15` of the integration error.
    pub error_estimate: f64,
}

/// Deterministic evaluator for the impact flow and its derived quantities.
///
/// Immutable after construction; all operations are pure and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct ImpactCurve {
    impact: ImpactFunction,
    price_box: PriceBox,
    ode_step: f64,
    newton_tol: f64,
    max_newton_iters: usize,
}

pub const DEFAULT_ODE_STEP: f64 = 1e-3;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 100;

impl ImpactCurve {
    pub fn new(impact: ImpactFunction, price_box: PriceBox) -> Self {
        ImpactCurve {
            impact,
            price_box,
            ode_step: DEFAULT_ODE_STEP,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_newton_iters: MAX_NEWTON_ITERS,
        }
    }

    pub fn with_ode_step(mut self, ode_step: f64) -> Result<Self> {
        if !(ode_step > 0.0) {
            return Err(Error::invalid("ode_step must be positive"));
        }
        self.ode_step = ode_step;
        Ok(self)
    }

    pub fn with_newton_tol(mut self, newton_tol: f64) -> Result<Self> {
        if !(newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol must be positive"));
        }
        self.newton_tol = newton_tol;
        Ok(self)
    }

    pub fn impact(&self) -> &ImpactFunction {
        &self.impact
    }

    pub fn price_box(&self) -> PriceBox {
        self.price_box
    }

    pub fn newton_tol(&self) -> f64 {
        self.newton_tol
    }

    pub fn ode_step(&self) -> f64 {
        self.ode_step
    }

    #[inline]
    fn check_in_box(&self, x: f64, context: &'static str) -> Result<()> {
        if self.price_box.contains(x) {
            Ok(())
        } else {
            Err(self.price_box.escape(x, context))
        }
    }

    /// Number of RK4 steps for an order of size `delta`, always even so the
    /// cost quadrature can pair intervals.
    fn step_count(&self, delta: f64) -> usize {
        let n = (delta.abs() / self.ode_step).ceil() as usize;
        (n.max(2) + 1) & !1
    }

    /// One classical RK4 step of `x' = f(x)` with signed step `h`.
    #[inline]
    fn rk4_step(&self, x: f64, h: f64) -> f64 {
        let f = &self.impact;
        let k1 = f.value(x);
        let k2 = f.value(x + 0.5 * h * k1);
        let k3 = f.value(x + 0.5 * h * k2);
        let k4 = f.value(x + h * k3);
        x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    }

    fn integrate_flow(&self, x: f64, delta: f64, n: usize, context: &'static str) -> Result<f64> {
        let h = delta / n as f64;
        let mut xs = x;
        for _ in 0..n {
            xs = self.rk4_step(xs, h);
            if !self.price_box.contains(xs) {
                return Err(self.price_box.escape(xs, context));
            }
        }
        Ok(xs)
    }

    /// Terminal value of the impact flow `x(x, delta)`.
    pub fn flow(&self, x: f64, delta: f64) -> Result<f64> {
        self.check_in_box(x, "flow")?;
        if !delta.is_finite() {
            return Err(Error::invalid(format!("order size {delta} is not finite")));
        }
        if delta == 0.0 {
            return Ok(x);
        }
        match &self.impact {
            ImpactFunction::Constant { lambda } => {
                let xs = x + delta * lambda;
                self.check_in_box(xs, "flow")?;
                Ok(xs)
            }
            _ => self.integrate_flow(x, delta, self.step_count(delta), "flow"),
        }
    }

    /// `flow` plus a step-doubling Richardson estimate of the integration
    /// error, used to flag accuracy loss.
    pub fn flow_checked(&self, x: f64, delta: f64) -> Result<FlowEval> {
        let value = self.flow(x, delta)?;
        if delta == 0.0 || self.impact.is_constant() {
            return Ok(FlowEval {
                value,
                error_estimate: 0.0,
            });
        }
        let n = self.step_count(delta);
        let coarse = self.integrate_flow(x, delta, n / 2, "flow")?;
        Ok(FlowEval {
            value,
            error_estimate: (value - coarse).abs() / 15.0,
        })
    }

    /// Price move `delta_x(x, delta) = x(x, delta) - x`.
    pub fn delta_x(&self, x: f64, delta: f64) -> Result<f64> {
        Ok(self.flow(x, delta)? - x)
    }

    /// Flow endpoint and liquidity cost `I(x, z)` in one pass.
    ///
    /// The cost quadrature is composite Simpson on the RK4 node grid, so it
    /// reuses the flow nodes and matches the integrator's order.
    pub fn flow_and_cost(&self, x: f64, z: f64) -> Result<(f64, f64)> {
        self.check_in_box(x, "cost")?;
        if !z.is_finite() {
            return Err(Error::invalid(format!("order size {z} is not finite")));
        }
        if z == 0.0 {
            return Ok((x, 0.0));
        }
        if let ImpactFunction::Constant { lambda } = &self.impact {
            let xs = x + z * lambda;
            self.check_in_box(xs, "cost")?;
            return Ok((xs, 0.5 * z * z * lambda));
        }
        let n = self.step_count(z);
        let h = z / n as f64;
        let mut xs = x;
        let mut s = 0.0;
        let mut total = 0.0;
        let g = |s: f64, x: f64| s * self.impact.value(x);
        for pair in 0..n / 2 {
            let g0 = g(s, xs);
            let x1 = self.rk4_step(xs, h);
            if !self.price_box.contains(x1) {
                return Err(self.price_box.escape(x1, "cost"));
            }
            let s1 = z * (2 * pair + 1) as f64 / n as f64;
            let g1 = g(s1, x1);
            let x2 = self.rk4_step(x1, h);
            if !self.price_box.contains(x2) {
                return Err(self.price_box.escape(x2, "cost"));
            }
            let s2 = z * (2 * pair + 2) as f64 / n as f64;
            let g2 = g(s2, x2);
            total += h / 3.0 * (g0 + 4.0 * g1 + g2);
            xs = x2;
            s = s2;
        }
        Ok((xs, total))
    }

    /// Liquidity cost `I(x, z) = ∫_0^z s f(x(x, s)) ds`, nonnegative for
    /// either sign of `z`.
    pub fn cost(&self, x: f64, z: f64) -> Result<f64> {
        Ok(self.flow_and_cost(x, z)?.1)
    }

    /// Inverse of the flow in the order-size variable: the `y` with
    /// `|flow(x, y) - target| <= newton_tol`.
    pub fn inverse_flow(&self, x: f64, target: f64) -> Result<f64> {
        let guess = (target - x) / self.impact.value(x);
        self.inverse_flow_from(x, target, guess)
    }

    /// `inverse_flow` with a caller-supplied initial guess (warm start for
    /// solvers that sweep nearby states).
    pub fn inverse_flow_from(&self, x: f64, target: f64, guess: f64) -> Result<f64> {
        self.check_in_box(x, "inverse_flow")?;
        self.check_in_box(target, "inverse_flow")?;
        if target == x {
            return Ok(0.0);
        }
        if let ImpactFunction::Constant { lambda } = &self.impact {
            return Ok((target - x) / lambda);
        }

        // y -> flow(x, y) is strictly increasing since f > 0; maintain a
        // sign bracket around the root and fall back to bisection whenever a
        // Newton step leaves it.
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        if target > x {
            lo = 0.0;
        } else {
            hi = 0.0;
        }
        let mut y = if guess.is_finite() && guess > lo && guess < hi {
            guess
        } else {
            (target - x) / self.impact.value(x)
        };
        let mut residual = f64::INFINITY;
        for iteration in 0..self.max_newton_iters {
            match self.flow(x, y) {
                Ok(xs) => {
                    let r = xs - target;
                    residual = r.abs();
                    if residual <= self.newton_tol {
                        return Ok(y);
                    }
                    if r > 0.0 {
                        hi = hi.min(y);
                    } else {
                        lo = lo.max(y);
                    }
                    let newton = y - r / self.impact.value(xs);
                    y = if newton > lo && newton < hi {
                        newton
                    } else if lo.is_finite() && hi.is_finite() {
                        0.5 * (lo + hi)
                    } else if hi.is_finite() {
                        // Root below every probe so far; march the open end.
                        hi - 2.0_f64.powi(iteration as i32 + 1) * (target - x).abs().max(1.0)
                            / self.impact.value(x)
                    } else {
                        lo + 2.0_f64.powi(iteration as i32 + 1) * (target - x).abs().max(1.0)
                            / self.impact.value(x)
                    };
                }
                Err(_) => {
                    // Overshot the box: the root lies strictly between the
                    // bracketed side and this probe.
                    if y > 0.0 {
                        hi = hi.min(y);
                    } else {
                        lo = lo.max(y);
                    }
                    if lo.is_finite() && hi.is_finite() {
                        y = 0.5 * (lo + hi);
                    } else {
                        return Err(self.price_box.escape(target, "inverse_flow"));
                    }
                }
            }
        }
        Err(Error::NonConvergence {
            what: "inverse_flow",
            iterations: self.max_newton_iters,
            residual,
        })
    }

    /// Jump map on the state `(x, y, v)`: an immediate block order of size
    /// `delta` moves the state to
    /// `(x(x, delta), y + delta, v + y delta_x(x, delta) + I(x, delta))`.
    pub fn round_trip_state(
        &self,
        x: f64,
        y: f64,
        v: f64,
        delta: f64,
    ) -> Result<(f64, f64, f64)> {
        let (xs, cost) = self.flow_and_cost(x, delta)?;
        Ok((xs, y + delta, v + y * (xs - x) + cost))
    }

    // ----- closed-form spatial derivatives along the flow -----
    //
    // With u = x(x, y):
    //   d/dx x(x, y)   = f(u) / f(x)
    //   d2/dx2 x(x, y) = f(u) (f'(u) - f'(x)) / f(x)^2
    //   d/dx I(x, y)   = (y f(u) - (u - x)) / f(x)
    //   d2/dx2 I(x, y) = ((y f'(u) - 1) f(u)/f(x) + 1 - f'(x) dI/dx) / f(x)
    // The first pair follows from f(x) d_x x = d_y x = f(x(x,y)); the second
    // from f(x) d_x I + delta_x = d_y I = y f(x(x,y)).

    /// `d/dx x(x, y)` given the already computed endpoint `u = flow(x, y)`.
    #[inline]
    pub fn flow_dx(&self, x: f64, u: f64) -> f64 {
        self.impact.value(u) / self.impact.value(x)
    }

    /// `d2/dx2 x(x, y)` given `u = flow(x, y)`.
    #[inline]
    pub fn flow_dxx(&self, x: f64, u: f64) -> f64 {
        let fx = self.impact.value(x);
        self.impact.value(u) * (self.impact.d1(u) - self.impact.d1(x)) / (fx * fx)
    }

    /// `d/dx I(x, y)` given `u = flow(x, y)`.
    #[inline]
    pub fn cost_dx(&self, x: f64, y: f64, u: f64) -> f64 {
        (y * self.impact.value(u) - (u - x)) / self.impact.value(x)
    }

    /// `d2/dx2 I(x, y)` given `u = flow(x, y)`.
    #[inline]
    pub fn cost_dxx(&self, x: f64, y: f64, u: f64) -> f64 {
        let fx = self.impact.value(x);
        let ux = self.impact.value(u) / fx;
        let q_x = y * self.impact.d1(u) * ux - ux + 1.0;
        (q_x - self.cost_dx(x, y, u) * self.impact.d1(x)) / fx
    }
}

/// One row of the identity verification suite.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub samples: usize,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Verification report for the flow/cost identities on random samples.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentitySuiteReport {
    pub checks: Vec<IdentityCheck>,
    pub max_flow_error_estimate: f64,
}

impl IdentitySuiteReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Verifies the structural identities of the flow and cost maps on random
/// `(x, y, iota)` samples:
///
/// 1. semigroup: `x(x(x, a), b) = x(x, a + b)`
/// 2. derivative: `d_y x(x, y) = f(x(x, y)) = f(x) d_x x(x, y)`
/// 3. cost composition:
///    `I(x(x(x,i), -y-i), y+i) - I(x(x,-y), y) = y delta_x(x,i) + I(x,i)`
/// 4. cost derivative: `d_y I = y f(x(x,y))` and `f d_x I + delta_x = d_y I`
/// 5. zero-cost round trip: jump `d` then `-d` restores `(x, y, v)`
/// 6. inverse round trip: `x^{-1}(x, x(x, y)) = y`
///
/// Finite differences use step `1e-4`, which keeps their truncation error
/// well below the default tolerances for the registry impact functions.
pub fn identity_suite(
    curve: &ImpactCurve,
    n_samples: usize,
    seed: u64,
    tol_identities: f64,
    tol_round_trip: f64,
) -> Result<IdentitySuiteReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let bx = curve.price_box();
    // Keep samples and their flows inside the box: the flow moves the price
    // by at most max(f) * |size|.
    let mut fmax: f64 = 0.0;
    for x in bx.samples(257) {
        fmax = fmax.max(curve.impact().value(x));
    }
    let span = 0.25 * bx.width() / fmax.max(1e-12);
    let size_range = span.min(2.0);
    let margin = 2.1 * size_range * fmax;

    let mut err = [0.0_f64; 8];
    let mut max_flow_est: f64 = 0.0;
    let h = 1e-4;

    for _ in 0..n_samples {
        let x = rng.gen_range(bx.lo + margin..bx.hi - margin);
        let y = rng.gen_range(-size_range..size_range);
        let iota = rng.gen_range(-size_range..size_range);
        let v = rng.gen_range(-10.0..10.0);

        // (1) semigroup
        let lhs = curve.flow(curve.flow(x, iota)?, y - iota)?;
        err[0] = err[0].max((lhs - curve.flow(x, y)?).abs());

        // (2) derivative identity
        let u = curve.flow(x, y)?;
        let dy_fd = (curve.flow(x, y + h)? - curve.flow(x, y - h)?) / (2.0 * h);
        err[1] = err[1].max((dy_fd - curve.impact().value(u)).abs());
        let dx_fd = (curve.flow(x + h, y)? - curve.flow(x - h, y)?) / (2.0 * h);
        err[2] = err[2].max((curve.impact().value(x) * dx_fd - curve.impact().value(u)).abs());

        // (3) cost composition
        let xi = curve.flow(x, iota)?;
        let lhs = curve.cost(curve.flow(xi, -y - iota)?, y + iota)?
            - curve.cost(curve.flow(x, -y)?, y)?;
        let rhs = y * curve.delta_x(x, iota)? + curve.cost(x, iota)?;
        err[3] = err[3].max((lhs - rhs).abs());

        // (4) cost derivative
        let dyi_fd = (curve.cost(x, y + h)? - curve.cost(x, y - h)?) / (2.0 * h);
        err[4] = err[4].max((dyi_fd - y * curve.impact().value(u)).abs());
        let dxi_fd = (curve.cost(x + h, y)? - curve.cost(x - h, y)?) / (2.0 * h);
        let lhs = curve.impact().value(x) * dxi_fd + curve.delta_x(x, y)?;
        err[5] = err[5].max((lhs - y * curve.impact().value(u)).abs());

        // (5) zero-cost round trip
        let (x1, y1, v1) = curve.round_trip_state(x, y, v, iota)?;
        let (x2, y2, v2) = curve.round_trip_state(x1, y1, v1, -iota)?;
        err[6] = err[6]
            .max((x2 - x).abs())
            .max((y2 - y).abs())
            .max((v2 - v).abs());

        // (6) inverse round trip
        let y_rec = curve.inverse_flow(x, u)?;
        err[7] = err[7].max((y_rec - y).abs());

        max_flow_est = max_flow_est.max(curve.flow_checked(x, y)?.error_estimate);
    }

    let names = [
        ("semigroup", tol_identities),
        ("derivative_dy", tol_identities),
        ("derivative_dx", tol_identities),
        ("cost_composition", tol_identities),
        ("cost_derivative_dy", tol_identities),
        ("cost_derivative_dx", tol_identities),
        ("zero_cost_round_trip", tol_round_trip),
        ("inverse_round_trip", tol_identities),
    ];
    let checks = names
        .iter()
        .zip(err.iter())
        .map(|(&(name, tol), &e)| IdentityCheck {
            name: name.to_string(),
            samples: n_samples,
            max_abs_error: e,
            tolerance: tol,
            pass: e <= tol,
        })
        .collect();

    Ok(IdentitySuiteReport {
        checks,
        max_flow_error_estimate: max_flow_est,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sin_curve() -> ImpactCurve {
        ImpactCurve::new(
            ImpactFunction::sinusoidal(0.5, 0.25, 1.0),
            PriceBox::new(-10.0, 10.0).unwrap(),
        )
    }

    fn const_curve() -> ImpactCurve {
        ImpactCurve::new(
            ImpactFunction::constant(0.5),
            PriceBox::new(50.0, 150.0).unwrap(),
        )
    }

    /// Test-only oracle: fixed-step RK4 for `x' = f(x)` at step ~1e-6,
    /// independent of the production integrator.
    fn oracle_flow(f: impl Fn(f64) -> f64, x0: f64, delta: f64, n: usize) -> f64 {
        let h = delta / n as f64;
        let mut x = x0;
        for _ in 0..n {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
        x
    }

    /// Test-only quadrature oracle for the liquidity cost built on the fine
    /// flow: trapezoid at step ~1e-6.
    fn oracle_cost(f: impl Fn(f64) -> f64 + Copy, x0: f64, z: f64, n: usize) -> f64 {
        let h = z / n as f64;
        let mut x = x0;
        let mut total = 0.0;
        let mut s = 0.0;
        for _ in 0..n {
            let g0 = s * f(x);
            let x1 = oracle_flow(f, x, h, 1);
            let s1 = s + h;
            total += 0.5 * h * (g0 + s1 * f(x1));
            x = x1;
            s = s1;
        }
        total
    }

    fn fsin(x: f64) -> f64 {
        0.5 + 0.25 * x.sin()
    }

    #[test]
    fn flow_constant_impact_matches_affine_map() {
        let curve = const_curve();
        assert_eq!(curve.flow(100.0, 2.0).unwrap(), 101.0);
        assert_eq!(curve.delta_x(100.0, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn flow_of_zero_order_is_identity() {
        let curve = sin_curve();
        for x in [-3.0, 0.0, 1.0, 7.5] {
            assert_eq!(curve.flow(x, 0.0).unwrap(), x);
            assert_eq!(curve.delta_x(x, 0.0).unwrap(), 0.0);
            assert_eq!(curve.cost(x, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn flow_matches_fine_step_rk4_oracle() {
        let curve = sin_curve();
        let got = curve.flow(1.0, 0.4).unwrap();
        let want = oracle_flow(fsin, 1.0, 0.4, 400_000);
        // Frozen from the oracle runs; guards the oracle itself.
        assert_abs_diff_eq!(want, 1.2907240369162, epsilon = 1e-12);
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn delta_x_negative_order_matches_oracle_and_sign() {
        let curve = sin_curve();
        let got = curve.delta_x(1.0, -0.4).unwrap();
        let want = oracle_flow(fsin, 1.0, -0.4, 400_000) - 1.0;
        assert_abs_diff_eq!(want, -0.27559060836194, epsilon = 1e-12);
        assert!(got < 0.0, "sign of delta_x must match sign of the order");
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn cost_constant_impact_is_half_square() {
        let curve = const_curve();
        assert_eq!(curve.cost(100.0, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn cost_matches_fine_step_quadrature_oracle() {
        let curve = sin_curve();
        let got = curve.cost(1.0, 0.4).unwrap();
        let want = oracle_cost(fsin, 1.0, 0.4, 400_000);
        assert_abs_diff_eq!(want, 0.058544610631, epsilon = 1e-11);
        assert_abs_diff_eq!(got, want, epsilon = 1e-9);

        let got_neg = curve.cost(1.0, -0.4).unwrap();
        let want_neg = oracle_cost(fsin, 1.0, -0.4, 400_000);
        assert_abs_diff_eq!(want_neg, 0.054520651268, epsilon = 1e-11);
        assert_abs_diff_eq!(got_neg, want_neg, epsilon = 1e-9);
        assert!(got_neg >= 0.0, "liquidity cost is nonnegative for sells");
    }

    #[test]
    fn inverse_flow_constant_impact() {
        let curve = const_curve();
        assert_abs_diff_eq!(curve.inverse_flow(100.0, 101.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_flow_identity_target() {
        let curve = sin_curve();
        assert_eq!(curve.inverse_flow(2.5, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn inverse_flow_round_trip() {
        let curve = sin_curve();
        let target = curve.flow(1.0, 0.4).unwrap();
        let y = curve.inverse_flow(1.0, target).unwrap();
        assert_abs_diff_eq!(y, 0.4, epsilon = 1e-8);
    }

    #[test]
    fn inverse_flow_far_target_converges() {
        let curve = sin_curve();
        let target = curve.flow(-8.0, 20.0).unwrap();
        let y = curve.inverse_flow(-8.0, target).unwrap();
        assert_abs_diff_eq!(curve.flow(-8.0, y).unwrap(), target, epsilon = 1e-9);
    }

    #[test]
    fn round_trip_state_constant_impact() {
        let curve = const_curve();
        let (x, y, v) = curve.round_trip_state(100.0, 0.0, 10.0, 2.0).unwrap();
        assert_eq!((x, y, v), (101.0, 2.0, 11.0));
    }

    #[test]
    fn round_trip_state_zero_order_is_identity() {
        let curve = sin_curve();
        let got = curve.round_trip_state(1.5, -0.7, 3.25, 0.0).unwrap();
        assert_eq!(got, (1.5, -0.7, 3.25));
    }

    #[test]
    fn jump_and_reverse_restore_state() {
        let curve = sin_curve();
        let (x0, y0, v0) = (0.8, 0.3, 5.0);
        let (x1, y1, v1) = curve.round_trip_state(x0, y0, v0, 0.9).unwrap();
        let (x2, y2, v2) = curve.round_trip_state(x1, y1, v1, -0.9).unwrap();
        assert_abs_diff_eq!(x2, x0, epsilon = 1e-9);
        assert_abs_diff_eq!(y2, y0, epsilon = 1e-12);
        assert_abs_diff_eq!(v2, v0, epsilon = 1e-9);
    }

    #[test]
    fn domain_escape_is_reported() {
        let curve = sin_curve();
        let err = curve.flow(9.5, 40.0).unwrap_err();
        assert!(matches!(err, Error::DomainEscape { .. }), "got {err:?}");
    }

    #[test]
    fn flow_checked_reports_tiny_error_estimate() {
        let curve = sin_curve();
        let eval = curve.flow_checked(1.0, 0.4).unwrap();
        assert!(eval.error_estimate < 1e-12, "{}", eval.error_estimate);
        assert_eq!(eval.value, curve.flow(1.0, 0.4).unwrap());
    }

    #[test]
    fn analytic_flow_derivatives_match_finite_differences() {
        let curve = sin_curve();
        let h = 1e-4;
        for (x, y) in [(0.3, 0.8), (-2.0, -1.1), (4.0, 0.25)] {
            let u = curve.flow(x, y).unwrap();
            let fd1 = (curve.flow(x + h, y).unwrap() - curve.flow(x - h, y).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(curve.flow_dx(x, u), fd1, epsilon = 1e-7);
            let fd2 = (curve.flow(x + h, y).unwrap() - 2.0 * u + curve.flow(x - h, y).unwrap())
                / (h * h);
            assert_abs_diff_eq!(curve.flow_dxx(x, u), fd2, epsilon = 1e-5);

            let fd1c =
                (curve.cost(x + h, y).unwrap() - curve.cost(x - h, y).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(curve.cost_dx(x, y, u), fd1c, epsilon = 1e-7);
            let fd2c = (curve.cost(x + h, y).unwrap() - 2.0 * curve.cost(x, y).unwrap()
                + curve.cost(x - h, y).unwrap())
                / (h * h);
            assert_abs_diff_eq!(curve.cost_dxx(x, y, u), fd2c, epsilon = 1e-5);
        }
    }

    #[test]
    fn custom_impact_uses_fd_fallback() {
        let f: super::ScalarFn = Arc::new(|x: f64| 0.4 + 0.1 * x.tanh());
        let impact = ImpactFunction::Custom {
            f,
            df: None,
            ddf: None,
            inf_bound: Some(0.3),
        };
        assert!(impact.uses_fd_derivatives());
        assert_abs_diff_eq!(impact.d1(0.5), 0.1 / 0.5_f64.cosh().powi(2), epsilon = 1e-8);
        assert_eq!(impact.declared_inf(), Some(0.3));
    }

    #[test]
    fn identity_suite_passes_for_both_registry_curves() {
        for curve in [sin_curve(), const_curve()] {
            let report = identity_suite(&curve, 200, 7, 1e-8, 1e-9).unwrap();
            for check in &report.checks {
                assert!(
                    check.pass,
                    "{} failed: {} > {}",
                    check.name, check.max_abs_error, check.tolerance
                );
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn flow_semigroup(x in -4.0..4.0_f64, a in -1.0..1.0_f64, b in -1.0..1.0_f64) {
                let curve = sin_curve();
                let two_hops = curve.flow(curve.flow(x, a).unwrap(), b).unwrap();
                let one_hop = curve.flow(x, a + b).unwrap();
                prop_assert!((two_hops - one_hop).abs() < 1e-8);
            }

            #[test]
            fn cost_is_nonnegative(x in -4.0..4.0_f64, z in -2.0..2.0_f64) {
                let curve = sin_curve();
                prop_assert!(curve.cost(x, z).unwrap() >= 0.0);
            }

            #[test]
            fn inverse_recovers_order_size(x in -4.0..4.0_f64, y in -1.5..1.5_f64) {
                let curve = sin_curve();
                let u = curve.flow(x, y).unwrap();
                let y_rec = curve.inverse_flow(x, u).unwrap();
                // |flow(x, y_rec) - flow(x, y)| <= newton_tol and f >= 0.25
                prop_assert!((y_rec - y).abs() < curve.newton_tol() / 0.25 + 1e-12);
            }

            #[test]
            fn round_trip_restores_state(x in -4.0..4.0_f64, y in -1.0..1.0_f64,
                                         v in -5.0..5.0_f64, d in -1.0..1.0_f64) {
                let curve = sin_curve();
                let (x1, y1, v1) = curve.round_trip_state(x, y, v, d).unwrap();
                let (x2, y2, v2) = curve.round_trip_state(x1, y1, v1, -d).unwrap();
                prop_assert!((x2 - x).abs() < 1e-9);
                prop_assert!((y2 - y).abs() < 1e-12);
                prop_assert!((v2 - v).abs() < 1e-9);
            }
        }
    }
}
