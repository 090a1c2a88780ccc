//! Market model: diffusion coefficients, impact function, claim payoff, and
//! numerical validation of the standing assumptions.
//!
//! Coefficients, impact functions and claims are closed registries so that an
//! experiment is reproducible from its config alone.

use crate::error::{Error, Result};
use crate::impact::{ImpactCurve, ImpactFunction, PriceBox};

/// Drift coefficient `mu` of the unaffected price diffusion.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFn {
    Zero,
    Constant { value: f64 },
}

impl DriftFn {
    #[inline]
    pub fn value(&self, _x: f64) -> f64 {
        match self {
            DriftFn::Zero => 0.0,
            DriftFn::Constant { value } => *value,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftFn::Zero => "zero",
            DriftFn::Constant { .. } => "constant",
        }
    }
}

/// Volatility coefficient `sigma` of the unaffected price diffusion.
#[derive(Debug, Clone, PartialEq)]
pub enum VolFn {
    Constant {
        value: f64,
    },
    /// `sigma(x) = base + amplitude * tanh(x / scale)`
    Tanh {
        base: f64,
        amplitude: f64,
        scale: f64,
    },
}

impl VolFn {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            VolFn::Constant { value } => *value,
            VolFn::Tanh {
                base,
                amplitude,
                scale,
            } => base + amplitude * (x / scale).tanh(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VolFn::Constant { .. } => "constant",
            VolFn::Tanh { .. } => "tanh",
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VolFn::Constant { .. })
    }
}

/// Diffusion coefficients plus the bounds they are checked against.
#[derive(Debug, Clone)]
pub struct DiffusionCoefficients {
    pub mu: DriftFn,
    pub sigma: VolFn,
    pub lipschitz_bound: f64,
    pub sigma_floor: f64,
}

impl DiffusionCoefficients {
    pub fn new(mu: DriftFn, sigma: VolFn, lipschitz_bound: f64, sigma_floor: f64) -> Result<Self> {
        if !(lipschitz_bound > 0.0) {
            return Err(Error::invalid("lipschitz_bound must be positive"));
        }
        // floor 0 admits degenerate deterministic dynamics used by the
        // splitting and hedging exactness checks; pricing requires a strictly
        // positive floor and re-checks it.
        if !(sigma_floor >= 0.0) {
            return Err(Error::invalid("sigma_floor must be nonnegative"));
        }
        Ok(DiffusionCoefficients {
            mu,
            sigma,
            lipschitz_bound,
            sigma_floor,
        })
    }
}

/// Cash-settlement payoff `g0`.
#[derive(Debug, Clone, PartialEq)]
pub enum CashPayoff {
    Constant {
        value: f64,
    },
    /// `g0(x) = amplitude * cos(wavenumber * x)`
    Cosine {
        amplitude: f64,
        wavenumber: f64,
    },
    /// Softplus-smoothed call spread between strikes `k_low < k_high`.
    CallSpreadSmoothed {
        k_low: f64,
        k_high: f64,
        smoothing: f64,
    },
    /// `g0(x) = cap * tanh((x - center)^2 / cap)`: a quadratic with a smooth cap.
    QuadraticCapped {
        center: f64,
        cap: f64,
    },
}

fn softplus(z: f64, s: f64) -> f64 {
    // s * ln(1 + exp(z/s)) without overflow for large z
    let u = z / s;
    if u > 30.0 {
        z + s * (-u).exp().ln_1p()
    } else {
        s * u.exp().ln_1p()
    }
}

impl CashPayoff {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            CashPayoff::Constant { value } => *value,
            CashPayoff::Cosine {
                amplitude,
                wavenumber,
            } => amplitude * (wavenumber * x).cos(),
            CashPayoff::CallSpreadSmoothed {
                k_low,
                k_high,
                smoothing,
            } => softplus(x - k_low, *smoothing) - softplus(x - k_high, *smoothing),
            CashPayoff::QuadraticCapped { center, cap } => {
                let q = (x - center) * (x - center);
                cap * (q / cap).tanh()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CashPayoff::Constant { .. } => "constant",
            CashPayoff::Cosine { .. } => "cosine",
            CashPayoff::CallSpreadSmoothed { .. } => "call_spread_smoothed",
            CashPayoff::QuadraticCapped { .. } => "quadratic_capped",
        }
    }
}

/// Delivery payoff `g1`: number of shares to be delivered at maturity.
#[derive(Debug, Clone, PartialEq)]
pub enum DeliveryPayoff {
    Zero,
    Constant {
        shares: f64,
    },
    /// `g1(x) = shares * tanh(x / scale)`: a bounded, genuinely price-dependent
    /// delivery used to exercise the general terminal fixed point.
    Tanh {
        shares: f64,
        scale: f64,
    },
}

/// Structural tag used by the terminal-condition solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryKind {
    Zero,
    Constant,
    General,
}

impl DeliveryPayoff {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            DeliveryPayoff::Zero => 0.0,
            DeliveryPayoff::Constant { shares } => *shares,
            DeliveryPayoff::Tanh { shares, scale } => shares * (x / scale).tanh(),
        }
    }

    pub fn kind(&self) -> DeliveryKind {
        match self {
            DeliveryPayoff::Zero => DeliveryKind::Zero,
            DeliveryPayoff::Constant { .. } => DeliveryKind::Constant,
            DeliveryPayoff::Tanh { .. } => DeliveryKind::General,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeliveryPayoff::Zero => "zero",
            DeliveryPayoff::Constant { .. } => "constant_shares",
            DeliveryPayoff::Tanh { .. } => "tanh_shares",
        }
    }
}

/// European claim `(g0, g1)`: cash settlement plus share delivery.
#[derive(Debug, Clone)]
pub struct Claim {
    pub g0: CashPayoff,
    pub g1: DeliveryPayoff,
}

impl Claim {
    pub fn cash_only(g0: CashPayoff) -> Self {
        Claim {
            g0,
            g1: DeliveryPayoff::Zero,
        }
    }
}

/// The full market description used by every experiment.
#[derive(Debug, Clone)]
pub struct MarketModel {
    pub coefficients: DiffusionCoefficients,
    pub impact: ImpactFunction,
    pub claim: Claim,
    pub price_box: PriceBox,
    pub horizon: f64,
}

pub const DEFAULT_VALIDATION_SAMPLES: usize = 10_000;

impl MarketModel {
    /// Builds a model, refusing hard assumption failures (non-positive impact
    /// slope or volatility below its floor anywhere on the box).
    pub fn new(
        coefficients: DiffusionCoefficients,
        impact: ImpactFunction,
        claim: Claim,
        price_box: PriceBox,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let model = MarketModel {
            coefficients,
            impact,
            claim,
            price_box,
            horizon,
        };
        let report = model.validate_with_samples(DEFAULT_VALIDATION_SAMPLES);
        for check in &report.checks {
            if check.hard && !check.passed {
                return Err(Error::ModelAssumption(format!(
                    "{}: {}",
                    check.name, check.detail
                )));
            }
        }
        Ok(model)
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        self.coefficients.mu.value(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.coefficients.sigma.value(x)
    }

    /// Impact curve over this model's price box with default numerics.
    pub fn curve(&self) -> ImpactCurve {
        ImpactCurve::new(self.impact.clone(), self.price_box)
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with_samples(DEFAULT_VALIDATION_SAMPLES)
    }

    /// Checks the standing assumptions by dense sampling on the price box.
    pub fn validate_with_samples(&self, samples: usize) -> ValidationReport {
        let n = samples.max(16);
        let bx = self.price_box;
        let mut checks = Vec::new();

        // f > 0 (and above the declared bound when one is stated)
        let mut min_f = f64::INFINITY;
        let mut min_f_at = bx.lo;
        let mut max_f = f64::NEG_INFINITY;
        let mut max_df: f64 = 0.0;
        let mut max_ddf: f64 = 0.0;
        for x in bx.samples(n) {
            let v = self.impact.value(x);
            if v < min_f {
                min_f = v;
                min_f_at = x;
            }
            max_f = max_f.max(v);
            max_df = max_df.max(self.impact.d1(x).abs());
            max_ddf = max_ddf.max(self.impact.d2(x).abs());
        }
        let positive = min_f > 0.0;
        checks.push(AssumptionCheck {
            name: "impact_positive".into(),
            passed: positive,
            hard: true,
            witness: (!positive).then_some(min_f_at),
            detail: format!("min f = {min_f:.6e} at x = {min_f_at:.6}"),
        });
        if let Some(bound) = self.impact.declared_inf() {
            let ok = min_f >= bound - 1e-12;
            checks.push(AssumptionCheck {
                name: "impact_declared_inf".into(),
                passed: ok,
                hard: false,
                witness: (!ok).then_some(min_f_at),
                detail: format!("declared inf f = {bound:.6e}, sampled min = {min_f:.6e}"),
            });
        }
        let bounded = max_f.is_finite() && max_df.is_finite() && max_ddf.is_finite();
        checks.push(AssumptionCheck {
            name: "impact_c2_bounded".into(),
            passed: bounded,
            hard: false,
            witness: None,
            detail: format!(
                "max |f| = {max_f:.4e}, max |f'| = {max_df:.4e}, max |f''| = {max_ddf:.4e}{}",
                if self.impact.uses_fd_derivatives() {
                    " (finite-difference derivatives)"
                } else {
                    ""
                }
            ),
        });

        // sigma >= sigma_floor > 0 (bounded inverse)
        let mut min_sigma = f64::INFINITY;
        let mut min_sigma_at = bx.lo;
        for x in bx.samples(n) {
            let s = self.sigma(x);
            if s < min_sigma {
                min_sigma = s;
                min_sigma_at = x;
            }
        }
        let floor_ok = min_sigma >= self.coefficients.sigma_floor;
        checks.push(AssumptionCheck {
            name: "sigma_floor".into(),
            passed: floor_ok,
            hard: true,
            witness: (!floor_ok).then_some(min_sigma_at),
            detail: format!(
                "min sigma = {min_sigma:.6e} vs floor {:.6e}",
                self.coefficients.sigma_floor
            ),
        });
        // bounded sigma^{-1} needs strict positivity; degenerate sigma = 0 is
        // tolerated for deterministic checks but flagged here
        checks.push(AssumptionCheck {
            name: "sigma_positive".into(),
            passed: min_sigma > 0.0,
            hard: false,
            witness: (min_sigma <= 0.0).then_some(min_sigma_at),
            detail: format!("min sigma = {min_sigma:.6e}"),
        });

        // Lipschitz estimates for mu and sigma from difference quotients
        let h = bx.width() / (n - 1) as f64;
        let mut lip_mu: f64 = 0.0;
        let mut lip_sigma: f64 = 0.0;
        let mut lip_at = bx.lo;
        let xs: Vec<f64> = bx.samples(n).collect();
        for pair in xs.windows(2) {
            let qm = (self.mu(pair[1]) - self.mu(pair[0])).abs() / h;
            let qs = (self.sigma(pair[1]) - self.sigma(pair[0])).abs() / h;
            if qm > lip_mu {
                lip_mu = qm;
            }
            if qs > lip_sigma {
                lip_sigma = qs;
                lip_at = pair[0];
            }
        }
        let lip_ok = lip_mu <= self.coefficients.lipschitz_bound
            && lip_sigma <= self.coefficients.lipschitz_bound;
        checks.push(AssumptionCheck {
            name: "mu_sigma_lipschitz".into(),
            passed: lip_ok,
            hard: false,
            witness: (!lip_ok).then_some(lip_at),
            detail: format!(
                "sampled Lipschitz estimates: mu {lip_mu:.4e}, sigma {lip_sigma:.4e}, bound {:.4e}",
                self.coefficients.lipschitz_bound
            ),
        });

        // g0 continuity: the largest adjacent jump must shrink when the
        // sampling is refined (a genuine jump stays put).
        let jump = |m: usize| -> f64 {
            let pts: Vec<f64> = bx.samples(m).collect();
            pts.windows(2)
                .map(|p| (self.claim.g0.value(p[1]) - self.claim.g0.value(p[0])).abs())
                .fold(0.0, f64::max)
        };
        let coarse = jump(n / 2);
        let fine = jump(n);
        let cont_ok = fine <= 0.75 * coarse || fine < 1e-12;
        checks.push(AssumptionCheck {
            name: "g0_continuity".into(),
            passed: cont_ok,
            hard: false,
            witness: None,
            detail: format!("max adjacent jump {coarse:.4e} -> {fine:.4e} under refinement"),
        });

        ValidationReport { checks }
    }

    /// Smallest sampled impact slope on the box; the pricing PDE requires it
    /// strictly positive.
    pub fn sampled_inf_f(&self, samples: usize) -> f64 {
        self.price_box
            .samples(samples.max(16))
            .map(|x| self.impact.value(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Hard failures refuse model construction.
    pub hard: bool,
    /// Sample point witnessing a failure, when there is one.
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One registry entry: a named family plus its parameter schema.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegistryEntry {
    pub section: &'static str,
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub description: &'static str,
}

/// Static description of everything the config schema accepts by name.
pub fn registry() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            section: "impact",
            name: "constant",
            params: &["lambda"],
            description: "f(x) = lambda",
        },
        RegistryEntry {
            section: "impact",
            name: "affine_bounded",
            params: &["intercept", "slope"],
            description: "f(x) = intercept + slope x (positive on the box)",
        },
        RegistryEntry {
            section: "impact",
            name: "sinusoidal_perturbed",
            params: &["base", "amplitude", "wavenumber"],
            description: "f(x) = base + amplitude sin(wavenumber x)",
        },
        RegistryEntry {
            section: "drift",
            name: "zero",
            params: &[],
            description: "mu(x) = 0",
        },
        RegistryEntry {
            section: "drift",
            name: "constant",
            params: &["value"],
            description: "mu(x) = value",
        },
        RegistryEntry {
            section: "volatility",
            name: "constant",
            params: &["value"],
            description: "sigma(x) = value",
        },
        RegistryEntry {
            section: "volatility",
            name: "tanh",
            params: &["base", "amplitude", "scale"],
            description: "sigma(x) = base + amplitude tanh(x / scale)",
        },
        RegistryEntry {
            section: "cash_payoff",
            name: "constant",
            params: &["value"],
            description: "g0(x) = value",
        },
        RegistryEntry {
            section: "cash_payoff",
            name: "cosine",
            params: &["amplitude", "wavenumber"],
            description: "g0(x) = amplitude cos(wavenumber x)",
        },
        RegistryEntry {
            section: "cash_payoff",
            name: "call_spread_smoothed",
            params: &["k_low", "k_high", "smoothing"],
            description: "softplus-smoothed call spread",
        },
        RegistryEntry {
            section: "cash_payoff",
            name: "quadratic_capped",
            params: &["center", "cap"],
            description: "g0(x) = cap tanh((x - center)^2 / cap)",
        },
        RegistryEntry {
            section: "delivery",
            name: "zero",
            params: &[],
            description: "g1(x) = 0 (cash settlement only)",
        },
        RegistryEntry {
            section: "delivery",
            name: "constant_shares",
            params: &["shares"],
            description: "g1(x) = shares",
        },
        RegistryEntry {
            section: "delivery",
            name: "tanh_shares",
            params: &["shares", "scale"],
            description: "g1(x) = shares tanh(x / scale)",
        },
    ]
}
