//! Splitting block orders into continuous trading on short windows.
//!
//! Each jump `(tau_j, delta_j)` of the signal is replaced by trading at the
//! constant rate `delta_j / epsilon` on `[tau_j, tau_j + epsilon]`. The state
//! then follows the continuous dynamics throughout, and as `epsilon -> 0`
//! its value at `T + epsilon` converges in mean square to the jump dynamics
//! at `T`, at rate `epsilon` for separated jumps. `splitting_convergence`
//! reproduces that rate at matched noise.

use crate::error::{Error, Result};
use crate::model::MarketModel;
use crate::path::{
    euler_step, simulate_with_jumps_path, Jump, MarketState, PathResult, TimeGrid, TradingSignal,
};
use crate::rebalance::{block_ranges, ConvergenceRow, ConvergenceTable};
use crate::stats;
use crate::rng;
use rayon::prelude::*;

/// Configuration of the splitting convergence experiment.
#[derive(Debug, Clone)]
pub struct SplitConfig {
    /// Decreasing window lengths (time units).
    pub epsilon_list: Vec<f64>,
    pub mc_paths: usize,
    pub seed: u64,
    /// Fine-grid steps resolving the smallest window; at least 32.
    pub steps_per_epsilon: usize,
}

impl SplitConfig {
    fn validate(&self, signal: &TradingSignal, horizon: f64) -> Result<()> {
        if self.epsilon_list.is_empty() {
            return Err(Error::invalid("epsilon_list must be nonempty"));
        }
        if self.epsilon_list.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid("epsilons must be positive"));
        }
        if self.epsilon_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("epsilon_list must be strictly decreasing"));
        }
        if self.steps_per_epsilon < 32 {
            return Err(Error::invalid(
                "the grid must resolve each window with at least 32 steps",
            ));
        }
        if self.mc_paths < 4 {
            return Err(Error::invalid("need at least 4 Monte Carlo paths"));
        }
        let eps_max = self.epsilon_list[0];
        check_separation(signal, eps_max)?;
        if let Some(j) = signal.jumps.last() {
            if j.time > horizon {
                return Err(Error::invalid("jump times must lie within the horizon"));
            }
        }
        Ok(())
    }
}

fn check_separation(signal: &TradingSignal, epsilon: f64) -> Result<()> {
    let sep = signal.min_jump_separation();
    if sep < epsilon {
        return Err(Error::invalid(format!(
            "jump separation {sep} is below the splitting window {epsilon}"
        )));
    }
    Ok(())
}

/// Trading rate from active splitting windows, averaged over one grid step.
#[inline]
fn ramp_rate(jumps: &[Jump], epsilon: f64, t_lo: f64, t_hi: f64) -> f64 {
    let mut rate = 0.0;
    for j in jumps {
        let overlap = (t_hi.min(j.time + epsilon) - t_lo.max(j.time)).max(0.0);
        if overlap > 0.0 {
            rate += j.size / epsilon * (overlap / (t_hi - t_lo));
        }
    }
    rate
}

/// Integrates the split dynamics: jumps become ramps at rate
/// `delta_j / epsilon`, superposed on the signal's `(a, b)` drift. The grid
/// is expected to extend past the horizon by `epsilon` when terminal values
/// are compared against the jump dynamics.
pub fn simulate_split(
    model: &MarketModel,
    signal: &TradingSignal,
    epsilon: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<PathResult> {
    simulate_split_path(
        model,
        signal,
        epsilon,
        grid,
        seed,
        0,
        MarketState::new(model.price_box.center(), signal.y0, 0.0),
    )
}

pub fn simulate_split_path(
    model: &MarketModel,
    signal: &TradingSignal,
    epsilon: f64,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
    initial: MarketState,
) -> Result<PathResult> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    check_separation(signal, epsilon)?;
    let dt = grid.dt();
    if epsilon < 2.0 * dt {
        return Err(Error::invalid(format!(
            "grid step {dt} does not resolve the splitting window {epsilon}"
        )));
    }
    let horizon = model.horizon;
    let increments = rng::brownian_increments(seed, path_index, grid.steps, dt);
    let mut state = initial;
    let mut states = Vec::with_capacity(grid.steps + 1);
    for i in 0..=grid.steps {
        states.push(state);
        if i < grid.steps {
            let t = grid.node(i);
            // Coefficients are time-homogeneous; controls extend past the
            // horizon by their terminal value.
            let t_eval = t.min(horizon);
            let a = signal.a.eval(t_eval, &state);
            let b = signal.b.eval(t_eval, &state);
            let ramp = ramp_rate(&signal.jumps, epsilon, t, t + dt);
            euler_step(model, &mut state, dt, increments[i], a, b + ramp)?;
        }
    }
    Ok(PathResult {
        grid: *grid,
        states,
        increments,
        jumps: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Estimates `E|Z^eps_{T+eps} - Z_T|^2` for each window length at matched
/// noise and fits the log-log slope against `epsilon` (the proven rate is 1
/// for separated jumps).
pub fn splitting_convergence(
    model: &MarketModel,
    signal: &TradingSignal,
    cfg: &SplitConfig,
) -> Result<ConvergenceTable> {
    let horizon = model.horizon;
    cfg.validate(signal, horizon)?;
    let eps_min = *cfg.epsilon_list.last().unwrap();
    let eps_max = cfg.epsilon_list[0];
    let dt = eps_min / cfg.steps_per_epsilon as f64;

    let steps_t = (horizon / dt).round();
    if (steps_t * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid(
            "the fine step derived from epsilon_list must divide the horizon; use dyadic windows",
        ));
    }
    let steps_t = steps_t as usize;
    let limit_grid = TimeGrid::new(0.0, horizon, steps_t)?;

    let mut cmp_steps = Vec::with_capacity(cfg.epsilon_list.len());
    for &eps in &cfg.epsilon_list {
        let k = ((horizon + eps) / dt).round() as usize;
        cmp_steps.push(k);
    }
    let _ = eps_max;

    let x0 = model.price_box.center();
    let ranges = block_ranges(cfg.mc_paths);
    let block_results: Vec<Result<Vec<f64>>> = ranges
        .par_iter()
        .map(|range| {
            let mut acc = vec![0.0; cfg.epsilon_list.len()];
            for path in range.clone() {
                let initial = MarketState::new(x0, signal.y0, 0.0);
                let limit =
                    simulate_with_jumps_path(model, signal, &limit_grid, cfg.seed, path, initial)?;
                let z_t = limit.terminal();
                for (k, &eps) in cfg.epsilon_list.iter().enumerate() {
                    let grid = TimeGrid::new(0.0, cmp_steps[k] as f64 * dt, cmp_steps[k])?;
                    let split = simulate_split_path(
                        model, signal, eps, &grid, cfg.seed, path, initial,
                    )?;
                    acc[k] += split.terminal().sq_distance(&z_t);
                }
            }
            Ok(acc)
        })
        .collect();

    let counts: Vec<usize> = ranges.iter().map(|r| (r.end - r.start) as usize).collect();
    let mut per_eps_blocks: Vec<Vec<f64>> = vec![Vec::new(); cfg.epsilon_list.len()];
    for block in block_results {
        let block = block?;
        for (k, sum) in block.into_iter().enumerate() {
            per_eps_blocks[k].push(sum);
        }
    }

    let mut rows = Vec::with_capacity(cfg.epsilon_list.len());
    for (k, &eps) in cfg.epsilon_list.iter().enumerate() {
        let (mse, se) = stats::mean_jackknife(&per_eps_blocks[k], &counts);
        rows.push(ConvergenceRow {
            param: eps,
            mse,
            std_err: se,
        });
    }
    let params: Vec<f64> = rows.iter().map(|r| r.param).collect();
    let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let fit = stats::loglog_fit(&params, &mses);

    Ok(ConvergenceTable {
        param_name: "epsilon",
        mse_name: "mse",
        rows,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::{ImpactCurve, ImpactFunction, PriceBox};
    use crate::model::{CashPayoff, Claim, DiffusionCoefficients, DriftFn, VolFn};
    use crate::path::simulate_continuous_path;
    use approx::assert_abs_diff_eq;

    fn model(impact: ImpactFunction, sigma: f64, floor: f64) -> MarketModel {
        MarketModel::new(
            DiffusionCoefficients::new(
                DriftFn::Zero,
                VolFn::Constant { value: sigma },
                10.0,
                floor,
            )
            .unwrap(),
            impact,
            Claim::cash_only(CashPayoff::Constant { value: 0.0 }),
            PriceBox::new(-10.0, 10.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_jumps_reduces_to_continuous_simulation_exactly() {
        let m = model(ImpactFunction::constant(0.4), 0.2, 1e-4);
        let grid = TimeGrid::new(0.0, 1.0, 256).unwrap();
        let signal = TradingSignal::constant(0.1, 0.3, 0.05, 10.0).unwrap();
        let split = simulate_split(&m, &signal, 0.125, &grid, 7).unwrap();
        let initial = MarketState::new(m.price_box.center(), 0.1, 0.0);
        let cont = simulate_continuous_path(&m, &signal, &grid, 7, 0, initial).unwrap();
        for (s, c) in split.states.iter().zip(&cont.states) {
            assert_eq!(s.x.to_bits(), c.x.to_bits());
            assert_eq!(s.y.to_bits(), c.y.to_bits());
            assert_eq!(s.v.to_bits(), c.v.to_bits());
        }
    }

    #[test]
    fn deterministic_split_converges_to_the_flow_map() {
        // sigma = mu = 0: the ramp is the impact-curve ODE reparametrized.
        let m = model(ImpactFunction::sinusoidal(0.5, 0.25, 1.0), 0.0, 0.0);
        let eps = 0.25;
        let delta = 0.6;
        let tau = 0.5;
        let signal = TradingSignal::constant(0.0, 0.0, 0.0, 10.0)
            .unwrap()
            .with_jumps(vec![Jump {
                time: tau,
                size: delta,
            }])
            .unwrap();
        let steps_in_ramp = 1 << 16;
        let dt = eps / steps_in_ramp as f64;
        let total = ((1.0 + eps) / dt).round() as usize;
        let grid = TimeGrid::new(0.0, total as f64 * dt, total).unwrap();
        let path = simulate_split(&m, &signal, eps, &grid, 0).unwrap();

        let x0 = m.price_box.center();
        let curve = ImpactCurve::new(m.impact.clone(), m.price_box);
        let want_x = curve.flow(x0, delta).unwrap();
        let end_node = grid.nearest_node(tau + eps);
        let got = path.states[end_node];
        assert_abs_diff_eq!(got.x, want_x, epsilon = 1e-6);
        assert_abs_diff_eq!(got.y, delta, epsilon = 1e-9);

        // Wealth increment over the window equals y dx + I(x, delta), here
        // with y = 0 before the ramp.
        let want_dv = curve.cost(x0, delta).unwrap();
        assert_abs_diff_eq!(got.v, want_dv, epsilon = 1e-5);
    }

    #[test]
    fn separation_violation_is_rejected() {
        let m = model(ImpactFunction::constant(0.4), 0.2, 1e-4);
        let signal = TradingSignal::constant(0.0, 0.0, 0.0, 10.0)
            .unwrap()
            .with_jumps(vec![
                Jump {
                    time: 0.4,
                    size: 1.0,
                },
                Jump {
                    time: 0.45,
                    size: 1.0,
                },
            ])
            .unwrap();
        let cfg = SplitConfig {
            epsilon_list: vec![0.125, 0.0625],
            mc_paths: 8,
            seed: 1,
            steps_per_epsilon: 32,
        };
        let err = splitting_convergence(&m, &signal, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn no_jump_error_sits_at_the_scheme_noise_floor() {
        let m = model(ImpactFunction::constant(0.3), 0.2, 1e-4);
        let signal = TradingSignal::constant(0.0, 0.5, 0.0, 10.0).unwrap();
        let cfg = SplitConfig {
            epsilon_list: vec![0.25, 0.125],
            mc_paths: 64,
            seed: 9,
            steps_per_epsilon: 32,
        };
        let table = splitting_convergence(&m, &signal, &cfg).unwrap();
        // Without jumps the only difference is the diffusion tail on
        // (T, T+eps], which is itself O(eps): the error stays small and
        // shrinks with the window.
        for row in &table.rows {
            assert!(row.mse.is_finite());
            assert!(row.mse < 0.15, "{row:?}");
        }
        assert!(table.rows[1].mse < table.rows[0].mse);
    }

    #[test]
    fn splitting_rate_is_near_one_for_a_single_jump() {
        let m = model(ImpactFunction::constant(0.3), 0.2, 1e-4);
        let signal = TradingSignal::constant(0.0, 0.5, 0.0, 10.0)
            .unwrap()
            .with_jumps(vec![Jump {
                time: 0.5,
                size: 1.0,
            }])
            .unwrap();
        let cfg = SplitConfig {
            epsilon_list: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            mc_paths: 2000,
            seed: 31,
            steps_per_epsilon: 32,
        };
        let table = splitting_convergence(&m, &signal, &cfg).unwrap();
        assert!(
            table.fit.slope > 0.6 && table.fit.slope < 1.4,
            "slope {} rows {:?}",
            table.fit.slope,
            table.rows
        );
        for pair in table.rows.windows(2) {
            assert!(
                pair[1].mse < pair[0].mse * 1.1,
                "matched-noise error should decrease with epsilon: {pair:?}"
            );
        }
    }
}
