//! Monte Carlo engine for the controlled dealer.
//!
//! State per path: impacted mid `s` (bp, relative to the start), inventory
//! `q`, impact state `x` and cash. Each step of length `dt`:
//!
//! 1. controls are read at the current `(q, x)`;
//! 2. the mid diffuses, `s += σ sqrt(dt) Z`;
//! 3. hedging at speed `v` moves `x` by `(-βx + kv) dt`, the mid by the same
//!    amount, and fills `v dt` at the moved mid with cost `L(v) dt`;
//! 4. each tier and side trades at most once, with probability `λ(δ) dt`.
//!
//! P&L is `cash + q s`, i.e. marked to the impacted mid.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path index)`
//! and consumes the same number of draws per step whatever the policy does,
//! so two policies run with one seed share their random numbers and results
//! are independent of the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::{hedge_cost, ClosedFormCoeffs, Side};
use crate::hjb::{solve_ac, solve_transient, ControlField, ControlSample, GridSpec, HjbError, SolveReport};
use crate::intensity::IntensityCurve;
use crate::params::{Horizon, ModelParams};

/// Largest tolerated share of control lookups that fall outside the grid.
pub const MAX_CLAMP_FRACTION: f64 = 1e-3;
/// Upper bound on `Σ 2λ0 dt` for the one-arrival-per-step approximation.
pub const MAX_ARRIVAL_PROBABILITY: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("at least 1 path is required")]
    NoPaths,
    #[error("simulation step {dt:e} day too large: total arrival probability per step {prob:.3} >= {max}")]
    StepTooLarge { dt: f64, prob: f64, max: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("shock of {q0} M cannot be booked: {reason}")]
    BadShock { q0: f64, reason: String },
    #[error("{clamped} of {total} control lookups left the control grid (limit {limit})")]
    GridExit { clamped: u64, total: u64, limit: f64 },
    #[error("policy quotes {policy} tiers but the model has {model}")]
    TierMismatch { policy: usize, model: usize },
    #[error(transparent)]
    Solver(#[from] HjbError),
}

/// Anything that maps a state to quotes and a hedge speed.
pub trait Policy: Sync {
    fn n_tiers(&self) -> usize;

    /// Fill `out` with controls at `(q, x)`; returns whether the state was
    /// clamped into the policy's domain.
    fn controls(&self, q: f64, x: f64, out: &mut ControlSample) -> bool;

    /// Hard inventory limit: client trades that would cross it are refused.
    fn inventory_limit(&self) -> f64;
}

impl Policy for ControlField {
    fn n_tiers(&self) -> usize {
        self.sizes.len()
    }

    fn controls(&self, q: f64, x: f64, out: &mut ControlSample) -> bool {
        self.sample(q, x, out)
    }

    fn inventory_limit(&self) -> f64 {
        self.grid.q.last().copied().unwrap_or(0.0)
    }
}

/// Approximate closed-form quotes and speed.
#[derive(Debug, Clone)]
pub struct ClosedFormPolicy {
    pub coeffs: ClosedFormCoeffs,
    pub curves: Vec<IntensityCurve>,
    pub params: ModelParams,
    pub limit: f64,
}

impl ClosedFormPolicy {
    pub fn new(params: &ModelParams, curves: &[IntensityCurve]) -> Self {
        Self {
            coeffs: ClosedFormCoeffs::new(params, curves),
            curves: curves.to_vec(),
            params: params.clone(),
            limit: params.solver.q_max,
        }
    }
}

impl Policy for ClosedFormPolicy {
    fn n_tiers(&self) -> usize {
        self.curves.len()
    }

    fn controls(&self, q: f64, x: f64, out: &mut ControlSample) -> bool {
        out.bid.clear();
        out.ask.clear();
        for c in &self.curves {
            out.bid.push(self.coeffs.approx_quote(c, q, x, Side::Bid));
            out.ask.push(self.coeffs.approx_quote(c, q, x, Side::Ask));
        }
        out.p_exec = self.coeffs.p_exec(self.params.k, q, x);
        out.speed = self.coeffs.approx_speed(&self.params, q, x).unwrap_or(0.0);
        false
    }

    fn inventory_limit(&self) -> f64 {
        self.limit
    }
}

/// Fixed quotes and speed everywhere; mainly for checks.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    pub speed: f64,
    pub limit: f64,
}

impl Policy for ConstantPolicy {
    fn n_tiers(&self) -> usize {
        self.bid.len()
    }

    fn controls(&self, _q: f64, _x: f64, out: &mut ControlSample) -> bool {
        out.bid.clone_from(&self.bid);
        out.ask.clone_from(&self.ask);
        out.speed = self.speed;
        out.p_exec = 0.0;
        false
    }

    fn inventory_limit(&self) -> f64 {
        self.limit
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Mid-price including impact, bp.
    pub s: f64,
    /// Inventory, M.
    pub q: f64,
    /// Impact state, bp.
    pub x: f64,
    /// bp·M
    pub cash: f64,
    pub t: f64,
}

impl SimState {
    pub fn pnl(&self) -> f64 {
        self.cash + self.q * self.s
    }
}

/// Running decomposition of P&L into its sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PnlLedger {
    /// `Σ δ Δ` over client trades.
    pub spread: f64,
    /// `Σ q ds` with `q` before each move.
    pub inventory: f64,
    /// `∫ L(v) dt`
    pub hedge_cost: f64,
}

impl PnlLedger {
    pub fn total(&self) -> f64 {
        self.spread + self.inventory - self.hedge_cost
    }
}

/// Book a client trade of `q0` against the dealer's quotes at `(0, 0)`.
///
/// A positive `q0` is a client sell filled at the bid. Sizes that are not
/// on the ladder are split greedily into ladder trades.
pub fn book_shock(state: SimState, q0: f64, policy: &dyn Policy, sizes: &[f64]) -> Result<SimState, SimError> {
    let (state, _) = book_shock_with_ledger(state, q0, policy, sizes)?;
    Ok(state)
}

fn book_shock_with_ledger(
    mut state: SimState,
    q0: f64,
    policy: &dyn Policy,
    sizes: &[f64],
) -> Result<(SimState, f64), SimError> {
    if q0 == 0.0 {
        return Ok((state, 0.0));
    }
    if q0.abs() > policy.inventory_limit() {
        return Err(SimError::BadShock {
            q0,
            reason: format!("exceeds the inventory limit {}", policy.inventory_limit()),
        });
    }
    let side = if q0 > 0.0 { Side::Bid } else { Side::Ask };
    let mut sample = ControlSample::default();
    policy.controls(0.0, 0.0, &mut sample);
    let quotes = match side {
        Side::Bid => &sample.bid,
        Side::Ask => &sample.ask,
    };
    let mut remaining = q0.abs();
    let mut captured = 0.0;
    for (n, &size) in sizes.iter().enumerate().rev() {
        while remaining >= size * (1.0 - 1e-12) {
            let delta = quotes[n];
            let signed = side.sign() * size;
            state.q += signed;
            state.cash -= signed * state.s - size * delta;
            captured += size * delta;
            remaining -= size;
        }
    }
    if remaining > 1e-9 * q0.abs().max(1.0) {
        return Err(SimError::BadShock {
            q0,
            reason: "not decomposable into ladder sizes".into(),
        });
    }
    Ok((state, captured))
}

/// Hedge at speed `v` for `dt`: move the impact state and the mid, then fill
/// at the moved mid and pay `L(v) dt`. Diffusion is applied separately.
pub fn accrue_hedge(mut state: SimState, v: f64, dt: f64, params: &ModelParams) -> SimState {
    let dx = (-params.beta * state.x + params.k * v) * dt;
    state.x += dx;
    state.s += dx;
    state.q += v * dt;
    state.cash -= v * state.s * dt + hedge_cost(v, params.psi, params.eta) * dt;
    state
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Initial client trade, M (positive: dealer buys).
    pub q0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub output_points: usize,
}

impl SimConfig {
    /// From the config's `[simulation]` section; an automatic horizon is ten
    /// relaxation times.
    pub fn from_params(params: &ModelParams, curves: &[IntensityCurve]) -> Self {
        let sim = &params.simulation;
        let horizon = match sim.horizon {
            Horizon::Days(h) => h,
            Horizon::Auto => {
                let omega = ClosedFormCoeffs::new(params, curves).omega;
                if omega > 0.0 {
                    10.0 / omega
                } else {
                    0.01
                }
            }
        };
        Self {
            n_paths: sim.paths,
            q0: sim.shock,
            horizon,
            dt: sim.dt,
            seed: sim.seed,
            output_points: sim.output_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Series {
    Pnl,
    Position,
    Speed,
    Impact,
    AbsImpact,
}

impl Series {
    pub const ALL: [Series; 5] = [
        Series::Pnl,
        Series::Position,
        Series::Speed,
        Series::Impact,
        Series::AbsImpact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Series::Pnl => "pnl",
            Series::Position => "position",
            Series::Speed => "speed",
            Series::Impact => "impact",
            Series::AbsImpact => "abs_impact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub series: Series,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Quantiles at 5, 25, 50, 75, 95 percent, one array per time.
    pub quantiles: Vec<[f64; 5]>,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub times: Vec<f64>,
    pub series: Vec<SeriesStats>,
    pub n_paths: usize,
    pub seed: u64,
    pub clamped_lookups: u64,
    pub total_lookups: u64,
}

impl PathStats {
    pub fn get(&self, series: Series) -> &SeriesStats {
        self.series.iter().find(|s| s.series == series).expect("all series are recorded")
    }
}

/// Result of a batch of paths.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub stats: PathStats,
    pub terminal_pnl: Vec<f64>,
    /// Client trades per tier, `[bid fills, ask fills]`, over all paths.
    pub trade_counts: Vec<[u64; 2]>,
}

/// One path in full detail, for accounting checks.
#[derive(Debug, Clone)]
pub struct PathTrace {
    pub times: Vec<f64>,
    pub states: Vec<SimState>,
    pub ledgers: Vec<PnlLedger>,
    pub speeds: Vec<f64>,
}

struct PathResult {
    /// `[pnl, q, v, x]` per output time.
    samples: Vec<[f64; 4]>,
    trades: Vec<[u64; 2]>,
    clamped: u64,
    lookups: u64,
    trace: Option<PathTrace>,
}

struct Schedule {
    steps: usize,
    every: usize,
    dt: f64,
}

fn schedule(cfg: &SimConfig) -> Schedule {
    let raw = (cfg.horizon / cfg.dt).ceil().max(1.0) as usize;
    let points = cfg.output_points.max(1);
    let every = raw.div_ceil(points).max(1);
    let steps = every * points;
    Schedule {
        steps,
        every,
        dt: cfg.horizon / steps as f64,
    }
}

fn check_inputs(policy: &dyn Policy, curves: &[IntensityCurve], cfg: &SimConfig) -> Result<Schedule, SimError> {
    if cfg.n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    if !(cfg.horizon > 0.0) {
        return Err(SimError::BadHorizon(cfg.horizon));
    }
    if policy.n_tiers() != curves.len() {
        return Err(SimError::TierMismatch {
            policy: policy.n_tiers(),
            model: curves.len(),
        });
    }
    let sched = schedule(cfg);
    let prob: f64 = curves.iter().map(|c| 2.0 * c.lambda0).sum::<f64>() * sched.dt;
    if prob >= MAX_ARRIVAL_PROBABILITY {
        return Err(SimError::StepTooLarge {
            dt: sched.dt,
            prob,
            max: MAX_ARRIVAL_PROBABILITY,
        });
    }
    Ok(sched)
}

fn run_path(
    policy: &dyn Policy,
    params: &ModelParams,
    curves: &[IntensityCurve],
    cfg: &SimConfig,
    sched: &Schedule,
    path: u64,
    detailed: bool,
) -> Result<PathResult, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path);
    let sizes: Vec<f64> = curves.iter().map(|c| c.tier_size).collect();
    let limit = policy.inventory_limit();
    let sqrt_dt = sched.dt.sqrt();
    let n_tiers = curves.len();

    let (mut state, shock_spread) = book_shock_with_ledger(SimState::default(), cfg.q0, policy, &sizes)?;
    let mut ledger = PnlLedger {
        spread: shock_spread,
        ..PnlLedger::default()
    };
    let mut sample = ControlSample::default();
    let mut uniforms = vec![0.0; 2 * n_tiers];
    let mut trades = vec![[0u64; 2]; n_tiers];
    let mut samples = Vec::with_capacity(sched.steps / sched.every + 1);
    let mut trace = detailed.then(|| PathTrace {
        times: Vec::new(),
        states: Vec::new(),
        ledgers: Vec::new(),
        speeds: Vec::new(),
    });
    let mut clamped = 0u64;
    let mut lookups = 0u64;

    for step in 0..=sched.steps {
        lookups += 1;
        if policy.controls(state.q, state.x, &mut sample) {
            clamped += 1;
        }
        let v = sample.speed;
        if step % sched.every == 0 {
            samples.push([state.pnl(), state.q, v, state.x]);
        }
        if let Some(tr) = trace.as_mut() {
            tr.times.push(state.t);
            tr.states.push(state);
            tr.ledgers.push(ledger);
            tr.speeds.push(v);
        }
        if step == sched.steps {
            break;
        }

        // Fixed draw count per step keeps streams aligned across policies.
        let z: f64 = rng.sample(StandardNormal);
        for u in uniforms.iter_mut() {
            *u = rng.random::<f64>();
        }

        let s_before = state.s;
        let q_before = state.q;
        state.s += params.sigma * sqrt_dt * z;
        state = accrue_hedge(state, v, sched.dt, params);
        ledger.inventory += q_before * (state.s - s_before);
        ledger.hedge_cost += hedge_cost(v, params.psi, params.eta) * sched.dt;

        for (n, curve) in curves.iter().enumerate() {
            let size = curve.tier_size;
            let bid = sample.bid[n];
            if uniforms[2 * n] < curve.intensity(bid) * sched.dt && state.q + size <= limit + 1e-9 {
                state.q += size;
                state.cash -= size * (state.s - bid);
                ledger.spread += size * bid;
                trades[n][0] += 1;
            }
            let ask = sample.ask[n];
            if uniforms[2 * n + 1] < curve.intensity(ask) * sched.dt && state.q - size >= -limit - 1e-9 {
                state.q -= size;
                state.cash += size * (state.s + ask);
                ledger.spread += size * ask;
                trades[n][1] += 1;
            }
        }
        state.t += sched.dt;
    }

    Ok(PathResult {
        samples,
        trades,
        clamped,
        lookups,
        trace,
    })
}

/// Simulate one path and return its full trajectory and P&L ledger.
pub fn trace_path(
    policy: &dyn Policy,
    params: &ModelParams,
    curves: &[IntensityCurve],
    cfg: &SimConfig,
    path: u64,
) -> Result<PathTrace, SimError> {
    let sched = check_inputs(policy, curves, cfg)?;
    let result = run_path(policy, params, curves, cfg, &sched, path, true)?;
    Ok(result.trace.expect("detailed run records a trace"))
}

/// Simulate `n_paths` independent paths and aggregate them.
pub fn simulate_paths<P: Policy>(
    policy: &P,
    params: &ModelParams,
    curves: &[IntensityCurve],
    cfg: &SimConfig,
) -> Result<SimOutcome, SimError> {
    let sched = check_inputs(policy, curves, cfg)?;
    let results: Vec<PathResult> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path| run_path(policy, params, curves, cfg, &sched, path, false))
        .collect::<Result<_, _>>()?;

    let clamped: u64 = results.iter().map(|r| r.clamped).sum();
    let lookups: u64 = results.iter().map(|r| r.lookups).sum();
    if clamped as f64 > MAX_CLAMP_FRACTION * lookups as f64 {
        return Err(SimError::GridExit {
            clamped,
            total: lookups,
            limit: MAX_CLAMP_FRACTION,
        });
    }

    let n_out = results[0].samples.len();
    let times: Vec<f64> = (0..n_out).map(|k| (k * sched.every) as f64 * sched.dt).collect();
    let mut series = Vec::with_capacity(Series::ALL.len());
    let mut column = vec![0.0; results.len()];
    for which in Series::ALL {
        let mut mean = Vec::with_capacity(n_out);
        let mut se = Vec::with_capacity(n_out);
        let mut quantiles = Vec::with_capacity(n_out);
        for k in 0..n_out {
            for (slot, r) in column.iter_mut().zip(&results) {
                let [pnl, q, v, x] = r.samples[k];
                *slot = match which {
                    Series::Pnl => pnl,
                    Series::Position => q,
                    Series::Speed => v,
                    Series::Impact => x,
                    Series::AbsImpact => x.abs(),
                };
            }
            let (m, e) = mean_and_se(&column);
            mean.push(m);
            se.push(e);
            column.sort_by(f64::total_cmp);
            quantiles.push(QUANTILE_LEVELS.map(|level| quantile_sorted(&column, level)));
        }
        series.push(SeriesStats {
            series: which,
            mean,
            se,
            quantiles,
        });
    }

    let terminal_pnl = results.iter().map(|r| r.samples[n_out - 1][0]).collect();
    let mut trade_counts = vec![[0u64; 2]; curves.len()];
    for r in &results {
        for (acc, t) in trade_counts.iter_mut().zip(&r.trades) {
            acc[0] += t[0];
            acc[1] += t[1];
        }
    }

    Ok(SimOutcome {
        stats: PathStats {
            times,
            series,
            n_paths: cfg.n_paths,
            seed: cfg.seed,
            clamped_lookups: clamped,
            total_lookups: lookups,
        },
        terminal_pnl,
        trade_counts,
    })
}

/// Sample mean and its standard error `std / sqrt(N)`, summed in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = level * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Exponential decay rate fitted by least squares to `ln|y|` over `t <= t_max`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], t_max: f64) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, &y)| t <= t_max && y.abs() > 0.0)
        .map(|(&t, &y)| (t, y.abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    -cov / var
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub n_paths: usize,
    pub seed: u64,
    pub q0: f64,
    pub horizon: f64,
    pub transient_mean_pnl: f64,
    pub transient_se: f64,
    pub ac_mean_pnl: f64,
    pub ac_se: f64,
    /// Mean of per-path `transient - ac` terminal P&L.
    pub difference: f64,
    pub difference_se: f64,
}

impl PerformanceReport {
    pub fn from_outcomes(cfg: &SimConfig, transient: &SimOutcome, ac: &SimOutcome) -> Self {
        let (tm, tse) = mean_and_se(&transient.terminal_pnl);
        let (am, ase) = mean_and_se(&ac.terminal_pnl);
        let diff: Vec<f64> = transient
            .terminal_pnl
            .iter()
            .zip(&ac.terminal_pnl)
            .map(|(a, b)| a - b)
            .collect();
        let (dm, dse) = mean_and_se(&diff);
        Self {
            n_paths: cfg.n_paths,
            seed: cfg.seed,
            q0: cfg.q0,
            horizon: cfg.horizon,
            transient_mean_pnl: tm,
            transient_se: tse,
            ac_mean_pnl: am,
            ac_se: ase,
            difference: dm,
            difference_se: dse,
        }
    }

    /// Difference in units of its standard error.
    pub fn z_score(&self) -> f64 {
        if self.difference_se > 0.0 {
            self.difference / self.difference_se
        } else if self.difference == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.difference)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShockExperiment {
    pub transient: SimOutcome,
    pub ac: SimOutcome,
    pub report: PerformanceReport,
    pub transient_controls: ControlField,
    pub ac_controls: ControlField,
    pub transient_solve: SolveReport,
    pub ac_solve: SolveReport,
}

/// Solve with and without impact decay, then simulate both control sets
/// under the configured (transient) dynamics with common random numbers.
pub fn shock_experiment(
    params: &ModelParams,
    curves: &[IntensityCurve],
    grid: &GridSpec,
    cfg: &SimConfig,
) -> Result<ShockExperiment, SimError> {
    let transient = solve_transient(params, curves, grid)?;
    let ac = solve_ac(params, curves, grid)?;
    compare_policies(params, curves, cfg, transient, ac)
}

/// Simulation half of [`shock_experiment`] for already-solved controls.
pub fn compare_policies(
    params: &ModelParams,
    curves: &[IntensityCurve],
    cfg: &SimConfig,
    transient: crate::hjb::SolveOutput,
    ac: crate::hjb::SolveOutput,
) -> Result<ShockExperiment, SimError> {
    let t_out = simulate_paths(&transient.controls, params, curves, cfg)?;
    let a_out = simulate_paths(&ac.controls, params, curves, cfg)?;
    let report = PerformanceReport::from_outcomes(cfg, &t_out, &a_out);
    Ok(ShockExperiment {
        transient: t_out,
        ac: a_out,
        report,
        transient_controls: transient.controls,
        ac_controls: ac.controls,
        transient_solve: transient.report,
        ac_solve: ac.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::curves_from_tiers;
    use crate::params::{fx_example, normalize};
    use approx::assert_relative_eq;

    fn fx() -> (ModelParams, Vec<IntensityCurve>) {
        let params = normalize(&fx_example());
        let curves = curves_from_tiers(&params.tiers).unwrap();
        (params, curves)
    }

    fn constant(curves: &[IntensityCurve], speed: f64) -> ConstantPolicy {
        ConstantPolicy {
            bid: curves.iter().map(|c| c.delta_zero()).collect(),
            ask: curves.iter().map(|c| c.delta_zero()).collect(),
            speed,
            limit: 1e9,
        }
    }

    fn cfg(n_paths: usize, q0: f64, horizon: f64) -> SimConfig {
        SimConfig {
            n_paths,
            q0,
            horizon,
            dt: 1e-5,
            seed: 7,
            output_points: 20,
        }
    }

    #[test]
    fn zero_shock_leaves_state() {
        let (_, curves) = fx();
        let s = SimState {
            s: 1.0,
            q: 2.0,
            x: 0.1,
            cash: 3.0,
            t: 0.0,
        };
        assert_eq!(book_shock(s, 0.0, &constant(&curves, 0.0), &[1.0, 50.0]).unwrap(), s);
    }

    #[test]
    fn shock_books_spread() {
        let (params, curves) = fx();
        let policy = ClosedFormPolicy::new(&params, &curves);
        let sizes: Vec<f64> = curves.iter().map(|c| c.tier_size).collect();
        let s = book_shock(SimState::default(), 50.0, &policy, &sizes).unwrap();
        let bid6 = policy.coeffs.approx_quote(&curves[5], 0.0, 0.0, Side::Bid);
        assert_eq!(s.q, 50.0);
        assert_relative_eq!(s.pnl(), 50.0 * bid6, max_relative = 1e-14);
        let s = book_shock(SimState::default(), -7.0, &policy, &sizes).unwrap();
        assert_eq!(s.q, -7.0);
        assert!(book_shock(SimState::default(), 0.5, &policy, &sizes).is_err());
        assert!(book_shock(SimState::default(), 150.0, &policy, &sizes).is_err());
    }

    #[test]
    fn hedge_round_trip_costs() {
        let (mut params, _) = fx();
        params.beta = 0.0;
        let (v, dt) = (5_000.0, 1e-5);
        let s = accrue_hedge(SimState::default(), v, dt, &params);
        let s = accrue_hedge(s, -v, dt, &params);
        let l = hedge_cost(v, params.psi, params.eta);
        assert!(s.q.abs() < 1e-15);
        assert!(s.x.abs() < 1e-15);
        let slippage = -s.cash - 2.0 * l * dt;
        assert_relative_eq!(slippage, params.k * v * v * dt * dt, max_relative = 1e-9);
        assert!(slippage >= 0.0);
    }

    #[test]
    fn no_hedge_only_decays_impact() {
        let (params, _) = fx();
        let s0 = SimState {
            x: 0.2,
            q: 3.0,
            ..SimState::default()
        };
        let s = accrue_hedge(s0, 0.0, 1e-4, &params);
        assert_eq!(s.q, 3.0);
        assert_eq!(s.cash, 0.0);
        assert_relative_eq!(s.x, 0.2 * (1.0 - 0.1), max_relative = 1e-12);
    }

    #[test]
    fn zero_paths_rejected() {
        let (params, curves) = fx();
        let err = simulate_paths(&constant(&curves, 0.0), &params, &curves, &cfg(0, 0.0, 0.001)).unwrap_err();
        assert_eq!(err.to_string(), "at least 1 path is required");
    }

    #[test]
    fn coarse_step_rejected() {
        let (params, curves) = fx();
        let mut c = cfg(10, 0.0, 0.01);
        c.dt = 1e-4;
        c.output_points = 1;
        assert!(matches!(
            simulate_paths(&constant(&curves, 0.0), &params, &curves, &c),
            Err(SimError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn no_flow_no_hedge_is_martingale() {
        let (mut params, _) = fx();
        for t in params.tiers.iter_mut() {
            t.lambda0 = 0.0;
        }
        let curves = curves_from_tiers(&params.tiers).unwrap();
        let mut policy = constant(&curves, 0.0);
        policy.limit = 100.0;
        let out = simulate_paths(&policy, &params, &curves, &cfg(2000, 10.0, 0.002)).unwrap();
        let q = out.stats.get(Series::Position);
        assert!(q.mean.iter().all(|&m| m == 10.0));
        let pnl = out.stats.get(Series::Pnl);
        let spread = 10.0 * curves[3].delta_zero();
        for (m, se) in pnl.mean.iter().zip(&pnl.se).skip(1) {
            assert!((m - spread).abs() < 3.0 * se, "{m} vs {spread} +- {se}");
        }
        assert!(out.trade_counts.iter().all(|t| t == &[0, 0]));
    }

    #[test]
    fn pnl_decomposes_exactly() {
        let (params, curves) = fx();
        let policy = ClosedFormPolicy::new(&params, &curves);
        let trace = trace_path(&policy, &params, &curves, &cfg(1, 50.0, 0.003), 3).unwrap();
        for (state, ledger) in trace.states.iter().zip(&trace.ledgers) {
            let scale = 1.0 + state.pnl().abs();
            assert!((state.pnl() - ledger.total()).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn thinning_trade_counts() {
        let (params, curves) = fx();
        let policy = constant(&curves, 0.0);
        let c = cfg(200, 0.0, 0.005);
        let out = simulate_paths(&policy, &params, &curves, &c).unwrap();
        for (curve, counts) in curves.iter().zip(&out.trade_counts) {
            let expected = curve.intensity(curve.delta_zero()) * c.horizon * c.n_paths as f64;
            for &got in counts {
                assert!((got as f64 - expected).abs() < 3.0 * expected.sqrt(), "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn seeds_reproduce() {
        let (params, curves) = fx();
        let policy = ClosedFormPolicy::new(&params, &curves);
        let a = simulate_paths(&policy, &params, &curves, &cfg(50, 20.0, 0.002)).unwrap();
        let b = simulate_paths(&policy, &params, &curves, &cfg(50, 20.0, 0.002)).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.terminal_pnl, b.terminal_pnl);
    }

    #[test]
    fn identical_policies_have_zero_difference() {
        let (params, curves) = fx();
        let policy = ClosedFormPolicy::new(&params, &curves);
        let c = cfg(40, 20.0, 0.002);
        let a = simulate_paths(&policy, &params, &curves, &c).unwrap();
        let b = simulate_paths(&policy, &params, &curves, &c).unwrap();
        let report = PerformanceReport::from_outcomes(&c, &a, &b);
        assert_eq!(report.difference, 0.0);
        assert_eq!(report.z_score(), 0.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_relative_eq!(quantile_sorted(&v, 0.05), 1.2);
        let (m, se) = mean_and_se(&v);
        assert_eq!(m, 3.0);
        assert_relative_eq!(se, (2.5f64 / 5.0).sqrt());
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 1e-4).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-420.0 * t).exp()).collect();
        assert_relative_eq!(fit_decay_rate(&t, &y, 1.0), 420.0, max_relative = 1e-9);
    }
}
