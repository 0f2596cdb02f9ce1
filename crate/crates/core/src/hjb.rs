//! Backward explicit Euler solver for the dealer's HJB equation on an
//! (inventory, impact state) grid.
//!
//! The transient-impact equation solved here is
//!
//! ```text
//! 0 = ∂t V - βx(q + ∂x V) - ½γσ²q² + H_E(k(q + ∂x V) + ∂q V)
//!     + Σn Δn [ Hn(D+n V) + Hn(D-n V) ]
//! ```
//!
//! with `D±n V = (V(q) - V(q ± Δn)) / Δn` and `V(T) = 0`. The baseline model
//! drops the impact state and `H_E`; the permanent-impact model is the same
//! equation with `β = 0`.
//!
//! Discretization:
//! - the `-βx ∂x V` transport is upwinded along the flow toward `x = 0`;
//! - `H_E` is split into its buying and selling branches, each evaluated with
//!   the one-sided differences in the direction that branch moves the state;
//! - client trades that would leave the inventory grid are dropped (hard
//!   inventory limit);
//! - at the x boundaries the missing one-sided difference is replaced by the
//!   other one.
//!
//! Each step is a pure map over nodes reading the previous slice, so results
//! do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::{optimal_speed, ClosedFormCoeffs, Side};
use crate::intensity::{HamiltonianTable, IntensityCurve, IntensityError};
use crate::params::{ModelParams, SolverSection, TimeStep};

/// Safety factor applied to the explicit stability bound.
const CFL_SAFETY: f64 = 0.9;
/// Headroom on the closed-form estimate of the largest execution signal.
const EXEC_MARGIN: f64 = 1.2;
const MAX_RESTARTS: usize = 6;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("tier size {size} M is not an integer multiple of q_step = {q_step} M")]
    Misaligned { size: f64, q_step: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("explicit scheme unstable at step {step}: rate*dt = {rate_dt:.3} > 1 (dt = {dt:e} day, {nq}x{nx} grid)")]
    Unstable {
        step: usize,
        rate_dt: f64,
        dt: f64,
        nq: usize,
        nx: usize,
    },
    #[error("non-finite value during backward induction at step {step} (dt = {dt:e} day, {nq}x{nx} grid)")]
    NonFinite { step: usize, dt: f64, nq: usize, nx: usize },
    #[error(transparent)]
    Intensity(#[from] IntensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    /// Transient impact with the configured decay rate.
    Transient,
    /// No hedging and no impact state.
    Baseline,
    /// Transient machinery with `β = 0`, i.e. permanent impact.
    AlmgrenChriss,
}

impl SolveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveMode::Transient => "transient",
            SolveMode::Baseline => "baseline",
            SolveMode::AlmgrenChriss => "ac",
        }
    }

    pub fn has_hedging(self) -> bool {
        !matches!(self, SolveMode::Baseline)
    }
}

impl std::str::FromStr for SolveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transient" => Ok(SolveMode::Transient),
            "baseline" => Ok(SolveMode::Baseline),
            "ac" => Ok(SolveMode::AlmgrenChriss),
            other => Err(format!("unknown mode {other:?} (expected transient, baseline or ac)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q_max: f64,
    pub q_step: f64,
    pub x_max: f64,
    pub x_nodes: usize,
    pub horizon: f64,
    pub dt: TimeStep,
    pub stationarity_tol: f64,
}

impl From<&SolverSection> for GridSpec {
    fn from(s: &SolverSection) -> Self {
        Self {
            q_max: s.q_max,
            q_step: s.q_step,
            x_max: s.x_max,
            x_nodes: s.x_nodes,
            horizon: s.horizon,
            dt: s.dt,
            stationarity_tol: s.stationarity_tol,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::from(&SolverSection::default())
    }
}

/// Node coordinates. The baseline solve uses a single x node at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub q_step: f64,
    /// Zero when there is a single x node.
    pub x_step: f64,
}

impl Grid {
    pub fn new(spec: &GridSpec, with_x: bool) -> Result<Self, HjbError> {
        if !(spec.q_step > 0.0) || !(spec.q_max > 0.0) {
            return Err(HjbError::Grid("q_step and q_max must be positive".into()));
        }
        let half = spec.q_max / spec.q_step;
        if (half - half.round()).abs() > 1e-9 * half.max(1.0) {
            return Err(HjbError::Grid("q_max must be a multiple of q_step".into()));
        }
        let half = half.round() as i64;
        let q = (-half..=half).map(|i| i as f64 * spec.q_step).collect();
        let (x, x_step) = if with_x {
            if spec.x_nodes < 3 || spec.x_nodes % 2 == 0 || !(spec.x_max > 0.0) {
                return Err(HjbError::Grid("x_nodes must be odd and >= 3, x_max positive".into()));
            }
            let hx = (spec.x_nodes / 2) as i64;
            let dx = spec.x_max / hx as f64;
            ((-hx..=hx).map(|j| j as f64 * dx).collect(), dx)
        } else {
            (vec![0.0], 0.0)
        };
        Ok(Self { q, x, q_step: spec.q_step, x_step })
    }

    pub fn nq(&self) -> usize {
        self.q.len()
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.q.len() + i
    }

    /// Index of the node at or nearest to `q`.
    pub fn q_index(&self, q: f64) -> usize {
        let i = ((q - self.q[0]) / self.q_step).round();
        i.clamp(0.0, (self.nq() - 1) as f64) as usize
    }

    pub fn x_index(&self, x: f64) -> usize {
        if self.nx() == 1 {
            return 0;
        }
        let j = ((x - self.x[0]) / self.x_step).round();
        j.clamp(0.0, (self.nx() - 1) as f64) as usize
    }

    /// Node offsets of each ladder size; errors if any is off-grid.
    pub fn offsets(&self, sizes: &[f64]) -> Result<Vec<usize>, HjbError> {
        sizes
            .iter()
            .map(|&size| {
                let m = size / self.q_step;
                if (m - m.round()).abs() > 1e-9 * m.max(1.0) || m.round() < 1.0 {
                    Err(HjbError::Misaligned { size, q_step: self.q_step })
                } else {
                    Ok(m.round() as usize)
                }
            })
            .collect()
    }
}

/// Value function on the grid at one time slice, bp·M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: Grid,
    /// Row-major in x: `values[j * nq + i]`.
    pub values: Vec<f64>,
    /// Time (days) of this slice.
    pub time: f64,
}

impl ValueField {
    pub fn zeros(grid: Grid, time: f64) -> Self {
        let n = grid.nq() * grid.nx();
        Self { grid, values: vec![0.0; n], time }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |V(q,x) - V(-q,-x)|`.
    pub fn max_asymmetry(&self) -> f64 {
        let (nq, nx) = (self.grid.nq(), self.grid.nx());
        let mut worst: f64 = 0.0;
        for j in 0..nx {
            for i in 0..nq {
                worst = worst.max((self.at(i, j) - self.at(nq - 1 - i, nx - 1 - j)).abs());
            }
        }
        worst
    }
}

/// Optimal controls tabulated over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    pub mode: SolveMode,
    pub grid: Grid,
    pub sizes: Vec<f64>,
    pub psi: f64,
    pub eta: f64,
    /// Indexed by `((tier * 2 + side) * nx + j) * nq + i`.
    pub quotes: Vec<f64>,
    /// Hedge speed, M/day; absent for the baseline model.
    pub speed: Option<Vec<f64>>,
    /// Marginal value of execution, bp.
    pub p_exec: Option<Vec<f64>>,
    /// Number of quotes whose rate fell outside the invertible range.
    pub clamped_quotes: usize,
}

impl ControlField {
    pub fn n_tiers(&self) -> usize {
        self.sizes.len()
    }

    #[inline]
    fn quote_index(&self, tier: usize, side: Side, i: usize, j: usize) -> usize {
        ((tier * 2 + side.index()) * self.grid.nx() + j) * self.grid.nq() + i
    }

    #[inline]
    pub fn quote(&self, tier: usize, side: Side, i: usize, j: usize) -> f64 {
        self.quotes[self.quote_index(tier, side, i, j)]
    }

    pub fn speed(&self, i: usize, j: usize) -> Option<f64> {
        self.speed.as_ref().map(|s| s[self.grid.index(i, j)])
    }

    pub fn p_exec_at(&self, i: usize, j: usize) -> Option<f64> {
        self.p_exec.as_ref().map(|s| s[self.grid.index(i, j)])
    }

    /// Whether `(i, j)` lies in the pure internalization zone `|p_E| <= ψ`.
    pub fn in_zone(&self, i: usize, j: usize) -> Option<bool> {
        self.p_exec_at(i, j).map(|p| p.abs() <= self.psi)
    }

    /// Inventory interval of the pure internalization zone on x row `j`, the
    /// band around the node of smallest `|p_E|`. Edges are placed where the
    /// linear interpolant of `p_E` crosses `±ψ`; a band touching the grid
    /// edge ends there. `None` when the row has no zone or no hedging.
    pub fn zone_band(&self, j: usize) -> Option<(f64, f64)> {
        let p = self.p_exec.as_ref()?;
        let g = &self.grid;
        let nq = g.nq();
        let row = &p[j * nq..(j + 1) * nq];
        let centre = (0..nq).min_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()))?;
        if row[centre].abs() > self.psi {
            return None;
        }
        let edge = |inside: usize, outside: usize| {
            let (pi, po) = (row[inside], row[outside]);
            let level = self.psi.copysign(po);
            let w = (level - pi) / (po - pi);
            g.q[inside] + w * (g.q[outside] - g.q[inside])
        };
        let mut lo = centre;
        while lo > 0 && row[lo - 1].abs() <= self.psi {
            lo -= 1;
        }
        let left = if lo == 0 { g.q[0] } else { edge(lo, lo - 1) };
        let mut hi = centre;
        while hi + 1 < nq && row[hi + 1].abs() <= self.psi {
            hi += 1;
        }
        let right = if hi + 1 == nq { g.q[nq - 1] } else { edge(hi, hi + 1) };
        Some((left, right))
    }

    /// Whether the dealer quotes this tier and side at node `i`: trades that
    /// would leave the grid are not offered.
    pub fn is_quoted(&self, tier: usize, side: Side, i: usize) -> bool {
        let m = (self.sizes[tier] / self.grid.q_step).round() as usize;
        match side {
            Side::Bid => i + m < self.grid.nq(),
            Side::Ask => i >= m,
        }
    }

    /// Bilinear interpolation of quotes and `p_E` at an arbitrary state; the
    /// hedge speed is re-derived from the interpolated `p_E`. Returns whether
    /// the state had to be clamped into the grid.
    pub fn sample(&self, q: f64, x: f64, out: &mut ControlSample) -> bool {
        let g = &self.grid;
        let (i0, wq, clamp_q) = locate(q, g.q[0], g.q_step, g.nq());
        let (j0, wx, clamp_x) = if g.nx() == 1 {
            (0, 0.0, false)
        } else {
            locate(x, g.x[0], g.x_step, g.nx())
        };
        let i1 = (i0 + 1).min(g.nq() - 1);
        let j1 = (j0 + 1).min(g.nx() - 1);
        let blend = |f: &dyn Fn(usize, usize) -> f64| {
            let a = f(i0, j0) * (1.0 - wq) + f(i1, j0) * wq;
            let b = f(i0, j1) * (1.0 - wq) + f(i1, j1) * wq;
            a * (1.0 - wx) + b * wx
        };
        out.bid.resize(self.n_tiers(), 0.0);
        out.ask.resize(self.n_tiers(), 0.0);
        for n in 0..self.n_tiers() {
            out.bid[n] = blend(&|i, j| self.quote(n, Side::Bid, i, j));
            out.ask[n] = blend(&|i, j| self.quote(n, Side::Ask, i, j));
        }
        match &self.p_exec {
            Some(p) => {
                let nq = g.nq();
                let pe = blend(&|i, j| p[j * nq + i]);
                out.p_exec = pe;
                out.speed = optimal_speed(pe, self.psi, self.eta);
            }
            None => {
                out.p_exec = 0.0;
                out.speed = 0.0;
            }
        }
        clamp_q || clamp_x
    }

    /// Largest relative change between two control fields on the same grid.
    pub fn max_relative_change(&self, other: &ControlField) -> f64 {
        fn rel(a: &[f64], b: &[f64]) -> f64 {
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
        }
        let mut worst = rel(&self.quotes, &other.quotes);
        if let (Some(a), Some(b)) = (&self.speed, &other.speed) {
            worst = worst.max(rel(a, b));
        }
        worst
    }
}

#[inline]
fn locate(v: f64, origin: f64, step: f64, n: usize) -> (usize, f64, bool) {
    let s = (v - origin) / step;
    let max = (n - 1) as f64;
    if s.is_nan() {
        return (0, 0.0, true);
    }
    let clamped = s < 0.0 || s > max;
    let s = s.clamp(0.0, max);
    let i = (s.floor() as usize).min(n.saturating_sub(2));
    (i, s - i as f64, clamped)
}

/// Controls interpolated at one state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlSample {
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    pub speed: f64,
    pub p_exec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub dt: f64,
    pub steps: usize,
    pub horizon: f64,
    /// Largest relative control change over the last 10% of steps.
    pub stationarity: f64,
    pub stationary: bool,
    /// Times an automatic step had to be halved.
    pub restarts: usize,
    /// Largest observed `rate * dt`; must stay below 1.
    pub max_rate_dt: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub value: ValueField,
    pub controls: ControlField,
    pub report: SolveReport,
}

pub fn solve_transient(
    params: &ModelParams,
    curves: &[IntensityCurve],
    grid: &GridSpec,
) -> Result<SolveOutput, HjbError> {
    solve(params, curves, grid, SolveMode::Transient)
}

pub fn solve_baseline(
    params: &ModelParams,
    curves: &[IntensityCurve],
    grid: &GridSpec,
) -> Result<SolveOutput, HjbError> {
    solve(params, curves, grid, SolveMode::Baseline)
}

/// Solve with `β = 0` regardless of the configured decay.
pub fn solve_ac(params: &ModelParams, curves: &[IntensityCurve], grid: &GridSpec) -> Result<SolveOutput, HjbError> {
    solve(params, curves, grid, SolveMode::AlmgrenChriss)
}

pub fn solve(
    params: &ModelParams,
    curves: &[IntensityCurve],
    spec: &GridSpec,
    mode: SolveMode,
) -> Result<SolveOutput, HjbError> {
    let params = match mode {
        SolveMode::AlmgrenChriss => params.with_beta(0.0),
        _ => params.clone(),
    };
    if !(spec.horizon > 0.0) {
        return Err(HjbError::Grid("horizon must be positive".into()));
    }
    let grid = Grid::new(spec, mode.has_hedging())?;
    let op = Operator::new(&params, curves, &grid, mode)?;

    let (mut dt, auto) = match spec.dt {
        TimeStep::Auto => (auto_time_step(&params, curves, &grid, mode), true),
        TimeStep::Fixed(dt) if dt > 0.0 => (dt, false),
        TimeStep::Fixed(dt) => return Err(HjbError::Grid(format!("dt must be positive, got {dt}"))),
    };
    let mut restarts = 0;
    loop {
        match run(&op, &grid, spec, dt) {
            Ok((value, snapshot, steps, max_rate_dt)) => {
                let controls = extract_controls_with_mode(&value, &params, curves, mode)?;
                let earlier = extract_controls_with_mode(&snapshot, &params, curves, mode)?;
                let stationarity = controls.max_relative_change(&earlier);
                let report = SolveReport {
                    mode,
                    dt: spec.horizon / steps as f64,
                    steps,
                    horizon: spec.horizon,
                    stationarity,
                    stationary: stationarity <= spec.stationarity_tol,
                    restarts,
                    max_rate_dt,
                };
                return Ok(SolveOutput { value, controls, report });
            }
            Err(err @ (HjbError::Unstable { .. } | HjbError::NonFinite { .. })) => {
                if !auto || restarts >= MAX_RESTARTS {
                    return Err(err);
                }
                restarts += 1;
                dt *= 0.5;
            }
            Err(err) => return Err(err),
        }
    }
}

/// CFL-style step: `0.9 / (advection + client flow + hedging transport)`.
pub fn auto_time_step(params: &ModelParams, curves: &[IntensityCurve], grid: &Grid, mode: SolveMode) -> f64 {
    let flow: f64 = curves.iter().map(|c| 2.0 * c.lambda0).sum();
    let mut rate = flow;
    if mode.has_hedging() {
        let x_max = grid.x.last().copied().unwrap_or(0.0);
        let q_max = grid.q.last().copied().unwrap_or(0.0);
        if grid.x_step > 0.0 {
            rate += params.beta * x_max / grid.x_step;
        }
        if params.eta > 0.0 {
            let coeffs = ClosedFormCoeffs::new(params, curves);
            let a0 = if coeffs.a0.is_finite() { coeffs.a0 } else { 0.0 };
            let p_est = EXEC_MARGIN
                * ((2.0 * a0 + params.k * (1.0 + coeffs.b0)) * q_max + coeffs.b0 * x_max);
            let v_est = (p_est - params.psi).max(0.0) / (2.0 * params.eta);
            let x_term = if grid.x_step > 0.0 { params.k / grid.x_step } else { 0.0 };
            rate += v_est * (1.0 / grid.q_step + x_term);
        }
    }
    CFL_SAFETY / rate.max(f64::MIN_POSITIVE)
}

struct Operator {
    tables: Vec<HamiltonianTable>,
    sizes: Vec<f64>,
    offsets: Vec<usize>,
    /// `½ γ σ² q²` per q node.
    risk: Vec<f64>,
    q: Vec<f64>,
    x: Vec<f64>,
    nq: usize,
    nx: usize,
    inv_dq: f64,
    inv_dx: f64,
    beta: f64,
    k: f64,
    psi: f64,
    eta: f64,
    flow_bound: f64,
    hedging: bool,
}

impl Operator {
    fn new(params: &ModelParams, curves: &[IntensityCurve], grid: &Grid, mode: SolveMode) -> Result<Self, HjbError> {
        let sizes: Vec<f64> = curves.iter().map(|c| c.tier_size).collect();
        let offsets = grid.offsets(&sizes)?;
        if let Some(&m) = offsets.iter().max() {
            if m >= grid.nq() {
                return Err(HjbError::Grid(format!(
                    "largest tier spans {m} nodes but the q grid has only {}",
                    grid.nq()
                )));
            }
        }
        let tables = curves
            .iter()
            .map(HamiltonianTable::for_curve)
            .collect::<Result<Vec<_>, _>>()?;
        let half_risk = 0.5 * params.gamma * params.sigma * params.sigma;
        Ok(Self {
            tables,
            sizes,
            offsets,
            risk: grid.q.iter().map(|q| half_risk * q * q).collect(),
            q: grid.q.clone(),
            x: grid.x.clone(),
            nq: grid.nq(),
            nx: grid.nx(),
            inv_dq: 1.0 / grid.q_step,
            inv_dx: if grid.x_step > 0.0 { 1.0 / grid.x_step } else { 0.0 },
            beta: params.beta,
            k: params.k,
            psi: params.psi,
            eta: params.eta,
            flow_bound: curves.iter().map(|c| 2.0 * c.lambda0).sum(),
            hedging: mode.has_hedging(),
        })
    }

    /// Client-flow part of the generator at node `i` of one x row.
    #[inline]
    fn otc_sum(&self, row: &[f64], i: usize) -> f64 {
        let vi = row[i];
        let mut acc = 0.0;
        for ((table, &size), &m) in self.tables.iter().zip(&self.sizes).zip(&self.offsets) {
            if i + m < self.nq {
                acc += size * table.value((vi - row[i + m]) / size);
            }
            if i >= m {
                acc += size * table.value((vi - row[i - m]) / size);
            }
        }
        acc
    }

    /// One backward step for x row `j`; returns the largest local rate.
    fn step_row(&self, v: &[f64], j: usize, dt: f64, out: &mut [f64]) -> f64 {
        let nq = self.nq;
        let row = &v[j * nq..(j + 1) * nq];
        let x = self.x[j];
        let mut max_rate: f64 = 0.0;
        if !self.hedging {
            for i in 0..nq {
                let f = -self.risk[i] + self.otc_sum(row, i);
                out[i] = row[i] + dt * f;
            }
            return self.flow_bound;
        }
        let up = if j + 1 < self.nx { Some(&v[(j + 1) * nq..(j + 2) * nq]) } else { None };
        let down = if j > 0 { Some(&v[(j - 1) * nq..j * nq]) } else { None };
        let adv_rate = self.beta * x.abs() * self.inv_dx;
        let inv_4eta = 0.25 / self.eta;
        let inv_2eta = 0.5 / self.eta;
        let transport = self.inv_dq + self.k * self.inv_dx;
        for i in 0..nq {
            let vi = row[i];
            let q = self.q[i];
            let dx_fwd = up.map(|u| (u[i] - vi) * self.inv_dx);
            let dx_bwd = down.map(|d| (vi - d[i]) * self.inv_dx);
            let (dx_fwd, dx_bwd) = match (dx_fwd, dx_bwd) {
                (Some(f), Some(b)) => (f, b),
                (Some(f), None) => (f, f),
                (None, Some(b)) => (b, b),
                (None, None) => (0.0, 0.0),
            };

            let mut f = -self.risk[i] + self.otc_sum(row, i);

            // -βx(q + ∂x V), upwinded along the drift -βx.
            if self.beta != 0.0 {
                let dxv = if x > 0.0 {
                    dx_bwd
                } else if x < 0.0 {
                    dx_fwd
                } else {
                    0.0
                };
                f -= self.beta * x * (q + dxv);
            }

            // Execution: buying branch looks forward, selling branch backward.
            let mut speed_sum = 0.0;
            if i + 1 < nq {
                let p = self.k * (q + dx_fwd) + (row[i + 1] - vi) * self.inv_dq;
                let e = p - self.psi;
                if e > 0.0 {
                    f += e * e * inv_4eta;
                    speed_sum += e * inv_2eta;
                }
            }
            if i > 0 {
                let p = self.k * (q + dx_bwd) + (vi - row[i - 1]) * self.inv_dq;
                let e = -p - self.psi;
                if e > 0.0 {
                    f += e * e * inv_4eta;
                    speed_sum += e * inv_2eta;
                }
            }
            max_rate = max_rate.max(speed_sum * transport);
            out[i] = vi + dt * f;
        }
        self.flow_bound + adv_rate + max_rate
    }
}

/// Returns (value at t=0, value at the start of the last 10% of steps, steps, max rate*dt).
fn run(op: &Operator, grid: &Grid, spec: &GridSpec, dt: f64) -> Result<(ValueField, ValueField, usize, f64), HjbError> {
    let steps = (spec.horizon / dt).ceil().max(1.0) as usize;
    let dt = spec.horizon / steps as f64;
    let snapshot_at = steps - (steps / 10).max(1);
    let nq = grid.nq();
    let mut cur = vec![0.0; nq * grid.nx()];
    let mut next = vec![0.0; nq * grid.nx()];
    let mut snapshot = None;
    let mut worst: f64 = 0.0;
    for step in 0..steps {
        let rate = next
            .par_chunks_mut(nq)
            .enumerate()
            .map(|(j, out)| op.step_row(&cur, j, dt, out))
            .reduce(|| 0.0, f64::max);
        let rate_dt = rate * dt;
        worst = worst.max(rate_dt);
        if rate_dt > 1.0 {
            return Err(HjbError::Unstable {
                step,
                rate_dt,
                dt,
                nq,
                nx: grid.nx(),
            });
        }
        std::mem::swap(&mut cur, &mut next);
        if step + 1 == snapshot_at {
            snapshot = Some(cur.clone());
        }
        // A NaN anywhere poisons its neighbours within a few steps; checking
        // periodically is enough to catch it.
        if step % 64 == 63 || step + 1 == steps {
            if cur.iter().any(|v| !v.is_finite()) {
                return Err(HjbError::NonFinite {
                    step,
                    dt,
                    nq,
                    nx: grid.nx(),
                });
            }
        }
    }
    let snapshot_time = spec.horizon - snapshot_at as f64 * dt;
    let snapshot = snapshot.unwrap_or_else(|| cur.clone());
    Ok((
        ValueField {
            grid: grid.clone(),
            values: cur,
            time: 0.0,
        },
        ValueField {
            grid: grid.clone(),
            values: snapshot,
            time: snapshot_time,
        },
        steps,
        worst,
    ))
}

/// Optimal controls implied by a value field.
///
/// Quotes invert the intensity at `-H'(D±V)`; the hedge speed follows from
/// `p_E = k(q + ∂x V) + ∂q V` with central differences in the interior and
/// one-sided ones at the edges. A single-x-node field is treated as the
/// baseline model (quotes only).
pub fn extract_controls(
    value: &ValueField,
    params: &ModelParams,
    curves: &[IntensityCurve],
) -> Result<ControlField, HjbError> {
    let mode = if value.grid.nx() == 1 {
        SolveMode::Baseline
    } else {
        SolveMode::Transient
    };
    extract_controls_with_mode(value, params, curves, mode)
}

fn extract_controls_with_mode(
    value: &ValueField,
    params: &ModelParams,
    curves: &[IntensityCurve],
    mode: SolveMode,
) -> Result<ControlField, HjbError> {
    let grid = &value.grid;
    let (nq, nx) = (grid.nq(), grid.nx());
    let sizes: Vec<f64> = curves.iter().map(|c| c.tier_size).collect();
    let offsets = grid.offsets(&sizes)?;
    let mut quotes = vec![0.0; curves.len() * 2 * nx * nq];
    let mut clamped_quotes = 0;
    for (n, (curve, &m)) in curves.iter().zip(&offsets).enumerate() {
        for side in Side::BOTH {
            for j in 0..nx {
                for i in 0..nq {
                    // Unquoted trades take the quote of the nearest quoted node.
                    let (src, dst) = match side {
                        Side::Bid => {
                            let i = i.min(nq - 1 - m);
                            (i, i + m)
                        }
                        Side::Ask => {
                            let i = i.max(m);
                            (i, i - m)
                        }
                    };
                    let d = (value.at(src, j) - value.at(dst, j)) / curve.tier_size;
                    let rate = -curve.hamiltonian_prime(d)?;
                    let (delta, clamped) = curve.inverse(rate);
                    if clamped && curve.lambda0 > 0.0 {
                        clamped_quotes += 1;
                    }
                    let delta = if curve.lambda0 > 0.0 {
                        delta
                    } else {
                        curve.hamiltonian(d)?.maximizer
                    };
                    quotes[((n * 2 + side.index()) * nx + j) * nq + i] = delta;
                }
            }
        }
    }

    let (speed, p_exec) = if mode.has_hedging() && nx > 1 {
        let mut p = vec![0.0; nq * nx];
        let mut v = vec![0.0; nq * nx];
        for j in 0..nx {
            for i in 0..nq {
                let dq = central(|ii| value.at(ii, j), i, nq, grid.q_step);
                let dx = central(|jj| value.at(i, jj), j, nx, grid.x_step);
                let pe = params.k * (grid.q[i] + dx) + dq;
                p[grid.index(i, j)] = pe;
                v[grid.index(i, j)] = optimal_speed(pe, params.psi, params.eta);
            }
        }
        (Some(v), Some(p))
    } else {
        (None, None)
    };

    Ok(ControlField {
        mode,
        grid: grid.clone(),
        sizes,
        psi: params.psi,
        eta: params.eta,
        quotes,
        speed,
        p_exec,
        clamped_quotes,
    })
}

#[inline]
fn central(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (f(1) - f(0)) / h
    } else if i + 1 == n {
        (f(n - 1) - f(n - 2)) / h
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::curves_from_tiers;
    use crate::params::{fx_example, normalize};
    use approx::assert_relative_eq;

    fn small_params() -> (ModelParams, Vec<IntensityCurve>) {
        let mut raw = fx_example();
        raw.ladder_notional = vec![1.0, 2.0];
        raw.intensity_amplitudes = vec![2000.0, 800.0];
        raw.intensity_a = vec![-1.0; 2];
        raw.intensity_b = vec![7.0; 2];
        let params = normalize(&raw);
        let curves = curves_from_tiers(&params.tiers).unwrap();
        (params, curves)
    }

    fn small_grid() -> GridSpec {
        GridSpec {
            q_max: 20.0,
            q_step: 1.0,
            x_max: 0.5,
            x_nodes: 11,
            horizon: 0.01,
            dt: TimeStep::Auto,
            stationarity_tol: 1e-3,
        }
    }

    #[test]
    fn grid_is_symmetric_with_zero_nodes() {
        let g = Grid::new(&GridSpec::default(), true).unwrap();
        assert_eq!(g.nq(), 201);
        assert_eq!(g.nx(), 101);
        assert_eq!(g.q[100], 0.0);
        assert_eq!(g.x[50], 0.0);
        assert_relative_eq!(g.x_step, 0.02, max_relative = 1e-15);
    }

    #[test]
    fn misaligned_ladder_rejected() {
        let g = Grid::new(&GridSpec { q_step: 2.0, ..GridSpec::default() }, true).unwrap();
        assert!(matches!(g.offsets(&[1.0, 2.0]), Err(HjbError::Misaligned { .. })));
    }

    #[test]
    fn constant_value_gives_myopic_quotes() {
        let (params, curves) = small_params();
        let grid = Grid::new(&small_grid(), true).unwrap();
        let value = ValueField::zeros(grid, 0.0);
        let field = extract_controls(&value, &params, &curves).unwrap();
        for n in 0..2 {
            for &(i, j) in &[(0, 0), (20, 5), (40, 10)] {
                for side in Side::BOTH {
                    assert_relative_eq!(field.quote(n, side, i, j), curves[n].delta_zero(), epsilon = 1e-10);
                }
            }
        }
        assert!(field.speed.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_field_plug_in() {
        let (params, curves) = small_params();
        let coeffs = ClosedFormCoeffs::new(&params, &curves);
        let grid = Grid::new(&small_grid(), true).unwrap();
        let mut value = ValueField::zeros(grid.clone(), 0.0);
        for j in 0..grid.nx() {
            for i in 0..grid.nq() {
                let (q, x) = (grid.q[i], grid.x[j]);
                value.values[grid.index(i, j)] = -coeffs.a0 * q * q - coeffs.b0 * q * x;
            }
        }
        let field = extract_controls(&value, &params, &curves).unwrap();
        for j in 1..grid.nx() - 1 {
            for i in 1..grid.nq() - 1 {
                let (q, x) = (grid.q[i], grid.x[j]);
                let p = field.p_exec_at(i, j).unwrap();
                assert_relative_eq!(p, coeffs.p_exec(params.k, q, x), epsilon = 1e-12);
                let v = field.speed(i, j).unwrap();
                assert_eq!(v == 0.0, field.in_zone(i, j).unwrap());
            }
        }
        // Quotes: exact inversion at the analytic difference, and first-order
        // agreement with the approximate formula.
        let tob = &curves[0];
        for &(q, x) in &[(0.0, 0.0), (2.0, 0.1), (-3.0, -0.2), (5.0, 0.3)] {
            let (i, j) = (grid.q_index(q), grid.x_index(x));
            let (q, x) = (grid.q[i], grid.x[j]);
            for side in Side::BOTH {
                let d = coeffs.a0 * (tob.tier_size + side.sign() * 2.0 * q) + side.sign() * coeffs.b0 * x;
                let exact = tob.hamiltonian(d).unwrap().maximizer;
                assert_relative_eq!(field.quote(0, side, i, j), exact, epsilon = 1e-10);
                let approx = coeffs.approx_quote(tob, q, x, side);
                assert!((field.quote(0, side, i, j) - approx).abs() < 10.0 * d * d * 7.0, "{side:?} q={q} x={x}");
            }
        }
    }

    #[test]
    fn transient_solution_is_symmetric() {
        let (params, curves) = small_params();
        let out = solve_transient(&params, &curves, &small_grid()).unwrap();
        assert!(out.value.max_asymmetry() <= 1e-8 * out.value.max_abs());
        let f = &out.controls;
        let (nq, nx) = (f.grid.nq(), f.grid.nx());
        let speed_scale = f.speed.as_ref().unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..nx {
            for i in 0..nq {
                let (mi, mj) = (nq - 1 - i, nx - 1 - j);
                assert!((f.speed(i, j).unwrap() + f.speed(mi, mj).unwrap()).abs() <= 1e-6 * speed_scale);
                if f.p_exec_at(i, j).unwrap().abs() < 0.99 * params.psi || f.p_exec_at(i, j).unwrap().abs() > 1.01 * params.psi {
                    assert_eq!(f.in_zone(i, j), f.in_zone(mi, mj));
                }
                for n in 0..2 {
                    let b = f.quote(n, Side::Bid, i, j);
                    let a = f.quote(n, Side::Ask, mi, mj);
                    assert!((a - b).abs() < 1e-8, "tier {n} at ({i},{j}): {b} vs {a}");
                    assert!(b.is_finite());
                }
            }
        }
        assert!(out.report.max_rate_dt <= 1.0);
    }

    #[test]
    fn reduces_to_baseline_without_hedging_or_impact() {
        let (mut params, curves) = small_params();
        params.psi = 1e6;
        params.beta = 0.0;
        params.k = 0.0;
        let mut spec = small_grid();
        spec.dt = TimeStep::Fixed(2e-5);
        let full = solve_transient(&params, &curves, &spec).unwrap();
        let base = solve_baseline(&params, &curves, &spec).unwrap();
        assert_eq!(full.report.steps, base.report.steps);
        let nq = base.value.grid.nq();
        for j in 0..full.value.grid.nx() {
            for i in 0..nq {
                assert!((full.value.at(i, j) - base.value.at(i, 0)).abs() <= 1e-10);
            }
        }
        assert!(full.controls.speed.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn baseline_quotes_symmetric_at_zero() {
        let (params, curves) = small_params();
        let out = solve_baseline(&params, &curves, &small_grid()).unwrap();
        let f = &out.controls;
        assert!(f.speed.is_none());
        let i0 = f.grid.q_index(0.0);
        for n in 0..2 {
            assert_relative_eq!(f.quote(n, Side::Bid, i0, 0), f.quote(n, Side::Ask, i0, 0), max_relative = 1e-12);
        }
    }

    #[test]
    fn ac_controls_do_not_depend_on_impact_state() {
        let (params, curves) = small_params();
        let out = solve_ac(&params, &curves, &small_grid()).unwrap();
        let f = &out.controls;
        let nx = f.grid.nx();
        for i in 0..f.grid.nq() {
            let v0 = f.speed(i, nx / 2).unwrap();
            for j in 1..nx - 1 {
                assert!((f.speed(i, j).unwrap() - v0).abs() <= 1e-6 * (1.0 + v0.abs()));
            }
        }
    }

    #[test]
    fn fixed_step_too_large_is_reported() {
        let (params, curves) = small_params();
        let spec = GridSpec {
            dt: TimeStep::Fixed(1e-3),
            ..small_grid()
        };
        let err = solve_transient(&params, &curves, &spec).unwrap_err();
        assert!(matches!(err, HjbError::Unstable { .. }), "{err}");
    }

    #[test]
    fn sample_reproduces_nodes_and_clamps() {
        let (params, curves) = small_params();
        let out = solve_transient(&params, &curves, &small_grid()).unwrap();
        let f = &out.controls;
        let mut s = ControlSample::default();
        let (i, j) = (25, 7);
        assert!(!f.sample(f.grid.q[i], f.grid.x[j], &mut s));
        assert_relative_eq!(s.bid[0], f.quote(0, Side::Bid, i, j), max_relative = 1e-14);
        assert_relative_eq!(s.p_exec, f.p_exec_at(i, j).unwrap(), max_relative = 1e-14, epsilon = 1e-15);
        assert!(f.sample(f.grid.q[i], 10.0, &mut s));
        assert!(f.sample(-500.0, 0.0, &mut s));
    }
}
