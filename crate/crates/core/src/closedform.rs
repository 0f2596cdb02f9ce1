//! Stationary quadratic-ansatz coefficients and the approximate controls
//! they imply.
//!
//! With `V ≈ -A q² - B q x` and the OTC Hamiltonian expanded to second order,
//! the long-horizon limits are
//!
//! ```text
//! A0 = σ sqrt(γ / (8ξ)),   ω = σ sqrt(2γξ),   B0 = β / (β + ω)
//! ```
//!
//! so that `2 A0 ω = γ σ²` identically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::IntensityCurve;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Bid, Side::Ask];

    /// `+1` for the bid, `-1` for the ask.
    pub fn sign(self) -> f64 {
        match self {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("quadratic hedge cost eta must be positive for a finite hedge speed")]
    ZeroEta,
    #[error("integration step must be positive, got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCoeffs {
    /// bp / M
    pub a0: f64,
    /// M / (day * bp)
    pub xi: f64,
    /// 1 / day
    pub omega: f64,
    pub b0: f64,
}

impl ClosedFormCoeffs {
    pub fn new(params: &ModelParams, curves: &[IntensityCurve]) -> Self {
        Self::from_parts(params.sigma, params.gamma, params.beta, crate::intensity::xi(curves))
    }

    pub fn from_parts(sigma: f64, gamma: f64, beta: f64, xi: f64) -> Self {
        let (a0, omega) = if gamma == 0.0 || sigma == 0.0 {
            (0.0, 0.0)
        } else if xi == 0.0 {
            // No client flow: nothing relaxes inventory and A0 is unbounded.
            (f64::INFINITY, 0.0)
        } else {
            (sigma * (gamma / (8.0 * xi)).sqrt(), sigma * (2.0 * gamma * xi).sqrt())
        };
        let b0 = impact_loading(beta, omega);
        Self { a0, xi, omega, b0 }
    }

    /// Approximate optimal quote, `δ0 + (A0/c)(Δ ± 2q) ± (B0/c) x` with `+` on
    /// the bid.
    pub fn approx_quote(&self, curve: &IntensityCurve, q: f64, x: f64, side: Side) -> f64 {
        let c = curve.curvature();
        let s = side.sign();
        curve.delta_zero() + self.a0 / c * (curve.tier_size + s * 2.0 * q) + s * self.b0 / c * x
    }

    /// Marginal value of execution, `-(2A0 - k(1 - B0)) q - B0 x`.
    pub fn p_exec(&self, k: f64, q: f64, x: f64) -> f64 {
        -(2.0 * self.a0 - k * (1.0 - self.b0)) * q - self.b0 * x
    }

    pub fn approx_speed(&self, params: &ModelParams, q: f64, x: f64) -> Result<f64, ClosedFormError> {
        if !(params.eta > 0.0) {
            return Err(ClosedFormError::ZeroEta);
        }
        Ok(optimal_speed(self.p_exec(params.k, q, x), params.psi, params.eta))
    }

    /// Half-width in q of the no-hedging band at `x = 0`, where `|p_E| = ψ`.
    pub fn internalization_half_width(&self, k: f64, psi: f64) -> f64 {
        psi / (2.0 * self.a0 - k * (1.0 - self.b0))
    }

    /// Bid-ask spread implied for one tier at zero inventory, `2(δ0 + A0 Δ / c)`.
    pub fn spread_at_zero(&self, curve: &IntensityCurve) -> f64 {
        2.0 * (curve.delta_zero() + self.a0 * curve.tier_size / curve.curvature())
    }

    /// Integrate the mean-field inventory ODE under the approximate quotes.
    pub fn meanfield_relaxation(
        &self,
        curves: &[IntensityCurve],
        q0: f64,
        horizon: f64,
        step: f64,
    ) -> Result<MeanFieldPath, ClosedFormError> {
        if !(step > 0.0) {
            return Err(ClosedFormError::BadStep(step));
        }
        let drift = |q: f64| -> f64 {
            curves
                .iter()
                .map(|c| {
                    c.tier_size
                        * (c.intensity(self.approx_quote(c, q, 0.0, Side::Bid))
                            - c.intensity(self.approx_quote(c, q, 0.0, Side::Ask)))
                })
                .sum()
        };
        let n = (horizon / step).ceil().max(1.0) as usize;
        let h = horizon / n as f64;
        let mut times = Vec::with_capacity(n + 1);
        let mut nonlinear = Vec::with_capacity(n + 1);
        let mut linearized = Vec::with_capacity(n + 1);
        let mut q = q0;
        for i in 0..=n {
            let t = i as f64 * h;
            times.push(t);
            nonlinear.push(q);
            linearized.push(q0 * (-self.omega * t).exp());
            if i == n {
                break;
            }
            let k1 = drift(q);
            let k2 = drift(q + 0.5 * h * k1);
            let k3 = drift(q + 0.5 * h * k2);
            let k4 = drift(q + h * k3);
            q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        Ok(MeanFieldPath {
            times,
            nonlinear,
            linearized,
        })
    }
}

/// `B0 = β / (β + ω)`, with `B0 = 0` whenever `β = 0`.
pub fn impact_loading(beta: f64, omega: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else if beta.is_infinite() {
        1.0
    } else {
        beta / (beta + omega)
    }
}

/// One-sided client turnover at the myopic quotes, `Σ Δ λ(δ0)`, M/day.
pub fn client_turnover(curves: &[IntensityCurve]) -> f64 {
    curves.iter().map(|c| c.tier_size * c.intensity(c.delta_zero())).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldPath {
    pub times: Vec<f64>,
    pub nonlinear: Vec<f64>,
    /// `q0 exp(-ω t)`
    pub linearized: Vec<f64>,
}

/// Execution Hamiltonian `sup_v p v - ψ|v| - η v² = (|p| - ψ)₊² / (4η)`.
#[inline]
pub fn execution_hamiltonian(p: f64, psi: f64, eta: f64) -> f64 {
    let excess = (p.abs() - psi).max(0.0);
    excess * excess / (4.0 * eta)
}

/// Optimal hedge speed for marginal execution value `p` (M/day); zero inside
/// the band `|p| <= ψ`.
#[inline]
pub fn optimal_speed(p: f64, psi: f64, eta: f64) -> f64 {
    let excess = p.abs() - psi;
    if excess > 0.0 {
        p.signum() * excess / (2.0 * eta)
    } else {
        0.0
    }
}

/// Hedging cost rate `L(v) = ψ|v| + η v²`, bp·M/day.
#[inline]
pub fn hedge_cost(v: f64, psi: f64, eta: f64) -> f64 {
    psi * v.abs() + eta * v * v
}
