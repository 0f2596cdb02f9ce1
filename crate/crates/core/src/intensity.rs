//! Client arrival intensities and the per-tier OTC Hamiltonian.
//!
//! For a tier with intensity `λ(δ)` the dealer's myopic quoting problem at
//! marginal inventory cost `p` is `H(p) = sup_δ λ(δ)(δ - p)`. Everything here
//! is computed on the unit-amplitude curve and scaled by `λ0`, so the
//! maximizers, `δ0` and `c` are exactly invariant under amplitude scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::Tier;

const NEWTON_MAX_ITER: usize = 100;
const GOLDEN_MAX_ITER: usize = 400;
const INVERSE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntensityError {
    #[error("invalid intensity parameters: {0}")]
    InvalidParameter(String),
    #[error("maximizer search did not converge at p = {p}")]
    NonConvergence { p: f64 },
}

/// Shape of the intensity curve with unit amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntensityShape {
    /// `1 / (1 + exp(a + b δ))`
    Sigmoid { a: f64, b: f64 },
    /// `exp(-b δ)`; only used as a reference family in tests and checks.
    Exponential { b: f64 },
}

impl IntensityShape {
    pub fn slope(&self) -> f64 {
        match *self {
            IntensityShape::Sigmoid { b, .. } | IntensityShape::Exponential { b } => b,
        }
    }

    #[inline]
    fn unit(&self, delta: f64) -> f64 {
        match *self {
            IntensityShape::Sigmoid { a, b } => logistic_tail(a + b * delta),
            IntensityShape::Exponential { b } => (-b * delta).exp(),
        }
    }

    /// `λ'/λ` and `λ''/λ`, which stay well scaled where `λ` itself underflows.
    #[inline]
    fn log_derivatives(&self, delta: f64) -> (f64, f64) {
        match *self {
            IntensityShape::Sigmoid { a, b } => {
                let s = logistic_tail(a + b * delta);
                let one_minus = logistic_tail(-(a + b * delta));
                (-b * one_minus, b * b * one_minus * (1.0 - 2.0 * s))
            }
            IntensityShape::Exponential { b } => (-b, b * b),
        }
    }
}

/// `1 / (1 + e^u)` without overflow.
#[inline]
fn logistic_tail(u: f64) -> f64 {
    if u > 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

/// Value of the OTC Hamiltonian and the quote that attains it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianPoint {
    /// `H(p)`, 1/day * bp
    pub value: f64,
    /// Optimal half-spread `δ*(p)`, bp
    pub maximizer: f64,
    /// Intensity at the maximizer, which is `-H'(p)`.
    pub rate: f64,
}

/// Intensity curve of one ladder tier, with the stationary constants cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurve {
    pub lambda0: f64,
    pub shape: IntensityShape,
    pub tier_size: f64,
    delta0: f64,
    c: f64,
    h2_at_0: f64,
}

impl IntensityCurve {
    pub fn new(lambda0: f64, shape: IntensityShape, tier_size: f64) -> Result<Self, IntensityError> {
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(IntensityError::InvalidParameter(format!("lambda0 = {lambda0}")));
        }
        let b = shape.slope();
        if !(b > 0.0) || !b.is_finite() {
            return Err(IntensityError::InvalidParameter(format!("slope b = {b}")));
        }
        if let IntensityShape::Sigmoid { a, .. } = shape {
            if !a.is_finite() {
                return Err(IntensityError::InvalidParameter(format!("offset a = {a}")));
            }
        }
        let mut curve = Self {
            lambda0,
            shape,
            tier_size,
            delta0: f64::NAN,
            c: f64::NAN,
            h2_at_0: f64::NAN,
        };
        let delta0 = curve.unit_maximizer(0.0)?;
        curve.delta0 = delta0;
        curve.c = curve.curvature_generic(delta0);
        curve.h2_at_0 = curve.intensity(delta0) / (delta0 * curve.c);
        Ok(curve)
    }

    pub fn sigmoid(lambda0: f64, a: f64, b: f64, tier_size: f64) -> Result<Self, IntensityError> {
        Self::new(lambda0, IntensityShape::Sigmoid { a, b }, tier_size)
    }

    pub fn exponential(lambda0: f64, b: f64, tier_size: f64) -> Result<Self, IntensityError> {
        Self::new(lambda0, IntensityShape::Exponential { b }, tier_size)
    }

    pub fn from_tier(tier: &Tier) -> Result<Self, IntensityError> {
        Self::sigmoid(tier.lambda0, tier.a, tier.b, tier.size)
    }

    /// `λ(δ)`, trades per day.
    #[inline]
    pub fn intensity(&self, delta: f64) -> f64 {
        self.lambda0 * self.shape.unit(delta)
    }

    pub fn derivative(&self, delta: f64) -> f64 {
        self.intensity(delta) * self.shape.log_derivatives(delta).0
    }

    pub fn second_derivative(&self, delta: f64) -> f64 {
        self.intensity(delta) * self.shape.log_derivatives(delta).1
    }

    /// Quote that produces a given arrival rate. The rate is clamped into
    /// `(λ0·1e-12, λ0·(1-1e-12))`; the flag reports whether clamping happened.
    pub fn inverse(&self, rate: f64) -> (f64, bool) {
        let lo = self.lambda0 * INVERSE_CLAMP;
        let hi = self.lambda0 * (1.0 - INVERSE_CLAMP);
        let clamped = !(rate > lo && rate < hi);
        let r = rate.clamp(lo, hi) / self.lambda0;
        let delta = match self.shape {
            IntensityShape::Sigmoid { a, b } => ((1.0 / r - 1.0).ln() - a) / b,
            IntensityShape::Exponential { b } => -r.ln() / b,
        };
        (delta, clamped)
    }

    /// Revenue-maximizing half-spread `argmax δ λ(δ)`.
    pub fn delta_zero(&self) -> f64 {
        self.delta0
    }

    /// `c = 2 - λλ''/(λ')²` at `δ0`.
    pub fn curvature(&self) -> f64 {
        self.c
    }

    /// `H''(0) = λ(δ0) / (δ0 c)`.
    pub fn h2_at_zero(&self) -> f64 {
        self.h2_at_0
    }

    fn curvature_generic(&self, delta: f64) -> f64 {
        let lam = self.shape.unit(delta);
        let d1 = lam * self.shape.log_derivatives(delta).0;
        let d2 = lam * self.shape.log_derivatives(delta).1;
        2.0 - lam * d2 / (d1 * d1)
    }

    /// Closed form of `c` for the sigmoid family, `1 + exp(-(a + b δ0))`.
    /// `None` for other shapes.
    pub fn curvature_sigmoid_closed_form(&self) -> Option<f64> {
        match self.shape {
            IntensityShape::Sigmoid { a, b } => Some(1.0 + (-(a + b * self.delta0)).exp()),
            IntensityShape::Exponential { .. } => None,
        }
    }

    /// `H(p) = sup_δ λ(δ)(δ - p)` with its maximizer.
    pub fn hamiltonian(&self, p: f64) -> Result<HamiltonianPoint, IntensityError> {
        let delta = self.unit_maximizer(p)?;
        let rate = self.intensity(delta);
        Ok(HamiltonianPoint {
            value: rate * (delta - p),
            maximizer: delta,
            rate,
        })
    }

    /// `H'(p) = -λ(δ*(p))` by the envelope theorem.
    pub fn hamiltonian_prime(&self, p: f64) -> Result<f64, IntensityError> {
        Ok(-self.hamiltonian(p)?.rate)
    }

    /// Normalized first-order condition `1 + (δ - p) λ'/λ` and its derivative.
    #[inline]
    fn foc(&self, p: f64, delta: f64) -> (f64, f64) {
        let (l1, l2) = self.shape.log_derivatives(delta);
        let r = 1.0 + (delta - p) * l1;
        // d/dδ (λ'/λ) = λ''/λ - (λ'/λ)²
        let dr = l1 + (delta - p) * (l2 - l1 * l1);
        (r, dr)
    }

    /// Maximizer of `u(δ)(δ - p)` for the unit curve: safeguarded Newton on
    /// the first-order condition, golden section as the fallback.
    fn unit_maximizer(&self, p: f64) -> Result<f64, IntensityError> {
        let b = self.shape.slope();
        if !p.is_finite() {
            return Err(IntensityError::NonConvergence { p });
        }
        // The FOC residual is positive at δ = p; widen until it turns negative.
        let lo0 = p;
        let mut width = 10.0 / b;
        let mut hi0 = p + width;
        let mut expansions = 0;
        while self.foc(p, hi0).0 >= 0.0 {
            width *= 2.0;
            hi0 = p + width;
            expansions += 1;
            if expansions > 60 {
                return Err(IntensityError::NonConvergence { p });
            }
        }

        let (mut lo, mut hi) = (lo0, hi0);
        let mut delta = p + 1.0 / b;
        let scale = 1.0 + p.abs() + width;
        for _ in 0..NEWTON_MAX_ITER {
            let (r, dr) = self.foc(p, delta);
            if r.abs() <= 1e-15 {
                return Ok(delta);
            }
            if r > 0.0 {
                lo = delta;
            } else {
                hi = delta;
            }
            let mut next = delta - r / dr;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - delta).abs() <= 4.0 * f64::EPSILON * scale {
                return Ok(next);
            }
            delta = next;
        }
        self.golden_section(p, lo0, hi0)
    }

    fn golden_section(&self, p: f64, mut lo: f64, mut hi: f64) -> Result<f64, IntensityError> {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let objective = |d: f64| self.shape.unit(d) * (d - p);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = objective(x1);
        let mut f2 = objective(x2);
        for _ in 0..GOLDEN_MAX_ITER {
            if (hi - lo).abs() <= 1e-13 * (1.0 + p.abs()) {
                return Ok(0.5 * (lo + hi));
            }
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = objective(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = objective(x1);
            }
        }
        Err(IntensityError::NonConvergence { p })
    }
}

/// `ξ = Σ H''(0) Δ`, summed over the ladder.
pub fn xi(curves: &[IntensityCurve]) -> f64 {
    curves.iter().map(|c| c.h2_at_zero() * c.tier_size).sum()
}

pub fn curves_from_tiers(tiers: &[Tier]) -> Result<Vec<IntensityCurve>, IntensityError> {
    tiers.iter().map(IntensityCurve::from_tier).collect()
}

/// Tabulated unit-amplitude Hamiltonian on a uniform grid in `p`, evaluated
/// by cubic Hermite interpolation of `H` and `H'`. Outside the table the
/// exact solve is used.
#[derive(Debug, Clone)]
pub struct HamiltonianTable {
    curve: IntensityCurve,
    p_min: f64,
    inv_step: f64,
    step: f64,
    /// Interleaved `(H, H')` per node for the unit curve.
    nodes: Vec<[f64; 2]>,
}

impl HamiltonianTable {
    /// Default table span (bp either side of zero) and spacing for a curve of
    /// slope `b`.
    pub fn for_curve(curve: &IntensityCurve) -> Result<Self, IntensityError> {
        let b = curve.shape.slope();
        // Hermite error scales as (b h)^4; b h = 2e-3 keeps it near 1e-13 of H(0).
        Self::new(curve, -40.0 / b, 40.0 / b, 2e-3 / b)
    }

    pub fn new(curve: &IntensityCurve, p_min: f64, p_max: f64, step: f64) -> Result<Self, IntensityError> {
        let unit = IntensityCurve {
            lambda0: 1.0,
            ..curve.clone()
        };
        let n = ((p_max - p_min) / step).ceil() as usize + 1;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let p = p_min + i as f64 * step;
            let h = unit.hamiltonian(p)?;
            nodes.push([h.value, -h.rate]);
        }
        Ok(Self {
            curve: curve.clone(),
            p_min,
            inv_step: 1.0 / step,
            step,
            nodes,
        })
    }

    pub fn curve(&self) -> &IntensityCurve {
        &self.curve
    }

    /// `H(p)` for the table's curve, including its amplitude.
    #[inline]
    pub fn value(&self, p: f64) -> f64 {
        let s = (p - self.p_min) * self.inv_step;
        let i = s.floor();
        if !(i >= 0.0) || i as usize + 1 >= self.nodes.len() {
            return self
                .curve
                .hamiltonian(p)
                .map(|h| h.value)
                .unwrap_or(f64::NAN);
        }
        let idx = i as usize;
        let t = s - i;
        let [h0, d0] = self.nodes[idx];
        let [h1, d1] = self.nodes[idx + 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        self.curve.lambda0 * (h00 * h0 + h10 * self.step * d0 + h01 * h1 + h11 * self.step * d1)
    }
}
