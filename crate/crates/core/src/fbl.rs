//! Finite-blocklength channel usage (normal approximation).
//!
//! `R ≈ D/C + q²V/(2C²)·[1 + √(1 + 4DC/(q²V))]` with `q = Q⁻¹(ε)`,
//! `C = log₂(1+γ)` and `V = (1 − (1+γ)⁻²)/ln²2`.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Error, Result};

/// `log₂(1 + γ)`, bits per channel use.
pub fn shannon_capacity(sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::Domain(format!("SINR must be non-negative, got {sinr}")));
    }
    Ok(sinr.ln_1p() / LN_2)
}

/// Channel dispersion `(1 − 1/(1+γ)²) / ln²2`.
pub fn channel_dispersion(sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::Domain(format!("SINR must be non-negative, got {sinr}")));
    }
    let inv = 1.0 / (1.0 + sinr);
    Ok((1.0 - inv * inv) / (LN_2 * LN_2))
}

/// Standard normal upper tail `Q(x) = ½·erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

// Rational approximation of the standard normal quantile (P. J. Acklam),
// relative error ≈ 1.2e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549671010331170e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

/// Lower-tail quantile `Φ⁻¹(p)` for `0 < p ≤ ½`.
fn lower_quantile_initial(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse Q-function: the `q` with `Q(q) = ε`.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("Q⁻¹ needs ε in (0, 1), got {eps}")));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Solve in the lower tail where Φ(x) = ½·erfc(−x/√2) keeps full relative accuracy.
    let (p, sign) = if eps < 0.5 { (eps, 1.0) } else { (1.0 - eps, -1.0) };
    let mut x = lower_quantile_initial(p);
    for _ in 0..2 {
        let e = 0.5 * libm::erfc(-x / SQRT_2) - p;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    // Q⁻¹(ε) = −Φ⁻¹(ε)
    Ok(-sign * x)
}

/// Inputs of one channel-usage computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationRequest {
    pub payload_bits: f64,
    pub target_bler: f64,
    pub predicted_sinr: f64,
}

impl AllocationRequest {
    pub fn new(payload_bits: f64, target_bler: f64, predicted_sinr: f64) -> Self {
        Self {
            payload_bits,
            target_bler,
            predicted_sinr,
        }
    }
}

/// Precomputed `q = Q⁻¹(ε)` and `D` for repeated allocations at one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocator {
    pub payload_bits: f64,
    pub target_bler: f64,
    q: f64,
}

impl Allocator {
    pub fn new(payload_bits: f64, target_bler: f64) -> Result<Self> {
        if !(payload_bits >= 1.0) {
            return Err(Error::Domain(format!("payload must be at least 1 bit, got {payload_bits}")));
        }
        Ok(Self {
            payload_bits,
            target_bler,
            q: q_inv(target_bler)?,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Channel uses needed at `predicted_sinr`, real-valued.
    pub fn channel_usage(&self, predicted_sinr: f64) -> Result<f64> {
        if !(predicted_sinr > 0.0) || !predicted_sinr.is_finite() {
            return Err(Error::InfeasibleAllocation(predicted_sinr));
        }
        let c = shannon_capacity(predicted_sinr)?;
        if !(c > 0.0) {
            return Err(Error::InfeasibleAllocation(predicted_sinr));
        }
        let v = channel_dispersion(predicted_sinr)?;
        let d = self.payload_bits;
        let qqv = self.q * self.q * v;
        if qqv == 0.0 {
            // q = 0 or V = 0: the penalty term vanishes in the limit.
            return Ok(d / c);
        }
        Ok(d / c + qqv / (2.0 * c * c) * (1.0 + (1.0 + 4.0 * d * c / qqv).sqrt()))
    }
}

pub fn channel_usage(request: &AllocationRequest) -> Result<f64> {
    Allocator::new(request.payload_bits, request.target_bler)?.channel_usage(request.predicted_sinr)
}

/// Integer channel uses for reporting.
pub fn channel_usage_ceil(request: &AllocationRequest) -> Result<u64> {
    Ok(channel_usage(request)?.ceil() as u64)
}

/// `γ̂ = p|h|² / (Î + σ²)`.
pub fn predicted_sinr(desired_power: f64, predicted_interference: f64, noise: f64) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(Error::NonPositiveNoise(noise));
    }
    if !(predicted_interference >= 0.0) {
        return Err(Error::Domain(format!(
            "predicted interference must be non-negative, got {predicted_interference}"
        )));
    }
    Ok(desired_power / (predicted_interference + noise))
}
