//! Closed-form estimators relating decoherence, disorder and coupling.
//!
//! Everything is in ħ = 1 units: energies and rates in rad/ps, times in ps,
//! lengths in sites. Prefactor ambiguities (factors of π, powers of ħ) are
//! folded into the O(1) constant α.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn require_non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn require_correlation(c: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::invalid(format!("correlation must lie in [-1, 1], got {c}")))
    }
}

/// Λ = d ℓ / 2J. Transport is most efficient near Λ ≈ 1.
pub fn lambda_param(d: f64, ell: f64, j: f64) -> Result<f64> {
    require_positive("dephasing rate d", d)?;
    require_positive("localization length", ell)?;
    require_positive("coupling J", j)?;
    Ok(d * ell / (2.0 * j))
}

/// Λ = d / 2Ω with Ω = √(J² + Δ²), the strongly localized (ℓ < 1) form.
pub fn lambda_localized(d: f64, j: f64, delta: f64) -> Result<f64> {
    require_non_negative("dephasing rate d", d)?;
    if !(j.is_finite() && delta.is_finite()) {
        return Err(Error::invalid("J and delta must be finite"));
    }
    let omega = j.hypot(delta);
    if omega == 0.0 {
        return Err(Error::invalid("J and delta cannot both be zero"));
    }
    Ok(d / (2.0 * omega))
}

/// Microscopic bath parameters, all in rad/ps except the dimensionless α and c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroParams {
    pub alpha: f64,
    pub c: f64,
    pub lambda_reorg: f64,
    pub kt: f64,
    pub gamma: f64,
    pub delta_e: f64,
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("alpha", self.alpha)?;
        require_correlation(self.c)?;
        require_positive("reorganization energy", self.lambda_reorg)?;
        require_positive("kT", self.kt)?;
        require_positive("gamma", self.gamma)?;
        require_non_negative("band splitting", self.delta_e)
    }

    /// Decoherence rate implied by these parameters.
    pub fn decoherence_rate(&self) -> Result<f64> {
        decoherence_rate(self.alpha, self.c, self.lambda_reorg, self.kt, self.gamma)
    }
}

/// Λ = α (1 − c) λ kT / (γ ΔE).
pub fn lambda_micro(p: &MicroParams) -> Result<f64> {
    p.validate()?;
    if p.delta_e == 0.0 {
        return Err(Error::invalid("band splitting must be non-zero"));
    }
    Ok(p.alpha * (1.0 - p.c) * p.lambda_reorg * p.kt / (p.gamma * p.delta_e))
}

/// High-temperature relative dephasing rate d = α (1 − c) λ kT / γ.
pub fn decoherence_rate(alpha: f64, c: f64, lambda_reorg: f64, kt: f64, gamma: f64) -> Result<f64> {
    require_positive("gamma", gamma)?;
    require_correlation(c)?;
    for (name, v) in [("alpha", alpha), ("reorganization energy", lambda_reorg), ("kT", kt)] {
        require_non_negative(name, v)?;
    }
    Ok(alpha * (1.0 - c) * lambda_reorg * kt / gamma)
}

/// Unclamped transient localization length (J/Δω)² in sites; infinite for
/// Δω = 0.
pub fn transient_localization_length(j: f64, delta_omega: f64) -> f64 {
    if delta_omega == 0.0 {
        f64::INFINITY
    } else {
        (j / delta_omega).powi(2)
    }
}

/// ℓ = (J/Δω)² clamped to [1, n − 1]; n − 1 when there is no disorder.
pub fn theory_localization(j: f64, delta_omega: f64, n: usize) -> f64 {
    let cap = n.saturating_sub(1).max(1) as f64;
    transient_localization_length(j, delta_omega).clamp(1.0, cap)
}

/// Time to cross ℓ sites coherently, τ = ℓ / 2J.
pub fn localization_time(j: f64, ell: f64) -> Result<f64> {
    require_positive("coupling J", j)?;
    require_positive("localization length", ell)?;
    Ok(ell / (2.0 * j))
}

/// Optimal dephasing rate d* = 2J/ℓ (= ΔE/π).
pub fn optimal_dephasing(j: f64, ell: f64) -> Result<f64> {
    require_positive("coupling J", j)?;
    require_positive("localization length", ell)?;
    Ok(2.0 * j / ell)
}

/// Mean level spacing within a localization volume, ΔE = 2πJ/ℓ.
pub fn band_splitting(j: f64, ell: f64) -> Result<f64> {
    require_positive("coupling J", j)?;
    require_positive("localization length", ell)?;
    Ok(std::f64::consts::TAU * j / ell)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateResult {
    /// Largest transfer probability, J²/Ω².
    pub p_max: f64,
    /// Ω = √(J² + Δ²).
    pub omega: f64,
    /// First time the maximum is reached, π/2Ω.
    pub t_peak: f64,
}

/// Coherent transfer between two sites with energies {0, 2Δ} coupled by J.
pub fn two_state(j: f64, delta: f64) -> Result<TwoStateResult> {
    require_positive("coupling J", j)?;
    if !delta.is_finite() {
        return Err(Error::invalid("delta must be finite"));
    }
    let omega = j.hypot(delta);
    Ok(TwoStateResult {
        p_max: (j / omega).powi(2),
        omega,
        t_peak: std::f64::consts::FRAC_PI_2 / omega,
    })
}

/// Spread after time t at the optimal dephasing rate, r = √(2tJℓ).
pub fn optimal_spread(t: f64, j: f64, ell: f64) -> Result<f64> {
    require_positive("time", t)?;
    require_positive("coupling J", j)?;
    require_positive("localization length", ell)?;
    Ok((2.0 * t * j * ell).sqrt())
}
