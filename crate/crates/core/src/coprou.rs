//! Effective-uncertainty fusion, the Laplace negative log-likelihood, and
//! the numeric machinery validating the Laplace-difference derivation.
//!
//! The combined mode fuses the target uncertainty with the uncertainty
//! warped in from the reference frame as sqrt(s_t^2 + s_syn^2); the
//! single-target mode keeps only the target map and exists as the ablation
//! baseline. The difference of two independent Laplace variables is not
//! itself Laplace; its closed-form density and moments live here so they can
//! be checked against quadrature.

use crate::autodiff::Real;
use crate::field::{Field, ScalarField};
use thiserror::Error;

/// Default lower clamp for effective uncertainties (intensity units);
/// bounds both log(sigma) and 1/sigma.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum CoprouError {
    #[error("field dimensions disagree")]
    DimensionMismatch,
    #[error("uncertainty inputs must be strictly positive (found {0})")]
    NonPositiveInput(f64),
    #[error("sigma must be strictly positive (found {0})")]
    NonPositiveSigma(f64),
    #[error("scale parameters must be positive (sigma1={0}, sigma2={1})")]
    NonPositiveScale(f64, f64),
}

/// Which uncertainties enter the effective scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyMode {
    /// sqrt(sigma_t^2 + sigma_syn^2): both frames contribute.
    Combined,
    /// Only the target-frame uncertainty (ablation baseline).
    SingleTarget,
}

/// Per-pixel effective scale, generic over the scalar type.
pub fn effective_sigma_value<T: Real>(sigma_t: T, sigma_syn: T, mode: UncertaintyMode, floor: T) -> T {
    let fused = match mode {
        UncertaintyMode::Combined => (sigma_t * sigma_t + sigma_syn * sigma_syn).sqrt(),
        UncertaintyMode::SingleTarget => sigma_t,
    };
    fused.max(floor)
}

/// Fuse the target uncertainty map with the synthesized (warped reference)
/// one, clamping below at `floor`.
pub fn effective_sigma(
    sigma_t: &ScalarField,
    sigma_syn: &ScalarField,
    mode: UncertaintyMode,
    floor: f64,
) -> Result<ScalarField, CoprouError> {
    if !sigma_t.same_dims(sigma_syn) {
        return Err(CoprouError::DimensionMismatch);
    }
    let min = sigma_t.min_value().min(sigma_syn.min_value());
    if min <= 0.0 {
        return Err(CoprouError::NonPositiveInput(min));
    }
    let mut out = Field::filled(sigma_t.width(), sigma_t.height(), sigma_t.channels(), 0.0);
    for (i, slot) in out.data_mut().iter_mut().enumerate() {
        *slot = effective_sigma_value(sigma_t.data()[i], sigma_syn.data()[i], mode, floor);
    }
    Ok(out)
}

/// Laplace negative log-likelihood per pixel: r/sigma + log(sigma), with the
/// additive constant dropped.
pub fn laplace_nll_map(
    residual: &ScalarField,
    sigma_eff: &ScalarField,
) -> Result<ScalarField, CoprouError> {
    if !residual.same_dims(sigma_eff) {
        return Err(CoprouError::DimensionMismatch);
    }
    let min = sigma_eff.min_value();
    if min <= 0.0 {
        return Err(CoprouError::NonPositiveSigma(min));
    }
    let mut out = Field::filled(residual.width(), residual.height(), residual.channels(), 0.0);
    for (i, slot) in out.data_mut().iter_mut().enumerate() {
        let s = sigma_eff.data()[i];
        *slot = residual.data()[i] / s + s.ln();
    }
    Ok(out)
}

/// Two independent Laplace variables A ~ Laplace(mu1, sigma1) and
/// B ~ Laplace(mu2, sigma2) whose difference R = A - B is under study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacePair {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl LaplacePair {
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64) -> Result<Self, CoprouError> {
        if sigma1 <= 0.0 || sigma2 <= 0.0 {
            return Err(CoprouError::NonPositiveScale(sigma1, sigma2));
        }
        Ok(LaplacePair { mu1, mu2, sigma1, sigma2 })
    }

    pub fn delta(&self) -> f64 {
        self.mu1 - self.mu2
    }
}

/// Density of R = A - B at `r`.
///
/// Closed form (sigma2 e^{-|r-d|/sigma2} - sigma1 e^{-|r-d|/sigma1})
/// / (2 (sigma2^2 - sigma1^2)); near-equal scales take the sigma2 -> sigma1
/// limit (1 + |r-d|/s) e^{-|r-d|/s} / (4 s), where the closed form is 0/0.
pub fn laplace_diff_density(pair: &LaplacePair, r: f64) -> f64 {
    let c = (r - pair.delta()).abs();
    let (s1, s2) = (pair.sigma1, pair.sigma2);
    if (s2 - s1).abs() <= 1e-7 * s1.max(s2) {
        let s = 0.5 * (s1 + s2);
        (1.0 + c / s) * (-c / s).exp() / (4.0 * s)
    } else {
        (s2 * (-c / s2).exp() - s1 * (-c / s1).exp()) / (2.0 * (s2 * s2 - s1 * s1))
    }
}

/// Closed-form (mean, variance) of R = A - B:
/// mean = mu1 - mu2, variance = 2 (sigma1^2 + sigma2^2).
pub fn laplace_diff_moments(pair: &LaplacePair) -> (f64, f64) {
    (
        pair.delta(),
        2.0 * (pair.sigma1 * pair.sigma1 + pair.sigma2 * pair.sigma2),
    )
}

/// Check-mode moments: numerically integrated mean and variance of
/// [`laplace_diff_density`], via adaptive Simpson over +-60 max(sigma)
/// around the mean (the tails decay exponentially, so truncation is far
/// below the quadrature tolerance).
pub fn laplace_diff_moments_numeric(pair: &LaplacePair) -> (f64, f64) {
    let delta = pair.delta();
    let span = 60.0 * pair.sigma1.max(pair.sigma2);
    let (lo, hi) = (delta - span, delta + span);
    // Split at the |r - delta| kink so each piece is smooth.
    let integrate = |f: &dyn Fn(f64) -> f64| {
        adaptive_simpson(f, lo, delta, QUAD_TOL) + adaptive_simpson(f, delta, hi, QUAD_TOL)
    };
    let mean = integrate(&|r| r * laplace_diff_density(pair, r));
    let var = integrate(&|r| (r - mean).powi(2) * laplace_diff_density(pair, r));
    (mean, var)
}

/// Total mass of the density over the +-60 max(sigma) window; should be 1.
pub fn laplace_diff_mass_numeric(pair: &LaplacePair) -> f64 {
    let delta = pair.delta();
    let span = 60.0 * pair.sigma1.max(pair.sigma2);
    adaptive_simpson(&|r| laplace_diff_density(pair, r), delta - span, delta, QUAD_TOL)
        + adaptive_simpson(&|r| laplace_diff_density(pair, r), delta, delta + span, QUAD_TOL)
}

/// Absolute tolerance of the oracle integrations.
pub const QUAD_TOL: f64 = 1e-9;

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}
