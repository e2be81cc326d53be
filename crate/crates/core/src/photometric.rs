//! SSIM and the combined SSIM + L1 photometric residual.
//!
//! Local statistics use a box window (3x3 by default); windows shrink at the
//! image border so the residual field keeps full resolution. Multi-channel
//! inputs get per-channel SSIM averaged afterwards, while the L1 term is the
//! channel-summed norm.

use crate::autodiff::Real;
use crate::field::{Field, ScalarField};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PhotometricError {
    #[error("field dimensions disagree ({0}x{1}x{2} vs {3}x{4}x{5})")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),
    #[error("invalid residual config: {0}")]
    InvalidConfig(String),
}

/// Weighting and stabilization constants of the photometric residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualConfig {
    /// Balance between the SSIM and L1 components, in [0, 1].
    pub alpha: f64,
    /// SSIM luminance stabilizer (intensity^2 units).
    pub c1: f64,
    /// SSIM contrast stabilizer (intensity^2 units).
    pub c2: f64,
    /// Odd box-window side length in pixels.
    pub window: usize,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig { alpha: 0.85, c1: 0.0009, c2: 0.0001, window: 3 }
    }
}

impl ResidualConfig {
    pub fn validate(&self) -> Result<(), PhotometricError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PhotometricError::InvalidConfig(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(PhotometricError::InvalidConfig(format!(
                "c1 and c2 must be positive, got {} and {}",
                self.c1, self.c2
            )));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(PhotometricError::InvalidConfig(format!(
                "window must be odd and positive, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

fn check_dims<A, B>(a: &Field<A>, b: &Field<B>) -> Result<(), PhotometricError> {
    if !a.same_dims(b) {
        return Err(PhotometricError::DimensionMismatch(
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels(),
        ));
    }
    Ok(())
}

/// Per-pixel SSIM over box windows, generic over the scalar type.
///
/// Multi-channel inputs produce the per-channel SSIM averaged into a single
/// channel.
pub fn ssim_field<T: Real>(
    a: &Field<T>,
    b: &Field<T>,
    cfg: &ResidualConfig,
) -> Result<Field<T>, PhotometricError> {
    cfg.validate()?;
    check_dims(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let r = (cfg.window / 2) as isize;
    let c1 = T::from_f64(cfg.c1);
    let c2 = T::from_f64(cfg.c2);
    let two = T::from_f64(2.0);

    let mut out = Field::filled(w, h, 1, T::zero());
    for y in 0..h {
        for x in 0..w {
            let x_lo = (x as isize - r).max(0) as usize;
            let x_hi = ((x as isize + r) as usize).min(w - 1);
            let y_lo = (y as isize - r).max(0) as usize;
            let y_hi = ((y as isize + r) as usize).min(h - 1);
            let count = T::from_f64(((x_hi - x_lo + 1) * (y_hi - y_lo + 1)) as f64);

            let mut acc = T::zero();
            for c in 0..ch {
                let mut sum_a = T::zero();
                let mut sum_b = T::zero();
                let mut sum_aa = T::zero();
                let mut sum_bb = T::zero();
                let mut sum_ab = T::zero();
                for wy in y_lo..=y_hi {
                    for wx in x_lo..=x_hi {
                        let va = a.get(wx, wy, c);
                        let vb = b.get(wx, wy, c);
                        sum_a = sum_a + va;
                        sum_b = sum_b + vb;
                        sum_aa = sum_aa + va * va;
                        sum_bb = sum_bb + vb * vb;
                        sum_ab = sum_ab + va * vb;
                    }
                }
                let mu_a = sum_a / count;
                let mu_b = sum_b / count;
                let var_a = sum_aa / count - mu_a * mu_a;
                let var_b = sum_bb / count - mu_b * mu_b;
                let cov = sum_ab / count - mu_a * mu_b;

                let ssim = ((two * mu_a * mu_b + c1) * (two * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                acc = acc + ssim;
            }
            out.set(x, y, 0, acc / T::from_f64(ch as f64));
        }
    }
    Ok(out)
}

/// Per-pixel SSIM map between two fields.
pub fn ssim_map(
    a: &ScalarField,
    b: &ScalarField,
    cfg: &ResidualConfig,
) -> Result<ScalarField, PhotometricError> {
    ssim_field(a, b, cfg)
}

/// Photometric residual r = alpha/2 (1 - SSIM) + (1 - alpha) |a - b|_1,
/// generic over the scalar type.
pub fn residual_field<T: Real>(
    target: &Field<T>,
    synth: &Field<T>,
    cfg: &ResidualConfig,
) -> Result<Field<T>, PhotometricError> {
    let ssim = ssim_field(target, synth, cfg)?;
    let (w, h, ch) = (target.width(), target.height(), target.channels());
    let half_alpha = T::from_f64(cfg.alpha / 2.0);
    let one_minus_alpha = T::from_f64(1.0 - cfg.alpha);
    let one = T::one();

    let mut out = Field::filled(w, h, 1, T::zero());
    for y in 0..h {
        for x in 0..w {
            let mut l1 = T::zero();
            for c in 0..ch {
                l1 = l1 + (target.get(x, y, c) - synth.get(x, y, c)).abs();
            }
            let r = half_alpha * (one - ssim.at(x, y)) + one_minus_alpha * l1;
            out.set(x, y, 0, r);
        }
    }
    Ok(out)
}

/// Photometric residual map between the target image and a synthesized one.
pub fn residual_map(
    target: &ScalarField,
    synth: &ScalarField,
    cfg: &ResidualConfig,
) -> Result<ScalarField, PhotometricError> {
    residual_field(target, synth, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(w: usize, h: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(w, h, 1, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identical_fields_have_ssim_one_and_zero_residual() {
        let cfg = ResidualConfig::default();
        let a = random_field(9, 7, 1);
        let ssim = ssim_map(&a, &a, &cfg).unwrap();
        let res = residual_map(&a, &a, &cfg).unwrap();
        for &s in ssim.data() {
            assert!((s - 1.0).abs() < 1e-9);
        }
        for &r in res.data() {
            assert!(r.abs() < 1e-9);
        }
    }

    // Zero-variance closed form: constant images a = 0.25, b = 0.75 give
    // SSIM = (2*0.25*0.75 + c1)/(0.25^2 + 0.75^2 + c1) * (c2/c2) everywhere.
    #[test]
    fn constant_images_match_zero_variance_closed_form() {
        let cfg = ResidualConfig::default();
        let a = ScalarField::filled(6, 6, 1, 0.25);
        let b = ScalarField::filled(6, 6, 1, 0.75);
        let expected = (2.0 * 0.25 * 0.75 + cfg.c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + cfg.c1);
        let ssim = ssim_map(&a, &b, &cfg).unwrap();
        for &s in ssim.data() {
            assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        }

        let res = residual_map(&a, &b, &cfg).unwrap();
        let expected_r = cfg.alpha / 2.0 * (1.0 - expected) + (1.0 - cfg.alpha) * 0.5;
        for &r in res.data() {
            assert!((r - expected_r).abs() < 1e-12);
        }
    }

    // Naive double-loop oracle evaluating the windowed statistics from
    // scratch at each pixel.
    fn naive_ssim(a: &ScalarField, b: &ScalarField, cfg: &ResidualConfig) -> ScalarField {
        let (w, h) = (a.width(), a.height());
        let r = (cfg.window / 2) as isize;
        ScalarField::from_fn(w, h, 1, |x, y, _| {
            let mut va = Vec::new();
            let mut vb = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let xx = x as isize + dx;
                    let yy = y as isize + dy;
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        va.push(a.at(xx as usize, yy as usize));
                        vb.push(b.at(xx as usize, yy as usize));
                    }
                }
            }
            let n = va.len() as f64;
            let mu_a: f64 = va.iter().sum::<f64>() / n;
            let mu_b: f64 = vb.iter().sum::<f64>() / n;
            let var_a = va.iter().map(|v| (v - mu_a).powi(2)).sum::<f64>() / n;
            let var_b = vb.iter().map(|v| (v - mu_b).powi(2)).sum::<f64>() / n;
            let cov = va
                .iter()
                .zip(&vb)
                .map(|(x, y)| (x - mu_a) * (y - mu_b))
                .sum::<f64>()
                / n;
            (2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2)
                / ((mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2))
        })
    }

    #[test]
    fn ssim_matches_naive_windowed_oracle() {
        let cfg = ResidualConfig::default();
        let a = random_field(11, 8, 7);
        let b = random_field(11, 8, 8);
        let got = ssim_map(&a, &b, &cfg).unwrap();
        let want = naive_ssim(&a, &b, &cfg);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn residual_matches_direct_formula_oracle() {
        let cfg = ResidualConfig::default();
        let a = random_field(10, 9, 17);
        let b = random_field(10, 9, 18);
        let got = residual_map(&a, &b, &cfg).unwrap();
        let ssim = naive_ssim(&a, &b, &cfg);
        for y in 0..9 {
            for x in 0..10 {
                let want = cfg.alpha / 2.0 * (1.0 - ssim.at(x, y))
                    + (1.0 - cfg.alpha) * (a.at(x, y) - b.at(x, y)).abs();
                assert!((got.at(x, y) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn residual_is_nonnegative_and_symmetric_ssim_bounded() {
        let cfg = ResidualConfig::default();
        for seed in 0..5 {
            let a = random_field(8, 8, 100 + seed);
            let b = random_field(8, 8, 200 + seed);
            let r_ab = residual_map(&a, &b, &cfg).unwrap();
            let r_ba = residual_map(&b, &a, &cfg).unwrap();
            let s = ssim_map(&a, &b, &cfg).unwrap();
            for i in 0..r_ab.data().len() {
                assert!(r_ab.data()[i] >= 0.0);
                assert!((r_ab.data()[i] - r_ba.data()[i]).abs() < 1e-12);
                assert!(s.data()[i] >= -1.0 - 1e-12 && s.data()[i] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn residual_derivative_wrt_synth_matches_finite_differences() {
        let cfg = ResidualConfig::default();
        let a = random_field(7, 7, 31);
        let b = random_field(7, 7, 32);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let px = rng.random_range(0..7usize);
            let py = rng.random_range(0..7usize);
            // Seed one synthesized pixel as the dual variable.
            let a_d = a.lift::<Dual<1>>();
            let mut b_d = b.lift::<Dual<1>>();
            b_d.set(px, py, 0, Dual::variable(b.at(px, py), 0));
            let res_d = residual_field(&a_d, &b_d, &cfg).unwrap();

            let mut bp = b.clone();
            bp.set(px, py, 0, b.at(px, py) + h);
            let mut bm = b.clone();
            bm.set(px, py, 0, b.at(px, py) - h);
            let rp = residual_map(&a, &bp, &cfg).unwrap();
            let rm = residual_map(&a, &bm, &cfg).unwrap();

            // The perturbed pixel influences every window containing it.
            for y in 0..7 {
                for x in 0..7 {
                    let analytic = res_d.at(x, y).d[0];
                    let fd = (rp.at(x, y) - rm.at(x, y)) / (2.0 * h);
                    let denom = analytic.abs().max(fd.abs());
                    if denom > 1e-7 {
                        assert!(
                            (analytic - fd).abs() / denom < 1e-4,
                            "pixel ({x},{y}): {analytic} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = ResidualConfig::default();
        cfg.alpha = 1.5;
        assert!(cfg.validate().is_err());
        cfg = ResidualConfig::default();
        cfg.window = 4;
        assert!(cfg.validate().is_err());
        cfg = ResidualConfig::default();
        cfg.c2 = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = ResidualConfig::default();
        let a = ScalarField::filled(4, 4, 1, 0.0);
        let b = ScalarField::filled(4, 5, 1, 0.0);
        assert!(matches!(
            ssim_map(&a, &b, &cfg),
            Err(PhotometricError::DimensionMismatch(..))
        ));
    }
}
