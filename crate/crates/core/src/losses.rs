//! The four training-loss terms, the auto-mask, and the total objective.
//!
//! The photometric and geometry-consistency terms are means over the pixels
//! that both projected successfully and survived the auto-mask; the
//! edge-aware smoothness term is an unmasked sum. An empty valid set is an
//! error, never a zero loss, so degenerate optima cannot pass silently.
//! Everything is generic over the pose scalar, which is how the optimizer
//! obtains analytic pose gradients.

use crate::autodiff::Real;
use crate::coprou::{effective_sigma_value, CoprouError, UncertaintyMode};
use crate::field::{Field, ScalarField, ValidityMask};
use crate::geometry::{CameraIntrinsics, Pose6, Rigid};
use crate::photometric::{residual_field, PhotometricError, ResidualConfig};
use crate::warp::{synthesize_views, SynthesizedViews, WarpError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("field dimensions disagree")]
    DimensionMismatch,
    #[error("no valid pixel after masking; the frame pair is unusable")]
    EmptyValidSet,
    #[error("non-positive depth {0} on a valid pixel")]
    NonPositiveDepth(f64),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Photometric(#[from] PhotometricError),
    #[error(transparent)]
    Coprou(#[from] CoprouError),
}

/// Weighting factors of the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_p: f64,
    pub w_g: f64,
    pub w_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_p: 1.0, w_g: 0.5, w_s: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.w_p < 0.0 || self.w_g < 0.0 || self.w_s < 0.0 {
            return Err(LossError::InvalidWeights(format!(
                "weights must be nonnegative, got ({}, {}, {})",
                self.w_p, self.w_g, self.w_s
            )));
        }
        Ok(())
    }
}

/// Per-term and total loss values with per-pixel maps for inspection.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub geometric: f64,
    pub smoothness: f64,
    pub total: f64,
    pub photometric_map: ScalarField,
    pub geometric_map: ScalarField,
    pub smoothness_map: ScalarField,
    pub valid_count: usize,
}

/// Mean of r/sigma + log(sigma) over masked pixels, with the per-pixel map
/// (zero outside the mask).
pub fn photometric_loss(
    residual: &ScalarField,
    sigma_eff: &ScalarField,
    mask: &ValidityMask,
) -> Result<(f64, ScalarField), LossError> {
    if !residual.same_dims(sigma_eff) || !mask.same_size(residual) {
        return Err(LossError::DimensionMismatch);
    }
    let (w, h) = (residual.width(), residual.height());
    let mut map = ScalarField::filled(w, h, 1, 0.0);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let s = sigma_eff.at(x, y);
            if s <= 0.0 {
                return Err(LossError::Coprou(CoprouError::NonPositiveSigma(s)));
            }
            let v = residual.at(x, y) / s + s.ln();
            map.set(x, y, 0, v);
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(LossError::EmptyValidSet);
    }
    Ok((sum / n as f64, map))
}

/// Mean of |D_syn - D_proj| / (D_syn + D_proj) over masked pixels; values
/// lie in [0, 1).
pub fn geometry_consistency_loss(
    depth_syn: &ScalarField,
    depth_proj: &ScalarField,
    mask: &ValidityMask,
) -> Result<(f64, ScalarField), LossError> {
    if !depth_syn.same_dims(depth_proj) || !mask.same_size(depth_syn) {
        return Err(LossError::DimensionMismatch);
    }
    let (w, h) = (depth_syn.width(), depth_syn.height());
    let mut map = ScalarField::filled(w, h, 1, 0.0);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let a = depth_syn.at(x, y);
            let b = depth_proj.at(x, y);
            if a <= 0.0 || b <= 0.0 {
                return Err(LossError::NonPositiveDepth(a.min(b)));
            }
            let v = (a - b).abs() / (a + b);
            map.set(x, y, 0, v);
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(LossError::EmptyValidSet);
    }
    Ok((sum / n as f64, map))
}

/// Edge-aware smoothness, generic over the scalar type. Forward differences;
/// the x and y terms are summed before squaring; the result is a sum over
/// pixels, not a mean.
pub fn smoothness_field<T: Real>(
    depth: &Field<T>,
    image: &Field<T>,
) -> Result<(T, Field<T>), LossError> {
    if !depth.same_size(image) || depth.channels() != 1 {
        return Err(LossError::DimensionMismatch);
    }
    let (w, h, ch) = (depth.width(), depth.height(), image.channels());
    let inv_ch = T::from_f64(1.0 / ch as f64);
    let mut map = Field::filled(w, h, 1, T::zero());
    let mut total = T::zero();
    for y in 0..h {
        for x in 0..w {
            let mut term = T::zero();
            if x + 1 < w {
                let gd = depth.at(x + 1, y) - depth.at(x, y);
                let mut gi = T::zero();
                for c in 0..ch {
                    gi = gi + (image.get(x + 1, y, c) - image.get(x, y, c)).abs();
                }
                term = term + (-(gi * inv_ch)).exp() * gd;
            }
            if y + 1 < h {
                let gd = depth.at(x, y + 1) - depth.at(x, y);
                let mut gi = T::zero();
                for c in 0..ch {
                    gi = gi + (image.get(x, y + 1, c) - image.get(x, y, c)).abs();
                }
                term = term + (-(gi * inv_ch)).exp() * gd;
            }
            let v = term * term;
            map.set(x, y, 0, v);
            total = total + v;
        }
    }
    Ok((total, map))
}

/// Edge-aware smoothness of a depth map against its image.
pub fn smoothness_loss(
    depth: &ScalarField,
    image: &ScalarField,
) -> Result<(f64, ScalarField), LossError> {
    smoothness_field(depth, image)
}

/// Auto-mask: keep a pixel iff the synthesized image explains the target
/// strictly better than the raw reference does (channel-summed L1).
///
/// Generic in the synthesized image so it can run on the primal values of a
/// dual-number synthesis; the decision is binary and carries no gradient.
pub fn auto_mask_of<T: Real>(
    image_tgt: &ScalarField,
    image_syn: &Field<T>,
    image_ref: &ScalarField,
) -> Result<ValidityMask, LossError> {
    if !image_tgt.same_dims(image_syn) || !image_tgt.same_dims(image_ref) {
        return Err(LossError::DimensionMismatch);
    }
    let (w, h, ch) = (image_tgt.width(), image_tgt.height(), image_tgt.channels());
    let mut mask = ValidityMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let mut d_syn = 0.0;
            let mut d_ref = 0.0;
            for c in 0..ch {
                let t = image_tgt.get(x, y, c);
                d_syn += (t - image_syn.get(x, y, c).value()).abs();
                d_ref += (t - image_ref.get(x, y, c)).abs();
            }
            mask.set(x, y, d_syn < d_ref);
        }
    }
    Ok(mask)
}

/// Auto-mask over plain fields.
pub fn auto_mask(
    image_tgt: &ScalarField,
    image_syn: &ScalarField,
    image_ref: &ScalarField,
) -> Result<ValidityMask, LossError> {
    auto_mask_of(image_tgt, image_syn, image_ref)
}

/// All per-frame-pair fields the objective consumes.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub image_tgt: &'a ScalarField,
    pub image_ref: &'a ScalarField,
    pub depth_tgt: &'a ScalarField,
    pub depth_ref: &'a ScalarField,
    pub sigma_tgt: &'a ScalarField,
    pub sigma_ref: &'a ScalarField,
    pub intrinsics: CameraIntrinsics,
}

/// Objective configuration: weights, uncertainty mode, residual constants,
/// the sigma floor, and whether the reference frame's smoothness term is
/// added to the target one.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub mode: UncertaintyMode,
    pub residual: ResidualConfig,
    pub sigma_floor: f64,
    pub include_reference_smoothness: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            weights: LossWeights::default(),
            mode: UncertaintyMode::Combined,
            residual: ResidualConfig::default(),
            sigma_floor: crate::coprou::SIGMA_FLOOR,
            include_reference_smoothness: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        self.weights.validate()?;
        self.residual.validate()?;
        if self.sigma_floor <= 0.0 {
            return Err(LossError::Coprou(CoprouError::NonPositiveSigma(self.sigma_floor)));
        }
        Ok(())
    }
}

/// Full evaluation of the objective for one frame pair, with every
/// intermediate the optimizer and diagnostics need.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms<T> {
    pub photometric: T,
    pub geometric: T,
    pub smoothness: T,
    pub total: T,
    pub valid_count: usize,
    pub photometric_map: Field<T>,
    pub geometric_map: Field<T>,
    pub smoothness_map: Field<T>,
    pub residual_map: Field<T>,
    pub sigma_eff_map: Field<T>,
    /// Projection validity AND auto-mask.
    pub mask: ValidityMask,
    pub synth: SynthesizedViews<T>,
}

/// Evaluate the total objective, generic over the pose scalar.
///
/// Runs view synthesis, the photometric residual, uncertainty fusion and all
/// three loss terms, then combines them as w_p L_P + w_g L_Geo + w_s L_S
/// with the auto-mask applied per pixel inside the L_P and L_Geo means.
pub fn total_objective_generic<T: Real>(
    inputs: &FrameInputs<'_>,
    pose: &Rigid<T>,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveTerms<T>, LossError> {
    cfg.validate()?;
    if !inputs.image_tgt.same_dims(inputs.image_ref)
        || !inputs.depth_tgt.same_dims(inputs.depth_ref)
        || !inputs.sigma_tgt.same_dims(inputs.sigma_ref)
        || !inputs.image_tgt.same_size(inputs.depth_tgt)
        || !inputs.image_tgt.same_size(inputs.sigma_tgt)
    {
        return Err(LossError::DimensionMismatch);
    }
    let min_sigma = inputs.sigma_tgt.min_value().min(inputs.sigma_ref.min_value());
    if min_sigma <= 0.0 {
        return Err(LossError::Coprou(CoprouError::NonPositiveInput(min_sigma)));
    }

    let synth = synthesize_views(
        inputs.image_ref,
        inputs.depth_ref,
        inputs.sigma_ref,
        inputs.depth_tgt,
        pose,
        &inputs.intrinsics,
    )?;

    let target = inputs.image_tgt.lift::<T>();
    let residual_map = residual_field(&target, &synth.image, &cfg.residual)?;
    let automask = auto_mask_of(inputs.image_tgt, &synth.image, inputs.image_ref)?;
    let mask = synth.mask.and(&automask);
    let valid_count = mask.count_true();
    if valid_count == 0 {
        return Err(LossError::EmptyValidSet);
    }

    let (w, h) = (inputs.image_tgt.width(), inputs.image_tgt.height());
    let floor = T::from_f64(cfg.sigma_floor);
    let inv_n = T::from_f64(1.0 / valid_count as f64);

    let mut photometric_map = Field::filled(w, h, 1, T::zero());
    let mut geometric_map = Field::filled(w, h, 1, T::zero());
    let mut sigma_eff_map = Field::filled(w, h, 1, T::zero());
    let mut phot_sum = T::zero();
    let mut geo_sum = T::zero();
    for y in 0..h {
        for x in 0..w {
            let sigma_eff = effective_sigma_value(
                T::from_f64(inputs.sigma_tgt.at(x, y)),
                synth.sigma.at(x, y),
                cfg.mode,
                floor,
            );
            sigma_eff_map.set(x, y, 0, sigma_eff);
            if !mask.get(x, y) {
                continue;
            }
            let nll = residual_map.at(x, y) / sigma_eff + sigma_eff.ln();
            photometric_map.set(x, y, 0, nll);
            phot_sum = phot_sum + nll;

            let d_syn = synth.depth.at(x, y);
            let d_proj = synth.projected_depth.at(x, y);
            if d_syn.value() <= 0.0 || d_proj.value() <= 0.0 {
                return Err(LossError::NonPositiveDepth(d_syn.value().min(d_proj.value())));
            }
            let geo = (d_syn - d_proj).abs() / (d_syn + d_proj);
            geometric_map.set(x, y, 0, geo);
            geo_sum = geo_sum + geo;
        }
    }
    let photometric = phot_sum * inv_n;
    let geometric = geo_sum * inv_n;

    let depth_tgt_l = inputs.depth_tgt.lift::<T>();
    let (mut smoothness, smoothness_map) = smoothness_field(&depth_tgt_l, &target)?;
    if cfg.include_reference_smoothness {
        let depth_ref_l = inputs.depth_ref.lift::<T>();
        let image_ref_l = inputs.image_ref.lift::<T>();
        let (s_ref, _) = smoothness_field(&depth_ref_l, &image_ref_l)?;
        smoothness = smoothness + s_ref;
    }

    let total = T::from_f64(cfg.weights.w_p) * photometric
        + T::from_f64(cfg.weights.w_g) * geometric
        + T::from_f64(cfg.weights.w_s) * smoothness;

    Ok(ObjectiveTerms {
        photometric,
        geometric,
        smoothness,
        total,
        valid_count,
        photometric_map,
        geometric_map,
        smoothness_map,
        residual_map,
        sigma_eff_map,
        mask,
        synth,
    })
}

/// Evaluate the total objective for one frame pair at a pose.
pub fn total_objective(
    inputs: &FrameInputs<'_>,
    pose: &Pose6,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown, LossError> {
    let terms = total_objective_generic::<f64>(inputs, &pose.rigid(), cfg)?;
    Ok(LossBreakdown {
        photometric: terms.photometric,
        geometric: terms.geometric,
        smoothness: terms.smoothness,
        total: terms.total,
        photometric_map: terms.photometric_map,
        geometric_map: terms.geometric_map,
        smoothness_map: terms.smoothness_map,
        valid_count: terms.valid_count,
    })
}
