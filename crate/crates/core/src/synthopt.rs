//! Synthetic scenes with known geometry, injected dynamic objects, and a
//! first-order optimizer recovering pose and per-pixel uncertainty from the
//! total objective.
//!
//! Scenes are a textured slanted plane: exact depth maps from the plane
//! equation, the reference image rendered from a band-limited continuous
//! texture, and the target image produced by inverse-warping the reference
//! through the ground-truth geometry (continuous render where the warp has
//! no data). Dynamic objects are textured patches pasted at inconsistent
//! positions in the two frames without touching depth.
//!
//! The optimizer runs Adam on the 6 pose parameters and both log-sigma
//! fields. Pose gradients come from a dual-number evaluation of the
//! objective; sigma gradients from the closed-form chain through
//! r/sigma_eff + log(sigma_eff), which touches neither projection nor SSIM.

use crate::autodiff::{Dual, Real};
use crate::coprou::UncertaintyMode;
use crate::field::{ScalarField, ValidityMask};
use crate::geometry::{rigid_from_params, rotation_angle, CameraIntrinsics, Pose6};
use crate::losses::{total_objective_generic, FrameInputs, LossError, LossWeights, ObjectiveConfig, ObjectiveTerms};
use crate::warp::{bilinear_footprint, synthesize_views};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthoptError {
    #[error("degenerate scene spec: {0}")]
    DegenerateSpec(String),
    #[error("patch out of bounds: {0}")]
    OutOfBounds(String),
    #[error("non-finite loss {loss} at step {step}; pose {pose:?}")]
    NonFiniteLoss { step: usize, loss: f64, pose: Pose6 },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Scene generation parameters. Motion is drawn per seed up to the stated
/// magnitudes; geometry stays within the supported depth range.
#[derive(Debug, Clone, Copy)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Maximum rotation angle in radians (drawn uniformly up to this).
    pub rot_magnitude: f64,
    /// Maximum translation as a fraction of the mean depth.
    pub trans_frac: f64,
    pub mean_depth: f64,
    /// Plane slant: tangent of the normal tilt, 0 = fronto-parallel.
    pub tilt: f64,
    /// Number of sinusoidal texture components.
    pub texture_components: usize,
    /// Total texture amplitude around the 0.5 base level (< 0.5).
    pub texture_amplitude: f64,
    /// Maximum texture frequency, cycles per pixel at the mean depth.
    pub max_frequency: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            rot_magnitude: 1.0f64.to_radians(),
            trans_frac: 0.02,
            mean_depth: 5.0,
            tilt: 0.15,
            texture_components: 8,
            texture_amplitude: 0.42,
            max_frequency: 0.05,
        }
    }
}

/// Minimum and maximum scene depth supported by the disparity mapping.
pub const DEPTH_RANGE: (f64, f64) = (0.1, 100.0);

/// A rendered frame pair with exact geometry.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub intrinsics: CameraIntrinsics,
    pub true_pose: Pose6,
    pub depth_tgt: ScalarField,
    pub depth_ref: ScalarField,
    pub image_tgt: ScalarField,
    pub image_ref: ScalarField,
    pub dynamic_mask_gt: ValidityMask,
}

/// Band-limited texture: a handful of random-direction sinusoids. Bounded
/// inside (0, 1) by construction, so there is no clipping kink anywhere.
#[derive(Debug, Clone)]
struct Texture {
    components: Vec<(f64, f64, f64, f64)>, // (kx, ky, phase, amplitude)
}

impl Texture {
    fn sample(rng: &mut ChaCha8Rng, n: usize, amplitude: f64, max_cycles_per_unit: f64) -> Self {
        let per = amplitude / n as f64;
        let components = (0..n)
            .map(|_| {
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = rng.random_range(0.3..1.0) * max_cycles_per_unit;
                let k = std::f64::consts::TAU * freq;
                (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..std::f64::consts::TAU), per)
            })
            .collect();
        Texture { components }
    }

    fn eval(&self, a: f64, b: f64) -> f64 {
        let mut v = 0.5;
        for &(kx, ky, phase, amp) in &self.components {
            v += amp * (kx * a + ky * b + phase).sin();
        }
        v
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Generate a deterministic scene: slanted textured plane, exact depths,
/// target image inverse-warped from the reference through the true motion.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene, SynthoptError> {
    if spec.width < 16 || spec.height < 16 {
        return Err(SynthoptError::DegenerateSpec(format!(
            "dimensions must be at least 16x16, got {}x{}",
            spec.width, spec.height
        )));
    }
    if spec.texture_amplitude >= 0.5 || spec.texture_amplitude <= 0.0 {
        return Err(SynthoptError::DegenerateSpec(format!(
            "texture amplitude must be in (0, 0.5), got {}",
            spec.texture_amplitude
        )));
    }
    if spec.mean_depth < DEPTH_RANGE.0 || spec.mean_depth > DEPTH_RANGE.1 {
        return Err(SynthoptError::DegenerateSpec(format!(
            "mean depth {} outside {:?}",
            spec.mean_depth, DEPTH_RANGE
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let f = 0.9 * w.max(h) as f64;
    let k = CameraIntrinsics::new(f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0)
        .expect("positive focal length");

    // Ground-truth motion, drawn up to the spec magnitudes.
    let rand_dir = |rng: &mut ChaCha8Rng| {
        normalize([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ])
    };
    let true_pose = if spec.rot_magnitude == 0.0 && spec.trans_frac == 0.0 {
        Pose6::identity()
    } else {
        let rd = rand_dir(&mut rng);
        let td = rand_dir(&mut rng);
        let angle = spec.rot_magnitude * rng.random_range(0.5..1.0);
        let dist = spec.trans_frac * spec.mean_depth * rng.random_range(0.5..1.0);
        Pose6::new(
            [rd[0] * angle, rd[1] * angle, rd[2] * angle],
            [td[0] * dist, td[1] * dist, td[2] * dist],
        )
    };

    // Plane n.X = d in target-camera coordinates, with depth mean_depth at
    // the principal ray.
    let n = normalize([
        spec.tilt * rng.random_range(-1.0..1.0),
        spec.tilt * rng.random_range(-1.0..1.0),
        1.0,
    ]);
    let d = spec.mean_depth * n[2];
    // In-plane texture axes.
    let e1 = normalize([n[2], 0.0, -n[0]]);
    let e2 = cross(n, e1);
    let origin = [d * n[0], d * n[1], d * n[2]];

    let cycles_per_unit = spec.max_frequency * f / spec.mean_depth;
    let texture = Texture::sample(
        &mut rng,
        spec.texture_components,
        spec.texture_amplitude,
        cycles_per_unit,
    );

    // Plane seen from the reference camera: X_ref = R X + t, so the plane
    // there is (R n).X_ref = d + (R n).t.
    let rigid = true_pose.rigid();
    let n_ref = {
        let r = &rigid.rot;
        [
            r[0][0] * n[0] + r[0][1] * n[1] + r[0][2] * n[2],
            r[1][0] * n[0] + r[1][1] * n[1] + r[1][2] * n[2],
            r[2][0] * n[0] + r[2][1] * n[1] + r[2][2] * n[2],
        ]
    };
    let d_ref = d + dot(n_ref, rigid.trans);
    let rigid_inv = true_pose.inverse().rigid();

    let plane_depth = |normal: [f64; 3], dist: f64, ray: [f64; 3]| -> f64 {
        dist / dot(normal, ray)
    };

    let mut depth_tgt = ScalarField::filled(w, h, 1, 0.0);
    let mut depth_ref = ScalarField::filled(w, h, 1, 0.0);
    let mut image_ref = ScalarField::filled(w, h, 1, 0.0);
    let mut tgt_render = ScalarField::filled(w, h, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            let ray = k.ray::<f64>(x as f64, y as f64);

            let dt = plane_depth(n, d, ray);
            depth_tgt.set(x, y, 0, dt);
            let p_t = [ray[0] * dt, ray[1] * dt, ray[2] * dt];
            let (a, b) = (
                dot(e1, [p_t[0] - origin[0], p_t[1] - origin[1], p_t[2] - origin[2]]),
                dot(e2, [p_t[0] - origin[0], p_t[1] - origin[1], p_t[2] - origin[2]]),
            );
            tgt_render.set(x, y, 0, texture.eval(a, b));

            let dr = plane_depth(n_ref, d_ref, ray);
            depth_ref.set(x, y, 0, dr);
            // Surface point in target coordinates for texture lookup.
            let p_r = [ray[0] * dr, ray[1] * dr, ray[2] * dr];
            let p_w = rigid_inv.apply(&p_r);
            let (a, b) = (
                dot(e1, [p_w[0] - origin[0], p_w[1] - origin[1], p_w[2] - origin[2]]),
                dot(e2, [p_w[0] - origin[0], p_w[1] - origin[1], p_w[2] - origin[2]]),
            );
            image_ref.set(x, y, 0, texture.eval(a, b));
        }
    }

    for field in [&depth_tgt, &depth_ref] {
        let (lo, hi) = (field.min_value(), field.max_value());
        if lo < DEPTH_RANGE.0 || hi > DEPTH_RANGE.1 {
            return Err(SynthoptError::DegenerateSpec(format!(
                "plane depths [{lo:.3}, {hi:.3}] leave the range {DEPTH_RANGE:?}"
            )));
        }
    }

    // Target image by inverse warping; continuous render fills pixels the
    // warp cannot see.
    let ones = ScalarField::filled(w, h, 1, 1.0);
    let synth = synthesize_views(&image_ref, &depth_ref, &ones, &depth_tgt, &rigid, &k)
        .map_err(LossError::from)?;
    let covisible = synth.mask.count_true();
    if (covisible as f64) < 0.5 * (w * h) as f64 {
        return Err(SynthoptError::DegenerateSpec(format!(
            "only {covisible} of {} pixels co-visible; motion too large",
            w * h
        )));
    }
    let mut image_tgt = ScalarField::filled(w, h, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = if synth.mask.get(x, y) {
                synth.image.at(x, y)
            } else {
                tgt_render.at(x, y)
            };
            image_tgt.set(x, y, 0, v);
        }
    }

    Ok(SyntheticScene {
        intrinsics: k,
        true_pose,
        depth_tgt,
        depth_ref,
        image_tgt,
        image_ref,
        dynamic_mask_gt: ValidityMask::filled(w, h, false),
    })
}

/// A textured patch pasted at `position` in the target frame and at
/// `position + motion` in the reference frame, without updating depth:
/// exactly the static-scene violation the losses must down-weight.
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub texture_seed: u64,
    /// Apparent motion in pixels/frame, applied in the reference frame.
    pub motion: [f64; 2],
}

impl PatchSpec {
    /// A centered patch covering roughly `fraction` of the scene area.
    pub fn centered(spec_w: usize, spec_h: usize, fraction: f64, seed: u64, motion: [f64; 2]) -> Self {
        let pw = ((spec_w as f64 * spec_h as f64 * fraction).sqrt().round() as usize).max(2);
        let ph = pw;
        PatchSpec {
            x: (spec_w - pw) / 2,
            y: (spec_h - ph) / 2,
            width: pw,
            height: ph,
            texture_seed: seed,
            motion,
        }
    }
}

/// Paste a dynamic object into a scene. The ground-truth dynamic mask marks
/// the union footprint of the patch in both frames.
pub fn inject_dynamic_object(
    scene: &SyntheticScene,
    patch: &PatchSpec,
) -> Result<SyntheticScene, SynthoptError> {
    let (w, h) = (scene.image_tgt.width(), scene.image_tgt.height());
    let (px, py) = (patch.x as f64, patch.y as f64);
    let (pw, ph) = (patch.width as f64, patch.height as f64);
    let (mx, my) = (patch.motion[0], patch.motion[1]);
    if patch.x + patch.width > w || patch.y + patch.height > h {
        return Err(SynthoptError::OutOfBounds(format!(
            "target footprint ({},{})+{}x{} exceeds {w}x{h}",
            patch.x, patch.y, patch.width, patch.height
        )));
    }
    if px + mx < 0.0 || py + my < 0.0 || px + mx + pw > w as f64 || py + my + ph > h as f64 {
        return Err(SynthoptError::OutOfBounds(format!(
            "reference footprint at ({},{}) exceeds {w}x{h}",
            px + mx,
            py + my
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(patch.texture_seed);
    let texture = Texture::sample(&mut rng, 6, 0.45, 0.35);

    let mut out = scene.clone();
    for y in 0..h {
        for x in 0..w {
            // Target frame: patch at (px, py).
            let (sx, sy) = (x as f64 - px, y as f64 - py);
            if (0.0..pw).contains(&sx) && (0.0..ph).contains(&sy) {
                out.image_tgt.set(x, y, 0, texture.eval(sx, sy));
                out.dynamic_mask_gt.set(x, y, true);
            }
            // Reference frame: same texture shifted by the object motion.
            let (sx, sy) = (x as f64 - px - mx, y as f64 - py - my);
            if (0.0..pw).contains(&sx) && (0.0..ph).contains(&sy) {
                out.image_ref.set(x, y, 0, texture.eval(sx, sy));
                out.dynamic_mask_gt.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Log-sigma clamp range; keeps exp() bounded without ever binding in
/// practice.
pub const LOG_SIGMA_CLAMP: f64 = 20.0;

/// sigma = floor + exp(clamped log-sigma): positive by construction.
pub fn sigma_from_log(log_sigma: f64, floor: f64) -> f64 {
    floor + log_sigma.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP).exp()
}

/// d(sigma)/d(log-sigma); zero where the clamp is active.
fn sigma_from_log_grad(log_sigma: f64, _floor: f64) -> f64 {
    if log_sigma.abs() >= LOG_SIGMA_CLAMP {
        0.0
    } else {
        log_sigma.exp()
    }
}

/// Map a whole log-sigma field through [`sigma_from_log`].
pub fn sigma_field_from_log(log_sigma: &ScalarField, floor: f64) -> ScalarField {
    let mut out = ScalarField::filled(log_sigma.width(), log_sigma.height(), 1, 0.0);
    for (slot, &l) in out.data_mut().iter_mut().zip(log_sigma.data()) {
        *slot = sigma_from_log(l, floor);
    }
    out
}

/// Optimizable state: pose plus free per-pixel log-sigma fields for both
/// frames.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub pose: Pose6,
    pub log_sigma_tgt: ScalarField,
    pub log_sigma_ref: ScalarField,
    pub step: usize,
    pub loss_history: Vec<f64>,
}

impl OptimState {
    /// Identity pose, uniform initial sigma.
    pub fn init(width: usize, height: usize, sigma0: f64, floor: f64) -> Self {
        let l0 = (sigma0 - floor).max(1e-12).ln();
        OptimState {
            pose: Pose6::identity(),
            log_sigma_tgt: ScalarField::filled(width, height, 1, l0),
            log_sigma_ref: ScalarField::filled(width, height, 1, l0),
            step: 0,
            loss_history: Vec::new(),
        }
    }
}

/// Step count, step sizes and pairing selection for the toy optimizer.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub steps: usize,
    pub lr_pose: f64,
    pub lr_sigma: f64,
    /// Learning-rate multiplier reached at the final step (exponential decay).
    pub lr_decay: f64,
    /// Sum the losses of both pairings (target<-reference and
    /// reference<-target) instead of the forward one alone.
    pub bidirectional: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steps: 320,
            lr_pose: 4e-3,
            lr_sigma: 0.15,
            lr_decay: 0.05,
            bidirectional: true,
        }
    }
}

/// Median and mean of the final effective uncertainty, split by the
/// ground-truth dynamic mask.
#[derive(Debug, Clone, Copy)]
pub struct SigmaStats {
    pub median_static: f64,
    pub mean_static: f64,
    /// None when the scene has no dynamic pixels.
    pub median_dynamic: Option<f64>,
    pub mean_dynamic: Option<f64>,
}

/// What the optimizer reports back alongside the final state.
#[derive(Debug, Clone)]
pub struct OptimReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub rotation_error_deg: f64,
    pub translation_rel_error: f64,
    pub sigma_stats: SigmaStats,
}

/// Pose error between an estimate and the truth: rotation angle of
/// R_est^T R_gt in degrees, and relative translation error.
pub fn pose_error(estimate: &Pose6, truth: &Pose6) -> (f64, f64) {
    let re = estimate.rigid();
    let rt = truth.rigid();
    let mut rel = [[0.0; 3]; 3];
    for (i, row) in rel.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|l| re.rot[l][i] * rt.rot[l][j]).sum();
        }
    }
    let rot_deg = rotation_angle(&rel).to_degrees();
    let dt = [
        re.trans[0] - rt.trans[0],
        re.trans[1] - rt.trans[1],
        re.trans[2] - rt.trans[2],
    ];
    let err = (dt[0] * dt[0] + dt[1] * dt[1] + dt[2] * dt[2]).sqrt();
    let scale = (rt.trans[0] * rt.trans[0] + rt.trans[1] * rt.trans[1] + rt.trans[2] * rt.trans[2])
        .sqrt();
    let trans_rel = if scale > 1e-12 { err / scale } else { err };
    (rot_deg, trans_rel)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// One pairing's contribution to the sigma gradients, accumulated in place.
///
/// Only the photometric term depends on sigma:
/// d(total)/d(sigma_eff) = w_p (sigma_eff - r) / sigma_eff^2 / n per masked
/// pixel, then through the fusion rule and the log-sigma map. The warped
/// contribution fans out over the bilinear footprint of each sample.
#[allow(clippy::too_many_arguments)]
fn accumulate_sigma_grads(
    terms: &ObjectiveTerms<Dual<6>>,
    sigma_tgt: &ScalarField,
    log_sigma_tgt: &ScalarField,
    log_sigma_ref: &ScalarField,
    cfg: &ObjectiveConfig,
    grad_log_tgt: &mut [f64],
    grad_log_ref: &mut [f64],
) {
    let (w, h) = (sigma_tgt.width(), sigma_tgt.height());
    let n = terms.valid_count as f64;
    let w_p = cfg.weights.w_p;
    for y in 0..h {
        for x in 0..w {
            if !terms.mask.get(x, y) {
                continue;
            }
            let r = terms.residual_map.at(x, y).value();
            let s_eff = terms.sigma_eff_map.at(x, y).value();
            let g_eff = w_p * (s_eff - r) / (s_eff * s_eff) / n;

            let s_t = sigma_tgt.at(x, y);
            let s_syn = terms.synth.sigma.at(x, y).value();
            match cfg.mode {
                UncertaintyMode::Combined => {
                    let fused = (s_t * s_t + s_syn * s_syn).sqrt();
                    if fused <= cfg.sigma_floor {
                        continue; // clamped: no gradient
                    }
                    let idx = y * w + x;
                    grad_log_tgt[idx] += g_eff * (s_t / fused)
                        * sigma_from_log_grad(log_sigma_tgt.at(x, y), cfg.sigma_floor);
                    let g_syn = g_eff * (s_syn / fused);
                    let u = terms.synth.coords.get(x, y, 0).value();
                    let v = terms.synth.coords.get(x, y, 1).value();
                    if let Some((corners, weights)) = bilinear_footprint(w, h, u, v) {
                        for ((cx, cy), wgt) in corners.iter().zip(weights) {
                            grad_log_ref[cy * w + cx] += g_syn
                                * wgt
                                * sigma_from_log_grad(
                                    log_sigma_ref.at(*cx, *cy),
                                    cfg.sigma_floor,
                                );
                        }
                    }
                }
                UncertaintyMode::SingleTarget => {
                    if s_t <= cfg.sigma_floor {
                        continue;
                    }
                    grad_log_tgt[y * w + x] += g_eff
                        * sigma_from_log_grad(log_sigma_tgt.at(x, y), cfg.sigma_floor);
                }
            }
        }
    }
}

/// Loss and full gradient of the (optionally bidirectional) objective at a
/// state. Exposed so gradient checks can exercise exactly what the
/// optimizer consumes.
pub fn objective_with_gradients(
    scene: &SyntheticScene,
    pose: &Pose6,
    log_sigma_tgt: &ScalarField,
    log_sigma_ref: &ScalarField,
    cfg: &ObjectiveConfig,
    bidirectional: bool,
) -> Result<(f64, [f64; 6], ScalarField, ScalarField), LossError> {
    let sigma_tgt = sigma_field_from_log(log_sigma_tgt, cfg.sigma_floor);
    let sigma_ref = sigma_field_from_log(log_sigma_ref, cfg.sigma_floor);

    let rot: [Dual<6>; 3] = std::array::from_fn(|i| Dual::variable(pose.rotation[i], i));
    let trans: [Dual<6>; 3] = std::array::from_fn(|i| Dual::variable(pose.translation[i], 3 + i));
    let rigid_fwd = rigid_from_params(rot, trans);

    let fwd_inputs = FrameInputs {
        image_tgt: &scene.image_tgt,
        image_ref: &scene.image_ref,
        depth_tgt: &scene.depth_tgt,
        depth_ref: &scene.depth_ref,
        sigma_tgt: &sigma_tgt,
        sigma_ref: &sigma_ref,
        intrinsics: scene.intrinsics,
    };
    let fwd = total_objective_generic(&fwd_inputs, &rigid_fwd, cfg)?;

    let (w, h) = (scene.image_tgt.width(), scene.image_tgt.height());
    let mut grad_log_tgt = vec![0.0; w * h];
    let mut grad_log_ref = vec![0.0; w * h];
    accumulate_sigma_grads(
        &fwd,
        &sigma_tgt,
        log_sigma_tgt,
        log_sigma_ref,
        cfg,
        &mut grad_log_tgt,
        &mut grad_log_ref,
    );

    let mut total = fwd.total;
    if bidirectional {
        let rev_inputs = FrameInputs {
            image_tgt: &scene.image_ref,
            image_ref: &scene.image_tgt,
            depth_tgt: &scene.depth_ref,
            depth_ref: &scene.depth_tgt,
            sigma_tgt: &sigma_ref,
            sigma_ref: &sigma_tgt,
            intrinsics: scene.intrinsics,
        };
        let rev = total_objective_generic(&rev_inputs, &rigid_fwd.inverse(), cfg)?;
        // Roles swap: the reference log-sigma field is the target one here.
        accumulate_sigma_grads(
            &rev,
            &sigma_ref,
            log_sigma_ref,
            log_sigma_tgt,
            cfg,
            &mut grad_log_ref,
            &mut grad_log_tgt,
        );
        total = total + rev.total;
    }

    let grad_tgt = ScalarField::from_vec(w, h, 1, grad_log_tgt).expect("finite gradients");
    let grad_ref = ScalarField::from_vec(w, h, 1, grad_log_ref).expect("finite gradients");
    Ok((total.re, total.d, grad_tgt, grad_ref))
}

/// Loss only, at a state (used by gradient checks and reporting).
pub fn objective_value(
    scene: &SyntheticScene,
    pose: &Pose6,
    log_sigma_tgt: &ScalarField,
    log_sigma_ref: &ScalarField,
    cfg: &ObjectiveConfig,
    bidirectional: bool,
) -> Result<f64, LossError> {
    let sigma_tgt = sigma_field_from_log(log_sigma_tgt, cfg.sigma_floor);
    let sigma_ref = sigma_field_from_log(log_sigma_ref, cfg.sigma_floor);
    let fwd_inputs = FrameInputs {
        image_tgt: &scene.image_tgt,
        image_ref: &scene.image_ref,
        depth_tgt: &scene.depth_tgt,
        depth_ref: &scene.depth_ref,
        sigma_tgt: &sigma_tgt,
        sigma_ref: &sigma_ref,
        intrinsics: scene.intrinsics,
    };
    let rigid = pose.rigid();
    let mut total = total_objective_generic::<f64>(&fwd_inputs, &rigid, cfg)?.total;
    if bidirectional {
        let rev_inputs = FrameInputs {
            image_tgt: &scene.image_ref,
            image_ref: &scene.image_tgt,
            depth_tgt: &scene.depth_ref,
            depth_ref: &scene.depth_tgt,
            sigma_tgt: &sigma_ref,
            sigma_ref: &sigma_tgt,
            intrinsics: scene.intrinsics,
        };
        total += total_objective_generic::<f64>(&rev_inputs, &rigid.inverse(), cfg)?.total;
    }
    Ok(total)
}

/// Final effective-sigma field of the forward pairing at a state, with the
/// mask it was computed under.
pub fn sigma_eff_at_state(
    scene: &SyntheticScene,
    state: &OptimState,
    cfg: &ObjectiveConfig,
) -> Result<(ScalarField, ValidityMask), LossError> {
    let sigma_tgt = sigma_field_from_log(&state.log_sigma_tgt, cfg.sigma_floor);
    let sigma_ref = sigma_field_from_log(&state.log_sigma_ref, cfg.sigma_floor);
    let inputs = FrameInputs {
        image_tgt: &scene.image_tgt,
        image_ref: &scene.image_ref,
        depth_tgt: &scene.depth_tgt,
        depth_ref: &scene.depth_ref,
        sigma_tgt: &sigma_tgt,
        sigma_ref: &sigma_ref,
        intrinsics: scene.intrinsics,
    };
    let terms = total_objective_generic::<f64>(&inputs, &state.pose.rigid(), cfg)?;
    Ok((terms.sigma_eff_map, terms.mask))
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn sigma_stats(sigma_eff: &ScalarField, dynamic_mask: &ValidityMask) -> SigmaStats {
    let (w, h) = (sigma_eff.width(), sigma_eff.height());
    let mut stat = Vec::new();
    let mut dynv = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if dynamic_mask.get(x, y) {
                dynv.push(sigma_eff.at(x, y));
            } else {
                stat.push(sigma_eff.at(x, y));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_static = mean(&stat);
    let (median_dynamic, mean_dynamic) = if dynv.is_empty() {
        (None, None)
    } else {
        let m = mean(&dynv);
        (Some(median(&mut dynv)), Some(m))
    };
    SigmaStats {
        median_static: median(&mut stat),
        mean_static,
        median_dynamic,
        mean_dynamic,
    }
}

/// Minimize the total objective over pose and log-sigma fields with Adam.
///
/// Returns the best iterate seen (never worse than the initial state) and a
/// report with pose errors against the scene's ground truth and sigma
/// statistics split by the dynamic mask.
pub fn optimize(
    scene: &SyntheticScene,
    init: &OptimState,
    weights: LossWeights,
    mode: UncertaintyMode,
    schedule: &Schedule,
) -> Result<(OptimState, OptimReport), SynthoptError> {
    let cfg = ObjectiveConfig { weights, mode, ..Default::default() };
    let (w, h) = (scene.image_tgt.width(), scene.image_tgt.height());

    let mut pose = init.pose;
    let mut log_tgt = init.log_sigma_tgt.clone();
    let mut log_ref = init.log_sigma_ref.clone();
    let mut adam_pose = Adam::new(6);
    let mut adam_tgt = Adam::new(w * h);
    let mut adam_ref = Adam::new(w * h);

    let mut history = Vec::with_capacity(schedule.steps);
    let mut best: Option<(f64, Pose6, ScalarField, ScalarField)> = None;
    let mut initial_loss = None;

    for step in 0..schedule.steps {
        let (loss, pose_grad, grad_tgt, grad_ref) = objective_with_gradients(
            scene,
            &pose,
            &log_tgt,
            &log_ref,
            &cfg,
            schedule.bidirectional,
        )?;
        if !loss.is_finite() {
            return Err(SynthoptError::NonFiniteLoss { step, loss, pose });
        }
        if initial_loss.is_none() {
            initial_loss = Some(loss);
        }
        if best.as_ref().is_none_or(|(b, ..)| loss < *b) {
            best = Some((loss, pose, log_tgt.clone(), log_ref.clone()));
        }
        history.push(loss);

        let decay = schedule.lr_decay.powf((step + 1) as f64 / schedule.steps as f64);
        let mut pose_params = [
            pose.rotation[0],
            pose.rotation[1],
            pose.rotation[2],
            pose.translation[0],
            pose.translation[1],
            pose.translation[2],
        ];
        adam_pose.step(&mut pose_params, &pose_grad, schedule.lr_pose * decay);
        pose = Pose6::new(
            [pose_params[0], pose_params[1], pose_params[2]],
            [pose_params[3], pose_params[4], pose_params[5]],
        );
        adam_tgt.step(log_tgt.data_mut(), grad_tgt.data(), schedule.lr_sigma * decay);
        adam_ref.step(log_ref.data_mut(), grad_ref.data(), schedule.lr_sigma * decay);
    }

    // Evaluate the endpoint; keep it if it improved on every recorded iterate.
    let final_loss_candidate = objective_value(
        scene,
        &pose,
        &log_tgt,
        &log_ref,
        &cfg,
        schedule.bidirectional,
    )?;
    if best.as_ref().is_none_or(|(b, ..)| final_loss_candidate < *b) {
        best = Some((final_loss_candidate, pose, log_tgt, log_ref));
    }
    let (final_loss, best_pose, best_log_tgt, best_log_ref) =
        best.expect("at least the initial iterate was evaluated");

    let state = OptimState {
        pose: best_pose,
        log_sigma_tgt: best_log_tgt,
        log_sigma_ref: best_log_ref,
        step: history.len(),
        loss_history: history,
    };

    let (rotation_error_deg, translation_rel_error) = pose_error(&state.pose, &scene.true_pose);
    let (sigma_eff, _) = sigma_eff_at_state(scene, &state, &cfg)?;
    let report = OptimReport {
        initial_loss: initial_loss.unwrap_or(final_loss),
        final_loss,
        rotation_error_deg,
        translation_rel_error,
        sigma_stats: sigma_stats(&sigma_eff, &scene.dynamic_mask_gt),
    };
    Ok((state, report))
}
