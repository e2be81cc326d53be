//! Trajectory metrics: 7-DoF similarity alignment, ATE, KITTI-protocol
//! relative errors, and frame-to-frame RPE, plus the KITTI pose file
//! format.
//!
//! Monocular estimates carry no scale, so ATE and the relative errors are
//! computed after a least-squares similarity alignment (Umeyama closed
//! form). Frame association is by index throughout.

use nalgebra::{Matrix3, Vector3};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory lengths disagree ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trajectory too short: need at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("rotation of frame {frame} is not orthonormal (deviation {deviation:.2e})")]
    InvalidRotation { frame: usize, deviation: f64 },
    #[error("ground-truth positions are rank-deficient; rotation is not unique")]
    DegenerateGeometry,
    #[error("ground-truth path shorter than the requested distances; usable: {usable:?}")]
    TrajectoryTooShort { usable: Vec<f64> },
    #[error("line {line}: expected 12 numbers, got {got}")]
    BadPoseLine { line: usize, got: usize },
    #[error("line {line}: {source}")]
    ParseFloat {
        line: usize,
        source: std::num::ParseFloatError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered camera-to-world poses, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    rotations: Vec<Matrix3<f64>>,
    positions: Vec<Vector3<f64>>,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl Trajectory {
    /// Build from rotation/position pairs, validating each rotation is a
    /// proper rigid motion to 1e-6.
    pub fn from_parts(poses: Vec<(Matrix3<f64>, Vector3<f64>)>) -> Result<Self, EvalError> {
        for (frame, (r, _)) in poses.iter().enumerate() {
            let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
            if dev > ORTHONORMAL_TOL || r.determinant() < 0.0 {
                return Err(EvalError::InvalidRotation { frame, deviation: dev });
            }
        }
        let (rotations, positions) = poses.into_iter().unzip();
        Ok(Trajectory { rotations, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rotation(&self, i: usize) -> &Matrix3<f64> {
        &self.rotations[i]
    }

    pub fn position(&self, i: usize) -> &Vector3<f64> {
        &self.positions[i]
    }

    /// Accumulated path length up to each frame (cum[0] = 0).
    pub fn cumulative_path_length(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 1..self.len() {
            acc += (self.positions[i] - self.positions[i - 1]).norm();
            cum.push(acc);
        }
        cum
    }

    /// Apply a similarity: positions s R p + t, rotations R_a R_i.
    pub fn transformed(&self, sim: &SimilarityTransform) -> Trajectory {
        Trajectory {
            rotations: self.rotations.iter().map(|r| sim.rotation * r).collect(),
            positions: self
                .positions
                .iter()
                .map(|p| sim.scale * (sim.rotation * p) + sim.translation)
                .collect(),
        }
    }

    /// Relative motion from frame i to frame j: T_i^-1 T_j.
    fn relative(&self, i: usize, j: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let rt = self.rotations[i].transpose();
        (rt * self.rotations[j], rt * (self.positions[j] - self.positions[i]))
    }
}

/// s R p + t mapping predicted positions onto the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

/// Rotation angle from the trace formula, with the sine recovered from the
/// antisymmetric part: atan2 keeps full precision near zero, where
/// acos((trace-1)/2) inflates round-off to ~1e-8 rad. The cosine is still
/// clamped against accumulated round-off.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

/// Umeyama closed form. `gate_rank` controls whether rank-deficient
/// ground-truth geometry is reported as an error; the minimum residual is
/// still well-defined without the gate (only the minimizer is non-unique),
/// which is what ATE falls back to.
fn umeyama(pred: &Trajectory, gt: &Trajectory, gate_rank: bool) -> Result<SimilarityTransform, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    let n = pred.len();
    if n < 3 {
        return Err(EvalError::TooShort { needed: 3, got: n });
    }
    let nf = n as f64;
    let mu_p: Vector3<f64> = pred.positions.iter().sum::<Vector3<f64>>() / nf;
    let mu_g: Vector3<f64> = gt.positions.iter().sum::<Vector3<f64>>() / nf;

    let mut cross = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut scatter_g = Matrix3::zeros();
    for i in 0..n {
        let pc = pred.positions[i] - mu_p;
        let gc = gt.positions[i] - mu_g;
        cross += gc * pc.transpose();
        var_p += pc.norm_squared();
        scatter_g += gc * gc.transpose();
    }
    cross /= nf;
    var_p /= nf;
    scatter_g /= nf;

    if var_p <= 1e-24 {
        return Err(EvalError::DegenerateGeometry);
    }
    if gate_rank {
        let eig = scatter_g.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let rank = eig.iter().filter(|&&e| e > 1e-12 * max.max(1e-300)).count();
        if rank < 2 {
            return Err(EvalError::DegenerateGeometry);
        }
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd of 3x3");
    let v_t = svd.v_t.expect("svd of 3x3");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = (svd.singular_values[0]
        + svd.singular_values[1]
        + s[(2, 2)] * svd.singular_values[2])
        / var_p;
    let translation = mu_g - scale * (rotation * mu_p);
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// Least-squares similarity aligning predicted positions onto the ground
/// truth. Collinear ground-truth positions leave the rotation non-unique
/// and are reported as [`EvalError::DegenerateGeometry`].
pub fn align_7dof(pred: &Trajectory, gt: &Trajectory) -> Result<SimilarityTransform, EvalError> {
    umeyama(pred, gt, true)
}

/// Absolute trajectory error: RMSE of position differences after 7-DoF
/// alignment. A degenerate (collinear) ground truth falls back to the
/// ungated closed form, whose residual is still the similarity optimum.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let sim = match align_7dof(pred, gt) {
        Ok(s) => s,
        Err(EvalError::DegenerateGeometry) => umeyama(pred, gt, false)?,
        Err(e) => return Err(e),
    };
    let mut sq = 0.0;
    for i in 0..pred.len() {
        let aligned = sim.scale * (sim.rotation * pred.positions[i]) + sim.translation;
        sq += (aligned - gt.positions[i]).norm_squared();
    }
    Ok((sq / pred.len() as f64).sqrt())
}

/// Path lengths of the KITTI odometry protocol, in scene units (meters).
pub const KITTI_DISTANCES: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// KITTI-protocol relative errors after 7-DoF alignment.
///
/// For every start frame and every distance, the end frame is the first one
/// at that accumulated ground-truth path length; the error of the relative
/// motion over the subsegment contributes translation-norm / length and
/// rotation-angle / length samples. Returns (t_err in %, r_err in deg/100m).
pub fn kitti_relative_errors(
    pred: &Trajectory,
    gt: &Trajectory,
    distances: &[f64],
) -> Result<(f64, f64), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    let sim = align_7dof(pred, gt)?;
    let aligned = pred.transformed(&sim);

    let cum = gt.cumulative_path_length();
    let total = *cum.last().unwrap_or(&0.0);
    let usable: Vec<f64> = distances.iter().copied().filter(|&d| d <= total).collect();
    if usable.len() != distances.len() {
        return Err(EvalError::TrajectoryTooShort { usable });
    }

    let n = gt.len();
    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut samples = 0usize;
    for &dist in distances {
        let mut j = 0usize;
        for i in 0..n {
            if j < i {
                j = i;
            }
            while j < n && cum[j] - cum[i] < dist {
                j += 1;
            }
            if j >= n {
                break;
            }
            let len = cum[j] - cum[i];
            if len <= 0.0 {
                continue;
            }
            let (rg, tg) = gt.relative(i, j);
            let (rp, tp) = aligned.relative(i, j);
            let r_err = rg.transpose() * rp;
            let t_err = rg.transpose() * (tp - tg);
            t_sum += t_err.norm() / len;
            r_sum += rotation_angle(&r_err).to_degrees() / len;
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(EvalError::TrajectoryTooShort { usable });
    }
    Ok((
        t_sum / samples as f64 * 100.0,
        r_sum / samples as f64 * 100.0,
    ))
}

/// Frame-to-frame relative pose error at a fixed interval:
/// E_i = (gt_i^-1 gt_{i+d})^-1 (pred_i^-1 pred_{i+d}).
/// Returns (translation RMSE in scene units, rotation RMSE in degrees).
pub fn rpe(pred: &Trajectory, gt: &Trajectory, interval: usize) -> Result<(f64, f64), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if interval == 0 || pred.len() <= interval {
        return Err(EvalError::TooShort { needed: interval + 1, got: pred.len() });
    }
    let mut t_sq = 0.0;
    let mut r_sq = 0.0;
    let count = pred.len() - interval;
    for i in 0..count {
        let (rg, tg) = gt.relative(i, i + interval);
        let (rp, tp) = pred.relative(i, i + interval);
        let r_err = rg.transpose() * rp;
        let t_err = rg.transpose() * (tp - tg);
        t_sq += t_err.norm_squared();
        r_sq += rotation_angle(&r_err).to_degrees().powi(2);
    }
    Ok(((t_sq / count as f64).sqrt(), (r_sq / count as f64).sqrt()))
}

/// Read KITTI pose lines: 12 reals per line, the row-major top 3x4 of the
/// camera-to-world matrix.
pub fn read_kitti_poses<R: BufRead>(reader: R) -> Result<Trajectory, EvalError> {
    let mut poses = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|source| EvalError::ParseFloat {
                line: idx + 1,
                source,
            }))
            .collect::<Result<_, _>>()?;
        if values.len() != 12 {
            return Err(EvalError::BadPoseLine { line: idx + 1, got: values.len() });
        }
        let rot = Matrix3::new(
            values[0], values[1], values[2],
            values[4], values[5], values[6],
            values[8], values[9], values[10],
        );
        let pos = Vector3::new(values[3], values[7], values[11]);
        poses.push((rot, pos));
    }
    Trajectory::from_parts(poses)
}

/// Write KITTI pose lines with round-trip float formatting.
pub fn write_kitti_poses<W: Write>(traj: &Trajectory, mut writer: W) -> Result<(), EvalError> {
    for i in 0..traj.len() {
        let r = traj.rotation(i);
        let p = traj.position(i);
        writeln!(
            writer,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], p[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], p[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], p[2],
        )?;
    }
    Ok(())
}

pub fn load_kitti_poses(path: impl AsRef<Path>) -> Result<Trajectory, EvalError> {
    let file = std::fs::File::open(path)?;
    read_kitti_poses(std::io::BufReader::new(file))
}

pub fn save_kitti_poses(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let file = std::fs::File::create(path)?;
    write_kitti_poses(traj, std::io::BufWriter::new(file))
}
