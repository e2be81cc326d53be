//! Rigid-motion algebra, the pinhole camera model, and the two projection
//! formulas (pixel reprojection and depth-value reprojection).
//!
//! Poses are parametrized as axis-angle rotation plus translation; the
//! rotation is materialized with the Rodrigues formula, switching to its
//! Taylor expansion near zero angle so the map stays smooth for gradient
//! checks. All operations are generic over [`Real`] so the same code path
//! produces pose Jacobians when run on dual numbers.

use crate::autodiff::Real;
use thiserror::Error;

/// Projected z fell at or below this value: the point is behind (or on) the
/// camera plane. Far below the 0.1 minimum scene depth.
pub const EPS_Z: f64 = 1e-6;

/// Angle below which the Rodrigues coefficients use their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-positive focal length (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("point projects behind the camera plane (z={z:.3e})")]
    NonPositiveProjectedDepth { z: f64 },
    #[error("non-positive input depth ({0})")]
    NonPositiveDepth(f64),
}

/// Pinhole intrinsics. The 3x3 matrix K is [[fx,0,cx],[0,fy,cy],[0,0,1]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// fx = fy = 1, cx = cy = 0; K is the identity.
    pub fn identity() -> Self {
        CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Unit-depth ray through pixel (u, v): K^-1 * [u, v, 1]^T.
    pub fn ray<T: Real>(&self, u: T, v: T) -> [T; 3] {
        [
            (u - T::from_f64(self.cx)) / T::from_f64(self.fx),
            (v - T::from_f64(self.cy)) / T::from_f64(self.fy),
            T::one(),
        ]
    }
}

/// Continuous pixel coordinates with implicit homogeneous third component 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        PixelCoord { u, v }
    }
}

/// Minimal 6-parameter rigid-motion element: axis-angle rotation (radians)
/// plus translation (scene units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6 {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose6 {
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Pose6 { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose6 { rotation: [0.0; 3], translation: [0.0; 3] }
    }

    /// Parameters of the inverse motion: R(-w) = R(w)^T and -R^T t.
    pub fn inverse(&self) -> Pose6 {
        let rigid = self.rigid();
        let rt = mat3_transpose(&rigid.rot);
        let t = mat3_mul_vec(&rt, &rigid.trans);
        Pose6 {
            rotation: [-self.rotation[0], -self.rotation[1], -self.rotation[2]],
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Materialize the rotation matrix and translation vector.
    pub fn rigid(&self) -> Rigid<f64> {
        rigid_from_params(
            [self.rotation[0], self.rotation[1], self.rotation[2]],
            [self.translation[0], self.translation[1], self.translation[2]],
        )
    }
}

/// Evaluated rigid transform: rotation matrix plus translation.
#[derive(Debug, Clone, Copy)]
pub struct Rigid<T> {
    pub rot: [[T; 3]; 3],
    pub trans: [T; 3],
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        let o = T::zero();
        let i = T::one();
        Rigid {
            rot: [[i, o, o], [o, i, o], [o, o, i]],
            trans: [o, o, o],
        }
    }

    /// [R^T | -R^T t].
    pub fn inverse(&self) -> Self {
        let rt = mat3_transpose(&self.rot);
        let t = mat3_mul_vec(&rt, &self.trans);
        Rigid { rot: rt, trans: [-t[0], -t[1], -t[2]] }
    }

    pub fn apply(&self, p: &[T; 3]) -> [T; 3] {
        let r = mat3_mul_vec(&self.rot, p);
        [r[0] + self.trans[0], r[1] + self.trans[1], r[2] + self.trans[2]]
    }
}

pub fn mat3_transpose<T: Copy>(m: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

pub fn mat3_mul_vec<T: Real>(m: &[[T; 3]; 3], v: &[T; 3]) -> [T; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Rodrigues: R = I + A [w]x + B [w]x^2 with A = sin(t)/t, B = (1-cos(t))/t^2.
///
/// Both coefficients are functions of t^2 = w.w, so evaluating the Taylor
/// branch in terms of t^2 keeps the map smooth through w = 0 (no sqrt of 0).
pub fn rigid_from_params<T: Real>(rotation: [T; 3], translation: [T; 3]) -> Rigid<T> {
    let [wx, wy, wz] = rotation;
    let theta_sq = wx * wx + wy * wy + wz * wz;

    let (a, b) = if theta_sq.value() < SMALL_ANGLE * SMALL_ANGLE {
        // sin(t)/t       = 1 - t^2/6 + t^4/120
        // (1-cos(t))/t^2 = 1/2 - t^2/24 + t^4/720
        let a = T::one() - theta_sq / T::from_f64(6.0)
            + theta_sq * theta_sq / T::from_f64(120.0);
        let b = T::from_f64(0.5) - theta_sq / T::from_f64(24.0)
            + theta_sq * theta_sq / T::from_f64(720.0);
        (a, b)
    } else {
        let theta = theta_sq.sqrt();
        let a = theta.sin() / theta;
        let b = (T::one() - theta.cos()) / theta_sq;
        (a, b)
    };

    let o = T::zero();
    let w = [[o, -wz, wy], [wz, o, -wx], [-wy, wx, o]];
    let ww = mat3_mul(&w, &w);
    let mut rot = [[o; 3]; 3];
    for (i, row) in rot.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let id = if i == j { T::one() } else { o };
            *cell = id + a * w[i][j] + b * ww[i][j];
        }
    }
    Rigid { rot, trans: translation }
}

/// 4x4 homogeneous matrix [R | t; 0 0 0 1] of a pose.
pub fn se3_exp(pose: &Pose6) -> [[f64; 4]; 4] {
    let rigid = pose.rigid();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&rigid.rot[i]);
        m[i][3] = rigid.trans[i];
    }
    m[3][3] = 1.0;
    m
}

/// Core projection chain K * T * D * K^-1 * p in homogeneous form, generic
/// over the scalar so pose derivatives flow through.
///
/// Returns (u', v', z') where z' is the z-component before dehomogenization
/// (the projected depth), or `None` when z' <= [`EPS_Z`].
pub fn project_generic<T: Real>(
    u: T,
    v: T,
    depth: T,
    pose: &Rigid<T>,
    k: &CameraIntrinsics,
) -> Option<(T, T, T)> {
    let ray = k.ray(u, v);
    let p_cam = [ray[0] * depth, ray[1] * depth, ray[2] * depth];
    let p_ref = pose.apply(&p_cam);
    let z = p_ref[2];
    if z.value() <= EPS_Z {
        return None;
    }
    let up = T::from_f64(k.fx) * (p_ref[0] / z) + T::from_f64(k.cx);
    let vp = T::from_f64(k.fy) * (p_ref[1] / z) + T::from_f64(k.cy);
    Some((up, vp, z))
}

/// Project a target pixel with its depth into the reference view.
///
/// Returns the dehomogenized pixel and the projected depth (the z-component
/// before dehomogenization). The caller must exclude the pixel from the
/// valid set on `NonPositiveProjectedDepth`.
pub fn project_pixel(
    p: PixelCoord,
    depth: f64,
    pose: &Pose6,
    k: &CameraIntrinsics,
) -> Result<(PixelCoord, f64), GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let rigid = pose.rigid();
    match project_generic(p.u, p.v, depth, &rigid, k) {
        Some((u, v, z)) => Ok((PixelCoord::new(u, v), z)),
        None => {
            // Recompute z for the error report.
            let ray = k.ray::<f64>(p.u, p.v);
            let z = rigid.apply(&[ray[0] * depth, ray[1] * depth, depth])[2];
            Err(GeometryError::NonPositiveProjectedDepth { z })
        }
    }
}

/// Rotation angle (radians) of a rotation matrix via the trace formula,
/// clamped against round-off.
pub fn rotation_angle(r: &[[f64; 3]; 3]) -> f64 {
    let trace = r[0][0] + r[1][1] + r[2][2];
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, rot_scale: f64, trans_scale: f64) -> Pose6 {
        Pose6::new(
            std::array::from_fn(|_| rng.random_range(-rot_scale..rot_scale)),
            std::array::from_fn(|_| rng.random_range(-trans_scale..trans_scale)),
        )
    }

    fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    // 4x4 rigid-motion inverse done the pedestrian way, as an oracle.
    fn mat4_rigid_inverse(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[j][i];
            }
            out[i][3] = -(m[0][i] * m[0][3] + m[1][i] * m[1][3] + m[2][i] * m[2][3]);
        }
        out[3][3] = 1.0;
        out
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let m = se3_exp(&Pose6::identity());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quarter_turn_about_z_maps_x_axis_to_y_axis() {
        let pose = Pose6::new([0.0, 0.0, std::f64::consts::FRAC_PI_2], [0.0; 3]);
        let m = se3_exp(&pose);
        let expected = [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (m[i][j] - expected[i][j]).abs() < 1e-12,
                    "entry ({i},{j}) = {}",
                    m[i][j]
                );
            }
        }
    }

    #[test]
    fn rotation_is_proper_and_inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pose = random_pose(&mut rng, 2.0, 3.0);
            let rigid = pose.rigid();
            // Orthonormal columns, det = +1.
            let rt = mat3_transpose(&rigid.rot);
            let prod = mat3_mul(&rt, &rigid.rot);
            for i in 0..3 {
                for j in 0..3 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[i][j] - id).abs() < 1e-9);
                }
            }
            let r = &rigid.rot;
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-9);

            // compose(P, inverse(P)) = identity, against the matrix-inverse oracle.
            let m = se3_exp(&pose);
            let m_inv_chart = se3_exp(&pose.inverse());
            let m_inv_oracle = mat4_rigid_inverse(&m);
            let composed = mat4_mul(&m, &m_inv_chart);
            for i in 0..4 {
                for j in 0..4 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((composed[i][j] - id).abs() < 1e-9);
                    assert!((m_inv_chart[i][j] - m_inv_oracle[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn projection_identity_returns_input_pixel_and_depth() {
        let k = CameraIntrinsics::new(58.3, 61.7, 31.2, 30.9).unwrap();
        let pose = Pose6::identity();
        for &(u, v, d) in &[(3.25, 7.5, 2.0), (0.0, 0.0, 0.5), (63.0, 12.7, 41.0)] {
            let (p, z) = project_pixel(PixelCoord::new(u, v), d, &pose, &k).unwrap();
            assert!((p.u - u).abs() < 1e-12);
            assert!((p.v - v).abs() < 1e-12);
            assert_eq!(z, d);
        }
    }

    #[test]
    fn pure_x_translation_with_identity_intrinsics_shifts_by_tx_over_depth() {
        let k = CameraIntrinsics::identity();
        let pose = Pose6::new([0.0; 3], [1.0, 0.0, 0.0]);
        let (p, z) = project_pixel(PixelCoord::new(4.0, -2.0), 2.0, &pose, &k).unwrap();
        assert_relative_eq!(p.u, 4.5, max_relative = 1e-12);
        assert_relative_eq!(p.v, -2.0, max_relative = 1e-12);
        assert_relative_eq!(z, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn projection_matches_explicit_matrix_chain_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = CameraIntrinsics::new(
                rng.random_range(20.0..80.0),
                rng.random_range(20.0..80.0),
                rng.random_range(-5.0..40.0),
                rng.random_range(-5.0..40.0),
            )
            .unwrap();
            let pose = random_pose(&mut rng, 0.3, 0.5);
            let u = rng.random_range(-10.0..70.0);
            let v = rng.random_range(-10.0..70.0);
            let d = rng.random_range(0.5..20.0);

            // Oracle: build the 4x4 chain and evaluate it on the homogeneous
            // point, entirely independent of project_pixel's structure.
            let kinv = {
                let km = k.matrix();
                [
                    [1.0 / km[0][0], 0.0, -km[0][2] / km[0][0]],
                    [0.0, 1.0 / km[1][1], -km[1][2] / km[1][1]],
                    [0.0, 0.0, 1.0],
                ]
            };
            let hom = [u, v, 1.0];
            let ray = mat3_mul_vec(&kinv, &hom);
            let scaled = [ray[0] * d, ray[1] * d, ray[2] * d];
            let t = se3_exp(&pose);
            let moved = [
                t[0][0] * scaled[0] + t[0][1] * scaled[1] + t[0][2] * scaled[2] + t[0][3],
                t[1][0] * scaled[0] + t[1][1] * scaled[1] + t[1][2] * scaled[2] + t[1][3],
                t[2][0] * scaled[0] + t[2][1] * scaled[1] + t[2][2] * scaled[2] + t[2][3],
            ];
            let reproj = mat3_mul_vec(&k.matrix(), &moved);

            match project_pixel(PixelCoord::new(u, v), d, &pose, &k) {
                Ok((p, z)) => {
                    assert!(moved[2] > EPS_Z);
                    assert_relative_eq!(p.u, reproj[0] / reproj[2], max_relative = 1e-9);
                    assert_relative_eq!(p.v, reproj[1] / reproj[2], max_relative = 1e-9);
                    assert_relative_eq!(z, moved[2], max_relative = 1e-9);
                }
                Err(GeometryError::NonPositiveProjectedDepth { .. }) => {
                    assert!(moved[2] <= EPS_Z + 1e-12);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn projection_round_trip_through_inverse_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = CameraIntrinsics::new(50.0, 50.0, 32.0, 32.0).unwrap();
        for _ in 0..100 {
            let pose = random_pose(&mut rng, 0.2, 0.4);
            let p = PixelCoord::new(rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
            let d = rng.random_range(2.0..10.0);
            let Ok((q, zq)) = project_pixel(p, d, &pose, &k) else {
                continue;
            };
            let (back, zb) = project_pixel(q, zq, &pose.inverse(), &k).unwrap();
            assert_relative_eq!(back.u, p.u, epsilon = 1e-6);
            assert_relative_eq!(back.v, p.v, epsilon = 1e-6);
            assert_relative_eq!(zb, d, epsilon = 1e-6);
        }
    }

    #[test]
    fn exp_map_is_smooth_at_tiny_angles() {
        // Analytic Jacobian of every matrix entry w.r.t. the rotation
        // parameters at theta = 1e-7, against central finite differences.
        let w0 = [1e-7 / 3.0f64.sqrt(); 3];
        let t0 = [0.4, -0.2, 0.1];
        let h = 1e-5;
        for lane in 0..3 {
            let rot: [Dual<3>; 3] = std::array::from_fn(|i| Dual::variable(w0[i], i));
            let trans: [Dual<3>; 3] = std::array::from_fn(|i| Dual::constant(t0[i]));
            let rigid = rigid_from_params(rot, trans);

            let mut wp = w0;
            wp[lane] += h;
            let mut wm = w0;
            wm[lane] -= h;
            let rp = rigid_from_params(wp, t0);
            let rm = rigid_from_params(wm, t0);
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (rp.rot[i][j] - rm.rot[i][j]) / (2.0 * h);
                    assert!(
                        (rigid.rot[i][j].d[lane] - fd).abs() < 1e-5,
                        "dR[{i}][{j}]/dw[{lane}]: analytic {} vs fd {}",
                        rigid.rot[i][j].d[lane],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let k = CameraIntrinsics::identity();
        // Move the point 5 units backwards along z: depth 2 ends at z = -3.
        let pose = Pose6::new([0.0; 3], [0.0, 0.0, -5.0]);
        let err = project_pixel(PixelCoord::new(0.0, 0.0), 2.0, &pose, &k).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveProjectedDepth { .. }));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
    }
}
