//! Poincaré-sphere math: Stokes vectors, axis-angle rotations, and the
//! click-count Stokes estimator used by the feedback loop.
//!
//! Polarization states live on the unit sphere with axes S1 (H/V),
//! S2 (+45°/−45°) and S3 (circular). Birefringence and the piezo actuators
//! both act as rotations of this sphere. Rotations follow the right-hand
//! rule about the positive tip of the named axis; the controller only
//! needs the convention to be consistent, not physically signed.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolarizationError {
    /// Rotation axis is not unit length.
    #[error("rotation axis must be unit length")]
    NonUnitAxis,
    /// A Stokes estimate was requested from a window where one detector
    /// pair saw no clicks at all; the caller should re-sample.
    #[error("no clicks in one detector pair; window unusable")]
    ZeroWindow,
}

/// A point on (or, for statistical estimates, inside) the Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    /// Horizontal linear polarization.
    pub const H: StokesVector = StokesVector { s1: 1.0, s2: 0.0, s3: 0.0 };
    /// Vertical linear polarization.
    pub const V: StokesVector = StokesVector { s1: -1.0, s2: 0.0, s3: 0.0 };
    /// +45° linear polarization.
    pub const Q: StokesVector = StokesVector { s1: 0.0, s2: 1.0, s3: 0.0 };
    /// −45° linear polarization.
    pub const R: StokesVector = StokesVector { s1: 0.0, s2: -1.0, s3: 0.0 };

    pub fn new(s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s1, s2, s3 }
    }

    /// Builds the unit Stokes vector for double azimuth angle `2θ` and
    /// double ellipticity angle `2ε`:
    /// `(cos2ε·cos2θ, cos2ε·sin2θ, sin2ε)`.
    pub fn from_angles(azimuth_2theta: f64, ellipticity_2eps: f64) -> Self {
        StokesVector {
            s1: ellipticity_2eps.cos() * azimuth_2theta.cos(),
            s2: ellipticity_2eps.cos() * azimuth_2theta.sin(),
            s3: ellipticity_2eps.sin(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn dot(&self, other: &StokesVector) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    /// Great-circle angle to another unit vector, in radians.
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }
}

/// Proper rotation of the Poincaré sphere, stored as axis-angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareRotation {
    axis: [f64; 3],
    angle: f64,
}

/// Unit axis pointing at H (the S1 axis).
pub const HV_AXIS: [f64; 3] = [1.0, 0.0, 0.0];
/// Unit axis pointing at Q (the S2 axis).
pub const QR_AXIS: [f64; 3] = [0.0, 1.0, 0.0];
/// Unit axis pointing at right-circular (the S3 axis).
pub const CIRC_AXIS: [f64; 3] = [0.0, 0.0, 1.0];

const UNIT_TOL: f64 = 1e-9;

impl PoincareRotation {
    /// Rotation by `angle` radians about `axis`. The axis must be unit
    /// length to within 1e-9.
    pub fn new(axis: [f64; 3], angle: f64) -> Result<Self, PolarizationError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(PolarizationError::NonUnitAxis);
        }
        Ok(PoincareRotation { axis, angle })
    }

    /// Rotation about an axis known to be unit length (the named sphere axes).
    pub fn about(axis: [f64; 3], angle: f64) -> Self {
        PoincareRotation::new(axis, angle).expect("axis must be unit length")
    }

    pub fn identity() -> Self {
        PoincareRotation { axis: HV_AXIS, angle: 0.0 }
    }

    pub fn inverse(&self) -> Self {
        PoincareRotation { axis: self.axis, angle: -self.angle }
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Rodrigues rotation of a Stokes vector.
    pub fn rotate(&self, s: &StokesVector) -> StokesVector {
        let k = self.axis;
        let v = s.as_array();
        let (sin, cos) = self.angle.sin_cos();
        let kxv = [
            k[1] * v[2] - k[2] * v[1],
            k[2] * v[0] - k[0] * v[2],
            k[0] * v[1] - k[1] * v[0],
        ];
        let kdv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
        let f = kdv * (1.0 - cos);
        StokesVector {
            s1: v[0] * cos + kxv[0] * sin + k[0] * f,
            s2: v[1] * cos + kxv[1] * sin + k[1] * f,
            s3: v[2] * cos + kxv[2] * sin + k[2] * f,
        }
    }

    fn to_quaternion(&self) -> [f64; 4] {
        let (sin, cos) = (self.angle * 0.5).sin_cos();
        [cos, self.axis[0] * sin, self.axis[1] * sin, self.axis[2] * sin]
    }

    fn from_quaternion(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let q = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        let half = q[0].clamp(-1.0, 1.0).acos();
        let s = (1.0 - q[0] * q[0]).sqrt();
        if s < 1e-12 {
            return PoincareRotation::identity();
        }
        PoincareRotation {
            axis: [q[1] / s, q[2] / s, q[3] / s],
            angle: 2.0 * half,
        }
    }

    /// Composition: applying the result equals applying `self` first,
    /// then `other`.
    pub fn compose(&self, other: &PoincareRotation) -> PoincareRotation {
        // Hamilton product q_other * q_self.
        let a = other.to_quaternion();
        let b = self.to_quaternion();
        PoincareRotation::from_quaternion([
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ])
    }
}

/// Detector clicks accumulated over one sampling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClickCounts {
    pub i_h: u64,
    pub i_v: u64,
    pub i_q: u64,
    pub i_r: u64,
}

impl ClickCounts {
    pub fn total(&self) -> u64 {
        self.i_h + self.i_v + self.i_q + self.i_r
    }
}

/// The two Stokes parameters recoverable from the four-detector bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedSop {
    pub s1_hat: f64,
    pub s2_hat: f64,
    pub window_pulses: u64,
}

/// Normalized Stokes parameters from detector clicks:
/// `S1 = (I(H)−I(V))/(I(H)+I(V))`, `S2 = (I(Q)−I(R))/(I(Q)+I(R))`.
pub fn estimate_stokes(c: &ClickCounts) -> Result<EstimatedSop, PolarizationError> {
    let hv = c.i_h + c.i_v;
    let qr = c.i_q + c.i_r;
    if hv == 0 || qr == 0 {
        return Err(PolarizationError::ZeroWindow);
    }
    Ok(EstimatedSop {
        s1_hat: (c.i_h as f64 - c.i_v as f64) / hv as f64,
        s2_hat: (c.i_q as f64 - c.i_r as f64) / qr as f64,
        window_pulses: c.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    /// Independent oracle: 3x3 rotation matrix built directly from
    /// axis-angle, applied by plain matrix-vector product.
    fn matrix_oracle(axis: [f64; 3], angle: f64, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = axis;
        let m = [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ];
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 && n <= 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    #[test]
    fn canonical_states_from_angles() {
        let h = StokesVector::from_angles(0.0, 0.0);
        assert_abs_diff_eq!(h.s1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.s2, 0.0, epsilon = 1e-12);
        let q = StokesVector::from_angles(PI / 2.0, 0.0);
        assert_abs_diff_eq!(q.s1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.s2, 1.0, epsilon = 1e-12);
        // Direct evaluation at 2θ = π/4.
        let d = StokesVector::from_angles(PI / 4.0, 0.0);
        assert_abs_diff_eq!(d.s1, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(d.s2, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(d.s3, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_fixed_point_and_oracle_cases() {
        // H is an eigen-axis fixed point of any HV-axis rotation.
        for angle in [0.3, 1.0, PI, 4.2] {
            let r = PoincareRotation::about(HV_AXIS, angle);
            let out = r.rotate(&StokesVector::H);
            assert!(out.angle_to(&StokesVector::H) < 1e-9);
        }
        // rotate(H, QR axis, π) = V and rotate(Q, HV axis, π) = R,
        // both checked against the matrix oracle too.
        let v = PoincareRotation::about(QR_AXIS, PI).rotate(&StokesVector::H);
        assert!(v.angle_to(&StokesVector::V) < 1e-9);
        let r = PoincareRotation::about(HV_AXIS, PI).rotate(&StokesVector::Q);
        assert!(r.angle_to(&StokesVector::R) < 1e-9);
        let oracle = matrix_oracle(QR_AXIS, PI, StokesVector::H.as_array());
        assert_abs_diff_eq!(oracle[0], v.s1, epsilon = 1e-12);
    }

    #[test]
    fn non_unit_axis_rejected() {
        assert_eq!(
            PoincareRotation::new([1.0, 1.0, 0.0], 0.5).unwrap_err(),
            PolarizationError::NonUnitAxis
        );
    }

    #[test]
    fn rotation_matches_matrix_oracle_and_preserves_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let axis = random_unit(&mut rng);
            let angle = rng.random_range(-2.0 * PI..2.0 * PI);
            let v = random_unit(&mut rng);
            let s = StokesVector::new(v[0], v[1], v[2]);
            let r = PoincareRotation::new(axis, angle).unwrap();
            let got = r.rotate(&s);
            let want = matrix_oracle(axis, angle, v);
            assert_abs_diff_eq!(got.s1, want[0], epsilon = 1e-9);
            assert_abs_diff_eq!(got.s2, want[1], epsilon = 1e-9);
            assert_abs_diff_eq!(got.s3, want[2], epsilon = 1e-9);
            assert_abs_diff_eq!(got.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_group_property() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..500 {
            let r1 = PoincareRotation::new(random_unit(&mut rng), rng.random_range(-PI..PI)).unwrap();
            let r2 = PoincareRotation::new(random_unit(&mut rng), rng.random_range(-PI..PI)).unwrap();
            let v = random_unit(&mut rng);
            let s = StokesVector::new(v[0], v[1], v[2]);
            let seq = r2.rotate(&r1.rotate(&s));
            let comp = r1.compose(&r2).rotate(&s);
            assert_abs_diff_eq!(seq.s1, comp.s1, epsilon = 1e-9);
            assert_abs_diff_eq!(seq.s2, comp.s2, epsilon = 1e-9);
            assert_abs_diff_eq!(seq.s3, comp.s3, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_identities() {
        let r = PoincareRotation::about(QR_AXIS, 0.7);
        let id = PoincareRotation::identity();
        let v = StokesVector::from_angles(0.4, 0.2);
        let a = id.compose(&r).rotate(&v);
        let b = r.rotate(&v);
        assert!(a.angle_to(&b) < 1e-9);
        let c = r.compose(&r.inverse()).rotate(&v);
        assert!(c.angle_to(&v) < 1e-9);
        // Two quarter turns about S1 equal a half turn, via the matrix oracle.
        let half = PoincareRotation::about(HV_AXIS, PI / 2.0);
        let full = half.compose(&half);
        let got = full.rotate(&StokesVector::Q);
        let want = matrix_oracle(HV_AXIS, PI, StokesVector::Q.as_array());
        assert_abs_diff_eq!(got.s2, want[1], epsilon = 1e-9);
        assert_abs_diff_eq!(got.s3, want[2], epsilon = 1e-9);
    }

    #[test]
    fn estimator_counts() {
        let e = estimate_stokes(&ClickCounts { i_h: 3200, i_v: 0, i_q: 1600, i_r: 1600 }).unwrap();
        assert_eq!((e.s1_hat, e.s2_hat), (1.0, 0.0));
        let e = estimate_stokes(&ClickCounts { i_h: 800, i_v: 800, i_q: 800, i_r: 800 }).unwrap();
        assert_eq!((e.s1_hat, e.s2_hat), (0.0, 0.0));
        let e = estimate_stokes(&ClickCounts { i_h: 1568, i_v: 32, i_q: 816, i_r: 784 }).unwrap();
        assert_abs_diff_eq!(e.s1_hat, 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(e.s2_hat, 0.02, epsilon = 1e-12);
    }

    #[test]
    fn estimator_zero_window() {
        let err = estimate_stokes(&ClickCounts { i_h: 0, i_v: 0, i_q: 10, i_r: 10 }).unwrap_err();
        assert_eq!(err, PolarizationError::ZeroWindow);
        let err = estimate_stokes(&ClickCounts { i_h: 10, i_v: 10, i_q: 0, i_r: 0 }).unwrap_err();
        assert_eq!(err, PolarizationError::ZeroWindow);
    }

    #[test]
    fn estimator_recovers_equatorial_states_from_exact_counts() {
        // Eq.-1 consistency: exact expected counts from projection
        // probabilities recover (s1, s2) for states with s3 = 0.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..100 {
            let s = StokesVector::from_angles(rng.random_range(-PI..PI), 0.0);
            let n = 1_000_000.0_f64;
            let c = ClickCounts {
                i_h: (n * (1.0 + s.s1) / 2.0).round() as u64,
                i_v: (n * (1.0 - s.s1) / 2.0).round() as u64,
                i_q: (n * (1.0 + s.s2) / 2.0).round() as u64,
                i_r: (n * (1.0 - s.s2) / 2.0).round() as u64,
            };
            let e = estimate_stokes(&c).unwrap();
            // Rounding to integer counts limits agreement to ~1/n; use exact
            // real-valued counts for the 1e-12 check below.
            assert_abs_diff_eq!(e.s1_hat, s.s1, epsilon = 2e-6);
            let s1 = ((n * (1.0 + s.s1) / 2.0) - (n * (1.0 - s.s1) / 2.0)) / n;
            assert_abs_diff_eq!(s1, s.s1, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_axis_reachability_grid_search() {
        // For any unit s there are angles (α about S1, then β about S2)
        // mapping s to H. Brute-force 1° grid, residual < 2°.
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let deg = PI / 180.0;
        for _ in 0..500 {
            let v = random_unit(&mut rng);
            let s = StokesVector::new(v[0], v[1], v[2]);
            let mut best = f64::MAX;
            for ai in 0..360 {
                let alpha = ai as f64 * deg;
                let mid = PoincareRotation::about(HV_AXIS, alpha).rotate(&s);
                for bi in 0..360 {
                    let beta = bi as f64 * deg;
                    // Rotation about S2 by β sends s1 to s1·cosβ + s3·sinβ;
                    // the angle to H is acos of that.
                    let s1 = mid.s1 * beta.cos() + mid.s3 * beta.sin();
                    let d = s1.clamp(-1.0, 1.0).acos();
                    if d < best {
                        best = d;
                    }
                }
                if best < 1.0 * deg {
                    break;
                }
            }
            assert!(best < 2.0 * deg, "residual {} rad", best);
        }
    }
}
