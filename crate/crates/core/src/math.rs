//! Small numeric helpers shared across modules.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the exponential map switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotation matrix of an axis-angle vector (exponential map of so(3)).
pub fn axis_angle_to_matrix(aa: &Vec3) -> Mat3 {
    let theta = aa.norm();
    let k = skew(aa);
    if theta < SMALL_ANGLE {
        // R = I + K + K^2/2 + O(theta^3)
        return Mat3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from a (w, x, y, z) quaternion, normalised first.
///
/// Every entry is quadratic in the components, so `q` and `-q` give the
/// same matrix bit for bit.
pub fn quaternion_matrix(q: [f64; 4]) -> Option<Mat3> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
    Some(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Quaternion (w, x, y, z) rotating +z onto `dir`.
pub fn quaternion_aligning_z(dir: &Vec3) -> [f64; 4] {
    let q = UnitQuaternion::rotation_between(&Vec3::z(), dir).unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    [q.w, q.i, q.j, q.k]
}

/// Deterministic pairwise (fixed binary tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-way softmax, returned as (p0, p1) with p0 + p1 = 1.
pub fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    [ea / s, eb / s]
}

pub fn is_finite3(v: &Vec3) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_map_matches_quarter_turn() {
        let r = axis_angle_to_matrix(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let p = r * Vec3::x();
        assert!((p - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn exp_map_series_is_continuous() {
        let tiny = Vec3::new(3e-9, -2e-9, 1e-9);
        let series = axis_angle_to_matrix(&tiny);
        let closed = {
            let k = skew(&tiny);
            let t = tiny.norm();
            Mat3::identity() + k * (t.sin() / t) + k * k * ((1.0 - t.cos()) / (t * t))
        };
        assert!((series - closed).norm() < 1e-15);
    }

    #[test]
    fn pairwise_sum_matches_naive_for_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn softmax_symmetric_at_zero() {
        assert_eq!(softmax2(0.0, 0.0), [0.5, 0.5]);
        let p = softmax2(800.0, -800.0);
        assert!(p[0] == 1.0 && p[1] == 0.0);
    }

    #[test]
    fn quaternion_double_cover_is_exact() {
        let q = [0.3, -0.5, 0.7, 0.1];
        let nq = [-0.3, 0.5, -0.7, -0.1];
        assert_eq!(quaternion_matrix(q), quaternion_matrix(nq));
        assert!(quaternion_matrix([0.0; 4]).is_none());
    }
}
