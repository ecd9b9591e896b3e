//! Forward kinematics and linear blend skinning.
//!
//! Joint transforms are rest-relative: the identity pose maps every rest
//! point to itself. A Gaussian's transform is the weight-blended 3x4 matrix
//! of its joints; its linear part is in general not a rotation, so normals
//! are renormalised after transformation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::math::{axis_angle_to_matrix, is_finite3, Mat3, Vec3};

/// Blend weights whose row sum deviates more than this are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Blended linear parts with `|det|` at or below this are degenerate.
pub const DEGENERATE_DET: f64 = 1e-8;
/// Maximum nonzero influences per row.
pub const MAX_INFLUENCES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// `None` only for the root, joint 0.
    pub parents: Vec<Option<usize>>,
    pub rest: Vec<Vec3>,
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, rest: Vec<Vec3>) -> Result<Self> {
        let s = Self { names, parents, rest };
        s.validate()?;
        Ok(s)
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j == 0 {
            return Err(Error::Skeleton("no joints".into()));
        }
        if self.rest.len() != j || self.names.len() != j {
            return Err(Error::Skeleton(format!(
                "{} parents, {} rest positions, {} names",
                j,
                self.rest.len(),
                self.names.len()
            )));
        }
        if self.parents[0].is_some() {
            return Err(Error::Skeleton("joint 0 must be the root".into()));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::Skeleton(format!("joint {i} has no parent; only joint 0 may be a root"))),
                Some(p) if *p >= j => return Err(Error::Skeleton(format!("joint {i} parent {p} out of range"))),
                _ => {}
            }
        }
        if let Some(i) = self.rest.iter().position(|r| !is_finite3(r)) {
            return Err(Error::Skeleton(format!("joint {i} rest position not finite")));
        }
        self.topological_order().map(|_| ())
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let j = self.parents.len();
        let mut children = vec![Vec::new(); j];
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let mut order = Vec::with_capacity(j);
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(children[i].iter().rev());
        }
        if order.len() != j {
            return Err(Error::Skeleton("parent graph has a cycle or is disconnected from the root".into()));
        }
        Ok(order)
    }

    /// Same joint count and parent structure.
    pub fn same_topology(&self, other: &Skeleton) -> bool {
        self.parents == other.parents
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation per joint, radians.
    pub rotations: Vec<Vec3>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self {
            rotations: vec![Vec3::zeros(); joints],
            translation: Vec3::zeros(),
        }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.rotations.len() != skeleton.joint_count() {
            return Err(Error::Skeleton(format!(
                "pose has {} joint rotations, skeleton has {} joints",
                self.rotations.len(),
                skeleton.joint_count()
            )));
        }
        if !self.rotations.iter().all(is_finite3) || !is_finite3(&self.translation) {
            return Err(Error::InvalidParameter("pose has non-finite entries".into()));
        }
        Ok(())
    }
}

/// `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `self` after `inner`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }
}

/// Rest-relative transform of every joint.
///
/// Each joint rotates about its own rest position, then the parent's
/// transform is applied. The root also receives the pose translation.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<RigidTransform>> {
    skeleton.validate()?;
    pose.validate(skeleton)?;
    let mut out = vec![RigidTransform::identity(); skeleton.joint_count()];
    for j in skeleton.topological_order()? {
        let r = axis_angle_to_matrix(&pose.rotations[j]);
        let rest = skeleton.rest[j];
        let local = RigidTransform {
            rotation: r,
            translation: rest - r * rest,
        };
        out[j] = match skeleton.parents[j] {
            Some(p) => out[p].compose(&local),
            None => RigidTransform {
                rotation: local.rotation,
                translation: local.translation + pose.translation,
            },
        };
    }
    Ok(out)
}

/// Up to four (joint, weight) influences per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinningWeights {
    pub rows: Vec<[(u32, f32); MAX_INFLUENCES]>,
}

impl SkinningWeights {
    /// Builds rows from sparse lists, keeping the four largest weights.
    pub fn from_sparse(rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut r: Vec<(usize, f64)> = r.iter().copied().filter(|&(_, w)| w != 0.0).collect();
                if r.len() > MAX_INFLUENCES {
                    return Err(Error::InvalidParameter(format!("row {i} has {} influences", r.len())));
                }
                r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut out = [(0u32, 0f32); MAX_INFLUENCES];
                for (slot, (j, w)) in out.iter_mut().zip(r) {
                    *slot = (j as u32, w as f32);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> SkinningWeights {
        SkinningWeights {
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    /// Checks nonnegativity, joint range and row sums.
    pub fn validate(&self, joints: usize) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in row {
                if w < 0.0 || !w.is_finite() {
                    return Err(Error::InvalidParameter(format!("row {i} has weight {w}")));
                }
                if w > 0.0 && j as usize >= joints {
                    return Err(Error::InvalidParameter(format!("row {i} references joint {j} of {joints}")));
                }
                sum += w as f64;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::WeightRow { row: i, sum });
            }
        }
        Ok(())
    }
}

/// Per-Gaussian blended transforms `x -> linear * x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinTransform {
    pub linear: Vec<Mat3>,
    pub translation: Vec<Vec3>,
}

impl SkinTransform {
    pub fn identity(n: usize) -> Self {
        Self {
            linear: vec![Mat3::identity(); n],
            translation: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn apply(&self, i: usize, x: &Vec3) -> Vec3 {
        self.linear[i] * x + self.translation[i]
    }

    pub fn subset(&self, indices: &[usize]) -> SkinTransform {
        SkinTransform {
            linear: indices.iter().map(|&i| self.linear[i]).collect(),
            translation: indices.iter().map(|&i| self.translation[i]).collect(),
        }
    }

    /// Indices whose linear part is (near) singular.
    pub fn degenerate(&self) -> Vec<usize> {
        self.linear
            .iter()
            .enumerate()
            .filter(|(_, a)| !(a.determinant().abs() > DEGENERATE_DET))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `(A_i | t_i) = sum_j w_ij (R_j | t_j)`.
///
/// Stored weights are single precision; each row is rescaled to sum to one
/// in double precision so the identity pose is reproduced exactly.
pub fn blend_transforms(weights: &SkinningWeights, joints: &[RigidTransform]) -> Result<SkinTransform> {
    weights.validate(joints.len())?;
    let mut linear = Vec::with_capacity(weights.len());
    let mut translation = Vec::with_capacity(weights.len());
    for row in &weights.rows {
        let sum: f64 = row.iter().map(|&(_, w)| w as f64).sum();
        let mut a = Mat3::zeros();
        let mut t = Vec3::zeros();
        for &(j, w) in row {
            if w == 0.0 {
                continue;
            }
            let w = w as f64 / sum;
            let jt = &joints[j as usize];
            a += jt.rotation * w;
            t += jt.translation * w;
        }
        linear.push(a);
        translation.push(t);
    }
    Ok(SkinTransform { linear, translation })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedGaussians {
    pub positions: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    pub normals: Vec<Option<Vec3>>,
}

/// Poses the geometric layer: `x = A x̄ + t`, `Σ = A Σ̄ Aᵀ`, `n = A n̄ / |A n̄|`.
pub fn pose_gaussians(set: &GaussianSet, xf: &SkinTransform, normals: &[Option<Vec3>]) -> Result<PosedGaussians> {
    if xf.len() != set.len() || normals.len() != set.len() {
        return Err(Error::Dimension(format!(
            "{} Gaussians, {} transforms, {} normals",
            set.len(),
            xf.len(),
            normals.len()
        )));
    }
    let mut out = PosedGaussians {
        positions: Vec::with_capacity(set.len()),
        covariances: Vec::with_capacity(set.len()),
        normals: Vec::with_capacity(set.len()),
    };
    for i in 0..set.len() {
        let a = &xf.linear[i];
        out.positions.push(xf.apply(i, &set.canonical_position(i)));
        let cov = a * set.covariance(i)? * a.transpose();
        out.covariances.push((cov + cov.transpose()) * 0.5);
        out.normals.push(normals[i].and_then(|n| transform_normal(a, &n)));
    }
    Ok(out)
}

pub fn transform_normal(a: &Mat3, n: &Vec3) -> Option<Vec3> {
    let v = a * n;
    let len = v.norm();
    (len >= 1e-12 && len.is_finite()).then(|| v / len)
}

/// Rendering-layer positions `y = A (x̄_base + Δx̄ + Δȳ) + t`.
pub fn pose_rendering_layer(set: &GaussianSet, xf: &SkinTransform) -> Result<Vec<Vec3>> {
    if xf.len() != set.len() {
        return Err(Error::Dimension(format!("{} Gaussians, {} transforms", set.len(), xf.len())));
    }
    Ok((0..set.len()).map(|i| xf.apply(i, &set.render_position(i))).collect())
}

/// Posed covariances only.
pub fn pose_covariances(set: &GaussianSet, xf: &SkinTransform) -> Result<Vec<Mat3>> {
    (0..set.len())
        .map(|i| {
            let a = &xf.linear[i];
            let cov = a * set.covariance(i)? * a.transpose();
            Ok((cov + cov.transpose()) * 0.5)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> Skeleton {
        Skeleton::new(
            vec!["root".into(), "child".into()],
            vec![None, Some(0)],
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn zero_pose_gives_identity() {
        let s = chain();
        let t = forward_kinematics(&s, &Pose::identity(2)).unwrap();
        assert!(t.iter().all(|x| *x == RigidTransform::identity()));
    }

    #[test]
    fn child_quarter_turn_about_its_rest_position() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.rotations[1] = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let t = forward_kinematics(&s, &pose).unwrap();
        let p = t[1].apply(&Vec3::new(2.0, 0.0, 0.0));
        assert!((p - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(t[0], RigidTransform::identity());
    }

    #[test]
    fn translation_only_pose() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.translation = Vec3::new(0.5, -1.0, 2.0);
        for t in forward_kinematics(&s, &pose).unwrap() {
            assert_eq!(t.rotation, Mat3::identity());
            assert_eq!(t.translation, pose.translation);
        }
    }

    #[test]
    fn cyclic_and_malformed_skeletons_rejected() {
        let r = vec![Vec3::zeros(); 3];
        let names = vec!["a".into(), "b".into(), "c".into()];
        assert!(Skeleton::new(names.clone(), vec![None, Some(2), Some(1)], r.clone()).is_err());
        assert!(Skeleton::new(names.clone(), vec![Some(0), Some(0), Some(1)], r.clone()).is_err());
        assert!(Skeleton::new(names.clone(), vec![None, Some(7), Some(1)], r.clone()).is_err());
        // Parents listed after children are fine.
        assert!(Skeleton::new(names, vec![None, Some(2), Some(0)], r).is_ok());
    }

    #[test]
    fn pose_joint_count_validated() {
        assert!(forward_kinematics(&chain(), &Pose::identity(3)).is_err());
    }

    #[test]
    fn one_hot_and_idempotent_blends() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.rotations[1] = Vec3::new(0.3, -0.2, 0.9);
        pose.translation = Vec3::new(0.1, 0.2, 0.3);
        let joints = forward_kinematics(&s, &pose).unwrap();
        let w = SkinningWeights::from_sparse(&[vec![(1, 1.0)], vec![(0, 1.0)]]).unwrap();
        let xf = blend_transforms(&w, &joints).unwrap();
        assert_eq!(xf.linear[0], joints[1].rotation);
        assert_eq!(xf.translation[0], joints[1].translation);
        assert_eq!(xf.linear[1], joints[0].rotation);

        let same = vec![joints[1], joints[1]];
        let w = SkinningWeights::from_sparse(&[vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let xf = blend_transforms(&w, &same).unwrap();
        assert!((xf.linear[0] - joints[1].rotation).norm() < 1e-15);
        assert!((xf.translation[0] - joints[1].translation).norm() < 1e-15);
    }

    #[test]
    fn opposite_quarter_turns_blend_to_degenerate() {
        let plus = RigidTransform {
            rotation: axis_angle_to_matrix(&Vec3::new(0.0, 0.0, FRAC_PI_2)),
            translation: Vec3::zeros(),
        };
        let minus = RigidTransform {
            rotation: axis_angle_to_matrix(&Vec3::new(0.0, 0.0, -FRAC_PI_2)),
            translation: Vec3::zeros(),
        };
        let w = SkinningWeights::from_sparse(&[vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let xf = blend_transforms(&w, &[plus, minus]).unwrap();
        // Direct average of the two matrices is diag(0, 0, 1).
        let want = Mat3::from_diagonal(&Vec3::new(0.0, 0.0, 1.0));
        assert!((xf.linear[0] - want).norm() < 1e-15);
        assert_eq!(xf.degenerate(), vec![0]);
    }

    #[test]
    fn unnormalised_rows_rejected() {
        let w = SkinningWeights::from_sparse(&[vec![(0, 0.5), (1, 0.4)]]).unwrap();
        let joints = vec![RigidTransform::identity(); 2];
        assert!(matches!(blend_transforms(&w, &joints), Err(Error::WeightRow { row: 0, .. })));
        let too_many = vec![(0, 0.2), (1, 0.2), (2, 0.2), (3, 0.2), (4, 0.2)];
        assert!(SkinningWeights::from_sparse(&[too_many]).is_err());
    }
}
