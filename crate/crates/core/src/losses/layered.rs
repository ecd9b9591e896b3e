//! Multi-layer terms: body/cloth clearance, layer tethering and Chamfer.

use super::Term;
use crate::error::{Error, Result};
use crate::math::{pairwise_sum, Vec3};
use crate::spatial::KdTree;

/// `(1/N_cloth) Σ max(ε - d_i, 0)²` with `d_i = (x_cloth_i - x_body_i) · n_body_i`.
///
/// Arrays are pixel-aligned: entry `i` of each slice refers to the same map
/// pixel. Pairs whose body normal is missing are skipped with a warning but
/// still count toward `N_cloth`. The gradient is with respect to the cloth
/// positions.
pub fn loss_coll(cloth: &[Vec3], body: &[Vec3], body_normals: &[Option<Vec3>], eps: f64) -> Result<Term> {
    if cloth.len() != body.len() || cloth.len() != body_normals.len() {
        return Err(Error::Dimension(format!(
            "collision: {} cloth, {} body, {} normals",
            cloth.len(),
            body.len(),
            body_normals.len()
        )));
    }
    if cloth.is_empty() {
        return Err(Error::Empty("collision loss over an empty cloth set".into()));
    }
    let n = cloth.len() as f64;
    let mut grad = vec![Vec3::zeros(); cloth.len()];
    let mut per = vec![0.0; cloth.len()];
    let mut skipped = 0usize;
    for i in 0..cloth.len() {
        let Some(normal) = body_normals[i] else {
            skipped += 1;
            continue;
        };
        let d = (cloth[i] - body[i]).dot(&normal);
        let h = eps - d;
        if h > 0.0 {
            per[i] = h * h;
            grad[i] = normal * (-2.0 * h / n);
        }
    }
    let mut warnings = Vec::new();
    if skipped > 0 {
        warnings.push(format!("collision: {skipped} pairs skipped for missing body normals"));
    }
    Ok(Term {
        value: pairwise_sum(&per) / n,
        grad,
        warnings,
    })
}

/// Layer tethering value with gradients for both layers' render offsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTerm {
    pub value: f64,
    pub grad_body: Vec<Vec3>,
    pub grad_cloth: Vec<Vec3>,
}

/// `(1/N_body) Σ max(|Δȳ_body| - ε/2, 0)² + (1/N_cloth) Σ max(|Δȳ_cloth| - ε/2, 0)²`.
/// An empty side contributes zero.
pub fn loss_layer(body: &[Vec3], cloth: &[Vec3], eps: f64) -> LayerTerm {
    let (vb, gb) = tether(body, eps * 0.5);
    let (vc, gc) = tether(cloth, eps * 0.5);
    LayerTerm {
        value: vb + vc,
        grad_body: gb,
        grad_cloth: gc,
    }
}

fn tether(offsets: &[Vec3], radius: f64) -> (f64, Vec<Vec3>) {
    if offsets.is_empty() {
        return (0.0, Vec::new());
    }
    let n = offsets.len() as f64;
    let mut per = vec![0.0; offsets.len()];
    let mut grad = vec![Vec3::zeros(); offsets.len()];
    for (i, y) in offsets.iter().enumerate() {
        let len = y.norm();
        let h = len - radius;
        if h > 0.0 {
            per[i] = h * h;
            grad[i] = y * (2.0 * h / (len * n));
        }
    }
    (pairwise_sum(&per) / n, grad)
}

/// Symmetric Chamfer value with gradients for both point sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chamfer {
    pub value: f64,
    pub grad_a: Vec<Vec3>,
    pub grad_b: Vec<Vec3>,
}

/// Nearest neighbour in `b` for each point of `a`, and in `a` for each of `b`.
pub fn chamfer_pairs(a: &[Vec3], b: &[Vec3]) -> (Vec<usize>, Vec<usize>) {
    let tree_a = KdTree::new(a);
    let tree_b = KdTree::new(b);
    let a_to_b = a.iter().map(|p| tree_b.nearest(p).map_or(0, |(i, _)| i)).collect();
    let b_to_a = b.iter().map(|p| tree_a.nearest(p).map_or(0, |(i, _)| i)).collect();
    (a_to_b, b_to_a)
}

/// Mean over `a` of squared distance to the nearest point of `b`, plus the
/// same from `b` to `a`.
pub fn loss_chamfer(a: &[Vec3], b: &[Vec3]) -> Result<Chamfer> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer distance needs two nonempty sets".into()));
    }
    let (a_to_b, b_to_a) = chamfer_pairs(a, b);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let mut grad_a = vec![Vec3::zeros(); a.len()];
    let mut grad_b = vec![Vec3::zeros(); b.len()];
    let mut fwd = Vec::with_capacity(a.len());
    for (i, &j) in a_to_b.iter().enumerate() {
        let d = a[i] - b[j];
        fwd.push(d.norm_squared());
        grad_a[i] += d * (2.0 / na);
        grad_b[j] -= d * (2.0 / na);
    }
    let mut bwd = Vec::with_capacity(b.len());
    for (j, &i) in b_to_a.iter().enumerate() {
        let d = b[j] - a[i];
        bwd.push(d.norm_squared());
        grad_b[j] += d * (2.0 / nb);
        grad_a[i] -= d * (2.0 / nb);
    }
    Ok(Chamfer {
        value: pairwise_sum(&fwd) / na + pairwise_sum(&bwd) / nb,
        grad_a,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coll_values() {
        let n = Some(Vec3::z());
        let body = [Vec3::zeros(), Vec3::zeros()];
        let clear = [Vec3::new(0.0, 0.0, 0.02), Vec3::new(0.0, 0.0, 0.011)];
        assert_eq!(loss_coll(&clear, &body, &[n, n], 0.01).unwrap().value, 0.0);
        let t = loss_coll(&[Vec3::zeros()], &[Vec3::zeros()], &[n], 0.01).unwrap();
        assert!((t.value - 1e-4).abs() < 1e-18);
        let mixed = [Vec3::new(0.0, 0.0, 0.02), Vec3::new(0.0, 0.0, -0.01)];
        let t = loss_coll(&mixed, &body, &[n, n], 0.01).unwrap();
        assert_eq!(t.grad[0], Vec3::zeros());
        assert!(t.grad[1].z < 0.0);
        let t = loss_coll(&mixed, &body, &[None, n], 0.01).unwrap();
        assert_eq!(t.warnings.len(), 1);
        assert!(loss_coll(&mixed, &body[..1], &[n], 0.01).is_err());
    }

    #[test]
    fn layer_values() {
        let eps = 0.01;
        let inside = [Vec3::new(0.004, 0.0, 0.0), Vec3::new(0.0, -0.005, 0.0)];
        let t = loss_layer(&inside, &inside, eps);
        assert_eq!(t.value, 0.0);
        assert!(t.grad_body.iter().chain(&t.grad_cloth).all(|g| *g == Vec3::zeros()));
        let t = loss_layer(&[Vec3::new(0.0, eps, 0.0)], &[], eps);
        assert!((t.value - 0.25 * eps * eps).abs() < 1e-18);
    }

    #[test]
    fn chamfer_values() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(loss_chamfer(&a, &b).unwrap().value, 2.0);
        assert_eq!(loss_chamfer(&b, &b).unwrap().value, 0.0);
        assert!(loss_chamfer(&a, &[]).is_err());
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_order_free(
            a in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..30),
            b in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..30),
        ) {
            let a: Vec<Vec3> = a.iter().map(|p| Vec3::from(*p)).collect();
            let b: Vec<Vec3> = b.iter().map(|p| Vec3::from(*p)).collect();
            let ab = loss_chamfer(&a, &b).unwrap().value;
            let ba = loss_chamfer(&b, &a).unwrap().value;
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let mut rev = a.clone();
            rev.reverse();
            let r = loss_chamfer(&rev, &b).unwrap().value;
            prop_assert!((ab - r).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn coll_nonincreasing_in_d(d0 in -0.02f64..0.02, step in 0.0f64..0.01) {
            let n = [Some(Vec3::z())];
            let f = |d: f64| loss_coll(&[Vec3::new(0.0, 0.0, d)], &[Vec3::zeros()], &n, 0.005).unwrap().value;
            prop_assert!(f(d0 + step) <= f(d0));
        }

        #[test]
        fn layer_nondecreasing_in_norm(r in 0.0f64..0.02, step in 0.0f64..0.01) {
            let f = |r: f64| loss_layer(&[Vec3::new(r, 0.0, 0.0)], &[], 0.01).value;
            prop_assert!(f(r + step) >= f(r));
        }
    }
}
