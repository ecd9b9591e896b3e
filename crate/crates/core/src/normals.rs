//! Surface normals from the pixel neighbourhood.
//!
//! For pixel `i` with counter-clockwise neighbours `j, k, l, m`, the normal is
//! the normalised sum of the four fan-triangle normals
//!
//! ```text
//! (x_j - x_i) x (x_k - x_i) + (x_k - x_i) x (x_l - x_i)
//!     + (x_l - x_i) x (x_m - x_i) + (x_m - x_i) x (x_j - x_i)
//! ```
//!
//! which expands to `(x_j - x_l) x (x_k - x_m)`. The expanded form is what we
//! evaluate: the centre point cancels and reversing the ring negates the
//! result exactly.

use crate::math::Vec3;
use crate::topology::AdjacencyGraph;

/// Normals whose unnormalised length falls below this are reported absent.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Unnormalised fan normal from the four ring points.
#[inline]
pub fn ring_normal(j: &Vec3, k: &Vec3, l: &Vec3, m: &Vec3) -> Vec3 {
    (j - l).cross(&(k - m))
}

/// Unit normal per node, `None` where a ring neighbour is missing or the ring
/// is degenerate.
pub fn compute_normals(positions: &[Vec3], graph: &AdjacencyGraph) -> Vec<Option<Vec3>> {
    assert_eq!(positions.len(), graph.len(), "positions must match graph nodes");
    (0..graph.len())
        .map(|i| {
            let [j, k, l, m] = graph.ccw_ring(i)?;
            let n = ring_normal(&positions[j], &positions[k], &positions[l], &positions[m]);
            let len = n.norm();
            (len >= DEGENERATE_NORM && len.is_finite()).then(|| n / len)
        })
        .collect()
}
