//! Regularisers over the pixel graph: offset, TV, edge and stitching.

use super::{LabelTerm, Term};
use crate::error::{Error, Result};
use crate::math::{pairwise_sum, Vec3};
use crate::topology::AdjacencyGraph;

fn check_len(what: &str, n: usize, graph: &AdjacencyGraph) -> Result<()> {
    if n != graph.len() {
        return Err(Error::Dimension(format!("{what}: {n} entries, graph has {} nodes", graph.len())));
    }
    Ok(())
}

/// `(1/N) Σ |Δx̄_i|²`, gradient with respect to the offsets.
pub fn loss_offset(offsets: &[Vec3]) -> Result<Term> {
    if offsets.is_empty() {
        return Err(Error::Empty("offset loss over an empty set".into()));
    }
    let n = offsets.len() as f64;
    let per: Vec<f64> = offsets.iter().map(|d| d.norm_squared()).collect();
    Ok(Term {
        value: pairwise_sum(&per) / n,
        grad: offsets.iter().map(|d| d * (2.0 / n)).collect(),
        warnings: Vec::new(),
    })
}

/// Mean over unordered map-neighbour pairs of `|x_i - x_j|²`.
pub fn loss_tv_positions(positions: &[Vec3], graph: &AdjacencyGraph) -> Result<Term> {
    check_len("TV positions", positions.len(), graph)?;
    let edges = graph.grid_edges();
    let mut grad = vec![Vec3::zeros(); positions.len()];
    if edges.is_empty() {
        return Ok(Term {
            value: 0.0,
            grad,
            warnings: vec!["TV: graph has no edges".into()],
        });
    }
    let p = edges.len() as f64;
    let per: Vec<f64> = edges.iter().map(|&(i, j)| (positions[i] - positions[j]).norm_squared()).collect();
    for &(i, j) in &edges {
        let g = (positions[i] - positions[j]) * (2.0 / p);
        grad[i] += g;
        grad[j] -= g;
    }
    Ok(Term {
        value: pairwise_sum(&per) / p,
        grad,
        warnings: Vec::new(),
    })
}

/// Mean over unordered map-neighbour pairs of `Σ_c |p_i,c - p_j,c|` (L1),
/// with the sign subgradient.
pub fn loss_tv_labels(labels: &[[f64; 2]], graph: &AdjacencyGraph) -> Result<LabelTerm> {
    check_len("TV labels", labels.len(), graph)?;
    let edges = graph.grid_edges();
    let mut grad = vec![[0.0; 2]; labels.len()];
    if edges.is_empty() {
        return Ok(LabelTerm {
            value: 0.0,
            grad,
            warnings: vec!["label TV: graph has no edges".into()],
        });
    }
    let p = edges.len() as f64;
    let per: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| (labels[i][0] - labels[j][0]).abs() + (labels[i][1] - labels[j][1]).abs())
        .collect();
    for &(i, j) in &edges {
        for c in 0..2 {
            let s = sign(labels[i][c] - labels[j][c]) / p;
            grad[i][c] += s;
            grad[j][c] -= s;
        }
    }
    Ok(LabelTerm {
        value: pairwise_sum(&per) / p,
        grad,
        warnings: Vec::new(),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean over map-neighbour edges of `(|x_i - x_j| - |x̄_i - x̄_j|)²`, the
/// second length measured on the template. Zero-length template edges are
/// skipped with a warning.
pub fn loss_edge(positions: &[Vec3], base: &[Vec3], graph: &AdjacencyGraph) -> Result<Term> {
    check_len("edge positions", positions.len(), graph)?;
    check_len("edge template", base.len(), graph)?;
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for (i, j) in graph.grid_edges() {
        let rest = (base[i] - base[j]).norm();
        if rest > 0.0 {
            kept.push((i, j, rest));
        } else {
            warnings.push(format!("edge ({i}, {j}) has zero template length"));
        }
    }
    let mut grad = vec![Vec3::zeros(); positions.len()];
    if kept.is_empty() {
        warnings.push("edge loss: no usable edges".into());
        return Ok(Term { value: 0.0, grad, warnings });
    }
    let e = kept.len() as f64;
    let mut per = Vec::with_capacity(kept.len());
    for &(i, j, rest) in &kept {
        let d = positions[i] - positions[j];
        let len = d.norm();
        let diff = len - rest;
        per.push(diff * diff);
        if len > 0.0 {
            let g = d * (2.0 * diff / (len * e));
            grad[i] += g;
            grad[j] -= g;
        }
    }
    Ok(Term {
        value: pairwise_sum(&per) / e,
        grad,
        warnings,
    })
}

/// Mean squared distance over stitch pairs.
pub fn loss_stitch_positions(positions: &[Vec3], pairs: &[(usize, usize)]) -> Result<Term> {
    let mut grad = vec![Vec3::zeros(); positions.len()];
    if pairs.is_empty() {
        return Ok(Term {
            value: 0.0,
            grad,
            warnings: vec!["stitch: no stitch pairs".into()],
        });
    }
    check_pairs(pairs, positions.len())?;
    let p = pairs.len() as f64;
    let per: Vec<f64> = pairs.iter().map(|&(a, b)| (positions[a] - positions[b]).norm_squared()).collect();
    for &(a, b) in pairs {
        let g = (positions[a] - positions[b]) * (2.0 / p);
        grad[a] += g;
        grad[b] -= g;
    }
    Ok(Term {
        value: pairwise_sum(&per) / p,
        grad,
        warnings: Vec::new(),
    })
}

/// Mean squared L2 label difference over stitch pairs.
pub fn loss_stitch_labels(labels: &[[f64; 2]], pairs: &[(usize, usize)]) -> Result<LabelTerm> {
    let mut grad = vec![[0.0; 2]; labels.len()];
    if pairs.is_empty() {
        return Ok(LabelTerm {
            value: 0.0,
            grad,
            warnings: vec!["label stitch: no stitch pairs".into()],
        });
    }
    check_pairs(pairs, labels.len())?;
    let p = pairs.len() as f64;
    let mut per = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let d = [labels[a][0] - labels[b][0], labels[a][1] - labels[b][1]];
        per.push(d[0] * d[0] + d[1] * d[1]);
        for c in 0..2 {
            grad[a][c] += 2.0 * d[c] / p;
            grad[b][c] -= 2.0 * d[c] / p;
        }
    }
    Ok(LabelTerm {
        value: pairwise_sum(&per) / p,
        grad,
        warnings: Vec::new(),
    })
}

fn check_pairs(pairs: &[(usize, usize)], n: usize) -> Result<()> {
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::Dimension(format!("stitch pair ({a}, {b}) out of {n} entries")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{MapSide, TemplateGeometry, TemplateMap};
    use crate::topology::build_adjacency;

    /// 1x2 front map plus a distant single back pixel.
    fn pair_graph() -> AdjacencyGraph {
        let mut f = TemplateMap::new(1, 2, MapSide::Front);
        let mut b = TemplateMap::new(1, 2, MapSide::Back);
        f.set_vector(0, 1, &Vec3::new(1.0, 0.0, 0.0));
        b.set_vector(0, 0, &Vec3::new(0.0, 0.0, 9.0));
        f.planes_mut().mask = vec![true, true];
        b.planes_mut().mask = vec![true, false];
        build_adjacency(&TemplateGeometry::new(f, b).unwrap(), 1e-3).unwrap()
    }

    #[test]
    fn offset_values() {
        assert_eq!(loss_offset(&[Vec3::zeros(); 3]).unwrap().value, 0.0);
        let t = loss_offset(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)]).unwrap();
        assert_eq!(t.value, 2.5);
        assert_eq!(t.grad[1], Vec3::new(0.0, 2.0, 0.0));
        assert!(loss_offset(&[]).is_err());
    }

    #[test]
    fn tv_single_pair() {
        let g = pair_graph();
        let pos = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 9.0)];
        assert_eq!(loss_tv_positions(&pos, &g).unwrap().value, 1.0);
        let constant = vec![Vec3::new(0.3, 0.3, 0.3); 3];
        assert_eq!(loss_tv_positions(&constant, &g).unwrap().value, 0.0);
        let labels = vec![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let t = loss_tv_labels(&labels, &g).unwrap();
        assert_eq!(t.value, 2.0);
        assert_eq!(t.grad[0], [1.0, -1.0]);
        assert!(loss_tv_positions(&pos[..2], &g).is_err());
    }

    #[test]
    fn edge_values() {
        let g = pair_graph();
        let base = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 9.0)];
        assert_eq!(loss_edge(&base, &base, &g).unwrap().value, 0.0);
        let stretched = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 9.0)];
        assert_eq!(loss_edge(&stretched, &base, &g).unwrap().value, 1.0);
        let moved: Vec<Vec3> = base.iter().map(|p| p + Vec3::new(0.3, -1.0, 2.0)).collect();
        assert!(loss_edge(&moved, &base, &g).unwrap().value < 1e-30);
        let collapsed = vec![Vec3::zeros(); 3];
        let t = loss_edge(&stretched, &collapsed, &g).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(!t.warnings.is_empty());
    }

    #[test]
    fn stitch_values() {
        let pos = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)];
        assert!((loss_stitch_positions(&pos, &[(0, 1)]).unwrap().value - 0.01).abs() < 1e-17);
        assert_eq!(loss_stitch_positions(&[pos[0], pos[0]], &[(0, 1)]).unwrap().value, 0.0);
        let empty = loss_stitch_positions(&pos, &[]).unwrap();
        assert_eq!(empty.value, 0.0);
        assert_eq!(empty.warnings.len(), 1);
        let l = loss_stitch_labels(&[[1.0, 0.0], [0.0, 1.0]], &[(0, 1)]).unwrap();
        assert_eq!(l.value, 2.0);
        assert!(loss_stitch_positions(&pos, &[(0, 5)]).is_err());
    }
}
