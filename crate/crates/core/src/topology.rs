//! Pixel adjacency and front/back stitching.

use crate::error::{Error, Result};
use crate::map::{MapSide, PixelIndex, PixelRef, TemplateGeometry};
use crate::spatial::KdTree;

/// Default distance under which front and back boundary pixels are stitched.
pub const DEFAULT_STITCH_TOLERANCE: f64 = 1e-3;

/// Map directions, in the order stored in [`AdjacencyGraph::ring`].
pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

/// Counter-clockwise neighbour ring `(j, k, l, m)` per map side.
///
/// Front maps use (left, down, right, up). Back maps are stored x-ray style,
/// so the mirrored ring (right, down, left, up) keeps their normals outward.
pub fn ccw_order(side: MapSide) -> [usize; 4] {
    match side {
        MapSide::Front => [LEFT, DOWN, RIGHT, UP],
        MapSide::Back => [RIGHT, DOWN, LEFT, UP],
    }
}

/// 4-connected pixel graph over the valid pixels of both maps plus stitch
/// pairs. Node `i` is Gaussian `i` of a set extracted from the same template.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGraph {
    pub nodes: Vec<PixelRef>,
    /// Neighbour in each map direction (left, down, right, up), "down" being
    /// the next row.
    pub ring: Vec<[Option<usize>; 4]>,
    /// Sorted 4-neighbourhood lists.
    pub neighbors: Vec<Vec<usize>>,
    /// (front node, back node) seam correspondences.
    pub stitch_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
    height: usize,
    width: usize,
}

impl AdjacencyGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_index(&self) -> PixelIndex {
        PixelIndex::new(self.height, self.width, &self.nodes)
    }

    /// The full counter-clockwise ring of node `i`, if all four neighbours exist.
    pub fn ccw_ring(&self, i: usize) -> Option<[usize; 4]> {
        let order = ccw_order(self.nodes[i].side);
        let r = &self.ring[i];
        Some([r[order[0]]?, r[order[1]]?, r[order[2]]?, r[order[3]]?])
    }

    /// Unordered map-neighbour edges `(i, j)` with `i < j`, sorted.
    pub fn grid_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, ns) in self.neighbors.iter().enumerate() {
            out.extend(ns.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Map-neighbour edges plus stitch pairs, deduplicated, `(i, j)` with `i < j`.
    pub fn laplacian_edges(&self) -> Vec<(usize, usize)> {
        let mut out = self.grid_edges();
        out.extend(self.stitch_pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))));
        out.sort_unstable();
        out.dedup();
        out.retain(|&(a, b)| a != b);
        out
    }

    /// Nodes with a pixel neighbour missing or outside the map.
    pub fn is_boundary(&self, i: usize) -> bool {
        self.ring[i].iter().any(Option::is_none)
    }

    /// Induced subgraph on `subset` (node indices of `self`), renumbered in
    /// the order given.
    pub fn restrict(&self, subset: &[usize]) -> Result<AdjacencyGraph> {
        let mut remap = vec![usize::MAX; self.len()];
        for (k, &i) in subset.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Dimension(format!("subset index {i} out of {} nodes", self.len())));
            }
            if remap[i] != usize::MAX {
                return Err(Error::InvalidParameter(format!("node {i} listed twice in subset")));
            }
            remap[i] = k;
        }
        let map = |j: usize| (remap[j] != usize::MAX).then_some(remap[j]);
        let ring: Vec<[Option<usize>; 4]> = subset
            .iter()
            .map(|&i| {
                let mut r = [None; 4];
                for (d, slot) in r.iter_mut().enumerate() {
                    *slot = self.ring[i][d].and_then(map);
                }
                r
            })
            .collect();
        let stitch_pairs = self.stitch_pairs.iter().filter_map(|&(a, b)| Some((map(a)?, map(b)?))).collect();
        Ok(AdjacencyGraph {
            nodes: subset.iter().map(|&i| self.nodes[i]).collect(),
            neighbors: neighbors_from_ring(&ring),
            ring,
            stitch_pairs,
            warnings: Vec::new(),
            height: self.height,
            width: self.width,
        })
    }
}

fn neighbors_from_ring(ring: &[[Option<usize>; 4]]) -> Vec<Vec<usize>> {
    ring.iter()
        .map(|r| {
            let mut v: Vec<usize> = r.iter().flatten().copied().collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

fn grid_graph(template: &TemplateGeometry) -> Result<(Vec<PixelRef>, Vec<[Option<usize>; 4]>, PixelIndex)> {
    let nodes = template.nodes();
    if nodes.is_empty() {
        return Err(Error::Empty("template masks select no pixels".into()));
    }
    let index = PixelIndex::new(template.height(), template.width(), &nodes);
    let ring = nodes
        .iter()
        .map(|p| {
            let (r, c) = (p.row as isize, p.col as isize);
            [
                index.get(p.side, r, c - 1),
                index.get(p.side, r + 1, c),
                index.get(p.side, r, c + 1),
                index.get(p.side, r - 1, c),
            ]
        })
        .collect();
    Ok((nodes, ring, index))
}

/// Builds the pixel graph and discovers stitch pairs.
///
/// Boundary pixels (valid pixels with a missing 4-neighbour) of the front map
/// are matched to back boundary pixels whose template points lie within
/// `stitch_tolerance`. Matching is greedy by increasing distance, ties broken
/// by (front, back) node index, so each pixel joins at most one pair.
/// Boundary pixels left unmatched are listed in `warnings`.
pub fn build_adjacency(template: &TemplateGeometry, stitch_tolerance: f64) -> Result<AdjacencyGraph> {
    if !(stitch_tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("stitch tolerance {stitch_tolerance}")));
    }
    let (nodes, ring, _) = grid_graph(template)?;
    let positions = template.base_positions();
    let boundary: Vec<usize> = (0..nodes.len()).filter(|&i| ring[i].iter().any(Option::is_none)).collect();
    let back_tree = KdTree::with_ids(boundary.iter().filter(|&&i| nodes[i].side == MapSide::Back).map(|&i| (i, positions[i])));

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for &f in boundary.iter().filter(|&&i| nodes[i].side == MapSide::Front) {
        for (b, d2) in back_tree.within(&positions[f], stitch_tolerance) {
            candidates.push((d2, f, b));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; nodes.len()];
    let mut stitch_pairs = Vec::new();
    for (_, f, b) in candidates {
        if !used[f] && !used[b] {
            used[f] = true;
            used[b] = true;
            stitch_pairs.push((f, b));
        }
    }
    stitch_pairs.sort_unstable();

    let warnings = boundary
        .iter()
        .filter(|&&i| !used[i])
        .map(|&i| {
            let p = nodes[i];
            format!("unmatched boundary pixel {}({}, {})", p.side.tag(), p.row, p.col)
        })
        .collect();

    Ok(AdjacencyGraph {
        neighbors: neighbors_from_ring(&ring),
        nodes,
        ring,
        stitch_pairs,
        warnings,
        height: template.height(),
        width: template.width(),
    })
}

/// Rebuilds the graph with persisted stitch pairs instead of discovering them.
pub fn adjacency_with_stitches(template: &TemplateGeometry, stitch_pairs: Vec<(usize, usize)>) -> Result<AdjacencyGraph> {
    let (nodes, ring, _) = grid_graph(template)?;
    let mut used = vec![false; nodes.len()];
    for &(f, b) in &stitch_pairs {
        if f >= nodes.len() || b >= nodes.len() {
            return Err(Error::Dimension(format!("stitch pair ({f}, {b}) out of {} nodes", nodes.len())));
        }
        if nodes[f].side != MapSide::Front || nodes[b].side != MapSide::Back {
            return Err(Error::InvalidParameter(format!("stitch pair ({f}, {b}) must be (front, back)")));
        }
        if used[f] || used[b] {
            return Err(Error::InvalidParameter(format!("pixel reused by stitch pair ({f}, {b})")));
        }
        used[f] = true;
        used[b] = true;
    }
    Ok(AdjacencyGraph {
        neighbors: neighbors_from_ring(&ring),
        nodes,
        ring,
        stitch_pairs,
        warnings: Vec::new(),
        height: template.height(),
        width: template.width(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::TemplateMap;
    use crate::math::Vec3;

    fn flat_template(h: usize, w: usize, front_mask: Vec<bool>, back_mask: Vec<bool>, back_z: f64) -> TemplateGeometry {
        let mut f = TemplateMap::new(h, w, MapSide::Front);
        let mut b = TemplateMap::new(h, w, MapSide::Back);
        for r in 0..h {
            for c in 0..w {
                f.set_vector(r, c, &Vec3::new(c as f64, -(r as f64), 0.0));
                b.set_vector(r, c, &Vec3::new(c as f64, -(r as f64), back_z));
            }
        }
        f.planes_mut().mask = front_mask;
        b.planes_mut().mask = back_mask;
        TemplateGeometry::new(f, b).unwrap()
    }

    #[test]
    fn grid_degrees() {
        let t = flat_template(3, 3, vec![true; 9], vec![true; 9], 5.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        assert_eq!(g.neighbors[4].len(), 4);
        assert_eq!(g.neighbors[0].len(), 2);
        assert_eq!(g.neighbors[1].len(), 3);
        assert!(g.stitch_pairs.is_empty());
        // 8 boundary pixels per side, none matched.
        assert_eq!(g.warnings.len(), 16);
        assert_eq!(g.grid_edges().len(), 2 * 12);
    }

    #[test]
    fn graph_is_symmetric() {
        let mask = vec![true, true, false, true, true, true, false, true, true, true, true, true];
        let t = flat_template(3, 4, mask.clone(), mask, 0.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        for (i, ns) in g.neighbors.iter().enumerate() {
            for &j in ns {
                assert!(g.neighbors[j].contains(&i));
            }
        }
    }

    /// Brute-force oracle: every (front boundary, back boundary) pair within
    /// tolerance, accepted greedily by distance.
    fn brute_pairs(t: &TemplateGeometry, tol: f64) -> Vec<(usize, usize)> {
        let g = build_adjacency(t, tol).unwrap();
        let pos = t.base_positions();
        let mut cand = Vec::new();
        for i in 0..g.len() {
            for j in 0..g.len() {
                if g.nodes[i].side == MapSide::Front && g.nodes[j].side == MapSide::Back && g.is_boundary(i) && g.is_boundary(j) {
                    let d2 = (pos[i] - pos[j]).norm_squared();
                    if d2 <= tol * tol {
                        cand.push((d2, i, j));
                    }
                }
            }
        }
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut used = vec![false; g.len()];
        let mut out = Vec::new();
        for (_, i, j) in cand {
            if !used[i] && !used[j] {
                used[i] = true;
                used[j] = true;
                out.push((i, j));
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn coincident_two_by_one_maps_give_two_pairs() {
        let t = flat_template(2, 1, vec![true; 2], vec![true; 2], 0.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        assert_eq!(g.stitch_pairs, vec![(0, 2), (1, 3)]);
        assert_eq!(g.stitch_pairs, brute_pairs(&t, 1e-3));
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn stitching_matches_brute_force_on_sheet() {
        let mut mask = vec![true; 36];
        mask[14] = false;
        let t = flat_template(6, 6, mask.clone(), mask, 0.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        assert_eq!(g.stitch_pairs, brute_pairs(&t, 1e-3));
        // Outer ring (20) plus the 4 hole neighbours pair up on each side.
        assert_eq!(g.stitch_pairs.len(), 24);
    }

    #[test]
    fn hole_neighbours_lack_full_ring() {
        let mut mask = vec![true; 25];
        mask[12] = false;
        let t = flat_template(5, 5, mask.clone(), mask, 3.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        let idx = g.pixel_index();
        for (r, c) in [(1, 2), (2, 1), (2, 3), (3, 2)] {
            let i = idx.get(MapSide::Front, r, c).unwrap();
            assert!(g.ccw_ring(i).is_none());
        }
        let i = idx.get(MapSide::Front, 1, 1).unwrap();
        assert!(g.ccw_ring(i).is_some());
    }

    #[test]
    fn restrict_keeps_internal_edges_and_stitches() {
        let t = flat_template(2, 2, vec![true; 4], vec![true; 4], 0.0);
        let g = build_adjacency(&t, 1e-3).unwrap();
        assert_eq!(g.stitch_pairs.len(), 4);
        let sub = g.restrict(&[0, 1, 4]).unwrap();
        assert_eq!(sub.neighbors, vec![vec![1], vec![0], vec![]]);
        assert_eq!(sub.stitch_pairs, vec![(0, 2)]);
        assert_eq!(sub.laplacian_edges(), vec![(0, 1), (0, 2)]);
        assert!(g.restrict(&[0, 0]).is_err());
    }

    #[test]
    fn persisted_stitches_validated() {
        let t = flat_template(2, 1, vec![true; 2], vec![true; 2], 0.0);
        let g = adjacency_with_stitches(&t, vec![(0, 2), (1, 3)]).unwrap();
        assert_eq!(g.stitch_pairs.len(), 2);
        assert!(adjacency_with_stitches(&t, vec![(2, 0)]).is_err());
        assert!(adjacency_with_stitches(&t, vec![(0, 2), (0, 3)]).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let t = flat_template(2, 2, vec![false; 4], vec![false; 4], 0.0);
        assert!(build_adjacency(&t, 1e-3).is_err());
        let one_sided = flat_template(2, 2, vec![false; 4], vec![true; 4], 0.0);
        assert_eq!(build_adjacency(&one_sided, 1e-3).unwrap().len(), 4);
    }
}
