//! Laplacian-regularised collision handling for transferred clothing.
//!
//! The clothing point set is first re-anchored onto the new body by a least
//! squares system that keeps its Laplacian coordinates while staying near
//! both the original points and a re-based guess. Each refinement step then
//! pushes violating points out along the nearest body normal by at most `δ`
//! and smooths the result with a second Laplacian system.

use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::map::PixelRef;
use crate::math::{pairwise_sum, Vec3};
use crate::skinning::SkinTransform;
use crate::spatial::KdTree;
use crate::topology::AdjacencyGraph;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionConfig {
    /// Clearance threshold in metres.
    pub epsilon: f64,
    /// Per-iteration displacement cap in metres.
    pub delta: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Relative residual at which the conjugate-gradient solve stops.
    pub solver_tolerance: f64,
    /// Slack below `epsilon` still counted as satisfied in reports.
    pub violation_tolerance: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            delta: 0.005,
            alpha: 0.5,
            iterations: 5,
            solver_tolerance: 1e-11,
            violation_tolerance: 1e-3,
        }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("collision {name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("delta", self.delta)?;
        positive("alpha", self.alpha)?;
        positive("solver_tolerance", self.solver_tolerance)?;
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("collision iterations must be at least 1".into()));
        }
        if !(self.violation_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("violation tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Uniform graph Laplacian in compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Laplacian {
    /// `L = D - A` for the given undirected edges. Duplicate edges and
    /// self loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Dimension(format!("edge ({a}, {b}) out of {n} nodes")));
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (i, ns) in adj.iter_mut().enumerate() {
            ns.sort_unstable();
            ns.dedup();
            let mut row: Vec<(usize, f64)> = ns.iter().map(|&j| (j, -1.0)).collect();
            row.push((i, ns.len() as f64));
            row.sort_unstable_by_key(|e| e.0);
            for (j, v) in row {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { n, row_ptr, cols, vals })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        m
    }

    pub fn mul_scalar(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn mul(&self, x: &[Vec3]) -> Vec<Vec3> {
        (0..self.n).map(|i| self.row(i).fold(Vec3::zeros(), |acc, (j, v)| acc + x[j] * v)).collect()
    }

    /// Diagonal of `LᵀL`.
    fn normal_diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v * v).sum()).collect()
    }
}

/// Laplacian of a clothing graph together with the reference Laplacian
/// coordinates `b = L x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianSystem {
    pub laplacian: Laplacian,
    pub b: Vec<Vec3>,
}

impl LaplacianSystem {
    pub fn new(laplacian: Laplacian, reference: &[Vec3]) -> Result<Self> {
        if reference.len() != laplacian.len() {
            return Err(Error::Dimension(format!("{} reference points for {} nodes", reference.len(), laplacian.len())));
        }
        let b = laplacian.mul(reference);
        Ok(Self { laplacian, b })
    }

    /// Per-point `|L η - b|`, summed in a fixed order.
    pub fn residual(&self, eta: &[Vec3]) -> f64 {
        let r: Vec<f64> = self.laplacian.mul(eta).iter().zip(&self.b).map(|(l, b)| (l - b).norm_squared()).collect();
        pairwise_sum(&r).sqrt()
    }
}

/// Laplacian over map-neighbour and stitch edges of a (restricted) graph.
pub fn build_laplacian(graph: &AdjacencyGraph) -> Result<Laplacian> {
    if graph.is_empty() {
        return Err(Error::Empty("Laplacian of an empty clothing subset".into()));
    }
    Laplacian::from_edges(graph.len(), &graph.laplacian_edges())
}

/// Solve `(LᵀL + s I) η = Lᵀ b + rhs_extra` per axis with Jacobi-preconditioned
/// conjugate gradients, starting from `start`.
fn solve_normal(l: &Laplacian, shift: f64, rhs: &[Vec3], start: &[Vec3], tol: f64) -> Result<Vec<Vec3>> {
    let n = l.len();
    let diag: Vec<f64> = l.normal_diagonal().iter().map(|d| d + shift).collect();
    let mut out = start.to_vec();
    for axis in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|v| v[axis]).collect();
        let x0: Vec<f64> = start.iter().map(|v| v[axis]).collect();
        let x = pcg(|v| apply_normal(l, shift, v), &diag, &b, x0, tol, 20 * n + 200)?;
        for (o, xi) in out.iter_mut().zip(x) {
            o[axis] = xi;
        }
    }
    Ok(out)
}

fn apply_normal(l: &Laplacian, shift: f64, v: &[f64]) -> Vec<f64> {
    let lv = l.mul_scalar(v);
    // L is symmetric, so LᵀL v = L (L v).
    l.mul_scalar(&lv).iter().zip(v).map(|(a, x)| a + shift * x).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&p)
}

fn pcg(apply: impl Fn(&[f64]) -> Vec<f64>, diag: &[f64], b: &[f64], mut x: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..=max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res < tol {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..z.len() {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / b_norm,
    })
}

fn check_dims(sys: &LaplacianSystem, slices: &[(&str, usize)]) -> Result<()> {
    for &(name, len) in slices {
        if len != sys.laplacian.len() {
            return Err(Error::Dimension(format!("{name}: {len} points for {} nodes", sys.laplacian.len())));
        }
    }
    Ok(())
}

/// Least-squares solution of `[L; αI; αI] η = [b; α x; α ξ]`.
pub fn solve_reanchor(sys: &LaplacianSystem, x_current: &[Vec3], xi: &[Vec3], alpha: f64, tol: f64) -> Result<Vec<Vec3>> {
    check_dims(sys, &[("current", x_current.len()), ("guess", xi.len())])?;
    let a2 = alpha * alpha;
    let lb = sys.laplacian.mul(&sys.b);
    let rhs: Vec<Vec3> = (0..lb.len()).map(|i| lb[i] + (x_current[i] + xi[i]) * a2).collect();
    let start: Vec<Vec3> = x_current.iter().zip(xi).map(|(x, g)| (x + g) * 0.5).collect();
    solve_normal(&sys.laplacian, 2.0 * a2, &rhs, &start, tol)
}

/// Least-squares solution of `[L; αI] η = [b; α ξ]`.
pub fn solve_smooth(sys: &LaplacianSystem, xi: &[Vec3], alpha: f64, tol: f64) -> Result<Vec<Vec3>> {
    check_dims(sys, &[("target", xi.len())])?;
    let a2 = alpha * alpha;
    let lb = sys.laplacian.mul(&sys.b);
    let rhs: Vec<Vec3> = (0..lb.len()).map(|i| lb[i] + xi[i] * a2).collect();
    solve_normal(&sys.laplacian, a2, &rhs, xi, tol)
}

/// Nearest body point for one cloth point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearestBody {
    pub index: usize,
    pub normal: Vec3,
    /// `(x_cloth - x_body) · n_body`.
    pub distance: f64,
}

/// Exact nearest body point (among those with normals) for every cloth point.
pub fn nearest_body(cloth: &[Vec3], body: &[Vec3], body_normals: &[Option<Vec3>]) -> Result<Vec<NearestBody>> {
    if body.len() != body_normals.len() {
        return Err(Error::Dimension(format!("{} body points, {} normals", body.len(), body_normals.len())));
    }
    let tree = KdTree::with_ids(
        body.iter()
            .zip(body_normals)
            .enumerate()
            .filter(|(_, (_, n))| n.is_some())
            .map(|(i, (p, _))| (i, *p)),
    );
    if tree.is_empty() {
        return Err(Error::Empty("no body points with normals".into()));
    }
    Ok(cloth
        .iter()
        .map(|x| {
            let (index, _) = tree.nearest(x).expect("tree is nonempty");
            let normal = body_normals[index].expect("indexed points carry normals");
            NearestBody {
                index,
                normal,
                distance: (x - body[index]).dot(&normal),
            }
        })
        .collect())
}

/// Targets `ξ = x + clip(ε - d, 0, δ) n` for one refinement step.
pub fn refinement_targets(x_cloth: &[Vec3], nn: &[NearestBody], cfg: &CollisionConfig) -> Vec<Vec3> {
    x_cloth
        .iter()
        .zip(nn)
        .map(|(x, q)| x + q.normal * (cfg.epsilon - q.distance).clamp(0.0, cfg.delta))
        .collect()
}

/// One clipped push along the nearest body normals followed by the
/// smoothing solve.
pub fn refine_iteration(x_cloth: &[Vec3], nn: &[NearestBody], sys: &LaplacianSystem, cfg: &CollisionConfig) -> Result<Vec<Vec3>> {
    if nn.len() != x_cloth.len() {
        return Err(Error::Dimension(format!("{} cloth points, {} nearest records", x_cloth.len(), nn.len())));
    }
    let targets = refinement_targets(x_cloth, nn, cfg);
    solve_smooth(sys, &targets, cfg.alpha, cfg.solver_tolerance)
}

/// Clothing guess re-based onto another body.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub canonical: Vec<Vec3>,
    pub posed: Vec<Vec3>,
    /// Clothing pixels with no valid body pixel in B at the same location.
    pub substituted: usize,
}

/// `ξ̄ = (x̄_A^cloth - U x̄_A^body) + U x̄_B^body`, posed with B's transforms.
///
/// `cloth_pixels[i]` is the map pixel of clothing point `i`; the body sets
/// are looked up by pixel. A clothing pixel that is invalid in B uses the
/// nearest valid B pixel (same side first, then smallest squared pixel
/// distance, then lowest index).
pub fn initial_guess(
    cloth_canonical: &[Vec3],
    cloth_pixels: &[PixelRef],
    body_a: &GaussianSet,
    body_b: &GaussianSet,
    xf_b: &SkinTransform,
    height: usize,
    width: usize,
) -> Result<InitialGuess> {
    if cloth_canonical.len() != cloth_pixels.len() {
        return Err(Error::Dimension(format!(
            "{} cloth points, {} pixels",
            cloth_canonical.len(),
            cloth_pixels.len()
        )));
    }
    if xf_b.len() != body_b.len() {
        return Err(Error::Dimension(format!("{} B transforms for {} B Gaussians", xf_b.len(), body_b.len())));
    }
    if body_b.is_empty() {
        return Err(Error::Empty("body B has no Gaussians".into()));
    }
    let index_a = body_a.pixel_index(height, width);
    let index_b = body_b.pixel_index(height, width);
    let mut out = InitialGuess {
        canonical: Vec::with_capacity(cloth_pixels.len()),
        posed: Vec::with_capacity(cloth_pixels.len()),
        substituted: 0,
    };
    for (x, &px) in cloth_canonical.iter().zip(cloth_pixels) {
        let ia = index_a
            .lookup(px)
            .ok_or_else(|| Error::MaskMismatch(format!("clothing pixel {px:?} has no body Gaussian in A")))?;
        let ib = match index_b.lookup(px) {
            Some(i) => i,
            None => {
                out.substituted += 1;
                nearest_pixel(body_b, px)
            }
        };
        let g = x - body_a.canonical_position(ia) + body_b.canonical_position(ib);
        out.posed.push(xf_b.apply(ib, &g));
        out.canonical.push(g);
    }
    Ok(out)
}

fn nearest_pixel(set: &GaussianSet, px: PixelRef) -> usize {
    let key = |q: &PixelRef| {
        let dr = q.row as i64 - px.row as i64;
        let dc = q.col as i64 - px.col as i64;
        (q.side != px.side, dr * dr + dc * dc)
    };
    (0..set.len()).min_by_key(|&i| (key(&set.provenance[i]), i)).expect("set is nonempty")
}

/// Clearance statistics after one stage of the resolver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 0 is the re-anchored state before any refinement.
    pub iteration: usize,
    pub violations: usize,
    pub satisfied_fraction: f64,
    /// Largest `max(-d, 0)` over cloth points.
    pub max_penetration: f64,
    pub min_distance: f64,
}

fn report(iteration: usize, nn: &[NearestBody], cfg: &CollisionConfig) -> IterationReport {
    let threshold = cfg.epsilon - cfg.violation_tolerance;
    let violations = nn.iter().filter(|q| q.distance < threshold).count();
    let min_distance = nn.iter().map(|q| q.distance).fold(f64::INFINITY, f64::min);
    IterationReport {
        iteration,
        violations,
        satisfied_fraction: if nn.is_empty() { 1.0 } else { 1.0 - violations as f64 / nn.len() as f64 },
        max_penetration: (-min_distance).max(0.0),
        min_distance,
    }
}

/// Inputs to the full resolver, all posed for the same query pose.
#[derive(Clone, Debug)]
pub struct CollisionProblem<'a> {
    /// Clothing graph (restricted to the clothing subset).
    pub graph: &'a AdjacencyGraph,
    /// Posed clothing before transfer; fixes the Laplacian coordinates.
    pub cloth_reference: &'a [Vec3],
    /// Posed initial guess `ξ`.
    pub guess: &'a [Vec3],
    pub body_positions: &'a [Vec3],
    pub body_normals: &'a [Option<Vec3>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub positions: Vec<Vec3>,
    pub reports: Vec<IterationReport>,
}

impl Resolution {
    pub fn final_report(&self) -> &IterationReport {
        self.reports.last().expect("at least the re-anchor report")
    }
}

/// Re-anchor once, then refine `cfg.iterations` times.
pub fn resolve_collisions(problem: &CollisionProblem, cfg: &CollisionConfig) -> Result<Resolution> {
    cfg.validate()?;
    let lap = build_laplacian(problem.graph)?;
    let sys = LaplacianSystem::new(lap, problem.cloth_reference)?;
    let mut x = solve_reanchor(&sys, problem.cloth_reference, problem.guess, cfg.alpha, cfg.solver_tolerance)?;
    let mut nn = nearest_body(&x, problem.body_positions, problem.body_normals)?;
    let mut reports = vec![report(0, &nn, cfg)];
    for it in 1..=cfg.iterations {
        x = refine_iteration(&x, &nn, &sys, cfg)?;
        nn = nearest_body(&x, problem.body_positions, problem.body_normals)?;
        reports.push(report(it, &nn, cfg));
    }
    Ok(Resolution { positions: x, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        for _ in 0..n {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            edges.push((a, b));
        }
        edges
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    fn dense_ls(blocks: &[(DMatrix<f64>, Vec<Vec3>)]) -> Vec<Vec3> {
        let rows: usize = blocks.iter().map(|b| b.0.nrows()).sum();
        let n = blocks[0].0.ncols();
        let mut a = DMatrix::zeros(rows, n);
        let mut out = vec![Vec3::zeros(); n];
        let mut r0 = 0;
        for (m, _) in blocks {
            a.view_mut((r0, 0), (m.nrows(), n)).copy_from(m);
            r0 += m.nrows();
        }
        let svd = a.clone().svd(true, true);
        for axis in 0..3 {
            let rhs = DVector::from_iterator(rows, blocks.iter().flat_map(|(_, v)| v.iter().map(move |p| p[axis])));
            let x = svd.solve(&rhs, 1e-14).unwrap();
            for i in 0..n {
                out[i][axis] = x[i];
            }
        }
        out
    }

    #[test]
    fn path_laplacian() {
        let l = Laplacian::from_edges(3, &[(0, 1), (1, 2), (1, 0)]).unwrap();
        assert_eq!(l.to_dense(), vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]);
        let c = vec![Vec3::new(0.3, 0.2, 0.1); 3];
        assert!(l.mul(&c).iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn laplacian_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let edges = random_graph(&mut rng, n);
        let l = Laplacian::from_edges(n, &edges).unwrap();
        let mut adj = vec![vec![0.0; n]; n];
        for &(a, b) in &edges {
            if a != b {
                adj[a][b] = 1.0;
                adj[b][a] = 1.0;
            }
        }
        let dense = l.to_dense();
        for i in 0..n {
            let deg: f64 = adj[i].iter().sum();
            for j in 0..n {
                let want = if i == j { deg } else { -adj[i][j] };
                assert_eq!(dense[i][j], want);
            }
            assert_eq!(dense[i].iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn solvers_match_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for alpha in [0.1, 0.5, 1.0] {
            let n = 40;
            let l = Laplacian::from_edges(n, &random_graph(&mut rng, n)).unwrap();
            let reference = random_points(&mut rng, n);
            let sys = LaplacianSystem::new(l.clone(), &reference).unwrap();
            let x = random_points(&mut rng, n);
            let xi = random_points(&mut rng, n);
            let dl = DMatrix::from_fn(n, n, |i, j| l.to_dense()[i][j]);
            let id = DMatrix::<f64>::identity(n, n) * alpha;
            let scaled = |v: &[Vec3]| v.iter().map(|p| p * alpha).collect::<Vec<_>>();
            let want = dense_ls(&[(dl.clone(), sys.b.clone()), (id.clone(), scaled(&x)), (id.clone(), scaled(&xi))]);
            let got = solve_reanchor(&sys, &x, &xi, alpha, 1e-12).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-6);
            }
            let want = dense_ls(&[(dl, sys.b.clone()), (id, scaled(&xi))]);
            let got = solve_smooth(&sys, &xi, alpha, 1e-12).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn reanchor_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 25;
        let l = Laplacian::from_edges(n, &random_graph(&mut rng, n)).unwrap();
        let x = random_points(&mut rng, n);
        let sys = LaplacianSystem::new(l, &x).unwrap();
        let same = solve_reanchor(&sys, &x, &x, 0.5, 1e-12).unwrap();
        assert!(same.iter().zip(&x).all(|(a, b)| (a - b).norm() < 1e-6));
        let xi = random_points(&mut rng, n);
        let stiff = solve_reanchor(&sys, &x, &xi, 1e4, 1e-12).unwrap();
        for i in 0..n {
            assert!((stiff[i] - (x[i] + xi[i]) * 0.5).norm() < 1e-3);
        }
    }

    #[test]
    fn laplacian_residual_grows_with_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let l = Laplacian::from_edges(n, &random_graph(&mut rng, n)).unwrap();
        let sys = LaplacianSystem::new(l, &random_points(&mut rng, n)).unwrap();
        let x = random_points(&mut rng, n);
        let xi = random_points(&mut rng, n);
        let mut prev = 0.0;
        for alpha in [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 10.0] {
            let r = sys.residual(&solve_reanchor(&sys, &x, &xi, alpha, 1e-12).unwrap());
            assert!(r >= prev - 1e-9, "alpha {alpha}: {r} < {prev}");
            prev = r;
        }
    }

    #[test]
    fn nearest_body_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let body = random_points(&mut rng, 1000);
        let normals: Vec<Option<Vec3>> = (0..1000).map(|i| (i % 7 != 0).then(|| Vec3::new(0.0, 0.0, 1.0))).collect();
        let cloth = random_points(&mut rng, 1000);
        let nn = nearest_body(&cloth, &body, &normals).unwrap();
        for (c, q) in cloth.iter().zip(&nn) {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, b) in body.iter().enumerate() {
                let d = (c - b).norm_squared();
                if normals[i].is_some() && d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(q.index, best.0);
        }
        let on_ray = nearest_body(&[Vec3::new(0.0, 0.0, 0.02)], &[Vec3::zeros()], &[Some(Vec3::z())]).unwrap();
        assert!((on_ray[0].distance - 0.02).abs() < 1e-15);
        let inside = nearest_body(&[Vec3::new(0.0, 0.0, -0.02)], &[Vec3::zeros()], &[Some(Vec3::z())]).unwrap();
        assert!(inside[0].distance < 0.0);
        assert!(nearest_body(&cloth, &[], &[]).is_err());
    }

    #[test]
    fn refinement_fixed_point_and_isolated_node() {
        let cfg = CollisionConfig {
            epsilon: 0.01,
            delta: 0.004,
            ..Default::default()
        };
        let x = vec![Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.1, 0.0, 0.5), Vec3::new(5.0, 0.0, 0.0)];
        let l = Laplacian::from_edges(3, &[(0, 1)]).unwrap();
        let sys = LaplacianSystem::new(l, &x).unwrap();
        let body = vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)];
        let normals = vec![Some(Vec3::z()), Some(Vec3::z())];
        let nn = nearest_body(&x, &body, &normals).unwrap();
        let out = refine_iteration(&x, &nn, &sys, &cfg).unwrap();
        assert!((out[0] - x[0]).norm() < 1e-9 && (out[1] - x[1]).norm() < 1e-9);
        // The isolated node sits on the body (d = 0): it moves by min(ε, δ).
        assert!((out[2] - Vec3::new(5.0, 0.0, 0.004)).norm() < 1e-12);
        let targets = refinement_targets(&x, &nn, &cfg);
        assert!(targets.iter().zip(&x).all(|(t, p)| (t - p).norm() <= cfg.delta + 1e-15));
    }

    #[test]
    fn config_rejects_zero_iterations() {
        let cfg = CollisionConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(CollisionConfig::default().validate().is_ok());
    }
}
