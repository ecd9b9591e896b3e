//! Layered avatars: clothing segmentation, point-based fitting, clothing
//! transfer and animation.

use crate::collision::{initial_guess, resolve_collisions, CollisionConfig, CollisionProblem, Resolution};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::losses::{
    loss_chamfer, loss_coll, loss_edge, loss_layer, loss_offset, loss_stitch_positions, loss_tv_positions, total_loss, LossInputs, LossReport, LossTerm,
    LossWeights, Stage,
};
use crate::map::{channel, PixelRef, TemplateGeometry};
use crate::math::{Mat3, Vec3};
use crate::normals::compute_normals;
use crate::render::{rasterize, Camera, Channels, RasterConfig, SplatImage, SplatScene};
use crate::skinning::{blend_transforms, forward_kinematics, Pose, RigidTransform, Skeleton, SkinTransform, SkinningWeights};
use crate::topology::{build_adjacency, AdjacencyGraph, DEFAULT_STITCH_TOLERANCE};
use serde::{Deserialize, Serialize};

/// Raw label logit written when labels are frozen.
const FROZEN_LOGIT: f32 = 16.0;

/// Body and clothing models on one template and skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredAvatar {
    pub template: TemplateGeometry,
    pub graph: AdjacencyGraph,
    pub skeleton: Skeleton,
    pub body: GaussianSet,
    pub body_weights: SkinningWeights,
    /// Clothing pixels, sorted.
    pub selector: Vec<PixelRef>,
    /// Clothing Gaussians in selector order.
    pub cloth: GaussianSet,
    pub cloth_weights: SkinningWeights,
}

impl LayeredAvatar {
    /// Build an avatar from a full body model and a full clothing model on
    /// the same template; `selector` picks the clothing pixels and
    /// `cloth_weights` has one row per selected pixel.
    pub fn assemble(
        template: TemplateGeometry,
        skeleton: Skeleton,
        body: GaussianSet,
        body_weights: SkinningWeights,
        cloth_model: &GaussianSet,
        cloth_weights: SkinningWeights,
        mut selector: Vec<PixelRef>,
    ) -> Result<Self> {
        selector.sort_unstable();
        let graph = build_adjacency(&template, DEFAULT_STITCH_TOLERANCE)?;
        let index = cloth_model.pixel_index(template.height(), template.width());
        let picked = selector
            .iter()
            .map(|&px| {
                index
                    .lookup(px)
                    .ok_or_else(|| Error::MaskMismatch(format!("clothing model has no Gaussian at {px:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let avatar = Self {
            template,
            graph,
            skeleton,
            body,
            body_weights,
            cloth: cloth_model.subset(&picked),
            cloth_weights,
            selector,
        };
        avatar.validate()?;
        Ok(avatar)
    }

    pub fn height(&self) -> usize {
        self.template.height()
    }

    pub fn width(&self) -> usize {
        self.template.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        if self.body.provenance != self.graph.nodes {
            return Err(Error::MaskMismatch("body Gaussians do not follow the template pixel order".into()));
        }
        if self.body_weights.len() != self.body.len() || self.cloth_weights.len() != self.cloth.len() {
            return Err(Error::Dimension(format!(
                "{} body weights for {} body Gaussians, {} cloth weights for {} cloth Gaussians",
                self.body_weights.len(),
                self.body.len(),
                self.cloth_weights.len(),
                self.cloth.len()
            )));
        }
        self.body_weights.validate(self.skeleton.joint_count())?;
        self.cloth_weights.validate(self.skeleton.joint_count())?;
        if self.cloth.provenance != self.selector {
            return Err(Error::MaskMismatch("clothing Gaussians do not match the selector".into()));
        }
        if self.selector.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("selector must be sorted without duplicates".into()));
        }
        self.cloth_indices().map(|_| ())
    }

    /// Body-graph node index of every clothing pixel.
    pub fn cloth_indices(&self) -> Result<Vec<usize>> {
        let index = self.graph.pixel_index();
        self.selector
            .iter()
            .map(|&px| {
                index
                    .lookup(px)
                    .ok_or_else(|| Error::MaskMismatch(format!("selected pixel {px:?} is not a valid body pixel")))
            })
            .collect()
    }

    /// Adjacency restricted to the clothing subset, in selector order.
    pub fn cloth_graph(&self) -> Result<AdjacencyGraph> {
        self.graph.restrict(&self.cloth_indices()?)
    }

    /// Canonical body points and normals at the clothing pixels.
    pub fn cloth_collider(&self) -> Result<(Vec<Vec3>, Vec<Option<Vec3>>)> {
        let body = self.body.canonical_positions();
        let normals = compute_normals(&body, &self.graph);
        let idx = self.cloth_indices()?;
        Ok((idx.iter().map(|&i| body[i]).collect(), idx.iter().map(|&i| normals[i]).collect()))
    }
}

/// Indices of Gaussians with `p_cloth > 0.5`.
pub fn segment_clothing(set: &GaussianSet) -> Result<Vec<usize>> {
    let picked: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i][1] > 0.5).collect();
    if picked.is_empty() {
        return Err(Error::Empty("no Gaussian has p_cloth > 0.5".into()));
    }
    Ok(picked)
}

/// Sorted pixels of the selected Gaussians.
pub fn selector_pixels(set: &GaussianSet, indices: &[usize]) -> Vec<PixelRef> {
    let mut px: Vec<PixelRef> = indices.iter().map(|&i| set.provenance[i]).collect();
    px.sort_unstable();
    px
}

/// Labels fixed to `(0, 1)` on the selected Gaussians and `(1, 0)` elsewhere.
pub fn freeze_labels(set: &GaussianSet, cloth: &[usize]) -> GaussianSet {
    let mut out = set.clone();
    let mut is_cloth = vec![false; set.len()];
    for &i in cloth {
        is_cloth[i] = true;
    }
    for i in 0..set.len() {
        let (labels, logits) = if is_cloth[i] {
            ([0.0, 1.0], [-FROZEN_LOGIT, FROZEN_LOGIT])
        } else {
            ([1.0, 0.0], [FROZEN_LOGIT, -FROZEN_LOGIT])
        };
        out.labels[i] = labels;
        out.raw[i][channel::LABEL] = logits[0];
        out.raw[i][channel::LABEL + 1] = logits[1];
    }
    out
}

/// One layer posed for a query pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedLayer {
    pub geometric: Vec<Vec3>,
    pub render: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    /// Normals of the posed geometric layer.
    pub normals: Vec<Option<Vec3>>,
    pub transforms: SkinTransform,
}

/// Pose a layer with its weights; normals come from the posed geometry.
pub fn pose_layer(set: &GaussianSet, weights: &SkinningWeights, joints: &[RigidTransform], graph: &AdjacencyGraph) -> Result<PosedLayer> {
    if graph.len() != set.len() {
        return Err(Error::Dimension(format!("graph has {} nodes for {} Gaussians", graph.len(), set.len())));
    }
    let xf = blend_transforms(weights, joints)?;
    if xf.len() != set.len() {
        return Err(Error::Dimension(format!("{} weight rows for {} Gaussians", xf.len(), set.len())));
    }
    let mut geometric = Vec::with_capacity(set.len());
    let mut render = Vec::with_capacity(set.len());
    let mut covariances = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        geometric.push(xf.apply(i, &set.canonical_position(i)));
        render.push(xf.apply(i, &set.render_position(i)));
        let a = &xf.linear[i];
        let c = a * set.covariance(i)? * a.transpose();
        covariances.push((c + c.transpose()) * 0.5);
    }
    let normals = compute_normals(&geometric, graph);
    Ok(PosedLayer {
        geometric,
        render,
        covariances,
        normals,
        transforms: xf,
    })
}

/// Both layers of an avatar posed together.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedAvatar {
    pub body: PosedLayer,
    pub cloth: PosedLayer,
}

pub fn pose_avatar(avatar: &LayeredAvatar, pose: &Pose) -> Result<PosedAvatar> {
    let joints = forward_kinematics(&avatar.skeleton, pose)?;
    Ok(PosedAvatar {
        body: pose_layer(&avatar.body, &avatar.body_weights, &joints, &avatar.graph)?,
        cloth: pose_layer(&avatar.cloth, &avatar.cloth_weights, &joints, &avatar.cloth_graph()?)?,
    })
}

/// Splat inputs for a layer drawn at `positions`.
pub fn layer_scene(set: &GaussianSet, positions: &[Vec3], covariances: &[Mat3], normals: &[Option<Vec3>]) -> SplatScene {
    SplatScene {
        positions: positions.to_vec(),
        covariances: covariances.to_vec(),
        opacities: set.opacities.clone(),
        colors: Some(set.colors.clone()),
        normals: Some(normals.iter().map(|n| n.unwrap_or_else(Vec3::zeros)).collect()),
        labels: Some(set.labels.clone()),
    }
}

/// Rendering-layer clothing positions: resolved geometry plus the posed
/// render offsets `A_i Δȳ_i`.
pub fn cloth_render_positions(geometric: &[Vec3], cloth: &GaussianSet, xf: &SkinTransform) -> Vec<Vec3> {
    geometric.iter().enumerate().map(|(i, x)| x + xf.linear[i] * cloth.render_offsets[i]).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub collision: CollisionConfig,
    pub raster: RasterConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferResult {
    pub image: SplatImage,
    /// A's clothing posed with its own weights, before any processing.
    pub unprocessed: Vec<Vec3>,
    /// Resolved clothing geometric layer.
    pub cloth_positions: Vec<Vec3>,
    pub cloth_render_positions: Vec<Vec3>,
    pub cloth_normals: Vec<Option<Vec3>>,
    pub body: PosedLayer,
    pub resolution: Resolution,
    pub substituted: usize,
}

/// Clothing of A re-anchored on B's body and resolved, before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferGeometry {
    pub unprocessed: Vec<Vec3>,
    pub cloth_positions: Vec<Vec3>,
    pub cloth_render_positions: Vec<Vec3>,
    pub cloth_normals: Vec<Option<Vec3>>,
    pub cloth_covariances: Vec<Mat3>,
    pub body: PosedLayer,
    pub resolution: Resolution,
    pub substituted: usize,
}

/// Re-anchor A's clothing on B for `pose` and resolve collisions.
pub fn transfer_geometry(a: &LayeredAvatar, b: &LayeredAvatar, pose: &Pose, collision: &CollisionConfig) -> Result<TransferGeometry> {
    a.validate()?;
    b.validate()?;
    if !a.skeleton.same_topology(&b.skeleton) {
        return Err(Error::Skeleton("avatars do not share a skeleton topology".into()));
    }
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension(format!(
            "map sizes {}x{} and {}x{} differ",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.cloth.is_empty() {
        return Err(Error::Empty("avatar A has no clothing".into()));
    }
    let joints_a = forward_kinematics(&a.skeleton, pose)?;
    let joints_b = forward_kinematics(&b.skeleton, pose)?;
    let cloth_graph = a.cloth_graph()?;
    let body = pose_layer(&b.body, &b.body_weights, &joints_b, &b.graph)?;
    let cloth = pose_layer(&a.cloth, &a.cloth_weights, &joints_a, &cloth_graph)?;
    let guess = initial_guess(
        &a.cloth.canonical_positions(),
        &a.selector,
        &a.body,
        &b.body,
        &body.transforms,
        a.height(),
        a.width(),
    )?;
    let resolution = resolve_collisions(
        &CollisionProblem {
            graph: &cloth_graph,
            cloth_reference: &cloth.geometric,
            guess: &guess.posed,
            body_positions: &body.geometric,
            body_normals: &body.normals,
        },
        collision,
    )?;
    let cloth_positions = resolution.positions.clone();
    let cloth_normals = compute_normals(&cloth_positions, &cloth_graph);
    let cloth_render = cloth_render_positions(&cloth_positions, &a.cloth, &cloth.transforms);
    Ok(TransferGeometry {
        unprocessed: cloth.geometric,
        cloth_positions,
        cloth_render_positions: cloth_render,
        cloth_normals,
        cloth_covariances: cloth.covariances,
        body,
        resolution,
        substituted: guess.substituted,
    })
}

/// Dress avatar B in avatar A's clothing for `pose` and render the result.
pub fn transfer_clothing(a: &LayeredAvatar, b: &LayeredAvatar, pose: &Pose, camera: &Camera, cfg: &TransferConfig) -> Result<TransferResult> {
    let g = transfer_geometry(a, b, pose, &cfg.collision)?;
    let scene = layer_scene(&b.body, &g.body.render, &g.body.covariances, &g.body.normals).union(layer_scene(
        &a.cloth,
        &g.cloth_render_positions,
        &g.cloth_covariances,
        &g.cloth_normals,
    ));
    let image = rasterize(&scene, camera, Channels::ALL, &cfg.raster)?;
    Ok(TransferResult {
        image,
        unprocessed: g.unprocessed,
        cloth_positions: g.cloth_positions,
        cloth_render_positions: g.cloth_render_positions,
        cloth_normals: g.cloth_normals,
        body: g.body,
        resolution: g.resolution,
        substituted: g.substituted,
    })
}

/// Rendered frame with its posed point clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: SplatImage,
    pub body: PosedLayer,
    pub cloth_positions: Vec<Vec3>,
    pub cloth_normals: Vec<Option<Vec3>>,
    pub resolution: Option<Resolution>,
}

/// Render one frame of an avatar, optionally resolving clothing against its
/// own body.
pub fn render_frame(avatar: &LayeredAvatar, pose: &Pose, camera: &Camera, resolve: Option<&CollisionConfig>, raster: &RasterConfig) -> Result<Frame> {
    let posed = pose_avatar(avatar, pose)?;
    let cloth_graph = avatar.cloth_graph()?;
    let (cloth_positions, resolution) = match resolve {
        Some(cfg) => {
            let r = resolve_collisions(
                &CollisionProblem {
                    graph: &cloth_graph,
                    cloth_reference: &posed.cloth.geometric,
                    guess: &posed.cloth.geometric,
                    body_positions: &posed.body.geometric,
                    body_normals: &posed.body.normals,
                },
                cfg,
            )?;
            (r.positions.clone(), Some(r))
        }
        None => (posed.cloth.geometric.clone(), None),
    };
    let cloth_normals = if resolution.is_some() {
        compute_normals(&cloth_positions, &cloth_graph)
    } else {
        posed.cloth.normals.clone()
    };
    let cloth_render = cloth_render_positions(&cloth_positions, &avatar.cloth, &posed.cloth.transforms);
    let scene = layer_scene(&avatar.body, &posed.body.render, &posed.body.covariances, &posed.body.normals).union(layer_scene(
        &avatar.cloth,
        &cloth_render,
        &posed.cloth.covariances,
        &cloth_normals,
    ));
    Ok(Frame {
        image: rasterize(&scene, camera, Channels::ALL, raster)?,
        body: posed.body,
        cloth_positions,
        cloth_normals,
        resolution,
    })
}

/// Render a pose sequence. Frames are independent and may run in parallel.
pub fn animate(avatar: &LayeredAvatar, poses: &[Pose], camera: &Camera, resolve: Option<&CollisionConfig>, raster: &RasterConfig) -> Result<Vec<Frame>> {
    avatar.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        poses.par_iter().map(|p| render_frame(avatar, p, camera, resolve, raster)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    poses.iter().map(|p| render_frame(avatar, p, camera, resolve, raster)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Gradient-descent step applied to the per-point gradient.
    pub step: f64,
    pub iterations: usize,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub tolerance: f64,
    /// Clearance used by the collision and layer terms.
    pub epsilon: f64,
    pub max_halvings: usize,
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            step: 0.25,
            iterations: 500,
            tolerance: 1e-10,
            epsilon: 0.005,
            max_halvings: 20,
            weights: LossWeights::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("fit step must be positive, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("fit iteration budget must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("fit epsilon must be positive, got {}", self.epsilon)));
        }
        self.weights.validate()
    }
}

/// Body points and normals aligned with the fitted layer, pixel by pixel.
#[derive(Clone, Copy, Debug)]
pub struct Collider<'a> {
    pub positions: &'a [Vec3],
    pub normals: &'a [Option<Vec3>],
}

/// One layer to fit.
#[derive(Clone, Debug)]
pub struct FitProblem<'a> {
    pub base: &'a [Vec3],
    pub graph: &'a AdjacencyGraph,
    pub offsets: Vec<Vec3>,
    /// Rendering-layer offsets, fitted against the layer term when present.
    pub render_offsets: Option<Vec<Vec3>>,
    pub target: &'a [Vec3],
    pub collider: Option<Collider<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub offsets: Vec<Vec3>,
    pub render_offsets: Option<Vec<Vec3>>,
    pub initial: LossReport,
    pub report: LossReport,
    /// Total loss after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
    /// True when a step failed to decrease the loss after all halvings.
    pub stalled: bool,
}

struct Evaluation {
    report: LossReport,
    grad: Vec<Vec3>,
    grad_render: Option<Vec<Vec3>>,
}

fn effective_weights(cfg: &FitConfig, problem: &FitProblem) -> LossWeights {
    let mut w = cfg.weights;
    for t in [LossTerm::L1, LossTerm::Ssim, LossTerm::Normal, LossTerm::Label] {
        *w.get_mut(t) = 0.0;
    }
    if problem.collider.is_none() {
        w.coll = 0.0;
    }
    if problem.render_offsets.is_none() {
        w.layer = 0.0;
    }
    w
}

fn evaluate(problem: &FitProblem, offsets: &[Vec3], render: Option<&[Vec3]>, w: &LossWeights, eps: f64) -> Result<Evaluation> {
    let x: Vec<Vec3> = problem.base.iter().zip(offsets).map(|(b, d)| b + d).collect();
    let mut inputs = LossInputs::new();
    let mut grad = vec![Vec3::zeros(); x.len()];
    let mut add = |term: LossTerm, value: f64, g: &[Vec3], inputs: &mut LossInputs| {
        inputs.insert(term, value);
        let lam = w.get(term);
        if lam != 0.0 {
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi * lam;
            }
        }
    };
    let t = loss_chamfer(&x, problem.target)?;
    add(LossTerm::Chamfer, t.value, &t.grad_a, &mut inputs);
    let t = loss_offset(offsets)?;
    add(LossTerm::Offset, t.value, &t.grad, &mut inputs);
    let t = loss_tv_positions(&x, problem.graph)?;
    add(LossTerm::Tv, t.value, &t.grad, &mut inputs);
    let t = loss_edge(&x, problem.base, problem.graph)?;
    add(LossTerm::Edge, t.value, &t.grad, &mut inputs);
    let t = loss_stitch_positions(&x, &problem.graph.stitch_pairs)?;
    add(LossTerm::Stitch, t.value, &t.grad, &mut inputs);
    if let Some(c) = &problem.collider {
        let t = loss_coll(&x, c.positions, c.normals, eps)?;
        add(LossTerm::Coll, t.value, &t.grad, &mut inputs);
    }
    let grad_render = match render {
        Some(r) => {
            let t = loss_layer(&[], r, eps);
            inputs.insert(LossTerm::Layer, t.value);
            Some(t.grad_cloth.iter().map(|g| g * w.layer).collect())
        }
        None => None,
    };
    Ok(Evaluation {
        report: total_loss(&inputs, w, Stage::MultiLayer)?,
        grad,
        grad_render,
    })
}

/// Gradient descent with step halving on the point-based objective.
pub fn fit_geometric_layer(problem: &FitProblem, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let n = problem.base.len();
    if problem.offsets.len() != n || problem.graph.len() != n {
        return Err(Error::Dimension(format!(
            "{n} base points, {} offsets, {} graph nodes",
            problem.offsets.len(),
            problem.graph.len()
        )));
    }
    if problem.target.is_empty() {
        return Err(Error::Empty("fit target is empty".into()));
    }
    if let Some(c) = &problem.collider {
        if c.positions.len() != n || c.normals.len() != n {
            return Err(Error::Dimension(format!("collider has {} points for {n} Gaussians", c.positions.len())));
        }
    }
    let w = effective_weights(cfg, problem);
    let mut offsets = problem.offsets.clone();
    let mut render = problem.render_offsets.clone();
    let mut current = evaluate(problem, &offsets, render.as_deref(), &w, cfg.epsilon)?;
    let initial = current.report.clone();
    let mut history = vec![initial.total];
    let mut step = cfg.step;
    let mut stalled = false;
    let scale = n as f64;
    for _ in 0..cfg.iterations {
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<Vec3> = offsets.iter().zip(&current.grad).map(|(d, g)| d - g * (step * scale)).collect();
            let cand_render = render
                .as_ref()
                .zip(current.grad_render.as_ref())
                .map(|(r, g)| r.iter().zip(g).map(|(ri, gi)| ri - gi * (step * scale)).collect::<Vec<_>>());
            let eval = evaluate(problem, &cand, cand_render.as_deref(), &w, cfg.epsilon)?;
            if eval.report.total <= current.report.total {
                accepted = Some((cand, cand_render, eval));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_render, eval)) = accepted else {
            stalled = true;
            break;
        };
        if eval.report.total > 1e3 * initial.total.max(f64::MIN_POSITIVE) {
            return Err(Error::FitDivergence {
                loss: eval.report.total,
                initial: initial.total,
            });
        }
        let decrease = current.report.total - eval.report.total;
        let prev = current.report.total;
        offsets = cand;
        render = cand_render;
        current = eval;
        history.push(current.report.total);
        if decrease <= cfg.tolerance * prev {
            break;
        }
    }
    Ok(FitResult {
        offsets,
        render_offsets: render,
        initial,
        report: current.report,
        history,
        stalled,
    })
}
