//! Synthetic templates and scenes.
//!
//! Every generator is fully determined by its [`SyntheticSceneSpec`], seed
//! included.

use crate::error::{Error, Result};
use crate::gaussians::extract_gaussians;
use crate::map::{channel, GaussianMap, MapSide, OffsetMap, PixelRef, TemplateGeometry, TemplateMap, CHANNELS};
use crate::math::{quaternion_aligning_z, Vec3};
use crate::pipeline::LayeredAvatar;
use crate::render::Camera;
use crate::skinning::{Pose, Skeleton, SkinningWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidParameter(format!("synthetic map must be at least 2x2, got {height}x{width}")));
    }
    Ok(())
}

fn full_mask(f: &mut TemplateMap, b: &mut TemplateMap) {
    let n = f.height() * f.width();
    f.planes_mut().mask = vec![true; n];
    b.planes_mut().mask = vec![true; n];
}

/// Square sheet of side `size` centred at the origin in the xy plane, inflated
/// by `thickness · sin(πu) sin(πv)` towards +z on the front and -z on the
/// back. Boundary pixels of the two maps coincide. `thickness = 0` gives a
/// flat double-sided plane.
pub fn pillow_template(height: usize, width: usize, size: f64, thickness: f64) -> Result<TemplateGeometry> {
    check_size(height, width)?;
    let mut f = TemplateMap::new(height, width, MapSide::Front);
    let mut b = TemplateMap::new(height, width, MapSide::Back);
    for r in 0..height {
        for c in 0..width {
            let u = c as f64 / (width - 1) as f64;
            let v = r as f64 / (height - 1) as f64;
            let bump = if r == 0 || c == 0 || r == height - 1 || c == width - 1 {
                0.0
            } else {
                thickness * (PI * u).sin() * (PI * v).sin()
            };
            let x = (u - 0.5) * size;
            let y = (0.5 - v) * size;
            f.set_vector(r, c, &Vec3::new(x, y, bump));
            b.set_vector(r, c, &Vec3::new(x, y, -bump));
        }
    }
    full_mask(&mut f, &mut b);
    TemplateGeometry::new(f, b)
}

/// Point of a surface of revolution about +y at meridian parameter
/// `ψ` (0 faces +z), given radius `rho` and height `y`.
fn revolve(rho: f64, y: f64, psi: f64) -> Vec3 {
    Vec3::new(rho * psi.sin(), y, rho * psi.cos())
}

/// Azimuth of pixel column `c`. Front columns sweep the +z half from -x to
/// +x; back columns sweep the -z half so that front and back pixels at the
/// same (row, col) project to the same x (x-ray layout) and the first and
/// last columns of both maps coincide.
pub fn column_azimuth(side: MapSide, c: usize, width: usize) -> f64 {
    let t = c as f64 * PI / (width - 1) as f64;
    match side {
        MapSide::Front => -0.5 * PI + t,
        MapSide::Back => -0.5 * PI - t,
    }
}

/// Template of a surface of revolution. `profile(s)` maps the row parameter
/// `s ∈ (0, 1)` (top to bottom, pixel centres) to `(radius, height)`.
pub fn revolved_template(height: usize, width: usize, profile: impl Fn(f64) -> (f64, f64)) -> Result<TemplateGeometry> {
    check_size(height, width)?;
    let mut f = TemplateMap::new(height, width, MapSide::Front);
    let mut b = TemplateMap::new(height, width, MapSide::Back);
    for r in 0..height {
        let (rho, y) = profile((r as f64 + 0.5) / height as f64);
        for c in 0..width {
            f.set_vector(r, c, &revolve(rho, y, column_azimuth(MapSide::Front, c, width)));
            b.set_vector(r, c, &revolve(rho, y, column_azimuth(MapSide::Back, c, width)));
        }
    }
    full_mask(&mut f, &mut b);
    TemplateGeometry::new(f, b)
}

/// Sphere of `radius` centred at the origin.
pub fn sphere_template(height: usize, width: usize, radius: f64) -> Result<TemplateGeometry> {
    revolved_template(height, width, |s| {
        let theta = s * PI;
        (radius * theta.sin(), radius * theta.cos())
    })
}

/// Capsule profile: hemispherical caps of `radius` joined by a cylinder of
/// length `length`, centred at the origin along y. Returns `(ρ, y)` and the
/// outward profile normal `(n_ρ, n_y)` at arc-length fraction `s`.
pub fn capsule_profile(radius: f64, length: f64, s: f64) -> ((f64, f64), (f64, f64)) {
    let cap = 0.5 * PI * radius;
    let arc = s * (2.0 * cap + length);
    let half = 0.5 * length;
    if arc < cap {
        let phi = arc / radius;
        ((radius * phi.sin(), half + radius * phi.cos()), (phi.sin(), phi.cos()))
    } else if arc <= cap + length {
        ((radius, half - (arc - cap)), (1.0, 0.0))
    } else {
        let phi = 0.5 * PI + (arc - cap - length) / radius;
        ((radius * phi.sin(), -half + radius * phi.cos()), (phi.sin(), phi.cos()))
    }
}

/// Capsule along y through the origin.
pub fn capsule_template(height: usize, width: usize, radius: f64, length: f64) -> Result<TemplateGeometry> {
    revolved_template(height, width, |s| capsule_profile(radius, length, s).0)
}

/// Outward unit normal of a capsule template pixel, from the analytic profile.
pub fn capsule_normal(side: MapSide, row: usize, col: usize, height: usize, width: usize, radius: f64, length: f64) -> Vec3 {
    let (_, (nr, ny)) = capsule_profile(radius, length, (row as f64 + 0.5) / height as f64);
    let psi = column_azimuth(side, col, width);
    Vec3::new(nr * psi.sin(), ny, nr * psi.cos())
}

/// Kinds of generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Flat one-sided body plane with coincident clothing and a target
    /// point cloud displaced 1 cm along the plane normal.
    PlanePair,
    /// Clothing sphere r = 0.5 over body r = 0.45 (avatar A), body r = 0.55 (avatar B).
    ConcentricSpheres,
    /// Capsule body with a torso garment on a three-joint chain.
    CapsuleAvatar,
    /// Two capsule avatars of different radii.
    TransferPair,
}

impl SceneKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "plane" | "plane_pair" | "planes" => Self::PlanePair,
            "spheres" | "concentric_spheres" => Self::ConcentricSpheres,
            "capsule" | "capsule_avatar" => Self::CapsuleAvatar,
            "transfer" | "transfer_pair" => Self::TransferPair,
            other => return Err(Error::InvalidParameter(format!("unknown scene kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of colour noise (and target jitter for planes).
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        let (height, width) = match kind {
            SceneKind::PlanePair => (24, 24),
            SceneKind::ConcentricSpheres => (48, 48),
            SceneKind::CapsuleAvatar | SceneKind::TransferPair => (32, 24),
        };
        Self {
            kind,
            height,
            width,
            noise: 0.01,
            seed,
        }
    }
}

/// Generated avatars with a suggested camera and pose sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub avatars: Vec<LayeredAvatar>,
    /// Reconstruction target for fitting (plane scenes).
    pub target: Option<Vec<Vec3>>,
    pub poses: Vec<Pose>,
    pub camera: Camera,
}

/// Capsule dimensions shared by the capsule scenes.
pub const CAPSULE_LENGTH: f64 = 0.6;
pub const CAPSULE_RADIUS_A: f64 = 0.15;
pub const CAPSULE_RADIUS_B: f64 = 0.18;
/// Radial gap between a capsule body and its garment.
pub const GARMENT_GAP: f64 = 0.02;
/// Magnitude of the garment's rendering-layer offset.
pub const GARMENT_RENDER_OFFSET: f64 = 0.001;

pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    check_size(spec.height, spec.width)?;
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise must be nonnegative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let front_camera = |dist: f64, extent: f64| {
        let size = 64;
        Camera::look_at(
            Vec3::new(0.0, 0.0, dist),
            Vec3::zeros(),
            Vec3::y(),
            size as f64 * dist / (extent * 1.2),
            size,
            size,
        )
    };
    Ok(match spec.kind {
        SceneKind::PlanePair => {
            let template = plane_template(h, w, 0.5)?;
            let avatar = build_avatar(
                template,
                single_joint(),
                |_| vec![(0, 1.0)],
                &AvatarLook {
                    body_color: Vec3::new(0.8, 0.6, 0.5),
                    cloth_color: Vec3::new(0.2, 0.3, 0.8),
                    noise: spec.noise,
                },
                |_, _| Some((Vec3::zeros(), Vec3::zeros())),
                |_| Vec3::z(),
                &mut rng,
            )?;
            let jitter = Normal::new(0.0, spec.noise * 0.01).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let target = avatar
                .body
                .canonical_positions()
                .iter()
                .map(|p| p + Vec3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), 0.01))
                .collect();
            SyntheticScene {
                spec: *spec,
                avatars: vec![avatar],
                target: Some(target),
                poses: vec![Pose::identity(1)],
                camera: front_camera(1.5, 0.5)?,
            }
        }
        SceneKind::ConcentricSpheres => {
            let look = AvatarLook {
                body_color: Vec3::new(0.8, 0.6, 0.5),
                cloth_color: Vec3::new(0.3, 0.7, 0.3),
                noise: spec.noise,
            };
            let radial = |p: &Vec3| p.normalize();
            let a = build_avatar(
                sphere_template(h, w, 0.45)?,
                single_joint(),
                |_| vec![(0, 1.0)],
                &look,
                |_, p| Some((radial(p) * 0.05, Vec3::zeros())),
                radial,
                &mut rng,
            )?;
            let b = build_avatar(
                sphere_template(h, w, 0.55)?,
                single_joint(),
                |_| vec![(0, 1.0)],
                &look,
                |_, p| Some((radial(p) * 0.05, Vec3::zeros())),
                radial,
                &mut rng,
            )?;
            SyntheticScene {
                spec: *spec,
                avatars: vec![a, b],
                target: None,
                poses: vec![Pose::identity(1)],
                camera: front_camera(2.5, 1.2)?,
            }
        }
        SceneKind::CapsuleAvatar => {
            let a = capsule_avatar(h, w, CAPSULE_RADIUS_A, spec.noise, &mut rng)?;
            SyntheticScene {
                spec: *spec,
                avatars: vec![a],
                target: None,
                poses: capsule_poses(),
                camera: front_camera(2.5, 1.0)?,
            }
        }
        SceneKind::TransferPair => {
            let a = capsule_avatar(h, w, CAPSULE_RADIUS_A, spec.noise, &mut rng)?;
            let b = capsule_avatar(h, w, CAPSULE_RADIUS_B, spec.noise, &mut rng)?;
            SyntheticScene {
                spec: *spec,
                avatars: vec![a, b],
                target: None,
                poses: capsule_poses(),
                camera: front_camera(2.5, 1.0)?,
            }
        }
    })
}

/// One-sided square plane in the xy plane facing +z; the back map is empty.
pub fn plane_template(height: usize, width: usize, size: f64) -> Result<TemplateGeometry> {
    let mut t = pillow_template(height, width, size, 0.0)?;
    t.back.planes_mut().mask = vec![false; height * width];
    Ok(t)
}

fn single_joint() -> Skeleton {
    Skeleton {
        names: vec!["root".into()],
        parents: vec![None],
        rest: vec![Vec3::zeros()],
    }
}

/// Three-joint chain along the capsule axis.
pub fn capsule_skeleton() -> Skeleton {
    Skeleton {
        names: vec!["pelvis".into(), "spine".into(), "chest".into()],
        parents: vec![None, Some(0), Some(1)],
        rest: vec![Vec3::new(0.0, -0.3, 0.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.3, 0.0)],
    }
}

/// Piecewise-linear blend between consecutive chain joints by height.
pub fn capsule_weights(p: &Vec3) -> Vec<(usize, f64)> {
    let heights = [-0.3, 0.0, 0.3];
    if p.y <= heights[0] {
        return vec![(0, 1.0)];
    }
    if p.y >= heights[2] {
        return vec![(2, 1.0)];
    }
    let k = if p.y < heights[1] { 0 } else { 1 };
    let t = (p.y - heights[k]) / (heights[k + 1] - heights[k]);
    vec![(k, 1.0 - t), (k + 1, t)]
}

/// Rest pose, a spine bend, and a bend with a twist.
pub fn capsule_poses() -> Vec<Pose> {
    let bend = |spine: Vec3, chest: Vec3| Pose {
        rotations: vec![Vec3::zeros(), spine, chest],
        translation: Vec3::zeros(),
    };
    vec![
        Pose::identity(3),
        bend(Vec3::new(0.0, 0.0, 0.25), Vec3::new(0.0, 0.0, 0.15)),
        bend(Vec3::new(0.2, 0.0, -0.2), Vec3::new(0.0, 0.3, 0.0)),
    ]
}

/// Rows of the cylindrical part of a capsule map that carry the garment.
pub fn garment_rows(height: usize, radius: f64) -> std::ops::Range<usize> {
    let mut rows = (0..height).filter(|&r| {
        let ((_, y), _) = capsule_profile(radius, CAPSULE_LENGTH, (r as f64 + 0.5) / height as f64);
        y.abs() <= 0.25
    });
    let first = rows.next().unwrap_or(0);
    let last = rows.next_back().unwrap_or(first);
    first..last + 1
}

/// Capsule avatar of the given radius wearing a torso garment.
pub fn capsule_avatar(height: usize, width: usize, radius: f64, noise: f64, rng: &mut ChaCha8Rng) -> Result<LayeredAvatar> {
    let template = capsule_template(height, width, radius, CAPSULE_LENGTH)?;
    let rows = garment_rows(height, radius);
    let look = AvatarLook {
        body_color: Vec3::new(0.85, 0.65, 0.55),
        cloth_color: Vec3::new(0.2, 0.35, 0.8),
        noise,
    };
    let normal = |px: PixelRef| capsule_normal(px.side, px.row as usize, px.col as usize, height, width, radius, CAPSULE_LENGTH);
    build_avatar(
        template,
        capsule_skeleton(),
        capsule_weights,
        &look,
        |px, _| {
            rows.contains(&(px.row as usize))
                .then(|| (normal(px) * GARMENT_GAP, normal(px) * GARMENT_RENDER_OFFSET))
        },
        |p| {
            let radial = Vec3::new(p.x, 0.0, p.z);
            if p.y.abs() <= 0.5 * CAPSULE_LENGTH {
                radial.normalize()
            } else {
                (p - Vec3::new(0.0, p.y.signum() * 0.5 * CAPSULE_LENGTH, 0.0)).normalize()
            }
        },
        rng,
    )
}

struct AvatarLook {
    body_color: Vec3,
    cloth_color: Vec3,
    noise: f64,
}

fn logit(p: f64) -> f32 {
    (p / (1.0 - p)).ln() as f32
}

fn pixel_values(color: Vec3, offset: Vec3, surface_normal: Vec3, spacing: f64, p_cloth: f64) -> [f32; CHANNELS] {
    let mut v = [0f32; CHANNELS];
    for k in 0..3 {
        v[channel::COLOR + k] = color[k] as f32;
        v[channel::OFFSET + k] = offset[k] as f32;
    }
    v[channel::OPACITY] = logit(0.95);
    let s = (0.6 * spacing).ln();
    v[channel::LOG_SCALE] = s as f32;
    v[channel::LOG_SCALE + 1] = s as f32;
    v[channel::LOG_SCALE + 2] = (0.15 * spacing).ln() as f32;
    let q = quaternion_aligning_z(&surface_normal);
    for k in 0..4 {
        v[channel::ROTATION + k] = q[k] as f32;
    }
    v[channel::LABEL] = 0.0;
    v[channel::LABEL + 1] = logit(p_cloth);
    v
}

/// Build body and clothing models on one template.
///
/// `garment(px, base)` returns the clothing offset and render offset at a
/// pixel, or `None` where there is no clothing. `normal(base)` orients the
/// flat splats.
fn build_avatar(
    template: TemplateGeometry,
    skeleton: Skeleton,
    weights: impl Fn(&Vec3) -> Vec<(usize, f64)>,
    look: &AvatarLook,
    garment: impl Fn(PixelRef, &Vec3) -> Option<(Vec3, Vec3)>,
    normal: impl Fn(&Vec3) -> Vec3,
    rng: &mut ChaCha8Rng,
) -> Result<LayeredAvatar> {
    let (h, w) = (template.height(), template.width());
    let nodes = template.nodes();
    let spacing = mean_spacing(&template);
    let color_noise = Normal::new(0.0, look.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut jitter = |c: Vec3| c.map(|v| (v + color_noise.sample(rng)).clamp(0.0, 1.0));
    let mut body_maps = [GaussianMap::new(h, w, MapSide::Front), GaussianMap::new(h, w, MapSide::Back)];
    let mut cloth_maps = [GaussianMap::new(h, w, MapSide::Front), GaussianMap::new(h, w, MapSide::Back)];
    let mut render = [OffsetMap::new(h, w, MapSide::Front), OffsetMap::new(h, w, MapSide::Back)];
    let mut selector = Vec::new();
    for side in [MapSide::Front, MapSide::Back] {
        let mask = template.side(side).planes().mask.clone();
        body_maps[side.index()].planes_mut().mask = mask.clone();
        cloth_maps[side.index()].planes_mut().mask = mask.clone();
        render[side.index()].planes_mut().mask = mask;
    }
    for &px in &nodes {
        let base = template.base_position(px);
        let n = normal(&base);
        let g = garment(px, &base);
        let (r, c, s) = (px.row as usize, px.col as usize, px.side.index());
        let body_color = jitter(look.body_color);
        body_maps[s].set_pixel(r, c, &pixel_values(body_color, Vec3::zeros(), n, spacing, if g.is_some() { 0.9 } else { 0.1 }));
        let (offset, render_offset) = g.unwrap_or((Vec3::zeros(), Vec3::zeros()));
        let cloth_color = jitter(look.cloth_color);
        cloth_maps[s].set_pixel(r, c, &pixel_values(cloth_color, offset, n, spacing, 0.9));
        render[s].set_vector(r, c, &render_offset);
        if g.is_some() {
            selector.push(px);
        }
    }
    let [bf, bb] = body_maps;
    let [cf, cb] = cloth_maps;
    let body = extract_gaussians(&bf, &bb, &template)?;
    let mut cloth_model = extract_gaussians(&cf, &cb, &template)?;
    cloth_model.set_render_offsets(&render[0], &render[1])?;
    let body_rows: Vec<Vec<(usize, f64)>> = body.canonical_positions().iter().map(&weights).collect();
    let cloth_rows: Vec<Vec<(usize, f64)>> = selector.iter().map(|px| weights(&template.base_position(*px))).collect();
    LayeredAvatar::assemble(
        template,
        skeleton,
        body,
        SkinningWeights::from_sparse(&body_rows)?,
        &cloth_model,
        SkinningWeights::from_sparse(&cloth_rows)?,
        selector,
    )
}

fn mean_spacing(template: &TemplateGeometry) -> f64 {
    let graph = crate::topology::build_adjacency(template, crate::topology::DEFAULT_STITCH_TOLERANCE);
    let base = template.base_positions();
    match graph {
        Ok(g) => {
            let e = g.grid_edges();
            if e.is_empty() {
                return 0.01;
            }
            e.iter().map(|&(i, j)| (base[i] - base[j]).norm()).sum::<f64>() / e.len() as f64
        }
        Err(_) => 0.01,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_adjacency;

    #[test]
    fn pillow_boundary_stitches() {
        let t = pillow_template(5, 6, 1.0, 0.1).unwrap();
        let g = build_adjacency(&t, 1e-3).unwrap();
        // Every boundary pixel of the front pairs with its back twin.
        assert_eq!(g.stitch_pairs.len(), 2 * 5 + 2 * 6 - 4);
        let base = t.base_positions();
        for &(a, b) in &g.stitch_pairs {
            assert_eq!(base[a], base[b]);
        }
    }

    #[test]
    fn sphere_points_on_radius_and_seams_coincide() {
        let t = sphere_template(8, 9, 0.5).unwrap();
        for p in t.base_positions() {
            assert!((p.norm() - 0.5).abs() < 1e-6);
        }
        for r in 0..8 {
            for c in [0, 8] {
                assert!((t.front.vector(r, c) - t.back.vector(r, c)).norm() < 1e-6);
            }
            for c in 0..9 {
                let (fp, bp) = (t.front.vector(r, c), t.back.vector(r, c));
                assert!((fp.x - bp.x).abs() < 1e-6 && fp.z >= -1e-6 && bp.z <= 1e-6);
            }
        }
    }

    #[test]
    fn capsule_profile_is_continuous_and_normals_unit() {
        let (r, l) = (0.2, 0.6);
        let mut prev = capsule_profile(r, l, 0.0).0;
        for k in 1..=1000 {
            let ((rho, y), (nr, ny)) = capsule_profile(r, l, k as f64 / 1000.0);
            assert!(((rho - prev.0).powi(2) + (y - prev.1).powi(2)).sqrt() < 2e-3);
            assert!((nr * nr + ny * ny - 1.0).abs() < 1e-12);
            prev = (rho, y);
        }
        assert!((capsule_profile(r, l, 1.0).0 .1 + 0.5 * l + r).abs() < 1e-12);
    }

    #[test]
    fn scenes_generate_deterministically() {
        for kind in [
            SceneKind::PlanePair,
            SceneKind::ConcentricSpheres,
            SceneKind::CapsuleAvatar,
            SceneKind::TransferPair,
        ] {
            let mut spec = SyntheticSceneSpec::new(kind, 7);
            spec.height = spec.height.min(16);
            spec.width = spec.width.min(12);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b, "{kind:?}");
            for avatar in &a.avatars {
                avatar.validate().unwrap();
                assert!(!avatar.cloth.is_empty());
            }
        }
    }
}
