//! Forward CPU splat rasterizer.
//!
//! Gaussians are projected with the local affine (EWA) approximation, sorted
//! once front to back, and composited per pixel with the over operator. The
//! optional tiled path bins splats by bounding box and visits exactly the
//! splats the reference path would accept at each pixel, in the same order,
//! so both paths produce identical bits.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.01
}

impl Camera {
    /// Camera at `eye` looking at `target` with image-up roughly along `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera up is parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Ok(Self {
            fx: focal,
            fy: focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            width,
            height,
            near: default_near(),
        })
    }

    pub fn rotation(&self) -> Mat3 {
        let r = &self.rotation;
        Mat3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParameter(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera image is empty".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidParameter(format!("near plane must be positive, got {}", self.near)));
        }
        let r = self.rotation();
        if (r * r.transpose() - Mat3::identity()).abs().max() > 1e-6 {
            return Err(Error::InvalidParameter("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }
}

/// Tunable rasterizer constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub opacity_clip: f64,
    pub support_sigma: f64,
    pub min_transmittance: f64,
    pub lowpass: f64,
    pub min_determinant: f64,
    /// Tile edge in pixels for the binned path; 0 uses the reference path.
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            opacity_clip: 0.99,
            support_sigma: 3.0,
            min_transmittance: 1e-4,
            lowpass: 0.3,
            min_determinant: 1e-12,
            tile_size: 16,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("opacity_clip", self.opacity_clip),
            ("support_sigma", self.support_sigma),
            ("min_transmittance", self.min_transmittance),
            ("min_determinant", self.min_determinant),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("raster {name} must be positive, got {v}")));
            }
        }
        if !(self.lowpass >= 0.0 && self.lowpass.is_finite()) {
            return Err(Error::InvalidParameter(format!("raster lowpass must be nonnegative, got {}", self.lowpass)));
        }
        if self.opacity_clip > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "raster opacity_clip must be at most 1, got {}",
                self.opacity_clip
            )));
        }
        Ok(())
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub mean: [f64; 2],
    /// Low-pass filtered 2D covariance in px².
    pub cov: [[f64; 2]; 2],
    pub depth: f64,
}

/// Project a world-space Gaussian; `Ok(None)` when it lies before the near plane.
pub fn project_gaussian(position: &Vec3, covariance: &Mat3, camera: &Camera, lowpass: f64) -> Result<Option<Projected>> {
    let w = camera.rotation();
    let t = w * position + camera.translation();
    if !(t.z >= camera.near) {
        if t.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        return Err(Error::InvalidParameter("non-finite Gaussian position".into()));
    }
    let (z, z2) = (t.z, t.z * t.z);
    let j = nalgebra::Matrix2x3::new(camera.fx / z, 0.0, -camera.fx * t.x / z2, 0.0, camera.fy / z, -camera.fy * t.y / z2);
    let m = j * w;
    let c = m * covariance * m.transpose();
    let mean = [camera.fx * t.x / z + camera.cx, camera.fy * t.y / z + camera.cy];
    let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
    let out = Projected {
        mean,
        cov: [[c[(0, 0)] + lowpass, off], [off, c[(1, 1)] + lowpass]],
        depth: z,
    };
    if !(mean.iter().all(|v| v.is_finite()) && out.cov.iter().flatten().all(|v| v.is_finite())) {
        return Err(Error::InvalidParameter("non-finite projection".into()));
    }
    Ok(Some(out))
}

/// Per-Gaussian inputs to the rasterizer. Optional attribute channels must
/// have one entry per Gaussian when present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatScene {
    pub positions: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    pub opacities: Vec<f64>,
    pub colors: Option<Vec<Vec3>>,
    /// World-space normals; zero vectors contribute nothing.
    pub normals: Option<Vec<Vec3>>,
    pub labels: Option<Vec<[f64; 2]>>,
}

impl SplatScene {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Concatenate two scenes. An attribute channel survives only when both
    /// scenes carry it.
    pub fn union(mut self, other: SplatScene) -> SplatScene {
        fn join<T>(a: Option<Vec<T>>, b: Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(mut a), Some(b)) => {
                    a.extend(b);
                    Some(a)
                }
                _ => None,
            }
        }
        self.positions.extend(other.positions);
        self.covariances.extend(other.covariances);
        self.opacities.extend(other.opacities);
        self.colors = join(self.colors, other.colors);
        self.normals = join(self.normals, other.normals);
        self.labels = join(self.labels, other.labels);
        self
    }

    fn validate(&self, channels: &Channels) -> Result<()> {
        let n = self.len();
        if self.covariances.len() != n || self.opacities.len() != n {
            return Err(Error::Dimension(format!(
                "{n} positions, {} covariances, {} opacities",
                self.covariances.len(),
                self.opacities.len()
            )));
        }
        let check = |name: &str, wanted: bool, len: Option<usize>| match (wanted, len) {
            (true, None) => Err(Error::MissingChannel(format!("{name} requested but the scene has none"))),
            (_, Some(l)) if l != n => Err(Error::Dimension(format!("{name}: {l} entries for {n} Gaussians"))),
            _ => Ok(()),
        };
        check("rgb", channels.rgb, self.colors.as_ref().map(Vec::len))?;
        check("normal", channels.normal, self.normals.as_ref().map(Vec::len))?;
        check("label", channels.label, self.labels.as_ref().map(Vec::len))?;
        for i in 0..n {
            if !(self.opacities[i].is_finite() && self.positions[i].iter().all(|v| v.is_finite()) && self.covariances[i].iter().all(|v| v.is_finite())) {
                return Err(Error::InvalidParameter(format!("Gaussian {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// Which output channels to composite; alpha is always produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channels {
    pub rgb: bool,
    pub normal: bool,
    pub label: bool,
    pub depth: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        rgb: true,
        normal: true,
        label: true,
        depth: true,
    };
    pub const RGB: Channels = Channels {
        rgb: true,
        normal: false,
        label: false,
        depth: false,
    };
}

/// Rendered channels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatImage {
    pub width: usize,
    pub height: usize,
    pub alpha: Vec<f64>,
    pub rgb: Option<Vec<[f64; 3]>>,
    /// Camera-space unit normals where alpha > 0.5, zero elsewhere.
    pub normal: Option<Vec<[f64; 3]>>,
    /// `(S_body, S_cloth)`.
    pub labels: Option<Vec<[f64; 2]>>,
    pub depth: Option<Vec<f64>>,
}

impl SplatImage {
    /// Pixels whose alpha exceeds `threshold`.
    pub fn silhouette(&self, threshold: f64) -> Vec<bool> {
        self.alpha.iter().map(|&a| a > threshold).collect()
    }
}

struct Splat {
    index: usize,
    mean: [f64; 2],
    /// Inverse covariance entries (a, b, c) of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    bbox: [i64; 4],
}

impl Splat {
    #[inline]
    fn covers(&self, x: i64, y: i64) -> bool {
        x >= self.bbox[0] && x <= self.bbox[1] && y >= self.bbox[2] && y <= self.bbox[3]
    }
}

const ACC: usize = 9;

fn prepare(scene: &SplatScene, camera: &Camera, config: &RasterConfig) -> Result<Vec<(f64, Splat)>> {
    let mut splats = Vec::with_capacity(scene.len());
    for i in 0..scene.len() {
        let Some(p) = project_gaussian(&scene.positions[i], &scene.covariances[i], camera, config.lowpass)? else {
            continue;
        };
        let [[a, b], [_, c]] = p.cov;
        let det = a * c - b * b;
        if !(det >= config.min_determinant) {
            continue;
        }
        let opacity = scene.opacities[i];
        if opacity <= 0.0 {
            continue;
        }
        let rx = config.support_sigma * a.sqrt();
        let ry = config.support_sigma * c.sqrt();
        // Pixel (ix, iy) samples at (ix + 0.5, iy + 0.5).
        let bbox = [
            (p.mean[0] - rx - 0.5).ceil() as i64,
            (p.mean[0] + rx - 0.5).floor() as i64,
            (p.mean[1] - ry - 0.5).ceil() as i64,
            (p.mean[1] + ry - 0.5).floor() as i64,
        ];
        if bbox[0] > bbox[1] || bbox[2] > bbox[3] || bbox[1] < 0 || bbox[3] < 0 || bbox[0] >= camera.width as i64 || bbox[2] >= camera.height as i64 {
            continue;
        }
        splats.push((
            p.depth,
            Splat {
                index: i,
                mean: p.mean,
                conic: [c / det, -b / det, a / det],
                opacity,
                bbox,
            },
        ));
    }
    splats.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.index.cmp(&b.1.index)));
    Ok(splats)
}

/// Composite the given splats (already depth sorted) at one pixel. Returns
/// `[r, g, b, nx, ny, nz, s_body, s_cloth, depth]` and the final transmittance.
#[inline]
fn shade<'a>(x: i64, y: i64, splats: impl Iterator<Item = &'a (f64, Splat)>, attrs: &Attributes, config: &RasterConfig) -> ([f64; ACC], f64) {
    let mut acc = [0.0; ACC];
    let mut t = 1.0;
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    for (depth, s) in splats {
        if !s.covers(x, y) {
            continue;
        }
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        let w = (s.opacity * power.exp()).clamp(0.0, config.opacity_clip);
        if w <= 0.0 {
            continue;
        }
        let k = w * t;
        let i = s.index;
        if let Some(c) = attrs.colors {
            acc[0] += c[i].x * k;
            acc[1] += c[i].y * k;
            acc[2] += c[i].z * k;
        }
        if let Some(n) = &attrs.normals {
            acc[3] += n[i].x * k;
            acc[4] += n[i].y * k;
            acc[5] += n[i].z * k;
        }
        if let Some(l) = attrs.labels {
            acc[6] += l[i][0] * k;
            acc[7] += l[i][1] * k;
        }
        acc[8] += depth * k;
        t *= 1.0 - w;
        if t < config.min_transmittance {
            break;
        }
    }
    (acc, t)
}

struct Attributes<'a> {
    colors: Option<&'a [Vec3]>,
    normals: Option<Vec<Vec3>>,
    labels: Option<&'a [[f64; 2]]>,
}

/// Rasterize `scene` through `camera`.
pub fn rasterize(scene: &SplatScene, camera: &Camera, channels: Channels, config: &RasterConfig) -> Result<SplatImage> {
    camera.validate()?;
    scene.validate(&channels)?;
    let splats = prepare(scene, camera, config)?;
    let rot = camera.rotation();
    let attrs = Attributes {
        colors: channels.rgb.then_some(scene.colors.as_deref()).flatten(),
        normals: channels
            .normal
            .then(|| scene.normals.as_ref().map(|ns| ns.iter().map(|n| rot * n).collect()))
            .flatten(),
        labels: channels.label.then_some(scene.labels.as_deref()).flatten(),
    };
    let (w, h) = (camera.width, camera.height);
    let bins = (config.tile_size > 0).then(|| bin(&splats, config.tile_size, w, h));
    let row = |y: usize, out: &mut [([f64; ACC], f64)]| {
        for (x, px) in out.iter_mut().enumerate() {
            *px = match &bins {
                Some((tile, lists)) => {
                    let tiles_x = w.div_ceil(*tile);
                    let list = &lists[(y / tile) * tiles_x + x / tile];
                    shade(x as i64, y as i64, list.iter().map(|&k| &splats[k]), &attrs, config)
                }
                None => shade(x as i64, y as i64, splats.iter(), &attrs, config),
            };
        }
    };
    let mut pixels = vec![([0.0; ACC], 1.0); w * h];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pixels.par_chunks_mut(w).enumerate().for_each(|(y, out)| row(y, out));
    }
    #[cfg(not(feature = "parallel"))]
    pixels.chunks_mut(w).enumerate().for_each(|(y, out)| row(y, out));

    let alpha: Vec<f64> = pixels.iter().map(|(_, t)| 1.0 - t).collect();
    Ok(SplatImage {
        width: w,
        height: h,
        rgb: channels.rgb.then(|| pixels.iter().map(|(a, _)| [a[0], a[1], a[2]]).collect()),
        normal: channels.normal.then(|| {
            pixels
                .iter()
                .zip(&alpha)
                .map(|((a, _), &al)| {
                    let n = Vec3::new(a[3], a[4], a[5]);
                    let len = n.norm();
                    if al > 0.5 && len > 0.0 {
                        [n.x / len, n.y / len, n.z / len]
                    } else {
                        [0.0; 3]
                    }
                })
                .collect()
        }),
        labels: channels.label.then(|| pixels.iter().map(|(a, _)| [a[6], a[7]]).collect()),
        depth: channels.depth.then(|| pixels.iter().map(|(a, _)| a[8]).collect()),
        alpha,
    })
}

/// Per-tile lists of splat indices in sorted order.
fn bin(splats: &[(f64, Splat)], tile: usize, w: usize, h: usize) -> (usize, Vec<Vec<usize>>) {
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (k, (_, s)) in splats.iter().enumerate() {
        let x0 = s.bbox[0].max(0) as usize / tile;
        let x1 = (s.bbox[1].min(w as i64 - 1)) as usize / tile;
        let y0 = s.bbox[2].max(0) as usize / tile;
        let y1 = (s.bbox[3].min(h as i64 - 1)) as usize / tile;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(k);
            }
        }
    }
    (tile, lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle_to_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera(size: usize, focal: f64) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0), focal, size, size).unwrap()
    }

    fn iso(sigma: f64) -> Mat3 {
        Mat3::identity() * (sigma * sigma)
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SplatScene {
        let mut s = SplatScene {
            colors: Some(Vec::new()),
            normals: Some(Vec::new()),
            labels: Some(Vec::new()),
            ..Default::default()
        };
        for _ in 0..n {
            s.positions
                .push(Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)));
            let a = axis_angle_to_matrix(&Vec3::new(rng.random(), rng.random(), rng.random()));
            let d = Mat3::from_diagonal(&Vec3::new(
                rng.random_range(0.005..0.05),
                rng.random_range(0.005..0.05),
                rng.random_range(0.001..0.02),
            ));
            let c = a * d * d * a.transpose();
            s.covariances.push((c + c.transpose()) * 0.5);
            s.opacities.push(rng.random_range(0.1..1.0));
            s.colors.as_mut().unwrap().push(Vec3::new(rng.random(), rng.random(), rng.random()));
            s.normals
                .as_mut()
                .unwrap()
                .push(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize());
            let p: f64 = rng.random();
            s.labels.as_mut().unwrap().push([p, 1.0 - p]);
        }
        s
    }

    #[test]
    fn look_at_is_orthonormal() {
        let c = Camera::look_at(Vec3::new(1.0, 2.0, -3.0), Vec3::new(0.1, 0.0, 0.2), Vec3::y(), 100.0, 32, 24).unwrap();
        c.validate().unwrap();
        let p = c.to_camera(&Vec3::new(0.1, 0.0, 0.2));
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
    }

    #[test]
    fn projection_closed_forms() {
        let cam = front_camera(64, 100.0);
        let sigma = 0.02;
        let p = project_gaussian(&Vec3::zeros(), &iso(sigma), &cam, 0.3).unwrap().unwrap();
        let want = (100.0 * sigma / 2.0f64).powi(2) + 0.3;
        assert!((p.cov[0][0] - want).abs() < 1e-12 && (p.cov[1][1] - want).abs() < 1e-12);
        assert!(p.cov[0][1].abs() < 1e-15);
        assert_eq!(p.mean, [32.0, 32.0]);
        assert_eq!(p.depth, 2.0);
        let far = project_gaussian(&Vec3::new(0.0, 0.0, 2.0), &iso(sigma), &cam, 0.0).unwrap().unwrap();
        let near = project_gaussian(&Vec3::zeros(), &iso(sigma), &cam, 0.0).unwrap().unwrap();
        assert!((far.cov[0][0].sqrt() / near.cov[0][0].sqrt() - 0.5).abs() < 1e-6);
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, -3.0), &iso(sigma), &cam, 0.3).unwrap().is_none());
        assert!(project_gaussian(&Vec3::new(f64::NAN, 0.0, 0.0), &iso(sigma), &cam, 0.3).is_err());
    }

    #[test]
    fn empty_scene_is_blank() {
        let cam = front_camera(8, 10.0);
        let img = rasterize(
            &SplatScene {
                colors: Some(vec![]),
                ..Default::default()
            },
            &cam,
            Channels::RGB,
            &RasterConfig::default(),
        )
        .unwrap();
        assert!(img.alpha.iter().all(|&a| a == 0.0));
        assert!(img.rgb.unwrap().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn missing_channel_is_rejected() {
        let cam = front_camera(8, 10.0);
        let scene = SplatScene {
            positions: vec![Vec3::zeros()],
            covariances: vec![iso(0.1)],
            opacities: vec![1.0],
            ..Default::default()
        };
        assert!(matches!(
            rasterize(&scene, &cam, Channels::ALL, &RasterConfig::default()),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn tiled_path_matches_reference_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scene = random_scene(&mut rng, 300);
        let cam = front_camera(48, 60.0);
        let reference = rasterize(
            &scene,
            &cam,
            Channels::ALL,
            &RasterConfig {
                tile_size: 0,
                ..Default::default()
            },
        )
        .unwrap();
        for tile in [1, 7, 16, 64] {
            let tiled = rasterize(
                &scene,
                &cam,
                Channels::ALL,
                &RasterConfig {
                    tile_size: tile,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(tiled, reference, "tile {tile}");
        }
    }

    #[test]
    fn compositing_is_linear_in_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_scene(&mut rng, 80);
        let mut b = a.clone();
        let extra: Vec<Vec3> = (0..80).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        b.colors = Some(extra.clone());
        let mut sum = a.clone();
        sum.colors = Some(a.colors.as_ref().unwrap().iter().zip(&extra).map(|(x, y)| x + y).collect());
        let cam = front_camera(32, 40.0);
        let cfg = RasterConfig::default();
        let (ia, ib, is) = (
            rasterize(&a, &cam, Channels::RGB, &cfg).unwrap().rgb.unwrap(),
            rasterize(&b, &cam, Channels::RGB, &cfg).unwrap().rgb.unwrap(),
            rasterize(&sum, &cam, Channels::RGB, &cfg).unwrap().rgb.unwrap(),
        );
        for k in 0..is.len() {
            for c in 0..3 {
                assert!((ia[k][c] + ib[k][c] - is[k][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rigid_motion_of_camera_and_scene_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scene = random_scene(&mut rng, 60);
        let cam = front_camera(32, 40.0);
        let r = axis_angle_to_matrix(&Vec3::new(0.3, -0.7, 0.2));
        let t = Vec3::new(0.4, -1.0, 2.5);
        let mut moved = scene.clone();
        moved.positions = scene.positions.iter().map(|p| r * p + t).collect();
        moved.covariances = scene.covariances.iter().map(|c| r * c * r.transpose()).collect();
        moved.normals = scene.normals.as_ref().map(|ns| ns.iter().map(|n| r * n).collect());
        // World-to-camera of the moved camera: p -> R_c Rᵀ (p - t) + t_c.
        let rc = cam.rotation() * r.transpose();
        let tc = cam.translation() - rc * t;
        let mut cam2 = cam.clone();
        cam2.rotation = [
            [rc[(0, 0)], rc[(0, 1)], rc[(0, 2)]],
            [rc[(1, 0)], rc[(1, 1)], rc[(1, 2)]],
            [rc[(2, 0)], rc[(2, 1)], rc[(2, 2)]],
        ];
        cam2.translation = [tc.x, tc.y, tc.z];
        let cfg = RasterConfig::default();
        let a = rasterize(&scene, &cam, Channels::ALL, &cfg).unwrap();
        let b = rasterize(&moved, &cam2, Channels::ALL, &cfg).unwrap();
        for k in 0..a.alpha.len() {
            assert!((a.alpha[k] - b.alpha[k]).abs() < 1e-6);
            for c in 0..3 {
                assert!((a.rgb.as_ref().unwrap()[k][c] - b.rgb.as_ref().unwrap()[k][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn opaque_stack_occludes_far_gaussian() {
        let cam = front_camera(16, 40.0);
        let mut scene = SplatScene {
            colors: Some(vec![]),
            ..Default::default()
        };
        for k in 0..3 {
            scene.positions.push(Vec3::new(0.0, 0.0, -0.5 + 1e-3 * k as f64));
            scene.covariances.push(iso(0.2));
            scene.opacities.push(1.0);
            scene.colors.as_mut().unwrap().push(Vec3::zeros());
        }
        scene.positions.push(Vec3::new(0.0, 0.0, 0.5));
        scene.covariances.push(iso(0.2));
        scene.opacities.push(1.0);
        scene.colors.as_mut().unwrap().push(Vec3::new(1.0, 1.0, 1.0));
        let img = rasterize(&scene, &cam, Channels::RGB, &RasterConfig::default()).unwrap();
        let centre = 8 * 16 + 8;
        assert!(img.rgb.unwrap()[centre][0] < 1e-4);
    }
}
