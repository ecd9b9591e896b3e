//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Studio`] holds the synthetic scenes and exposes three operations:
//! render a posed capsule avatar, transfer its garment onto a second avatar,
//! and run collision refinement on the concentric-sphere scene.

use gausslayer::collision::{CollisionConfig, IterationReport};
use gausslayer::pipeline::{self, LayeredAvatar};
use gausslayer::render::{Camera, RasterConfig, SplatImage};
use gausslayer::skinning::Pose;
use gausslayer::synth::{self, SceneKind, SyntheticSceneSpec};
use gausslayer::Vec3;
use wasm_bindgen::prelude::*;

const BACKGROUND: [f64; 3] = [0.09, 0.1, 0.12];
const BODY_TINT: [f64; 3] = [0.95, 0.55, 0.3];
const CLOTH_TINT: [f64; 3] = [0.25, 0.6, 0.95];

fn js_err(e: gausslayer::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Studio {
    capsule: LayeredAvatar,
    poses: Vec<Pose>,
    pair: [LayeredAvatar; 2],
    spheres: Option<[LayeredAvatar; 2]>,
    size: usize,
    report: String,
}

#[wasm_bindgen]
impl Studio {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: usize) -> Result<Studio, JsError> {
        let capsule = synth::generate(&SyntheticSceneSpec::new(SceneKind::CapsuleAvatar, seed as u64)).map_err(js_err)?;
        let pair = synth::generate(&SyntheticSceneSpec::new(SceneKind::TransferPair, seed as u64)).map_err(js_err)?;
        let [a, b]: [LayeredAvatar; 2] = pair.avatars.try_into().map_err(|_| JsError::new("transfer scene has two avatars"))?;
        Ok(Studio {
            capsule: capsule.avatars.into_iter().next().ok_or_else(|| JsError::new("capsule scene is empty"))?,
            poses: capsule.poses,
            pair: [a, b],
            spheres: None,
            size: size.clamp(32, 512),
            report: "{}".into(),
        })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter, js_name = frameCount)]
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    /// JSON summary of the last operation.
    #[wasm_bindgen(getter)]
    pub fn report(&self) -> String {
        self.report.clone()
    }

    /// RGBA pixels of the capsule avatar in pose `frame`, scaled by `amount`,
    /// seen from `yaw` degrees. `mode` is "color", "labels" or "normals".
    pub fn render(&mut self, frame: usize, amount: f64, yaw: f64, mode: &str, resolve: bool) -> Result<Vec<u8>, JsError> {
        let pose = self.pose(frame, amount)?;
        let camera = orbit_camera(yaw, self.size).map_err(js_err)?;
        let cfg = CollisionConfig::default();
        let out = pipeline::render_frame(&self.capsule, &pose, &camera, resolve.then_some(&cfg), &RasterConfig::default()).map_err(js_err)?;
        self.report = match &out.resolution {
            Some(r) => summary(&r.reports, out.cloth_positions.len(), 0),
            None => format!("{{\"gaussians\":{}}}", out.body.geometric.len() + out.cloth_positions.len()),
        };
        Ok(to_rgba(&out.image, mode))
    }

    /// Moves the capsule garment onto the wider avatar and renders the result.
    pub fn transfer(&mut self, frame: usize, amount: f64, yaw: f64, alpha: f64, mode: &str) -> Result<Vec<u8>, JsError> {
        let pose = self.pose(frame, amount)?;
        let camera = orbit_camera(yaw, self.size).map_err(js_err)?;
        let cfg = pipeline::TransferConfig {
            collision: CollisionConfig { alpha, ..Default::default() },
            raster: RasterConfig::default(),
        };
        let [a, b] = &self.pair;
        let out = pipeline::transfer_clothing(a, b, &pose, &camera, &cfg).map_err(js_err)?;
        self.report = summary(&out.resolution.reports, out.cloth_positions.len(), out.substituted);
        Ok(to_rgba(&out.image, mode))
    }

    /// Transfers the clothing sphere onto the larger body sphere and returns
    /// the per-iteration collision reports as JSON.
    #[wasm_bindgen(js_name = sphereRefinement)]
    pub fn sphere_refinement(&mut self, alpha: f64, iterations: usize) -> Result<String, JsError> {
        if self.spheres.is_none() {
            let scene = synth::generate(&SyntheticSceneSpec::new(SceneKind::ConcentricSpheres, 0)).map_err(js_err)?;
            let pair: [LayeredAvatar; 2] = scene.avatars.try_into().map_err(|_| JsError::new("sphere scene has two avatars"))?;
            self.spheres = Some(pair);
        }
        let [a, b] = self.spheres.as_ref().unwrap();
        let cfg = CollisionConfig {
            alpha,
            iterations: iterations.min(50),
            ..Default::default()
        };
        let g = pipeline::transfer_geometry(a, b, &Pose::identity(a.skeleton.joint_count()), &cfg).map_err(js_err)?;
        self.report = summary(&g.resolution.reports, g.cloth_positions.len(), g.substituted);
        Ok(self.report.clone())
    }
}

impl Studio {
    fn pose(&self, frame: usize, amount: f64) -> Result<Pose, JsError> {
        let p = self
            .poses
            .get(frame)
            .ok_or_else(|| JsError::new(&format!("frame {frame} of {}", self.poses.len())))?;
        Ok(Pose {
            rotations: p.rotations.iter().map(|r| r * amount).collect(),
            translation: p.translation * amount,
        })
    }
}

fn orbit_camera(yaw_deg: f64, size: usize) -> gausslayer::Result<Camera> {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let dist = 2.5;
    Camera::look_at(Vec3::new(dist * s, 0.0, dist * c), Vec3::zeros(), Vec3::y(), size as f64 * 1.1, size, size)
}

fn summary(reports: &[IterationReport], points: usize, substituted: usize) -> String {
    let rows: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{{\"iteration\":{},\"violations\":{},\"satisfied\":{:.6},\"max_penetration\":{:.6e},\"min_distance\":{:.6e}}}",
                r.iteration, r.violations, r.satisfied_fraction, r.max_penetration, r.min_distance
            )
        })
        .collect();
    format!("{{\"points\":{points},\"substituted\":{substituted},\"reports\":[{}]}}", rows.join(","))
}

fn to_rgba(img: &SplatImage, mode: &str) -> Vec<u8> {
    let n = img.width * img.height;
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        let a = img.alpha[i];
        let fg = match mode {
            "labels" => img.labels.as_ref().map(|l| {
                let [b, c] = l[i];
                std::array::from_fn(|k| BODY_TINT[k] * b + CLOTH_TINT[k] * c)
            }),
            "normals" => img.normal.as_ref().map(|nm| {
                let v = nm[i];
                std::array::from_fn(|k| if a > 0.5 { (0.5 - 0.5 * v[k]) * a } else { 0.0 })
            }),
            _ => img.rgb.as_ref().map(|rgb| rgb[i]),
        }
        .unwrap_or([a; 3]);
        for k in 0..3 {
            let v = fg[k] + (1.0 - a) * BACKGROUND[k];
            out.push((v.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_transfers() {
        let mut s = Studio::new(1, 48).unwrap();
        let px = s.render(1, 1.0, 30.0, "color", false).unwrap();
        assert_eq!(px.len(), 4 * 48 * 48);
        assert!(px.chunks(4).any(|p| p[..3] != px[..3]));
        let px = s.transfer(1, 0.5, 0.0, 0.5, "labels").unwrap();
        assert_eq!(px.len(), 4 * 48 * 48);
        assert!(s.report().contains("\"reports\":["));
    }

    #[test]
    fn rgba_composites_over_background() {
        let img = SplatImage {
            width: 2,
            height: 1,
            alpha: vec![0.0, 1.0],
            rgb: Some(vec![[0.0; 3], [1.0, 0.0, 0.0]]),
            normal: None,
            labels: None,
            depth: None,
        };
        let px = to_rgba(&img, "color");
        assert_eq!(&px[4..], &[255, 0, 0, 255]);
        assert_eq!(px[0], (BACKGROUND[0].powf(1.0 / 2.2) * 255.0).round() as u8);
    }
}
