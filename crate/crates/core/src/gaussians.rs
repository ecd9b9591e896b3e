//! Gaussians extracted from a pair of maps.

use crate::error::{Error, Result};
use crate::map::{channel, GaussianMap, MapSide, OffsetMap, PixelIndex, PixelRef, TemplateGeometry, CHANNELS};
use crate::math::{quaternion_matrix, sigmoid, softmax2, Mat3, Vec3};

/// Flat arrays of activated Gaussian parameters, one entry per valid pixel.
///
/// `raw` keeps the channel values exactly as read so that [`GaussianSet::to_maps`]
/// can reproduce the source maps bit for bit; only the offset channels are
/// rewritten from `offsets`, which fitting may change.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub base_positions: Vec<Vec3>,
    pub offsets: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub opacities: Vec<f64>,
    pub scales: Vec<Vec3>,
    /// Unit quaternions, (w, x, y, z).
    pub rotations: Vec<[f64; 4]>,
    /// (p_body, p_cloth), softmax-normalised.
    pub labels: Vec<[f64; 2]>,
    pub render_offsets: Vec<Vec3>,
    pub provenance: Vec<PixelRef>,
    pub raw: Vec<[f32; CHANNELS]>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    /// Geometric-layer canonical position, base + offset.
    pub fn canonical_position(&self, i: usize) -> Vec3 {
        self.base_positions[i] + self.offsets[i]
    }

    pub fn canonical_positions(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.canonical_position(i)).collect()
    }

    /// Rendering-layer canonical position, base + offset + render offset.
    pub fn render_position(&self, i: usize) -> Vec3 {
        self.base_positions[i] + self.offsets[i] + self.render_offsets[i]
    }

    pub fn covariance(&self, i: usize) -> Result<Mat3> {
        covariance_from_params(&self.scales[i], self.rotations[i])
    }

    pub fn covariances(&self) -> Result<Vec<Mat3>> {
        (0..self.len()).map(|i| self.covariance(i)).collect()
    }

    /// Keeps the Gaussians at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> GaussianSet {
        fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i].clone()).collect()
        }
        GaussianSet {
            base_positions: pick(&self.base_positions, indices),
            offsets: pick(&self.offsets, indices),
            colors: pick(&self.colors, indices),
            opacities: pick(&self.opacities, indices),
            scales: pick(&self.scales, indices),
            rotations: pick(&self.rotations, indices),
            labels: pick(&self.labels, indices),
            render_offsets: pick(&self.render_offsets, indices),
            provenance: pick(&self.provenance, indices),
            raw: pick(&self.raw, indices),
        }
    }

    /// Attaches rendering-layer offsets read from offset maps.
    pub fn set_render_offsets(&mut self, front: &OffsetMap, back: &OffsetMap) -> Result<()> {
        for (i, px) in self.provenance.iter().enumerate() {
            let map = match px.side {
                MapSide::Front => front,
                MapSide::Back => back,
            };
            let (r, c) = (px.row as usize, px.col as usize);
            if r >= map.height() || c >= map.width() || !map.planes().is_valid(r, c) {
                return Err(Error::MaskMismatch(format!("render offset missing at {px:?}")));
            }
            self.render_offsets[i] = map.vector(r, c);
        }
        Ok(())
    }

    /// Scatters the render offsets into a pair of offset maps.
    pub fn render_offset_maps(&self, height: usize, width: usize) -> (OffsetMap, OffsetMap) {
        let mut front = OffsetMap::new(height, width, MapSide::Front);
        let mut back = OffsetMap::new(height, width, MapSide::Back);
        for (i, px) in self.provenance.iter().enumerate() {
            let map = match px.side {
                MapSide::Front => &mut front,
                MapSide::Back => &mut back,
            };
            let (r, c) = (px.row as usize, px.col as usize);
            map.set_vector(r, c, &self.render_offsets[i]);
            let flat = map.planes().flat(r, c);
            map.planes_mut().mask[flat] = true;
        }
        (front, back)
    }

    /// Scatters the Gaussians back into front/back maps by provenance.
    ///
    /// Pixels without a Gaussian stay zero with a cleared mask.
    pub fn to_maps(&self, height: usize, width: usize) -> (GaussianMap, GaussianMap) {
        let mut front = GaussianMap::new(height, width, MapSide::Front);
        let mut back = GaussianMap::new(height, width, MapSide::Back);
        for (i, px) in self.provenance.iter().enumerate() {
            let map = match px.side {
                MapSide::Front => &mut front,
                MapSide::Back => &mut back,
            };
            let mut values = self.raw[i];
            values[channel::OFFSET] = self.offsets[i].x as f32;
            values[channel::OFFSET + 1] = self.offsets[i].y as f32;
            values[channel::OFFSET + 2] = self.offsets[i].z as f32;
            let (r, c) = (px.row as usize, px.col as usize);
            map.set_pixel(r, c, &values);
            let flat = map.planes().flat(r, c);
            map.planes_mut().mask[flat] = true;
        }
        (front, back)
    }

    pub fn pixel_index(&self, height: usize, width: usize) -> PixelIndex {
        PixelIndex::new(height, width, &self.provenance)
    }
}

fn activate(raw: &[f32; CHANNELS], base: Vec3, px: PixelRef) -> Result<Activated> {
    let g = |c: usize| raw[c] as f64;
    let q = [
        g(channel::ROTATION),
        g(channel::ROTATION + 1),
        g(channel::ROTATION + 2),
        g(channel::ROTATION + 3),
    ];
    let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(qn > 0.0) || !qn.is_finite() {
        return Err(Error::InvalidParameter(format!("zero rotation quaternion at {px:?}")));
    }
    Ok(Activated {
        base,
        offset: Vec3::new(g(channel::OFFSET), g(channel::OFFSET + 1), g(channel::OFFSET + 2)),
        color: Vec3::new(g(channel::COLOR), g(channel::COLOR + 1), g(channel::COLOR + 2)),
        opacity: sigmoid(g(channel::OPACITY)),
        scale: Vec3::new(g(channel::LOG_SCALE).exp(), g(channel::LOG_SCALE + 1).exp(), g(channel::LOG_SCALE + 2).exp()),
        rotation: [q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn],
        labels: softmax2(g(channel::LABEL), g(channel::LABEL + 1)),
    })
}

struct Activated {
    base: Vec3,
    offset: Vec3,
    color: Vec3,
    opacity: f64,
    scale: Vec3,
    rotation: [f64; 4],
    labels: [f64; 2],
}

/// One Gaussian per valid pixel of the two maps, front first.
///
/// Opacity goes through a sigmoid, scales through `exp`, labels through a
/// two-way softmax, and rotations are normalised.
pub fn extract_gaussians(front: &GaussianMap, back: &GaussianMap, template: &TemplateGeometry) -> Result<GaussianSet> {
    if front.side() != MapSide::Front || back.side() != MapSide::Back {
        return Err(Error::Dimension("maps must be passed as (front, back)".into()));
    }
    for map in [front, back] {
        if map.height() != template.height() || map.width() != template.width() {
            return Err(Error::Dimension(format!(
                "{:?} map is {}x{}, template is {}x{}",
                map.side(),
                map.height(),
                map.width(),
                template.height(),
                template.width()
            )));
        }
        let tmask = &template.side(map.side()).planes().mask;
        if &map.planes().mask != tmask {
            let first = map.planes().mask.iter().zip(tmask).position(|(a, b)| a != b).unwrap_or(0);
            return Err(Error::MaskMismatch(format!(
                "{:?} map differs from template mask at pixel ({}, {})",
                map.side(),
                first / map.width(),
                first % map.width()
            )));
        }
    }

    let nodes = template.nodes();
    let n = nodes.len();
    let mut set = GaussianSet {
        base_positions: Vec::with_capacity(n),
        offsets: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        render_offsets: vec![Vec3::zeros(); n],
        provenance: Vec::with_capacity(n),
        raw: Vec::with_capacity(n),
    };
    for px in nodes {
        let map = match px.side {
            MapSide::Front => front,
            MapSide::Back => back,
        };
        let raw = map.pixel(px.row as usize, px.col as usize);
        let a = activate(&raw, template.base_position(px), px)?;
        set.base_positions.push(a.base);
        set.offsets.push(a.offset);
        set.colors.push(a.color);
        set.opacities.push(a.opacity);
        set.scales.push(a.scale);
        set.rotations.push(a.rotation);
        set.labels.push(a.labels);
        set.provenance.push(px);
        set.raw.push(raw);
    }
    Ok(set)
}

/// Canonical covariance `R(q) diag(s^2) R(q)^T`.
pub fn covariance_from_params(scale: &Vec3, rotation: [f64; 4]) -> Result<Mat3> {
    if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
        return Err(Error::InvalidParameter(format!("scales must be positive, got {scale:?}")));
    }
    let r = quaternion_matrix(rotation).ok_or_else(|| Error::InvalidParameter("zero rotation quaternion".into()))?;
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    let cov = r * s2 * r.transpose();
    // Exact symmetry; the two triangles differ only by rounding.
    Ok((cov + cov.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::TemplateMap;
    use proptest::prelude::*;

    fn template_with_mask(h: usize, w: usize, front_mask: &[bool], back_mask: &[bool]) -> TemplateGeometry {
        let mut f = TemplateMap::new(h, w, MapSide::Front);
        let mut b = TemplateMap::new(h, w, MapSide::Back);
        for r in 0..h {
            for c in 0..w {
                f.set_vector(r, c, &Vec3::new(c as f64, -(r as f64), 0.25));
                b.set_vector(r, c, &Vec3::new(c as f64, -(r as f64), -0.25));
            }
        }
        f.planes_mut().mask = front_mask.to_vec();
        b.planes_mut().mask = back_mask.to_vec();
        TemplateGeometry::new(f, b).unwrap()
    }

    fn unit_map(side: MapSide, h: usize, w: usize, mask: &[bool]) -> GaussianMap {
        let mut m = GaussianMap::new(h, w, side);
        for r in 0..h {
            for c in 0..w {
                let mut v = [0.0f32; CHANNELS];
                v[channel::ROTATION] = 1.0;
                m.set_pixel(r, c, &v);
            }
        }
        m.planes_mut().mask = mask.to_vec();
        m
    }

    #[test]
    fn zero_offsets_reproduce_template() {
        let mask = vec![true; 6];
        let t = template_with_mask(2, 3, &mask, &mask);
        let set = extract_gaussians(&unit_map(MapSide::Front, 2, 3, &mask), &unit_map(MapSide::Back, 2, 3, &mask), &t).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(set.canonical_positions(), t.base_positions());
    }

    #[test]
    fn single_pixel_with_zero_logits_is_half_half() {
        let fm = [false, true, false, false];
        let bm = [false; 4];
        let t = template_with_mask(2, 2, &fm, &bm);
        let set = extract_gaussians(&unit_map(MapSide::Front, 2, 2, &fm), &unit_map(MapSide::Back, 2, 2, &bm), &t).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels[0], [0.5, 0.5]);
        assert_eq!(set.opacities[0], 0.5);
        assert_eq!(set.scales[0], Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(set.provenance[0], PixelRef::new(MapSide::Front, 0, 1));
    }

    #[test]
    fn mask_mismatch_and_dimension_errors() {
        let mask = vec![true; 4];
        let t = template_with_mask(2, 2, &mask, &mask);
        let mut other = mask.clone();
        other[3] = false;
        let err = extract_gaussians(&unit_map(MapSide::Front, 2, 2, &other), &unit_map(MapSide::Back, 2, 2, &mask), &t);
        assert!(matches!(err, Err(Error::MaskMismatch(_))));
        let big = vec![true; 9];
        let err = extract_gaussians(&unit_map(MapSide::Front, 3, 3, &big), &unit_map(MapSide::Back, 2, 2, &mask), &t);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_quaternion_rejected() {
        let mask = vec![true];
        let t = template_with_mask(1, 1, &mask, &mask);
        let mut f = unit_map(MapSide::Front, 1, 1, &mask);
        f.planes_mut().set(channel::ROTATION, 0, 0, 0.0);
        assert!(extract_gaussians(&f, &unit_map(MapSide::Back, 1, 1, &mask), &t).is_err());
    }

    #[test]
    fn covariance_identity_and_quarter_turn() {
        let id = covariance_from_params(&Vec3::new(1.0, 1.0, 1.0), [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(id, Mat3::identity());
        // 90 degrees about z: q = (cos 45, 0, 0, sin 45). Conjugating diag(4,1,1)
        // by the quarter turn swaps the x and y variances.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let cov = covariance_from_params(&Vec3::new(2.0, 1.0, 1.0), [h, 0.0, 0.0, h]).unwrap();
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0));
        assert!((cov - expected).abs().max() < 1e-12, "{cov}");
        assert!(covariance_from_params(&Vec3::new(0.0, 1.0, 1.0), [1.0, 0.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn covariance_spectrum_and_determinant(
            s in prop::array::uniform3(0.01f64..3.0),
            q in prop::array::uniform4(-1.0f64..1.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let scale = Vec3::new(s[0], s[1], s[2]);
            let cov = covariance_from_params(&scale, q).unwrap();
            prop_assert_eq!(cov, cov.transpose());
            let det = (s[0] * s[1] * s[2]).powi(2);
            prop_assert!((cov.determinant() - det).abs() <= 1e-9 * det);
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut want = vec![s[0] * s[0], s[1] * s[1], s[2] * s[2]];
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + b));
            }
            let neg = covariance_from_params(&scale, [-q[0], -q[1], -q[2], -q[3]]).unwrap();
            prop_assert_eq!(cov, neg);
        }

        #[test]
        fn extract_then_scatter_is_bit_exact(
            values in prop::collection::vec(-4.0f32..4.0, 2 * 3 * 3 * CHANNELS),
            mask_bits in prop::collection::vec(any::<bool>(), 18),
        ) {
            let (h, w) = (3, 3);
            let fm = mask_bits[..9].to_vec();
            let bm = mask_bits[9..].to_vec();
            let t = template_with_mask(h, w, &fm, &bm);
            let mut maps = [GaussianMap::new(h, w, MapSide::Front), GaussianMap::new(h, w, MapSide::Back)];
            for (k, m) in maps.iter_mut().enumerate() {
                for r in 0..h {
                    for c in 0..w {
                        let mut px = [0f32; CHANNELS];
                        for (ch, v) in px.iter_mut().enumerate() {
                            *v = values[((k * 9) + r * w + c) * CHANNELS + ch];
                        }
                        px[channel::ROTATION] = 1.5; // keep |q| away from zero
                        m.set_pixel(r, c, &px);
                    }
                }
                m.planes_mut().mask = if k == 0 { fm.clone() } else { bm.clone() };
            }
            let set = extract_gaussians(&maps[0], &maps[1], &t).unwrap();
            for l in &set.labels {
                prop_assert!((l[0] + l[1] - 1.0).abs() < 1e-6);
            }
            let (f2, b2) = set.to_maps(h, w);
            for (orig, back) in [(&maps[0], &f2), (&maps[1], &b2)] {
                prop_assert_eq!(&orig.planes().mask, &back.planes().mask);
                for (r, c) in orig.planes().valid_pixels() {
                    let a = orig.pixel(r, c);
                    let b = back.pixel(r, c);
                    prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
    }

    #[test]
    fn render_offsets_round_trip() {
        let mask = vec![true; 4];
        let t = template_with_mask(2, 2, &mask, &mask);
        let mut set = extract_gaussians(&unit_map(MapSide::Front, 2, 2, &mask), &unit_map(MapSide::Back, 2, 2, &mask), &t).unwrap();
        for (i, d) in set.render_offsets.iter_mut().enumerate() {
            *d = Vec3::new(i as f64 * 0.25, 0.0, -0.5);
        }
        let (f, b) = set.render_offset_maps(2, 2);
        let mut other = set.clone();
        other.render_offsets.iter_mut().for_each(|d| *d = Vec3::zeros());
        other.set_render_offsets(&f, &b).unwrap();
        assert_eq!(other.render_offsets, set.render_offsets);
    }
}
