//! File formats.
//!
//! Binary formats are little-endian and round-trip bit-exactly. Text formats
//! (skeleton, pose sequence, camera, selector, configuration) use TOML or a
//! line-oriented layout and round-trip to equal values.
//!
//! Map files (`GMAP`, `GTPL`, `GOFF`) share a 21-byte header
//!
//! ```text
//! magic [u8; 4] | version u32 | height u32 | width u32 | channels u32 | side u8
//! ```
//!
//! followed by `channels` row-major `f32` planes and one row-major mask plane
//! of `0`/`1` bytes. A template geometry file is a front `GTPL` record
//! followed by a back one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{channel, ChannelMap, GaussianMap, MapSide, OffsetMap, PixelRef, TemplateGeometry, TemplateMap, CHANNELS};
use crate::math::Vec3;
use crate::pipeline::LayeredAvatar;
use crate::skinning::{Pose, Skeleton, SkinningWeights, MAX_INFLUENCES};
use crate::topology::adjacency_with_stitches;

pub const FORMAT_VERSION: u32 = 1;
pub const GAUSSIAN_MAGIC: [u8; 4] = *b"GMAP";
pub const TEMPLATE_MAGIC: [u8; 4] = *b"GTPL";
pub const OFFSET_MAGIC: [u8; 4] = *b"GOFF";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"SKWT";
pub const STITCH_MAGIC: [u8; 4] = *b"GSTP";
const HEADER_LEN: usize = 21;

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Cursor over a byte buffer that reports truncation with the byte offset.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.buf.len() as u64,
                format!("truncated in {what}: needs {n} bytes from offset {}, file has {}", self.pos, self.buf.len()),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4, what)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn magic(&mut self, want: [u8; 4]) -> Result<()> {
        let at = self.pos as u64;
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::format(
                at,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(&want)),
            ));
        }
        let at = self.pos as u64;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn encode_planes(magic: [u8; 4], planes: &ChannelMap, out: &mut Vec<u8>) {
    out.reserve(HEADER_LEN + planes.data.len() * 4 + planes.mask.len());
    out.extend_from_slice(&magic);
    put_u32(out, FORMAT_VERSION as usize);
    put_u32(out, planes.height);
    put_u32(out, planes.width);
    put_u32(out, planes.channels);
    out.push(planes.side.index() as u8);
    for v in &planes.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(planes.mask.iter().map(|&m| m as u8));
}

fn decode_planes(r: &mut Reader, magic: [u8; 4], channels: usize, name: fn(usize) -> String) -> Result<ChannelMap> {
    r.magic(magic)?;
    let height = r.u32("header")? as usize;
    let width = r.u32("header")? as usize;
    let at = r.pos as u64;
    let found = r.u32("header")? as usize;
    if found != channels {
        return Err(Error::format(at, format!("{found} channels, expected {channels}")));
    }
    let at = r.pos as u64;
    let side = MapSide::from_u8(r.u8("header")?).ok_or_else(|| Error::format(at, "side byte must be 0 (front) or 1 (back)"))?;
    let pixels = height
        .checked_mul(width)
        .filter(|&p| p.checked_mul(channels * 4).is_some())
        .ok_or_else(|| Error::format(5, format!("map size {height}x{width} overflows")))?;
    let mut data = Vec::with_capacity(channels * pixels);
    for c in 0..channels {
        data.extend(r.f32s(pixels, &format!("plane {c} ({})", name(c)))?);
    }
    let mask_at = r.pos;
    let mask = r
        .take(pixels, "mask plane")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::format((mask_at + i) as u64, format!("mask byte {b} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelMap {
        height,
        width,
        side,
        channels,
        data,
        mask,
    })
}

fn gaussian_plane_name(c: usize) -> String {
    channel::name(c).to_string()
}

fn xyz_plane_name(c: usize) -> String {
    ["x", "y", "z"].get(c).copied().unwrap_or("?").to_string()
}

pub fn encode_gaussian_map(map: &GaussianMap) -> Vec<u8> {
    let mut out = Vec::new();
    encode_planes(GAUSSIAN_MAGIC, map.planes(), &mut out);
    out
}

pub fn decode_gaussian_map(bytes: &[u8]) -> Result<GaussianMap> {
    let mut r = Reader::new(bytes);
    let planes = decode_planes(&mut r, GAUSSIAN_MAGIC, CHANNELS, gaussian_plane_name)?;
    r.finish()?;
    GaussianMap::from_planes(planes)
}

pub fn encode_offset_map(map: &OffsetMap) -> Vec<u8> {
    let mut out = Vec::new();
    encode_planes(OFFSET_MAGIC, map.planes(), &mut out);
    out
}

pub fn decode_offset_map(bytes: &[u8]) -> Result<OffsetMap> {
    let mut r = Reader::new(bytes);
    let planes = decode_planes(&mut r, OFFSET_MAGIC, 3, xyz_plane_name)?;
    r.finish()?;
    OffsetMap::from_planes(planes)
}

pub fn encode_template(template: &TemplateGeometry) -> Vec<u8> {
    let mut out = Vec::new();
    encode_planes(TEMPLATE_MAGIC, template.front.planes(), &mut out);
    encode_planes(TEMPLATE_MAGIC, template.back.planes(), &mut out);
    out
}

pub fn decode_template(bytes: &[u8]) -> Result<TemplateGeometry> {
    let mut r = Reader::new(bytes);
    let front_at = r.pos as u64;
    let front = TemplateMap::from_planes(decode_planes(&mut r, TEMPLATE_MAGIC, 3, xyz_plane_name)?)?;
    let back_at = r.pos as u64;
    let back = TemplateMap::from_planes(decode_planes(&mut r, TEMPLATE_MAGIC, 3, xyz_plane_name)?)?;
    r.finish()?;
    if front.side() != MapSide::Front {
        return Err(Error::format(front_at, "first template record must be the front side"));
    }
    if back.side() != MapSide::Back {
        return Err(Error::format(back_at, "second template record must be the back side"));
    }
    TemplateGeometry::new(front, back)
}

/// `rows u32 | influences u32 | rows x influences x (joint u32, weight f32)`.
pub fn encode_weights(weights: &SkinningWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + weights.len() * MAX_INFLUENCES * 8);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, weights.len());
    put_u32(&mut out, MAX_INFLUENCES);
    for row in &weights.rows {
        for &(j, w) in row {
            out.extend_from_slice(&j.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<SkinningWeights> {
    let mut r = Reader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    let n = r.u32("header")? as usize;
    let at = r.pos as u64;
    let k = r.u32("header")? as usize;
    if k != MAX_INFLUENCES {
        return Err(Error::format(at, format!("{k} influences per row, expected {MAX_INFLUENCES}")));
    }
    let mut rows = Vec::with_capacity(n.min(bytes.len() / 32 + 1));
    for i in 0..n {
        let mut row = [(0u32, 0f32); MAX_INFLUENCES];
        for slot in row.iter_mut() {
            let what = format!("weights row {i}");
            let j = r.u32(&what)?;
            let w = f32::from_le_bytes(r.take(4, &what)?.try_into().unwrap());
            *slot = (j, w);
        }
        rows.push(row);
    }
    r.finish()?;
    Ok(SkinningWeights { rows })
}

/// `count u32 | count x (front u32, back u32)`, node indices of the graph.
pub fn encode_stitches(pairs: &[(usize, usize)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + pairs.len() * 8);
    out.extend_from_slice(&STITCH_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, pairs.len());
    for &(a, b) in pairs {
        put_u32(&mut out, a);
        put_u32(&mut out, b);
    }
    out
}

pub fn decode_stitches(bytes: &[u8]) -> Result<Vec<(usize, usize)>> {
    let mut r = Reader::new(bytes);
    r.magic(STITCH_MAGIC)?;
    let n = r.u32("header")? as usize;
    let mut pairs = Vec::with_capacity(n.min(bytes.len() / 8 + 1));
    for i in 0..n {
        let what = format!("stitch pair {i}");
        pairs.push((r.u32(&what)? as usize, r.u32(&what)? as usize));
    }
    r.finish()?;
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    joint: Vec<JointRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRecord {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    rest: [f64; 3],
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::Text(e.to_string().trim_end().to_string())
}

/// One `[[joint]]` table per joint with `name`, `rest` and, except for the
/// root, `parent` (a joint name).
pub fn skeleton_to_toml(skeleton: &Skeleton) -> String {
    let file = SkeletonFile {
        joint: (0..skeleton.joint_count())
            .map(|i| JointRecord {
                name: skeleton.names[i].clone(),
                parent: skeleton.parents[i].map(|p| skeleton.names[p].clone()),
                rest: skeleton.rest[i].into(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("skeleton serializes")
}

pub fn skeleton_from_toml(text: &str) -> Result<Skeleton> {
    let file: SkeletonFile = toml::from_str(text).map_err(toml_err)?;
    let names: Vec<String> = file.joint.iter().map(|j| j.name.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Skeleton(format!("duplicate joint name {n:?}")));
        }
    }
    let parents = file
        .joint
        .iter()
        .map(|j| match &j.parent {
            None => Ok(None),
            Some(p) => names
                .iter()
                .position(|n| n == p)
                .map(Some)
                .ok_or_else(|| Error::Skeleton(format!("joint {:?} has unknown parent {p:?}", j.name))),
        })
        .collect::<Result<Vec<_>>>()?;
    let rest = file.joint.iter().map(|j| Vec3::from(j.rest)).collect();
    Skeleton::new(names, parents, rest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    pub index: u32,
    pub pose: Pose,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    #[serde(default)]
    frame: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    index: u32,
    rotations: Vec<[f64; 3]>,
    translation: [f64; 3],
}

/// One `[[frame]]` table per frame: `index`, per-joint axis-angle
/// `rotations` and the root `translation`.
pub fn poses_to_toml(frames: &[PoseFrame]) -> String {
    let file = PoseFile {
        frame: frames
            .iter()
            .map(|f| FrameRecord {
                index: f.index,
                rotations: f.pose.rotations.iter().map(|&r| r.into()).collect(),
                translation: f.pose.translation.into(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("poses serialize")
}

/// Parses a pose sequence and checks every frame against `skeleton`.
pub fn poses_from_toml(text: &str, skeleton: &Skeleton) -> Result<Vec<PoseFrame>> {
    let file: PoseFile = toml::from_str(text).map_err(toml_err)?;
    file.frame
        .into_iter()
        .map(|f| {
            let pose = Pose {
                rotations: f.rotations.into_iter().map(Vec3::from).collect(),
                translation: Vec3::from(f.translation),
            };
            pose.validate(skeleton).map_err(|e| Error::Skeleton(format!("frame {}: {e}", f.index)))?;
            Ok(PoseFrame { index: f.index, pose })
        })
        .collect()
}

pub fn camera_to_toml(camera: &crate::render::Camera) -> String {
    toml::to_string(camera).expect("camera serializes")
}

pub fn camera_from_toml(text: &str) -> Result<crate::render::Camera> {
    let camera: crate::render::Camera = toml::from_str(text).map_err(toml_err)?;
    camera.validate()?;
    Ok(camera)
}

/// One pixel per line as `side row col` with side `f` or `b`. Blank lines
/// and `#` comments are ignored.
pub fn selector_to_text(selector: &[PixelRef]) -> String {
    let mut s = String::with_capacity(selector.len() * 10);
    for px in selector {
        s.push_str(&format!("{} {} {}\n", px.side.tag(), px.row, px.col));
    }
    s
}

/// Parses a selector; the result must be strictly increasing.
pub fn selector_from_text(text: &str) -> Result<Vec<PixelRef>> {
    let mut out: Vec<PixelRef> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Text(format!("selector line {}: {m}: {line:?}", ln + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [side, row, col] = fields[..] else {
            return Err(bad("expected `side row col`"));
        };
        let side = match side {
            "f" => MapSide::Front,
            "b" => MapSide::Back,
            _ => return Err(bad("side must be f or b")),
        };
        let row: u32 = row.parse().map_err(|_| bad("bad row"))?;
        let col: u32 = col.parse().map_err(|_| bad("bad column"))?;
        let px = PixelRef { side, row, col };
        if out.last().is_some_and(|last| *last >= px) {
            return Err(bad("pixels must be sorted without duplicates"));
        }
        out.push(px);
    }
    Ok(out)
}

/// Points with normals and 8-bit colors, stored as in a PLY file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    /// Missing normals become zero; colors in `[0, 1]` are rounded to bytes.
    pub fn from_points(positions: &[Vec3], normals: &[Option<Vec3>], colors: &[Vec3]) -> Result<Self> {
        if normals.len() != positions.len() || colors.len() != positions.len() {
            return Err(Error::Dimension(format!(
                "{} positions, {} normals, {} colors",
                positions.len(),
                normals.len(),
                colors.len()
            )));
        }
        let f = |v: &Vec3| [v.x as f32, v.y as f32, v.z as f32];
        Ok(Self {
            positions: positions.iter().map(f).collect(),
            normals: normals.iter().map(|n| n.as_ref().map_or([0.0; 3], f)).collect(),
            colors: colors.iter().map(|c| [to_byte(c.x), to_byte(c.y), to_byte(c.z)]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

const PLY_PROPERTIES: [(&str, &str); 9] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
];

/// Binary little-endian PLY with one `vertex` element.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for (ty, name) in PLY_PROPERTIES {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 27);
    for i in 0..cloud.len() {
        for v in cloud.positions[i].iter().chain(&cloud.normals[i]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&cloud.colors[i]);
    }
    out
}

/// Reads files written by [`encode_ply`]; other property layouts are
/// rejected.
pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let end = b"end_header\n";
    let header_len = bytes
        .windows(end.len())
        .position(|w| w == end)
        .map(|p| p + end.len())
        .ok_or_else(|| Error::format(0, "PLY header has no end_header line"))?;
    let header = std::str::from_utf8(&bytes[..header_len]).map_err(|e| Error::format(e.valid_up_to() as u64, "PLY header is not UTF-8"))?;
    let mut lines = header.lines().filter(|l| !l.starts_with("comment"));
    if lines.next() != Some("ply") {
        return Err(Error::format(0, "missing ply magic"));
    }
    if lines.next() != Some("format binary_little_endian 1.0") {
        return Err(Error::format(4, "only binary_little_endian 1.0 is supported"));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::format(0, "expected `element vertex N`"))?;
    for (ty, name) in PLY_PROPERTIES {
        let want = format!("property {ty} {name}");
        if lines.next() != Some(want.as_str()) {
            return Err(Error::format(0, format!("expected `{want}` in PLY header")));
        }
    }
    if lines.next() != Some("end_header") {
        return Err(Error::format(0, "unexpected extra PLY header lines"));
    }
    let mut r = Reader { buf: bytes, pos: header_len };
    let mut cloud = PointCloud::default();
    for i in 0..count {
        let what = format!("vertex {i}");
        let v = r.f32s(6, &what)?;
        cloud.positions.push([v[0], v[1], v[2]]);
        cloud.normals.push([v[3], v[4], v[5]]);
        let c = r.take(3, &what)?;
        cloud.colors.push([c[0], c[1], c[2]]);
    }
    r.finish()?;
    Ok(cloud)
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Quantizes linear values clamped to `[0, 1]`.
    pub fn from_linear(width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(Error::Dimension(format!("{} pixels for a {width}x{height} image", rgb.len())));
        }
        Ok(Self {
            width,
            height,
            data: rgb.iter().map(|p| [to_byte(p[0]), to_byte(p[1]), to_byte(p[2])]).collect(),
        })
    }
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().flatten());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // `#` comments, then exactly one whitespace byte.
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PPM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P6" {
        return Err(Error::format(0, "not a binary PPM (P6)"));
    }
    let num = |k: usize| {
        fields[k]
            .1
            .parse::<usize>()
            .map_err(|_| Error::format(fields[k].0 as u64, format!("bad number {:?}", fields[k].1)))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::format(fields[3].0 as u64, format!("maxval {maxval}, only 255 is supported")));
    }
    let mut r = Reader { buf: bytes, pos: pos + 1 };
    let raw = r.take(width * height * 3, "pixel data")?;
    r.finish()?;
    Ok(RgbImage {
        width,
        height,
        data: raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Planar `f32` image channels with named planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatPlanes {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    /// `names.len()` planes of `width * height` values.
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FloatSidecar {
    width: usize,
    height: usize,
    dtype: String,
    layout: String,
    planes: Vec<String>,
}

impl FloatPlanes {
    pub fn from_vectors<const K: usize>(width: usize, height: usize, names: [&str; K], pixels: &[[f64; K]]) -> Self {
        let n = width * height;
        let mut data = vec![0.0f32; K * n];
        for (i, p) in pixels.iter().enumerate() {
            for k in 0..K {
                data[k * n + i] = p[k] as f32;
            }
        }
        Self {
            width,
            height,
            names: names.iter().map(|s| s.to_string()).collect(),
            data,
        }
    }
}

/// Sidecar path for a raw float file: `x.raw` gets `x.toml`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("toml")
}

pub fn encode_float_planes(planes: &FloatPlanes) -> (Vec<u8>, String) {
    let raw = planes.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let sidecar = FloatSidecar {
        width: planes.width,
        height: planes.height,
        dtype: "f32le".into(),
        layout: "planar".into(),
        planes: planes.names.clone(),
    };
    (raw, toml::to_string(&sidecar).expect("sidecar serializes"))
}

pub fn decode_float_planes(raw: &[u8], sidecar: &str) -> Result<FloatPlanes> {
    let meta: FloatSidecar = toml::from_str(sidecar).map_err(toml_err)?;
    if meta.dtype != "f32le" || meta.layout != "planar" {
        return Err(Error::Text(format!("unsupported raw layout {} / {}", meta.dtype, meta.layout)));
    }
    let n = meta.width * meta.height;
    let mut r = Reader::new(raw);
    let mut data = Vec::with_capacity(n * meta.planes.len());
    for (k, name) in meta.planes.iter().enumerate() {
        data.extend(r.f32s(n, &format!("plane {k} ({name})"))?);
    }
    r.finish()?;
    Ok(FloatPlanes {
        width: meta.width,
        height: meta.height,
        names: meta.planes,
        data,
    })
}

pub fn write_float_planes(raw_path: &Path, planes: &FloatPlanes) -> Result<()> {
    let (raw, sidecar) = encode_float_planes(planes);
    write_file(raw_path, &raw)?;
    write_file(&sidecar_path(raw_path), sidecar.as_bytes())
}

pub fn read_float_planes(raw_path: &Path) -> Result<FloatPlanes> {
    let sidecar = read_text(&sidecar_path(raw_path))?;
    decode_float_planes(&read_file(raw_path)?, &sidecar)
}

pub fn read_gaussian_map(path: &Path) -> Result<GaussianMap> {
    decode_gaussian_map(&read_file(path)?)
}

pub fn write_gaussian_map(path: &Path, map: &GaussianMap) -> Result<()> {
    write_file(path, &encode_gaussian_map(map))
}

pub fn read_template(path: &Path) -> Result<TemplateGeometry> {
    decode_template(&read_file(path)?)
}

pub fn write_template(path: &Path, template: &TemplateGeometry) -> Result<()> {
    write_file(path, &encode_template(template))
}

pub fn read_skeleton(path: &Path) -> Result<Skeleton> {
    skeleton_from_toml(&read_text(path)?)
}

pub fn read_poses(path: &Path, skeleton: &Skeleton) -> Result<Vec<PoseFrame>> {
    poses_from_toml(&read_text(path)?, skeleton)
}

pub fn read_camera(path: &Path) -> Result<crate::render::Camera> {
    camera_from_toml(&read_text(path)?)
}

pub fn read_selector(path: &Path) -> Result<Vec<PixelRef>> {
    selector_from_text(&read_text(path)?)
}

/// Avatar bundle file names inside the bundle directory.
pub mod bundle {
    pub const TEMPLATE: &str = "template.gtpl";
    pub const STITCHES: &str = "stitches.gstp";
    pub const SKELETON: &str = "skeleton.toml";
    pub const BODY_FRONT: &str = "body_front.gmap";
    pub const BODY_BACK: &str = "body_back.gmap";
    pub const CLOTH_FRONT: &str = "cloth_front.gmap";
    pub const CLOTH_BACK: &str = "cloth_back.gmap";
    pub const RENDER_FRONT: &str = "cloth_render_front.goff";
    pub const RENDER_BACK: &str = "cloth_render_back.goff";
    pub const BODY_WEIGHTS: &str = "body.skwt";
    pub const CLOTH_WEIGHTS: &str = "cloth.skwt";
    pub const SELECTOR: &str = "selector.txt";
    pub const MANIFEST: &str = "avatar.toml";
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    height: usize,
    width: usize,
    body_gaussians: usize,
    cloth_gaussians: usize,
}

/// Writes an avatar as a directory of map, weight, skeleton and selector
/// files.
///
/// Clothing maps cover the full template mask: selected pixels hold the
/// clothing parameters, the others repeat the body parameters and are
/// ignored on load.
pub fn save_avatar(dir: &Path, avatar: &LayeredAvatar) -> Result<()> {
    use bundle::*;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (avatar.height(), avatar.width());
    let (bf, bb) = avatar.body.to_maps(h, w);
    let (cf, cb) = avatar.cloth.to_maps(h, w);
    let (rf, rb) = avatar.cloth.render_offset_maps(h, w);
    let mut cloth = [bf.clone(), bb.clone()];
    let mut render = [rf, rb];
    for (side, src) in [cf, cb].into_iter().enumerate() {
        for (r, c) in src.planes().valid_pixels().collect::<Vec<_>>() {
            cloth[side].set_pixel(r, c, &src.pixel(r, c));
        }
        render[side].planes_mut().mask = cloth[side].planes().mask.clone();
    }
    let put = |name: &str, bytes: &[u8]| write_file(&dir.join(name), bytes);
    put(TEMPLATE, &encode_template(&avatar.template))?;
    put(STITCHES, &encode_stitches(&avatar.graph.stitch_pairs))?;
    put(SKELETON, skeleton_to_toml(&avatar.skeleton).as_bytes())?;
    put(BODY_FRONT, &encode_gaussian_map(&bf))?;
    put(BODY_BACK, &encode_gaussian_map(&bb))?;
    put(CLOTH_FRONT, &encode_gaussian_map(&cloth[0]))?;
    put(CLOTH_BACK, &encode_gaussian_map(&cloth[1]))?;
    put(RENDER_FRONT, &encode_offset_map(&render[0]))?;
    put(RENDER_BACK, &encode_offset_map(&render[1]))?;
    put(BODY_WEIGHTS, &encode_weights(&avatar.body_weights))?;
    put(CLOTH_WEIGHTS, &encode_weights(&avatar.cloth_weights))?;
    put(SELECTOR, selector_to_text(&avatar.selector).as_bytes())?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        height: h,
        width: w,
        body_gaussians: avatar.body.len(),
        cloth_gaussians: avatar.cloth.len(),
    };
    put(MANIFEST, toml::to_string(&manifest).expect("manifest serializes").as_bytes())
}

pub fn load_avatar(dir: &Path) -> Result<LayeredAvatar> {
    use bundle::*;
    let file = |name: &str| read_file(&dir.join(name));
    let manifest: Manifest = toml::from_str(&read_text(&dir.join(MANIFEST))?).map_err(toml_err)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Text(format!("bundle version {}, expected {FORMAT_VERSION}", manifest.version)));
    }
    let template = decode_template(&file(TEMPLATE)?)?;
    let skeleton = skeleton_from_toml(&read_text(&dir.join(SKELETON))?)?;
    let body = crate::gaussians::extract_gaussians(&decode_gaussian_map(&file(BODY_FRONT)?)?, &decode_gaussian_map(&file(BODY_BACK)?)?, &template)?;
    let mut cloth = crate::gaussians::extract_gaussians(&decode_gaussian_map(&file(CLOTH_FRONT)?)?, &decode_gaussian_map(&file(CLOTH_BACK)?)?, &template)?;
    cloth.set_render_offsets(&decode_offset_map(&file(RENDER_FRONT)?)?, &decode_offset_map(&file(RENDER_BACK)?)?)?;
    let selector = read_selector(&dir.join(SELECTOR))?;
    let mut avatar = LayeredAvatar::assemble(
        template,
        skeleton,
        body,
        decode_weights(&file(BODY_WEIGHTS)?)?,
        &cloth,
        decode_weights(&file(CLOTH_WEIGHTS)?)?,
        selector,
    )?;
    let stitches = decode_stitches(&file(STITCHES)?)?;
    if stitches != avatar.graph.stitch_pairs {
        avatar.graph = adjacency_with_stitches(&avatar.template, stitches)?;
    }
    if (avatar.height(), avatar.width(), avatar.body.len(), avatar.cloth.len())
        != (manifest.height, manifest.width, manifest.body_gaussians, manifest.cloth_gaussians)
    {
        return Err(Error::Text("bundle contents disagree with avatar.toml".into()));
    }
    Ok(avatar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneKind, SyntheticSceneSpec};
    use proptest::prelude::*;

    fn random_map(h: usize, w: usize, side: MapSide, values: &[f32], mask: &[bool]) -> GaussianMap {
        let mut m = GaussianMap::new(h, w, side);
        for (i, v) in m.planes_mut().data.iter_mut().enumerate() {
            *v = values[i % values.len()];
        }
        for (i, b) in m.planes_mut().mask.iter_mut().enumerate() {
            *b = mask[i % mask.len()];
        }
        m
    }

    proptest! {
        #[test]
        fn gaussian_map_round_trip_is_bit_exact(
            h in 1usize..6,
            w in 1usize..6,
            back in any::<bool>(),
            bits in prop::collection::vec(any::<u32>(), 1..64),
            mask in prop::collection::vec(any::<bool>(), 1..16),
        ) {
            let values: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let side = if back { MapSide::Back } else { MapSide::Front };
            let m = random_map(h, w, side, &values, &mask);
            let bytes = encode_gaussian_map(&m);
            prop_assert_eq!(bytes.len(), HEADER_LEN + h * w * (CHANNELS * 4 + 1));
            let back = decode_gaussian_map(&bytes).unwrap();
            let a: Vec<u32> = m.planes().data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.planes().data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(&m.planes().mask, &back.planes().mask);
            prop_assert_eq!(encode_gaussian_map(&back), bytes);
        }

        #[test]
        fn weights_round_trip(rows in prop::collection::vec(prop::array::uniform4((0u32..40, any::<f32>())), 0..30)) {
            let w = SkinningWeights { rows };
            let bytes = encode_weights(&w);
            prop_assert_eq!(encode_weights(&decode_weights(&bytes).unwrap()), bytes);
        }
    }

    #[test]
    fn truncated_map_names_missing_plane() {
        let m = random_map(4, 5, MapSide::Front, &[0.5], &[true]);
        let bytes = encode_gaussian_map(&m);
        let plane = 4 * 5 * 4;
        let cut = HEADER_LEN + 7 * plane + 3;
        let err = decode_gaussian_map(&bytes[..cut]).unwrap_err().to_string();
        assert!(err.contains("plane 7 (log-scale.x)"), "{err}");
        assert!(err.contains(&format!("offset {}", HEADER_LEN + 7 * plane)), "{err}");
        let err = decode_gaussian_map(&bytes[..bytes.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("mask plane"), "{err}");
        let err = decode_gaussian_map(&bytes[..10]).unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }

    #[test]
    fn magic_version_and_trailing_bytes_rejected() {
        let m = random_map(2, 2, MapSide::Back, &[1.0], &[true, false]);
        let mut bytes = encode_gaussian_map(&m);
        assert!(decode_offset_map(&bytes).unwrap_err().to_string().contains("bad magic"));
        bytes[4] = 9;
        assert!(decode_gaussian_map(&bytes).unwrap_err().to_string().contains("version 9"));
        bytes[4] = 1;
        bytes.push(0);
        assert!(decode_gaussian_map(&bytes).unwrap_err().to_string().contains("trailing"));
        bytes.pop();
        let last = bytes.len() - 1;
        bytes[last] = 2;
        assert!(matches!(decode_gaussian_map(&bytes), Err(Error::Format { offset, .. }) if offset == last as u64));
    }

    #[test]
    fn empty_ply_round_trips() {
        let bytes = encode_ply(&PointCloud::default());
        let cloud = decode_ply(&bytes).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn ply_round_trip() {
        let cloud = PointCloud {
            positions: vec![[0.1, -2.0, f32::MIN_POSITIVE], [1e30, 0.0, -0.0]],
            normals: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            colors: vec![[0, 128, 255], [7, 8, 9]],
        };
        let bytes = encode_ply(&cloud);
        let back = decode_ply(&bytes).unwrap();
        assert_eq!(encode_ply(&back), bytes);
        assert!(decode_ply(&bytes[..bytes.len() - 2]).unwrap_err().to_string().contains("vertex 1"));
    }

    #[test]
    fn ppm_round_trip_and_header_comments() {
        let img = RgbImage {
            width: 3,
            height: 2,
            data: (0..6u8).map(|i| [i, i * 2, 255 - i]).collect(),
        };
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        let mut commented = b"P6 # comment\n3 2\n255\n".to_vec();
        commented.extend(img.data.iter().flatten());
        assert_eq!(decode_ppm(&commented).unwrap(), img);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn float_planes_round_trip() {
        let p = FloatPlanes::from_vectors(2, 1, ["body", "cloth"], &[[0.25, 0.75], [1.0, 0.0]]);
        let (raw, sidecar) = encode_float_planes(&p);
        assert_eq!(decode_float_planes(&raw, &sidecar).unwrap(), p);
        let err = decode_float_planes(&raw[..9], &sidecar).unwrap_err().to_string();
        assert!(err.contains("plane 1 (cloth)"), "{err}");
    }

    #[test]
    fn selector_text_round_trip_and_order() {
        let sel = vec![
            PixelRef::new(MapSide::Front, 0, 3),
            PixelRef::new(MapSide::Front, 2, 1),
            PixelRef::new(MapSide::Back, 0, 0),
        ];
        assert_eq!(selector_from_text(&selector_to_text(&sel)).unwrap(), sel);
        assert!(selector_from_text("b 0 0\nf 0 0\n").is_err());
        assert!(selector_from_text("f 1\n").is_err());
        assert_eq!(selector_from_text("# none\n\n").unwrap(), vec![]);
    }

    #[test]
    fn skeleton_and_pose_text_round_trip() {
        let scene = generate(&SyntheticSceneSpec::new(SceneKind::CapsuleAvatar, 2)).unwrap();
        let skel = &scene.avatars[0].skeleton;
        assert_eq!(&skeleton_from_toml(&skeleton_to_toml(skel)).unwrap(), skel);
        let frames: Vec<PoseFrame> = scene
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| PoseFrame {
                index: i as u32,
                pose: p.clone(),
            })
            .collect();
        assert_eq!(poses_from_toml(&poses_to_toml(&frames), skel).unwrap(), frames);
        let mut bad = frames[0].clone();
        bad.pose.rotations.pop();
        let err = poses_from_toml(&poses_to_toml(&[bad]), skel).unwrap_err().to_string();
        assert!(err.contains("joint rotations"), "{err}");
    }

    #[test]
    fn camera_round_trip() {
        let scene = generate(&SyntheticSceneSpec::new(SceneKind::CapsuleAvatar, 2)).unwrap();
        assert_eq!(camera_from_toml(&camera_to_toml(&scene.camera)).unwrap(), scene.camera);
    }

    #[test]
    fn avatar_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [SceneKind::CapsuleAvatar, SceneKind::PlanePair] {
            let scene = generate(&SyntheticSceneSpec::new(kind, 4)).unwrap();
            let a = &scene.avatars[0];
            let path = dir.path().join(format!("{kind:?}"));
            save_avatar(&path, a).unwrap();
            assert_eq!(&load_avatar(&path).unwrap(), a, "{kind:?}");
        }
    }
}
