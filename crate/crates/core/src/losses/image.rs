//! Image-space terms. Evaluation only: no gradients flow through them.

use super::Term;
use crate::error::{Error, Result};
use crate::math::pairwise_sum;
use serde::{Deserialize, Serialize};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const PROB_CLAMP: f64 = 1e-6;

/// Ground-truth segmentation class of a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegClass {
    Body,
    Cloth,
    Background,
}

fn check_same(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: {a} vs {b} pixels")));
    }
    Ok(())
}

/// Mean over masked pixels of the summed per-channel absolute difference
/// between rendered and target normals.
pub fn loss_normal_image(rendered: &[[f64; 3]], target: &[[f64; 3]], mask: &[bool]) -> Result<f64> {
    check_same("normal image", rendered.len(), target.len())?;
    check_same("normal mask", rendered.len(), mask.len())?;
    let per: Vec<f64> = rendered
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((r, t), _)| (r[0] - t[0]).abs() + (r[1] - t[1]).abs() + (r[2] - t[2]).abs())
        .collect();
    if per.is_empty() {
        return Err(Error::Empty("normal loss mask selects no pixels".into()));
    }
    Ok(pairwise_sum(&per) / per.len() as f64)
}

/// Three-class cross entropy between rendered label probabilities and a
/// ground-truth class image. Probabilities (including the background
/// complement) are clamped to `[1e-6, 1 - 1e-6]` before the logarithm. An
/// empty class contributes zero with a warning.
pub fn loss_label(s_body: &[f64], s_cloth: &[f64], truth: &[SegClass]) -> Result<Term> {
    check_same("label image", s_body.len(), s_cloth.len())?;
    check_same("label truth", s_body.len(), truth.len())?;
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut value = 0.0;
    let mut warnings = Vec::new();
    for (class, name) in [(SegClass::Body, "body"), (SegClass::Cloth, "cloth"), (SegClass::Background, "background")] {
        let logs: Vec<f64> = (0..truth.len())
            .filter(|&i| truth[i] == class)
            .map(|i| {
                let p = match class {
                    SegClass::Body => s_body[i],
                    SegClass::Cloth => s_cloth[i],
                    SegClass::Background => 1.0 - s_body[i] - s_cloth[i],
                };
                clamp(p).ln()
            })
            .collect();
        if logs.is_empty() {
            warnings.push(format!("label: no {name} pixels in ground truth"));
            continue;
        }
        value -= pairwise_sum(&logs) / logs.len() as f64;
    }
    Ok(Term {
        value,
        grad: Vec::new(),
        warnings,
    })
}

/// Masked photometric terms: mean absolute difference and mean SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageLoss {
    pub l1: f64,
    pub ssim: f64,
}

/// Masked L1 and SSIM between two RGB images of `width × height`, row-major.
pub fn loss_image(rendered: &[[f64; 3]], target: &[[f64; 3]], mask: &[bool], width: usize, height: usize) -> Result<ImageLoss> {
    check_same("image", rendered.len(), width * height)?;
    check_same("image target", target.len(), width * height)?;
    check_same("image mask", mask.len(), width * height)?;
    let sel: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if sel.is_empty() {
        return Err(Error::Empty("image loss mask selects no pixels".into()));
    }
    let mut l1 = Vec::with_capacity(sel.len() * 3);
    for &i in &sel {
        for c in 0..3 {
            l1.push((rendered[i][c] - target[i][c]).abs());
        }
    }
    let mut s = Vec::with_capacity(sel.len() * 3);
    for c in 0..3 {
        let a: Vec<f64> = rendered.iter().map(|p| p[c]).collect();
        let b: Vec<f64> = target.iter().map(|p| p[c]).collect();
        let map = ssim(&a, &b, width, height);
        s.extend(sel.iter().map(|&i| map[i]));
    }
    Ok(ImageLoss {
        l1: pairwise_sum(&l1) / l1.len() as f64,
        ssim: pairwise_sum(&s) / s.len() as f64,
    })
}

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    std::array::from_fn(|k| {
        let x = k as f64 - half;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    })
}

/// Separable Gaussian blur; at borders the window is truncated and
/// renormalised over the in-bounds taps.
fn blur(img: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW as isize / 2;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    let o = k as isize - half;
                    let (sx, sy) = if horizontal {
                        (x as isize + o, y as isize)
                    } else {
                        (x as isize, y as isize + o)
                    };
                    if sx < 0 || sy < 0 || sx >= width as isize || sy >= height as isize {
                        continue;
                    }
                    acc += wk * src[sy as usize * width + sx as usize];
                    norm += wk;
                }
                out[y * width + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Per-pixel SSIM map of one channel.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Vec<f64> {
    let w = window();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|y| y * y).collect();
    let mu_a = blur(a, width, height, &w);
    let mu_b = blur(b, width, height, &w);
    let e_aa = blur(&aa, width, height, &w);
    let e_bb = blur(&bb, width, height, &w);
    let e_ab = blur(&ab, width, height, &w);
    (0..a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect()
}
