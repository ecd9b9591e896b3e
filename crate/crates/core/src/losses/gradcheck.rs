//! Finite-difference audit of the analytic loss gradients.
//!
//! Instances are drawn away from the hinge kinks of the collision and layer
//! terms and away from nearest-neighbour ties in the Chamfer term, so that a
//! central difference of step [`FD_STEP`] never crosses a non-smooth point.

use super::{loss_chamfer, loss_coll, loss_edge, loss_layer, loss_offset, loss_stitch_positions, loss_tv_positions};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::synth::pillow_template;
use crate::topology::{build_adjacency, DEFAULT_STITCH_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero components.
pub const GRAD_FLOOR: f64 = 1e-6;
const EPS: f64 = 0.005;
const KINK_MARGIN: f64 = 5e-4;

/// Central differences of `f` over every coordinate of `x`.
pub fn central_difference(f: &dyn Fn(&[Vec3]) -> f64, x: &[Vec3], h: f64) -> Vec<Vec3> {
    let mut work = x.to_vec();
    let mut out = vec![Vec3::zeros(); x.len()];
    for i in 0..x.len() {
        for a in 0..3 {
            let orig = work[i][a];
            work[i][a] = orig + h;
            let up = f(&work);
            work[i][a] = orig - h;
            let down = f(&work);
            work[i][a] = orig;
            out[i][a] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Largest per-component `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: &[Vec3], numeric: &[Vec3]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| (0..3).map(move |k| (a[k], n[k])))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub loss: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub max_gaussians: usize,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

struct Case {
    x: Vec<Vec3>,
    f: Box<dyn Fn(&[Vec3]) -> f64>,
    analytic: Vec<Vec3>,
}

pub const AUDITED: [&str; 7] = ["offset", "tv", "edge", "stitch", "coll", "layer", "chamfer"];

/// Audit every point-based loss on `instances` random instances with at most
/// `max_gaussians` points each.
pub fn audit(max_gaussians: usize, instances: usize, seed: u64) -> Result<AuditReport> {
    if max_gaussians < 18 {
        return Err(Error::InvalidParameter(format!(
            "gradient audit needs at least 18 Gaussians, got {max_gaussians}"
        )));
    }
    if instances == 0 {
        return Err(Error::InvalidParameter("gradient audit needs at least one instance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<AuditRow> = AUDITED
        .iter()
        .map(|name| AuditRow {
            loss: name.to_string(),
            instances: 0,
            coordinates: 0,
            max_rel_err: 0.0,
        })
        .collect();
    for _ in 0..instances {
        for row in rows.iter_mut() {
            let case = make_case(&row.loss, max_gaussians, &mut rng)?;
            let numeric = central_difference(case.f.as_ref(), &case.x, FD_STEP);
            row.instances += 1;
            row.coordinates += 3 * case.x.len();
            row.max_rel_err = row.max_rel_err.max(relative_error(&case.analytic, &numeric));
        }
    }
    Ok(AuditReport { seed, max_gaussians, rows })
}

fn sheet_size(max_gaussians: usize) -> usize {
    (((max_gaussians / 2) as f64).sqrt().floor() as usize).max(3)
}

fn make_case(name: &str, max_gaussians: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let jitter = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec3> { (0..n).map(|_| Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))).collect() };
    let case = match name {
        "offset" => {
            let x = jitter(rng, max_gaussians);
            let analytic = loss_offset(&x)?.grad;
            Case {
                x,
                f: Box::new(|x| loss_offset(x).map_or(f64::NAN, |t| t.value)),
                analytic,
            }
        }
        "tv" | "edge" | "stitch" => {
            let s = sheet_size(max_gaussians);
            let template = pillow_template(s, s, 0.3, 0.05)?;
            let graph = build_adjacency(&template, DEFAULT_STITCH_TOLERANCE)?;
            let base = template.base_positions();
            // Jitter at a tenth of the grid spacing; larger values collapse
            // edges and the difference quotient loses accuracy.
            let x: Vec<Vec3> = base.iter().zip(jitter(rng, base.len())).map(|(b, d)| b + d * (3.0 / (s - 1) as f64)).collect();
            match name {
                "tv" => {
                    let analytic = loss_tv_positions(&x, &graph)?.grad;
                    Case {
                        x,
                        f: Box::new(move |x| loss_tv_positions(x, &graph).map_or(f64::NAN, |t| t.value)),
                        analytic,
                    }
                }
                "edge" => {
                    let analytic = loss_edge(&x, &base, &graph)?.grad;
                    Case {
                        x,
                        f: Box::new(move |x| loss_edge(x, &base, &graph).map_or(f64::NAN, |t| t.value)),
                        analytic,
                    }
                }
                _ => {
                    let pairs = graph.stitch_pairs.clone();
                    let analytic = loss_stitch_positions(&x, &pairs)?.grad;
                    Case {
                        x,
                        f: Box::new(move |x| loss_stitch_positions(x, &pairs).map_or(f64::NAN, |t| t.value)),
                        analytic,
                    }
                }
            }
        }
        "coll" => {
            let n = max_gaussians;
            let mut body = Vec::with_capacity(n);
            let mut normals = Vec::with_capacity(n);
            let mut cloth = Vec::with_capacity(n);
            for _ in 0..n {
                let b = Vec3::new(rng.random(), rng.random(), rng.random());
                let normal = Vec3::from(UnitSphere.sample(rng));
                let d = loop {
                    let d: f64 = rng.random_range(-EPS..2.0 * EPS);
                    if (d - EPS).abs() > KINK_MARGIN {
                        break d;
                    }
                };
                let tangent = (Vec3::from(UnitSphere.sample(rng)) * 0.01).cross(&normal);
                body.push(b);
                normals.push(Some(normal));
                cloth.push(b + normal * d + tangent);
            }
            let analytic = loss_coll(&cloth, &body, &normals, EPS)?.grad;
            Case {
                x: cloth,
                f: Box::new(move |x| loss_coll(x, &body, &normals, EPS).map_or(f64::NAN, |t| t.value)),
                analytic,
            }
        }
        "layer" => {
            let nb = max_gaussians / 2;
            let x: Vec<Vec3> = (0..max_gaussians)
                .map(|_| {
                    let r = loop {
                        let r: f64 = rng.random_range(0.0..2.0 * EPS);
                        if (r - 0.5 * EPS).abs() > KINK_MARGIN {
                            break r;
                        }
                    };
                    Vec3::from(UnitSphere.sample(rng)) * r
                })
                .collect();
            let t = loss_layer(&x[..nb], &x[nb..], EPS);
            let analytic = [t.grad_body, t.grad_cloth].concat();
            Case {
                x,
                f: Box::new(move |x| loss_layer(&x[..nb], &x[nb..], EPS).value),
                analytic,
            }
        }
        "chamfer" => {
            let na = max_gaussians / 2;
            let mut x: Vec<Vec3> = (0..max_gaussians).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
            loop {
                let bad = nn_gap_offenders(&x, na, 1e-3);
                if bad.is_empty() {
                    break;
                }
                for i in bad {
                    x[i] = Vec3::new(rng.random(), rng.random(), rng.random());
                }
            }
            let t = loss_chamfer(&x[..na], &x[na..])?;
            let analytic = [t.grad_a, t.grad_b].concat();
            Case {
                x,
                f: Box::new(move |x| loss_chamfer(&x[..na], &x[na..]).map_or(f64::NAN, |t| t.value)),
                analytic,
            }
        }
        other => return Err(Error::InvalidParameter(format!("unknown loss {other}"))),
    };
    Ok(case)
}

/// Indices into `x = [a; b]` (split at `na`) of points whose nearest
/// neighbour in the other set beats the runner-up by less than `gap` in
/// squared distance.
fn nn_gap_offenders(x: &[Vec3], na: usize, gap: f64) -> Vec<usize> {
    let (a, b) = x.split_at(na);
    let ambiguous = |p: &Vec3, to: &[Vec3]| {
        let mut d: Vec<f64> = to.iter().map(|q| (p - q).norm_squared()).collect();
        d.sort_by(f64::total_cmp);
        d.len() >= 2 && d[1] - d[0] < gap
    };
    let mut out: Vec<usize> = a.iter().enumerate().filter(|(_, p)| ambiguous(p, b)).map(|(i, _)| i).collect();
    out.extend(b.iter().enumerate().filter(|(_, p)| ambiguous(p, a)).map(|(i, _)| na + i));
    out
}
