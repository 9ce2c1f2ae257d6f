use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HyperbolicityConfig, SampleSet};
use crate::error::{Error, Result};
use crate::field::{sign_normalize, Point, VectorFieldDef};
use crate::flow::{flow, tangent_flow, IntegratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplittingStatus {
    Converged,
    NotConverged,
    Excluded,
}

/// Directions at one sample. `e_dir` and `f_dir` lie in the normal plane
/// X(x)⊥; `stable_dir` is the tangent strong stable direction E^s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingSample {
    pub status: SplittingStatus,
    pub e_dir: Option<Vector3<f64>>,
    pub f_dir: Option<Vector3<f64>>,
    pub stable_dir: Option<Vector3<f64>>,
    /// Angle between E and F.
    pub angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingEstimate {
    pub t: f64,
    /// Length of orbit used on each side, k_pow·T.
    pub window: f64,
    pub samples: Vec<SplittingSample>,
    /// Every non-excluded sample converged.
    pub converged: bool,
    /// Converged share of the non-excluded samples.
    pub converged_fraction: f64,
    pub angle_min: Option<f64>,
}

impl SplittingEstimate {
    pub fn not_converged(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.status == SplittingStatus::NotConverged)
            .count()
    }
}

// Fixed generic starting vectors for the power iteration.
const SEEDS: [[f64; 3]; 2] = [[0.5773, 0.6234, 0.5273], [-0.3511, 0.8117, 0.4665]];

fn line_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

fn project(v: &Vector3<f64>, field: &Vector3<f64>) -> Vector3<f64> {
    let u = field.normalize();
    v - u * u.dot(v)
}

/// Per-node result of one sweep: the first iterate and the angle between
/// the two iterates.
type Sweep = Vec<Option<(Vector3<f64>, f64)>>;

/// Pushes two vectors along the chain of segment maps. `step` maps a vector
/// across segment j (from node j to node j + 1 when forward, the reverse when
/// backward); `start` prepares a vector at a node. A failing `start` or
/// `step` restarts the iteration at the next node.
fn sweep(
    nodes: usize,
    forward: bool,
    start: impl Fn(usize, &Vector3<f64>) -> Option<Vector3<f64>>,
    step: impl Fn(usize, &Vector3<f64>) -> Option<Vector3<f64>>,
) -> Sweep {
    let mut out = vec![None; nodes];
    let order: Vec<usize> = if forward {
        (0..nodes).collect()
    } else {
        (0..nodes).rev().collect()
    };
    let mut pair: Option<[Vector3<f64>; 2]> = None;
    for (k, &node) in order.iter().enumerate() {
        pair = match pair {
            Some([a, b]) if k > 0 => {
                let seg = if forward { node - 1 } else { node };
                match (step(seg, &a), step(seg, &b)) {
                    (Some(a), Some(b)) if a.norm() > 0.0 && b.norm() > 0.0 => Some([a.normalize(), b.normalize()]),
                    _ => None,
                }
            }
            _ => None,
        };
        if pair.is_none() {
            let seeds = SEEDS.map(|s| start(node, &Vector3::from(s)));
            if let [Some(a), Some(b)] = seeds {
                pair = Some([a.normalize(), b.normalize()]);
            }
            continue;
        }
        if let Some([a, b]) = pair {
            out[node] = Some((a, line_angle(&a, &b)));
        }
    }
    out
}

/// Splitting E ⊕ F of the linear Poincaré cocycle at every sample, by power
/// iteration along the sampled orbit: F from forward pushes over the
/// preceding k_pow·T of orbit, E from backward pulls over the following
/// k_pow·T. The tangent strong stable direction comes from backward pulls
/// of the full tangent map.
pub fn estimate_splitting(
    f: &VectorFieldDef,
    set: &SampleSet,
    t: f64,
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<SplittingEstimate> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput("splitting time must be positive".into()));
    }
    let window = hcfg.k_pow as f64 * t;
    let blocks = (window / set.spacing).ceil() as usize;
    let lead = blocks.min(set.history.len());

    let mut nodes: Vec<Point> = set.history[set.history.len() - lead..].to_vec();
    nodes.extend(set.samples.iter().map(|s| s.x));
    let mut p = *nodes.last().expect("non-empty sample set");
    for _ in 0..blocks {
        // A tail that cannot be integrated only shortens the backward window.
        match flow(f, &p, set.spacing, cfg) {
            Ok(q) => {
                nodes.push(q);
                p = q;
            }
            Err(_) => break,
        }
    }

    let maps: Vec<Option<(Matrix3<f64>, Matrix3<f64>)>> = nodes[..nodes.len() - 1]
        .par_iter()
        .map(|x| {
            let (_, m) = tangent_flow(f, x, set.spacing, cfg).ok()?;
            let inv = m.try_inverse()?;
            Some((m, inv))
        })
        .collect();
    let fields: Vec<Option<Vector3<f64>>> = nodes
        .iter()
        .map(|x| {
            let v = f.eval(x);
            (v.norm() > hcfg.frame_eps).then_some(v)
        })
        .collect();
    let n = nodes.len();
    let normal_start = |node: usize, v: &Vector3<f64>| fields[node].map(|x| project(v, &x));

    let forward = sweep(n, true, normal_start, |j, v| {
        let (m, _) = maps[j].as_ref()?;
        Some(project(&(m * v), fields[j + 1].as_ref()?))
    });
    let backward = sweep(n, false, normal_start, |j, v| {
        let (_, inv) = maps[j].as_ref()?;
        Some(project(&(inv * v), fields[j].as_ref()?))
    });
    let tangent = sweep(
        n,
        false,
        |_, v| Some(*v),
        |j, v| maps[j].as_ref().map(|(_, inv)| inv * v),
    );

    let mut samples = Vec::with_capacity(set.len());
    let mut angle_min: Option<f64> = None;
    let (mut regular, mut good) = (0usize, 0usize);
    for i in 0..set.len() {
        let node = lead + i;
        if set.excluded[i] {
            samples.push(SplittingSample {
                status: SplittingStatus::Excluded,
                e_dir: None,
                f_dir: None,
                stable_dir: None,
                angle: None,
            });
            continue;
        }
        regular += 1;
        let pick = |s: &Sweep| {
            s[node]
                .filter(|(_, a)| *a < hcfg.dir_tol)
                .map(|(v, _)| sign_normalize(v))
        };
        let e = pick(&backward);
        let fd = pick(&forward);
        let stable = pick(&tangent);
        let angle = e.zip(fd).map(|(e, fd)| line_angle(&e, &fd));
        let ok = angle.is_some_and(|a| a > hcfg.angle_floor);
        if ok {
            good += 1;
            angle_min = Some(angle_min.map_or(angle.unwrap(), |m: f64| m.min(angle.unwrap())));
        }
        samples.push(SplittingSample {
            status: if ok {
                SplittingStatus::Converged
            } else {
                SplittingStatus::NotConverged
            },
            e_dir: e,
            f_dir: fd,
            stable_dir: stable,
            angle,
        });
    }
    Ok(SplittingEstimate {
        t,
        window,
        samples,
        converged: good == regular,
        converged_fraction: if regular == 0 {
            0.0
        } else {
            good as f64 / regular as f64
        },
        angle_min,
    })
}
