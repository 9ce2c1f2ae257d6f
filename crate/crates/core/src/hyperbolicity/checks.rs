use nalgebra::{Matrix3, Matrix3x2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    Criterion, GridRow, HyperbolicityConfig, HyperbolicityReport, SampleRow, SampleSet, SplittingEstimate,
    SplittingStatus,
};
use crate::error::{Error, Result};
use crate::field::{Point, VectorFieldDef};
use crate::flow::{tangent_flow, tangent_flow_at, IntegratorConfig};

/// Per-grid-time margins at one sample. A margin ≤ 1 satisfies the
/// inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// 2·‖ψ_T e‖/‖ψ_T f‖.
    pub domination: Vec<f64>,
    /// The same ratio computed from ψ*_T.
    pub domination_rescaled: Vec<f64>,
    /// max(‖ψ*e‖, ‖ψ*e‖²) / (½‖ψ*f‖).
    pub two_domination: Vec<f64>,
    /// 2·‖ψ_T e‖.
    pub e_contraction: Vec<f64>,
    /// 2·‖ψ*_T e‖.
    pub e_contraction_rescaled: Vec<f64>,
    /// 2·‖Dφ_T E^s‖, absent when E^s did not converge.
    pub tangent_contraction: Option<Vec<f64>>,
    /// 2·|Jac Dφ_{−T}| on E^cu at φ_T(x).
    pub sectional: Vec<f64>,
    /// 2·‖Dφ_T E^s‖ / m(Dφ_T|E^cu), with m the minimal expansion.
    pub mixed_tangent: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Excluded,
    NotConverged,
    Failed { error: String },
    Evaluated { margins: Margins },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub outcome: Outcome,
}

/// Margin of ‖e‖ ≤ ½‖f‖ for the images of unit vectors in E and F.
pub fn domination_margin(e_norm: f64, f_norm: f64) -> f64 {
    2.0 * e_norm / f_norm
}

/// Margin of max(‖e‖, ‖e‖²) ≤ ½‖f‖.
pub fn two_domination_margin(e_norm: f64, f_norm: f64) -> f64 {
    e_norm.max(e_norm * e_norm) / (0.5 * f_norm)
}

fn projected_norm(w: &Vector3<f64>, field: &Vector3<f64>) -> f64 {
    let u = field.normalize();
    (w - u * u.dot(w)).norm()
}

/// |Jac Dφ_{−T}| on the plane span(X(x), v) at φ_T(x), computed forward as
/// the reciprocal of the area growth of Dφ_T on that plane.
pub fn sectional_factor_forward(dphi: &Matrix3<f64>, field: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let (a, b) = plane_basis(field, v);
    1.0 / (dphi * a).cross(&(dphi * b)).norm()
}

/// |Jac Dφ_{−T}| on span(v1, v2) at `x`, by backward integration.
pub fn sectional_factor_backward(
    f: &VectorFieldDef,
    x: &Point,
    v1: &Vector3<f64>,
    v2: &Vector3<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let (a, b) = plane_basis(v1, v2);
    let (_, m) = tangent_flow(f, x, -t, cfg)?;
    Ok((m * a).cross(&(m * b)).norm())
}

fn plane_basis(v1: &Vector3<f64>, v2: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = v1.normalize();
    let b = (v2 - a * a.dot(v2)).normalize();
    (a, b)
}

fn margins_at(
    field: &Vector3<f64>,
    e: &Vector3<f64>,
    fd: &Vector3<f64>,
    stable: Option<&Vector3<f64>>,
    f: &VectorFieldDef,
    flows: &[(Point, Matrix3<f64>)],
) -> Margins {
    let speed = field.norm();
    let mut m = Margins {
        domination: Vec::with_capacity(flows.len()),
        domination_rescaled: Vec::with_capacity(flows.len()),
        two_domination: Vec::with_capacity(flows.len()),
        e_contraction: Vec::with_capacity(flows.len()),
        e_contraction_rescaled: Vec::with_capacity(flows.len()),
        tangent_contraction: stable.map(|_| Vec::with_capacity(flows.len())),
        sectional: Vec::with_capacity(flows.len()),
        mixed_tangent: stable.map(|_| Vec::with_capacity(flows.len())),
    };
    let (pa, pb) = plane_basis(field, fd);
    for (y, dphi) in flows {
        let fy = f.eval(y);
        let s = speed / fy.norm();
        let pe = projected_norm(&(dphi * e), &fy);
        let pf = projected_norm(&(dphi * fd), &fy);
        m.domination.push(domination_margin(pe, pf));
        m.domination_rescaled.push(domination_margin(s * pe, s * pf));
        let se = s * pe;
        m.two_domination.push(two_domination_margin(se, s * pf));
        m.e_contraction.push(2.0 * pe);
        m.e_contraction_rescaled.push(2.0 * se);
        let (da, db) = (dphi * pa, dphi * pb);
        m.sectional.push(2.0 / da.cross(&db).norm());
        if let Some(es) = stable {
            let grow = (dphi * es).norm();
            m.tangent_contraction.as_mut().unwrap().push(2.0 * grow);
            let sv = Matrix3x2::from_columns(&[da, db]).singular_values();
            let min_exp = sv.min();
            m.mixed_tangent.as_mut().unwrap().push(2.0 * grow / min_exp);
        }
    }
    m
}

/// Integrates the tangent flow once per non-excluded converged sample up to
/// the largest grid time and records every criterion's margins. Samples are
/// processed in parallel; the output is in sample order.
pub fn evaluate_samples(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<SampleEval>> {
    if splitting.samples.len() != set.len() {
        return Err(Error::InvalidInput("splitting does not match the sample set".into()));
    }
    if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must be positive and increasing".into()));
    }
    Ok((0..set.len())
        .into_par_iter()
        .map(|i| {
            let sp = &splitting.samples[i];
            let outcome = match (sp.status, sp.e_dir, sp.f_dir) {
                _ if set.excluded[i] => Outcome::Excluded,
                (SplittingStatus::Excluded, _, _) => Outcome::Excluded,
                (SplittingStatus::Converged, Some(e), Some(fd)) => {
                    let s = &set.samples[i];
                    match tangent_flow_at(f, &s.x, grid, cfg) {
                        Ok(flows) => Outcome::Evaluated {
                            margins: margins_at(&s.field, &e, &fd, sp.stable_dir.as_ref(), f, &flows),
                        },
                        Err(e) => Outcome::Failed { error: e.to_string() },
                    }
                }
                _ => Outcome::NotConverged,
            };
            SampleEval { index: i, outcome }
        })
        .collect())
}

/// Assembles a criterion report from sample margins selected by `pick`.
/// Samples for which `pick` yields nothing count as failures.
pub fn report_for(
    criterion: Criterion,
    rescaled: bool,
    evals: &[SampleEval],
    grid: &[f64],
    hcfg: &HyperbolicityConfig,
    pick: impl Fn(&Margins) -> Option<&Vec<f64>>,
) -> HyperbolicityReport {
    let mut excluded = 0;
    let mut not_converged = 0;
    let mut rows: Vec<(usize, &'static str, Option<&Vec<f64>>)> = Vec::new();
    for ev in evals {
        match &ev.outcome {
            Outcome::Excluded => excluded += 1,
            Outcome::NotConverged => {
                not_converged += 1;
                rows.push((ev.index, "not_converged", None));
            }
            Outcome::Failed { .. } => rows.push((ev.index, "failed", None)),
            Outcome::Evaluated { margins } => match pick(margins) {
                Some(v) => rows.push((ev.index, "evaluated", Some(v))),
                None => rows.push((ev.index, "missing_direction", None)),
            },
        }
    }
    let total = rows.len();
    let grid_rows: Vec<GridRow> = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let vals = rows.iter().filter_map(|r| r.2.map(|v| v[k]));
            let (mut pass, mut worst) = (0usize, None::<f64>);
            for v in vals {
                if v <= 1.0 {
                    pass += 1;
                }
                worst = Some(worst.map_or(v, |w| w.max(v)));
            }
            GridRow {
                t,
                pass_fraction: if total == 0 { 0.0 } else { pass as f64 / total as f64 },
                worst_margin: worst,
            }
        })
        .collect();
    let found = grid_rows
        .iter()
        .position(|r| total > 0 && r.pass_fraction >= hcfg.pass_fraction);
    let shown = found.or_else(|| {
        grid_rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.pass_fraction.total_cmp(&b.1.pass_fraction).then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
    });
    let details = hcfg.details.then(|| {
        rows.iter()
            .map(|r| SampleRow {
                index: r.0,
                status: r.1.to_string(),
                margin: shown.and_then(|k| r.2.map(|v| v[k])),
            })
            .collect()
    });
    HyperbolicityReport {
        criterion,
        rescaled,
        constant: found.map(|k| grid[k]),
        pass_fraction: shown.map_or(0.0, |k| grid_rows[k].pass_fraction),
        worst_margin: shown.and_then(|k| grid_rows[k].worst_margin),
        threshold: hcfg.pass_fraction,
        passed: found.is_some(),
        evaluated: total - not_converged,
        not_converged,
        excluded,
        grid: grid_rows,
        details,
    }
}

/// ‖ψ_T e‖ ≤ ½‖ψ_T f‖. The ratio is the same for ψ and ψ*; `rescaled`
/// selects which cocycle it is computed from.
pub fn check_domination(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    rescaled: bool,
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<HyperbolicityReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(report_for(Criterion::Domination, rescaled, &evals, grid, hcfg, |m| {
        Some(if rescaled {
            &m.domination_rescaled
        } else {
            &m.domination
        })
    }))
}

/// max(‖ψ*e‖, ‖ψ*e‖²) ≤ ½‖ψ*f‖.
pub fn check_2domination(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<HyperbolicityReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(report_for(Criterion::TwoDomination, true, &evals, grid, hcfg, |m| {
        Some(&m.two_domination)
    }))
}

/// ‖ψ_{t₀} e‖ ≤ ½, or ‖ψ*_{t₀} e‖ ≤ ½ when rescaled.
pub fn check_e_contraction(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    rescaled: bool,
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<HyperbolicityReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(report_for(Criterion::EContraction, rescaled, &evals, grid, hcfg, |m| {
        Some(if rescaled {
            &m.e_contraction_rescaled
        } else {
            &m.e_contraction
        })
    }))
}

/// ‖Dφ_T|E^s‖ ≤ ½ on the tangent strong stable direction.
pub fn check_tangent_contraction(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<HyperbolicityReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(report_for(
        Criterion::TangentContraction,
        false,
        &evals,
        grid,
        hcfg,
        |m| m.tangent_contraction.as_ref(),
    ))
}

/// |Jac Dφ_{−T}| ≤ ½ on the center-unstable plane span(X, f_dir). Each
/// sample x is used as the base of a forward step, so the inequality is
/// checked at the points φ_T(x).
pub fn check_sectional_expansion(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<HyperbolicityReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(report_for(
        Criterion::SectionalExpansion,
        false,
        &evals,
        grid,
        hcfg,
        |m| Some(&m.sectional),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub index: usize,
    /// Margin of the tangent criterion (I); absent if unavailable.
    pub tangent_margin: Option<f64>,
    /// Margin of the rescaled E-contraction (II).
    pub rescaled_margin: Option<f64>,
}

/// Compares (I) a tangent dominated splitting E^s ⊕ E^cu with X ⊂ E^cu and
/// (II) uniform contraction of E under ψ*, sample by sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedDominationReport {
    pub tangent_t: Option<f64>,
    pub rescaled_t: Option<f64>,
    /// Grid time at which the two are compared: the larger of the two
    /// passing times, or the largest grid time if either is missing.
    pub compare_t: f64,
    pub samples: usize,
    pub agreement_fraction: f64,
    pub disagreements: Vec<Disagreement>,
}

/// Builds the comparison from already evaluated samples.
pub fn mixed_domination_from(evals: &[SampleEval], grid: &[f64], hcfg: &HyperbolicityConfig) -> MixedDominationReport {
    let tangent = report_for(Criterion::Domination, false, evals, grid, hcfg, |m| {
        m.mixed_tangent.as_ref()
    });
    let rescaled = report_for(Criterion::EContraction, true, evals, grid, hcfg, |m| {
        Some(&m.e_contraction_rescaled)
    });
    let k = match (tangent.constant, rescaled.constant) {
        (Some(a), Some(b)) => {
            let t = a.max(b);
            grid.iter().position(|&g| g == t).expect("grid time")
        }
        _ => grid.len() - 1,
    };
    let mut disagreements = Vec::new();
    let mut samples = 0;
    for ev in evals {
        let (i_margin, ii_margin) = match &ev.outcome {
            Outcome::Excluded => continue,
            Outcome::Evaluated { margins } => (
                margins.mixed_tangent.as_ref().map(|v| v[k]),
                Some(margins.e_contraction_rescaled[k]),
            ),
            _ => (None, None),
        };
        samples += 1;
        let holds_i = i_margin.is_some_and(|m| m <= 1.0);
        let holds_ii = ii_margin.is_some_and(|m| m <= 1.0);
        if holds_i != holds_ii {
            disagreements.push(Disagreement {
                index: ev.index,
                tangent_margin: i_margin,
                rescaled_margin: ii_margin,
            });
        }
    }
    MixedDominationReport {
        tangent_t: tangent.constant,
        rescaled_t: rescaled.constant,
        compare_t: grid[k],
        samples,
        agreement_fraction: if samples == 0 {
            1.0
        } else {
            1.0 - disagreements.len() as f64 / samples as f64
        },
        disagreements,
    }
}

pub fn mixed_domination_equivalence(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    grid: &[f64],
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<MixedDominationReport> {
    let evals = evaluate_samples(f, set, splitting, grid, cfg)?;
    Ok(mixed_domination_from(&evals, grid, hcfg))
}
