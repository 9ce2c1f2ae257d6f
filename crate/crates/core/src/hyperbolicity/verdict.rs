use serde::{Deserialize, Serialize};

use super::checks::{evaluate_samples, mixed_domination_from, report_for, MixedDominationReport};
use super::{
    estimate_splitting, sample_attractor, strong_stable_separation, Criterion, HyperbolicityConfig,
    HyperbolicityReport, SamplingConfig, SeparationReport,
};
use crate::blowup::{blowup_coords, extended_unit_field, fiber_rescaled_linear_poincare, BlowupChart};
use crate::error::Result;
use crate::field::{classify_singularity, find_singularities, DomainBox, Point, SingularityInfo, VectorFieldDef};
use crate::flow::IntegratorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Samples that fall inside a blowup chart, compared with the fiber limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberCrossCheck {
    pub samples: usize,
    pub t: f64,
    /// Largest distance between X(x)/|X(x)| and the extended unit field.
    pub max_unit_field_defect: f64,
    /// Share of fiber directions u whose fiber cocycle over `t` contracts
    /// some normal direction by ½ (a necessary condition for E-contraction
    /// on the fiber).
    pub contracting_fraction: f64,
}

/// One pass of the pipeline, for X or for −X.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub reversed: bool,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    pub samples: usize,
    pub near_singular: usize,
    pub excluded: usize,
    pub not_converged_fraction: f64,
    pub common_t: Option<f64>,
    pub domination: Option<HyperbolicityReport>,
    pub e_contraction: Option<HyperbolicityReport>,
    pub tangent_contraction: Option<HyperbolicityReport>,
    pub sectional_expansion: Option<HyperbolicityReport>,
    pub mixed_domination: Option<MixedDominationReport>,
    pub separation: Vec<SeparationReport>,
    pub fiber_cross_check: Option<FiberCrossCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub criterion: Criterion,
    pub verdict: Verdict,
    /// Common grid time at which every criterion passes.
    pub t: Option<f64>,
    /// Whether the passing field is −X.
    pub reversed: Option<bool>,
    /// Smallest of the criterion pass fractions at `t`.
    pub pass_fraction: Option<f64>,
    pub singularities: Vec<SingularityInfo>,
    pub skipped_seeds: usize,
    pub reasons: Vec<String>,
    pub attempts: Vec<Attempt>,
    pub note: String,
}

const NOTE: &str = "Criteria are measured on a finite sampled orbit at grid times; a pass \
is evidence for the sampled set, not a certificate for the limit set.";

fn empty_attempt(reversed: bool, verdict: Verdict, reason: String) -> Attempt {
    Attempt {
        reversed,
        verdict,
        reasons: vec![reason],
        samples: 0,
        near_singular: 0,
        excluded: 0,
        not_converged_fraction: 0.0,
        common_t: None,
        domination: None,
        e_contraction: None,
        tangent_contraction: None,
        sectional_expansion: None,
        mixed_domination: None,
        separation: Vec::new(),
        fiber_cross_check: None,
    }
}

fn attempt(
    g: &VectorFieldDef,
    reversed: bool,
    sings: &[SingularityInfo],
    sampling: &SamplingConfig,
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<Attempt> {
    let seed = Point::from(sampling.seed);
    let mut set = match sample_attractor(
        g,
        &seed,
        sampling.transient,
        sampling.n,
        sampling.spacing,
        cfg,
        hcfg.frame_eps,
    ) {
        Ok(s) => s,
        Err(e) => return Ok(empty_attempt(reversed, Verdict::Fail, format!("sampling failed: {e}"))),
    };
    let eps = hcfg.chart_radius(g);
    let centers: Vec<Point> = sings.iter().map(|s| s.location).collect();
    set.exclude_near(&centers, eps);

    let mut reasons = Vec::new();
    let regular = set.len() - set.excluded_count();
    let mut out = empty_attempt(reversed, Verdict::Fail, String::new());
    out.reasons.clear();
    out.samples = set.len();
    out.near_singular = set.near_singular_count();
    out.excluded = set.excluded_count();
    if regular == 0 {
        out.reasons
            .push("no regular samples outside the singular charts".into());
        return Ok(out);
    }

    let splitting = estimate_splitting(g, &set, hcfg.splitting_t, hcfg, cfg)?;
    let nc = splitting.not_converged() as f64 / regular as f64;
    out.not_converged_fraction = nc;

    let grid = &hcfg.t_grid;
    let evals = evaluate_samples(g, &set, &splitting, grid, cfg)?;
    let dom = report_for(Criterion::Domination, false, &evals, grid, hcfg, |m| {
        Some(&m.domination)
    });
    let ec = report_for(Criterion::EContraction, true, &evals, grid, hcfg, |m| {
        Some(&m.e_contraction_rescaled)
    });
    let tc = report_for(Criterion::TangentContraction, false, &evals, grid, hcfg, |m| {
        m.tangent_contraction.as_ref()
    });
    let sec = report_for(Criterion::SectionalExpansion, false, &evals, grid, hcfg, |m| {
        Some(&m.sectional)
    });
    let parts = [&dom, &ec, &tc, &sec];
    let common = (0..grid.len()).find(|&k| parts.iter().all(|r| r.grid[k].pass_fraction >= hcfg.pass_fraction));
    out.common_t = common.map(|k| grid[k]);
    for r in parts {
        if !r.passed {
            reasons.push(format!("{:?} fails on the whole grid", r.criterion));
        }
    }
    if common.is_none() && parts.iter().all(|r| r.passed) {
        reasons.push("criteria pass at different grid times but never together".into());
    }
    out.mixed_domination = Some(mixed_domination_from(&evals, grid, hcfg));

    // Strong stable separation at every singularity that is Lorenz-like for g.
    let points = set.points();
    let length = hcfg.wss_length.unwrap_or(eps);
    let exclusion = hcfg.separation_exclusion.unwrap_or(0.25 * eps);
    let mut in_chart = Vec::new();
    for s in sings {
        let info = classify_singularity(g, &s.location, hcfg.singularity_tol)?;
        if !info.flags.lorenz_like_forward {
            continue;
        }
        let sep = strong_stable_separation(g, &info, &points, length, exclusion, hcfg.sep_threshold, cfg)?;
        if !sep.passed {
            reasons.push(format!(
                "samples approach the strong stable manifold of {:?} (distance {:?})",
                s.location.as_slice(),
                sep.min_distance
            ));
        }
        out.separation.push(sep);
        if let Ok(chart) = BlowupChart::new(g.clone(), info, eps) {
            in_chart.push(chart);
        }
    }
    out.fiber_cross_check = fiber_cross_check(&in_chart, &points, out.common_t.unwrap_or(grid[0]));

    out.verdict = if nc > hcfg.max_not_converged {
        reasons.push(format!("{:.1}% of samples did not converge", 100.0 * nc));
        Verdict::Inconclusive
    } else if reasons.is_empty() && common.is_some() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    out.reasons = reasons;
    out.domination = Some(dom);
    out.e_contraction = Some(ec);
    out.tangent_contraction = Some(tc);
    out.sectional_expansion = Some(sec);
    Ok(out)
}

fn fiber_cross_check(charts: &[BlowupChart], points: &[Point], t: f64) -> Option<FiberCrossCheck> {
    let mut n = 0usize;
    let mut defect: f64 = 0.0;
    let mut contracting = 0usize;
    for chart in charts {
        for x in points {
            let Ok((s, u)) = blowup_coords(chart, x) else { continue };
            let Ok(ext) = extended_unit_field(chart, s, &u) else {
                continue;
            };
            let v = chart.field.eval(x);
            if !(v.norm() > 0.0) {
                continue;
            }
            n += 1;
            defect = defect.max((v.normalize() * s.signum() - ext).norm());
            if let Ok(fc) = fiber_rescaled_linear_poincare(chart, &u, t) {
                if fc.mat.singular_values().min() <= 0.5 {
                    contracting += 1;
                }
            }
        }
    }
    (n > 0).then(|| FiberCrossCheck {
        samples: n,
        t,
        max_unit_field_defect: defect,
        contracting_fraction: contracting as f64 / n as f64,
    })
}

/// Full pipeline: singularities in `domain`, then the sampled checks for X
/// and, if X fails, for −X.
pub fn singular_hyperbolicity_report(
    f: &VectorFieldDef,
    domain: &DomainBox,
    sampling: &SamplingConfig,
    hcfg: &HyperbolicityConfig,
    cfg: &IntegratorConfig,
) -> Result<VerdictReport> {
    hcfg.validate()?;
    cfg.validate()?;
    let search = find_singularities(f, domain, hcfg.singularity_tol, &hcfg.newton)?;
    let mut sings = Vec::with_capacity(search.roots.len());
    for r in &search.roots {
        sings.push(classify_singularity(f, r, hcfg.singularity_tol)?);
    }
    let mut report = VerdictReport {
        criterion: Criterion::SingularHyperbolic,
        verdict: Verdict::Fail,
        t: None,
        reversed: None,
        pass_fraction: None,
        skipped_seeds: search.skipped_seeds,
        singularities: sings.clone(),
        reasons: Vec::new(),
        attempts: Vec::new(),
        note: NOTE.into(),
    };
    if let Some(bad) = sings.iter().find(|s| !s.flags.hyperbolic) {
        report
            .reasons
            .push(format!("non-hyperbolic singularity at {:?}", bad.location.as_slice()));
        return Ok(report);
    }
    for reversed in [false, true] {
        let g = if reversed { f.reversed() } else { f.clone() };
        let a = attempt(&g, reversed, &sings, sampling, hcfg, cfg)?;
        let done = a.verdict == Verdict::Pass;
        report.attempts.push(a);
        if done {
            break;
        }
    }
    if let Some(a) = report.attempts.iter().find(|a| a.verdict == Verdict::Pass) {
        report.verdict = Verdict::Pass;
        report.t = a.common_t;
        report.reversed = Some(a.reversed);
        let k = hcfg
            .t_grid
            .iter()
            .position(|&t| Some(t) == a.common_t)
            .expect("common time on grid");
        report.pass_fraction = [
            &a.domination,
            &a.e_contraction,
            &a.tangent_contraction,
            &a.sectional_expansion,
        ]
        .iter()
        .filter_map(|r| r.as_ref().map(|r| r.grid[k].pass_fraction))
        .reduce(f64::min);
    } else {
        report.verdict = if report.attempts.iter().any(|a| a.verdict == Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        for a in &report.attempts {
            let side = if a.reversed { "-X" } else { "X" };
            report.reasons.extend(a.reasons.iter().map(|r| format!("{side}: {r}")));
        }
    }
    Ok(report)
}
