//! Numerical checks of dominated splittings and singular hyperbolicity over
//! sampled orbits.
//!
//! Everything is driven by a [`SampleSet`]: consecutive samples of one orbit
//! together with the stretch of orbit preceding them. Splittings of the
//! normal bundle are found by power iteration along that orbit, then each
//! criterion is evaluated on a grid of times and the smallest passing grid
//! time is reported.

mod checks;
mod lyapunov;
mod pliss;
mod sampling;
mod separation;
mod splitting;
mod verdict;

use serde::{Deserialize, Serialize};

use crate::field::NewtonConfig;

pub use checks::{
    check_2domination, check_domination, check_e_contraction, check_sectional_expansion, check_tangent_contraction,
    domination_margin, evaluate_samples, mixed_domination_equivalence, mixed_domination_from, report_for,
    sectional_factor_backward, sectional_factor_forward, two_domination_margin, Disagreement, Margins,
    MixedDominationReport, Outcome, SampleEval,
};
pub use lyapunov::{lyapunov_exponents, LyapunovReport};
pub use pliss::{pliss_report, pliss_strings, PlissReport};
pub use sampling::{sample_attractor, SampleSet, SamplingConfig};
pub use separation::{strong_stable_separation, SeparationReport};
pub use splitting::{estimate_splitting, SplittingEstimate, SplittingSample, SplittingStatus};
pub use verdict::{singular_hyperbolicity_report, Attempt, FiberCrossCheck, Verdict, VerdictReport};

/// Grid 0.25, 0.5, …, 10.
pub fn default_t_grid() -> Vec<f64> {
    (1..=40).map(|k| 0.25 * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperbolicityConfig {
    pub frame_eps: f64,
    /// Block time T of the power iteration.
    pub splitting_t: f64,
    /// Number of blocks; the iteration window is k_pow·T in each direction.
    pub k_pow: usize,
    /// Two iterates closer than this angle (radians) count as converged.
    pub dir_tol: f64,
    /// Minimum angle between E and F.
    pub angle_floor: f64,
    pub t_grid: Vec<f64>,
    /// Fraction of samples that must satisfy a criterion at a grid time.
    pub pass_fraction: f64,
    /// The verdict is inconclusive above this fraction of unconverged samples.
    pub max_not_converged: f64,
    /// Blowup chart radius; samples this close to a singularity are left to
    /// the fiber cross-check. Defaults to 5% of the domain diagonal.
    pub chart_eps: Option<f64>,
    /// Length of the local strong stable curve. Defaults to `chart_eps`.
    pub wss_length: Option<f64>,
    /// Samples this close to σ are ignored by the separation check.
    /// Defaults to a quarter of `chart_eps`.
    pub separation_exclusion: Option<f64>,
    pub sep_threshold: f64,
    /// Residual tolerance for singularities.
    pub singularity_tol: f64,
    pub newton: NewtonConfig,
    /// Keep per-sample rows in reports.
    pub details: bool,
}

impl Default for HyperbolicityConfig {
    fn default() -> Self {
        HyperbolicityConfig {
            frame_eps: 1e-10,
            splitting_t: 1.0,
            k_pow: 20,
            dir_tol: 1e-8,
            angle_floor: 1e-3,
            t_grid: default_t_grid(),
            pass_fraction: 0.99,
            max_not_converged: 0.10,
            chart_eps: None,
            wss_length: None,
            separation_exclusion: None,
            sep_threshold: 0.1,
            singularity_tol: 1e-9,
            newton: NewtonConfig::default(),
            details: false,
        }
    }
}

impl HyperbolicityConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::InvalidInput;
        let positive = [
            ("frame_eps", self.frame_eps),
            ("splitting_t", self.splitting_t),
            ("dir_tol", self.dir_tol),
            ("angle_floor", self.angle_floor),
            ("sep_threshold", self.sep_threshold),
            ("singularity_tol", self.singularity_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("chart_eps", self.chart_eps),
            ("wss_length", self.wss_length),
            ("separation_exclusion", self.separation_exclusion),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(InvalidInput(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.k_pow == 0 {
            return Err(InvalidInput("k_pow must be at least 1".into()));
        }
        if !(self.pass_fraction > 0.0 && self.pass_fraction <= 1.0) {
            return Err(InvalidInput("pass_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.max_not_converged) {
            return Err(InvalidInput("max_not_converged must lie in [0, 1]".into()));
        }
        if self.t_grid.is_empty()
            || self.t_grid[0] <= 0.0
            || self.t_grid.windows(2).any(|w| !(w[1] > w[0]))
            || self.t_grid.iter().any(|t| !t.is_finite())
        {
            return Err(InvalidInput("t_grid must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    pub fn chart_radius(&self, f: &crate::field::VectorFieldDef) -> f64 {
        self.chart_eps
            .unwrap_or_else(|| crate::blowup::BlowupChart::default_eps(f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Domination,
    TwoDomination,
    EContraction,
    TangentContraction,
    SectionalExpansion,
    Pliss,
    SingularHyperbolic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub t: f64,
    pub pass_fraction: f64,
    /// Largest margin among evaluated samples; a margin ≤ 1 passes.
    pub worst_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub index: usize,
    pub status: String,
    pub margin: Option<f64>,
}

/// Outcome of one criterion over a sample set and a time grid.
///
/// Margins are the left side of the inequality divided by its bound, so a
/// sample passes at a time when its margin is at most 1. Unconverged
/// samples count as failures; excluded samples are left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub criterion: Criterion,
    pub rescaled: bool,
    /// Smallest grid time whose pass fraction reaches `threshold`
    /// (T, t₀ or τ₀ depending on the criterion).
    pub constant: Option<f64>,
    /// Pass fraction at `constant`, or the best over the grid when nothing
    /// passes.
    pub pass_fraction: f64,
    pub worst_margin: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
    pub evaluated: usize,
    pub not_converged: usize,
    pub excluded: usize,
    pub grid: Vec<GridRow>,
    pub details: Option<Vec<SampleRow>>,
}
