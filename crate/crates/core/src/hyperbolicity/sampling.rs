use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, VectorFieldDef};
use crate::flow::{flow, IntegratorConfig, OrbitSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub seed: [f64; 3],
    pub transient: f64,
    pub n: usize,
    pub spacing: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: [1.0, 1.0, 1.0],
            transient: 50.0,
            n: 1000,
            spacing: 0.05,
        }
    }
}

/// Consecutive samples of one orbit, spaced by `spacing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<OrbitSample>,
    /// Orbit points preceding `samples[0]`, oldest first, also spaced by
    /// `spacing`; the last one is one spacing before the first sample.
    pub history: Vec<Point>,
    pub spacing: f64,
    /// |X| ≤ frame_eps.
    pub near_singular: Vec<bool>,
    /// Left out of frame-based checks (near-singular or inside a chart).
    pub excluded: Vec<bool>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.x).collect()
    }

    /// Marks every sample within `radius` of one of `centers` as excluded.
    pub fn exclude_near(&mut self, centers: &[Point], radius: f64) {
        for (s, ex) in self.samples.iter().zip(self.excluded.iter_mut()) {
            if centers.iter().any(|c| (s.x - c).norm() < radius) {
                *ex = true;
            }
        }
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    pub fn near_singular_count(&self) -> usize {
        self.near_singular.iter().filter(|&&e| e).count()
    }
}

/// Integrates past `transient` and records `n` samples spaced by `spacing`,
/// keeping the transient orbit as history checkpoints.
pub fn sample_attractor(
    f: &VectorFieldDef,
    seed: &Point,
    transient: f64,
    n: usize,
    spacing: f64,
    cfg: &IntegratorConfig,
    frame_eps: f64,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) || !(transient >= 0.0 && transient.is_finite()) {
        return Err(Error::InvalidInput(
            "spacing must be positive and transient non-negative".into(),
        ));
    }
    let checkpoints = (transient / spacing + 1e-9).floor() as usize;
    let lead = (transient - checkpoints as f64 * spacing).max(0.0);
    let mut x = if lead > 0.0 { flow(f, seed, lead, cfg)? } else { *seed };
    let mut history = Vec::with_capacity(checkpoints);
    for _ in 0..checkpoints {
        history.push(x);
        x = flow(f, &x, spacing, cfg)?;
    }
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            x = flow(f, &x, spacing, cfg)?;
        }
        samples.push(OrbitSample::new(f, transient + k as f64 * spacing, x));
    }
    let near_singular: Vec<bool> = samples.iter().map(|s| !(s.speed() > frame_eps)).collect();
    Ok(SampleSet {
        excluded: near_singular.clone(),
        samples,
        history,
        spacing,
        near_singular,
    })
}
