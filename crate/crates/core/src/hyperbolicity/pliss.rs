use serde::{Deserialize, Serialize};

use super::{SampleSet, SplittingEstimate};
use crate::error::{Error, Result};
use crate::field::VectorFieldDef;
use crate::flow::{tangent_flow, IntegratorConfig};

/// Indices i such that Σ_{j=i}^{i+m−1} a_j ≤ −m·τ₀·ln γ for every m ≥ 1 with
/// i + m ≤ n.
///
/// One backward scan: with b_j = a_j + τ₀ ln γ, the largest partial sum
/// starting at i is M(i) = b_i + max(0, M(i+1)), and i qualifies iff
/// M(i) ≤ 0.
pub fn pliss_strings(log_norms: &[f64], tau0: f64, gamma: f64) -> Result<Vec<usize>> {
    if !(gamma > 1.0 && gamma.is_finite()) || !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(Error::InvalidInput("need γ > 1 and τ₀ > 0".into()));
    }
    if log_norms.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("log norms must be finite".into()));
    }
    let shift = tau0 * gamma.ln();
    let mut out = Vec::new();
    let mut tail_max = f64::NEG_INFINITY;
    for i in (0..log_norms.len()).rev() {
        let m = log_norms[i] + shift + tail_max.max(0.0);
        if m <= 0.0 {
            out.push(i);
        }
        tail_max = m;
    }
    out.reverse();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlissReport {
    pub tau0: f64,
    pub gamma: f64,
    /// Samples per block.
    pub block_steps: usize,
    /// a_j = ln ‖ψ*_{−τ₀}|F‖ at the j-th block point counted backward from
    /// the last sample.
    pub log_norms: Vec<f64>,
    pub indices: Vec<usize>,
    pub fraction: f64,
}

/// Pliss indices of the backward rescaled cocycle on F along the sampled
/// orbit, in blocks of τ₀ (rounded to whole sample spacings).
pub fn pliss_report(
    f: &VectorFieldDef,
    set: &SampleSet,
    splitting: &SplittingEstimate,
    tau0: f64,
    gamma: f64,
    cfg: &IntegratorConfig,
) -> Result<PlissReport> {
    let k = (tau0 / set.spacing).round() as usize;
    if k == 0 {
        return Err(Error::InvalidInput("τ₀ is shorter than the sample spacing".into()));
    }
    let block = k as f64 * set.spacing;
    let mut log_norms = Vec::new();
    let mut at = set.len() - 1;
    // ‖ψ*_{−τ₀}|F(p)‖ = 1/‖ψ*_{τ₀}|F(φ_{−τ₀} p)‖; the sequence stops at the
    // first block start without a converged F.
    while at >= k {
        let from = at - k;
        let Some(fd) = splitting.samples[from].f_dir.filter(|_| !set.excluded[from]) else {
            break;
        };
        let s = &set.samples[from];
        let (y, m) = tangent_flow(f, &s.x, block, cfg)?;
        let fy = f.eval(&y);
        let u = fy.normalize();
        let w = m * fd;
        let forward = (w - u * u.dot(&w)).norm() * s.speed() / fy.norm();
        log_norms.push(-forward.ln());
        at = from;
    }
    let indices = pliss_strings(&log_norms, block, gamma)?;
    Ok(PlissReport {
        tau0: block,
        gamma,
        block_steps: k,
        fraction: if log_norms.is_empty() {
            0.0
        } else {
            indices.len() as f64 / log_norms.len() as f64
        },
        log_norms,
        indices,
    })
}
