//! Run configuration, read from a sectioned TOML file. Every section is
//! optional except `[field]`; missing keys take their defaults.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use shflow_core::field::{DomainBox, Monomial, PolynomialField, VectorFieldDef};
use shflow_core::flow::IntegratorConfig;
use shflow_core::hyperbolicity::{HyperbolicityConfig, SamplingConfig};
use shflow_core::poincare::PoincareConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Lorenz {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    /// Rows of the matrix.
    Linear { matrix: [[f64; 3]; 3] },
    Polynomial {
        #[serde(default)]
        x: Vec<Monomial>,
        #[serde(default)]
        y: Vec<Monomial>,
        #[serde(default)]
        z: Vec<Monomial>,
    },
}

fn default_sigma() -> f64 {
    10.0
}
fn default_rho() -> f64 {
    28.0
}
fn default_beta() -> f64 {
    8.0 / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// `orbit`: CSV trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSection {
    /// Defaults to the sampling seed.
    pub start: Option<[f64; 3]>,
    pub duration: f64,
    pub spacing: f64,
    /// Append Dφ_t(start) to every row.
    pub tangent: bool,
}

impl Default for OrbitSection {
    fn default() -> Self {
        OrbitSection {
            start: None,
            duration: 50.0,
            spacing: 0.01,
            tangent: false,
        }
    }
}

/// `poincare`: ψ and ψ* over consecutive blocks of an orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CocycleSection {
    /// Defaults to the sampling seed flowed past the transient.
    pub start: Option<[f64; 3]>,
    pub t: f64,
    pub steps: usize,
}

impl Default for CocycleSection {
    fn default() -> Self {
        CocycleSection {
            start: None,
            t: 1.0,
            steps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionSpec {
    /// `unstable`, `strong_stable` or `weak_stable`.
    Named(String),
    Vector([f64; 3]),
}

/// `blowup-verify`: extension limit at a singularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupSection {
    /// Defaults to the first Lorenz-like singularity found in the domain.
    pub singularity: Option<[f64; 3]>,
    pub direction: DirectionSpec,
    pub times: Vec<f64>,
    /// Strictly decreasing.
    pub radii: Vec<f64>,
    /// Chart radius; `analysis.chart_eps` or its default when absent.
    pub eps: Option<f64>,
    /// Largest accepted error of the extrapolated limit.
    pub limit_tol: f64,
    /// Smallest accepted convergence slope of the speed ratio.
    pub min_slope: f64,
}

impl Default for BlowupSection {
    fn default() -> Self {
        BlowupSection {
            singularity: None,
            direction: DirectionSpec::Named("unstable".into()),
            times: vec![0.25, 0.5],
            radii: vec![1e-2, 1e-3, 1e-4, 1e-5],
            eps: None,
            limit_tol: 1e-6,
            min_slope: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlissSection {
    pub tau0: f64,
    pub gamma: f64,
}

impl Default for PlissSection {
    fn default() -> Self {
        PlissSection { tau0: 1.0, gamma: 1.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    /// Defaults to the sampling seed flowed past the transient.
    pub start: Option<[f64; 3]>,
    pub t_total: f64,
    pub renorm_dt: f64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        LyapunovSection {
            start: None,
            t_total: 1000.0,
            renorm_dt: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSpec,
    /// Analysis box; the field's default box when absent.
    #[serde(default)]
    pub domain: Option<BoxSpec>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub poincare: PoincareConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub analysis: HyperbolicityConfig,
    #[serde(default)]
    pub orbit: OrbitSection,
    #[serde(default)]
    pub cocycle: CocycleSection,
    #[serde(default)]
    pub blowup: BlowupSection,
    #[serde(default)]
    pub pliss: PlissSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Seed for randomized inputs; analyses themselves are deterministic.
    #[serde(default)]
    pub random_seed: u64,
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: shflow_core::Error| CliError::Config(e.to_string());
        self.integrator.validate().map_err(bad)?;
        self.analysis.validate().map_err(bad)?;
        self.field_def()?;
        let p = &self.poincare;
        for (name, v) in [
            ("poincare.frame_eps", p.frame_eps),
            ("poincare.beta_sec", p.beta_sec),
            ("poincare.tau_max", p.tau_max),
            ("poincare.s_max", p.s_max),
            ("poincare.beta0", p.beta0),
            ("poincare.r0_factor", p.r0_factor),
            ("poincare.tube_factor", p.tube_factor),
            ("sampling.spacing", self.sampling.spacing),
            ("orbit.spacing", self.orbit.spacing),
            ("cocycle.t", self.cocycle.t),
            ("pliss.tau0", self.pliss.tau0),
            ("lyapunov.t_total", self.lyapunov.t_total),
            ("lyapunov.renorm_dt", self.lyapunov.renorm_dt),
        ] {
            positive(name, v)?;
        }
        if !(self.sampling.transient >= 0.0) || self.sampling.n == 0 {
            return Err(CliError::Config("sampling needs transient ≥ 0 and n ≥ 1".into()));
        }
        if !(self.orbit.duration >= 0.0) {
            return Err(CliError::Config("orbit.duration must be non-negative".into()));
        }
        if !(self.pliss.gamma > 1.0) {
            return Err(CliError::Config("pliss.gamma must exceed 1".into()));
        }
        let b = &self.blowup;
        if b.radii.is_empty() || b.radii.iter().any(|r| !(*r > 0.0)) || b.radii.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CliError::Config(
                "blowup.radii must be positive and strictly decreasing".into(),
            ));
        }
        if b.times.is_empty() || b.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("blowup.times must be positive".into()));
        }
        positive("blowup.limit_tol", b.limit_tol)?;
        if let Some(e) = b.eps {
            positive("blowup.eps", e)?;
        }
        if let DirectionSpec::Named(n) = &self.blowup.direction {
            if !["unstable", "strong_stable", "weak_stable"].contains(&n.as_str()) {
                return Err(CliError::Config(format!("unknown blowup.direction {n:?}")));
            }
        }
        if self.output.dir.is_empty() {
            return Err(CliError::Config("output.dir is empty".into()));
        }
        Ok(())
    }

    pub fn field_def(&self) -> Result<VectorFieldDef, CliError> {
        let f = match &self.field {
            FieldSpec::Lorenz { sigma, rho, beta } => VectorFieldDef::lorenz(*sigma, *rho, *beta),
            FieldSpec::Linear { matrix } => VectorFieldDef::linear(Matrix3::from_fn(|i, j| matrix[i][j])),
            FieldSpec::Polynomial { x, y, z } => VectorFieldDef::polynomial(
                PolynomialField::new([x.clone(), y.clone(), z.clone()]).map_err(|e| CliError::Config(e.to_string()))?,
            ),
        };
        match &self.domain {
            Some(b) => {
                let d = DomainBox::new(Vector3::from(b.lo), Vector3::from(b.hi))
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(f.with_domain(d))
            }
            None => Ok(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = RunConfig::from_toml("[field]\nkind = \"lorenz\"\n").unwrap();
        assert_eq!(c.sampling.n, 1000);
        let f = c.field_def().unwrap();
        assert_eq!(f, VectorFieldDef::lorenz_classic());
    }

    #[test]
    fn linear_rows() {
        let c = RunConfig::from_toml(
            "[field]\nkind = \"linear\"\nmatrix = [[1.0, 2.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -3.0]]\n",
        )
        .unwrap();
        let f = c.field_def().unwrap();
        assert_eq!(f.eval(&Vector3::new(0.0, 1.0, 0.0)), Vector3::new(2.0, -1.0, 0.0));
    }

    #[test]
    fn polynomial_terms() {
        let text = r#"
[field]
kind = "polynomial"
x = [{ coeff = 1.0, powers = [2, 0, 0] }, { coeff = -1.0, powers = [0, 0, 0] }]
y = [{ coeff = 1.0, powers = [0, 1, 0] }]
"#;
        let f = RunConfig::from_toml(text).unwrap().field_def().unwrap();
        assert_eq!(f.eval(&Vector3::new(2.0, 3.0, 4.0)), Vector3::new(3.0, 3.0, 0.0));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml("[field]\nkind = \"lorenz\"\nsigmaa = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[field]\nkind = \"lorenz\"\n[integrator]\nrel_tol = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[field]\nkind = \"lorenz\"\n[bogus]\n").is_err());
        assert!(
            RunConfig::from_toml("[field]\nkind = \"polynomial\"\nx = [{ coeff = 1.0, powers = [5, 0, 0] }]\n")
                .is_err()
        );
    }
}
