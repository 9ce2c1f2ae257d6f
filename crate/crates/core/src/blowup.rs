//! Blowup of a hyperbolic singularity σ.
//!
//! Points near σ are written x = σ + s·u with u a unit vector. The field
//! X̄(s, u) = ∫₀¹ DX(σ + r·s·u) dr · u equals X(x)/s off the fiber s = 0 and
//! DX(σ)u on it, so its direction X̂₁ extends the unit field continuously
//! across σ. On the fiber the rescaled flows have closed forms in terms of
//! e^{tA}, A = DX(σ).

use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sign_normalize, Point, SingularityInfo, VectorFieldDef};
use crate::flow::{flow, tangent_flow, IntegratorConfig};
use crate::poincare::{normal_frame, NormalFrame, PoincareConfig};

/// Gauss–Legendre nodes and weights on [0, 1].
fn gauss_legendre_16() -> &'static [(f64, f64); 16] {
    static RULE: OnceLock<[(f64, f64); 16]> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 16;
        let mut rule = [(0.0, 0.0); N];
        for (i, slot) in rule.iter_mut().enumerate() {
            // Newton from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=N {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            *slot = (0.5 * (1.0 + x), 0.5 * w);
        }
        rule
    })
}

/// e^{M} for a general 3×3 matrix (Padé scaling and squaring).
pub fn expm(m: &Matrix3<f64>) -> Matrix3<f64> {
    m.exp()
}

/// Diagonalization A = V diag(λ) V⁻¹ for the simple real case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EigenSplit {
    v: Matrix3<f64>,
    v_inv: Matrix3<f64>,
    lambda: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupChart {
    pub field: VectorFieldDef,
    pub sigma: SingularityInfo,
    pub eps: f64,
    eigen: Option<EigenSplit>,
}

impl BlowupChart {
    /// Chart of radius `eps` around a hyperbolic singularity with invertible
    /// Jacobian.
    pub fn new(field: VectorFieldDef, sigma: SingularityInfo, eps: f64) -> Result<Self> {
        if !sigma.flags.hyperbolic {
            return Err(Error::InvalidInput("singularity is not hyperbolic".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("chart radius must be positive, got {eps}")));
        }
        let a = sigma.jacobian;
        if a.determinant().abs() <= 1e-13 * a.norm().powi(3) {
            return Err(Error::SingularJacobian);
        }
        let eigen = if sigma.flags.simple_real {
            let cols: Option<Vec<Vector3<f64>>> = sigma.eigenvectors.iter().copied().collect();
            cols.and_then(|cols| {
                let v = Matrix3::from_columns(&cols);
                v.try_inverse().map(|v_inv| EigenSplit {
                    v,
                    v_inv,
                    lambda: Vector3::from_iterator(sigma.eigenvalues.iter().map(|e| e.re)),
                })
            })
        } else {
            None
        };
        Ok(BlowupChart {
            field,
            sigma,
            eps,
            eigen,
        })
    }

    /// Default chart radius: 5% of the domain diagonal.
    pub fn default_eps(f: &VectorFieldDef) -> f64 {
        0.05 * f.domain.diagonal()
    }

    pub fn center(&self) -> Point {
        self.sigma.location
    }

    /// A = DX(σ).
    pub fn a(&self) -> &Matrix3<f64> {
        &self.sigma.jacobian
    }

    /// Dφ_t(σ) = e^{tA}: eigen-decomposition in the simple real case,
    /// scaling and squaring otherwise.
    pub fn exp_at(&self, t: f64) -> Matrix3<f64> {
        match &self.eigen {
            Some(e) => e.v * Matrix3::from_diagonal(&e.lambda.map(|l| (l * t).exp())) * e.v_inv,
            None => expm(&(self.a() * t)),
        }
    }
}

/// x ↦ (s, u) with x = σ + s·u, u sign-normalized (so s may be negative).
pub fn blowup_coords(chart: &BlowupChart, x: &Point) -> Result<(f64, Vector3<f64>)> {
    let d = x - chart.center();
    let r = d.norm();
    if !(r > 0.0 && r < chart.eps) {
        return Err(Error::OutOfChart);
    }
    let u = d / r;
    let n = sign_normalize(u);
    Ok(if n == u { (r, u) } else { (-r, n) })
}

pub fn from_blowup(chart: &BlowupChart, s: f64, u: &Vector3<f64>) -> Result<Point> {
    if !(s.abs() < chart.eps) {
        return Err(Error::OutOfChart);
    }
    Ok(chart.center() + u * s)
}

/// X̄(s, u) by 16-point Gauss–Legendre quadrature.
pub fn extended_field(chart: &BlowupChart, s: f64, u: &Vector3<f64>) -> Vector3<f64> {
    if s == 0.0 {
        return chart.a() * u;
    }
    let c = chart.center();
    let mut acc = Matrix3::zeros();
    for &(r, w) in gauss_legendre_16() {
        acc += chart.field.jacobian(&(c + u * (r * s))) * w;
    }
    acc * u
}

/// X̂₁ = X̄/‖X̄‖.
pub fn extended_unit_field(chart: &BlowupChart, s: f64, u: &Vector3<f64>) -> Result<Vector3<f64>> {
    let v = extended_field(chart, s, u);
    let norm = v.norm();
    if !(norm > 1e-10) {
        return Err(Error::DegenerateExtension { norm });
    }
    Ok(v / norm)
}

/// ‖A u‖ / ‖A e^{tA} u‖, the limit of ‖X(x)‖/‖X(φ_t x)‖ along x → σ in
/// direction u.
pub fn speed_ratio_extension(chart: &BlowupChart, u: &Vector3<f64>, t: f64) -> f64 {
    let u = u.normalize();
    let a = chart.a();
    (a * u).norm() / (a * chart.exp_at(t) * u).norm()
}

/// Rescaled linear Poincaré flow on the fiber over σ, from direction u to
/// û_t = e^{tA}u/‖e^{tA}u‖.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberCocycle {
    pub u: Vector3<f64>,
    pub u_t: Vector3<f64>,
    pub t: f64,
    /// Frame of X̂₁(0, u)⊥; `speed` holds ‖Au‖.
    pub from: NormalFrame,
    pub to: NormalFrame,
    pub mat: Matrix2<f64>,
}

fn fiber_frame(chart: &BlowupChart, u: &Vector3<f64>) -> Result<NormalFrame> {
    let au = chart.a() * u;
    let speed = au.norm();
    if !(speed > 1e-10) {
        return Err(Error::DegenerateExtension { norm: speed });
    }
    Ok(NormalFrame::from_unit(chart.center(), au / speed, speed))
}

pub fn fiber_rescaled_linear_poincare(chart: &BlowupChart, u: &Vector3<f64>, t: f64) -> Result<FiberCocycle> {
    let u = u.normalize();
    let e = chart.exp_at(t);
    let eu = e * u;
    let u_t = eu / eu.norm();
    let from = fiber_frame(chart, &u)?;
    let to = fiber_frame(chart, &u_t)?;
    let ratio = from.speed / (chart.a() * eu).norm();
    let mat = to.basis().transpose() * e * from.basis() * ratio;
    Ok(FiberCocycle {
        u,
        u_t,
        t,
        from,
        to,
        mat,
    })
}

/// Fiber sectional flow result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSectionHit {
    pub image: Vector2<f64>,
    pub tau: f64,
}

/// Rescaled sectional flow on the fiber: y in frame coordinates of
/// X̂₁(0, u)⊥ is sent to
/// ratio·e^{(t+τ)A}y + (e^{(t+τ)A}u − e^{tA}u)/‖A e^{tA}u‖,
/// with τ chosen so the result is orthogonal to X̂₁ at û_t.
pub fn fiber_rescaled_sectional(
    chart: &BlowupChart,
    u: &Vector3<f64>,
    y: &Vector2<f64>,
    t: f64,
    beta_fiber: f64,
) -> Result<FiberSectionHit> {
    if !(y.norm() < beta_fiber) {
        return Err(Error::InvalidInput(format!(
            "|y| = {} exceeds the fiber radius {beta_fiber}",
            y.norm()
        )));
    }
    const WINDOW: f64 = 0.5;
    let u = u.normalize();
    let a = *chart.a();
    let from = fiber_frame(chart, &u)?;
    let et = chart.exp_at(t);
    let eu = et * u;
    let aeu = a * eu;
    let scale = aeu.norm();
    let normal = aeu / scale;
    let to = NormalFrame::from_unit(chart.center(), normal, scale);
    let ratio = from.speed / scale;
    let big_y = from.embed(y);
    // e^{(t+τ)A} = e^{τA} e^{tA}; the image is linear in w = ratio·Y + u/‖A e^{tA}u‖.
    let w = big_y * ratio + u / scale;
    let image_at = |tau: f64| -> Vector3<f64> { chart.exp_at(tau) * (et * w) - eu / scale };
    let theta = |tau: f64| normal.dot(&image_at(tau));
    let dtheta = |tau: f64| normal.dot(&(a * chart.exp_at(tau) * (et * w)));

    // Newton runs until |Θ| stops decreasing. Θ is a difference of two
    // O(‖e^{tA}w‖) vectors and the eigen-split exponential leaves a few
    // hundred ulps of that behind, which sets the acceptance threshold.
    let tol = 1e-13 * (1.0 + (et * w).norm());
    let mut tau = 0.0;
    let mut th = theta(tau);
    for _ in 0..100 {
        let d = dtheta(tau);
        if th == 0.0 || !(d.abs() > 0.0) {
            break;
        }
        let mut step = th / d;
        let mut next = tau - step;
        let mut next_th = theta(next);
        // Halve until the step stays in the window and reduces |Θ|.
        let mut tries = 0;
        while (next.abs() > WINDOW || !(next_th.abs() < th.abs())) && tries < 60 {
            step *= 0.5;
            next = tau - step;
            next_th = theta(next);
            tries += 1;
        }
        if tries == 60 {
            break;
        }
        let moved = (next - tau).abs();
        tau = next;
        th = next_th;
        if moved <= 1e-16 * (1.0 + tau.abs()) {
            break;
        }
    }
    if !(th.abs() <= tol) || tau.abs() > WINDOW {
        return Err(Error::TauNotFound);
    }
    Ok(FiberSectionHit {
        image: to.coords(&image_at(tau)),
        tau,
    })
}

/// Per-radius failure in an extension-limit sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusFailure {
    pub radius: f64,
    pub error: String,
}

/// Convergence of regular-point ψ* toward the fiber cocycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub radii: Vec<f64>,
    /// Frobenius distance to the fiber matrix; `None` where the radius failed.
    pub errors: Vec<Option<f64>>,
    /// Least-squares slope of log error against log radius.
    pub slope: Option<f64>,
    /// Distance of the linear extrapolation to s = 0 from the two smallest
    /// successful radii.
    pub extrapolated_error: Option<f64>,
    pub failures: Vec<RadiusFailure>,
    pub fiber_matrix: Matrix2<f64>,
}

/// ψ*_t at σ + s·u, expressed in frames aligned with the fiber frames.
fn aligned_regular_matrix(
    chart: &BlowupChart,
    fiber: &FiberCocycle,
    s: f64,
    t: f64,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<Matrix2<f64>> {
    if !(s > 0.0 && s < chart.eps) {
        return Err(Error::OutOfChart);
    }
    let f = &chart.field;
    let x = chart.center() + fiber.u * s;
    let src = normal_frame(f, &x, pcfg.frame_eps)?;
    let (y, dphi) = tangent_flow(f, &x, t, cfg)?;
    if !((y - chart.center()).norm() < chart.eps) {
        return Err(Error::OutOfChart);
    }
    let dst = normal_frame(f, &y, pcfg.frame_eps)?;
    let src = NormalFrame::aligned(x, src.unit_field, src.speed, &fiber.from.n1);
    let dst = NormalFrame::aligned(y, dst.unit_field, dst.speed, &fiber.to.n1);
    Ok(dst.basis().transpose() * dphi * src.basis() * (src.speed / dst.speed))
}

/// Least-squares slope of log error against log radius over the positive
/// errors.
fn log_log_slope(radii: &[f64], errors: &[Option<f64>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(errors)
        .filter_map(|(&s, e)| e.filter(|&e| e > 0.0).map(|e| (s.ln(), e.ln())))
        .collect();
    (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    })
}

/// Compares ψ*_t at σ + s·u for each radius with the fiber cocycle at u.
pub fn verify_extension_limit(
    chart: &BlowupChart,
    u: &Vector3<f64>,
    t: f64,
    radii: &[f64],
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<ConvergenceReport> {
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("radii must be strictly decreasing".into()));
    }
    let fiber = fiber_rescaled_linear_poincare(chart, u, t)?;
    let mut errors = Vec::with_capacity(radii.len());
    let mut mats = Vec::new();
    let mut failures = Vec::new();
    for &s in radii {
        match aligned_regular_matrix(chart, &fiber, s, t, cfg, pcfg) {
            Ok(m) => {
                errors.push(Some((m - fiber.mat).norm()));
                mats.push((s, m));
            }
            Err(e) => {
                errors.push(None);
                failures.push(RadiusFailure {
                    radius: s,
                    error: e.to_string(),
                });
            }
        }
    }

    let slope = log_log_slope(radii, &errors);

    let extrapolated_error = match mats.as_slice() {
        [.., (s1, m1), (s2, m2)] => {
            let m0 = (m2 * *s1 - m1 * *s2) / (s1 - s2);
            Some((m0 - fiber.mat).norm())
        }
        _ => None,
    };

    Ok(ConvergenceReport {
        radii: radii.to_vec(),
        errors,
        slope,
        extrapolated_error,
        failures,
        fiber_matrix: fiber.mat,
    })
}

/// ‖X(x)‖/‖X(φ_t x)‖ at x = σ + s·u against its fiber limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRatioReport {
    pub limit: f64,
    pub radii: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub errors: Vec<Option<f64>>,
    pub slope: Option<f64>,
    pub failures: Vec<RadiusFailure>,
}

pub fn verify_speed_ratio_limit(
    chart: &BlowupChart,
    u: &Vector3<f64>,
    t: f64,
    radii: &[f64],
    cfg: &IntegratorConfig,
) -> Result<SpeedRatioReport> {
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("radii must be strictly decreasing".into()));
    }
    let u = u.normalize();
    let limit = speed_ratio_extension(chart, &u, t);
    let f = &chart.field;
    let mut ratios = Vec::with_capacity(radii.len());
    let mut failures = Vec::new();
    for &s in radii {
        let r = if s > 0.0 && s < chart.eps {
            let x = chart.center() + u * s;
            // The orbit stays O(s) from σ, so an absolute tolerance fixed in
            // state units would swamp the ratio at small radii.
            let local = IntegratorConfig {
                abs_tol: cfg.abs_tol.min(cfg.rel_tol * s),
                ..*cfg
            };
            flow(f, &x, t, &local).map(|y| f.eval(&x).norm() / f.eval(&y).norm())
        } else {
            Err(Error::OutOfChart)
        };
        match r {
            Ok(r) => ratios.push(Some(r)),
            Err(e) => {
                ratios.push(None);
                failures.push(RadiusFailure {
                    radius: s,
                    error: e.to_string(),
                });
            }
        }
    }
    let errors: Vec<Option<f64>> = ratios.iter().map(|r| r.map(|r| (r - limit).abs())).collect();
    Ok(SpeedRatioReport {
        limit,
        radii: radii.to_vec(),
        slope: log_log_slope(radii, &errors),
        ratios,
        errors,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::classify_singularity;
    use approx::assert_relative_eq;

    fn saddle_chart() -> BlowupChart {
        let f = VectorFieldDef::linear(Matrix3::from_diagonal(&Vector3::new(-3.0, -1.0, 2.0)));
        let s = classify_singularity(&f, &Point::zeros(), 1e-9).unwrap();
        let eps = BlowupChart::default_eps(&f);
        BlowupChart::new(f, s, eps).unwrap()
    }

    fn lorenz_chart() -> BlowupChart {
        let f = VectorFieldDef::lorenz_classic();
        let s = classify_singularity(&f, &Point::zeros(), 1e-9).unwrap();
        let eps = BlowupChart::default_eps(&f);
        BlowupChart::new(f, s, eps).unwrap()
    }

    #[test]
    fn quadrature_integrates_polynomials() {
        let rule = gauss_legendre_16();
        let total: f64 = rule.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
        // ∫₀¹ r^31 dr = 1/32 is the highest exact degree.
        let m: f64 = rule.iter().map(|&(r, w)| w * r.powi(31)).sum();
        assert!((m - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn coords_examples() {
        let c = saddle_chart();
        let (s, u) = blowup_coords(&c, &Point::new(0.0, 0.0, 0.3)).unwrap();
        assert_eq!(s, 0.3);
        assert_eq!(u, Vector3::z());
        let (s, u) = blowup_coords(&c, &Point::new(0.0, 0.0, -0.3)).unwrap();
        assert_eq!(s, -0.3);
        assert_eq!(u, Vector3::z());
        assert_eq!(blowup_coords(&c, &Point::zeros()), Err(Error::OutOfChart));
        assert_eq!(blowup_coords(&c, &Point::new(0.0, 0.0, 100.0)), Err(Error::OutOfChart));
    }

    #[test]
    fn linear_extended_field_is_constant() {
        let c = saddle_chart();
        let u = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        for s in [0.0, 0.01, 0.1] {
            assert_relative_eq!(extended_field(&c, s, &u), c.a() * u, epsilon = 1e-14);
        }
    }

    #[test]
    fn lorenz_extended_field() {
        let c = lorenz_chart();
        assert_relative_eq!(
            extended_field(&c, 0.0, &Vector3::z()),
            Vector3::new(0.0, 0.0, -8.0 / 3.0),
            epsilon = 1e-15
        );
        let direct = c.field.eval(&(Vector3::z() * 0.1)) / 0.1;
        assert_relative_eq!(extended_field(&c, 0.1, &Vector3::z()), direct, epsilon = 1e-13);
    }

    #[test]
    fn unit_field_examples() {
        let c = saddle_chart();
        assert_relative_eq!(
            extended_unit_field(&c, 0.2, &Vector3::z()).unwrap(),
            Vector3::z(),
            epsilon = 1e-15
        );
        let u = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        let want = Vector3::new(-3.0, 0.0, 2.0) / 13f64.sqrt();
        assert_relative_eq!(extended_unit_field(&c, 0.0, &u).unwrap(), want, epsilon = 1e-15);
    }

    #[test]
    fn speed_ratio_examples() {
        let c = saddle_chart();
        for t in [0.0, 0.3, 1.0] {
            assert_relative_eq!(
                speed_ratio_extension(&c, &Vector3::z(), t),
                (-2.0 * t).exp(),
                epsilon = 1e-15
            );
        }
        let lc = lorenz_chart();
        let u = lc.sigma.unstable_direction().unwrap();
        let l3 = (-11.0 + 1201f64.sqrt()) / 2.0;
        assert_relative_eq!(speed_ratio_extension(&lc, &u, 1.0), (-l3).exp(), max_relative = 1e-12);
        assert_relative_eq!(
            speed_ratio_extension(&lc, &Vector3::new(0.3, 0.4, 0.5), 0.0),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn eigen_exponential_matches_pade() {
        let c = lorenz_chart();
        for t in [-0.4, 0.0, 0.5, 1.0] {
            let e = c.exp_at(t);
            let p = expm(&(c.a() * t));
            assert!((e - p).norm() <= 1e-11 * p.norm(), "t = {t}");
        }
    }

    #[test]
    fn saddle_fiber_matrix() {
        let c = saddle_chart();
        let t = 0.7;
        let m = fiber_rescaled_linear_poincare(&c, &Vector3::z(), t).unwrap();
        assert_relative_eq!(
            m.mat,
            Matrix2::new((-5.0 * t).exp(), 0.0, 0.0, (-3.0 * t).exp()),
            epsilon = 1e-15
        );
        let id = fiber_rescaled_linear_poincare(&c, &Vector3::new(0.2, 0.3, 0.9), 0.0).unwrap();
        assert_relative_eq!(id.mat, Matrix2::identity(), epsilon = 1e-15);
    }

    #[test]
    fn fiber_sectional_examples() {
        let c = saddle_chart();
        let t = 0.6;
        let zero = fiber_rescaled_sectional(&c, &Vector3::z(), &Vector2::zeros(), t, 0.01).unwrap();
        assert_eq!(zero.tau, 0.0);
        assert!(zero.image.norm() < 1e-15);
        let y = Vector2::new(0.004, -0.007);
        let hit = fiber_rescaled_sectional(&c, &Vector3::z(), &y, t, 0.01).unwrap();
        assert!(hit.tau.abs() < 1e-15);
        let want = Vector2::new(y.x * (-5.0 * t).exp(), y.y * (-3.0 * t).exp());
        assert_relative_eq!(hit.image, want, epsilon = 1e-15);
        assert!(matches!(
            fiber_rescaled_sectional(&c, &Vector3::z(), &Vector2::new(0.1, 0.0), t, 0.01),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn lorenz_fiber_sectional_derivative() {
        let c = lorenz_chart();
        let u = Vector3::new(0.3, -0.5, 0.8).normalize();
        let t = 0.4;
        let lin = fiber_rescaled_linear_poincare(&c, &u, t).unwrap().mat;
        let h = 1e-7;
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let p = fiber_rescaled_sectional(&c, &u, &e, t, 0.01).unwrap().image;
            let m = fiber_rescaled_sectional(&c, &u, &(-e), t, 0.01).unwrap().image;
            let col = (p - m) / (2.0 * h);
            let want = lin.column(k);
            assert!((col - want).norm() <= 1e-5 * (1.0 + want.norm()), "column {k}");
        }
    }

    #[test]
    fn linear_extension_limit_is_exact() {
        let c = saddle_chart();
        let u = Vector3::new(0.2, 0.4, 1.0).normalize();
        let r = verify_extension_limit(
            &c,
            &u,
            0.3,
            &[1e-2, 1e-3, 1e-4],
            &IntegratorConfig::default(),
            &PoincareConfig::default(),
        )
        .unwrap();
        assert!(r.failures.is_empty());
        for e in r.errors {
            assert!(e.unwrap() < 1e-8);
        }
    }

    #[test]
    fn strong_stable_exits_chart_backward() {
        let c = lorenz_chart();
        let u = c.sigma.strong_stable_direction().unwrap();
        let r = verify_extension_limit(
            &c,
            &u,
            -0.5,
            &[1e-2, 1e-3],
            &IntegratorConfig::default(),
            &PoincareConfig::default(),
        )
        .unwrap();
        assert_eq!(r.failures.len(), 2);
        assert!(r.failures.iter().all(|f| f.error == Error::OutOfChart.to_string()));
        assert!(r.errors.iter().all(Option::is_none));
    }

    #[test]
    fn rejects_nonhyperbolic() {
        let f = VectorFieldDef::linear(Matrix3::from_diagonal(&Vector3::new(-1.0, 0.0, 1.0)));
        let s = classify_singularity(&f, &Point::zeros(), 1e-9).unwrap();
        assert!(BlowupChart::new(f, s, 0.1).is_err());
    }
}
