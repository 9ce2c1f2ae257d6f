//! Base flow φ_t and tangent flow Dφ_t.
//!
//! Integration uses an embedded Dormand–Prince 5(4) pair with a PI step-size
//! controller. Negative times are handled by integrating −X forward, never by
//! stepping backwards in time.

use std::io::Write;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, VectorFieldDef};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Escape radius in multiples of the field's box diagonal.
    pub escape_factor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.1,
            max_steps: 5_000_000,
            escape_factor: 1e3,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_step > 0.0
            && self.max_steps > 0
            && self.escape_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "integrator config must be positive: {self:?}"
            )))
        }
    }

    /// Same configuration with both tolerances scaled by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        IntegratorConfig {
            rel_tol: self.rel_tol * factor,
            abs_tol: self.abs_tol * factor,
            ..*self
        }
    }
}

/// A point on an integrated orbit with its cached field value and Jacobian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub t: f64,
    pub x: Point,
    pub field: Vector3<f64>,
    pub jac: Matrix3<f64>,
}

impl OrbitSample {
    pub fn new(f: &VectorFieldDef, t: f64, x: Point) -> Self {
        OrbitSample {
            t,
            x,
            field: f.eval(&x),
            jac: f.jacobian(&x),
        }
    }

    pub fn speed(&self) -> f64 {
        self.field.norm()
    }
}

pub(crate) enum Control {
    Continue,
    Stop,
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the node
// abscissae c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;

/// Autonomous ODE integrator over a fixed-size state.
///
/// `escape` bounds the norm of the first three state components (the base
/// point); `on_step` sees every accepted node and may stop the integration
/// early, in which case the state at that node is returned.
pub(crate) fn integrate<const N: usize, F, O>(
    rhs: F,
    y0: SVector<f64, N>,
    duration: f64,
    cfg: &IntegratorConfig,
    escape: f64,
    mut on_step: O,
) -> Result<(f64, SVector<f64, N>)>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
    O: FnMut(f64, &SVector<f64, N>) -> Control,
{
    debug_assert!(duration >= 0.0);
    if !duration.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite duration {duration}")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: 0.0 });
    }
    if duration == 0.0 {
        return Ok((0.0, y0));
    }

    let err_norm = |y: &SVector<f64, N>, yn: &SVector<f64, N>, e: &SVector<f64, N>| {
        let mut acc = 0.0;
        for i in 0..N {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(yn[i].abs());
            let r = e[i] / sc;
            acc += r * r;
        }
        (acc / N as f64).sqrt()
    };

    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = rhs(&y);

    // Initial step guess (Hairer, Nørsett & Wanner, II.4).
    let mut h = {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (k1[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1 = y + k1 * h0;
        let k = rhs(&y1);
        let mut d2 = 0.0;
        for i in 0..N {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs();
            d2 += ((k[i] - k1[i]) / sc).powi(2);
        }
        let d2 = (d2 / N as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(cfg.max_step).min(duration)
    };

    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;
    let mut rejected_last = false;

    loop {
        if steps >= cfg.max_steps {
            return Err(Error::StepLimitExceeded { steps });
        }
        let remaining = duration - t;
        let last = h >= remaining;
        let hs = if last { remaining } else { h };
        if hs <= 1e-14 * (1.0 + t.abs()) && !last {
            return Err(Error::StepSizeUnderflow { t });
        }

        let k2 = rhs(&(y + k1 * (A21 * hs)));
        let k3 = rhs(&(y + (k1 * A31 + k2 * A32) * hs));
        let k4 = rhs(&(y + (k1 * A41 + k2 * A42 + k3 * A43) * hs));
        let k5 = rhs(&(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * hs));
        let k6 = rhs(&(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * hs));
        let yn = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * hs;
        let k7 = rhs(&yn);
        let e = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * hs;
        let err = err_norm(&y, &yn, &e);
        steps += 1;

        if !err.is_finite() {
            h = hs * FAC_MIN;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            t = if last { duration } else { t + hs };
            y = yn;
            k1 = k7;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            let base = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
            if base > escape {
                return Err(Error::BlowUp { t, radius: escape });
            }
            if let Control::Stop = on_step(t, &y) {
                return Ok((t, y));
            }
            if last {
                return Ok((t, y));
            }
            let mut fac = SAFETY * err.max(1e-10).powf(-ALPHA) * err_prev.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            err_prev = err.max(1e-4);
            h = (hs * fac).min(cfg.max_step);
            rejected_last = false;
        } else {
            let fac = (SAFETY * err.powf(-ALPHA)).max(FAC_MIN);
            h = hs * fac;
            rejected_last = true;
        }
    }
}

pub(crate) fn escape_radius(f: &VectorFieldDef, cfg: &IntegratorConfig) -> f64 {
    cfg.escape_factor * f.domain.diagonal()
}

fn directed(f: &VectorFieldDef, t: f64) -> (std::borrow::Cow<'_, VectorFieldDef>, f64) {
    if t < 0.0 {
        (std::borrow::Cow::Owned(f.reversed()), -t)
    } else {
        (std::borrow::Cow::Borrowed(f), t)
    }
}

/// φ_t(x).
pub fn flow(f: &VectorFieldDef, x: &Point, t: f64, cfg: &IntegratorConfig) -> Result<Point> {
    let (g, dur) = directed(f, t);
    let (_, y) = integrate(
        |y: &Point| g.eval(y),
        *x,
        dur,
        cfg,
        escape_radius(f, cfg),
        |_, _| Control::Continue,
    )?;
    Ok(y)
}

type TangentState = SVector<f64, 12>;

fn pack(x: &Point, m: &Matrix3<f64>) -> TangentState {
    let mut s = TangentState::zeros();
    s.fixed_rows_mut::<3>(0).copy_from(x);
    for j in 0..3 {
        for i in 0..3 {
            s[3 + 3 * j + i] = m[(i, j)];
        }
    }
    s
}

fn unpack(s: &TangentState) -> (Point, Matrix3<f64>) {
    let x = Point::new(s[0], s[1], s[2]);
    let m = Matrix3::from_fn(|i, j| s[3 + 3 * j + i]);
    (x, m)
}

fn tangent_rhs(g: &VectorFieldDef) -> impl Fn(&TangentState) -> TangentState + '_ {
    move |s: &TangentState| {
        let (x, m) = unpack(s);
        pack(&g.eval(&x), &(g.jacobian(&x) * m))
    }
}

/// (φ_t(x), Dφ_t(x)), from the joint 12-dimensional variational system
/// Ẏ = DX(φ_t x)·Y, Y(0) = I.
pub fn tangent_flow(f: &VectorFieldDef, x: &Point, t: f64, cfg: &IntegratorConfig) -> Result<(Point, Matrix3<f64>)> {
    let (g, dur) = directed(f, t);
    let (_, s) = integrate(
        tangent_rhs(&g),
        pack(x, &Matrix3::identity()),
        dur,
        cfg,
        escape_radius(f, cfg),
        |_, _| Control::Continue,
    )?;
    Ok(unpack(&s))
}

/// Tangent flow evaluated at several increasing times with one integration.
/// `times` must be non-negative and sorted; returns one (point, matrix) per time.
pub fn tangent_flow_at(
    f: &VectorFieldDef,
    x: &Point,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<(Point, Matrix3<f64>)>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidInput("times must be sorted and non-negative".into()));
    }
    let escape = escape_radius(f, cfg);
    let mut out = Vec::with_capacity(times.len());
    let mut state = pack(x, &Matrix3::identity());
    let mut now = 0.0;
    for &t in times {
        let (_, s) = integrate(tangent_rhs(f), state, t - now, cfg, escape, |_, _| Control::Continue)?;
        state = s;
        now = t;
        out.push(unpack(&state));
    }
    Ok(out)
}

/// Tangent flow together with ∫₀ᵗ div X(φ_s x) ds, integrated alongside.
pub fn tangent_flow_with_divergence(
    f: &VectorFieldDef,
    x: &Point,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<(Point, Matrix3<f64>, f64)> {
    let (g, dur) = directed(f, t);
    let rhs = |s: &SVector<f64, 13>| {
        let base: TangentState = s.fixed_rows::<12>(0).into_owned();
        let (x, m) = unpack(&base);
        let mut out = SVector::<f64, 13>::zeros();
        out.fixed_rows_mut::<12>(0)
            .copy_from(&pack(&g.eval(&x), &(g.jacobian(&x) * m)));
        out[12] = g.divergence(&x);
        out
    };
    let mut s0 = SVector::<f64, 13>::zeros();
    s0.fixed_rows_mut::<12>(0).copy_from(&pack(x, &Matrix3::identity()));
    let (_, s) = integrate(rhs, s0, dur, cfg, escape_radius(f, cfg), |_, _| Control::Continue)?;
    let (p, m) = unpack(&s.fixed_rows::<12>(0).into_owned());
    // The divergence integral is taken in the integration direction; the
    // backward flow has Jacobian determinant exp(−∫ div X).
    Ok((p, m, s[12]))
}

/// Central-difference Jacobian of φ_t, column by column.
pub fn flow_jacobian_fd(f: &VectorFieldDef, x: &Point, t: f64, h: f64, cfg: &IntegratorConfig) -> Result<Matrix3<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("h must be positive".into()));
    }
    let mut m = Matrix3::zeros();
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        let plus = flow(f, &(x + e), t, cfg)?;
        let minus = flow(f, &(x - e), t, cfg)?;
        m.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    Ok(m)
}

/// Integrates `x` for `n` intervals of length `spacing` and returns the
/// n + 1 orbit samples, the first being `x` itself at time `t0`.
pub fn trajectory(
    f: &VectorFieldDef,
    x: &Point,
    t0: f64,
    spacing: f64,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<OrbitSample>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut p = *x;
    out.push(OrbitSample::new(f, t0, p));
    for k in 1..=n {
        p = flow(f, &p, spacing, cfg)?;
        out.push(OrbitSample::new(f, t0 + k as f64 * spacing, p));
    }
    Ok(out)
}

/// C `%.17g` formatting.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_fraction(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `t,x,y,z` rows (plus the nine Jacobian entries `j11..j33`, row
/// major, when every sample has a matrix) with `%.17g` formatting.
pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[(f64, Point, Option<Matrix3<f64>>)]) -> std::io::Result<()> {
    let with_jac = !rows.is_empty() && rows.iter().all(|r| r.2.is_some());
    write!(w, "t,x,y,z")?;
    if with_jac {
        for i in 1..=3 {
            for j in 1..=3 {
                write!(w, ",j{i}{j}")?;
            }
        }
    }
    writeln!(w)?;
    for (t, x, m) in rows {
        write!(
            w,
            "{},{},{},{}",
            fmt_g17(*t),
            fmt_g17(x[0]),
            fmt_g17(x[1]),
            fmt_g17(x[2])
        )?;
        if with_jac {
            let m = m.expect("checked above");
            for i in 0..3 {
                for j in 0..3 {
                    write!(w, ",{}", fmt_g17(m[(i, j)]))?;
                }
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn saddle() -> VectorFieldDef {
        VectorFieldDef::linear(Matrix3::from_diagonal(&Vector3::new(-3.0, -1.0, 2.0)))
    }

    #[test]
    fn linear_flow_closed_form() {
        let cfg = IntegratorConfig::default();
        let y = flow(&saddle(), &Point::new(1.0, 1.0, 1.0), 1.0, &cfg).unwrap();
        let exact = Point::new((-3f64).exp(), (-1f64).exp(), 2f64.exp());
        for k in 0..3 {
            assert!(
                (y[k] - exact[k]).abs() <= 10.0 * cfg.rel_tol * exact[k].abs(),
                "{k}: {} vs {}",
                y[k],
                exact[k]
            );
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let cfg = IntegratorConfig::default();
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(1.0, 2.0, 3.0);
        assert_eq!(flow(&f, &x, 0.0, &cfg).unwrap(), x);
        let (p, m) = tangent_flow(&f, &x, 0.0, &cfg).unwrap();
        assert_eq!(p, x);
        assert_eq!(m, Matrix3::identity());
        let fd = flow_jacobian_fd(&f, &x, 0.0, 1e-4, &cfg).unwrap();
        assert!((fd - Matrix3::identity()).norm() < 1e-10);
    }

    #[test]
    fn lorenz_self_convergence() {
        let cfg = IntegratorConfig::default();
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(1.0, 1.0, 1.0);
        let a = flow(&f, &x, 1.0, &cfg).unwrap();
        let b = flow(&f, &x, 1.0, &cfg.refined(0.5)).unwrap();
        assert!((a - b).norm() <= 100.0 * cfg.rel_tol * b.norm());
    }

    #[test]
    fn linear_tangent_flow_is_exponential() {
        let cfg = IntegratorConfig::default();
        let (_, m) = tangent_flow(&saddle(), &Point::new(0.5, -0.2, 0.1), 2f64.ln(), &cfg).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(0.125, 0.5, 4.0));
        assert_relative_eq!(m, expected, epsilon = 1e-9);
    }

    #[test]
    fn linear_fd_jacobian() {
        let cfg = IntegratorConfig::default();
        let m = flow_jacobian_fd(&saddle(), &Point::new(0.3, 0.3, 0.3), 1.0, 1e-4, &cfg).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new((-3f64).exp(), (-1f64).exp(), 2f64.exp()));
        assert_relative_eq!(m, expected, epsilon = 1e-6);
    }

    #[test]
    fn tangent_matches_fd_on_lorenz() {
        let cfg = IntegratorConfig::default();
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(1.0, 1.0, 1.0);
        let (_, m) = tangent_flow(&f, &x, 0.5, &cfg).unwrap();
        let fd = flow_jacobian_fd(&f, &x, 0.5, 1e-5, &cfg).unwrap();
        assert!((m - fd).norm() / m.norm() < 1e-4);
    }

    #[test]
    fn fd_error_is_second_order() {
        let cfg = IntegratorConfig {
            rel_tol: 1e-13,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(1.0, 1.0, 1.0);
        let (_, m) = tangent_flow(&f, &x, 0.5, &cfg).unwrap();
        let e1 = (flow_jacobian_fd(&f, &x, 0.5, 1e-2, &cfg).unwrap() - m).norm();
        let e2 = (flow_jacobian_fd(&f, &x, 0.5, 1e-3, &cfg).unwrap() - m).norm();
        let order = (e1 / e2).log10();
        assert!(order > 1.8, "observed order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn backward_flow_inverts_forward() {
        let cfg = IntegratorConfig::default();
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(-3.0, 2.0, 20.0);
        let y = flow(&f, &x, 0.3, &cfg).unwrap();
        let back = flow(&f, &y, -0.3, &cfg).unwrap();
        assert!((back - x).norm() < 1e-6);
        let (_, m) = tangent_flow(&f, &x, 0.3, &cfg).unwrap();
        let (_, minv) = tangent_flow(&f, &y, -0.3, &cfg).unwrap();
        assert!((minv * m - Matrix3::identity()).norm() < 1e-6);
    }

    #[test]
    fn escape_is_reported() {
        let cfg = IntegratorConfig::default();
        let err = flow(&saddle(), &Point::new(0.0, 0.0, 1.0), 20.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn step_limit_is_reported() {
        let cfg = IntegratorConfig {
            max_steps: 5,
            ..Default::default()
        };
        let err = flow(&VectorFieldDef::lorenz_classic(), &Point::new(1.0, 1.0, 1.0), 5.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepLimitExceeded { .. }));
    }

    #[test]
    fn g17_matches_c() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
        assert_eq!(fmt_g17(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1e16), "10000000000000000");
        assert_eq!(fmt_g17(1e17), "1e+17");
        assert_eq!(fmt_g17(0.0001), "0.0001");
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            (0.0, Point::new(1.0, 2.0, 3.0), Some(Matrix3::identity())),
            (0.5, Point::new(0.1, 0.0, -1.0), Some(Matrix3::identity() * 2.0)),
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x,y,z,j11,j12,j13,j21,j22,j23,j31,j32,j33");
        assert_eq!(lines[1], "0,1,2,3,1,0,0,0,1,0,0,0,1");
        assert!(lines[2].starts_with("0.5,0.10000000000000001,0,-1,2,"));

        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[(0.0, Point::zeros(), None)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x,y,z\n0,0,0,0\n");
    }
}
