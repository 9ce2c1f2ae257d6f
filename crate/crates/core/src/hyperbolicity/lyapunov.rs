use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, VectorFieldDef};
use crate::flow::{tangent_flow_with_divergence, IntegratorConfig};
use crate::poincare::{normal_frame, project_tangent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Exponents of the tangent flow, descending.
    pub tangent: [f64; 3],
    /// Exponents of the rescaled linear Poincaré cocycle, descending.
    pub normal: [f64; 2],
    /// Time average of div X along the orbit.
    pub mean_divergence: f64,
    pub t_total: f64,
    pub renorm_dt: f64,
    pub end: Point,
}

/// QR re-orthonormalization every `renorm_dt` over `t_total`.
pub fn lyapunov_exponents(
    f: &VectorFieldDef,
    x: &Point,
    t_total: f64,
    renorm_dt: f64,
    cfg: &IntegratorConfig,
    frame_eps: f64,
) -> Result<LyapunovReport> {
    if !(renorm_dt > 0.0 && t_total >= renorm_dt) {
        return Err(Error::InvalidInput("need 0 < renorm_dt ≤ t_total".into()));
    }
    let steps = (t_total / renorm_dt).round() as usize;
    let mut q3 = Matrix3::identity();
    let mut q2 = Matrix2::identity();
    let mut sum3 = [0.0; 3];
    let mut sum2 = [0.0; 2];
    let mut div = 0.0;
    let mut p = *x;
    let mut frame = normal_frame(f, &p, frame_eps)?;
    for _ in 0..steps {
        let (y, m, d) = tangent_flow_with_divergence(f, &p, renorm_dt, cfg)?;
        div += d;
        let qr = (m * q3).qr();
        let r = qr.r();
        for (k, s) in sum3.iter_mut().enumerate() {
            *s += r[(k, k)].abs().ln();
        }
        q3 = qr.q();

        let next = normal_frame(f, &y, frame_eps)?;
        let psi = project_tangent(&m, &frame, &next) * (frame.speed / next.speed);
        let qr = (psi * q2).qr();
        let r = qr.r();
        for (k, s) in sum2.iter_mut().enumerate() {
            *s += r[(k, k)].abs().ln();
        }
        q2 = qr.q();
        frame = next;
        p = y;
    }
    let t = steps as f64 * renorm_dt;
    let mut tangent = sum3.map(|s| s / t);
    let mut normal = sum2.map(|s| s / t);
    tangent.sort_by(|a, b| b.total_cmp(a));
    normal.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovReport {
        tangent,
        normal,
        mean_divergence: div / t,
        t_total: t,
        renorm_dt,
        end: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn diagonal_exponents_are_exact() {
        let f = VectorFieldDef::linear(Matrix3::from_diagonal(&Vector3::new(-3.0, -1.0, 2.0)));
        let cfg = IntegratorConfig {
            escape_factor: 1e12,
            ..IntegratorConfig::default()
        };
        let r = lyapunov_exponents(&f, &Point::new(0.3, -0.2, 0.1), 5.0, 0.1, &cfg, 1e-10).unwrap();
        for (got, want) in r.tangent.iter().zip([2.0, -1.0, -3.0]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let sum: f64 = r.tangent.iter().sum();
        assert!((sum - r.mean_divergence).abs() < 1e-6);
    }

    #[test]
    fn liouville_on_lorenz() {
        let f = VectorFieldDef::lorenz_classic();
        let r = lyapunov_exponents(
            &f,
            &Point::new(1.0, 1.0, 1.0),
            20.0,
            0.1,
            &IntegratorConfig::default(),
            1e-10,
        )
        .unwrap();
        let sum: f64 = r.tangent.iter().sum();
        assert!((sum - r.mean_divergence).abs() < 1e-6);
        assert!((r.mean_divergence + 41.0 / 3.0).abs() < 1e-9);
    }
}
