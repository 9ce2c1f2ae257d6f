//! Normal frames and the Poincaré flows over a regular orbit.
//!
//! * ψ_t, the linear Poincaré flow: Dφ_t followed by orthogonal projection
//!   onto the normal plane N = X⊥ at the image point.
//! * ψ*_t = (|X(x)| / |X(φ_t x)|) · ψ_t, its rescaling.
//! * P_t, the sectional Poincaré flow: the holonomy between the affine normal
//!   sections through x and φ_t(x).
//! * P*_t(u) = P_t(|X(x)|·u) / |X(φ_t x)|.
//! * π_{y,x}, the rescaled projection of the section at y onto the section
//!   at a nearby point x along orbits.
//!
//! Normal vectors are passed around as coordinates in the (n1, n2) basis of
//! the frame at their base point. Frames are recomputed at every point by a
//! fixed rule, so every matrix here is frame-to-frame.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, VectorFieldDef};
use crate::flow::{escape_radius, integrate, tangent_flow, Control, IntegratorConfig};

/// Tunables of the Poincaré constructions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoincareConfig {
    /// Frames exist only where |X| exceeds this.
    pub frame_eps: f64,
    /// Section radius as a multiple of |X(x)|.
    pub beta_sec: f64,
    /// Half-width of the time window searched for section crossings.
    pub tau_max: f64,
    /// Half-width of the time window of the identification maps.
    pub s_max: f64,
    /// Admissible rescaled radius of the identification maps.
    pub beta0: f64,
    /// Admissible distance |x − y| of the identification maps, as a multiple
    /// of |X(x)|.
    pub r0_factor: f64,
    /// Tube radius around the target point, as a multiple of |X(φ_t x)|.
    pub tube_factor: f64,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        PoincareConfig {
            frame_eps: 1e-10,
            beta_sec: 0.05,
            tau_max: 0.25,
            s_max: 0.25,
            beta0: 0.05,
            r0_factor: 0.1,
            tube_factor: 1.0,
        }
    }
}

/// Orthonormal right-handed frame {X/|X|, n1, n2} at a regular point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFrame {
    pub base: Point,
    pub unit_field: Vector3<f64>,
    pub n1: Vector3<f64>,
    pub n2: Vector3<f64>,
    pub speed: f64,
}

impl NormalFrame {
    /// Frame built from a unit vector by the deterministic reference rule:
    /// n1 is the first of (e₃, e₁) with |⟨r, u⟩| < 0.9, orthogonalized
    /// against u, and n2 = u × n1.
    pub fn from_unit(base: Point, unit: Vector3<f64>, speed: f64) -> Self {
        let r = if unit.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let n1 = (r - unit * unit.dot(&r)).normalize();
        let n2 = unit.cross(&n1);
        NormalFrame {
            base,
            unit_field: unit,
            n1,
            n2,
            speed,
        }
    }

    /// Frame with the given unit field whose n1 is the normalized projection
    /// of `reference` onto the normal plane.
    pub fn aligned(base: Point, unit: Vector3<f64>, speed: f64, reference: &Vector3<f64>) -> Self {
        let n1 = (reference - unit * unit.dot(reference)).normalize();
        let n2 = unit.cross(&n1);
        NormalFrame {
            base,
            unit_field: unit,
            n1,
            n2,
            speed,
        }
    }

    /// 3×2 matrix with columns n1, n2.
    pub fn basis(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.n1, self.n2])
    }

    pub fn embed(&self, v: &Vector2<f64>) -> Vector3<f64> {
        self.n1 * v.x + self.n2 * v.y
    }

    pub fn coords(&self, w: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.n1.dot(w), self.n2.dot(w))
    }

    /// Orthogonal projection onto the normal plane.
    pub fn project(&self, w: &Vector3<f64>) -> Vector3<f64> {
        w - self.unit_field * self.unit_field.dot(w)
    }
}

/// Frame of N_x = X(x)⊥.
pub fn normal_frame(f: &VectorFieldDef, x: &Point, frame_eps: f64) -> Result<NormalFrame> {
    let v = f.eval(x);
    let speed = v.norm();
    if !(speed > frame_eps) {
        return Err(Error::NearSingularity { speed });
    }
    Ok(NormalFrame::from_unit(*x, v / speed, speed))
}

/// ψ_t or ψ*_t between two frames, as a 2×2 matrix in frame coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareCocycle {
    pub from: NormalFrame,
    pub to: NormalFrame,
    pub t: f64,
    pub mat: Matrix2<f64>,
    pub rescaled: bool,
}

impl PoincareCocycle {
    /// The speed ratio |X(from)| / |X(to)| that separates ψ* from ψ.
    pub fn speed_ratio(&self) -> f64 {
        self.from.speed / self.to.speed
    }

    /// `next ∘ self`; `next` must start where `self` ends.
    pub fn then(&self, next: &PoincareCocycle) -> Result<PoincareCocycle> {
        if self.rescaled != next.rescaled {
            return Err(Error::InvalidInput("cannot compose ψ with ψ*".into()));
        }
        let gap = (self.to.base - next.from.base).norm();
        if gap > 1e-9 * (1.0 + self.to.base.norm()) {
            return Err(Error::InvalidInput(format!("cocycles do not chain (gap {gap:e})")));
        }
        Ok(PoincareCocycle {
            from: self.from,
            to: next.to,
            t: self.t + next.t,
            mat: next.mat * self.mat,
            rescaled: self.rescaled,
        })
    }

    pub fn apply(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.mat * v
    }
}

/// ψ_t(v) = Dφ_t v − ⟨Dφ_t v, X⟩/|X|² X at φ_t(x), for a tangent matrix and
/// the two frames.
pub fn project_tangent(dphi: &Matrix3<f64>, from: &NormalFrame, to: &NormalFrame) -> Matrix2<f64> {
    to.basis().transpose() * dphi * from.basis()
}

/// Linear Poincaré flow ψ_t over the orbit segment from `x`.
pub fn linear_poincare(
    f: &VectorFieldDef,
    x: &Point,
    t: f64,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<PoincareCocycle> {
    let from = normal_frame(f, x, pcfg.frame_eps)?;
    let (y, dphi) = tangent_flow(f, x, t, cfg)?;
    let to = normal_frame(f, &y, pcfg.frame_eps)?;
    Ok(PoincareCocycle {
        from,
        to,
        t,
        mat: project_tangent(&dphi, &from, &to),
        rescaled: false,
    })
}

/// ψ*_t = (|X(x)| / |X(φ_t x)|) · ψ_t.
pub fn rescaled_linear_poincare(
    f: &VectorFieldDef,
    x: &Point,
    t: f64,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<PoincareCocycle> {
    let mut c = linear_poincare(f, x, t, cfg, pcfg)?;
    c.mat *= c.speed_ratio();
    c.rescaled = true;
    Ok(c)
}

/// Result of a sectional Poincaré evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionHit {
    /// In-plane displacement from φ_t(x), in target frame coordinates.
    pub image: Vector2<f64>,
    /// Extra time past t at which the section is crossed.
    pub tau: f64,
    pub target: NormalFrame,
}

fn directed(f: &VectorFieldDef, t: f64) -> (VectorFieldDef, f64) {
    if t < 0.0 {
        (f.reversed(), -t)
    } else {
        (f.clone(), t)
    }
}

/// Integrates the pair (x, x + d) jointly, returning (φ_t x, φ_t(x + d) − φ_t x).
fn pair_flow(
    f: &VectorFieldDef,
    x: &Point,
    d: &Vector3<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<(Point, Vector3<f64>)> {
    let (g, dur) = directed(f, t);
    let rhs = |s: &SVector<f64, 6>| {
        let base = Point::new(s[0], s[1], s[2]);
        let disp = Vector3::new(s[3], s[4], s[5]);
        let vb = g.eval(&base);
        let vd = g.eval(&(base + disp)) - vb;
        SVector::<f64, 6>::from_iterator(vb.iter().chain(vd.iter()).copied())
    };
    let s0 = SVector::<f64, 6>::from_iterator(x.iter().chain(d.iter()).copied());
    let (_, s) = integrate(rhs, s0, dur, cfg, escape_radius(f, cfg), |_, _| Control::Continue)?;
    Ok((Point::new(s[0], s[1], s[2]), Vector3::new(s[3], s[4], s[5])))
}

/// A root of the signed plane function found along an orbit.
#[derive(Clone, Copy, Debug)]
struct Crossing {
    tau: f64,
    disp: Vector3<f64>,
}

/// Flows the point `center + z0` for times in (−window, window) and returns
/// every time at which it crosses the plane through `center` orthogonal to
/// `normal`, sorted by |τ|. `None` signals that the orbit left the tube of
/// radius `tube` around `center` before any crossing was seen.
fn section_crossings(
    f: &VectorFieldDef,
    center: &Point,
    normal: &Vector3<f64>,
    z0: &Vector3<f64>,
    window: f64,
    tube: f64,
    cfg: &IntegratorConfig,
) -> Result<Option<Vec<Crossing>>> {
    let g0 = normal.dot(z0);
    let mut roots = Vec::new();
    if g0 == 0.0 {
        roots.push(Crossing { tau: 0.0, disp: *z0 });
    }
    let scan_cfg = IntegratorConfig {
        max_step: cfg.max_step.min(window / 16.0),
        ..*cfg
    };
    let tol_g = 1e-12 * z0.norm().max(f64::MIN_POSITIVE);
    let mut left_tube = false;
    for sign in [1.0, -1.0] {
        let g = if sign > 0.0 { f.clone() } else { f.reversed() };
        let c = *center;
        let rhs = |z: &Vector3<f64>| g.eval(&(c + z));
        let mut prev = (0.0, *z0, g0);
        let mut brackets: Vec<((f64, Vector3<f64>), f64)> = Vec::new();
        let mut exited = false;
        let res = integrate(rhs, *z0, window, &scan_cfg, f64::INFINITY, |t, z| {
            let gz = normal.dot(&z.fixed_rows::<3>(0).into_owned());
            if prev.2 != 0.0 && gz != 0.0 && prev.2.signum() != gz.signum() {
                brackets.push(((prev.0, prev.1), t));
            } else if gz == 0.0 && t < window {
                roots.push(Crossing {
                    tau: sign * t,
                    disp: *z,
                });
            }
            prev = (t, *z, gz);
            if z.norm() > tube {
                exited = true;
                return Control::Stop;
            }
            Control::Continue
        });
        match res {
            Ok(_) => {}
            Err(Error::BlowUp { .. }) | Err(Error::NonFinite { .. }) => exited = true,
            Err(e) => return Err(e),
        }
        left_tube |= exited;
        for ((ta, za), tb) in brackets {
            let (tau, disp) = refine_crossing(&g, center, normal, ta, za, tb, tol_g, cfg)?;
            roots.push(Crossing { tau: sign * tau, disp });
        }
    }
    if roots.is_empty() && left_tube {
        return Ok(None);
    }
    roots.sort_by(|a, b| a.tau.abs().total_cmp(&b.tau.abs()));
    Ok(Some(roots))
}

/// Illinois-modified regula falsi on the plane function between two
/// accepted integrator nodes.
#[allow(clippy::too_many_arguments)]
fn refine_crossing(
    g: &VectorFieldDef,
    center: &Point,
    normal: &Vector3<f64>,
    ta: f64,
    za: Vector3<f64>,
    tb: f64,
    tol_g: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, Vector3<f64>)> {
    let c = *center;
    let rhs = |z: &Vector3<f64>| g.eval(&(c + z));
    let at = |t: f64| -> Result<Vector3<f64>> {
        let (_, z) = integrate(rhs, za, t - ta, cfg, f64::INFINITY, |_, _| Control::Continue)?;
        Ok(z)
    };
    let (mut a, mut fa) = (ta, normal.dot(&za));
    let zb = at(tb)?;
    let (mut b, mut fb) = (tb, normal.dot(&zb));
    let mut best = if fa.abs() < fb.abs() { (a, za) } else { (b, zb) };
    let mut side = 0i8;
    for _ in 0..200 {
        let m = (a * fb - b * fa) / (fb - fa);
        let m = if m.is_finite() && m > a.min(b) && m < a.max(b) {
            m
        } else {
            0.5 * (a + b)
        };
        let zm = at(m)?;
        let fm = normal.dot(&zm);
        best = (m, zm);
        if fm.abs() <= tol_g || (b - a).abs() <= 1e-15 * (1.0 + m.abs()) {
            break;
        }
        if fm.signum() == fb.signum() {
            b = m;
            fb = fm;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = m;
            fa = fm;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(best)
}

/// Sectional Poincaré map P_t at `x`, applied to the normal vector with frame
/// coordinates `v`.
pub fn sectional_poincare(
    f: &VectorFieldDef,
    x: &Point,
    v: &Vector2<f64>,
    t: f64,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<SectionHit> {
    let from = normal_frame(f, x, pcfg.frame_eps)?;
    let radius = pcfg.beta_sec * from.speed;
    if v.norm() > radius {
        return Err(Error::InvalidInput(format!(
            "|v| = {} exceeds the section radius {radius}",
            v.norm()
        )));
    }
    let (c, d) = pair_flow(f, x, &from.embed(v), t, cfg)?;
    let to = normal_frame(f, &c, pcfg.frame_eps)?;
    let tube = pcfg.tube_factor * to.speed;
    let roots = section_crossings(f, &c, &to.unit_field, &d, pcfg.tau_max, tube, cfg)?.ok_or(Error::OutOfDomain)?;
    let hit = roots.first().ok_or(Error::NoCrossing)?;
    Ok(SectionHit {
        image: to.coords(&hit.disp),
        tau: hit.tau,
        target: to,
    })
}

/// P*_t(u) = |X(φ_t x)|⁻¹ · P_t(|X(x)|·u).
pub fn rescaled_sectional_poincare(
    f: &VectorFieldDef,
    x: &Point,
    u: &Vector2<f64>,
    t: f64,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<SectionHit> {
    let speed = f.eval(x).norm();
    let hit = sectional_poincare(f, x, &(u * speed), t, cfg, pcfg)?;
    Ok(SectionHit {
        image: hit.image / hit.target.speed,
        ..hit
    })
}

/// π_{y,x}(u) = |X(x)|⁻¹ · (φ_s(y + |X(y)|·u) − x), with s the unique time in
/// (−s_max, s_max) at which the orbit meets the normal plane at x. Returns
/// the image in frame coordinates at x together with s.
pub fn identification_project(
    f: &VectorFieldDef,
    y: &Point,
    x: &Point,
    u: &Vector2<f64>,
    cfg: &IntegratorConfig,
    pcfg: &PoincareConfig,
) -> Result<(Vector2<f64>, f64)> {
    let fy = normal_frame(f, y, pcfg.frame_eps)?;
    let fx = normal_frame(f, x, pcfg.frame_eps)?;
    if u.norm() >= pcfg.beta0 {
        return Err(Error::InvalidInput(format!("|u| = {} exceeds beta0", u.norm())));
    }
    if (x - y).norm() >= pcfg.r0_factor * fx.speed {
        return Err(Error::InvalidInput(format!(
            "|x − y| = {} exceeds r0 = {}",
            (x - y).norm(),
            pcfg.r0_factor * fx.speed
        )));
    }
    let z0 = (y + fy.embed(u) * fy.speed) - x;
    let tube = pcfg.tube_factor * fx.speed;
    let roots = section_crossings(f, x, &fx.unit_field, &z0, pcfg.s_max, tube, cfg)?.ok_or(Error::NoCrossing)?;
    match roots.as_slice() {
        [] => Err(Error::NoCrossing),
        [only] => Ok((fx.coords(&only.disp) / fx.speed, only.tau)),
        many => Err(Error::AmbiguousCrossing { count: many.len() }),
    }
}
