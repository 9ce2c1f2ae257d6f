//! Analytic vector fields on R³, their exact Jacobians, and the location and
//! classification of their zeros.
//!
//! Three families are supported: the Lorenz system, constant-coefficient
//! linear fields, and polynomial fields of total degree at most four. Every
//! field carries an analysis box, which sets the default escape radius of the
//! integrator and the default blowup chart radius.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Maximum total degree of a polynomial field.
pub const MAX_POLY_DEGREE: u32 = 4;

/// `coeff · x^p₀ · y^p₁ · z^p₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: [u32; 3],
}

impl Monomial {
    pub fn new(coeff: f64, powers: [u32; 3]) -> Self {
        Monomial { coeff, powers }
    }

    fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    fn eval(&self, x: &Point) -> f64 {
        self.coeff
            * x[0].powi(self.powers[0] as i32)
            * x[1].powi(self.powers[1] as i32)
            * x[2].powi(self.powers[2] as i32)
    }

    fn partial(&self, x: &Point, var: usize) -> f64 {
        let p = self.powers[var];
        if p == 0 {
            return 0.0;
        }
        let mut v = self.coeff * p as f64;
        for k in 0..3 {
            let e = if k == var { p - 1 } else { self.powers[k] };
            v *= x[k].powi(e as i32);
        }
        v
    }
}

/// A polynomial vector field given as one monomial list per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialField {
    components: [Vec<Monomial>; 3],
}

impl PolynomialField {
    pub fn new(components: [Vec<Monomial>; 3]) -> Result<Self> {
        for (c, terms) in components.iter().enumerate() {
            for m in terms {
                if !m.coeff.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite coefficient in component {c}")));
                }
                if m.degree() > MAX_POLY_DEGREE {
                    return Err(Error::InvalidInput(format!(
                        "monomial of degree {} in component {c} exceeds {MAX_POLY_DEGREE}",
                        m.degree()
                    )));
                }
            }
        }
        Ok(PolynomialField { components })
    }

    pub fn components(&self) -> &[Vec<Monomial>; 3] {
        &self.components
    }

    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .flatten()
            .map(Monomial::degree)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    Linear { matrix: Matrix3<f64> },
    Polynomial(PolynomialField),
}

/// Axis-aligned analysis region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Point,
    pub hi: Point,
}

impl DomainBox {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if (0..3).any(|k| !(lo[k] < hi[k]) || !lo[k].is_finite() || !hi[k].is_finite()) {
            return Err(Error::InvalidInput(format!("degenerate box lo={lo:?} hi={hi:?}")));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn cube(half_width: f64) -> Self {
        DomainBox {
            lo: Point::repeat(-half_width),
            hi: Point::repeat(half_width),
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }
}

/// An analytic vector field together with its analysis box.
///
/// `reversed` flips the sign of the field, which turns the flow φ_t into
/// φ_{−t}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldDef {
    pub kind: FieldKind,
    pub domain: DomainBox,
    #[serde(default)]
    pub reversed: bool,
}

impl VectorFieldDef {
    pub fn lorenz(sigma: f64, rho: f64, beta: f64) -> Self {
        VectorFieldDef {
            kind: FieldKind::Lorenz { sigma, rho, beta },
            domain: DomainBox::cube(30.0),
            reversed: false,
        }
    }

    /// The classical parameters σ = 10, ρ = 28, β = 8/3.
    pub fn lorenz_classic() -> Self {
        Self::lorenz(10.0, 28.0, 8.0 / 3.0)
    }

    pub fn linear(matrix: Matrix3<f64>) -> Self {
        VectorFieldDef {
            kind: FieldKind::Linear { matrix },
            domain: DomainBox::cube(5.0),
            reversed: false,
        }
    }

    pub fn polynomial(poly: PolynomialField) -> Self {
        VectorFieldDef {
            kind: FieldKind::Polynomial(poly),
            domain: DomainBox::cube(5.0),
            reversed: false,
        }
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        self.domain = domain;
        self
    }

    /// The field −X.
    pub fn reversed(&self) -> Self {
        let mut f = self.clone();
        f.reversed = !f.reversed;
        f
    }

    fn sign(&self) -> f64 {
        if self.reversed {
            -1.0
        } else {
            1.0
        }
    }

    pub fn eval(&self, x: &Point) -> Vector3<f64> {
        let v = match &self.kind {
            FieldKind::Lorenz { sigma, rho, beta } => Vector3::new(
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ),
            FieldKind::Linear { matrix } => matrix * x,
            FieldKind::Polynomial(p) => Vector3::from_fn(|c, _| p.components[c].iter().map(|m| m.eval(x)).sum()),
        };
        v * self.sign()
    }

    pub fn jacobian(&self, x: &Point) -> Matrix3<f64> {
        let j = match &self.kind {
            FieldKind::Lorenz { sigma, rho, beta } => Matrix3::new(
                -sigma,
                *sigma,
                0.0, //
                rho - x[2],
                -1.0,
                -x[0], //
                x[1],
                x[0],
                -beta,
            ),
            FieldKind::Linear { matrix } => *matrix,
            FieldKind::Polynomial(p) => {
                Matrix3::from_fn(|c, var| p.components[c].iter().map(|m| m.partial(x, var)).sum())
            }
        };
        j * self.sign()
    }

    pub fn divergence(&self, x: &Point) -> f64 {
        self.jacobian(x).trace()
    }
}

pub fn eval_field(f: &VectorFieldDef, x: &Point) -> Vector3<f64> {
    f.eval(x)
}

pub fn eval_jacobian(f: &VectorFieldDef, x: &Point) -> Matrix3<f64> {
    f.jacobian(x)
}

/// Tunables for the Newton search over the seed grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub grid: usize,
    pub max_iter: usize,
    /// Deduplication radius as a multiple of `tol`.
    pub dedup_factor: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            grid: 9,
            max_iter: 50,
            dedup_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularitySearch {
    pub roots: Vec<Point>,
    /// Seeds abandoned because Newton met a numerically singular Jacobian.
    pub skipped_seeds: usize,
    pub dedup_radius: f64,
}

fn newton_root(f: &VectorFieldDef, seed: Point, tol: f64, max_iter: usize) -> Result<Option<Point>> {
    let mut x = seed;
    for _ in 0..max_iter {
        let v = f.eval(&x);
        let r = v.norm();
        if !r.is_finite() {
            return Ok(None);
        }
        let j = f.jacobian(&x);
        let scale = j.abs().max().max(f64::MIN_POSITIVE);
        if j.determinant().abs() <= 1e-13 * scale.powi(3) {
            return Err(Error::SingularJacobian);
        }
        let lu = j.lu();
        let dx = match lu.solve(&v) {
            Some(dx) => dx,
            None => return Err(Error::SingularJacobian),
        };
        x -= dx;
        if dx.norm() <= 1e-15 * (1.0 + x.norm()) || r < 1e-3 * tol {
            break;
        }
    }
    let v = f.eval(&x);
    if v.norm() < tol {
        // one polishing step
        let j = f.jacobian(&x);
        if let Some(dx) = j.lu().solve(&v) {
            let y = x - dx;
            if f.eval(&y).norm() <= v.norm() {
                x = y;
            }
        }
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

/// Newton iteration from a uniform grid of seeds over `domain`; returns the
/// deduplicated zeros of `f` that lie in the box.
pub fn find_singularities(
    f: &VectorFieldDef,
    domain: &DomainBox,
    tol: f64,
    cfg: &NewtonConfig,
) -> Result<SingularitySearch> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let n = cfg.grid.max(1);
    let dedup_radius = cfg.dedup_factor * tol;
    let coord = |k: usize, i: usize| {
        if n == 1 {
            0.5 * (domain.lo[k] + domain.hi[k])
        } else {
            domain.lo[k] + (domain.hi[k] - domain.lo[k]) * i as f64 / (n - 1) as f64
        }
    };
    let mut roots: Vec<Point> = Vec::new();
    let mut skipped = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let seed = Point::new(coord(0, i), coord(1, j), coord(2, k));
                match newton_root(f, seed, tol, cfg.max_iter) {
                    Ok(Some(r)) => {
                        if domain.contains(&r) && roots.iter().all(|q| (q - r).norm() >= dedup_radius) {
                            roots.push(r);
                        }
                    }
                    Ok(None) => {}
                    Err(Error::SingularJacobian) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    roots.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(SingularitySearch {
        roots,
        skipped_seeds: skipped,
        dedup_radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingularityFlags {
    pub hyperbolic: bool,
    pub simple_real: bool,
    pub lorenz_like_forward: bool,
    pub lorenz_like_backward: bool,
}

/// Linearization data at a zero of the field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityInfo {
    pub location: Point,
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: [Eigenvalue; 3],
    /// Unit eigenvectors, present for real eigenvalues only.
    pub eigenvectors: [Option<Vector3<f64>>; 3],
    pub jacobian: Matrix3<f64>,
    pub flags: SingularityFlags,
}

impl SingularityInfo {
    /// Real parts λ₁ ≤ λ₂ ≤ λ₃.
    pub fn real_parts(&self) -> [f64; 3] {
        [self.eigenvalues[0].re, self.eigenvalues[1].re, self.eigenvalues[2].re]
    }

    pub fn is_lorenz_like(&self) -> bool {
        self.flags.lorenz_like_forward || self.flags.lorenz_like_backward
    }

    /// Eigenvector of the most contracting eigenvalue (strong stable
    /// direction), or of the most expanding one for −X.
    pub fn strong_stable_direction(&self) -> Option<Vector3<f64>> {
        if self.flags.lorenz_like_forward {
            self.eigenvectors[0]
        } else if self.flags.lorenz_like_backward {
            self.eigenvectors[2]
        } else {
            None
        }
    }

    pub fn unstable_direction(&self) -> Option<Vector3<f64>> {
        if self.flags.lorenz_like_forward {
            self.eigenvectors[2]
        } else if self.flags.lorenz_like_backward {
            self.eigenvectors[0]
        } else {
            None
        }
    }
}

/// Flip `v` so that its largest-magnitude component is positive.
pub fn sign_normalize(v: Vector3<f64>) -> Vector3<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

fn real_eigenvector(a: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let m = a - Matrix3::identity() * lambda;
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three singular values");
    let v: Vector3<f64> = v_t.row(imin).transpose();
    sign_normalize(v.normalize())
}

fn lorenz_like(l: [f64; 3]) -> bool {
    l[0] < l[1] && l[1] < 0.0 && 0.0 < l[2] && l[1] + l[2] > 0.0 && l[0].abs() > l[2]
}

/// Eigen-analysis of DX at a zero of the field.
pub fn classify_singularity(f: &VectorFieldDef, sigma: &Point, tol: f64) -> Result<SingularityInfo> {
    let residual = f.eval(sigma).norm();
    if !(residual < tol) {
        return Err(Error::NotASingularity { residual });
    }
    let a = f.jacobian(sigma);
    let raw = a.complex_eigenvalues();
    let mut eig: Vec<Eigenvalue> = raw
        .iter()
        .map(|z| {
            let modulus = (z.re * z.re + z.im * z.im).sqrt();
            let im = if z.im.abs() < tol * (1.0 + modulus) { 0.0 } else { z.im };
            Eigenvalue { re: z.re, im }
        })
        .collect();
    eig.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let eigenvalues = [eig[0], eig[1], eig[2]];

    let all_real = eigenvalues.iter().all(Eigenvalue::is_real);
    let hyperbolic = eigenvalues.iter().all(|e| e.re.abs() > tol);
    let spread = 1.0 + eigenvalues.iter().map(|e| e.re.abs()).fold(0.0, f64::max);
    let separated = (eigenvalues[1].re - eigenvalues[0].re) > tol * spread
        && (eigenvalues[2].re - eigenvalues[1].re) > tol * spread;
    let simple_real = all_real && separated;

    let eigenvectors = [0, 1, 2].map(|k| {
        eigenvalues[k]
            .is_real()
            .then(|| real_eigenvector(&a, eigenvalues[k].re))
    });

    let l = [eigenvalues[0].re, eigenvalues[1].re, eigenvalues[2].re];
    let neg = [-l[2], -l[1], -l[0]];
    let flags = SingularityFlags {
        hyperbolic,
        simple_real,
        lorenz_like_forward: simple_real && lorenz_like(l),
        lorenz_like_backward: simple_real && lorenz_like(neg),
    };
    Ok(SingularityInfo {
        location: *sigma,
        eigenvalues,
        eigenvectors,
        jacobian: a,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn saddle() -> VectorFieldDef {
        VectorFieldDef::linear(Matrix3::from_diagonal(&Vector3::new(-3.0, -1.0, 2.0)))
    }

    #[test]
    fn linear_eval() {
        let v = saddle().eval(&Point::new(0.0, 0.0, 1.0));
        assert_eq!(v, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn lorenz_eval_by_hand() {
        let f = VectorFieldDef::lorenz_classic();
        assert_eq!(f.eval(&Point::zeros()), Vector3::zeros());
        let v = f.eval(&Point::new(1.0, 1.0, 1.0));
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert_relative_eq!(v[2], 1.0 - 8.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn lorenz_jacobian_at_origin() {
        let j = VectorFieldDef::lorenz_classic().jacobian(&Point::zeros());
        let expected = Matrix3::new(-10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0);
        assert_eq!(j, expected);
    }

    #[test]
    fn polynomial_power_rule() {
        let p = PolynomialField::new([vec![Monomial::new(1.0, [2, 0, 0])], vec![], vec![]]).unwrap();
        let j = VectorFieldDef::polynomial(p).jacobian(&Point::new(3.0, 0.0, 0.0));
        let mut expected = Matrix3::zeros();
        expected[(0, 0)] = 6.0;
        assert_eq!(j, expected);
    }

    #[test]
    fn polynomial_degree_cap() {
        let err = PolynomialField::new([vec![Monomial::new(1.0, [2, 2, 1])], vec![], vec![]]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        let err = PolynomialField::new([vec![Monomial::new(f64::NAN, [1, 0, 0])], vec![], vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn reversed_field_negates() {
        let f = VectorFieldDef::lorenz_classic();
        let x = Point::new(0.3, -2.0, 5.0);
        assert_eq!(f.reversed().eval(&x), -f.eval(&x));
        assert_eq!(f.reversed().jacobian(&x), -f.jacobian(&x));
    }

    #[test]
    fn saddle_has_single_root() {
        let s = find_singularities(&saddle(), &DomainBox::cube(5.0), 1e-9, &NewtonConfig::default()).unwrap();
        assert_eq!(s.roots.len(), 1);
        assert!(s.roots[0].norm() < 1e-12);
    }

    #[test]
    fn lorenz_three_equilibria() {
        let f = VectorFieldDef::lorenz_classic();
        let s = find_singularities(&f, &DomainBox::cube(30.0), 1e-9, &NewtonConfig::default()).unwrap();
        assert_eq!(s.roots.len(), 3);
        let c = 72f64.sqrt();
        let expected = [Point::new(-c, -c, 27.0), Point::zeros(), Point::new(c, c, 27.0)];
        for (r, e) in s.roots.iter().zip(expected.iter()) {
            assert!((r - e).norm() < 1e-9, "{r:?} vs {e:?}");
        }
        for (i, a) in s.roots.iter().enumerate() {
            assert!(f.eval(a).norm() < 1e-9);
            for b in &s.roots[i + 1..] {
                assert!((a - b).norm() >= s.dedup_radius);
            }
        }
    }

    #[test]
    fn lorenz_subcritical_rho_only_origin() {
        let f = VectorFieldDef::lorenz(10.0, 0.5, 8.0 / 3.0);
        let s = find_singularities(&f, &DomainBox::cube(30.0), 1e-9, &NewtonConfig::default()).unwrap();
        assert_eq!(s.roots.len(), 1);
        assert!(s.roots[0].norm() < 1e-12);
    }

    #[test]
    fn classify_saddle() {
        let info = classify_singularity(&saddle(), &Point::zeros(), 1e-9).unwrap();
        assert_eq!(info.real_parts(), [-3.0, -1.0, 2.0]);
        assert!(info.flags.hyperbolic && info.flags.simple_real);
        assert!(info.flags.lorenz_like_forward);
        assert!(!info.flags.lorenz_like_backward);
        assert_eq!(info.eigenvectors[0], Some(Vector3::x()));
        assert_eq!(info.eigenvectors[2], Some(Vector3::z()));
    }

    #[test]
    fn classify_lorenz_origin_closed_form() {
        let f = VectorFieldDef::lorenz_classic();
        let info = classify_singularity(&f, &Point::zeros(), 1e-9).unwrap();
        let d = 1201f64.sqrt();
        let expected = [(-11.0 - d) / 2.0, -8.0 / 3.0, (-11.0 + d) / 2.0];
        for (got, want) in info.real_parts().iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(info.flags.lorenz_like_forward);
        assert_eq!(info.eigenvectors[1], Some(Vector3::z()));
    }

    #[test]
    fn classify_lorenz_nontrivial_equilibrium_is_spiral() {
        let f = VectorFieldDef::lorenz_classic();
        let c = 72f64.sqrt();
        let info = classify_singularity(&f, &Point::new(c, c, 27.0), 1e-9).unwrap();
        assert!(!info.flags.simple_real);
        assert!(info.eigenvalues.iter().filter(|e| e.im != 0.0).count() == 2);
        assert!(info.eigenvectors.iter().filter(|v| v.is_some()).count() == 1);
    }

    #[test]
    fn classify_rejects_regular_point() {
        let f = VectorFieldDef::lorenz_classic();
        let err = classify_singularity(&f, &Point::new(1.0, 1.0, 1.0), 1e-9).unwrap_err();
        assert!(matches!(err, Error::NotASingularity { .. }));
    }

    #[test]
    fn singular_jacobian_seeds_are_skipped() {
        // X = (x² − 1, y, z): DX is singular on the plane x = 0, so the seeds
        // there are skipped while Newton from the other seeds still converges.
        let p = PolynomialField::new([
            vec![Monomial::new(1.0, [2, 0, 0]), Monomial::new(-1.0, [0, 0, 0])],
            vec![Monomial::new(1.0, [0, 1, 0])],
            vec![Monomial::new(1.0, [0, 0, 1])],
        ])
        .unwrap();
        let f = VectorFieldDef::polynomial(p);
        let s = find_singularities(&f, &DomainBox::cube(2.0), 1e-9, &NewtonConfig::default()).unwrap();
        assert_eq!(s.skipped_seeds, 81);
        assert_eq!(s.roots, vec![Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)]);
    }
}
