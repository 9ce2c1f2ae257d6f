use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use shflow_core::field::{
    classify_singularity, find_singularities, Monomial, NewtonConfig, Point, PolynomialField, VectorFieldDef,
};

fn central_fd(f: &VectorFieldDef, x: &Point, h: f64) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        let mut e = Vector3::zeros();
        e[j] = h;
        m.set_column(j, &((f.eval(&(x + e)) - f.eval(&(x - e))) / (2.0 * h)));
    }
    m
}

/// Degree ≤ 4, drawn directly so nothing is rejected.
fn monomial() -> impl Strategy<Value = Monomial> {
    (-2.0..2.0f64, 0u32..=4)
        .prop_flat_map(|(c, i)| (Just(c), Just(i), 0..=4 - i))
        .prop_flat_map(|(c, i, j)| (Just(c), Just(i), Just(j), 0..=4 - i - j))
        .prop_map(|(c, i, j, k)| Monomial::new(c, [i, j, k]))
}

fn polynomial() -> impl Strategy<Value = VectorFieldDef> {
    prop::array::uniform3(prop::collection::vec(monomial(), 1..5))
        .prop_map(|c| VectorFieldDef::polynomial(PolynomialField::new(c).unwrap()))
}

fn matrix(range: f64) -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-range..range).prop_map(|a| Matrix3::from_row_slice(&a))
}

fn field() -> impl Strategy<Value = VectorFieldDef> {
    prop_oneof![
        (5.0..15.0f64, 0.5..40.0f64, 1.0..4.0f64).prop_map(|(s, r, b)| VectorFieldDef::lorenz(s, r, b)),
        matrix(3.0).prop_map(VectorFieldDef::linear),
        polynomial(),
    ]
}

fn point() -> impl Strategy<Value = Point> {
    prop::array::uniform3(-2.0..2.0f64).prop_map(Point::from)
}

fn orthogonal() -> impl Strategy<Value = Matrix3<f64>> {
    matrix(1.0).prop_filter_map("full rank", |m| {
        let q = m.qr().q();
        (m.determinant().abs() > 1e-3).then_some(q)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jacobian_is_the_derivative(f in field(), x in point()) {
        let jac = f.jacobian(&x);
        let h = 1e-3;
        let e1 = (central_fd(&f, &x, h) - jac).norm();
        let e2 = (central_fd(&f, &x, h / 2.0) - jac).norm();
        let scale = 1.0 + jac.norm() + f.eval(&x).norm();
        // Central differences of a polynomial leave an O(h²) error; below
        // the rounding floor there is no order left to observe.
        prop_assert!(e1 <= 1e3 * h * h * scale, "e(h) = {e1}");
        if e1 > 1e-8 * scale {
            prop_assert!((e1 / e2).log2() >= 1.9, "order {}", (e1 / e2).log2());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roots_are_zeros_and_distinct(f in field()) {
        let tol = 1e-9;
        let cfg = NewtonConfig::default();
        let Ok(search) = find_singularities(&f, &f.domain, tol, &cfg) else {
            return Ok(());
        };
        for r in &search.roots {
            prop_assert!(f.eval(r).norm() < tol);
        }
        for (i, a) in search.roots.iter().enumerate() {
            for b in &search.roots[i + 1..] {
                prop_assert!((a - b).norm() >= search.dedup_radius);
            }
        }
    }

    #[test]
    fn spectrum_is_conjugation_invariant(a in matrix(3.0), q in orthogonal()) {
        prop_assume!(a.determinant().abs() > 1e-2);
        let tol = 1e-9;
        let s1 = classify_singularity(&VectorFieldDef::linear(a), &Point::zeros(), tol).unwrap();
        let s2 = classify_singularity(&VectorFieldDef::linear(q * a * q.transpose()), &Point::zeros(), tol).unwrap();
        let key = |s: &shflow_core::field::SingularityInfo| {
            let mut v: Vec<(f64, f64)> = s.eigenvalues.iter().map(|e| (e.re, e.im)).collect();
            v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            v
        };
        let scale = 1.0 + a.norm();
        for (x, y) in key(&s1).iter().zip(key(&s2)) {
            prop_assert!((x.0 - y.0).abs() <= 1e-9 * scale, "{x:?} vs {y:?}");
            prop_assert!((x.1.abs() - y.1.abs()).abs() <= 1e-9 * scale, "{x:?} vs {y:?}");
        }
    }
}
