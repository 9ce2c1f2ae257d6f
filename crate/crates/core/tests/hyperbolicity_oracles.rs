mod common;

use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix3x2, Vector3};
use proptest::prelude::*;
use shflow_core::field::Point;
use shflow_core::flow::{flow_jacobian_fd, tangent_flow, IntegratorConfig};
use shflow_core::hyperbolicity::{
    check_domination, estimate_splitting, evaluate_samples, lyapunov_exponents, pliss_strings, sample_attractor,
    sectional_factor_backward, HyperbolicityConfig, Outcome, SampleSet, SplittingEstimate,
};
use shflow_core::poincare::normal_frame;

const SPACING: f64 = 0.05;

/// 300 Lorenz samples and their splitting at T = 1.
fn lorenz_setup() -> &'static (SampleSet, SplittingEstimate) {
    static SETUP: OnceLock<(SampleSet, SplittingEstimate)> = OnceLock::new();
    SETUP.get_or_init(|| {
        let f = common::lorenz();
        let cfg = IntegratorConfig::default();
        let set = sample_attractor(&f, &Point::new(1.0, 1.0, 1.0), 50.0, 300, SPACING, &cfg, 1e-10).unwrap();
        let split = estimate_splitting(&f, &set, 1.0, &HyperbolicityConfig::default(), &cfg).unwrap();
        (set, split)
    })
}

fn line_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

fn normal_part(v: &Vector3<f64>, field: &Vector3<f64>) -> Vector3<f64> {
    let u = field.normalize();
    v - u * u.dot(v)
}

/// Every (i, m) pair, summed from scratch.
fn pliss_brute_force(a: &[f64], tau0: f64, gamma: f64) -> Vec<usize> {
    let bound = tau0 * gamma.ln();
    (0..a.len())
        .filter(|&i| (1..=a.len() - i).all(|m| a[i..i + m].iter().sum::<f64>() <= -(m as f64) * bound))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pliss_scan_matches_brute_force(
        tau0 in prop::sample::select(vec![1.0, 2.0, 5.0]),
        gamma in prop::sample::select(vec![1.05, 1.5]),
        // Centred on the threshold so both outcomes are common.
        unit in prop::collection::vec(-3.0..1.2f64, 0..=200),
    ) {
        let shift = tau0 * f64::ln(gamma);
        let a: Vec<f64> = unit.iter().map(|u| u * shift).collect();
        prop_assert_eq!(pliss_strings(&a, tau0, gamma).unwrap(), pliss_brute_force(&a, tau0, gamma));
    }
}

#[test]
fn lorenz_samples_stay_in_the_attractor_box() {
    let f = common::lorenz();
    let set = sample_attractor(
        &f,
        &Point::new(1.0, 1.0, 1.0),
        50.0,
        1000,
        SPACING,
        &IntegratorConfig::default(),
        1e-10,
    )
    .unwrap();
    for s in &set.samples {
        let p = s.x;
        assert!(
            p.x.abs() <= 25.0 && p.y.abs() <= 30.0 && (0.0..=55.0).contains(&p.z),
            "{p:?}"
        );
    }
}

#[test]
fn splitting_is_invariant_along_the_orbit() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let (set, split) = lorenz_setup();
    let lag = (split.t / SPACING).round() as usize;
    let mut checked = 0;
    for i in 0..set.len() - lag {
        let (a, b) = (&split.samples[i], &split.samples[i + lag]);
        let (Some(e), Some(fd), Some(e2), Some(fd2)) = (a.e_dir, a.f_dir, b.e_dir, b.f_dir) else {
            continue;
        };
        let (y, m) = tangent_flow(&f, &set.samples[i].x, split.t, &cfg).unwrap();
        let fy = f.eval(&y);
        let ae = line_angle(&normal_part(&(m * e), &fy), &e2);
        let af = line_angle(&normal_part(&(m * fd), &fy), &fd2);
        assert!(ae < 1e-3 && af < 1e-3, "sample {i}: E off by {ae:e}, F off by {af:e}");
        checked += 1;
    }
    assert!(
        checked as f64 >= 0.9 * (set.len() - lag) as f64,
        "only {checked} pairs converged"
    );
}

/// F at x is the top left singular vector of the 20-block product of ψ_1
/// along the preceding orbit, with every block from finite differences.
#[test]
fn unstable_direction_matches_svd_of_the_product() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let (set, split) = lorenz_setup();
    let orbit: Vec<Point> = set
        .history
        .iter()
        .copied()
        .chain(set.samples.iter().map(|s| s.x))
        .collect();
    let per_block = (1.0 / SPACING).round() as usize;
    for i in (0..set.len()).step_by(37) {
        let Some(fd) = split.samples[i].f_dir else { continue };
        let end = set.history.len() + i;
        let nodes: Vec<Point> = (0..=20).map(|k| orbit[end - (20 - k) * per_block]).collect();
        let frames: Vec<_> = nodes.iter().map(|p| normal_frame(&f, p, 1e-10).unwrap()).collect();
        let mut product = Matrix2::identity();
        for k in 0..20 {
            let d = flow_jacobian_fd(&f, &nodes[k], 1.0, 1e-6, &cfg).unwrap();
            let psi = frames[k + 1].basis().transpose() * d * frames[k].basis();
            // Keep the product bounded; only its directions matter.
            product = psi * product;
            product /= product.norm();
        }
        let svd = product.svd(true, false);
        let k = svd.singular_values.imax();
        let top: Matrix3x2<f64> = frames[20].basis();
        let oracle = top * svd.u.unwrap().column(k);
        let angle = line_angle(&oracle, &fd);
        assert!(angle < 1e-3, "sample {i}: angle {angle:e}");
    }
}

/// |Jac Dφ_{−T}| on span(X, v) = (‖X(φ_{−T}x)‖/‖X(x)‖)·‖ψ_{−T} v‖ for unit v ⊥ X.
#[test]
fn sectional_factor_splits_along_the_flow() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let (set, split) = lorenz_setup();
    for i in (0..set.len()).step_by(7) {
        let Some(fd) = split.samples[i].f_dir else { continue };
        let x = set.samples[i].x;
        let fx = f.eval(&x);
        // Backward Lorenz orbits expand volume like e^{13.7 T}; beyond T = 0.5
        // the weakly expanded flow column of Dφ_{−T} carries integration
        // error above 1e-6.
        for t in [0.1, 0.25, 0.5] {
            let got = sectional_factor_backward(&f, &x, &fx, &fd, t, &cfg).unwrap();
            let (y, m) = tangent_flow(&f, &x, -t, &cfg).unwrap();
            let fy = f.eval(&y);
            let want = fy.norm() / fx.norm() * normal_part(&(m * fd), &fy).norm();
            assert!((got / want - 1.0).abs() < 1e-6, "sample {i}, T = {t}: {got} vs {want}");
        }
    }
}

#[test]
fn domination_ratio_ignores_the_rescaling() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let (set, split) = lorenz_setup();
    let grid = [0.5, 1.0, 2.0, 4.0];
    let evals = evaluate_samples(&f, set, split, &grid, &cfg).unwrap();
    let mut seen = 0;
    for ev in &evals {
        if let Outcome::Evaluated { margins } = &ev.outcome {
            for (a, b) in margins.domination.iter().zip(&margins.domination_rescaled) {
                assert!((a - b).abs() <= 1e-12 * a.abs(), "sample {}: {a} vs {b}", ev.index);
            }
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn domination_constant_survives_halved_tolerance() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let hcfg = HyperbolicityConfig::default();
    let (set, split) = lorenz_setup();
    let coarse = check_domination(&f, set, split, &hcfg.t_grid, false, &hcfg, &cfg).unwrap();
    let fine_cfg = cfg.refined(0.5);
    let fine_split = estimate_splitting(&f, set, 1.0, &hcfg, &fine_cfg).unwrap();
    let fine = check_domination(&f, set, &fine_split, &hcfg.t_grid, false, &hcfg, &fine_cfg).unwrap();
    assert!(coarse.constant.is_some());
    assert_eq!(coarse.constant, fine.constant);
}

/// Reference values come from a run with half the renormalization step over
/// twice the time.
#[test]
fn lorenz_lyapunov_spectrum() {
    let f = common::lorenz();
    let cfg = IntegratorConfig::default();
    let start = common::attractor()[0];
    let run = lyapunov_exponents(&f, &start, 1000.0, 0.1, &cfg, 1e-10).unwrap();
    let check = lyapunov_exponents(&f, &start, 2000.0, 0.05, &cfg, 1e-10).unwrap();
    for r in [&run, &check] {
        let [l1, l2, l3] = r.tangent;
        assert!((l1 - 0.905).abs() < 0.02, "largest exponent {l1}");
        assert!(l2.abs() < 0.02, "neutral exponent {l2}");
        assert!(l3 < -14.0, "{l3}");
        assert!((l1 + l2 + l3 - r.mean_divergence).abs() < 1e-6);
        // div X = −σ − 1 − β is constant; the integrated mean keeps quadrature error.
        assert!((r.mean_divergence + 41.0 / 3.0).abs() < 1e-10);
    }
    assert!((run.tangent[0] - check.tangent[0]).abs() < 0.02);
}
