#![allow(dead_code)]

use std::sync::OnceLock;

use shflow_core::field::{Point, VectorFieldDef};
use shflow_core::flow::{trajectory, IntegratorConfig};

pub fn lorenz() -> VectorFieldDef {
    VectorFieldDef::lorenz_classic()
}

/// 400 points on the Lorenz attractor, 0.37 apart in time, after a
/// transient of 50 from (1, 1, 1).
pub fn attractor() -> &'static [Point] {
    static PTS: OnceLock<Vec<Point>> = OnceLock::new();
    PTS.get_or_init(|| {
        let f = lorenz();
        let cfg = IntegratorConfig::default();
        let start = shflow_core::flow::flow(&f, &Point::new(1.0, 1.0, 1.0), 50.0, &cfg).unwrap();
        trajectory(&f, &start, 0.0, 0.37, 399, &cfg)
            .unwrap()
            .into_iter()
            .map(|s| s.x)
            .collect()
    })
}

/// Attractor points whose speed exceeds `min_speed`.
pub fn regular_attractor(min_speed: f64) -> Vec<Point> {
    let f = lorenz();
    attractor()
        .iter()
        .copied()
        .filter(|x| f.eval(x).norm() > min_speed)
        .collect()
}
