//! Pathwise domination of a classical CIR path by the delay path on shared noise.

use delay_cir::experiments::comparison_census;
use delay_cir::model::{GammaSpec, ModelSpec};

fn main() {
    let upper = ModelSpec {
        b: 0.5,
        gamma: GammaSpec::Sinusoid {
            level: 1.0,
            amplitude: 0.3,
            angular_frequency: 6.0,
        },
        ..ModelSpec::classical(1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 1.5)
    };
    let gamma_inf = upper.gamma.bounds(upper.t0, upper.horizon).unwrap().inf;
    let lower = ModelSpec {
        b: 0.0,
        gamma: GammaSpec::constant(gamma_inf),
        ..upper.clone()
    };
    let c = comparison_census(&upper, &lower, 64, 1_000, 9).unwrap();
    println!(
        "{} of {} grid points below the classical path",
        c.violations, c.pairs
    );
}
