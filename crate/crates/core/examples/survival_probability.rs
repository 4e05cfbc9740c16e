//! Survival probability E[exp(-int X)] of a Cox process with delay-CIR intensity.

use delay_cir::experiments::survival_probability;
use delay_cir::model::{ModelSpec, TimeGrid};

fn main() {
    let model = ModelSpec {
        b: 0.3,
        ..ModelSpec::classical(1.5, 0.04, 0.1, 0.03, 1.0, 0.0, 5.0)
    };
    for n in [32, 64] {
        let grid = TimeGrid::new(model.t0, model.tau, model.horizon, n).unwrap();
        let s = survival_probability(&model, &grid, 20_000, 1).unwrap();
        println!(
            "N = {n}: survival to T = 5 is {:.6} +- {:.1e}",
            s.mean, s.std_err
        );
    }
}
