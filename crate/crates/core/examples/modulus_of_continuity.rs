//! Empirical modulus of continuity of simulated paths against sqrt(delta |log delta|).

use delay_cir::experiments::modulus_scaling;
use delay_cir::model::{ModelSpec, TimeGrid};

fn main() {
    let model = ModelSpec {
        b: 0.2,
        ..ModelSpec::classical(1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 1.5)
    };
    let grid = TimeGrid::new(model.t0, model.tau, model.horizon, 256).unwrap();
    let t = modulus_scaling(&model, &grid, 1_000, &[1, 2, 4, 8, 16, 32, 64], 1.0, 2).unwrap();
    for r in &t.rows {
        println!(
            "delta {:.5}: E[w] = {:.5} +- {:.1e}",
            r.delta, r.moment.mean, r.moment.std_err
        );
    }
    if let Some((slope, _, r2)) = t.fit {
        println!("slope against sqrt(delta |log delta|): {slope:.3} (r^2 {r2:.4})");
    }
}
