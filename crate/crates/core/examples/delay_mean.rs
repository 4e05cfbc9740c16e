//! Mean of the delay process from its integral recursion, compared with Monte Carlo.

use delay_cir::analytics::mean_delay_curve;
use delay_cir::experiments::mean_consistency_check;
use delay_cir::model::{ModelSpec, TimeGrid};

fn main() {
    let model = ModelSpec {
        b: 0.5,
        ..ModelSpec::classical(1.0, 1.0, 0.5, 0.5, 0.5, 0.0, 1.5)
    };
    let grid = TimeGrid::new(model.t0, model.tau, model.horizon, 64).unwrap();
    let curve = mean_delay_curve(&model, &grid, |t| model.initial.mean_at(t)).unwrap();
    println!("method {:?}", curve.method);
    for k in (0..curve.times.len()).step_by(32) {
        println!("E[X({:.3})] = {:.10}", curve.times[k], curve.means[k]);
    }
    let check = mean_consistency_check(&model, &grid, 4_000, &[0.5, 1.0, 1.5], 3).unwrap();
    for c in &check.checkpoints {
        println!(
            "t = {:.2}: mc {:.5} +- {:.5}, oracle {:.5}, z = {:+.2}",
            c.t, c.estimate.mean, c.estimate.std_err, c.oracle, c.z
        );
    }
}
