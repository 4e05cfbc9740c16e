//! Simulates one path of the delay model and prints it on a coarse stride.

use delay_cir::model::{GammaSpec, InitialSegmentSpec, ModelSpec, TimeGrid};
use delay_cir::noise::{generate, sample_segment};
use delay_cir::scheme::{square_and_interpolate, ImplicitScheme};

fn main() {
    let model = ModelSpec {
        a: 2.0,
        b: 0.8,
        sigma: 0.5,
        tau: 0.25,
        t0: 0.0,
        horizon: 1.0,
        gamma: GammaSpec::Affine {
            level: 0.5,
            slope: 0.2,
        },
        initial: InitialSegmentSpec::Table {
            points: vec![(-0.25, 0.3), (-0.1, 0.6), (0.0, 0.4)],
        },
    };
    let grid = TimeGrid::new(model.t0, model.tau, model.horizon, 50).unwrap();
    let (seed, path) = (42, 0);
    let noise = generate(seed, path, &grid);
    let segment = sample_segment(&model.initial, &grid, seed, path).unwrap();
    let scheme = ImplicitScheme::new(&model, &grid).unwrap();
    let y = scheme.run(noise.increments(), &segment.values).unwrap();
    let x = square_and_interpolate(&y);

    println!(
        "max scaled residual {:.2e}",
        y.max_scaled_residual(&scheme, noise.increments())
    );
    for k in (-(grid.n() as isize)..=grid.k_max() as isize).step_by(10) {
        println!("t = {:+.3}  X = {:.6}", grid.time(k), x.at(k));
    }
    println!("X_hat(0.333) = {:.6}", x.eval(0.333));
}
