//! Brownian increments generated on a fine grid and summed onto coarser ones.

use delay_cir::model::TimeGrid;
use delay_cir::noise::{generate, increment_at};

fn main() {
    let fine = TimeGrid::new(0.0, 1.0, 2.0, 16).unwrap();
    let coarse = TimeGrid::new(0.0, 1.0, 2.0, 4).unwrap();
    let noise = generate(7, 3, &fine);
    let on_coarse = noise.on_grid(&coarse).unwrap();
    println!(
        "fine steps {}, coarse steps {}",
        noise.increments().len(),
        on_coarse.len()
    );
    println!(
        "W(T) from fine {:.12}",
        noise.increments().iter().sum::<f64>()
    );
    println!("W(T) from coarse {:.12}", on_coarse.iter().sum::<f64>());
    // Any increment can be drawn on its own.
    println!(
        "dW_5 = {:.12} = {:.12}",
        noise.increments()[5],
        increment_at(7, 3, &fine, 5)
    );
}
