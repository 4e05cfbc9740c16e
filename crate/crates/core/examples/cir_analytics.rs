//! Classical CIR formulas: Laplace transform, negative moments and their bounds.

use delay_cir::analytics::{laplace_transform, lp_constant, neg_moment, CirParams, MomentValue};

fn main() {
    let params = CirParams::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
    let g = params.feller_ratio();
    println!("g = 2 a gamma / sigma^2 = {g}");
    for u in [0.5, 1.0, 2.0] {
        println!(
            "E[exp(-{u} X(1))] = {:.10}",
            laplace_transform(&params, u, 1.0).unwrap()
        );
    }
    for p in [0.5, 1.0, 1.5, 2.0, 3.0] {
        let r = neg_moment(&params, p, 1.0).unwrap();
        match r.value {
            MomentValue::Finite(v) => println!("E[X(1)^-{p}] = {v:.10}, bound {:?}", r.bound),
            MomentValue::Infinite => println!("E[X(1)^-{p}] = infinity"),
        }
    }
    for (g, p) in [(3.0, 1.5), (1.5, 1.0), (2.5, 2.0)] {
        println!(
            "L_p(g = {g}, p = {p}) = {:.10}",
            lp_constant(g, p, false).unwrap()
        );
    }
}
