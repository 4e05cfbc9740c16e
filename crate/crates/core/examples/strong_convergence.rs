//! Strong error of the implicit scheme against a fine coupled reference,
//! with log-log rate fits.

use delay_cir::experiments::{fit_rate, strong_error_study, RateVariant};
use delay_cir::model::ModelSpec;

fn main() {
    let model = ModelSpec {
        b: 0.2,
        ..ModelSpec::classical(1.0, 1.0, 0.25, 1.0, 0.5, 0.0, 1.5)
    };
    let table = strong_error_study(&model, &[8, 16, 32, 64], 512, 2_000, &[1.0, 2.0], 1).unwrap();
    println!("   delta      p   grid error   uniform error   std err");
    for r in &table.rows {
        println!(
            "{:.6}  {:.1}   {:.4e}    {:.4e}      {:.2e}",
            r.delta, r.p, r.grid_error, r.uniform_error, r.std_err
        );
    }
    for p in [1.0, 2.0] {
        for v in [RateVariant::PlainDelta, RateVariant::DeltaLogDelta] {
            let f = fit_rate(&table, p, v).unwrap();
            println!(
                "p = {p}: {} slope {:.3} (r^2 {:.4})",
                v.name(),
                f.slope,
                f.r_squared
            );
        }
    }
}
