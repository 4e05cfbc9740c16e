//! Fraction of paths that reach zero or below, by scheme, near the Feller boundary.

use delay_cir::experiments::{positivity_census, CensusScheme};
use delay_cir::model::{ModelSpec, TimeGrid};
use delay_cir::scheme::BaselineKind;

fn main() {
    let model = ModelSpec::classical(1.0, 0.3, 0.7, 0.05, 1.0, 0.0, 1.0);
    let grid = TimeGrid::new(0.0, 1.0, 1.0, 10).unwrap();
    for scheme in [
        CensusScheme::Implicit,
        CensusScheme::Baseline(BaselineKind::TruncatedEuler),
        CensusScheme::Baseline(BaselineKind::SymmetrizedEuler),
    ] {
        let c = positivity_census(scheme, &model, &grid, 10_000, 5).unwrap();
        println!("{:>12}: {:.4}", scheme.name(), c.fraction_nonpositive);
    }
}
