//! Checks which positivity and convergence conditions a model satisfies.

use delay_cir::model::{GammaSpec, InitialSegmentSpec, ModelSpec};

fn main() {
    let model = ModelSpec {
        a: 1.0,
        b: 0.3,
        sigma: 0.6,
        tau: 0.5,
        t0: 0.0,
        horizon: 2.0,
        gamma: GammaSpec::Sinusoid {
            level: 1.0,
            amplitude: 0.25,
            angular_frequency: 2.0 * std::f64::consts::PI,
        },
        initial: InitialSegmentSpec::LogNormal {
            median: 0.8,
            log_sd: 0.2,
        },
    };
    let report = model.validate().expect("valid model");
    println!(
        "gamma on [t0, T]: inf {:.4}, sup {:.4}",
        report.gamma.inf, report.gamma.sup
    );
    println!("2 a gamma_inf / sigma^2 = {:.4}", report.feller_ratio);
    println!(
        "Feller: {}, strong Feller: {}",
        report.feller_ok, report.strong_feller_ok
    );
    println!("scheme stays positive: {}", report.scheme_positive_ok);
    println!(
        "delay windows m = {}, admissible p < {:.4}",
        report.m, report.p_max
    );
}
