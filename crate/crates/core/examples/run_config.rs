//! Runs an experiment from a configuration file, as the command line does.
//!
//! `cargo run --example run_config -- examples/configs/strong_rate.cfg`

use std::path::PathBuf;

use delay_cir::cli::{parse_config, run_to_dir};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/configs/mean_check.cfg"
            ))
        });
    let config = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let out = std::env::temp_dir().join("delay-cir-example");
    for file in run_to_dir(&config, &out).unwrap() {
        println!("--- {}", file.display());
        print!("{}", std::fs::read_to_string(file).unwrap());
    }
}
