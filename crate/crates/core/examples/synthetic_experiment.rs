//! Writes a simulated three-variable panel and a matching experiment config.
//!
//! ```text
//! cargo run --release -p qbvar-core --example synthetic_experiment -- demo
//! cargo run --release -p qbvar-cli -- run --config demo/experiment.toml
//! ```

use std::fs;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use qbvar::data::io::write_panel;
use qbvar::data::YearMonth;
use qbvar::dist::RngSeed;
use qbvar::sim::{to_panel, SimErrors, VarProcess};

const CONFIG: &str = r#"data = "panel.csv"
target = "oil"
companions = ["cons", "pred"]
benchmark = "bvar"
quantiles = [0.1, 0.5, 0.9]
seed = 1
output_dir = "run"

[[models]]
kind = "qbvar"
lags = 2

[[models]]
kind = "bvar"
lags = 2

[[models]]
kind = "rw"

[[evaluation_windows]]
label = "full"
start = "2010-01"
end = "2012-06"

[[event_windows]]
label = "late"
start = "2011-07"
end = "2012-06"

[[combinations]]
model = "qbvar"
benchmark = "bvar"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    fs::create_dir_all(&dir)?;
    #[rustfmt::skip]
    let phi = DMatrix::from_row_slice(3, 7, &[
        0.1, 0.4, 0.1, 0.0, 0.1, 0.0, 0.0,
        0.0, 0.1, 0.3, 0.0, 0.0, 0.1, 0.0,
        0.2, 0.0, 0.0, 0.5, 0.0, 0.0, 0.1,
    ]);
    let process = VarProcess {
        phi,
        lambda: DMatrix::from_column_slice(3, 1, &[0.5, 0.3, 0.2]),
        sigma: DVector::from_vec(vec![1.0, 0.5, 0.5]),
        errors: SimErrors::Gaussian,
    };
    let y = process.simulate(180, 200, &mut RngSeed(2024).rng())?;
    let panel = to_panel(&y, YearMonth::new(1998, 1)?, &["oil", "cons", "pred"])?;
    write_panel(&panel, &dir.join("panel.csv"))?;
    fs::write(dir.join("experiment.toml"), CONFIG)?;
    println!("wrote {}", dir.join("experiment.toml").display());
    Ok(())
}
