//! ERM vs channel-aware comparison on MNIST over four channel scenarios.
//!
//! Expects the IDX files in $CHANNEL_PAC_DATA_DIR (or data/mnist). Pass
//! `--blobs` for the small synthetic variant, or a config path.
//!
//! cargo run --release --example mnist_table [-- --blobs | -- config.json]

use std::time::Instant;

use channel_pac::experiment::{run_table, ExperimentConfig};

fn main() -> channel_pac::Result<()> {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("--blobs") => ExperimentConfig::blobs_demo(),
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::mnist_default(),
    };
    let start = Instant::now();
    let mut progress = |m: &str| eprintln!("[{:>5.0}s] {m}", start.elapsed().as_secs_f64());
    let table = run_table(&cfg, &mut progress)?;
    print!("{}", table.csv_string()?);
    println!();
    println!(
        "{:<18} {:>9} {:>9} {:>12} {:>9} significant",
        "scenario", "ERM", "ours", "improvement", "2x SE"
    );
    for s in &table.summaries {
        println!(
            "{:<18} {:>9.4} {:>9.4} {:>12.4} {:>9.4} {}",
            s.scenario,
            s.erm_risk,
            s.ours_risk,
            s.improvement,
            2.0 * s.pooled_stderr,
            s.significant
        );
    }
    Ok(())
}
