//! Loads the quick config, runs it into a temporary directory, then probes
//! one of the checkpoints it wrote.

use evolving_ac::experiment::{load_config, probe, run_experiment};

fn main() -> evolving_ac::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.json");
    let out = std::env::temp_dir().join("evolving-ac-quick");
    let config = load_config(path, &[format!("output_dir={}", out.display())])?;
    let outcome = run_experiment(&config)?;
    if let Some(report) = &outcome.report {
        print!("{}", report.to_table());
    }
    let checkpoint = out.join("checkpoints").join("T4096_seed1.json");
    println!("{}", serde_json::to_string_pretty(&probe(checkpoint)?)?);
    Ok(())
}
