// Run an experiment config: a preset path from the command line, or a small
// built-in soundness run. Margins go to a CSV in the system temp dir.
//
//     cargo run --release --example run_experiment -- presets/concentration.json

use std::path::Path;

use entmark::experiments::{run, TrialConfig};

const SMALL: &str = r#"{"experiment": "soundness", "scheme": "complete", "lambda": 16,
    "trials": 200, "seed": 1, "text_len": 256}"#;

pub fn run_example() -> entmark::Result<()> {
    run_config(&serde_json::from_str(SMALL)?)
}

fn run_config(cfg: &TrialConfig) -> entmark::Result<()> {
    let outcome = run(cfg)?;
    for c in &outcome.checks {
        println!("{:>6}  {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail);
    }
    println!("{} of {} in {:.2} s", outcome.successes, outcome.trials, outcome.wall_time_secs);
    let csv = std::env::temp_dir().join(format!("entmark_{}_margins.csv", cfg.name()));
    outcome.write_margins_csv(std::fs::File::create(&csv)?)?;
    println!("margins written to {}", csv.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    match std::env::args().nth(1) {
        Some(path) => run_config(&TrialConfig::load(Path::new(&path))?),
        None => run_example(),
    }
}
