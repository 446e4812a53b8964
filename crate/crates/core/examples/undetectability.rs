// Compare watermarked responses with plain samples: per-position
// chi-square tests and, for a four-bit model, the full outcome histogram.

use entmark::experiments::{run_undetectability, KeyMode, ModelSetup, PrfMode, UndetectabilityConfig};
use entmark::model::SyntheticModelSpec;
use entmark::prf::SchemeId;

pub fn run_example() -> entmark::Result<()> {
    let cases = [
        (
            "bernoulli(0.3, 64), complete, fresh keys",
            SchemeId::Complete,
            SyntheticModelSpec::bernoulli(0.3, 64),
            8,
            PrfMode::Keyed,
        ),
        ("uniform(4), complete", SchemeId::Complete, SyntheticModelSpec::uniform(4), 2, PrfMode::Keyed),
        (
            "bernoulli(0.3, 64), substring, random oracle",
            SchemeId::Substring,
            SyntheticModelSpec::bernoulli(0.3, 64),
            2,
            PrfMode::Oracle,
        ),
    ];
    for (name, scheme, model, lambda, prf) in cases {
        let cfg = UndetectabilityConfig {
            scheme,
            setup: ModelSetup::new(model, None),
            lambda,
            b: None,
            samples: 5000,
            seed: 1,
            key_mode: KeyMode::Fresh,
            prf,
            max_outcomes: 4096,
        };
        let out = run_undetectability(&cfg)?;
        println!("{name}: passed {}", out.passed());
        for c in &out.checks {
            println!("    {}: {}", c.name, c.detail);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
