// Generate a watermarked response with the complete scheme, then detect it
// under the right key and under an unrelated one.

use entmark::model::{make_synthetic_model, SyntheticModelSpec};
use entmark::prf::{setup, SchemeId};
use entmark::scheme::{detect_tokens, generate, Watermarked};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn run_example() -> entmark::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let model = make_synthetic_model(&SyntheticModelSpec::uniform(1024))?;
    let sk = setup(16, SchemeId::Complete, None, &mut rng)?;

    let out = generate(&sk, &model, None, b"", &mut rng)?;
    if let Watermarked::Complete(g) = &out {
        println!("{} bits, seed fixed after bit {:?}", g.bits.len(), g.ledger.seed_end_index);
    }

    let report = detect_tokens(&sk, out.tokens(), None, 1)?;
    println!("right key: verdict {}, margin {:.1}", report.verdict, report.margin.unwrap_or(f64::NAN));
    assert!(report.verdict);

    let other = setup(16, SchemeId::Complete, None, &mut rng)?;
    let report = detect_tokens(&other, out.tokens(), None, 1)?;
    println!("other key: verdict {}, margin {:.1}", report.verdict, report.margin.unwrap_or(f64::NAN));
    assert!(!report.verdict);
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
