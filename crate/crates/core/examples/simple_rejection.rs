// The simple scheme resamples whole responses until a keyed b-bit tag of
// the response is zero. Unrelated text passes with probability 2^-b.

use entmark::model::{make_synthetic_model, sample_response, SyntheticModelSpec};
use entmark::prf::{setup, SchemeId};
use entmark::scheme::simple::{detect_simple, wat_simple};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn run_example() -> entmark::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let model = make_synthetic_model(&SyntheticModelSpec::uniform(64))?;
    let sk = setup(8, SchemeId::Simple, Some(4), &mut rng)?;

    let (response, stats) = wat_simple(&sk, &model, b"", &mut rng)?;
    println!("watermarked after {} model calls", stats.model_calls);
    assert!(detect_simple(&sk, &response.tokens)?);

    let trials = 4000;
    let mut hits = 0;
    for _ in 0..trials {
        hits += u32::from(detect_simple(&sk, &sample_response(&model, b"", &mut rng)?.tokens)?);
    }
    println!("plain samples tagged: {hits} of {trials} (expect about {})", trials / 16);
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
