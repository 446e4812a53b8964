// The removal attack rebuilds a response one token at a time, each token
// taken from a fresh watermarked response to prompt ‖ prefix. The output
// follows the model's distribution and carries no watermark.

use entmark::attack::{resample_attack, OracleMode, WatermarkOracle};
use entmark::model::{make_synthetic_model, SyntheticModelSpec, TokenModel};
use entmark::prf::{setup, SchemeId};
use entmark::scheme::{detect_tokens, generate};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn run_example() -> entmark::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let model = make_synthetic_model(&SyntheticModelSpec::uniform(256))?;
    let sk = setup(8, SchemeId::Complete, None, &mut rng)?;

    let marked = generate(&sk, &model, None, b"", &mut rng)?;
    println!("watermarked response detected: {}", detect_tokens(&sk, marked.tokens(), None, 1)?.verdict);

    for mode in [OracleMode::FreshPrompt, OracleMode::ReplayLedger] {
        let mut oracle = WatermarkOracle::new(&sk, &model, None, mode, ChaCha20Rng::seed_from_u64(6));
        let (tokens, stats) = resample_attack(&mut oracle, b"", model.max_len())?;
        let verdict = detect_tokens(&sk, &tokens, None, 1)?.verdict;
        println!("{mode:?}: {} tokens, {} queries, detected {verdict}", stats.output_length, stats.queries);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
