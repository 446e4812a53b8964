// The substring scheme re-seeds every time a block gathers enough entropy,
// so a window cut from the middle of a response is still detectable.

use entmark::model::{make_synthetic_model, SyntheticModelSpec};
use entmark::prf::{setup, SchemeId};
use entmark::scheme::substring::score_seed_window;
use entmark::scheme::{detect_bits, generate, Watermarked};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn run_example() -> entmark::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let model = make_synthetic_model(&SyntheticModelSpec::uniform(900))?;
    let sk = setup(4, SchemeId::Substring, None, &mut rng)?;

    let Watermarked::Substring(g) = generate(&sk, &model, None, b"", &mut rng)? else {
        unreachable!("a substring key runs the substring generator");
    };
    for b in &g.ledger.blocks {
        println!("block [{}..{}] with {:.0} bits", b.start, b.end, b.entropy);
    }

    // Keep bits 301..700, dropping the first block entirely.
    let window = &g.bits[300..700];
    let report = detect_bits(&sk, window, 1)?;
    let c = report.best_candidate.expect("a scan always has a best candidate");
    println!(
        "window of {} bits: verdict {}, seed at window bits {}..={}",
        window.len(),
        report.verdict,
        c.seed_start,
        c.seed_end
    );
    assert!(report.verdict);

    // At this small λ the scan can stop at an early chance pass, so also
    // score the first whole block inside the window as the seed.
    let block = g.ledger.blocks.iter().find(|b| b.start > 300 && b.end < 700).expect("a block fits in the window");
    let (passed, c) = score_seed_window(&sk, window, block.start - 300, block.end - 300, 4)?;
    println!(
        "block [{}..{}] as seed: passes {passed}, score {:.1} over threshold {:.1} at window bit {}",
        block.start, block.end, c.score, c.threshold, c.window_end
    );
    assert!(passed);
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
