// Train a byte-level n-gram model, build a Huffman codec from its first-step
// distribution, and watermark generated text through the codec.

use entmark::codec::{CodecKind, TokenCodec};
use entmark::model::{make_synthetic_model, train_ngram, Alphabet, TokenModel};
use entmark::prf::{setup, SchemeId};
use entmark::scheme::{detect_tokens, generate};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const CORPUS: &[u8] = b"the quick brown fox jumps over the lazy dog while a cat naps in warm sun \
and birds sing over quiet hills as rivers wind past old mills and fields of wheat sway";

pub fn run_example() -> entmark::Result<()> {
    let alphabet = Alphabet::from_corpus(CORPUS)?;
    let spec = train_ngram(CORPUS, 1, &alphabet)?.with_max_len(600);
    let model = make_synthetic_model(&spec)?;
    let first = model.next_dist(b"", &[]);
    let codec = TokenCodec::build(model.alphabet_size(), model.done_id(), CodecKind::Huffman, Some(first.probs()))?;
    println!("{} tokens, codeword lengths {:?}", model.alphabet_size(), codec.lengths());

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let sk = setup(4, SchemeId::Complete, None, &mut rng)?;
    // Short samples may end before the seed fixes; try a few.
    for attempt in 0..10 {
        let out = generate(&sk, &model, Some(&codec), b"", &mut rng)?;
        let text = alphabet.decode(out.tokens());
        let report = detect_tokens(&sk, out.tokens(), Some(&codec), 1)?;
        println!("attempt {attempt}: {} bytes, H_e {:.0} bits, detected {}", text.len(), out.entropy(), report.verdict);
        println!("  {:?}", String::from_utf8_lossy(&text[..text.len().min(80)]));
        if report.verdict {
            return Ok(());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
