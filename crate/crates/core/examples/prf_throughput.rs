// Evaluate the keyed PRF and time it. Set ENTMARK_PRF_BACKEND=scalar to
// compare against the portable path.

use std::time::Instant;

use entmark::prf::{prf_unit, SchemeId, SecretKey, SeedPrf};

pub fn run_example() -> entmark::Result<()> {
    let sk = SecretKey::from_bytes([3; 32], 8, SchemeId::Complete, None)?;
    let seed: Vec<bool> = (0..300).map(|i| i % 3 == 0).collect();
    for index in 1..=3 {
        let u = prf_unit(&sk, &seed, index);
        println!("F(seed, {index}) = {:.6} (z = {:#018x})", u.value(), u.z());
    }

    let prf = SeedPrf::new(&sk, &seed);
    let mut out = vec![0u64; 1024];
    let reps = 500;
    let start = Instant::now();
    let mut acc = 0u64;
    for r in 0..reps {
        prf.fill_z(r * 1024, &mut out);
        acc ^= out[r as usize % 1024];
    }
    let ns = start.elapsed().as_nanos() as f64 / (reps as f64 * 1024.0);
    println!("{ns:.1} ns per evaluation (checksum {acc:#x})");
    Ok(())
}

#[allow(dead_code)]
fn main() -> entmark::Result<()> {
    run_example()
}
