//! HMAC-SHA256 with precomputed midstates, evaluated either one index at a
//! time or sixteen indices at once in structure-of-arrays form.
//!
//! The multi-lane path exists because the detectors spend nearly all of their
//! time finishing HMACs whose inputs differ only in the trailing 8-byte index.
//! Everything before the index is absorbed once into [`HmacMidstate`].

use std::sync::OnceLock;

use sha2::block_api::compress256;

pub(crate) const LANES: usize = 16;

const IV: [u32; 8] = [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19];

const K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98,
    0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8,
    0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
    0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2,
];

/// Inner and outer SHA-256 states of an HMAC after absorbing the key pads and
/// a fixed message prefix.
#[derive(Clone, Debug)]
pub(crate) struct HmacMidstate {
    inner: [u32; 8],
    tail: [u8; 64],
    tail_len: usize,
    /// Bytes absorbed by the inner hash so far, including the key block.
    absorbed: u64,
    outer: [u32; 8],
    template: [u32; 32],
    blocks: usize,
}

impl HmacMidstate {
    pub(crate) fn new(key: &[u8; 32], prefix: &[&[u8]]) -> Self {
        let mut ipad = [0x36u8; 64];
        let mut opad = [0x5cu8; 64];
        for (i, k) in key.iter().enumerate() {
            ipad[i] ^= k;
            opad[i] ^= k;
        }
        let mut inner = IV;
        compress256(&mut inner, &[ipad]);
        let mut outer = IV;
        compress256(&mut outer, &[opad]);

        let mut state =
            HmacMidstate { inner, tail: [0; 64], tail_len: 0, absorbed: 64, outer, template: [0; 32], blocks: 1 };
        for part in prefix {
            state.absorb(part);
        }
        state.blocks = state.final_blocks();
        state.template = state.final_template();
        state
    }

    fn absorb(&mut self, mut data: &[u8]) {
        self.absorbed += data.len() as u64;
        while !data.is_empty() {
            let take = (64 - self.tail_len).min(data.len());
            self.tail[self.tail_len..self.tail_len + take].copy_from_slice(&data[..take]);
            self.tail_len += take;
            data = &data[take..];
            if self.tail_len == 64 {
                compress256(&mut self.inner, &[self.tail]);
                self.tail_len = 0;
            }
        }
    }

    /// Number of 64-byte blocks in the inner hash's final step once the
    /// 8-byte suffix and padding are appended.
    fn final_blocks(&self) -> usize {
        if self.tail_len + 8 + 9 <= 64 {
            1
        } else {
            2
        }
    }

    /// Final inner blocks with the suffix bytes zeroed, as big-endian words.
    fn final_template(&self) -> [u32; 32] {
        let mut bytes = [0u8; 128];
        bytes[..self.tail_len].copy_from_slice(&self.tail[..self.tail_len]);
        let end = self.tail_len + 8;
        bytes[end] = 0x80;
        let total = self.final_blocks() * 64;
        let bit_len = (self.absorbed + 8) * 8;
        bytes[total - 8..total].copy_from_slice(&bit_len.to_be_bytes());
        let mut words = [0u32; 32];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(4)) {
            *w = u32::from_be_bytes(chunk.try_into().unwrap());
        }
        words
    }

    /// First 8 bytes (big-endian) of HMAC(prefix ‖ suffix).
    pub(crate) fn finish(&self, suffix: [u8; 8]) -> u64 {
        let mut words = self.template;
        place_suffix(&mut words, self.tail_len, suffix, |w, v| *w |= v);
        let mut inner = self.inner;
        let blocks = self.blocks;
        let mut buf = [[0u8; 64]; 2];
        for (b, block) in buf.iter_mut().enumerate().take(blocks) {
            for (i, chunk) in block.chunks_exact_mut(4).enumerate() {
                chunk.copy_from_slice(&words[b * 16 + i].to_be_bytes());
            }
        }
        compress256(&mut inner, &buf[..blocks]);

        let mut outer_block = [0u8; 64];
        for (i, w) in inner.iter().enumerate() {
            outer_block[i * 4..i * 4 + 4].copy_from_slice(&w.to_be_bytes());
        }
        outer_block[32] = 0x80;
        outer_block[56..].copy_from_slice(&((64u64 + 32) * 8).to_be_bytes());
        let mut outer = self.outer;
        compress256(&mut outer, &[outer_block]);
        (u64::from(outer[0]) << 32) | u64::from(outer[1])
    }

    /// `out[k]` = first 8 bytes of HMAC(prefix ‖ be64(first + k)).
    pub(crate) fn finish_indices(&self, first: u64, out: &mut [u64]) {
        match backend() {
            Backend::Scalar => {
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = self.finish((first + k as u64).to_be_bytes());
                }
            }
            Backend::Lanes => {
                let mut chunk_first = first;
                for chunk in out.chunks_mut(LANES) {
                    let mut lanes = [0u64; LANES];
                    self.finish_lanes(chunk_first, &mut lanes);
                    chunk.copy_from_slice(&lanes[..chunk.len()]);
                    chunk_first += LANES as u64;
                }
            }
        }
    }

    pub(crate) fn finish_lanes(&self, first: u64, out: &mut [u64; LANES]) {
        let template = &self.template;
        let blocks = self.blocks;
        let mut msg = [[0u32; LANES]; 32];
        for (w, lane_words) in msg.iter_mut().enumerate().take(blocks * 16) {
            *lane_words = [template[w]; LANES];
        }
        // Lanes are columns of `msg`, so index rather than iterate.
        #[allow(clippy::needless_range_loop)]
        for lane in 0..LANES {
            let suffix = (first + lane as u64).to_be_bytes();
            let mut words = [0u32; 32];
            place_suffix(&mut words, self.tail_len, suffix, |w, v| *w |= v);
            for w in 0..blocks * 16 {
                msg[w][lane] |= words[w];
            }
        }

        let mut inner = [[0u32; LANES]; 8];
        for (s, v) in inner.iter_mut().zip(self.inner) {
            *s = [v; LANES];
        }
        let first_block: &[[u32; LANES]; 16] = msg[..16].try_into().unwrap();
        compress_lanes_dispatch(&mut inner, first_block);
        if blocks == 2 {
            let second: &[[u32; LANES]; 16] = msg[16..].try_into().unwrap();
            compress_lanes_dispatch(&mut inner, second);
        }

        let mut outer_msg = [[0u32; LANES]; 16];
        outer_msg[..8].copy_from_slice(&inner);
        outer_msg[8] = [0x8000_0000; LANES];
        outer_msg[15] = [768; LANES];
        let mut outer = [[0u32; LANES]; 8];
        for (s, v) in outer.iter_mut().zip(self.outer) {
            *s = [v; LANES];
        }
        compress_lanes_dispatch(&mut outer, &outer_msg);
        for (lane, slot) in out.iter_mut().enumerate() {
            *slot = (u64::from(outer[0][lane]) << 32) | u64::from(outer[1][lane]);
        }
    }
}

/// ORs the 8 suffix bytes into big-endian message words starting at byte `at`.
fn place_suffix(words: &mut [u32; 32], at: usize, suffix: [u8; 8], mut put: impl FnMut(&mut u32, u32)) {
    for (b, byte) in suffix.iter().enumerate() {
        let pos = at + b;
        let shift = 24 - 8 * (pos % 4) as u32;
        put(&mut words[pos / 4], u32::from(*byte) << shift);
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub(crate) enum Backend {
    Scalar,
    Lanes,
}

pub(crate) fn backend() -> Backend {
    static CHOICE: OnceLock<Backend> = OnceLock::new();
    *CHOICE.get_or_init(|| {
        let available = lanes_available();
        match std::env::var("ENTMARK_PRF_BACKEND").as_deref() {
            Ok("scalar") => Backend::Scalar,
            _ if available => Backend::Lanes,
            _ => Backend::Scalar,
        }
    })
}

#[cfg(target_arch = "x86_64")]
fn lanes_available() -> bool {
    std::arch::is_x86_feature_detected!("avx512f")
}

#[cfg(not(target_arch = "x86_64"))]
fn lanes_available() -> bool {
    false
}

type Lanes = [u32; LANES];

fn compress_lanes_dispatch(state: &mut [Lanes; 8], block: &[Lanes; 16]) {
    #[cfg(target_arch = "x86_64")]
    if lanes_available() {
        // SAFETY: avx512f support was just checked.
        return unsafe { avx512::compress(state, block) };
    }
    compress_lanes_portable(state, block)
}

/// Reference SoA compression, used when AVX-512 is unavailable and in tests.
fn compress_lanes_portable(state: &mut [Lanes; 8], block: &[Lanes; 16]) {
    for lane in 0..LANES {
        let mut st: [u32; 8] = std::array::from_fn(|i| state[i][lane]);
        let mut bytes = [0u8; 64];
        for (w, chunk) in bytes.chunks_exact_mut(4).enumerate() {
            chunk.copy_from_slice(&block[w][lane].to_be_bytes());
        }
        compress256(&mut st, &[bytes]);
        for i in 0..8 {
            state[i][lane] = st[i];
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{Lanes, K};

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn load(v: &Lanes) -> __m512i {
        // SAFETY: `Lanes` is 64 bytes; unaligned loads are allowed.
        unsafe { _mm512_loadu_si512(v.as_ptr().cast()) }
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn store(v: __m512i, out: &mut Lanes) {
        // SAFETY: as for `load`.
        unsafe { _mm512_storeu_si512(out.as_mut_ptr().cast(), v) }
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn add(a: __m512i, b: __m512i) -> __m512i {
        _mm512_add_epi32(a, b)
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn xor3(a: __m512i, b: __m512i, c: __m512i) -> __m512i {
        _mm512_ternarylogic_epi32::<0x96>(a, b, c)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) fn compress(state: &mut [Lanes; 8], block: &[Lanes; 16]) {
        let mut w = [_mm512_setzero_si512(); 16];
        for (slot, words) in w.iter_mut().zip(block) {
            *slot = load(words);
        }
        let mut s = [_mm512_setzero_si512(); 8];
        for (slot, words) in s.iter_mut().zip(state.iter()) {
            *slot = load(words);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut h] = s;

        for t in 0..64 {
            let wt = if t < 16 {
                w[t]
            } else {
                let x15 = w[(t + 1) % 16];
                let x2 = w[(t + 14) % 16];
                let s0 = xor3(_mm512_ror_epi32::<7>(x15), _mm512_ror_epi32::<18>(x15), _mm512_srli_epi32::<3>(x15));
                let s1 = xor3(_mm512_ror_epi32::<17>(x2), _mm512_ror_epi32::<19>(x2), _mm512_srli_epi32::<10>(x2));
                let v = add(add(w[t % 16], s0), add(w[(t + 9) % 16], s1));
                w[t % 16] = v;
                v
            };
            let big_s1 = xor3(_mm512_ror_epi32::<6>(e), _mm512_ror_epi32::<11>(e), _mm512_ror_epi32::<25>(e));
            // ch(e, f, g) = (e & f) ^ (!e & g)
            let ch = _mm512_ternarylogic_epi32::<0xCA>(e, f, g);
            let kw = add(wt, _mm512_set1_epi32(K[t] as i32));
            let t1 = add(add(h, big_s1), add(ch, kw));
            let big_s0 = xor3(_mm512_ror_epi32::<2>(a), _mm512_ror_epi32::<13>(a), _mm512_ror_epi32::<22>(a));
            // maj(a, b, c)
            let maj = _mm512_ternarylogic_epi32::<0xE8>(a, b, c);
            let t2 = add(big_s0, maj);
            h = g;
            g = f;
            f = e;
            e = add(d, t1);
            d = c;
            c = b;
            b = a;
            a = add(t1, t2);
        }
        let out = [a, b, c, d, e, f, g, h];
        for (words, v) in state.iter_mut().zip(out) {
            let sum = add(load(words), v);
            store(sum, words);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmac::{Hmac, KeyInit, Mac};
    use sha2::Sha256;

    fn reference(key: &[u8; 32], prefix: &[u8], suffix: [u8; 8]) -> u64 {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).unwrap();
        mac.update(prefix);
        mac.update(&suffix);
        let out = mac.finalize().into_bytes();
        u64::from_be_bytes(out[..8].try_into().unwrap())
    }

    #[test]
    fn scalar_and_lanes_match_hmac_for_all_tail_lengths() {
        let key: [u8; 32] = std::array::from_fn(|i| (i * 7 + 3) as u8);
        for prefix_len in 0..200usize {
            let prefix: Vec<u8> = (0..prefix_len).map(|i| (i * 31 + 11) as u8).collect();
            let mid = HmacMidstate::new(&key, &[&prefix]);
            let first = 0xfffe_u64 + prefix_len as u64 * 1_000_003;
            let mut lanes = [0u64; LANES];
            mid.finish_lanes(first, &mut lanes);
            for (k, got) in lanes.iter().enumerate() {
                let idx = (first + k as u64).to_be_bytes();
                let want = reference(&key, &prefix, idx);
                assert_eq!(mid.finish(idx), want, "scalar, prefix {prefix_len}");
                assert_eq!(*got, want, "lanes, prefix {prefix_len}, lane {k}");
            }
        }
    }

    #[test]
    fn portable_and_dispatched_compression_agree() {
        let mut a = [[0u32; LANES]; 8];
        for (i, words) in a.iter_mut().enumerate() {
            for (lane, w) in words.iter_mut().enumerate() {
                *w = IV[i].wrapping_mul(lane as u32 + 1) ^ 0x9e37_79b9;
            }
        }
        let block: [Lanes; 16] =
            std::array::from_fn(|w| std::array::from_fn(|l| ((w * 131 + l * 7) as u32).wrapping_mul(0x0101_0101)));
        let mut b = a;
        compress_lanes_portable(&mut a, &block);
        compress_lanes_dispatch(&mut b, &block);
        assert_eq!(a, b);
    }

    #[test]
    fn finish_indices_handles_partial_chunks() {
        let key = [9u8; 32];
        let mid = HmacMidstate::new(&key, &[b"WMv1", &[0, 0, 0, 3], &[0b1010_0000]]);
        let mut out = vec![0u64; 37];
        mid.finish_indices(5, &mut out);
        for (k, z) in out.iter().enumerate() {
            assert_eq!(*z, mid.finish((5 + k as u64).to_be_bytes()));
        }
    }
}
