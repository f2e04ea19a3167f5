//! Seed derivation and generator streams.
//!
//! Every random stream is a PCG64 (`Lcg128Xsl64`) generator. Seeds are mixed
//! with SplitMix64 so that nearby integers give unrelated states, and
//! independent streams of one run use distinct increments.

use rand_pcg::Pcg64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Eval = 3,
    Kernel = 4,
    Aux = 5,
}

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x5EED_0F5E_ED0F_5EEDu64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn stream(seed: u64, which: Stream) -> Pcg64 {
    let hi = splitmix64(seed);
    let lo = splitmix64(hi ^ seed);
    let state = ((hi as u128) << 64) | lo as u128;
    Pcg64::new(state, which as u128)
}
