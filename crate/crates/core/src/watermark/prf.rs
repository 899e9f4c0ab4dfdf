//! PositionPRF green-list derivation.
//!
//! The seed for a scoring position is
//!
//! ```text
//! seed = salt XOR mix(context[0] * PRIME[0]) XOR ... XOR mix(context[h-1] * PRIME[h-1])
//! ```
//!
//! where `context[0]` is the oldest token of the window and `mix` is the
//! SplitMix64 finalizer. The seed keys a Feistel permutation `pi` of
//! `[0, |V|)`; the green list is `{ pi(0), ..., pi(G-1) }` with
//! `G = round(gamma * |V|)`. Membership of a single token is answered through
//! `pi^-1` without materializing the list.

use crate::hashing::mix64;
use crate::textcore::Token;

/// Position weights of the PositionPRF. Distinct odd 64-bit constants; the
/// maximum supported context width is their count.
pub const POSITION_PRIMES: [u64; 8] = [
    0x9e37_79b9_7f4a_7c15,
    0xc2b2_ae3d_27d4_eb4f,
    0x1656_67b1_9e37_79f9,
    0x85eb_ca77_c2b2_ae63,
    0x27d4_eb2f_1656_67c5,
    0xff51_afd7_ed55_8ccd,
    0xc4ce_b9fe_1a85_ec53,
    0x8cb9_2ba7_2f3d_8dd7,
];

/// Round tweaks of the Feistel network.
pub const FEISTEL_TWEAKS: [u64; 6] = [
    0x243f_6a88_85a3_08d3,
    0x1319_8a2e_0370_7344,
    0xa409_3822_299f_31d0,
    0x082e_fa98_ec4e_6c89,
    0x4528_21e6_38d0_1377,
    0xbe54_66cf_34e9_0c6c,
];

pub const MAX_CONTEXT_WIDTH: usize = POSITION_PRIMES.len();

/// PRF seed for one scoring window.
#[inline]
pub fn position_seed(context: &[Token], salt: u64) -> u64 {
    context
        .iter()
        .zip(POSITION_PRIMES.iter())
        .fold(salt, |acc, (&t, &p)| acc ^ mix64(u64::from(t).wrapping_mul(p)))
}

/// Keyed pseudo-random permutation of `[0, n)`: a balanced six-round
/// Feistel network on the smallest even-bit power of two covering `n`,
/// restricted to `[0, n)` by cycle walking.
#[derive(Debug, Clone, Copy)]
pub struct KeyedPermutation {
    key: u64,
    n: u32,
    half_bits: u32,
    half_mask: u32,
}

impl KeyedPermutation {
    pub fn new(key: u64, n: u32) -> Self {
        debug_assert!(n >= 2);
        let bits = (32 - (n - 1).leading_zeros()).max(2);
        let half_bits = bits.div_ceil(2);
        Self {
            key,
            n,
            half_bits,
            half_mask: (1u32 << half_bits) - 1,
        }
    }

    #[inline]
    fn round(&self, r: usize, half: u32) -> u32 {
        (mix64(self.key ^ FEISTEL_TWEAKS[r] ^ u64::from(half)) as u32) & self.half_mask
    }

    #[inline]
    fn encrypt(&self, x: u32) -> u32 {
        let (mut l, mut r) = (x >> self.half_bits, x & self.half_mask);
        for i in 0..FEISTEL_TWEAKS.len() {
            let next = l ^ self.round(i, r);
            l = r;
            r = next;
        }
        (l << self.half_bits) | r
    }

    #[inline]
    fn decrypt(&self, y: u32) -> u32 {
        let (mut l, mut r) = (y >> self.half_bits, y & self.half_mask);
        for i in (0..FEISTEL_TWEAKS.len()).rev() {
            let prev = r ^ self.round(i, l);
            r = l;
            l = prev;
        }
        (l << self.half_bits) | r
    }

    /// `pi(i)`: the element at rank `i` of the permutation.
    #[inline]
    pub fn forward(&self, i: u32) -> u32 {
        let mut y = self.encrypt(i);
        while y >= self.n {
            y = self.encrypt(y);
        }
        y
    }

    /// `pi^-1(t)`: the rank of element `t`.
    #[inline]
    pub fn inverse(&self, t: u32) -> u32 {
        let mut x = self.decrypt(t);
        while x >= self.n {
            x = self.decrypt(x);
        }
        x
    }
}
