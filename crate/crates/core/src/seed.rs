//! Deterministic seed derivation.
//!
//! Every random choice in the toolkit draws from a ChaCha stream keyed by a
//! base seed plus the labels of the thing being sampled, so results do not
//! depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incrementally mixes labels into a 64-bit seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedMixer(u64);

impl SeedMixer {
    pub fn new(base: u64) -> Self {
        SeedMixer(splitmix(base ^ FNV_OFFSET))
    }

    pub fn str(mut self, part: &str) -> Self {
        let mut h = FNV_OFFSET;
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        // length terminator keeps ("ab","c") distinct from ("a","bc")
        h ^= part.len() as u64;
        self.0 = splitmix(self.0 ^ h);
        self
    }

    pub fn num(mut self, part: u64) -> Self {
        self.0 = splitmix(self.0 ^ splitmix(part));
        self
    }

    pub fn finish(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_is_order_sensitive_and_stable() {
        let a = SeedMixer::new(1).str("A").num(2).finish();
        let b = SeedMixer::new(1).num(2).str("A").finish();
        assert_ne!(a, b);
        assert_eq!(a, SeedMixer::new(1).str("A").num(2).finish());
        assert_ne!(SeedMixer::new(0).str("ab").str("c").finish(), SeedMixer::new(0).str("a").str("bc").finish());
    }
}
