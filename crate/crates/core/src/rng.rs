//! Seeded randomness with coordinate-addressed substreams.
//!
//! Every random variate consumed by the dynamics is a pure function of
//! `(master_seed, replica, time, site, tag)`. This makes transcripts exactly
//! replayable, lets two coupled processes share the same variate by asking
//! for the same coordinates, and makes parallel replica runs bit-reproducible
//! regardless of scheduling.
//!
//! The mixing function is fixed and documented here:
//!
//! 1. `mix64` is the SplitMix64 finalizer
//!    (`z ^= z >> 30; z *= 0xbf58476d1ce4e5b9; ...`).
//! 2. A substream seed is derived by folding the coordinates in one at a
//!    time: `s = mix64(s ^ coordinate ^ SALT_i)` for the replica, time, site
//!    and tag in that order.
//! 3. The substream itself is the SplitMix64 generator: the state advances
//!    by the golden-ratio increment and each output is `mix64(state)`.

/// Golden-ratio increment used by the SplitMix64 stream.
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

const SALT_REPLICA: u64 = 0x243f_6a88_85a3_08d3;
const SALT_TIME: u64 = 0x1319_8a2e_0370_7344;
const SALT_SITE: u64 = 0xa409_3822_299f_31d0;
const SALT_TAG: u64 = 0x082e_fa98_ec4e_6c89;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic stream of uniforms (SplitMix64).
#[derive(Clone, Debug)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draws an index from an unnormalized nonnegative weight slice.
    pub fn pick_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        let mut last_nonzero = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_nonzero = i;
                if u < w {
                    return i;
                }
                u -= w;
            }
        }
        last_nonzero
    }
}

/// Addressable randomness for one replica of one run.
///
/// `substream(t, x, tag)` always returns the same stream for the same
/// coordinates; distinct coordinates give (statistically) independent
/// streams. Tags 0..=3 are reserved by the dynamics for the wake draw and
/// jump draw of particle classes 1 and 2; tag 16 is the boundary line draw.
#[derive(Clone, Copy, Debug)]
pub struct RandomField {
    master: u64,
    replica: u64,
}

impl RandomField {
    pub fn new(master: u64, replica: u64) -> Self {
        RandomField { master, replica }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Seed-path string embedded in trajectory logs for replay.
    pub fn seed_path(&self, t: u32) -> String {
        format!("{}:{}:{}", self.master, self.replica, t)
    }

    #[inline]
    pub fn substream(&self, t: u32, x: i64, tag: u8) -> Stream {
        let mut s = self.master;
        s = mix64(s ^ self.replica ^ SALT_REPLICA);
        s = mix64(s ^ u64::from(t) ^ SALT_TIME);
        s = mix64(s ^ (x as u64) ^ SALT_SITE);
        s = mix64(s ^ u64::from(tag) ^ SALT_TAG);
        Stream::new(s)
    }
}
