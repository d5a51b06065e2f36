//! Counter-based random streams.
//!
//! Every random draw in a run is addressed by `(seed, domain, agent, step, draw)`.
//! The generator is Philox4x32-10: a keyed bijection on 128-bit counters, so a
//! stream can be opened at any address without replaying earlier draws. This
//! is what makes trajectories independent of agent evaluation order and of the
//! number of worker threads.

use rand::RngCore;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Independent purposes draws are taken for. Streams in different domains
/// never overlap even for equal agent/step indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    /// Phase-1 deployment samples inside the scheme.
    Deployment = 1,
    /// Monte Carlo metric estimates (risk, bias probes).
    MonteCarlo = 2,
    /// Dataset shuffles and agent partitions.
    Partition = 3,
    /// Contraction probe pairs and other test/diagnostic draws.
    Probe = 4,
    /// Synthetic corpus and environment generation.
    Generator = 5,
}

const AGENT_BITS: u32 = 24;
/// Largest agent index a stream can address.
pub const MAX_AGENT: u32 = (1 << AGENT_BITS) - 1;

/// Root of all streams for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Opens the stream for `(domain, agent, step)`.
    ///
    /// Panics if `agent` exceeds [`MAX_AGENT`].
    pub fn stream(&self, domain: Domain, agent: u32, step: u64) -> CounterRng {
        assert!(agent <= MAX_AGENT, "agent index {agent} out of stream range");
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        let ctr = [
            0,
            step as u32,
            (step >> 32) as u32,
            ((domain as u32) << AGENT_BITS) | agent,
        ];
        CounterRng::new(key, ctr)
    }
}

/// A stream of Philox blocks at a fixed address; the first counter word
/// enumerates blocks within the stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: [u32; 2],
    ctr: [u32; 4],
    buf: [u32; 4],
    idx: usize,
}

impl CounterRng {
    fn new(key: [u32; 2], ctr: [u32; 4]) -> Self {
        Self {
            key,
            ctr,
            buf: [0; 4],
            idx: 4,
        }
    }

    #[inline]
    fn refill(&mut self) {
        self.buf = philox4x32_10(self.ctr, self.key);
        // 2^32 blocks per address; wrapping past that would repeat the stream.
        self.ctr[0] = self.ctr[0]
            .checked_add(1)
            .expect("counter stream exhausted");
        self.idx = 0;
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.idx == 4 {
            self.refill();
        }
        let v = self.buf[self.idx];
        self.idx += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let bytes = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
