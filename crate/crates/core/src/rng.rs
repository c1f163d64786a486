//! Stateless counter-based random numbers. Every draw is a pure function of
//! `(seed, matrix, x, y, draw)`, so pixels can be generated in any order or
//! in parallel with identical results.

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which of the three noise matrices a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixId {
    Long = 0,
    Medium = 1,
    Correlated = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-matrix substream.
    pub fn matrix(&self, id: MatrixId) -> MatrixStream {
        MatrixStream {
            key: splitmix64(splitmix64(self.seed) ^ (id as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93)),
        }
    }

    pub fn uniform(&self, id: MatrixId, x: u32, y: u32, draw: u32) -> f64 {
        self.matrix(id).uniform(x, y, draw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixStream {
    key: u64,
}

impl MatrixStream {
    #[inline]
    pub fn bits(&self, x: u32, y: u32, draw: u32) -> u64 {
        let h = splitmix64(self.key ^ ((u64::from(y) << 32) | u64::from(x)));
        splitmix64(h ^ u64::from(draw).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, x: u32, y: u32, draw: u32) -> f64 {
        (self.bits(x, y, draw) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
