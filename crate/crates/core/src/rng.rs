//! Seeded pseudo-random generator used everywhere randomness is needed.
//!
//! The generator is xoshiro256++ seeded through splitmix64, implemented here
//! so the integer draw sequence is reproducible across runs and platforms.
//! Floating-point transforms (uniform, gaussian) are built on top of the raw
//! `u64` stream.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mixes two seeds into one, for deriving independent per-item generators
/// (per utterance, per run, ...) from a base seed.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut s = base ^ salt.wrapping_mul(GOLDEN);
    let a = splitmix64(&mut s);
    splitmix64(&mut s) ^ a.rotate_left(17)
}

/// xoshiro256++ generator with an explicit seed.
///
/// Identical seeds yield identical draw sequences. Single-owner: never share
/// one instance across concurrent tasks.
#[derive(Clone, Debug)]
pub struct RngState {
    s: [u64; 4],
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RngState { s }
    }

    /// Derives an independent generator from this one's next raw draw.
    pub fn fork(&mut self) -> RngState {
        RngState::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw via Box-Muller. Consumes two raw draws.
    pub fn gaussian(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Matrix of i.i.d. normal entries. `stddev == 0` yields the constant `mean`.
pub fn gaussian_sample(
    rng: &mut RngState,
    rows: usize,
    cols: usize,
    mean: f64,
    stddev: f64,
) -> Result<Matrix> {
    if stddev < 0.0 {
        return Err(Error::Argument(format!(
            "gaussian stddev must be >= 0, got {}",
            stddev
        )));
    }
    let data = (0..rows * cols)
        .map(|_| mean + stddev * rng.gaussian())
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Uniform initialization in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(rng: &mut RngState, fan_in: usize, fan_out: usize) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Argument(format!(
            "glorot fans must be >= 1, got fan_in={} fan_out={}",
            fan_in, fan_out
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    // Convention: rows = fan_out, cols = fan_in, matching DenseLayer weights.
    Matrix::from_vec(fan_out, fan_in, data)
}
