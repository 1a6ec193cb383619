//! Reproducible random streams and Wiener increments.
//!
//! Every stream is a xoshiro256** generator whose 256-bit state is expanded
//! with SplitMix64 from the pair `(base_seed, stream_index)`. Ensemble run
//! `i` always uses stream `i`, so results do not depend on scheduling.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

use crate::error::{Error, Result};

/// Odd constant decorrelating the stream index from the base seed.
const STREAM_KEY: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone)]
pub struct RngStream {
    gen: Xoshiro256StarStar,
    spare: Option<f64>,
}

pub fn seed_stream(base_seed: u64, stream_index: u64) -> RngStream {
    RngStream::new(base_seed, stream_index)
}

impl RngStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        let mut outer = SplitMix64::seed_from_u64(base_seed);
        let key = outer.next_u64() ^ stream_index.wrapping_add(1).wrapping_mul(STREAM_KEY);
        let mut inner = SplitMix64::seed_from_u64(key);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&inner.next_u64().to_le_bytes());
        }
        Self {
            gen: Xoshiro256StarStar::from_seed(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.gen.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate (polar Box-Muller). Variates come in pairs;
    /// the second of each pair is returned by the following call.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }
}

/// Row-major `n_steps x n_dims` matrix of Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements {
    pub n_steps: usize,
    pub n_dims: usize,
    pub dt: f64,
    data: Vec<f64>,
}

impl WienerIncrements {
    pub fn from_raw(dt: f64, n_steps: usize, n_dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_steps * n_dims {
            return Err(Error::InvalidInput(format!(
                "increment data has {} entries, expected {}",
                data.len(),
                n_steps * n_dims
            )));
        }
        Ok(Self {
            n_steps,
            n_dims,
            dt,
            data,
        })
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.data[step * self.n_dims..(step + 1) * self.n_dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sums consecutive pairs of rows, giving the increments of the same
    /// Brownian path on a grid of twice the spacing.
    pub fn coarsen(&self) -> Self {
        let n_steps = self.n_steps / 2;
        let mut data = Vec::with_capacity(n_steps * self.n_dims);
        for k in 0..n_steps {
            let a = self.row(2 * k);
            let b = self.row(2 * k + 1);
            data.extend(a.iter().zip(b).map(|(a, b)| a + b));
        }
        Self {
            n_steps,
            n_dims: self.n_dims,
            dt: 2.0 * self.dt,
            data,
        }
    }
}

pub fn wiener_increments(
    stream: &mut RngStream,
    dt: f64,
    n_steps: usize,
    n_dims: usize,
) -> Result<WienerIncrements> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!(
            "dt must be finite and >= 0, got {dt}"
        )));
    }
    if n_dims == 0 {
        return Err(Error::InvalidInput("n_dims must be at least 1".into()));
    }
    let scale = dt.sqrt();
    let data = if dt == 0.0 {
        vec![0.0; n_steps * n_dims]
    } else {
        (0..n_steps * n_dims)
            .map(|_| scale * stream.next_gaussian())
            .collect()
    };
    WienerIncrements::from_raw(dt, n_steps, n_dims, data)
}
