use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Purpose tags for substream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Partition = 2,
    Init = 3,
    Sampling = 4,
    Shuffle = 5,
    Theory = 6,
    Test = 7,
}

impl Stream {
    /// Stream id `purpose << 56 | round << 28 | client`.
    pub fn id(self, round: u64, client: u64) -> u64 {
        debug_assert!(round < (1 << 28) && client < (1 << 28));
        ((self as u64) << 56) | (round << 28) | client
    }
}

/// ChaCha8 keyed by a 64-bit seed and a 64-bit stream id.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn for_purpose(seed: u64, purpose: Stream, round: u64, client: u64) -> Self {
        Rng::new(seed, purpose.id(round, client))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let g = Gamma::new(shape, 1.0)
            .map_err(|e| Error::invalid(format!("gamma shape {shape}: {e}")))?;
        Ok(g.sample(&mut self.inner))
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.gaussian())
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Haar-distributed orthogonal matrix: modified Gram-Schmidt on a Gaussian
/// matrix, run twice for orthogonality to round-off.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("random_orthogonal needs n >= 1"));
    }
    loop {
        let g = rng.gaussian_matrix(n, n);
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.col(j)).collect();
        let mut ok = true;
        for j in 0..n {
            let raw = super::norm(&cols[j]);
            for _ in 0..2 {
                for i in 0..j {
                    let d = dot(&cols[j], &cols[i]);
                    let (lo, hi) = cols.split_at_mut(j);
                    for (x, y) in hi[0].iter_mut().zip(&lo[i]) {
                        *x -= d * y;
                    }
                }
            }
            let nn = super::norm(&cols[j]);
            if nn < 1e-8 * raw.max(1e-300) {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= nn);
        }
        if ok {
            return Ok(Matrix::from_fn(n, n, |r, c| cols[c][r]));
        }
    }
}
