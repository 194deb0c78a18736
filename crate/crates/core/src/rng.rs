//! Deterministic RNG streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha12 stream keyed
//! by a 64-bit master seed plus a list of stream tags (trajectory index,
//! retry counter, trial index, ...). Streams are independent of evaluation
//! order, so parallel and serial generation produce identical results.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Identifier recorded in dataset and report metadata.
pub const RNG_ID: &str = "chacha12/splitmix64-stream";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive an independent 64-bit sub-seed from a master seed and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0xa5a5a5a5a5a5a5a5)));
    }
    state
}

/// Derive an independent stream from a master seed and a tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Matrix with i.i.d. standard Gaussian entries, filled column-major.
pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Vector with i.i.d. standard Gaussian entries.
pub fn gaussian_vector<R: Rng>(len: usize, rng: &mut R) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}
