//! Seeded fixtures shared by the benches.

use circlstm::{BlockCirculantMatrix, LstmArchSpec, LstmWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `m x n` block-circulant matrix with weights in `[-1/sqrt(n), 1/sqrt(n))`.
pub fn random_matrix(m: usize, n: usize, k: usize, seed: u64) -> BlockCirculantMatrix {
    let bound = 1.0 / (n as f64).sqrt();
    let len = m.div_ceil(k) * n.div_ceil(k) * k;
    let data = random_vec(len, seed).into_iter().map(|x| x * bound).collect();
    BlockCirculantMatrix::new(m, n, k, data).expect("valid shape")
}

pub fn frames(t: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..t).map(|i| random_vec(dim, seed + i as u64)).collect()
}

pub fn google_weights(k: usize) -> LstmWeights {
    LstmWeights::random(&LstmArchSpec::google(k), 1).expect("preset is valid")
}
