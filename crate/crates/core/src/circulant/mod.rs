//! Block-circulant weight matrices.
//!
//! An `m x n` matrix is split into a `p x q` grid of `k x k` circulant
//! blocks, `p = ceil(m/k)`, `q = ceil(n/k)`. Block `(i, j)` is stored as its
//! first row `w_ij`; row `r` of the block is `w_ij` cyclically shifted right
//! by `r`, so entry `(r, c)` is `w_ij[(c - r) mod k]`. Dimensions that are
//! not multiples of `k` are zero padded on input and cropped on output.

mod fast;
pub mod stats;

pub use fast::{
    grad, matvec_fft, matvec_fft_fxp, CallCounters, CallCounts, Gradients, SpectralWeights,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::log2_exact;

/// Plain row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect())
    }

    pub fn frobenius_distance(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCirculantMatrix {
    m: usize,
    n: usize,
    k: usize,
    p: usize,
    q: usize,
    /// `p*q` defining rows of length `k`, block-row major.
    data: Vec<f64>,
}

impl BlockCirculantMatrix {
    pub fn new(m: usize, n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        log2_exact(k)?;
        if m == 0 || n == 0 {
            return Err(Error::InvalidArch(format!("empty matrix {m}x{n}")));
        }
        let (p, q) = (m.div_ceil(k), n.div_ceil(k));
        check_len(p * q * k, data.len())?;
        Ok(BlockCirculantMatrix { m, n, k, p, q, data })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Result<Self> {
        let (p, q) = (m.div_ceil(k.max(1)), n.div_ceil(k.max(1)));
        BlockCirculantMatrix::new(m, n, k, vec![0.0; p * q * k])
    }

    /// Builds the matrix with `f(i, j, s)` as entry `s` of row `w_ij`.
    pub fn from_fn(
        m: usize,
        n: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut b = BlockCirculantMatrix::zeros(m, n, k)?;
        for i in 0..b.p {
            for j in 0..b.q {
                for s in 0..k {
                    b.row_mut(i, j)[s] = f(i, j, s);
                }
            }
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.q + j) * self.k;
        &self.data[off..off + self.k]
    }

    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let off = (i * self.q + j) * self.k;
        &mut self.data[off..off + self.k]
    }

    /// Entry `(r, c)` of the full (padded) matrix.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let k = self.k;
        let (i, rr) = (r / k, r % k);
        let (j, cc) = (c / k, c % k);
        self.row(i, j)[(cc + k - rr) % k]
    }

    pub fn expand_to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.m, self.n);
        for r in 0..self.m {
            for c in 0..self.n {
                d.set(r, c, self.entry(r, c));
            }
        }
        d
    }

    /// Direct blocked evaluation of `W x`; the reference path for the
    /// spectral kernels.
    pub fn matvec_naive(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let k = self.k;
        let mut xp = x.to_vec();
        xp.resize(self.q * k, 0.0);
        let mut out = vec![0.0; self.p * k];
        for i in 0..self.p {
            for j in 0..self.q {
                let w = self.row(i, j);
                let xj = &xp[j * k..(j + 1) * k];
                for r in 0..k {
                    let mut acc = 0.0;
                    for (c, xv) in xj.iter().enumerate() {
                        acc += w[(c + k - r) % k] * xv;
                    }
                    out[i * k + r] += acc;
                }
            }
        }
        out.truncate(self.m);
        Ok(out)
    }

    /// Frobenius-optimal block-circulant approximation of `d`: each
    /// defining entry is the mean of its circulant diagonal inside the
    /// `m x n` region.
    pub fn project_dense(d: &DenseMatrix, k: usize) -> Result<Self> {
        let (m, n) = (d.rows, d.cols);
        let mut b = BlockCirculantMatrix::zeros(m, n, k)?;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for i in 0..b.p {
            for j in 0..b.q {
                sums.fill(0.0);
                counts.fill(0);
                for r in 0..k {
                    let gr = i * k + r;
                    if gr >= m {
                        break;
                    }
                    for c in 0..k {
                        let gc = j * k + c;
                        if gc >= n {
                            break;
                        }
                        let s = (c + k - r) % k;
                        sums[s] += d.get(gr, gc);
                        counts[s] += 1;
                    }
                }
                let row = b.row_mut(i, j);
                for s in 0..k {
                    row[s] = if counts[s] > 0 {
                        sums[s] / counts[s] as f64
                    } else {
                        0.0
                    };
                }
            }
        }
        Ok(b)
    }

    /// First column of block `(i, j)`: the convolution kernel whose DFT the
    /// spectral path multiplies by.
    pub fn kernel(&self, i: usize, j: usize) -> Vec<f64> {
        let w = self.row(i, j);
        let k = self.k;
        (0..k).map(|r| w[(k - r) % k]).collect()
    }
}
