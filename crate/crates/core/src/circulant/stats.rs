//! Parameter and arithmetic-cost accounting for whole architectures.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lstm::LstmArchSpec;
use crate::spectral::{fft_op_count, pointwise_op_count, OpCount};

/// Shape of one weight matrix of an architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub block_size: usize,
    /// Everything stored: circulant rows, biases, peepholes, classifier.
    pub param_count: u64,
    pub dense_param_count: u64,
    /// Circulant matrices only.
    pub matrix_params: u64,
    pub dense_matrix_params: u64,
    /// Parameters that are never compressed.
    pub overhead_params: u64,
    /// `dense_param_count / param_count`.
    pub compression_ratio: f64,
    /// `dense_matrix_params / matrix_params`.
    pub matrix_compression_ratio: f64,
    /// Arithmetic ops of one step's mat-vecs, spectral path over dense path.
    pub complexity_ratio: f64,
    pub matvec_ops: OpCount,
    pub dense_matvec_ops: OpCount,
}

/// Real multiplies and adds of a dense `m x n` mat-vec.
pub fn dense_matvec_op_count(m: usize, n: usize) -> OpCount {
    OpCount {
        mul: (m * n) as u64,
        add: (m * n.saturating_sub(1)) as u64,
    }
}

/// Ops of one spectral mat-vec with precomputed weight spectra: `q`
/// forward and `p` inverse transforms, `p*q` packed products and the
/// spectral accumulation over block columns. `k = 1` is the dense product.
pub fn matvec_op_count(m: usize, n: usize, k: usize) -> OpCount {
    if k == 1 {
        return dense_matvec_op_count(m, n);
    }
    let (p, q) = (m.div_ceil(k) as u64, n.div_ceil(k) as u64);
    let acc = OpCount {
        mul: 0,
        add: p * q.saturating_sub(1) * k as u64,
    };
    fft_op_count(k) * (p + q) + pointwise_op_count(k) * (p * q) + acc
}

/// Every circulant-compressible matrix of `arch`, in execution order.
pub fn weight_matrices(arch: &LstmArchSpec) -> Vec<MatrixShape> {
    let mut out = Vec::new();
    for l in 0..arch.num_layers {
        for d in 0..arch.directions() {
            let dir = if d == 0 { "fw" } else { "bw" };
            for g in crate::lstm::GATES {
                out.push(MatrixShape {
                    name: format!("l{l}.{dir}.w_{g}"),
                    rows: arch.hidden_dim,
                    cols: arch.gate_cols(l),
                });
            }
            if arch.projection {
                out.push(MatrixShape {
                    name: format!("l{l}.{dir}.w_ym"),
                    rows: arch.output_dim(),
                    cols: arch.hidden_dim,
                });
            }
        }
    }
    out
}

/// Biases, peephole vectors and the dense classifier.
pub fn overhead_params(arch: &LstmArchSpec) -> u64 {
    let per_cell = 4 * arch.hidden_dim + if arch.peephole { 3 * arch.hidden_dim } else { 0 };
    let cells = arch.num_layers * arch.directions();
    let classifier = arch
        .output_classes
        .map_or(0, |c| c * arch.sequence_output_dim() + c);
    (cells * per_cell + classifier) as u64
}

pub fn compression_stats(arch: &LstmArchSpec, k: usize) -> Result<CompressionStats> {
    let arch = arch.with_block_size(k);
    arch.validate()?;
    let mats = weight_matrices(&arch);
    let mut matrix_params = 0u64;
    let mut dense_matrix_params = 0u64;
    let mut ops = OpCount::default();
    let mut dense_ops = OpCount::default();
    for s in &mats {
        matrix_params += (s.rows.div_ceil(k) * s.cols.div_ceil(k) * k) as u64;
        dense_matrix_params += (s.rows * s.cols) as u64;
        ops = ops + matvec_op_count(s.rows, s.cols, k);
        dense_ops = dense_ops + dense_matvec_op_count(s.rows, s.cols);
    }
    let overhead = overhead_params(&arch);
    let param_count = matrix_params + overhead;
    let dense_param_count = dense_matrix_params + overhead;
    Ok(CompressionStats {
        block_size: k,
        param_count,
        dense_param_count,
        matrix_params,
        dense_matrix_params,
        overhead_params: overhead,
        compression_ratio: dense_param_count as f64 / param_count as f64,
        matrix_compression_ratio: dense_matrix_params as f64 / matrix_params as f64,
        complexity_ratio: if k == 1 {
            1.0
        } else {
            ops.total() as f64 / dense_ops.total() as f64
        },
        matvec_ops: ops,
        dense_matvec_ops: dense_ops,
    })
}
