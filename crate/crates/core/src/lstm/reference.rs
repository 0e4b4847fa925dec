//! Dense-matrix LSTM used as an oracle for the spectral path.

use super::{run_stack, CandidateActivation, CellState, LstmArchSpec, LstmWeights, StepTrace};
use crate::circulant::{check_len, DenseMatrix};
use crate::error::Result;

struct DenseCell {
    gates: [DenseMatrix; 4],
    bias: [Vec<f64>; 4],
    peephole: Option<[Vec<f64>; 3]>,
    projection: Option<DenseMatrix>,
}

/// Same equations as the float model, with every circulant matrix
/// expanded and multiplied directly.
pub struct DenseReference {
    arch: LstmArchSpec,
    cells: Vec<Vec<DenseCell>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DenseReference {
    pub fn new(w: &LstmWeights) -> Self {
        let cells = w
            .layers
            .iter()
            .map(|dirs| {
                dirs.iter()
                    .map(|c| DenseCell {
                        gates: c.gates.clone().map(|g| g.expand_to_dense()),
                        bias: c.bias.clone(),
                        peephole: c.peephole.clone(),
                        projection: c.projection.as_ref().map(|p| p.expand_to_dense()),
                    })
                    .collect()
            })
            .collect();
        DenseReference {
            arch: w.arch.clone(),
            cells,
        }
    }

    pub fn step_traced(&self, layer: usize, dir: usize, x: &[f64], prev: &CellState) -> Result<StepTrace> {
        check_len(self.arch.layer_input_dim(layer), x.len())?;
        let cell = &self.cells[layer][dir];
        let xr: Vec<f64> = x.iter().chain(&prev.y).copied().collect();
        let h = self.arch.hidden_dim;
        let mut pre: [Vec<f64>; 4] = Default::default();
        for g in 0..4 {
            pre[g] = cell.gates[g].matvec(&xr)?;
            for n in 0..h {
                pre[g][n] += cell.bias[g][n];
            }
        }
        if let Some(ph) = &cell.peephole {
            for n in 0..h {
                pre[0][n] += ph[0][n] * prev.c[n];
                pre[1][n] += ph[1][n] * prev.c[n];
            }
        }
        let mut act: [Vec<f64>; 4] = Default::default();
        act[0] = pre[0].iter().map(|&v| sigmoid(v)).collect();
        act[1] = pre[1].iter().map(|&v| sigmoid(v)).collect();
        act[2] = match self.arch.candidate_activation {
            CandidateActivation::Sigmoid => pre[2].iter().map(|&v| sigmoid(v)).collect(),
            CandidateActivation::Tanh => pre[2].iter().map(|v| v.tanh()).collect(),
        };
        let c: Vec<f64> = (0..h).map(|n| act[1][n] * prev.c[n] + act[2][n] * act[0][n]).collect();
        if let Some(ph) = &cell.peephole {
            for n in 0..h {
                pre[3][n] += ph[2][n] * c[n];
            }
        }
        act[3] = pre[3].iter().map(|&v| sigmoid(v)).collect();
        let m: Vec<f64> = (0..h).map(|n| act[3][n] * c[n].tanh()).collect();
        let y = match &cell.projection {
            Some(p) => p.matvec(&m)?,
            None => m.clone(),
        };
        Ok(StepTrace {
            pre,
            act,
            m,
            state: CellState { c, y },
        })
    }

    pub fn run_sequence(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        run_stack(&self.arch, xs, |l, d, x, s| Ok(self.step_traced(l, d, x, s)?.state))
    }
}
