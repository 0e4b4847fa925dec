use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::log2_exact;

/// Activation applied to the cell candidate `g_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateActivation {
    #[default]
    Sigmoid,
    Tanh,
}

/// Shape of a (possibly stacked, possibly bidirectional) LSTM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmArchSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub projection_dim: Option<usize>,
    pub num_layers: usize,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default)]
    pub peephole: bool,
    #[serde(default)]
    pub projection: bool,
    pub block_size: usize,
    #[serde(default)]
    pub candidate_activation: CandidateActivation,
    /// Width of an optional dense softmax-input layer on top of the stack.
    /// Counted in parameter totals, never compressed.
    #[serde(default)]
    pub output_classes: Option<usize>,
}

impl LstmArchSpec {
    /// Two projected peephole layers, 1024 cells, 512-d projection, 153-d
    /// filterbank input, 61 output classes.
    pub fn google(k: usize) -> Self {
        LstmArchSpec {
            input_dim: 153,
            hidden_dim: 1024,
            projection_dim: Some(512),
            num_layers: 2,
            bidirectional: false,
            peephole: true,
            projection: true,
            block_size: k,
            candidate_activation: CandidateActivation::Sigmoid,
            output_classes: Some(61),
        }
    }

    /// Bidirectional two-layer LSTM with 512 cells, no peephole or projection.
    pub fn small(k: usize) -> Self {
        LstmArchSpec {
            input_dim: 39,
            hidden_dim: 512,
            projection_dim: None,
            num_layers: 2,
            bidirectional: true,
            peephole: false,
            projection: false,
            block_size: k,
            candidate_activation: CandidateActivation::Sigmoid,
            output_classes: None,
        }
    }

    pub fn with_block_size(&self, k: usize) -> Self {
        LstmArchSpec {
            block_size: k,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArch(msg.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("dimensions and layer count must be positive");
        }
        match (self.projection, self.projection_dim) {
            (true, Some(0)) => return bad("projection_dim must be positive"),
            (true, None) => return bad("projection enabled without projection_dim"),
            (false, Some(_)) => return bad("projection_dim given with projection disabled"),
            _ => {}
        }
        if self.output_classes == Some(0) {
            return bad("output_classes must be positive");
        }
        log2_exact(self.block_size)?;
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of `y_t` for one direction.
    pub fn output_dim(&self) -> usize {
        match (self.projection, self.projection_dim) {
            (true, Some(r)) => r,
            _ => self.hidden_dim,
        }
    }

    /// Width of the stacked output at each timestep.
    pub fn sequence_output_dim(&self) -> usize {
        self.output_dim() * self.directions()
    }

    /// Width of `x_t` seen by `layer`.
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.sequence_output_dim()
        }
    }

    /// Columns of the fused gate matrices of `layer`: `[x_t, y_{t-1}]`.
    pub fn gate_cols(&self, layer: usize) -> usize {
        self.layer_input_dim(layer) + self.output_dim()
    }
}
