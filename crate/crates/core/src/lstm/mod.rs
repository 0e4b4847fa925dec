//! LSTM execution on block-circulant weights.
//!
//! One step computes
//!
//! ```text
//! i = σ(W_i [x, y'] + w_ic ⊙ c' + b_i)
//! f = σ(W_f [x, y'] + w_fc ⊙ c' + b_f)
//! g = act(W_c [x, y'] + b_c)            act = σ by default, tanh optional
//! c = f ⊙ c' + g ⊙ i
//! o = σ(W_o [x, y'] + w_oc ⊙ c + b_o)
//! m = o ⊙ tanh(c)
//! y = W_ym m                            or y = m without projection
//! ```
//!
//! with primed values from the previous step. Float mode uses exact
//! activations and the double-precision spectral path; fixed-point mode runs
//! the 16-bit pipeline with piecewise-linear activations.

mod arch;
pub mod pwl;
mod reference;
mod weights;

use serde::{Deserialize, Serialize};

pub use arch::{CandidateActivation, LstmArchSpec};
pub use pwl::{build_pwl, FxpPwl, PwlFunction, PwlOps, PwlTable, Segment, PWL_DOMAIN, PWL_MAX_ERROR, PWL_SEGMENTS};
pub use reference::DenseReference;
pub use weights::{CellWeights, Classifier, LstmWeights, NamedTensor, TensorShape, GATES, PEEPHOLES};

use crate::circulant::{check_len, CallCounters, SpectralWeights};
use crate::error::{Error, Result};
use crate::fxp::{fxp_add, fxp_mul, FxpFormat, FxpScalar, FxpVector, ShiftPolicy};

/// Fixed-point configuration of the datapath.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxpConfig {
    /// Activations, state, biases and peephole vectors.
    pub data: FxpFormat,
    /// Quantized weight spectra.
    pub weight: FxpFormat,
    pub policy: ShiftPolicy,
}

impl Default for FxpConfig {
    fn default() -> Self {
        FxpConfig {
            data: FxpFormat::Q3_12,
            weight: FxpFormat::Q3_12,
            policy: ShiftPolicy::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Fxp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub c: Vec<f64>,
    pub y: Vec<f64>,
}

impl CellState {
    pub fn zeros(arch: &LstmArchSpec) -> Self {
        CellState {
            c: vec![0.0; arch.hidden_dim],
            y: vec![0.0; arch.output_dim()],
        }
    }
}

/// Step internals: gate pre-activations and activations in `i, f, g, o`
/// order, and the cell output `m` before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub pre: [Vec<f64>; 4],
    pub act: [Vec<f64>; 4],
    pub m: Vec<f64>,
    pub state: CellState,
}

struct FxpCell {
    bias: [FxpVector; 4],
    peephole: Option<[FxpVector; 3]>,
}

struct CellKernels {
    gates: [SpectralWeights; 4],
    projection: Option<SpectralWeights>,
    fxp: FxpCell,
}

pub struct LstmModel {
    weights: LstmWeights,
    cells: Vec<Vec<CellKernels>>,
    fxp: FxpConfig,
    sigmoid: PwlTable,
    tanh: PwlTable,
    sigmoid_q: FxpPwl,
    tanh_q: FxpPwl,
    counters: CallCounters,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn sigmoid(x: f64) -> f64 {
    PwlFunction::Sigmoid.exact(x)
}

impl LstmModel {
    pub fn new(weights: LstmWeights) -> Result<Self> {
        Self::with_fxp(weights, FxpConfig::default())
    }

    pub fn with_fxp(weights: LstmWeights, fxp: FxpConfig) -> Result<Self> {
        weights.arch.validate()?;
        let cells = weights
            .layers
            .iter()
            .map(|dirs| {
                dirs.iter()
                    .map(|c| {
                        let sw = |b| SpectralWeights::with_format(b, fxp.weight);
                        let q = |v: &Vec<f64>| FxpVector::quantize(v, fxp.data);
                        Ok(CellKernels {
                            gates: [sw(&c.gates[0])?, sw(&c.gates[1])?, sw(&c.gates[2])?, sw(&c.gates[3])?],
                            projection: c.projection.as_ref().map(sw).transpose()?,
                            fxp: FxpCell {
                                bias: [q(&c.bias[0]), q(&c.bias[1]), q(&c.bias[2]), q(&c.bias[3])],
                                peephole: c.peephole.as_ref().map(|p| [q(&p[0]), q(&p[1]), q(&p[2])]),
                            },
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let sigmoid = build_pwl(PwlFunction::Sigmoid);
        let tanh = build_pwl(PwlFunction::Tanh);
        Ok(LstmModel {
            sigmoid_q: sigmoid.quantize(fxp.data),
            tanh_q: tanh.quantize(fxp.data),
            sigmoid,
            tanh,
            weights,
            cells,
            fxp,
            counters: CallCounters::new(),
        })
    }

    pub fn arch(&self) -> &LstmArchSpec {
        &self.weights.arch
    }

    pub fn weights(&self) -> &LstmWeights {
        &self.weights
    }

    pub fn fxp_config(&self) -> FxpConfig {
        self.fxp
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    pub fn pwl_tables(&self) -> (&PwlTable, &PwlTable) {
        (&self.sigmoid, &self.tanh)
    }

    fn cell(&self, layer: usize, dir: usize) -> Result<(&CellWeights, &CellKernels)> {
        let arch = self.arch();
        if layer >= arch.num_layers || dir >= arch.directions() {
            return Err(Error::InvalidArch(format!("no cell at layer {layer}, direction {dir}")));
        }
        Ok((&self.weights.layers[layer][dir], &self.cells[layer][dir]))
    }

    pub fn step(&self, layer: usize, dir: usize, x: &[f64], prev: &CellState, mode: Mode) -> Result<CellState> {
        Ok(self.step_traced(layer, dir, x, prev, mode)?.state)
    }

    pub fn step_traced(
        &self,
        layer: usize,
        dir: usize,
        x: &[f64],
        prev: &CellState,
        mode: Mode,
    ) -> Result<StepTrace> {
        let arch = self.arch();
        check_len(arch.layer_input_dim(layer), x.len())?;
        check_len(arch.hidden_dim, prev.c.len())?;
        check_len(arch.output_dim(), prev.y.len())?;
        let (w, k) = self.cell(layer, dir)?;
        match mode {
            Mode::Float => self.step_float(w, k, x, prev),
            Mode::Fxp => self.step_fxp(k, x, prev),
        }
    }

    fn step_float(&self, w: &CellWeights, k: &CellKernels, x: &[f64], prev: &CellState) -> Result<StepTrace> {
        let xr = concat(x, &prev.y);
        let mut pre = [vec![], vec![], vec![], vec![]];
        for (g, p) in pre.iter_mut().enumerate() {
            *p = k.gates[g].matvec(&xr, &self.counters)?;
            p.iter_mut().zip(&w.bias[g]).for_each(|(a, b)| *a += b);
        }
        if let Some(ph) = &w.peephole {
            for (g, wc) in ph[..2].iter().enumerate() {
                pre[g].iter_mut().zip(wc).zip(&prev.c).for_each(|((a, w), c)| *a += w * c);
            }
        }
        let i: Vec<f64> = pre[0].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[1].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = match self.arch().candidate_activation {
            CandidateActivation::Sigmoid => pre[2].iter().map(|&v| sigmoid(v)).collect(),
            CandidateActivation::Tanh => pre[2].iter().map(|v| v.tanh()).collect(),
        };
        let c: Vec<f64> = (0..i.len()).map(|n| f[n] * prev.c[n] + g[n] * i[n]).collect();
        if let Some(ph) = &w.peephole {
            pre[3].iter_mut().zip(&ph[2]).zip(&c).for_each(|((a, w), c)| *a += w * c);
        }
        let o: Vec<f64> = pre[3].iter().map(|&v| sigmoid(v)).collect();
        let m: Vec<f64> = o.iter().zip(&c).map(|(o, c)| o * c.tanh()).collect();
        let y = match &k.projection {
            Some(p) => p.matvec(&m, &self.counters)?,
            None => m.clone(),
        };
        Ok(StepTrace {
            pre,
            act: [i, f, g, o],
            m,
            state: CellState { c, y },
        })
    }

    fn step_fxp(&self, k: &CellKernels, x: &[f64], prev: &CellState) -> Result<StepTrace> {
        let fmt = self.fxp.data;
        let policy = self.fxp.policy;
        let xr = FxpVector::quantize(&concat(x, &prev.y), fmt);
        let c_prev = FxpVector::quantize(&prev.c, fmt);
        let mut pre: [Vec<FxpScalar>; 4] = Default::default();
        for (g, p) in pre.iter_mut().enumerate() {
            let a = k.gates[g].matvec_fxp(&xr, policy, &self.counters)?;
            let b = &k.fxp.bias[g];
            *p = (0..a.len()).map(|n| fxp_add(a.get(n), b.get(n))).collect();
        }
        if let Some(ph) = &k.fxp.peephole {
            for (g, wc) in ph[..2].iter().enumerate() {
                for (n, a) in pre[g].iter_mut().enumerate() {
                    *a = fxp_add(*a, fxp_mul(wc.get(n), c_prev.get(n)));
                }
            }
        }
        let sig = |v: &[FxpScalar]| -> Vec<FxpScalar> { v.iter().map(|&s| self.sigmoid_q.eval(s)).collect() };
        let i = sig(&pre[0]);
        let f = sig(&pre[1]);
        let g = match self.arch().candidate_activation {
            CandidateActivation::Sigmoid => sig(&pre[2]),
            CandidateActivation::Tanh => pre[2].iter().map(|&s| self.tanh_q.eval(s)).collect(),
        };
        let c: Vec<FxpScalar> = (0..i.len())
            .map(|n| fxp_add(fxp_mul(f[n], c_prev.get(n)), fxp_mul(g[n], i[n])))
            .collect();
        if let Some(ph) = &k.fxp.peephole {
            for (n, a) in pre[3].iter_mut().enumerate() {
                *a = fxp_add(*a, fxp_mul(ph[2].get(n), c[n]));
            }
        }
        let o = sig(&pre[3]);
        let m: Vec<FxpScalar> = o
            .iter()
            .zip(&c)
            .map(|(&o, &c)| fxp_mul(o, self.tanh_q.eval(c)))
            .collect();
        let mv = FxpVector::from_scalars(&m, fmt);
        let y = match &k.projection {
            Some(p) => p.matvec_fxp(&mv, policy, &self.counters)?,
            None => mv.clone(),
        };
        let f64s = |v: &[FxpScalar]| -> Vec<f64> { v.iter().map(|s| s.to_f64()).collect() };
        Ok(StepTrace {
            pre: [f64s(&pre[0]), f64s(&pre[1]), f64s(&pre[2]), f64s(&pre[3])],
            act: [f64s(&i), f64s(&f), f64s(&g), f64s(&o)],
            m: mv.to_f64(),
            state: CellState {
                c: f64s(&c),
                y: y.to_f64(),
            },
        })
    }

    /// Run the whole stack over a sequence from a zero initial state and
    /// return the top layer's output at every timestep. Bidirectional
    /// outputs are `[forward, backward]`.
    pub fn run_sequence(&self, xs: &[Vec<f64>], mode: Mode) -> Result<Vec<Vec<f64>>> {
        run_stack(self.arch(), xs, |l, d, x, s| self.step(l, d, x, s, mode))
    }

    /// Dense output layer applied to one timestep of the stack output.
    pub fn classify(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        let Some(cl) = &self.weights.classifier else {
            return Ok(None);
        };
        let mut out = cl.weight.matvec(y)?;
        out.iter_mut().zip(&cl.bias).for_each(|(a, b)| *a += b);
        Ok(Some(out))
    }
}

/// Fold a per-cell step function over layers, directions and time.
pub(crate) fn run_stack<F>(arch: &LstmArchSpec, xs: &[Vec<f64>], step: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize, &[f64], &CellState) -> Result<CellState>,
{
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let t_len = xs.len();
    let mut input: Vec<Vec<f64>> = xs.to_vec();
    for layer in 0..arch.num_layers {
        let mut out = vec![Vec::with_capacity(arch.sequence_output_dim()); t_len];
        for dir in 0..arch.directions() {
            let mut state = CellState::zeros(arch);
            for s in 0..t_len {
                let t = if dir == 0 { s } else { t_len - 1 - s };
                state = step(layer, dir, &input[t], &state)?;
                out[t].extend_from_slice(&state.y);
            }
        }
        input = out;
    }
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(peephole: bool, projection: bool, bidirectional: bool) -> LstmArchSpec {
        LstmArchSpec {
            input_dim: 6,
            hidden_dim: 8,
            projection_dim: projection.then_some(4),
            num_layers: 2,
            bidirectional,
            peephole,
            projection,
            block_size: 4,
            candidate_activation: CandidateActivation::Sigmoid,
            output_classes: None,
        }
    }

    fn seq(t: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let arch = tiny(true, true, false);
        let model = LstmModel::new(LstmWeights::zeros(&arch).unwrap()).unwrap();
        let s = model
            .step_traced(0, 0, &[0.3; 6], &CellState::zeros(&arch), Mode::Float)
            .unwrap();
        // i = f = g = o = 1/2, c = 1/4, but the projection is zero
        assert!(s.act.iter().flatten().all(|&v| v == 0.5));
        assert!(s.state.c.iter().all(|&v| v == 0.25));
        assert!(s.state.y.iter().all(|&v| v == 0.0));
        let arch = tiny(false, false, false);
        let model = LstmModel::new(LstmWeights::zeros(&arch).unwrap()).unwrap();
        let y = model.run_sequence(&seq(3, 6, 1), Mode::Float).unwrap();
        // without projection y = m = o * tanh(c) is non-zero
        assert!(y.iter().flatten().all(|&v| v > 0.0));
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let arch = tiny(false, false, false);
        let model = LstmModel::new(LstmWeights::random(&arch, 1).unwrap()).unwrap();
        assert_eq!(model.run_sequence(&[], Mode::Float), Err(Error::EmptySequence));
    }

    #[test]
    fn single_step_sequence_matches_step() {
        let mut arch = tiny(true, true, false);
        arch.num_layers = 1;
        let model = LstmModel::new(LstmWeights::random(&arch, 2).unwrap()).unwrap();
        let x = seq(1, 6, 3);
        for mode in [Mode::Float, Mode::Fxp] {
            let y = model.run_sequence(&x, mode).unwrap();
            let s = model.step(0, 0, &x[0], &CellState::zeros(&arch), mode).unwrap();
            assert_eq!(y[0], s.y);
        }
    }

    #[test]
    fn dimension_checks() {
        let arch = tiny(true, true, true);
        let model = LstmModel::new(LstmWeights::random(&arch, 2).unwrap()).unwrap();
        let st = CellState::zeros(&arch);
        assert!(model.step(0, 0, &[0.0; 5], &st, Mode::Float).is_err());
        assert!(model.step(1, 0, &[0.0; 6], &st, Mode::Float).is_err());
        assert!(model.step(1, 0, &[0.0; 8], &st, Mode::Float).is_ok());
        assert!(model.step(2, 0, &[0.0; 8], &st, Mode::Float).is_err());
        assert!(model.run_sequence(&[vec![0.0; 7]], Mode::Float).is_err());
    }

    #[test]
    fn gate_activations_are_bounded() {
        let arch = tiny(true, true, false);
        let model = LstmModel::new(LstmWeights::random(&arch, 5).unwrap()).unwrap();
        let mut st = CellState::zeros(&arch);
        for x in seq(10, 6, 6) {
            for mode in [Mode::Float, Mode::Fxp] {
                let tr = model.step_traced(0, 0, &x, &st, mode).unwrap();
                for a in tr.act.iter().flatten() {
                    match mode {
                        Mode::Float => assert!(*a > 0.0 && *a < 1.0),
                        Mode::Fxp => assert!((0.0..=1.0).contains(a)),
                    }
                }
            }
            st = model.step(0, 0, &x, &st, Mode::Float).unwrap();
        }
    }

    #[test]
    fn fxp_tracks_float_on_small_inputs() {
        for (ph, pr, bi) in [(true, true, false), (false, false, true)] {
            let arch = tiny(ph, pr, bi);
            let model = LstmModel::new(LstmWeights::random(&arch, 7).unwrap()).unwrap();
            let xs: Vec<Vec<f64>> = seq(8, 6, 8).into_iter().map(|v| v.iter().map(|a| a * 0.5).collect()).collect();
            let a = model.run_sequence(&xs, Mode::Float).unwrap();
            let b = model.run_sequence(&xs, Mode::Fxp).unwrap();
            let worst = a
                .iter()
                .flatten()
                .zip(b.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 0.02, "{worst}");
        }
    }

    #[test]
    fn fxp_is_deterministic() {
        let arch = tiny(true, true, true);
        let xs = seq(6, 6, 9);
        let a = LstmModel::new(LstmWeights::random(&arch, 4).unwrap())
            .unwrap()
            .run_sequence(&xs, Mode::Fxp)
            .unwrap();
        let b = LstmModel::new(LstmWeights::random(&arch, 4).unwrap())
            .unwrap()
            .run_sequence(&xs, Mode::Fxp)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bidirectional_palindrome_mirrors() {
        let mut arch = tiny(false, false, true);
        arch.num_layers = 1;
        let mut w = LstmWeights::random(&arch, 10).unwrap();
        w.layers[0][1] = w.layers[0][0].clone();
        let model = LstmModel::new(w).unwrap();
        let mut xs = seq(4, 6, 11);
        let back: Vec<_> = xs.iter().rev().cloned().collect();
        xs.extend(back);
        let y = model.run_sequence(&xs, Mode::Float).unwrap();
        let h = arch.output_dim();
        let t = xs.len();
        for s in 0..t {
            assert_eq!(y[s][..h], y[t - 1 - s][h..]);
        }
    }

    #[test]
    fn tanh_candidate_toggle() {
        let mut arch = tiny(false, false, false);
        arch.num_layers = 1;
        arch.candidate_activation = CandidateActivation::Tanh;
        let model = LstmModel::new(LstmWeights::zeros(&arch).unwrap()).unwrap();
        let tr = model
            .step_traced(0, 0, &[0.0; 6], &CellState::zeros(&arch), Mode::Float)
            .unwrap();
        // tanh(0) = 0 leaves the cell empty
        assert!(tr.state.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_applies_to_stack_output() {
        let mut arch = tiny(false, false, false);
        arch.output_classes = Some(3);
        let model = LstmModel::new(LstmWeights::random(&arch, 12).unwrap()).unwrap();
        let y = model.run_sequence(&seq(2, 6, 13), Mode::Float).unwrap();
        assert_eq!(model.classify(&y[1]).unwrap().unwrap().len(), 3);
        let model = LstmModel::new(LstmWeights::random(&tiny(false, false, false), 12).unwrap()).unwrap();
        assert_eq!(model.classify(&y[1]).unwrap(), None);
    }
}
