use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::LstmArchSpec;
use crate::circulant::{BlockCirculantMatrix, DenseMatrix};
use crate::error::{Error, Result};

/// Gate order used everywhere: input, forget, cell candidate, output.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];
/// Peephole order: input, forget, output.
pub const PEEPHOLES: [&str; 3] = ["ic", "fc", "oc"];

/// Parameters of one layer in one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct CellWeights {
    /// Fused `[x_t, y_{t-1}]` matrices, `hidden x (in + out)`.
    pub gates: [BlockCirculantMatrix; 4],
    pub bias: [Vec<f64>; 4],
    pub peephole: Option<[Vec<f64>; 3]>,
    /// `out x hidden`.
    pub projection: Option<BlockCirculantMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub arch: LstmArchSpec,
    /// `layers[l][d]`, direction 0 forward, 1 backward.
    pub layers: Vec<Vec<CellWeights>>,
    pub classifier: Option<Classifier>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TensorShape {
    /// Block-circulant matrix; data holds the `p*q*k` defining rows.
    Circulant { m: usize, n: usize, k: usize },
    Dense { rows: usize, cols: usize },
    Vector { len: usize },
}

impl TensorShape {
    pub fn len(&self) -> usize {
        match *self {
            TensorShape::Circulant { m, n, k } => m.div_ceil(k) * n.div_ceil(k) * k,
            TensorShape::Dense { rows, cols } => rows * cols,
            TensorShape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

fn prefix(layer: usize, dir: usize) -> String {
    format!("l{layer}.{}", if dir == 0 { "fw" } else { "bw" })
}

impl LstmWeights {
    /// Uniform `[-1/sqrt(n), 1/sqrt(n)]` initialization, `n` the fan-in of
    /// the matrix a parameter belongs to.
    pub fn random(arch: &LstmArchSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |len, bound| {
            (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
        })
    }

    /// All-zero parameters.
    pub fn zeros(arch: &LstmArchSpec) -> Result<Self> {
        Self::build(arch, |len, _| vec![0.0; len])
    }

    /// Draw every tensor in `to_named` order from `fill(len, fan_in_bound)`.
    fn build(arch: &LstmArchSpec, mut fill: impl FnMut(usize, f64) -> Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let k = arch.block_size;
        let h = arch.hidden_dim;
        let out = arch.output_dim();
        let mut layers = Vec::with_capacity(arch.num_layers);
        for l in 0..arch.num_layers {
            let cols = arch.gate_cols(l);
            let gb = 1.0 / (cols as f64).sqrt();
            let glen = TensorShape::Circulant { m: h, n: cols, k }.len();
            let mut dirs = Vec::new();
            for _ in 0..arch.directions() {
                let mut gate = || BlockCirculantMatrix::new(h, cols, k, fill(glen, gb));
                let gates = [gate()?, gate()?, gate()?, gate()?];
                let bias = [fill(h, gb), fill(h, gb), fill(h, gb), fill(h, gb)];
                let peephole = arch.peephole.then(|| [fill(h, gb), fill(h, gb), fill(h, gb)]);
                let projection = if arch.projection {
                    let len = TensorShape::Circulant { m: out, n: h, k }.len();
                    let pb = 1.0 / (h as f64).sqrt();
                    Some(BlockCirculantMatrix::new(out, h, k, fill(len, pb))?)
                } else {
                    None
                };
                dirs.push(CellWeights {
                    gates,
                    bias,
                    peephole,
                    projection,
                });
            }
            layers.push(dirs);
        }
        let classifier = match arch.output_classes {
            Some(c) => {
                let n = arch.sequence_output_dim();
                let b = 1.0 / (n as f64).sqrt();
                Some(Classifier {
                    weight: DenseMatrix::from_vec(c, n, fill(c * n, b))?,
                    bias: fill(c, b),
                })
            }
            None => None,
        };
        Ok(LstmWeights {
            arch: arch.clone(),
            layers,
            classifier,
        })
    }

    /// Re-express every circulant matrix with block size `k` by projecting
    /// its dense expansion. Vectors and the classifier are copied.
    pub fn project(&self, k: usize) -> Result<Self> {
        let arch = self.arch.with_block_size(k);
        arch.validate()?;
        let proj = |b: &BlockCirculantMatrix| BlockCirculantMatrix::project_dense(&b.expand_to_dense(), k);
        let layers = self
            .layers
            .iter()
            .map(|dirs| {
                dirs.iter()
                    .map(|c| {
                        Ok(CellWeights {
                            gates: [
                                proj(&c.gates[0])?,
                                proj(&c.gates[1])?,
                                proj(&c.gates[2])?,
                                proj(&c.gates[3])?,
                            ],
                            bias: c.bias.clone(),
                            peephole: c.peephole.clone(),
                            projection: c.projection.as_ref().map(proj).transpose()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LstmWeights {
            arch,
            layers,
            classifier: self.classifier.clone(),
        })
    }

    /// Stored parameter count (circulant rows, vectors, classifier).
    pub fn param_count(&self) -> usize {
        self.to_named().iter().map(|t| t.data.len()).sum()
    }

    /// Flatten into named tensors in a fixed order.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let circ = |name: String, b: &BlockCirculantMatrix| NamedTensor {
            name,
            shape: TensorShape::Circulant {
                m: b.rows(),
                n: b.cols(),
                k: b.block_size(),
            },
            data: b.data().to_vec(),
        };
        let vector = |name: String, v: &[f64]| NamedTensor {
            name,
            shape: TensorShape::Vector { len: v.len() },
            data: v.to_vec(),
        };
        for (l, dirs) in self.layers.iter().enumerate() {
            for (d, c) in dirs.iter().enumerate() {
                let pre = prefix(l, d);
                for (g, name) in GATES.iter().enumerate() {
                    out.push(circ(format!("{pre}.w_{name}"), &c.gates[g]));
                }
                for (g, name) in GATES.iter().enumerate() {
                    out.push(vector(format!("{pre}.b_{name}"), &c.bias[g]));
                }
                if let Some(ph) = &c.peephole {
                    for (g, name) in PEEPHOLES.iter().enumerate() {
                        out.push(vector(format!("{pre}.w_{name}"), &ph[g]));
                    }
                }
                if let Some(p) = &c.projection {
                    out.push(circ(format!("{pre}.w_ym"), p));
                }
            }
        }
        if let Some(cl) = &self.classifier {
            out.push(NamedTensor {
                name: "out.w".into(),
                shape: TensorShape::Dense {
                    rows: cl.weight.rows,
                    cols: cl.weight.cols,
                },
                data: cl.weight.data.clone(),
            });
            out.push(vector("out.b".into(), &cl.bias));
        }
        out
    }

    /// Inverse of [`to_named`](Self::to_named). Names, order and shapes
    /// must match what `arch` implies.
    pub fn from_named(arch: &LstmArchSpec, tensors: Vec<NamedTensor>) -> Result<Self> {
        arch.validate()?;
        // shapes are checked against a zero template built from the spec
        let template = Self::zeros(arch)?.to_named();
        if template.len() != tensors.len() {
            return Err(Error::InvalidArch(format!(
                "expected {} tensors, found {}",
                template.len(),
                tensors.len()
            )));
        }
        for (t, e) in tensors.iter().zip(&template) {
            if t.name != e.name || t.shape != e.shape {
                return Err(Error::InvalidArch(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
            if t.data.len() != t.shape.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.shape.len(),
                    found: t.data.len(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut vector = || it.next().expect("count checked");
        let mut w = Self::zeros(arch)?;
        for c in w.layers.iter_mut().flatten() {
            for g in c.gates.iter_mut() {
                *g = BlockCirculantMatrix::new(g.rows(), g.cols(), g.block_size(), vector().data)?;
            }
            for b in c.bias.iter_mut() {
                *b = vector().data;
            }
            if let Some(ph) = c.peephole.as_mut() {
                for v in ph.iter_mut() {
                    *v = vector().data;
                }
            }
            if let Some(p) = c.projection.as_mut() {
                *p = BlockCirculantMatrix::new(p.rows(), p.cols(), p.block_size(), vector().data)?;
            }
        }
        if let Some(cl) = w.classifier.as_mut() {
            cl.weight.data = vector().data;
            cl.bias = vector().data;
        }
        Ok(w)
    }
}
