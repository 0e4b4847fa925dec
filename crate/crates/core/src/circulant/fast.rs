use std::ops::Sub;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex as C;
use serde::{Deserialize, Serialize};

use super::{check_len, BlockCirculantMatrix};
use crate::error::Result;
use crate::fxp::{shift_round, shift_schedule, Acc32, FxpFormat, FxpVector, ShiftPolicy};
use crate::spectral::{FftPlan, FxpFftPlan, FxpSpectrum, PackedSpectrum};

/// Transform and pointwise-product call counters. Shared by reference
/// across workers; increments are atomic so totals stay exact.
#[derive(Debug, Default)]
pub struct CallCounters {
    dft: AtomicU64,
    idft: AtomicU64,
    pointwise: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub dft: u64,
    pub idft: u64,
    pub pointwise: u64,
}

impl Sub for CallCounts {
    type Output = CallCounts;
    fn sub(self, o: CallCounts) -> CallCounts {
        CallCounts {
            dft: self.dft - o.dft,
            idft: self.idft - o.idft,
            pointwise: self.pointwise - o.pointwise,
        }
    }
}

impl CallCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            dft: self.dft.load(Ordering::Relaxed),
            idft: self.idft.load(Ordering::Relaxed),
            pointwise: self.pointwise.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.dft.store(0, Ordering::Relaxed);
        self.idft.store(0, Ordering::Relaxed);
        self.pointwise.store(0, Ordering::Relaxed);
    }

    fn dft(&self, n: u64) {
        self.dft.fetch_add(n, Ordering::Relaxed);
    }

    fn idft(&self, n: u64) {
        self.idft.fetch_add(n, Ordering::Relaxed);
    }

    fn pointwise(&self, n: u64) {
        self.pointwise.fetch_add(n, Ordering::Relaxed);
    }
}

/// Precomputed block spectra of a [`BlockCirculantMatrix`], in float and
/// 16-bit fixed point.
///
/// The stored spectrum of block `(i, j)` is the DFT of the block's first
/// column (equivalently the conjugate of the DFT of its defining row), so
/// that `a_i = IDFT(sum_j S_ij ⊙ DFT(x_j))` reproduces the row-shift
/// convention of the matrix.
#[derive(Clone, Debug)]
pub struct SpectralWeights {
    m: usize,
    n: usize,
    k: usize,
    p: usize,
    q: usize,
    plan: FftPlan,
    fxp_plan: FxpFftPlan,
    spectra: Vec<PackedSpectrum>,
    fxp_spectra: Vec<FxpSpectrum>,
    weight_format: FxpFormat,
}

impl SpectralWeights {
    pub fn new(b: &BlockCirculantMatrix) -> Result<Self> {
        Self::with_format(b, FxpFormat::default())
    }

    pub fn with_format(b: &BlockCirculantMatrix, weight_format: FxpFormat) -> Result<Self> {
        let (p, q) = b.grid();
        let k = b.block_size();
        let plan = FftPlan::new(k)?;
        let mut spectra = Vec::with_capacity(p * q);
        for i in 0..p {
            for j in 0..q {
                let s = plan.forward(b.row(i, j))?;
                let conj = s.bins().iter().map(|c| c.conj()).collect();
                spectra.push(PackedSpectrum::new(k, conj)?);
            }
        }
        let fxp_spectra = spectra
            .iter()
            .map(|s| FxpSpectrum::quantize(s, weight_format))
            .collect();
        Ok(SpectralWeights {
            m: b.rows(),
            n: b.cols(),
            k,
            p,
            q,
            plan,
            fxp_plan: FxpFftPlan::new(k)?,
            spectra,
            fxp_spectra,
            weight_format,
        })
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

    pub fn weight_format(&self) -> FxpFormat {
        self.weight_format
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &PackedSpectrum {
        &self.spectra[i * self.q + j]
    }

    pub fn fxp_spectrum(&self, i: usize, j: usize) -> &FxpSpectrum {
        &self.fxp_spectra[i * self.q + j]
    }

    fn input_spectra(&self, x: &[f64], counters: &CallCounters) -> Result<Vec<PackedSpectrum>> {
        check_len(self.n, x.len())?;
        let k = self.k;
        let mut xp = x.to_vec();
        xp.resize(self.q * k, 0.0);
        let out = xp
            .chunks_exact(k)
            .map(|xj| self.plan.forward(xj))
            .collect::<Result<Vec<_>>>()?;
        counters.dft(self.q as u64);
        Ok(out)
    }

    /// Decoupled spectral mat-vec: `q` forward transforms, `p*q` pointwise
    /// products accumulated per block row, `p` inverse transforms.
    pub fn matvec(&self, x: &[f64], counters: &CallCounters) -> Result<Vec<f64>> {
        let xs = self.input_spectra(x, counters)?;
        let mut out = Vec::with_capacity(self.p * self.k);
        for i in 0..self.p {
            let mut acc = PackedSpectrum::zeros(self.k)?;
            for (j, xj) in xs.iter().enumerate() {
                acc.mul_accumulate(self.spectrum(i, j), xj)?;
            }
            counters.pointwise(self.q as u64);
            out.extend(self.plan.inverse(&acc)?);
            counters.idft(1);
        }
        out.truncate(self.m);
        Ok(out)
    }

    /// Same product with one inverse transform per block, i.e. before the
    /// inverse transform is moved outside the block-column sum.
    pub fn matvec_coupled(&self, x: &[f64], counters: &CallCounters) -> Result<Vec<f64>> {
        let xs = self.input_spectra(x, counters)?;
        let k = self.k;
        let mut out = vec![0.0; self.p * k];
        for i in 0..self.p {
            for (j, xj) in xs.iter().enumerate() {
                let mut prod = PackedSpectrum::zeros(k)?;
                prod.mul_accumulate(self.spectrum(i, j), xj)?;
                counters.pointwise(1);
                let part = self.plan.inverse(&prod)?;
                counters.idft(1);
                for (o, v) in out[i * k..(i + 1) * k].iter_mut().zip(part) {
                    *o += v;
                }
            }
        }
        out.truncate(self.m);
        Ok(out)
    }

    /// Fixed-point spectral mat-vec. Products are rounded once to the input
    /// format and summed in saturating 32-bit accumulators before being
    /// narrowed to 16 bits for the inverse transform.
    pub fn matvec_fxp(
        &self,
        x: &FxpVector,
        policy: ShiftPolicy,
        counters: &CallCounters,
    ) -> Result<FxpVector> {
        check_len(self.n, x.len())?;
        let k = self.k;
        let fmt = x.format;
        let sched = shift_schedule(policy, k)?;
        let mut xp = x.raw.clone();
        xp.resize(self.q * k, 0);
        let xs = xp
            .chunks_exact(k)
            .map(|xj| {
                let v = FxpVector {
                    raw: xj.to_vec(),
                    format: fmt,
                };
                self.fxp_plan.forward(&v, &sched)
            })
            .collect::<Result<Vec<_>>>()?;
        counters.dft(self.q as u64);

        let wfrac = self.weight_format.frac_bits() as i32;
        let nb = k / 2 + 1;
        let mut out = Vec::with_capacity(self.p * k);
        for i in 0..self.p {
            let mut acc_re = vec![Acc32::new(fmt.frac_bits()); nb];
            let mut acc_im = vec![Acc32::new(fmt.frac_bits()); nb];
            for (j, xj) in xs.iter().enumerate() {
                let w = self.fxp_spectrum(i, j);
                for b in 0..nb {
                    let (wr, wi) = (w.bins[b].re as i64, w.bins[b].im as i64);
                    let (xr, xi) = (xj.bins[b].re as i64, xj.bins[b].im as i64);
                    if b == 0 || b == nb - 1 {
                        acc_re[b].add_wide(shift_round(wr * xr, wfrac));
                    } else {
                        acc_re[b].add_wide(shift_round(wr * xr - wi * xi, wfrac));
                        acc_im[b].add_wide(shift_round(wr * xi + wi * xr, wfrac));
                    }
                }
            }
            counters.pointwise(self.q as u64);
            let spec = FxpSpectrum {
                k,
                format: fmt,
                bins: acc_re
                    .iter()
                    .zip(&acc_im)
                    .map(|(r, im)| C::new(r.narrow(fmt).raw, im.narrow(fmt).raw))
                    .collect(),
            };
            out.extend(self.fxp_plan.inverse(&spec, &sched)?.raw);
            counters.idft(1);
        }
        out.truncate(self.m);
        Ok(FxpVector {
            raw: out,
            format: fmt,
        })
    }
}

impl BlockCirculantMatrix {
    /// Spectral mat-vec without precomputed weight spectra: every block's
    /// spectrum is transformed on the fly, adding `p*q` forward calls.
    pub fn matvec_fft(&self, x: &[f64], counters: &CallCounters) -> Result<Vec<f64>> {
        let sw = SpectralWeights::new(self)?;
        let (p, q) = self.grid();
        counters.dft((p * q) as u64);
        sw.matvec(x, counters)
    }
}

pub fn matvec_fft(w: &SpectralWeights, x: &[f64], counters: &CallCounters) -> Result<Vec<f64>> {
    w.matvec(x, counters)
}

pub fn matvec_fft_fxp(
    w: &SpectralWeights,
    x: &FxpVector,
    policy: ShiftPolicy,
    counters: &CallCounters,
) -> Result<FxpVector> {
    w.matvec_fxp(x, policy, counters)
}

/// Gradients of a scalar loss with respect to the defining rows and input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Same layout as [`BlockCirculantMatrix::data`].
    pub weights: Vec<f64>,
    pub input: Vec<f64>,
}

/// Backward pass of `a = W x` given `upstream = dL/da`.
///
/// With `G_i = DFT(dL/da_i)` and `X_j = DFT(x_j)`:
/// `dL/dw_ij = IDFT(conj(G_i) ⊙ X_j)` (circular cross-correlation) and
/// `dL/dx_j = IDFT(sum_i DFT(w_ij) ⊙ G_i)` (one inverse call per block
/// column).
pub fn grad(b: &BlockCirculantMatrix, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
    check_len(b.cols(), x.len())?;
    check_len(b.rows(), upstream.len())?;
    let k = b.block_size();
    let (p, q) = b.grid();
    let plan = FftPlan::new(k)?;

    let spectra_of = |v: &[f64], blocks: usize| -> Result<Vec<PackedSpectrum>> {
        let mut padded = v.to_vec();
        padded.resize(blocks * k, 0.0);
        padded.chunks_exact(k).map(|c| plan.forward(c)).collect()
    };
    let xs = spectra_of(x, q)?;
    let gs = spectra_of(upstream, p)?;
    let ws = (0..p * q)
        .map(|idx| plan.forward(b.row(idx / q, idx % q)))
        .collect::<Result<Vec<_>>>()?;

    let mut dw = Vec::with_capacity(p * q * k);
    for (i, gi) in gs.iter().enumerate() {
        for xj in &xs {
            let mut acc = PackedSpectrum::zeros(k)?;
            acc.mul_conj_accumulate(xj, gi)?;
            dw.extend(plan.inverse(&acc)?);
        }
        debug_assert_eq!(dw.len(), (i + 1) * q * k);
    }

    let mut dx = Vec::with_capacity(q * k);
    for j in 0..q {
        let mut acc = PackedSpectrum::zeros(k)?;
        for (i, gi) in gs.iter().enumerate() {
            acc.mul_accumulate(&ws[i * q + j], gi)?;
        }
        dx.extend(plan.inverse(&acc)?);
    }
    dx.truncate(b.cols());
    Ok(Gradients {
        weights: dw,
        input: dx,
    })
}
