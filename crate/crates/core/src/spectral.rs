//! Real-input DFT/IDFT kernels with conjugate-symmetric packing.
//!
//! The float kernels are an iterative radix-2 decimation-in-time FFT. The
//! fixed-point kernels run the same butterfly network on 16-bit words and
//! apply a per-stage right shift taken from a [`ShiftSchedule`].

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use num_complex::Complex as C;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{
    log2_exact, saturate16, shift_round, shift_schedule, FxpFormat, FxpVector, ShiftPolicy,
    ShiftSchedule,
};

pub type Complex = num_complex::Complex64;

/// Raw arithmetic operation counts (real multiplies and real additions).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mul: u64,
    pub add: u64,
}

impl OpCount {
    pub fn total(self) -> u64 {
        self.mul + self.add
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            mul: self.mul + o.mul,
            add: self.add + o.add,
        }
    }
}

impl Mul<u64> for OpCount {
    type Output = OpCount;
    fn mul(self, n: u64) -> OpCount {
        OpCount {
            mul: self.mul * n,
            add: self.add * n,
        }
    }
}

/// Cost of one radix-2 transform of length `k`: `k/2 * log2 k` butterflies,
/// each a complex multiply (4 mul, 2 add) and two complex adds.
pub fn fft_op_count(k: usize) -> OpCount {
    let stages = k.trailing_zeros() as u64;
    let butterflies = (k as u64 / 2) * stages;
    OpCount {
        mul: 4 * butterflies,
        add: 6 * butterflies,
    }
}

/// Cost of a packed pointwise product. The DC and Nyquist bins are real,
/// the `k/2 - 1` interior bins are full complex products.
pub fn pointwise_op_count(k: usize) -> OpCount {
    if k == 1 {
        return OpCount { mul: 1, add: 0 };
    }
    let interior = (k / 2 - 1) as u64;
    OpCount {
        mul: 2 + 4 * interior,
        add: 2 * interior,
    }
}

/// Cost of the same product over an unpacked length-`k` spectrum.
pub fn unpacked_pointwise_op_count(k: usize) -> OpCount {
    OpCount {
        mul: 4 * k as u64,
        add: 2 * k as u64,
    }
}

fn packed_len(k: usize) -> usize {
    k / 2 + 1
}

fn bit_reverse_table(k: usize, stages: u32) -> Vec<usize> {
    (0..k)
        .map(|i| {
            if stages == 0 {
                0
            } else {
                i.reverse_bits() >> (usize::BITS - stages)
            }
        })
        .collect()
}

/// First `k/2 + 1` bins of the DFT of a real length-`k` signal. The
/// remaining bins follow from `X[k-i] = conj(X[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedSpectrum {
    k: usize,
    bins: Vec<Complex>,
}

impl PackedSpectrum {
    pub fn new(k: usize, bins: Vec<Complex>) -> Result<Self> {
        log2_exact(k)?;
        if bins.len() != packed_len(k) {
            return Err(Error::DimensionMismatch {
                expected: packed_len(k),
                found: bins.len(),
            });
        }
        if bins.iter().any(|b| !b.re.is_finite() || !b.im.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite bin".into()));
        }
        if bins[0].im != 0.0 || bins[bins.len() - 1].im != 0.0 {
            return Err(Error::InvalidSpectrum(
                "DC and Nyquist bins must be real".into(),
            ));
        }
        Ok(PackedSpectrum { k, bins })
    }

    pub fn zeros(k: usize) -> Result<Self> {
        PackedSpectrum::new(k, vec![Complex::new(0.0, 0.0); packed_len(k)])
    }

    /// Packs a full-length spectrum; it must be exactly conjugate symmetric.
    pub fn pack(full: &[Complex]) -> Result<Self> {
        let k = full.len();
        log2_exact(k)?;
        for i in 1..k {
            if full[k - i] != full[i].conj() {
                return Err(Error::InvalidSpectrum(format!(
                    "bin {} is not the conjugate of bin {i}",
                    k - i
                )));
            }
        }
        PackedSpectrum::new(k, full[..packed_len(k)].to_vec())
    }

    pub fn unpack(&self) -> Vec<Complex> {
        let k = self.k;
        let mut full = Vec::with_capacity(k);
        full.extend_from_slice(&self.bins);
        for i in packed_len(k)..k {
            full.push(self.bins[k - i].conj());
        }
        full
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bins(&self) -> &[Complex] {
        &self.bins
    }

    /// Number of stored reals: `k + 2` for `k >= 2`.
    pub fn storage_reals(&self) -> usize {
        2 * self.bins.len()
    }

    /// `self += a ⊙ b`, skipping the imaginary parts of the real end bins.
    pub fn mul_accumulate(&mut self, a: &PackedSpectrum, b: &PackedSpectrum) -> Result<()> {
        check_same_k(self.k, a.k)?;
        check_same_k(a.k, b.k)?;
        let last = self.bins.len() - 1;
        self.bins[0].re += a.bins[0].re * b.bins[0].re;
        if last > 0 {
            self.bins[last].re += a.bins[last].re * b.bins[last].re;
        }
        for j in 1..last {
            self.bins[j] += a.bins[j] * b.bins[j];
        }
        Ok(())
    }

    /// `self += a ⊙ conj(b)`.
    pub fn mul_conj_accumulate(&mut self, a: &PackedSpectrum, b: &PackedSpectrum) -> Result<()> {
        check_same_k(self.k, a.k)?;
        check_same_k(a.k, b.k)?;
        let last = self.bins.len() - 1;
        self.bins[0].re += a.bins[0].re * b.bins[0].re;
        if last > 0 {
            self.bins[last].re += a.bins[last].re * b.bins[last].re;
        }
        for j in 1..last {
            self.bins[j] += a.bins[j] * b.bins[j].conj();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &PackedSpectrum) -> Result<()> {
        check_same_k(self.k, other.k)?;
        for (x, y) in self.bins.iter_mut().zip(&other.bins) {
            *x += y;
        }
        Ok(())
    }
}

fn check_same_k(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Elementwise product of two packed spectra.
pub fn spectrum_pointwise_mul(a: &PackedSpectrum, b: &PackedSpectrum) -> Result<PackedSpectrum> {
    let mut out = PackedSpectrum::zeros(a.k)?;
    out.mul_accumulate(a, b)?;
    Ok(out)
}

/// Twiddle table and bit-reversal permutation for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    k: usize,
    stages: u32,
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(k: usize) -> Result<Self> {
        let stages = log2_exact(k)?;
        let twiddles = (0..k / 2)
            .map(|j| {
                let (s, c) = (-2.0 * PI * j as f64 / k as f64).sin_cos();
                Complex::new(c, s)
            })
            .collect();
        Ok(FftPlan {
            k,
            stages,
            twiddles,
            bitrev: bit_reverse_table(k, stages),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stages(&self) -> u32 {
        self.stages
    }

    pub fn forward(&self, x: &[f64]) -> Result<PackedSpectrum> {
        check_same_k(self.k, x.len())?;
        let mut buf: Vec<Complex> = self
            .bitrev
            .iter()
            .map(|&src| Complex::new(x[src], 0.0))
            .collect();
        self.butterflies(&mut buf, false);
        buf.truncate(packed_len(self.k));
        let last = buf.len() - 1;
        buf[0].im = 0.0;
        buf[last].im = 0.0;
        Ok(PackedSpectrum {
            k: self.k,
            bins: buf,
        })
    }

    pub fn inverse(&self, s: &PackedSpectrum) -> Result<Vec<f64>> {
        check_same_k(self.k, s.k)?;
        let full = s.unpack();
        let mut buf: Vec<Complex> = self.bitrev.iter().map(|&src| full[src]).collect();
        self.butterflies(&mut buf, true);
        let scale = 1.0 / self.k as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }

    fn butterflies(&self, buf: &mut [Complex], inverse: bool) {
        let k = self.k;
        for s in 0..self.stages {
            let half = 1usize << s;
            let step = k / (2 * half);
            for start in (0..k).step_by(2 * half) {
                for j in 0..half {
                    let w = self.twiddles[j * step];
                    let w = if inverse { w.conj() } else { w };
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
            }
        }
    }
}

pub fn dft(x: &[f64]) -> Result<PackedSpectrum> {
    FftPlan::new(x.len())?.forward(x)
}

pub fn idft(s: &PackedSpectrum) -> Result<Vec<f64>> {
    FftPlan::new(s.k)?.inverse(s)
}

/// Packed spectrum of 16-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxpSpectrum {
    pub k: usize,
    pub format: FxpFormat,
    pub bins: Vec<C<i16>>,
}

impl FxpSpectrum {
    pub fn quantize(s: &PackedSpectrum, format: FxpFormat) -> Self {
        let q = |v: f64| crate::fxp::quantize(v, format).raw;
        FxpSpectrum {
            k: s.k,
            format,
            bins: s.bins.iter().map(|b| C::new(q(b.re), q(b.im))).collect(),
        }
    }

    pub fn to_float(&self) -> Vec<Complex> {
        let lsb = self.format.lsb();
        self.bins
            .iter()
            .map(|b| Complex::new(b.re as f64 * lsb, b.im as f64 * lsb))
            .collect()
    }

    fn unpack(&self) -> Vec<C<i16>> {
        let k = self.k;
        let mut full = Vec::with_capacity(k);
        full.extend_from_slice(&self.bins);
        for i in packed_len(k)..k {
            let b = self.bins[k - i];
            full.push(C::new(b.re, b.im.saturating_neg()));
        }
        full
    }
}

/// Staged fixed-point transform. Twiddles are stored as 16-bit words in
/// [`FxpFormat::Q1_14`] so that the trivial factors ±1 stay exact.
#[derive(Clone, Debug)]
pub struct FxpFftPlan {
    k: usize,
    stages: u32,
    twiddles: Vec<C<i16>>,
    twiddle_frac: u32,
    bitrev: Vec<usize>,
}

impl FxpFftPlan {
    pub fn new(k: usize) -> Result<Self> {
        let float = FftPlan::new(k)?;
        let tf = FxpFormat::Q1_14;
        let twiddles = float
            .twiddles
            .iter()
            .map(|w| {
                C::new(
                    crate::fxp::quantize(w.re, tf).raw,
                    crate::fxp::quantize(w.im, tf).raw,
                )
            })
            .collect();
        Ok(FxpFftPlan {
            k,
            stages: float.stages,
            twiddles,
            twiddle_frac: tf.frac_bits(),
            bitrev: float.bitrev,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Forward transform; stage `s` output is shifted right by `sched.dft[s]`.
    pub fn forward(&self, x: &FxpVector, sched: &ShiftSchedule) -> Result<FxpSpectrum> {
        check_same_k(self.k, x.len())?;
        let mut buf: Vec<C<i16>> = self
            .bitrev
            .iter()
            .map(|&src| C::new(x.raw[src], 0))
            .collect();
        self.butterflies(&mut buf, &sched.dft, false);
        buf.truncate(packed_len(self.k));
        Ok(FxpSpectrum {
            k: self.k,
            format: x.format,
            bins: buf,
        })
    }

    /// Inverse transform without any implicit `1/k`; the normalisation is
    /// whatever `sched.idft` (and `sched.dft` upstream) apply.
    pub fn inverse(&self, s: &FxpSpectrum, sched: &ShiftSchedule) -> Result<FxpVector> {
        check_same_k(self.k, s.k)?;
        let full = s.unpack();
        let mut buf: Vec<C<i16>> = self.bitrev.iter().map(|&src| full[src]).collect();
        self.butterflies(&mut buf, &sched.idft, true);
        Ok(FxpVector {
            raw: buf.iter().map(|c| c.re).collect(),
            format: s.format,
        })
    }

    fn butterflies(&self, buf: &mut [C<i16>], shifts: &[u32], inverse: bool) {
        let k = self.k;
        let tf = self.twiddle_frac as i32;
        for s in 0..self.stages {
            let shift = shifts.get(s as usize).copied().unwrap_or(0) as i32;
            let half = 1usize << s;
            let step = k / (2 * half);
            for start in (0..k).step_by(2 * half) {
                for j in 0..half {
                    let w = self.twiddles[j * step];
                    let (wr, wi) = (w.re as i64, if inverse { -(w.im as i64) } else { w.im as i64 });
                    let a = buf[start + j];
                    let b = buf[start + j + half];
                    let (br, bi) = (b.re as i64, b.im as i64);
                    let tr = shift_round(br * wr - bi * wi, tf);
                    let ti = shift_round(br * wi + bi * wr, tf);
                    let (ar, ai) = (a.re as i64, a.im as i64);
                    buf[start + j] = C::new(
                        saturate16(shift_round(ar + tr, shift)),
                        saturate16(shift_round(ai + ti, shift)),
                    );
                    buf[start + j + half] = C::new(
                        saturate16(shift_round(ar - tr, shift)),
                        saturate16(shift_round(ai - ti, shift)),
                    );
                }
            }
        }
    }
}

pub fn dft_fxp(x: &FxpVector, policy: ShiftPolicy) -> Result<FxpSpectrum> {
    let sched = shift_schedule(policy, x.len())?;
    FxpFftPlan::new(x.len())?.forward(x, &sched)
}

pub fn idft_fxp(s: &FxpSpectrum, policy: ShiftPolicy) -> Result<FxpVector> {
    let sched = shift_schedule(policy, s.k)?;
    FxpFftPlan::new(s.k)?.inverse(s, &sched)
}
