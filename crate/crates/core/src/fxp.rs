//! Bit-accurate 16-bit signed fixed-point arithmetic.
//!
//! Values are stored as two's complement `i16` words with a per-tensor
//! number of fractional bits. Every operation rounds half-to-even and
//! saturates at the range bounds instead of wrapping. Products are formed
//! at full 32-bit precision before being narrowed back to 16 bits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of every datapath word.
pub const DATAPATH_BITS: u32 = 16;

const RAW_MIN: i64 = i16::MIN as i64;
const RAW_MAX: i64 = i16::MAX as i64;

/// Signed 16-bit Q-format: one sign bit, `int_bits` integer bits and
/// `frac_bits` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FxpFormat {
    frac_bits: u8,
}

impl FxpFormat {
    /// Default datapath format: 3 integer bits, 12 fractional bits.
    pub const Q3_12: FxpFormat = FxpFormat { frac_bits: 12 };
    /// Format used for FFT twiddle factors; represents +1.0 and -1.0 exactly.
    pub const Q1_14: FxpFormat = FxpFormat { frac_bits: 14 };

    pub fn new(frac_bits: u32) -> Result<Self> {
        if frac_bits >= DATAPATH_BITS {
            return Err(Error::InvalidFormat(format!("frac_bits={frac_bits}")));
        }
        Ok(FxpFormat {
            frac_bits: frac_bits as u8,
        })
    }

    pub fn total_bits(self) -> u32 {
        DATAPATH_BITS
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits as u32
    }

    pub fn int_bits(self) -> u32 {
        DATAPATH_BITS - 1 - self.frac_bits()
    }

    /// Weight of the least significant bit, `2^-frac_bits`.
    pub fn lsb(self) -> f64 {
        (-(self.frac_bits() as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        RAW_MIN as f64 * self.lsb()
    }

    pub fn max_value(self) -> f64 {
        RAW_MAX as f64 * self.lsb()
    }

    fn scale(self) -> f64 {
        (self.frac_bits() as f64).exp2()
    }
}

impl Default for FxpFormat {
    fn default() -> Self {
        FxpFormat::Q3_12
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.int_bits(), self.frac_bits())
    }
}

impl FromStr for FxpFormat {
    type Err = Error;

    /// Parses `q<int>.<frac>`; the two fields plus the sign bit must add up
    /// to 16.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(s.to_string());
        let body = s
            .strip_prefix('q')
            .or_else(|| s.strip_prefix('Q'))
            .ok_or_else(bad)?;
        let (int, frac) = body.split_once('.').ok_or_else(bad)?;
        let int: u32 = int.parse().map_err(|_| bad())?;
        let frac: u32 = frac.parse().map_err(|_| bad())?;
        if int + frac + 1 != DATAPATH_BITS {
            return Err(bad());
        }
        FxpFormat::new(frac)
    }
}

impl TryFrom<String> for FxpFormat {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FxpFormat> for String {
    fn from(f: FxpFormat) -> String {
        f.to_string()
    }
}

/// Rounds `v / 2^shift` half-to-even. A negative shift scales up instead.
pub(crate) fn shift_round(v: i64, shift: i32) -> i64 {
    if shift <= 0 {
        return v.saturating_mul(1i64 << (-shift).min(62));
    }
    let s = shift as u32;
    if s >= 63 {
        return 0;
    }
    let q = v >> s;
    let rem = v - (q << s);
    let half = 1i64 << (s - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

pub(crate) fn saturate16(v: i64) -> i16 {
    v.clamp(RAW_MIN, RAW_MAX) as i16
}

pub(crate) fn saturate32(v: i64) -> i32 {
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Real-to-raw conversion shared by scalar and vector quantizers.
fn quantize_raw(x: f64, fmt: FxpFormat) -> i16 {
    if x.is_nan() {
        return 0;
    }
    // Scaling by a power of two is exact, so one rounding happens here.
    let scaled = (x * fmt.scale()).round_ties_even();
    scaled.clamp(RAW_MIN as f64, RAW_MAX as f64) as i16
}

/// A single quantized value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FxpScalar {
    pub raw: i16,
    pub format: FxpFormat,
}

impl FxpScalar {
    pub fn from_raw(raw: i16, format: FxpFormat) -> Self {
        FxpScalar { raw, format }
    }

    pub fn zero(format: FxpFormat) -> Self {
        FxpScalar { raw: 0, format }
    }

    pub fn max(format: FxpFormat) -> Self {
        FxpScalar {
            raw: i16::MAX,
            format,
        }
    }

    pub fn min(format: FxpFormat) -> Self {
        FxpScalar {
            raw: i16::MIN,
            format,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }

    pub fn neg(self) -> Self {
        FxpScalar {
            raw: self.raw.saturating_neg(),
            format: self.format,
        }
    }
}

/// Nearest representable value, ties to even, saturating at the bounds.
pub fn quantize(x: f64, fmt: FxpFormat) -> FxpScalar {
    FxpScalar {
        raw: quantize_raw(x, fmt),
        format: fmt,
    }
}

pub fn dequantize(x: FxpScalar) -> f64 {
    x.to_f64()
}

/// Product in the format of `a`.
pub fn fxp_mul(a: FxpScalar, b: FxpScalar) -> FxpScalar {
    fxp_mul_into(a, b, a.format)
}

/// Full-precision product narrowed to `out` with one rounding step.
pub fn fxp_mul_into(a: FxpScalar, b: FxpScalar, out: FxpFormat) -> FxpScalar {
    let wide = a.raw as i64 * b.raw as i64;
    let shift = (a.format.frac_bits() + b.format.frac_bits()) as i32 - out.frac_bits() as i32;
    FxpScalar {
        raw: saturate16(shift_round(wide, shift)),
        format: out,
    }
}

/// Saturating sum. Both operands must share a format.
pub fn fxp_add(a: FxpScalar, b: FxpScalar) -> FxpScalar {
    assert_eq!(a.format, b.format, "fxp_add operands differ in format");
    FxpScalar {
        raw: a.raw.saturating_add(b.raw),
        format: a.format,
    }
}

pub fn fxp_sub(a: FxpScalar, b: FxpScalar) -> FxpScalar {
    assert_eq!(a.format, b.format, "fxp_sub operands differ in format");
    FxpScalar {
        raw: a.raw.saturating_sub(b.raw),
        format: a.format,
    }
}

/// Re-expresses `x` in another format (rounding or saturating as needed).
pub fn convert(x: FxpScalar, out: FxpFormat) -> FxpScalar {
    let shift = x.format.frac_bits() as i32 - out.frac_bits() as i32;
    FxpScalar {
        raw: saturate16(shift_round(x.raw as i64, shift)),
        format: out,
    }
}

/// A vector of raw words sharing one format.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FxpVector {
    pub raw: Vec<i16>,
    pub format: FxpFormat,
}

impl FxpVector {
    pub fn zeros(len: usize, format: FxpFormat) -> Self {
        FxpVector {
            raw: vec![0; len],
            format,
        }
    }

    pub fn quantize(xs: &[f64], format: FxpFormat) -> Self {
        FxpVector {
            raw: xs.iter().map(|&x| quantize_raw(x, format)).collect(),
            format,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let lsb = self.format.lsb();
        self.raw.iter().map(|&r| r as f64 * lsb).collect()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn get(&self, i: usize) -> FxpScalar {
        FxpScalar::from_raw(self.raw[i], self.format)
    }

    pub fn from_scalars(xs: &[FxpScalar], format: FxpFormat) -> Self {
        FxpVector {
            raw: xs.iter().map(|x| convert(*x, format).raw).collect(),
            format,
        }
    }
}

/// Saturating 32-bit accumulator holding values with `frac_bits`
/// fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Acc32 {
    pub value: i32,
    pub frac_bits: u32,
}

impl Acc32 {
    pub fn new(frac_bits: u32) -> Self {
        Acc32 {
            value: 0,
            frac_bits,
        }
    }

    /// Adds a wide term already aligned to this accumulator's scale.
    pub fn add_wide(&mut self, v: i64) {
        self.value = saturate32(self.value as i64 + saturate32(v) as i64);
    }

    /// Narrows to a 16-bit word of `out` format.
    pub fn narrow(self, out: FxpFormat) -> FxpScalar {
        let shift = self.frac_bits as i32 - out.frac_bits() as i32;
        FxpScalar {
            raw: saturate16(shift_round(self.value as i64, shift)),
            format: out,
        }
    }
}

/// Where the `1/k` normalisation of the transform pair is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftPolicy {
    /// One `log2 k` shift after the last inverse-transform stage.
    AllAtIdftEnd,
    /// One-bit shift after every inverse-transform stage.
    #[default]
    DistributedInIdft,
    /// One-bit shift after every forward-transform stage, so the spectral
    /// accumulator sees pre-scaled values.
    DistributedInDft,
}

impl ShiftPolicy {
    pub const ALL: [ShiftPolicy; 3] = [
        ShiftPolicy::AllAtIdftEnd,
        ShiftPolicy::DistributedInIdft,
        ShiftPolicy::DistributedInDft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftPolicy::AllAtIdftEnd => "all-at-idft-end",
            ShiftPolicy::DistributedInIdft => "distributed-in-idft",
            ShiftPolicy::DistributedInDft => "distributed-in-dft",
        }
    }
}

impl fmt::Display for ShiftPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-at-idft-end" | "end" => Ok(ShiftPolicy::AllAtIdftEnd),
            "distributed-in-idft" | "idft" => Ok(ShiftPolicy::DistributedInIdft),
            "distributed-in-dft" | "dft" => Ok(ShiftPolicy::DistributedInDft),
            _ => Err(Error::InvalidPolicy(s.to_string())),
        }
    }
}

/// Right-shift amounts applied after each butterfly stage of the forward
/// and inverse transforms. Both vectors have `log2 k` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftSchedule {
    pub dft: Vec<u32>,
    pub idft: Vec<u32>,
}

impl ShiftSchedule {
    pub fn total(&self) -> u32 {
        self.dft.iter().chain(&self.idft).sum()
    }

    /// Non-zero shifts in stage order, forward transform first.
    pub fn nonzero(&self) -> Vec<u32> {
        self.dft
            .iter()
            .chain(&self.idft)
            .copied()
            .filter(|&s| s != 0)
            .collect()
    }
}

pub fn log2_exact(k: usize) -> Result<u32> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(k));
    }
    Ok(k.trailing_zeros())
}

pub fn shift_schedule(policy: ShiftPolicy, k: usize) -> Result<ShiftSchedule> {
    let stages = log2_exact(k)? as usize;
    let mut dft = vec![0; stages];
    let mut idft = vec![0; stages];
    match policy {
        ShiftPolicy::AllAtIdftEnd => {
            if let Some(last) = idft.last_mut() {
                *last = stages as u32;
            }
        }
        ShiftPolicy::DistributedInIdft => idft.fill(1),
        ShiftPolicy::DistributedInDft => dft.fill(1),
    }
    Ok(ShiftSchedule { dft, idft })
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: FxpFormat = FxpFormat::Q3_12;

    #[test]
    fn format_parsing() {
        assert_eq!("q3.12".parse::<FxpFormat>().unwrap(), Q);
        assert_eq!("Q0.15".parse::<FxpFormat>().unwrap().frac_bits(), 15);
        assert!("q3.13".parse::<FxpFormat>().is_err());
        assert!("3.12".parse::<FxpFormat>().is_err());
        assert_eq!(Q.to_string(), "q3.12");
        assert_eq!(Q.min_value(), -8.0);
        assert_eq!(Q.max_value(), 8.0 - Q.lsb());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, Q).raw, 0);
        assert_eq!(quantize(0.5, Q).raw, 2048);
        assert_eq!(quantize(9.7, Q).raw, i16::MAX);
        assert_eq!(quantize(-9.7, Q).raw, i16::MIN);
        assert_eq!(quantize(f64::NAN, Q).raw, 0);
        // ties go to even
        assert_eq!(quantize(0.5 * Q.lsb(), Q).raw, 0);
        assert_eq!(quantize(1.5 * Q.lsb(), Q).raw, 2);
        assert_eq!(quantize(-1.5 * Q.lsb(), Q).raw, -2);
    }

    #[test]
    fn mul_examples() {
        let half = quantize(0.5, Q);
        assert_eq!(fxp_mul(half, half).raw, 1024);
        let one = quantize(1.0, Q);
        for raw in [-32768i16, -1, 0, 1, 1234, 32767] {
            let x = FxpScalar::from_raw(raw, Q);
            assert_eq!(fxp_mul(one, x), x);
        }
        // 4 * 4 = 16 saturates in q3.12
        let four = quantize(4.0, Q);
        assert_eq!(fxp_mul(four, four).raw, i16::MAX);
    }

    #[test]
    fn add_examples() {
        let x = quantize(1.25, Q);
        assert_eq!(fxp_add(x, FxpScalar::zero(Q)), x);
        assert_eq!(fxp_add(FxpScalar::max(Q), FxpScalar::max(Q)), FxpScalar::max(Q));
        assert_eq!(fxp_add(FxpScalar::min(Q), FxpScalar::min(Q)), FxpScalar::min(Q));
    }

    #[test]
    fn shift_round_is_rne() {
        assert_eq!(shift_round(5, 1), 2); // 2.5 -> 2
        assert_eq!(shift_round(7, 1), 4); // 3.5 -> 4
        assert_eq!(shift_round(-5, 1), -2);
        assert_eq!(shift_round(-7, 1), -4);
        assert_eq!(shift_round(6, 2), 2); // 1.5 -> 2
        assert_eq!(shift_round(3, -2), 12);
    }

    #[test]
    fn schedules() {
        let s = shift_schedule(ShiftPolicy::AllAtIdftEnd, 8).unwrap();
        assert_eq!(s.idft, vec![0, 0, 3]);
        assert_eq!(s.dft, vec![0, 0, 0]);
        assert_eq!(s.nonzero(), vec![3]);

        let s = shift_schedule(ShiftPolicy::DistributedInIdft, 8).unwrap();
        assert_eq!(s.idft, vec![1, 1, 1]);

        let s = shift_schedule(ShiftPolicy::DistributedInDft, 8).unwrap();
        assert_eq!(s.dft, vec![1, 1, 1]);
        assert_eq!(s.idft, vec![0, 0, 0]);

        for p in ShiftPolicy::ALL {
            assert_eq!(shift_schedule(p, 2).unwrap().total(), 1);
            assert_eq!(shift_schedule(p, 1).unwrap().total(), 0);
        }
        assert_eq!(
            shift_schedule(ShiftPolicy::AllAtIdftEnd, 6),
            Err(Error::NotPowerOfTwo(6))
        );
    }

    #[test]
    fn accumulator_saturates() {
        let mut acc = Acc32::new(12);
        acc.add_wide(i64::MAX);
        acc.add_wide(1);
        assert_eq!(acc.value, i32::MAX);
        assert_eq!(acc.narrow(Q).raw, i16::MAX);
    }

    #[test]
    fn policy_names_roundtrip() {
        for p in ShiftPolicy::ALL {
            assert_eq!(p.name().parse::<ShiftPolicy>().unwrap(), p);
        }
    }
}
