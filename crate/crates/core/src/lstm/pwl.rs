//! Piecewise-linear sigmoid and tanh with 22 segments over [-8, 8].
//!
//! Both functions are odd about a constant (`sigmoid(x) - 1/2` and
//! `tanh(x)`), so the table is built greedily on [0, 8] with 11 chords of
//! equal worst-case error and mirrored. Outside the domain the output
//! clamps to the asymptote.

use serde::{Deserialize, Serialize};

use crate::fxp::{fxp_mul_into, quantize, FxpFormat, FxpScalar};

pub const PWL_SEGMENTS: usize = 22;
pub const PWL_DOMAIN: f64 = 8.0;
/// Upper bound on `|pwl(x) - f(x)|` checked when a table is built.
pub const PWL_MAX_ERROR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PwlFunction {
    Sigmoid,
    Tanh,
}

impl PwlFunction {
    pub fn exact(self, x: f64) -> f64 {
        match self {
            PwlFunction::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            PwlFunction::Tanh => x.tanh(),
        }
    }

    /// Value the function is odd about.
    fn center(self) -> f64 {
        match self {
            PwlFunction::Sigmoid => 0.5,
            PwlFunction::Tanh => 0.0,
        }
    }

    fn asymptotes(self) -> (f64, f64) {
        match self {
            PwlFunction::Sigmoid => (0.0, 1.0),
            PwlFunction::Tanh => (-1.0, 1.0),
        }
    }
}

/// Line `slope * x + intercept` valid on `[start, next start)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwlTable {
    pub function: PwlFunction,
    pub segments: Vec<Segment>,
    pub clamp_low: f64,
    pub clamp_high: f64,
    /// Worst error measured over a dense grid at build time.
    pub max_error: f64,
}

/// Operation tally for one or more evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PwlOps {
    pub compares: u64,
    pub muls: u64,
    pub adds: u64,
}

fn chord_error(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let slope = (fb - fa) / (b - a);
    (0..=64)
        .map(|i| {
            let x = a + (b - a) * i as f64 / 64.0;
            (f(x) - (fa + slope * (x - a))).abs()
        })
        .fold(0.0, f64::max)
}

/// Greedy partition of `[lo, hi]` into chords with error at most `eps`.
fn greedy_breaks(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, eps: f64) -> Vec<f64> {
    let mut breaks = vec![lo];
    let mut a = lo;
    while a < hi {
        let b = if chord_error(f, a, hi) <= eps {
            hi
        } else {
            let (mut ok, mut bad) = (a, hi);
            for _ in 0..60 {
                let mid = 0.5 * (ok + bad);
                if chord_error(f, a, mid) <= eps {
                    ok = mid;
                } else {
                    bad = mid;
                }
            }
            ok.max(a + 1e-9)
        };
        breaks.push(b);
        a = b;
    }
    breaks
}

/// Breakpoints on `[0, hi]` for exactly `n` chords with the smallest
/// greedy worst-case error.
fn equalized_breaks(f: &impl Fn(f64) -> f64, hi: f64, n: usize) -> Vec<f64> {
    let (mut lo_eps, mut hi_eps) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo_eps + hi_eps);
        if greedy_breaks(f, 0.0, hi, mid).len() - 1 <= n {
            hi_eps = mid;
        } else {
            lo_eps = mid;
        }
    }
    let mut breaks = greedy_breaks(f, 0.0, hi, hi_eps);
    // Split the widest chord until the count is exact.
    while breaks.len() - 1 < n {
        let (w, _) = breaks
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1] - w[0]))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let mid = 0.5 * (breaks[w] + breaks[w + 1]);
        breaks.insert(w + 1, mid);
    }
    breaks
}

pub fn build_pwl(function: PwlFunction) -> PwlTable {
    let c = function.center();
    let odd = |x: f64| function.exact(x) - c;
    let half = equalized_breaks(&odd, PWL_DOMAIN, PWL_SEGMENTS / 2);

    let chord = |a: f64, b: f64| {
        let (fa, fb) = (odd(a), odd(b));
        let slope = (fb - fa) / (b - a);
        (slope, fa - slope * a)
    };
    let mut segments = Vec::with_capacity(PWL_SEGMENTS);
    // The chord on [a, b] mirrors to [-b, -a] with the same slope.
    for w in half.windows(2).rev() {
        let (slope, icpt) = chord(w[0], w[1]);
        segments.push(Segment {
            start: -w[1],
            slope,
            intercept: c - icpt,
        });
    }
    for w in half.windows(2) {
        let (slope, icpt) = chord(w[0], w[1]);
        segments.push(Segment {
            start: w[0],
            slope,
            intercept: c + icpt,
        });
    }

    let (clamp_low, clamp_high) = function.asymptotes();
    let mut table = PwlTable {
        function,
        segments,
        clamp_low,
        clamp_high,
        max_error: 0.0,
    };
    let grid = 100_000;
    table.max_error = (0..=grid)
        .map(|i| {
            let x = -PWL_DOMAIN + 2.0 * PWL_DOMAIN * i as f64 / grid as f64;
            (table.eval(x) - function.exact(x)).abs()
        })
        .fold(0.0, f64::max);
    assert!(
        table.max_error < PWL_MAX_ERROR,
        "{function:?} table error {} exceeds bound",
        table.max_error
    );
    table
}

impl PwlTable {
    pub fn domain(&self) -> (f64, f64) {
        (self.segments[0].start, PWL_DOMAIN)
    }

    fn locate(&self, x: f64, ops: &mut PwlOps) -> usize {
        // last segment with start <= x
        let (mut lo, mut hi) = (0, self.segments.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            ops.compares += 1;
            if self.segments[mid].start <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_counted(x, &mut PwlOps::default())
    }

    pub fn eval_counted(&self, x: f64, ops: &mut PwlOps) -> f64 {
        let (lo, hi) = self.domain();
        ops.compares += 1;
        if x < lo {
            return self.clamp_low;
        }
        ops.compares += 1;
        if x >= hi {
            return self.clamp_high;
        }
        let s = self.segments[self.locate(x, ops)];
        ops.muls += 1;
        ops.adds += 1;
        s.slope * x + s.intercept
    }

    /// Fixed-point version of the table for inputs in `format`.
    pub fn quantize(&self, format: FxpFormat) -> FxpPwl {
        let scale = (format.frac_bits() as f64).exp2();
        let threshold = |v: f64| (v * scale).ceil().clamp(i16::MIN as f64, i16::MAX as f64 + 1.0) as i32;
        FxpPwl {
            format,
            thresholds: self.segments.iter().map(|s| threshold(s.start)).collect(),
            upper: threshold(PWL_DOMAIN),
            slopes: self
                .segments
                .iter()
                .map(|s| quantize(s.slope, FxpFormat::Q1_14))
                .collect(),
            intercepts: self
                .segments
                .iter()
                .map(|s| quantize(s.intercept, format))
                .collect(),
            clamp_low: quantize(self.clamp_low, format),
            clamp_high: quantize(self.clamp_high, format),
        }
    }

    /// Convenience wrapper; quantizes the table for `x`'s format.
    pub fn eval_fxp(&self, x: FxpScalar) -> FxpScalar {
        self.quantize(x.format).eval(x)
    }
}

/// Quantized table: integer thresholds, Q1.14 slopes, intercepts in the
/// data format.
#[derive(Clone, Debug, PartialEq)]
pub struct FxpPwl {
    pub format: FxpFormat,
    thresholds: Vec<i32>,
    upper: i32,
    slopes: Vec<FxpScalar>,
    intercepts: Vec<FxpScalar>,
    clamp_low: FxpScalar,
    clamp_high: FxpScalar,
}

impl FxpPwl {
    pub fn eval(&self, x: FxpScalar) -> FxpScalar {
        self.eval_counted(x, &mut PwlOps::default())
    }

    /// One comparison search, one 16-bit multiply and one add.
    pub fn eval_counted(&self, x: FxpScalar, ops: &mut PwlOps) -> FxpScalar {
        assert_eq!(x.format, self.format, "pwl input format mismatch");
        let raw = x.raw as i32;
        ops.compares += 1;
        if raw < self.thresholds[0] {
            return self.clamp_low;
        }
        ops.compares += 1;
        if raw >= self.upper {
            return self.clamp_high;
        }
        let (mut lo, mut hi) = (0, self.thresholds.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            ops.compares += 1;
            if self.thresholds[mid] <= raw {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        ops.muls += 1;
        ops.adds += 1;
        let prod = fxp_mul_into(self.slopes[lo], x, self.format);
        crate::fxp::fxp_add(prod, self.intercepts[lo])
    }
}
