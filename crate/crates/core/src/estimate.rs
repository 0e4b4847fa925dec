//! Analytic throughput and resource models for a staged pipeline.
//!
//! Stage `k` takes `T_k = ceil(max_v Q(v) / N(v) / R_k) + D_k` cycles, the
//! pipeline runs at `frequency / max_k T_k` frames per second, and each
//! resource total is `sum_k R_k * sum_{v in G_k} delta(v) * N(v)`.

use std::fmt;
use std::ops::{Add, Mul};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{OpGraph, OpKind, StageAssignment};

/// A DSP/BRAM/LUT/FF quadruple: budgets, per-unit costs or totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub dsp: u64,
    pub bram: u64,
    pub lut: u64,
    pub ff: u64,
}

impl Resources {
    pub const ZERO: Resources = Resources {
        dsp: 0,
        bram: 0,
        lut: 0,
        ff: 0,
    };

    pub fn fits(&self, budget: &Resources) -> bool {
        self.dsp <= budget.dsp && self.bram <= budget.bram && self.lut <= budget.lut && self.ff <= budget.ff
    }
}

impl Add for Resources {
    type Output = Resources;
    fn add(self, o: Resources) -> Resources {
        Resources {
            dsp: self.dsp.saturating_add(o.dsp),
            bram: self.bram.saturating_add(o.bram),
            lut: self.lut.saturating_add(o.lut),
            ff: self.ff.saturating_add(o.ff),
        }
    }
}

impl Mul<u64> for Resources {
    type Output = Resources;
    fn mul(self, n: u64) -> Resources {
        Resources {
            dsp: self.dsp.saturating_mul(n),
            bram: self.bram.saturating_mul(n),
            lut: self.lut.saturating_mul(n),
            ff: self.ff.saturating_mul(n),
        }
    }
}

impl std::iter::Sum for Resources {
    fn sum<I: Iterator<Item = Resources>>(it: I) -> Resources {
        it.fold(Resources::ZERO, Add::add)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformProfile {
    pub name: String,
    #[serde(flatten)]
    pub budget: Resources,
    pub frequency_hz: f64,
}

impl PlatformProfile {
    pub fn ku060() -> Self {
        PlatformProfile {
            name: "ku060".into(),
            budget: Resources {
                dsp: 2760,
                bram: 1080,
                lut: 331_680,
                ff: 663_360,
            },
            frequency_hz: 200e6,
        }
    }

    /// Virtex-7 690T as found on the ADM-7V3 board.
    pub fn adm_7v3() -> Self {
        PlatformProfile {
            name: "7v3".into(),
            budget: Resources {
                dsp: 3600,
                bram: 1470,
                lut: 859_200,
                ff: 429_600,
            },
            frequency_hz: 200e6,
        }
    }

    /// Infinite budget. Resource arithmetic saturates, so every design fits.
    pub fn unlimited() -> Self {
        PlatformProfile {
            name: "unlimited".into(),
            budget: Resources {
                dsp: u64::MAX,
                bram: u64::MAX,
                lut: u64::MAX,
                ff: u64::MAX,
            },
            frequency_hz: 200e6,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ku060" => Some(Self::ku060()),
            "7v3" | "adm-7v3" | "v7-690t" => Some(Self::adm_7v3()),
            "unlimited" => Some(Self::unlimited()),
            _ => None,
        }
    }

    /// Preset name or path to a JSON profile.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(p) = Self::preset(spec) {
            return Ok(p);
        }
        let text = std::fs::read_to_string(Path::new(spec))
            .map_err(|e| Error::InvalidArch(format!("platform `{spec}`: {e}")))?;
        let p: PlatformProfile = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArch(format!("platform `{spec}`: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.budget;
        if b.dsp == 0 || b.bram == 0 || b.lut == 0 || b.ff == 0 || !(self.frequency_hz > 0.0) {
            return Err(Error::InvalidArch(format!(
                "platform `{}` needs positive budgets and frequency",
                self.name
            )));
        }
        Ok(())
    }
}

/// Pipeline fill depth of a stage, affine in its longest operator chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthModel {
    pub base: u64,
    pub per_op: u64,
}

impl Default for DepthModel {
    fn default() -> Self {
        DepthModel { base: 0, per_op: 5 }
    }
}

impl DepthModel {
    pub fn depth(&self, chain_len: u64) -> u64 {
        self.base + self.per_op * chain_len
    }
}

/// Per-unit-parallelism resource cost of each operator kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCostProfile {
    pub label: String,
    pub circulant_conv: Resources,
    pub ewise_mul: Resources,
    pub ewise_add: Resources,
    pub sigmoid: Resources,
    pub tanh: Resources,
    #[serde(default)]
    pub depth: DepthModel,
}

impl OpCostProfile {
    /// Made-up but plausible unit costs, not measured on hardware. A
    /// circulant-conv lane carries one complex multiplier per packed bin.
    pub fn synthetic(k: usize) -> Self {
        let k = k as u64;
        OpCostProfile {
            label: "synthetic (not measured)".into(),
            circulant_conv: Resources {
                dsp: 3 * (k / 2 + 1),
                bram: 2,
                lut: 150 * k,
                ff: 250 * k,
            },
            ewise_mul: Resources {
                dsp: 1,
                bram: 0,
                lut: 50,
                ff: 80,
            },
            ewise_add: Resources {
                dsp: 0,
                bram: 0,
                lut: 40,
                ff: 60,
            },
            sigmoid: Resources {
                dsp: 1,
                bram: 0,
                lut: 120,
                ff: 150,
            },
            tanh: Resources {
                dsp: 1,
                bram: 0,
                lut: 120,
                ff: 150,
            },
            depth: DepthModel::default(),
        }
    }

    /// No resource cost anywhere.
    pub fn free() -> Self {
        OpCostProfile {
            label: "zero".into(),
            circulant_conv: Resources::ZERO,
            ewise_mul: Resources::ZERO,
            ewise_add: Resources::ZERO,
            sigmoid: Resources::ZERO,
            tanh: Resources::ZERO,
            depth: DepthModel::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArch(format!("cost profile {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArch(format!("cost profile {}: {e}", path.display())))
    }

    pub fn delta(&self, kind: OpKind) -> Resources {
        match kind {
            OpKind::CirculantConv => self.circulant_conv,
            OpKind::EwiseMul => self.ewise_mul,
            OpKind::EwiseAdd => self.ewise_add,
            OpKind::Sigmoid => self.sigmoid,
            OpKind::Tanh => self.tanh,
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Cycles of one stage given per-node parallelism `n` and replication `r`.
pub fn stage_cycles(g: &OpGraph, stage: &[usize], n: &[u64], r: u64, depth: &DepthModel) -> u64 {
    assert!(r >= 1, "replication must be positive");
    // ceil is monotone, so ceil(max(Q/N) / R) = max ceil(Q / (N R))
    let body = stage
        .iter()
        .map(|&v| ceil_div(g.node(v).workload, n[v].saturating_mul(r)))
        .max()
        .unwrap_or(0);
    body + depth.depth(g.longest_chain(stage))
}

/// Frames per second of a pipeline whose stages take `cycles`.
pub fn fps(cycles: &[u64], frequency_hz: f64) -> f64 {
    let worst = cycles.iter().copied().max().expect("at least one stage");
    frequency_hz / worst as f64
}

/// Unreplicated cost of one stage.
pub fn stage_resources(g: &OpGraph, stage: &[usize], n: &[u64], costs: &OpCostProfile) -> Resources {
    stage.iter().map(|&v| costs.delta(g.node(v).kind) * n[v]).sum()
}

pub fn resources(g: &OpGraph, a: &StageAssignment, costs: &OpCostProfile) -> Resources {
    a.stages
        .iter()
        .zip(&a.replication)
        .map(|(s, &r)| stage_resources(g, s, &a.parallelism, costs) * r)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub dsp: f64,
    pub bram: f64,
    pub lut: f64,
    pub ff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub feasible: bool,
    /// Fraction of each budget used, 1.0 = full.
    pub utilization: Utilization,
}

pub fn check_fit(totals: &Resources, platform: &PlatformProfile) -> Fit {
    let b = &platform.budget;
    Fit {
        feasible: totals.fits(b),
        utilization: Utilization {
            dsp: totals.dsp as f64 / b.dsp as f64,
            bram: totals.bram as f64 / b.bram as f64,
            lut: totals.lut as f64 / b.lut as f64,
            ff: totals.ff as f64 / b.ff as f64,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub platform: String,
    pub stage_cycles: Vec<u64>,
    pub fps: f64,
    pub resources: Resources,
    pub utilization: Utilization,
    pub feasible: bool,
}

pub fn estimate(
    g: &OpGraph,
    a: &StageAssignment,
    costs: &OpCostProfile,
    platform: &PlatformProfile,
) -> PipelineEstimate {
    let cycles: Vec<u64> = a
        .stages
        .iter()
        .zip(&a.replication)
        .map(|(s, &r)| stage_cycles(g, s, &a.parallelism, r, &costs.depth))
        .collect();
    let totals = resources(g, a, costs);
    let fit = check_fit(&totals, platform);
    PipelineEstimate {
        platform: platform.name.clone(),
        fps: fps(&cycles, platform.frequency_hz),
        stage_cycles: cycles,
        resources: totals,
        utilization: fit.utilization,
        feasible: fit.feasible,
    }
}

impl fmt::Display for PipelineEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "platform     {}", self.platform)?;
        for (k, t) in self.stage_cycles.iter().enumerate() {
            writeln!(f, "stage {:<6} {} cycles", k + 1, t)?;
        }
        writeln!(f, "fps          {:.1}", self.fps)?;
        let u = &self.utilization;
        writeln!(f, "dsp          {} ({:.1}%)", self.resources.dsp, 100.0 * u.dsp)?;
        writeln!(f, "bram         {} ({:.1}%)", self.resources.bram, 100.0 * u.bram)?;
        writeln!(f, "lut          {} ({:.1}%)", self.resources.lut, 100.0 * u.lut)?;
        writeln!(f, "ff           {} ({:.1}%)", self.resources.ff, 100.0 * u.ff)?;
        write!(f, "feasible     {}", self.feasible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpGraph;

    fn one_op(q: u64) -> (OpGraph, Vec<usize>) {
        let mut g = OpGraph::new();
        let v = g.add_node("a", OpKind::EwiseMul, q, q);
        (g, vec![v])
    }

    #[test]
    fn cycles_by_substitution() {
        let (g, s) = one_op(1000);
        let d0 = DepthModel { base: 0, per_op: 0 };
        assert_eq!(stage_cycles(&g, &s, &[1], 1, &d0), 1000);
        assert_eq!(stage_cycles(&g, &s, &[1], 4, &d0), 250);
        assert_eq!(stage_cycles(&g, &s, &[3], 1, &d0), 334);
        assert_eq!(stage_cycles(&g, &s, &[1], 1, &DepthModel::default()), 1005);
    }

    #[test]
    fn fps_by_substitution() {
        assert_eq!(fps(&[1000, 2000], 200e6), 100_000.0);
        assert_eq!(fps(&[400], 200e6), 500_000.0);
    }

    #[test]
    fn fit_boundaries() {
        let p = PlatformProfile::ku060();
        let f = check_fit(&p.budget, &p);
        assert!(f.feasible);
        assert_eq!(f.utilization.dsp, 1.0);
        assert_eq!(f.utilization.ff, 1.0);
        for i in 0..4 {
            let mut t = p.budget;
            match i {
                0 => t.dsp += 1,
                1 => t.bram += 1,
                2 => t.lut += 1,
                _ => t.ff += 1,
            }
            assert!(!check_fit(&t, &p).feasible);
        }
    }

    #[test]
    fn presets() {
        let k = PlatformProfile::preset("KU060").unwrap();
        assert_eq!(k.budget, Resources { dsp: 2760, bram: 1080, lut: 331_680, ff: 663_360 });
        let v = PlatformProfile::preset("7v3").unwrap();
        assert_eq!(v.budget, Resources { dsp: 3600, bram: 1470, lut: 859_200, ff: 429_600 });
        assert_eq!(k.frequency_hz, 200e6);
        assert!(PlatformProfile::preset("zynq").is_none());
    }

    #[test]
    fn profiles_round_trip_json() {
        let c = OpCostProfile::synthetic(8);
        let back: OpCostProfile = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let p = PlatformProfile::adm_7v3();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"dsp\":3600"));
        let back: PlatformProfile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
