//! Operator dependency graphs, priority ordering, stage scheduling and
//! replication search.

use std::fmt::{self, Write as _};

use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::EdgeRef;
use petgraph::Direction;
use serde::{Deserialize, Serialize};

use crate::circulant::stats::matvec_op_count;
use crate::error::{Error, Result};
use crate::estimate::{check_fit, stage_cycles, stage_resources, OpCostProfile, PlatformProfile, Resources};
use crate::lstm::{CandidateActivation, LstmArchSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    CirculantConv,
    EwiseMul,
    EwiseAdd,
    Sigmoid,
    Tanh,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::CirculantConv => "circulant-conv",
            OpKind::EwiseMul => "ewise-mul",
            OpKind::EwiseAdd => "ewise-add",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: usize,
    pub name: String,
    pub kind: OpKind,
    /// Arithmetic operation count.
    pub weight: u64,
    /// Work items the operator processes per frame.
    pub workload: u64,
}

/// Directed acyclic operator graph. Node ids are dense insertion indices.
#[derive(Clone, Debug, Default)]
pub struct OpGraph {
    g: DiGraph<OpNode, ()>,
}

impl OpGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, kind: OpKind, weight: u64, workload: u64) -> usize {
        assert!(weight > 0, "operator weight must be positive");
        let id = self.g.node_count();
        self.g.add_node(OpNode {
            id,
            name: name.to_string(),
            kind,
            weight,
            workload,
        });
        id
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        self.g.update_edge(NodeIndex::new(from), NodeIndex::new(to), ());
    }

    pub fn len(&self) -> usize {
        self.g.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, id: usize) -> &OpNode {
        &self.g[NodeIndex::new(id)]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OpNode> {
        self.g.node_weights()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self
            .g
            .edge_references()
            .map(|e| (e.source().index(), e.target().index()))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn successors(&self, id: usize) -> Vec<usize> {
        self.neighbors(id, Direction::Outgoing)
    }

    pub fn predecessors(&self, id: usize) -> Vec<usize> {
        self.neighbors(id, Direction::Incoming)
    }

    fn neighbors(&self, id: usize, dir: Direction) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .g
            .neighbors_directed(NodeIndex::new(id), dir)
            .map(|n| n.index())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn sources(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.predecessors(v).is_empty()).collect()
    }

    pub fn sinks(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.successors(v).is_empty()).collect()
    }

    pub fn topological_order(&self) -> Result<Vec<usize>> {
        toposort(&self.g, None)
            .map(|o| o.into_iter().map(|n| n.index()).collect())
            .map_err(|_| Error::Cycle)
    }

    /// Node count of the longest path through the subgraph induced by `set`.
    pub fn longest_chain(&self, set: &[usize]) -> u64 {
        let mut inside = vec![false; self.len()];
        set.iter().for_each(|&v| inside[v] = true);
        let order = self.topological_order().expect("acyclic graph");
        let mut depth = vec![0u64; self.len()];
        let mut best = 0;
        for v in order.into_iter().filter(|&v| inside[v]) {
            let d = 1 + self
                .predecessors(v)
                .into_iter()
                .filter(|&u| inside[u])
                .map(|u| depth[u])
                .max()
                .unwrap_or(0);
            depth[v] = d;
            best = best.max(d);
        }
        best
    }

    /// Plain-text dump: one `node` line per operator, one `edge` line per
    /// dependency. `parallelism` adds an `N=` column when given.
    pub fn to_text(&self, parallelism: Option<&[u64]>) -> String {
        let mut s = String::new();
        for n in self.nodes() {
            let _ = write!(s, "node {} {} {} W={} Q={}", n.id, n.name, n.kind.name(), n.weight, n.workload);
            if let Some(p) = parallelism {
                let _ = write!(s, " N={}", p[n.id]);
            }
            s.push('\n');
        }
        for (a, b) in self.edges() {
            let _ = writeln!(s, "edge {a} {b}");
        }
        s
    }
}

/// Operator graph of one cell step. Bidirectional specs get a `fw.` and a
/// `bw.` copy; recurrent inputs (`y_{t-1}`, `c_{t-1}`) are graph inputs,
/// so the feedback edges are absent. Biases are folded into the gate
/// convolutions.
pub fn build_graph(arch: &LstmArchSpec) -> Result<OpGraph> {
    arch.validate()?;
    let mut g = OpGraph::new();
    let k = arch.block_size;
    let h = arch.hidden_dim as u64;
    let conv = |g: &mut OpGraph, name: String, m: usize, n: usize| {
        let w = matvec_op_count(m, n, k).total();
        let q = (m.div_ceil(k) * n.div_ceil(k)) as u64;
        g.add_node(&name, OpKind::CirculantConv, w, q)
    };
    for d in 0..arch.directions() {
        let pre = match (arch.bidirectional, d) {
            (false, _) => String::new(),
            (true, 0) => "fw.".into(),
            (true, _) => "bw.".into(),
        };
        let nm = |s: &str| format!("{pre}{s}");
        let cols = arch.gate_cols(0);
        let conv_i = conv(&mut g, nm("conv_i"), arch.hidden_dim, cols);
        let conv_f = conv(&mut g, nm("conv_f"), arch.hidden_dim, cols);
        let conv_c = conv(&mut g, nm("conv_c"), arch.hidden_dim, cols);
        let conv_o = conv(&mut g, nm("conv_o"), arch.hidden_dim, cols);
        let ew = |g: &mut OpGraph, name: &str, kind: OpKind, inputs: &[usize]| {
            let v = g.add_node(&nm(name), kind, h, h);
            inputs.iter().for_each(|&u| g.add_edge(u, v));
            v
        };
        let (pre_i, pre_f) = if arch.peephole {
            let peep_i = ew(&mut g, "peep_i", OpKind::EwiseMul, &[]);
            let peep_f = ew(&mut g, "peep_f", OpKind::EwiseMul, &[]);
            let add_i = ew(&mut g, "add_i", OpKind::EwiseAdd, &[conv_i, peep_i]);
            let add_f = ew(&mut g, "add_f", OpKind::EwiseAdd, &[conv_f, peep_f]);
            (add_i, add_f)
        } else {
            (conv_i, conv_f)
        };
        let sigm_i = ew(&mut g, "sigm_i", OpKind::Sigmoid, &[pre_i]);
        let sigm_f = ew(&mut g, "sigm_f", OpKind::Sigmoid, &[pre_f]);
        let act_g = match arch.candidate_activation {
            CandidateActivation::Sigmoid => ew(&mut g, "sigm_g", OpKind::Sigmoid, &[conv_c]),
            CandidateActivation::Tanh => ew(&mut g, "tanh_g", OpKind::Tanh, &[conv_c]),
        };
        let mul_fc = ew(&mut g, "mul_fc", OpKind::EwiseMul, &[sigm_f]);
        let mul_gi = ew(&mut g, "mul_gi", OpKind::EwiseMul, &[act_g, sigm_i]);
        let add_c = ew(&mut g, "add_c", OpKind::EwiseAdd, &[mul_fc, mul_gi]);
        let pre_o = if arch.peephole {
            let peep_o = ew(&mut g, "peep_o", OpKind::EwiseMul, &[add_c]);
            ew(&mut g, "add_o", OpKind::EwiseAdd, &[conv_o, peep_o])
        } else {
            conv_o
        };
        let sigm_o = ew(&mut g, "sigm_o", OpKind::Sigmoid, &[pre_o]);
        let tanh_c = ew(&mut g, "tanh_c", OpKind::Tanh, &[add_c]);
        let mul_m = ew(&mut g, "mul_m", OpKind::EwiseMul, &[sigm_o, tanh_c]);
        if arch.projection {
            let y = conv(&mut g, nm("conv_y"), arch.output_dim(), arch.hidden_dim);
            g.add_edge(mul_m, y);
        }
    }
    Ok(g)
}

/// `P(v) = W(v) + max P(successor)`, and `P(v) = W(v)` at sinks.
pub fn compute_priorities(g: &OpGraph) -> Result<Vec<u64>> {
    let order = g.topological_order()?;
    let mut p = vec![0u64; g.len()];
    for &v in order.iter().rev() {
        let tail = g.successors(v).into_iter().map(|s| p[s]).max().unwrap_or(0);
        p[v] = g.node(v).weight + tail;
    }
    Ok(p)
}

/// Node ids by decreasing priority, ties by ascending id.
pub fn priority_order(p: &[u64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p[b].cmp(&p[a]).then(a.cmp(&b)));
    ids
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAssignment {
    /// Node ids of each stage in admission order.
    pub stages: Vec<Vec<usize>>,
    /// `N(v)` indexed by node id.
    pub parallelism: Vec<u64>,
    /// `R(G_k)` per stage.
    pub replication: Vec<u64>,
    /// Admissions where a scale factor above 1 hit an already scaled node.
    pub compounding: Vec<String>,
}

impl StageAssignment {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_of(&self, v: usize) -> usize {
        self.stages
            .iter()
            .position(|s| s.contains(&v))
            .expect("stages cover every node")
    }

    /// Every node's predecessors sit in the same or an earlier stage.
    pub fn respects_dependencies(&self, g: &OpGraph) -> bool {
        g.edges().into_iter().all(|(a, b)| self.stage_of(a) <= self.stage_of(b))
    }

    /// Stages partition the node set.
    pub fn is_partition(&self, g: &OpGraph) -> bool {
        let mut seen = vec![0u32; g.len()];
        self.stages.iter().flatten().for_each(|&v| seen[v] += 1);
        seen.iter().all(|&c| c == 1)
    }
}

impl fmt::Display for StageAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (s, r)) in self.stages.iter().zip(&self.replication).enumerate() {
            let members: Vec<String> = s.iter().map(|&v| format!("{v}x{}", self.parallelism[v])).collect();
            writeln!(f, "stage {} R={} [{}]", k + 1, r, members.join(" "))?;
        }
        Ok(())
    }
}

fn design_cost(g: &OpGraph, stages: &[Vec<usize>], n: &[u64], costs: &OpCostProfile) -> Resources {
    stages.iter().map(|s| stage_resources(g, s, n, costs)).sum()
}

/// Greedy stage formation.
///
/// Nodes are visited by decreasing priority. A candidate `v_i` joining the
/// current stage scales each resident `v_j` to `N(v_j) * ceil(W_j / W_i)`
/// and itself takes the smallest parallelism that keeps pace with the
/// slowest resident (`ceil(W_i / max_j W_j / N'_j)`). It is admitted when
/// the whole design, with the scaled stage and every not yet visited node
/// at `N = 1`, fits the platform at unit replication; otherwise it opens a
/// new stage at `N = 1`. The reservation keeps the final design feasible
/// whenever the all-ones design is.
pub fn schedule(
    g: &OpGraph,
    priorities: &[u64],
    platform: &PlatformProfile,
    costs: &OpCostProfile,
) -> Result<StageAssignment> {
    for v in g.nodes() {
        if !costs.delta(v.kind).fits(&platform.budget) {
            return Err(Error::Infeasible { name: v.name.clone() });
        }
    }
    let order = priority_order(priorities);
    // reserve[i]: unit cost of every node after position i
    let mut reserve = vec![Resources::ZERO; order.len()];
    for i in (0..order.len().saturating_sub(1)).rev() {
        reserve[i] = reserve[i + 1] + costs.delta(g.node(order[i + 1]).kind);
    }
    let mut n = vec![1u64; g.len()];
    let mut stages: Vec<Vec<usize>> = Vec::new();
    let mut compounding = Vec::new();
    for (pos, &vi) in order.iter().enumerate() {
        let Some(current) = stages.last() else {
            stages.push(vec![vi]);
            continue;
        };
        let wi = g.node(vi).weight;
        let mut trial = n.clone();
        let mut notes = Vec::new();
        for &vj in current {
            let factor = g.node(vj).weight.div_ceil(wi);
            if factor > 1 && n[vj] > 1 {
                notes.push(format!(
                    "{} x{} on N={} when adding {}",
                    g.node(vj).name,
                    factor,
                    n[vj],
                    g.node(vi).name
                ));
            }
            trial[vj] = n[vj].saturating_mul(factor);
        }
        // slowest resident per-lane time W_s / N_s, compared exactly
        let s = *current
            .iter()
            .max_by(|&&a, &&b| {
                let (wa, wb) = (g.node(a).weight as u128, g.node(b).weight as u128);
                (wa * trial[b] as u128).cmp(&(wb * trial[a] as u128)).then(b.cmp(&a))
            })
            .expect("stage is non-empty");
        let num = wi as u128 * trial[s] as u128;
        trial[vi] = num.div_ceil(g.node(s).weight as u128).clamp(1, u64::MAX as u128) as u64;

        let mut cand = stages.clone();
        cand.last_mut().expect("non-empty").push(vi);
        if (design_cost(g, &cand, &trial, costs) + reserve[pos]).fits(&platform.budget) {
            stages = cand;
            n = trial;
            compounding.extend(notes);
        } else {
            stages.push(vec![vi]);
        }
    }
    let k = stages.len();
    Ok(StageAssignment {
        stages,
        parallelism: n,
        replication: vec![1; k],
        compounding,
    })
}

pub const DEFAULT_REPLICATION_CAP: u64 = 16;

/// Replication factors maximizing modeled throughput within the budget,
/// ties broken by fewest DSPs. Returns all ones when even that does not fit.
///
/// Throughput only depends on the slowest stage, so for each achievable
/// bottleneck `T` (ascending) every stage takes the smallest `R <= cap`
/// meeting `T`. The first `T` whose minimal vector fits is optimal, and the
/// minimal vector is component-wise below every other vector reaching `T`.
pub fn enumerate_replication(
    g: &OpGraph,
    a: &StageAssignment,
    platform: &PlatformProfile,
    costs: &OpCostProfile,
    cap: u64,
) -> Vec<u64> {
    let cap = cap.max(1);
    let cycles: Vec<Vec<u64>> = a
        .stages
        .iter()
        .map(|s| (1..=cap).map(|r| stage_cycles(g, s, &a.parallelism, r, &costs.depth)).collect())
        .collect();
    let unit: Vec<Resources> = a
        .stages
        .iter()
        .map(|s| stage_resources(g, s, &a.parallelism, costs))
        .collect();
    let mut thresholds: Vec<u64> = cycles.iter().flatten().copied().collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    for t in thresholds {
        let r: Option<Vec<u64>> = cycles
            .iter()
            .map(|c| c.iter().position(|&x| x <= t).map(|i| i as u64 + 1))
            .collect();
        let Some(r) = r else { continue };
        let total: Resources = unit.iter().zip(&r).map(|(u, &r)| *u * r).sum();
        if check_fit(&total, platform).feasible {
            return r;
        }
    }
    vec![1; a.stages.len()]
}

/// `schedule` followed by `enumerate_replication`.
pub fn plan(
    g: &OpGraph,
    platform: &PlatformProfile,
    costs: &OpCostProfile,
    cap: u64,
) -> Result<StageAssignment> {
    let p = compute_priorities(g)?;
    let mut a = schedule(g, &p, platform, costs)?;
    a.replication = enumerate_replication(g, &a, platform, costs, cap);
    Ok(a)
}
