//! Scheduling invariants over random operator graphs.

use circlstm::estimate::{check_fit, estimate, resources, DepthModel, OpCostProfile, PlatformProfile, Resources};
use circlstm::graph::{
    build_graph, compute_priorities, enumerate_replication, plan, priority_order, schedule, OpGraph, OpKind,
    StageAssignment,
};
use circlstm::LstmArchSpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [OpKind; 5] = [
    OpKind::CirculantConv,
    OpKind::EwiseMul,
    OpKind::EwiseAdd,
    OpKind::Sigmoid,
    OpKind::Tanh,
];

/// Random DAG whose node ids are not a topological order.
fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> OpGraph {
    let n = rng.gen_range(1..=max_nodes);
    let mut g = OpGraph::new();
    for i in 0..n {
        let kind = KINDS[rng.gen_range(0..KINDS.len())];
        let w = rng.gen_range(1..5000);
        g.add_node(&format!("v{i}"), kind, w, rng.gen_range(1..5000));
    }
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(rng);
    let density = rng.gen_range(0.05..0.4);
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(density) {
                g.add_edge(rank[a], rank[b]);
            }
        }
    }
    g
}

fn random_costs(rng: &mut ChaCha8Rng) -> OpCostProfile {
    let mut r = || Resources {
        dsp: rng.gen_range(0..20),
        bram: rng.gen_range(0..4),
        lut: rng.gen_range(0..500),
        ff: rng.gen_range(0..800),
    };
    OpCostProfile {
        label: "random".into(),
        circulant_conv: r(),
        ewise_mul: r(),
        ewise_add: r(),
        sigmoid: r(),
        tanh: r(),
        depth: DepthModel { base: 2, per_op: 3 },
    }
}

#[test]
fn priority_order_is_topological_on_200_random_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..200 {
        let g = random_dag(&mut rng, 50);
        let p = compute_priorities(&g).unwrap();
        let order = priority_order(&p);
        let mut pos = vec![0; g.len()];
        order.iter().enumerate().for_each(|(i, &v)| pos[v] = i);
        for (a, b) in g.edges() {
            assert!(pos[a] < pos[b], "edge {a}->{b} out of order");
        }
        // recursion oracle: recompute by memoized DFS
        fn rec(g: &OpGraph, v: usize, memo: &mut Vec<Option<u64>>) -> u64 {
            if let Some(p) = memo[v] {
                return p;
            }
            let best = g.successors(v).into_iter().map(|s| rec(g, s, memo)).max().unwrap_or(0);
            let p = g.node(v).weight + best;
            memo[v] = Some(p);
            p
        }
        let mut memo = vec![None; g.len()];
        for v in 0..g.len() {
            assert_eq!(p[v], rec(&g, v, &mut memo));
        }
    }
}

#[test]
fn schedules_respect_dependencies_and_budgets() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let g = random_dag(&mut rng, 30);
        let costs = random_costs(&mut rng);
        let unit: Resources = g.nodes().map(|v| costs.delta(v.kind)).sum();
        let mut platform = PlatformProfile::ku060();
        // between "barely the unit design" and "lots of headroom"
        let slack = rng.gen_range(1..6);
        platform.budget = Resources {
            dsp: unit.dsp * slack + 1,
            bram: unit.bram * slack + 1,
            lut: unit.lut * slack + 1,
            ff: unit.ff * slack + 1,
        };
        let p = compute_priorities(&g).unwrap();
        let a = schedule(&g, &p, &platform, &costs).unwrap();
        assert!(a.is_partition(&g));
        assert!(a.respects_dependencies(&g));
        assert!(a.parallelism.iter().all(|&n| n >= 1));
        assert!(check_fit(&resources(&g, &a, &costs), &platform).feasible);
        // deterministic
        assert_eq!(a, schedule(&g, &p, &platform, &costs).unwrap());
        let full = plan(&g, &platform, &costs, 8).unwrap();
        assert!(estimate(&g, &full, &costs, &platform).feasible);
    }
}

#[test]
fn degenerate_budget_gives_singleton_stages() {
    let g = build_graph(&LstmArchSpec::google(8)).unwrap();
    let costs = OpCostProfile::synthetic(8);
    let mut platform = PlatformProfile::ku060();
    platform.budget = costs.circulant_conv;
    let p = compute_priorities(&g).unwrap();
    let a = schedule(&g, &p, &platform, &costs).unwrap();
    assert_eq!(a.num_stages(), g.len());
    assert!(a.respects_dependencies(&g));
    assert!(a.parallelism.iter().all(|&n| n == 1));
    // the whole design cannot fit; the estimate says so
    assert!(!estimate(&g, &a, &costs, &platform).feasible);
}

#[test]
fn unlimited_budget_gives_one_stage_and_flags_compounding() {
    let g = build_graph(&LstmArchSpec::google(8)).unwrap();
    let p = compute_priorities(&g).unwrap();
    let a = schedule(&g, &p, &PlatformProfile::unlimited(), &OpCostProfile::synthetic(8)).unwrap();
    assert_eq!(a.num_stages(), 1);
    assert!(!a.compounding.is_empty());
}

/// Cycles of a stage recomputed with exact rational comparison.
fn brute_cycles(g: &OpGraph, a: &StageAssignment, r: &[u64], depth: &DepthModel) -> Vec<u64> {
    a.stages
        .iter()
        .zip(r)
        .map(|(s, &r)| {
            let mut best = 0u64;
            for &v in s {
                let (q, n) = (g.node(v).workload, a.parallelism[v] * r);
                best = best.max((q + n - 1) / n);
            }
            // longest chain inside the stage by brute force over paths
            let mut depth_of = vec![0u64; g.len()];
            let order = g.topological_order().unwrap();
            let mut chain = 0;
            for v in order {
                if s.contains(&v) {
                    let d = 1 + g
                        .predecessors(v)
                        .iter()
                        .filter(|u| s.contains(u))
                        .map(|&u| depth_of[u])
                        .max()
                        .unwrap_or(0);
                    depth_of[v] = d;
                    chain = chain.max(d);
                }
            }
            best + depth.base + depth.per_op * chain
        })
        .collect()
}

#[test]
fn replication_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    while checked < 100 {
        let g = random_dag(&mut rng, 12);
        let costs = random_costs(&mut rng);
        let unit: Resources = g.nodes().map(|v| costs.delta(v.kind)).sum();
        let mut platform = PlatformProfile::ku060();
        let slack = rng.gen_range(2..12);
        platform.budget = Resources {
            dsp: unit.dsp * slack + 1,
            bram: unit.bram * slack + 1,
            lut: unit.lut * slack + 1,
            ff: unit.ff * slack + 1,
        };
        let p = compute_priorities(&g).unwrap();
        let a = schedule(&g, &p, &platform, &costs).unwrap();
        let k = a.num_stages();
        // at most 64 configurations
        let cap: u64 = match k {
            1 => 16,
            2 => 8,
            3 => 4,
            _ => continue,
        };
        let chosen = enumerate_replication(&g, &a, &platform, &costs, cap);
        let score = |r: &[u64]| {
            let t = brute_cycles(&g, &a, r, &costs.depth);
            let mut b = a.clone();
            b.replication = r.to_vec();
            let res = resources(&g, &b, &costs);
            (*t.iter().max().unwrap(), res.dsp, check_fit(&res, &platform).feasible)
        };
        let mut best: Option<(u64, u64)> = None;
        let total = cap.pow(k as u32);
        for code in 0..total {
            let r: Vec<u64> = (0..k).map(|i| (code / cap.pow(i as u32)) % cap + 1).collect();
            let (t, dsp, ok) = score(&r);
            if ok && best.map_or(true, |(bt, bd)| t < bt || (t == bt && dsp < bd)) {
                best = Some((t, dsp));
            }
        }
        let (t, dsp, ok) = score(&chosen);
        assert!(ok);
        assert_eq!(Some((t, dsp)), best, "stages {k}, chosen {chosen:?}");
        checked += 1;
    }
}

#[test]
fn replication_prioritizes_the_slow_stage() {
    let mut g = OpGraph::new();
    let a = g.add_node("fast", OpKind::EwiseMul, 1000, 1000);
    let b = g.add_node("slow", OpKind::EwiseMul, 3000, 3000);
    g.add_edge(a, b);
    let assign = StageAssignment {
        stages: vec![vec![a], vec![b]],
        parallelism: vec![1, 1],
        replication: vec![1, 1],
        compounding: vec![],
    };
    let mut costs = OpCostProfile::free();
    costs.ewise_mul = Resources { dsp: 1, bram: 0, lut: 0, ff: 0 };
    costs.depth = DepthModel { base: 0, per_op: 0 };
    let mut platform = PlatformProfile::ku060();
    platform.budget.dsp = 4;
    // four DSPs: best split is one copy of the fast stage, three of the slow
    assert_eq!(enumerate_replication(&g, &assign, &platform, &costs, 16), vec![1, 3]);
}
