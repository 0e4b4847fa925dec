//! Randomized invariants of circulant mat-vecs and LSTM steps.

use circlstm::circulant::grad;
use circlstm::lstm::{CandidateActivation, CellState};
use circlstm::{BlockCirculantMatrix, CallCounters, CallCounts, LstmArchSpec, LstmModel, LstmWeights, Mode, SpectralWeights};
use proptest::prelude::*;

/// Matrix with `p, q <= 4` blocks, ragged edges allowed, plus an input.
fn instance() -> impl Strategy<Value = (BlockCirculantMatrix, Vec<f64>)> {
    (1u32..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(e, p, q)| {
            let k = 1usize << e;
            ((p - 1) * k + 1..=p * k, (q - 1) * k + 1..=q * k, Just(k), Just(p * q * k))
        })
        .prop_flat_map(|(m, n, k, len)| {
            (
                prop::collection::vec(-1.0f64..1.0, len).prop_map(move |d| BlockCirculantMatrix::new(m, n, k, d).unwrap()),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spectral_matvec_matches_naive((b, x) in instance()) {
        let c = CallCounters::new();
        let got = SpectralWeights::new(&b).unwrap().matvec(&x, &c).unwrap();
        let want = b.matvec_naive(&x).unwrap();
        let err: Vec<f64> = got.iter().zip(&want).map(|(a, b)| a - b).collect();
        prop_assert!(max_abs(&err) <= 1e-8 * max_abs(&want).max(1.0));
        let (p, q) = b.grid();
        let (p, q) = (p as u64, q as u64);
        prop_assert_eq!(c.snapshot(), CallCounts { dft: q, idft: p, pointwise: p * q });
    }

    #[test]
    fn projection_is_a_fixed_point((b, _) in instance()) {
        let k = b.block_size();
        let once = BlockCirculantMatrix::project_dense(&b.expand_to_dense(), k).unwrap();
        prop_assert!(once.expand_to_dense().frobenius_distance(&b.expand_to_dense()) < 1e-12);
        let twice = BlockCirculantMatrix::project_dense(&once.expand_to_dense(), k).unwrap();
        let d = once.data().iter().zip(twice.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences((b, x) in instance(), seed in any::<u64>()) {
        let u: Vec<f64> = (0..b.rows()).map(|i| ((seed >> (i % 60)) & 7) as f64 / 4.0 - 0.9).collect();
        let g = grad(&b, &x, &u).unwrap();
        let loss = |d: &[f64], x: &[f64]| -> f64 {
            let b = BlockCirculantMatrix::new(b.rows(), b.cols(), b.block_size(), d.to_vec()).unwrap();
            b.matvec_naive(x).unwrap().iter().zip(&u).map(|(a, u)| a * u).sum()
        };
        let h = 1e-5;
        let fd = |f: &dyn Fn(usize, f64) -> f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| (f(i, h) - f(i, -h)) / (2.0 * h)).collect()
        };
        let w = b.data().to_vec();
        let fd_w = fd(&|i, d| { let mut w = w.clone(); w[i] += d; loss(&w, &x) }, w.len());
        let fd_x = fd(&|i, d| { let mut y = x.clone(); y[i] += d; loss(&w, &y) }, x.len());
        for (an, num) in [(&g.weights, &fd_w), (&g.input, &fd_x)] {
            let diff: f64 = an.iter().zip(num).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = num.iter().map(|f| f * f).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-5 * norm.max(1e-3), "{diff} vs {norm}");
        }
    }
}

fn small_arch(k: usize, cand: CandidateActivation) -> LstmArchSpec {
    LstmArchSpec {
        input_dim: 6,
        hidden_dim: 16,
        projection_dim: Some(8),
        num_layers: 1,
        bidirectional: false,
        peephole: true,
        projection: true,
        block_size: k,
        candidate_activation: cand,
        output_classes: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_activations_stay_in_unit_interval(
        seed in any::<u64>(),
        e in 0u32..4,
        amp in 0.1f64..6.0,
        x in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let arch = small_arch(1 << e, CandidateActivation::Sigmoid);
        let model = LstmModel::new(LstmWeights::random(&arch, seed).unwrap()).unwrap();
        let x: Vec<f64> = x.iter().map(|v| v * amp).collect();
        let mut s = CellState::zeros(&arch);
        for _ in 0..3 {
            let f = model.step_traced(0, 0, &x, &s, Mode::Float).unwrap();
            let q = model.step_traced(0, 0, &x, &s, Mode::Fxp).unwrap();
            for g in 0..4 {
                prop_assert!(f.act[g].iter().all(|&a| a > 0.0 && a < 1.0));
                prop_assert!(q.act[g].iter().all(|&a| (0.0..=1.0).contains(&a)));
            }
            s = f.state;
        }
    }

    #[test]
    fn fxp_runs_are_bit_identical(seed in any::<u64>(), e in 1u32..4) {
        let arch = small_arch(1 << e, CandidateActivation::Tanh);
        let w = LstmWeights::random(&arch, seed).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|t| (0..6).map(|i| ((t * 6 + i) as f64 * 0.37).sin()).collect()).collect();
        let a = LstmModel::new(w.clone()).unwrap().run_sequence(&xs, Mode::Fxp).unwrap();
        let b = LstmModel::new(w).unwrap().run_sequence(&xs, Mode::Fxp).unwrap();
        prop_assert_eq!(a, b);
    }
}
