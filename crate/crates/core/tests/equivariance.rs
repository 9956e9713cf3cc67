//! Relabeling entities permutes the denoiser output the same way.

use std::sync::Arc;

use difftsp_core::denoiser::{denoise, DenoiserConfig, DenoiserParams};
use difftsp_core::kg::{AdjacencyState, Graph, Triple, Vocab};
use difftsp_core::rng;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn denoise_commutes_with_relabeling() {
    let n = 12;
    let vocab = Arc::new(
        Vocab::from_names((0..n).map(|i| format!("e{i}")).collect(), (0..3).map(|i| format!("r{i}")).collect()).unwrap(),
    );
    let mut gen = rng::stream(5, &[]);
    let support: Vec<Triple> = (0..20)
        .map(|_| Triple::new(gen.random_range(0..n as u32), gen.random_range(0..3), gen.random_range(0..n as u32)))
        .collect();
    let support = Graph::from_triples(vocab, support).unwrap();
    let mut noisy = AdjacencyState::empty((0..n as u32).collect(), 3);
    for _ in 0..10 {
        noisy.set(gen.random_range(0..n), gen.random_range(0..n), gen.random_range(0..3), true);
    }
    let mut params = DenoiserParams::init(DenoiserConfig::new(16, 3), 3);
    for (_, t) in params.tensors_mut() {
        t.mapv_inplace(|v| v + 0.03);
    }
    let base = denoise(&noisy, &support, 9, &params).unwrap();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut gen);
        let out = denoise(&noisy.permuted(&perm), &support, 9, &params).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..4 {
                    worst = worst.max((out.prob(i, j, k) - base.prob(perm[i], perm[j], k)).abs());
                }
            }
        }
    }
    assert!(worst < 1e-6, "max deviation {worst:e}");
}
