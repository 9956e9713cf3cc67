//! Central finite-difference check of every parameter group of the denoiser.

use std::sync::Arc;

use difftsp_core::denoiser::{backward, forward, fuse_graphs, DenoiserConfig, DenoiserParams};
use difftsp_core::kg::{to_adjacency, AdjacencyState, Graph, Triple, Vocab};
use difftsp_core::training::{masked_weighted_bce, LossConfig};

const STEP: f64 = 1e-3;

struct Fixture {
    fused: AdjacencyState,
    target: AdjacencyState,
    noisy: AdjacencyState,
    support: Graph,
    loss: LossConfig,
    t: usize,
}

fn fixture() -> Fixture {
    let vocab = Arc::new(
        Vocab::from_names((0..6).map(|i| format!("e{i}")).collect(), vec!["a".into(), "b".into(), "c".into()]).unwrap(),
    );
    let support = Graph::from_triples(
        vocab.clone(),
        vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(3, 2, 3), Triple::new(5, 0, 4)],
    )
    .unwrap();
    let query = Graph::from_triples(
        vocab,
        vec![Triple::new(1, 0, 0), Triple::new(2, 1, 4), Triple::new(4, 2, 5), Triple::new(0, 1, 5)],
    )
    .unwrap();
    let entities: Vec<u32> = (0..6).collect();
    let target = to_adjacency(&query, &entities).unwrap();
    let mut noisy = AdjacencyState::empty(entities, 3);
    noisy.set(2, 4, 1, true);
    let fused = fuse_graphs(&support, &noisy).unwrap();
    Fixture { fused, target, noisy, support, loss: LossConfig { weights: vec![1.4, 0.6, 2.1, 0.3], exclude_known: true }, t: 7 }
}

fn loss_of(p: &DenoiserParams, f: &Fixture) -> f64 {
    let (out, _) = forward(p, &f.fused, f.t).unwrap();
    masked_weighted_bce(&out, &f.target, &f.support, &f.noisy, &f.loss).unwrap().0
}

/// Random parameters with every adaLN gate and bias switched on so that all groups receive gradient.
fn params() -> DenoiserParams {
    let mut p = DenoiserParams::init(DenoiserConfig { dim: 16, n_rel: 3, blocks: 3, rce_layers: 2 }, 11);
    let mut k = 0.0f64;
    for (_, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            k += 1.0;
            *v += 0.05 * (k * 0.7071).sin();
        }
    }
    p
}

#[test]
fn every_parameter_group_matches_finite_differences() {
    let f = fixture();
    let p = params();
    let (out, cache) = forward(&p, &f.fused, f.t).unwrap();
    let (_, dlogits) = masked_weighted_bce(&out, &f.target, &f.support, &f.noisy, &f.loss).unwrap();
    let grads = backward(&p, &cache, &dlogits);

    let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.iter().copied().collect()).collect();
    let mut failures = Vec::new();
    for (g, name) in names.iter().enumerate() {
        let len = analytic[g].len();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        let mut numeric = vec![0.0; len];
        for idx in 0..len {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.tensors_mut()[g].1.as_slice_mut().unwrap()[idx] += STEP;
            minus.tensors_mut()[g].1.as_slice_mut().unwrap()[idx] -= STEP;
            numeric[idx] = (loss_of(&plus, &f) - loss_of(&minus, &f)) / (2.0 * STEP);
            scale = scale.max(numeric[idx].abs()).max(analytic[g][idx].abs());
        }
        assert!(scale > 0.0, "{name} receives no gradient");
        for idx in 0..len {
            worst = worst.max((numeric[idx] - analytic[g][idx]).abs() / scale);
        }
        if worst >= 1e-4 {
            failures.push(format!("{name}: {worst:.3e}"));
        }
    }
    assert!(failures.is_empty(), "groups over tolerance: {failures:?}");
}
