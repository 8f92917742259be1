//! Analytic gradients against central finite differences.

mod common;

use botgraph::graph::SimilarityGraph;
use botgraph::ingest::Label;
use botgraph::linalg::Matrix;
use botgraph::sage::{
    backward, forward, initial_running_stats, sage_input, IsolatedPolicy, MlpSettings, Mode, Params,
};
use common::{nondegenerate_instances, worst_relative_error, Instance};

#[test]
fn gradients_match_finite_differences() {
    for (seed, inst) in nondegenerate_instances(5) {
        let a = inst.analytic();
        let n = inst.numeric(1e-4);
        let (rel, k) = worst_relative_error(&a, &n);
        assert!(
            rel <= 1e-4,
            "seed {seed}: coordinate {k} analytic {} numeric {} rel {rel:e}",
            a[k],
            n[k]
        );
    }
}

#[test]
fn gradients_match_small_step_differences_on_every_instance() {
    // No variance floor here; a 1e-5 step resolves the curved instances that
    // the check above skips, without straddling nearby ReLU kinks.
    for seed in 1..=10 {
        let inst = Instance::random(seed);
        let a = inst.analytic();
        let n = inst.numeric(1e-5);
        let (rel, k) = worst_relative_error(&a, &n);
        assert!(
            rel <= 1e-4,
            "seed {seed}: coordinate {k} analytic {} numeric {} rel {rel:e}",
            a[k],
            n[k]
        );
    }
}

#[test]
fn output_bias_gradient_vanishes_at_symmetric_point() {
    let n = 8;
    let features = Matrix::from_vec(n, 2, vec![1.0; n * 2]).unwrap();
    let graph = SimilarityGraph::empty(n, 0.9);
    let input = sage_input(&graph, &features, IsolatedPolicy::Zero).unwrap();
    let mut params = Params::init(2, Some(3), &[3, 3], 2, 1);
    params.for_each_mut(|s| s.iter_mut().for_each(|v| *v = 0.0));
    let labels: Vec<Label> = (0..n).map(|i| Label::from_index(i % 2).unwrap()).collect();
    let mask: Vec<usize> = (0..n).collect();
    let settings = MlpSettings { dropout: 0.0, bn_eps: 1e-5 };
    let running = initial_running_stats(&params);
    let cache = forward(&input, &params, &running, Mode::Train { dropout_seed: 0 }, settings).unwrap();
    let g = backward(&cache, &params, &labels, &mask).unwrap();
    assert!(g.mlp.out_bias.iter().all(|v| v.abs() < 1e-15), "{:?}", g.mlp.out_bias);
}

#[test]
fn weights_on_an_all_zero_feature_get_zero_gradient() {
    let mut inst = Instance::random(7);
    let dim = inst.input.cols() / 2;
    // zero feature column 0 in both the self and the aggregated halves
    for r in 0..inst.input.rows() {
        inst.input.set(r, 0, 0.0);
        inst.input.set(r, dim, 0.0);
    }
    let running = initial_running_stats(&inst.params);
    let cache = forward(&inst.input, &inst.params, &running, inst.mode, inst.settings).unwrap();
    let g = backward(&cache, &inst.params, &inst.labels, &inst.mask).unwrap();
    let w = &g.sage.unwrap().weight;
    for row in 0..w.rows() {
        assert_eq!(w.get(row, 0), 0.0);
        assert_eq!(w.get(row, dim), 0.0);
    }
}
