//! Gradient-check fixture shared by the gradient tests and the acceptance run.

use botgraph::graph::build_graph;
use botgraph::ingest::Label;
use botgraph::linalg::Matrix;
use botgraph::sage::{
    backward, cross_entropy, forward, initial_running_stats, sage_input, softmax_rows,
    IsolatedPolicy, MlpSettings, Mode, Params,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub input: Matrix,
    pub labels: Vec<Label>,
    pub mask: Vec<usize>,
    pub params: Params,
    pub settings: MlpSettings,
    pub mode: Mode,
}

impl Instance {
    pub fn random(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..=20);
        let dim = rng.random_range(2..=8);
        let h = rng.random_range(2..=6);
        let widths = [rng.random_range(2..=6), rng.random_range(2..=6)];
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let features = Matrix::from_vec(n, dim, data).unwrap();
        let graph = build_graph(&features, 0.3).unwrap();
        let input = sage_input(&graph, &features, IsolatedPolicy::Zero).unwrap();
        let labels: Vec<Label> = (0..n)
            .map(|_| Label::from_index(rng.random_range(0..2)).unwrap())
            .collect();
        let mask: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        let mut params = Params::init(dim, Some(h), &widths, 2, seed);
        // move γ, β off their initial values so their gradients are generic
        for l in &mut params.mlp.hidden {
            l.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            l.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let dropout = if seed % 2 == 0 { 0.0 } else { 0.3 };
        Instance {
            input,
            labels,
            mask: if mask.is_empty() { vec![0] } else { mask },
            params,
            settings: MlpSettings { dropout, bn_eps: 1e-5 },
            mode: Mode::Train { dropout_seed: seed ^ 0xdead },
        }
    }

    pub fn loss(&self, params: &Params) -> f64 {
        let running = initial_running_stats(params);
        let cache = forward(&self.input, params, &running, self.mode, self.settings).unwrap();
        cross_entropy(&softmax_rows(&cache.logits), &self.labels, &self.mask).unwrap()
    }

    pub fn analytic(&self) -> Vec<f64> {
        let running = initial_running_stats(&self.params);
        let cache = forward(&self.input, &self.params, &running, self.mode, self.settings).unwrap();
        backward(&cache, &self.params, &self.labels, &self.mask)
            .unwrap()
            .flatten()
    }

    /// Central differences with step `h`, coordinate by coordinate.
    pub fn numeric(&self, h: f64) -> Vec<f64> {
        let base = self.params.flatten();
        let mut probe = self.params.clone();
        (0..base.len())
            .map(|k| {
                let mut x = base.clone();
                x[k] = base[k] + h;
                probe.assign(&x).unwrap();
                let up = self.loss(&probe);
                x[k] = base[k] - h;
                probe.assign(&x).unwrap();
                let down = self.loss(&probe);
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.abs() <= 1e-8 && n.abs() <= 1e-8 {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    worst
}

/// Smallest per-column batch variance across the hidden batch-norm layers.
/// Near-dead units (variance around `bn_eps`) make the loss so curved that a
/// 1e-4 central difference is itself off by more than 1e-4.
pub fn min_batch_variance(inst: &Instance) -> f64 {
    let running = initial_running_stats(&inst.params);
    let cache = forward(&inst.input, &inst.params, &running, inst.mode, inst.settings).unwrap();
    cache
        .batch_stats()
        .flat_map(|(_, var)| var.iter().copied())
        .fold(f64::INFINITY, f64::min)
}

pub const VARIANCE_FLOOR: f64 = 1e-3;

pub fn nondegenerate_instances(count: usize) -> Vec<(u64, Instance)> {
    (1..)
        .map(|seed| (seed, Instance::random(seed)))
        .filter(|(_, inst)| min_batch_variance(inst) >= VARIANCE_FLOOR)
        .take(count)
        .collect()
}

