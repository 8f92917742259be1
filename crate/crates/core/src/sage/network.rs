//! Parameters, forward pass and hand-derived backward pass.
//!
//! Layout, for `N` nodes with `D`-dimensional features:
//!
//! ```text
//! X   = [F | mean_{N(i)} F]                     N × 2D
//! H0  = ReLU(X W_sᵀ + b_s)                      N × h    (identity H0 = F when the SAGE layer is off)
//! for each hidden layer l:
//!   R_l = ReLU(H_{l-1} W_lᵀ + b_l)
//!   B_l = γ_l ⊙ (R_l − μ) / sqrt(σ² + ε) + β_l  (batch stats in train mode, running stats in infer mode)
//!   H_l = dropout(B_l)                          (train mode only, inverted scaling)
//! Z   = H_L W_outᵀ + b_out                      N × C
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::ingest::Label;
use crate::linalg::Matrix;

use super::layers::{aggregate_neighbors, softmax_rows, IsolatedPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayerParams {
    /// `h × 2D`; the first `D` columns act on the node's own features.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<HiddenLayerParams>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

/// All trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub sage: Option<SageLayerParams>,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSettings {
    pub dropout: f64,
    pub bn_eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Infer,
}

impl Params {
    /// He-normal weights, zero biases, unit γ, zero β.
    pub fn init(
        input_dim: usize,
        sage_width: Option<usize>,
        mlp_widths: &[usize],
        classes: usize,
        seed: u64,
    ) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |rows: usize, cols: usize| {
            let std = (2.0 / cols.max(1) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::from_vec(rows, cols, data).unwrap()
        };
        let sage = sage_width.map(|h| SageLayerParams {
            weight: he(h, 2 * input_dim),
            bias: vec![0.0; h],
        });
        let mut prev = sage_width.unwrap_or(input_dim);
        let mut hidden = Vec::with_capacity(mlp_widths.len());
        for &w in mlp_widths {
            hidden.push(HiddenLayerParams {
                weight: he(w, prev),
                bias: vec![0.0; w],
                gamma: vec![1.0; w],
                beta: vec![0.0; w],
            });
            prev = w;
        }
        let out_weight = he(classes, prev);
        Params {
            sage,
            mlp: MlpParams {
                hidden,
                out_weight,
                out_bias: vec![0.0; classes],
            },
        }
    }

    pub fn zeros_like(&self) -> Params {
        let mut p = self.clone();
        p.for_each_mut(|s| s.iter_mut().for_each(|v| *v = 0.0));
        p
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&[f64])) {
        if let Some(s) = &self.sage {
            f(s.weight.as_slice());
            f(&s.bias);
        }
        for l in &self.mlp.hidden {
            f(l.weight.as_slice());
            f(&l.bias);
            f(&l.gamma);
            f(&l.beta);
        }
        f(self.mlp.out_weight.as_slice());
        f(&self.mlp.out_bias);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        if let Some(s) = &mut self.sage {
            f(s.weight.as_mut_slice());
            f(&mut s.bias);
        }
        for l in &mut self.mlp.hidden {
            f(l.weight.as_mut_slice());
            f(&mut l.bias);
            f(&mut l.gamma);
            f(&mut l.beta);
        }
        f(self.mlp.out_weight.as_mut_slice());
        f(&mut self.mlp.out_bias);
    }

    /// Names of the tensors visited by [`Params::for_each`], same order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.sage.is_some() {
            names.push("sage.weight".to_string());
            names.push("sage.bias".to_string());
        }
        for l in 0..self.mlp.hidden.len() {
            for part in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("hidden{l}.{part}"));
            }
        }
        names.push("out.weight".to_string());
        names.push("out.bias".to_string());
        names
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each(|s| out.extend_from_slice(s));
        out
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each(|s| n += s.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrites all parameters from a flat vector produced by [`Params::flatten`].
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        self.for_each_mut(|s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// Width of the feature rows this network expects.
    pub fn input_dim(&self) -> usize {
        match &self.sage {
            Some(s) => s.weight.cols() / 2,
            None => self
                .mlp
                .hidden
                .first()
                .map_or(self.mlp.out_weight.cols(), |l| l.weight.cols()),
        }
    }
}

impl BnRunningStats {
    pub fn identity(width: usize) -> Self {
        BnRunningStats {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

pub fn initial_running_stats(params: &Params) -> Vec<BnRunningStats> {
    params
        .mlp
        .hidden
        .iter()
        .map(|l| BnRunningStats::identity(l.bias.len()))
        .collect()
}

/// `[F | mean of neighbor rows]`, the input of the SAGE layer.
pub fn sage_input(g: &SimilarityGraph, features: &Matrix, policy: IsolatedPolicy) -> Result<Matrix> {
    let agg = aggregate_neighbors(g, features, policy)?;
    features.hconcat(&agg)
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// One GraphSAGE mean-aggregation layer: `ReLU(W [f_i ‖ f̄_i] + b)`.
pub fn sage_forward(
    g: &SimilarityGraph,
    features: &Matrix,
    params: &SageLayerParams,
    policy: IsolatedPolicy,
) -> Result<Matrix> {
    if params.weight.cols() != 2 * features.cols() {
        return Err(Error::Dimension {
            expected: params.weight.cols(),
            got: 2 * features.cols(),
        });
    }
    let x = sage_input(g, features, policy)?;
    let mut h = x.linear(&params.weight, &params.bias)?;
    relu_in_place(&mut h);
    Ok(h)
}

/// Intermediates of one hidden layer kept for the backward pass.
#[derive(Debug, Clone)]
struct HiddenCache {
    input: Matrix,
    pre: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Dropout multipliers (0 or 1/(1-p)); `None` when dropout is inactive.
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    sage_input: Option<Matrix>,
    sage_pre: Option<Matrix>,
    hidden: Vec<HiddenCache>,
    last_hidden: Matrix,
    pub logits: Matrix,
}

impl ForwardCache {
    /// Batch mean and biased variance of each hidden layer (train mode).
    pub fn batch_stats(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.hidden
            .iter()
            .map(|h| (h.batch_mean.as_slice(), h.batch_var.as_slice()))
    }

    /// Output of the last hidden layer (input to the output layer).
    pub fn last_hidden(&self) -> &Matrix {
        &self.last_hidden
    }

    pub fn rows(&self) -> usize {
        self.logits.rows()
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn mlp_forward_cached(
    input: Matrix,
    mlp: &MlpParams,
    running: &[BnRunningStats],
    mode: Mode,
    settings: MlpSettings,
) -> Result<(Vec<HiddenCache>, Matrix, Matrix)> {
    let n = input.rows();
    if let Mode::Train { .. } = mode {
        if n < 2 && !mlp.hidden.is_empty() {
            return Err(Error::BatchTooSmall(n));
        }
    }
    if running.len() != mlp.hidden.len() {
        return Err(Error::Dimension {
            expected: mlp.hidden.len(),
            got: running.len(),
        });
    }
    let mut rng = match mode {
        Mode::Train { dropout_seed } if settings.dropout > 0.0 => {
            Some(ChaCha8Rng::seed_from_u64(dropout_seed))
        }
        _ => None,
    };
    let mut caches = Vec::with_capacity(mlp.hidden.len());
    let mut current = input;
    for (layer, stats) in mlp.hidden.iter().zip(running) {
        let pre = current.linear(&layer.weight, &layer.bias)?;
        let width = pre.cols();
        let mut act = pre.clone();
        relu_in_place(&mut act);

        let (mean, var) = match mode {
            Mode::Train { .. } => {
                let mut mean = act.column_sums();
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; width];
                for r in act.iter_rows() {
                    for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + settings.bn_eps).sqrt()).collect();
        let mut xhat = act;
        for r in 0..n {
            for (c, x) in xhat.row_mut(r).iter_mut().enumerate() {
                *x = (*x - mean[c]) * inv_std[c];
            }
        }
        let mut out = xhat.clone();
        for r in 0..n {
            for (c, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = layer.gamma[c] * *x + layer.beta[c];
            }
        }
        let mask = rng
            .as_mut()
            .map(|rng| dropout_mask(n, width, settings.dropout, rng));
        if let Some(mask) = &mask {
            for (x, m) in out.as_mut_slice().iter_mut().zip(mask) {
                *x *= m;
            }
        }
        caches.push(HiddenCache {
            input: current,
            pre,
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            mask,
        });
        current = out;
    }
    let logits = current.linear(&mlp.out_weight, &mlp.out_bias)?;
    Ok((caches, current, logits))
}

/// MLP head: hidden layers (linear, ReLU, batch norm, dropout) then a linear
/// output layer producing logits.
pub fn mlp_forward(
    h: &Matrix,
    mlp: &MlpParams,
    running: &[BnRunningStats],
    mode: Mode,
    settings: MlpSettings,
) -> Result<Matrix> {
    mlp_forward_cached(h.clone(), mlp, running, mode, settings).map(|(_, _, z)| z)
}

/// Full forward pass from precomputed `[F | agg]` (or bare `F` when the SAGE
/// layer is disabled).
pub fn forward(
    input: &Matrix,
    params: &Params,
    running: &[BnRunningStats],
    mode: Mode,
    settings: MlpSettings,
) -> Result<ForwardCache> {
    let (sage_input, sage_pre, h0) = match &params.sage {
        Some(s) => {
            if s.weight.cols() != input.cols() {
                return Err(Error::Dimension {
                    expected: s.weight.cols(),
                    got: input.cols(),
                });
            }
            let pre = input.linear(&s.weight, &s.bias)?;
            let mut h = pre.clone();
            relu_in_place(&mut h);
            (Some(input.clone()), Some(pre), h)
        }
        None => (None, None, input.clone()),
    };
    let (hidden, last_hidden, logits) = mlp_forward_cached(h0, &params.mlp, running, mode, settings)?;
    Ok(ForwardCache {
        sage_input,
        sage_pre,
        hidden,
        last_hidden,
        logits,
    })
}

/// Gradient of the masked mean cross-entropy with respect to every parameter.
pub fn backward(
    cache: &ForwardCache,
    params: &Params,
    labels: &[Label],
    mask: &[usize],
) -> Result<Params> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = cache.rows();
    let probs = softmax_rows(&cache.logits);
    let classes = probs.cols();
    let mut dz = Matrix::zeros(n, classes);
    let scale = 1.0 / mask.len() as f64;
    for &i in mask {
        let y = labels[i].index();
        for c in 0..classes {
            let t = if c == y { 1.0 } else { 0.0 };
            dz.set(i, c, (probs.get(i, c) - t) * scale);
        }
    }

    let mut grads = params.zeros_like();
    grads.mlp.out_weight = dz.t_matmul(&cache.last_hidden)?;
    grads.mlp.out_bias = dz.column_sums();
    let mut upstream = dz.matmul(&params.mlp.out_weight)?;

    for (l, (layer, hc)) in params.mlp.hidden.iter().zip(&cache.hidden).enumerate().rev() {
        let width = layer.bias.len();
        // through dropout
        if let Some(m) = &hc.mask {
            for (g, k) in upstream.as_mut_slice().iter_mut().zip(m) {
                *g *= k;
            }
        }
        // through the affine part of batch norm
        let mut dgamma = vec![0.0; width];
        let mut dbeta = vec![0.0; width];
        for r in 0..n {
            let g = upstream.row(r);
            let xh = hc.xhat.row(r);
            for c in 0..width {
                dgamma[c] += g[c] * xh[c];
                dbeta[c] += g[c];
            }
        }
        // dxhat = g * gamma; dR = inv_std/N * (N dxhat - Σdxhat - xhat Σ(dxhat xhat))
        let mut sum_dxhat = vec![0.0; width];
        let mut sum_dxhat_xhat = vec![0.0; width];
        for r in 0..n {
            let g = upstream.row(r);
            let xh = hc.xhat.row(r);
            for c in 0..width {
                let d = g[c] * layer.gamma[c];
                sum_dxhat[c] += d;
                sum_dxhat_xhat[c] += d * xh[c];
            }
        }
        let nf = n as f64;
        let mut dpre = Matrix::zeros(n, width);
        for r in 0..n {
            let g = upstream.row(r);
            let xh = hc.xhat.row(r);
            let pre = hc.pre.row(r);
            let out = dpre.row_mut(r);
            for c in 0..width {
                if pre[c] > 0.0 {
                    let d = g[c] * layer.gamma[c];
                    out[c] = hc.inv_std[c] / nf
                        * (nf * d - sum_dxhat[c] - xh[c] * sum_dxhat_xhat[c]);
                }
            }
        }
        let gl = &mut grads.mlp.hidden[l];
        gl.weight = dpre.t_matmul(&hc.input)?;
        gl.bias = dpre.column_sums();
        gl.gamma = dgamma;
        gl.beta = dbeta;
        upstream = dpre.matmul(&layer.weight)?;
    }

    if let (Some(sage), Some(x), Some(pre)) = (&params.sage, &cache.sage_input, &cache.sage_pre) {
        let mut dpre = upstream;
        for (g, p) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        let gs = grads.sage.as_mut().expect("zeros_like keeps the sage layer");
        gs.weight = dpre.t_matmul(x)?;
        gs.bias = dpre.column_sums();
        debug_assert_eq!(gs.weight.shape(), sage.weight.shape());
    }
    Ok(grads)
}

/// Per-layer batch-norm running-stat update with PyTorch semantics
/// (unbiased variance, `running = (1 - m) running + m batch`).
pub fn update_running_stats(
    running: &mut [BnRunningStats],
    cache: &ForwardCache,
    momentum: f64,
) {
    let n = cache.rows() as f64;
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    for (stats, (mean, var)) in running.iter_mut().zip(cache.batch_stats()) {
        for (r, m) in stats.mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in stats.var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> MlpSettings {
        MlpSettings {
            dropout: 0.0,
            bn_eps: 1e-5,
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn sage_forward_zero_weights() {
        let f = random(5, 3, 1);
        let g = SimilarityGraph::from_edges(5, 0.5, &[(0, 1), (2, 3)]).unwrap();
        let p = SageLayerParams {
            weight: Matrix::zeros(4, 6),
            bias: vec![0.0; 4],
        };
        let h = sage_forward(&g, &f, &p, IsolatedPolicy::Zero).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sage_forward_self_identity() {
        let mut f = random(5, 3, 2);
        f.as_mut_slice().iter_mut().for_each(|v| *v = v.abs());
        let g = SimilarityGraph::from_edges(5, 0.5, &[(0, 1), (1, 4)]).unwrap();
        let mut w = Matrix::zeros(3, 6);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let p = SageLayerParams {
            weight: w,
            bias: vec![0.0; 3],
        };
        let h = sage_forward(&g, &f, &p, IsolatedPolicy::Zero).unwrap();
        assert_eq!(h, f);
    }

    #[test]
    fn sage_forward_rejects_bad_shape() {
        let f = random(3, 2, 3);
        let p = SageLayerParams {
            weight: Matrix::zeros(2, 6),
            bias: vec![0.0; 2],
        };
        let g = SimilarityGraph::empty(3, 0.9);
        assert!(matches!(
            sage_forward(&g, &f, &p, IsolatedPolicy::Zero),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn infer_mode_with_identity_batch_norm_is_plain_mlp() {
        let params = Params::init(4, None, &[5, 3], 2, 9);
        let running = initial_running_stats(&params);
        let h = random(7, 4, 4);
        let z = mlp_forward(&h, &params.mlp, &running, Mode::Infer, settings()).unwrap();

        let mut cur = h.clone();
        for l in &params.mlp.hidden {
            cur = cur.linear(&l.weight, &l.bias).unwrap();
            relu_in_place(&mut cur);
            let s = 1.0 / (1.0f64 + 1e-5).sqrt();
            cur.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        let want = cur.linear(&params.mlp.out_weight, &params.mlp.out_bias).unwrap();
        for (a, b) in z.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_behaviour() {
        let params = Params::init(4, None, &[6, 6], 2, 5);
        let running = initial_running_stats(&params);
        let h = random(8, 4, 6);
        let no_drop = mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 1 }, settings()).unwrap();
        let other_seed = mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 2 }, settings()).unwrap();
        assert_eq!(no_drop, other_seed);

        let half = MlpSettings {
            dropout: 0.5,
            bn_eps: 1e-5,
        };
        let a = mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 3 }, half).unwrap();
        let b = mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 3 }, half).unwrap();
        assert_eq!(a, b);
        let c = mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 4 }, half).unwrap();
        assert_ne!(a, c);

        let i1 = mlp_forward(&h, &params.mlp, &running, Mode::Infer, half).unwrap();
        let i2 = mlp_forward(&h, &params.mlp, &running, Mode::Infer, settings()).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn single_row_train_batch_is_rejected() {
        let params = Params::init(3, None, &[4], 2, 1);
        let running = initial_running_stats(&params);
        let h = random(1, 3, 1);
        assert!(matches!(
            mlp_forward(&h, &params.mlp, &running, Mode::Train { dropout_seed: 0 }, settings()),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(mlp_forward(&h, &params.mlp, &running, Mode::Infer, settings()).is_ok());
    }

    #[test]
    fn flatten_assign_round_trip() {
        let p = Params::init(3, Some(4), &[5, 2], 2, 7);
        let flat = p.flatten();
        let mut q = p.zeros_like();
        q.assign(&flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.input_dim(), 3);
        assert_eq!(p.tensor_names().len(), 2 + 8 + 2);
    }
}
