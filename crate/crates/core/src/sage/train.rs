use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    build_fused_matrix, AuxField, AuxNormalize, FeatureOptions, FusedMatrix, NormalizationStats,
    Pooling, StatsSource,
};
use crate::graph::{build_graph, SimilarityGraph, DEFAULT_TAU};
use crate::ingest::{validate_dataset, Dataset, EmbeddingStore, Label};
use crate::linalg::Matrix;

use super::layers::{argmax_rows, cross_entropy, softmax_rows, IsolatedPolicy};
use super::network::{
    backward, forward, initial_running_stats, sage_input, update_running_stats, BnRunningStats,
    ForwardCache, MlpSettings, Mode, Params,
};

/// Every knob of a training run. Defaults mirror the reference setup:
/// one SAGE layer of width 128, hidden widths `[64, 32]`, dropout 0.5,
/// Adam at 1e-3 for 200 full-batch epochs, stratified 70/10/20 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub pooling: Pooling,
    pub aux_normalize: AuxNormalize,
    pub aux_fields: Vec<AuxField>,
    pub isolated: IsolatedPolicy,
    /// Disabling the SAGE layer feeds `F` straight into the MLP.
    pub use_sage: bool,
    pub sage_width: usize,
    pub mlp_widths: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: DEFAULT_TAU,
            pooling: Pooling::Max,
            aux_normalize: AuxNormalize::LogZ,
            aux_fields: AuxField::ALL.to_vec(),
            isolated: IsolatedPolicy::Zero,
            use_sage: true,
            sage_width: 128,
            mlp_widths: vec![64, 32],
            dropout: 0.5,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            seed: 42,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            classes: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [-1, 1], got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.classes != 2 {
            return bad(format!("only binary classification is supported, got {} classes", self.classes));
        }
        if self.use_sage && self.sage_width == 0 {
            return bad("sage_width must be >= 1".into());
        }
        if self.mlp_widths.is_empty() || self.mlp_widths.contains(&0) {
            return bad("mlp_widths needs at least one positive width".into());
        }
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be in [0, 1] and sum to 1, got {fr:?}"));
        }
        if self.train_fraction == 0.0 {
            return bad("train_fraction must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("learning_rate and bn_eps must be positive, bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            pooling: self.pooling,
            aux_normalize: self.aux_normalize,
            aux_fields: self.aux_fields.clone(),
        }
    }

    pub fn mlp_settings(&self) -> MlpSettings {
        MlpSettings {
            dropout: self.dropout,
            bn_eps: self.bn_eps,
        }
    }
}

/// Node indices of each split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffle, then the first `round(f_train n_c)` go to train, the
/// next `round(f_val n_c)` to validation, the rest to test.
pub fn stratified_split(labels: &[Label], cfg: &TrainConfig) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in [Label::Human, Label::Bot] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((cfg.train_fraction * n as f64).round() as usize).min(n);
        let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    if split.train.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            opt(r.val_loss),
            opt(r.val_accuracy)
        ));
    }
    s
}

/// A trained network plus everything needed to featurize new data the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub stats: NormalizationStats,
    pub params: Params,
    pub running: Vec<BnRunningStats>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &Params, cfg: &TrainConfig) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let g = grads.flatten();
        let mut m = self.m.flatten();
        let mut v = self.v.flatten();
        let mut p = params.flatten();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        self.m.assign(&m).unwrap();
        self.v.assign(&v).unwrap();
        params.assign(&p).unwrap();
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(epoch as u64)
        .rotate_left(17)
}

fn accuracy_on(pred: &[usize], labels: &[Label], idx: &[usize]) -> f64 {
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i].index()).count();
    hits as f64 / idx.len() as f64
}

/// Network input for a feature matrix under `cfg`: `[F | agg]` with the SAGE
/// layer, `F` without it. Also returns the graph built at `cfg.tau`.
pub fn network_input(features: &Matrix, cfg: &TrainConfig) -> Result<(Matrix, SimilarityGraph)> {
    let graph = build_graph(features, cfg.tau)?;
    let input = graph_input(features, &graph, cfg)?;
    Ok((input, graph))
}

fn graph_input(features: &Matrix, graph: &SimilarityGraph, cfg: &TrainConfig) -> Result<Matrix> {
    if cfg.use_sage {
        sage_input(graph, features, cfg.isolated)
    } else {
        Ok(features.clone())
    }
}

/// Full-batch training on an already fused feature matrix. The graph spans
/// every row; only `split.train` contributes to the loss.
pub fn train_on_features(
    features: &Matrix,
    labels: &[Label],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<Model> {
    cfg.validate()?;
    let graph = build_graph(features, cfg.tau)?;
    train_on_graph(features, &graph, labels, split, cfg)
}

/// As [`train_on_features`] with a graph built beforehand at `cfg.tau`.
pub fn train_on_graph(
    features: &Matrix,
    graph: &SimilarityGraph,
    labels: &[Label],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<Model> {
    cfg.validate()?;
    if labels.len() != features.rows() {
        return Err(Error::Dimension {
            expected: features.rows(),
            got: labels.len(),
        });
    }
    if graph.n() != features.rows() || graph.tau() != cfg.tau {
        return Err(Error::ModelMismatch(format!(
            "graph has {} nodes at tau {}, run needs {} nodes at tau {}",
            graph.n(),
            graph.tau(),
            features.rows(),
            cfg.tau
        )));
    }
    let input = graph_input(features, graph, cfg)?;
    let mut params = Params::init(
        features.cols(),
        cfg.use_sage.then_some(cfg.sage_width),
        &cfg.mlp_widths,
        cfg.classes,
        cfg.seed,
    );
    let mut running = initial_running_stats(&params);
    let mut adam = Adam::new(&params, cfg);
    let settings = cfg.mlp_settings();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params, Vec<BnRunningStats>)> = None;
    for epoch in 0..cfg.epochs {
        let mode = Mode::Train {
            dropout_seed: epoch_seed(cfg.seed, epoch),
        };
        let cache = forward(&input, &params, &running, mode, settings)?;
        let train_loss = cross_entropy(&softmax_rows(&cache.logits), labels, &split.train)?;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: epoch + 1,
                loss: train_loss,
            });
        }
        let grads = backward(&cache, &params, labels, &split.train)?;
        adam.step(&mut params, &grads);
        update_running_stats(&mut running, &cache, cfg.bn_momentum);
        if !params.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: epoch + 1,
                loss: f64::NAN,
            });
        }

        let eval = forward(&input, &params, &running, Mode::Infer, settings)?;
        let probs = softmax_rows(&eval.logits);
        let pred = argmax_rows(&eval.logits);
        let (val_loss, val_accuracy) = if split.val.is_empty() {
            (None, None)
        } else {
            (
                Some(cross_entropy(&probs, labels, &split.val)?),
                Some(accuracy_on(&pred, labels, &split.val)),
            )
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            train_accuracy: accuracy_on(&pred, labels, &split.train),
            val_loss,
            val_accuracy,
        });

        // selection score: validation accuracy, or "always newer" without a validation split
        let score = val_accuracy.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch + 1, params.clone(), running.clone()));
        }
    }
    let (_, best_epoch, params, running) = best.expect("epochs >= 1");
    Ok(Model {
        config: cfg.clone(),
        stats: NormalizationStats {
            mode: cfg.aux_normalize,
            mean: Vec::new(),
            std: Vec::new(),
        },
        params,
        running,
        history,
        best_epoch,
    })
}

/// Everything produced by an end-to-end training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub split: Split,
    pub labels: Vec<Label>,
    pub fused: FusedMatrix,
}

/// Split, featurize (normalization fitted on the training rows), build the
/// graph at `cfg.tau`, and train.
pub fn train(ds: &Dataset, store: &EmbeddingStore, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let report = validate_dataset(ds, store);
    if !report.ok {
        let who = report
            .missing
            .first()
            .or(report.zero_tweet.first())
            .cloned()
            .unwrap_or_default();
        return Err(Error::EmptyInput(who));
    }
    let labels = ds.labels()?;
    let split = stratified_split(&labels, cfg)?;
    let (fused, stats) =
        build_fused_matrix(ds, store, &cfg.feature_options(), StatsSource::Fit(&split.train))?;
    let mut model = train_on_features(&fused.matrix, &labels, &split, cfg)?;
    model.stats = stats;
    Ok(TrainRun {
        model,
        split,
        labels,
        fused,
    })
}

/// Inference-mode outputs for every row of a feature matrix.
#[derive(Debug, Clone)]
pub struct Inference {
    pub logits: Matrix,
    pub probs: Matrix,
    pub labels: Vec<Label>,
    /// Output of the last hidden layer.
    pub embeddings: Matrix,
    pub graph: SimilarityGraph,
}

impl Inference {
    pub fn bot_probabilities(&self) -> Vec<f64> {
        (0..self.probs.rows())
            .map(|i| self.probs.get(i, Label::Bot.index()))
            .collect()
    }
}

pub fn infer(model: &Model, features: &Matrix) -> Result<Inference> {
    if features.cols() != model.input_dim() {
        return Err(Error::ModelMismatch(format!(
            "model expects {}-dimensional features, got {}",
            model.input_dim(),
            features.cols()
        )));
    }
    let (input, graph) = network_input(features, &model.config)?;
    let cache: ForwardCache = forward(
        &input,
        &model.params,
        &model.running,
        Mode::Infer,
        model.config.mlp_settings(),
    )?;
    let probs = softmax_rows(&cache.logits);
    let labels = argmax_rows(&cache.logits)
        .into_iter()
        .map(|c| Label::from_index(c).expect("binary head"))
        .collect();
    Ok(Inference {
        embeddings: cache.last_hidden().clone(),
        logits: cache.logits,
        probs,
        labels,
        graph,
    })
}

/// Fused features for `ds` using the model's stored normalization.
pub fn featurize_for_model(model: &Model, ds: &Dataset, store: &EmbeddingStore) -> Result<FusedMatrix> {
    let expected_aux = model.stats.mean.len();
    let got_aux = if ds.has_aux() { model.config.aux_fields.len() } else { 0 };
    if expected_aux != got_aux {
        return Err(Error::ModelMismatch(format!(
            "model was trained with {expected_aux} metadata columns, dataset provides {got_aux}"
        )));
    }
    let (fused, _) = build_fused_matrix(
        ds,
        store,
        &model.config.feature_options(),
        StatsSource::Use(&model.stats),
    )?;
    if fused.cols() != model.input_dim() {
        return Err(Error::ModelMismatch(format!(
            "model expects {}-dimensional features, embeddings give {}",
            model.input_dim(),
            fused.cols()
        )));
    }
    Ok(fused)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub user_id: String,
    pub bot_probability: f64,
    pub label: Label,
}

pub fn predict(model: &Model, ds: &Dataset, store: &EmbeddingStore) -> Result<Vec<Prediction>> {
    let fused = featurize_for_model(model, ds, store)?;
    let inf = infer(model, &fused.matrix)?;
    let probs = inf.bot_probabilities();
    Ok(ds
        .users()
        .iter()
        .zip(probs)
        .zip(inf.labels)
        .map(|((u, p), label)| Prediction {
            user_id: u.user_id.clone(),
            bot_probability: p,
            label,
        })
        .collect())
}
