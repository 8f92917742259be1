//! Classification metrics, PR/ROC curves, the threshold sweep and the
//! leave-one-out ablation harness. Bot is the positive class throughout.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::AuxField;
use crate::graph::{graph_stats, GraphStats};
use crate::ingest::{Dataset, EmbeddingStore, Label};
use crate::sage::{featurize_for_model, infer, stratified_split, train, Inference, Model, TrainConfig, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Data("confusion matrix of zero predictions".into()));
    }
    let mut c = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Bot, Label::Bot) => c.tp += 1,
            (Label::Bot, Label::Human) => c.fp += 1,
            (Label::Human, Label::Bot) => c.fn_ += 1,
            (Label::Human, Label::Human) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision, recall or F1 had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn metrics(c: &ConfusionMatrix) -> Metrics {
    let total = c.total();
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let accuracy = ratio(c.tp + c.tn, total).unwrap_or(0.0);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy,
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Scores sorted descending with the positive/negative count at each
/// distinct score.
fn score_steps(scores: &[f64], truth: &[Label]) -> Result<(Vec<(f64, usize, usize)>, usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    let pos = truth.iter().filter(|&&t| t == Label::Bot).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let is_pos = (truth[i] == Label::Bot) as usize;
        match steps.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += is_pos;
                last.2 += 1 - is_pos;
            }
            _ => steps.push((scores[i], is_pos, 1 - is_pos)),
        }
    }
    Ok((steps, pos, neg))
}

/// Precision-recall points, one per distinct score, thresholds descending.
/// A user is flagged when its score is at least the threshold.
/// `x` is recall and `y` precision.
pub fn pr_curve(scores: &[f64], truth: &[Label]) -> Result<Vec<CurvePoint>> {
    let (steps, pos, _) = score_steps(scores, truth)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(steps
        .into_iter()
        .map(|(t, p, n)| {
            tp += p;
            fp += n;
            CurvePoint {
                threshold: t,
                x: tp as f64 / pos as f64,
                y: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// ROC points starting at the origin (threshold `+inf`); `x` is FPR and `y`
/// TPR. Tied scores move both coordinates in one step. The area comes from
/// the trapezoidal rule.
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<(Vec<CurvePoint>, f64)> {
    let (steps, pos, neg) = score_steps(scores, truth)?;
    let mut points = Vec::with_capacity(steps.len() + 1);
    points.push(CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (t, p, n) in steps {
        let (x0, y0) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        tp += p;
        fp += n;
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        area += (x1 - x0) * (y0 + y1) / 2.0;
        points.push(CurvePoint { threshold: t, x: x1, y: y1 });
    }
    Ok((points, area))
}

/// Test-split results of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub auc: Option<f64>,
    #[serde(skip)]
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub truth: Vec<Label>,
}

impl Evaluation {
    pub fn pr_curve(&self) -> Result<Vec<CurvePoint>> {
        pr_curve(&self.scores, &self.truth)
    }

    pub fn roc_curve(&self) -> Result<Vec<CurvePoint>> {
        roc_auc(&self.scores, &self.truth).map(|r| r.0)
    }
}

/// Scores the rows in `rows` of an inference result against `labels`.
pub fn evaluate_rows(inf: &Inference, labels: &[Label], rows: &[usize]) -> Result<Evaluation> {
    let preds: Vec<Label> = rows.iter().map(|&i| inf.labels[i]).collect();
    let truth: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
    let all = inf.bot_probabilities();
    let scores: Vec<f64> = rows.iter().map(|&i| all[i]).collect();
    let c = confusion(&preds, &truth)?;
    let auc = match roc_auc(&scores, &truth) {
        Ok((_, a)) => Some(a),
        Err(Error::DegenerateLabels) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        confusion: c,
        metrics: metrics(&c),
        auc,
        scores,
        truth,
    })
}

/// Evaluates a fresh training run on its own test split.
pub fn evaluate_run(run: &TrainRun) -> Result<Evaluation> {
    let inf = infer(&run.model, &run.fused.matrix)?;
    evaluate_rows(&inf, &run.labels, &run.split.test)
}

/// Evaluates a saved model on the test split that its config assigns to `ds`.
pub fn evaluate_model(model: &Model, ds: &Dataset, store: &EmbeddingStore) -> Result<Evaluation> {
    let labels = ds.labels()?;
    let split = stratified_split(&labels, &model.config)?;
    let fused = featurize_for_model(model, ds, store)?;
    let inf = infer(model, &fused.matrix)?;
    evaluate_rows(&inf, &labels, &split.test)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub accuracy: f64,
    pub graph: GraphStats,
}

/// Retrains at every threshold with otherwise identical settings.
pub fn sweep_accuracy(
    ds: &Dataset,
    store: &EmbeddingStore,
    cfg: &TrainConfig,
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::Config("sweep needs at least one tau".into()));
    }
    taus.par_iter()
        .map(|&tau| {
            let cfg = TrainConfig { tau, ..cfg.clone() };
            let run = train(ds, store, &cfg)?;
            let inf = infer(&run.model, &run.fused.matrix)?;
            let eval = evaluate_rows(&inf, &run.labels, &run.split.test)?;
            Ok(SweepRow {
                tau,
                accuracy: eval.metrics.accuracy,
                graph: graph_stats(&inf.graph),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub row: String,
    pub metrics: Metrics,
}

/// Row names in output order: `full`, `without_<field>` for each metadata
/// field, then `without_graphsage`.
pub fn ablation_configs(cfg: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut rows = vec![("full".to_string(), cfg.clone())];
    for field in AuxField::ALL {
        let kept = cfg.aux_fields.iter().copied().filter(|&f| f != field).collect();
        rows.push((
            format!("without_{}", field.name()),
            TrainConfig {
                aux_fields: kept,
                ..cfg.clone()
            },
        ));
    }
    rows.push((
        "without_graphsage".to_string(),
        TrainConfig {
            use_sage: false,
            ..cfg.clone()
        },
    ));
    rows
}

/// Leave-one-out ablation. Each row refits normalization, rebuilds the graph
/// and retrains from the same seed.
pub fn ablate(ds: &Dataset, store: &EmbeddingStore, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    if !ds.has_aux() {
        let who = ds.users().first().map(|u| u.user_id.clone()).unwrap_or_default();
        return Err(Error::MissingMetadata(who));
    }
    ablation_configs(cfg)
        .into_par_iter()
        .map(|(row, cfg)| {
            let run = train(ds, store, &cfg)?;
            let eval = evaluate_run(&run)?;
            Ok(AblationRow {
                row,
                metrics: eval.metrics,
            })
        })
        .collect()
}

/// CSV of last-hidden-layer vectors: `user_id,label,h0,...`. The label column
/// is empty for unlabeled users.
pub fn node_embeddings_csv(model: &Model, ds: &Dataset, store: &EmbeddingStore) -> Result<String> {
    let fused = featurize_for_model(model, ds, store)?;
    let inf = infer(model, &fused.matrix)?;
    let width = inf.embeddings.cols();
    let mut out = String::from("user_id,label");
    for k in 0..width {
        write!(out, ",h{k}").unwrap();
    }
    out.push('\n');
    for (i, u) in ds.users().iter().enumerate() {
        out.push_str(&csv_field(&u.user_id));
        out.push(',');
        if let Some(l) = u.label {
            write!(out, "{}", l.index()).unwrap();
        }
        for v in inf.embeddings.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_node_embeddings(model: &Model, ds: &Dataset, store: &EmbeddingStore, path: &Path) -> Result<()> {
    let csv = node_embeddings_csv(model, ds, store)?;
    write_text(path, &csv)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn pr_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,recall,precision\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.x, p.y).unwrap();
    }
    out
}

pub fn roc_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.x, p.y).unwrap();
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,edges,density,accuracy\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.tau, r.graph.edge_count, r.graph.density, r.accuracy).unwrap();
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row,accuracy,precision,recall,f1\n");
    for r in rows {
        let m = &r.metrics;
        writeln!(out, "{},{},{},{},{}", r.row, m.accuracy, m.precision, m.recall, m.f1).unwrap();
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
