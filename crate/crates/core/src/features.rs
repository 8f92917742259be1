//! Per-user node features: pooled tweet embeddings concatenated with
//! (optionally log/z-scored) profile counts.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, EmbeddingMatrix, EmbeddingStore, UserRecord};
use crate::linalg::Matrix;

pub const FUSED_MAGIC: &[u8; 4] = b"RGBF";
pub const FUSED_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxField {
    Followers,
    Friends,
    Statuses,
    Favorites,
}

impl AuxField {
    pub const ALL: [AuxField; 4] = [
        AuxField::Followers,
        AuxField::Friends,
        AuxField::Statuses,
        AuxField::Favorites,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AuxField::Followers => "followers",
            AuxField::Friends => "friends",
            AuxField::Statuses => "statuses",
            AuxField::Favorites => "favorites",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Avg,
    #[default]
    Max,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "mean" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Avg => "avg",
            Pooling::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AuxNormalize {
    /// `log(1 + x)` followed by a z-score.
    #[default]
    #[serde(rename = "log-z")]
    LogZ,
    /// Raw counts.
    #[serde(rename = "none")]
    None,
}

impl FromStr for AuxNormalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-z" => Ok(AuxNormalize::LogZ),
            "none" => Ok(AuxNormalize::None),
            other => Err(Error::Config(format!("unknown aux normalization `{other}`"))),
        }
    }
}

impl fmt::Display for AuxNormalize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxNormalize::LogZ => "log-z",
            AuxNormalize::None => "none",
        })
    }
}

/// Raw profile counts in fixed order (followers, friends, statuses, favorites).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxVector(pub [f64; 4]);

pub fn extract_auxiliary(u: &UserRecord) -> Result<AuxVector> {
    let aux = u
        .aux
        .ok_or_else(|| Error::MissingMetadata(u.user_id.clone()))?;
    Ok(AuxVector(aux.as_array().map(|c| c as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mode: AuxNormalize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Fits per-column mean and population std on the given rows.
    pub fn fit(raw: &Matrix, rows: &[usize], mode: AuxNormalize) -> Self {
        let cols = raw.cols();
        if mode == AuxNormalize::None {
            return NormalizationStats {
                mode,
                mean: vec![0.0; cols],
                std: vec![1.0; cols],
            };
        }
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; cols];
        for &r in rows {
            for (m, &x) in mean.iter_mut().zip(raw.row(r)) {
                *m += x.ln_1p();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        // constant columns get their exact value as mean so they map to 0.0
        for (c, m) in mean.iter_mut().enumerate() {
            if let Some((&first, rest)) = rows.split_first() {
                let v = raw.get(first, c);
                if rest.iter().all(|&r| raw.get(r, c) == v) {
                    *m = v.ln_1p();
                }
            }
        }
        let mut var = vec![0.0; cols];
        for &r in rows {
            for ((v, m), &x) in var.iter_mut().zip(&mean).zip(raw.row(r)) {
                let d = x.ln_1p() - m;
                *v += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        NormalizationStats { mode, mean, std }
    }

    pub fn apply_row(&self, raw: &[f64]) -> Vec<f64> {
        match self.mode {
            AuxNormalize::None => raw.to_vec(),
            AuxNormalize::LogZ => raw
                .iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(&x, (m, s))| (x.ln_1p() - m) / s)
                .collect(),
        }
    }

    pub fn apply(&self, raw: &Matrix) -> Result<Matrix> {
        if raw.cols() != self.mean.len() {
            return Err(Error::ModelMismatch(format!(
                "normalization stats cover {} metadata columns, input has {}",
                self.mean.len(),
                raw.cols()
            )));
        }
        let data = raw.iter_rows().flat_map(|r| self.apply_row(r)).collect();
        Matrix::from_vec(raw.rows(), raw.cols(), data)
    }
}

/// Log/z-scores `raw`. Without `stats` the statistics are fitted on every row
/// of `raw` and returned.
pub fn normalize_auxiliary(
    raw: &Matrix,
    stats: Option<&NormalizationStats>,
) -> Result<(Matrix, NormalizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let all: Vec<usize> = (0..raw.rows()).collect();
            NormalizationStats::fit(raw, &all, AuxNormalize::LogZ)
        }
    };
    Ok((stats.apply(raw)?, stats))
}

/// Reduces a user's `n_k × d` tweet embeddings to one `d`-vector.
pub fn pool_tweets(m: &EmbeddingMatrix, mode: Pooling) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::EmptyInput(String::new()));
    }
    let mut out: Vec<f64> = m.row(0).iter().map(|&v| v as f64).collect();
    for row in m.iter_rows().skip(1) {
        for (o, &v) in out.iter_mut().zip(row) {
            match mode {
                Pooling::Max => *o = o.max(v as f64),
                Pooling::Avg => *o += v as f64,
            }
        }
    }
    if mode == Pooling::Avg {
        let n = m.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}

/// `[v ; a]`, or `v` alone when there is no metadata.
pub fn fuse(v: &[f64], a: Option<&[f64]>) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + a.map_or(0, <[f64]>::len));
    out.extend_from_slice(v);
    if let Some(a) = a {
        out.extend_from_slice(a);
    }
    out
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a, then a splitmix finalizer so low bits are well mixed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ mix64(seed);
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

/// Hashed bag-of-tokens embedding, one L2-normalized row per tweet.
///
/// A deterministic stand-in for a language model so the rest of the
/// pipeline can run without one.
pub fn fallback_featurize(tweets: &[String], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::Config("fallback embedding dim must be >= 1".into()));
    }
    let mut data = vec![0f32; tweets.len() * dim];
    for (row, tweet) in data.chunks_exact_mut(dim).zip(tweets) {
        let lowered = tweet.to_lowercase();
        let mut acc = vec![0f64; dim];
        for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = token_hash(token, seed);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (r, a) in row.iter_mut().zip(&acc) {
                *r = (a / norm) as f32;
            }
        }
    }
    EmbeddingMatrix::new(tweets.len(), dim, data)
}

/// Fallback embeddings for every user of a dataset, in dataset order.
pub fn fallback_store(ds: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(dim)?;
    for u in ds.users() {
        store.insert(u.user_id.clone(), fallback_featurize(&u.tweets, dim, seed)?)?;
    }
    Ok(store)
}

/// Node feature matrix; row `k` belongs to dataset user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMatrix {
    pub matrix: Matrix,
    /// Number of trailing metadata columns (0 when metadata is absent).
    pub aux_cols: usize,
}

impl FusedMatrix {
    pub fn new(matrix: Matrix, aux_cols: usize) -> Result<Self> {
        if aux_cols > matrix.cols() {
            return Err(Error::Dimension {
                expected: matrix.cols(),
                got: aux_cols,
            });
        }
        if !matrix.is_finite() {
            return Err(Error::Data("fused matrix has non-finite values".into()));
        }
        Ok(FusedMatrix { matrix, aux_cols })
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn aux_present(&self) -> bool {
        self.aux_cols > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub pooling: Pooling,
    pub aux_normalize: AuxNormalize,
    /// Metadata columns to keep; ignored for datasets without metadata.
    pub aux_fields: Vec<AuxField>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            pooling: Pooling::Max,
            aux_normalize: AuxNormalize::LogZ,
            aux_fields: AuxField::ALL.to_vec(),
        }
    }
}

/// Where metadata normalization statistics come from.
#[derive(Debug, Clone, Copy)]
pub enum StatsSource<'a> {
    /// Fit on these rows (the training split).
    Fit(&'a [usize]),
    /// Fit on every row.
    FitAll,
    /// Reuse previously fitted statistics.
    Use(&'a NormalizationStats),
}

pub fn build_fused_matrix(
    ds: &Dataset,
    store: &EmbeddingStore,
    opts: &FeatureOptions,
    stats: StatsSource<'_>,
) -> Result<(FusedMatrix, NormalizationStats)> {
    let pooled: Vec<Vec<f64>> = ds
        .users()
        .par_iter()
        .map(|u| {
            let m = store
                .get(&u.user_id)
                .ok_or_else(|| Error::EmptyInput(u.user_id.clone()))?;
            pool_tweets(m, opts.pooling).map_err(|_| Error::EmptyInput(u.user_id.clone()))
        })
        .collect::<Result<_>>()?;

    let use_aux = ds.has_aux() && !opts.aux_fields.is_empty();
    let (aux, stats) = if use_aux {
        let cols: Vec<usize> = opts.aux_fields.iter().map(|f| f.index()).collect();
        let mut raw = Vec::with_capacity(ds.len() * cols.len());
        for u in ds.users() {
            let a = extract_auxiliary(u)?;
            raw.extend(cols.iter().map(|&c| a.0[c]));
        }
        let raw = Matrix::from_vec(ds.len(), cols.len(), raw)?;
        let stats = match stats {
            StatsSource::Use(s) => s.clone(),
            StatsSource::FitAll => {
                let all: Vec<usize> = (0..ds.len()).collect();
                NormalizationStats::fit(&raw, &all, opts.aux_normalize)
            }
            StatsSource::Fit(rows) => NormalizationStats::fit(&raw, rows, opts.aux_normalize),
        };
        (Some(stats.apply(&raw)?), stats)
    } else {
        let stats = NormalizationStats {
            mode: opts.aux_normalize,
            mean: Vec::new(),
            std: Vec::new(),
        };
        (None, stats)
    };

    let dim = store.dim();
    let aux_cols = aux.as_ref().map_or(0, Matrix::cols);
    let mut data = Vec::with_capacity(ds.len() * (dim + aux_cols));
    for (k, v) in pooled.iter().enumerate() {
        data.extend(fuse(v, aux.as_ref().map(|a| a.row(k))));
    }
    let matrix = Matrix::from_vec(ds.len(), dim + aux_cols, data)?;
    Ok((FusedMatrix::new(matrix, aux_cols)?, stats))
}

pub fn write_fused(f: &FusedMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(FUSED_MAGIC)?;
        w.write_all(&FUSED_VERSION.to_le_bytes())?;
        w.write_all(&(f.cols() as u32).to_le_bytes())?;
        w.write_all(&(f.rows() as u64).to_le_bytes())?;
        w.write_all(&[f.aux_cols as u8])?;
        for v in f.matrix.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_fused(path: &Path) -> Result<FusedMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    const HEADER: usize = 4 + 2 + 4 + 8 + 1;
    if bytes.len() < HEADER || &bytes[..4] != FUSED_MAGIC {
        return Err(Error::Format(format!("{} is not an RGBF file", path.display())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FUSED_VERSION {
        return Err(Error::Format(format!("unsupported RGBF version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let aux_cols = bytes[18] as usize;
    let payload = &bytes[HEADER..];
    if payload.len() != n * dim * 8 {
        return Err(Error::Format(format!(
            "RGBF payload has {} bytes, header implies {}",
            payload.len(),
            n * dim * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FusedMatrix::new(Matrix::from_vec(n, dim, data)?, aux_cols)
}
