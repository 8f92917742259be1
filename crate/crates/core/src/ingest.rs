//! Dataset loaders and the binary embedding file (`RGBE`).
//!
//! Three dataset layouts are understood: a JSONL file with one user per
//! line, a Cresci-style directory holding `users.csv` and `tweets.csv`, and a
//! PAN author-profiling directory with one XML file per user plus an optional
//! `truth.txt`. See `docs/formats.md` for the exact schemas.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"RGBE";
pub const EMBEDDING_VERSION: u16 = 1;

/// Ground-truth class. Bot is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "LabelRepr", into = "u8")]
pub enum Label {
    Human = 0,
    Bot = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Human),
            1 => Some(Label::Bot),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "human" | "genuine" => Ok(Label::Human),
            "1" | "bot" => Ok(Label::Bot),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelRepr {
    Int(i64),
    Text(String),
}

impl TryFrom<LabelRepr> for Label {
    type Error = String;

    fn try_from(r: LabelRepr) -> std::result::Result<Self, Self::Error> {
        match r {
            LabelRepr::Int(0) => Ok(Label::Human),
            LabelRepr::Int(1) => Ok(Label::Bot),
            LabelRepr::Int(v) => Err(format!("label must be 0 or 1, got {v}")),
            LabelRepr::Text(s) => s.parse(),
        }
    }
}

/// The four profile counts, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxCounts {
    pub followers: u64,
    pub friends: u64,
    pub statuses: u64,
    pub favorites: u64,
}

impl AuxCounts {
    pub fn as_array(&self) -> [u64; 4] {
        [self.followers, self.friends, self.statuses, self.favorites]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub tweets: Vec<String>,
    #[serde(default)]
    pub aux: Option<AuxCounts>,
    #[serde(default)]
    pub label: Option<Label>,
}

/// An ordered collection of users. Position in `users` is the node index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    users: Vec<UserRecord>,
    has_aux: bool,
    has_labels: bool,
}

impl Dataset {
    /// Checks id uniqueness and all-or-none metadata presence.
    pub fn new(name: impl Into<String>, users: Vec<UserRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(users.len());
        for u in &users {
            if u.user_id.is_empty() {
                return Err(Error::Data("empty user id".into()));
            }
            if !seen.insert(u.user_id.as_str()) {
                return Err(Error::DuplicateUser(u.user_id.clone()));
            }
        }
        let with_aux = users.iter().filter(|u| u.aux.is_some()).count();
        if with_aux != 0 && with_aux != users.len() {
            let first = users.iter().find(|u| u.aux.is_none()).unwrap();
            return Err(Error::MixedAux(first.user_id.clone()));
        }
        let has_aux = !users.is_empty() && with_aux == users.len();
        let has_labels = !users.is_empty() && users.iter().all(|u| u.label.is_some());
        Ok(Dataset {
            name: name.into(),
            users,
            has_aux,
            has_labels,
        })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn has_aux(&self) -> bool {
        self.has_aux
    }

    pub fn has_labels(&self) -> bool {
        self.has_labels
    }

    /// Labels in node order; fails naming the first unlabeled user.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.users
            .iter()
            .map(|u| u.label.ok_or_else(|| Error::Unlabeled(u.user_id.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    CresciCsv,
    PanXmlDir,
    #[default]
    Jsonl,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cresci-csv" => Ok(DatasetFormat::CresciCsv),
            "pan-xml-dir" => Ok(DatasetFormat::PanXmlDir),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown dataset format `{other}` (expected cresci-csv, pan-xml-dir or jsonl)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::CresciCsv => "cresci-csv",
            DatasetFormat::PanXmlDir => "pan-xml-dir",
            DatasetFormat::Jsonl => "jsonl",
        })
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let users = match format {
        DatasetFormat::Jsonl => load_jsonl(path)?,
        DatasetFormat::CresciCsv => load_cresci(path)?,
        DatasetFormat::PanXmlDir => load_pan(path)?,
    };
    Dataset::new(name, users)
}

fn load_jsonl(path: &Path) -> Result<Vec<UserRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut users = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let user: UserRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), lineno + 1), e))?;
        users.push(user);
    }
    Ok(users)
}

const COUNT_COLUMNS: [&str; 4] = [
    "followers_count",
    "friends_count",
    "statuses_count",
    "favourites_count",
];

fn load_cresci(dir: &Path) -> Result<Vec<UserRecord>> {
    let users_path = dir.join("users.csv");
    let tweets_path = dir.join("tweets.csv");

    let mut reader = csv::Reader::from_path(&users_path).map_err(|e| csv_error(&users_path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(&users_path, e))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = column("user_id").or_else(|| column("id")).ok_or_else(|| {
        Error::parse(users_path.display().to_string(), "missing `user_id` column")
    })?;
    let count_cols: Vec<Option<usize>> = COUNT_COLUMNS.iter().map(|c| column(c)).collect();
    let present = count_cols.iter().filter(|c| c.is_some()).count();
    if present != 0 && present != 4 {
        return Err(Error::parse(
            users_path.display().to_string(),
            format!("expected all or none of {COUNT_COLUMNS:?}"),
        ));
    }
    let label_col = column("label");

    let mut users = Vec::new();
    let mut index = HashMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(&users_path, e))?;
        let location = format!("{}:{}", users_path.display(), row + 2);
        let user_id = rec.get(id_col).unwrap_or("").trim().to_string();
        let aux = if present == 4 {
            let mut vals = [None; 4];
            for (slot, col) in vals.iter_mut().zip(&count_cols) {
                let cell = rec.get(col.unwrap()).unwrap_or("").trim();
                if !cell.is_empty() {
                    *slot = Some(parse_count(cell).map_err(|m| Error::parse(&location, m))?);
                }
            }
            match vals {
                [Some(a), Some(b), Some(c), Some(d)] => Some(AuxCounts {
                    followers: a,
                    friends: b,
                    statuses: c,
                    favorites: d,
                }),
                [None, None, None, None] => None,
                _ => {
                    return Err(Error::parse(
                        &location,
                        format!("user `{user_id}` has partially missing counts"),
                    ))
                }
            }
        } else {
            None
        };
        let label = match label_col.and_then(|c| rec.get(c)).map(str::trim) {
            Some("") | None => None,
            Some(s) => Some(s.parse::<Label>().map_err(|m| Error::parse(&location, m))?),
        };
        if index.insert(user_id.clone(), users.len()).is_some() {
            return Err(Error::DuplicateUser(user_id));
        }
        users.push(UserRecord {
            user_id,
            tweets: Vec::new(),
            aux,
            label,
        });
    }

    if tweets_path.exists() {
        let mut reader =
            csv::Reader::from_path(&tweets_path).map_err(|e| csv_error(&tweets_path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_error(&tweets_path, e))?
            .clone();
        let column = |name: &str| headers.iter().position(|h| h.trim() == name);
        let uid_col = column("user_id").ok_or_else(|| {
            Error::parse(tweets_path.display().to_string(), "missing `user_id` column")
        })?;
        let text_col = column("text").ok_or_else(|| {
            Error::parse(tweets_path.display().to_string(), "missing `text` column")
        })?;
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&tweets_path, e))?;
            let uid = rec.get(uid_col).unwrap_or("").trim();
            let Some(&k) = index.get(uid) else {
                return Err(Error::parse(
                    format!("{}:{}", tweets_path.display(), row + 2),
                    format!("tweet for unknown user `{uid}`"),
                ));
            };
            users[k].tweets.push(rec.get(text_col).unwrap_or("").to_string());
        }
    }
    Ok(users)
}

fn parse_count(cell: &str) -> std::result::Result<u64, String> {
    cell.parse::<u64>()
        .or_else(|_| {
            // some exports write counts as floats ("12.0")
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0 && v.fract() == 0.0)
                .map(|v| v as u64)
                .ok_or(())
        })
        .map_err(|_| format!("invalid count `{cell}`"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = match e.position() {
        Some(p) => format!("{}:{}", path.display(), p.line()),
        None => path.display().to_string(),
    };
    Error::parse(location, e)
}

fn load_pan(dir: &Path) -> Result<Vec<UserRecord>> {
    let truth_path = dir.join("truth.txt");
    let mut order: Vec<(String, Option<Label>)> = Vec::new();
    if truth_path.exists() {
        let text = std::fs::read_to_string(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(":::");
            let (Some(id), Some(kind)) = (parts.next(), parts.next()) else {
                return Err(Error::parse(
                    format!("{}:{}", truth_path.display(), lineno + 1),
                    "expected `id:::bot|human:::...`",
                ));
            };
            let label = kind.parse::<Label>().map_err(|m| {
                Error::parse(format!("{}:{}", truth_path.display(), lineno + 1), m)
            })?;
            order.push((id.trim().to_string(), Some(label)));
        }
    }

    let mut xml_files: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| {
            let p = entry.path();
            (p.extension().is_some_and(|e| e == "xml"))
                .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .flatten()
        })
        .collect();
    xml_files.sort();

    if order.is_empty() {
        order = xml_files.iter().map(|id| (id.clone(), None)).collect();
    } else {
        let listed: HashSet<&str> = order.iter().map(|(id, _)| id.as_str()).collect();
        if let Some(extra) = xml_files.iter().find(|f| !listed.contains(f.as_str())) {
            return Err(Error::parse(
                truth_path.display().to_string(),
                format!("`{extra}.xml` has no truth entry"),
            ));
        }
    }

    order
        .into_iter()
        .map(|(user_id, label)| {
            let path = dir.join(format!("{user_id}.xml"));
            let tweets = read_pan_documents(&path)?;
            Ok(UserRecord {
                user_id,
                tweets,
                aux: None,
                label,
            })
        })
        .collect()
}

fn read_pan_documents(path: &Path) -> Result<Vec<String>> {
    use quick_xml::events::Event;

    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = quick_xml::Reader::from_str(&text);
    let mut docs = Vec::new();
    let mut current: Option<String> = None;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        match event {
            Event::Start(e) if e.name().as_ref() == b"document" => current = Some(String::new()),
            Event::End(e) if e.name().as_ref() == b"document" => {
                if let Some(doc) = current.take() {
                    docs.push(doc);
                }
            }
            Event::Empty(e) if e.name().as_ref() == b"document" => docs.push(String::new()),
            Event::Text(t) => {
                if let Some(doc) = current.as_mut() {
                    let s = t
                        .unescape()
                        .map_err(|e| Error::parse(path.display().to_string(), e))?;
                    doc.push_str(&s);
                }
            }
            Event::CData(t) => {
                if let Some(doc) = current.as_mut() {
                    doc.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(docs)
}

/// Row-major `rows × dim` block of tweet embeddings for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Dimension {
                expected: rows * dim,
                got: data.len(),
            });
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        EmbeddingMatrix {
            rows: 0,
            dim,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }
}

/// Per-user tweet embeddings keyed by user id, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, EmbeddingMatrix>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dim must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds or replaces a user's matrix.
    pub fn insert(&mut self, user_id: impl Into<String>, m: EmbeddingMatrix) -> Result<()> {
        if m.dim != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: m.dim,
            });
        }
        if let Some(v) = m.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding value {v}")));
        }
        self.entries.insert(user_id.into(), m);
        Ok(())
    }

    pub fn get(&self, user_id: &str) -> Option<&EmbeddingMatrix> {
        self.entries.get(user_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingMatrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_embeddings(store, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_embeddings<W: Write>(store: &EmbeddingStore, w: &mut W) -> std::io::Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&(store.entries.len() as u64).to_le_bytes())?;
    for (id, m) in &store.entries {
        let bytes = id.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "user id longer than 65535 bytes")
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(BufReader::new(file))
}

pub fn decode_embeddings<R: Read>(mut r: R) -> Result<EmbeddingStore> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected RGBE")));
    }
    let version = u16::from_le_bytes(read_array(&mut r, "version")?);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array(&mut r, "dim")?) as usize;
    let count = u64::from_le_bytes(read_array(&mut r, "user count")?);
    let mut store = EmbeddingStore::new(dim)?;
    for _ in 0..count {
        let id_len = u16::from_le_bytes(read_array(&mut r, "id length")?) as usize;
        let mut id = vec![0u8; id_len];
        read_exact(&mut r, &mut id, "user id")?;
        let id = String::from_utf8(id).map_err(|_| Error::Format("user id is not UTF-8".into()))?;
        let rows = u32::from_le_bytes(read_array(&mut r, "row count")?) as usize;
        let mut raw = vec![0u8; rows * dim * 4];
        read_exact(&mut r, &mut raw, "embedding payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("user `{id}` has non-finite value {v}")));
        }
        if store.entries.contains_key(&id) {
            return Err(Error::DuplicateUser(id));
        }
        store.entries.insert(id, EmbeddingMatrix { rows, dim, data });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io("<embeddings>", e))? != 0 {
        return Err(Error::Format("trailing bytes after last user".into()));
    }
    Ok(store)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file reading {what}")),
        _ => Error::io("<embeddings>", e),
    })
}

fn read_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, what)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub dim: usize,
    pub users: usize,
    pub missing: Vec<String>,
    pub zero_tweet: Vec<String>,
}

pub fn validate_dataset(ds: &Dataset, store: &EmbeddingStore) -> ValidationReport {
    let mut missing = Vec::new();
    let mut zero_tweet = Vec::new();
    for u in ds.users() {
        match store.get(&u.user_id) {
            None => missing.push(u.user_id.clone()),
            Some(m) if m.rows() == 0 => zero_tweet.push(u.user_id.clone()),
            Some(_) => {}
        }
    }
    ValidationReport {
        ok: missing.is_empty() && zero_tweet.is_empty(),
        dim: store.dim(),
        users: ds.len(),
        missing,
        zero_tweet,
    }
}
