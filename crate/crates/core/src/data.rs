//! Synthetic labeled embeddings and the embedding interchange formats.
//!
//! # Binary format (`.emb`)
//!
//! ```text
//! offset  size      field
//! 0       4         magic "EMBV"
//! 4       2         version, u16 LE (= 1)
//! 6       2         flags, u16 LE; bit 0 = labels present, other bits zero
//! 8       8         N (rows), u64 LE
//! 16      4         d (columns), u32 LE
//! 20      4·N·d     payload, f32 LE, row-major
//! …       4·N       labels, u32 LE (only when flag bit 0 is set)
//! ```
//!
//! Computation is `f64` throughout; values are narrowed to `f32` on write.
//!
//! # CSV format
//!
//! A header row `dim_0,…,dim_{d-1}` (plus `,label` when labels are present),
//! then one row per embedding. Values are printed as the shortest decimal
//! that round-trips the stored `f32`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::ByteReader;
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Embeddings that may be used for fitting. Training entry points accept
/// only this type, so query vectors have to be wrapped on purpose to reach
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet(Matrix);

impl ReferenceSet {
    pub fn new(embeddings: Matrix) -> Self {
        Self(embeddings)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Parameters of a class-structured Gaussian dataset.
///
/// Columns are laid out nuisance first, then discriminative. Every point is
/// its class mean plus zero-mean Gaussian noise whose per-column variance is
/// the concatenated spectrum. Class means are zero on nuisance columns; on
/// discriminative column `j` they are drawn as
/// `class_separation · √discriminative_spectrum[j] · N(0, 1)`, so the
/// separation is measured in units of within-class standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub points_per_class: usize,
    pub class_separation: f64,
    pub nuisance_spectrum: Vec<f64>,
    pub discriminative_spectrum: Vec<f64>,
    /// Fraction of every class assigned to the query split.
    pub query_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 32 classes × 64 points in 64 dimensions: 56 nuisance columns with
    /// variance `1/i` and 8 discriminative columns with variance 0.05.
    pub fn acceptance(seed: u64) -> Self {
        Self {
            num_classes: 32,
            points_per_class: 64,
            class_separation: 1.0,
            nuisance_spectrum: (1..=56).map(|i| 1.0 / i as f64).collect(),
            discriminative_spectrum: vec![0.05; 8],
            query_fraction: 0.25,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.nuisance_spectrum.len() + self.discriminative_spectrum.len()
    }

    pub fn spectrum(&self) -> Vec<f64> {
        [
            self.nuisance_spectrum.as_slice(),
            self.discriminative_spectrum.as_slice(),
        ]
        .concat()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.points_per_class == 0 {
            return Err(Error::Config("need at least one class and one point".into()));
        }
        if self.dim() == 0 {
            return Err(Error::Config("spectra are both empty".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if self.spectrum().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("spectrum entries must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.query_fraction) {
            return Err(Error::Config("query_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub embeddings: Matrix,
    pub labels: Vec<u32>,
    /// `true` for query rows, `false` for reference rows.
    pub is_query: Vec<bool>,
}

/// Rows of one split together with their labels and original row numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub embeddings: Matrix,
    pub labels: Vec<u32>,
    pub rows: Vec<usize>,
}

impl LabeledEmbeddings {
    fn split(&self, want_query: bool) -> Split {
        let rows: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.is_query[i] == want_query)
            .collect();
        Split {
            embeddings: self.embeddings.select_rows(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            rows,
        }
    }

    pub fn queries(&self) -> Split {
        self.split(true)
    }

    pub fn references(&self) -> Split {
        self.split(false)
    }

    pub fn reference_set(&self) -> ReferenceSet {
        ReferenceSet::new(self.references().embeddings)
    }
}

/// Draws a dataset from `spec`. Rows are grouped by class; the query split
/// takes `round(points_per_class · query_fraction)` random points of every
/// class.
pub fn generate(spec: &SynthSpec) -> Result<LabeledEmbeddings> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut mean_rng = root.split(0);
    let mut noise_rng = root.split(1);
    let mut split_rng = root.split(2);

    let d = spec.dim();
    let nuisance = spec.nuisance_spectrum.len();
    let std: Vec<f64> = spec.spectrum().iter().map(|v| v.sqrt()).collect();

    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let mut m = vec![0.0; d];
            for j in nuisance..d {
                m[j] = spec.class_separation * std[j] * mean_rng.normal();
            }
            m
        })
        .collect();

    let n = spec.num_classes * spec.points_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.points_per_class {
            for j in 0..d {
                data.push(mean[j] + std[j] * noise_rng.normal());
            }
            labels.push(c as u32);
        }
    }

    let per_class_queries =
        (spec.points_per_class as f64 * spec.query_fraction).round() as usize;
    let mut is_query = vec![false; n];
    for c in 0..spec.num_classes {
        let base = c * spec.points_per_class;
        let order = split_rng.permutation(spec.points_per_class);
        for &i in &order[..per_class_queries] {
            is_query[base + i] = true;
        }
    }

    Ok(LabeledEmbeddings {
        embeddings: Matrix::from_vec(n, d, data)?,
        labels,
        is_query,
    })
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBV";
pub const EMBEDDING_VERSION: u16 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 20;
const FLAG_LABELS: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub embeddings: Matrix,
    pub labels: Option<Vec<u32>>,
}

fn check_labels(m: &Matrix, labels: Option<&[u32]>) -> Result<()> {
    match labels {
        Some(l) if l.len() != m.rows() => Err(Error::Shape(format!(
            "{} labels for {} rows",
            l.len(),
            m.rows()
        ))),
        _ => Ok(()),
    }
}

fn narrow(v: f64, pos: usize, cols: usize) -> Result<f32> {
    let x = v as f32;
    if !x.is_finite() {
        return Err(Error::Numeric(format!(
            "value at ({}, {}) is not representable as f32",
            pos / cols.max(1),
            pos % cols.max(1)
        )));
    }
    Ok(x)
}

pub fn encode_embeddings(m: &Matrix, labels: Option<&[u32]>) -> Result<Vec<u8>> {
    check_labels(m, labels)?;
    let (n, d) = m.shape();
    let d32 = u32::try_from(d).map_err(|_| Error::Shape("dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * n * d + 4 * n);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    let flags = if labels.is_some() { FLAG_LABELS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for (pos, &v) in m.as_slice().iter().enumerate() {
        out.extend_from_slice(&narrow(v, pos, d)?.to_le_bytes());
    }
    if let Some(labels) = labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != EMBEDDING_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"EMBV\""));
    }
    let version = r.u16()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let flags = r.u16()?;
    if flags & !FLAG_LABELS != 0 {
        return Err(Error::format(6, format!("unknown flag bits {flags:#06x}")));
    }
    let n = r.u64()?;
    let d = r.u32()? as usize;
    let n = usize::try_from(n).map_err(|_| Error::format(8, "row count too large"))?;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::format(8, "row count × dimension overflows"))?;
    let payload_at = r.offset();
    let payload = r.f32_vec(count)?;
    if let Some(pos) = payload.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            payload_at + 4 * pos as u64,
            "non-finite value in payload",
        ));
    }
    let labels = if flags & FLAG_LABELS != 0 {
        Some(r.u32_vec(n)?)
    } else {
        None
    };
    if !r.is_empty() {
        return Err(Error::format(r.offset(), "trailing bytes"));
    }
    let embeddings = Matrix::from_vec(n, d, payload.into_iter().map(f64::from).collect())?;
    Ok(EmbeddingFile { embeddings, labels })
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &Matrix, labels: Option<&[u32]>) -> Result<()> {
    std::fs::write(path, encode_embeddings(m, labels)?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    decode_embeddings(&std::fs::read(path)?)
}

pub fn encode_embeddings_csv(m: &Matrix, labels: Option<&[u32]>) -> Result<String> {
    check_labels(m, labels)?;
    let d = m.cols();
    let mut out = String::new();
    let header: Vec<String> = (0..d).map(|j| format!("dim_{j}")).collect();
    out.push_str(&header.join(","));
    if labels.is_some() {
        out.push_str(if d > 0 { ",label" } else { "label" });
    }
    out.push('\n');
    for (r, row) in m.row_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", narrow(v, r * d + j, d)?).expect("string write");
        }
        if let Some(l) = labels {
            if d > 0 {
                out.push(',');
            }
            write!(out, "{}", l[r]).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_embeddings_csv(text: &str) -> Result<EmbeddingFile> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let header = lines
        .next()
        .ok_or_else(|| Error::format(0, "missing header row"))?;
    let names: Vec<&str> = header.trim_end_matches(['\n', '\r']).split(',').collect();
    let has_labels = names.last() == Some(&"label");
    let d = names.len() - usize::from(has_labels);
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("dim_{j}") {
            return Err(Error::format(0, format!("unexpected header column {name:?}")));
        }
    }
    offset += header.len() as u64;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for line in lines {
        let body = line.trim_end_matches(['\n', '\r']);
        if body.is_empty() {
            offset += line.len() as u64;
            continue;
        }
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::format(
                offset,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        for f in &fields[..d] {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::format(offset, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(offset, "non-finite value"));
            }
            data.push(f64::from(v));
        }
        if has_labels {
            let f = fields[d];
            labels.push(
                f.parse::<u32>()
                    .map_err(|_| Error::format(offset, format!("bad label {f:?}")))?,
            );
        }
        rows += 1;
        offset += line.len() as u64;
    }
    Ok(EmbeddingFile {
        embeddings: Matrix::from_vec(rows, d, data)?,
        labels: has_labels.then_some(labels),
    })
}

pub fn write_embeddings_csv(
    path: impl AsRef<Path>,
    m: &Matrix,
    labels: Option<&[u32]>,
) -> Result<()> {
    std::fs::write(path, encode_embeddings_csv(m, labels)?)?;
    Ok(())
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    decode_embeddings_csv(&std::fs::read_to_string(path)?)
}
