//! Exact cosine retrieval, ranking metrics and the PCA baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::ReferenceSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize_rows_strict, matmul, matmul_nt, norm, sym_eig, Matrix};

/// Unit-normalized reference vectors and their external ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    vectors: Matrix,
    ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: usize,
    pub similarity: f64,
}

pub fn build_index(embeddings: &Matrix, ids: Vec<usize>) -> Result<ReferenceIndex> {
    if ids.len() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "{} ids for {} reference rows",
            ids.len(),
            embeddings.rows()
        )));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::Precondition(format!("duplicate reference id {dup}")));
    }
    Ok(ReferenceIndex {
        vectors: l2_normalize_rows_strict(embeddings)?,
        ids,
    })
}

impl ReferenceIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// The `k` most cosine-similar references, most similar first. Equal
    /// similarities are ordered by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if query.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query has {} dims, index has {}",
                query.len(),
                self.dim()
            )));
        }
        if k > self.len() {
            return Err(Error::Precondition(format!(
                "k = {k} exceeds the {} indexed references",
                self.len()
            )));
        }
        let n = norm(query);
        if n == 0.0 {
            return Err(Error::Precondition("zero query vector".into()));
        }
        let q: Vec<f64> = query.iter().map(|v| v / n).collect();
        let mut hits: Vec<Hit> = self
            .vectors
            .row_iter()
            .zip(&self.ids)
            .map(|(row, &id)| Hit {
                id,
                similarity: dot(&q, row),
            })
            .collect();
        let order = |a: &Hit, b: &Hit| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id));
        if k < hits.len() && k > 0 {
            hits.select_nth_unstable_by(k - 1, order);
        }
        hits.truncate(k);
        hits.sort_by(order);
        Ok(hits)
    }

    /// Ranked reference ids for every query row, keyed by `query_ids`.
    pub fn search_all(&self, queries: &Matrix, query_ids: &[usize], k: usize) -> Result<Rankings> {
        if query_ids.len() != queries.rows() {
            return Err(Error::Shape(format!(
                "{} query ids for {} query rows",
                query_ids.len(),
                queries.rows()
            )));
        }
        let lists: Vec<Vec<usize>> = (0..queries.rows())
            .into_par_iter()
            .map(|r| {
                self.search(queries.row(r), k)
                    .map(|hits| hits.into_iter().map(|h| h.id).collect())
            })
            .collect::<Result<_>>()?;
        Ok(query_ids.iter().copied().zip(lists).collect())
    }
}

/// Query id → reference ids, best first.
pub type Rankings = BTreeMap<usize, Vec<usize>>;

/// Relevant reference ids for each query.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth(BTreeMap<usize, BTreeSet<usize>>);

impl GroundTruth {
    pub fn new(relevant: BTreeMap<usize, BTreeSet<usize>>, index: &ReferenceIndex) -> Result<Self> {
        let known: BTreeSet<usize> = index.ids().iter().copied().collect();
        for (q, rel) in &relevant {
            if rel.is_empty() {
                return Err(Error::Precondition(format!("query {q} has no relevant items")));
            }
            if let Some(missing) = rel.iter().find(|id| !known.contains(id)) {
                return Err(Error::Precondition(format!(
                    "query {q} refers to unknown reference id {missing}"
                )));
            }
        }
        Ok(Self(relevant))
    }

    /// Relevance by shared class label.
    pub fn from_labels(
        query_ids: &[usize],
        query_labels: &[u32],
        index: &ReferenceIndex,
        reference_labels: &[u32],
    ) -> Result<Self> {
        if query_ids.len() != query_labels.len() || reference_labels.len() != index.len() {
            return Err(Error::Shape("label counts do not match ids".into()));
        }
        let mut by_label: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for (&id, &label) in index.ids().iter().zip(reference_labels) {
            by_label.entry(label).or_default().insert(id);
        }
        let relevant = query_ids
            .iter()
            .zip(query_labels)
            .map(|(&q, l)| (q, by_label.get(l).cloned().unwrap_or_default()))
            .collect();
        Self::new(relevant, index)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&usize, &BTreeSet<usize>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn ranked(rankings: &Rankings, q: usize) -> Result<&[usize]> {
    rankings
        .get(&q)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Precondition(format!("query {q} missing from rankings")))
}

/// Mean over queries of
/// `AP@k = (1 / min(k, |rel|)) · Σ_{i ≤ k} Precision@i · rel(i)`.
pub fn map_at_k(rankings: &Rankings, truth: &GroundTruth, k: usize) -> Result<f64> {
    if truth.is_empty() || k == 0 {
        return Err(Error::Precondition("need queries and k ≥ 1".into()));
    }
    let mut total = 0.0;
    for (&q, rel) in truth.queries() {
        let list = ranked(rankings, q)?;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (i, id) in list.iter().take(k).enumerate() {
            if rel.contains(id) {
                hits += 1;
                ap += hits as f64 / (i + 1) as f64;
            }
        }
        total += ap / k.min(rel.len()) as f64;
    }
    Ok(total / truth.len() as f64)
}

/// Fraction of queries with at least one relevant item in the top `k`.
pub fn recall_at_k(rankings: &Rankings, truth: &GroundTruth, k: usize) -> Result<f64> {
    if truth.is_empty() || k == 0 {
        return Err(Error::Precondition("need queries and k ≥ 1".into()));
    }
    let mut found = 0usize;
    for (&q, rel) in truth.queries() {
        if ranked(rankings, q)?.iter().take(k).any(|id| rel.contains(id)) {
            found += 1;
        }
    }
    Ok(found as f64 / truth.len() as f64)
}

/// Multiply-adds counted as two operations each: `2 · d · N`.
pub fn flops_per_query(dim: usize, references: usize) -> u64 {
    2 * dim as u64 * references as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAtK {
    pub k: usize,
    pub map: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub method: String,
    pub dim: usize,
    pub references: usize,
    pub queries: usize,
    pub flops_per_query: u64,
    pub metrics: Vec<MetricAtK>,
}

pub const REPORT_CSV_HEADER: &str = "method,dim,k,map,recall,flops_per_query";

impl RetrievalReport {
    pub fn metric(&self, k: usize) -> Option<&MetricAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    /// One CSV row per k, without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.method, self.dim, m.k, m.map, m.recall, self.flops_per_query
            )
            .expect("string write");
        }
        out
    }
}

/// Labeled retrieval run: index the references, rank every query, score.
pub fn evaluate(
    method: &str,
    references: &Matrix,
    reference_labels: &[u32],
    queries: &Matrix,
    query_labels: &[u32],
    ks: &[usize],
) -> Result<RetrievalReport> {
    let max_k = ks.iter().copied().max().ok_or_else(|| Error::Config("no k values".into()))?;
    let index = build_index(references, (0..references.rows()).collect())?;
    let query_ids: Vec<usize> = (0..queries.rows()).collect();
    let truth = GroundTruth::from_labels(&query_ids, query_labels, &index, reference_labels)?;
    let rankings = index.search_all(queries, &query_ids, max_k.min(index.len()))?;
    let metrics = ks
        .iter()
        .map(|&k| {
            Ok(MetricAtK {
                k,
                map: map_at_k(&rankings, &truth, k)?,
                recall: recall_at_k(&rankings, &truth, k)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RetrievalReport {
        method: method.to_string(),
        dim: references.cols(),
        references: references.rows(),
        queries: queries.rows(),
        flops_per_query: flops_per_query(references.cols(), references.rows()),
        metrics,
    })
}

/// Mean and leading principal axes (columns of `components`, `d × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    pub components: Matrix,
    /// Covariance eigenvalues of the kept components, descending.
    pub explained_variance: Vec<f64>,
}

impl PcaProjection {
    pub fn out_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "data has {} columns, projection expects {}",
                data.cols(),
                self.mean.len()
            )));
        }
        matmul(&data.center(&self.mean), &self.components)
    }

    pub fn inverse_transform(&self, projected: &Matrix) -> Result<Matrix> {
        let mut back = matmul_nt(projected, &self.components)?;
        for r in 0..back.rows() {
            for (v, m) in back.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(back)
    }
}

/// Principal components of the `1/n` covariance. Each component is signed so
/// its largest-magnitude entry (first on ties) is positive.
pub fn pca_fit(data: &ReferenceSet, out_dim: usize) -> Result<PcaProjection> {
    let x = data.embeddings();
    if x.rows() < 2 {
        return Err(Error::Precondition("PCA needs at least 2 rows".into()));
    }
    if out_dim == 0 || out_dim > x.cols() {
        return Err(Error::Precondition(format!(
            "out_dim must be in 1..={}, got {out_dim}",
            x.cols()
        )));
    }
    let (mean, cov) = x.covariance();
    let eig = sym_eig(&cov)?;
    let d = x.cols();
    let mut components = Matrix::zeros(d, out_dim);
    for c in 0..out_dim {
        let col = eig.vectors.column(c);
        let pivot = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            components.set(r, c, sign * v);
        }
    }
    Ok(PcaProjection {
        mean,
        components,
        explained_variance: eig.values[..out_dim].to_vec(),
    })
}
