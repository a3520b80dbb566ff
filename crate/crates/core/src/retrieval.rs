//! Zero-exemplar retrieval: embed queries and videos, rank by distance in the
//! learned space, and score rankings with TRECVID-style AP / mAP.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::euclidean_distance;
use crate::nn::batch_from_rows;
use crate::trainer::{TextEmbedding, TrainedModel, Variant};

/// Distance used to order videos for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMetric {
    Euclidean,
    /// `1 - cos(a, b)`; zero vectors have cosine 0.
    Cosine,
}

impl RankMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            RankMetric::Euclidean => euclidean_distance(a, b),
            RankMetric::Cosine => Ok(1.0 - cosine(a, b)?),
        }
    }
}

/// The metric each variant ranks with: learned-metric variants use Euclidean
/// distance, the non-metric baselines `S` and `N` use cosine distance.
pub fn default_metric(variant: Variant) -> RankMetric {
    match variant {
        Variant::U | Variant::V | Variant::C => RankMetric::Euclidean,
        Variant::S | Variant::N => RankMetric::Cosine,
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Embeds topic vectors (rows) into the shared space. Variants without a
/// text tower use the topic vector itself.
pub fn embed_texts(model: &TrainedModel, topics: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (_, d_t, _) = model.config.dims()?;
    if let Some(bad) = topics.iter().find(|t| t.len() != d_t) {
        return Err(Error::shape(format!("topic vector of length {}, model expects {d_t}", bad.len())));
    }
    let Some(text) = &model.towers.text else {
        return Ok(topics.to_vec());
    };
    if topics.is_empty() {
        return Ok(Vec::new());
    }
    let (probs, trace) = text.forward(&batch_from_rows(topics)?)?;
    let out = match model.config.text_embedding {
        TextEmbedding::Softmax => probs,
        TextEmbedding::Logits => trace.pre_output,
    };
    Ok(matrix_rows(&out))
}

pub fn embed_text(model: &TrainedModel, topic: &[f64]) -> Result<Vec<f64>> {
    Ok(embed_texts(model, &[topic.to_vec()])?.remove(0))
}

pub fn embed_videos(model: &TrainedModel, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (d_v, _, _) = model.config.dims()?;
    if let Some(bad) = features.iter().find(|f| f.len() != d_v) {
        return Err(Error::shape(format!("video feature of length {}, model expects {d_v}", bad.len())));
    }
    if features.is_empty() {
        return Ok(Vec::new());
    }
    Ok(matrix_rows(&model.towers.video.apply(&batch_from_rows(features)?)?))
}

pub fn embed_video(model: &TrainedModel, feature: &[f64]) -> Result<Vec<f64>> {
    Ok(embed_videos(model, &[feature.to_vec()])?.remove(0))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Videos ordered by ascending distance to one query; ties broken by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn relevance_flags(&self, relevant: &BTreeSet<String>) -> Vec<bool> {
        self.entries.iter().map(|(id, _)| relevant.contains(id)).collect()
    }
}

/// Ranks precomputed video embeddings against a query embedding.
pub fn rank_embeddings(query_id: &str, query: &[f64], videos: &[(String, Vec<f64>)], metric: RankMetric) -> Result<RankedList> {
    if videos.is_empty() {
        return Err(Error::invalid("no videos to rank"));
    }
    let mut entries = videos
        .iter()
        .map(|(id, emb)| Ok((id.clone(), metric.distance(query, emb)?)))
        .collect::<Result<Vec<_>>>()?;
    if entries.iter().any(|(_, d)| !d.is_finite()) {
        return Err(Error::Numeric(format!("non-finite distance for query {query_id}")));
    }
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut seen = BTreeSet::new();
    if let Some((dup, _)) = entries.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(Error::DuplicateVideo(dup.clone()));
    }
    Ok(RankedList { query_id: query_id.to_string(), entries })
}

/// Embeds a query topic vector and the pooled video features, then ranks.
pub fn rank_videos(model: &TrainedModel, query_id: &str, query_topic: &[f64], videos: &[(String, Vec<f64>)]) -> Result<RankedList> {
    if videos.is_empty() {
        return Err(Error::invalid("no videos to rank"));
    }
    let query = embed_text(model, query_topic)?;
    let feats: Vec<Vec<f64>> = videos.iter().map(|(_, f)| f.clone()).collect();
    let embedded: Vec<(String, Vec<f64>)> =
        videos.iter().map(|(id, _)| id.clone()).zip(embed_videos(model, &feats)?).collect();
    rank_embeddings(query_id, &query, &embedded, default_metric(model.variant()))
}

/// `AP = (1/R) * sum over relevant ranks k of precision@k`, where `R` counts
/// every relevant item including those never retrieved.
pub fn average_precision(flags: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::invalid("average precision needs at least one relevant item"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits > total_relevant {
        return Err(Error::invalid(format!("{hits} relevant flags but only {total_relevant} relevant items")));
    }
    Ok(sum / total_relevant as f64)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("mean AP over zero events"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query_id: String,
    pub ap: f64,
    pub relevant: usize,
    pub retrieved: usize,
    pub relevant_retrieved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_event: Vec<QueryAp>,
    pub map: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,ap,relevant,retrieved,relevant_retrieved\n");
        for q in &self.per_event {
            out.push_str(&format!("{},{},{},{},{}\n", q.query_id, q.ap, q.relevant, q.retrieved, q.relevant_retrieved));
        }
        out
    }
}

/// Scores each ranking against its ground-truth set. Every ranked query must
/// have truth with at least one relevant video.
pub fn evaluate(rankings: &[RankedList], truth: &BTreeMap<String, BTreeSet<String>>) -> Result<EvalReport> {
    let mut per_event = Vec::with_capacity(rankings.len());
    for r in rankings {
        let relevant = truth
            .get(&r.query_id)
            .ok_or_else(|| Error::invalid(format!("no ground truth for query {}", r.query_id)))?;
        let flags = r.relevance_flags(relevant);
        per_event.push(QueryAp {
            query_id: r.query_id.clone(),
            ap: average_precision(&flags, relevant.len())?,
            relevant: relevant.len(),
            retrieved: flags.len(),
            relevant_retrieved: flags.iter().filter(|&&f| f).count(),
        });
    }
    let map = mean_ap(&per_event.iter().map(|q| q.ap).collect::<Vec<_>>())?;
    Ok(EvalReport { per_event, map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Cosine,
    NegEuclidean,
}

/// `|A| x |B|` similarities between embedding rows.
pub fn similarity_matrix(a: &[Vec<f64>], b: &[Vec<f64>], metric: SimilarityMetric) -> Result<DMatrix<f64>> {
    let dim = a.first().or(b.first()).map_or(0, Vec::len);
    if a.iter().chain(b).any(|r| r.len() != dim) {
        return Err(Error::shape("embedding rows differ in dimension"));
    }
    let mut out = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[(i, j)] = match metric {
                SimilarityMetric::Cosine => cosine(x, y)?,
                SimilarityMetric::NegEuclidean => -euclidean_distance(x, y)?,
            };
        }
    }
    Ok(out)
}

/// Mean of the diagonal minus mean of the off-diagonal entries of a square matrix.
pub fn diagonal_dominance(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n != m.ncols() || n < 2 {
        return Err(Error::shape("diagonal dominance needs a square matrix of size at least 2"));
    }
    let diag: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let off = m.sum() - diag;
    Ok(diag / n as f64 - off / (n * (n - 1)) as f64)
}
