use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use zed_core::io::{load_manifest, load_video_feature, write_feature_file, write_manifest, FeatureMatrix, Manifest};
use zed_core::lsi::{fit_lsi_with, TopicModel, DEFAULT_POWER_ITERS, DEFAULT_TOPICS};
use zed_core::pruner::{prune_dataset, PruneConfig};
use zed_core::retrieval::{
    default_metric, diagonal_dominance, embed_texts, embed_videos, evaluate, rank_embeddings, similarity_matrix, RankedList,
    SimilarityMetric,
};
use zed_core::text::{build_vocab, tfidf_vectorize, Tokenizer};
use zed_core::trainer::{train, TrainConfig, TrainedModel, TrainingData};

use crate::config::{self, usage};
use crate::meta::RunMeta;
use crate::{Command, ConfigArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsiConfig {
    pub topics: usize,
    pub power_iters: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub seed: u64,
}

impl Default for LsiConfig {
    fn default() -> Self {
        Self { topics: DEFAULT_TOPICS, power_iters: DEFAULT_POWER_ITERS, min_df: 2, max_df_ratio: 1.0, seed: 0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    query_id: String,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    query_id: String,
    relevant: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingRow {
    query_id: String,
    rank: usize,
    video_id: String,
    distance: f64,
}

/// Every input must exist and no output may overwrite an input.
fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for input in inputs {
        if !input.exists() {
            bail!("input {} does not exist", input.display());
        }
    }
    let canonical: Vec<PathBuf> = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
    for output in outputs {
        if let Ok(c) = output.canonicalize() {
            if canonical.contains(&c) {
                return Err(usage(format!("output {} would overwrite an input", output.display())));
            }
        }
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new(""))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_embeddings(path: &Path, ids: &[String], vectors: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for (id, vector) in ids.iter().zip(vectors) {
        out.push_str(&serde_json::to_string(&EmbeddingLine { id: id.clone(), vector: vector.clone() })?);
        out.push('\n');
    }
    write_text(path, &out)
}

fn load_features(manifest: &Manifest, base: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    manifest
        .videos
        .par_iter()
        .map(|v| Ok((v.video_id.clone(), load_video_feature(base, v)?)))
        .collect()
}

fn config_of<T>(cfg: &ConfigArgs) -> Result<T>
where
    T: for<'de> Deserialize<'de> + Serialize + Default,
{
    if let Some(path) = &cfg.config {
        check_paths(&[path], &[])?;
    }
    config::resolve(cfg.config.as_deref(), &cfg.all_overrides())
}

fn config_inputs<'a>(cfg: &'a ConfigArgs, inputs: &[&'a Path]) -> Vec<&'a Path> {
    let mut all = inputs.to_vec();
    all.extend(cfg.config.as_deref());
    all
}

pub fn run(command: Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::LsiTrain { corpus, manifest, out, cfg } => lsi_train(&corpus, manifest.as_deref(), &out, &cfg, threads),
        Command::TextEmbed { lsi, queries, manifest, model, out } => {
            text_embed(&lsi, queries.as_deref(), manifest.as_deref(), model.as_deref(), &out, threads)
        }
        Command::Prune { manifest, out, report, cfg } => prune(&manifest, &out, report.as_deref(), &cfg, threads),
        Command::Train { manifest, lsi, out, cfg } => train_cmd(&manifest, &lsi, &out, &cfg, threads),
        Command::Embed { model, manifest, out } => embed(&model, &manifest, &out, threads),
        Command::Retrieve { model, lsi, queries, manifest, out, top } => {
            retrieve(&model, &lsi, &queries, &manifest, &out, top, threads)
        }
        Command::Eval { rankings, truth, out, csv } => eval(&rankings, &truth, out.as_deref(), csv.as_deref(), threads),
        Command::Simmatrix { a, b, metric, out } => simmatrix(&a, b.as_deref(), &metric, &out, threads),
    }
}

fn lsi_train(corpus: &Path, manifest: Option<&Path>, out: &Path, cfg: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    let mut inputs = vec![corpus];
    inputs.extend(manifest);
    check_paths(&inputs, &[out])?;
    let lsi_cfg: LsiConfig = config_of(cfg)?;

    let text = fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let mut docs: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
    if let Some(m) = manifest {
        docs.extend(load_manifest(m)?.events.into_iter().map(|e| e.article));
    }
    let tokenizer = Tokenizer::default();
    let tokens: Vec<Vec<String>> = docs.par_iter().map(|d| tokenizer.tokenize(d)).collect();
    let vocab = build_vocab(&tokens, lsi_cfg.min_df, lsi_cfg.max_df_ratio)?;
    log::info!("{} documents, {} terms after filtering", docs.len(), vocab.len());
    let vectors: Vec<_> = tokens.par_iter().map(|t| tfidf_vectorize(t, &vocab)).collect();
    let model = fit_lsi_with(&vocab, &vectors, lsi_cfg.topics, lsi_cfg.seed, lsi_cfg.power_iters)?;
    model.save(out)?;

    let meta = RunMeta::new("lsi-train", Some(lsi_cfg.seed), &lsi_cfg, &config_inputs(cfg, &inputs), threads)?
        .with_summary(json!({"documents": docs.len(), "vocabulary": vocab.len(), "topics": model.topics()}));
    meta.write_next_to(out)?;
    println!("fitted {} topics over {} documents and {} terms", model.topics(), docs.len(), vocab.len());
    Ok(())
}

fn text_embed(
    lsi_dir: &Path,
    queries: Option<&Path>,
    manifest: Option<&Path>,
    model_dir: Option<&Path>,
    out: &Path,
    threads: Option<usize>,
) -> Result<()> {
    let source = queries.or(manifest).ok_or_else(|| usage("one of --queries or --manifest is required"))?;
    let mut inputs = vec![lsi_dir, source];
    inputs.extend(model_dir);
    check_paths(&inputs, &[out])?;

    let lsi = TopicModel::load(lsi_dir)?;
    let texts: Vec<(String, String)> = if let Some(q) = queries {
        read_jsonl::<QueryLine>(q)?.into_iter().map(|l| (l.query_id, l.text)).collect()
    } else {
        load_manifest(source)?.events.into_iter().map(|e| (e.event_id.to_string(), e.article)).collect()
    };
    let tokenizer = Tokenizer::default();
    let topics: Vec<Vec<f64>> = texts.par_iter().map(|(_, t)| lsi.project_text(&tokenizer, t)).collect();
    let vectors = match model_dir {
        Some(dir) => embed_texts(&TrainedModel::load(dir)?, &topics)?,
        None => topics,
    };
    let ids: Vec<String> = texts.into_iter().map(|(id, _)| id).collect();
    write_embeddings(out, &ids, &vectors)?;
    RunMeta::new("text-embed", None, &json!({"space": if model_dir.is_some() { "embedding" } else { "topic" }}), &inputs, threads)?
        .with_summary(json!({"texts": ids.len()}))
        .write_next_to(out)
}

fn prune(manifest_path: &Path, out: &Path, report_path: Option<&Path>, cfg: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    let mut outputs = vec![out];
    outputs.extend(report_path);
    check_paths(&[manifest_path], &outputs)?;
    let prune_cfg: PruneConfig = config_of(cfg)?;

    let manifest = load_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let features: Vec<Vec<f64>> = load_features(&manifest, base)?.into_iter().map(|(_, f)| f).collect();
    log::info!("pruning {} videos over {} events", manifest.videos.len(), manifest.num_events());
    let report = prune_dataset(&manifest.videos, &features, manifest.num_events(), &prune_cfg)?;

    let mut pruned = report.apply(&manifest);
    // Relative feature paths stay valid only if the new manifest sits beside the old one.
    let same_dir = out.parent().map(|p| p.canonicalize().ok()) == Some(base.canonicalize().ok())
        || (out.parent() == Some(Path::new("")) && base == Path::new(""));
    if !same_dir {
        let abs_base = base.canonicalize().with_context(|| format!("resolving {}", base.display()))?;
        for v in &mut pruned.videos {
            if v.feature_path.is_relative() {
                v.feature_path = abs_base.join(&v.feature_path);
            }
        }
    }
    write_manifest(&pruned, out)?;
    if let Some(path) = report_path {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    let summary = json!({
        "videos": manifest.videos.len(),
        "removed": report.removed.len(),
        "removal_fraction": report.removal_fraction,
        "vote_threshold": report.vote_threshold,
    });
    RunMeta::new("prune", Some(prune_cfg.seed), &prune_cfg, &config_inputs(cfg, &[manifest_path]), threads)?
        .with_summary(summary)
        .write_next_to(out)?;
    println!(
        "removed {} of {} videos ({:.1}%)",
        report.removed.len(),
        manifest.videos.len(),
        100.0 * report.removal_fraction
    );
    Ok(())
}

fn train_cmd(manifest_path: &Path, lsi_dir: &Path, out: &Path, cfg: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    check_paths(&[manifest_path, lsi_dir], &[out])?;
    let train_cfg: TrainConfig = config_of(cfg)?;
    let manifest = load_manifest(manifest_path)?;
    let lsi = TopicModel::load(lsi_dir)?;
    let data = TrainingData::from_manifest(&manifest, base_dir(manifest_path), &lsi)?;
    log::info!("training variant {} on {} videos", train_cfg.variant, manifest.videos.len());
    let model = train(&data, &train_cfg)?;
    model.save(out)?;

    let last = model.log.last().map(|l| l.loss.total);
    RunMeta::new("train", Some(model.config.seed), &model.config, &config_inputs(cfg, &[manifest_path, lsi_dir]), threads)?
        .with_summary(json!({"variant": model.variant().to_string(), "epochs": model.log.len(), "final_loss": last}))
        .write_next_to(out)?;
    match last {
        Some(loss) => println!("trained variant {} for {} epochs, final loss {loss:.6}", model.variant(), model.log.len()),
        None => println!("variant {} initialized (0 epochs)", model.variant()),
    }
    Ok(())
}

fn embed(model_dir: &Path, manifest_path: &Path, out: &Path, threads: Option<usize>) -> Result<()> {
    check_paths(&[model_dir, manifest_path], &[out])?;
    let model = TrainedModel::load(model_dir)?;
    let manifest = load_manifest(manifest_path)?;
    let (ids, feats): (Vec<String>, Vec<Vec<f64>>) = load_features(&manifest, base_dir(manifest_path))?.into_iter().unzip();
    let vectors = embed_videos(&model, &feats)?;
    write_embeddings(out, &ids, &vectors)?;
    RunMeta::new("embed", Some(model.config.seed), &json!({}), &[model_dir, manifest_path], threads)?
        .with_summary(json!({"videos": ids.len()}))
        .write_next_to(out)
}

fn retrieve(
    model_dir: &Path,
    lsi_dir: &Path,
    queries_path: &Path,
    manifest_path: &Path,
    out: &Path,
    top: Option<usize>,
    threads: Option<usize>,
) -> Result<()> {
    let inputs = [model_dir, lsi_dir, queries_path, manifest_path];
    check_paths(&inputs, &[out])?;
    if top == Some(0) {
        return Err(usage("--top must be at least 1"));
    }
    let model = TrainedModel::load(model_dir)?;
    let lsi = TopicModel::load(lsi_dir)?;
    let queries: Vec<QueryLine> = read_jsonl(queries_path)?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = queries.iter().find(|q| !seen.insert(q.query_id.as_str())) {
        bail!("duplicate query id {}", dup.query_id);
    }
    let manifest = load_manifest(manifest_path)?;
    let (ids, feats): (Vec<String>, Vec<Vec<f64>>) = load_features(&manifest, base_dir(manifest_path))?.into_iter().unzip();
    let videos: Vec<(String, Vec<f64>)> = ids.into_iter().zip(embed_videos(&model, &feats)?).collect();

    let tokenizer = Tokenizer::default();
    let topics: Vec<Vec<f64>> = queries.iter().map(|q| lsi.project_text(&tokenizer, &q.text)).collect();
    let query_emb = embed_texts(&model, &topics)?;
    let metric = default_metric(model.variant());
    let rankings: Vec<RankedList> = queries
        .par_iter()
        .zip(&query_emb)
        .map(|(q, emb)| rank_embeddings(&q.query_id, emb, &videos, metric))
        .collect::<zed_core::Result<_>>()?;

    let mut writer = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    for r in &rankings {
        for (i, (video_id, distance)) in r.entries.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
            writer.serialize(RankingRow { query_id: r.query_id.clone(), rank: i + 1, video_id: video_id.clone(), distance: *distance })?;
        }
    }
    writer.flush()?;
    drop(writer);
    RunMeta::new("retrieve", Some(model.config.seed), &json!({"top": top, "metric": format!("{metric:?}").to_lowercase()}), &inputs, threads)?
        .with_summary(json!({"queries": rankings.len(), "videos": videos.len()}))
        .write_next_to(out)
}

fn read_rankings(path: &Path) -> Result<Vec<RankedList>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut grouped: BTreeMap<String, Vec<RankingRow>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<RankingRow>().enumerate() {
        let row = row.with_context(|| format!("{} record {}", path.display(), i + 1))?;
        grouped.entry(row.query_id.clone()).or_default().push(row);
    }
    grouped
        .into_iter()
        .map(|(query_id, mut rows)| {
            rows.sort_by_key(|r| r.rank);
            if rows.iter().enumerate().any(|(i, r)| r.rank != i + 1) {
                bail!("ranks for query {query_id} are not 1..{}", rows.len());
            }
            Ok(RankedList { query_id, entries: rows.into_iter().map(|r| (r.video_id, r.distance)).collect() })
        })
        .collect()
}

fn eval(rankings_path: &Path, truth_path: &Path, out: Option<&Path>, csv_path: Option<&Path>, threads: Option<usize>) -> Result<()> {
    let outputs: Vec<&Path> = out.into_iter().chain(csv_path).collect();
    check_paths(&[rankings_path, truth_path], &outputs)?;
    let rankings = read_rankings(rankings_path)?;
    let mut truth: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in read_jsonl::<TruthLine>(truth_path)? {
        if truth.insert(line.query_id.clone(), line.relevant.into_iter().collect()).is_some() {
            bail!("duplicate truth entry for query {}", line.query_id);
        }
    }
    let report = evaluate(&rankings, &truth)?;
    let body = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(path) = csv_path {
        write_text(path, &report.to_csv())?;
    }
    match out {
        Some(path) => {
            write_text(path, &body)?;
            RunMeta::new("eval", None, &json!({}), &[rankings_path, truth_path], threads)?
                .with_summary(json!({"map": report.map, "queries": report.per_event.len()}))
                .write_next_to(path)?;
            println!("mAP {:.6} over {} queries", report.map, report.per_event.len());
        }
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn simmatrix(a_path: &Path, b_path: Option<&Path>, metric: &str, out: &Path, threads: Option<usize>) -> Result<()> {
    let metric: SimilarityMetric = serde_json::from_value(json!(metric))
        .map_err(|_| usage(format!("unknown metric `{metric}`; expected cosine or neg_euclidean")))?;
    let mut inputs = vec![a_path];
    inputs.extend(b_path);
    check_paths(&inputs, &[out])?;
    let a: Vec<EmbeddingLine> = read_jsonl(a_path)?;
    let b: Vec<EmbeddingLine> = match b_path {
        Some(p) => read_jsonl(p)?,
        None => read_jsonl(a_path)?,
    };
    let rows = |v: &[EmbeddingLine]| v.iter().map(|e| e.vector.clone()).collect::<Vec<_>>();
    let m = similarity_matrix(&rows(&a), &rows(&b), metric)?;
    let row_major: Vec<f32> = m.transpose().iter().map(|&x| x as f32).collect();
    write_feature_file(&FeatureMatrix::new(m.nrows(), m.ncols(), row_major)?, out)?;
    let dominance = diagonal_dominance(&m).ok();
    let summary = json!({
        "rows": a.iter().map(|e| &e.id).collect::<Vec<_>>(),
        "cols": b.iter().map(|e| &e.id).collect::<Vec<_>>(),
        "diagonal_dominance": dominance,
    });
    RunMeta::new("simmatrix", None, &json!({"metric": metric}), &inputs, threads)?
        .with_summary(summary)
        .write_next_to(out)?;
    match dominance {
        Some(d) => println!("{}x{} similarity matrix, diagonal dominance {d:.6}", m.nrows(), m.ncols()),
        None => println!("{}x{} similarity matrix", m.nrows(), m.ncols()),
    }
    Ok(())
}
