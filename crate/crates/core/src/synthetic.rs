//! Synthetic benchmark with planted events.
//!
//! Each event owns a Gaussian cluster in the visual space and a disjoint set
//! of pseudo-words. Articles, titles, LSI corpus documents and held-out query
//! paraphrases are all sampled from the event's words mixed with a shared
//! background vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_feature_file, write_manifest, EventRecord, FeatureMatrix, Manifest, VideoRecord};
use crate::lsi::{fit_lsi, TopicModel};
use crate::retrieval::{embed_texts, embed_videos, evaluate, rank_embeddings, default_metric, EvalReport};
use crate::text::{build_vocab, tfidf_vectorize, Tokenizer, STOPWORDS};
use crate::trainer::{TrainedModel, TrainingData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub events: usize,
    pub visual_dim: usize,
    pub train_per_event: usize,
    pub test_per_event: usize,
    pub words_per_event: usize,
    pub shared_words: usize,
    pub corpus_docs_per_event: usize,
    pub article_len: usize,
    pub title_len: usize,
    pub doc_len: usize,
    /// Probability that a token comes from the event's own words.
    pub on_topic: f64,
    /// Standard deviation of cluster centers.
    pub center_scale: f64,
    /// Standard deviation of videos around their center.
    pub video_noise: f64,
    /// Fraction of training videos whose features come from another event's cluster.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            events: 10,
            visual_dim: 64,
            train_per_event: 40,
            test_per_event: 10,
            words_per_event: 20,
            shared_words: 40,
            corpus_docs_per_event: 30,
            article_len: 80,
            title_len: 8,
            doc_len: 60,
            on_topic: 0.7,
            center_scale: 0.3,
            video_noise: 0.3,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub event: usize,
    pub title: String,
    pub feature: Vec<f64>,
    /// Features were drawn from another event's cluster.
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub id: String,
    pub event: usize,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub config: SyntheticConfig,
    pub events: Vec<EventRecord>,
    pub train: Vec<SyntheticVideo>,
    pub test: Vec<SyntheticVideo>,
    /// Held-out paraphrases of each event's article.
    pub queries: Vec<SyntheticQuery>,
    /// Background documents for fitting the topic model.
    pub corpus: Vec<String>,
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'o', 'u'];

/// Distinct pseudo-words whose stems are also distinct.
fn pseudo_words(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let tokenizer = Tokenizer::default();
    let stop: HashSet<&str> = STOPWORDS.iter().copied().collect();
    let mut stems = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).unwrap());
            w.push(*VOWELS.choose(rng).unwrap());
        }
        w.push(*CONSONANTS.choose(rng).unwrap());
        if stop.contains(w.as_str()) {
            continue;
        }
        if stems.insert(tokenizer.stem(&w)) {
            out.push(w);
        }
    }
    out
}

fn sample_doc(own: &[String], shared: &[String], len: usize, on_topic: f64, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = (0..len)
        .map(|_| {
            let pool = if rng.random_bool(on_topic) { own } else { shared };
            pool.choose(rng).unwrap().as_str()
        })
        .collect();
    words.join(" ")
}

impl SyntheticBenchmark {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        if config.events < 2 || config.visual_dim == 0 || config.train_per_event == 0 {
            return Err(Error::invalid("synthetic benchmark needs >= 2 events, a visual dimension and training videos"));
        }
        if !(0.0..=1.0).contains(&config.on_topic) || !(0.0..1.0).contains(&config.label_noise) {
            return Err(Error::invalid("on_topic must be in [0, 1] and label_noise in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let m = config.events;
        let vocab = pseudo_words(m * config.words_per_event + config.shared_words, &mut rng);
        let (topic_words, shared) = vocab.split_at(m * config.words_per_event);
        let own = |e: usize| &topic_words[e * config.words_per_event..(e + 1) * config.words_per_event];

        let center_dist = Normal::new(0.0, config.center_scale).map_err(|e| Error::invalid(e.to_string()))?;
        let noise_dist = Normal::new(0.0, config.video_noise).map_err(|e| Error::invalid(e.to_string()))?;
        let centers: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..config.visual_dim).map(|_| center_dist.sample(&mut rng)).collect())
            .collect();

        let events = (0..m)
            .map(|e| EventRecord {
                event_id: e,
                name: format!("event {e}"),
                article: sample_doc(own(e), shared, config.article_len, config.on_topic, &mut rng),
            })
            .collect();

        let make_videos = |split: &str, per_event: usize, noise_frac: f64, rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(m * per_event);
            for e in 0..m {
                for i in 0..per_event {
                    let noisy = noise_frac > 0.0 && rng.random_bool(noise_frac);
                    let source = if noisy {
                        let mut o = rng.random_range(0..m - 1);
                        if o >= e {
                            o += 1;
                        }
                        o
                    } else {
                        e
                    };
                    let feature = centers[source].iter().map(|c| c + noise_dist.sample(rng)).collect();
                    out.push(SyntheticVideo {
                        id: format!("{split}-e{e:02}-{i:03}"),
                        event: e,
                        title: sample_doc(own(e), shared, config.title_len, config.on_topic, rng),
                        feature,
                        noisy,
                    });
                }
            }
            out
        };
        let train = make_videos("train", config.train_per_event, config.label_noise, &mut rng);
        let test = make_videos("test", config.test_per_event, 0.0, &mut rng);

        let queries = (0..m)
            .map(|e| SyntheticQuery {
                id: format!("q{e:02}"),
                event: e,
                text: sample_doc(own(e), shared, config.article_len, config.on_topic, &mut rng),
            })
            .collect();
        let corpus = (0..m)
            .flat_map(|e| (0..config.corpus_docs_per_event).map(move |i| (e, i)))
            .map(|(e, _)| sample_doc(own(e), shared, config.doc_len, config.on_topic, &mut rng))
            .collect();

        Ok(Self { config: config.clone(), events, train, test, queries, corpus })
    }

    /// Fits a `k`-topic model on the background corpus plus the event articles.
    pub fn fit_topics(&self, k: usize, seed: u64) -> Result<TopicModel> {
        let tokenizer = Tokenizer::default();
        let docs: Vec<Vec<String>> = self
            .corpus
            .iter()
            .map(String::as_str)
            .chain(self.events.iter().map(|e| e.article.as_str()))
            .map(|d| tokenizer.tokenize(d))
            .collect();
        let vocab = build_vocab(&docs, 2, 1.0)?;
        let vectors: Vec<_> = docs.iter().map(|d| tfidf_vectorize(d, &vocab)).collect();
        fit_lsi(&vocab, &vectors, k, seed)
    }

    pub fn training_data(&self, lsi: &TopicModel) -> Result<TrainingData> {
        let tokenizer = Tokenizer::default();
        TrainingData::new(
            self.train.iter().map(|v| v.feature.clone()).collect(),
            self.train.iter().map(|v| v.event).collect(),
            self.train.iter().map(|v| lsi.project_text(&tokenizer, &v.title)).collect(),
            self.events.iter().map(|e| lsi.project_text(&tokenizer, &e.article)).collect(),
        )
    }

    pub fn query_topics(&self, lsi: &TopicModel) -> Vec<Vec<f64>> {
        let tokenizer = Tokenizer::default();
        self.queries.iter().map(|q| lsi.project_text(&tokenizer, &q.text)).collect()
    }

    /// Relevant test videos per query id.
    pub fn truth(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.queries
            .iter()
            .map(|q| (q.id.clone(), self.test.iter().filter(|v| v.event == q.event).map(|v| v.id.clone()).collect()))
            .collect()
    }

    /// Ranks the test videos for every query and scores the rankings.
    pub fn evaluate(&self, model: &TrainedModel, lsi: &TopicModel) -> Result<EvalReport> {
        let query_emb = embed_texts(model, &self.query_topics(lsi))?;
        let feats: Vec<Vec<f64>> = self.test.iter().map(|v| v.feature.clone()).collect();
        let videos: Vec<(String, Vec<f64>)> =
            self.test.iter().map(|v| v.id.clone()).zip(embed_videos(model, &feats)?).collect();
        let metric = default_metric(model.variant());
        let rankings = self
            .queries
            .iter()
            .zip(&query_emb)
            .map(|(q, emb)| rank_embeddings(&q.id, emb, &videos, metric))
            .collect::<Result<Vec<_>>>()?;
        evaluate(&rankings, &self.truth())
    }

    /// Writes the benchmark as pipeline inputs under `dir`:
    /// `train.jsonl`, `test.jsonl`, `features/*.zedf`, `corpus.txt`,
    /// `queries.jsonl` and `truth.jsonl`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let write_split = |videos: &[SyntheticVideo], name: &str| -> Result<()> {
            let mut records = Vec::with_capacity(videos.len());
            for v in videos {
                let rel = PathBuf::from("features").join(format!("{}.zedf", v.id));
                write_feature_file(&FeatureMatrix::from_rows_f64(std::slice::from_ref(&v.feature))?, &dir.join(&rel))?;
                records.push(VideoRecord {
                    video_id: v.id.clone(),
                    event_id: v.event,
                    title: v.title.clone(),
                    feature_path: rel,
                });
            }
            write_manifest(&Manifest { events: self.events.clone(), videos: records }, &dir.join(name))
        };
        write_split(&self.train, "train.jsonl")?;
        write_split(&self.test, "test.jsonl")?;

        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("corpus.txt", self.corpus.iter().map(|d| format!("{d}\n")).collect())?;
        let mut queries = String::new();
        for q in &self.queries {
            queries.push_str(&serde_json::to_string(&serde_json::json!({"query_id": q.id, "text": q.text}))?);
            queries.push('\n');
        }
        write("queries.jsonl", queries)?;
        let mut truth = String::new();
        for (q, rel) in self.truth() {
            truth.push_str(&serde_json::to_string(&serde_json::json!({"query_id": q, "relevant": rel}))?);
            truth.push('\n');
        }
        write("truth.jsonl", truth)
    }
}
