//! Training of the unified embedding and its baselines.
//!
//! | variant | towers        | objective                                             |
//! |---------|---------------|-------------------------------------------------------|
//! | `U`     | text + video  | contrastive(article, video) + lambda * logistic(title)|
//! | `V`     | video         | MSE to the article topic vector                       |
//! | `C`     | video         | contrastive to the article topic vector               |
//! | `S`     | text, video   | independent logistic classifiers                      |
//! | `N`     | text + video  | MSE between towers + lambda * logistic(title)         |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_video_feature, Manifest};
use crate::losses::{contrastive_to_target, logistic_loss, mse_to_target, unified_loss, LabelBatch, PairBatch};
use crate::lsi::TopicModel;
use crate::nn::{batch_from_rows, init_params, HiddenActivation, MlpGrads, MlpParams, OutputActivation};
use crate::text::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    U,
    V,
    C,
    S,
    N,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::U, Variant::V, Variant::C, Variant::S, Variant::N];

    pub fn has_text_tower(self) -> bool {
        matches!(self, Variant::U | Variant::S | Variant::N)
    }

    /// Whether training pairs include sampled negatives.
    pub fn uses_negatives(self) -> bool {
        matches!(self, Variant::U | Variant::C)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::U => "U",
            Variant::V => "V",
            Variant::C => "C",
            Variant::S => "S",
            Variant::N => "N",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "U" => Ok(Variant::U),
            "V" => Ok(Variant::V),
            "C" => Ok(Variant::C),
            "S" => Ok(Variant::S),
            "N" => Ok(Variant::N),
            _ => Err(Error::invalid(format!("unknown variant {s:?}"))),
        }
    }
}

/// Which text-tower output is used as the text embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEmbedding {
    Softmax,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Visual feature size; inferred from data when absent.
    pub d_v: Option<usize>,
    /// Topic vector size (the LSI topic count); inferred when absent.
    pub d_t: Option<usize>,
    pub d_h_text: usize,
    pub d_h_video: usize,
    /// Embedding size: number of events for U/S/N, topic count for V/C.
    pub d_z: Option<usize>,
    pub video_hidden: HiddenActivation,
    pub video_output: OutputActivation,
    pub text_embedding: TextEmbedding,
    pub margin: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::U,
            d_v: None,
            d_t: None,
            d_h_text: 64,
            d_h_video: 64,
            d_z: None,
            video_hidden: HiddenActivation::Relu,
            video_output: OutputActivation::Linear,
            text_embedding: TextEmbedding::Softmax,
            margin: 1.0,
            lambda: 1.0,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 100,
            neg_ratio: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Fills inferred dimensions from the data and checks the combination.
    pub fn resolve(&self, data: &TrainingData) -> Result<TrainConfig> {
        let mut cfg = self.clone();
        let d_v = data.video_dim();
        let d_t = data.topic_dim();
        let m = data.num_events();
        check_dim("d_v", cfg.d_v, d_v)?;
        check_dim("d_t", cfg.d_t, d_t)?;
        cfg.d_v = Some(d_v);
        cfg.d_t = Some(d_t);
        let want_z = if cfg.variant.has_text_tower() { m } else { d_t };
        if let Some(z) = cfg.d_z {
            if z != want_z {
                let what = if cfg.variant.has_text_tower() { "the number of events" } else { "the topic count" };
                return Err(Error::invalid(format!(
                    "variant {} needs d_z equal to {what} ({want_z}), got {z}",
                    cfg.variant
                )));
            }
        }
        cfg.d_z = Some(want_z);
        if cfg.d_h_text == 0 || cfg.d_h_video == 0 || cfg.batch_size == 0 {
            return Err(Error::invalid("hidden sizes and batch size must be positive"));
        }
        if !(cfg.margin > 0.0 && cfg.margin.is_finite()) {
            return Err(Error::invalid(format!("margin must be positive, got {}", cfg.margin)));
        }
        if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", cfg.lambda)));
        }
        if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", cfg.learning_rate)));
        }
        if !(0.0..1.0).contains(&cfg.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", cfg.momentum)));
        }
        if cfg.variant == Variant::S && cfg.video_output != OutputActivation::Softmax {
            // S classifies videos into events; the tower output is a class distribution.
            cfg.video_output = OutputActivation::Softmax;
        }
        Ok(cfg)
    }

    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        match (self.d_v, self.d_t, self.d_z) {
            (Some(v), Some(t), Some(z)) => Ok((v, t, z)),
            _ => Err(Error::invalid("configuration dimensions are unresolved")),
        }
    }
}

fn check_dim(name: &str, configured: Option<usize>, actual: usize) -> Result<()> {
    match configured {
        Some(c) if c != actual => Err(Error::invalid(format!("{name} is {c} in the config but {actual} in the data"))),
        _ => Ok(()),
    }
}

/// Precomputed model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Pooled visual feature per video.
    pub video_features: Vec<Vec<f64>>,
    /// Event index per video.
    pub labels: Vec<usize>,
    /// Topic vector of each video's title.
    pub title_topics: Vec<Vec<f64>>,
    /// Topic vector of each event's article, indexed by event.
    pub article_topics: Vec<Vec<f64>>,
}

impl TrainingData {
    pub fn new(
        video_features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        title_topics: Vec<Vec<f64>>,
        article_topics: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = video_features.len();
        if labels.len() != n || title_topics.len() != n {
            return Err(Error::shape(format!(
                "{n} videos, {} labels, {} titles",
                labels.len(),
                title_topics.len()
            )));
        }
        let m = article_topics.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::invalid(format!("label {bad} has no article among {m} events")));
        }
        let d_v = video_features.first().map_or(0, Vec::len);
        let d_t = article_topics.first().map_or(0, Vec::len);
        if video_features.iter().any(|f| f.len() != d_v) {
            return Err(Error::shape("video features differ in length"));
        }
        if title_topics.iter().chain(&article_topics).any(|t| t.len() != d_t) {
            return Err(Error::shape("topic vectors differ in length"));
        }
        let all = video_features.iter().chain(&title_topics).chain(&article_topics);
        if all.flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite training input".into()));
        }
        Ok(Self { video_features, labels, title_topics, article_topics })
    }

    /// Loads and pools video features and projects titles and articles with `lsi`.
    pub fn from_manifest(manifest: &Manifest, base_dir: &Path, lsi: &TopicModel) -> Result<Self> {
        let tokenizer = Tokenizer::default();
        let video_features = manifest
            .videos
            .iter()
            .map(|v| load_video_feature(base_dir, v))
            .collect::<Result<Vec<_>>>()?;
        let labels = manifest.videos.iter().map(|v| v.event_id).collect();
        let title_topics = manifest.videos.iter().map(|v| lsi.project_text(&tokenizer, &v.title)).collect();
        let article_topics = manifest.events.iter().map(|e| lsi.project_text(&tokenizer, &e.article)).collect();
        Self::new(video_features, labels, title_topics, article_topics)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.article_topics.len()
    }

    pub fn video_dim(&self) -> usize {
        self.video_features.first().map_or(0, Vec::len)
    }

    pub fn topic_dim(&self) -> usize {
        self.article_topics.first().map_or(0, Vec::len)
    }

    /// Restriction to the given video indices; articles are kept whole.
    pub fn subset(&self, indices: &[usize]) -> TrainingData {
        TrainingData {
            video_features: indices.iter().map(|&i| self.video_features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            title_topics: indices.iter().map(|&i| self.title_topics[i].clone()).collect(),
            article_topics: self.article_topics.clone(),
        }
    }
}

/// One training pairing of a video with an event article.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainTriplet {
    pub video: usize,
    pub article_event: usize,
    pub relevant: bool,
}

/// One epoch of pairings: every video with its own article (relevant), plus
/// `neg_ratio` negatives per positive whose article is drawn uniformly from
/// the other events. The result is shuffled.
pub fn sample_pairs<R: Rng>(labels: &[usize], num_events: usize, neg_ratio: usize, rng: &mut R) -> Result<Vec<TrainTriplet>> {
    if neg_ratio > 0 && num_events < 2 {
        return Err(Error::invalid("negative sampling needs at least two events"));
    }
    let mut out = Vec::with_capacity(labels.len() * (1 + neg_ratio));
    for (video, &label) in labels.iter().enumerate() {
        out.push(TrainTriplet { video, article_event: label, relevant: true });
        for _ in 0..neg_ratio {
            let mut other = rng.random_range(0..num_events - 1);
            if other >= label {
                other += 1;
            }
            out.push(TrainTriplet { video, article_event: other, relevant: false });
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Momentum SGD on flat slices: `v <- momentum * v - lr * g; theta <- theta + v`.
pub fn sgd_update(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != velocity.len() {
        return Err(Error::shape("parameter, gradient and velocity lengths differ"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
    }
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
    Ok(())
}

/// [`sgd_update`] applied tensor by tensor; `velocity` has the parameter layout.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpGrads, velocity: &mut MlpGrads, lr: f64, momentum: f64) -> Result<()> {
    sgd_update(params.w1.as_mut_slice(), grads.w1.as_slice(), velocity.w1.as_mut_slice(), lr, momentum)?;
    sgd_update(params.b1.as_mut_slice(), grads.b1.as_slice(), velocity.b1.as_mut_slice(), lr, momentum)?;
    sgd_update(params.w2.as_mut_slice(), grads.w2.as_slice(), velocity.w2.as_mut_slice(), lr, momentum)?;
    sgd_update(params.b2.as_mut_slice(), grads.b2.as_slice(), velocity.b2.as_mut_slice(), lr, momentum)
}

/// The text tower (absent for V and C) and the video tower.
#[derive(Debug, Clone, PartialEq)]
pub struct Towers {
    pub text: Option<MlpParams>,
    pub video: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrads {
    pub text: Option<MlpGrads>,
    pub video: MlpGrads,
}

impl Towers {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let (d_v, d_t, d_z) = cfg.dims()?;
        let text = if cfg.variant.has_text_tower() {
            Some(init_params(d_t, cfg.d_h_text, d_z, HiddenActivation::Relu, OutputActivation::Softmax, cfg.seed.wrapping_add(1))?)
        } else {
            None
        };
        let video = init_params(d_v, cfg.d_h_video, d_z, cfg.video_hidden, cfg.video_output, cfg.seed.wrapping_add(2))?;
        Ok(Self { text, video })
    }

    /// Text tower parameters (if any) followed by video tower parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.text.as_ref().map(MlpParams::flatten).unwrap_or_default();
        out.extend(self.video.flatten());
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let split = self.text.as_ref().map_or(0, MlpParams::num_params);
        if flat.len() != split + self.video.num_params() {
            return Err(Error::shape("flat parameter vector has the wrong length"));
        }
        if let Some(t) = self.text.as_mut() {
            t.assign_flat(&flat[..split])?;
        }
        self.video.assign_flat(&flat[split..])
    }
}

impl TowerGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.text.as_ref().map(MlpGrads::flatten).unwrap_or_default();
        out.extend(self.video.flatten());
        out
    }
}

/// Loss components of one evaluation; unused terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub contrastive: f64,
    pub logistic: f64,
    pub mse: f64,
}

fn rows_of(source: &[Vec<f64>], idx: impl Iterator<Item = usize>) -> Vec<&[f64]> {
    idx.map(|i| source[i].as_slice()).collect()
}

/// Value and gradients of the variant objective on a batch of triplets.
/// Variants without negatives ignore irrelevant triplets.
pub fn objective(towers: &Towers, data: &TrainingData, triplets: &[TrainTriplet], cfg: &TrainConfig) -> Result<(LossTerms, TowerGrads)> {
    let used: Vec<TrainTriplet> = if cfg.variant.uses_negatives() {
        triplets.to_vec()
    } else {
        triplets.iter().copied().filter(|t| t.relevant).collect()
    };
    let mut grads = TowerGrads { text: towers.text.as_ref().map(MlpParams::zero_grads), video: towers.video.zero_grads() };
    if used.is_empty() {
        return Ok((LossTerms::default(), grads));
    }
    let videos = batch_from_rows(&rows_of(&data.video_features, used.iter().map(|t| t.video)))?;
    let articles = batch_from_rows(&rows_of(&data.article_topics, used.iter().map(|t| t.article_event)))?;
    let labels: Vec<usize> = used.iter().map(|t| data.labels[t.video]).collect();
    let relevant: Vec<bool> = used.iter().map(|t| t.relevant).collect();
    let text_tower = || towers.text.as_ref().ok_or_else(|| Error::invalid(format!("variant {} needs a text tower", cfg.variant)));

    let (z_video, video_trace) = towers.video.forward(&videos)?;
    let mut terms = LossTerms::default();
    match cfg.variant {
        Variant::U | Variant::N => {
            let text = text_tower()?;
            let titles = batch_from_rows(&rows_of(&data.title_topics, used.iter().map(|t| t.video)))?;
            let (probs, article_trace) = text.forward(&articles)?;
            let z_text = match cfg.text_embedding {
                TextEmbedding::Softmax => probs,
                TextEmbedding::Logits => article_trace.pre_output.clone(),
            };
            let (_, title_trace) = text.forward(&titles)?;
            let title_batch = LabelBatch::from_labels(title_trace.pre_output.clone(), &labels)?;

            let (d_text, d_video, d_title) = if cfg.variant == Variant::U {
                let pairs = PairBatch::new(z_text, z_video, relevant)?;
                let out = unified_loss(&pairs, &title_batch, cfg.lambda, cfg.margin)?;
                terms.total = out.value;
                terms.contrastive = out.contrastive;
                terms.logistic = out.logistic;
                (out.d_text, out.d_video, out.d_title_logits)
            } else {
                let (mse, d_video) = mse_to_target(&z_video, &z_text)?;
                let log = logistic_loss(&title_batch)?;
                terms.total = mse + cfg.lambda * log.value;
                terms.mse = mse;
                terms.logistic = log.value;
                (-&d_video, d_video, log.d_logits * cfg.lambda)
            };
            let mut g_text = match cfg.text_embedding {
                TextEmbedding::Softmax => text.backward(&article_trace, &d_text)?.0,
                TextEmbedding::Logits => text.backward_pre_output(&article_trace, &d_text)?.0,
            };
            g_text.add_assign(&text.backward_pre_output(&title_trace, &d_title)?.0);
            grads.text = Some(g_text);
            grads.video = towers.video.backward(&video_trace, &d_video)?.0;
        }
        Variant::V => {
            let (mse, d_video) = mse_to_target(&z_video, &articles)?;
            terms.total = mse;
            terms.mse = mse;
            grads.video = towers.video.backward(&video_trace, &d_video)?.0;
        }
        Variant::C => {
            let (con, d_video) = contrastive_to_target(&z_video, &articles, &relevant, cfg.margin)?;
            terms.total = con;
            terms.contrastive = con;
            grads.video = towers.video.backward(&video_trace, &d_video)?.0;
        }
        Variant::S => {
            let video_out = logistic_loss(&LabelBatch::from_labels(video_trace.pre_output.clone(), &labels)?)?;
            terms.total = video_out.value;
            grads.video = towers.video.backward_pre_output(&video_trace, &video_out.d_logits)?.0;
            // The text classifier, when present, sees titles and articles, each labelled with its event.
            if let Some(text) = towers.text.as_ref() {
                let titles = rows_of(&data.title_topics, used.iter().map(|t| t.video));
                let arts = rows_of(&data.article_topics, used.iter().map(|t| t.article_event));
                let text_inputs = batch_from_rows(&[titles, arts].concat())?;
                let text_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
                let (_, text_trace) = text.forward(&text_inputs)?;
                let text_out = logistic_loss(&LabelBatch::from_labels(text_trace.pre_output.clone(), &text_labels)?)?;
                terms.total += text_out.value;
                grads.text = Some(text.backward_pre_output(&text_trace, &text_out.d_logits)?.0);
            }
            terms.logistic = terms.total;
        }
    }
    if !terms.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite {} loss", cfg.variant)));
    }
    Ok((terms, grads))
}

/// Mean objective over held-out triplets with frozen parameters.
pub fn evaluate_epoch(towers: &Towers, data: &TrainingData, triplets: &[TrainTriplet], cfg: &TrainConfig) -> Result<LossTerms> {
    if triplets.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    objective(towers, data, triplets, cfg).map(|(terms, _)| terms)
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Objective over the epoch's pairs, evaluated after the epoch with frozen parameters.
    pub loss: LossTerms,
    /// Size-weighted mean of the mini-batch losses seen during the epoch.
    pub running_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub towers: Towers,
    pub config: TrainConfig,
    pub log: Vec<EpochLog>,
}

/// Trains the configured variant. Deterministic given the config seed.
pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainedModel> {
    train_with_observer(data, config, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_observer<F>(data: &TrainingData, config: &TrainConfig, mut observer: F) -> Result<TrainedModel>
where
    F: FnMut(&EpochLog, &Towers),
{
    if data.is_empty() {
        return Err(Error::invalid("no training videos"));
    }
    let cfg = config.resolve(data)?;
    let towers = Towers::init(&cfg)?;
    run_training(data, cfg, towers, &mut observer)
}

fn run_training(data: &TrainingData, cfg: TrainConfig, mut towers: Towers, observer: &mut dyn FnMut(&EpochLog, &Towers)) -> Result<TrainedModel> {
    let mut text_velocity = towers.text.as_ref().map(MlpParams::zero_grads);
    let mut video_velocity = towers.video.zero_grads();
    let neg_ratio = if cfg.variant.uses_negatives() { cfg.neg_ratio } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a17_ab1e);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let triplets = sample_pairs(&data.labels, data.num_events(), neg_ratio, &mut rng)?;
        let mut running = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            let (terms, grads) = objective(&towers, data, batch, &cfg)?;
            running += terms.total * batch.len() as f64;
            if let (Some(p), Some(g), Some(v)) = (towers.text.as_mut(), grads.text.as_ref(), text_velocity.as_mut()) {
                sgd_step(p, g, v, cfg.learning_rate, cfg.momentum)?;
            }
            sgd_step(&mut towers.video, &grads.video, &mut video_velocity, cfg.learning_rate, cfg.momentum)?;
        }
        let entry = EpochLog {
            epoch,
            loss: evaluate_epoch(&towers, data, &triplets, &cfg)?,
            running_loss: running / triplets.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.6}", entry.loss.total);
        observer(&entry, &towers);
        log.push(entry);
    }
    Ok(TrainedModel { towers, config: cfg, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 64, learning_rate: 0.01, momentum: 0.9, batch_size: 64, epochs: 30, seed: 0 }
    }
}

/// Single-tower event classifier on pooled video features: the video half of
/// variant `S`, trained with the same loop.
pub fn train_video_classifier(features: &[Vec<f64>], labels: &[usize], num_events: usize, cfg: &ClassifierConfig) -> Result<MlpParams> {
    // Only the video tower is trained; text inputs are one-dimensional placeholders.
    let data = TrainingData::new(features.to_vec(), labels.to_vec(), vec![vec![0.0]; labels.len()], vec![vec![0.0]; num_events])?;
    let train_cfg = TrainConfig {
        variant: Variant::S,
        d_h_video: cfg.hidden,
        video_output: OutputActivation::Softmax,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        neg_ratio: 0,
        seed: cfg.seed,
        ..TrainConfig::default()
    }
    .resolve(&data)?;
    let (d_v, _, d_z) = train_cfg.dims()?;
    let video = init_params(d_v, cfg.hidden, d_z, train_cfg.video_hidden, OutputActivation::Softmax, cfg.seed.wrapping_add(2))?;
    let towers = Towers { text: None, video };
    run_training(&data, train_cfg, towers, &mut |_, _| {}).map(|m| m.towers.video)
}

/// Index of the largest entry per row.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

impl TrainedModel {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&cfg_path, e))?;
        if let Some(text) = &self.towers.text {
            text.save(&dir.join("text"), Some(self.config.seed.wrapping_add(1)))?;
        }
        self.towers.video.save(&dir.join("video"), Some(self.config.seed.wrapping_add(2)))?;
        let log_path = dir.join("train_log.csv");
        fs::write(&log_path, self.log_csv()).map_err(|e| Error::io(&log_path, e))
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,contrastive,logistic,mse,running_loss\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.loss.total, e.loss.contrastive, e.loss.logistic, e.loss.mse, e.running_loss
            ));
        }
        out
    }

    /// Loads towers and config; the training log is not restored.
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let config: TrainConfig =
            serde_json::from_str(&fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?)?;
        let text = if config.variant.has_text_tower() { Some(MlpParams::load(&dir.join("text"))?) } else { None };
        let video = MlpParams::load(&dir.join("video"))?;
        let (d_v, d_t, d_z) = config.dims()?;
        if video.d_in() != d_v || video.d_out() != d_z || text.as_ref().is_some_and(|t| t.d_in() != d_t || t.d_out() != d_z) {
            return Err(Error::shape("saved towers disagree with the saved config"));
        }
        Ok(Self { towers: Towers { text, video }, config, log: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut theta = [1.0];
        let mut v = [0.0];
        sgd_update(&mut theta, &[2.0], &mut v, 0.1, 0.0).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);

        let mut theta = [0.25];
        let mut v = [0.0];
        sgd_update(&mut theta, &[0.0], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(theta[0], 0.25);

        let mut theta = [0.0];
        let mut v = [0.0];
        sgd_update(&mut theta, &[1.0], &mut v, 0.1, 0.9).unwrap();
        let before = theta[0];
        sgd_update(&mut theta, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((theta[0] - before + 0.19).abs() < 1e-15);

        assert!(matches!(sgd_update(&mut [0.0], &[f64::NAN], &mut [0.0], 0.1, 0.9).unwrap_err(), Error::Numeric(_)));
    }

    #[test]
    fn pair_sampling_counts() {
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all_pos = sample_pairs(&labels, 3, 0, &mut rng).unwrap();
        assert!(all_pos.iter().all(|t| t.relevant));
        let mixed = sample_pairs(&labels, 3, 1, &mut rng).unwrap();
        assert_eq!(mixed.len(), 20);
        assert_eq!(mixed.iter().filter(|t| !t.relevant).count(), 10);
        for t in &mixed {
            assert_eq!(t.relevant, t.article_event == labels[t.video]);
        }
        let mut seen: Vec<usize> = mixed.iter().filter(|t| t.relevant).map(|t| t.video).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn single_event_cannot_sample_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pairs(&[0, 0], 1, 1, &mut rng).is_err());
        assert!(sample_pairs(&[0, 0], 1, 0, &mut rng).is_ok());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("u".parse::<Variant>().unwrap(), Variant::U);
        assert!("Q".parse::<Variant>().is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"variant":"C","epochs":3}"#).unwrap();
        assert_eq!((cfg.variant, cfg.epochs, cfg.batch_size), (Variant::C, 3, 64));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochz":3}"#).is_err());
    }
}
