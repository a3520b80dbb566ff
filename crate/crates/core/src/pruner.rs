//! Dataset pruning by cross-validated misclassification.
//!
//! Each round draws a fresh stratified fold split, trains an event classifier
//! on all but one fold and flags held-out videos whose top-1 prediction is
//! wrong. A video is removed when flagged in at least `vote_threshold` rounds.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{split_folds, Manifest, VideoRecord};
use crate::nn::batch_from_rows;
use crate::trainer::{argmax_rows, train_video_classifier, ClassifierConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub folds: usize,
    pub rounds: usize,
    /// Defaults to a majority of rounds, `ceil(rounds / 2)`.
    pub vote_threshold: Option<usize>,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { folds: 5, rounds: 5, vote_threshold: None, classifier: ClassifierConfig::default(), seed: 0 }
    }
}

impl PruneConfig {
    pub fn threshold(&self) -> usize {
        self.vote_threshold.unwrap_or(self.rounds.div_ceil(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    /// Per video, whether it was misclassified in each round.
    pub misclassified: BTreeMap<String, Vec<bool>>,
    pub removal_fraction: f64,
    pub folds: usize,
    pub rounds: usize,
    pub vote_threshold: usize,
    pub seed: u64,
}

impl PruneReport {
    /// Copy of `manifest` restricted to kept videos.
    pub fn apply(&self, manifest: &Manifest) -> Manifest {
        let kept: BTreeSet<&str> = self.kept.iter().map(String::as_str).collect();
        Manifest {
            events: manifest.events.clone(),
            videos: manifest.videos.iter().filter(|v| kept.contains(v.video_id.as_str())).cloned().collect(),
        }
    }
}

/// Trains on `train` and returns, per held-out video, whether its top-1
/// prediction matches its label.
pub fn classify_fold(
    train_features: &[Vec<f64>],
    train_labels: &[usize],
    heldout_features: &[Vec<f64>],
    heldout_labels: &[usize],
    num_events: usize,
    cfg: &ClassifierConfig,
) -> Result<Vec<bool>> {
    let covered: BTreeSet<usize> = train_labels.iter().copied().collect();
    if let Some(missing) = heldout_labels.iter().find(|l| !covered.contains(l)) {
        return Err(Error::invalid(format!("event {missing} is held out but absent from the training folds")));
    }
    if heldout_features.len() != heldout_labels.len() {
        return Err(Error::shape("held-out features and labels differ in length"));
    }
    if heldout_features.is_empty() {
        return Ok(Vec::new());
    }
    let model = train_video_classifier(train_features, train_labels, num_events, cfg)?;
    let predicted = argmax_rows(&model.apply(&batch_from_rows(heldout_features)?)?);
    Ok(predicted.iter().zip(heldout_labels).map(|(p, l)| p == l).collect())
}

fn run_round(videos: &[VideoRecord], features: &[Vec<f64>], num_events: usize, cfg: &PruneConfig, round: usize) -> Result<Vec<bool>> {
    let seed = cfg.seed.wrapping_add(round as u64);
    let assignment = split_folds(videos, cfg.folds, seed)?;
    let labels: Vec<usize> = videos.iter().map(|v| v.event_id).collect();
    let mut wrong = vec![false; videos.len()];
    for fold in 0..cfg.folds {
        let (train_idx, held_idx) = assignment.split(videos, fold);
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
            (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
        };
        let (tf, tl) = pick(&train_idx);
        let (hf, hl) = pick(&held_idx);
        let clf = ClassifierConfig {
            seed: seed.wrapping_mul(31).wrapping_add(fold as u64),
            ..cfg.classifier.clone()
        };
        let correct = classify_fold(&tf, &tl, &hf, &hl, num_events, &clf)?;
        for (&i, ok) in held_idx.iter().zip(correct) {
            wrong[i] = !ok;
        }
    }
    Ok(wrong)
}

/// Runs `rounds` independent cross-validation rounds and removes videos
/// misclassified in at least the vote threshold of them.
pub fn prune_dataset(videos: &[VideoRecord], features: &[Vec<f64>], num_events: usize, cfg: &PruneConfig) -> Result<PruneReport> {
    if cfg.folds < 2 || cfg.rounds < 1 {
        return Err(Error::invalid(format!("need folds >= 2 and rounds >= 1, got {} and {}", cfg.folds, cfg.rounds)));
    }
    if videos.len() != features.len() {
        return Err(Error::shape("videos and features differ in length"));
    }
    let threshold = cfg.threshold();
    if threshold == 0 {
        return Err(Error::invalid("vote threshold must be at least 1"));
    }
    let per_round: Vec<Vec<bool>> = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| run_round(videos, features, num_events, cfg, r))
        .collect::<Result<_>>()?;

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut misclassified = BTreeMap::new();
    for (i, v) in videos.iter().enumerate() {
        let flags: Vec<bool> = per_round.iter().map(|round| round[i]).collect();
        let votes = flags.iter().filter(|&&f| f).count();
        if votes >= threshold {
            removed.push(v.video_id.clone());
        } else {
            kept.push(v.video_id.clone());
        }
        misclassified.insert(v.video_id.clone(), flags);
    }
    let removal_fraction = if videos.is_empty() { 0.0 } else { removed.len() as f64 / videos.len() as f64 };
    Ok(PruneReport {
        kept,
        removed,
        misclassified,
        removal_fraction,
        folds: cfg.folds,
        rounds: cfg.rounds,
        vote_threshold: threshold,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn separable(per_event: usize) -> (Vec<VideoRecord>, Vec<Vec<f64>>) {
        let mut videos = Vec::new();
        let mut feats = Vec::new();
        for e in 0..3 {
            for i in 0..per_event {
                videos.push(VideoRecord {
                    video_id: format!("e{e}v{i}"),
                    event_id: e,
                    title: String::new(),
                    feature_path: PathBuf::new(),
                });
                let mut f = vec![0.0; 4];
                f[e] = 3.0;
                f[3] = (i as f64 * 0.37).sin() * 0.2;
                feats.push(f);
            }
        }
        (videos, feats)
    }

    fn quick() -> ClassifierConfig {
        ClassifierConfig { hidden: 8, learning_rate: 0.05, epochs: 20, batch_size: 16, ..ClassifierConfig::default() }
    }

    #[test]
    fn heldout_copy_of_training_video_is_correct() {
        let (_, feats) = separable(5);
        let labels: Vec<usize> = (0..15).map(|i| i / 5).collect();
        let flags = classify_fold(&feats, &labels, &feats[..1], &labels[..1], 3, &quick()).unwrap();
        assert_eq!(flags, vec![true]);
    }

    #[test]
    fn unseen_heldout_event_is_an_error() {
        let (_, feats) = separable(2);
        assert!(classify_fold(&feats[..2], &[0, 0], &feats[2..3], &[1], 3, &quick()).is_err());
    }

    #[test]
    fn unreachable_threshold_removes_nothing() {
        let (videos, feats) = separable(6);
        let cfg = PruneConfig { rounds: 2, vote_threshold: Some(3), classifier: quick(), ..PruneConfig::default() };
        let report = prune_dataset(&videos, &feats, 3, &cfg).unwrap();
        assert!(report.removed.is_empty());
        assert_eq!(report.kept.len(), videos.len());
    }

    #[test]
    fn partition_and_determinism() {
        let (videos, mut feats) = separable(6);
        // Swap one video's features into another event's region.
        feats[0] = feats[10].clone();
        let cfg = PruneConfig { rounds: 3, classifier: quick(), seed: 4, ..PruneConfig::default() };
        let a = prune_dataset(&videos, &feats, 3, &cfg).unwrap();
        let b = prune_dataset(&videos, &feats, 3, &cfg).unwrap();
        assert_eq!(a, b);
        let kept: BTreeSet<_> = a.kept.iter().collect();
        let removed: BTreeSet<_> = a.removed.iter().collect();
        assert!(kept.is_disjoint(&removed));
        assert_eq!(kept.len() + removed.len(), videos.len());
        assert!(a.removed.contains(&"e0v0".to_string()));
    }

    #[test]
    fn bad_config() {
        let (videos, feats) = separable(5);
        let cfg = PruneConfig { folds: 1, ..PruneConfig::default() };
        assert!(prune_dataset(&videos, &feats, 3, &cfg).is_err());
        let cfg = PruneConfig { rounds: 0, ..PruneConfig::default() };
        assert!(prune_dataset(&videos, &feats, 3, &cfg).is_err());
    }
}
