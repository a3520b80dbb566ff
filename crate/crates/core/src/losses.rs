//! Pairwise metric losses and classification losses, each returning the
//! value together with its analytic gradient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nn::softmax_rows;

pub const DEFAULT_MARGIN: f64 = 1.0;

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Text and video embeddings of `B` pairs plus their relevance flags.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub text: DMatrix<f64>,
    pub video: DMatrix<f64>,
    pub relevant: Vec<bool>,
}

impl PairBatch {
    pub fn new(text: DMatrix<f64>, video: DMatrix<f64>, relevant: Vec<bool>) -> Result<Self> {
        if text.shape() != video.shape() || text.nrows() != relevant.len() {
            return Err(Error::shape(format!(
                "text {:?}, video {:?} and {} relevance flags",
                text.shape(),
                video.shape(),
                relevant.len()
            )));
        }
        Ok(Self { text, video, relevant })
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| (self.text.row(i) - self.video.row(i)).norm()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub value: f64,
    pub d_text: DMatrix<f64>,
    pub d_video: DMatrix<f64>,
}

/// `L = 1/(2N) sum_i h_i d_i^2 + (1 - h_i) max(margin - d_i, 0)^2`.
///
/// The hinge term uses subgradient 0 at `d = 0`.
pub fn contrastive_loss(batch: &PairBatch, margin: f64) -> Result<ContrastiveOutput> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    check_finite(&batch.text, "text embedding")?;
    check_finite(&batch.video, "video embedding")?;
    let n = batch.len();
    let (rows, cols) = batch.text.shape();
    let mut d_text = DMatrix::zeros(rows, cols);
    if n == 0 {
        return Ok(ContrastiveOutput { value: 0.0, d_video: d_text.clone(), d_text });
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let diff = batch.text.row(i) - batch.video.row(i);
        let d = diff.norm();
        if batch.relevant[i] {
            total += d * d;
            d_text.row_mut(i).copy_from(&(diff * inv_n));
        } else if d < margin {
            let gap = margin - d;
            total += gap * gap;
            if d > 0.0 {
                d_text.row_mut(i).copy_from(&(diff * (-inv_n * gap / d)));
            }
        }
    }
    let d_video = -&d_text;
    Ok(ContrastiveOutput { value: total * 0.5 * inv_n, d_text, d_video })
}

/// Logits for `B` samples and their one-hot event labels.
#[derive(Debug, Clone)]
pub struct LabelBatch {
    pub logits: DMatrix<f64>,
    pub one_hot: DMatrix<f64>,
}

impl LabelBatch {
    pub fn new(logits: DMatrix<f64>, one_hot: DMatrix<f64>) -> Result<Self> {
        if logits.shape() != one_hot.shape() {
            return Err(Error::shape(format!("logits {:?} vs labels {:?}", logits.shape(), one_hot.shape())));
        }
        for (i, row) in one_hot.row_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!("label row {i} is not one-hot")));
            }
        }
        Ok(Self { logits, one_hot })
    }

    pub fn from_labels(logits: DMatrix<f64>, labels: &[usize]) -> Result<Self> {
        let classes = logits.ncols();
        if labels.len() != logits.nrows() || labels.iter().any(|&l| l >= classes) {
            return Err(Error::invalid(format!("{} labels for {} rows of {classes} classes", labels.len(), logits.nrows())));
        }
        let one_hot = DMatrix::from_fn(labels.len(), classes, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        Self::new(logits, one_hot)
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.nrows() == 0
    }

    pub fn probabilities(&self) -> DMatrix<f64> {
        softmax_rows(&self.logits)
    }
}

#[derive(Debug, Clone)]
pub struct LogisticOutput {
    pub value: f64,
    pub d_logits: DMatrix<f64>,
}

/// Batch-mean cross-entropy `-(1/B) sum_i log p_i[y_i]` with `p = softmax(logits)`;
/// the gradient with respect to the logits is `(p - y) / B`.
pub fn logistic_loss(batch: &LabelBatch) -> Result<LogisticOutput> {
    check_finite(&batch.logits, "logits")?;
    let b = batch.len();
    if b == 0 {
        return Ok(LogisticOutput { value: 0.0, d_logits: batch.logits.clone() });
    }
    let mut total = 0.0;
    for (z, y) in batch.logits.row_iter().zip(batch.one_hot.row_iter()) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let target = z.iter().zip(y.iter()).map(|(zv, yv)| zv * yv).sum::<f64>();
        total += lse - target;
    }
    let d_logits = (batch.probabilities() - &batch.one_hot) / b as f64;
    Ok(LogisticOutput { value: total / b as f64, d_logits })
}

#[derive(Debug, Clone)]
pub struct UnifiedOutput {
    pub value: f64,
    pub contrastive: f64,
    pub logistic: f64,
    pub d_text: DMatrix<f64>,
    pub d_video: DMatrix<f64>,
    pub d_title_logits: DMatrix<f64>,
}

/// `L_con + lambda * L_log`; with `lambda = 1` this is the plain sum.
pub fn unified_loss(pairs: &PairBatch, labels: &LabelBatch, lambda: f64, margin: f64) -> Result<UnifiedOutput> {
    if pairs.len() != labels.len() {
        return Err(Error::shape(format!("{} pairs but {} labelled titles", pairs.len(), labels.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let con = contrastive_loss(pairs, margin)?;
    let log = logistic_loss(labels)?;
    Ok(UnifiedOutput {
        value: con.value + lambda * log.value,
        contrastive: con.value,
        logistic: log.value,
        d_text: con.d_text,
        d_video: con.d_video,
        d_title_logits: log.d_logits * lambda,
    })
}

/// `(1/N) sum_i ||target_i - pred_i||^2`, gradient `-2 (target - pred) / N`.
pub fn mse_to_target(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    check_finite(pred, "prediction")?;
    check_finite(target, "target")?;
    let n = pred.nrows();
    if n == 0 {
        return Ok((0.0, pred.clone()));
    }
    let diff = target - pred;
    let value = diff.norm_squared() / n as f64;
    Ok((value, diff * (-2.0 / n as f64)))
}

/// Contrastive loss against a fixed target; only the prediction receives gradient.
pub fn contrastive_to_target(pred: &DMatrix<f64>, target: &DMatrix<f64>, relevant: &[bool], margin: f64) -> Result<(f64, DMatrix<f64>)> {
    let batch = PairBatch::new(target.clone(), pred.clone(), relevant.to_vec())?;
    let out = contrastive_loss(&batch, margin)?;
    Ok((out.value, out.d_video))
}
