//! Latent semantic indexing: randomized truncated SVD of the TF-IDF
//! term-document matrix and folding-in of new documents.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_feature_file, write_feature_file, FeatureMatrix};
use crate::text::{tfidf_vectorize, SparseVector, Tokenizer, Vocabulary};

/// Extra random directions sampled beyond the target rank.
pub const OVERSAMPLING: usize = 10;
/// Power iterations in the range finder. Seven leave subspace errors near
/// 1e-4 rad on flat spectra (sigma_{k+11}/sigma_k around 0.55); fourteen
/// bring them below 1e-6.
pub const DEFAULT_POWER_ITERS: usize = 14;
pub const DEFAULT_TOPICS: usize = 64;

/// Sparse `rows x columns.len()` matrix stored by column.
#[derive(Debug, Clone)]
pub struct TermDocMatrix {
    rows: usize,
    columns: Vec<SparseVector>,
}

impl TermDocMatrix {
    pub fn new(rows: usize, columns: Vec<SparseVector>) -> Result<Self> {
        for (j, c) in columns.iter().enumerate() {
            if c.max_index().is_some_and(|i| i >= rows) {
                return Err(Error::shape(format!("column {j} has an index beyond {rows} rows")));
            }
            if c.entries().iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::Numeric(format!("column {j} has a non-finite entry")));
            }
        }
        Ok(Self { rows, columns })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let columns = (0..m.ncols())
            .map(|j| SparseVector::from_pairs((0..m.nrows()).map(|i| (i, m[(i, j)]))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(m.nrows(), columns)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// `A * x` for dense `x` with `ncols` rows.
    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col.entries() {
                for c in 0..x.ncols() {
                    out[(i, c)] += v * x[(j, c)];
                }
            }
        }
        out
    }

    /// `A^T * q` for dense `q` with `nrows` rows.
    fn tr_mul(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.columns.len(), q.ncols());
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col.entries() {
                for c in 0..q.ncols() {
                    out[(j, c)] += v * q[(i, c)];
                }
            }
        }
        out
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Truncated SVD by randomized range finding: Gaussian sketch with
/// [`OVERSAMPLING`] extra columns, `n_iter` re-orthonormalized power
/// iterations, then an exact SVD of the projected `l x D` matrix.
///
/// Returns the leading `k` left singular vectors (sign-normalized) and
/// singular values in descending order.
pub fn svd_lowrank(a: &TermDocMatrix, k: usize, n_iter: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let min_dim = a.nrows().min(a.ncols());
    if k == 0 || k > min_dim {
        return Err(Error::invalid(format!(
            "rank {k} must be in 1..={min_dim} for a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let l = (k + OVERSAMPLING).min(min_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(a.ncols(), l, |_, _| StandardNormal.sample(&mut rng));

    let mut q = orthonormalize(a.mul(&omega));
    for _ in 0..n_iter {
        let z = orthonormalize(a.tr_mul(&q));
        q = orthonormalize(a.mul(&z));
    }
    let b = a.tr_mul(&q).transpose();
    let svd = SVD::new(b, true, false);
    let small_u = svd.u.ok_or_else(|| Error::Numeric("SVD did not produce left vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    order.truncate(k);

    let picked = DMatrix::from_fn(small_u.nrows(), k, |i, c| small_u[(i, order[c])]);
    let mut u = &q * picked;
    fix_signs(&mut u);
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite singular value".into()));
    }
    Ok((u, sigma))
}

/// Fitted topic model: vocabulary, `V x K` topic basis and singular values.
#[derive(Debug, Clone)]
pub struct TopicModel {
    vocab: Vocabulary,
    basis: DMatrix<f64>,
    sigma: Vec<f64>,
    meta: LsiMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiMeta {
    pub topics: usize,
    pub seed: u64,
    pub power_iters: usize,
    pub oversampling: usize,
    pub vocab_size: usize,
    pub corpus_docs: usize,
    pub corpus_digest: String,
}

fn corpus_digest(docs: &[SparseVector]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update((d.entries().len() as u64).to_le_bytes());
        for &(i, v) in d.entries() {
            h.update((i as u64).to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Fits a `k`-topic model on TF-IDF document vectors indexed against `vocab`.
pub fn fit_lsi(vocab: &Vocabulary, docs: &[SparseVector], k: usize, seed: u64) -> Result<TopicModel> {
    fit_lsi_with(vocab, docs, k, seed, DEFAULT_POWER_ITERS)
}

pub fn fit_lsi_with(vocab: &Vocabulary, docs: &[SparseVector], k: usize, seed: u64, power_iters: usize) -> Result<TopicModel> {
    if docs.len() < k {
        return Err(Error::invalid(format!("corpus of {} documents is smaller than {k} topics", docs.len())));
    }
    let matrix = TermDocMatrix::new(vocab.len(), docs.to_vec())?;
    let (basis, sigma) = svd_lowrank(&matrix, k, power_iters, seed)?;
    let tol = sigma[0] * 1e-10;
    if sigma.iter().any(|&s| s <= tol) {
        return Err(Error::Numeric(format!(
            "term-document matrix has rank below {k}; reduce the topic count"
        )));
    }
    let meta = LsiMeta {
        topics: k,
        seed,
        power_iters,
        oversampling: OVERSAMPLING,
        vocab_size: vocab.len(),
        corpus_docs: docs.len(),
        corpus_digest: corpus_digest(docs),
    };
    Ok(TopicModel { vocab: vocab.clone(), basis, sigma, meta })
}

impl TopicModel {
    /// Builds a model from explicit parts; the basis is `vocab.len() x sigma.len()`.
    pub fn from_parts(vocab: Vocabulary, basis: DMatrix<f64>, sigma: Vec<f64>, meta: LsiMeta) -> Result<Self> {
        if basis.nrows() != vocab.len() || basis.ncols() != sigma.len() {
            return Err(Error::shape(format!(
                "basis is {}x{}, expected {}x{}",
                basis.nrows(),
                basis.ncols(),
                vocab.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("singular values must be positive and non-increasing"));
        }
        Ok(Self { vocab, basis, sigma, meta })
    }

    pub fn topics(&self) -> usize {
        self.sigma.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn meta(&self) -> &LsiMeta {
        &self.meta
    }

    /// Folding-in: `sigma^-1 * U^T * doc`.
    pub fn project_doc(&self, doc: &SparseVector) -> Vec<f64> {
        let mut out = vec![0.0; self.topics()];
        for &(t, v) in doc.entries() {
            if t >= self.basis.nrows() {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.basis[(t, k)] * v;
            }
        }
        out.iter_mut().zip(&self.sigma).for_each(|(o, s)| *o /= s);
        out
    }

    /// Tokenize, weight and project raw text.
    pub fn project_text(&self, tokenizer: &Tokenizer, text: &str) -> Vec<f64> {
        self.project_doc(&tfidf_vectorize(&tokenizer.tokenize(text), &self.vocab))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows: Vec<Vec<f64>> = (0..self.basis.nrows()).map(|i| self.basis.row(i).iter().copied().collect()).collect();
        let basis = if rows.is_empty() {
            FeatureMatrix::new(0, self.topics(), vec![])?
        } else {
            FeatureMatrix::from_rows_f64(&rows)?
        };
        write_feature_file(&basis, &dir.join("basis.zedf"))?;
        write_feature_file(&FeatureMatrix::from_rows_f64(std::slice::from_ref(&self.sigma))?, &dir.join("sigma.zedf"))?;
        self.vocab.save(&dir.join("vocab.json"))?;
        let meta_path = dir.join("lsi.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("lsi.json");
        let meta: LsiMeta =
            serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
        let basis_file = read_feature_file(&dir.join("basis.zedf"))?;
        let sigma_file = read_feature_file(&dir.join("sigma.zedf"))?;
        if sigma_file.rows() != 1 || sigma_file.cols() != meta.topics {
            return Err(Error::shape("sigma file does not match the topic count"));
        }
        let basis = DMatrix::from_fn(basis_file.rows(), basis_file.cols(), |i, j| f64::from(basis_file.row(i)[j]));
        let sigma = sigma_file.data().iter().map(|&v| f64::from(v)).collect();
        Self::from_parts(vocab, basis, sigma, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;

    fn dense(rows: usize, cols: usize, vals: &[f64]) -> TermDocMatrix {
        TermDocMatrix::from_dense(&DMatrix::from_row_slice(rows, cols, vals)).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let a = dense(3, 3, &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let (u, s) = svd_lowrank(&a, 2, DEFAULT_POWER_ITERS, 1).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
        assert!((u[(0, 0)] - 1.0).abs() < 1e-12 && (u[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_closed_form() {
        let u0 = [0.6, 0.8, 0.0];
        let v0 = [0.0, 1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
        let m = DMatrix::from_fn(3, 4, |i, j| 5.0 * u0[i] * v0[j]);
        let (u, s) = svd_lowrank(&TermDocMatrix::from_dense(&m).unwrap(), 1, 3, 9).unwrap();
        assert!((s[0] - 5.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((u[(i, 0)] - u0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_out_of_range() {
        let a = dense(2, 3, &[1.0; 6]);
        assert!(svd_lowrank(&a, 3, 2, 0).is_err());
        assert!(svd_lowrank(&a, 0, 2, 0).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        let col = SparseVector::from_pairs([(0, 1.0)]).unwrap();
        assert!(TermDocMatrix::new(0, vec![col]).is_err());
        assert!(SparseVector::from_pairs([(0, f64::INFINITY)]).is_err());
    }

    fn one_hot_corpus() -> (Vocabulary, Vec<SparseVector>) {
        let vocab = build_vocab(&[vec!["a"], vec!["b"], vec!["c"]], 1, 1.0).unwrap();
        let docs = (0..3).map(|i| SparseVector::from_pairs([(i, 1.0)]).unwrap()).collect();
        (vocab, docs)
    }

    #[test]
    fn orthogonal_docs_give_equal_sigmas() {
        let (vocab, docs) = one_hot_corpus();
        let model = fit_lsi(&vocab, &docs, 3, 4).unwrap();
        for s in model.sigma() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_smaller_than_topics() {
        let (vocab, docs) = one_hot_corpus();
        assert!(fit_lsi(&vocab, &docs[..2], 3, 0).is_err());
    }

    #[test]
    fn folding_in_direct_substitution() {
        let vocab = build_vocab(&[vec!["a"], vec!["b"], vec!["c"]], 1, 1.0).unwrap();
        let basis = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let meta = LsiMeta {
            topics: 2,
            seed: 0,
            power_iters: 0,
            oversampling: 0,
            vocab_size: 3,
            corpus_docs: 0,
            corpus_digest: String::new(),
        };
        let model = TopicModel::from_parts(vocab, basis, vec![2.0, 1.0], meta).unwrap();
        let doc = SparseVector::from_pairs([(0, 2.0)]).unwrap();
        assert_eq!(model.project_doc(&doc), vec![1.0, 0.0]);
        assert_eq!(model.project_doc(&SparseVector::default()), vec![0.0, 0.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let (vocab, docs) = one_hot_corpus();
        let model = fit_lsi(&vocab, &docs, 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = TopicModel::load(dir.path()).unwrap();
        assert_eq!(back.meta(), model.meta());
        assert_eq!(back.vocab(), model.vocab());
        for (a, b) in back.sigma().iter().zip(model.sigma()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
