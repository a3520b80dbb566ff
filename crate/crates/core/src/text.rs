//! Text normalization and TF-IDF weighting.
//!
//! Tokens are lowercased alphabetic runs; digits and punctuation split tokens
//! and are discarded. A frozen English stopword list is removed before the
//! Snowball English (Porter2) stemmer is applied.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag of [`STOPWORDS`]; bump when the list changes.
pub const STOPWORDS_VERSION: &str = "zed-en-1";

/// Frozen English stopword list. Contraction fragments (`don`, `t`, `ll`...)
/// are included because apostrophes split tokens.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any", "are",
    "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "couldn", "d", "did", "didn", "do", "does", "doesn", "doing", "don", "down", "during",
    "each", "few", "for", "from", "further", "had", "hadn", "has", "hasn", "have", "haven", "having",
    "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into",
    "is", "isn", "it", "its", "itself", "just", "ll", "m", "ma", "me", "mightn", "more", "most",
    "mustn", "my", "myself", "needn", "no", "nor", "not", "now", "o", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "re", "s", "same",
    "shan", "she", "should", "shouldn", "so", "some", "such", "t", "than", "that", "the", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "ve", "very", "was", "wasn", "we", "were", "weren", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "won", "wouldn", "y",
    "you", "your", "yours", "yourself", "yourselves",
];

/// Stateless tokenizer; holds the stemmer and stopword set.
pub struct Tokenizer {
    stemmer: Stemmer,
    stopwords: BTreeSet<&'static str>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            stemmer: Stemmer::create(Algorithm::English),
            stopwords: STOPWORDS.iter().copied().collect(),
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphabetic())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .filter(|w| !self.stopwords.contains(w.as_str()))
            .map(|w| self.stemmer.stem(&w).into_owned())
            .filter(|w| !w.is_empty())
            .collect()
    }

    pub fn stem(&self, word: &str) -> String {
        self.stemmer.stem(word).into_owned()
    }
}

/// Convenience wrapper around a default [`Tokenizer`].
pub fn tokenize_normalize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Builds from unordered pairs; duplicate indices are summed and exact zeros dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite sparse entry at index {i}")));
            }
            *acc.entry(i).or_insert(0.0) += v;
        }
        Ok(Self { entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect() })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { entries: self.entries.iter().map(|&(i, v)| (i, v * alpha)).collect() }
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Fitted vocabulary with smoothed inverse document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    doc_count: usize,
    min_df: usize,
    max_df_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    term: String,
    index: usize,
    idf: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    doc_count: usize,
    min_df: usize,
    max_df_ratio: f64,
    stopwords: String,
    terms: Vec<VocabEntry>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            doc_count: self.doc_count,
            min_df: self.min_df,
            max_df_ratio: self.max_df_ratio,
            stopwords: STOPWORDS_VERSION.to_string(),
            terms: self
                .terms
                .iter()
                .zip(&self.idf)
                .enumerate()
                .map(|(index, (term, &idf))| VocabEntry { term: term.clone(), index, idf })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.stopwords != STOPWORDS_VERSION {
            return Err(Error::invalid(format!("vocabulary built with stopword list {}", file.stopwords)));
        }
        let mut terms = vec![String::new(); file.terms.len()];
        let mut idf = vec![0.0; file.terms.len()];
        let mut index = HashMap::new();
        for e in file.terms {
            if e.index >= terms.len() || index.insert(e.term.clone(), e.index).is_some() || !terms[e.index].is_empty() {
                return Err(Error::invalid(format!("vocabulary indices are not a bijection at term {:?}", e.term)));
            }
            if !(e.idf > 0.0 && e.idf.is_finite()) {
                return Err(Error::invalid(format!("term {:?} has invalid idf {}", e.term, e.idf)));
            }
            terms[e.index] = e.term;
            idf[e.index] = e.idf;
        }
        Ok(Self {
            terms,
            index,
            idf,
            doc_count: file.doc_count,
            min_df: file.min_df,
            max_df_ratio: file.max_df_ratio,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

/// Keeps terms with document frequency in `[min_df, max_df_ratio * D]`;
/// `idf(t) = ln((1 + D) / (1 + df(t))) + 1`. Terms are indexed in sorted order.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_df: usize, max_df_ratio: f64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    if !(max_df_ratio > 0.0 && max_df_ratio <= 1.0) {
        return Err(Error::invalid(format!("max_df_ratio must be in (0, 1], got {max_df_ratio}")));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let d = corpus.len() as f64;
    let max_df = max_df_ratio * d;
    let kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df && (n as f64) <= max_df)
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("every term was filtered out of the vocabulary"));
    }
    let terms: Vec<String> = kept.iter().map(|(t, _)| (*t).to_string()).collect();
    let idf = kept.iter().map(|&(_, n)| ((1.0 + d) / (1.0 + n as f64)).ln() + 1.0).collect();
    let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary { terms, index, idf, doc_count: corpus.len(), min_df, max_df_ratio })
}

/// Term counts times idf, L2-normalized. Out-of-vocabulary tokens are ignored.
pub fn tfidf_vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> SparseVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.index_of(t.as_ref()) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    }
    let weighted: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c * vocab.idf[i])).collect();
    let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return SparseVector::default();
    }
    SparseVector { entries: weighted.into_iter().map(|(i, v)| (i, v / norm)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_ab() -> Vocabulary {
        build_vocab(&[vec!["a", "b"], vec!["a"]], 1, 1.0).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize_normalize("Renovating homes!"), vec!["renov", "home"]);
        assert!(tokenize_normalize("").is_empty());
        assert!(tokenize_normalize("the a an").is_empty());
        assert_eq!(tokenize_normalize("Boats2boats, 2024!"), vec!["boat", "boat"]);
    }

    #[test]
    fn idf_values() {
        let v = vocab_ab();
        assert!((v.idf(v.index_of("a").unwrap()) - 1.0).abs() < 1e-12);
        assert!((v.idf(v.index_of("b").unwrap()) - 1.405465).abs() < 1e-6);
    }

    #[test]
    fn min_df_drops_singletons() {
        let v = build_vocab(&[vec!["a", "b"], vec!["a", "c"]], 2, 1.0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.index_of("a"), Some(0));
    }

    #[test]
    fn max_df_drops_ubiquitous_terms() {
        let v = build_vocab(&[vec!["a", "b"], vec!["a", "c"]], 1, 0.5).unwrap();
        assert_eq!(v.index_of("a"), None);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocab_errors() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(build_vocab(&empty, 1, 1.0).is_err());
        assert!(build_vocab(&[vec!["a"]], 2, 1.0).is_err());
    }

    #[test]
    fn tfidf_normalization() {
        let v = vocab_ab();
        let s = tfidf_vectorize(&["a", "b"], &v);
        let a = v.index_of("a").unwrap();
        let b = v.index_of("b").unwrap();
        assert_eq!(s.entries().len(), 2);
        let dense = s.to_dense(v.len());
        assert!((dense[a] - 0.57974).abs() < 1e-5);
        assert!((dense[b] - 0.81480).abs() < 1e-5);
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfidf_oov_is_zero() {
        assert!(tfidf_vectorize(&["zzz", "qqq"], &vocab_ab()).is_zero());
    }

    #[test]
    fn duplicate_token_doubles_weight() {
        let v = vocab_ab();
        let s = tfidf_vectorize(&["a", "a", "b"], &v).to_dense(v.len());
        let ratio = s[v.index_of("a").unwrap()] / s[v.index_of("b").unwrap()];
        assert!((ratio - 2.0 / 1.405465).abs() < 1e-6);
    }

    #[test]
    fn vocab_json_round_trip() {
        let v = build_vocab(&[vec!["x", "y", "z"], vec!["x"]], 1, 1.0).unwrap();
        assert_eq!(Vocabulary::from_json(&v.to_json().unwrap()).unwrap(), v);
    }

    #[test]
    fn sparse_from_pairs_sorts_and_merges() {
        let s = SparseVector::from_pairs([(3, 1.0), (1, 2.0), (3, 0.5)]).unwrap();
        assert_eq!(s.entries(), &[(1, 2.0), (3, 1.5)]);
        assert!(SparseVector::from_pairs([(0, f64::NAN)]).is_err());
    }
}
