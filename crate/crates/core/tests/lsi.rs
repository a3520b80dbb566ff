mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zed_core::lsi::{fit_lsi, svd_lowrank, TermDocMatrix, DEFAULT_POWER_ITERS};
use zed_core::text::{build_vocab, tfidf_vectorize, SparseVector, Vocabulary};

use common::{jacobi_svd, random_matrix};

/// Three planted topics with disjoint vocabularies plus shared filler words.
fn planted_corpus(docs_per_topic: usize, seed: u64) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for topic in 0..3 {
        for _ in 0..docs_per_topic {
            let doc = (0..40)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        format!("t{topic}w{}", rng.random_range(0..15))
                    } else {
                        format!("shared{}", rng.random_range(0..30))
                    }
                })
                .collect();
            docs.push(doc);
            labels.push(topic);
        }
    }
    (docs, labels)
}

fn vectorize(docs: &[Vec<String>]) -> (Vocabulary, Vec<SparseVector>) {
    let vocab = build_vocab(docs, 1, 1.0).unwrap();
    let vectors = docs.iter().map(|d| tfidf_vectorize(d, &vocab)).collect();
    (vocab, vectors)
}

fn dense(vectors: &[SparseVector], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        for &(i, x) in v.entries() {
            m[(i, j)] = x;
        }
    }
    m
}

fn align_sign(reference: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = reference.iter().zip(v).map(|(a, b)| a * b).sum();
    dot.signum()
}

#[test]
fn jacobi_oracle_reconstructs() {
    for (r, c) in [(6, 4), (4, 6), (5, 5)] {
        let a = random_matrix(r, c, 7);
        let (u, s, v) = jacobi_svd(&a);
        let k = s.len();
        let rebuilt = u.columns(0, k) * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.columns(0, k).transpose();
        assert!((rebuilt - &a).abs().max() < 1e-12);
    }
}

#[test]
fn diagonal_and_rank_one() {
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
    let (_, s) = svd_lowrank(&TermDocMatrix::from_dense(&diag).unwrap(), 2, DEFAULT_POWER_ITERS, 0).unwrap();
    assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);

    let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
    let v = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
    let a = &u * v.transpose() * 5.0;
    let (uk, s) = svd_lowrank(&TermDocMatrix::from_dense(&a).unwrap(), 1, DEFAULT_POWER_ITERS, 3).unwrap();
    assert!((s[0] - 5.0).abs() < 1e-12);
    let sign = align_sign(u.as_slice(), uk.column(0).as_slice());
    assert!((uk.column(0) * sign - &u).norm() < 1e-12);
}

#[test]
fn random_triplets_match_dense_oracle() {
    for seed in 0..5 {
        let a = random_matrix(30, 40, 90 + seed);
        let (u, s) = svd_lowrank(&TermDocMatrix::from_dense(&a).unwrap(), 10, DEFAULT_POWER_ITERS, seed).unwrap();
        let (u_ref, s_ref, _) = jacobi_svd(&a);
        for j in 0..10 {
            assert!((s[j] - s_ref[j]).abs() / s_ref[j] < 1e-5);
            let col = u.column(j);
            let sign = align_sign(u_ref.column(j).as_slice(), col.as_slice());
            assert!((col * sign - u_ref.column(j)).amax() < 1e-5, "seed {seed} vector {j}");
        }
    }
}

#[test]
fn planted_topics_are_recovered() {
    let (docs, labels) = planted_corpus(20, 1);
    let (vocab, vectors) = vectorize(&docs);
    let model = fit_lsi(&vocab, &vectors, 3, 0).unwrap();
    let projected: Vec<Vec<f64>> = vectors.iter().map(|v| model.project_doc(v)).collect();
    let mut centroids = vec![vec![0.0; 3]; 3];
    for (p, &l) in projected.iter().zip(&labels) {
        centroids[l].iter_mut().zip(p).for_each(|(c, x)| *c += x / 20.0);
    }
    let correct = projected
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| {
            let dist = |c: &Vec<f64>| c.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))) == Some(l)
        })
        .count();
    assert!(correct as f64 / 60.0 >= 0.9, "{correct}/60");
}

#[test]
fn single_topic_matches_power_method() {
    let (docs, _) = planted_corpus(10, 2);
    let (vocab, vectors) = vectorize(&docs);
    let model = fit_lsi(&vocab, &vectors, 1, 5).unwrap();
    let a = dense(&vectors, vocab.len());
    let gram = &a * a.transpose();
    let mut x = DVector::from_element(vocab.len(), 1.0);
    for _ in 0..2000 {
        x = &gram * &x;
        x /= x.norm();
    }
    let sigma = (x.transpose() * &gram * &x)[(0, 0)].sqrt();
    assert!((model.sigma()[0] - sigma).abs() / sigma < 1e-9);
    let u = model.basis().column(0);
    let sign = align_sign(x.as_slice(), u.as_slice());
    assert!((u * sign - &x).amax() < 1e-6);
}

#[test]
fn duplicated_corpus_scales_sigma() {
    let (docs, _) = planted_corpus(8, 3);
    let (vocab, vectors) = vectorize(&docs);
    let doubled: Vec<SparseVector> = vectors.iter().flat_map(|v| [v.clone(), v.clone()]).collect();
    let once = fit_lsi(&vocab, &vectors, 4, 0).unwrap();
    let twice = fit_lsi(&vocab, &doubled, 4, 0).unwrap();
    for k in 0..4 {
        assert!((twice.sigma()[k] - once.sigma()[k] * 2f64.sqrt()).abs() < 1e-8);
        let (a, b) = (once.basis().column(k), twice.basis().column(k));
        let sign = align_sign(a.as_slice(), b.as_slice());
        assert!((b * sign - a).amax() < 1e-6);
    }
}

#[test]
fn training_doc_projects_to_right_singular_row() {
    let (docs, _) = planted_corpus(6, 4);
    let (vocab, vectors) = vectorize(&docs);
    let k = 5;
    let model = fit_lsi(&vocab, &vectors, k, 9).unwrap();
    let (u_ref, _, v_ref) = jacobi_svd(&dense(&vectors, vocab.len()));
    for (j, doc) in vectors.iter().enumerate() {
        let p = model.project_doc(doc);
        for t in 0..k {
            let sign = align_sign(u_ref.column(t).as_slice(), model.basis().column(t).as_slice());
            assert!((p[t] * sign - v_ref[(j, t)]).abs() < 1e-5, "doc {j} topic {t}");
        }
    }
}

#[test]
fn basis_is_orthonormal_and_sigma_sorted() {
    let (docs, _) = planted_corpus(10, 5);
    let (vocab, vectors) = vectorize(&docs);
    let model = fit_lsi(&vocab, &vectors, 8, 1).unwrap();
    let gram = model.basis().transpose() * model.basis();
    assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-6);
    assert!(model.sigma().windows(2).all(|w| w[0] >= w[1]) && model.sigma()[7] > 0.0);
}

#[test]
fn save_load_round_trip() {
    let (docs, _) = planted_corpus(5, 6);
    let (vocab, vectors) = vectorize(&docs);
    let model = fit_lsi(&vocab, &vectors, 3, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = zed_core::lsi::TopicModel::load(dir.path()).unwrap();
    assert_eq!(back.topics(), 3);
    assert_eq!(back.meta(), model.meta());
    // Stored as f32 on disk.
    for (a, b) in model.project_doc(&vectors[0]).iter().zip(back.project_doc(&vectors[0])) {
        assert!((a - b).abs() < 1e-4 * a.abs().max(1.0));
    }
}
