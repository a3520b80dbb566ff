//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-sided Jacobi SVD. Returns `(U, sigma, V)` with `A = U diag(sigma) Vᵀ`,
/// singular values sorted descending and `U` of size `m × min(m, n)`.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let transposed = a.nrows() < a.ncols();
    // Orthogonalize the columns of the tall orientation.
    let mut g = if transposed { a.transpose() } else { a.clone() };
    let n = g.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut g, &mut v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * x - s * y;
                        m[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| g.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut left = DMatrix::zeros(g.nrows(), n);
    let mut right = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            left.set_column(dst, &(g.column(src) / norms[src]));
        }
        right.set_column(dst, &v.column(src));
    }
    if transposed {
        (right, sigma, left)
    } else {
        (left, sigma, right)
    }
}

/// Largest principal angle (radians) between the column spaces of two
/// matrices with orthonormal columns, via the sine form.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let residual = a - b * (b.transpose() * a);
    let (_, s, _) = jacobi_svd(&residual);
    s[0].min(1.0).asin()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// AP by its definition: for each relevant rank, recount the prefix.
pub fn brute_force_ap(flags: &[bool], total_relevant: usize) -> f64 {
    let mut sum = 0.0;
    for k in 1..=flags.len() {
        if flags[k - 1] {
            let prefix = flags[..k].iter().filter(|&&f| f).count();
            sum += prefix as f64 / k as f64;
        }
    }
    sum / total_relevant as f64
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}
