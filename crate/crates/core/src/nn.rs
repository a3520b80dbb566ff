//! Two-layer perceptron towers with explicit forward and backward passes.
//!
//! Batches are `B x d` matrices, one sample per row. Parameters follow the
//! row-vector convention `Y = act2(act1(X W1 + b1) W2 + b2)`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_feature_file, write_feature_file, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
    Tanh,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub hidden: HiddenActivation,
    pub output: OutputActivation,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: DMatrix<f64>,
    pub pre_hidden: DMatrix<f64>,
    pub hidden: DMatrix<f64>,
    pub pre_output: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpMeta {
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    hidden: HiddenActivation,
    output: OutputActivation,
    seed: Option<u64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    hidden: HiddenActivation,
    output: OutputActivation,
    seed: u64,
) -> Result<MlpParams> {
    if d_in == 0 || d_hidden == 0 || d_out == 0 {
        return Err(Error::invalid(format!("layer sizes must be positive, got {d_in}-{d_hidden}-{d_out}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
    };
    let w1 = glorot(d_in, d_hidden);
    let w2 = glorot(d_hidden, d_out);
    Ok(MlpParams {
        w1,
        b1: DVector::zeros(d_hidden),
        w2,
        b2: DVector::zeros(d_out),
        hidden,
        output,
    })
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        for (v, bias) in row.iter_mut().zip(b.iter()) {
            *v += bias;
        }
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

impl MlpParams {
    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check_shapes(&self) -> Result<()> {
        if self.b1.len() != self.w1.ncols() || self.w2.nrows() != self.w1.ncols() || self.b2.len() != self.w2.ncols() {
            return Err(Error::shape(format!(
                "inconsistent parameters: W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
                self.w1.nrows(),
                self.w1.ncols(),
                self.b1.len(),
                self.w2.nrows(),
                self.w2.ncols(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardTrace)> {
        self.check_shapes()?;
        if x.ncols() != self.d_in() {
            return Err(Error::shape(format!("input has {} columns, tower expects {}", x.ncols(), self.d_in())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite tower input".into()));
        }
        let mut pre_hidden = x * &self.w1;
        add_bias(&mut pre_hidden, &self.b1);
        let hidden = match self.hidden {
            HiddenActivation::Relu => pre_hidden.map(|v| v.max(0.0)),
            HiddenActivation::Tanh => pre_hidden.map(f64::tanh),
        };
        let mut pre_output = &hidden * &self.w2;
        add_bias(&mut pre_output, &self.b2);
        let output = match self.output {
            OutputActivation::Softmax => softmax_rows(&pre_output),
            OutputActivation::Tanh => pre_output.map(f64::tanh),
            OutputActivation::Linear => pre_output.clone(),
        };
        let trace = ForwardTrace { input: x.clone(), pre_hidden, hidden, pre_output, output: output.clone() };
        Ok((output, trace))
    }

    /// Forward pass without keeping the trace.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradients given `dL/dY` with respect to the activated output.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &DMatrix<f64>) -> Result<(MlpGrads, DMatrix<f64>)> {
        if d_output.shape() != trace.output.shape() {
            return Err(Error::shape("output gradient does not match the traced output"));
        }
        let d_pre = match self.output {
            OutputActivation::Linear => d_output.clone(),
            OutputActivation::Tanh => d_output.zip_map(&trace.output, |g, y| g * (1.0 - y * y)),
            OutputActivation::Softmax => {
                let mut d = d_output.clone();
                for (mut drow, prow) in d.row_iter_mut().zip(trace.output.row_iter()) {
                    let dot: f64 = drow.iter().zip(prow.iter()).map(|(g, p)| g * p).sum();
                    for (g, p) in drow.iter_mut().zip(prow.iter()) {
                        *g = p * (*g - dot);
                    }
                }
                d
            }
        };
        self.backward_pre_output(trace, &d_pre)
    }

    /// Gradients given `dL/dZ2` with respect to the pre-activation output
    /// (the logits, for a softmax tower).
    pub fn backward_pre_output(&self, trace: &ForwardTrace, d_pre_output: &DMatrix<f64>) -> Result<(MlpGrads, DMatrix<f64>)> {
        self.check_shapes()?;
        if trace.input.ncols() != self.d_in()
            || trace.hidden.ncols() != self.d_hidden()
            || trace.pre_output.ncols() != self.d_out()
            || d_pre_output.shape() != trace.pre_output.shape()
        {
            return Err(Error::shape("trace does not belong to these parameters"));
        }
        let w2 = trace.hidden.transpose() * d_pre_output;
        let b2 = column_sums(d_pre_output);
        let d_hidden = d_pre_output * self.w2.transpose();
        let d_pre_hidden = match self.hidden {
            HiddenActivation::Relu => d_hidden.zip_map(&trace.pre_hidden, |g, z| if z > 0.0 { g } else { 0.0 }),
            HiddenActivation::Tanh => d_hidden.zip_map(&trace.hidden, |g, a| g * (1.0 - a * a)),
        };
        let w1 = trace.input.transpose() * &d_pre_hidden;
        let b1 = column_sums(&d_pre_hidden);
        let dx = d_pre_hidden * self.w1.transpose();
        Ok((MlpGrads { w1, b1, w2, b2 }, dx))
    }

    /// Parameters in the order W1 (row-major), b1, W2 (row-major), b2.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_parts(&self.w1, &self.b1, &self.w2, &self.b2)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for i in 0..self.w1.nrows() {
            for j in 0..self.w1.ncols() {
                self.w1[(i, j)] = it.next().unwrap();
            }
        }
        self.b1.iter_mut().for_each(|v| *v = it.next().unwrap());
        for i in 0..self.w2.nrows() {
            for j in 0..self.w2.ncols() {
                self.w2[(i, j)] = it.next().unwrap();
            }
        }
        self.b2.iter_mut().for_each(|v| *v = it.next().unwrap());
        Ok(())
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn save(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_feature_file(&matrix_to_features(&self.w1)?, &dir.join("w1.zedf"))?;
        write_feature_file(&vector_to_features(&self.b1)?, &dir.join("b1.zedf"))?;
        write_feature_file(&matrix_to_features(&self.w2)?, &dir.join("w2.zedf"))?;
        write_feature_file(&vector_to_features(&self.b2)?, &dir.join("b2.zedf"))?;
        let meta = MlpMeta {
            d_in: self.d_in(),
            d_hidden: self.d_hidden(),
            d_out: self.d_out(),
            hidden: self.hidden,
            output: self.output,
            seed,
        };
        let path = dir.join("params.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("params.json");
        let meta: MlpMeta = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        let w1 = features_to_matrix(&read_feature_file(&dir.join("w1.zedf"))?);
        let b1 = features_to_vector(&read_feature_file(&dir.join("b1.zedf"))?);
        let w2 = features_to_matrix(&read_feature_file(&dir.join("w2.zedf"))?);
        let b2 = features_to_vector(&read_feature_file(&dir.join("b2.zedf"))?);
        let params = MlpParams { w1, b1, w2, b2, hidden: meta.hidden, output: meta.output };
        params.check_shapes()?;
        if (params.d_in(), params.d_hidden(), params.d_out()) != (meta.d_in, meta.d_hidden, meta.d_out) {
            return Err(Error::shape(format!("{} disagrees with its weight files", path.display())));
        }
        Ok(params)
    }
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_parts(&self.w1, &self.b1, &self.w2, &self.b2)
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, alpha: f64) {
        self.w1 *= alpha;
        self.b1 *= alpha;
        self.w2 *= alpha;
        self.b2 *= alpha;
    }

    /// L2 norms of the four tensors: W1, b1, W2, b2.
    pub fn norms(&self) -> [f64; 4] {
        [self.w1.norm(), self.b1.norm(), self.w2.norm(), self.b2.norm()]
    }
}

fn flatten_parts(w1: &DMatrix<f64>, b1: &DVector<f64>, w2: &DMatrix<f64>, b2: &DVector<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(w1.len() + b1.len() + w2.len() + b2.len());
    out.extend(w1.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    out.extend(b1.iter().copied());
    out.extend(w2.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    out.extend(b2.iter().copied());
    out
}

pub(crate) fn matrix_to_features(m: &DMatrix<f64>) -> Result<FeatureMatrix> {
    let data = m.row_iter().flat_map(|r| r.iter().map(|&v| v as f32).collect::<Vec<_>>()).collect();
    FeatureMatrix::new(m.nrows(), m.ncols(), data)
}

fn vector_to_features(v: &DVector<f64>) -> Result<FeatureMatrix> {
    FeatureMatrix::new(1, v.len(), v.iter().map(|&x| x as f32).collect())
}

pub(crate) fn features_to_matrix(f: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(f.rows(), f.cols(), |i, j| f64::from(f.row(i)[j]))
}

fn features_to_vector(f: &FeatureMatrix) -> DVector<f64> {
    DVector::from_iterator(f.data().len(), f.data().iter().map(|&v| f64::from(v)))
}

/// Stacks equal-length rows into a batch matrix.
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.as_ref().len());
    if rows.iter().any(|r| r.as_ref().len() != cols) {
        return Err(Error::shape("ragged batch rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].as_ref()[j]))
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compares `analytic` against central differences of `loss` at `theta` on a
/// seeded sample of 1% of the coordinates (at least 50, or all of them when
/// fewer exist). Relative error uses `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(theta: &[f64], analytic: &[f64], mut loss: F, eps: f64, seed: u64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    if theta.len() != analytic.len() {
        return Err(Error::shape("gradient and parameter lengths differ"));
    }
    let n = theta.len();
    let wanted = n.div_ceil(100).max(50).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = sample(&mut rng, n, wanted).into_vec();
    coords.sort_unstable();

    let mut probe = theta.to_vec();
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss(&probe)?;
        probe[i] = orig - eps;
        let down = loss(&probe)?;
        probe[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss while probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(GradCheck { max_rel_error: max_rel, coords_checked: coords.len() })
}
