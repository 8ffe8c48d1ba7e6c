//! Three-layer perceptron: z-normalized input → tanh hidden layer → softmax.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rxchain::FeatureVector;
use crate::seed::{derive_rng, Stream};

/// Rows per chunk in batched passes. Chunk results are reduced in chunk
/// order, so sums do not depend on the number of worker threads.
pub(crate) const CHUNK_ROWS: usize = 256;

/// Classifier weights plus the input normalization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `hidden × input`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `output × hidden`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub norm_mean: Array1<f64>,
    pub norm_scale: Array1<f64>,
}

/// Loss, misclassified row count and (optionally) the gradient of one pass.
#[derive(Debug, Clone)]
pub struct PassResult {
    pub loss: f64,
    pub errors: usize,
    pub gradient: Option<Vec<f64>>,
}

impl MlpModel {
    /// All weights zero, identity normalization.
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        MlpModel {
            input_dim,
            hidden_dim,
            output_dim,
            w1: Array2::zeros((hidden_dim, input_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array2::zeros((output_dim, hidden_dim)),
            b2: Array1::zeros(output_dim),
            norm_mean: Array1::zeros(input_dim),
            norm_scale: Array1::ones(input_dim),
        }
    }

    /// Uniform `±1/√fan_in` weights and biases from a seeded generator.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim, output_dim);
        let mut rng = derive_rng(seed, 0, Stream::Init);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden_dim as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
        m.b1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
        m.b2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
        m
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * (self.input_dim + 1) + self.output_dim * (self.hidden_dim + 1)
    }

    /// Flattened `[w1, b1, w2, b2]`, row-major.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(self.w1.iter());
        p.extend(self.b1.iter());
        p.extend(self.w2.iter());
        p.extend(self.b2.iter());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.iter_mut().zip(a).for_each(|(w, v)| *w = *v);
        self.b1.iter_mut().zip(b).for_each(|(w, v)| *w = *v);
        self.w2.iter_mut().zip(c).for_each(|(w, v)| *w = *v);
        self.b2.iter_mut().zip(d).for_each(|(w, v)| *w = *v);
        Ok(())
    }

    /// Stores per-column mean and standard deviation of `x`. A constant
    /// column keeps scale 1.
    pub fn fit_normalization(&mut self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let n = x.nrows() as f64;
        for j in 0..self.input_dim {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            self.norm_mean[j] = mean;
            self.norm_scale[j] = if sd > 1e-12 * (1.0 + mean.abs()) && sd.is_finite() {
                sd
            } else {
                warn!("feature column {j} is constant; using unit scale");
                1.0
            };
        }
        Ok(())
    }

    pub fn normalize(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let mut z = x.to_owned();
        for mut row in z.rows_mut() {
            for j in 0..self.input_dim {
                row[j] = (row[j] - self.norm_mean[j]) / self.norm_scale[j];
            }
        }
        Ok(z)
    }

    /// Row-wise softmax probabilities for raw (unnormalized) inputs.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.normalize(x)?;
        let (_, mut logits) = self.forward(z.view());
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Arg-max class (lowest id on ties) and its probability.
    pub fn predict(&self, fv: &FeatureVector) -> Result<(usize, f64)> {
        let row = fv.to_array();
        self.predict_row(&row)
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<(usize, f64)> {
        let x = ArrayView2::from_shape((1, row.len()), row).expect("row shape");
        let p = self.predict_proba(x)?;
        Ok(argmax(p.row(0).as_slice().expect("contiguous")))
    }

    /// Predictions for every row of `x`.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<(usize, f64)>> {
        let z = self.normalize(x)?;
        let chunks: Vec<Vec<(usize, f64)>> = (0..z.nrows())
            .step_by(CHUNK_ROWS)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK_ROWS).min(z.nrows());
                let (_, mut logits) = self.forward(z.slice(s![start..end, ..]));
                softmax_rows(&mut logits);
                logits
                    .rows()
                    .into_iter()
                    .map(|r| argmax(r.as_slice().expect("contiguous")))
                    .collect()
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Hidden activations and output logits for normalized inputs.
    fn forward(&self, z: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut h = z.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        let mut o = h.dot(&self.w2.t());
        o += &self.b2;
        (h, o)
    }

    /// Mean cross-entropy over normalized inputs `z` and its gradient with
    /// respect to [`params`](Self::params).
    pub fn loss_and_gradient(&self, z: ArrayView2<f64>, labels: &[usize], with_grad: bool) -> Result<PassResult> {
        if z.nrows() != labels.len() || z.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: z.nrows(),
                got: labels.len(),
            });
        }
        if z.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: z.ncols(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.output_dim) {
            return Err(Error::invalid(format!("label {bad} >= output_dim {}", self.output_dim)));
        }
        let n = z.nrows();
        let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
        let parts: Vec<PassResult> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK_ROWS).min(n);
                self.chunk_pass(z.slice(s![start..end, ..]), &labels[start..end], n as f64, with_grad)
            })
            .collect();
        let mut total = PassResult {
            loss: 0.0,
            errors: 0,
            gradient: with_grad.then(|| vec![0.0; self.param_count()]),
        };
        for p in parts {
            total.loss += p.loss;
            total.errors += p.errors;
            if let (Some(t), Some(g)) = (total.gradient.as_mut(), p.gradient) {
                t.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        Ok(total)
    }

    fn chunk_pass(&self, z: ArrayView2<f64>, labels: &[usize], n_total: f64, with_grad: bool) -> PassResult {
        let (h, mut p) = self.forward(z);
        let mut loss = 0.0;
        let mut errors = 0;
        for (mut row, &y) in p.rows_mut().into_iter().zip(labels) {
            let r = row.as_slice_mut().expect("contiguous");
            let (pred, _) = argmax(r);
            if pred != y {
                errors += 1;
            }
            let max = r[pred];
            let shifted_y = r[y] - max;
            let mut sum = 0.0;
            for v in r.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            // log p_y = (o_y − max) − ln Σ
            loss -= shifted_y - sum.ln();
            r.iter_mut().for_each(|v| *v /= sum);
        }
        let loss = loss / n_total;
        if !with_grad {
            return PassResult {
                loss,
                errors,
                gradient: None,
            };
        }
        // dL/do = (p − onehot)/N
        let mut d2 = p;
        for (mut row, &y) in d2.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        d2.mapv_inplace(|v| v / n_total);
        let g_w2 = d2.t().dot(&h);
        let g_b2 = d2.sum_axis(Axis(0));
        let mut d1 = d2.dot(&self.w2);
        d1.zip_mut_with(&h, |d, &a| *d *= 1.0 - a * a);
        let g_w1 = d1.t().dot(&z);
        let g_b1 = d1.sum_axis(Axis(0));
        let mut g = Vec::with_capacity(self.param_count());
        g.extend(g_w1.iter());
        g.extend(g_b1.iter());
        g.extend(g_w2.iter());
        g.extend(g_b2.iter());
        PassResult {
            loss,
            errors,
            gradient: Some(g),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# rfpuf mlp v1\n");
        let _ = writeln!(out, "dims {} {} {}", self.input_dim, self.hidden_dim, self.output_dim);
        let mut line = |name: &str, vals: &mut dyn Iterator<Item = &f64>| {
            let _ = write!(out, "{name}");
            for v in vals {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
        };
        line("mean", &mut self.norm_mean.iter());
        line("scale", &mut self.norm_scale.iter());
        line("w1", &mut self.w1.iter());
        line("b1", &mut self.b1.iter());
        line("w2", &mut self.w2.iter());
        line("b2", &mut self.b2.iter());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "mlp model";
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut next = |name: &str| -> Result<Vec<String>> {
            let l = lines
                .next()
                .ok_or_else(|| Error::parse(ctx, format!("missing '{name}' line")))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(name) {
                return Err(Error::parse(ctx, format!("expected '{name}' line, got '{l}'")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let dims: Vec<usize> = next("dims")?
            .iter()
            .map(|s| s.parse().map_err(|e| Error::parse(ctx, format!("dims: {e}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 || dims.contains(&0) {
            return Err(Error::parse(ctx, "dims needs three positive integers"));
        }
        let mut m = MlpModel::zeros(dims[0], dims[1], dims[2]);
        let mut read = |name: &str, len: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = next(name)?
                .iter()
                .map(|s| s.parse().map_err(|e| Error::parse(ctx, format!("{name}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(Error::parse(ctx, format!("{name}: expected {len} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let (d, h, c) = (dims[0], dims[1], dims[2]);
        m.norm_mean = Array1::from(read("mean", d)?);
        m.norm_scale = Array1::from(read("scale", d)?);
        m.w1 = Array2::from_shape_vec((h, d), read("w1", h * d)?).expect("shape");
        m.b1 = Array1::from(read("b1", h)?);
        m.w2 = Array2::from_shape_vec((c, h), read("w2", c * h)?).expect("shape");
        m.b2 = Array1::from(read("b2", c)?);
        if m.params().iter().chain(m.norm_mean.iter()).any(|v| !v.is_finite())
            || m.norm_scale.iter().any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::parse(ctx, "non-finite weights or non-positive scale"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Index of the largest value (first on ties) and the value itself.
pub fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
