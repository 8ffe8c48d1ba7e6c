//! Full-batch training: scaled conjugate gradient, with plain gradient descent
//! with momentum available for cross-checking.

use log::debug;
use ndarray::{Array2, ArrayView2};

use super::mlp::MlpModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ScaledConjugateGradient,
    GradientDescentMomentum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub hidden: usize,
    pub max_epochs: usize,
    /// Stop once the training loss (mean cross-entropy) is at or below this.
    pub target_error: f64,
    /// Stop once the gradient norm falls below this.
    pub min_gradient: f64,
    pub algorithm: Algorithm,
    /// SCG step for the second-order approximation.
    pub sigma: f64,
    /// SCG initial regularization.
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty `wd/2·‖W‖²` on the weight matrices (biases excluded).
    pub weight_decay: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            hidden: 50,
            max_epochs: 2000,
            target_error: 1e-3,
            min_gradient: 1e-9,
            algorithm: Algorithm::ScaledConjugateGradient,
            sigma: 5e-5,
            lambda: 5e-7,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetError,
    MaxEpochs,
    MinGradient,
    NoProgress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub loss: f64,
    pub training_error: f64,
    pub stop: StopReason,
}

/// Rows sorted by label, then by feature values. Full-batch training on the
/// sorted set is independent of the caller's row order.
fn canonical_order(x: ArrayView2<f64>, labels: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            x.row(a)
                .iter()
                .zip(x.row(b).iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let sorted = Array2::from_shape_fn((idx.len(), x.ncols()), |(i, j)| x[[idx[i], j]]);
    (sorted, idx.iter().map(|&i| labels[i]).collect())
}

fn validate_set(x: ArrayView2<f64>, labels: &[usize]) -> Result<usize> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training features contain non-finite values"));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(classes)
}

/// Trains a classifier with `max(label) + 1` outputs. Deterministic for a
/// given seed and independent of row order.
pub fn train_classifier(x: ArrayView2<f64>, labels: &[usize], hp: &TrainParams, seed: u64) -> Result<(MlpModel, TrainReport)> {
    let classes = validate_set(x, labels)?;
    train_with_classes(x, labels, classes, hp, seed)
}

/// As [`train_classifier`] with an explicit output count.
pub fn train_with_classes(
    x: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    hp: &TrainParams,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let found = validate_set(x, labels)?;
    if found != classes {
        return Err(Error::EmptyClass(found.min(classes)));
    }
    if hp.hidden == 0 || hp.max_epochs == 0 {
        return Err(Error::invalid("hidden and max_epochs must be >= 1"));
    }
    let (xs, ys) = canonical_order(x, labels);
    let mut model = MlpModel::init(x.ncols(), hp.hidden, classes, seed);
    model.fit_normalization(xs.view())?;
    let z = model.normalize(xs.view())?;
    let report = match hp.algorithm {
        Algorithm::ScaledConjugateGradient => scg(&mut model, z.view(), &ys, hp)?,
        Algorithm::GradientDescentMomentum => gd_momentum(&mut model, z.view(), &ys, hp)?,
    };
    debug!("training finished: {report:?}");
    Ok((model, report))
}

struct Objective<'a> {
    model: MlpModel,
    z: ArrayView2<'a, f64>,
    labels: &'a [usize],
    weight_decay: f64,
}

struct Evaluation {
    /// Penalized objective.
    total: f64,
    /// Cross-entropy alone.
    loss: f64,
    errors: usize,
    gradient: Option<Vec<f64>>,
}

impl Objective<'_> {
    fn new<'a>(model: &MlpModel, z: ArrayView2<'a, f64>, labels: &'a [usize], hp: &TrainParams) -> Objective<'a> {
        Objective {
            model: model.clone(),
            z,
            labels,
            weight_decay: hp.weight_decay,
        }
    }

    fn eval(&mut self, w: &[f64], grad: bool) -> Result<Evaluation> {
        self.model.set_params(w)?;
        let r = self.model.loss_and_gradient(self.z, self.labels, grad)?;
        let mut total = r.loss;
        let mut gradient = r.gradient;
        if self.weight_decay > 0.0 {
            let n1 = self.model.w1.len();
            let b1 = n1 + self.model.b1.len();
            let n2 = b1 + self.model.w2.len();
            let weights = (0..n1).chain(b1..n2);
            let mut sq = 0.0;
            for i in weights {
                sq += w[i] * w[i];
                if let Some(g) = gradient.as_mut() {
                    g[i] += self.weight_decay * w[i];
                }
            }
            total += 0.5 * self.weight_decay * sq;
        }
        Ok(Evaluation {
            total,
            loss: r.loss,
            errors: r.errors,
            gradient,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Møller's scaled conjugate gradient.
fn scg(model: &mut MlpModel, z: ArrayView2<f64>, labels: &[usize], hp: &TrainParams) -> Result<TrainReport> {
    let n = labels.len() as f64;
    let mut obj = Objective::new(model, z, labels, hp);
    let dim = model.param_count();
    let mut w = model.params();
    let ev = obj.eval(&w, true)?;
    let (mut e, mut ce, mut errors) = (ev.total, ev.loss, ev.errors);
    let mut r: Vec<f64> = ev.gradient.unwrap().iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut lambda = hp.lambda;
    let mut lambda_bar = 0.0;
    let mut success = true;
    let mut delta = 0.0;
    let mut epochs = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut stalled = 0usize;
    let mut wt = vec![0.0; dim];
    while epochs < hp.max_epochs {
        if ce <= hp.target_error {
            stop = StopReason::TargetError;
            break;
        }
        if dot(&r, &r).sqrt() < hp.min_gradient {
            stop = StopReason::MinGradient;
            break;
        }
        epochs += 1;
        let p2 = dot(&p, &p);
        if success {
            let sigma_k = hp.sigma / p2.sqrt();
            for i in 0..dim {
                wt[i] = w[i] + sigma_k * p[i];
            }
            let gt = obj.eval(&wt, true)?.gradient.unwrap();
            // s = (E'(w + σp) − E'(w)) / σ, with E'(w) = −r
            delta = gt.iter().zip(&r).zip(&p).map(|((a, b), pi)| (a + b) / sigma_k * pi).sum();
        }
        delta += (lambda - lambda_bar) * p2;
        if delta <= 0.0 {
            lambda_bar = 2.0 * (lambda - delta / p2);
            delta = -delta + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dot(&p, &r);
        let alpha = mu / delta;
        for i in 0..dim {
            wt[i] = w[i] + alpha * p[i];
        }
        // The gradient at the trial point is reused if the step is accepted.
        let ev = obj.eval(&wt, true)?;
        let e_new = ev.total;
        let comparison = 2.0 * delta * (e - e_new) / (mu * mu);
        if comparison >= 0.0 && e_new.is_finite() {
            std::mem::swap(&mut w, &mut wt);
            e = ev.total;
            ce = ev.loss;
            errors = ev.errors;
            let r_new: Vec<f64> = ev.gradient.unwrap().iter().map(|v| -v).collect();
            lambda_bar = 0.0;
            success = true;
            if epochs % dim == 0 {
                p.clone_from(&r_new);
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &r)) / mu;
                for i in 0..dim {
                    p[i] = r_new[i] + beta * p[i];
                }
            }
            r = r_new;
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
            stalled = 0;
        } else {
            lambda_bar = lambda;
            success = false;
            stalled += 1;
        }
        if comparison < 0.25 {
            lambda += delta * (1.0 - comparison) / p2;
        }
        if !lambda.is_finite() || stalled > 50 {
            stop = StopReason::NoProgress;
            break;
        }
    }
    if stop == StopReason::MaxEpochs && ce <= hp.target_error {
        stop = StopReason::TargetError;
    }
    model.set_params(&w)?;
    Ok(TrainReport {
        epochs,
        loss: ce,
        training_error: errors as f64 / n,
        stop,
    })
}

fn gd_momentum(model: &mut MlpModel, z: ArrayView2<f64>, labels: &[usize], hp: &TrainParams) -> Result<TrainReport> {
    let n = labels.len() as f64;
    let mut obj = Objective::new(model, z, labels, hp);
    let mut w = model.params();
    let mut v = vec![0.0; w.len()];
    let mut ev = obj.eval(&w, true)?;
    let mut epochs = 0;
    let mut stop = StopReason::MaxEpochs;
    while epochs < hp.max_epochs {
        if ev.loss <= hp.target_error {
            stop = StopReason::TargetError;
            break;
        }
        let grad = ev.gradient.take().unwrap();
        if dot(&grad, &grad).sqrt() < hp.min_gradient {
            stop = StopReason::MinGradient;
            break;
        }
        epochs += 1;
        for i in 0..w.len() {
            v[i] = hp.momentum * v[i] - hp.learning_rate * grad[i];
            w[i] += v[i];
        }
        ev = obj.eval(&w, true)?;
        if !ev.total.is_finite() {
            stop = StopReason::NoProgress;
            break;
        }
    }
    model.set_params(&w)?;
    Ok(TrainReport {
        epochs,
        loss: ev.loss,
        training_error: ev.errors as f64 / n,
        stop,
    })
}
