//! Weighted maximum-likelihood fitting of leaf distributions and their
//! statistical models.
//!
//! All fits first normalize the sample weights to sum to one, so rescaling
//! every weight by the same positive factor leaves the fitted parameters
//! unchanged. Reported expected log-likelihoods use the raw weights.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dist::{sigmoid, Value};
use crate::error::Error;
use crate::syntax::Sym;

/// Ridge damping applied when a least-squares system is singular, keeping
/// collinear designs solvable; well-posed fits are solved exactly without it.
pub const RIDGE: f64 = 1e-6;
/// Smallest variance a Gaussian fit may report.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Laplace smoothing added per label in categorical fits.
pub const LAPLACE_ALPHA: f64 = 1e-3;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 500;

/// One training example for a leaf fit: feature values read by the clause
/// body, the target value, and a likelihood weight.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub features: Vec<f64>,
    pub target: Value,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(features: Vec<f64>, target: Value, weight: f64) -> Self {
        WeightedSample { features, target, weight }
    }
}

/// A fitted leaf: the head distribution family together with any statistical
/// model feeding its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafModel {
    /// `gaussian(mean, variance)` with constant parameters.
    Gaussian { mean: f64, variance: f64 },
    /// `gaussian(M, variance)` with `M` supplied by a linear model atom.
    LinearGaussian { weights: Vec<f64>, variance: f64 },
    /// `discrete([p1:l1, ...])` with constant probabilities.
    Categorical { entries: Vec<(Sym, f64)> },
    /// Two-label discrete head fed by a logistic model atom.
    LogisticCategorical { labels: Vec<Sym>, weights: Vec<f64> },
    /// Discrete head fed by a softmax model atom, one weight row per label.
    SoftmaxCategorical { labels: Vec<Sym>, rows: Vec<Vec<f64>> },
}

impl LeafModel {
    /// Number of free parameters, as counted by the scoring penalty:
    /// mean and variance for Gaussians, d−1 for plain categoricals, one
    /// weight vector (inputs + intercept) per predicted unit otherwise.
    pub fn param_count(&self) -> usize {
        match self {
            LeafModel::Gaussian { .. } => 2,
            LeafModel::LinearGaussian { weights, .. } => weights.len() + 1,
            LeafModel::Categorical { entries } => entries.len().saturating_sub(1),
            LeafModel::LogisticCategorical { weights, .. } => weights.len(),
            LeafModel::SoftmaxCategorical { rows, .. } => rows.len() * rows[0].len(),
        }
    }

    /// Whether the leaf reads features through a statistical model atom.
    pub fn uses_features(&self) -> bool {
        matches!(
            self,
            LeafModel::LinearGaussian { .. }
                | LeafModel::LogisticCategorical { .. }
                | LeafModel::SoftmaxCategorical { .. }
        )
    }

    /// Short human-readable name of the model family.
    pub fn describe(&self) -> &'static str {
        match self {
            LeafModel::Gaussian { .. } => "gaussian",
            LeafModel::LinearGaussian { .. } => "linear gaussian",
            LeafModel::Categorical { .. } => "categorical",
            LeafModel::LogisticCategorical { .. } => "logistic",
            LeafModel::SoftmaxCategorical { .. } => "softmax",
        }
    }

    /// Number of feature inputs the leaf expects.
    pub fn input_arity(&self) -> usize {
        match self {
            LeafModel::Gaussian { .. } | LeafModel::Categorical { .. } => 0,
            LeafModel::LinearGaussian { weights, .. } => weights.len() - 1,
            LeafModel::LogisticCategorical { weights, .. } => weights.len() - 1,
            LeafModel::SoftmaxCategorical { rows, .. } => rows[0].len() - 1,
        }
    }
}

/// A fitted leaf with the expected log-likelihood it achieves on its
/// training data (raw-weight scale).
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: LeafModel,
    pub ell: f64,
}

fn affine(weights: &[f64], x: &[f64]) -> f64 {
    let mut z = weights[weights.len() - 1];
    for (xi, wi) in x.iter().zip(weights) {
        z += xi * wi;
    }
    z
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(zs: &[f64]) -> f64 {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + zs.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn gaussian_ln(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - d * d / (2.0 * variance)
}

/// Checks finiteness and positivity, returning the total raw weight.
fn check_data(data: &[WeightedSample], feature_dim: usize) -> Result<f64, Error> {
    let mut total = 0.0;
    for s in data {
        if !s.weight.is_finite() || s.weight < 0.0 {
            return Err(Error::Numeric(format!("sample weight {} is invalid", s.weight)));
        }
        if s.features.len() != feature_dim {
            return Err(Error::ArityMismatch {
                what: "fit features".into(),
                expected: feature_dim,
                found: s.features.len(),
            });
        }
        if s.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        total += s.weight;
    }
    if !(total > 0.0) {
        return Err(Error::Numeric(
            "degenerate fit: total sample weight is zero".into(),
        ));
    }
    Ok(total)
}

fn numeric_target(s: &WeightedSample) -> Result<f64, Error> {
    match s.target {
        Value::Num(n) if n.is_finite() => Ok(n),
        Value::Num(n) => Err(Error::Numeric(format!("non-finite target {}", n))),
        Value::Sym(ref l) => Err(Error::TypeMismatch(format!(
            "continuous fit given symbolic target {}",
            l
        ))),
    }
}

fn label_index(labels: &[Sym], s: &WeightedSample) -> Result<usize, Error> {
    let l = s.target.as_sym().ok_or_else(|| {
        Error::TypeMismatch(format!("discrete fit given numeric target {}", s.target))
    })?;
    labels
        .iter()
        .position(|x| x == l)
        .ok_or_else(|| Error::TypeMismatch(format!("target label {} not in the domain", l)))
}

/// Weighted Gaussian fit with no features: weighted mean and (biased,
/// floored) weighted variance.
pub fn fit_gaussian(data: &[WeightedSample]) -> Result<Fit, Error> {
    let total = check_data(data, data.first().map_or(0, |s| s.features.len()))?;
    let mut mean = 0.0;
    for s in data {
        mean += s.weight / total * numeric_target(s)?;
    }
    let mut variance = 0.0;
    for s in data {
        let d = numeric_target(s)? - mean;
        variance += s.weight / total * d * d;
    }
    let variance = variance.max(VARIANCE_FLOOR);
    let model = LeafModel::Gaussian { mean, variance };
    let ell = expected_log_likelihood(&model, data)?;
    Ok(Fit { model, ell })
}

/// Closed-form weighted least squares for a Gaussian head whose mean is a
/// linear model of the features; the variance is the weighted mean squared
/// residual.
///
/// The normal equations are solved on mean-centered features, which keeps the
/// system well conditioned regardless of feature scale; the intercept is
/// recovered from the weighted means afterwards.
pub fn fit_linear_gaussian(data: &[WeightedSample]) -> Result<Fit, Error> {
    let m = data.first().map_or(0, |s| s.features.len());
    let total = check_data(data, m)?;
    let mut mean_x = vec![0.0; m];
    let mut mean_y = 0.0;
    for s in data {
        let w = s.weight / total;
        if w == 0.0 {
            continue;
        }
        for (acc, x) in mean_x.iter_mut().zip(&s.features) {
            *acc += w * x;
        }
        mean_y += w * numeric_target(s)?;
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for s in data {
        let w = s.weight / total;
        if w == 0.0 {
            continue;
        }
        let y = numeric_target(s)? - mean_y;
        for i in 0..m {
            let xi = s.features[i] - mean_x[i];
            for j in 0..m {
                a[(i, j)] += w * xi * (s.features[j] - mean_x[j]);
            }
            b[i] += w * xi * y;
        }
    }
    let beta = solve_normal_equations(a, &b)?;
    let mut weights: Vec<f64> = beta.iter().cloned().collect();
    let intercept = mean_y - weights.iter().zip(&mean_x).map(|(c, mu)| c * mu).sum::<f64>();
    weights.push(intercept);
    let mut variance = 0.0;
    for s in data {
        let r = numeric_target(s)? - affine(&weights, &s.features);
        variance += s.weight / total * r * r;
    }
    let variance = variance.max(VARIANCE_FLOOR);
    let model = LeafModel::LinearGaussian { weights, variance };
    let ell = expected_log_likelihood(&model, data)?;
    Ok(Fit { model, ell })
}

/// Solves `a x = b` by Cholesky factorisation, falling back to a
/// ridge-damped solve when the system is singular or indefinite.
fn solve_normal_equations(mut a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, Error> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c.solve(b));
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    for i in 0..a.nrows() {
        a[(i, i)] += RIDGE * scale;
    }
    Cholesky::new(a.clone())
        .map(|c| c.solve(b))
        .or_else(|| a.lu().solve(b))
        .ok_or_else(|| Error::Numeric("singular weighted least-squares system".into()))
}

/// Weighted categorical fit over the full label domain with Laplace
/// smoothing, so unseen labels keep nonzero mass.
pub fn fit_categorical(data: &[WeightedSample], labels: &[Sym]) -> Result<Fit, Error> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("categorical fit label domain"));
    }
    let total = check_data(data, data.first().map_or(0, |s| s.features.len()))?;
    let mut counts = vec![0.0; labels.len()];
    for s in data {
        counts[label_index(labels, s)?] += s.weight / total;
    }
    let denom = 1.0 + labels.len() as f64 * LAPLACE_ALPHA;
    let entries: Vec<(Sym, f64)> = labels
        .iter()
        .zip(&counts)
        .map(|(l, c)| (l.clone(), (c + LAPLACE_ALPHA) / denom))
        .collect();
    let model = LeafModel::Categorical { entries };
    let ell = expected_log_likelihood(&model, data)?;
    Ok(Fit { model, ell })
}

/// Feature standardization used to condition the optimizer; fitted weights
/// are reported in the original feature space.
struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    fn from_data(data: &[WeightedSample], total: f64, m: usize) -> Standardizer {
        let mut means = vec![0.0; m];
        for s in data {
            for (k, x) in s.features.iter().enumerate() {
                means[k] += s.weight / total * x;
            }
        }
        let mut vars = vec![0.0; m];
        for s in data {
            for (k, x) in s.features.iter().enumerate() {
                let d = x - means[k];
                vars[k] += s.weight / total * d * d;
            }
        }
        let scales = vars
            .iter()
            .map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { means, scales }
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Maps one weight row from standardized to original feature space.
    fn raw_row(&self, row: &[f64]) -> Vec<f64> {
        let m = self.means.len();
        let mut out = vec![0.0; m + 1];
        let mut intercept = row[m];
        for k in 0..m {
            out[k] = row[k] / self.scales[k];
            intercept -= row[k] * self.means[k] / self.scales[k];
        }
        out[m] = intercept;
        out
    }

    /// Gradient contribution of the ridge penalty on raw weights with
    /// respect to the standardized weight row.
    fn penalty_grad(&self, raw: &[f64], out: &mut [f64]) {
        let m = self.means.len();
        let intercept = raw[m];
        for k in 0..m {
            out[k] += RIDGE * (raw[k] / self.scales[k] - intercept * self.means[k] / self.scales[k]);
        }
        out[m] += RIDGE * intercept;
    }
}

fn penalty(raw_rows: &[Vec<f64>]) -> f64 {
    0.5 * RIDGE
        * raw_rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|w| w * w)
            .sum::<f64>()
}

/// Minimizes a smooth convex function by BFGS with Armijo backtracking.
fn minimize<F>(f: F, x0: Vec<f64>, grad_tol: f64, max_iters: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut fx, g) = f(x.as_slice());
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iters {
        if g.amax() <= grad_tol {
            break;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -g.clone();
            slope = g.dot(&d);
            h = DMatrix::identity(n, n);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &d * t;
            let (fc, gc) = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc, DVector::from_vec(gc)));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // BFGS inverse update in two rank-one corrections.
            h += (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    x.as_slice().to_vec()
}

/// Weighted logistic (two labels) or softmax (more labels) fit with ridge
/// damping, optimized to a gradient norm of 1e-8.
pub fn fit_class_model(data: &[WeightedSample], labels: &[Sym]) -> Result<Fit, Error> {
    if labels.len() < 2 {
        return Err(Error::EmptyInput("class-model fit label domain"));
    }
    let m = data.first().map_or(0, |s| s.features.len());
    let total = check_data(data, m)?;
    let std = Standardizer::from_data(data, total, m);
    let rows = if labels.len() == 2 { 1 } else { labels.len() };
    let dim = m + 1;

    struct Prepared {
        x: Vec<f64>,
        label: usize,
        w: f64,
    }
    let mut prepared = Vec::with_capacity(data.len());
    for s in data {
        prepared.push(Prepared {
            x: std.transform(&s.features),
            label: label_index(labels, s)?,
            w: s.weight / total,
        });
    }

    let logistic = labels.len() == 2;
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let theta_rows: Vec<&[f64]> = theta.chunks(dim).collect();
        let raw_rows: Vec<Vec<f64>> = theta_rows.iter().map(|r| std.raw_row(r)).collect();
        let mut nll = penalty(&raw_rows);
        let mut grad = vec![0.0; theta.len()];
        for p in &prepared {
            if p.w == 0.0 {
                continue;
            }
            if logistic {
                let z = affine(theta_rows[0], &p.x);
                nll += p.w * if p.label == 0 { softplus(-z) } else { softplus(z) };
                let coef = p.w * (sigmoid(z) - if p.label == 0 { 1.0 } else { 0.0 });
                for k in 0..m {
                    grad[k] += coef * p.x[k];
                }
                grad[m] += coef;
            } else {
                let zs: Vec<f64> = theta_rows.iter().map(|r| affine(r, &p.x)).collect();
                let lse = log_sum_exp(&zs);
                nll += p.w * (lse - zs[p.label]);
                for (i, z) in zs.iter().enumerate() {
                    let pi = (z - lse).exp();
                    let coef = p.w * (pi - if i == p.label { 1.0 } else { 0.0 });
                    let row = &mut grad[i * dim..(i + 1) * dim];
                    for k in 0..m {
                        row[k] += coef * p.x[k];
                    }
                    row[m] += coef;
                }
            }
        }
        for (i, raw) in raw_rows.iter().enumerate() {
            std.penalty_grad(raw, &mut grad[i * dim..(i + 1) * dim]);
        }
        (nll, grad)
    };

    let theta = minimize(objective, vec![0.0; rows * dim], GRAD_TOL, MAX_ITERS);
    let raw_rows: Vec<Vec<f64>> = theta.chunks(dim).map(|r| std.raw_row(r)).collect();
    let model = if logistic {
        LeafModel::LogisticCategorical {
            labels: labels.to_vec(),
            weights: raw_rows.into_iter().next().unwrap(),
        }
    } else {
        LeafModel::SoftmaxCategorical {
            labels: labels.to_vec(),
            rows: raw_rows,
        }
    };
    let ell = expected_log_likelihood(&model, data)?;
    Ok(Fit { model, ell })
}

/// Class probabilities a fitted discrete leaf assigns for given features.
pub fn class_probabilities(model: &LeafModel, features: &[f64]) -> Result<Vec<f64>, Error> {
    match model {
        LeafModel::Categorical { entries } => Ok(entries.iter().map(|(_, p)| *p).collect()),
        LeafModel::LogisticCategorical { weights, .. } => {
            let p1 = sigmoid(affine(weights, features));
            Ok(vec![p1, 1.0 - p1])
        }
        LeafModel::SoftmaxCategorical { rows, .. } => {
            let zs: Vec<f64> = rows.iter().map(|r| affine(r, features)).collect();
            Ok(crate::dist::softmax(&zs))
        }
        _ => Err(Error::TypeMismatch(
            "class probabilities requested from a continuous leaf".into(),
        )),
    }
}

/// The weighted expected log-likelihood `Σ_j w_j · ln p(target_j | model)`
/// on raw weights, without any ridge penalty.
pub fn expected_log_likelihood(model: &LeafModel, data: &[WeightedSample]) -> Result<f64, Error> {
    let mut ell = 0.0;
    let mut comp = 0.0;
    let mut add = |v: f64| {
        let t = ell + v;
        comp += if ell.abs() >= v.abs() { (ell - t) + v } else { (v - t) + ell };
        ell = t;
    };
    for s in data {
        if s.weight == 0.0 {
            continue;
        }
        let term = match model {
            LeafModel::Gaussian { mean, variance } => {
                gaussian_ln(numeric_target(s)?, *mean, *variance)
            }
            LeafModel::LinearGaussian { weights, variance } => {
                gaussian_ln(numeric_target(s)?, affine(weights, &s.features), *variance)
            }
            LeafModel::Categorical { entries } => {
                let l = s.target.as_sym().ok_or_else(|| {
                    Error::TypeMismatch(format!("numeric target {} for discrete leaf", s.target))
                })?;
                entries
                    .iter()
                    .find(|(e, _)| e == l)
                    .map(|(_, p)| p.ln())
                    .ok_or_else(|| {
                        Error::TypeMismatch(format!("target label {} not in the domain", l))
                    })?
            }
            LeafModel::LogisticCategorical { labels, weights } => {
                let idx = label_index(labels, s)?;
                let z = affine(weights, &s.features);
                if idx == 0 {
                    -softplus(-z)
                } else {
                    -softplus(z)
                }
            }
            LeafModel::SoftmaxCategorical { labels, rows } => {
                let idx = label_index(labels, s)?;
                let zs: Vec<f64> = rows.iter().map(|r| affine(r, &s.features)).collect();
                zs[idx] - log_sum_exp(&zs)
            }
        };
        add(s.weight * term);
    }
    Ok(ell + comp)
}

/// Analytic gradient of [`expected_log_likelihood`] with respect to the
/// flattened model weights of a logistic or softmax leaf.
pub fn ell_gradient(model: &LeafModel, data: &[WeightedSample]) -> Result<Vec<f64>, Error> {
    match model {
        LeafModel::LogisticCategorical { labels, weights } => {
            let dim = weights.len();
            let mut grad = vec![0.0; dim];
            for s in data {
                let idx = label_index(labels, s)?;
                let z = affine(weights, &s.features);
                let coef = s.weight * (if idx == 0 { 1.0 } else { 0.0 } - sigmoid(z));
                for k in 0..dim - 1 {
                    grad[k] += coef * s.features[k];
                }
                grad[dim - 1] += coef;
            }
            Ok(grad)
        }
        LeafModel::SoftmaxCategorical { labels, rows } => {
            let dim = rows[0].len();
            let mut grad = vec![0.0; rows.len() * dim];
            for s in data {
                let idx = label_index(labels, s)?;
                let zs: Vec<f64> = rows.iter().map(|r| affine(r, &s.features)).collect();
                let lse = log_sum_exp(&zs);
                for (i, z) in zs.iter().enumerate() {
                    let pi = (z - lse).exp();
                    let coef = s.weight * (if i == idx { 1.0 } else { 0.0 } - pi);
                    let row = &mut grad[i * dim..(i + 1) * dim];
                    for k in 0..dim - 1 {
                        row[k] += coef * s.features[k];
                    }
                    row[dim - 1] += coef;
                }
            }
            Ok(grad)
        }
        _ => Err(Error::TypeMismatch(
            "gradient only defined for logistic and softmax leaves".into(),
        )),
    }
}
