//! Distribution values, densities, sampling, and statistical model atoms.

use rand::Rng as _;

use crate::error::Error;
use crate::syntax::{sym, DistExpr, ModelWeights, Sym, Term};

/// A sampled or observed value of a random variable: a number or a symbol.
#[derive(Debug, Clone)]
pub enum Value {
    Num(f64),
    Sym(Sym),
}

impl Value {
    /// Converts a ground term. Compound terms are not values.
    pub fn from_term(t: &Term) -> Option<Value> {
        match t {
            Term::Num(n) => Some(Value::Num(*n)),
            Term::Const(s) => Some(Value::Sym(s.clone())),
            _ => None,
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            Value::Num(n) => Term::Num(*n),
            Value::Sym(s) => Term::Const(s.clone()),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            Value::Sym(_) => None,
        }
    }

    pub fn as_sym(&self) -> Option<&Sym> {
        match self {
            Value::Num(_) => None,
            Value::Sym(s) => Some(s),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.to_bits() == b.to_bits(),
            (Value::Sym(a), Value::Sym(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Value::Num(n) => {
                0u8.hash(state);
                n.to_bits().hash(state);
            }
            Value::Sym(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Sym(a), Value::Sym(b)) => a.cmp(b),
            (Value::Num(_), Value::Sym(_)) => std::cmp::Ordering::Less,
            (Value::Sym(_), Value::Num(_)) => std::cmp::Ordering::Greater,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.to_term().fmt(f)
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Num(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Sym(sym(s))
    }
}

/// A fully evaluated distribution, ready to sample or score.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Point mass on a single value.
    Val(Value),
    /// Normal distribution; the second parameter is the variance.
    Gaussian { mean: f64, variance: f64 },
    /// Finite distribution over distinct labels with probabilities
    /// summing to one.
    Discrete(Vec<(Value, f64)>),
}

impl Distribution {
    /// Builds a Gaussian, checking the parameters.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Distribution, Error> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::Numeric(format!(
                "gaussian({}, {}) has non-finite parameters",
                mean, variance
            )));
        }
        if variance <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "gaussian variance must be positive, got {}",
                variance
            )));
        }
        Ok(Distribution::Gaussian { mean, variance })
    }

    /// Builds a discrete distribution, checking that labels are distinct and
    /// probabilities are nonnegative and sum to one within 1e-9.
    pub fn discrete(entries: Vec<(Value, f64)>) -> Result<Distribution, Error> {
        if entries.is_empty() {
            return Err(Error::InvalidDistribution(
                "discrete distribution has no entries".into(),
            ));
        }
        let mut total = 0.0;
        for (label, p) in &entries {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability of {} is {}",
                    label, p
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {}, not 1",
                total
            )));
        }
        for i in 1..entries.len() {
            if entries[..i].iter().any(|(l, _)| l == &entries[i].0) {
                return Err(Error::InvalidDistribution(format!(
                    "label {} appears twice",
                    entries[i].0
                )));
            }
        }
        Ok(Distribution::Discrete(entries))
    }

    /// Evaluates a syntactic distribution expression whose parameters are
    /// already ground numbers or labels.
    pub fn from_expr(expr: &DistExpr) -> Result<Distribution, Error> {
        let ground_num = |t: &Term| -> Result<f64, Error> {
            match t {
                Term::Num(n) => Ok(*n),
                other => Err(Error::UnboundVariable {
                    goal: format!("distribution parameter {}", other),
                }),
            }
        };
        match expr {
            DistExpr::Val(t) => match Value::from_term(t) {
                Some(v) => Ok(Distribution::Val(v)),
                None => Err(Error::UnboundVariable {
                    goal: format!("val({})", t),
                }),
            },
            DistExpr::Gaussian(m, v) => Distribution::gaussian(ground_num(m)?, ground_num(v)?),
            DistExpr::Discrete(entries) => {
                let mut out = Vec::with_capacity(entries.len());
                for (p, label) in entries {
                    let prob = ground_num(p)?;
                    let value = Value::from_term(label).ok_or_else(|| Error::UnboundVariable {
                        goal: format!("discrete label {}", label),
                    })?;
                    out.push((value, prob));
                }
                Distribution::discrete(out)
            }
        }
    }

    /// Renders the distribution back into a syntactic expression.
    pub fn to_expr(&self) -> DistExpr {
        match self {
            Distribution::Val(v) => DistExpr::Val(v.to_term()),
            Distribution::Gaussian { mean, variance } => {
                DistExpr::Gaussian(Term::Num(*mean), Term::Num(*variance))
            }
            Distribution::Discrete(entries) => DistExpr::Discrete(
                entries
                    .iter()
                    .map(|(v, p)| (Term::Num(*p), v.to_term()))
                    .collect(),
            ),
        }
    }

    /// Natural-log density (continuous) or log probability mass (discrete)
    /// of `x` under the distribution. Values outside the support give
    /// negative infinity.
    pub fn log_density(&self, x: &Value) -> Result<f64, Error> {
        match self {
            Distribution::Val(v) => Ok(if v == x { 0.0 } else { f64::NEG_INFINITY }),
            Distribution::Gaussian { mean, variance } => match x {
                Value::Num(n) => {
                    let d = n - mean;
                    Ok(-0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                        - d * d / (2.0 * variance))
                }
                Value::Sym(s) => Err(Error::TypeMismatch(format!(
                    "gaussian scored at symbolic value {}",
                    s
                ))),
            },
            Distribution::Discrete(entries) => Ok(entries
                .iter()
                .find(|(l, _)| l == x)
                .map(|(_, p)| p.ln())
                .unwrap_or(f64::NEG_INFINITY)),
        }
    }

    /// Draws one value.
    pub fn sample(&self, rng: &mut crate::rng::Rng) -> Value {
        match self {
            Distribution::Val(v) => v.clone(),
            Distribution::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                Value::Num(mean + variance.sqrt() * z)
            }
            Distribution::Discrete(entries) => {
                let total: f64 = entries.iter().map(|(_, p)| p).sum();
                let mut u = rng.gen::<f64>() * total;
                for (label, p) in entries {
                    u -= p;
                    if u <= 0.0 {
                        return label.clone();
                    }
                }
                entries.last().unwrap().0.clone()
            }
        }
    }

    /// The most probable value: the mean for Gaussians, the highest-mass
    /// label for discrete distributions (first such label on ties).
    pub fn mode(&self) -> Value {
        match self {
            Distribution::Val(v) => v.clone(),
            Distribution::Gaussian { mean, .. } => Value::Num(*mean),
            Distribution::Discrete(entries) => {
                let mut best = &entries[0];
                for e in &entries[1..] {
                    if e.1 > best.1 {
                        best = e;
                    }
                }
                best.0.clone()
            }
        }
    }
}

/// Weights of a statistical model atom. Each weight vector has one entry per
/// input plus a trailing intercept.
#[derive(Debug, Clone, PartialEq)]
pub enum StatModel {
    Linear(Vec<f64>),
    Logistic(Vec<f64>),
    Softmax(Vec<Vec<f64>>),
}

/// The linear combination `inputs . weights[..n] + weights[n]`.
fn affine(weights: &[f64], inputs: &[f64]) -> f64 {
    let mut z = weights[weights.len() - 1];
    for (x, w) in inputs.iter().zip(weights) {
        z += x * w;
    }
    z
}

/// Numerically stable standard logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a score vector.
pub fn softmax(zs: &[f64]) -> Vec<f64> {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl StatModel {
    pub fn from_weights(w: &ModelWeights, logistic: bool) -> StatModel {
        match w {
            ModelWeights::Vector(v) if logistic => StatModel::Logistic(v.clone()),
            ModelWeights::Vector(v) => StatModel::Linear(v.clone()),
            ModelWeights::Matrix(rows) => StatModel::Softmax(rows.clone()),
        }
    }

    /// Number of inputs the model consumes.
    pub fn input_arity(&self) -> usize {
        match self {
            StatModel::Linear(w) | StatModel::Logistic(w) => w.len() - 1,
            StatModel::Softmax(rows) => rows[0].len() - 1,
        }
    }

    /// Number of parameters the model produces: 1 for linear, the number of
    /// class probabilities otherwise.
    pub fn output_arity(&self) -> usize {
        match self {
            StatModel::Linear(_) => 1,
            StatModel::Logistic(_) => 2,
            StatModel::Softmax(rows) => rows.len(),
        }
    }
}

/// Evaluates a statistical model atom on ground inputs: the predicted mean
/// for linear models, class probabilities for logistic and softmax.
pub fn eval_stat_model(model: &StatModel, inputs: &[f64]) -> Result<Vec<f64>, Error> {
    if inputs.len() != model.input_arity() {
        return Err(Error::ArityMismatch {
            what: "statistical model inputs".into(),
            expected: model.input_arity(),
            found: inputs.len(),
        });
    }
    match model {
        StatModel::Linear(w) => Ok(vec![affine(w, inputs)]),
        StatModel::Logistic(w) => {
            let p1 = sigmoid(affine(w, inputs));
            Ok(vec![p1, 1.0 - p1])
        }
        StatModel::Softmax(rows) => {
            let zs: Vec<f64> = rows.iter().map(|row| affine(row, inputs)).collect();
            Ok(softmax(&zs))
        }
    }
}
