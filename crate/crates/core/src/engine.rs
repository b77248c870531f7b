//! Sampling interpreter: backward proof search with lazy memoized sampling,
//! forward world generation, likelihood weighting, and evidence pruning.
//!
//! Queries are answered by sampling partial possible worlds. Each world lazily
//! samples a random variable the first time a proof touches it and memoizes
//! the value, so all later reads in that world agree. Evidence variables are
//! clamped to their observed values and contribute the density of the
//! observation to the world's weight; the conditional probability estimate is
//! the weight-normalized fraction of worlds entailing the query.

use indexmap::{IndexMap, IndexSet};
use rayon::prelude::*;

use crate::dist::{eval_stat_model, Distribution, StatModel, Value};
use crate::error::Error;
use crate::rng::Rng;
use crate::syntax::{
    generative_order, rename_clause, rename_dist, unify_atoms_into, AggOp, Atom, DefClause,
    DistClause, DistExpr, Goal, ModelKind, Program, Subst, Sym, Term,
};

/// Ground observed values, keyed by random-variable atom.
pub type Evidence = IndexMap<Atom, Value>;

const MAX_DEPTH: usize = 2000;

/// Default bound on forward-sampling rounds before giving up.
pub const DEFAULT_MAX_ROUNDS: usize = 1000;

struct FactSet {
    rows: Vec<Atom>,
    by_arg: Vec<IndexMap<Term, Vec<usize>>>,
}

impl FactSet {
    fn new(arity: usize) -> Self {
        FactSet { rows: Vec::new(), by_arg: vec![IndexMap::new(); arity] }
    }

    fn insert(&mut self, atom: Atom) {
        let idx = self.rows.len();
        for (pos, arg) in atom.args.iter().enumerate() {
            self.by_arg[pos].entry(arg.clone()).or_default().push(idx);
        }
        self.rows.push(atom);
    }

    /// Candidate fact indices for a partially resolved call pattern.
    fn candidates(&self, pattern: &Atom) -> Vec<usize> {
        for (pos, arg) in pattern.args.iter().enumerate() {
            if arg.is_ground() && !matches!(arg, Term::Compound(..)) {
                return self.by_arg[pos].get(arg).cloned().unwrap_or_default();
            }
        }
        (0..self.rows.len()).collect()
    }
}

/// A compiled program: clauses indexed by predicate for proof search.
pub struct KB {
    program: Program,
    dist_index: IndexMap<Sym, Vec<DistClause>>,
    rule_index: IndexMap<(Sym, usize), Vec<DefClause>>,
    facts: IndexMap<(Sym, usize), FactSet>,
}

impl KB {
    pub fn new(program: Program) -> KB {
        let mut dist_index: IndexMap<Sym, Vec<DistClause>> = IndexMap::new();
        let mut rule_index: IndexMap<(Sym, usize), Vec<DefClause>> = IndexMap::new();
        let mut facts: IndexMap<(Sym, usize), FactSet> = IndexMap::new();
        for c in program.dist_clauses() {
            dist_index.entry(c.head.pred.clone()).or_default().push(c.clone());
        }
        for c in program.def_clauses() {
            let key = (c.head.pred.clone(), c.head.args.len());
            if c.body.is_empty() && c.head.is_ground() {
                facts
                    .entry(key)
                    .or_insert_with(|| FactSet::new(c.head.args.len()))
                    .insert(c.head.clone());
            } else {
                rule_index.entry(key).or_default().push(c.clone());
            }
        }
        KB { program, dist_index, rule_index, facts }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    /// Whether any distributional clause can actually produce randomness
    /// (anything beyond deterministic point masses).
    pub fn has_randomness(&self) -> bool {
        self.program
            .dist_clauses()
            .any(|c| !matches!(c.dist, DistExpr::Val(_)))
    }

    fn dists_for(&self, pred: &Sym) -> &[DistClause] {
        self.dist_index.get(pred).map(Vec::as_slice).unwrap_or(&[])
    }

    fn rules_for(&self, pred: &Sym, arity: usize) -> &[DefClause] {
        self.rule_index
            .get(&(pred.clone(), arity))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

struct MemoEntry {
    value: Value,
    /// Log density of the clamped evidence value, still to be added to the
    /// world weight on the first touch outside a negated context.
    pending: f64,
    weighted: bool,
}

/// One partial possible world: lazily sampled values plus the accumulated
/// log evidence weight.
pub struct World<'a> {
    kb: &'a KB,
    evidence: &'a Evidence,
    memo: IndexMap<Atom, MemoEntry>,
    in_flight: IndexSet<Atom>,
    log_weight: f64,
    neg_depth: usize,
    lazy: bool,
    fresh: u64,
    rng: Rng,
}

type Sink<'w> = dyn FnMut(&mut World<'_>, &Subst) -> Result<bool, Error> + 'w;

pub(crate) fn resolve_dist(s: &Subst, d: &DistExpr) -> DistExpr {
    match d {
        DistExpr::Val(t) => DistExpr::Val(s.resolve_deep(t)),
        DistExpr::Gaussian(m, v) => DistExpr::Gaussian(s.resolve_deep(m), s.resolve_deep(v)),
        DistExpr::Discrete(entries) => DistExpr::Discrete(
            entries
                .iter()
                .map(|(p, l)| (s.resolve_deep(p), s.resolve_deep(l)))
                .collect(),
        ),
    }
}

impl<'a> World<'a> {
    pub fn new(kb: &'a KB, evidence: &'a Evidence, rng: Rng) -> World<'a> {
        World {
            kb,
            evidence,
            memo: IndexMap::new(),
            in_flight: IndexSet::new(),
            log_weight: 0.0,
            neg_depth: 0,
            lazy: true,
            fresh: 0,
            rng,
        }
    }

    /// Natural log of the world's evidence weight `w_e`.
    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    /// The memoized value of a ground random variable, if sampled already.
    pub fn value_of(&self, rv: &Atom) -> Option<&Value> {
        self.memo.get(rv).map(|e| &e.value)
    }

    /// All sampled random variables in sampling order.
    pub fn sampled(&self) -> impl Iterator<Item = (&Atom, &Value)> {
        self.memo.iter().map(|(a, e)| (a, &e.value))
    }

    /// Clamps and weights every evidence variable. A variable without any
    /// applicable distribution makes the world weightless rather than
    /// failing, since such a world simply cannot entail the evidence.
    pub fn force_evidence(&mut self) -> Result<(), Error> {
        let atoms: Vec<Atom> = self.evidence.keys().cloned().collect();
        for rv in atoms {
            if self.ensure_value(&rv)?.is_none() {
                self.log_weight = f64::NEG_INFINITY;
                return Ok(());
            }
            if self.log_weight == f64::NEG_INFINITY {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Proves a goal conjunction, returning the first solution's bindings.
    pub fn prove(&mut self, goals: &[Goal]) -> Result<Option<Subst>, Error> {
        let mut found = None;
        self.solve(goals, &Subst::new(), 0, &mut |_, s| {
            found = Some(s.clone());
            Ok(true)
        })?;
        Ok(found)
    }

    /// Collects every solution of a goal conjunction.
    pub fn solve_all(&mut self, goals: &[Goal]) -> Result<Vec<Subst>, Error> {
        let mut out = Vec::new();
        self.solve(goals, &Subst::new(), 0, &mut |_, s| {
            out.push(s.clone());
            Ok(false)
        })?;
        Ok(out)
    }

    fn next_fresh(&mut self) -> String {
        self.fresh += 1;
        self.fresh.to_string()
    }

    fn solve(
        &mut self,
        goals: &[Goal],
        s: &Subst,
        depth: usize,
        sink: &mut Sink<'_>,
    ) -> Result<bool, Error> {
        if depth > MAX_DEPTH {
            return Err(Error::NonTermination(depth));
        }
        let Some((goal, rest)) = goals.split_first() else {
            return sink(self, s);
        };
        match goal {
            Goal::True => self.solve(rest, s, depth + 1, sink),
            Goal::Eq(a, b) => {
                let ra = s.resolve_deep(a);
                let rb = s.resolve_deep(b);
                if !ra.is_ground() || !rb.is_ground() {
                    return Err(Error::UnboundVariable {
                        goal: format!("{}=={}", ra, rb),
                    });
                }
                if ra == rb {
                    self.solve(rest, s, depth + 1, sink)
                } else {
                    Ok(false)
                }
            }
            Goal::Rel(atom) => {
                let pattern = s.resolve_atom(atom);
                if let Some(set) = self
                    .kb
                    .facts
                    .get(&(pattern.pred.clone(), pattern.args.len()))
                {
                    for idx in set.candidates(&pattern) {
                        let fact = &set.rows[idx];
                        let mut s2 = s.clone();
                        if unify_atoms_into(&pattern, fact, &mut s2)
                            && self.solve(rest, &s2, depth + 1, sink)?
                        {
                            return Ok(true);
                        }
                    }
                }
                let rules: Vec<DefClause> = self
                    .kb
                    .rules_for(&pattern.pred, pattern.args.len())
                    .to_vec();
                for rule in rules {
                    let suffix = self.next_fresh();
                    let (head, body) = rename_clause(&rule.head, &rule.body, &suffix);
                    let mut s2 = s.clone();
                    if !unify_atoms_into(&pattern, &head, &mut s2) {
                        continue;
                    }
                    let mut continue_rest =
                        |w: &mut World<'_>, s3: &Subst| w.solve(rest, s3, depth + 1, sink);
                    if self.solve(&body, &s2, depth + 1, &mut continue_rest)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Goal::Bind { rv, value } => {
                let pattern = s.resolve_atom(rv);
                if pattern.is_ground() {
                    return match self.ensure_value(&pattern)? {
                        None => Ok(false),
                        Some(v) => {
                            let mut s2 = s.clone();
                            let mut ok = true;
                            let resolved = s2.resolve_deep(value);
                            if !unify_into_subst(&resolved, &v.to_term(), &mut s2) {
                                ok = false;
                            }
                            if ok {
                                self.solve(rest, &s2, depth + 1, sink)
                            } else {
                                Ok(false)
                            }
                        }
                    };
                }
                let clauses: Vec<DistClause> = self.kb.dists_for(&pattern.pred).to_vec();
                for clause in clauses {
                    let suffix = self.next_fresh();
                    let (head, body) = rename_clause(&clause.head, &clause.body, &suffix);
                    let mut s2 = s.clone();
                    if !unify_atoms_into(&pattern, &head, &mut s2) {
                        continue;
                    }
                    let pattern2 = pattern.clone();
                    let value2 = value.clone();
                    let mut after_body = |w: &mut World<'_>, s3: &Subst| {
                        let ground = s3.resolve_atom(&pattern2);
                        if !ground.is_ground() {
                            return Err(Error::UnboundVariable {
                                goal: ground.to_string(),
                            });
                        }
                        match w.ensure_value(&ground)? {
                            None => Ok(false),
                            Some(v) => {
                                let mut s4 = s3.clone();
                                let resolved = s4.resolve_deep(&value2);
                                if unify_into_subst(&resolved, &v.to_term(), &mut s4) {
                                    w.solve(rest, &s4, depth + 1, sink)
                                } else {
                                    Ok(false)
                                }
                            }
                        }
                    };
                    if self.solve(&body, &s2, depth + 1, &mut after_body)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Goal::Neg(inner) => {
                self.neg_depth += 1;
                let mut proved = false;
                let inner_goals = std::slice::from_ref(inner.as_ref());
                let result = self.solve(inner_goals, s, depth + 1, &mut |_, _| {
                    proved = true;
                    Ok(true)
                });
                self.neg_depth -= 1;
                result?;
                if proved {
                    Ok(false)
                } else {
                    self.solve(rest, s, depth + 1, sink)
                }
            }
            Goal::Agg(agg) => {
                let mut items: Vec<Value> = Vec::new();
                let item_tpl = agg.item.clone();
                let inner: Vec<Goal> = agg.inner.iter().map(|g| s.resolve_goal(g)).collect();
                self.solve(&inner, s, depth + 1, &mut |_, s2| {
                    let t = s2.resolve_deep(&item_tpl);
                    match Value::from_term(&t) {
                        Some(v) => {
                            items.push(v);
                            Ok(false)
                        }
                        None => Err(Error::UnboundVariable {
                            goal: format!("aggregated term {}", t),
                        }),
                    }
                })?;
                if items.is_empty() {
                    return Ok(false);
                }
                let result = eval_aggregate(agg.op, &items)?;
                let mut s2 = s.clone();
                let resolved = s2.resolve_deep(&agg.result);
                if unify_into_subst(&resolved, &result.to_term(), &mut s2) {
                    self.solve(rest, &s2, depth + 1, sink)
                } else {
                    Ok(false)
                }
            }
            Goal::Model(m) => {
                let mut inputs = Vec::with_capacity(m.inputs.len());
                for t in &m.inputs {
                    match s.resolve_deep(t) {
                        Term::Num(n) => inputs.push(n),
                        Term::Var(v) => {
                            return Err(Error::UnboundVariable {
                                goal: format!("model input {}", v),
                            })
                        }
                        other => {
                            return Err(Error::TypeMismatch(format!(
                                "model input {} is not numeric",
                                other
                            )))
                        }
                    }
                }
                let model = StatModel::from_weights(&m.weights, m.kind == ModelKind::Logistic);
                let params = eval_stat_model(&model, &inputs)?;
                if params.len() != m.outputs.len() {
                    return Err(Error::ArityMismatch {
                        what: "model outputs".into(),
                        expected: params.len(),
                        found: m.outputs.len(),
                    });
                }
                let mut s2 = s.clone();
                for (out, p) in m.outputs.iter().zip(&params) {
                    let resolved = s2.resolve_deep(out);
                    if !unify_into_subst(&resolved, &Term::Num(*p), &mut s2) {
                        return Ok(false);
                    }
                }
                self.solve(rest, &s2, depth + 1, sink)
            }
        }
    }

    /// Returns the value of a ground random variable, sampling it (or
    /// clamping it to evidence) on first touch. `None` means no
    /// distributional clause applies, so the variable is undefined.
    pub fn ensure_value(&mut self, rv: &Atom) -> Result<Option<Value>, Error> {
        if let Some(entry) = self.memo.get_mut(rv) {
            if !entry.weighted && self.neg_depth == 0 {
                self.log_weight += entry.pending;
                entry.weighted = true;
            }
            return Ok(Some(entry.value.clone()));
        }
        if !self.lazy {
            return Ok(None);
        }
        if !self.in_flight.insert(rv.clone()) {
            return Err(Error::CyclicDependency { rv: rv.to_string() });
        }
        let result = self.evaluate_distributions(rv);
        self.in_flight.shift_remove(rv);
        let mut dists = result?;
        let dist = match dists.len() {
            0 => return Ok(None),
            1 => dists.pop().unwrap(),
            n => {
                return Err(Error::ConflictingDefinition {
                    rv: rv.to_string(),
                    count: n,
                })
            }
        };
        let entry = match self.evidence.get(rv) {
            Some(obs) => {
                let ld = dist.log_density(obs)?;
                if self.neg_depth == 0 {
                    self.log_weight += ld;
                    MemoEntry { value: obs.clone(), pending: 0.0, weighted: true }
                } else {
                    MemoEntry { value: obs.clone(), pending: ld, weighted: false }
                }
            }
            None => MemoEntry {
                value: dist.sample(&mut self.rng),
                pending: 0.0,
                weighted: true,
            },
        };
        let value = entry.value.clone();
        self.memo.insert(rv.clone(), entry);
        Ok(Some(value))
    }

    /// Evaluates every distribution whose clause body holds for `rv`,
    /// deduplicating identical results.
    fn evaluate_distributions(&mut self, rv: &Atom) -> Result<Vec<Distribution>, Error> {
        let clauses: Vec<DistClause> = self.kb.dists_for(&rv.pred).to_vec();
        let mut dists: Vec<Distribution> = Vec::new();
        for clause in clauses {
            let suffix = self.next_fresh();
            let (head, body) = rename_clause(&clause.head, &clause.body, &suffix);
            let dist_tpl = rename_dist(&clause.dist, &suffix);
            let mut s = Subst::new();
            if !unify_atoms_into(rv, &head, &mut s) {
                continue;
            }
            self.solve(&body, &s, 0, &mut |_, s2| {
                let expr = resolve_dist(s2, &dist_tpl);
                let dist = Distribution::from_expr(&expr)?;
                if !dists.contains(&dist) {
                    dists.push(dist);
                }
                Ok(false)
            })?;
        }
        Ok(dists)
    }
}

/// Unification entry point used while proving: both sides already resolved.
fn unify_into_subst(a: &Term, b: &Term, s: &mut Subst) -> bool {
    match crate::syntax::unify(a, b) {
        Some(mgu) => {
            for (v, t) in mgu.iter() {
                s.bind(v.clone(), t.clone());
            }
            true
        }
        None => false,
    }
}

/// Combines a multiset of values under an aggregation operator.
pub fn eval_aggregate(op: AggOp, items: &[Value]) -> Result<Value, Error> {
    if items.is_empty() {
        return Err(Error::EmptyInput("aggregation"));
    }
    let nums = || -> Result<Vec<f64>, Error> {
        items
            .iter()
            .map(|v| {
                v.as_num().ok_or_else(|| {
                    Error::TypeMismatch(format!("{} aggregation over label {}", op.name(), v))
                })
            })
            .collect()
    };
    Ok(match op {
        AggOp::Sum => Value::Num(nums()?.iter().sum()),
        AggOp::Avg => {
            let ns = nums()?;
            Value::Num(ns.iter().sum::<f64>() / ns.len() as f64)
        }
        AggOp::Max => Value::Num(nums()?.into_iter().fold(f64::NEG_INFINITY, f64::max)),
        AggOp::Min => Value::Num(nums()?.into_iter().fold(f64::INFINITY, f64::min)),
        AggOp::Count => Value::Num(items.len() as f64),
        AggOp::Mod => {
            let mut counts: std::collections::BTreeMap<Value, usize> =
                std::collections::BTreeMap::new();
            for v in items {
                *counts.entry(v.clone()).or_default() += 1;
            }
            let best = *counts.values().max().unwrap();
            counts
                .into_iter()
                .find(|(_, c)| *c == best)
                .map(|(v, _)| v)
                .unwrap()
        }
    })
}

/// Materializes a complete possible world by repeatedly firing clauses whose
/// bodies already hold, sampling each random variable once, in generative
/// attribute order. The returned world answers [`World::prove`] against the
/// materialized values without further sampling.
pub fn forward_sample_world<'a>(
    kb: &'a KB,
    evidence: &'a Evidence,
    rng: Rng,
    max_rounds: usize,
) -> Result<World<'a>, Error> {
    let order = generative_order(kb.program()).map_err(|cycle| Error::Invalid(vec![cycle]))?;
    let mut world = World::new(kb, evidence, rng);
    world.lazy = false;
    let mut eval_dists: IndexMap<Atom, Distribution> = IndexMap::new();
    for round in 0.. {
        if round >= max_rounds {
            return Err(Error::NonTermination(max_rounds));
        }
        let mut changed = false;
        for attr in &order {
            let clauses: Vec<DistClause> = kb.dists_for(attr).to_vec();
            for clause in clauses {
                let suffix = world.next_fresh();
                let (head, body) = rename_clause(&clause.head, &clause.body, &suffix);
                let dist_tpl = rename_dist(&clause.dist, &suffix);
                let mut groundings: Vec<(Atom, Distribution)> = Vec::new();
                world.solve(&body, &Subst::new(), 0, &mut |_, s| {
                    let ground = s.resolve_atom(&head);
                    if !ground.is_ground() {
                        return Err(Error::UnboundVariable { goal: ground.to_string() });
                    }
                    let dist = Distribution::from_expr(&resolve_dist(s, &dist_tpl))?;
                    groundings.push((ground, dist));
                    Ok(false)
                })?;
                for (ground, dist) in groundings {
                    match eval_dists.get(&ground) {
                        Some(prev) if *prev != dist => {
                            return Err(Error::ConflictingDefinition {
                                rv: ground.to_string(),
                                count: 2,
                            });
                        }
                        Some(_) => {}
                        None => {
                            let value = match world.evidence.get(&ground) {
                                Some(obs) => {
                                    world.log_weight += dist.log_density(obs)?;
                                    obs.clone()
                                }
                                None => dist.sample(&mut world.rng),
                            };
                            world.memo.insert(
                                ground.clone(),
                                MemoEntry { value, pending: 0.0, weighted: true },
                            );
                            eval_dists.insert(ground, dist);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(world)
}

/// A conditional-probability estimate with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub n_samples: usize,
    /// Mean linear-scale evidence weight across the sampled worlds.
    pub effective_evidence_weight: f64,
}

pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn run_worlds<T: Send>(
    kb: &KB,
    n: usize,
    seed: u64,
    per_world: impl Fn(&mut World<'_>) -> Result<T, Error> + Sync,
    evidence: &Evidence,
) -> Result<Vec<(T, f64)>, Error> {
    if n == 0 {
        return Err(Error::EmptyInput("conditional estimation"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut world = World::new(kb, evidence, crate::rng::substream(seed, i as u64));
            world.force_evidence()?;
            let out = per_world(&mut world)?;
            Ok((out, world.log_weight))
        })
        .collect()
}

/// Normalizes log weights into linear weights summing to one, together with
/// the mean linear weight. Fails when every weight is zero.
fn normalize_log_weights(lws: &[f64]) -> Result<(Vec<f64>, f64), Error> {
    let m = lws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidenceWeight { n: lws.len() });
    }
    let linear: Vec<f64> = lws.iter().map(|lw| (lw - m).exp()).collect();
    let total = compensated_sum(linear.iter().cloned());
    let mean = (m + total.ln() - (lws.len() as f64).ln()).exp();
    Ok((linear.iter().map(|w| w / total).collect(), mean))
}

/// Likelihood-weighted estimate of `p(goal | evidence)` from `n` worlds.
pub fn estimate_conditional(
    kb: &KB,
    goal: &[Goal],
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<Estimate, Error> {
    let results = run_worlds(kb, n, seed, |world| Ok(world.prove(goal)?.is_some()), evidence)?;
    let lws: Vec<f64> = results.iter().map(|(_, lw)| *lw).collect();
    let (weights, mean_we) = normalize_log_weights(&lws)?;
    let estimate = compensated_sum(
        results
            .iter()
            .zip(&weights)
            .filter(|((q, _), _)| *q)
            .map(|(_, w)| *w),
    );
    Ok(Estimate {
        estimate,
        n_samples: n,
        effective_evidence_weight: mean_we,
    })
}

/// Weighted predictive distribution of a single random variable given
/// evidence: weighted label frequencies for discrete values, a Gaussian
/// summary (weighted mean and variance) for continuous ones.
pub fn predictive_distribution(
    kb: &KB,
    rv: &Atom,
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<Distribution, Error> {
    let results = run_worlds(kb, n, seed, |world| world.ensure_value(rv), evidence)?;
    let lws: Vec<f64> = results
        .iter()
        .map(|(v, lw)| if v.is_some() { *lw } else { f64::NEG_INFINITY })
        .collect();
    let (weights, _) = normalize_log_weights(&lws)?;
    let pairs: Vec<(&Value, f64)> = results
        .iter()
        .zip(&weights)
        .filter_map(|((v, _), w)| v.as_ref().map(|v| (v, *w)))
        .collect();
    if pairs.iter().all(|(v, _)| matches!(v, Value::Num(_))) {
        let mean = compensated_sum(pairs.iter().map(|(v, w)| w * v.as_num().unwrap()));
        let var = compensated_sum(pairs.iter().map(|(v, w)| {
            let d = v.as_num().unwrap() - mean;
            w * d * d
        }));
        Distribution::gaussian(mean, var.max(crate::fit::VARIANCE_FLOOR))
    } else {
        let mut freq: IndexMap<Value, f64> = IndexMap::new();
        for (v, w) in pairs {
            *freq.entry(v.clone()).or_default() += w;
        }
        freq.sort_by(|k1, v1, k2, v2| v2.total_cmp(v1).then_with(|| k1.cmp(k2)));
        let total: f64 = freq.values().sum();
        Distribution::discrete(freq.into_iter().map(|(v, w)| (v, w / total)).collect())
    }
}

/// One attempted proof of a clause instance: whether it succeeded, the value
/// the head bound to, the feature values read by the body, and the
/// normalized likelihood weight.
#[derive(Debug, Clone)]
pub struct ProofRecord {
    pub success: bool,
    pub head: Option<Value>,
    pub features: Option<Vec<f64>>,
    pub weight: f64,
}

/// Proves `?- head ~= V, body` `n` times in independent worlds and returns
/// one weighted record per attempt. Weights are `w_q * w_e / Σ w_e`; failed
/// attempts carry weight zero but still contribute to the normalizer.
pub fn sample_weighted_proofs(
    kb: &KB,
    head: &Atom,
    body: &[Goal],
    feature_vars: &[Sym],
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<Vec<ProofRecord>, Error> {
    let head_var = crate::syntax::sym("%Head");
    let mut goals = Vec::with_capacity(body.len() + 1);
    goals.push(Goal::Bind {
        rv: head.clone(),
        value: Term::Var(head_var.clone()),
    });
    goals.extend_from_slice(body);
    let results = run_worlds(
        kb,
        n,
        seed,
        |world| -> Result<(Option<Value>, Option<Vec<f64>>), Error> {
            match world.prove(&goals)? {
                None => Ok((None, None)),
                Some(s) => {
                    let head_val = Value::from_term(&s.resolve_deep(&Term::Var(head_var.clone())))
                        .ok_or_else(|| Error::UnboundVariable {
                            goal: head.to_string(),
                        })?;
                    let mut feats = Vec::with_capacity(feature_vars.len());
                    for v in feature_vars {
                        match s.resolve_deep(&Term::Var(v.clone())) {
                            Term::Num(x) => feats.push(x),
                            Term::Var(u) => {
                                return Err(Error::UnboundVariable {
                                    goal: format!("feature variable {}", u),
                                })
                            }
                            other => {
                                return Err(Error::TypeMismatch(format!(
                                    "feature variable {} bound to non-number {}",
                                    v, other
                                )))
                            }
                        }
                    }
                    Ok((Some(head_val), Some(feats)))
                }
            }
        },
        evidence,
    )?;
    let lws: Vec<f64> = results.iter().map(|(_, lw)| *lw).collect();
    let m = lws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(results
            .into_iter()
            .map(|((head, features), _)| ProofRecord {
                success: head.is_some(),
                head,
                features,
                weight: 0.0,
            })
            .collect());
    }
    let total = compensated_sum(lws.iter().map(|lw| (lw - m).exp()));
    Ok(results
        .into_iter()
        .zip(lws)
        .map(|(((head, features), _), lw)| {
            let success = head.is_some();
            ProofRecord {
                success,
                head,
                features,
                weight: if success { (lw - m).exp() / total } else { 0.0 },
            }
        })
        .collect())
}

/// Splits a clause body into its positive relational skeleton, the random
/// variables it reads directly, and the bodies of its negated goals.
fn flatten_body(goals: &[Goal], skeleton: &mut Vec<Goal>, reads: &mut Vec<Atom>, negs: &mut Vec<Vec<Goal>>) {
    for g in goals {
        match g {
            Goal::Rel(a) => skeleton.push(Goal::Rel(a.clone())),
            Goal::Bind { rv, .. } => reads.push(rv.clone()),
            Goal::Agg(agg) => flatten_body(&agg.inner, skeleton, reads, negs),
            Goal::Neg(inner) => negs.push(vec![inner.as_ref().clone()]),
            Goal::True | Goal::Eq(..) | Goal::Model(..) => {}
        }
    }
}

/// Adds `head ← read` edges for every grounding of `goals` compatible with
/// the enclosing solution. Returns false when a read cannot be grounded, in
/// which case pruning must be abandoned.
fn add_read_edges(
    world: &mut World<'_>,
    head: &Atom,
    goals: &[Goal],
    parents: &mut IndexMap<Atom, IndexSet<Atom>>,
    children: &mut IndexMap<Atom, IndexSet<Atom>>,
) -> Result<bool, Error> {
    let mut skeleton = Vec::new();
    let mut reads = Vec::new();
    let mut negs = Vec::new();
    flatten_body(goals, &mut skeleton, &mut reads, &mut negs);
    for theta in world.solve_all(&skeleton)? {
        for read in &reads {
            let rv = theta.resolve_atom(read);
            if !rv.is_ground() {
                return Ok(false);
            }
            parents.entry(head.clone()).or_default().insert(rv.clone());
            children.entry(rv).or_default().insert(head.clone());
        }
        for neg in &negs {
            let resolved: Vec<Goal> = neg.iter().map(|g| theta.resolve_goal(g)).collect();
            if !add_read_edges(world, head, &resolved, parents, children)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Prunes the evidence to the variables that can influence the query,
/// by grounding the parent edges of the program's distributional clauses
/// against the relational facts and running Bayes-ball over the resulting
/// graph. Falls back to the full evidence set when the graph cannot be
/// grounded completely.
pub fn relevant_evidence(kb: &KB, query: &Atom, evidence: &Evidence) -> Result<Evidence, Error> {
    if evidence.is_empty() {
        return Ok(Evidence::new());
    }
    let no_evidence = Evidence::new();
    let mut parents: IndexMap<Atom, IndexSet<Atom>> = IndexMap::new();
    let mut children: IndexMap<Atom, IndexSet<Atom>> = IndexMap::new();
    let clauses: Vec<DistClause> = kb.program().dist_clauses().cloned().collect();
    for clause in clauses {
        let mut world = World::new(kb, &no_evidence, crate::rng::substream(0, 0));
        world.lazy = false;
        let mut skeleton = Vec::new();
        let mut reads = Vec::new();
        let mut negs = Vec::new();
        flatten_body(&clause.body, &mut skeleton, &mut reads, &mut negs);
        for theta in world.solve_all(&skeleton)? {
            let head = theta.resolve_atom(&clause.head);
            if !head.is_ground() {
                return Ok(evidence.clone());
            }
            for read in &reads {
                let rv = theta.resolve_atom(read);
                if !rv.is_ground() {
                    return Ok(evidence.clone());
                }
                parents.entry(head.clone()).or_default().insert(rv.clone());
                children.entry(rv).or_default().insert(head.clone());
            }
            for neg in &negs {
                let resolved: Vec<Goal> = neg.iter().map(|g| theta.resolve_goal(g)).collect();
                if !add_read_edges(&mut world, &head, &resolved, &mut parents, &mut children)? {
                    return Ok(evidence.clone());
                }
            }
        }
    }
    let mut visited: IndexSet<Atom> = IndexSet::new();
    let mut sent_up: IndexSet<Atom> = IndexSet::new();
    let mut sent_down: IndexSet<Atom> = IndexSet::new();
    let mut queue: Vec<(Atom, bool)> = vec![(query.clone(), true)];
    while let Some((node, from_child)) = queue.pop() {
        visited.insert(node.clone());
        let observed = evidence.contains_key(&node) && node != *query;
        let mut send_up = false;
        let mut send_down = false;
        if from_child {
            if !observed {
                send_up = true;
                send_down = true;
            }
        } else if observed {
            send_up = true;
        } else {
            send_down = true;
        }
        if send_up && sent_up.insert(node.clone()) {
            if let Some(ps) = parents.get(&node) {
                for p in ps {
                    queue.push((p.clone(), true));
                }
            }
        }
        if send_down && sent_down.insert(node.clone()) {
            if let Some(cs) = children.get(&node) {
                for c in cs {
                    queue.push((c.clone(), false));
                }
            }
        }
    }
    Ok(evidence
        .iter()
        .filter(|(atom, _)| **atom == *query || visited.contains(*atom))
        .map(|(atom, v)| (atom.clone(), v.clone()))
        .collect())
}
