//! Distributional logic tree induction.
//!
//! One tree is grown per target attribute. Each internal node tests a body
//! literal generated from the declarative bias: either a direct read of
//! another attribute of the same entity or an aggregation over a chain of
//! link relations. Discrete tests branch once per label plus a fail branch
//! for entities where the test has no solution; continuous tests branch into
//! a success branch, whose value becomes a feature for the leaf models below
//! it, and a fail branch. Every leaf carries a fitted distribution over the
//! target, optionally conditioned on the features collected along its path.
//!
//! Flattening the tree yields one distributional clause per populated leaf.
//! Because sibling branches are mutually exclusive and jointly exhaustive,
//! exactly one clause body holds for any entity in any world, so the learned
//! clauses never define a random variable twice.
//!
//! Tree growth is greedy: a node becomes a leaf unless some candidate test
//! improves the complexity-penalized score of the node by more than the
//! configured margin, and candidates are scored by summing the scores of the
//! leaves they would create. Scores are `2 * ell - k * ln(n)` where `ell` is
//! the expected log-likelihood of the examples reaching the node under the
//! fitted leaf, `k` the number of free parameters, and `n` the number of
//! examples covered.

use indexmap::IndexSet;
use rayon::prelude::*;

use crate::data::BiasSpec;
use crate::engine::{sample_weighted_proofs, Evidence, KB};
use crate::error::Error;
use crate::fit::{
    fit_categorical, fit_class_model, fit_gaussian, fit_linear_gaussian, Fit, LeafModel,
    WeightedSample,
};
use crate::rng::mix;
use crate::syntax::{
    sym, validate_program, AggAtom, AggOp, ArgMode, Atom, AttrKind, DistClause, DistExpr, Goal,
    Item, ModelAtom, ModelKind, ModelWeights, Program, Severity, Span, Subst, Sym, Term,
};

/// Tuning knobs for tree induction.
#[derive(Clone, Debug)]
pub struct LearnParams {
    /// Minimum score improvement a split must achieve over leaving the node
    /// as a leaf. Improvements must also be strictly positive.
    pub epsilon: f64,
    /// Maximum node depth; the root sits at depth 0.
    pub max_depth: usize,
    /// Maximum number of body literals per emitted clause, counting the
    /// entity-membership literal.
    pub max_body: usize,
    /// Weighted proofs sampled per entity and candidate body. Defaults to 1
    /// when the program is fully deterministic and 20 otherwise.
    pub n_proofs: Option<usize>,
    /// Base seed for proof sampling.
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            epsilon: 0.0,
            max_depth: 4,
            max_body: 6,
            n_proofs: None,
            seed: 0,
        }
    }
}

/// How a test literal partitions the examples at a node.
#[derive(Clone, Debug, PartialEq)]
pub enum TestKind {
    /// One branch per label plus a fail branch.
    Discrete(Vec<Sym>),
    /// One success branch binding the result variable plus a fail branch.
    Continuous,
}

/// A candidate test literal for an internal node.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    /// The literal added to the clause body on the success branches.
    pub test: Goal,
    /// The variable receiving the read or aggregated value.
    pub result_var: Sym,
    /// How the test splits the examples.
    pub kind: TestKind,
}

/// Branch selector under an internal node.
#[derive(Clone, Debug, PartialEq)]
pub enum Branch {
    /// The test succeeded with this label as its value.
    Value(Sym),
    /// The test succeeded; continuous tests only.
    Success,
    /// The test has no solution.
    Fail,
}

/// A fitted distributional logic tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Dlt {
    Leaf {
        /// The fitted target distribution at this leaf.
        model: LeafModel,
        /// Path variables feeding the leaf model, in introduction order.
        features: Vec<Sym>,
        /// Entities whose proofs reached this leaf with nonzero weight.
        n_examples: usize,
        /// Complexity-penalized fit score of this leaf.
        score: f64,
    },
    Node {
        /// The test literal with its result variable unbound.
        test: Goal,
        /// The result variable of `test`.
        result_var: Sym,
        /// How the test branches.
        kind: TestKind,
        /// One entry per branch; `None` when no example reaches the branch.
        children: Vec<(Branch, Option<Box<Dlt>>)>,
    },
}

impl Dlt {
    /// Number of leaves that hold at least one example.
    pub fn n_leaves(&self) -> usize {
        match self {
            Dlt::Leaf { .. } => 1,
            Dlt::Node { children, .. } => children
                .iter()
                .filter_map(|(_, c)| c.as_ref())
                .map(|c| c.n_leaves())
                .sum(),
        }
    }

    /// Maximum node depth; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Dlt::Leaf { .. } => 0,
            Dlt::Node { children, .. } => {
                1 + children
                    .iter()
                    .filter_map(|(_, c)| c.as_ref())
                    .map(|c| c.depth())
                    .max()
                    .unwrap_or(0)
            }
        }
    }
}

/// A fitted leaf distribution with its fit quality and penalized score.
#[derive(Clone, Debug)]
pub struct ScoredLeaf {
    /// The fitted distribution.
    pub model: LeafModel,
    /// Expected log-likelihood of the training rows under the model.
    pub ell: f64,
    /// `2 * ell - k * ln(n)`.
    pub score: f64,
}

/// Complexity-penalized score: twice the expected log-likelihood minus
/// `k * ln(n)` with `n` the number of covered examples.
pub fn bic_score(ell: f64, param_count: usize, n_examples: usize) -> f64 {
    2.0 * ell - param_count as f64 * (n_examples as f64).ln()
}

/// Fits the best leaf distribution for the rows: a plain marginal always,
/// plus a feature-conditioned model when features are in scope, keeping
/// whichever scores higher (the marginal wins ties).
pub fn fit_leaf(
    rows: &[WeightedSample],
    n_examples: usize,
    domain: Option<&[Sym]>,
    n_features: usize,
) -> Result<ScoredLeaf, Error> {
    let plain = match domain {
        Some(labels) => fit_categorical(rows, labels)?,
        None => fit_gaussian(rows)?,
    };
    let mut best = scored(plain, n_examples);
    if n_features > 0 {
        let with_model = match domain {
            Some(labels) => fit_class_model(rows, labels)?,
            None => fit_linear_gaussian(rows)?,
        };
        let with_model = scored(with_model, n_examples);
        if with_model.score > best.score {
            best = with_model;
        }
    }
    Ok(best)
}

fn scored(fit: Fit, n_examples: usize) -> ScoredLeaf {
    let score = bic_score(fit.ell, fit.model.param_count(), n_examples);
    ScoredLeaf {
        model: fit.model,
        ell: fit.ell,
        score,
    }
}

fn fresh_var(fresh: &mut u64, prefix: &str) -> Sym {
    *fresh += 1;
    sym(&format!("{}{}", prefix, fresh))
}

/// Generates the candidate test literals for one target attribute.
///
/// Candidates come from the mode declarations for the target whose read
/// attribute precedes the target in the rank. Modes without link relations
/// read an attribute of a variable already in scope; modes with links
/// aggregate an attribute reached through the instantiated link chain, where
/// `+` arguments range over every in-scope variable of the matching type and
/// `-` arguments introduce fresh local variables. Tests already used on the
/// path and duplicates are dropped.
pub fn refinements(
    bias: &BiasSpec,
    rank: &[Sym],
    target: &Sym,
    scope: &[(Sym, Sym)],
    used: &IndexSet<String>,
    fresh: &mut u64,
) -> Vec<Refinement> {
    let Some(target_pos) = rank.iter().position(|a| a == target) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut seen: IndexSet<String> = IndexSet::new();
    for mode in bias.modes.iter().filter(|m| m.target == *target) {
        let attr = &mode.attr.0;
        let Some(attr_pos) = rank.iter().position(|a| a == attr) else {
            continue;
        };
        if attr_pos >= target_pos {
            continue;
        }
        let Some(attr_types) = bias.relation_types(attr) else {
            continue;
        };
        let attr_ty = &attr_types[0];
        let kind = test_kind(mode.agg, bias.attr_kind(attr));
        match mode.agg {
            None => {
                for (var, _) in scope.iter().filter(|(_, ty)| ty == attr_ty) {
                    let result_var = fresh_var(fresh, "V");
                    let test = Goal::Bind {
                        rv: Atom {
                            pred: attr.clone(),
                            args: vec![Term::Var(var.clone())],
                        },
                        value: Term::Var(result_var.clone()),
                    };
                    push_unique(&mut out, &mut seen, used, scope, test, result_var, &kind);
                }
            }
            Some(op) => {
                let mut chains = Vec::new();
                enumerate_chains(
                    bias,
                    &mode.links,
                    scope.to_vec(),
                    Vec::new(),
                    fresh,
                    &mut chains,
                );
                for (atoms, avail) in chains {
                    let locals = &avail[scope.len()..];
                    for (lv, _) in locals.iter().filter(|(_, ty)| ty == attr_ty) {
                        let item_var = fresh_var(fresh, "X");
                        let result_var = fresh_var(fresh, "V");
                        let mut inner: Vec<Goal> =
                            atoms.iter().cloned().map(Goal::Rel).collect();
                        inner.push(Goal::Bind {
                            rv: Atom {
                                pred: attr.clone(),
                                args: vec![Term::Var(lv.clone())],
                            },
                            value: Term::Var(item_var.clone()),
                        });
                        let test = Goal::Agg(AggAtom {
                            op,
                            item: Term::Var(item_var),
                            inner,
                            result: Term::Var(result_var.clone()),
                        });
                        push_unique(&mut out, &mut seen, used, scope, test, result_var, &kind);
                    }
                }
            }
        }
    }
    out
}

/// The branching behaviour of a test reading `attr_kind` through `op`.
fn test_kind(op: Option<AggOp>, attr_kind: Option<&AttrKind>) -> TestKind {
    let labels = match attr_kind {
        Some(AttrKind::Discrete(l)) => Some(l.clone()),
        _ => None,
    };
    match op {
        None | Some(AggOp::Mod) => match labels {
            Some(l) => TestKind::Discrete(l),
            None => TestKind::Continuous,
        },
        Some(AggOp::Avg)
        | Some(AggOp::Sum)
        | Some(AggOp::Max)
        | Some(AggOp::Min)
        | Some(AggOp::Count) => TestKind::Continuous,
    }
}

/// Instantiates a link chain left to right, branching over every in-scope
/// variable of the required type for `+` slots and introducing one fresh
/// local variable for each `-` slot. Yields the chain atoms together with
/// the full variable scope (outer scope first, then locals).
fn enumerate_chains(
    bias: &BiasSpec,
    links: &[(Sym, Vec<ArgMode>)],
    avail: Vec<(Sym, Sym)>,
    atoms: Vec<Atom>,
    fresh: &mut u64,
    out: &mut Vec<(Vec<Atom>, Vec<(Sym, Sym)>)>,
) {
    let Some(((name, pattern), rest)) = links.split_first() else {
        out.push((atoms, avail));
        return;
    };
    let Some(types) = bias.relation_types(name) else {
        return;
    };
    let mut partial: Vec<(Vec<Term>, Vec<(Sym, Sym)>)> = vec![(Vec::new(), avail)];
    for (ty, m) in types.iter().zip(pattern) {
        let mut next = Vec::new();
        for (args, av) in partial {
            match m {
                ArgMode::In => {
                    for (v, vty) in &av {
                        if vty == ty {
                            let mut args2 = args.clone();
                            args2.push(Term::Var(v.clone()));
                            next.push((args2, av.clone()));
                        }
                    }
                }
                ArgMode::Out => {
                    let v = fresh_var(fresh, "E");
                    let mut args2 = args;
                    args2.push(Term::Var(v.clone()));
                    let mut av2 = av;
                    av2.push((v, ty.clone()));
                    next.push((args2, av2));
                }
            }
        }
        partial = next;
    }
    for (args, av) in partial {
        let mut atoms2 = atoms.clone();
        atoms2.push(Atom {
            pred: name.clone(),
            args,
        });
        enumerate_chains(bias, rest, av, atoms2, fresh, out);
    }
}

fn push_unique(
    out: &mut Vec<Refinement>,
    seen: &mut IndexSet<String>,
    used: &IndexSet<String>,
    scope: &[(Sym, Sym)],
    test: Goal,
    result_var: Sym,
    kind: &TestKind,
) {
    let key = canon_test(&test, scope);
    if used.contains(&key) || !seen.insert(key) {
        return;
    }
    out.push(Refinement {
        test,
        result_var,
        kind: kind.clone(),
    });
}

/// Prints a test with its non-scope variables renamed in first-occurrence
/// order, so alpha-equivalent tests from different nodes compare equal.
fn canon_test(test: &Goal, scope: &[(Sym, Sym)]) -> String {
    let mut vars = Vec::new();
    test.collect_vars(&mut vars);
    let mut renames = Subst::new();
    let mut n = 0;
    for v in vars {
        if scope.iter().any(|(sv, _)| *sv == v) || renames.get(&v).is_some() {
            continue;
        }
        renames.bind(v.clone(), Term::Var(sym(&format!("%{}", n))));
        n += 1;
    }
    renames.resolve_goal(test).to_string()
}

/// The body literal realizing one branch of a test.
fn branch_literal(test: &Goal, result_var: &Sym, branch: &Branch) -> Goal {
    match branch {
        Branch::Value(label) => {
            let mut s = Subst::new();
            s.bind(result_var.clone(), Term::Const(label.clone()));
            s.resolve_goal(test)
        }
        Branch::Success => test.clone(),
        Branch::Fail => Goal::Neg(Box::new(test.clone())),
    }
}

/// The branches a refinement induces: body and feature list per branch.
fn branch_layout(
    body: &[Goal],
    features: &[Sym],
    r: &Refinement,
) -> Vec<(Branch, Vec<Goal>, Vec<Sym>)> {
    let mut out = Vec::new();
    let mut push = |branch: Branch, extra_feature: bool| {
        let mut b = body.to_vec();
        b.push(branch_literal(&r.test, &r.result_var, &branch));
        let mut f = features.to_vec();
        if extra_feature {
            f.push(r.result_var.clone());
        }
        out.push((branch, b, f));
    };
    match &r.kind {
        TestKind::Discrete(labels) => {
            for l in labels {
                push(Branch::Value(l.clone()), false);
            }
        }
        TestKind::Continuous => push(Branch::Success, true),
    }
    push(Branch::Fail, false);
    out
}

/// The examples reaching one node: covered entities and weighted proof rows.
struct NodeData {
    entities: Vec<Sym>,
    rows: Vec<WeightedSample>,
}

/// Everything needed to score candidate tests at one tree node.
pub struct NodeContext<'a> {
    /// Knowledge base holding the training facts and background clauses.
    pub kb: &'a KB,
    /// The attribute being learned.
    pub target: &'a Sym,
    /// Label domain of the target, `None` when continuous.
    pub domain: Option<&'a [Sym]>,
    /// Weighted proofs sampled per entity and body.
    pub n_proofs: usize,
    /// Clause body accumulated along the path to this node.
    pub body: &'a [Goal],
    /// Continuous path variables in scope, in introduction order.
    pub features: &'a [Sym],
    /// Entities covered by this node.
    pub entities: &'a [Sym],
    /// Seed for proof sampling at this node and candidate.
    pub seed: u64,
}

/// Samples weighted proofs of `target(entity), body` per entity. An entity
/// is covered when its proofs carry nonzero total weight; each successful
/// proof contributes one weighted row.
fn collect_node(
    kb: &KB,
    target: &Sym,
    n_proofs: usize,
    body: &[Goal],
    features: &[Sym],
    entities: &[Sym],
    seed: u64,
) -> Result<NodeData, Error> {
    let t = sym("T");
    let evidence = Evidence::new();
    let mut out = NodeData {
        entities: Vec::new(),
        rows: Vec::new(),
    };
    for (i, ent) in entities.iter().enumerate() {
        let mut s = Subst::new();
        s.bind(t.clone(), Term::Const(ent.clone()));
        let body_t: Vec<Goal> = body.iter().map(|g| s.resolve_goal(g)).collect();
        let head = Atom {
            pred: target.clone(),
            args: vec![Term::Const(ent.clone())],
        };
        let records = sample_weighted_proofs(
            kb,
            &head,
            &body_t,
            features,
            &evidence,
            n_proofs,
            mix(seed, i as u64),
        )?;
        let mut mass = 0.0;
        for r in records {
            if r.success && r.weight > 0.0 {
                mass += r.weight;
                out.rows.push(WeightedSample::new(
                    r.features.expect("successful proofs bind every feature"),
                    r.head.expect("successful proofs bind the head"),
                    r.weight,
                ));
            }
        }
        if mass > 0.0 {
            out.entities.push(ent.clone());
        }
    }
    Ok(out)
}

/// Scores one branch worth of examples; empty branches contribute zero.
fn branch_score(
    d: &NodeData,
    domain: Option<&[Sym]>,
    n_features: usize,
) -> Result<f64, Error> {
    if d.entities.is_empty() {
        return Ok(0.0);
    }
    Ok(fit_leaf(&d.rows, d.entities.len(), domain, n_features)?.score)
}

/// Evaluates one candidate at a node: total branch score plus the per-branch
/// bodies, features, and example sets for reuse when the candidate wins.
fn evaluate_refinement(
    ctx: &NodeContext<'_>,
    r: &Refinement,
) -> Result<(f64, Vec<(Branch, Vec<Goal>, Vec<Sym>, NodeData)>), Error> {
    let mut total = 0.0;
    let mut branches = Vec::new();
    for (bi, (branch, bbody, bfeats)) in
        branch_layout(ctx.body, ctx.features, r).into_iter().enumerate()
    {
        let d = collect_node(
            ctx.kb,
            ctx.target,
            ctx.n_proofs,
            &bbody,
            &bfeats,
            ctx.entities,
            mix(ctx.seed, bi as u64),
        )?;
        total += branch_score(&d, ctx.domain, bfeats.len())?;
        branches.push((branch, bbody, bfeats, d));
    }
    Ok((total, branches))
}

/// Scores a candidate refinement: the sum of the complexity-penalized leaf
/// scores over its branches, where branches reached by no example contribute
/// zero.
pub fn score_refinement(ctx: &NodeContext<'_>, r: &Refinement) -> Result<f64, Error> {
    Ok(evaluate_refinement(ctx, r)?.0)
}

struct Grower<'a> {
    kb: &'a KB,
    bias: &'a BiasSpec,
    rank: &'a [Sym],
    params: &'a LearnParams,
    target: Sym,
    entity_type: Sym,
    domain: Option<Vec<Sym>>,
    n_proofs: usize,
    fresh: u64,
    next_node: u64,
    report: String,
}

impl Grower<'_> {
    fn scope(&self) -> Vec<(Sym, Sym)> {
        vec![(sym("T"), self.entity_type.clone())]
    }

    fn build(
        &mut self,
        body: Vec<Goal>,
        features: Vec<Sym>,
        data: NodeData,
        depth: usize,
        used: IndexSet<String>,
    ) -> Result<Dlt, Error> {
        let node = self.next_node;
        self.next_node += 1;
        let leaf = fit_leaf(
            &data.rows,
            data.entities.len(),
            self.domain.as_deref(),
            features.len(),
        )?;
        let mut chosen: Option<(Refinement, f64, Vec<(Branch, Vec<Goal>, Vec<Sym>, NodeData)>)> =
            None;
        if depth < self.params.max_depth && body.len() < self.params.max_body {
            let scope = self.scope();
            let candidates =
                refinements(self.bias, self.rank, &self.target, &scope, &used, &mut self.fresh);
            let kb = self.kb;
            let target = &self.target;
            let domain = self.domain.as_deref();
            let n_proofs = self.n_proofs;
            let node_seed = mix(self.params.seed, node);
            let evaluated: Result<Vec<_>, Error> = candidates
                .into_par_iter()
                .enumerate()
                .map(|(ci, cand)| {
                    let ctx = NodeContext {
                        kb,
                        target,
                        domain,
                        n_proofs,
                        body: &body,
                        features: &features,
                        entities: &data.entities,
                        seed: mix(node_seed, ci as u64),
                    };
                    evaluate_refinement(&ctx, &cand).map(|(total, branches)| (cand, total, branches))
                })
                .collect();
            for (cand, total, branches) in evaluated? {
                let gain = total - leaf.score;
                let improves = gain > 0.0 && gain >= self.params.epsilon;
                if improves && chosen.as_ref().map_or(true, |(_, best, _)| total > *best) {
                    chosen = Some((cand, total, branches));
                }
            }
        }
        match chosen {
            None => {
                self.report.push_str(&format!(
                    "{}: node {} depth {} examples {} leaf {} score {:.6}\n",
                    self.target,
                    node,
                    depth,
                    data.entities.len(),
                    leaf.model.describe(),
                    leaf.score
                ));
                Ok(Dlt::Leaf {
                    model: leaf.model,
                    features,
                    n_examples: data.entities.len(),
                    score: leaf.score,
                })
            }
            Some((cand, total, branches)) => {
                self.report.push_str(&format!(
                    "{}: node {} depth {} examples {} split {} score {:.6} over leaf {:.6}\n",
                    self.target,
                    node,
                    depth,
                    data.entities.len(),
                    cand.test,
                    total,
                    leaf.score
                ));
                let mut used = used;
                used.insert(canon_test(&cand.test, &self.scope()));
                let mut children = Vec::new();
                for (branch, bbody, bfeats, d) in branches {
                    let child = if d.entities.is_empty() {
                        None
                    } else {
                        Some(Box::new(self.build(bbody, bfeats, d, depth + 1, used.clone())?))
                    };
                    children.push((branch, child));
                }
                Ok(Dlt::Node {
                    test: cand.test,
                    result_var: cand.result_var,
                    kind: cand.kind,
                    children,
                })
            }
        }
    }
}

/// Grows a distributional logic tree for one target attribute.
///
/// The knowledge base must hold the ground relational facts (entities, links,
/// and per-cell attribute values) plus any background clauses; examples are
/// the entities of the target's table whose target value is provable.
pub fn induce_dlt(
    kb: &KB,
    bias: &BiasSpec,
    target: &Sym,
    params: &LearnParams,
) -> Result<(Dlt, String), Error> {
    let rank = bias.rank.clone().ok_or_else(|| Error::ModeType {
        target: target.to_string(),
        reason: "learning requires a rank declaration".into(),
    })?;
    let (table, col) = bias
        .schema
        .attribute(target)
        .ok_or_else(|| Error::UnknownAttribute(target.to_string()))?;
    let domain = match &table.attributes[col].kind {
        AttrKind::Discrete(l) => Some(l.clone()),
        AttrKind::Continuous => None,
    };
    let entity_pred = table.name.clone();
    let entities: Vec<Sym> = kb
        .program()
        .def_clauses()
        .filter(|c| c.body.is_empty() && c.head.pred == entity_pred && c.head.args.len() == 1)
        .filter_map(|c| match &c.head.args[0] {
            Term::Const(k) => Some(k.clone()),
            _ => None,
        })
        .collect();
    let n_proofs = params
        .n_proofs
        .unwrap_or(if kb.has_randomness() { 20 } else { 1 });
    let mut grower = Grower {
        kb,
        bias,
        rank: &rank,
        params,
        target: target.clone(),
        entity_type: table.entity_type.clone(),
        domain,
        n_proofs,
        fresh: 0,
        next_node: 0,
        report: String::new(),
    };
    let body = vec![Goal::Rel(Atom {
        pred: entity_pred,
        args: vec![Term::Var(sym("T"))],
    })];
    let root = collect_node(
        kb,
        target,
        n_proofs,
        &body,
        &[],
        &entities,
        mix(params.seed, u64::MAX),
    )?;
    if root.entities.is_empty() {
        return Err(Error::NoExamples {
            target: target.to_string(),
        });
    }
    let tree = grower.build(body, Vec::new(), root, 0, IndexSet::new())?;
    Ok((tree, grower.report))
}

/// Flattens a tree into one distributional clause per populated leaf.
///
/// The head variable is `T`; every body starts with the entity-membership
/// literal and replays the branch literals along the leaf's path, so the
/// returned clause bodies are mutually exclusive and jointly exhaustive over
/// the table's entities.
pub fn dlt_to_clauses(target: &Sym, entity_pred: &Sym, tree: &Dlt) -> Vec<DistClause> {
    let mut out = Vec::new();
    let body = vec![Goal::Rel(Atom {
        pred: entity_pred.clone(),
        args: vec![Term::Var(sym("T"))],
    })];
    flatten(target, tree, body, &mut out);
    out
}

fn flatten(target: &Sym, tree: &Dlt, body: Vec<Goal>, out: &mut Vec<DistClause>) {
    match tree {
        Dlt::Leaf {
            model, features, ..
        } => {
            let (dist, model_goal) = leaf_to_dist(model, features);
            let mut b = body;
            if let Some(g) = model_goal {
                b.push(g);
            }
            out.push(DistClause {
                head: Atom {
                    pred: target.clone(),
                    args: vec![Term::Var(sym("T"))],
                },
                dist,
                body: b,
                span: Span::default(),
            });
        }
        Dlt::Node {
            test,
            result_var,
            children,
            ..
        } => {
            for (branch, child) in children {
                if let Some(c) = child {
                    let mut b = body.clone();
                    b.push(branch_literal(test, result_var, branch));
                    flatten(target, c, b, out);
                }
            }
        }
    }
}

/// The head distribution for a leaf, plus the model atom computing its
/// parameters when the leaf is feature-conditioned.
fn leaf_to_dist(model: &LeafModel, features: &[Sym]) -> (DistExpr, Option<Goal>) {
    let inputs: Vec<Term> = features.iter().map(|v| Term::Var(v.clone())).collect();
    let prob_vars = |d: usize| -> Vec<Sym> { (1..=d).map(|i| sym(&format!("P{}", i))).collect() };
    match model {
        LeafModel::Gaussian { mean, variance } => (
            DistExpr::Gaussian(Term::Num(*mean), Term::Num(*variance)),
            None,
        ),
        LeafModel::Categorical { entries } => (
            DistExpr::Discrete(
                entries
                    .iter()
                    .map(|(l, p)| (Term::Num(*p), Term::Const(l.clone())))
                    .collect(),
            ),
            None,
        ),
        LeafModel::LinearGaussian { weights, variance } => {
            let m = sym("M");
            (
                DistExpr::Gaussian(Term::Var(m.clone()), Term::Num(*variance)),
                Some(Goal::Model(ModelAtom {
                    kind: ModelKind::Linear,
                    inputs,
                    weights: ModelWeights::Vector(weights.clone()),
                    outputs: vec![Term::Var(m)],
                })),
            )
        }
        LeafModel::LogisticCategorical { labels, weights } => {
            let outs = prob_vars(labels.len());
            (
                DistExpr::Discrete(
                    labels
                        .iter()
                        .zip(&outs)
                        .map(|(l, p)| (Term::Var(p.clone()), Term::Const(l.clone())))
                        .collect(),
                ),
                Some(Goal::Model(ModelAtom {
                    kind: ModelKind::Logistic,
                    inputs,
                    weights: ModelWeights::Vector(weights.clone()),
                    outputs: outs.into_iter().map(Term::Var).collect(),
                })),
            )
        }
        LeafModel::SoftmaxCategorical { labels, rows } => {
            let outs = prob_vars(labels.len());
            (
                DistExpr::Discrete(
                    labels
                        .iter()
                        .zip(&outs)
                        .map(|(l, p)| (Term::Var(p.clone()), Term::Const(l.clone())))
                        .collect(),
                ),
                Some(Goal::Model(ModelAtom {
                    kind: ModelKind::Softmax,
                    inputs,
                    weights: ModelWeights::Matrix(rows.clone()),
                    outputs: outs.into_iter().map(Term::Var).collect(),
                })),
            )
        }
    }
}

/// A learned program plus the per-node induction report.
#[derive(Clone, Debug)]
pub struct Learned {
    /// Relational facts, background clauses, and the learned distributional
    /// clauses in rank order.
    pub program: Program,
    /// One line per tree node describing the fitted leaf or chosen split.
    pub report: String,
}

/// Learns one tree per ranked attribute and assembles the output program.
///
/// The input program supplies the relational facts and background clauses.
/// Per-cell value facts of ranked attributes are training data only: the
/// learned clauses replace them in the output, which carries the input's
/// remaining items followed by the learned clauses in rank order. The output
/// is validated before being returned.
pub fn learn_jmp(data: &Program, bias: &BiasSpec, params: &LearnParams) -> Result<Learned, Error> {
    let rank = bias.rank.clone().ok_or_else(|| Error::ModeType {
        target: "rank".into(),
        reason: "learning requires a rank declaration".into(),
    })?;
    for table in &bias.schema.entities {
        for attr in &table.attributes {
            if !rank.contains(&attr.name) {
                return Err(Error::ModeType {
                    target: attr.name.to_string(),
                    reason: "attribute is missing from the rank declaration".into(),
                });
            }
        }
    }
    let kb = KB::new(data.clone());
    let mut items: Vec<Item> = Vec::new();
    for item in &data.items {
        match item {
            Item::Dist(c) if c.body.is_empty() && rank.contains(&c.head.pred) => {}
            Item::Bias(_) => {}
            other => items.push(other.clone()),
        }
    }
    let mut report = String::new();
    for attr in &rank {
        let (tree, rep) = induce_dlt(&kb, bias, attr, params)?;
        report.push_str(&rep);
        let table = bias
            .schema
            .attribute(attr)
            .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))?
            .0;
        for clause in dlt_to_clauses(attr, &table.name, &tree) {
            items.push(Item::Dist(clause));
        }
    }
    let program = Program::new(items);
    let errors: Vec<_> = validate_program(&program)
        .into_iter()
        .filter(|d| matches!(d.severity, Severity::Error))
        .collect();
    if !errors.is_empty() {
        return Err(Error::Invalid(errors));
    }
    Ok(Learned { program, report })
}
