//! Static program validation: rank coverage, stratified attribute order, and
//! syntactically conflicting distribution definitions.

use super::*;
use indexmap::{IndexMap, IndexSet};

/// How severe a diagnostic is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Severity::Error => write!(f, "error"),
            Severity::Warning => write!(f, "warning"),
        }
    }
}

/// A validation finding, printed as `line:col: severity: message [code]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub line: u32,
    pub col: u32,
    pub code: &'static str,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}: {}: {} [{}]",
            self.line, self.col, self.severity, self.message, self.code
        )
    }
}

pub const STRATIFICATION_ERROR: &str = "StratificationError";
pub const MISSING_RANK_ERROR: &str = "MissingRankError";
pub const CONFLICTING_DEFINITION: &str = "ConflictingDefinition";
pub const DUPLICATE_CLAUSE: &str = "DuplicateClause";

fn collect_bound_attrs(goal: &Goal, out: &mut IndexSet<Sym>) {
    match goal {
        Goal::Bind { rv, .. } => {
            out.insert(rv.pred.clone());
        }
        Goal::Agg(agg) => {
            for g in &agg.inner {
                collect_bound_attrs(g, out);
            }
        }
        Goal::Neg(g) => collect_bound_attrs(g, out),
        _ => {}
    }
}

/// Attribute dependency edges read from distributional-clause bodies:
/// `deps[h]` holds every attribute whose value the clauses for `h` read.
fn attribute_deps(p: &Program) -> IndexMap<Sym, IndexSet<Sym>> {
    let mut deps: IndexMap<Sym, IndexSet<Sym>> = IndexMap::new();
    for c in p.dist_clauses() {
        let entry = deps.entry(c.head.pred.clone()).or_default();
        for g in &c.body {
            collect_bound_attrs(g, entry);
        }
    }
    deps
}

/// Derives a generative order over attributes by topologically sorting the
/// dependency edges. Returns the ordered attributes, or a cycle witness.
pub(crate) fn implicit_rank(deps: &IndexMap<Sym, IndexSet<Sym>>) -> Result<Vec<Sym>, Vec<Sym>> {
    let mut order = Vec::new();
    let mut done: IndexSet<Sym> = IndexSet::new();
    let attrs: IndexSet<Sym> = deps.keys().cloned().collect();
    loop {
        let mut progressed = false;
        for (attr, reads) in deps {
            if done.contains(attr) {
                continue;
            }
            let ready = reads
                .iter()
                .all(|r| !attrs.contains(r) || done.contains(r));
            if ready {
                order.push(attr.clone());
                done.insert(attr.clone());
                progressed = true;
            }
        }
        if done.len() == deps.len() {
            return Ok(order);
        }
        if !progressed {
            let stuck: Vec<Sym> =
                deps.keys().filter(|a| !done.contains(*a)).cloned().collect();
            return Err(stuck);
        }
    }
}

/// The generative attribute order: the declared rank when one is present,
/// otherwise a topological order of the attribute dependencies. Attributes
/// outside the declared rank are appended in dependency order.
pub fn generative_order(p: &Program) -> Result<Vec<Sym>, Diagnostic> {
    let deps = attribute_deps(p);
    let implicit = implicit_rank(&deps).map_err(|cycle| Diagnostic {
        severity: Severity::Error,
        line: 1,
        col: 1,
        code: "STRATIFICATION_ERROR",
        message: format!(
            "attribute dependencies are cyclic among: {}",
            cycle.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(", ")
        ),
    })?;
    if let Some(rank) = p.bias_decls().find_map(|d| match d {
        BiasDecl::Rank { attrs, .. } => Some(attrs.clone()),
        _ => None,
    }) {
        let mut order = rank;
        for attr in implicit {
            if !order.contains(&attr) {
                order.push(attr);
            }
        }
        return Ok(order);
    }
    Ok(implicit)
}

fn canon_term(t: &Term, map: &mut IndexMap<Sym, Sym>) -> Term {
    match t {
        Term::Var(v) => {
            let n = map.len();
            let canon = map
                .entry(v.clone())
                .or_insert_with(|| sym(&format!("V{}", n)));
            Term::Var(canon.clone())
        }
        Term::Compound(f, args) => Term::Compound(
            f.clone(),
            args.iter().map(|a| canon_term(a, map)).collect(),
        ),
        _ => t.clone(),
    }
}

fn canon_atom(a: &Atom, map: &mut IndexMap<Sym, Sym>) -> Atom {
    Atom {
        pred: a.pred.clone(),
        args: a.args.iter().map(|t| canon_term(t, map)).collect(),
    }
}

fn canon_goal(g: &Goal, map: &mut IndexMap<Sym, Sym>) -> Goal {
    match g {
        Goal::True => Goal::True,
        Goal::Rel(a) => Goal::Rel(canon_atom(a, map)),
        Goal::Bind { rv, value } => Goal::Bind {
            rv: canon_atom(rv, map),
            value: canon_term(value, map),
        },
        Goal::Eq(a, b) => Goal::Eq(canon_term(a, map), canon_term(b, map)),
        Goal::Agg(agg) => Goal::Agg(AggAtom {
            op: agg.op,
            item: canon_term(&agg.item, map),
            inner: agg.inner.iter().map(|x| canon_goal(x, map)).collect(),
            result: canon_term(&agg.result, map),
        }),
        Goal::Model(m) => Goal::Model(ModelAtom {
            kind: m.kind,
            inputs: m.inputs.iter().map(|t| canon_term(t, map)).collect(),
            weights: m.weights.clone(),
            outputs: m.outputs.iter().map(|t| canon_term(t, map)).collect(),
        }),
        Goal::Neg(inner) => Goal::Neg(Box::new(canon_goal(inner, map))),
    }
}

fn canon_dist(d: &DistExpr, map: &mut IndexMap<Sym, Sym>) -> DistExpr {
    match d {
        DistExpr::Val(t) => DistExpr::Val(canon_term(t, map)),
        DistExpr::Gaussian(m, v) => {
            DistExpr::Gaussian(canon_term(m, map), canon_term(v, map))
        }
        DistExpr::Discrete(entries) => DistExpr::Discrete(
            entries
                .iter()
                .map(|(p, l)| (canon_term(p, map), canon_term(l, map)))
                .collect(),
        ),
    }
}

/// Checks a parsed program for structural problems.
///
/// An empty result means the program is accepted. Checks performed:
///
/// 1. If a `rank` declaration is present, every attribute that appears as a
///    distributional-clause head or is read through `~=` must be listed
///    ([`MISSING_RANK_ERROR`]).
/// 2. Every attribute read in the body of a distributional clause must come
///    strictly earlier in generative order than the head attribute. With a
///    `rank` declaration the list order is the generative order; without one
///    an order is derived from the dependency graph, and a dependency cycle
///    is reported ([`STRATIFICATION_ERROR`]).
/// 3. Two distributional clauses for the same attribute whose heads and
///    bodies are structurally identical define two distributions for one
///    random variable ([`CONFLICTING_DEFINITION`]); if the distributions also
///    match, the clause is merely redundant ([`DUPLICATE_CLAUSE`] warning).
///
/// Overlap that only materializes for particular ground instances cannot be
/// decided statically and is reported by the inference engine when a world
/// actually evaluates two distributions for one random variable.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let deps = attribute_deps(p);

    let rank_decl: Option<(&Vec<Sym>, Span)> = p.bias_decls().find_map(|b| match b {
        BiasDecl::Rank { attrs, span } => Some((attrs, *span)),
        _ => None,
    });

    match rank_decl {
        Some((attrs, span)) => {
            let index: IndexMap<&Sym, usize> =
                attrs.iter().enumerate().map(|(i, a)| (a, i)).collect();
            let mut missing: IndexSet<Sym> = IndexSet::new();
            for (head, reads) in &deps {
                if !index.contains_key(head) {
                    missing.insert(head.clone());
                }
                for r in reads {
                    if !index.contains_key(r) && deps.contains_key(r) {
                        missing.insert(r.clone());
                    }
                }
            }
            for attr in missing {
                diags.push(Diagnostic {
                    severity: Severity::Error,
                    line: span.line,
                    col: span.col,
                    code: MISSING_RANK_ERROR,
                    message: format!(
                        "attribute `{}` is not covered by the rank declaration",
                        attr
                    ),
                });
            }
            for c in p.dist_clauses() {
                let Some(&h) = index.get(&c.head.pred) else { continue };
                let mut reads = IndexSet::new();
                for g in &c.body {
                    collect_bound_attrs(g, &mut reads);
                }
                for r in reads {
                    if let Some(&b) = index.get(&r) {
                        if b >= h {
                            diags.push(Diagnostic {
                                severity: Severity::Error,
                                line: c.span.line,
                                col: c.span.col,
                                code: STRATIFICATION_ERROR,
                                message: format!(
                                    "clause for `{}` reads `{}`, which does not precede it in rank",
                                    c.head.pred, r
                                ),
                            });
                        }
                    }
                }
            }
        }
        None => {
            if let Err(cycle) = implicit_rank(&deps) {
                diags.push(Diagnostic {
                    severity: Severity::Error,
                    line: 0,
                    col: 0,
                    code: STRATIFICATION_ERROR,
                    message: format!(
                        "attribute dependencies are cyclic; no generative order exists for: {}",
                        cycle
                            .iter()
                            .map(|s| s.to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                });
            }
        }
    }

    let mut seen: IndexMap<String, (DistExpr, Span)> = IndexMap::new();
    for c in p.dist_clauses() {
        let mut map = IndexMap::new();
        let head = canon_atom(&c.head, &mut map);
        let body: Vec<Goal> = c.body.iter().map(|g| canon_goal(g, &mut map)).collect();
        let dist = canon_dist(&c.dist, &mut map);
        let key = format!(
            "{} := {}",
            head,
            body.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")
        );
        match seen.get(&key) {
            Some((prev_dist, prev_span)) => {
                let (code, severity, what) = if *prev_dist == dist {
                    (DUPLICATE_CLAUSE, Severity::Warning, "duplicates")
                } else {
                    (CONFLICTING_DEFINITION, Severity::Error, "conflicts with")
                };
                diags.push(Diagnostic {
                    severity,
                    line: c.span.line,
                    col: c.span.col,
                    code,
                    message: format!(
                        "distribution for `{}` {} the definition at {}:{}",
                        c.head.pred, what, prev_span.line, prev_span.col
                    ),
                });
            }
            None => {
                seen.insert(key, (dist, c.span));
            }
        }
    }

    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    fn errors(text: &str) -> Vec<Diagnostic> {
        validate_program(&parse_program(text).unwrap())
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect()
    }

    #[test]
    fn empty_program_is_valid() {
        assert!(errors("").is_empty());
    }

    #[test]
    fn world_program_without_rank_is_valid() {
        let text = "\
hasAccount(c_1, a_1).
hasLoan(a_1, l_1).
age(c_1) ~ val(55).
status(l_1) ~ discrete([0.7:appr, 0.3:decl]).
clientLoan(C,L) := hasAccount(C,A), hasLoan(A,L).
creditScore(C) ~ gaussian(755.5,0.1) := clientLoan(C,L), status(L)~=appr.
creditScore(C) ~ gaussian(350,0.1) := clientLoan(C,L), status(L)~=decl.
";
        assert!(errors(text).is_empty());
    }

    #[test]
    fn rank_violation_is_reported() {
        let text = "\
rank([creditScore, loanAmt]).
loan(l_1).
loanAmt(L) ~ gaussian(1000, 10) := loan(L).
creditScore(C) ~ gaussian(M, 0.1) := loan(C), loanAmt(C)~=Y, linear([Y],[0,1],M).
";
        let errs = errors(text);
        assert_eq!(errs.len(), 1, "{:?}", errs);
        assert_eq!(errs[0].code, STRATIFICATION_ERROR);
    }

    #[test]
    fn consistent_rank_is_accepted() {
        let text = "\
rank([loanAmt, creditScore]).
loan(l_1).
loanAmt(L) ~ gaussian(1000, 10) := loan(L).
creditScore(C) ~ gaussian(M, 0.1) := loan(C), loanAmt(C)~=Y, linear([Y],[0,1],M).
";
        assert!(errors(text).is_empty());
    }

    #[test]
    fn rank_must_cover_all_attributes() {
        let text = "\
rank([loanAmt]).
loan(l_1).
loanAmt(L) ~ gaussian(1000, 10) := loan(L).
status(L) ~ discrete([0.5:appr, 0.5:decl]) := loan(L), loanAmt(L)~=Y.
";
        let errs = errors(text);
        assert!(errs.iter().any(|d| d.code == MISSING_RANK_ERROR), "{:?}", errs);
    }

    #[test]
    fn cyclic_dependencies_without_rank_are_reported() {
        let text = "\
a(x) ~ discrete([0.5:t, 0.5:f]) := b(x)~=t.
b(x) ~ discrete([0.5:t, 0.5:f]) := a(x)~=t.
";
        let errs = errors(text);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, STRATIFICATION_ERROR);
    }

    #[test]
    fn conflicting_definitions_for_one_random_variable() {
        let text = "\
status(l_1) ~ discrete([0.7:appr, 0.3:decl]).
status(l_1) ~ discrete([0.2:appr, 0.8:decl]).
";
        let errs = errors(text);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, CONFLICTING_DEFINITION);
    }

    #[test]
    fn alpha_equivalent_clause_pairs_are_caught() {
        let text = "\
loan(l_1).
status(L) ~ discrete([0.7:appr, 0.3:decl]) := loan(L).
status(M) ~ discrete([0.1:appr, 0.9:decl]) := loan(M).
";
        let errs = errors(text);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, CONFLICTING_DEFINITION);
    }

    #[test]
    fn exact_duplicate_is_only_a_warning() {
        let text = "\
status(l_1) ~ discrete([0.7:appr, 0.3:decl]).
status(l_1) ~ discrete([0.7:appr, 0.3:decl]).
";
        assert!(errors(text).is_empty());
        let all = validate_program(&parse_program(text).unwrap());
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].code, DUPLICATE_CLAUSE);
    }

    #[test]
    fn negated_and_aggregated_reads_count_for_stratification() {
        let text = "\
rank([savings, freq]).
acc(a_1).
savings(A) ~ discrete([0.5:low, 0.5:high]) := acc(A).
freq(A) ~ gaussian(M, 1) := acc(A), avg(X,(acc(B), savings(B)~=X), M).
";
        let errs = errors(text);
        assert!(errs.is_empty(), "{:?}", errs);
        let bad = "\
rank([freq, savings]).
acc(a_1).
savings(A) ~ discrete([0.5:low, 0.5:high]) := acc(A).
freq(A) ~ gaussian(M, 1) := acc(A), avg(X,(acc(B), savings(B)~=X), M).
";
        let errs = errors(bad);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, STRATIFICATION_ERROR);
    }
}
