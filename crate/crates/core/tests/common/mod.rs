//! Shared fixtures for the integration suites: an exact inference oracle
//! that enumerates every possible world of a small discrete program, the
//! banking example programs, and synthetic table generators.
//!
//! The oracle deliberately shares no code with the sampling engine. It
//! resolves clause bodies with its own backtracking prover and computes
//! conditionals as ratios of enumerated world masses, so agreement between
//! the two is meaningful evidence of correctness.

use std::collections::HashMap;

use dclearn::dist::Value;
use dclearn::engine::Evidence;
use dclearn::syntax::{
    rename_clause, rename_dist, sym, unify, unify_atoms_into, Atom, DefClause, DistClause,
    DistExpr, Goal, Item, Program, Subst, Term,
};

/// One ground random variable together with its finite value domain, in
/// generative order.
pub struct OracleRv {
    pub atom: Atom,
    pub domain: Vec<Value>,
}

/// A discrete program split into ground facts, derived-relation rules, and
/// distributional clauses, ready for exhaustive enumeration.
pub struct ExactModel {
    facts: Vec<Atom>,
    rules: Vec<DefClause>,
    dists: Vec<DistClause>,
}

impl ExactModel {
    pub fn new(program: &Program) -> ExactModel {
        let mut facts = Vec::new();
        let mut rules = Vec::new();
        let mut dists = Vec::new();
        for item in &program.items {
            match item {
                Item::Def(d) if d.body.is_empty() => facts.push(d.head.clone()),
                Item::Def(d) => rules.push(d.clone()),
                Item::Dist(d) => dists.push(d.clone()),
                Item::Bias(_) => {}
            }
        }
        ExactModel { facts, rules, dists }
    }

    /// Exact `p(query | evidence)` as a ratio of enumerated world masses.
    ///
    /// Panics when the evidence has zero mass or a fixture is malformed
    /// (conflicting clause heads, values outside the declared domain).
    pub fn conditional(
        &self,
        rvs: &[OracleRv],
        query: &[(Atom, Value)],
        evidence: &[(Atom, Value)],
    ) -> f64 {
        let mut assignment: HashMap<Atom, Option<Value>> = HashMap::new();
        let mut mass = (0.0, 0.0);
        self.enumerate(rvs, 0, &mut assignment, 1.0, query, evidence, &mut mass);
        let (joint, margin) = mass;
        assert!(margin > 0.0, "evidence has zero probability");
        joint / margin
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        &self,
        rvs: &[OracleRv],
        i: usize,
        assignment: &mut HashMap<Atom, Option<Value>>,
        p: f64,
        query: &[(Atom, Value)],
        evidence: &[(Atom, Value)],
        mass: &mut (f64, f64),
    ) {
        if i == rvs.len() {
            let holds = |cs: &[(Atom, Value)]| {
                cs.iter()
                    .all(|(a, v)| assignment.get(a).map_or(false, |x| x.as_ref() == Some(v)))
            };
            if holds(evidence) {
                mass.1 += p;
                if holds(query) {
                    mass.0 += p;
                }
            }
            return;
        }
        let rv = &rvs[i];
        match self.instantiated_dist(&rv.atom, assignment) {
            None => {
                assignment.insert(rv.atom.clone(), None);
                self.enumerate(rvs, i + 1, assignment, p, query, evidence, mass);
                assignment.remove(&rv.atom);
            }
            Some(entries) => {
                for (value, prob) in entries {
                    if prob == 0.0 {
                        continue;
                    }
                    assert!(
                        rv.domain.contains(&value),
                        "value {value} outside the domain of {}",
                        rv.atom
                    );
                    assignment.insert(rv.atom.clone(), Some(value));
                    self.enumerate(rvs, i + 1, assignment, p * prob, query, evidence, mass);
                    assignment.remove(&rv.atom);
                }
            }
        }
    }

    /// The distribution of one ground random variable under a partial world,
    /// or `None` when no clause body holds.
    fn instantiated_dist(
        &self,
        rv: &Atom,
        assignment: &HashMap<Atom, Option<Value>>,
    ) -> Option<Vec<(Value, f64)>> {
        let mut found: Option<Vec<(Value, f64)>> = None;
        for (k, clause) in self.dists.iter().enumerate() {
            let suffix = format!("_h{k}");
            let (head, body) = rename_clause(&clause.head, &clause.body, &suffix);
            let dist = rename_dist(&clause.dist, &suffix);
            let mut s = Subst::new();
            if !unify_atoms_into(rv, &head, &mut s) {
                continue;
            }
            let mut solutions = Vec::new();
            let mut fresh = 0usize;
            self.prove(&body, &s, assignment, &mut fresh, &mut solutions);
            for sol in solutions {
                let entries = resolve_dist(&dist, &sol);
                match &found {
                    Some(prev) if *prev != entries => {
                        panic!("conflicting distributions for {rv}")
                    }
                    _ => found = Some(entries),
                }
            }
        }
        found
    }

    /// Backtracking resolution of a clause body against the ground facts,
    /// derived-relation rules, and the values assigned so far.
    fn prove(
        &self,
        goals: &[Goal],
        s: &Subst,
        assignment: &HashMap<Atom, Option<Value>>,
        fresh: &mut usize,
        out: &mut Vec<Subst>,
    ) {
        let Some((goal, rest)) = goals.split_first() else {
            out.push(s.clone());
            return;
        };
        match s.resolve_goal(goal) {
            Goal::True => self.prove(rest, s, assignment, fresh, out),
            Goal::Rel(a) => {
                for fact in &self.facts {
                    let mut s2 = s.clone();
                    if unify_atoms_into(&a, fact, &mut s2) {
                        self.prove(rest, &s2, assignment, fresh, out);
                    }
                }
                for rule in &self.rules {
                    *fresh += 1;
                    let (head, body) = rename_clause(&rule.head, &rule.body, &format!("_r{fresh}"));
                    let mut s2 = s.clone();
                    if unify_atoms_into(&a, &head, &mut s2) {
                        let mut expanded = body;
                        expanded.extend_from_slice(rest);
                        self.prove(&expanded, &s2, assignment, fresh, out);
                    }
                }
            }
            Goal::Bind { rv, value } => {
                assert!(
                    rv.args.iter().all(Term::is_ground),
                    "oracle fixtures must bind ground random variables, got {rv}"
                );
                let Some(Some(current)) = assignment.get(&rv) else {
                    return;
                };
                if let Some(binding) = unify(&value, &current.to_term()) {
                    let mut s2 = s.clone();
                    for (var, term) in binding.iter() {
                        s2.bind(var.clone(), term.clone());
                    }
                    self.prove(rest, &s2, assignment, fresh, out);
                }
            }
            Goal::Neg(inner) => {
                let mut hits = Vec::new();
                self.prove(std::slice::from_ref(&inner), s, assignment, fresh, &mut hits);
                if hits.is_empty() {
                    self.prove(rest, s, assignment, fresh, out);
                }
            }
            Goal::Eq(a, b) => {
                if let Some(binding) = unify(&a, &b) {
                    let mut s2 = s.clone();
                    for (var, term) in binding.iter() {
                        s2.bind(var.clone(), term.clone());
                    }
                    self.prove(rest, &s2, assignment, fresh, out);
                }
            }
            Goal::Agg(_) | Goal::Model(_) => {
                panic!("oracle fixtures use neither aggregation nor model atoms")
            }
        }
    }
}

/// Instantiates a discrete or point-mass distribution expression under a
/// substitution into explicit value/probability pairs.
fn resolve_dist(dist: &DistExpr, s: &Subst) -> Vec<(Value, f64)> {
    let value_of = |t: &Term| {
        Value::from_term(&s.resolve_deep(t))
            .unwrap_or_else(|| panic!("non-ground distribution argument {t}"))
    };
    match dist {
        DistExpr::Val(t) => vec![(value_of(t), 1.0)],
        DistExpr::Discrete(entries) => entries
            .iter()
            .map(|(p, v)| {
                let Value::Num(prob) = value_of(p) else {
                    panic!("non-numeric probability in {dist:?}")
                };
                (value_of(v), prob)
            })
            .collect(),
        DistExpr::Gaussian(..) => panic!("the enumeration oracle only handles discrete heads"),
    }
}

/// A ground random-variable atom `pred(entity)`.
pub fn rv(pred: &str, entity: &str) -> Atom {
    Atom::new(pred, vec![Term::Const(sym(entity))])
}

/// A symbolic value.
pub fn val(label: &str) -> Value {
    Value::Sym(sym(label))
}

/// An evidence map from atom/value pairs.
pub fn evidence(pairs: &[(Atom, Value)]) -> Evidence {
    pairs.iter().cloned().collect()
}

/// One conditional query over a fixture: `p(rv = value | evidence)`,
/// optionally pinned to an externally known exact probability.
pub struct QueryPair {
    pub rv: Atom,
    pub value: Value,
    pub evidence: Vec<(Atom, Value)>,
    pub pinned: Option<f64>,
}

/// A small program whose conditionals the oracle can enumerate exactly.
pub struct EnumFixture {
    pub name: &'static str,
    pub program: Program,
    pub rvs: Vec<OracleRv>,
    pub pairs: Vec<QueryPair>,
}

/// The loan-status example: one client with an approved-or-declined loan
/// whose credit score depends on the outcome through a derived relation.
pub const LOAN_STATUS_PROGRAM: &str = "
hasAccount(c_1, a_1).
hasLoan(a_1, l_1).
age(c_1) ~ val(55).
age(c_2) ~ gaussian(40, 0.2).
status(l_1) ~ discrete([0.7:appr, 0.3:decl]).
clientLoan(C, L) := hasAccount(C, A), hasLoan(A, L).
creditScore(C) ~ gaussian(755.5, 0.1) := clientLoan(C, L), status(L)~=appr.
creditScore(C) ~ gaussian(350, 0.1) := clientLoan(C, L), status(L)~=decl.
";

const SPRINKLER_PROGRAM: &str = "
day(d1).
rain(D) ~ discrete([0.2:yes, 0.8:no]) := day(D).
sprinkler(D) ~ discrete([0.9:on, 0.1:off]) := day(D), rain(D)~=no.
sprinkler(D) ~ discrete([0.05:on, 0.95:off]) := day(D), rain(D)~=yes.
wet(D) ~ discrete([0.95:yes, 0.05:no]) := day(D), sprinkler(D)~=on.
wet(D) ~ discrete([0.6:yes, 0.4:no]) := day(D), sprinkler(D)~=off, rain(D)~=yes.
wet(D) ~ discrete([0.01:yes, 0.99:no]) := day(D), sprinkler(D)~=off, rain(D)~=no.
slippery(D) ~ discrete([0.8:yes, 0.2:no]) := day(D), wet(D)~=yes.
slippery(D) ~ discrete([0.05:yes, 0.95:no]) := day(D), wet(D)~=no.
";

const TWO_ACCOUNT_PROGRAM: &str = "
account(a_1).
account(a_2).
loan(l_1).
loan(l_2).
hasLoan(a_1, l_1).
freq(A) ~ discrete([0.4:low, 0.6:high]) := account(A).
status(L) ~ discrete([0.9:appr, 0.1:decl]) := hasLoan(A, L), freq(A)~=high.
status(L) ~ discrete([0.3:appr, 0.7:decl]) := hasLoan(A, L), freq(A)~=low.
status(L) ~ discrete([0.5:appr, 0.5:decl]) := loan(L), \\+hasLoan(A, L).
";

const FEVER_PROGRAM: &str = "
case(k1).
flu(K) ~ discrete([0.1:yes, 0.9:no]) := case(K).
cold(K) ~ discrete([0.3:yes, 0.7:no]) := case(K).
fever(K) ~ discrete([0.9:yes, 0.1:no]) := case(K), flu(K)~=yes.
fever(K) ~ discrete([0.6:yes, 0.4:no]) := case(K), flu(K)~=no, cold(K)~=yes.
fever(K) ~ discrete([0.05:yes, 0.95:no]) := case(K), flu(K)~=no, cold(K)~=no.
";

fn domain(labels: &[&str]) -> Vec<Value> {
    labels.iter().map(|l| val(l)).collect()
}

/// Every exhaustively enumerable fixture with its conditional query pairs.
pub fn enumerable_fixtures() -> Vec<EnumFixture> {
    let parse = |text: &str| dclearn::syntax::parse_program(text).expect("fixture parses");
    let yes_no = || domain(&["yes", "no"]);
    vec![
        EnumFixture {
            name: "loan_status",
            program: parse(LOAN_STATUS_PROGRAM),
            rvs: vec![OracleRv { atom: rv("status", "l_1"), domain: domain(&["appr", "decl"]) }],
            pairs: vec![QueryPair {
                rv: rv("status", "l_1"),
                value: val("appr"),
                evidence: vec![],
                pinned: Some(0.7),
            }],
        },
        EnumFixture {
            name: "sprinkler",
            program: parse(SPRINKLER_PROGRAM),
            rvs: vec![
                OracleRv { atom: rv("rain", "d1"), domain: yes_no() },
                OracleRv { atom: rv("sprinkler", "d1"), domain: domain(&["on", "off"]) },
                OracleRv { atom: rv("wet", "d1"), domain: yes_no() },
                OracleRv { atom: rv("slippery", "d1"), domain: yes_no() },
            ],
            pairs: vec![
                QueryPair {
                    rv: rv("rain", "d1"),
                    value: val("yes"),
                    evidence: vec![(rv("wet", "d1"), val("yes"))],
                    pinned: None,
                },
                QueryPair {
                    rv: rv("sprinkler", "d1"),
                    value: val("on"),
                    evidence: vec![(rv("slippery", "d1"), val("yes"))],
                    pinned: None,
                },
                QueryPair {
                    rv: rv("wet", "d1"),
                    value: val("yes"),
                    evidence: vec![],
                    pinned: None,
                },
                QueryPair {
                    rv: rv("slippery", "d1"),
                    value: val("yes"),
                    evidence: vec![
                        (rv("rain", "d1"), val("no")),
                        (rv("sprinkler", "d1"), val("on")),
                    ],
                    pinned: None,
                },
                QueryPair {
                    rv: rv("rain", "d1"),
                    value: val("yes"),
                    evidence: vec![
                        (rv("slippery", "d1"), val("no")),
                        (rv("sprinkler", "d1"), val("off")),
                    ],
                    pinned: None,
                },
            ],
        },
        EnumFixture {
            name: "two_accounts",
            program: parse(TWO_ACCOUNT_PROGRAM),
            rvs: vec![
                OracleRv { atom: rv("freq", "a_1"), domain: domain(&["low", "high"]) },
                OracleRv { atom: rv("freq", "a_2"), domain: domain(&["low", "high"]) },
                OracleRv { atom: rv("status", "l_1"), domain: domain(&["appr", "decl"]) },
                OracleRv { atom: rv("status", "l_2"), domain: domain(&["appr", "decl"]) },
            ],
            pairs: vec![
                QueryPair {
                    rv: rv("status", "l_1"),
                    value: val("appr"),
                    evidence: vec![],
                    pinned: Some(0.66),
                },
                QueryPair {
                    rv: rv("freq", "a_1"),
                    value: val("high"),
                    evidence: vec![(rv("status", "l_1"), val("appr"))],
                    pinned: Some(0.54 / 0.66),
                },
                QueryPair {
                    rv: rv("status", "l_2"),
                    value: val("appr"),
                    evidence: vec![],
                    pinned: Some(0.5),
                },
                QueryPair {
                    rv: rv("status", "l_1"),
                    value: val("decl"),
                    evidence: vec![
                        (rv("freq", "a_1"), val("low")),
                        (rv("freq", "a_2"), val("high")),
                    ],
                    pinned: Some(0.7),
                },
            ],
        },
        EnumFixture {
            name: "fever",
            program: parse(FEVER_PROGRAM),
            rvs: vec![
                OracleRv { atom: rv("flu", "k1"), domain: yes_no() },
                OracleRv { atom: rv("cold", "k1"), domain: yes_no() },
                OracleRv { atom: rv("fever", "k1"), domain: yes_no() },
            ],
            pairs: vec![
                QueryPair {
                    rv: rv("flu", "k1"),
                    value: val("yes"),
                    evidence: vec![(rv("fever", "k1"), val("yes"))],
                    pinned: None,
                },
                QueryPair {
                    rv: rv("cold", "k1"),
                    value: val("yes"),
                    evidence: vec![
                        (rv("fever", "k1"), val("yes")),
                        (rv("flu", "k1"), val("yes")),
                    ],
                    pinned: Some(0.3),
                },
            ],
        },
    ]
}

/// The full banking generator: account frequency drives savings, clients
/// aggregate over their accounts, and loan amount and status aggregate over
/// the linked accounts and clients.
pub const BANKING_JMP: &str = "
freq(A) ~ discrete([0.2:low, 0.8:high]) := account(A).
savings(A) ~ gaussian(2002, 10.2) := account(A), freq(A)~=X, X==low.
savings(A) ~ gaussian(3030, 11.3) := account(A), freq(A)~=X, X==high.
age(C) ~ gaussian(Mean, 3) := client(C), avg(X, (hasAcc(C,A), savings(A)~=X), Y), creditScore(C)~=Z, linear([Y,Z], [30, 0.2, -0.4], Mean).
loanAmt(L) ~ gaussian(Mean, 10) := loan(L), avg(X, (hasLoan(A,L), savings(A)~=X), Y), linear([Y], [100.1, 10], Mean).
loanAmt(L) ~ gaussian(25472.3, 10.2) := loan(L), \\+avg(X, (hasLoan(A,L), savings(A)~=X), Y).
status(L) ~ discrete([P1:appr, P2:pend, P3:decl]) := loan(L), avg(X, (hasLoan(A,L), hasAcc(C,A), creditScore(C)~=X), Y), loanAmt(L)~=Z, softmax([Y,Z], [[0.1,-0.3,-2.4],[0.3,0.4,0.2],[0.8,1.9,-2.9]], [P1,P2,P3]).
creditScore(C) ~ gaussian(300, 10.1) := client(C), mod(X, (hasAcc(C,A), freq(A)~=X), Z), Z==low.
creditScore(C) ~ gaussian(Mean, 15.3) := client(C), mod(X, (hasAcc(C,A), freq(A)~=X), Z), Z==high, max(X, (hasAcc(C,A), savings(A)~=X), Y), linear([Y], [600, 0.2], Mean).
creditScore(C) ~ gaussian(Mean, 12.3) := client(C), \\+mod(X, (hasAcc(C,A), freq(A)~=X), Z), max(X, (hasAcc(C,A), savings(A)~=X), Y), linear([Y], [500, 0.8], Mean).
";

/// Language-bias declarations matching [`BANKING_JMP`]: one mode per
/// generator dependency, attributes ranked in generative order.
pub const BANKING_BIAS: &str = "
type(client(c)). type(account(a)). type(loan(l)).
type(hasAcc(c, a)). type(hasLoan(a, l)).
type(freq(a)). type(savings(a)). type(creditScore(c)).
type(age(c)). type(loanAmt(l)). type(status(l)).
rand(freq, discrete, [low, high]).
rand(savings, continuous, []).
rand(creditScore, continuous, []).
rand(age, continuous, []).
rand(loanAmt, continuous, []).
rand(status, discrete, [appr, pend, decl]).
mode(savings, none, freq(+)).
mode(age, avg, (hasAcc(+,-), savings(+))).
mode(age, none, creditScore(+)).
mode(loanAmt, avg, (hasLoan(-,+), savings(+))).
mode(status, avg, (hasLoan(-,+), hasAcc(-,+), creditScore(+))).
mode(status, none, loanAmt(+)).
mode(creditScore, mod, (hasAcc(+,-), freq(+))).
mode(creditScore, max, (hasAcc(+,-), savings(+))).
rank([freq, savings, creditScore, age, loanAmt, status]).
";

/// Entity-membership and link facts for a banking population of `n` clients,
/// accounts, and loans: client `i` owns account `i` (every third client a
/// second one), and account `i` backs loan `i`.
pub fn banking_facts(n: usize) -> Vec<Item> {
    let mut items = Vec::new();
    let mut fact = |pred: &str, args: Vec<&str>| {
        let head =
            Atom::new(pred, args.into_iter().map(|a| Term::Const(sym(a))).collect());
        items.push(Item::Def(DefClause { head, body: vec![], span: Default::default() }));
    };
    for i in 0..n {
        fact("client", vec![&format!("c_{i}")]);
        fact("account", vec![&format!("a_{i}")]);
        fact("loan", vec![&format!("l_{i}")]);
    }
    for i in 0..n {
        fact("hasAcc", vec![&format!("c_{i}"), &format!("a_{i}")]);
        if i % 3 == 0 {
            fact("hasAcc", vec![&format!("c_{i}"), &format!("a_{}", (i + 7) % n)]);
        }
        fact("hasLoan", vec![&format!("a_{i}"), &format!("l_{i}")]);
    }
    items
}

/// The six ranked banking attributes with the entity prefix each applies to.
pub const BANKING_ATTRS: [(&str, &str); 6] = [
    ("freq", "a"),
    ("savings", "a"),
    ("creditScore", "c"),
    ("age", "c"),
    ("loanAmt", "l"),
    ("status", "l"),
];

/// Draws one complete banking table set of size `n` from [`BANKING_JMP`] and
/// returns it as a ground program: membership and link facts plus one
/// point-mass value fact per attribute cell.
pub fn sample_banking_tables(n: usize, seed: u64) -> Program {
    let generator = dclearn::syntax::parse_program(BANKING_JMP).expect("generator parses");
    let mut with_facts = generator.clone();
    with_facts.items.extend(banking_facts(n));
    let kb = dclearn::engine::KB::new(with_facts);
    let empty = Evidence::new();
    let world = dclearn::engine::forward_sample_world(
        &kb,
        &empty,
        dclearn::rng::substream(seed, 0),
        12,
    )
    .expect("forward sampling terminates");

    let mut items = banking_facts(n);
    for (attr, prefix) in BANKING_ATTRS {
        for i in 0..n {
            let atom = rv(attr, &format!("{prefix}_{i}"));
            let value = world
                .value_of(&atom)
                .unwrap_or_else(|| panic!("{atom} undefined in the sampled world"))
                .clone();
            items.push(Item::Dist(DistClause {
                head: atom,
                dist: DistExpr::Val(value.to_term()),
                body: vec![],
                span: Default::default(),
            }));
        }
    }
    Program { items }
}
