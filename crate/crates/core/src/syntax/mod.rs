//! Abstract syntax for distributional-clause programs.
//!
//! A program is a sequence of clauses and declarations terminated by `.`:
//!
//! * deterministic facts and rules: `client(ann).`, `clientLoan(C,L) :- hasAccount(C,A), hasLoan(A,L).`
//! * distributional clauses: `creditScore(C) ~ gaussian(755.5,0.1) := clientLoan(C,L), status(L)~=appr.`
//! * declarative bias: `type(...)`, `mode(...)`, `rand(...)`, `rank(...)`.
//!
//! Bodies are conjunctions of relational atoms, value bindings (`rv ~= V`),
//! equality tests (`X == low`), negation as failure (`\+ G`), aggregation
//! atoms (`avg(T,(Q),R)`), and statistical-model atoms (`linear`, `logistic`,
//! `softmax`). Numbers are 64-bit floats. `:=` and `:-` are both accepted on
//! input for either clause kind; printing canonicalizes distributional
//! clauses to `:=` and deterministic ones to `:-`.

mod lexer;
mod parser;
mod subst;
mod validate;

pub use parser::{parse_program, parse_query, ParseError};
pub use subst::{
    apply_substitution, rename_clause, rename_dist, unify, unify_atoms, unify_atoms_into, Subst,
};
pub use validate::{generative_order, validate_program, Diagnostic, Severity};

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Interned-ish symbol: cheap to clone, compared by contents.
pub type Sym = Arc<str>;

/// Makes a symbol from a string slice.
pub fn sym(s: &str) -> Sym {
    Arc::from(s)
}

/// First-order term: variable, constant symbol, number, or compound.
#[derive(Clone, Debug)]
pub enum Term {
    Var(Sym),
    Const(Sym),
    Num(f64),
    Compound(Sym, Vec<Term>),
}

impl Term {
    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Const(_) | Term::Num(_) => true,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
        }
    }

    /// Collects variable names in first-occurrence order.
    pub fn collect_vars(&self, out: &mut Vec<Sym>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Compound(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            _ => {}
        }
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Term::Var(a), Term::Var(b)) => a == b,
            (Term::Const(a), Term::Const(b)) => a == b,
            (Term::Num(a), Term::Num(b)) => a.to_bits() == b.to_bits(),
            (Term::Compound(f, xs), Term::Compound(g, ys)) => f == g && xs == ys,
            _ => false,
        }
    }
}

impl Eq for Term {}

impl Hash for Term {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Term::Var(v) => {
                0u8.hash(state);
                v.hash(state);
            }
            Term::Const(c) => {
                1u8.hash(state);
                c.hash(state);
            }
            Term::Num(n) => {
                2u8.hash(state);
                n.to_bits().hash(state);
            }
            Term::Compound(f, args) => {
                3u8.hash(state);
                f.hash(state);
                args.hash(state);
            }
        }
    }
}

/// Predicate applied to terms, e.g. `hasAcc(ann,a_11)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub pred: Sym,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: Vec<Term>) -> Self {
        Atom { pred: sym(pred), args }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn collect_vars(&self, out: &mut Vec<Sym>) {
        for a in &self.args {
            a.collect_vars(out);
        }
    }
}

/// Aggregation operator of an `aggr(T,(Q),R)` atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggOp {
    Avg,
    Sum,
    Max,
    Min,
    Mod,
    Count,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Avg => "avg",
            AggOp::Sum => "sum",
            AggOp::Max => "max",
            AggOp::Min => "min",
            AggOp::Mod => "mod",
            AggOp::Count => "count",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "avg" => AggOp::Avg,
            "sum" => AggOp::Sum,
            "max" => AggOp::Max,
            "min" => AggOp::Min,
            "mod" => AggOp::Mod,
            "count" => AggOp::Count,
            _ => return None,
        })
    }
}

/// `aggr(T, (Q), R)`: fold all bindings of `item` over proofs of `inner`
/// into `result`, findall-style.
#[derive(Clone, Debug, PartialEq)]
pub struct AggAtom {
    pub op: AggOp,
    pub item: Term,
    pub inner: Vec<Goal>,
    pub result: Term,
}

/// Statistical model family of a model atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    Logistic,
    Softmax,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::Softmax => "softmax",
        }
    }
}

/// Weight parameters of a model atom: a flat vector for linear/logistic,
/// one row per label for softmax. The last entry of each vector is the
/// intercept.
#[derive(Clone, Debug)]
pub enum ModelWeights {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl PartialEq for ModelWeights {
    fn eq(&self, other: &Self) -> bool {
        fn veq(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        match (self, other) {
            (ModelWeights::Vector(a), ModelWeights::Vector(b)) => veq(a, b),
            (ModelWeights::Matrix(a), ModelWeights::Matrix(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| veq(x, y))
            }
            _ => false,
        }
    }
}

/// `linear([Y..],[W..],M)` / `logistic([Y..],[W..],[P1,P2])` /
/// `softmax([Y..],[[W..],..],[P1..Pd])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelAtom {
    pub kind: ModelKind,
    pub inputs: Vec<Term>,
    pub weights: ModelWeights,
    pub outputs: Vec<Term>,
}

/// Body literal.
#[derive(Clone, Debug, PartialEq)]
pub enum Goal {
    True,
    Rel(Atom),
    Bind { rv: Atom, value: Term },
    Eq(Term, Term),
    Agg(AggAtom),
    Model(ModelAtom),
    Neg(Box<Goal>),
}

impl Goal {
    pub fn collect_vars(&self, out: &mut Vec<Sym>) {
        match self {
            Goal::True => {}
            Goal::Rel(a) => a.collect_vars(out),
            Goal::Bind { rv, value } => {
                rv.collect_vars(out);
                value.collect_vars(out);
            }
            Goal::Eq(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Goal::Agg(agg) => {
                agg.item.collect_vars(out);
                for g in &agg.inner {
                    g.collect_vars(out);
                }
                agg.result.collect_vars(out);
            }
            Goal::Model(m) => {
                for t in m.inputs.iter().chain(m.outputs.iter()) {
                    t.collect_vars(out);
                }
            }
            Goal::Neg(g) => g.collect_vars(out),
        }
    }
}

/// Right-hand side of `~` in a distributional clause. Parameters may be
/// variables bound by the body (e.g. a model-atom output).
#[derive(Clone, Debug, PartialEq)]
pub enum DistExpr {
    Val(Term),
    Gaussian(Term, Term),
    Discrete(Vec<(Term, Term)>),
}

/// Source position of a clause's first token (1-based).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

/// `head ~ dist := body.` — declares that the ground head follows the
/// instantiated distribution whenever the body holds.
#[derive(Clone, Debug)]
pub struct DistClause {
    pub head: Atom,
    pub dist: DistExpr,
    pub body: Vec<Goal>,
    pub span: Span,
}

impl PartialEq for DistClause {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.dist == other.dist && self.body == other.body
    }
}

/// `head :- body.` or a bare fact.
#[derive(Clone, Debug)]
pub struct DefClause {
    pub head: Atom,
    pub body: Vec<Goal>,
    pub span: Span,
}

impl PartialEq for DefClause {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.body == other.body
    }
}

/// Argument mode in a mode declaration: `+` requires an already-bound
/// variable, `-` introduces a fresh one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgMode {
    In,
    Out,
}

/// Attribute value kind from a `rand` declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttrKind {
    Continuous,
    Discrete(Vec<Sym>),
}

/// Declarative-bias declaration.
#[derive(Clone, Debug)]
pub enum BiasDecl {
    /// `type(hasAcc(c,a)).` — predicate argument types.
    Type { pred: Sym, arg_types: Vec<Sym>, span: Span },
    /// `mode(age,avg,(hasAcc(+,-),savings(+))).` or `mode(age,none,creditScore(+)).`
    Mode {
        target: Sym,
        agg: Option<AggOp>,
        links: Vec<(Sym, Vec<ArgMode>)>,
        attr: (Sym, ArgMode),
        span: Span,
    },
    /// `rand(status,discrete,[appr,pend,decl]).`
    Rand { attr: Sym, kind: AttrKind, span: Span },
    /// `rank([age,creditScore,...]).`
    Rank { attrs: Vec<Sym>, span: Span },
}

impl PartialEq for BiasDecl {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                BiasDecl::Type { pred: p1, arg_types: t1, .. },
                BiasDecl::Type { pred: p2, arg_types: t2, .. },
            ) => p1 == p2 && t1 == t2,
            (
                BiasDecl::Mode { target: t1, agg: a1, links: l1, attr: at1, .. },
                BiasDecl::Mode { target: t2, agg: a2, links: l2, attr: at2, .. },
            ) => t1 == t2 && a1 == a2 && l1 == l2 && at1 == at2,
            (
                BiasDecl::Rand { attr: a1, kind: k1, .. },
                BiasDecl::Rand { attr: a2, kind: k2, .. },
            ) => a1 == a2 && k1 == k2,
            (BiasDecl::Rank { attrs: a1, .. }, BiasDecl::Rank { attrs: a2, .. }) => a1 == a2,
            _ => false,
        }
    }
}

impl BiasDecl {
    pub fn span(&self) -> Span {
        match self {
            BiasDecl::Type { span, .. }
            | BiasDecl::Mode { span, .. }
            | BiasDecl::Rand { span, .. }
            | BiasDecl::Rank { span, .. } => *span,
        }
    }
}

/// One program item, in source order.
#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Def(DefClause),
    Dist(DistClause),
    Bias(BiasDecl),
}

/// A parsed program: clauses and declarations in source order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub items: Vec<Item>,
}

impl Program {
    pub fn new(items: Vec<Item>) -> Self {
        Program { items }
    }

    pub fn def_clauses(&self) -> impl Iterator<Item = &DefClause> {
        self.items.iter().filter_map(|i| match i {
            Item::Def(c) => Some(c),
            _ => None,
        })
    }

    pub fn dist_clauses(&self) -> impl Iterator<Item = &DistClause> {
        self.items.iter().filter_map(|i| match i {
            Item::Dist(c) => Some(c),
            _ => None,
        })
    }

    pub fn bias_decls(&self) -> impl Iterator<Item = &BiasDecl> {
        self.items.iter().filter_map(|i| match i {
            Item::Bias(b) => Some(b),
            _ => None,
        })
    }

    /// Appends all items of `other`.
    pub fn extend(&mut self, other: Program) {
        self.items.extend(other.items);
    }
}

/// A conditional query: estimate p(goal | evidence) from `n` samples, or the
/// predictive distribution of a single RV when `predictive` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub n: usize,
    pub goal: Vec<Goal>,
    pub evidence: Vec<(Atom, Term)>,
    /// Set when the goal is `rv ~= ?`: asks for the predictive distribution.
    pub predictive: Option<Atom>,
}

// ---------------------------------------------------------------------------
// Canonical printing
// ---------------------------------------------------------------------------

fn fmt_num(f: &mut fmt::Formatter<'_>, n: f64) -> fmt::Result {
    if n == f64::INFINITY {
        write!(f, "inf")
    } else if n == f64::NEG_INFINITY {
        write!(f, "-inf")
    } else {
        write!(f, "{}", n)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{}", v),
            Term::Const(c) => write!(f, "{}", c),
            Term::Num(n) => fmt_num(f, *n),
            Term::Compound(functor, args) => {
                write!(f, "{}(", functor)?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", a)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.args.is_empty() {
            return write!(f, "{}", self.pred);
        }
        write!(f, "{}(", self.pred)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", a)?;
        }
        write!(f, ")")
    }
}

fn fmt_goals(f: &mut fmt::Formatter<'_>, goals: &[Goal]) -> fmt::Result {
    for (i, g) in goals.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{}", g)?;
    }
    Ok(())
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::True => write!(f, "true"),
            Goal::Rel(a) => write!(f, "{}", a),
            Goal::Bind { rv, value } => write!(f, "{}~={}", rv, value),
            Goal::Eq(a, b) => write!(f, "{}=={}", a, b),
            Goal::Agg(agg) => {
                write!(f, "{}({},(", agg.op.name(), agg.item)?;
                fmt_goals(f, &agg.inner)?;
                write!(f, "),{})", agg.result)
            }
            Goal::Model(m) => write!(f, "{}", m),
            Goal::Neg(g) => write!(f, "\\+{}", g),
        }
    }
}

fn fmt_f64_list(f: &mut fmt::Formatter<'_>, xs: &[f64]) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        fmt_num(f, *x)?;
    }
    write!(f, "]")
}

fn fmt_term_list(f: &mut fmt::Formatter<'_>, ts: &[Term]) -> fmt::Result {
    write!(f, "[")?;
    for (i, t) in ts.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{}", t)?;
    }
    write!(f, "]")
}

impl fmt::Display for ModelAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind.name())?;
        fmt_term_list(f, &self.inputs)?;
        write!(f, ",")?;
        match &self.weights {
            ModelWeights::Vector(v) => fmt_f64_list(f, v)?,
            ModelWeights::Matrix(m) => {
                write!(f, "[")?;
                for (i, row) in m.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    fmt_f64_list(f, row)?;
                }
                write!(f, "]")?;
            }
        }
        write!(f, ",")?;
        if self.kind == ModelKind::Linear {
            write!(f, "{}", self.outputs[0])?;
        } else {
            fmt_term_list(f, &self.outputs)?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for DistExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistExpr::Val(v) => write!(f, "val({})", v),
            DistExpr::Gaussian(m, v) => write!(f, "gaussian({},{})", m, v),
            DistExpr::Discrete(entries) => {
                write!(f, "discrete([")?;
                for (i, (p, l)) in entries.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    let label = l.to_string();
                    if label.starts_with('-') {
                        write!(f, "{}: {}", p, label)?;
                    } else {
                        write!(f, "{}:{}", p, label)?;
                    }
                }
                write!(f, "])")
            }
        }
    }
}

impl fmt::Display for DistClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ {}", self.head, self.dist)?;
        if !self.body.is_empty() {
            write!(f, " := ")?;
            fmt_goals(f, &self.body)?;
        }
        write!(f, ".")
    }
}

impl fmt::Display for DefClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            fmt_goals(f, &self.body)?;
        }
        write!(f, ".")
    }
}

impl fmt::Display for BiasDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasDecl::Type { pred, arg_types, .. } => {
                write!(f, "type({}(", pred)?;
                for (i, t) in arg_types.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", t)?;
                }
                write!(f, ")).")
            }
            BiasDecl::Mode { target, agg, links, attr, .. } => {
                let agg_name = agg.map(AggOp::name).unwrap_or("none");
                write!(f, "mode({},{},", target, agg_name)?;
                let wrap = !links.is_empty();
                if wrap {
                    write!(f, "(")?;
                }
                for (name, modes) in links {
                    write!(f, "{}(", name)?;
                    for (i, m) in modes.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}", if *m == ArgMode::In { "+" } else { "-" })?;
                    }
                    write!(f, "),")?;
                }
                write!(
                    f,
                    "{}({})",
                    attr.0,
                    if attr.1 == ArgMode::In { "+" } else { "-" }
                )?;
                if wrap {
                    write!(f, ")")?;
                }
                write!(f, ").")
            }
            BiasDecl::Rand { attr, kind, .. } => match kind {
                AttrKind::Continuous => write!(f, "rand({},continuous,[]).", attr),
                AttrKind::Discrete(labels) => {
                    write!(f, "rand({},discrete,[", attr)?;
                    for (i, l) in labels.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}", l)?;
                    }
                    write!(f, "]).")
                }
            },
            BiasDecl::Rank { attrs, .. } => {
                write!(f, "rank([")?;
                for (i, a) in attrs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", a)?;
                }
                write!(f, "]).")
            }
        }
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Def(c) => write!(f, "{}", c),
            Item::Dist(c) => write!(f, "{}", c),
            Item::Bias(b) => write!(f, "{}", b),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for item in &self.items {
            writeln!(f, "{}", item)?;
        }
        Ok(())
    }
}
