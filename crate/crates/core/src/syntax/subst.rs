//! Substitutions and unification over terms, atoms, and goals.

use super::*;
use std::collections::BTreeMap;

/// A mapping from variable names to terms.
///
/// Substitutions returned by [`unify`] are resolved (idempotent): no bound
/// variable appears in any right-hand side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subst(BTreeMap<Sym, Term>);

impl Subst {
    /// The empty substitution.
    pub fn new() -> Self {
        Subst(BTreeMap::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// The binding for `var`, if any.
    pub fn get(&self, var: &Sym) -> Option<&Term> {
        self.0.get(var)
    }

    /// Binds `var` to `term` without resolving anything.
    pub fn bind(&mut self, var: Sym, term: Term) {
        self.0.insert(var, term);
    }

    /// Iterates bindings in variable-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&Sym, &Term)> {
        self.0.iter()
    }

    /// Follows variable bindings one step at a time until an unbound variable
    /// or a non-variable term is reached. Does not descend into compounds.
    pub fn resolve<'a>(&'a self, term: &'a Term) -> &'a Term {
        let mut cur = term;
        while let Term::Var(v) = cur {
            match self.0.get(v) {
                Some(next) => cur = next,
                None => break,
            }
        }
        cur
    }

    /// Fully applies the substitution, following chains of bindings inside
    /// compound terms. Requires the substitution to be acyclic, which every
    /// substitution built through [`unify`] is.
    pub fn resolve_deep(&self, term: &Term) -> Term {
        match self.resolve(term) {
            Term::Compound(f, args) => Term::Compound(
                f.clone(),
                args.iter().map(|a| self.resolve_deep(a)).collect(),
            ),
            other => other.clone(),
        }
    }

    /// Fully applies the substitution to every argument of `atom`.
    pub fn resolve_atom(&self, atom: &Atom) -> Atom {
        Atom {
            pred: atom.pred.clone(),
            args: atom.args.iter().map(|a| self.resolve_deep(a)).collect(),
        }
    }

    /// Fully applies the substitution to a goal.
    pub fn resolve_goal(&self, goal: &Goal) -> Goal {
        match goal {
            Goal::True => Goal::True,
            Goal::Rel(a) => Goal::Rel(self.resolve_atom(a)),
            Goal::Bind { rv, value } => Goal::Bind {
                rv: self.resolve_atom(rv),
                value: self.resolve_deep(value),
            },
            Goal::Eq(a, b) => Goal::Eq(self.resolve_deep(a), self.resolve_deep(b)),
            Goal::Agg(agg) => Goal::Agg(AggAtom {
                op: agg.op,
                item: self.resolve_deep(&agg.item),
                inner: agg.inner.iter().map(|g| self.resolve_goal(g)).collect(),
                result: self.resolve_deep(&agg.result),
            }),
            Goal::Model(m) => Goal::Model(ModelAtom {
                kind: m.kind,
                inputs: m.inputs.iter().map(|t| self.resolve_deep(t)).collect(),
                weights: m.weights.clone(),
                outputs: m.outputs.iter().map(|t| self.resolve_deep(t)).collect(),
            }),
            Goal::Neg(g) => Goal::Neg(Box::new(self.resolve_goal(g))),
        }
    }

    /// Rewrites every right-hand side so that no bound variable remains in
    /// any binding, making the substitution idempotent.
    fn normalized(mut self) -> Self {
        let keys: Vec<Sym> = self.0.keys().cloned().collect();
        for k in keys {
            let t = self.resolve_deep(&Term::Var(k.clone()));
            self.0.insert(k, t);
        }
        self
    }
}

impl std::fmt::Display for Subst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, (v, t)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}/{}", v, t)?;
        }
        write!(f, "}}")
    }
}

/// Applies `subst` to `term` in a single simultaneous pass: each variable is
/// replaced by its binding as-is, and bindings are not re-applied to the
/// replacement. Applying `{X/a, Y/g(X)}` to `f(X,Y)` yields `f(a, g(X))`.
pub fn apply_substitution(term: &Term, subst: &Subst) -> Term {
    match term {
        Term::Var(v) => subst.get(v).cloned().unwrap_or_else(|| term.clone()),
        Term::Compound(f, args) => Term::Compound(
            f.clone(),
            args.iter().map(|a| apply_substitution(a, subst)).collect(),
        ),
        _ => term.clone(),
    }
}

fn occurs(var: &Sym, term: &Term, s: &Subst) -> bool {
    match s.resolve(term) {
        Term::Var(v) => v == var,
        Term::Compound(_, args) => args.iter().any(|a| occurs(var, a, s)),
        _ => false,
    }
}

fn nums_equal(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn unify_into(a: &Term, b: &Term, s: &mut Subst) -> bool {
    let ra = s.resolve(a).clone();
    let rb = s.resolve(b).clone();
    match (&ra, &rb) {
        (Term::Var(x), Term::Var(y)) if x == y => true,
        (_, Term::Var(y)) => {
            if occurs(y, &ra, s) {
                return false;
            }
            s.bind(y.clone(), ra);
            true
        }
        (Term::Var(x), _) => {
            if occurs(x, &rb, s) {
                return false;
            }
            s.bind(x.clone(), rb);
            true
        }
        (Term::Const(x), Term::Const(y)) => x == y,
        (Term::Num(x), Term::Num(y)) => nums_equal(*x, *y),
        (Term::Compound(f, xs), Term::Compound(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| unify_into(x, y, s))
        }
        _ => false,
    }
}

/// Computes a most general unifier of two terms, with occurs check.
///
/// Variables appearing only in `b` are bound to the corresponding parts of
/// `a` where possible, so `unify(f(c_1,L), f(C,M))` yields `{C/c_1, M/L}`.
pub fn unify(a: &Term, b: &Term) -> Option<Subst> {
    let mut s = Subst::new();
    if unify_into(a, b, &mut s) {
        Some(s.normalized())
    } else {
        None
    }
}

/// Unifies two atoms argument by argument.
pub fn unify_atoms(a: &Atom, b: &Atom) -> Option<Subst> {
    if a.pred != b.pred || a.args.len() != b.args.len() {
        return None;
    }
    let mut s = Subst::new();
    for (x, y) in a.args.iter().zip(&b.args) {
        if !unify_into(x, y, &mut s) {
            return None;
        }
    }
    Some(s.normalized())
}

/// Extends `s` by unifying two atoms under the bindings already in `s`.
/// On failure `s` may hold partial bindings, so callers pass a clone.
pub fn unify_atoms_into(a: &Atom, b: &Atom, s: &mut Subst) -> bool {
    a.pred == b.pred
        && a.args.len() == b.args.len()
        && a.args.iter().zip(&b.args).all(|(x, y)| unify_into(x, y, s))
}

fn rename_term(term: &Term, suffix: &str) -> Term {
    match term {
        Term::Var(v) => Term::Var(sym(&format!("{}%{}", v, suffix))),
        Term::Compound(f, args) => Term::Compound(
            f.clone(),
            args.iter().map(|a| rename_term(a, suffix)).collect(),
        ),
        _ => term.clone(),
    }
}

fn rename_atom(atom: &Atom, suffix: &str) -> Atom {
    Atom {
        pred: atom.pred.clone(),
        args: atom.args.iter().map(|a| rename_term(a, suffix)).collect(),
    }
}

fn rename_goal(goal: &Goal, suffix: &str) -> Goal {
    match goal {
        Goal::True => Goal::True,
        Goal::Rel(a) => Goal::Rel(rename_atom(a, suffix)),
        Goal::Bind { rv, value } => Goal::Bind {
            rv: rename_atom(rv, suffix),
            value: rename_term(value, suffix),
        },
        Goal::Eq(a, b) => Goal::Eq(rename_term(a, suffix), rename_term(b, suffix)),
        Goal::Agg(agg) => Goal::Agg(AggAtom {
            op: agg.op,
            item: rename_term(&agg.item, suffix),
            inner: agg.inner.iter().map(|g| rename_goal(g, suffix)).collect(),
            result: rename_term(&agg.result, suffix),
        }),
        Goal::Model(m) => Goal::Model(ModelAtom {
            kind: m.kind,
            inputs: m.inputs.iter().map(|t| rename_term(t, suffix)).collect(),
            weights: m.weights.clone(),
            outputs: m.outputs.iter().map(|t| rename_term(t, suffix)).collect(),
        }),
        Goal::Neg(g) => Goal::Neg(Box::new(rename_goal(g, suffix))),
    }
}

/// Renames every variable in a clause head and body by appending `%suffix`,
/// producing a variant that shares no variables with the original.
pub fn rename_clause(head: &Atom, body: &[Goal], suffix: &str) -> (Atom, Vec<Goal>) {
    (
        rename_atom(head, suffix),
        body.iter().map(|g| rename_goal(g, suffix)).collect(),
    )
}

/// Renames variables in a distribution expression alongside its clause.
pub fn rename_dist(dist: &DistExpr, suffix: &str) -> DistExpr {
    match dist {
        DistExpr::Val(t) => DistExpr::Val(rename_term(t, suffix)),
        DistExpr::Gaussian(m, v) => {
            DistExpr::Gaussian(rename_term(m, suffix), rename_term(v, suffix))
        }
        DistExpr::Discrete(entries) => DistExpr::Discrete(
            entries
                .iter()
                .map(|(p, l)| (rename_term(p, suffix), rename_term(l, suffix)))
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Term {
        Term::Var(sym(s))
    }

    fn cst(s: &str) -> Term {
        Term::Const(sym(s))
    }

    #[test]
    fn unify_binds_fresh_variables_to_query_side() {
        let a = Atom::new("clientLoan", vec![cst("c_1"), var("L")]);
        let b = Atom::new("clientLoan", vec![var("C"), var("M")]);
        let s = unify_atoms(&a, &b).unwrap();
        assert_eq!(s.get(&sym("C")), Some(&cst("c_1")));
        assert_eq!(s.get(&sym("M")), Some(&var("L")));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn unify_mismatched_constants_fails() {
        assert!(unify(&cst("a"), &cst("b")).is_none());
        assert!(unify(&Term::Num(1.0), &Term::Num(2.0)).is_none());
        assert!(unify(&cst("a"), &Term::Num(1.0)).is_none());
    }

    #[test]
    fn occurs_check_rejects_cyclic_binding() {
        let t = Term::Compound(sym("f"), vec![var("X")]);
        assert!(unify(&var("X"), &t).is_none());
        assert!(unify(&t, &var("X")).is_none());
    }

    #[test]
    fn unifier_is_resolved() {
        let a = Term::Compound(sym("f"), vec![var("X"), var("X")]);
        let b = Term::Compound(
            sym("f"),
            vec![Term::Compound(sym("g"), vec![var("Y")]), var("Z")],
        );
        let s = unify(&a, &b).unwrap();
        let g_y = Term::Compound(sym("g"), vec![var("Y")]);
        assert_eq!(s.get(&sym("X")), Some(&g_y));
        assert_eq!(s.get(&sym("Z")), Some(&g_y));
        for (_, t) in s.iter() {
            assert_eq!(&apply_substitution(t, &s), t, "binding not resolved: {}", s);
        }
    }

    #[test]
    fn application_is_simultaneous() {
        let mut s = Subst::new();
        s.bind(sym("X"), cst("a"));
        s.bind(sym("Y"), Term::Compound(sym("g"), vec![var("X")]));
        let t = Term::Compound(sym("f"), vec![var("X"), var("Y")]);
        let applied = apply_substitution(&t, &s);
        let expected = Term::Compound(
            sym("f"),
            vec![cst("a"), Term::Compound(sym("g"), vec![var("X")])],
        );
        assert_eq!(applied, expected);
    }

    #[test]
    fn unify_agrees_after_application() {
        let a = Term::Compound(sym("p"), vec![var("X"), cst("b"), var("X")]);
        let b = Term::Compound(sym("p"), vec![cst("a"), var("W"), var("V")]);
        let s = unify(&a, &b).unwrap();
        assert_eq!(apply_substitution(&a, &s), apply_substitution(&b, &s));
    }

    #[test]
    fn rename_makes_variables_disjoint() {
        let head = Atom::new("p", vec![var("X")]);
        let body = vec![Goal::Rel(Atom::new("q", vec![var("X"), var("Y")]))];
        let (h2, b2) = rename_clause(&head, &body, "1");
        let mut orig = Vec::new();
        head.collect_vars(&mut orig);
        for g in &body {
            g.collect_vars(&mut orig);
        }
        let mut renamed = Vec::new();
        h2.collect_vars(&mut renamed);
        for g in &b2 {
            g.collect_vars(&mut renamed);
        }
        assert!(orig.iter().all(|v| !renamed.contains(v)));
    }
}
