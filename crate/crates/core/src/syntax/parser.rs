//! Recursive-descent parser for programs, declarations, and query strings.

use super::lexer::{LexError, Lexer, Tok};
use super::*;

/// Parse failure with source position (1-based line and column).
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: error: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error("{line}:{col}: error: predicate `{pred}` used with arity {arity} after arity {prev}")]
    Arity { line: u32, col: u32, pred: String, arity: usize, prev: usize },
}

impl ParseError {
    fn at(span: Span, message: impl Into<String>) -> Self {
        ParseError::Syntax { line: span.line, col: span.col, message: message.into() }
    }
}

impl From<LexError> for ParseError {
    fn from(e: LexError) -> Self {
        ParseError::at(e.span, e.message)
    }
}

const AGG_NAMES: [&str; 6] = ["avg", "sum", "max", "min", "mod", "count"];
const MODEL_NAMES: [&str; 3] = ["linear", "logistic", "softmax"];
const BIAS_NAMES: [&str; 4] = ["type", "mode", "rand", "rank"];

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    end: Span,
    anon: u32,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(text: &str) -> PResult<Self> {
        let toks = Lexer::new(text).tokenize()?;
        let end = toks.last().map(|(_, s)| *s).unwrap_or_default();
        Ok(Parser { toks, pos: 0, end, anon: 0 })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off).map(|(t, _)| t)
    }

    fn span(&self) -> Span {
        self.toks.get(self.pos).map(|(_, s)| *s).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        let span = self.span();
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            Some(t) => Err(ParseError::at(
                span,
                format!("expected {}, found {}", tok.describe(), t.describe()),
            )),
            None => Err(ParseError::at(
                span,
                format!("expected {}, found end of input", tok.describe()),
            )),
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Span)> {
        let span = self.span();
        match self.bump() {
            Some(Tok::Ident(s)) => Ok((s, span)),
            Some(t) => Err(ParseError::at(
                span,
                format!("expected identifier, found {}", t.describe()),
            )),
            None => Err(ParseError::at(span, "expected identifier, found end of input")),
        }
    }

    fn fresh_anon(&mut self) -> Term {
        self.anon += 1;
        Term::Var(sym(&format!("_A{}", self.anon)))
    }

    // -- terms ---------------------------------------------------------------

    fn parse_term(&mut self) -> PResult<Term> {
        let span = self.span();
        match self.bump() {
            Some(Tok::Variable(v)) => {
                if v == "_" {
                    Ok(self.fresh_anon())
                } else {
                    Ok(Term::Var(sym(&v)))
                }
            }
            Some(Tok::Num(n)) => Ok(Term::Num(n)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.bump();
                    let mut args = vec![self.parse_term()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.bump();
                        args.push(self.parse_term()?);
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Term::Compound(sym(&name), args))
                } else {
                    Ok(Term::Const(sym(&name)))
                }
            }
            Some(t) => Err(ParseError::at(span, format!("expected term, found {}", t.describe()))),
            None => Err(ParseError::at(span, "expected term, found end of input")),
        }
    }

    fn parse_atom(&mut self) -> PResult<Atom> {
        let span = self.span();
        let term = self.parse_term()?;
        match term {
            Term::Const(name) => Ok(Atom { pred: name, args: vec![] }),
            Term::Compound(name, args) => Ok(Atom { pred: name, args }),
            _ => Err(ParseError::at(span, "expected an atom")),
        }
    }

    // -- goals ---------------------------------------------------------------

    fn parse_goal(&mut self) -> PResult<Goal> {
        if self.peek() == Some(&Tok::NafPlus) {
            self.bump();
            let inner = self.parse_goal()?;
            if matches!(inner, Goal::Neg(_)) {
                return Err(ParseError::at(self.span(), "nested `\\+` is not supported"));
            }
            return Ok(Goal::Neg(Box::new(inner)));
        }
        let span = self.span();
        match self.peek() {
            Some(Tok::Ident(name)) if name == "true" && self.peek_at(1) != Some(&Tok::LParen) => {
                self.bump();
                Ok(Goal::True)
            }
            Some(Tok::Ident(name))
                if AGG_NAMES.contains(&name.as_str()) && self.peek_at(1) == Some(&Tok::LParen) =>
            {
                self.parse_agg()
            }
            Some(Tok::Ident(name))
                if MODEL_NAMES.contains(&name.as_str())
                    && self.peek_at(1) == Some(&Tok::LParen) =>
            {
                self.parse_model()
            }
            Some(Tok::Ident(_)) => {
                let atom = self.parse_atom()?;
                match self.peek() {
                    Some(Tok::TildeEq) => {
                        self.bump();
                        let value = self.parse_value_term()?;
                        Ok(Goal::Bind { rv: atom, value })
                    }
                    Some(Tok::EqEq) => {
                        self.bump();
                        let rhs = self.parse_term()?;
                        let lhs = if atom.args.is_empty() {
                            Term::Const(atom.pred)
                        } else {
                            Term::Compound(atom.pred, atom.args)
                        };
                        Ok(Goal::Eq(lhs, rhs))
                    }
                    _ => Ok(Goal::Rel(atom)),
                }
            }
            Some(Tok::Variable(_)) | Some(Tok::Num(_)) => {
                let lhs = self.parse_term()?;
                self.expect(Tok::EqEq)?;
                let rhs = self.parse_term()?;
                Ok(Goal::Eq(lhs, rhs))
            }
            Some(t) => Err(ParseError::at(span, format!("expected goal, found {}", t.describe()))),
            None => Err(ParseError::at(span, "expected goal, found end of input")),
        }
    }

    /// Term on the right of `~=`; `?` is only meaningful inside query strings
    /// and is rejected here (parse_query handles it before calling us).
    fn parse_value_term(&mut self) -> PResult<Term> {
        self.parse_term()
    }

    fn parse_goals_until(&mut self, stop: &[Tok]) -> PResult<Vec<Goal>> {
        let mut goals = vec![self.parse_goal()?];
        while self.peek() == Some(&Tok::Comma) {
            self.bump();
            goals.push(self.parse_goal()?);
        }
        if let Some(t) = self.peek() {
            if !stop.contains(t) {
                return Err(ParseError::at(
                    self.span(),
                    format!("expected `,` or end of body, found {}", t.describe()),
                ));
            }
        }
        Ok(goals)
    }

    fn parse_agg(&mut self) -> PResult<Goal> {
        let (name, span) = self.expect_ident()?;
        let op = AggOp::from_name(&name)
            .ok_or_else(|| ParseError::at(span, "unknown aggregation operator"))?;
        self.expect(Tok::LParen)?;
        let item = self.parse_term()?;
        self.expect(Tok::Comma)?;
        self.expect(Tok::LParen)?;
        let mut inner = vec![self.parse_goal()?];
        while self.peek() == Some(&Tok::Comma) {
            self.bump();
            inner.push(self.parse_goal()?);
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Comma)?;
        let result = self.parse_term()?;
        self.expect(Tok::RParen)?;
        Ok(Goal::Agg(AggAtom { op, item, inner, result }))
    }

    fn parse_num(&mut self) -> PResult<f64> {
        let span = self.span();
        match self.bump() {
            Some(Tok::Num(n)) => Ok(n),
            Some(t) => Err(ParseError::at(
                span,
                format!("model weights must be numeric, found {}", t.describe()),
            )),
            None => Err(ParseError::at(span, "expected number, found end of input")),
        }
    }

    fn parse_num_list(&mut self) -> PResult<Vec<f64>> {
        self.expect(Tok::LBracket)?;
        let mut out = vec![self.parse_num()?];
        while self.peek() == Some(&Tok::Comma) {
            self.bump();
            out.push(self.parse_num()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    fn parse_term_list(&mut self) -> PResult<Vec<Term>> {
        self.expect(Tok::LBracket)?;
        if self.peek() == Some(&Tok::RBracket) {
            self.bump();
            return Ok(vec![]);
        }
        let mut out = vec![self.parse_term()?];
        while self.peek() == Some(&Tok::Comma) {
            self.bump();
            out.push(self.parse_term()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    fn parse_model(&mut self) -> PResult<Goal> {
        let (name, span) = self.expect_ident()?;
        let kind = match name.as_str() {
            "linear" => ModelKind::Linear,
            "logistic" => ModelKind::Logistic,
            "softmax" => ModelKind::Softmax,
            _ => return Err(ParseError::at(span, "unknown model atom")),
        };
        self.expect(Tok::LParen)?;
        let inputs = self.parse_term_list()?;
        self.expect(Tok::Comma)?;
        let weights = if kind == ModelKind::Softmax {
            self.expect(Tok::LBracket)?;
            let mut rows = vec![self.parse_num_list()?];
            while self.peek() == Some(&Tok::Comma) {
                self.bump();
                rows.push(self.parse_num_list()?);
            }
            self.expect(Tok::RBracket)?;
            ModelWeights::Matrix(rows)
        } else {
            ModelWeights::Vector(self.parse_num_list()?)
        };
        self.expect(Tok::Comma)?;
        let outputs = if kind == ModelKind::Linear {
            vec![self.parse_term()?]
        } else {
            self.parse_term_list()?
        };
        self.expect(Tok::RParen)?;
        let expected = match &weights {
            ModelWeights::Vector(v) => v.len(),
            ModelWeights::Matrix(rows) => rows.first().map(Vec::len).unwrap_or(0),
        };
        if expected != inputs.len() + 1 {
            return Err(ParseError::at(
                span,
                format!(
                    "model expects {} weights per row for {} inputs (intercept included), found {}",
                    inputs.len() + 1,
                    inputs.len(),
                    expected
                ),
            ));
        }
        if let ModelWeights::Matrix(rows) = &weights {
            if rows.len() != outputs.len() {
                return Err(ParseError::at(
                    span,
                    format!(
                        "softmax weight rows ({}) must match outputs ({})",
                        rows.len(),
                        outputs.len()
                    ),
                ));
            }
            if rows.iter().any(|r| r.len() != expected) {
                return Err(ParseError::at(span, "softmax weight rows have unequal lengths"));
            }
        }
        if kind == ModelKind::Logistic && outputs.len() != 2 {
            return Err(ParseError::at(span, "logistic expects exactly two outputs"));
        }
        Ok(Goal::Model(ModelAtom { kind, inputs, weights, outputs }))
    }

    // -- distributions ---------------------------------------------------------

    fn parse_dist(&mut self) -> PResult<DistExpr> {
        let (name, span) = self.expect_ident()?;
        match name.as_str() {
            "val" => {
                self.expect(Tok::LParen)?;
                let v = self.parse_term()?;
                self.expect(Tok::RParen)?;
                Ok(DistExpr::Val(v))
            }
            "gaussian" => {
                self.expect(Tok::LParen)?;
                let mean = self.parse_term()?;
                self.expect(Tok::Comma)?;
                let var = self.parse_term()?;
                self.expect(Tok::RParen)?;
                Ok(DistExpr::Gaussian(mean, var))
            }
            "discrete" => {
                self.expect(Tok::LParen)?;
                let bracketed = self.peek() == Some(&Tok::LBracket);
                if bracketed {
                    self.bump();
                }
                let mut entries = vec![self.parse_dist_entry()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.bump();
                    entries.push(self.parse_dist_entry()?);
                }
                if bracketed {
                    self.expect(Tok::RBracket)?;
                }
                self.expect(Tok::RParen)?;
                Ok(DistExpr::Discrete(entries))
            }
            other => Err(ParseError::at(
                span,
                format!("unknown distribution `{}` (expected val, gaussian, or discrete)", other),
            )),
        }
    }

    fn parse_dist_entry(&mut self) -> PResult<(Term, Term)> {
        let prob = self.parse_term()?;
        self.expect(Tok::Colon)?;
        let label = self.parse_term()?;
        Ok((prob, label))
    }

    // -- bias declarations -----------------------------------------------------

    fn parse_arg_modes(&mut self) -> PResult<Vec<ArgMode>> {
        self.expect(Tok::LParen)?;
        let mut modes = Vec::new();
        loop {
            let span = self.span();
            match self.bump() {
                Some(Tok::Plus) => modes.push(ArgMode::In),
                Some(Tok::Minus) => modes.push(ArgMode::Out),
                Some(t) => {
                    return Err(ParseError::at(
                        span,
                        format!("expected `+` or `-`, found {}", t.describe()),
                    ))
                }
                None => return Err(ParseError::at(span, "expected `+` or `-`")),
            }
            match self.bump() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => break,
                _ => return Err(ParseError::at(self.span(), "expected `,` or `)`")),
            }
        }
        Ok(modes)
    }

    fn parse_bias(&mut self, name: &str, span: Span) -> PResult<BiasDecl> {
        self.expect(Tok::LParen)?;
        let decl = match name {
            "type" => {
                let (pred, _) = self.expect_ident()?;
                self.expect(Tok::LParen)?;
                let mut arg_types = vec![sym(&self.expect_ident()?.0)];
                while self.peek() == Some(&Tok::Comma) {
                    self.bump();
                    arg_types.push(sym(&self.expect_ident()?.0));
                }
                self.expect(Tok::RParen)?;
                BiasDecl::Type { pred: sym(&pred), arg_types, span }
            }
            "mode" => {
                let (target, _) = self.expect_ident()?;
                self.expect(Tok::Comma)?;
                let (agg_name, agg_span) = self.expect_ident()?;
                let agg = if agg_name == "none" {
                    None
                } else {
                    Some(AggOp::from_name(&agg_name).ok_or_else(|| {
                        ParseError::at(
                            agg_span,
                            format!("unknown aggregator `{}` in mode declaration", agg_name),
                        )
                    })?)
                };
                self.expect(Tok::Comma)?;
                let mut pats: Vec<(Sym, Vec<ArgMode>)> = Vec::new();
                if self.peek() == Some(&Tok::LParen) {
                    self.bump();
                    loop {
                        let (pname, _) = self.expect_ident()?;
                        let modes = self.parse_arg_modes()?;
                        pats.push((sym(&pname), modes));
                        match self.bump() {
                            Some(Tok::Comma) => continue,
                            Some(Tok::RParen) => break,
                            _ => {
                                return Err(ParseError::at(self.span(), "expected `,` or `)`"))
                            }
                        }
                    }
                } else {
                    let (pname, _) = self.expect_ident()?;
                    let modes = self.parse_arg_modes()?;
                    pats.push((sym(&pname), modes));
                }
                let (attr_name, attr_modes) = pats.pop().unwrap();
                if attr_modes.len() != 1 {
                    return Err(ParseError::at(
                        span,
                        "the final pattern of a mode declaration must be a unary attribute",
                    ));
                }
                BiasDecl::Mode {
                    target: sym(&target),
                    agg,
                    links: pats,
                    attr: (attr_name, attr_modes[0]),
                    span,
                }
            }
            "rand" => {
                let (attr, _) = self.expect_ident()?;
                self.expect(Tok::Comma)?;
                let (kname, kspan) = self.expect_ident()?;
                self.expect(Tok::Comma)?;
                let labels = self.parse_ident_list()?;
                let kind = match kname.as_str() {
                    "continuous" => {
                        if !labels.is_empty() {
                            return Err(ParseError::at(
                                kspan,
                                "continuous attributes take an empty label list",
                            ));
                        }
                        AttrKind::Continuous
                    }
                    "discrete" => {
                        if labels.is_empty() {
                            return Err(ParseError::at(
                                kspan,
                                "discrete attributes need at least one label",
                            ));
                        }
                        AttrKind::Discrete(labels)
                    }
                    other => {
                        return Err(ParseError::at(
                            kspan,
                            format!("expected `continuous` or `discrete`, found `{}`", other),
                        ))
                    }
                };
                BiasDecl::Rand { attr: sym(&attr), kind, span }
            }
            "rank" => {
                let attrs = self.parse_ident_list()?;
                BiasDecl::Rank { attrs, span }
            }
            _ => unreachable!(),
        };
        self.expect(Tok::RParen)?;
        self.expect(Tok::Dot)?;
        Ok(decl)
    }

    fn parse_ident_list(&mut self) -> PResult<Vec<Sym>> {
        self.expect(Tok::LBracket)?;
        let mut out = Vec::new();
        if self.peek() != Some(&Tok::RBracket) {
            out.push(sym(&self.expect_ident()?.0));
            while self.peek() == Some(&Tok::Comma) {
                self.bump();
                out.push(sym(&self.expect_ident()?.0));
            }
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    // -- items -------------------------------------------------------------------

    fn parse_item(&mut self) -> PResult<Item> {
        let span = self.span();
        if let Some(Tok::Ident(name)) = self.peek() {
            if BIAS_NAMES.contains(&name.as_str()) && self.peek_at(1) == Some(&Tok::LParen) {
                let name = name.clone();
                self.bump();
                return Ok(Item::Bias(self.parse_bias(&name, span)?));
            }
        }
        let head = self.parse_atom()?;
        match self.peek() {
            Some(Tok::Dot) => {
                self.bump();
                Ok(Item::Def(DefClause { head, body: vec![], span }))
            }
            Some(Tok::ColonEq) | Some(Tok::ColonDash) => {
                self.bump();
                let body = self.parse_goals_until(&[Tok::Dot])?;
                self.expect(Tok::Dot)?;
                Ok(Item::Def(DefClause { head, body, span }))
            }
            Some(Tok::Tilde) => {
                self.bump();
                let dist = self.parse_dist()?;
                match self.peek() {
                    Some(Tok::Dot) => {
                        self.bump();
                        Ok(Item::Dist(DistClause { head, dist, body: vec![], span }))
                    }
                    Some(Tok::ColonEq) | Some(Tok::ColonDash) => {
                        self.bump();
                        let body = self.parse_goals_until(&[Tok::Dot])?;
                        self.expect(Tok::Dot)?;
                        Ok(Item::Dist(DistClause { head, dist, body, span }))
                    }
                    Some(t) => Err(ParseError::at(
                        self.span(),
                        format!("expected `.`, `:=`, or `:-`, found {}", t.describe()),
                    )),
                    None => Err(ParseError::at(self.span(), "unterminated clause")),
                }
            }
            Some(t) => Err(ParseError::at(
                self.span(),
                format!("expected `.`, `~`, `:=`, or `:-`, found {}", t.describe()),
            )),
            None => Err(ParseError::at(self.span(), "unterminated clause")),
        }
    }

    fn parse_program(&mut self) -> PResult<Program> {
        let mut items = Vec::new();
        while self.peek().is_some() {
            items.push(self.parse_item()?);
        }
        let program = Program::new(items);
        check_arities(&program)?;
        Ok(program)
    }
}

fn record_arity(
    map: &mut std::collections::HashMap<Sym, usize>,
    atom: &Atom,
    span: Span,
) -> PResult<()> {
    if atom.pred.as_ref() == "true" {
        return Ok(());
    }
    match map.get(&atom.pred) {
        Some(&prev) if prev != atom.args.len() => Err(ParseError::Arity {
            line: span.line,
            col: span.col,
            pred: atom.pred.to_string(),
            arity: atom.args.len(),
            prev,
        }),
        Some(_) => Ok(()),
        None => {
            map.insert(atom.pred.clone(), atom.args.len());
            Ok(())
        }
    }
}

fn record_goal_arities(
    map: &mut std::collections::HashMap<Sym, usize>,
    goal: &Goal,
    span: Span,
) -> PResult<()> {
    match goal {
        Goal::Rel(a) | Goal::Bind { rv: a, .. } => record_arity(map, a, span),
        Goal::Agg(agg) => {
            for g in &agg.inner {
                record_goal_arities(map, g, span)?;
            }
            Ok(())
        }
        Goal::Neg(g) => record_goal_arities(map, g, span),
        _ => Ok(()),
    }
}

/// Rejects a functor used at two different arities anywhere in the program.
fn check_arities(p: &Program) -> PResult<()> {
    let mut map = std::collections::HashMap::new();
    for item in &p.items {
        match item {
            Item::Def(c) => {
                record_arity(&mut map, &c.head, c.span)?;
                for g in &c.body {
                    record_goal_arities(&mut map, g, c.span)?;
                }
            }
            Item::Dist(c) => {
                record_arity(&mut map, &c.head, c.span)?;
                for g in &c.body {
                    record_goal_arities(&mut map, g, c.span)?;
                }
            }
            Item::Bias(BiasDecl::Type { pred, arg_types, span }) => {
                let atom = Atom {
                    pred: pred.clone(),
                    args: arg_types.iter().map(|t| Term::Const(t.clone())).collect(),
                };
                record_arity(&mut map, &atom, *span)?;
            }
            Item::Bias(_) => {}
        }
    }
    Ok(())
}

/// Parses a `.dc` program text.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    Parser::new(text)?.parse_program()
}

/// Parses a query string of the form `query N :: goal, ... | ev, ev, ...`
/// (evidence part optional, trailing `.` optional). A goal of the form
/// `rv ~= ?` requests the predictive distribution of `rv`.
pub fn parse_query(text: &str) -> Result<QuerySpec, ParseError> {
    let mut p = Parser::new(text)?;
    let span = p.span();
    match p.bump() {
        Some(Tok::Ident(w)) if w == "query" => {}
        _ => return Err(ParseError::at(span, "queries start with the word `query`")),
    }
    let n = match p.bump() {
        Some(Tok::Num(n)) if n >= 1.0 && n.fract() == 0.0 => n as usize,
        _ => return Err(ParseError::at(p.span(), "expected a positive sample count")),
    };
    p.expect(Tok::ColonColon)?;

    let mut predictive = None;
    let goal = if matches!(p.peek(), Some(Tok::Ident(_)))
        && p.peek_at(1) == Some(&Tok::LParen)
        && find_predictive(&p)
    {
        let rv = p.parse_atom()?;
        p.expect(Tok::TildeEq)?;
        p.expect(Tok::Question)?;
        predictive = Some(rv);
        vec![]
    } else {
        p.parse_goals_until(&[Tok::Pipe, Tok::Dot])?
    };

    let mut evidence = Vec::new();
    if p.peek() == Some(&Tok::Pipe) {
        p.bump();
        while matches!(p.peek(), Some(Tok::Ident(_))) {
            let rv = p.parse_atom()?;
            p.expect(Tok::TildeEq)?;
            let value = p.parse_term()?;
            evidence.push((rv, value));
            if p.peek() == Some(&Tok::Comma) {
                p.bump();
            } else {
                break;
            }
        }
    }
    if p.peek() == Some(&Tok::Dot) {
        p.bump();
    }
    if let Some(t) = p.peek() {
        return Err(ParseError::at(
            p.span(),
            format!("unexpected {} after query", t.describe()),
        ));
    }
    Ok(QuerySpec { n, goal, evidence, predictive })
}

/// Looks ahead for the `rv ~= ?` shape without consuming tokens.
fn find_predictive(p: &Parser) -> bool {
    let mut depth = 0usize;
    let mut i = 0usize;
    loop {
        match p.peek_at(i) {
            Some(Tok::LParen) => depth += 1,
            Some(Tok::RParen) => depth = depth.saturating_sub(1),
            Some(Tok::TildeEq) if depth == 0 => {
                return p.peek_at(i + 1) == Some(&Tok::Question);
            }
            Some(Tok::Pipe) | Some(Tok::Dot) | None => return false,
            _ => {}
        }
        i += 1;
    }
}
