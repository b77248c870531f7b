//! Learning from tables with missing values.
//!
//! Two strategies are provided. The first needs no extra machinery: the tree
//! learner already routes entities with missing body reads through fail
//! branches, so running it directly on partial data yields a program with
//! negated-literal clauses ([`bootstrap_program`]).
//!
//! The second is a stochastic EM loop ([`run_stochastic_em`]). Each
//! iteration samples one imputation of all missing cells from the current
//! program conditioned on the observed cells (the E-step, a weighted
//! particle draw), asserts the imputed values as facts, and relearns the
//! program from the completed data (the M-step). The loop tracks the
//! complete-data log-likelihood of the observed cells so convergence can be
//! inspected; imputed facts never leak into the caller's data.

use rayon::prelude::*;

use crate::data::{BiasSpec, CellRef};
use crate::dist::{Distribution, Value};
use crate::engine::{compensated_sum, resolve_dist, Evidence, World, KB};
use crate::error::Error;
use crate::learner::{learn_jmp, LearnParams, Learned};
use crate::rng::{mix, substream};
use crate::syntax::{sym, Atom, DistClause, DistExpr, Goal, Item, Program, Sym, Term};

use indexmap::IndexMap;
use rand::Rng as _;

/// How many times the E-step doubles the particle count before giving up
/// when every particle is inconsistent with the evidence.
const MAX_E_STEP_ATTEMPTS: u32 = 4;

/// Settings for the stochastic EM loop.
#[derive(Clone, Debug)]
pub struct EmOptions {
    /// Number of E/M iterations after the bootstrap.
    pub iters: usize,
    /// Particles drawn per E-step.
    pub particles: usize,
    /// Seed for imputation sampling.
    pub seed: u64,
    /// Settings forwarded to every learning call.
    pub learn: LearnParams,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            iters: 5,
            particles: 50,
            seed: 0,
            learn: LearnParams::default(),
        }
    }
}

/// Result of a stochastic EM run.
#[derive(Clone, Debug)]
pub struct EmRun {
    /// The final learned program.
    pub program: Program,
    /// Induction report of the final learning pass.
    pub report: String,
    /// Complete-data log-likelihood of the observed cells, one entry for the
    /// bootstrap program plus one per iteration.
    pub trace: Vec<f64>,
}

/// The random-variable atom naming one table cell.
pub fn cell_atom(cell: &CellRef) -> Atom {
    Atom {
        pred: cell.attr.clone(),
        args: vec![Term::Const(sym(&cell.key))],
    }
}

/// The observed attribute cells of a data program as evidence: every ground
/// value fact whose predicate is a schema attribute.
pub fn observed_evidence(data: &Program, bias: &BiasSpec) -> Evidence {
    let mut out = Evidence::new();
    for c in data.dist_clauses() {
        if !c.body.is_empty() || bias.schema.attribute(&c.head.pred).is_none() {
            continue;
        }
        if let DistExpr::Val(t) = &c.dist {
            if let Some(v) = Value::from_term(t) {
                out.insert(c.head.clone(), v);
            }
        }
    }
    out
}

/// Learns a program from partial data alone; entities whose body reads hit
/// missing cells fall through to fail-branch clauses.
pub fn bootstrap_program(
    data: &Program,
    bias: &BiasSpec,
    params: &LearnParams,
) -> Result<Learned, Error> {
    learn_jmp(data, bias, params)
}

/// Samples one imputation of the missing cells from `p(missing | observed)`
/// under the program behind `kb`.
///
/// Draws `particles` weighted worlds (evidence forced first, missing cells
/// materialized afterwards) and selects one with probability proportional to
/// its evidence weight. When every particle is inconsistent with the
/// evidence the draw retries with twice as many particles, a few times, then
/// fails.
pub fn e_step_sample(
    kb: &KB,
    observed: &Evidence,
    missing: &[Atom],
    particles: usize,
    seed: u64,
) -> Result<Vec<(Atom, Value)>, Error> {
    if missing.is_empty() {
        return Ok(Vec::new());
    }
    if particles == 0 {
        return Err(Error::EmptyInput("particle sampling"));
    }
    let mut k = particles;
    for attempt in 0..MAX_E_STEP_ATTEMPTS {
        let attempt_seed = mix(seed, attempt as u64);
        let drawn: Result<Vec<(Vec<Value>, f64)>, Error> = (0..k)
            .into_par_iter()
            .map(|i| {
                let mut world = World::new(kb, observed, substream(attempt_seed, i as u64));
                world.force_evidence()?;
                let mut values = Vec::with_capacity(missing.len());
                for rv in missing {
                    let v = world
                        .ensure_value(rv)?
                        .ok_or_else(|| Error::UnknownAttribute(rv.to_string()))?;
                    values.push(v);
                }
                Ok((values, world.log_weight()))
            })
            .collect();
        let drawn = drawn?;
        let max_lw = drawn
            .iter()
            .map(|(_, lw)| *lw)
            .fold(f64::NEG_INFINITY, f64::max);
        if max_lw == f64::NEG_INFINITY {
            k *= 2;
            continue;
        }
        let weights: Vec<f64> = drawn.iter().map(|(_, lw)| (lw - max_lw).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut rng = substream(mix(seed, u64::from(u32::MAX)), attempt as u64);
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        return Ok(missing
            .iter()
            .cloned()
            .zip(drawn[pick].0.iter().cloned())
            .collect());
    }
    Err(Error::ZeroEvidenceWeight { n: k })
}

/// The data program completed with an imputation asserted as value facts.
fn completed_program(data: &Program, imputation: &[(Atom, Value)]) -> Program {
    let mut completed = data.clone();
    for (rv, v) in imputation {
        completed.items.push(Item::Dist(DistClause {
            head: rv.clone(),
            dist: DistExpr::Val(v.to_term()),
            body: Vec::new(),
            span: Default::default(),
        }));
    }
    completed
}

/// Relearns the program from the data completed with an imputation. The
/// imputed facts exist only inside the call; the caller's data is untouched.
pub fn m_step_relearn(
    data: &Program,
    imputation: &[(Atom, Value)],
    bias: &BiasSpec,
    params: &LearnParams,
) -> Result<Learned, Error> {
    learn_jmp(&completed_program(data, imputation), bias, params)
}

/// Sum over the observed cells of the log-density of the cell's value under
/// the one model clause whose body holds in the (possibly completed) facts.
///
/// The clause bodies of a learned program are mutually exclusive, so for
/// every cell exactly one clause of its attribute applies; its distribution
/// is evaluated against the facts and the observed value scored under it.
pub fn observed_cell_loglik(
    model: &Program,
    facts: &Program,
    observed: &Evidence,
) -> Result<f64, Error> {
    let mut by_attr: IndexMap<Sym, Vec<&DistClause>> = IndexMap::new();
    for c in model.dist_clauses() {
        if !c.body.is_empty() {
            by_attr.entry(c.head.pred.clone()).or_default().push(c);
        }
    }
    let kb = KB::new(facts.clone());
    let empty = Evidence::new();
    let mut terms = Vec::with_capacity(observed.len());
    for (rv, value) in observed {
        let Some(clauses) = by_attr.get(&rv.pred) else {
            continue;
        };
        let mut cell = f64::NEG_INFINITY;
        for clause in clauses {
            let Some(theta) = crate::syntax::unify_atoms(&clause.head, rv) else {
                continue;
            };
            let body: Vec<Goal> = clause.body.iter().map(|g| theta.resolve_goal(g)).collect();
            let mut world = World::new(&kb, &empty, substream(0, 0));
            let Some(proof) = world.prove(&body)? else {
                continue;
            };
            let expr = resolve_dist(&proof, &resolve_dist(&theta, &clause.dist));
            let dist = Distribution::from_expr(&expr)?;
            cell = dist.log_density(value)?;
            break;
        }
        terms.push(cell);
    }
    Ok(compensated_sum(terms.into_iter()))
}

/// Runs the stochastic EM loop: bootstrap from the partial data, then
/// `iters` rounds of imputation sampling and relearning.
///
/// The trace records the observed-cell log-likelihood of the bootstrap
/// program on the partial data followed by one entry per iteration, each
/// computed on the data completed with that iteration's imputation. With
/// `iters = 0` the result is the bootstrap program.
pub fn run_stochastic_em(
    data: &Program,
    missing: &[Atom],
    bias: &BiasSpec,
    opts: &EmOptions,
) -> Result<EmRun, Error> {
    let observed = observed_evidence(data, bias);
    let mut current = bootstrap_program(data, bias, &opts.learn)?;
    let mut trace = vec![observed_cell_loglik(&current.program, data, &observed)?];
    for iter in 0..opts.iters {
        let kb = KB::new(current.program.clone());
        let imputation = e_step_sample(
            &kb,
            &observed,
            missing,
            opts.particles,
            mix(opts.seed, iter as u64),
        )?;
        let completed = completed_program(data, &imputation);
        current = learn_jmp(&completed, bias, &opts.learn)?;
        trace.push(observed_cell_loglik(&current.program, &completed, &observed)?);
    }
    Ok(EmRun {
        program: current.program,
        report: current.report,
        trace,
    })
}
