//! Predictive-quality metrics for completed tables: root-mean-square error
//! normalized by the attribute range, prevalence-weighted one-vs-rest AUC
//! for discrete attributes, and the per-instance weighted pseudo
//! log-likelihood of held-out cells under a program.

use crate::dist::{Distribution, Value};
use crate::engine::{compensated_sum, estimate_conditional, relevant_evidence, Evidence, KB};
use crate::error::Error;
use crate::rng::mix;
use crate::syntax::{Atom, Sym};
use rayon::prelude::*;

/// One row of a metrics report: which attribute was scored, which metric,
/// its value, and how many cells contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub attribute: Sym,
    pub metric: &'static str,
    pub value: f64,
    pub n: usize,
}

impl MetricRow {
    /// Formats the row for a `attribute,metric,value,n` CSV report.
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.attribute, self.metric, self.value, self.n)
    }
}

/// Root-mean-square error divided by the attribute range, clipped to [0, 1].
pub fn nrmse(preds: &[f64], truths: &[f64], range: f64) -> Result<f64, Error> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("nrmse"));
    }
    if preds.len() != truths.len() {
        return Err(Error::ArityMismatch {
            what: "nrmse prediction/truth vectors".into(),
            expected: truths.len(),
            found: preds.len(),
        });
    }
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::ZeroRange);
    }
    let sq = compensated_sum(preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)));
    let rmse = (sq / preds.len() as f64).sqrt();
    Ok((rmse / range).clamp(0.0, 1.0))
}

/// Ranks of `scores` starting at 1, with tied scores sharing their midrank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC for the class marked `true` in `positive`, using the
/// Mann-Whitney statistic; each tied pair contributes one half.
fn one_vs_rest_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    let ranks = midranks(scores);
    let rank_sum = compensated_sum(
        ranks
            .iter()
            .zip(positive)
            .filter(|(_, p)| **p)
            .map(|(r, _)| *r),
    );
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Multi-class AUC: the average of one-vs-rest AUCs weighted by class
/// prevalence. `scores[i][j]` scores item `i` for label `labels[j]`; with
/// two classes and complementary scores this reduces to the standard AUC.
pub fn auc_total(labels: &[Sym], scores: &[Vec<f64>], truths: &[Sym]) -> Result<f64, Error> {
    if truths.is_empty() {
        return Err(Error::EmptyInput("auc_total"));
    }
    if scores.len() != truths.len() {
        return Err(Error::ArityMismatch {
            what: "auc_total score/truth vectors".into(),
            expected: truths.len(),
            found: scores.len(),
        });
    }
    for row in scores {
        if row.len() != labels.len() {
            return Err(Error::ArityMismatch {
                what: "auc_total score vector".into(),
                expected: labels.len(),
                found: row.len(),
            });
        }
    }
    for t in truths {
        if !labels.contains(t) {
            return Err(Error::TypeMismatch(format!(
                "true label `{t}` is not in the label set"
            )));
        }
    }
    let mut distinct: Vec<&Sym> = Vec::new();
    for t in truths {
        if !distinct.contains(&t) {
            distinct.push(t);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::SingleClass);
    }
    let n = truths.len() as f64;
    let mut total = 0.0;
    for (j, label) in labels.iter().enumerate() {
        let positive: Vec<bool> = truths.iter().map(|t| t == label).collect();
        let n_pos = positive.iter().filter(|p| **p).count();
        if n_pos == 0 {
            continue;
        }
        let class_scores: Vec<f64> = scores.iter().map(|row| row[j]).collect();
        total += n_pos as f64 / n * one_vs_rest_auc(&class_scores, &positive);
    }
    Ok(total)
}

/// Most likely value of a predictive distribution: the point mass itself,
/// the mean for a Gaussian, and the highest-probability label otherwise.
pub fn point_prediction(dist: &Distribution) -> Value {
    match dist {
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

/// Mean log-probability (log-density for continuous cells) of each test
/// cell's true value given the rest of the test data.
///
/// Each cell is scored as a ratio of mean evidence weights: the weight with
/// the cell clamped to its truth over the weight without it, conditioning
/// only on the cells the relevance pruner keeps. The result is averaged over
/// the scored cells.
pub fn wpll(
    kb: &KB,
    cells: &[(Atom, Value)],
    evidence: &Evidence,
    n_samples: usize,
    seed: u64,
) -> Result<f64, Error> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("wpll"));
    }
    let terms: Vec<f64> = cells
        .par_iter()
        .enumerate()
        .map(|(i, (cell, truth))| -> Result<f64, Error> {
            let mut rest = evidence.clone();
            rest.shift_remove(cell);
            let rest = relevant_evidence(kb, cell, &rest)?;
            let mut with_cell = rest.clone();
            with_cell.insert(cell.clone(), truth.clone());
            let num = estimate_conditional(kb, &[], &with_cell, n_samples, mix(seed, 2 * i as u64))?;
            let den =
                estimate_conditional(kb, &[], &rest, n_samples, mix(seed, 2 * i as u64 + 1))?;
            Ok((num.effective_evidence_weight / den.effective_evidence_weight).ln())
        })
        .collect::<Result<_, _>>()?;
    Ok(compensated_sum(terms.into_iter()) / cells.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_program, sym, Term};

    fn atom(pred: &str, arg: &str) -> Atom {
        Atom {
            pred: sym(pred),
            args: vec![Term::Const(sym(arg))],
        }
    }

    fn kb(src: &str) -> KB {
        KB::new(parse_program(src).unwrap())
    }

    #[test]
    fn nrmse_is_zero_when_predictions_match() {
        assert_eq!(nrmse(&[2.0, 5.0, -1.0], &[2.0, 5.0, -1.0], 10.0).unwrap(), 0.0);
    }

    #[test]
    fn nrmse_is_one_at_opposite_range_extremes() {
        assert_eq!(nrmse(&[0.0, 0.0], &[10.0, 10.0], 10.0).unwrap(), 1.0);
    }

    #[test]
    fn nrmse_matches_a_hand_computation() {
        assert!((nrmse(&[1.0, 3.0], &[2.0, 2.0], 10.0).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nrmse_clips_errors_beyond_the_range() {
        assert_eq!(nrmse(&[0.0], &[25.0], 10.0).unwrap(), 1.0);
    }

    #[test]
    fn nrmse_rejects_degenerate_inputs() {
        assert!(matches!(nrmse(&[], &[], 1.0), Err(Error::EmptyInput(_))));
        assert!(matches!(nrmse(&[1.0], &[1.0], 0.0), Err(Error::ZeroRange)));
        assert!(matches!(nrmse(&[1.0], &[1.0], -2.0), Err(Error::ZeroRange)));
        assert!(matches!(
            nrmse(&[1.0, 2.0], &[1.0], 5.0),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn nrmse_is_invariant_under_rescaling() {
        let preds = [1.0, 4.0, 2.5];
        let truths = [1.5, 3.0, 2.0];
        let base = nrmse(&preds, &truths, 6.0).unwrap();
        let c = 3.7;
        let sp: Vec<f64> = preds.iter().map(|v| v * c).collect();
        let st: Vec<f64> = truths.iter().map(|v| v * c).collect();
        let scaled = nrmse(&sp, &st, 6.0 * c).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn auc_is_one_for_perfect_separation() {
        let labels = [sym("yes"), sym("no")];
        let scores = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.2, 0.8],
            vec![0.1, 0.9],
        ];
        let truths = [sym("yes"), sym("yes"), sym("no"), sym("no")];
        assert_eq!(auc_total(&labels, &scores, &truths).unwrap(), 1.0);
    }

    #[test]
    fn auc_is_half_for_constant_scores() {
        let labels = [sym("a"), sym("b"), sym("c")];
        let scores = vec![vec![0.5, 0.3, 0.2]; 6];
        let truths = [
            sym("a"),
            sym("b"),
            sym("c"),
            sym("a"),
            sym("b"),
            sym("c"),
        ];
        assert!((auc_total(&labels, &scores, &truths).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_requires_two_observed_classes() {
        let labels = [sym("a"), sym("b")];
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2]];
        let truths = [sym("a"), sym("a")];
        assert!(matches!(
            auc_total(&labels, &scores, &truths),
            Err(Error::SingleClass)
        ));
    }

    /// Brute-force pairwise ranking AUC: every positive/negative pair adds
    /// one when the positive outranks the negative and a half on ties.
    fn pairwise_auc_total(labels: &[Sym], scores: &[Vec<f64>], truths: &[Sym]) -> f64 {
        let n = truths.len() as f64;
        let mut total = 0.0;
        for (j, label) in labels.iter().enumerate() {
            let pos: Vec<usize> = (0..truths.len()).filter(|&i| &truths[i] == label).collect();
            let neg: Vec<usize> = (0..truths.len()).filter(|&i| &truths[i] != label).collect();
            if pos.is_empty() {
                continue;
            }
            let mut wins = 0.0;
            for &p in &pos {
                for &q in &neg {
                    if scores[p][j] > scores[q][j] {
                        wins += 1.0;
                    } else if scores[p][j] == scores[q][j] {
                        wins += 0.5;
                    }
                }
            }
            total += pos.len() as f64 / n * (wins / (pos.len() * neg.len()) as f64);
        }
        total
    }

    #[test]
    fn auc_matches_the_pairwise_oracle_on_three_classes() {
        let labels = [sym("low"), sym("mid"), sym("high")];
        let scores = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.4, 0.4, 0.2],
            vec![0.3, 0.5, 0.2],
            vec![0.2, 0.3, 0.5],
            vec![0.3, 0.3, 0.4],
            vec![0.1, 0.2, 0.7],
        ];
        let truths = [
            sym("low"),
            sym("mid"),
            sym("low"),
            sym("high"),
            sym("mid"),
            sym("high"),
        ];
        let got = auc_total(&labels, &scores, &truths).unwrap();
        let want = pairwise_auc_total(&labels, &scores, &truths);
        assert!((got - want).abs() < 1e-12, "got {got}, oracle {want}");
    }

    #[test]
    fn auc_is_invariant_under_monotone_score_transforms() {
        let labels = [sym("a"), sym("b")];
        let scores = vec![
            vec![0.9, 0.1],
            vec![0.4, 0.6],
            vec![0.6, 0.4],
            vec![0.2, 0.8],
            vec![0.5, 0.5],
        ];
        let truths = [sym("a"), sym("b"), sym("a"), sym("b"), sym("a")];
        let base = auc_total(&labels, &scores, &truths).unwrap();
        let mapped: Vec<Vec<f64>> = scores
            .iter()
            .map(|row| row.iter().map(|s| (3.0 * s).exp() + 1.0).collect())
            .collect();
        let transformed = auc_total(&labels, &mapped, &truths).unwrap();
        assert!((base - transformed).abs() < 1e-12);
    }

    #[test]
    fn binary_auc_with_complementary_scores_reduces_to_the_standard_auc() {
        let labels = [sym("pos"), sym("neg")];
        let pos_scores = [0.8, 0.3, 0.55, 0.55, 0.1, 0.9];
        let truths = [
            sym("pos"),
            sym("neg"),
            sym("pos"),
            sym("neg"),
            sym("neg"),
            sym("pos"),
        ];
        let scores: Vec<Vec<f64>> = pos_scores.iter().map(|s| vec![*s, 1.0 - s]).collect();
        let got = auc_total(&labels, &scores, &truths).unwrap();
        let positive: Vec<bool> = truths.iter().map(|t| t == &sym("pos")).collect();
        let standard = one_vs_rest_auc(&pos_scores, &positive);
        assert!((got - standard).abs() < 1e-12);
    }

    #[test]
    fn point_predictions_take_the_distribution_mode() {
        assert_eq!(
            point_prediction(&Distribution::Val(Value::Sym(sym("ok")))),
            Value::Sym(sym("ok"))
        );
        assert_eq!(
            point_prediction(&Distribution::gaussian(4.5, 2.0).unwrap()),
            Value::Num(4.5)
        );
        let d = Distribution::discrete(vec![
            (Value::Sym(sym("a")), 0.2),
            (Value::Sym(sym("b")), 0.5),
            (Value::Sym(sym("c")), 0.3),
        ])
        .unwrap();
        assert_eq!(point_prediction(&d), Value::Sym(sym("b")));
    }

    #[test]
    fn wpll_of_a_point_mass_program_on_matching_facts_is_zero() {
        let kb = kb("savings(a1) ~ val(120).\nsavings(a2) ~ val(80).\n");
        let cells = vec![
            (atom("savings", "a1"), Value::Num(120.0)),
            (atom("savings", "a2"), Value::Num(80.0)),
        ];
        let evidence: Evidence = cells.iter().cloned().collect();
        let got = wpll(&kb, &cells, &evidence, 50, 7).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn wpll_of_a_uniform_coin_is_log_one_half() {
        let kb = kb(
            "flip(c1) ~ discrete([0.5:h, 0.5:t]).\n\
             flip(c2) ~ discrete([0.5:h, 0.5:t]).\n\
             flip(c3) ~ discrete([0.5:h, 0.5:t]).\n",
        );
        let cells = vec![
            (atom("flip", "c1"), Value::Sym(sym("h"))),
            (atom("flip", "c2"), Value::Sym(sym("t"))),
            (atom("flip", "c3"), Value::Sym(sym("h"))),
        ];
        let evidence: Evidence = cells.iter().cloned().collect();
        let got = wpll(&kb, &cells, &evidence, 20_000, 11).unwrap();
        assert!(
            (got - 0.5f64.ln()).abs() < 0.02,
            "got {got}, want {}",
            0.5f64.ln()
        );
    }

    fn mixture_kb() -> KB {
        kb(
            "group(c) ~ discrete([0.3:a, 0.7:b]).\n\
             x(c) ~ gaussian(0.0, 1.0) := group(c) ~= a.\n\
             x(c) ~ gaussian(5.0, 1.0) := group(c) ~= b.\n",
        )
    }

    fn normal_density(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn wpll_of_a_mixture_matches_the_analytic_log_density() {
        let cells = vec![(atom("x", "c"), Value::Num(1.0))];
        let evidence: Evidence = cells.iter().cloned().collect();
        let got = wpll(&mixture_kb(), &cells, &evidence, 20_000, 3).unwrap();
        let want = (0.3 * normal_density(1.0, 0.0, 1.0) + 0.7 * normal_density(1.0, 5.0, 1.0)).ln();
        assert!((got - want).abs() < 0.02, "got {got}, want {want}");
    }

    #[test]
    fn wpll_prefers_the_generating_program_over_a_perturbed_one() {
        let mut rng = crate::rng::substream(41, 0);
        let prior = Distribution::discrete(vec![
            (Value::Sym(sym("a")), 0.3),
            (Value::Sym(sym("b")), 0.7),
        ])
        .unwrap();
        let mut cells = Vec::new();
        for i in 0..30 {
            let mean = match prior.sample(&mut rng) {
                Value::Sym(s) if s.as_ref() == "a" => 0.0,
                _ => 5.0,
            };
            let v = Distribution::gaussian(mean, 1.0).unwrap().sample(&mut rng);
            cells.push((atom("x", &format!("c{i}")), v));
        }
        let text: String = (0..30)
            .map(|i| {
                format!(
                    "group(c{i}) ~ discrete([0.3:a, 0.7:b]).\n\
                     x(c{i}) ~ gaussian(0.0, 1.0) := group(c{i}) ~= a.\n\
                     x(c{i}) ~ gaussian(5.0, 1.0) := group(c{i}) ~= b.\n"
                )
            })
            .collect();
        let pert_text = text.replace("gaussian(0.0", "gaussian(2.0").replace(
            "gaussian(5.0",
            "gaussian(8.0",
        );
        let evidence: Evidence = cells.iter().cloned().collect();
        let good = wpll(&kb(&text), &cells, &evidence, 4000, 5).unwrap();
        let bad = wpll(&kb(&pert_text), &cells, &evidence, 4000, 5).unwrap();
        assert!(
            good > bad,
            "generating program {good} should beat perturbed {bad}"
        );
    }

    #[test]
    fn wpll_requires_at_least_one_cell() {
        let kb = kb("flip(c1) ~ discrete([0.5:h, 0.5:t]).\n");
        assert!(matches!(
            wpll(&kb, &[], &Evidence::default(), 10, 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn wpll_is_deterministic_for_a_fixed_seed() {
        let cells = vec![
            (atom("x", "c"), Value::Num(1.0)),
            (atom("group", "c"), Value::Sym(sym("b"))),
        ];
        let evidence: Evidence = cells.iter().cloned().collect();
        let a = wpll(&mixture_kb(), &cells, &evidence, 2000, 9).unwrap();
        let b = wpll(&mixture_kb(), &cells, &evidence, 2000, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn metric_rows_print_as_csv() {
        let row = MetricRow {
            attribute: sym("savings"),
            metric: "nrmse",
            value: 0.25,
            n: 12,
        };
        assert_eq!(row.csv_line(), "savings,nrmse,0.25,12");
    }
}
