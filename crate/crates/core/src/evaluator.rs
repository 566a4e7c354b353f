//! FITB accuracy, compatibility AUC and evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CompatPair, FitbQuestion, ItemId};
use crate::error::{Error, Result};

/// Mann–Whitney AUC: the fraction of (pos, neg) pairs with `pos > neg`,
/// ties counting one half.
///
/// Computed from tied ranks in integer arithmetic, so the result is the
/// exact ratio `(2·wins + ties) / (2·n·m)` rounded once.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument(format!(
            "auc needs non-empty score lists (got {} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::Argument("auc scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of doubled average ranks of the positives (ranks are 1-based).
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        // -0.0 and 0.0 tie
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let positives = all[start..end].iter().filter(|e| e.1).count() as u128;
        // average rank of positions start+1..=end, doubled
        let doubled = (start + 1 + end) as u128;
        doubled_rank_sum += positives * doubled;
        start = end;
    }
    let (n, m) = (pos.len() as u128, neg.len() as u128);
    let doubled_u = doubled_rank_sum - n * (n + 1);
    Ok(doubled_u as f64 / (2 * n * m) as f64)
}

/// Fraction of questions whose true completion scores strictly highest
/// among the four choices; ties go to the lowest choice index.
pub fn fitb_accuracy<S>(scorer: S, questions: &[FitbQuestion]) -> Result<f64>
where
    S: Fn(&[ItemId]) -> Result<f64> + Sync,
{
    if questions.is_empty() {
        return Err(Error::Argument("no FITB questions".into()));
    }
    let correct: Vec<bool> = questions
        .par_iter()
        .map(|q| {
            let mut best = (0, f64::NEG_INFINITY);
            for choice in 0..q.choices.len() {
                let s = scorer(&q.completed(choice))
                    .map_err(|e| e.context(format!("FITB question `{}`", q.set_id)))?;
                if s > best.1 {
                    best = (choice, s);
                }
            }
            Ok(best.0 == q.answer_index)
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / questions.len() as f64)
}

/// AUC of positive-outfit scores against their corrupted counterparts.
pub fn compat_auc<S>(scorer: S, pairs: &[CompatPair]) -> Result<f64>
where
    S: Fn(&[ItemId]) -> Result<f64> + Sync,
{
    let scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let ctx = |e: Error| e.context(format!("compatibility pair `{}`", p.positive.set_id));
            Ok((
                scorer(&p.positive.items).map_err(ctx)?,
                scorer(&p.negative.items).map_err(ctx)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    auc(&pos, &neg)
}

/// Untrained baseline: a pseudo-random score in `[0, 1)` that is a pure
/// function of the seed and the ordered item list.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl RandomScorer {
    pub fn score(&self, items: &[ItemId]) -> f64 {
        // FNV-1a over the ids, then a SplitMix64 finalizer.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for id in items {
            for &b in id.as_bytes().iter().chain(std::iter::once(&0xff)) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Evaluation results. Metrics of a task that was not run are `null`, but
/// every key must be present when reading a report back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    pub modality: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub n_fitb_questions: Option<usize>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub fitb_accuracy: Option<f64>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub n_compat_pairs: Option<usize>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub auc: Option<f64>,
    pub seed: u64,
    pub timestamp: String,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("cannot serialize report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        for (name, v) in [("fitb_accuracy", report.fitb_accuracy), ("auc", report.auc)] {
            if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Schema(format!("{name} outside [0, 1]")));
            }
        }
        Ok(report)
    }

    /// One summary line, e.g. for terminal output.
    pub fn summary(&self) -> String {
        let mut s = format!("{} ({})", self.model, self.modality);
        if let Some(a) = self.fitb_accuracy {
            let _ = write!(s, " FITB {:.2}%", 100.0 * a);
        }
        if let Some(a) = self.auc {
            let _ = write!(s, " AUC {a:.4}");
        }
        s
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_json(&text)
}

/// Plain-text results table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<10} {:<11} {:>15} {:>19}\n",
        "Method", "Modality", "Accuracy (FITB)", "AUC (Compatibility)"
    );
    for r in reports {
        let acc = r
            .fitb_accuracy
            .map_or("-".to_string(), |a| format!("{:.1}%", 100.0 * a));
        let auc = r.auc.map_or("-".to_string(), |a| format!("{a:.3}"));
        let _ = writeln!(out, "{:<10} {:<11} {:>15} {:>19}", r.model, r.modality, acc, auc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Outfit;

    fn brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut total = 0.0;
        for p in pos {
            for n in neg {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5; 5], &[0.5; 3]).unwrap(), 0.5);
        assert!(matches!(auc(&[], &[1.0]), Err(Error::Argument(_))));
        assert!(matches!(auc(&[1.0], &[]), Err(Error::Argument(_))));
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let pos = [0.1, 0.5, 0.5, 0.9, 0.3, 0.3];
        let neg = [0.5, 0.3, 0.0, 0.9, 0.9];
        assert_eq!(auc(&pos, &neg).unwrap(), brute(&pos, &neg));
    }

    fn question(id: &str, answer: usize) -> FitbQuestion {
        FitbQuestion {
            set_id: id.into(),
            partial: vec![format!("{id}_a"), format!("{id}_b")],
            masked_position: 2,
            choices: [0, 1, 2, 3].map(|k| format!("{id}_c{k}")),
            answer_index: answer,
        }
    }

    fn table_scorer<'a>(table: &'a [(&'a str, f64)]) -> impl Fn(&[ItemId]) -> Result<f64> + Sync + 'a {
        move |items: &[ItemId]| {
            let choice = items.iter().find(|i| i.contains("_c")).unwrap();
            Ok(table.iter().find(|(k, _)| k == choice).map_or(0.0, |e| e.1))
        }
    }

    #[test]
    fn fitb_by_hand() {
        let qs = vec![question("q1", 0), question("q2", 2), question("q3", 1)];
        let table = [
            ("q1_c0", 0.9),
            ("q1_c1", 0.1),
            ("q2_c2", 0.8),
            ("q2_c3", 0.9),
            ("q3_c1", 0.7),
            ("q3_c0", 0.2),
        ];
        // q1 right, q2 wrong (c3 wins), q3 right
        assert!((fitb_accuracy(table_scorer(&table), &qs).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fitb_ties_pick_lowest_index() {
        let qs = vec![question("q", 0), question("r", 1)];
        let constant = |_: &[ItemId]| Ok(0.5);
        assert_eq!(fitb_accuracy(constant, &qs).unwrap(), 0.5);
    }

    #[test]
    fn fitb_oracle_is_perfect() {
        let qs: Vec<FitbQuestion> = (0..8).map(|k| question(&format!("q{k}"), k % 4)).collect();
        let oracle = |items: &[ItemId]| {
            let choice = items.iter().find(|i| i.contains("_c")).unwrap();
            let q: usize = choice[1..choice.find('_').unwrap()].parse().unwrap();
            Ok(if choice.ends_with(&format!("c{}", q % 4)) { 1.0 } else { 0.0 })
        };
        assert_eq!(fitb_accuracy(oracle, &qs).unwrap(), 1.0);
    }

    #[test]
    fn scorer_errors_name_the_question() {
        let qs = vec![question("bad", 0)];
        let failing = |_: &[ItemId]| -> Result<f64> {
            Err(Error::Lookup {
                id: "x".into(),
                source_name: "visual store".into(),
            })
        };
        let err = fitb_accuracy(failing, &qs).unwrap_err();
        assert!(err.to_string().contains("`bad`"));
        assert!(matches!(err.root(), Error::Lookup { .. }));
    }

    fn pairs(n: usize) -> Vec<CompatPair> {
        (0..n)
            .map(|k| CompatPair {
                positive: Outfit::new(format!("o{k}"), vec![format!("a{k}"), format!("b{k}")]),
                negative: Outfit::new(format!("o{k}_neg"), vec![format!("a{k}"), format!("z{k}")]),
                replaced_position: 1,
            })
            .collect()
    }

    #[test]
    fn compat_auc_extremes() {
        let ps = pairs(10);
        assert_eq!(compat_auc(|_| Ok(0.3), &ps).unwrap(), 0.5);
        let oracle = |items: &[ItemId]| Ok(if items[1].starts_with('b') { 1.0 } else { 0.0 });
        assert_eq!(compat_auc(oracle, &ps).unwrap(), 1.0);
    }

    #[test]
    fn random_scorer_is_deterministic_and_uniform() {
        let r = RandomScorer { seed: 9 };
        let items = vec!["a".to_string(), "b".to_string()];
        assert_eq!(r.score(&items), r.score(&items));
        let swapped = vec!["b".to_string(), "a".to_string()];
        assert_ne!(r.score(&items), r.score(&swapped));
        let mean = (0..10_000)
            .map(|k| r.score(&[format!("x{k}")]))
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    fn report() -> EvalReport {
        EvalReport {
            model: "hgnn".into(),
            modality: "multimodal".into(),
            n_fitb_questions: Some(480),
            fitb_accuracy: Some(0.39),
            n_compat_pairs: Some(480),
            auc: Some(0.76),
            seed: 7,
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn report_round_trip_keeps_full_precision() {
        let r = report();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"fitb_accuracy\": 0.39"));
        assert!(json.contains("\"auc\": 0.76"));
        assert_eq!(EvalReport::from_json(&json).unwrap(), r);

        let keys: Vec<&str> = json
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"')?.split('"').next())
            .collect();
        assert_eq!(
            keys,
            ["model", "modality", "n_fitb_questions", "fitb_accuracy", "n_compat_pairs", "auc", "seed", "timestamp"]
        );
    }

    #[test]
    fn report_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut r = report();
        r.auc = None;
        r.n_compat_pairs = None;
        emit_report(&r, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
        assert!(matches!(
            emit_report(&r, dir.path().join("missing/dir/r.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn missing_field_is_schema_error() {
        let json = report().to_json().unwrap().replace("  \"auc\": 0.76,\n", "");
        assert!(matches!(EvalReport::from_json(&json), Err(Error::Schema(_))));
    }

    #[test]
    fn table_lists_each_report() {
        let t = render_table(&[report()]);
        assert!(t.lines().nth(1).unwrap().contains("39.0%"));
        assert!(t.contains("0.760"));
    }
}
