//! Rubric arithmetic: element recall to dimension scores, the fine-tuning gate,
//! position-swapped pairwise verdicts and joint retrieval/composition tables.
//!
//! Element judgments are inputs; nothing here looks at hypothesis text.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("scoring: no elements to score")]
    NoElements,
    #[error("scoring: recall {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("scoring: expected 4 judgments, got {0}")]
    JudgmentCount(usize),
    #[error("scoring: inputs are misaligned: {0}")]
    Misaligned(String),
    #[error("scoring: malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("scoring: I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementState {
    Covered,
    Missing,
    Wrong,
}

/// Share of elements covered; missing and wrong both count as uncovered.
pub fn recall_fraction(states: &[ElementState]) -> Result<f64, ScoringError> {
    if states.is_empty() {
        return Err(ScoringError::NoElements);
    }
    let covered = states.iter().filter(|&&s| s == ElementState::Covered).count();
    Ok(covered as f64 / states.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct M3Score {
    pub motivation: u8,
    pub mechanism: u8,
    pub methodology: u8,
}

impl M3Score {
    pub fn total(&self) -> u8 {
        self.motivation + self.mechanism + self.methodology
    }
}

/// `round_half_up(4 r)`, so 25/50/75/100% land exactly on 1/2/3/4.
pub fn dimension_score(r: f64) -> Result<u8, ScoringError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(ScoringError::OutOfRange(r));
    }
    Ok((4.0 * r + 0.5).floor() as u8)
}

pub fn m3_from_recalls(motivation: f64, mechanism: f64, methodology: f64) -> Result<M3Score, ScoringError> {
    Ok(M3Score {
        motivation: dimension_score(motivation)?,
        mechanism: dimension_score(mechanism)?,
        methodology: dimension_score(methodology)?,
    })
}

pub const RFT_THRESHOLD: u8 = 8;

/// Qualifies for fine-tuning when the total is at least 8 of 12.
pub fn rft_pass(score: &M3Score) -> bool {
    score.total() >= RFT_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    A,
    B,
    #[serde(alias = "tie")]
    Tie,
}

impl Outcome {
    pub fn swapped(self) -> Self {
        match self {
            Outcome::A => Outcome::B,
            Outcome::B => Outcome::A,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairwiseVerdict {
    pub judgments: [Outcome; 4],
    pub winner: Outcome,
}

/// Strict majority over two trials times two presentation orders.
pub fn pairwise_aggregate(judgments: &[Outcome]) -> Result<PairwiseVerdict, ScoringError> {
    let judgments: [Outcome; 4] = judgments
        .try_into()
        .map_err(|_| ScoringError::JudgmentCount(judgments.len()))?;
    let a = judgments.iter().filter(|&&o| o == Outcome::A).count();
    let b = judgments.iter().filter(|&&o| o == Outcome::B).count();
    let winner = match a.cmp(&b) {
        std::cmp::Ordering::Greater => Outcome::A,
        std::cmp::Ordering::Less => Outcome::B,
        std::cmp::Ordering::Equal => Outcome::Tie,
    };
    Ok(PairwiseVerdict { judgments, winner })
}

/// Win, loss and tie shares for side A over a set of verdicts.
pub fn win_rate(verdicts: &[PairwiseVerdict]) -> (f64, f64, f64) {
    if verdicts.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = verdicts.len() as f64;
    let share = |o| verdicts.iter().filter(|v| v.winner == o).count() as f64 / n;
    (share(Outcome::A), share(Outcome::B), share(Outcome::Tie))
}

pub const DEFAULT_RANK_THRESHOLDS: [usize; 3] = [25, 50, 100];
pub const DEFAULT_SCORE_THRESHOLDS: [u8; 9] = [4, 5, 6, 7, 8, 9, 10, 11, 12];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointTable {
    pub rank_thresholds: Vec<usize>,
    pub score_thresholds: Vec<u8>,
    /// Per K: share of samples whose target ranked within K.
    pub retrieval: Vec<f64>,
    /// `cells[k][s]`: share with rank within K and total at least S.
    pub cells: Vec<Vec<f64>>,
}

/// Joint success per (K, S). A missing rank means the target was never retrieved.
pub fn joint_success_table(
    ranks: &[Option<usize>],
    totals: &[u8],
    rank_thresholds: &[usize],
    score_thresholds: &[u8],
) -> Result<JointTable, ScoringError> {
    if ranks.len() != totals.len() {
        return Err(ScoringError::Misaligned(format!("{} ranks vs {} scores", ranks.len(), totals.len())));
    }
    let n = ranks.len().max(1) as f64;
    let within = |r: Option<usize>, k: usize| r.is_some_and(|r| r <= k);
    let retrieval = rank_thresholds
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| within(r, k)).count() as f64 / n)
        .collect();
    let cells = rank_thresholds
        .iter()
        .map(|&k| {
            score_thresholds
                .iter()
                .map(|&s| {
                    ranks
                        .iter()
                        .zip(totals)
                        .filter(|&(&r, &t)| within(r, k) && t >= s)
                        .count() as f64
                        / n
                })
                .collect()
        })
        .collect();
    Ok(JointTable {
        rank_thresholds: rank_thresholds.to_vec(),
        score_thresholds: score_thresholds.to_vec(),
        retrieval,
        cells,
    })
}

/// Joins per-sample ranks and scores by sample id; the id sets must match.
pub fn joint_success_by_id(
    ranks: &HashMap<String, Option<usize>>,
    scores: &HashMap<String, M3Score>,
    rank_thresholds: &[usize],
    score_thresholds: &[u8],
) -> Result<JointTable, ScoringError> {
    if let Some(id) = ranks.keys().find(|id| !scores.contains_key(*id)) {
        return Err(ScoringError::Misaligned(format!("sample {id:?} has a rank but no score")));
    }
    if let Some(id) = scores.keys().find(|id| !ranks.contains_key(*id)) {
        return Err(ScoringError::Misaligned(format!("sample {id:?} has a score but no rank")));
    }
    let ids: Vec<&String> = ranks.keys().collect();
    let r: Vec<Option<usize>> = ids.iter().map(|id| ranks[*id]).collect();
    let t: Vec<u8> = ids.iter().map(|id| scores[*id].total()).collect();
    joint_success_table(&r, &t, rank_thresholds, score_thresholds)
}

pub fn write_joint_csv<W: Write>(table: &JointTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rank_threshold".to_string(), "retrieval_only".to_string()];
    header.extend(table.score_thresholds.iter().map(|s| format!("score_ge_{s}")));
    w.write_record(&header)?;
    for (i, k) in table.rank_thresholds.iter().enumerate() {
        let mut row = vec![k.to_string(), table.retrieval[i].to_string()];
        row.extend(table.cells[i].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Motivation,
    Mechanism,
    Methodology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementJudgment {
    pub name: String,
    pub state: ElementState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub sample_id: String,
    pub dimension: Dimension,
    pub elements: Vec<ElementJudgment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub pair_id: String,
    pub trial: u32,
    pub order: String,
    pub outcome: Outcome,
}

fn read_records<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, ScoringError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ScoringError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a coverage file and scores every sample; each sample needs all three dimensions.
pub fn score_coverage<R: BufRead>(input: R) -> Result<BTreeMap<String, M3Score>, ScoringError> {
    let records: Vec<CoverageRecord> = read_records(input)?;
    let mut recalls: BTreeMap<String, BTreeMap<Dimension, f64>> = BTreeMap::new();
    for r in &records {
        let states: Vec<ElementState> = r.elements.iter().map(|e| e.state).collect();
        let dims = recalls.entry(r.sample_id.clone()).or_default();
        if dims.insert(r.dimension, recall_fraction(&states)?).is_some() {
            return Err(ScoringError::Misaligned(format!("sample {:?} repeats {:?}", r.sample_id, r.dimension)));
        }
    }
    recalls
        .into_iter()
        .map(|(id, d)| {
            let get = |dim| {
                d.get(&dim)
                    .copied()
                    .ok_or_else(|| ScoringError::Misaligned(format!("sample {id:?} lacks {dim:?}")))
            };
            let s = m3_from_recalls(get(Dimension::Motivation)?, get(Dimension::Mechanism)?, get(Dimension::Methodology)?)?;
            Ok((id, s))
        })
        .collect()
}

/// Reads a judgment file and aggregates each pair's four judgments.
pub fn aggregate_judgments<R: BufRead>(input: R) -> Result<BTreeMap<String, PairwiseVerdict>, ScoringError> {
    let records: Vec<JudgmentRecord> = read_records(input)?;
    let mut by_pair: BTreeMap<String, Vec<&JudgmentRecord>> = BTreeMap::new();
    for r in &records {
        by_pair.entry(r.pair_id.clone()).or_default().push(r);
    }
    by_pair
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by(|a, b| a.trial.cmp(&b.trial).then_with(|| a.order.cmp(&b.order)));
            let outcomes: Vec<Outcome> = rs.iter().map(|r| r.outcome).collect();
            Ok((id, pairwise_aggregate(&outcomes)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ElementState::*;
    use Outcome::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_fraction(&[Covered; 5]).unwrap(), 1.0);
        assert_eq!(recall_fraction(&[Covered, Covered, Covered, Covered, Wrong]).unwrap(), 0.8);
        assert_eq!(recall_fraction(&[Missing, Wrong]).unwrap(), 0.0);
        assert!(recall_fraction(&[]).is_err());
    }

    #[test]
    fn m3_anchors() {
        let s = m3_from_recalls(1.0, 1.0, 1.0).unwrap();
        assert_eq!((s.motivation, s.mechanism, s.methodology, s.total()), (4, 4, 4, 12));
        let s = m3_from_recalls(0.75, 0.5, 0.25).unwrap();
        assert_eq!((s.motivation, s.mechanism, s.methodology, s.total()), (3, 2, 1, 6));
        assert_eq!(m3_from_recalls(0.0, 0.0, 0.0).unwrap().total(), 0);
        assert_eq!(dimension_score(0.8).unwrap(), 3);
        assert_eq!(dimension_score(0.125).unwrap(), 1);
        assert!(m3_from_recalls(1.1, 0.0, 0.0).is_err());
        assert!(m3_from_recalls(0.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn rft_boundary() {
        let s = |a, b, c| M3Score { motivation: a, mechanism: b, methodology: c };
        assert!(rft_pass(&s(4, 2, 2)));
        assert!(!rft_pass(&s(3, 2, 2)));
        assert!(rft_pass(&s(4, 4, 4)));
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_aggregate(&[A, A, A, B]).unwrap().winner, A);
        assert_eq!(pairwise_aggregate(&[A, A, B, B]).unwrap().winner, Tie);
        assert_eq!(pairwise_aggregate(&[A, Tie, Tie, B]).unwrap().winner, Tie);
        assert_eq!(pairwise_aggregate(&[A, Tie, Tie, Tie]).unwrap().winner, A);
        assert!(matches!(pairwise_aggregate(&[A, A, A]), Err(ScoringError::JudgmentCount(3))));
        let v = [A, B, B].map(|w| pairwise_aggregate(&[w, w, w, w]).unwrap());
        let (a, b, t) = win_rate(&v);
        assert!((a - 1.0 / 3.0).abs() < 1e-12 && (b - 2.0 / 3.0).abs() < 1e-12 && t == 0.0);
    }

    #[test]
    fn joint_examples() {
        let t = joint_success_table(&[Some(1); 4], &[12; 4], &DEFAULT_RANK_THRESHOLDS, &DEFAULT_SCORE_THRESHOLDS).unwrap();
        assert!(t.cells.iter().flatten().all(|&v| v == 1.0));
        let ranks = [Some(3), Some(25), Some(26), None];
        let t = joint_success_table(&ranks, &[4, 9, 12, 12], &DEFAULT_RANK_THRESHOLDS, &DEFAULT_SCORE_THRESHOLDS).unwrap();
        assert_eq!(t.cells[0][0], 0.5);
        assert_eq!(t.retrieval, vec![0.5, 0.75, 0.75]);
        assert!(joint_success_table(&[Some(1)], &[], &[25], &[4]).is_err());
        let empty = joint_success_table(&[], &[], &[25], &[4]).unwrap();
        assert_eq!(empty.cells, vec![vec![0.0]]);
    }

    #[test]
    fn joint_by_id_requires_alignment() {
        let ranks: HashMap<String, Option<usize>> = [("a".into(), Some(1)), ("b".into(), None)].into();
        let s = M3Score { motivation: 4, mechanism: 4, methodology: 0 };
        let mut scores: HashMap<String, M3Score> = [("a".into(), s), ("b".into(), s)].into();
        let t = joint_success_by_id(&ranks, &scores, &[25], &[8]).unwrap();
        assert_eq!(t.cells[0][0], 0.5);
        scores.remove("b");
        assert!(joint_success_by_id(&ranks, &scores, &[25], &[8]).is_err());
    }

    #[test]
    fn coverage_and_judgment_files() {
        let cov = r#"{"sample_id":"s1","dimension":"motivation","elements":[{"name":"x","state":"covered"},{"name":"y","state":"wrong"}]}
{"sample_id":"s1","dimension":"mechanism","elements":[{"name":"x","state":"covered"}]}
{"sample_id":"s1","dimension":"methodology","elements":[{"name":"x","state":"missing"},{"name":"y","state":"covered"},{"name":"z","state":"covered"},{"name":"w","state":"covered"}]}
"#;
        let scores = score_coverage(cov.as_bytes()).unwrap();
        assert_eq!(scores["s1"], M3Score { motivation: 2, mechanism: 4, methodology: 3 });
        let partial = cov.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(score_coverage(partial.as_bytes()).is_err());

        let judg = r#"{"pair_id":"p","trial":1,"order":"original","outcome":"A"}
{"pair_id":"p","trial":1,"order":"swapped","outcome":"A"}
{"pair_id":"p","trial":2,"order":"original","outcome":"tie"}
{"pair_id":"p","trial":2,"order":"swapped","outcome":"B"}
"#;
        let v = aggregate_judgments(judg.as_bytes()).unwrap();
        assert_eq!(v["p"].winner, A);
        let short = judg.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(aggregate_judgments(short.as_bytes()).is_err());
    }

    fn outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![Just(A), Just(B), Just(Tie)]
    }

    proptest! {
        #[test]
        fn m3_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let x = m3_from_recalls(lo, d, d).unwrap();
            let y = m3_from_recalls(hi, d, d).unwrap();
            prop_assert!(x.motivation <= y.motivation);
            prop_assert_eq!(x.total(), x.motivation + x.mechanism + x.methodology);
        }

        #[test]
        fn pairwise_symmetry(j in prop::collection::vec(outcome(), 4)) {
            let v = pairwise_aggregate(&j).unwrap();
            let swapped: Vec<Outcome> = j.iter().map(|o| o.swapped()).collect();
            prop_assert_eq!(pairwise_aggregate(&swapped).unwrap().winner, v.winner.swapped());
        }

        #[test]
        fn joint_monotonicity(
            samples in prop::collection::vec((prop::option::of(1usize..200), 0u8..=12), 0..40),
        ) {
            let (ranks, totals): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
            let t = joint_success_table(&ranks, &totals, &DEFAULT_RANK_THRESHOLDS, &DEFAULT_SCORE_THRESHOLDS).unwrap();
            for (ki, row) in t.cells.iter().enumerate() {
                prop_assert!(row.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(row.iter().all(|&v| v <= t.retrieval[ki]));
                if ki > 0 {
                    prop_assert!(row.iter().zip(&t.cells[ki - 1]).all(|(hi, lo)| hi >= lo));
                }
            }
        }
    }
}
