//! Online retrieval over a [`SearchTree`].
//!
//! [`best_first_search`] keeps a priority queue of paths ranked by the geometric mean
//! of the router probabilities along the path. Popping an internal node costs one
//! router call and pushes every child; popping a document proposes it at no cost.
//!
//! [`tournament_search`] is the exhaustive baseline: one call per level-1 node picks a
//! winner among its documents, winners then compete group by group up the tree until
//! one champion is left. Its cost is the number of internal nodes, whatever the target.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DocSource, QueryContext};
use crate::index::SearchTree;
use crate::router::{Candidate, Router, RouterDistribution, RouterError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search: budget must be at least 1")]
    Budget,
    #[error("search: target {0:?} is not in the corpus")]
    UnknownTarget(String),
    #[error("search: tree covers {tree} documents but the document source has {docs}")]
    Mismatch { tree: usize, docs: usize },
    #[error("search: {source}")]
    Router {
        #[source]
        source: RouterError,
        partial: Box<SearchResult>,
    },
}

/// Something in the queue: an internal node or a document position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Item {
    Node(usize),
    Doc(usize),
}

/// A root-to-item path summarised by its accumulated log probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub item: Item,
    /// Number of router probabilities accumulated along the path.
    pub steps: usize,
    pub log_prob_sum: f64,
}

impl PathState {
    pub fn root(node: usize) -> Self {
        PathState {
            item: Item::Node(node),
            steps: 0,
            log_prob_sum: 0.0,
        }
    }

    pub fn extend(&self, item: Item, p: f64) -> Self {
        PathState {
            item,
            steps: self.steps + 1,
            log_prob_sum: self.log_prob_sum + p.ln(),
        }
    }

    /// Mean log probability; the queue orders on this.
    pub fn mean_log(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.log_prob_sum / self.steps as f64
        }
    }

    /// Geometric mean of the path's probabilities (1 for the empty root path).
    pub fn score(&self) -> f64 {
        self.mean_log().exp()
    }
}

/// `(p_0 * ... * p_j)^(1 / (j + 1))`, computed in log space.
pub fn geometric_mean_score(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 1.0;
    }
    (probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64).exp()
}

struct Entry {
    key: f64,
    seq: u64,
    state: PathState,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Highest score first; equal scores in insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub node: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchResult {
    /// Document ids in the order the search proposed them.
    pub proposed: Vec<String>,
    /// Path score of each proposed document (router probability for the tournament).
    pub proposed_scores: Vec<f64>,
    pub ir_calls: usize,
    pub ir_calls_to_target: Option<usize>,
    /// 1-based position of the target in `proposed`.
    pub proposed_rank: Option<usize>,
    pub budget_exhausted: bool,
    pub trace: Vec<TraceStep>,
}

/// Default call budget: `4 * depth * branching`.
pub fn default_budget(tree: &SearchTree) -> usize {
    4 * tree.depth() * tree.branching()
}

fn check_source(tree: &SearchTree, docs: &dyn DocSource) -> Result<(), SearchError> {
    if tree.n_docs() != docs.len() {
        return Err(SearchError::Mismatch {
            tree: tree.n_docs(),
            docs: docs.len(),
        });
    }
    Ok(())
}

fn resolve_target(docs: &dyn DocSource, target: Option<&str>) -> Result<Option<usize>, SearchError> {
    target
        .map(|id| docs.position(id).ok_or_else(|| SearchError::UnknownTarget(id.to_string())))
        .transpose()
}

/// Marks, per node, whether the target lies beneath it.
fn target_path(tree: &SearchTree, target: Option<usize>) -> Vec<bool> {
    let mut on_path = vec![false; tree.nodes().len()];
    if let Some(t) = target {
        for a in tree.ancestors_of_doc(t) {
            on_path[a] = true;
        }
    }
    on_path
}

fn node_candidate<'a>(
    tree: &'a SearchTree,
    docs: &'a dyn DocSource,
    node: usize,
    with_text: bool,
    on_path: &[bool],
) -> Candidate<'a> {
    let n = tree.node(node);
    let (title, abstract_text) = if with_text {
        let titles: Vec<&str> = n
            .children
            .iter()
            .take(5)
            .map(|&c| {
                if n.level == 1 {
                    docs.title(c)
                } else {
                    docs.title(tree.first_doc(c))
                }
            })
            .collect();
        (
            Cow::Owned(format!("Cluster {node} ({} documents)", tree.docs_under(node).len())),
            Cow::Owned(titles.join("; ")),
        )
    } else {
        (Cow::Borrowed(""), Cow::Borrowed(""))
    };
    Candidate {
        id: Cow::Owned(format!("node:{node}")),
        vector: &n.centroid,
        title,
        abstract_text,
        contains_target: on_path[node],
    }
}

fn doc_candidate<'a>(docs: &'a dyn DocSource, pos: usize, target: Option<usize>) -> Candidate<'a> {
    Candidate {
        id: Cow::Borrowed(docs.doc_id(pos)),
        vector: docs.vector(pos),
        title: Cow::Borrowed(docs.title(pos)),
        abstract_text: Cow::Borrowed(docs.abstract_text(pos)),
        contains_target: Some(pos) == target,
    }
}

fn children_candidates<'a>(
    tree: &'a SearchTree,
    docs: &'a dyn DocSource,
    node: usize,
    with_text: bool,
    target: Option<usize>,
    on_path: &[bool],
) -> (Vec<Item>, Vec<Candidate<'a>>) {
    let n = tree.node(node);
    if n.level == 1 {
        let items = n.children.iter().map(|&d| Item::Doc(d)).collect();
        let cands = n.children.iter().map(|&d| doc_candidate(docs, d, target)).collect();
        (items, cands)
    } else {
        let items = n.children.iter().map(|&c| Item::Node(c)).collect();
        let cands = n
            .children
            .iter()
            .map(|&c| node_candidate(tree, docs, c, with_text, on_path))
            .collect();
        (items, cands)
    }
}

/// Hierarchical best-first search.
///
/// Stops when the target is proposed, when a node would need expanding after `budget`
/// router calls, or when the queue runs dry. Without a target it proposes every
/// document reachable within the budget.
pub fn best_first_search(
    tree: &SearchTree,
    docs: &dyn DocSource,
    router: &dyn Router,
    query: &QueryContext,
    budget: usize,
    target: Option<&str>,
) -> Result<SearchResult, SearchError> {
    check_source(tree, docs)?;
    let target = resolve_target(docs, target)?;
    best_first_until(tree, docs, router, query, budget, target, &|d| Some(d) == target)
}

/// Best-first search whose stopping rule is `hit`; `oracle_target` is what oracle
/// routers are told. Used by the simulator, where any member of a tolerance set counts.
pub(crate) fn best_first_until(
    tree: &SearchTree,
    docs: &dyn DocSource,
    router: &dyn Router,
    query: &QueryContext,
    budget: usize,
    oracle_target: Option<usize>,
    hit: &dyn Fn(usize) -> bool,
) -> Result<SearchResult, SearchError> {
    if budget < 1 {
        return Err(SearchError::Budget);
    }
    let on_path = target_path(tree, oracle_target);
    let with_text = router.wants_text();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Entry>, state: PathState| {
        heap.push(Entry {
            key: state.mean_log(),
            seq,
            state,
        });
        seq += 1;
    };
    push(&mut heap, PathState::root(tree.root_id()));

    let mut result = SearchResult::default();
    while let Some(Entry { state, .. }) = heap.pop() {
        match state.item {
            Item::Doc(d) => {
                result.proposed.push(docs.doc_id(d).to_string());
                result.proposed_scores.push(state.score());
                if hit(d) {
                    result.ir_calls_to_target = Some(result.ir_calls);
                    result.proposed_rank = Some(result.proposed.len());
                    break;
                }
            }
            Item::Node(node) => {
                if result.ir_calls >= budget {
                    result.budget_exhausted = true;
                    break;
                }
                let (items, cands) = children_candidates(tree, docs, node, with_text, oracle_target, &on_path);
                let dist = match router.route(query, &cands) {
                    Ok(d) => d,
                    Err(source) => {
                        return Err(SearchError::Router {
                            source,
                            partial: Box::new(result),
                        })
                    }
                };
                check_len(&dist, cands.len(), &mut result)?;
                result.ir_calls += 1;
                for (item, &p) in items.into_iter().zip(dist.probs()) {
                    push(&mut heap, state.extend(item, p));
                }
                result.trace.push(TraceStep {
                    node,
                    probs: dist.probs().to_vec(),
                });
            }
        }
    }
    Ok(result)
}

fn check_len(dist: &RouterDistribution, n: usize, result: &mut SearchResult) -> Result<(), SearchError> {
    if dist.len() != n {
        return Err(SearchError::Router {
            source: RouterError::InvalidDistribution(format!("{} probabilities for {n} children", dist.len())),
            partial: Box::new(std::mem::take(result)),
        });
    }
    Ok(())
}

/// Exhaustive bottom-up tournament over the tree's cluster structure.
///
/// Proposal order: the champion, then everyone else by elimination round (later rounds
/// first) and, within a round, by descending router probability.
pub fn tournament_search(
    tree: &SearchTree,
    docs: &dyn DocSource,
    router: &dyn Router,
    query: &QueryContext,
    target: Option<&str>,
) -> Result<SearchResult, SearchError> {
    check_source(tree, docs)?;
    let target = resolve_target(docs, target)?;
    let mut result = SearchResult::default();
    // Winner document per node id.
    let mut winner = vec![usize::MAX; tree.nodes().len()];
    // (round, probability, order of appearance, doc)
    let mut eliminated: Vec<(usize, f64, usize, usize)> = Vec::new();
    let mut champion = (usize::MAX, 0.0);

    for level in 1..=tree.depth() {
        for node in tree.nodes().iter().filter(|n| n.level == level) {
            let entrants: Vec<usize> = if level == 1 {
                node.children.clone()
            } else {
                node.children.iter().map(|&c| winner[c]).collect()
            };
            let cands: Vec<Candidate> = entrants.iter().map(|&d| doc_candidate(docs, d, target)).collect();
            let dist = match router.route(query, &cands) {
                Ok(d) => d,
                Err(source) => {
                    return Err(SearchError::Router {
                        source,
                        partial: Box::new(result),
                    })
                }
            };
            check_len(&dist, cands.len(), &mut result)?;
            result.ir_calls += 1;
            let w = dist.argmax();
            for (i, (&d, &p)) in entrants.iter().zip(dist.probs()).enumerate() {
                if i != w {
                    eliminated.push((level, p, eliminated.len(), d));
                }
            }
            winner[node.node_id] = entrants[w];
            if node.node_id == tree.root_id() {
                champion = (entrants[w], dist.probs()[w]);
            }
            result.trace.push(TraceStep {
                node: node.node_id,
                probs: dist.probs().to_vec(),
            });
        }
    }
    eliminated.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let order = std::iter::once((champion.0, champion.1)).chain(eliminated.iter().map(|e| (e.3, e.1)));
    for (d, p) in order {
        result.proposed.push(docs.doc_id(d).to_string());
        result.proposed_scores.push(p);
        if Some(d) == target {
            result.proposed_rank = Some(result.proposed.len());
        }
    }
    if result.proposed_rank.is_some() {
        result.ir_calls_to_target = Some(result.ir_calls);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BestFirst,
    Tournament,
}

/// A retrieval target and the query that should find it.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
pub struct EvalTarget {
    pub target_id: String,
    #[serde(flatten)]
    pub query: QueryContext,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub target_id: String,
    pub ir_calls_to_target: Option<usize>,
    pub proposed_rank: Option<usize>,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSummary {
    pub targets: usize,
    pub found: usize,
    pub mean_ir_calls: Option<f64>,
    pub median_ir_calls: Option<f64>,
    pub mean_rank: Option<f64>,
    pub median_rank: Option<f64>,
}

#[derive(Debug)]
pub struct EvalReport {
    /// Rows for every target evaluated before the first failure.
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
    /// The target whose search failed, and why.
    pub failure: Option<(String, SearchError)>,
}

/// Runs one search per target (in parallel) and aggregates call counts and ranks.
pub fn eval_retrieval(
    tree: &SearchTree,
    docs: &dyn DocSource,
    router: &dyn Router,
    targets: &[EvalTarget],
    budget: usize,
    method: Method,
) -> Result<EvalReport, SearchError> {
    check_source(tree, docs)?;
    if budget < 1 {
        return Err(SearchError::Budget);
    }
    if let Some(t) = targets.iter().find(|t| docs.position(&t.target_id).is_none()) {
        return Err(SearchError::UnknownTarget(t.target_id.clone()));
    }
    let outcomes: Vec<Result<SearchResult, SearchError>> = targets
        .par_iter()
        .map(|t| match method {
            Method::BestFirst => best_first_search(tree, docs, router, &t.query, budget, Some(&t.target_id)),
            Method::Tournament => tournament_search(tree, docs, router, &t.query, Some(&t.target_id)),
        })
        .collect();
    let mut rows = Vec::with_capacity(targets.len());
    let mut failure = None;
    for (t, outcome) in targets.iter().zip(outcomes) {
        match outcome {
            Ok(r) => rows.push(EvalRow {
                target_id: t.target_id.clone(),
                ir_calls_to_target: r.ir_calls_to_target,
                proposed_rank: r.proposed_rank,
                budget_exhausted: r.budget_exhausted,
            }),
            Err(e) => {
                failure = Some((t.target_id.clone(), e));
                break;
            }
        }
    }
    let summary = summarize(&rows);
    Ok(EvalReport { rows, summary, failure })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len().is_multiple_of(2) { (s[m - 1] + s[m]) / 2.0 } else { s[m] })
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    let calls: Vec<f64> = rows.iter().filter_map(|r| r.ir_calls_to_target).map(|c| c as f64).collect();
    let ranks: Vec<f64> = rows.iter().filter_map(|r| r.proposed_rank).map(|c| c as f64).collect();
    EvalSummary {
        targets: rows.len(),
        found: calls.len(),
        mean_ir_calls: mean(&calls),
        median_ir_calls: median(&calls),
        mean_rank: mean(&ranks),
        median_rank: median(&ranks),
    }
}

pub const EVAL_CSV_HEADER: [&str; 4] = ["target_id", "ir_calls_to_target", "proposed_rank", "budget_exhausted"];

/// Writes the per-target CSV; a failed target gets a final `router_failure` marker row.
pub fn write_eval_csv<W: Write>(report: &EvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_CSV_HEADER)?;
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.target_id.clone(),
            opt(r.ir_calls_to_target),
            opt(r.proposed_rank),
            r.budget_exhausted.to_string(),
        ])?;
    }
    if let Some((id, _)) = &report.failure {
        w.write_record([id.as_str(), "", "", "router_failure"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, DocRecord, YearMonth};
    use crate::index::build_tree;
    use crate::router::{PlantedOracle, SimilarityRouter};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Corpus::new(
            (0..n)
                .map(|i| DocRecord {
                    id: format!("d{i}"),
                    title: format!("doc {i}"),
                    abstract_text: String::new(),
                    date: YearMonth::new(2024, 1).unwrap(),
                    embedding: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    /// Always uniform, whatever the candidates.
    struct Uniform;
    impl Router for Uniform {
        fn route(&self, _: &QueryContext, c: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError> {
            Ok(RouterDistribution::uniform(c.len()))
        }
    }

    struct Failing;
    impl Router for Failing {
        fn route(&self, _: &QueryContext, _: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError> {
            Err(RouterError::Timeout(std::time::Duration::from_millis(1)))
        }
    }

    #[test]
    fn depth_one_ideal_oracle() {
        let c = corpus(12, 1);
        let t = build_tree(&c, 15, 0).unwrap();
        let r = PlantedOracle::new(1.0, 0).unwrap();
        for d in c.docs() {
            let res = best_first_search(&t, &c, &r, &QueryContext::default(), 10, Some(&d.id)).unwrap();
            assert_eq!(res.ir_calls_to_target, Some(1));
            assert_eq!(res.proposed_rank, Some(1));
        }
    }

    #[test]
    fn uniform_router_depth_one_mean_rank() {
        let c = corpus(15, 2);
        let t = build_tree(&c, 15, 0).unwrap();
        // Oracle: with all scores equal, FIFO proposes children in stored order, so the
        // rank of each target is its child slot + 1; the mean over all 15 targets is 8.
        let slots = &t.node(t.root_id()).children;
        let expected: f64 = (1..=15).sum::<usize>() as f64 / 15.0;
        let mut total = 0.0;
        for (slot, &pos) in slots.iter().enumerate() {
            let res = best_first_search(&t, &c, &Uniform, &QueryContext::default(), 10, Some(&c.doc(pos).id)).unwrap();
            assert_eq!(res.proposed_rank, Some(slot + 1));
            total += res.proposed_rank.unwrap() as f64;
        }
        assert_eq!(total / 15.0, expected);
        assert_eq!(expected, 8.0);
    }

    #[test]
    fn exhaustive_without_target() {
        let c = corpus(200, 3);
        let t = build_tree(&c, 6, 1).unwrap();
        let q = QueryContext::default().with_embedding(c.doc(0).embedding.clone());
        for router in [&SimilarityRouter::new(0.05).unwrap() as &dyn Router, &Uniform] {
            let res = best_first_search(&t, &c, router, &q, usize::MAX, None).unwrap();
            let mut ids = res.proposed.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 200);
            assert_eq!(res.ir_calls, t.nodes().len());
            assert!(!res.budget_exhausted);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let c = corpus(200, 3);
        let t = build_tree(&c, 6, 1).unwrap();
        let res = best_first_search(&t, &c, &Uniform, &QueryContext::default(), 3, None).unwrap();
        assert_eq!(res.ir_calls, 3);
        assert!(res.budget_exhausted);
        assert!(matches!(
            best_first_search(&t, &c, &Uniform, &QueryContext::default(), 0, None),
            Err(SearchError::Budget)
        ));
    }

    #[test]
    fn router_failure_keeps_partial() {
        let c = corpus(20, 3);
        let t = build_tree(&c, 15, 1).unwrap();
        match best_first_search(&t, &c, &Failing, &QueryContext::default(), 10, None) {
            Err(SearchError::Router { partial, .. }) => assert_eq!(partial.ir_calls, 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            best_first_search(&t, &c, &Uniform, &QueryContext::default(), 10, Some("nope")),
            Err(SearchError::UnknownTarget(_))
        ));
    }

    #[test]
    fn tournament_costs() {
        for (n, calls) in [(225, 16), (15, 1), (9, 1), (3035, 218)] {
            let c = corpus(n, 4);
            let t = build_tree(&c, 15, 2).unwrap();
            let res = tournament_search(&t, &c, &Uniform, &QueryContext::default(), Some("d0")).unwrap();
            assert_eq!(res.ir_calls, calls, "n = {n}");
            assert_eq!(res.ir_calls_to_target, Some(calls));
            assert_eq!(res.proposed.len(), n);
        }
    }

    #[test]
    fn tournament_single_level_orders_by_probability() {
        let c = corpus(9, 5);
        let t = build_tree(&c, 15, 0).unwrap();
        let q = QueryContext::default().with_embedding(c.doc(3).embedding.clone());
        let r = SimilarityRouter::new(0.05).unwrap();
        let res = tournament_search(&t, &c, &r, &q, Some("d3")).unwrap();
        assert_eq!(res.ir_calls, 1);
        assert_eq!(res.proposed[0], "d3");
        assert_eq!(res.proposed_rank, Some(1));
        assert!(res.proposed_scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn tournament_ideal_oracle_ranks_target_first() {
        let c = corpus(500, 6);
        let t = build_tree(&c, 15, 3).unwrap();
        let r = PlantedOracle::new(1.0, 0).unwrap();
        for id in ["d0", "d77", "d499"] {
            let res = tournament_search(&t, &c, &r, &QueryContext::default(), Some(id)).unwrap();
            assert_eq!(res.proposed_rank, Some(1));
        }
    }

    #[test]
    fn eval_handles_empty_and_failure() {
        let c = corpus(40, 7);
        let t = build_tree(&c, 15, 0).unwrap();
        let rep = eval_retrieval(&t, &c, &Uniform, &[], 10, Method::BestFirst).unwrap();
        assert!(rep.rows.is_empty() && rep.failure.is_none());
        assert_eq!(rep.summary.mean_ir_calls, None);

        let targets: Vec<EvalTarget> = ["d1", "d2"]
            .iter()
            .map(|id| EvalTarget { target_id: id.to_string(), query: QueryContext::default() })
            .collect();
        let rep = eval_retrieval(&t, &c, &Failing, &targets, 10, Method::BestFirst).unwrap();
        assert!(rep.rows.is_empty());
        assert_eq!(rep.failure.as_ref().unwrap().0, "d1");
        let mut buf = Vec::new();
        write_eval_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "target_id,ir_calls_to_target,proposed_rank,budget_exhausted\nd1,,,router_failure\n");

        let bad = vec![EvalTarget { target_id: "zz".into(), query: QueryContext::default() }];
        assert!(matches!(
            eval_retrieval(&t, &c, &Uniform, &bad, 10, Method::BestFirst),
            Err(SearchError::UnknownTarget(_))
        ));
    }

    #[test]
    fn summary_statistics() {
        let row = |c: Option<usize>, r: Option<usize>| EvalRow {
            target_id: String::new(),
            ir_calls_to_target: c,
            proposed_rank: r,
            budget_exhausted: c.is_none(),
        };
        let s = summarize(&[row(Some(3), Some(1)), row(Some(5), Some(4)), row(None, None), row(Some(10), Some(2))]);
        assert_eq!(s.targets, 4);
        assert_eq!(s.found, 3);
        assert_eq!(s.mean_ir_calls, Some(6.0));
        assert_eq!(s.median_ir_calls, Some(5.0));
        assert_eq!(s.median_rank, Some(2.0));
    }

    #[test]
    fn constant_path_scores_p() {
        for p in [0.01, 0.3, 0.5, 0.999, 1.0] {
            let mut s = PathState::root(0);
            for _ in 0..10 {
                s = s.extend(Item::Node(0), p);
                assert!((s.score() - p).abs() < 1e-12);
            }
        }
        assert_eq!(geometric_mean_score(&[]), 1.0);
        assert_eq!(geometric_mean_score(&[0.25, 1.0]), 0.5);
    }

    proptest! {
        #[test]
        fn score_moves_toward_appended_probability(
            probs in prop::collection::vec(0.01f64..1.0, 1..8),
            p in 0.01f64..1.0,
        ) {
            let mut s = PathState::root(0);
            for &q in &probs {
                s = s.extend(Item::Node(0), q);
            }
            let before = s.score();
            let after = s.extend(Item::Node(0), p).score();
            if p < before * (1.0 - 1e-9) {
                prop_assert!(after < before);
            } else if p > before * (1.0 + 1e-9) {
                prop_assert!(after > before);
            }
        }

        #[test]
        fn score_is_order_invariant(probs in prop::collection::vec(0.001f64..1.0, 1..10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = probs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((geometric_mean_score(&probs) - geometric_mean_score(&shuffled)).abs() < 1e-12);
        }
    }
}
