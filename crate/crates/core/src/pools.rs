//! Candidate pools for the retrieval task and similarity tiers for composition.
//!
//! A pool holds one positive and `pool_size - 1` negatives. Easy negatives are random
//! documents published no later than the source; hard negatives come from three miners
//! (keyword overlap with the background, keyword overlap with the positive, embedding
//! neighbours of the positive), taken round-robin. Candidate order is shuffled so the
//! positive's slot is uniform.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine_or_zero, Corpus, DocSource, QueryContext, YearMonth};
use crate::util::{stream_rng, Fnv64};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pools: positive {0:?} is not in the corpus")]
    MissingPositive(String),
    #[error("pools: {available} eligible negatives, need {needed}")]
    InsufficientNegatives { available: usize, needed: usize },
    #[error("pools: {available} hard candidates, need {needed}")]
    InsufficientHard { available: usize, needed: usize },
    #[error("pools: decoy pools need a donor sample distinct from {0:?}")]
    NoDonor(String),
    #[error("pools: invalid configuration: {0}")]
    Config(String),
    #[error("pools: no passing tier to choose from")]
    NoTier,
    #[error("pools: invalid pool {pool_id:?}: {reason}")]
    Invalid { pool_id: String, reason: String },
    #[error("pools: malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("pools: I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub pool_size: usize,
    /// Hard negatives per standard pool; the rest are easy.
    pub n_hard: usize,
    pub keyword_min_overlap: usize,
    /// How many embedding neighbours of the positive count as hard candidates.
    pub embed_candidates: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            pool_size: 15,
            n_hard: 5,
            keyword_min_overlap: 3,
            embed_candidates: 10,
            seed: 0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), PoolError> {
        if self.pool_size < 2 {
            return Err(PoolError::Config("pool_size must be at least 2".into()));
        }
        if self.n_hard >= self.pool_size {
            return Err(PoolError::Config("n_hard must leave room for the positive".into()));
        }
        Ok(())
    }

    fn negatives(&self) -> usize {
        self.pool_size - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Positive,
    EasyRandom,
    HardKwBackground,
    HardKwInspiration,
    HardEmbed,
    Decoy,
}

impl Provenance {
    pub fn is_hard(self) -> bool {
        matches!(self, Provenance::HardKwBackground | Provenance::HardKwInspiration | Provenance::HardEmbed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Standard,
    AllRandom,
    AllHard,
    DecoyCluster,
}

impl std::str::FromStr for PoolKind {
    type Err = PoolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(PoolKind::Standard),
            "all_random" => Ok(PoolKind::AllRandom),
            "all_hard" => Ok(PoolKind::AllHard),
            "decoy_cluster" => Ok(PoolKind::DecoyCluster),
            other => Err(PoolError::Config(format!("unknown pool kind {other:?}"))),
        }
    }
}

/// One retrieval sample: the query and its ground-truth inspiration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRequest {
    pub pool_id: String,
    pub positive_id: String,
    pub source_date: YearMonth,
    #[serde(flatten)]
    pub query: QueryContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub pool_id: String,
    pub query: QueryContext,
    pub candidates: Vec<String>,
    pub positive_index: usize,
    pub provenance: Vec<Provenance>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

/// What an external scorer sees: no answer, no provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub pool_id: String,
    pub query: QueryContext,
    pub candidates: Vec<PoolCandidate>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub pool_id: String,
    pub positive_id: String,
    pub positive_index: usize,
    pub provenance: Vec<Provenance>,
}

impl CandidatePool {
    pub fn record(&self, corpus: &Corpus) -> PoolRecord {
        PoolRecord {
            pool_id: self.pool_id.clone(),
            query: self.query.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|id| {
                    let d = corpus.get(id).expect("pool candidates come from the corpus");
                    PoolCandidate {
                        id: d.id.clone(),
                        title: d.title.clone(),
                        abstract_text: d.abstract_text.clone(),
                    }
                })
                .collect(),
            seed: self.seed,
        }
    }

    pub fn answer_key(&self) -> AnswerKey {
        AnswerKey {
            pool_id: self.pool_id.clone(),
            positive_id: self.candidates[self.positive_index].clone(),
            positive_index: self.positive_index,
            provenance: self.provenance.clone(),
        }
    }

    /// Checks every pool invariant against the corpus and the source date.
    pub fn validate(&self, corpus: &Corpus, source_date: YearMonth, pool_size: usize) -> Result<(), PoolError> {
        let fail = |reason: String| {
            Err(PoolError::Invalid {
                pool_id: self.pool_id.clone(),
                reason,
            })
        };
        if self.candidates.len() != pool_size || self.provenance.len() != pool_size {
            return fail(format!("{} candidates, expected {pool_size}", self.candidates.len()));
        }
        let positives: Vec<usize> = (0..pool_size).filter(|&i| self.provenance[i] == Provenance::Positive).collect();
        if positives != [self.positive_index] {
            return fail(format!("positive tags at {positives:?}, positive_index {}", self.positive_index));
        }
        let unique: HashSet<&String> = self.candidates.iter().collect();
        if unique.len() != pool_size {
            return fail("duplicate candidate".into());
        }
        for (i, id) in self.candidates.iter().enumerate() {
            let Some(doc) = corpus.get(id) else {
                return fail(format!("candidate {id:?} not in corpus"));
            };
            if i != self.positive_index && doc.date > source_date {
                return fail(format!("negative {id:?} dated {} after {source_date}", doc.date));
            }
        }
        Ok(())
    }
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "however", "i", "if", "in", "into", "is", "it", "its", "itself",
    "just", "may", "me", "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those", "through",
    "thus", "to", "too", "under", "until", "up", "upon", "us", "using", "very", "via", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "within", "without", "would", "you",
    "your",
];

/// Lowercased alphanumeric tokens with stop-words removed.
pub fn content_tokens(text: &str) -> HashSet<String> {
    text.split(|ch: char| !ch.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOP_WORDS.contains(&t.as_str()))
        .collect()
}

/// True iff the texts share at least `m` content tokens.
pub fn keyword_overlap(a: &str, b: &str, m: usize) -> bool {
    let ta = content_tokens(a);
    let tb = content_tokens(b);
    ta.intersection(&tb).count() >= m
}

fn overlap_count(a: &HashSet<String>, b: &HashSet<String>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|t| large.contains(*t)).count()
}

/// Hard-negative candidates for one sample, each list best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardLists {
    pub kw_background: Vec<usize>,
    pub kw_inspiration: Vec<usize>,
    pub embed: Vec<usize>,
}

impl HardLists {
    pub fn distinct(&self) -> usize {
        self.kw_background
            .iter()
            .chain(&self.kw_inspiration)
            .chain(&self.embed)
            .collect::<HashSet<_>>()
            .len()
    }

    fn categories(&self) -> [(&[usize], Provenance); 3] {
        [
            (&self.kw_background, Provenance::HardKwBackground),
            (&self.kw_inspiration, Provenance::HardKwInspiration),
            (&self.embed, Provenance::HardEmbed),
        ]
    }

    /// Takes up to `n` documents round-robin over the categories, skipping `exclude`.
    fn round_robin(&self, n: usize, exclude: &HashSet<usize>) -> Vec<(usize, Provenance)> {
        let cats = self.categories();
        let mut cursors = [0usize; 3];
        let mut taken: HashSet<usize> = HashSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut progressed = false;
            for (ci, (list, tag)) in cats.iter().enumerate() {
                if out.len() == n {
                    break;
                }
                while cursors[ci] < list.len() {
                    let d = list[cursors[ci]];
                    cursors[ci] += 1;
                    if !exclude.contains(&d) && taken.insert(d) {
                        out.push((d, *tag));
                        progressed = true;
                        break;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        out
    }
}

/// Builds pools over one corpus; token sets are computed once.
pub struct PoolBuilder<'a> {
    corpus: &'a Corpus,
    tokens: Vec<HashSet<String>>,
    cfg: PoolConfig,
}

impl<'a> PoolBuilder<'a> {
    pub fn new(corpus: &'a Corpus, cfg: PoolConfig) -> Result<Self, PoolError> {
        cfg.validate()?;
        let tokens = corpus
            .docs()
            .iter()
            .map(|d| content_tokens(&format!("{} {}", d.title, d.abstract_text)))
            .collect();
        Ok(PoolBuilder { corpus, tokens, cfg })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    fn positive(&self, req: &PoolRequest) -> Result<usize, PoolError> {
        DocSource::position(self.corpus, &req.positive_id)
            .ok_or_else(|| PoolError::MissingPositive(req.positive_id.clone()))
    }

    /// Negatives allowed for a sample: dated no later than the source, not the positive.
    pub fn eligible(&self, positive: usize, source_date: YearMonth) -> Vec<usize> {
        (0..self.corpus.len())
            .filter(|&i| i != positive && self.corpus.doc(i).date <= source_date)
            .collect()
    }

    /// Mines the three hard-negative lists of `req` among `eligible`.
    pub fn mine_hard(&self, req: &PoolRequest, positive: usize, eligible: &[usize]) -> HardLists {
        let m = self.cfg.keyword_min_overlap;
        let by_overlap = |probe: &HashSet<String>| {
            let mut scored: Vec<(usize, usize)> = eligible
                .iter()
                .map(|&d| (overlap_count(probe, &self.tokens[d]), d))
                .filter(|&(o, _)| o >= m && o > 0)
                .collect();
            scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().map(|(_, d)| d).collect::<Vec<_>>()
        };
        let background = content_tokens(&req.query.background);
        let kw_background = by_overlap(&background);
        let kw_inspiration = by_overlap(&self.tokens[positive]);

        let anchor = &self.corpus.doc(positive).embedding;
        let mut sims: Vec<(f64, usize)> = eligible
            .iter()
            .map(|&d| (cosine_or_zero(anchor, &self.corpus.doc(d).embedding), d))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        sims.truncate(self.cfg.embed_candidates);
        HardLists {
            kw_background,
            kw_inspiration,
            embed: sims.into_iter().map(|(_, d)| d).collect(),
        }
    }

    fn rng(&self, req: &PoolRequest) -> rand_chacha::ChaCha8Rng {
        let mut h = Fnv64::new();
        h.write(req.pool_id.as_bytes());
        stream_rng(self.cfg.seed, h.finish())
    }

    /// Standard pool: `n_hard` hard negatives round-robin, the rest easy.
    pub fn build_pool(&self, req: &PoolRequest) -> Result<CandidatePool, PoolError> {
        self.build(req, PoolKind::Standard, None)
    }

    pub fn build_ablation_pool(
        &self,
        kind: PoolKind,
        req: &PoolRequest,
        donor: Option<&PoolRequest>,
    ) -> Result<CandidatePool, PoolError> {
        self.build(req, kind, donor)
    }

    fn build(&self, req: &PoolRequest, kind: PoolKind, donor: Option<&PoolRequest>) -> Result<CandidatePool, PoolError> {
        let positive = self.positive(req)?;
        let eligible = self.eligible(positive, req.source_date);
        let needed = self.cfg.negatives();
        if eligible.len() < needed {
            return Err(PoolError::InsufficientNegatives {
                available: eligible.len(),
                needed,
            });
        }
        let mut rng = self.rng(req);
        let none = HashSet::new();
        let (chosen, excluded): (Vec<(usize, Provenance)>, HashSet<usize>) = match kind {
            PoolKind::AllRandom => (Vec::new(), none),
            PoolKind::Standard => (self.mine_hard(req, positive, &eligible).round_robin(self.cfg.n_hard, &none), none),
            PoolKind::AllHard => {
                let lists = self.mine_hard(req, positive, &eligible);
                let hard = lists.round_robin(needed, &none);
                if hard.len() < needed {
                    return Err(PoolError::InsufficientHard {
                        available: lists.distinct(),
                        needed,
                    });
                }
                (hard, none)
            }
            PoolKind::DecoyCluster => {
                let donor = donor
                    .filter(|d| d.pool_id != req.pool_id && d.positive_id != req.positive_id)
                    .ok_or_else(|| PoolError::NoDonor(req.pool_id.clone()))?;
                let donor_pos = self.positive(donor)?;
                // The current sample's own hard negatives stay out of the pool entirely.
                let own: HashSet<usize> = self
                    .mine_hard(req, positive, &eligible)
                    .round_robin(self.cfg.n_hard, &none)
                    .into_iter()
                    .map(|(d, _)| d)
                    .collect();
                let donor_lists = self.mine_hard(donor, donor_pos, &eligible);
                let decoys: Vec<(usize, Provenance)> = donor_lists
                    .round_robin(self.cfg.n_hard, &own)
                    .into_iter()
                    .map(|(d, _)| (d, Provenance::Decoy))
                    .collect();
                if decoys.len() < self.cfg.n_hard {
                    return Err(PoolError::InsufficientHard {
                        available: decoys.len(),
                        needed: self.cfg.n_hard,
                    });
                }
                (decoys, own)
            }
        };

        let taken: HashSet<usize> = chosen.iter().map(|&(d, _)| d).collect();
        let easy_pool: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|d| !taken.contains(d) && !excluded.contains(d))
            .collect();
        let n_easy = needed - chosen.len();
        if easy_pool.len() < n_easy {
            return Err(PoolError::InsufficientNegatives {
                available: easy_pool.len() + chosen.len(),
                needed,
            });
        }
        let mut members: Vec<(usize, Provenance)> = vec![(positive, Provenance::Positive)];
        members.extend(chosen);
        members.extend(
            index::sample(&mut rng, easy_pool.len(), n_easy)
                .into_iter()
                .map(|i| (easy_pool[i], Provenance::EasyRandom)),
        );
        members.shuffle(&mut rng);
        let positive_index = members.iter().position(|&(_, p)| p == Provenance::Positive).unwrap();
        Ok(CandidatePool {
            pool_id: req.pool_id.clone(),
            query: req.query.clone(),
            candidates: members.iter().map(|&(d, _)| self.corpus.doc(d).id.clone()).collect(),
            positive_index,
            provenance: members.iter().map(|&(_, p)| p).collect(),
            seed: self.cfg.seed,
        })
    }
}

/// Accuracy of a uniform random guesser over the pools.
pub fn random_guess_accuracy(pools: &[CandidatePool], seed: u64) -> f64 {
    if pools.is_empty() {
        return 0.0;
    }
    let mut rng = stream_rng(seed, 0x9e55);
    let hits = pools
        .iter()
        .filter(|p| rng.gen_range(0..p.candidates.len()) == p.positive_index)
        .count();
    hits as f64 / pools.len() as f64
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, PoolError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PoolError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Easy => "Easy",
            Tier::Medium => "Medium",
            Tier::Hard => "Hard",
        })
    }
}

/// Easy `[0.94, 0.97)`, Medium `[0.92, 0.94)`, Hard `[0.90, 0.92)`, otherwise none.
pub fn tier(sim: f64) -> Option<Tier> {
    if (0.94..0.97).contains(&sim) {
        Some(Tier::Easy)
    } else if (0.92..0.94).contains(&sim) {
        Some(Tier::Medium)
    } else if (0.90..0.92).contains(&sim) {
        Some(Tier::Hard)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierAssignment {
    pub doc_id: String,
    pub similarity: f64,
    pub tier: Option<Tier>,
}

pub fn assign_tiers(sims: &[(String, f64)]) -> Vec<TierAssignment> {
    sims.iter()
        .map(|(id, s)| TierAssignment {
            doc_id: id.clone(),
            similarity: *s,
            tier: tier(*s),
        })
        .collect()
}

/// Highest-similarity member of each tier; earlier entries win ties.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TierRepresentatives {
    pub easy: Option<(String, f64)>,
    pub medium: Option<(String, f64)>,
    pub hard: Option<(String, f64)>,
}

impl TierRepresentatives {
    pub fn get(&self, t: Tier) -> Option<&(String, f64)> {
        match t {
            Tier::Easy => self.easy.as_ref(),
            Tier::Medium => self.medium.as_ref(),
            Tier::Hard => self.hard.as_ref(),
        }
    }
}

pub fn stratify_tiers(sims: &[(String, f64)]) -> TierRepresentatives {
    let mut reps = TierRepresentatives::default();
    for (id, s) in sims {
        let slot = match tier(*s) {
            Some(Tier::Easy) => &mut reps.easy,
            Some(Tier::Medium) => &mut reps.medium,
            Some(Tier::Hard) => &mut reps.hard,
            None => continue,
        };
        if slot.as_ref().is_none_or(|(_, best)| s > best) {
            *slot = Some((id.clone(), *s));
        }
    }
    reps
}

/// The most difficult passing tier: Hard, then Medium, then Easy.
pub fn select_training_tier(passing: &[Tier]) -> Result<Tier, PoolError> {
    passing.iter().copied().max().ok_or(PoolError::NoTier)
}
