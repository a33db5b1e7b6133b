//! `hiersearch`: build the index, run searches and evaluations, build candidate pools,
//! simulate search cost and score rubric judgments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use hiersearch::simkit::Policy;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "hiersearch", version, about = "Hierarchical literature retrieval toolkit")]
pub struct Cli {
    /// Seed threaded through every randomized step (default 0).
    #[arg(long, global = true, env = "HIERSEARCH_SEED")]
    pub seed: Option<u64>,
    /// TOML file with per-command `[table]`s and shared top-level keys.
    #[arg(long, global = true, env = "HIERSEARCH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Caps worker threads (default: all cores).
    #[arg(long, global = true, env = "HIERSEARCH_WORKERS")]
    pub workers: Option<usize>,
    /// Primary output file; a `<out>.manifest.json` is written next to it.
    #[arg(long, global = true, env = "HIERSEARCH_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cluster a corpus into a balanced search tree.
    BuildIndex(BuildIndexArgs),
    /// Best-first search for one query; writes the proposed documents.
    Search(SearchArgs),
    /// Tournament baseline over a target set; writes per-target metrics.
    Tournament(EvalArgs),
    /// Best-first search over a target set; writes per-target metrics.
    Eval(EvalArgs),
    /// Build candidate pools and their answer key.
    MakePools(PoolArgs),
    /// Pick the top candidate of each similarity tier.
    Stratify(StratifyArgs),
    /// Monte-Carlo search-cost simulation over a parameter grid.
    Simulate(SimulateArgs),
    /// Turn coverage judgments into rubric scores, or pairwise judgments into verdicts.
    Score(ScoreArgs),
    /// Joint retrieval and composition success per rank and score threshold.
    JointTable(JointArgs),
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[arg(long, env = "HIERSEARCH_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Maximum children per node.
    #[arg(long, short = 'c', env = "HIERSEARCH_BRANCHING")]
    pub branching: Option<usize>,
    #[arg(long, env = "HIERSEARCH_MAX_ITERS")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterChoice {
    Similarity,
    PlantedOracle,
    External,
}

#[derive(Args, Debug)]
pub struct RouterArgs {
    #[arg(long, value_enum, env = "HIERSEARCH_ROUTER")]
    pub router: Option<RouterChoice>,
    /// Softmax temperature of the similarity router.
    #[arg(long, env = "HIERSEARCH_TEMPERATURE")]
    pub temperature: Option<f64>,
    /// Accuracy of the planted oracle.
    #[arg(long, env = "HIERSEARCH_ALPHA")]
    pub alpha: Option<f64>,
    /// `tcp://HOST:PORT` or `exec:COMMAND` for the external router.
    #[arg(long, env = "HIERSEARCH_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "HIERSEARCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    /// Rescale invalid external replies instead of failing.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long, env = "HIERSEARCH_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "HIERSEARCH_TREE")]
    pub tree: Option<PathBuf>,
    /// JSON query: background, motivation, intermediate_hypothesis, query_embedding.
    #[arg(long, conflicts_with = "query_doc")]
    pub query: Option<PathBuf>,
    /// Use this document's title and embedding as the query.
    #[arg(long)]
    pub query_doc: Option<String>,
    /// Stop once this document is proposed.
    #[arg(long)]
    pub target: Option<String>,
    /// Maximum router calls (default 4 x depth x branching).
    #[arg(long, env = "HIERSEARCH_BUDGET")]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub router: RouterArgs,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("target_set").args(["targets", "pools"])))]
pub struct EvalArgs {
    #[arg(long, env = "HIERSEARCH_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "HIERSEARCH_TREE")]
    pub tree: Option<PathBuf>,
    /// JSONL targets: `{"target_id": ..., "background": ..., "query_embedding": [...]}`.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Pool file; targets come from the matching answer key.
    #[arg(long, requires = "answer_key")]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub answer_key: Option<PathBuf>,
    /// Use the target's own embedding when a query has none.
    #[arg(long)]
    pub embed_from_target: bool,
    #[arg(long, env = "HIERSEARCH_BUDGET")]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub router: RouterArgs,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    #[arg(long, env = "HIERSEARCH_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// JSONL samples: `{"pool_id", "positive_id", "source_date", "background", ...}`.
    #[arg(long)]
    pub requests: Option<PathBuf>,
    /// standard, all_random, all_hard or decoy_cluster (donor: the next sample in the file).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub answer_key: Option<PathBuf>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub n_hard: Option<usize>,
    #[arg(long)]
    pub keyword_min_overlap: Option<usize>,
    #[arg(long)]
    pub embed_candidates: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StratifyArgs {
    /// CSV with `doc_id,similarity` columns.
    #[arg(long)]
    pub sims: Option<PathBuf>,
    /// Tiers whose candidate passed; prints the one to train on.
    #[arg(long, value_delimiter = ',')]
    pub passing: Vec<String>,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: hiersearch::simkit::SimError| e.to_string())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML or JSON grid; overrides the inline axes.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    pub policy: Vec<Policy>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub c: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Call counts for the cumulative success curve.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<usize>,
    /// Curve CSV path (default `<out>.curve.csv`).
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").args(["coverage", "judgments"]).required(true)))]
pub struct ScoreArgs {
    /// JSONL element coverage: `{"sample_id", "dimension", "elements": [{"name", "state"}]}`.
    #[arg(long)]
    pub coverage: Option<PathBuf>,
    /// JSONL pairwise judgments: `{"pair_id", "trial", "order", "outcome"}`.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct JointArgs {
    /// CSV keyed by its first column with a `proposed_rank` column (e.g. eval output).
    #[arg(long)]
    pub ranks: Option<PathBuf>,
    /// CSV from `score --coverage`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub rank_thresholds: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub score_thresholds: Vec<u8>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
