//! Hierarchical semantic retrieval over an embedded literature corpus.
//!
//! The crate is organised the way a retrieval run flows:
//!
//! * [`corpus`] loads documents and their embeddings and provides the cosine primitives.
//! * [`index`] builds the balanced hierarchical k-means tree offline.
//! * [`router`] turns a query and a node's children into a probability distribution.
//! * [`search`] walks the tree best-first (geometric-mean path score) or runs the
//!   exhaustive tournament baseline.
//! * [`pools`] builds 1-positive/14-negative candidate pools and similarity tiers.
//! * [`simkit`] simulates search cost for brute-force, sequential, hierarchical and
//!   motivation-guided policies on planted synthetic worlds.
//! * [`scoring`] holds the rubric arithmetic (recall to M3 score, pass gate, pairwise
//!   verdicts, joint success tables).

pub mod corpus;
pub mod index;
pub mod pools;
pub mod router;
pub mod scoring;
pub mod search;
pub mod simkit;

mod util;

pub use corpus::{cosine, normalize, Corpus, DocRecord, DocSource, QueryContext, YearMonth};
pub use index::{build_tree, BuildOptions, SearchTree, TreeNode};
pub use router::{Candidate, Router, RouterConfig, RouterDistribution};
pub use search::{best_first_search, tournament_search, PathState, SearchResult};
