//! Balanced hierarchical k-means tree.
//!
//! The tree is built bottom-up. Each round clusters the current level's
//! representative vectors into `ceil(n / c)` groups with spherical k-means, then
//! enforces the capacity `c` by evicting each over-full cluster's least similar member
//! to the nearest cluster that still has room. The resulting centroids become the
//! points of the next round, until one root remains.
//!
//! Every representative vector is ℓ2-normalised before use: a document contributes its
//! normalised embedding, an internal node its normalised centroid. A node's stored
//! centroid is the unweighted mean of its children's normalised representatives.
//!
//! Node ids are dense: level-1 nodes first, then level 2, and so on; the root is last.
//! Level-1 nodes list document positions as children, higher levels list node ids.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{dot, norm, Corpus, DocSource};
use crate::util::{ceil_div, stream_rng};

pub const TREE_FORMAT: &str = "hiersearch-tree";
pub const TREE_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITERS: usize = 50;
/// Convergence threshold on the largest centroid shift, in cosine distance.
pub const CONVERGENCE_TOL: f64 = 1e-6;

// Below this many point-centroid pairs the assignment step stays on one thread.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index: k = 0")]
    ZeroK,
    #[error("index: k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("index: points have inconsistent dimensions ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("index: branching factor must be at least 2, got {0}")]
    Branching(usize),
    #[error("index: {clusters} clusters of capacity {capacity} cannot hold {members} members")]
    Infeasible {
        clusters: usize,
        capacity: usize,
        members: usize,
    },
    #[error("index: I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index: tree file parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("index: not a tree file (format {0:?})")]
    Format(String),
    #[error("index: tree file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("index: tree was built for corpus {tree} but the corpus fingerprint is {corpus}")]
    Fingerprint { tree: String, corpus: String },
    #[error("index: invalid tree: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Row-major matrix of unit vectors.
struct UnitRows {
    data: Vec<f64>,
    dim: usize,
}

impl UnitRows {
    fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self, IndexError> {
        let dim = points.first().map_or(0, |p| p.as_ref().len());
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(IndexError::Dimension(dim, p.len()));
            }
            extend_unit(&mut data, p);
        }
        Ok(UnitRows { data, dim })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }
}

fn extend_unit(out: &mut Vec<f64>, v: &[f64]) {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        out.extend(v.iter().map(|x| x / n));
    } else {
        out.extend(std::iter::repeat_n(0.0, v.len()));
    }
}

pub(crate) fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    extend_unit(&mut out, v);
    out
}

fn mean_of(rows: &UnitRows, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; rows.dim];
    for &m in members {
        for (a, b) in c.iter_mut().zip(rows.row(m)) {
            *a += b;
        }
    }
    let inv = 1.0 / members.len().max(1) as f64;
    c.iter_mut().for_each(|a| *a *= inv);
    c
}

/// Nearest unit centroid by dot product; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &UnitRows) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..centroids.len() {
        let s = dot(point, centroids.row(j));
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Spherical k-means: cosine assignment, mean-of-unit-vectors centroids.
///
/// Seeding picks each new seed with probability proportional to the squared cosine
/// distance to the nearest seed already chosen. A cluster left empty by an assignment
/// step is re-seeded with the point furthest from its own centroid (taken only from
/// clusters that keep at least one member).
pub fn kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeans, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if k > points.len() {
        return Err(IndexError::KTooLarge { k, n: points.len() });
    }
    let rows = UnitRows::from_points(points)?;
    let n = points.len();
    let mut rng = stream_rng(seed, 0x6b6d);

    let mut centroids = seed_centroids(&rows, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut means;
    loop {
        iterations += 1;
        let next: Vec<(usize, f64)> = if n * k >= PAR_THRESHOLD {
            (0..n).into_par_iter().map(|i| nearest(rows.row(i), &centroids)).collect()
        } else {
            (0..n).map(|i| nearest(rows.row(i), &centroids)).collect()
        };
        let changed = next.iter().zip(&assignments).any(|(a, b)| a.0 != *b);
        for (slot, (j, _)) in assignments.iter_mut().zip(&next) {
            *slot = *j;
        }
        let mut sims: Vec<f64> = next.into_iter().map(|(_, s)| s).collect();
        reseed_empty(&rows, &mut assignments, &mut sims, k);

        let members = group(&assignments, k);
        means = members.iter().map(|m| mean_of(&rows, m)).collect::<Vec<_>>();
        let mut data = Vec::with_capacity(k * rows.dim);
        for m in &means {
            extend_unit(&mut data, m);
        }
        let updated = UnitRows { data, dim: rows.dim };
        let shift = (0..k)
            .map(|j| 1.0 - dot(centroids.row(j), updated.row(j)))
            .fold(0.0, f64::max);
        centroids = updated;
        if !changed || shift < CONVERGENCE_TOL || iterations >= max_iters.max(1) {
            break;
        }
    }
    Ok(KMeans {
        assignments,
        centroids: means,
        iterations,
    })
}

fn seed_centroids(rows: &UnitRows, k: usize, rng: &mut impl Rng) -> UnitRows {
    let n = rows.len();
    let mut chosen = Vec::with_capacity(k);
    let mut is_chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    is_chosen[first] = true;
    // Squared cosine distance to the nearest chosen seed.
    let mut d2: Vec<f64> = (0..n)
        .map(|i| {
            let d = 1.0 - dot(rows.row(i), rows.row(first));
            d * d
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !is_chosen[*i]).map(|(_, d)| d).sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !is_chosen[i]) {
                pick = Some(i);
                r -= d2[i];
                if r < 0.0 {
                    break;
                }
            }
            pick.expect("an unchosen point exists while fewer than k <= n seeds are chosen")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !is_chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(pick);
        is_chosen[pick] = true;
        for (i, best) in d2.iter_mut().enumerate() {
            let d = 1.0 - dot(rows.row(i), rows.row(pick));
            *best = best.min(d * d);
        }
    }
    let mut data = Vec::with_capacity(k * rows.dim);
    for &c in &chosen {
        data.extend_from_slice(rows.row(c));
    }
    UnitRows { data, dim: rows.dim }
}

fn reseed_empty(rows: &UnitRows, assignments: &mut [usize], sims: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        // Furthest point (lowest similarity to its centroid) among clusters that can spare one.
        let donor = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)))
            .expect("k <= n guarantees a cluster with a spare member");
        sizes[assignments[donor]] -= 1;
        assignments[donor] = empty;
        sizes[empty] = 1;
        // It is now its own centroid.
        sims[donor] = dot(rows.row(donor), rows.row(donor));
    }
}

fn group(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    members
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    /// Indices into the point set, ascending.
    pub members: Vec<usize>,
}

/// One capacity-enforcing eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub member: usize,
    pub from: usize,
    pub to: usize,
}

/// Enforces `|members| <= capacity` on every cluster.
///
/// While some cluster is over capacity, the largest one (lowest index on ties) evicts
/// the member least similar to its centroid (lowest point index on ties), which moves to
/// the most similar centroid among clusters with fewer than `capacity` members. Centroids
/// are held fixed while moving and recomputed from final membership afterwards.
pub fn balance_level<P: AsRef<[f64]>>(
    points: &[P],
    clusters: &[Cluster],
    capacity: usize,
) -> Result<(Vec<Cluster>, Vec<Move>), IndexError> {
    let total: usize = clusters.iter().map(|c| c.members.len()).sum();
    if clusters.len() * capacity < total {
        return Err(IndexError::Infeasible {
            clusters: clusters.len(),
            capacity,
            members: total,
        });
    }
    let rows = UnitRows::from_points(points)?;
    let mut cents = Vec::with_capacity(clusters.len() * rows.dim);
    for c in clusters {
        if c.centroid.len() != rows.dim {
            return Err(IndexError::Dimension(rows.dim, c.centroid.len()));
        }
        extend_unit(&mut cents, &c.centroid);
    }
    let cents = UnitRows { data: cents, dim: rows.dim };
    let mut members: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
    let mut moves = Vec::new();

    loop {
        let over = (0..members.len())
            .filter(|&j| members[j].len() > capacity)
            .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)));
        let Some(from) = over else { break };
        let (slot, &member) = members[from]
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                let sa = dot(rows.row(a), cents.row(from));
                let sb = dot(rows.row(b), cents.row(from));
                sa.total_cmp(&sb).then(a.cmp(&b))
            })
            .expect("over-capacity cluster is non-empty");
        let to = (0..members.len())
            .filter(|&j| members[j].len() < capacity)
            .max_by(|&a, &b| {
                let sa = dot(rows.row(member), cents.row(a));
                let sb = dot(rows.row(member), cents.row(b));
                sa.total_cmp(&sb).then(b.cmp(&a))
            })
            .expect("feasibility guarantees a cluster with room");
        members[from].remove(slot);
        members[to].push(member);
        moves.push(Move { member, from, to });
    }

    let out = members
        .into_iter()
        .map(|mut m| {
            m.sort_unstable();
            Cluster {
                centroid: mean_of(&rows, &m),
                members: m,
            }
        })
        .collect();
    Ok((out, moves))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: usize,
    /// 1 for nodes whose children are documents.
    pub level: usize,
    pub centroid: Vec<f64>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub branching: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl BuildOptions {
    pub fn new(branching: usize, seed: u64) -> Self {
        BuildOptions {
            branching,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// The finished, immutable search tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
    root_id: usize,
    branching: usize,
    depth: usize,
    n_docs: usize,
    corpus_fingerprint: String,
    node_parent: Vec<Option<usize>>,
    doc_parent: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format: String,
    version: u32,
    branching: usize,
    depth: usize,
    n_docs: usize,
    corpus_fingerprint: String,
    root_id: usize,
    nodes: Vec<TreeNode>,
}

#[derive(Deserialize)]
struct TreeHeader {
    format: String,
    version: u32,
}

/// Level sizes `n0 = n, n_l = ceil(n_{l-1} / c)` down to 1; always at least one round.
pub fn level_sizes(n: usize, c: usize) -> Vec<usize> {
    let mut sizes = vec![n];
    let mut cur = n;
    loop {
        cur = ceil_div(cur, c);
        sizes.push(cur);
        if cur <= 1 {
            break;
        }
    }
    sizes
}

/// Number of clustering rounds for `n` documents at branching `c`.
pub fn tree_depth(n: usize, c: usize) -> usize {
    level_sizes(n, c).len() - 1
}

pub fn build_tree(corpus: &Corpus, branching: usize, seed: u64) -> Result<SearchTree, IndexError> {
    build_tree_with(corpus, &corpus.fingerprint(), BuildOptions::new(branching, seed))
}

pub fn build_tree_with(
    docs: &dyn DocSource,
    fingerprint: &str,
    opts: BuildOptions,
) -> Result<SearchTree, IndexError> {
    let c = opts.branching;
    if c < 2 {
        return Err(IndexError::Branching(c));
    }
    let n_docs = docs.len();
    if n_docs == 0 {
        return Err(IndexError::Invalid("no documents".into()));
    }
    let mut reps: Vec<Vec<f64>> = (0..n_docs).map(|p| unit_or_zero(docs.vector(p))).collect();
    // Ids of the current level's items: doc positions first, node ids afterwards.
    let mut ids: Vec<usize> = (0..n_docs).collect();
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut level = 1;
    loop {
        let n = reps.len();
        let k = ceil_div(n, c);
        let clusters = if k == 1 {
            let all: Vec<usize> = (0..n).collect();
            vec![Cluster {
                centroid: mean_rows(&reps, &all),
                members: all,
            }]
        } else {
            let km = kmeans(&reps, k, opts.seed ^ (level as u64).wrapping_mul(0x9e37_79b9), opts.max_iters)?;
            let initial: Vec<Cluster> = group(&km.assignments, k)
                .into_iter()
                .zip(km.centroids)
                .map(|(members, centroid)| Cluster { centroid, members })
                .collect();
            balance_level(&reps, &initial, c)?.0
        };
        let mut next_reps = Vec::with_capacity(k);
        let mut next_ids = Vec::with_capacity(k);
        for cl in clusters {
            let node_id = nodes.len();
            next_reps.push(unit_or_zero(&cl.centroid));
            next_ids.push(node_id);
            nodes.push(TreeNode {
                node_id,
                level,
                centroid: cl.centroid,
                children: cl.members.iter().map(|&m| ids[m]).collect(),
            });
        }
        if k == 1 {
            break;
        }
        reps = next_reps;
        ids = next_ids;
        level += 1;
    }
    let root_id = nodes.len() - 1;
    SearchTree::from_parts(nodes, root_id, c, level, n_docs, fingerprint.to_string())
}

fn mean_rows(rows: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut c = vec![0.0; dim];
    for &m in members {
        for (a, b) in c.iter_mut().zip(&rows[m]) {
            *a += b;
        }
    }
    let inv = 1.0 / members.len().max(1) as f64;
    c.iter_mut().for_each(|a| *a *= inv);
    c
}

impl SearchTree {
    /// Assembles a tree and checks every structural invariant.
    pub fn from_parts(
        nodes: Vec<TreeNode>,
        root_id: usize,
        branching: usize,
        depth: usize,
        n_docs: usize,
        corpus_fingerprint: String,
    ) -> Result<Self, IndexError> {
        let invalid = |m: String| IndexError::Invalid(m);
        if branching < 2 {
            return Err(IndexError::Branching(branching));
        }
        let mut node_parent = vec![None; nodes.len()];
        let mut doc_parent = vec![usize::MAX; n_docs];
        let mut per_level = vec![0usize; depth + 1];
        let dim = nodes.first().map_or(0, |n| n.centroid.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.node_id != i {
                return Err(invalid(format!("node at slot {i} has id {}", node.node_id)));
            }
            if node.level == 0 || node.level > depth {
                return Err(invalid(format!("node {i} has level {} outside 1..={depth}", node.level)));
            }
            per_level[node.level] += 1;
            if node.children.is_empty() || node.children.len() > branching {
                return Err(invalid(format!(
                    "node {i} has {} children (capacity {branching})",
                    node.children.len()
                )));
            }
            if node.centroid.len() != dim || node.centroid.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("node {i} has a malformed centroid")));
            }
            for &ch in &node.children {
                if node.level == 1 {
                    let slot = doc_parent
                        .get_mut(ch)
                        .ok_or_else(|| invalid(format!("node {i} references document {ch} >= {n_docs}")))?;
                    if *slot != usize::MAX {
                        return Err(invalid(format!("document {ch} appears under nodes {} and {i}", *slot)));
                    }
                    *slot = i;
                } else {
                    let child = nodes
                        .get(ch)
                        .ok_or_else(|| invalid(format!("node {i} references missing node {ch}")))?;
                    if child.level + 1 != node.level {
                        return Err(invalid(format!("node {i} at level {} has child {ch} at level {}", node.level, child.level)));
                    }
                    if let Some(p) = node_parent[ch] {
                        return Err(invalid(format!("node {ch} has parents {p} and {i}")));
                    }
                    node_parent[ch] = Some(i);
                }
            }
        }
        if let Some(d) = doc_parent.iter().position(|&p| p == usize::MAX) {
            return Err(invalid(format!("document {d} is not under any level-1 node")));
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| node_parent[i].is_none()).collect();
        if roots != [root_id] {
            return Err(invalid(format!("expected single root {root_id}, found roots {roots:?}")));
        }
        if nodes[root_id].level != depth {
            return Err(invalid(format!("root level {} != depth {depth}", nodes[root_id].level)));
        }
        let expected = level_sizes(n_docs, branching);
        if expected.len() != depth + 1 || per_level[1..] != expected[1..] {
            return Err(invalid(format!(
                "level sizes {:?} do not follow ceil-division {:?}",
                [&[n_docs][..], &per_level[1..]].concat(),
                expected
            )));
        }
        Ok(SearchTree {
            nodes,
            root_id,
            branching,
            depth,
            n_docs,
            corpus_fingerprint,
            node_parent,
            doc_parent,
        })
    }

    /// A balanced tree over `n` items without embeddings: consecutive items share a parent.
    pub fn synthetic(n: usize, c: usize) -> Result<Self, IndexError> {
        if c < 2 {
            return Err(IndexError::Branching(c));
        }
        if n == 0 {
            return Err(IndexError::Invalid("no documents".into()));
        }
        let mut nodes = Vec::new();
        let mut below: Vec<usize> = (0..n).collect();
        let mut level = 0;
        loop {
            level += 1;
            let mut ids = Vec::new();
            for chunk in below.chunks(c) {
                let node_id = nodes.len();
                ids.push(node_id);
                nodes.push(TreeNode {
                    node_id,
                    level,
                    centroid: Vec::new(),
                    children: chunk.to_vec(),
                });
            }
            if ids.len() == 1 {
                break;
            }
            below = ids;
        }
        let root = nodes.len() - 1;
        SearchTree::from_parts(nodes, root, c, level, n, format!("synthetic:{n}"))
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root_id(&self) -> usize {
        self.root_id
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    pub fn parent_of_node(&self, id: usize) -> Option<usize> {
        self.node_parent[id]
    }

    pub fn parent_of_doc(&self, pos: usize) -> usize {
        self.doc_parent[pos]
    }

    /// `[n_docs, n_1, ..., 1]`.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.depth + 1];
        sizes[0] = self.n_docs;
        for n in &self.nodes {
            sizes[n.level] += 1;
        }
        sizes
    }

    /// Node ids on the path from the document's level-1 parent up to the root.
    pub fn ancestors_of_doc(&self, pos: usize) -> Vec<usize> {
        let mut out = vec![self.doc_parent[pos]];
        while let Some(p) = self.node_parent[*out.last().unwrap()] {
            out.push(p);
        }
        out
    }

    /// Documents under `node`, in child order.
    pub fn docs_under(&self, node: usize) -> Vec<usize> {
        let n = &self.nodes[node];
        if n.level == 1 {
            n.children.clone()
        } else {
            n.children.iter().flat_map(|&c| self.docs_under(c)).collect()
        }
    }

    /// The leftmost document under `node`.
    pub fn first_doc(&self, mut node: usize) -> usize {
        loop {
            let n = &self.nodes[node];
            if n.level == 1 {
                return n.children[0];
            }
            node = n.children[0];
        }
    }

    /// Largest deviation of any stored centroid from the mean of its children's
    /// normalised representatives.
    pub fn centroid_error(&self, docs: &dyn DocSource) -> f64 {
        let mut worst: f64 = 0.0;
        for node in &self.nodes {
            let reps: Vec<Vec<f64>> = node
                .children
                .iter()
                .map(|&c| {
                    if node.level == 1 {
                        unit_or_zero(docs.vector(c))
                    } else {
                        unit_or_zero(&self.nodes[c].centroid)
                    }
                })
                .collect();
            let all: Vec<usize> = (0..reps.len()).collect();
            let mean = mean_rows(&reps, &all);
            for (a, b) in mean.iter().zip(&node.centroid) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let file = TreeFile {
            format: TREE_FORMAT.to_string(),
            version: TREE_VERSION,
            branching: self.branching,
            depth: self.depth,
            n_docs: self.n_docs,
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            root_id: self.root_id,
            nodes: self.nodes.clone(),
        };
        serde_json::to_vec(&file).expect("tree serialises")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let parse_err = |e: serde_json::Error| IndexError::Parse {
            offset: byte_offset(bytes, e.line(), e.column()),
            message: e.to_string(),
        };
        let header: TreeHeader = serde_json::from_slice(bytes).map_err(parse_err)?;
        if header.format != TREE_FORMAT {
            return Err(IndexError::Format(header.format));
        }
        if header.version != TREE_VERSION {
            return Err(IndexError::Version {
                found: header.version,
                expected: TREE_VERSION,
            });
        }
        let f: TreeFile = serde_json::from_slice(bytes).map_err(parse_err)?;
        SearchTree::from_parts(f.nodes, f.root_id, f.branching, f.depth, f.n_docs, f.corpus_fingerprint)
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

pub fn save_tree(tree: &SearchTree, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    fs::write(path, tree.to_bytes()).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a tree; when `corpus` is given, its fingerprint must match the tree's.
pub fn load_tree(path: impl AsRef<Path>, corpus: Option<&Corpus>) -> Result<SearchTree, IndexError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let tree = SearchTree::from_bytes(&bytes)?;
    if let Some(c) = corpus {
        let fp = c.fingerprint();
        if fp != tree.corpus_fingerprint {
            return Err(IndexError::Fingerprint {
                tree: tree.corpus_fingerprint,
                corpus: fp,
            });
        }
    }
    Ok(tree)
}
