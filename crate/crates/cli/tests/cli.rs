use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

const WORDS: &[&str] = &[
    "protein", "membrane", "autophagy", "lysosomal", "kinase", "signal", "neuron", "catalyst", "lattice", "polymer",
    "graph", "spectral", "quantum", "thermal", "enzyme", "receptor",
];

/// Small deterministic generator so fixtures need no RNG crate.
fn lcg(state: &mut u64) -> u64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    *state >> 33
}

fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let mut s = 7u64;
    let mut text = String::new();
    for i in 0..n {
        let words: Vec<&str> = (0..10).map(|_| WORDS[lcg(&mut s) as usize % WORDS.len()]).collect();
        let emb: Vec<f64> = (0..8).map(|_| (lcg(&mut s) % 2000) as f64 / 1000.0 - 1.0 + 1e-3).collect();
        let doc = json!({
            "id": format!("p{i}"),
            "title": words[..3].join(" "),
            "abstract": words[3..].join(" "),
            "date": format!("2023-{:02}", 1 + i % 12),
            "embedding": emb,
        });
        text.push_str(&doc.to_string());
        text.push('\n');
    }
    let p = dir.join("corpus.jsonl");
    fs::write(&p, text).unwrap();
    p
}

fn write_targets(dir: &Path, ids: &[usize]) -> PathBuf {
    let text: String = ids
        .iter()
        .map(|i| json!({"target_id": format!("p{i}"), "background": format!("query {i}")}).to_string() + "\n")
        .collect();
    let p = dir.join("targets.jsonl");
    fs::write(&p, text).unwrap();
    p
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hiersearch"));
    for (k, _) in std::env::vars() {
        if k.starts_with("HIERSEARCH_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
    tree: PathBuf,
}

fn indexed(n: usize) -> Fixture {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), n);
    let tree = dir.path().join("tree.json");
    let o = run(&["build-index", "--corpus", s(&corpus), "--out", s(&tree)]);
    assert!(o.status.success(), "{}", stderr(&o));
    Fixture { dir, corpus, tree }
}

#[test]
fn build_index_prints_level_chain() {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), 3035);
    let tree = dir.path().join("tree.json");
    let o = run(&["build-index", "--corpus", s(&corpus), "--out", s(&tree), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("3035 → 203 → 14 → 1"), "{}", stdout(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tree.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "build-index");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["branching"], 15);
}

#[test]
fn build_index_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), 20);
    let out = dir.path().join("t.json");
    let o = run(&["build-index", "--corpus", s(&corpus), "--out", s(&out), "-c", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("index:"), "{}", stderr(&o));

    let o = run(&["build-index", "--corpus", "/nonexistent/corpus.jsonl", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("corpus: I/O error"), "{}", stderr(&o));
}

#[test]
fn tournament_and_oracle_summaries() {
    let f = indexed(3035);
    let targets = write_targets(f.dir.path(), &[0, 17, 400, 3034]);
    let out = f.dir.path().join("tour.csv");
    let o = run(&[
        "tournament", "--corpus", s(&f.corpus), "--tree", s(&f.tree), "--targets", s(&targets),
        "--embed-from-target", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean_ir_calls=218.000"), "{}", stdout(&o));

    let out = f.dir.path().join("eval.csv");
    let o = run(&[
        "eval", "--corpus", s(&f.corpus), "--tree", s(&f.tree), "--targets", s(&targets), "--router",
        "planted-oracle", "--alpha", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean_ir_calls=3.000"), "{}", stdout(&o));
    assert!(stdout(&o).contains("mean_rank=1.000"));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "target_id,ir_calls_to_target,proposed_rank,budget_exhausted");
    assert_eq!(csv.lines().nth(1).unwrap(), "p0,3,1,false");
}

#[test]
fn empty_target_file_gives_empty_table() {
    let f = indexed(40);
    let targets = write_targets(f.dir.path(), &[]);
    let out = f.dir.path().join("e.csv");
    let o = run(&["eval", "--corpus", s(&f.corpus), "--tree", s(&f.tree), "--targets", s(&targets), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "target_id,ir_calls_to_target,proposed_rank,budget_exhausted\n");
}

#[test]
fn router_failure_writes_marker_and_fails() {
    let f = indexed(40);
    let targets = write_targets(f.dir.path(), &[1, 2]);
    let out = f.dir.path().join("e.csv");
    let o = run(&[
        "eval", "--corpus", s(&f.corpus), "--tree", s(&f.tree), "--targets", s(&targets), "--router", "external",
        "--endpoint", "exec:exit 0", "--timeout-ms", "2000", "--out", s(&out),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("router:"), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.ends_with("p1,,,router_failure\n"), "{csv}");
}

#[test]
fn search_writes_ranked_proposals() {
    let f = indexed(200);
    let out = f.dir.path().join("s.csv");
    let o = run(&[
        "search", "--corpus", s(&f.corpus), "--tree", s(&f.tree), "--query-doc", "p9", "--target", "p9", "--router",
        "planted-oracle", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ir_calls=2"), "{}", stdout(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("rank,doc_id,score\n1,"));
}

#[test]
fn pools_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), 150);
    let req: String = (0..12)
        .map(|i| {
            json!({"pool_id": format!("s{i}"), "positive_id": format!("p{i}"), "source_date": "2023-12",
                   "background": "lysosomal membrane protein"})
            .to_string()
                + "\n"
        })
        .collect();
    let req_path = dir.path().join("req.jsonl");
    fs::write(&req_path, req).unwrap();
    let mut outputs = Vec::new();
    for (run_id, kind) in [("a", "standard"), ("b", "standard"), ("c", "decoy_cluster")] {
        let out = dir.path().join(format!("{run_id}.jsonl"));
        let o = run(&[
            "make-pools", "--corpus", s(&corpus), "--requests", s(&req_path), "--kind", kind, "--seed", "3", "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
        let key = fs::read_to_string(dir.path().join(format!("{run_id}.jsonl.answers.jsonl"))).unwrap();
        assert_eq!(key.lines().count(), 12);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(!String::from_utf8_lossy(&outputs[0]).contains("positive_id"));
    assert!(String::from_utf8_lossy(&fs::read(dir.path().join("c.jsonl.answers.jsonl")).unwrap()).contains("decoy"));
}

#[test]
fn stratify_picks_representatives() {
    let dir = TempDir::new().unwrap();
    let sims = dir.path().join("sims.csv");
    fs::write(&sims, "doc_id,similarity\nh1,0.95\nh2,0.93\nh3,0.91\nh4,0.89\n").unwrap();
    let o = run(&["stratify", "--sims", s(&sims), "--passing", "easy,hard"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "tier,doc_id,similarity\nEasy,h1,0.95\nMedium,h2,0.93\nHard,h3,0.91\n");
    assert!(stderr(&o).contains("training tier: Hard"));
}

#[test]
fn simulate_shows_brute_force_collapse() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim.csv");
    let o = run(&[
        "simulate", "--policy", "brute_force", "--n", "1000", "--m", "10", "--k", "1,2,3", "--trials", "200000",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let rates: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(9).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), 3);
    assert!(rates[0] > rates[1] && rates[1] >= rates[2], "{rates:?}");
}

#[test]
fn simulate_from_sweep_file_with_curve() {
    let dir = TempDir::new().unwrap();
    let sweep = dir.path().join("grid.toml");
    fs::write(
        &sweep,
        "policies = [\"hierarchical\", \"motivation\"]\nn = [3375]\nk = [1, 2]\nm = [15]\nn_m = [225, 5000]\ntrials = 50\ncheckpoints = [3, 6]\n",
    )
    .unwrap();
    let out = dir.path().join("sim.csv");
    let o = run(&["simulate", "--sweep", s(&sweep), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.contains("motivation,3375,1,15,225,15,1,50,3,1,3"));
    let curve = fs::read_to_string(dir.path().join("sim.csv.curve.csv")).unwrap();
    assert!(curve.starts_with("policy,N,k,M,N_m,c,alpha,trials,calls,cumulative_success\n"));
}

#[test]
fn scoring_and_joint_table() {
    let dir = TempDir::new().unwrap();
    let cov = dir.path().join("cov.jsonl");
    let mut text = String::new();
    for (id, covered) in [("p1", 4), ("p2", 2)] {
        for dim in ["motivation", "mechanism", "methodology"] {
            let elements: Vec<_> = (0..4)
                .map(|i| json!({"name": format!("e{i}"), "state": if i < covered { "covered" } else { "missing" }}))
                .collect();
            text.push_str(&json!({"sample_id": id, "dimension": dim, "elements": elements}).to_string());
            text.push('\n');
        }
    }
    fs::write(&cov, text).unwrap();
    let scores = dir.path().join("scores.csv");
    let o = run(&["score", "--coverage", s(&cov), "--out", s(&scores)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&scores).unwrap(),
        "sample_id,motivation,mechanism,methodology,total,rft_pass\np1,4,4,4,12,true\np2,2,2,2,6,false\n"
    );

    let ranks = dir.path().join("ranks.csv");
    fs::write(&ranks, "target_id,ir_calls_to_target,proposed_rank,budget_exhausted\np1,3,1,false\np2,3,40,false\n").unwrap();
    let o = run(&["joint-table", "--ranks", s(&ranks), "--scores", s(&scores), "--score-thresholds", "4,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "rank_threshold,retrieval_only,score_ge_4,score_ge_8\n25,0.5,0.5,0.5\n50,1,1,0.5\n100,1,1,0.5\n"
    );

    let judg = dir.path().join("j.jsonl");
    let lines: String = ["A", "A", "B", "tie"]
        .iter()
        .enumerate()
        .map(|(i, o)| {
            json!({"pair_id": "x", "trial": i / 2 + 1, "order": if i % 2 == 0 { "original" } else { "swapped" },
                   "outcome": o})
            .to_string()
                + "\n"
        })
        .collect();
    fs::write(&judg, lines).unwrap();
    let o = run(&["score", "--judgments", s(&judg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).ends_with(",A\n"), "{}", stdout(&o));
}

#[test]
fn config_precedence_flag_env_file() {
    let f = indexed(100);
    let cfg = f.dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 9\n[build_index]\nbranching = 4\n").unwrap();
    let out = f.dir.path().join("t2.json");
    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(PathBuf::from(format!("{}.manifest.json", p.display()))).unwrap())
            .unwrap()
    };
    let base = ["build-index", "--corpus", s(&f.corpus), "--out", s(&out), "--config", s(&cfg)];
    let o = run(&base);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(&out)["config"]["branching"], 4);
    assert_eq!(manifest(&out)["seed"], 9);

    let o = bin().args(base).env("HIERSEARCH_BRANCHING", "6").output().unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&out)["config"]["branching"], 6);

    let o = bin().args(base).args(["-c", "8"]).env("HIERSEARCH_BRANCHING", "6").output().unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&out)["config"]["branching"], 8);
    assert!(stdout(&o).starts_with("100 → 13 → 2 → 1"), "{}", stdout(&o));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = run(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}
