//! End-to-end runs through files: corpus -> tree -> search/eval -> pools -> simulation.

use std::io::BufReader;

use hiersearch::corpus::{load_corpus, save_corpus, Corpus, DocRecord, QueryContext, YearMonth};
use hiersearch::index::{build_tree, load_tree, save_tree};
use hiersearch::pools::{read_jsonl, write_jsonl, AnswerKey, PoolBuilder, PoolConfig, PoolRecord, PoolRequest};
use hiersearch::router::{PlantedOracle, SimilarityRouter};
use hiersearch::search::{eval_retrieval, summarize, write_eval_csv, EvalTarget, Method};
use hiersearch::simkit::{simulate, write_results_csv, Policy, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let topics = ["autophagy lysosome membrane", "kinase signal receptor", "polymer lattice oxide"];
    let docs = (0..n)
        .map(|i| DocRecord {
            id: format!("p{i}"),
            title: format!("{} study {i}", topics[i % 3]),
            abstract_text: format!("{} results", topics[(i + 1) % 3]),
            date: YearMonth::new(2021, 1 + (i % 12) as u8).unwrap(),
            embedding: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    Corpus::new(docs).unwrap()
}

#[test]
fn files_round_trip_and_search_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(400);
    save_corpus(&c, dir.path().join("c.jsonl")).unwrap();
    let c = load_corpus(dir.path().join("c.jsonl")).unwrap();
    let tree = build_tree(&c, 8, 3).unwrap();
    save_tree(&tree, dir.path().join("t.json")).unwrap();
    let loaded = load_tree(dir.path().join("t.json"), Some(&c)).unwrap();
    assert_eq!(loaded.to_bytes(), tree.to_bytes());
    assert_eq!(loaded.level_sizes(), vec![400, 50, 7, 1]);

    let other = corpus(401);
    assert!(load_tree(dir.path().join("t.json"), Some(&other)).is_err());

    let targets: Vec<EvalTarget> = (0..40)
        .map(|i| {
            let d = c.doc(i * 10);
            EvalTarget {
                target_id: d.id.clone(),
                query: QueryContext::from_background(d.title.clone()).with_embedding(d.embedding.clone()),
            }
        })
        .collect();
    let oracle = PlantedOracle::new(1.0, 0).unwrap();
    let report = eval_retrieval(&loaded, &c, &oracle, &targets, 100, Method::BestFirst).unwrap();
    assert!(report.failure.is_none());
    assert!(report.rows.iter().all(|r| r.ir_calls_to_target == Some(3) && r.proposed_rank == Some(1)));

    let tourn = eval_retrieval(&loaded, &c, &SimilarityRouter::new(0.05).unwrap(), &targets, 100, Method::Tournament)
        .unwrap();
    assert!(tourn.rows.iter().all(|r| r.ir_calls_to_target == Some(58)));
    assert_eq!(summarize(&tourn.rows).found, 40);

    let mut csv = Vec::new();
    write_eval_csv(&report, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.starts_with("target_id,ir_calls_to_target,proposed_rank,budget_exhausted"));
}

#[test]
fn pools_survive_serialization_and_hide_the_answer() {
    let c = corpus(300);
    let b = PoolBuilder::new(&c, PoolConfig { seed: 4, ..PoolConfig::default() }).unwrap();
    let reqs: Vec<PoolRequest> = (0..20)
        .map(|i| PoolRequest {
            pool_id: format!("s{i}"),
            positive_id: c.doc(i * 7).id.clone(),
            source_date: YearMonth::new(2022, 6).unwrap(),
            query: QueryContext::from_background("autophagy lysosome membrane kinase"),
        })
        .collect();
    let pools: Vec<_> = reqs.iter().map(|r| b.build_pool(r).unwrap()).collect();
    let records: Vec<PoolRecord> = pools.iter().map(|p| p.record(&c)).collect();
    let keys: Vec<AnswerKey> = pools.iter().map(|p| p.answer_key()).collect();

    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).unwrap();
    assert!(!String::from_utf8_lossy(&buf).contains("provenance"));
    let back: Vec<PoolRecord> = read_jsonl(BufReader::new(buf.as_slice())).unwrap();
    assert_eq!(back, records);

    let mut buf = Vec::new();
    write_jsonl(&keys, &mut buf).unwrap();
    let back: Vec<AnswerKey> = read_jsonl(BufReader::new(buf.as_slice())).unwrap();
    for ((k, r), p) in back.iter().zip(&reqs).zip(&pools) {
        assert_eq!(k.positive_id, r.positive_id);
        assert_eq!(p.candidates.len(), 15);
    }
}

#[test]
fn simulation_grid_writes_one_row_per_policy() {
    let cfg = SimConfig { n_m: 225, trials: 300, seed: 1, ..SimConfig::new(3375, 2, 15) };
    let results: Vec<_> = Policy::ALL.iter().map(|&p| simulate(p, &cfg).unwrap()).collect();
    let mut csv = Vec::new();
    write_results_csv(&results, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + Policy::ALL.len());
    let calls: Vec<f64> = results.iter().map(|r| r.mean_calls).collect();
    let by = |p: Policy| calls[Policy::ALL.iter().position(|&q| q == p).unwrap()];
    assert_eq!(by(Policy::Motivation), 6.0);
    assert_eq!(by(Policy::Hierarchical), 6.0);
    assert!(by(Policy::SequentialScan) > 300.0);
}
