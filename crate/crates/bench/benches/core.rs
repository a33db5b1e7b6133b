use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hiersearch::corpus::{Corpus, DocRecord, QueryContext, YearMonth};
use hiersearch::index::{build_tree, kmeans};
use hiersearch::router::{PlantedOracle, SimilarityRouter};
use hiersearch::search::{best_first_search, tournament_search};
use hiersearch::simkit::{sim_hierarchical, sim_motivation, sim_sequential_scan, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, dim: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let docs = (0..n)
        .map(|i| DocRecord {
            id: format!("d{i}"),
            title: format!("doc {i}"),
            abstract_text: String::new(),
            date: YearMonth::new(2022, 1).unwrap(),
            embedding: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    Corpus::new(docs).unwrap()
}

fn query(c: &Corpus, pos: usize) -> QueryContext {
    QueryContext::from_background(c.doc(pos).title.clone()).with_embedding(c.doc(pos).embedding.clone())
}

fn bench_index(cr: &mut Criterion) {
    let mut g = cr.benchmark_group("index");
    g.sample_size(10);
    for n in [500, 3035] {
        let c = corpus(n, 64);
        let points: Vec<&[f64]> = (0..n).map(|i| c.doc(i).embedding.as_slice()).collect();
        g.bench_with_input(BenchmarkId::new("kmeans_k15", n), &points, |b, p| {
            b.iter(|| kmeans(black_box(p), 15, 0, 50).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("build_tree_c15", n), &c, |b, c| {
            b.iter(|| build_tree(black_box(c), 15, 0).unwrap())
        });
    }
    g.finish();
}

fn bench_search(cr: &mut Criterion) {
    let c = corpus(3035, 64);
    let tree = build_tree(&c, 15, 0).unwrap();
    let q = query(&c, 7);
    let sim = SimilarityRouter::new(0.05).unwrap();
    let oracle = PlantedOracle::new(0.8, 0).unwrap();

    let mut g = cr.benchmark_group("search");
    g.bench_function("best_first_similarity", |b| {
        b.iter(|| best_first_search(&tree, &c, &sim, black_box(&q), 60, None).unwrap())
    });
    g.bench_function("best_first_oracle_0.8", |b| {
        b.iter(|| best_first_search(&tree, &c, &oracle, black_box(&q), 180, Some("d7")).unwrap())
    });
    g.bench_function("tournament_similarity", |b| {
        b.iter(|| tournament_search(&tree, &c, &sim, black_box(&q), None).unwrap())
    });
    g.finish();
}

fn bench_simkit(cr: &mut Criterion) {
    let base = SimConfig { n_m: 225, trials: 200, ..SimConfig::new(3375, 3, 15) };
    let mut g = cr.benchmark_group("simkit");
    g.sample_size(10);
    g.bench_function("sequential_scan_k3", |b| b.iter(|| sim_sequential_scan(black_box(&base)).unwrap()));
    g.bench_function("hierarchical_k3", |b| b.iter(|| sim_hierarchical(black_box(&base)).unwrap()));
    g.bench_function("motivation_k3", |b| b.iter(|| sim_motivation(black_box(&base)).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_index, bench_search, bench_simkit);
criterion_main!(benches);
