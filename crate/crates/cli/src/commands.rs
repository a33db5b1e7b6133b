use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hiersearch::corpus::load_corpus;
use hiersearch::index::{build_tree_with, load_tree, save_tree, BuildOptions};
use hiersearch::pools::{read_jsonl, write_jsonl, AnswerKey, PoolBuilder, PoolConfig, PoolKind, PoolRecord, PoolRequest, Tier};
use hiersearch::router::{RouterConfig, RouterKind};
use hiersearch::scoring::{self, M3Score, DEFAULT_RANK_THRESHOLDS, DEFAULT_SCORE_THRESHOLDS};
use hiersearch::search::{self, default_budget, EvalTarget, Method, SearchError};
use hiersearch::simkit::{self, Policy, Sweep};
use hiersearch::{pools, Corpus, QueryContext};
use rayon::prelude::*;

use crate::config::{ConfigFile, Resolver, Run};
use crate::{
    BuildIndexArgs, Cli, Command, EvalArgs, JointArgs, PoolArgs, RouterArgs, RouterChoice, ScoreArgs, SearchArgs,
    SimulateArgs, StratifyArgs,
};

struct Ctx<'a> {
    r: Resolver<'a>,
    run: Run,
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let name = command_name(&cli.command);
    let mut r = Resolver::new(&file, name);
    let seed = r.get("seed", cli.seed, 0u64)?;
    if let Some(w) = r.opt("workers", cli.workers)? {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let out = r.opt("out", cli.out)?;
    let mut ctx = Ctx {
        r,
        run: Run::start(name, seed),
        out,
    };
    match cli.command {
        Command::BuildIndex(a) => build_index(&mut ctx, a)?,
        Command::Search(a) => search_one(&mut ctx, a)?,
        Command::Tournament(a) => eval(&mut ctx, a, Method::Tournament)?,
        Command::Eval(a) => eval(&mut ctx, a, Method::BestFirst)?,
        Command::MakePools(a) => make_pools(&mut ctx, a)?,
        Command::Stratify(a) => stratify(&mut ctx, a)?,
        Command::Simulate(a) => simulate(&mut ctx, a)?,
        Command::Score(a) => score(&mut ctx, a)?,
        Command::JointTable(a) => joint_table(&mut ctx, a)?,
    }
    ctx.run.finish(ctx.r.snapshot())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::BuildIndex(_) => "build-index",
        Command::Search(_) => "search",
        Command::Tournament(_) => "tournament",
        Command::Eval(_) => "eval",
        Command::MakePools(_) => "make-pools",
        Command::Stratify(_) => "stratify",
        Command::Simulate(_) => "simulate",
        Command::Score(_) => "score",
        Command::JointTable(_) => "joint-table",
    }
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.run.seed
    }

    /// The primary output file, or stdout when `--out` is absent.
    fn sink(&mut self) -> Result<Box<dyn Write>> {
        match self.out.clone() {
            Some(p) => self.file_sink(&p),
            None => Ok(Box::new(io::stdout().lock())),
        }
    }

    fn file_sink(&mut self, p: &Path) -> Result<Box<dyn Write>> {
        let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
        self.run.output(p);
        Ok(Box::new(BufWriter::new(f)))
    }

    fn corpus(&mut self, flag: Option<PathBuf>) -> Result<Corpus> {
        let path: PathBuf = self.r.req("corpus", flag)?;
        self.run.input(&path);
        Ok(load_corpus(&path)?)
    }

    /// Prints to stdout when the data went to a file, to stderr when it went to stdout.
    fn summary(&self, line: &str) {
        if self.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn build_index(ctx: &mut Ctx, a: BuildIndexArgs) -> Result<()> {
    let corpus = ctx.corpus(a.corpus)?;
    let branching = ctx.r.get("branching", a.branching, 15usize)?;
    let max_iters = ctx.r.get("max_iters", a.max_iters, 50usize)?;
    let out: PathBuf = ctx.r.req("out", ctx.out.clone())?;
    let opts = BuildOptions {
        branching,
        seed: ctx.seed(),
        max_iters,
    };
    let tree = build_tree_with(&corpus, &corpus.fingerprint(), opts)?;
    save_tree(&tree, &out)?;
    ctx.run.output(&out);
    let sizes: Vec<String> = tree.level_sizes().iter().map(usize::to_string).collect();
    println!("{}", sizes.join(" → "));
    println!("depth {}", tree.depth());
    Ok(())
}

fn router_config(ctx: &mut Ctx, a: RouterArgs) -> Result<RouterConfig> {
    let d = RouterConfig::default();
    let kind = match ctx.r.get("router", a.router, RouterChoice::Similarity)? {
        RouterChoice::Similarity => RouterKind::Similarity,
        RouterChoice::PlantedOracle => RouterKind::PlantedOracle,
        RouterChoice::External => RouterKind::External,
    };
    Ok(RouterConfig {
        kind,
        temperature: ctx.r.get("temperature", a.temperature, d.temperature)?,
        alpha: ctx.r.get("alpha", a.alpha, d.alpha)?,
        endpoint: ctx.r.opt("endpoint", a.endpoint)?,
        seed: ctx.seed(),
        timeout_ms: ctx.r.get("timeout_ms", a.timeout_ms, d.timeout_ms)?,
        renormalize: ctx.r.get("renormalize", a.renormalize.then_some(true), false)?,
    })
}

fn search_one(ctx: &mut Ctx, a: SearchArgs) -> Result<()> {
    let corpus = ctx.corpus(a.corpus)?;
    let tree_path: PathBuf = ctx.r.req("tree", a.tree)?;
    ctx.run.input(&tree_path);
    let tree = load_tree(&tree_path, Some(&corpus))?;
    let query = match (ctx.r.opt("query", a.query)?, ctx.r.opt("query_doc", a.query_doc)?) {
        (Some(p), _) => {
            ctx.run.input(&p);
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str::<QueryContext>(&text).with_context(|| format!("search: bad query file {}", p.display()))?
        }
        (None, Some(id)) => {
            let d = corpus.get(&id).ok_or_else(|| anyhow!("search: query document {id:?} not in corpus"))?;
            QueryContext::from_background(d.title.clone()).with_embedding(d.embedding.clone())
        }
        (None, None) => bail!("search: give --query or --query-doc"),
    };
    let target = ctx.r.opt("target", a.target)?;
    let budget = ctx.r.get("budget", a.budget, default_budget(&tree))?;
    let router = router_config(ctx, a.router)?.build()?;
    let (result, failure) = match search::best_first_search(&tree, &corpus, router.as_ref(), &query, budget, target.as_deref()) {
        Ok(r) => (r, None),
        Err(SearchError::Router { source, partial }) => (*partial, Some(source)),
        Err(e) => return Err(e.into()),
    };
    let mut w = csv::Writer::from_writer(ctx.sink()?);
    w.write_record(["rank", "doc_id", "score"])?;
    for (i, (id, s)) in result.proposed.iter().zip(&result.proposed_scores).enumerate() {
        w.write_record([(i + 1).to_string(), id.clone(), s.to_string()])?;
    }
    w.flush()?;
    let opt = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
    ctx.summary(&format!(
        "ir_calls={} ir_calls_to_target={} proposed_rank={} budget_exhausted={}",
        result.ir_calls,
        opt(result.ir_calls_to_target),
        opt(result.proposed_rank),
        result.budget_exhausted
    ));
    match failure {
        Some(e) => Err(anyhow!(e).context("search aborted; partial results written")),
        None => Ok(()),
    }
}

fn load_targets(ctx: &mut Ctx, a: &EvalArgs, corpus: &Corpus) -> Result<Vec<EvalTarget>> {
    let targets_path: Option<PathBuf> = ctx.r.opt("targets", a.targets.clone())?;
    let pools_path: Option<PathBuf> = ctx.r.opt("pools", a.pools.clone())?;
    let mut targets: Vec<EvalTarget> = match (targets_path, pools_path) {
        (Some(t), _) => {
            ctx.run.input(&t);
            read_jsonl(open(&t)?).with_context(|| format!("eval: bad target file {}", t.display()))?
        }
        (None, Some(p)) => {
            let key_path: PathBuf = ctx.r.req("answer_key", a.answer_key.clone())?;
            ctx.run.input(&p);
            ctx.run.input(&key_path);
            let records: Vec<PoolRecord> = read_jsonl(open(&p)?)?;
            let keys: Vec<AnswerKey> = read_jsonl(open(&key_path)?)?;
            let by_id: HashMap<&str, &AnswerKey> = keys.iter().map(|k| (k.pool_id.as_str(), k)).collect();
            records
                .iter()
                .map(|r| {
                    let key = by_id
                        .get(r.pool_id.as_str())
                        .ok_or_else(|| anyhow!("eval: pool {:?} has no answer key", r.pool_id))?;
                    Ok(EvalTarget {
                        target_id: key.positive_id.clone(),
                        query: r.query.clone(),
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, None) => bail!("eval: give --targets or --pools with --answer-key"),
    };
    if ctx.r.get("embed_from_target", a.embed_from_target.then_some(true), false)? {
        for t in &mut targets {
            if t.query.query_embedding.is_none() {
                if let Some(d) = corpus.get(&t.target_id) {
                    t.query.query_embedding = Some(d.embedding.clone());
                }
            }
        }
    }
    Ok(targets)
}

fn eval(ctx: &mut Ctx, a: EvalArgs, method: Method) -> Result<()> {
    let corpus = ctx.corpus(a.corpus.clone())?;
    let tree_path: PathBuf = ctx.r.req("tree", a.tree.clone())?;
    ctx.run.input(&tree_path);
    let tree = load_tree(&tree_path, Some(&corpus))?;
    let targets = load_targets(ctx, &a, &corpus)?;
    let budget = ctx.r.get("budget", a.budget, default_budget(&tree))?;
    let router = router_config(ctx, a.router)?.build()?;
    let report = search::eval_retrieval(&tree, &corpus, router.as_ref(), &targets, budget, method)?;
    search::write_eval_csv(&report, ctx.sink()?)?;
    let s = &report.summary;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    ctx.summary(&format!(
        "targets={} found={} mean_ir_calls={} median_ir_calls={} mean_rank={} median_rank={}",
        s.targets,
        s.found,
        show(s.mean_ir_calls),
        show(s.median_ir_calls),
        show(s.mean_rank),
        show(s.median_rank)
    ));
    match report.failure {
        Some((id, e)) => Err(anyhow!(e).context(format!("evaluation stopped at target {id:?}; partial CSV written"))),
        None => Ok(()),
    }
}

fn make_pools(ctx: &mut Ctx, a: PoolArgs) -> Result<()> {
    let corpus = ctx.corpus(a.corpus)?;
    let req_path: PathBuf = ctx.r.req("requests", a.requests)?;
    ctx.run.input(&req_path);
    let requests: Vec<PoolRequest> = read_jsonl(open(&req_path)?)?;
    let kind: PoolKind = ctx.r.get("kind", a.kind, "standard".to_string())?.parse()?;
    let d = PoolConfig::default();
    let cfg = PoolConfig {
        pool_size: ctx.r.get("pool_size", a.pool_size, d.pool_size)?,
        n_hard: ctx.r.get("n_hard", a.n_hard, d.n_hard)?,
        keyword_min_overlap: ctx.r.get("keyword_min_overlap", a.keyword_min_overlap, d.keyword_min_overlap)?,
        embed_candidates: ctx.r.get("embed_candidates", a.embed_candidates, d.embed_candidates)?,
        seed: ctx.seed(),
    };
    let out: PathBuf = ctx.r.req("out", ctx.out.clone())?;
    let key_default = PathBuf::from(format!("{}.answers.jsonl", out.display()));
    let key_path = ctx.r.get("answer_key", a.answer_key, key_default)?;

    let builder = PoolBuilder::new(&corpus, cfg)?;
    let pools: Vec<_> = requests
        .par_iter()
        .enumerate()
        .map(|(i, req)| {
            let donor = (requests.len() > 1).then(|| &requests[(i + 1) % requests.len()]);
            builder.build_ablation_pool(kind, req, donor)
        })
        .collect::<Result<_, _>>()?;
    let records: Vec<PoolRecord> = pools.iter().map(|p| p.record(&corpus)).collect();
    let keys: Vec<AnswerKey> = pools.iter().map(|p| p.answer_key()).collect();
    write_jsonl(&records, ctx.file_sink(&out)?)?;
    write_jsonl(&keys, ctx.file_sink(&key_path)?)?;
    println!("{} pools written to {}; answer key in {}", pools.len(), out.display(), key_path.display());
    Ok(())
}

fn parse_tier(s: &str) -> Result<Tier> {
    match s.to_ascii_lowercase().as_str() {
        "easy" => Ok(Tier::Easy),
        "medium" => Ok(Tier::Medium),
        "hard" => Ok(Tier::Hard),
        _ => bail!("stratify: unknown tier {s:?} (easy, medium or hard)"),
    }
}

fn stratify(ctx: &mut Ctx, a: StratifyArgs) -> Result<()> {
    let path: PathBuf = ctx.r.req("sims", a.sims)?;
    ctx.run.input(&path);
    let mut rdr = csv::Reader::from_reader(open(&path)?);
    let mut sims = Vec::new();
    for row in rdr.deserialize::<(String, f64)>() {
        let (id, s) = row.with_context(|| format!("stratify: bad row in {}", path.display()))?;
        if !(-1.0..=1.0).contains(&s) {
            bail!("stratify: similarity {s} of {id:?} is outside [-1, 1]");
        }
        sims.push((id, s));
    }
    let reps = pools::stratify_tiers(&sims);
    let mut w = csv::Writer::from_writer(ctx.sink()?);
    w.write_record(["tier", "doc_id", "similarity"])?;
    for t in [Tier::Easy, Tier::Medium, Tier::Hard] {
        if let Some((id, s)) = reps.get(t) {
            w.write_record([t.to_string(), id.clone(), s.to_string()])?;
        }
    }
    w.flush()?;
    let passing: Vec<String> = ctx.r.get("passing", Some(a.passing).filter(|p| !p.is_empty()), Vec::new())?;
    if !passing.is_empty() {
        let tiers = passing.iter().map(|s| parse_tier(s)).collect::<Result<Vec<_>>>()?;
        ctx.summary(&format!("training tier: {}", pools::select_training_tier(&tiers)?));
    }
    Ok(())
}

fn nonempty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

fn simulate(ctx: &mut Ctx, a: SimulateArgs) -> Result<()> {
    let sweep = match ctx.r.opt("sweep", a.sweep)? {
        Some(path) => {
            ctx.run.input(&path);
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut s: Sweep = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).with_context(|| format!("simulate: bad sweep {}", path.display()))?
            } else {
                toml::from_str(&text).with_context(|| format!("simulate: bad sweep {}", path.display()))?
            };
            s.seed = ctx.seed();
            s
        }
        None => Sweep {
            policies: ctx.r.get("policy", nonempty(a.policy), Policy::ALL.to_vec())?,
            n: ctx.r.req("n", nonempty(a.n))?,
            k: ctx.r.get("k", nonempty(a.k), vec![1])?,
            m: ctx.r.req("m", nonempty(a.m))?,
            n_m: ctx.r.get("n_m", nonempty(a.n_m), Vec::new())?,
            c: ctx.r.get("c", nonempty(a.c), vec![15])?,
            alpha: ctx.r.get("alpha", nonempty(a.alpha), vec![1.0])?,
            trials: ctx.r.get("trials", a.trials, 1000)?,
            seed: ctx.seed(),
            budget: ctx.r.opt("budget", a.budget)?,
            checkpoints: ctx.r.get("checkpoints", nonempty(a.checkpoints), Vec::new())?,
        },
    };
    let results = sweep.run()?;
    simkit::write_results_csv(&results, ctx.sink()?)?;
    if !sweep.checkpoints.is_empty() {
        let default = ctx.out.as_ref().map(|o| PathBuf::from(format!("{}.curve.csv", o.display())));
        match ctx.r.opt("curve_out", a.curve_out)?.or(default) {
            Some(p) => simkit::write_curve_csv(&results, &sweep.checkpoints, ctx.file_sink(&p)?)?,
            None => simkit::write_curve_csv(&results, &sweep.checkpoints, io::stdout().lock())?,
        }
    }
    ctx.summary(&format!("{} simulations", results.len()));
    Ok(())
}

fn score(ctx: &mut Ctx, a: ScoreArgs) -> Result<()> {
    if let Some(path) = ctx.r.opt("coverage", a.coverage)? {
        ctx.run.input(&path);
        let scores = scoring::score_coverage(open(&path)?)?;
        let mut w = csv::Writer::from_writer(ctx.sink()?);
        w.write_record(["sample_id", "motivation", "mechanism", "methodology", "total", "rft_pass"])?;
        for (id, s) in &scores {
            w.write_record([
                id.clone(),
                s.motivation.to_string(),
                s.mechanism.to_string(),
                s.methodology.to_string(),
                s.total().to_string(),
                scoring::rft_pass(s).to_string(),
            ])?;
        }
        w.flush()?;
        let passed = scores.values().filter(|s| scoring::rft_pass(s)).count();
        ctx.summary(&format!("samples={} rft_pass={passed}", scores.len()));
    } else if let Some(path) = ctx.r.opt("judgments", a.judgments)? {
        ctx.run.input(&path);
        let verdicts = scoring::aggregate_judgments(open(&path)?)?;
        let mut w = csv::Writer::from_writer(ctx.sink()?);
        w.write_record(["pair_id", "j1", "j2", "j3", "j4", "winner"])?;
        for (id, v) in &verdicts {
            let mut row = vec![id.clone()];
            row.extend(v.judgments.iter().map(|o| format!("{o:?}")));
            row.push(format!("{:?}", v.winner));
            w.write_record(&row)?;
        }
        w.flush()?;
        let list: Vec<_> = verdicts.into_values().collect();
        let (wa, wb, tie) = scoring::win_rate(&list);
        ctx.summary(&format!("pairs={} a_wins={wa:.4} b_wins={wb:.4} ties={tie:.4}", list.len()));
    } else {
        bail!("score: give --coverage or --judgments");
    }
    Ok(())
}

fn joint_table(ctx: &mut Ctx, a: JointArgs) -> Result<()> {
    let ranks_path: PathBuf = ctx.r.req("ranks", a.ranks)?;
    let scores_path: PathBuf = ctx.r.req("scores", a.scores)?;
    ctx.run.input(&ranks_path);
    ctx.run.input(&scores_path);

    let mut ranks: HashMap<String, Option<usize>> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(open(&ranks_path)?);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "proposed_rank")
        .ok_or_else(|| anyhow!("joint-table: {} has no proposed_rank column", ranks_path.display()))?;
    for row in rdr.records() {
        let row = row?;
        if row.iter().any(|f| f == "router_failure") {
            continue;
        }
        let rank = match row.get(col).unwrap_or("") {
            "" => None,
            v => Some(v.parse().with_context(|| format!("joint-table: bad rank {v:?}"))?),
        };
        ranks.insert(row[0].to_string(), rank);
    }

    let mut scores: HashMap<String, M3Score> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(open(&scores_path)?);
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| -> Result<u8> {
            row.get(i)
                .ok_or_else(|| anyhow!("joint-table: short row in {}", scores_path.display()))?
                .parse()
                .context("joint-table: bad score")
        };
        let s = M3Score {
            motivation: field(1)?,
            mechanism: field(2)?,
            methodology: field(3)?,
        };
        scores.insert(row[0].to_string(), s);
    }

    let ks = ctx.r.get("rank_thresholds", nonempty(a.rank_thresholds), DEFAULT_RANK_THRESHOLDS.to_vec())?;
    let ss = ctx.r.get("score_thresholds", nonempty(a.score_thresholds), DEFAULT_SCORE_THRESHOLDS.to_vec())?;
    let table = scoring::joint_success_by_id(&ranks, &scores, &ks, &ss)?;
    scoring::write_joint_csv(&table, ctx.sink()?)?;
    ctx.summary(&format!("samples={}", ranks.len()));
    Ok(())
}
