use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;

use super::config::{ConfigFile, Settings};
use super::report::{fmt4, RunManifest, Table};
use super::*;
use crate::corpus::{
    ingest_conceptnet, load_pair_file, make_splits, parse_conceptnet_line, sample_negatives, seeded_rng,
    CorpusBuilder, LabeledPair, PairFormat, SplitMode, SplitSpec, TrainingCorpus, DEFAULT_RELATIONS,
};
use crate::encoders::{init_params, load_checkpoint, materialize, save_checkpoint, EmbeddingSpace};
use crate::error::Error;
use crate::evaltasks::{
    build_benchmark, clu, eval_f1, evaluate_outliers, mclu, read_benchmark, write_augmentation,
    write_benchmark, AffinityConfig, AugmentFormat, Preference, PropertyDB, PropertyScore,
};
use crate::facets::{
    decompose, facet_neighbours, faceted_concept_vecs, load_decomposition, save_decomposition,
    DecomposeOptions, FacetDecomposition, FacetedConceptVecs, DEFAULT_K,
};
use crate::objectives::{LossConfig, LossMode};
use crate::training::{train, Optimizer, TrainConfig};

/// Held-out validation positives when `train` gets no validation file.
const HOLDOUT_FRACTION: f64 = 0.1;
const HOLDOUT_CAP: usize = 10_000;

struct Ctx {
    settings: Settings,
    manifest: RunManifest,
    out_dir: PathBuf,
    seed: u64,
    start: Instant,
}

impl Ctx {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_input(path)
    }

    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.manifest.add_output(&p);
        p
    }

    fn table(&mut self, table: &Table, stem: &str) -> Result<()> {
        for p in table.write(&self.out_dir, stem)? {
            self.manifest.add_output(&p);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.config = self.settings.finish();
        self.manifest.wall_time_secs = self.start.elapsed().as_secs_f64();
        let p = self.manifest.write(&self.out_dir)?;
        info!("manifest written to {}", p.display());
        Ok(())
    }
}

pub(super) fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut settings = Settings::new(file);
    let seed = settings.resolve("seed", cli.seed, 0u64)?;
    let out_dir = settings.resolve(
        "out_dir",
        cli.out_dir.as_ref().map(|p| p.display().to_string()),
        ".".to_string(),
    )?;
    let out_dir = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    if let Some(n) = settings.resolve_opt::<usize>("threads", cli.threads)? {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let name = match &cli.command {
        Command::Ingest(IngestCmd::Conceptnet { .. }) => "ingest_conceptnet",
        Command::Ingest(IngestCmd::Pairs { .. }) => "ingest_pairs",
        Command::Train(_) => "train",
        Command::Extract(_) => "extract",
        Command::Outlier(OutlierCmd::Build { .. }) => "outlier_build",
        Command::Outlier(OutlierCmd::Run { .. }) => "outlier_run",
        Command::Cluster(_) => "cluster",
        Command::Eval(_) => "eval",
        Command::Neighbours(_) => "neighbours",
    };
    let mut manifest = RunManifest::new(name);
    manifest.seeds.insert("master".into(), seed);
    if let Some(p) = &cli.config {
        manifest.add_input(p)?;
    }
    let mut ctx = Ctx {
        settings,
        manifest,
        out_dir,
        seed,
        start,
    };
    match cli.command {
        Command::Ingest(IngestCmd::Conceptnet {
            dump,
            min_tail_count,
            relations,
        }) => ingest_conceptnet_cmd(&mut ctx, &dump, min_tail_count, relations)?,
        Command::Ingest(IngestCmd::Pairs { cp, pf }) => ingest_pairs_cmd(&mut ctx, &CorpusArgs { cp, pf })?,
        Command::Train(a) => train_cmd(&mut ctx, &a)?,
        Command::Extract(a) => extract_cmd(&mut ctx, &a)?,
        Command::Outlier(OutlierCmd::Build {
            facts,
            groups,
            properties,
            n_instances,
        }) => outlier_build_cmd(&mut ctx, &facts, &groups, properties.as_deref(), n_instances)?,
        Command::Outlier(OutlierCmd::Run {
            benchmark,
            checkpoint,
            corpus,
            facet,
            strategy,
        }) => outlier_run_cmd(&mut ctx, &benchmark, &checkpoint, &corpus, &facet, strategy)?,
        Command::Cluster(a) => cluster_cmd(&mut ctx, &a)?,
        Command::Eval(a) => eval_cmd(&mut ctx, &a)?,
        Command::Neighbours(a) => neighbours_cmd(&mut ctx, &a)?,
    }
    ctx.finish()
}

fn read_list(ctx: &mut Ctx, path: &Path) -> Result<Vec<String>> {
    ctx.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn load_corpus(ctx: &mut Ctx, args: &CorpusArgs) -> Result<TrainingCorpus> {
    let mut b = CorpusBuilder::new();
    for p in &args.cp {
        ctx.input(p)?;
        b.add_fragment(&load_pair_file(p, PairFormat::Cp)?)?;
    }
    for p in &args.pf {
        ctx.input(p)?;
        b.add_fragment(&load_pair_file(p, PairFormat::Pf)?)?;
    }
    b.build()
}

fn load_model(
    ctx: &mut Ctx,
    checkpoint: &Path,
    args: &CorpusArgs,
) -> Result<(TrainingCorpus, EmbeddingSpace)> {
    let corpus = load_corpus(ctx, args)?;
    ctx.input(checkpoint)?;
    let params = load_checkpoint(checkpoint, &corpus)?;
    let space = materialize(&params, &corpus)?;
    Ok((corpus, space))
}

fn write_corpus(ctx: &mut Ctx, corpus: &TrainingCorpus) -> Result<()> {
    let cp = ctx.out("cp.tsv");
    corpus.write_cp_tsv(&cp)?;
    let pf = ctx.out("pf.tsv");
    corpus.write_pf_tsv(&pf)
}

fn ingest_conceptnet_cmd(
    ctx: &mut Ctx,
    dump: &Path,
    min_tail_count: Option<usize>,
    relations: Option<String>,
) -> Result<()> {
    let min_tail = ctx.settings.resolve("min_tail_count", min_tail_count, 10usize)?;
    let relations = ctx
        .settings
        .resolve("relations", relations, "default".to_string())?;
    let allowed: HashSet<String> = if relations == "default" {
        DEFAULT_RELATIONS.iter().map(|r| r.to_string()).collect()
    } else {
        relations
            .split(',')
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .map(|r| r.trim_start_matches("/r/").to_string())
            .collect()
    };
    if allowed.is_empty() {
        return Err(Error::InvalidArgument("empty relation list".into()));
    }
    ctx.input(dump)?;
    let file = File::open(dump).map_err(|e| Error::io(dump, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut read_err = None;
    let triples = std::iter::from_fn(|| loop {
        match lines.next()? {
            Ok(l) => {
                if let Some(t) = parse_conceptnet_line(&l) {
                    return Some(t);
                }
            }
            Err(e) => {
                read_err = Some(e);
                return None;
            }
        }
    });
    let (corpus, stats) = ingest_conceptnet(triples, &allowed, min_tail)?;
    if let Some(e) = read_err {
        return Err(Error::io(dump, e));
    }
    write_corpus(ctx, &corpus)?;
    let mut t = Table::new(["statistic", "value"]);
    for (k, v) in [
        ("triples_read", stats.triples_read),
        (
            "triples_after_relation_filter",
            stats.triples_after_relation_filter,
        ),
        ("triples_after_tail_filter", stats.triples_after_tail_filter),
        ("concepts", stats.concepts),
        ("properties", stats.properties),
        ("facets", stats.facets),
        ("cp_pairs", stats.cp_pairs),
        ("pf_pairs", stats.pf_pairs),
    ] {
        t.push(vec![k.into(), v.to_string()]);
    }
    print!("{}", t.to_text());
    ctx.table(&t, "ingest_stats")
}

fn ingest_pairs_cmd(ctx: &mut Ctx, args: &CorpusArgs) -> Result<()> {
    let corpus = load_corpus(ctx, args)?;
    write_corpus(ctx, &corpus)?;
    let mut t = Table::new(["statistic", "value"]);
    for (k, v) in [
        ("concepts", corpus.concepts().len()),
        ("properties", corpus.properties().len()),
        ("facets", corpus.facets().len()),
        ("cp_pairs", corpus.cp_pairs().len()),
        ("pf_pairs", corpus.pf_pairs().len()),
        (
            "properties_without_facet",
            corpus.properties_without_facet().len(),
        ),
    ] {
        t.push(vec![k.into(), v.to_string()]);
    }
    print!("{}", t.to_text());
    ctx.table(&t, "ingest_stats")
}

struct Hyper {
    dim: usize,
    hidden: usize,
    train: TrainConfig,
    loss: LossConfig,
}

fn resolve_hyper(ctx: &mut Ctx, h: &HyperArgs) -> Result<Hyper> {
    let s = &mut ctx.settings;
    let d = TrainConfig::default();
    let l = LossConfig::default();
    let mode = match s.resolve_enum("mode", h.mode, ModeArg::Faceted)? {
        ModeArg::Faceted => LossMode::Faceted,
        ModeArg::Baseline => LossMode::Baseline,
    };
    let dim = s.resolve("dim", h.dim, 64usize)?;
    let hidden = s.resolve("hidden", h.hidden, 64usize)?;
    let optimizer = match s.resolve_enum("optimizer", h.optimizer, OptimizerArg::Adam)? {
        OptimizerArg::Adam => Optimizer::adam(),
        OptimizerArg::Sgd => Optimizer::Sgd,
    };
    let train = TrainConfig {
        lr: s.resolve("lr", h.lr, d.lr)?,
        batch_size: s.resolve("batch_size", h.batch_size, d.batch_size)?,
        max_epochs: s.resolve("max_epochs", h.max_epochs, d.max_epochs)?,
        patience: s.resolve("patience", h.patience, d.patience)?,
        optimizer,
        loss_mode: mode,
        seed: ctx.seed,
        pf_batches_per_step: s.resolve("pf_batches_per_step", None, d.pf_batches_per_step)?,
    };
    let loss = LossConfig {
        tau: s.resolve("tau", h.tau, l.tau)?,
        n_neg_cp: s.resolve("n_neg_cp", h.n_neg_cp, l.n_neg_cp)?,
        n_neg_pf: s.resolve("n_neg_pf", h.n_neg_pf, l.n_neg_pf)?,
        mask_eps: s.resolve("mask_eps", None, l.mask_eps)?,
    };
    train.validate()?;
    loss.validate()?;
    Ok(Hyper {
        dim,
        hidden,
        train,
        loss,
    })
}

/// Labeled pairs whose items are all in the corpus vocabulary.
fn known_labeled(corpus: &TrainingCorpus, path: &Path) -> Result<Vec<LabeledPair>> {
    let frag = load_pair_file(path, PairFormat::Labeled)?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for ((c, p), &label) in frag.pairs.iter().zip(&frag.labels) {
        match (corpus.concepts().lookup(c), corpus.properties().lookup(p)) {
            (Some(concept), Some(property)) => out.push(LabeledPair {
                concept,
                property,
                label,
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!(
            "{}: {dropped} pairs mention items outside the corpus and were dropped",
            path.display()
        );
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no usable validation pairs",
            path.display()
        )));
    }
    Ok(out)
}

/// Moves a seeded share of the cp pairs into a validation set, each held-out
/// positive paired with one sampled negative.
fn holdout(corpus: &TrainingCorpus, seed: u64) -> Result<(TrainingCorpus, Vec<LabeledPair>)> {
    let mut pairs = corpus.cp_pairs().to_vec();
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(
            "need at least 2 cp pairs to hold out validation data".into(),
        ));
    }
    let n_val = ((pairs.len() as f64 * HOLDOUT_FRACTION) as usize).clamp(1, HOLDOUT_CAP);
    let mut rng = seeded_rng(seed);
    pairs.shuffle(&mut rng);
    let (held, kept) = pairs.split_at(n_val);
    let negatives = sample_negatives(corpus, held, 1, &mut rng)?;
    let mut validation: Vec<LabeledPair> = held
        .iter()
        .map(|&(concept, property)| LabeledPair {
            concept,
            property,
            label: true,
        })
        .collect();
    validation.extend(negatives.into_iter().map(|(concept, property)| LabeledPair {
        concept,
        property,
        label: false,
    }));
    Ok((corpus.with_cp_pairs(kept)?, validation))
}

fn train_cmd(ctx: &mut Ctx, a: &TrainCmd) -> Result<()> {
    let hyper = resolve_hyper(ctx, &a.hyper)?;
    let corpus = load_corpus(ctx, &a.corpus)?;
    let (train_corpus, validation) = match &a.validation {
        Some(p) => {
            ctx.input(p)?;
            (corpus.clone(), known_labeled(&corpus, p)?)
        }
        None => {
            ctx.manifest.seeds.insert("holdout".into(), ctx.seed);
            holdout(&corpus, ctx.seed)?
        }
    };
    let params = init_params(&corpus, hyper.dim, hyper.hidden, &mut seeded_rng(ctx.seed))?;
    let (best, report) = train(&train_corpus, params, &hyper.train, &hyper.loss, &validation)?;
    let ck = ctx.out("checkpoint.fcsp");
    save_checkpoint(&best, &ck)?;
    let rp = ctx.out("train_report.jsonl");
    let f = File::create(&rp).map_err(|e| Error::io(&rp, e))?;
    report
        .write_jsonl(std::io::BufWriter::new(f))
        .map_err(|e| Error::io(&rp, e))?;

    let mut t = Table::new(["field", "value"]);
    t.push(vec![
        "validation_metric".into(),
        format!("{:?}", report.metric).to_lowercase(),
    ]);
    t.push(vec!["epochs_run".into(), report.epochs.len().to_string()]);
    t.push(vec!["best_epoch".into(), report.best_epoch.to_string()]);
    t.push(vec!["best_metric".into(), fmt4(report.best_metric)]);
    t.push(vec![
        "stop_reason".into(),
        format!("{:?}", report.stop_reason).to_lowercase(),
    ]);
    print!("{}", t.to_text());
    ctx.table(&t, "train_summary")
}

fn property_ids(corpus: &TrainingCorpus, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            corpus
                .properties()
                .lookup(n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown property '{n}'")))
        })
        .collect()
}

fn facet_table(dec: &FacetDecomposition, space: &EmbeddingSpace) -> Table {
    let mut t = Table::new(["facet", "size", "members"]);
    for j in 0..dec.k {
        let members = dec.members(j);
        let shown: Vec<&str> = members
            .iter()
            .take(5)
            .map(|&p| space.properties.name(p))
            .collect();
        let mut text = shown.join(", ");
        if members.len() > 5 {
            text.push_str(", ...");
        }
        t.push(vec![j.to_string(), members.len().to_string(), text]);
    }
    t
}

fn extract_cmd(ctx: &mut Ctx, a: &ExtractCmd) -> Result<()> {
    let k = ctx.settings.resolve("k", a.k, DEFAULT_K)?;
    let normalize = ctx
        .settings
        .resolve("normalize", a.normalize.then_some(true), false)?;
    let (corpus, space) = load_model(ctx, &a.checkpoint, &a.corpus)?;
    let props = match &a.properties {
        Some(p) => {
            let names = read_list(ctx, p)?;
            property_ids(&corpus, &names)?
        }
        None => (0..corpus.properties().len()).collect(),
    };
    ctx.manifest.seeds.insert("kmeans".into(), ctx.seed);
    let opts = DecomposeOptions {
        normalize,
        ..DecomposeOptions::default()
    };
    let dec = decompose(&space, &props, k, ctx.seed, &opts)?;
    if dec.repairs > 0 {
        warn!("k-means repaired {} empty clusters", dec.repairs);
    }
    let path = ctx.out("facets.json");
    save_decomposition(&dec, &space, &path)?;
    let t = facet_table(&dec, &space);
    print!("{}", t.to_text());
    ctx.table(&t, "facets_summary")
}

fn resolve_decomposition(
    ctx: &mut Ctx,
    space: &EmbeddingSpace,
    fa: &FacetArgs,
) -> Result<FacetDecomposition> {
    match &fa.facets {
        Some(p) => {
            ctx.input(p)?;
            load_decomposition(p, space)
        }
        None => {
            let k = ctx.settings.resolve("k", fa.k, DEFAULT_K)?;
            let normalize = ctx
                .settings
                .resolve("normalize", fa.normalize.then_some(true), false)?;
            ctx.manifest.seeds.insert("kmeans".into(), ctx.seed);
            let opts = DecomposeOptions {
                normalize,
                ..DecomposeOptions::default()
            };
            let props: Vec<usize> = (0..space.properties.len()).collect();
            decompose(space, &props, k, ctx.seed, &opts)
        }
    }
}

fn outlier_build_cmd(
    ctx: &mut Ctx,
    facts: &[PathBuf],
    groups: &Path,
    properties: Option<&Path>,
    n_instances: Option<usize>,
) -> Result<()> {
    let n = ctx.settings.resolve("n_instances", n_instances, 100usize)?;
    let mut db = PropertyDB::new();
    for f in facts {
        ctx.input(f)?;
        db.load_facts(f)?;
    }
    ctx.input(groups)?;
    db.load_groups(groups)?;
    db.validate()?;
    let props: Vec<String> = match properties {
        Some(p) => read_list(ctx, p)?,
        None => db.grouped_properties().into_iter().map(String::from).collect(),
    };
    if props.is_empty() {
        return Err(Error::EmptyInput("no properties to build instances for".into()));
    }
    ctx.manifest.seeds.insert("benchmark".into(), ctx.seed);
    let instances = build_benchmark(&db, &props, n, ctx.seed)?;
    let path = ctx.out("benchmark.jsonl");
    write_benchmark(&path, &instances)?;
    let mut t = Table::new(["property", "instances"]);
    for p in &props {
        let c = instances.iter().filter(|i| &i.property == p).count();
        t.push(vec![p.clone(), c.to_string()]);
    }
    print!("{}", t.to_text());
    ctx.table(&t, "benchmark_summary")
}

fn outlier_run_cmd(
    ctx: &mut Ctx,
    benchmark: &Path,
    checkpoint: &Path,
    corpus_args: &CorpusArgs,
    fa: &FacetArgs,
    strategy: Option<StrategyArg>,
) -> Result<()> {
    let strategy = ctx
        .settings
        .resolve_enum("strategy", strategy, StrategyArg::Both)?;
    let mask_eps = ctx
        .settings
        .resolve("mask_eps", None, LossConfig::default().mask_eps)?;
    ctx.input(benchmark)?;
    let instances = read_benchmark(benchmark)?;
    if instances.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no instances",
            benchmark.display()
        )));
    }
    let (_, space) = load_model(ctx, checkpoint, corpus_args)?;
    let single = match strategy {
        StrategyArg::Single | StrategyArg::Both => {
            let vecs = FacetedConceptVecs::single(space.concept_vecs.clone());
            Some(evaluate_outliers(&instances, &vecs, &space.concepts)?)
        }
        StrategyArg::Multi => None,
    };
    let multi = match strategy {
        StrategyArg::Multi | StrategyArg::Both => {
            let dec = resolve_decomposition(ctx, &space, fa)?;
            let vecs = faceted_concept_vecs(&space, &dec, mask_eps);
            Some(evaluate_outliers(&instances, &vecs, &space.concepts)?)
        }
        StrategyArg::Single => None,
    };
    let mut headers = vec!["property", "instances"];
    if single.is_some() {
        headers.push("single");
    }
    if multi.is_some() {
        headers.push("multi");
    }
    let mut t = Table::new(headers);
    let base: &[PropertyScore] = single.as_deref().or(multi.as_deref()).unwrap_or(&[]);
    let mean = |s: &[PropertyScore]| s.iter().map(|x| x.exact_match).sum::<f64>() / s.len() as f64;
    for (i, row) in base.iter().enumerate() {
        let mut cells = vec![row.property.clone(), row.instances.to_string()];
        for scores in [&single, &multi].into_iter().flatten() {
            cells.push(fmt4(scores[i].exact_match));
        }
        t.push(cells);
    }
    let mut cells = vec!["mean".to_string(), instances.len().to_string()];
    for scores in [&single, &multi].into_iter().flatten() {
        cells.push(fmt4(mean(scores)));
    }
    t.push(cells);
    print!("{}", t.to_text());
    ctx.table(&t, "outlier_results")
}

fn concept_ids(corpus: &TrainingCorpus, names: &[String]) -> Result<Vec<usize>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in names {
        let id = corpus
            .concepts()
            .lookup(n)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown concept '{n}'")))?;
        if seen.insert(id) {
            out.push(id);
        }
    }
    Ok(out)
}

fn cluster_cmd(ctx: &mut Ctx, a: &ClusterCmd) -> Result<()> {
    let mode = ctx.settings.resolve_enum("mode", a.mode, ClusterModeArg::Mclu)?;
    let q = ctx.settings.resolve("preference", a.preference, 0.5f64)?;
    let kind =
        ctx.settings
            .resolve_enum("preference_kind", a.preference_kind, PreferenceKindArg::Quantile)?;
    let d = AffinityConfig::default();
    let cfg = AffinityConfig {
        preference: match kind {
            PreferenceKindArg::Quantile => Preference::Quantile(q),
            PreferenceKindArg::Value => Preference::Value(q),
        },
        damping: ctx.settings.resolve("damping", a.damping, d.damping)?,
        max_iters: ctx.settings.resolve("max_iters", a.max_iters, d.max_iters)?,
        convergence_window: ctx
            .settings
            .resolve("convergence_window", None, d.convergence_window)?,
        seed: ctx.seed,
    };
    let format = match ctx.settings.resolve_enum("format", a.format, FormatArg::Rules)? {
        FormatArg::Rules => AugmentFormat::Rules,
        FormatArg::Labels => AugmentFormat::Labels,
    };
    let stem = if format == AugmentFormat::Rules {
        "rules"
    } else {
        "labels"
    };
    let skip = ctx
        .settings
        .resolve("skip_singletons", a.skip_singletons.then_some(true), false)?;
    let mask_eps = ctx
        .settings
        .resolve("mask_eps", None, LossConfig::default().mask_eps)?;
    let (corpus, space) = load_model(ctx, &a.checkpoint, &a.corpus)?;
    let concepts = match &a.concepts {
        Some(p) => {
            let names = read_list(ctx, p)?;
            concept_ids(&corpus, &names)?
        }
        None => (0..corpus.concepts().len()).collect(),
    };
    if concepts.is_empty() {
        return Err(Error::EmptyInput("no concepts to cluster".into()));
    }
    ctx.manifest.seeds.insert("affinity_noise".into(), ctx.seed);
    let names = corpus.concepts().items();
    let mut t = Table::new(["facet", "items", "clusters", "iterations", "converged"]);
    let row = |fc: &crate::evaltasks::FacetClustering, label: String| {
        vec![
            label,
            fc.items.len().to_string(),
            fc.clustering.exemplars.len().to_string(),
            fc.clustering.iterations.to_string(),
            fc.clustering.converged.to_string(),
        ]
    };
    match mode {
        ClusterModeArg::Clu => {
            let fc = clu(&space.concept_vecs, &concepts, &cfg)?;
            let path = ctx.out(&format!("{stem}.txt"));
            write_augmentation(&path, &fc, names, format, skip)?;
            t.push(row(&fc, "-".into()));
        }
        ClusterModeArg::Mclu => {
            let dec = resolve_decomposition(ctx, &space, &a.facet)?;
            let faceted = faceted_concept_vecs(&space, &dec, mask_eps);
            let res = mclu(&faceted, &concepts, &cfg);
            for j in 0..faceted.k() {
                let path = ctx.out(&format!("{stem}_facet_{j}.txt"));
                match res.clusterings.iter().find(|fc| fc.facet == Some(j)) {
                    Some(fc) => {
                        write_augmentation(&path, fc, names, format, skip)?;
                        t.push(row(fc, j.to_string()));
                    }
                    None => {
                        std::fs::write(&path, "").map_err(|e| Error::io(&path, e))?;
                        t.push(vec![
                            j.to_string(),
                            "0".into(),
                            "0".into(),
                            "0".into(),
                            "skipped".into(),
                        ]);
                    }
                }
            }
            for w in &res.warnings {
                warn!("{w}");
            }
            let wp = ctx.out("cluster_warnings.txt");
            let mut text = res.warnings.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            std::fs::write(&wp, text).map_err(|e| Error::io(&wp, e))?;
        }
    }
    print!("{}", t.to_text());
    ctx.table(&t, "cluster_summary")
}

fn eval_cmd(ctx: &mut Ctx, a: &EvalCmd) -> Result<()> {
    let hyper = resolve_hyper(ctx, &a.hyper)?;
    let split = ctx.settings.resolve_enum("split", a.split, SplitArg::Concept)?;
    let threshold = ctx.settings.resolve("threshold", a.threshold, 0.5f64)?;
    let base = load_corpus(ctx, &a.corpus)?;

    ctx.input(&a.labeled)?;
    let frag = load_pair_file(&a.labeled, PairFormat::Labeled)?;
    let mut b = CorpusBuilder::from_corpus(&base);
    let labeled = b.labeled_pairs(&frag);
    let extended = b.build()?;

    let fixed = match &a.test_concepts {
        Some(p) if split == SplitArg::Concept => {
            let names = read_list(ctx, p)?;
            Some(concept_ids(&extended, &names)?)
        }
        Some(_) => {
            return Err(Error::InvalidArgument(
                "--test-concepts applies to the concept split only".into(),
            ))
        }
        None => None,
    };
    let default_folds = match split {
        SplitArg::Concept if fixed.is_some() => 1,
        SplitArg::Cpp => 3,
        _ => 5,
    };
    let folds = ctx.settings.resolve("folds", a.folds, default_folds)?;
    let mode = match split {
        SplitArg::Concept => SplitMode::Concept,
        SplitArg::Property => SplitMode::Property,
        SplitArg::Cpp => SplitMode::ConceptPlusProperty,
    };
    let mut spec = SplitSpec::new(mode, folds, ctx.seed);
    spec.fixed_test_concepts = fixed;
    ctx.manifest.seeds.insert("split".into(), ctx.seed);
    let splits = make_splits(&labeled, &spec)?;

    let mut rng = seeded_rng(ctx.seed);
    let params = match &a.checkpoint {
        Some(p) => {
            ctx.input(p)?;
            let mut params = load_checkpoint(p, &base)?;
            params.extend_to(&extended, &mut rng)?;
            params
        }
        None => init_params(&extended, hyper.dim, hyper.hidden, &mut rng)?,
    };

    let mut t = Table::new(["fold", "train", "test", "precision", "recall", "f1"]);
    let mut f1s = Vec::new();
    for fold in &splits {
        let mut pairs = base.cp_pairs().to_vec();
        pairs.extend(
            fold.train
                .iter()
                .filter(|p| p.label)
                .map(|p| (p.concept, p.property)),
        );
        let corpus = extended.with_cp_pairs(&pairs)?;
        let validation = if fold.validation.is_empty() {
            &fold.train
        } else {
            &fold.validation
        };
        let (best, report) = train(&corpus, params.clone(), &hyper.train, &hyper.loss, validation)?;
        info!(
            "fold {}: best epoch {} of {}",
            fold.name,
            report.best_epoch,
            report.epochs.len()
        );
        let prf = eval_f1(
            &best,
            &fold.test,
            hyper.train.loss_mode,
            threshold,
            hyper.loss.mask_eps,
        )?;
        f1s.push(prf.f1);
        t.push(vec![
            fold.name.clone(),
            fold.train.len().to_string(),
            fold.test.len().to_string(),
            fmt4(prf.precision),
            fmt4(prf.recall),
            fmt4(prf.f1),
        ]);
    }
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    t.push(vec![
        "mean".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt4(mean),
    ]);
    let stem = match split {
        SplitArg::Concept => "eval_concept",
        SplitArg::Property => "eval_property",
        SplitArg::Cpp => "eval_cpp",
    };
    print!("{}", t.to_text());
    ctx.table(&t, stem)
}

fn neighbours_cmd(ctx: &mut Ctx, a: &NeighboursCmd) -> Result<()> {
    let top_n = ctx.settings.resolve("top_n", a.top_n, 10usize)?;
    let mask_eps = ctx
        .settings
        .resolve("mask_eps", None, LossConfig::default().mask_eps)?;
    let (corpus, space) = load_model(ctx, &a.checkpoint, &a.corpus)?;
    let c = corpus
        .concepts()
        .lookup(&a.concept)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown concept '{}'", a.concept)))?;
    let ranked = match a.facet {
        Some(j) => {
            let dec = resolve_decomposition(ctx, &space, &a.facets)?;
            let faceted = faceted_concept_vecs(&space, &dec, mask_eps);
            facet_neighbours(&faceted, c, j, top_n)?
        }
        None => facet_neighbours(
            &FacetedConceptVecs::single(space.concept_vecs.clone()),
            c,
            0,
            top_n,
        )?,
    };
    let mut t = Table::new(["rank", "concept", "cosine"]);
    for (i, (n, s)) in ranked.iter().enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            corpus.concepts().name(*n).to_string(),
            fmt4(*s),
        ]);
    }
    print!("{}", t.to_text());
    ctx.table(&t, "neighbours")
}
