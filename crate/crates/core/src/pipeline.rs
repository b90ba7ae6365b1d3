//! Command implementations behind the CLI.
//!
//! Each command reads its inputs from the configured output directory
//! (or the raw log for ingest), does its work through the library
//! modules, and atomically writes its outputs. Commands rebuild graphs
//! from session files instead of parsing graph dumps: construction is
//! deterministic and cheap at supported scales, and it keeps vocabulary
//! order identical across commands by construction.
//!
//! Fixed file names under the output directory:
//!   sessions_<view>.tsv   attrs_<view>.tsv     test_truth.tsv
//!   edges_<view>.tsv      vocab_<view>.tsv     links_<relation>.tsv
//!   table_<view>.txt/.bin meta.txt             history.csv
//!   eval.csv  similar.tsv  metric.txt  metric_history.csv  novelty.csv

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::{
    read_meta, read_metric_model, read_table_text, write_atomic, write_history, write_meta,
    write_metric_model, write_similarity_map, write_table_binary, write_table_text,
};
use crate::config::PipelineConfig;
use crate::diversity::{
    generate_pairs, metric_neighbors, novelty_at_k, recent_history_categories,
    train_metric, FrozenEmbeddings, MetricModel,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, topk_similar, EvalResult};
use crate::graph::{build_cross_links, build_view_graph, index_sequences, ViewGraph, Vocab};
use crate::ingest::{
    clean_events, derive_view_sessions, parse_events, read_sessions, sessionize_user,
    write_sessions, AttributeMap, MissingAttr, Schema, Session,
};
use crate::sampler::random_walks;
use crate::training::{derive_seed, train, EmbeddingTable};
use crate::types::{Relation, View};

// Seed streams above the ranges training itself uses.
const STREAM_WALKS: u64 = 0x50;
const STREAM_METRIC_PAIRS: u64 = 0x60;
const STREAM_METRIC_TRAIN: u64 = 0x61;

pub fn sessions_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("sessions_{view}.tsv"))
}
pub fn attrs_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("attrs_{view}.tsv"))
}
pub fn truth_path(out: &Path) -> PathBuf {
    out.join("test_truth.tsv")
}
pub fn edges_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("edges_{view}.tsv"))
}
pub fn vocab_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("vocab_{view}.tsv"))
}
pub fn links_path(out: &Path, relation: Relation) -> PathBuf {
    out.join(format!("links_{relation}.tsv"))
}
pub fn table_text_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("table_{view}.txt"))
}
pub fn table_bin_path(out: &Path, view: View) -> PathBuf {
    out.join(format!("table_{view}.bin"))
}
pub fn meta_path(out: &Path) -> PathBuf {
    out.join("meta.txt")
}
pub fn history_path(out: &Path) -> PathBuf {
    out.join("history.csv")
}
pub fn eval_csv_path(out: &Path) -> PathBuf {
    out.join("eval.csv")
}
pub fn similar_path(out: &Path) -> PathBuf {
    out.join("similar.tsv")
}
pub fn metric_model_path(out: &Path) -> PathBuf {
    out.join("metric.txt")
}
pub fn metric_history_path(out: &Path) -> PathBuf {
    out.join("metric_history.csv")
}
pub fn novelty_path(out: &Path) -> PathBuf {
    out.join("novelty.csv")
}

fn open_buf(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path.display(), e))?,
    ))
}

pub fn read_sessions_file(path: &Path) -> Result<Vec<Session>> {
    read_sessions(open_buf(path)?, path)
}

/// `item_id<TAB>attr_id` per line.
pub fn write_attrs(mut w: impl Write, attrs: &AttributeMap) -> Result<()> {
    for (item, attr) in attrs.iter() {
        writeln!(w, "{item}\t{attr}").map_err(|e| Error::io("<attrs>", e))?;
    }
    Ok(())
}

pub fn read_attrs(path: &Path, view: View) -> Result<AttributeMap> {
    let mut attrs = AttributeMap::new(view);
    for (no, line) in open_buf(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.is_empty() {
            continue;
        }
        let Some((item, attr)) = line.split_once('\t') else {
            return Err(Error::Data(format!(
                "{}:{}: expected item<TAB>attr",
                path.display(),
                no + 1
            )));
        };
        attrs.insert(item, attr)?;
    }
    Ok(attrs)
}

/// `user_id<TAB>item_id` per line, one line per ground-truth item.
pub fn write_truth(mut w: impl Write, truth: &BTreeMap<String, BTreeSet<String>>) -> Result<()> {
    for (user, items) in truth {
        for item in items {
            writeln!(w, "{user}\t{item}").map_err(|e| Error::io("<truth>", e))?;
        }
    }
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut truth: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (no, line) in open_buf(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.is_empty() {
            continue;
        }
        let Some((user, item)) = line.split_once('\t') else {
            return Err(Error::Data(format!(
                "{}:{}: expected user<TAB>item",
                path.display(),
                no + 1
            )));
        };
        truth.entry(user.to_string()).or_default().insert(item.to_string());
    }
    Ok(truth)
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display(), e))
}

#[derive(Debug)]
pub struct IngestSummary {
    pub users: usize,
    pub events: u64,
    pub rows_skipped: u64,
    pub sessions: BTreeMap<View, usize>,
    /// Items dropped from derived sessions for lack of an attribute.
    pub missing_attr: BTreeMap<View, u64>,
    pub test_users: usize,
    pub test_items: usize,
}

/// Parse the raw log, sessionize per user, derive non-item views, and
/// write session/attribute files. With `split.cutoff` set, events at or
/// after the cutoff become per-user ground truth instead of sessions.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let log = cfg
        .input_log
        .as_ref()
        .ok_or_else(|| Error::Config("input.log is required for ingest".into()))?;
    let schema = Schema::from_column_list(&cfg.input_columns, cfg.input_delimiter)?;
    let (by_user, rows_skipped) = parse_events(open_buf(log)?, &schema)?;
    ensure_out_dir(cfg)?;

    let mut attrs: BTreeMap<View, AttributeMap> = BTreeMap::new();
    for &view in cfg.views.iter().filter(|&&v| v != View::Item) {
        attrs.insert(
            view,
            AttributeMap::from_events(by_user.values().flatten(), view)?,
        );
    }

    let mut item_sessions: Vec<Session> = Vec::new();
    let mut truth: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut events = 0u64;
    for (user, user_events) in &by_user {
        events += user_events.len() as u64;
        let split = match cfg.split_cutoff {
            Some(cut) => user_events.partition_point(|e| e.timestamp < cut),
            None => user_events.len(),
        };
        item_sessions.extend(sessionize_user(&user_events[..split], &cfg.session, None));
        let test = &user_events[split..];
        if !test.is_empty() {
            let items: BTreeSet<String> = clean_events(test, &cfg.session)
                .into_iter()
                .map(|e| e.item_id)
                .collect();
            if !items.is_empty() {
                truth.insert(user.clone(), items);
            }
        }
    }

    let mut sessions_per_view = BTreeMap::from([(View::Item, item_sessions.len())]);
    let mut missing_attr = BTreeMap::new();
    write_atomic(&sessions_path(&cfg.out_dir, View::Item), |w| {
        write_sessions(w, &item_sessions)
    })?;
    for (&view, map) in &attrs {
        let (derived, dropped) = derive_view_sessions(&item_sessions, map, MissingAttr::SkipItem)?;
        sessions_per_view.insert(view, derived.len());
        missing_attr.insert(view, dropped);
        write_atomic(&sessions_path(&cfg.out_dir, view), |w| {
            write_sessions(w, &derived)
        })?;
        write_atomic(&attrs_path(&cfg.out_dir, view), |w| write_attrs(w, map))?;
    }
    if cfg.split_cutoff.is_some() {
        write_atomic(&truth_path(&cfg.out_dir), |w| write_truth(w, &truth))?;
    }
    Ok(IngestSummary {
        users: by_user.len(),
        events,
        rows_skipped,
        sessions: sessions_per_view,
        missing_attr,
        test_users: truth.len(),
        test_items: truth.values().map(|s| s.len()).sum(),
    })
}

/// Session files for every declared view, plus attribute maps for every
/// relation target. The base of train, metric-train and novelty-eval.
struct LoadedCorpus {
    sessions: BTreeMap<View, Vec<Session>>,
    graphs: BTreeMap<View, ViewGraph>,
    attrs: BTreeMap<View, AttributeMap>,
}

fn load_corpus(cfg: &PipelineConfig) -> Result<LoadedCorpus> {
    let mut sessions = BTreeMap::new();
    let mut graphs = BTreeMap::new();
    for &view in &cfg.views {
        let s = read_sessions_file(&sessions_path(&cfg.out_dir, view))?;
        if s.is_empty() {
            return Err(Error::Data(format!(
                "no {view} sessions in {}; run ingest first",
                cfg.out_dir.display()
            )));
        }
        graphs.insert(view, build_view_graph(view, &s, true)?);
        sessions.insert(view, s);
    }
    let mut attrs = BTreeMap::new();
    for rel in &cfg.relations {
        if !attrs.contains_key(&rel.to) {
            attrs.insert(rel.to, read_attrs(&attrs_path(&cfg.out_dir, rel.to), rel.to)?);
        }
    }
    Ok(LoadedCorpus {
        sessions,
        graphs,
        attrs,
    })
}

fn build_links(
    cfg: &PipelineConfig,
    corpus: &LoadedCorpus,
) -> Result<BTreeMap<Relation, crate::graph::CrossViewLinks>> {
    let item_vocab = &corpus.graphs[&View::Item].vocab;
    let mut links = BTreeMap::new();
    for rel in &cfg.relations {
        links.insert(
            *rel,
            build_cross_links(
                &corpus.sessions[&View::Item],
                &corpus.attrs[&rel.to],
                item_vocab,
                &corpus.graphs[&rel.to].vocab,
            )?,
        );
    }
    Ok(links)
}

#[derive(Debug)]
pub struct GraphSummary {
    /// view -> (nodes, distinct edges, total weight)
    pub views: BTreeMap<View, (usize, usize, u64)>,
    /// relation -> (linked items, observations)
    pub links: BTreeMap<Relation, (usize, u64)>,
}

/// Export co-occurrence graph and cross-view link dumps for inspection.
pub fn cmd_build_graph(cfg: &PipelineConfig) -> Result<GraphSummary> {
    let corpus = load_corpus(cfg)?;
    let mut views = BTreeMap::new();
    for (&view, graph) in &corpus.graphs {
        write_atomic(&edges_path(&cfg.out_dir, view), |w| graph.write_edges(w))?;
        write_atomic(&vocab_path(&cfg.out_dir, view), |w| graph.write_vocab(w))?;
        views.insert(
            view,
            (graph.vocab.len(), graph.distinct_edges(), graph.total_weight()),
        );
    }
    let links = build_links(cfg, &corpus)?;
    let mut link_stats = BTreeMap::new();
    for (rel, l) in &links {
        let from_vocab = &corpus.graphs[&rel.from].vocab;
        let to_vocab = &corpus.graphs[&rel.to].vocab;
        write_atomic(&links_path(&cfg.out_dir, *rel), |w| {
            l.write_links(from_vocab, to_vocab, w)
        })?;
        link_stats.insert(*rel, (l.pairs.len(), l.total_observations()));
    }
    Ok(GraphSummary {
        views,
        links: link_stats,
    })
}

#[derive(Debug)]
pub struct TrainSummary {
    pub views: Vec<View>,
    pub relations: Vec<Relation>,
    pub history_records: usize,
    /// Set when training stopped early; the retained checkpoint is
    /// still written and the process should exit with code 2.
    pub diverged: Option<String>,
}

/// Train all tasks and write the checkpoint (tables in both formats,
/// transform/log-variance metadata, loss history). On divergence the
/// last finite model is still written and `diverged` reports why.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let corpus = load_corpus(cfg)?;
    let links = build_links(cfg, &corpus)?;
    let mut sequences: BTreeMap<View, Vec<Vec<u32>>> = BTreeMap::new();
    for (&view, graph) in &corpus.graphs {
        let seqs = match cfg.sampler.walks {
            Some(params) => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    STREAM_WALKS + view as u64,
                ));
                random_walks(graph, params, &mut rng)
            }
            None => index_sequences(&corpus.sessions[&view], &graph.vocab)?,
        };
        sequences.insert(view, seqs);
    }
    let outcome = train(
        &sequences,
        &corpus.graphs,
        &links,
        &cfg.sampler,
        &cfg.train,
        &cfg.optimizer,
        cfg.seed,
    )?;
    let model = &outcome.model;
    for (view, table) in &model.tables {
        let vocab = &model.vocabs[view];
        write_atomic(&table_text_path(&cfg.out_dir, *view), |w| {
            write_table_text(w, table, vocab)
        })?;
        write_atomic(&table_bin_path(&cfg.out_dir, *view), |w| {
            write_table_binary(w, table, vocab)
        })?;
    }
    write_atomic(&meta_path(&cfg.out_dir), |w| {
        write_meta(w, &model.transforms, &model.uncertainties)
    })?;
    write_atomic(&history_path(&cfg.out_dir), |w| {
        write_history(w, &model.history)
    })?;
    Ok(TrainSummary {
        views: model.tables.keys().copied().collect(),
        relations: model.transforms.keys().copied().collect(),
        history_records: model.history.len(),
        diverged: outcome.diverged,
    })
}

fn load_item_table(cfg: &PipelineConfig) -> Result<(EmbeddingTable, Vocab)> {
    let path = table_text_path(&cfg.out_dir, View::Item);
    read_table_text(open_buf(&path)?, &path)
}

/// Score retrieval of held-out interactions and write the metric CSV.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalResult> {
    let (table, vocab) = load_item_table(cfg)?;
    let sessions = read_sessions_file(&sessions_path(&cfg.out_dir, View::Item))?;
    let tpath = truth_path(&cfg.out_dir);
    if !tpath.exists() {
        return Err(Error::Config(format!(
            "{} not found; rerun ingest with split.cutoff to hold out test interactions",
            tpath.display()
        )));
    }
    let truth = read_truth(&tpath)?;
    let result = evaluate(&table, &vocab, &sessions, &truth, &cfg.eval)?;
    write_atomic(&eval_csv_path(&cfg.out_dir), |w| {
        result.write_csv(cfg.eval.k, w)
    })?;
    Ok(result)
}

/// Exact top-k inner-product neighbors for every item, written as an
/// item-to-item similarity map. Each trigger excludes itself.
pub fn cmd_similar(cfg: &PipelineConfig, k: usize) -> Result<usize> {
    let (table, vocab) = load_item_table(cfg)?;
    let entries: Vec<(String, Vec<(String, f64)>)> = (0..vocab.len() as u32)
        .into_par_iter()
        .map(|trigger| {
            let exclude: HashSet<u32> = [trigger].into_iter().collect();
            let neighbors = topk_similar(table.input_row(trigger), &table, k, &exclude)
                .into_iter()
                .map(|(i, score)| (vocab.id(i).to_string(), score))
                .collect();
            (vocab.id(trigger).to_string(), neighbors)
        })
        .collect();
    write_atomic(&similar_path(&cfg.out_dir), |w| {
        write_similarity_map(w, &entries)
    })?;
    Ok(entries.len())
}

fn load_frozen(cfg: &PipelineConfig) -> Result<(EmbeddingTable, Vocab, FrozenEmbeddings)> {
    let (table, vocab) = load_item_table(cfg)?;
    let mpath = meta_path(&cfg.out_dir);
    let (transforms, _) = read_meta(open_buf(&mpath)?, &mpath)?;
    let rel = Relation::new(View::Item, View::Category)?;
    let transform = transforms.get(&rel).ok_or_else(|| {
        Error::Config(format!(
            "checkpoint has no {rel} transform; train with that relation declared"
        ))
    })?;
    let frozen = FrozenEmbeddings::from_model(&table, transform)?;
    Ok((table, vocab, frozen))
}

#[derive(Debug)]
pub struct MetricSummary {
    pub positives: usize,
    pub negatives: usize,
    pub batches: usize,
    pub final_loss: f64,
}

/// Learn the diversity metric on frozen embeddings and write its
/// checkpoint plus a per-batch loss history.
pub fn cmd_metric_train(cfg: &PipelineConfig) -> Result<MetricSummary> {
    let (_, vocab, frozen) = load_frozen(cfg)?;
    let sessions = read_sessions_file(&sessions_path(&cfg.out_dir, View::Item))?;
    let attrs = read_attrs(&attrs_path(&cfg.out_dir, View::Category), View::Category)?;
    let pairs = generate_pairs(
        &sessions,
        &vocab,
        &attrs,
        &cfg.metric,
        derive_seed(cfg.seed, STREAM_METRIC_PAIRS),
    )?;
    let positives = pairs.iter().filter(|p| p.label).count();
    let init = MetricModel::identity(frozen.dim, frozen.rel_dim, cfg.metric.margin);
    let outcome = train_metric(
        init,
        &frozen,
        &pairs,
        &cfg.metric,
        &cfg.optimizer,
        derive_seed(cfg.seed, STREAM_METRIC_TRAIN),
    )?;
    write_atomic(&metric_model_path(&cfg.out_dir), |w| {
        write_metric_model(w, &outcome.model)
    })?;
    write_atomic(&metric_history_path(&cfg.out_dir), |w| {
        writeln!(w, "step,loss").map_err(|e| Error::io("<metric history>", e))?;
        for (i, loss) in outcome.losses.iter().enumerate() {
            writeln!(w, "{},{loss}", i + 1).map_err(|e| Error::io("<metric history>", e))?;
        }
        Ok(())
    })?;
    Ok(MetricSummary {
        positives,
        negatives: pairs.len() - positives,
        batches: outcome.losses.len(),
        final_loss: outcome.losses.last().copied().unwrap_or(0.0),
    })
}

#[derive(Debug)]
pub struct NoveltyReport {
    pub base: f64,
    pub metric: f64,
    pub k: usize,
    pub users: usize,
}

/// Compare category novelty of plain inner-product ranking against the
/// learned-metric ranking, at the eval cutoff K. Per user the trigger
/// is the last training item; both rankings exclude everything the
/// user already interacted with.
pub fn cmd_novelty_eval(cfg: &PipelineConfig) -> Result<NoveltyReport> {
    let (table, vocab, frozen) = load_frozen(cfg)?;
    let mpath = metric_model_path(&cfg.out_dir);
    let model = read_metric_model(open_buf(&mpath)?, &mpath)?;
    if model.dim != frozen.dim || model.rel_dim != frozen.rel_dim {
        return Err(Error::Config(format!(
            "metric model is {}x{} but embeddings are {}x{}",
            model.dim, model.rel_dim, frozen.dim, frozen.rel_dim
        )));
    }
    let sessions = read_sessions_file(&sessions_path(&cfg.out_dir, View::Item))?;
    let attrs = read_attrs(&attrs_path(&cfg.out_dir, View::Category), View::Category)?;
    let history = recent_history_categories(&sessions, &attrs, cfg.novelty_history_sessions);

    let mut by_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for s in &sessions {
        by_user.entry(&s.user_id).or_default().push(s);
    }
    let k = cfg.eval.k;
    let mut base_recs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut metric_recs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (user, sess) in &by_user {
        let mut seen: HashSet<u32> = sess
            .iter()
            .flat_map(|s| s.nodes.iter())
            .filter_map(|n| vocab.get(n))
            .collect();
        let Some(&trigger) = sess
            .last()
            .and_then(|s| s.nodes.last())
            .and_then(|n| vocab.get(n))
            .as_ref()
        else {
            continue;
        };
        seen.insert(trigger);
        let to_ids = |picks: Vec<(u32, f64)>| {
            picks
                .into_iter()
                .map(|(i, _)| vocab.id(i).to_string())
                .collect::<Vec<_>>()
        };
        base_recs.insert(
            user.to_string(),
            to_ids(topk_similar(table.input_row(trigger), &table, k, &seen)),
        );
        metric_recs.insert(
            user.to_string(),
            to_ids(metric_neighbors(&model, &frozen, trigger, k, &seen)),
        );
    }
    let report = NoveltyReport {
        base: novelty_at_k(&base_recs, &history, &attrs),
        metric: novelty_at_k(&metric_recs, &history, &attrs),
        k,
        users: base_recs.len(),
    };
    write_atomic(&novelty_path(&cfg.out_dir), |w| {
        writeln!(w, "ranking,novelty,K,N").map_err(|e| Error::io("<novelty>", e))?;
        writeln!(w, "base,{},{},{}", report.base, report.k, report.users)
            .map_err(|e| Error::io("<novelty>", e))?;
        writeln!(w, "metric,{},{},{}", report.metric, report.k, report.users)
            .map_err(|e| Error::io("<novelty>", e))?;
        Ok(())
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawConfig;
    use std::fmt::Write as _;

    /// Two category blocks of four items each. Most sessions stay in
    /// one block with an occasional bridge, so item, category and
    /// cross-view signals all exist. Users u0/u1 get post-cutoff events.
    fn demo_log() -> String {
        let cat = |i: usize| if i < 4 { "c0" } else { "c1" };
        let mut log = String::new();
        let mut ts = 1000i64;
        for u in 0..6 {
            for s in 0..4 {
                let base = if (u + s) % 2 == 0 { 0 } else { 4 };
                // Mostly one block, with a bridge into the other block.
                let walk = [base, base + 1, (base + 4) % 8, base + 2, base + 3];
                for (j, &i) in walk.iter().enumerate() {
                    // One short-dwell event per session gets cleaned; the
                    // position rotates so every item survives somewhere.
                    let dwell = if j == s { 100 } else { 5000 };
                    writeln!(
                        log,
                        "u{u}\ti{i}\t{}\ts{}\t{ts}\t{dwell}",
                        cat(i),
                        i % 2
                    )
                    .unwrap();
                    ts += 10;
                }
                ts += 7200; // always an idle split between sessions
            }
        }
        // Post-cutoff (ts >= 900000) interactions for two users.
        for (u, i) in [(0, 5), (0, 2), (1, 1)] {
            writeln!(log, "u{u}\ti{i}\t{}\ts{}\t{}\t5000", cat(i), i % 2, 900_000 + i).unwrap();
        }
        log
    }

    fn demo_config(dir: &Path) -> PipelineConfig {
        let text = format!(
            "mode = clicks\n\
             views = item,category\n\
             relations = item-category\n\
             seed = 11\n\
             input.log = {}\n\
             split.cutoff = 900000\n\
             sampler.window = 3\n\
             sampler.negatives = 4\n\
             sampler.batch_size = 64\n\
             sampler.epochs = 3\n\
             train.dim = 8\n\
             train.history_every = 5\n\
             eval.k = 3\n\
             metric.epochs = 5\n\
             paths.out = {}\n",
            dir.join("log.tsv").display(),
            dir.join("out").display(),
        );
        let raw = RawConfig::from_reader(text.as_bytes(), &PathBuf::from("<test>")).unwrap();
        raw.build().unwrap()
    }

    fn write_demo(dir: &Path) -> PipelineConfig {
        std::fs::write(dir.join("log.tsv"), demo_log()).unwrap();
        demo_config(dir)
    }

    #[test]
    fn full_pipeline_runs_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_demo(tmp.path());

        let ingest = cmd_ingest(&cfg).unwrap();
        assert_eq!(ingest.users, 6);
        assert_eq!(ingest.test_users, 2);
        assert!(ingest.sessions[&View::Item] >= 20);
        assert!(sessions_path(&cfg.out_dir, View::Category).exists());
        assert!(truth_path(&cfg.out_dir).exists());

        let graphs = cmd_build_graph(&cfg).unwrap();
        assert_eq!(graphs.views[&View::Item].0, 8);
        assert_eq!(graphs.views[&View::Category].0, 2);
        let (linked, observations) = graphs.links[&cfg.relations[0]];
        assert_eq!(linked, 8);
        assert!(observations > 0);

        let trained = cmd_train(&cfg).unwrap();
        assert!(trained.diverged.is_none());
        assert_eq!(trained.views, vec![View::Item, View::Category]);
        assert!(table_text_path(&cfg.out_dir, View::Item).exists());
        assert!(table_bin_path(&cfg.out_dir, View::Item).exists());
        assert!(meta_path(&cfg.out_dir).exists());
        assert!(history_path(&cfg.out_dir).exists());

        let eval = cmd_eval(&cfg).unwrap();
        assert_eq!(eval.n_users, 2);
        assert!(eval.precision >= 0.0 && eval.precision <= 1.0);
        assert!(eval_csv_path(&cfg.out_dir).exists());

        let lines = cmd_similar(&cfg, 3).unwrap();
        assert_eq!(lines, 8);
        let map = std::fs::read_to_string(similar_path(&cfg.out_dir)).unwrap();
        for line in map.lines() {
            let (trigger, rest) = line.split_once('\t').unwrap();
            let items: Vec<&str> = rest.split(',').collect();
            assert!(items.len() <= 3);
            // Self-exclusion and descending scores.
            let mut prev = f64::INFINITY;
            for cell in items {
                let (id, score) = cell.rsplit_once(':').unwrap();
                assert_ne!(id, trigger);
                let score: f64 = score.parse().unwrap();
                assert!(score <= prev);
                prev = score;
            }
        }

        let metric = cmd_metric_train(&cfg).unwrap();
        assert!(metric.positives > 0);
        assert_eq!(metric.negatives, metric.positives);
        assert!(metric_model_path(&cfg.out_dir).exists());

        let novelty = cmd_novelty_eval(&cfg).unwrap();
        assert_eq!(novelty.users, 6);
        assert!(novelty.base >= 0.0 && novelty.base <= 1.0);
        assert!(novelty.metric >= 0.0 && novelty.metric <= 1.0);
        assert!(novelty_path(&cfg.out_dir).exists());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_demo(tmp.path());
        let read_all = |cfg: &PipelineConfig| {
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&cfg.out_dir)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            files
        };
        cmd_ingest(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_eval(&cfg).unwrap();
        let first = read_all(&cfg);
        cmd_ingest(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_eval(&cfg).unwrap();
        assert_eq!(first, read_all(&cfg));
    }

    #[test]
    fn missing_input_log_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = demo_config(tmp.path());
        cfg.input_log = None;
        assert!(matches!(cmd_ingest(&cfg), Err(Error::Config(_))));
        // Path set but absent: I/O error, no partial outputs.
        let cfg = demo_config(tmp.path());
        assert!(matches!(cmd_ingest(&cfg), Err(Error::Io { .. })));
        assert!(!sessions_path(&cfg.out_dir, View::Item).exists());
    }

    #[test]
    fn eval_without_cutoff_explains_the_fix() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = write_demo(tmp.path());
        cfg.split_cutoff = None;
        cmd_ingest(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        let err = cmd_eval(&cfg).unwrap_err();
        assert!(err.to_string().contains("split.cutoff"));
    }

    #[test]
    fn attrs_and_truth_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut attrs = AttributeMap::new(View::Category);
        attrs.insert("i1", "c1").unwrap();
        attrs.insert("i2", "c2").unwrap();
        let path = tmp.path().join("attrs.tsv");
        write_atomic(&path, |w| write_attrs(w, &attrs)).unwrap();
        let back = read_attrs(&path, View::Category).unwrap();
        assert_eq!(back.get("i1"), Some("c1"));
        assert_eq!(back.len(), 2);

        let truth = BTreeMap::from([
            (
                "u1".to_string(),
                BTreeSet::from(["i1".to_string(), "i2".to_string()]),
            ),
            ("u2".to_string(), BTreeSet::from(["i3".to_string()])),
        ]);
        let path = tmp.path().join("truth.tsv");
        write_atomic(&path, |w| write_truth(w, &truth)).unwrap();
        assert_eq!(read_truth(&path).unwrap(), truth);
    }

    #[test]
    fn walk_sequences_also_train() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = write_demo(tmp.path());
        cfg.sampler.walks = Some(crate::sampler::WalkParams {
            walks_per_node: 3,
            walk_length: 6,
        });
        cmd_ingest(&cfg).unwrap();
        let trained = cmd_train(&cfg).unwrap();
        assert!(trained.diverged.is_none());
    }
}
