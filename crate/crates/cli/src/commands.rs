use std::collections::HashSet;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use compat_core::dataset::{
    build_compat_pairs, build_fitb_questions, filter_dataset, generate_synthetic, read_outfits,
    split_dataset, CompatPair, DatasetSplit, FitbQuestion, ItemId, ItemTable, Outfit, SplitConfig,
};
use compat_core::evaluator::{
    compat_auc, emit_report, fitb_accuracy, render_table, EvalReport, RandomScorer,
};
use compat_core::features::{encode_item, write_store, Channel, EmbeddingStore};
use compat_core::graph::build_cooccurrence_graph;
use compat_core::neural::Checkpoint;
use compat_core::trainer::{model_from_checkpoint, train, TrainData};
use compat_core::verify::{grad_check_all, GradCheckOptions, GRADCHECK_TOLERANCE};
use compat_core::{CompatModel, Error, ScoringContext};

use crate::config::RunConfig;
use crate::data::{self, load_stores, write_file, Prepared};
use crate::CliError;

type CliResult<T> = std::result::Result<T, CliError>;

pub const RAW_FILES: [&str; 3] = ["train_no_dup.json", "valid_no_dup.json", "test_no_dup.json"];

pub fn prepare(cfg: &RunConfig) -> CliResult<()> {
    let missing: Vec<&str> = RAW_FILES
        .iter()
        .copied()
        .filter(|name| !cfg.raw_dir.join(name).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::io(
            &cfg.raw_dir,
            io::Error::new(
                io::ErrorKind::NotFound,
                format!("missing {} (expected {})", missing.join(", "), RAW_FILES.join(", ")),
            ),
        )
        .into());
    }

    let mut items = ItemTable::new();
    let mut parts = Vec::new();
    for name in RAW_FILES {
        let (outfits, table) = read_outfits(cfg.raw_dir.join(name))?;
        for item in table.iter() {
            items.insert(item.clone())?;
        }
        parts.push(outfits);
    }
    let all: Vec<Outfit> = parts.concat();
    let mut seen = HashSet::new();
    if let Some(dup) = all.iter().find(|o| !seen.insert(o.set_id.as_str())) {
        return Err(Error::Structure(format!("set_id `{}` appears in two raw files", dup.set_id)).into());
    }
    let filtered = filter_dataset(&all, &items, cfg.min_category_count, cfg.min_outfit_size)?;

    let split = if cfg.subset > 0 {
        if cfg.subset > filtered.outfits.len() {
            return Err(Error::Argument(format!(
                "subset of {} requested but only {} outfits survive filtering",
                cfg.subset,
                filtered.outfits.len()
            ))
            .into());
        }
        let mut pool = filtered.outfits.clone();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        pool.truncate(cfg.subset);
        split_dataset(&pool, &filtered.category_set, &split_config(cfg))?
    } else {
        let membership: Vec<HashSet<&str>> = parts
            .iter()
            .map(|p| p.iter().map(|o| o.set_id.as_str()).collect())
            .collect();
        let pick = |k: usize| -> Vec<Outfit> {
            filtered
                .outfits
                .iter()
                .filter(|o| membership[k].contains(o.set_id.as_str()))
                .cloned()
                .collect()
        };
        DatasetSplit {
            train: pick(0),
            validation: pick(1),
            test: pick(2),
            category_set: filtered.category_set.clone(),
        }
    };
    let kept: Vec<Outfit> = split.all_outfits().cloned().collect();
    let items = filtered.items.restricted_to(&kept);
    data::write_prepared(&cfg.data_dir, &split, &items, cfg.vocab_min_frequency)?;
    cfg.write_resolved(&cfg.data_dir.join("config.resolved"))?;
    print!("{}", data::read_text(&cfg.data_dir.join(data::STATS))?);
    Ok(())
}

fn split_config(cfg: &RunConfig) -> SplitConfig {
    SplitConfig {
        train_fraction: cfg.train_fraction,
        validation_fraction: cfg.validation_fraction,
        seed: cfg.seed,
    }
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let synth = generate_synthetic(&cfg.synthetic_config())?;
    let split = split_dataset(&synth.outfits, &synth.category_set, &split_config(cfg))?;
    data::write_prepared(&cfg.data_dir, &split, &synth.items, cfg.vocab_min_frequency)?;
    write_store(&synth.visual, cfg.visual_store_path())?;
    write_file(&cfg.data_dir.join(data::GROUPS), synth.labels.to_text())?;
    cfg.write_resolved(&cfg.data_dir.join("config.resolved"))?;
    print!("{}", data::read_text(&cfg.data_dir.join(data::STATS))?);
    Ok(())
}

pub fn embed_text(cfg: &RunConfig) -> CliResult<()> {
    let prepared = Prepared::load(&cfg.data_dir)?;
    let vocab = prepared.vocabulary()?;
    if vocab.is_empty() {
        return Err(Error::EmptyDataset("vocabulary is empty; lower vocab_min_frequency".into()).into());
    }
    let mut store = EmbeddingStore::new(vocab.len())?;
    for item in prepared.items.iter() {
        store.insert(&item.item_id, encode_item(item, &vocab))?;
    }
    let path = cfg.text_store_path();
    write_store(&store, &path)?;
    println!("wrote {} text vectors of dimension {} to {}", store.len(), store.dim(), path.display());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> CliResult<()> {
    let config = cfg.train_config()?;
    let prepared = Prepared::load(&cfg.data_dir)?;
    let stores = load_stores(config.modality, &cfg.visual_store_path(), &cfg.text_store_path())?;
    let graph = build_cooccurrence_graph(&prepared.split.train, &prepared.items)?;
    let data = TrainData {
        split: &prepared.split,
        items: &prepared.items,
        graph: &graph,
        stores: &stores,
    };
    cfg.write_resolved(&cfg.run_dir.join("config.resolved"))?;
    let outcome = train(&config, &data, |r| {
        let auc = r.val_auc.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_auc {}  ({:.2}s)",
            r.epoch, r.train_loss, r.val_loss, auc, r.seconds
        );
    })?;
    outcome.save(&cfg.run_dir)?;
    println!(
        "best epoch {} of {}{}; checkpoints in {}",
        outcome.best_epoch,
        outcome.history.epochs.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        cfg.run_dir.display()
    );
    Ok(())
}

fn load_or_build<T, F>(path: &Path, build: F) -> CliResult<Vec<T>>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> compat_core::Result<Vec<T>>,
{
    if path.exists() {
        let text = data::read_text(path)?;
        return serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into());
    }
    let built = build()?;
    let text = serde_json::to_string(&built).map_err(|e| Error::Schema(e.to_string()))?;
    write_file(path, text + "\n")?;
    Ok(built)
}

/// FITB questions for the test split, generated once per seed.
pub fn fitb_questions(prepared: &Prepared, seed: u64) -> CliResult<Vec<FitbQuestion>> {
    let path = prepared.dir.join(data::EVAL_DIR).join(format!("fitb_seed{seed}.json"));
    let corpus = prepared.test_corpus();
    load_or_build(&path, || match &prepared.labels {
        Some(labels) => labels.fitb_questions(&prepared.split.test, &corpus, seed),
        None => build_fitb_questions(&prepared.split.test, &corpus, seed),
    })
}

/// Compatibility pairs for the test split, generated once per seed.
pub fn compat_pairs(prepared: &Prepared, seed: u64) -> CliResult<Vec<CompatPair>> {
    let path = prepared.dir.join(data::EVAL_DIR).join(format!("compat_seed{seed}.json"));
    let corpus = prepared.test_corpus();
    load_or_build(&path, || match &prepared.labels {
        Some(labels) => labels.compat_pairs(&prepared.split.test, &corpus, seed),
        None => build_compat_pairs(&prepared.split.test, &corpus, seed),
    })
}

/// A checkpointed model with everything needed to score outfits.
struct LoadedModel {
    model: CompatModel,
    checkpoint: Checkpoint,
    stores: compat_core::features::FeatureStores,
    graph: compat_core::graph::CategoryGraph,
}

fn load_model(cfg: &RunConfig, prepared: &Prepared) -> CliResult<LoadedModel> {
    let path = cfg.checkpoint_path();
    let checkpoint = Checkpoint::read(&path)?;
    let model = model_from_checkpoint(&checkpoint).map_err(|e| e.context(path.display().to_string()))?;
    let mode = model.config().modality.mode;
    let stores = load_stores(mode, &cfg.visual_store_path(), &cfg.text_store_path())?;
    for &channel in mode.channels() {
        let expected = match channel {
            Channel::Visual => model.config().visual_dim,
            Channel::Text => model.config().text_dim,
        };
        let actual = stores.store(channel).map(EmbeddingStore::dim);
        if expected != actual {
            return Err(Error::Format {
                record: 0,
                message: format!(
                    "checkpoint expects {} features of dimension {:?}, store has {:?}",
                    channel.as_str(),
                    expected,
                    actual
                ),
            }
            .into());
        }
    }
    let graph = build_cooccurrence_graph(&prepared.split.train, &prepared.items)?;
    Ok(LoadedModel {
        model,
        checkpoint,
        stores,
        graph,
    })
}

/// RFC 3339 time, pinned by `SOURCE_DATE_EPOCH` when set.
fn timestamp() -> CliResult<String> {
    let time = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("SOURCE_DATE_EPOCH `{v}` is not an integer")))?;
            chrono::DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| Error::Argument(format!("SOURCE_DATE_EPOCH `{v}` is out of range")))?
        }
        Err(_) => chrono::Utc::now(),
    };
    Ok(time.format("%Y-%m-%dT%H:%M:%SZ").to_string())
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let prepared = Prepared::load(&cfg.data_dir)?;
    let questions = if cfg.task.fitb() { Some(fitb_questions(&prepared, cfg.seed)?) } else { None };
    let pairs = if cfg.task.compat() { Some(compat_pairs(&prepared, cfg.seed)?) } else { None };

    let (model_name, modality, fitb, auc) = if cfg.random {
        let scorer = RandomScorer { seed: cfg.seed };
        let score = |items: &[ItemId]| Ok(scorer.score(items));
        let fitb = questions.as_deref().map(|q| fitb_accuracy(score, q)).transpose()?;
        let auc = pairs.as_deref().map(|p| compat_auc(score, p)).transpose()?;
        ("Random".to_string(), "-".to_string(), fitb, auc)
    } else {
        let loaded = load_model(cfg, &prepared)?;
        let ctx = ScoringContext::new(&prepared.items, &loaded.graph, &loaded.stores);
        let params = &loaded.checkpoint.params;
        let score = |items: &[ItemId]| loaded.model.score(params, items, &ctx);
        let fitb = questions.as_deref().map(|q| fitb_accuracy(score, q)).transpose()?;
        let auc = pairs.as_deref().map(|p| compat_auc(score, p)).transpose()?;
        let config = loaded.model.config();
        (
            config.kind.as_str().to_uppercase(),
            config.modality.mode.to_string(),
            fitb,
            auc,
        )
    };

    let report = EvalReport {
        model: model_name,
        modality,
        n_fitb_questions: questions.as_ref().map(Vec::len),
        fitb_accuracy: fitb,
        n_compat_pairs: pairs.as_ref().map(Vec::len),
        auc,
        seed: cfg.seed,
        timestamp: timestamp()?,
    };
    std::fs::create_dir_all(&cfg.run_dir).map_err(|e| Error::io(&cfg.run_dir, e))?;
    emit_report(&report, cfg.run_dir.join("report.json"))?;
    write_file(&cfg.run_dir.join("report.txt"), render_table(std::slice::from_ref(&report)))?;
    cfg.write_resolved(&cfg.run_dir.join("eval.resolved"))?;
    println!("{}", report.summary());
    Ok(())
}

pub fn score(cfg: &RunConfig, items: &[ItemId]) -> CliResult<()> {
    let prepared = Prepared::load(&cfg.data_dir)?;
    let loaded = load_model(cfg, &prepared)?;
    let ctx = ScoringContext::new(&prepared.items, &loaded.graph, &loaded.stores);
    let s = loaded.model.score(&loaded.checkpoint.params, items, &ctx)?;
    println!("{s:.6}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, inject_bug: bool) -> CliResult<()> {
    let options = GradCheckOptions {
        seed: cfg.seed,
        hidden: cfg.hidden,
        steps: cfg.steps,
        beta: cfg.beta,
        lambda_l2: cfg.lambda_l2,
        inject_bug,
        ..GradCheckOptions::default()
    };
    let cases = grad_check_all(&options)?;
    for case in &cases {
        let r = &case.report;
        println!(
            "{} {:<10} max_rel_error {:.3e}  max_abs_error {:.3e}  worst {}[{}] (analytic {:.6e}, numeric {:.6e})  {}",
            case.kind,
            case.modality.as_str(),
            r.max_rel_error,
            r.max_abs_error,
            r.worst_param,
            r.worst_index,
            r.analytic,
            r.numeric,
            if case.passed() { "PASS" } else { "FAIL" }
        );
    }
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .expect("six cases");
    if worst.report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::Verification(format!(
            "max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e} at {}[{}] ({} {})",
            worst.report.max_rel_error,
            worst.report.worst_param,
            worst.report.worst_index,
            worst.kind,
            worst.modality.as_str()
        )));
    }
    Ok(())
}
