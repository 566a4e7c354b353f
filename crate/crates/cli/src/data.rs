//! Layout of a prepared data directory.
//!
//! ```text
//! outfits.json       filtered outfits, outfit-file format
//! splits.tsv         set_id<TAB>split
//! vocab.txt          one token per line
//! cooccurrence.tsv   category graph of the training split
//! hypergraph.txt     hypergraph summary of the training split
//! stats.txt          key<TAB>value
//! groups.tsv         planted labels (synthetic data only)
//! visual.embd        visual store (synthetic data, or supplied)
//! text.embd          written by embed-text
//! eval/              persisted FITB questions and compatibility pairs
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use compat_core::dataset::{
    apply_split_manifest, category_counts, dataset_stats, outfits_to_json, read_outfits,
    split_manifest, CategoryId, DatasetSplit, ItemId, ItemTable, Outfit, PlantedLabels,
};
use compat_core::features::{
    build_vocabulary, read_store, Channel, FeatureStores, Modality, Vocabulary,
};
use compat_core::graph::{
    build_cooccurrence_graph, build_hypergraph, convert_hypergraph, hypergraph_summary,
};
use compat_core::{Error, Result};

pub const OUTFITS: &str = "outfits.json";
pub const SPLITS: &str = "splits.tsv";
pub const VOCAB: &str = "vocab.txt";
pub const COOCCURRENCE: &str = "cooccurrence.tsv";
pub const HYPERGRAPH: &str = "hypergraph.txt";
pub const STATS: &str = "stats.txt";
pub const GROUPS: &str = "groups.tsv";
pub const EVAL_DIR: &str = "eval";

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes every artifact of a prepared directory except the stores.
pub fn write_prepared(
    dir: &Path,
    split: &DatasetSplit,
    items: &ItemTable,
    vocab_min_frequency: usize,
) -> Result<()> {
    let all: Vec<Outfit> = split.all_outfits().cloned().collect();
    write_file(&dir.join(OUTFITS), outfits_to_json(&all, items)? + "\n")?;
    write_file(&dir.join(SPLITS), split_manifest(split))?;

    let train_items = items.restricted_to(&split.train);
    let vocab = build_vocabulary(train_items.iter(), vocab_min_frequency);
    write_file(&dir.join(VOCAB), vocab.to_text())?;

    let graph = build_cooccurrence_graph(&split.train, items)?;
    write_file(&dir.join(COOCCURRENCE), graph.to_edge_list())?;
    let hypergraph = build_hypergraph(&split.train, items)?;
    let converted = convert_hypergraph(&hypergraph)?;
    write_file(&dir.join(HYPERGRAPH), hypergraph_summary(&hypergraph, &converted))?;

    let stats = dataset_stats(&all, items)?;
    let mut text = String::new();
    let _ = writeln!(text, "outfits\t{}", stats.n_outfits);
    let _ = writeln!(text, "items\t{}", stats.n_items);
    let _ = writeln!(text, "categories\t{}", stats.n_categories);
    let _ = writeln!(text, "mean_outfit_size\t{:.4}", stats.mean_outfit_size);
    let _ = writeln!(text, "max_outfit_size\t{}", stats.max_outfit_size);
    let _ = writeln!(text, "train\t{}", split.train.len());
    let _ = writeln!(text, "validation\t{}", split.validation.len());
    let _ = writeln!(text, "test\t{}", split.test.len());
    let _ = writeln!(text, "vocabulary\t{}", vocab.len());
    write_file(&dir.join(STATS), text)
}

/// A prepared directory loaded back into memory.
pub struct Prepared {
    pub dir: PathBuf,
    pub items: ItemTable,
    pub split: DatasetSplit,
    /// Present for synthetic data.
    pub labels: Option<PlantedLabels>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let (outfits, items) = read_outfits(dir.join(OUTFITS))?;
        let categories: BTreeSet<CategoryId> =
            category_counts(&outfits, &items)?.into_keys().collect();
        let manifest = read_text(&dir.join(SPLITS))?;
        let split = apply_split_manifest(&manifest, &outfits, &categories)?;
        let groups = dir.join(GROUPS);
        let labels = if groups.exists() {
            Some(PlantedLabels::from_text(&read_text(&groups)?)?)
        } else {
            None
        };
        Ok(Prepared {
            dir: dir.to_path_buf(),
            items,
            split,
            labels,
        })
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_text(&read_text(&self.dir.join(VOCAB))?)
    }

    /// Distinct test items in first-seen order: the evaluation corpus.
    pub fn test_corpus(&self) -> Vec<ItemId> {
        let mut seen = HashSet::new();
        self.split
            .test
            .iter()
            .flat_map(|o| o.items.iter())
            .filter(|id| seen.insert(id.as_str()))
            .cloned()
            .collect()
    }
}

/// Loads the stores a modality needs.
pub fn load_stores(modality: Modality, visual: &Path, text: &Path) -> Result<FeatureStores> {
    let mut stores = FeatureStores::default();
    for &channel in modality.channels() {
        match channel {
            Channel::Visual => stores.visual = Some(read_store(visual)?),
            Channel::Text => stores.text = Some(read_store(text)?),
        }
    }
    Ok(stores)
}
