//! Outfit data: ingestion of Polyvore-style outfit files, category filtering,
//! deterministic splits, negative sampling and FITB question construction.

mod sampling;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampling::{
    build_compat_pairs, build_fitb_questions, build_fitb_questions_with, sample_negative_outfit,
    sample_negative_outfit_with, CompatPair, FitbQuestion,
};
pub use synthetic::{generate_synthetic, PlantedLabels, SyntheticConfig, SyntheticDataset};

pub type ItemId = String;
pub type CategoryId = u32;

/// One clothing or accessory piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub name: String,
    pub price: Option<f64>,
    pub likes: Option<u64>,
    pub image_ref: String,
}

/// Items keyed by id, kept in insertion order so that sampling over the
/// table is reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemTable {
    items: Vec<Item>,
    index: HashMap<ItemId, usize>,
}

impl ItemTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item: Item) -> Result<()> {
        if self.index.contains_key(&item.item_id) {
            return Err(Error::Structure(format!(
                "duplicate item id `{}`",
                item.item_id
            )));
        }
        self.index.insert(item.item_id.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    pub fn category_of(&self, item_id: &str) -> Result<CategoryId> {
        self.get(item_id)
            .map(|item| item.category_id)
            .ok_or_else(|| Error::Lookup {
                id: item_id.to_string(),
                source_name: "item table".to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.iter()
    }

    pub fn ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|item| item.item_id.clone()).collect()
    }

    /// Sub-table holding only the items referenced by `outfits`, in table order.
    pub fn restricted_to(&self, outfits: &[Outfit]) -> ItemTable {
        let wanted: HashSet<&str> = outfits
            .iter()
            .flat_map(|o| o.items.iter().map(String::as_str))
            .collect();
        let mut table = ItemTable::new();
        for item in &self.items {
            if wanted.contains(item.item_id.as_str()) {
                // ids are already unique in `self`
                table.insert(item.clone()).expect("unique ids");
            }
        }
        table
    }
}

/// An ordered list of item references, treated as a set for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outfit {
    pub set_id: String,
    pub items: Vec<ItemId>,
}

impl Outfit {
    pub fn new(set_id: impl Into<String>, items: Vec<ItemId>) -> Self {
        Outfit {
            set_id: set_id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.iter().any(|i| i == item_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Outfit>,
    pub validation: Vec<Outfit>,
    pub test: Vec<Outfit>,
    pub category_set: BTreeSet<CategoryId>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_outfits(&self) -> impl Iterator<Item = &Outfit> {
        self.train
            .iter()
            .chain(self.validation.iter())
            .chain(self.test.iter())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawItem {
    index: i64,
    #[serde(default)]
    name: String,
    categoryid: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    likes: Option<u64>,
    #[serde(default)]
    image: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawOutfit {
    set_id: String,
    items: Vec<RawItem>,
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    let mut current = 1;
    for (i, &b) in text.iter().enumerate() {
        if current == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            current += 1;
        }
        offset = i + 1;
    }
    (offset + column.saturating_sub(1)).min(text.len())
}

/// Parses an outfit-file (JSON array of outfits with nested items).
///
/// Item ids are derived as `<set_id>_<index>`.
pub fn parse_outfits(raw: &[u8]) -> Result<(Vec<Outfit>, ItemTable)> {
    let entries: Vec<RawOutfit> = serde_json::from_slice(raw).map_err(|e| Error::Parse {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut outfits = Vec::with_capacity(entries.len());
    let mut items = ItemTable::new();
    let mut seen_sets = HashSet::new();
    for entry in entries {
        if !seen_sets.insert(entry.set_id.clone()) {
            return Err(Error::Structure(format!(
                "duplicate set_id `{}`",
                entry.set_id
            )));
        }
        if entry.items.is_empty() {
            return Err(Error::Structure(format!(
                "outfit `{}` has no items",
                entry.set_id
            )));
        }
        let mut ids = Vec::with_capacity(entry.items.len());
        for raw_item in entry.items {
            if raw_item.categoryid < 0 || raw_item.categoryid > i64::from(u32::MAX) {
                return Err(Error::Structure(format!(
                    "outfit `{}`: category id {} out of range",
                    entry.set_id, raw_item.categoryid
                )));
            }
            let item_id = format!("{}_{}", entry.set_id, raw_item.index);
            items.insert(Item {
                item_id: item_id.clone(),
                category_id: raw_item.categoryid as CategoryId,
                name: raw_item.name,
                price: raw_item.price,
                likes: raw_item.likes,
                image_ref: raw_item.image,
            })?;
            ids.push(item_id);
        }
        outfits.push(Outfit::new(entry.set_id, ids));
    }
    Ok((outfits, items))
}

pub fn read_outfits(path: impl AsRef<Path>) -> Result<(Vec<Outfit>, ItemTable)> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_outfits(&raw)
}

/// Serializes outfits back into the outfit-file format. Item indices are
/// recovered from the `<set_id>_<index>` ids.
pub fn outfits_to_json(outfits: &[Outfit], items: &ItemTable) -> Result<String> {
    let mut raw = Vec::with_capacity(outfits.len());
    for outfit in outfits {
        let mut raw_items = Vec::with_capacity(outfit.items.len());
        for id in &outfit.items {
            let item = items.get(id).ok_or_else(|| Error::Lookup {
                id: id.clone(),
                source_name: "item table".to_string(),
            })?;
            let index = id
                .strip_prefix(outfit.set_id.as_str())
                .and_then(|rest| rest.strip_prefix('_'))
                .and_then(|idx| idx.parse::<i64>().ok())
                .ok_or_else(|| {
                    Error::Structure(format!("item id `{id}` is not of the form <set_id>_<index>"))
                })?;
            raw_items.push(RawItem {
                index,
                name: item.name.clone(),
                categoryid: i64::from(item.category_id),
                price: item.price,
                likes: item.likes,
                image: item.image_ref.clone(),
            });
        }
        raw.push(RawOutfit {
            set_id: outfit.set_id.clone(),
            items: raw_items,
        });
    }
    serde_json::to_string_pretty(&raw).map_err(|e| Error::Structure(e.to_string()))
}

/// Result of category/size filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDataset {
    pub outfits: Vec<Outfit>,
    pub items: ItemTable,
    pub category_set: BTreeSet<CategoryId>,
}

/// Number of item occurrences per category over `outfits`.
pub fn category_counts(
    outfits: &[Outfit],
    items: &ItemTable,
) -> Result<BTreeMap<CategoryId, usize>> {
    let mut counts = BTreeMap::new();
    for outfit in outfits {
        for id in &outfit.items {
            *counts.entry(items.category_of(id)?).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Drops items of rare categories, then outfits that became too short.
///
/// The two rules interact (dropping an outfit lowers other categories'
/// counts), so they are applied until nothing changes.
pub fn filter_dataset(
    outfits: &[Outfit],
    items: &ItemTable,
    min_category_count: usize,
    min_outfit_size: usize,
) -> Result<FilteredDataset> {
    let mut current: Vec<Outfit> = outfits.to_vec();
    loop {
        let counts = category_counts(&current, items)?;
        let retained: BTreeSet<CategoryId> = counts
            .iter()
            .filter(|(_, &n)| n >= min_category_count)
            .map(|(&c, _)| c)
            .collect();

        let mut next = Vec::with_capacity(current.len());
        for outfit in &current {
            let mut kept = Vec::with_capacity(outfit.items.len());
            for id in &outfit.items {
                if retained.contains(&items.category_of(id)?) {
                    kept.push(id.clone());
                }
            }
            if kept.len() >= min_outfit_size {
                next.push(Outfit::new(outfit.set_id.clone(), kept));
            }
        }

        let stable = next == current && retained.len() == counts.len();
        current = next;
        if stable {
            if current.is_empty() {
                return Err(Error::EmptyDataset(
                    "every outfit was removed by filtering".to_string(),
                ));
            }
            let category_set = retained;
            let items = items.restricted_to(&current);
            return Ok(FilteredDataset {
                outfits: current,
                items,
                category_set,
            });
        }
    }
}

/// Options for [`split_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Fraction of the train portion carved off as validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitConfig {
            train_fraction,
            validation_fraction: 0.0,
            seed,
        }
    }
}

/// Seeded shuffle followed by a train/test cut at `floor(n * train_fraction)`.
/// Validation, when requested, is the tail `floor(|train| * validation_fraction)`
/// outfits of the shuffled train portion.
pub fn split_dataset(
    outfits: &[Outfit],
    category_set: &BTreeSet<CategoryId>,
    config: &SplitConfig,
) -> Result<DatasetSplit> {
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1], got {}",
            config.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::Argument(format!(
            "validation fraction must lie in [0, 1), got {}",
            config.validation_fraction
        )));
    }
    let mut shuffled = outfits.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffled.shuffle(&mut rng);

    let n_train = (shuffled.len() as f64 * config.train_fraction).floor() as usize;
    let test = shuffled.split_off(n_train);
    let n_validation = (shuffled.len() as f64 * config.validation_fraction).floor() as usize;
    let validation = shuffled.split_off(shuffled.len() - n_validation);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        category_set: category_set.clone(),
    })
}

/// Name of a split in the manifest file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitName::Train),
            "validation" => Some(SplitName::Validation),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }
}

/// `set_id<TAB>split` lines: train outfits first, then validation, then test,
/// each in split order.
pub fn split_manifest(split: &DatasetSplit) -> String {
    let mut out = String::new();
    for (name, outfits) in [
        (SplitName::Train, &split.train),
        (SplitName::Validation, &split.validation),
        (SplitName::Test, &split.test),
    ] {
        for outfit in outfits {
            out.push_str(&outfit.set_id);
            out.push('\t');
            out.push_str(name.as_str());
            out.push('\n');
        }
    }
    out
}

/// Rebuilds a split from a manifest and the outfits it names.
pub fn apply_split_manifest(
    manifest: &str,
    outfits: &[Outfit],
    category_set: &BTreeSet<CategoryId>,
) -> Result<DatasetSplit> {
    let by_id: HashMap<&str, &Outfit> = outfits.iter().map(|o| (o.set_id.as_str(), o)).collect();
    let mut split = DatasetSplit {
        category_set: category_set.clone(),
        ..DatasetSplit::default()
    };
    let mut seen = HashSet::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (set_id, name) = line.split_once('\t').ok_or_else(|| Error::Format {
            record: lineno,
            message: "expected `set_id<TAB>split`".to_string(),
        })?;
        let name = SplitName::parse(name.trim()).ok_or_else(|| Error::Format {
            record: lineno,
            message: format!("unknown split `{name}`"),
        })?;
        if !seen.insert(set_id) {
            return Err(Error::Format {
                record: lineno,
                message: format!("set_id `{set_id}` listed twice"),
            });
        }
        let outfit = by_id.get(set_id).ok_or_else(|| Error::Lookup {
            id: set_id.to_string(),
            source_name: "outfit file".to_string(),
        })?;
        let target = match name {
            SplitName::Train => &mut split.train,
            SplitName::Validation => &mut split.validation,
            SplitName::Test => &mut split.test,
        };
        target.push((*outfit).clone());
    }
    Ok(split)
}

/// Outfit size statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_outfits: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub mean_outfit_size: f64,
    pub max_outfit_size: usize,
}

pub fn dataset_stats(outfits: &[Outfit], items: &ItemTable) -> Result<DatasetStats> {
    let counts = category_counts(outfits, items)?;
    let n_items: usize = outfits.iter().map(Outfit::len).sum();
    Ok(DatasetStats {
        n_outfits: outfits.len(),
        n_items,
        n_categories: counts.len(),
        mean_outfit_size: if outfits.is_empty() {
            0.0
        } else {
            n_items as f64 / outfits.len() as f64
        },
        max_outfit_size: outfits.iter().map(Outfit::len).max().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, cat: CategoryId) -> Item {
        Item {
            item_id: id.to_string(),
            category_id: cat,
            name: String::new(),
            price: None,
            likes: None,
            image_ref: String::new(),
        }
    }

    #[test]
    fn empty_array_parses_to_nothing() {
        let (outfits, items) = parse_outfits(b"[]").unwrap();
        assert!(outfits.is_empty());
        assert!(items.is_empty());
    }

    #[test]
    fn single_outfit_maps_fields() {
        let raw = br#"[{"set_id": "214", "items": [
            {"index": 1, "name": "red dress", "categoryid": 10, "price": 19.5, "likes": 3, "image": "a.jpg"},
            {"index": 2, "name": "hat", "categoryid": 20, "image": "b.jpg"},
            {"index": 3, "name": "bag", "categoryid": 30, "image": "c.jpg", "views": 17}
        ]}]"#;
        let (outfits, items) = parse_outfits(raw).unwrap();
        assert_eq!(outfits.len(), 1);
        assert_eq!(outfits[0].items, vec!["214_1", "214_2", "214_3"]);
        let first = items.get("214_1").unwrap();
        assert_eq!(first.category_id, 10);
        assert_eq!(first.price, Some(19.5));
        assert_eq!(first.likes, Some(3));
        let second = items.get("214_2").unwrap();
        assert_eq!(second.price, None);
        assert_eq!(second.likes, None);
        let cats: Vec<_> = outfits[0]
            .items
            .iter()
            .map(|i| items.category_of(i).unwrap())
            .collect();
        assert_eq!(cats, vec![10, 20, 30]);
    }

    #[test]
    fn malformed_json_reports_offset() {
        let raw = b"[{\"set_id\": \"1\",\n \"items\": [}]";
        match parse_outfits(raw) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= raw.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_set_id_is_structural() {
        let raw = br#"[{"set_id": "1", "items": [{"index": 1, "categoryid": 2}]},
                       {"set_id": "1", "items": [{"index": 1, "categoryid": 2}]}]"#;
        assert!(matches!(parse_outfits(raw), Err(Error::Structure(_))));
    }

    #[test]
    fn json_round_trip() {
        let raw = br#"[{"set_id": "9", "items": [
            {"index": 1, "name": "a", "categoryid": 1, "image": "x"},
            {"index": 4, "name": "b", "categoryid": 2, "price": 1.25, "image": "y"}]}]"#;
        let (outfits, items) = parse_outfits(raw).unwrap();
        let text = outfits_to_json(&outfits, &items).unwrap();
        let (again, again_items) = parse_outfits(text.as_bytes()).unwrap();
        assert_eq!(outfits, again);
        assert_eq!(items, again_items);
    }

    #[test]
    fn short_outfit_dropped() {
        let mut items = ItemTable::new();
        items.insert(item("a", 1)).unwrap();
        items.insert(item("b", 2)).unwrap();
        let outfits = vec![Outfit::new("s", vec!["a".into(), "b".into()])];
        assert!(matches!(
            filter_dataset(&outfits, &items, 0, 3),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn rare_category_removed_with_recount() {
        // category 9 appears 4 times; threshold 5 removes it.
        let mut items = ItemTable::new();
        let mut outfits = Vec::new();
        for s in 0..5 {
            let mut ids = Vec::new();
            for (k, cat) in [1, 2, 3].into_iter().enumerate() {
                let id = format!("{s}_{k}");
                items.insert(item(&id, cat)).unwrap();
                ids.push(id);
            }
            if s < 4 {
                let id = format!("{s}_9");
                items.insert(item(&id, 9)).unwrap();
                ids.push(id);
            }
            outfits.push(Outfit::new(s.to_string(), ids));
        }
        let filtered = filter_dataset(&outfits, &items, 5, 3).unwrap();
        // Exhaustive tally on the output.
        let mut tally: BTreeMap<CategoryId, usize> = BTreeMap::new();
        for o in &filtered.outfits {
            for id in &o.items {
                *tally.entry(items.get(id).unwrap().category_id).or_default() += 1;
            }
        }
        assert_eq!(tally, BTreeMap::from([(1, 5), (2, 5), (3, 5)]));
        assert_eq!(filtered.category_set, BTreeSet::from([1, 2, 3]));
        assert_eq!(filtered.items.len(), 15);
    }

    #[test]
    fn cascade_reaches_fixpoint() {
        // Outfit "x" loses category 7 and drops below size 3; that takes
        // category 5 under threshold, which must then be removed too.
        let mut items = ItemTable::new();
        let spec: &[(&str, &[CategoryId])] = &[
            ("x", &[5, 7, 1]),
            ("y", &[5, 1, 2]),
            ("z", &[1, 2, 3]),
            ("w", &[1, 2, 3]),
        ];
        let mut outfits = Vec::new();
        for (set, cats) in spec {
            let ids: Vec<String> = cats
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let id = format!("{set}_{k}");
                    items.insert(item(&id, c)).unwrap();
                    id
                })
                .collect();
            outfits.push(Outfit::new(*set, ids));
        }
        let filtered = filter_dataset(&outfits, &items, 2, 3).unwrap();
        let again = filter_dataset(&filtered.outfits, &items, 2, 3).unwrap();
        assert_eq!(filtered, again);
        assert!(!filtered.category_set.contains(&5));
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let outfits: Vec<Outfit> = (0..1600)
            .map(|i| Outfit::new(i.to_string(), vec![]))
            .collect();
        let split = split_dataset(&outfits, &BTreeSet::new(), &SplitConfig::new(0.7, 7)).unwrap();
        assert_eq!(split.train.len(), 1120);
        assert_eq!(split.test.len(), 480);
        assert!(split.validation.is_empty());

        let all = split_dataset(&outfits, &BTreeSet::new(), &SplitConfig::new(1.0, 7)).unwrap();
        assert_eq!(all.train.len(), 1600);
        assert!(all.test.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_validates_fraction() {
        let outfits: Vec<Outfit> = (0..50).map(|i| Outfit::new(i.to_string(), vec![])).collect();
        let cfg = SplitConfig {
            train_fraction: 0.8,
            validation_fraction: 0.25,
            seed: 3,
        };
        let a = split_dataset(&outfits, &BTreeSet::new(), &cfg).unwrap();
        let b = split_dataset(&outfits, &BTreeSet::new(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (30, 10, 10));
        for bad in [0.0, -0.1, 1.5] {
            assert!(matches!(
                split_dataset(&outfits, &BTreeSet::new(), &SplitConfig::new(bad, 1)),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let outfits: Vec<Outfit> = (0..20).map(|i| Outfit::new(i.to_string(), vec![])).collect();
        let cfg = SplitConfig {
            train_fraction: 0.7,
            validation_fraction: 0.2,
            seed: 11,
        };
        let split = split_dataset(&outfits, &BTreeSet::new(), &cfg).unwrap();
        let text = split_manifest(&split);
        let back = apply_split_manifest(&text, &outfits, &BTreeSet::new()).unwrap();
        assert_eq!(split, back);
    }
}
