//! Planted-structure synthetic outfits.
//!
//! Every product carries a latent group. A clean outfit draws all of its
//! products from one group; with probability `noise` a slot is filled from a
//! different group instead. Visual features are a group prototype plus
//! Gaussian noise, and product names mix group-specific tokens with shared
//! ones, so both modalities carry a learnable compatibility signal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    build_fitb_questions_with, sample_negative_outfit_with, CategoryId, CompatPair, FitbQuestion,
    Item, ItemId, ItemTable, Outfit,
};
use crate::error::{Error, Result};
use crate::features::EmbeddingStore;

const GROUP_TOKENS: usize = 4;
const SHARED_TOKENS: usize = 16;
const MAX_OUTFIT_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_outfits: usize,
    pub n_categories: usize,
    pub items_per_category: usize,
    pub planted_groups: usize,
    /// Probability that an outfit slot is filled from a foreign group.
    pub noise: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-coordinate feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_outfits: 1600,
            n_categories: 20,
            items_per_category: 24,
            planted_groups: 2,
            noise: 0.05,
            feature_dim: 32,
            feature_noise: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub outfits: Vec<Outfit>,
    pub items: ItemTable,
    pub category_set: BTreeSet<CategoryId>,
    pub visual: EmbeddingStore,
    pub labels: PlantedLabels,
}

/// Latent group labels of generated items and outfits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlantedLabels {
    item_groups: BTreeMap<ItemId, usize>,
    outfit_groups: BTreeMap<String, usize>,
}

struct Product {
    category: CategoryId,
    group: usize,
    name: String,
    features: Vec<f64>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    if config.planted_groups < 2 {
        return Err(Error::Argument("planted_groups must be at least 2".into()));
    }
    if config.n_categories < 4 {
        return Err(Error::Argument("n_categories must be at least 4".into()));
    }
    if config.items_per_category < config.planted_groups {
        return Err(Error::Argument(format!(
            "items_per_category ({}) must cover every planted group ({})",
            config.items_per_category, config.planted_groups
        )));
    }
    if config.n_outfits == 0 || config.feature_dim == 0 {
        return Err(Error::Argument(
            "n_outfits and feature_dim must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.noise) || config.feature_noise.is_nan() || config.feature_noise < 0.0 {
        return Err(Error::Argument(
            "noise must lie in [0, 1] and feature_noise must be non-negative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let groups = config.planted_groups;
    let prototypes: Vec<Vec<f64>> = (0..groups)
        .map(|_| {
            (0..config.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    // products[category][group] -> product indices
    let mut products = Vec::new();
    let mut by_slot = vec![vec![Vec::new(); groups]; config.n_categories];
    for (category, slots) in by_slot.iter_mut().enumerate() {
        for p in 0..config.items_per_category {
            let group = p % groups;
            let features = prototypes[group]
                .iter()
                .map(|&mu| mu + config.feature_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let name = format!(
                "g{group}t{} g{group}t{} cat{category} s{}",
                rng.random_range(0..GROUP_TOKENS),
                rng.random_range(0..GROUP_TOKENS),
                rng.random_range(0..SHARED_TOKENS)
            );
            slots[group].push(products.len());
            products.push(Product {
                category: category as CategoryId,
                group,
                name,
                features,
            });
        }
    }

    let max_size = MAX_OUTFIT_SIZE.min(config.n_categories);
    let categories: Vec<usize> = (0..config.n_categories).collect();
    let mut outfits = Vec::with_capacity(config.n_outfits);
    let mut items = ItemTable::new();
    let mut labels = PlantedLabels::default();
    let mut visual = EmbeddingStore::new(config.feature_dim)?;
    for o in 0..config.n_outfits {
        let set_id = format!("syn{o}");
        let group = rng.random_range(0..groups);
        let size = rng.random_range(3..=max_size);
        let chosen: Vec<usize> = categories
            .choose_multiple(&mut rng, size)
            .copied()
            .collect();
        let mut ids = Vec::with_capacity(size);
        for (k, &category) in chosen.iter().enumerate() {
            let slot_group = if rng.random::<f64>() < config.noise {
                let other = rng.random_range(0..groups - 1);
                if other >= group {
                    other + 1
                } else {
                    other
                }
            } else {
                group
            };
            let product = &products[*by_slot[category][slot_group]
                .choose(&mut rng)
                .expect("every slot has products")];
            let item_id = format!("{set_id}_{}", k + 1);
            items.insert(Item {
                item_id: item_id.clone(),
                category_id: product.category,
                name: product.name.clone(),
                price: None,
                likes: None,
                image_ref: String::new(),
            })?;
            visual.insert(&item_id, product.features.clone())?;
            labels.item_groups.insert(item_id.clone(), product.group);
            ids.push(item_id);
        }
        labels.outfit_groups.insert(set_id.clone(), group);
        outfits.push(Outfit::new(set_id, ids));
    }

    Ok(SyntheticDataset {
        outfits,
        items,
        category_set: (0..config.n_categories as CategoryId).collect(),
        visual,
        labels,
    })
}

impl PlantedLabels {
    pub fn group_of(&self, item_id: &str) -> Option<usize> {
        self.item_groups.get(item_id).copied()
    }

    pub fn planted_group(&self, set_id: &str) -> Option<usize> {
        self.outfit_groups.get(set_id).copied()
    }

    /// Group-majority oracle: fraction of items belonging to the most common
    /// group. Ties between groups do not matter for the value.
    pub fn oracle_score(&self, items: &[ItemId]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for id in items {
            if let Some(g) = self.group_of(id) {
                *counts.entry(g).or_default() += 1;
            }
        }
        counts.values().copied().max().unwrap_or(0) as f64 / items.len() as f64
    }

    fn foreign_to(&self, outfit: &Outfit, candidate: &str) -> bool {
        let planted = self
            .planted_group(outfit.set_id.trim_end_matches("_neg"))
            .or_else(|| {
                // Fall back to the majority group for outfits not generated here.
                let mut counts: HashMap<usize, usize> = HashMap::new();
                for id in &outfit.items {
                    if let Some(g) = self.group_of(id) {
                        *counts.entry(g).or_default() += 1;
                    }
                }
                counts.into_iter().max_by_key(|&(g, n)| (n, std::cmp::Reverse(g))).map(|(g, _)| g)
            });
        match (planted, self.group_of(candidate)) {
            (Some(p), Some(c)) => p != c,
            _ => true,
        }
    }

    /// FITB questions whose negatives come from groups other than the
    /// outfit's planted group, so the oracle can always separate them.
    pub fn fitb_questions(
        &self,
        outfits: &[Outfit],
        corpus: &[ItemId],
        seed: u64,
    ) -> Result<Vec<FitbQuestion>> {
        build_fitb_questions_with(outfits, corpus, seed, |outfit, candidate| {
            self.foreign_to(outfit, candidate)
        })
    }

    /// Compatibility pairs with foreign-group replacements.
    pub fn compat_pairs(
        &self,
        outfits: &[Outfit],
        corpus: &[ItemId],
        seed: u64,
    ) -> Result<Vec<CompatPair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        outfits
            .iter()
            .map(|outfit| {
                sample_negative_outfit_with(outfit, corpus, &mut rng, |candidate| {
                    self.foreign_to(outfit, candidate)
                })
            })
            .collect()
    }

    /// `item<TAB>id<TAB>group` and `outfit<TAB>set_id<TAB>group` lines,
    /// sorted by id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, g) in &self.item_groups {
            let _ = writeln!(out, "item\t{id}\t{g}");
        }
        for (id, g) in &self.outfit_groups {
            let _ = writeln!(out, "outfit\t{id}\t{g}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut labels = PlantedLabels::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: &str| Error::Format {
                record: lineno,
                message: message.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(kind), Some(id), Some(group), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected `kind<TAB>id<TAB>group`"));
            };
            let group: usize = group.parse().map_err(|_| bad("group is not an integer"))?;
            let target = match kind {
                "item" => &mut labels.item_groups,
                "outfit" => &mut labels.outfit_groups,
                _ => return Err(bad("kind must be `item` or `outfit`")),
            };
            if target.insert(id.to_string(), group).is_some() {
                return Err(bad("duplicate id"));
            }
        }
        Ok(labels)
    }
}

impl SyntheticDataset {
    pub fn group_of(&self, item_id: &str) -> Option<usize> {
        self.labels.group_of(item_id)
    }

    pub fn planted_group(&self, set_id: &str) -> Option<usize> {
        self.labels.planted_group(set_id)
    }

    pub fn oracle_score(&self, items: &[ItemId]) -> f64 {
        self.labels.oracle_score(items)
    }

    pub fn fitb_questions(
        &self,
        outfits: &[Outfit],
        corpus: &[ItemId],
        seed: u64,
    ) -> Result<Vec<FitbQuestion>> {
        self.labels.fitb_questions(outfits, corpus, seed)
    }

    pub fn compat_pairs(
        &self,
        outfits: &[Outfit],
        corpus: &[ItemId],
        seed: u64,
    ) -> Result<Vec<CompatPair>> {
        self.labels.compat_pairs(outfits, corpus, seed)
    }

    /// Item ids in generation order, used as the sampling corpus.
    pub fn corpus(&self) -> Vec<ItemId> {
        self.items.ids()
    }

    /// Deterministic shuffle of the outfits, independent of generation order.
    pub fn shuffled_outfits(&self, seed: u64) -> Vec<Outfit> {
        let mut outfits = self.outfits.clone();
        outfits.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        outfits
    }
}
