use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use compat_core::dataset::{
    build_compat_pairs, filter_dataset, split_dataset, category_counts, Item, ItemId, ItemTable,
    Outfit, SplitConfig,
};
use compat_core::evaluator::{auc, fitb_accuracy};
use compat_core::dataset::FitbQuestion;
use compat_core::features::{
    build_vocabulary, encode_item, EmbeddingStore, FeatureStores, Modality, ModalityConfig,
};
use compat_core::graph::{build_cooccurrence_graph, convert_hyperedge, CategoryGraph};
use compat_core::models::{CompatModel, ModelConfig, ModelKind, ScoringContext};
use compat_core::neural::{GradSet, OptimizerState, ParamSet};

const CASES: u32 = 1000;

fn item(id: &str, category: u32, name: &str) -> Item {
    Item {
        item_id: id.to_string(),
        category_id: category,
        name: name.to_string(),
        price: None,
        likes: None,
        image_ref: String::new(),
    }
}

// ---------------------------------------------------------------- graph

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn conversion_edge_count(vertices in prop::collection::btree_set(0u32..500, 2..=8)) {
        let v: Vec<u32> = vertices.iter().copied().collect();
        let k = v.len();
        let c = convert_hyperedge(&v).unwrap();
        prop_assert_eq!(c.edges.len(), 2 * (k - 2) + 1);
        prop_assert!(c.edges.iter().all(|(a, b)| a != b));
        for &m in &c.mediators {
            prop_assert_eq!(c.edges.iter().filter(|(a, b)| *a == m || *b == m).count(), 2);
        }
        for key in [c.keys.0, c.keys.1] {
            prop_assert_eq!(c.edges.iter().filter(|(a, b)| *a == key || *b == key).count(), k - 1);
        }
    }

    #[test]
    fn cooccurrence_ignores_outfit_order(
        raw in prop::collection::vec(prop::collection::vec(0u32..8, 1..6), 1..20),
        seed in any::<u64>(),
    ) {
        let mut items = ItemTable::new();
        let mut outfits = Vec::new();
        for (n, cats) in raw.iter().enumerate() {
            let ids: Vec<ItemId> = cats.iter().enumerate().map(|(k, &c)| {
                let id = format!("{n}_{k}");
                items.insert(item(&id, c, "")).unwrap();
                id
            }).collect();
            outfits.push(Outfit::new(n.to_string(), ids));
        }
        let g = build_cooccurrence_graph(&outfits, &items).unwrap();
        let mut shuffled = outfits.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let h = build_cooccurrence_graph(&shuffled, &items).unwrap();
        prop_assert_eq!(g.to_edge_list(), h.to_edge_list());
    }
}

// -------------------------------------------------------------- dataset

/// Outfits over categories 0..10 with skewed frequencies.
fn corpus_strategy() -> impl Strategy<Value = (Vec<Outfit>, ItemTable)> {
    prop::collection::vec(prop::collection::vec(0u32..10, 1..8), 1..40).prop_map(|raw| {
        let mut items = ItemTable::new();
        let outfits = raw
            .iter()
            .enumerate()
            .map(|(n, cats)| {
                let ids = cats
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let id = format!("s{n}_{}", k + 1);
                        // squaring skews the category distribution
                        items.insert(item(&id, c * c % 10, "")).unwrap();
                        id
                    })
                    .collect();
                Outfit::new(format!("s{n}"), ids)
            })
            .collect();
        (outfits, items)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn filtering_is_idempotent_and_meets_thresholds(
        (outfits, items) in corpus_strategy(),
        min_count in 1usize..6,
        min_size in 1usize..4,
    ) {
        match filter_dataset(&outfits, &items, min_count, min_size) {
            Ok(once) => {
                let twice = filter_dataset(&once.outfits, &items, min_count, min_size).unwrap();
                prop_assert_eq!(&twice, &once);
                prop_assert!(once.outfits.iter().all(|o| o.len() >= min_size));
                let counts = category_counts(&once.outfits, &items).unwrap();
                prop_assert!(counts.values().all(|&n| n >= min_count));
                let kept: BTreeSet<u32> = counts.keys().copied().collect();
                prop_assert_eq!(kept, once.category_set);
            }
            Err(e) => prop_assert!(matches!(e, compat_core::Error::EmptyDataset(_))),
        }
    }

    #[test]
    fn splits_partition_the_outfits(
        (outfits, _items) in corpus_strategy(),
        train in 0.05f64..=1.0,
        validation in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let config = SplitConfig { train_fraction: train, validation_fraction: validation, seed };
        let split = split_dataset(&outfits, &BTreeSet::new(), &config).unwrap();
        prop_assert_eq!(split.len(), outfits.len());
        let mut seen = HashSet::new();
        for o in split.all_outfits() {
            prop_assert!(seen.insert(o.set_id.clone()), "{} twice", o.set_id);
        }
        prop_assert_eq!(split.test.len(), outfits.len() - (outfits.len() as f64 * train).floor() as usize);
        prop_assert_eq!(&split, &split_dataset(&outfits, &BTreeSet::new(), &config).unwrap());
    }

    #[test]
    fn compat_pairs_differ_in_one_position(
        (outfits, items) in corpus_strategy(),
        seed in any::<u64>(),
    ) {
        let corpus: Vec<ItemId> = items.ids();
        let outfits: Vec<Outfit> = outfits.into_iter().filter(|o| o.len() < corpus.len()).collect();
        let pairs = build_compat_pairs(&outfits, &corpus, seed).unwrap();
        for (pair, outfit) in pairs.iter().zip(&outfits) {
            let diff = pair.positive.items.iter().zip(&pair.negative.items).filter(|(a, b)| a != b).count();
            prop_assert_eq!(diff, 1);
            prop_assert!(!outfit.contains(&pair.negative.items[pair.replaced_position]));
        }
        prop_assert_eq!(pairs, build_compat_pairs(&outfits, &corpus, seed).unwrap());
    }
}

// ------------------------------------------------------------- features

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn store_round_trip_is_exact_at_single_precision(
        dim in 1usize..6,
        rows in prop::collection::btree_map("[a-z0-9_]{1,12}", prop::collection::vec(-1e6f64..1e6, 6), 0..12),
    ) {
        let mut store = EmbeddingStore::new(dim).unwrap();
        for (id, v) in &rows {
            store.insert(id, v[..dim].to_vec()).unwrap();
        }
        let back = EmbeddingStore::from_bytes(&store.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.dim(), dim);
        prop_assert_eq!(back.ids(), store.ids());
        for (id, v) in store.iter() {
            let expected: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
            prop_assert_eq!(back.get(id).unwrap(), expected.as_slice());
        }
    }

    #[test]
    fn vocabulary_ignores_item_order_and_encodes_booleans(
        names in prop::collection::vec("[a-c]{1,2}( [a-c]{1,2}){0,3}", 1..15),
        min_frequency in 1usize..4,
        seed in any::<u64>(),
    ) {
        let items: Vec<Item> = names.iter().enumerate().map(|(n, s)| item(&n.to_string(), 0, s)).collect();
        let vocab = build_vocabulary(items.iter(), min_frequency);
        let mut shuffled = items.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let again = build_vocabulary(shuffled.iter(), min_frequency);
        prop_assert_eq!(again.words(), vocab.words());
        for it in &items {
            let v = encode_item(it, &vocab);
            prop_assert_eq!(v.len(), vocab.len());
            prop_assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }
}

// ------------------------------------------------------------ evaluator

fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &n in neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn auc_matches_pair_counting(
        pos in prop::collection::vec(0u8..20, 1..60),
        neg in prop::collection::vec(0u8..20, 1..60),
    ) {
        // small integer range forces plenty of ties
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        prop_assert_eq!(auc(&pos, &neg).unwrap(), brute_force_auc(&pos, &neg));
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        pos in prop::collection::vec(-5.0f64..5.0, 1..50),
        neg in prop::collection::vec(-5.0f64..5.0, 1..50),
    ) {
        let a = auc(&pos, &neg).unwrap();
        let f = |v: &Vec<f64>| v.iter().map(|x| (x / 5.0).atan() * 3.0 + 1.0).collect::<Vec<_>>();
        prop_assert_eq!(auc(&f(&pos), &f(&neg)).unwrap(), a);
        let tie_free = pos.iter().all(|p| neg.iter().all(|n| p != n));
        if tie_free {
            prop_assert!((a + auc(&neg, &pos).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fitb_is_invariant_under_monotone_scorers(
        scores in prop::collection::vec(prop::array::uniform4(0u8..6), 1..30),
        answers in prop::collection::vec(0usize..4, 30),
    ) {
        let questions: Vec<FitbQuestion> = scores.iter().enumerate().map(|(q, s)| FitbQuestion {
            set_id: q.to_string(),
            partial: vec![format!("q{q}")],
            masked_position: 1,
            choices: [0, 1, 2, 3].map(|c| format!("{}", s[c])),
            answer_index: answers[q],
        }).collect();
        let raw = |items: &[ItemId]| Ok(items[1].parse::<f64>().unwrap());
        let mapped = |items: &[ItemId]| Ok((items[1].parse::<f64>().unwrap() * 0.7).exp());
        prop_assert_eq!(fitb_accuracy(raw, &questions).unwrap(), fitb_accuracy(mapped, &questions).unwrap());
    }
}

// --------------------------------------------------------------- models

const CATEGORIES: u32 = 6;
const PER_CATEGORY: usize = 3;

struct Fixture {
    items: ItemTable,
    graph: CategoryGraph,
    stores: FeatureStores,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut items = ItemTable::new();
        let mut visual = EmbeddingStore::new(4).unwrap();
        let mut text = EmbeddingStore::new(3).unwrap();
        for c in 0..CATEGORIES {
            for k in 0..PER_CATEGORY {
                let id = format!("c{c}_{k}");
                items.insert(item(&id, c, "")).unwrap();
                visual.insert(&id, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                text.insert(&id, (0..3).map(|_| f64::from(rng.random_range(0..2u8))).collect()).unwrap();
            }
        }
        // a sparse ring plus one chord, so NGNN subgraphs are not all complete
        let train: Vec<Outfit> = (0..CATEGORIES)
            .map(|c| (c, (c + 1) % CATEGORIES))
            .chain([(0, 3)])
            .enumerate()
            .map(|(n, (a, b))| Outfit::new(format!("t{n}"), vec![format!("c{a}_0"), format!("c{b}_0")]))
            .collect();
        let graph = build_cooccurrence_graph(&train, &items).unwrap();
        Fixture { items, graph, stores: FeatureStores { visual: Some(visual), text: Some(text) } }
    })
}

fn model(kind: ModelKind, modality: Modality) -> CompatModel {
    let modality = match modality {
        Modality::Visual => ModalityConfig::visual(),
        Modality::Textual => ModalityConfig::textual(),
        Modality::Multimodal => ModalityConfig::new(Modality::Multimodal, 0.3).unwrap(),
    };
    CompatModel::new(ModelConfig {
        kind,
        modality,
        hidden: 4,
        steps: 2,
        categories: (0..CATEGORIES).collect(),
        visual_dim: Some(4),
        text_dim: Some(3),
    })
    .unwrap()
}

fn params(m: &CompatModel, seed: u64) -> ParamSet {
    let mut p = m.init_params(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    p
}

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Ngnn), Just(ModelKind::Hgnn)]
}

fn modality_strategy() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Visual), Just(Modality::Textual), Just(Modality::Multimodal)]
}

/// Items from at least two distinct categories; repeats within a category allowed.
fn outfit_strategy() -> impl Strategy<Value = Vec<ItemId>> {
    prop::collection::btree_set((0..CATEGORIES, 0..PER_CATEGORY), 2..8)
        .prop_filter("two categories", |s| s.iter().map(|(c, _)| c).collect::<BTreeSet<_>>().len() >= 2)
        .prop_map(|s| s.into_iter().map(|(c, k)| format!("c{c}_{k}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn scores_ignore_item_order(
        kind in kind_strategy(),
        modality in modality_strategy(),
        (outfit, shuffled) in outfit_strategy().prop_flat_map(|o| (Just(o.clone()), Just(o).prop_shuffle())),
        seed in any::<u64>(),
    ) {
        let fx = fixture();
        let m = model(kind, modality);
        let p = params(&m, seed);
        let ctx = ScoringContext::new(&fx.items, &fx.graph, &fx.stores);
        let a = m.score(&p, &outfit, &ctx).unwrap();
        let b = m.score(&p, &shuffled, &ctx).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn gradients_stay_on_present_categories(
        kind in kind_strategy(),
        modality in modality_strategy(),
        outfit in outfit_strategy(),
        seed in any::<u64>(),
    ) {
        let fx = fixture();
        let m = model(kind, modality);
        let p = params(&m, seed);
        let ctx = ScoringContext::new(&fx.items, &fx.graph, &fx.stores);
        let present: BTreeSet<u32> = outfit.iter().map(|id| fx.items.category_of(id).unwrap()).collect();
        let cache = m.forward(&p, &m.prepare(&outfit, &ctx).unwrap()).unwrap();
        let grads = m.backward(&p, &cache, 1.0).unwrap();
        let mut touched = 0;
        for (id, name, _) in p.iter() {
            let Some(g) = grads.get(id) else { continue };
            if let Some(rest) = name.split(".embed.").nth(1) {
                let c: u32 = rest.split('.').next().unwrap().parse().unwrap();
                if !present.contains(&c) {
                    prop_assert!(g.data().iter().all(|&v| v == 0.0), "{} has gradient", name);
                } else if g.data().iter().any(|&v| v != 0.0) {
                    touched += 1;
                }
            } else if name.ends_with(".edge.weight") {
                for r in 0..CATEGORIES {
                    for c in 0..CATEGORIES {
                        if !(present.contains(&r) && present.contains(&c)) {
                            prop_assert_eq!(g.at(r as usize, c as usize), 0.0, "{}[{},{}]", name, r, c);
                        }
                    }
                }
            }
        }
        prop_assert!(touched > 0);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged(
        adam in any::<bool>(),
        learning_rate in 1e-5f64..1.0,
        steps in 1usize..4,
        seed in any::<u64>(),
    ) {
        let m = model(ModelKind::Ngnn, Modality::Multimodal);
        let mut p = params(&m, seed);
        let before: Vec<Vec<f64>> = p.iter().map(|(_, _, t)| t.data().to_vec()).collect();
        let mut state = if adam {
            OptimizerState::adam(&p, learning_rate)
        } else {
            OptimizerState::rmsprop(&p, learning_rate)
        };
        let zero = GradSet::zeros_like(&p);
        for _ in 0..steps {
            state.apply(&mut p, &zero).unwrap();
        }
        let after: Vec<Vec<f64>> = p.iter().map(|(_, _, t)| t.data().to_vec()).collect();
        prop_assert_eq!(before, after);
    }
}
