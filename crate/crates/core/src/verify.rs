//! Finite-difference verification of the model gradients on a tiny
//! synthetic instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    generate_synthetic, sample_negative_outfit, Outfit, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::features::{
    build_vocabulary, encode_item, EmbeddingStore, FeatureStores, Modality, ModalityConfig,
};
use crate::graph::build_cooccurrence_graph;
use crate::models::{CompatModel, ModelConfig, ModelKind, ScoringContext};
use crate::neural::{grad_check, sigmoid, softplus, GradCheckReport, GradSet, ParamSet};

/// Acceptance threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub hidden: usize,
    pub steps: usize,
    pub beta: f64,
    pub lambda_l2: f64,
    /// Central-difference step.
    pub h: f64,
    /// Negative control: corrupts one analytic coordinate.
    pub inject_bug: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 42,
            hidden: 12,
            steps: 3,
            beta: 0.2,
            lambda_l2: 0.001,
            h: 1e-5,
            inject_bug: false,
        }
    }
}

/// One model/modality combination and its report.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub kind: ModelKind,
    pub modality: Modality,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

struct Instance {
    synth: crate::dataset::SyntheticDataset,
    graph: crate::graph::CategoryGraph,
    stores: FeatureStores,
    positive: Outfit,
    negative: Outfit,
}

fn instance(seed: u64) -> Result<Instance> {
    let synth = generate_synthetic(&SyntheticConfig {
        n_outfits: 24,
        n_categories: 6,
        items_per_category: 4,
        planted_groups: 2,
        noise: 0.0,
        feature_dim: 5,
        feature_noise: 0.5,
        seed,
    })?;
    let graph = build_cooccurrence_graph(&synth.outfits, &synth.items)?;
    let vocab = build_vocabulary(synth.items.iter(), 1);
    let mut text = EmbeddingStore::new(vocab.len().max(1))?;
    for item in synth.items.iter() {
        let mut v = encode_item(item, &vocab);
        v.resize(text.dim(), 0.0);
        text.insert(&item.item_id, v)?;
    }
    let source = &synth.outfits[0];
    let positive = Outfit::new(source.set_id.clone(), source.items[..3].to_vec());
    let corpus = synth.corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negative = sample_negative_outfit(&positive, &corpus, &mut rng)?.negative;
    Ok(Instance {
        stores: FeatureStores {
            visual: Some(synth.visual.clone()),
            text: Some(text),
        },
        synth,
        graph,
        positive,
        negative,
    })
}

/// Checks the pairwise training loss (BPR plus L2) of one model on a 3-item
/// outfit and its one-item corruption, at Glorot-initialized parameters.
pub fn model_grad_check(
    kind: ModelKind,
    modality: Modality,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let inst = instance(options.seed)?;
    let modality_config = match modality {
        Modality::Visual => ModalityConfig::visual(),
        Modality::Textual => ModalityConfig::textual(),
        Modality::Multimodal => ModalityConfig::new(Modality::Multimodal, options.beta)?,
    };
    let model = CompatModel::new(ModelConfig {
        kind,
        modality: modality_config,
        hidden: options.hidden,
        steps: options.steps,
        categories: inst.synth.category_set.iter().copied().collect(),
        visual_dim: inst.stores.visual.as_ref().map(EmbeddingStore::dim),
        text_dim: inst.stores.text.as_ref().map(EmbeddingStore::dim),
    })?;
    let ctx = ScoringContext::new(&inst.synth.items, &inst.graph, &inst.stores);
    let pos = model.prepare(&inst.positive.items, &ctx)?;
    let neg = model.prepare(&inst.negative.items, &ctx)?;
    let params = model.init_params(options.seed)?;
    let lambda = options.lambda_l2;

    let loss = |q: &ParamSet| -> Result<f64> {
        let diff = model.score_graph(q, &pos)? - model.score_graph(q, &neg)?;
        Ok(softplus(-diff) + lambda * q.weight_sum_squares())
    };
    let analytic = |q: &ParamSet| -> Result<GradSet> {
        let (cp, cn) = (model.forward(q, &pos)?, model.forward(q, &neg)?);
        let d = sigmoid(-(cp.score() - cn.score()));
        let mut grads = model.backward(q, &cp, -d)?;
        model.backward_into(q, &cn, d, &mut grads)?;
        grads.add_l2(q, lambda);
        if options.inject_bug {
            let id = q
                .id(&format!("{}.score.weight", modality.channels()[0].as_str()))
                .ok_or_else(|| Error::Model("score weight missing".into()))?;
            let shape = q.get(id).shape().to_vec();
            grads.entry(id, &shape).data_mut()[0] *= 1.5;
        }
        Ok(grads)
    };
    grad_check(loss, analytic, &params, options.h)
}

/// Both models in all three modalities.
pub fn grad_check_all(options: &GradCheckOptions) -> Result<Vec<GradCheckCase>> {
    let mut cases = Vec::new();
    for kind in [ModelKind::Ngnn, ModelKind::Hgnn] {
        for modality in [Modality::Visual, Modality::Textual, Modality::Multimodal] {
            let report = model_grad_check(kind, modality, options)
                .map_err(|e| e.context(format!("gradcheck {kind} {}", modality.as_str())))?;
            cases.push(GradCheckCase {
                kind,
                modality,
                report,
            });
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_agree_to_roundoff() {
        let cases = grad_check_all(&GradCheckOptions::default()).unwrap();
        assert_eq!(cases.len(), 6);
        for case in &cases {
            assert!(case.report.coordinates > 100, "{case:?}");
            assert!(case.report.max_abs_error < 1e-10, "{case:?}");
        }
    }

    #[test]
    fn injected_bug_is_detected() {
        let options = GradCheckOptions {
            inject_bug: true,
            ..GradCheckOptions::default()
        };
        let report = model_grad_check(ModelKind::Ngnn, Modality::Visual, &options).unwrap();
        assert!(report.max_rel_error > 0.1, "{report:?}");
        assert_eq!(report.worst_param, "visual.score.weight");
        assert_eq!(report.worst_index, 0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let options = GradCheckOptions::default();
        let a = model_grad_check(ModelKind::Hgnn, Modality::Multimodal, &options).unwrap();
        let b = model_grad_check(ModelKind::Hgnn, Modality::Multimodal, &options).unwrap();
        assert_eq!(a, b);
    }
}
