//! NGNN and HGNN outfit scorers.
//!
//! Both models share one channel pipeline (category input maps, GRU message
//! passing, attention pooling). They differ only in where a node's
//! neighbors come from: NGNN uses the co-occurrence graph induced on the
//! outfit's categories, HGNN the key/mediator conversion of the outfit's
//! hyperedge. In multimodal mode the visual and text channels run with
//! separate parameters and are mixed as `β·S_v + (1−β)·S_t`.

mod channel;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::dataset::{CategoryId, ItemId, ItemTable, Outfit};
use crate::error::{Error, Result};
use crate::features::{Channel, FeatureStores, Modality, ModalityConfig};
use crate::graph::{
    extract_hyperedge_subgraph, extract_subgraph, CategoryGraph, KeySelector, OutfitSubgraph,
    SmallestIds,
};
use crate::neural::{init_params, GradSet, ParamSet, ParamSpec};

pub use channel::ChannelCache;
use channel::{ChannelParams, Gate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ngnn,
    Hgnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ngnn => "ngnn",
            ModelKind::Hgnn => "hgnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ngnn" => Ok(ModelKind::Ngnn),
            "hgnn" => Ok(ModelKind::Hgnn),
            other => Err(Error::Argument(format!(
                "unknown model `{other}` (expected ngnn or hgnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub modality: ModalityConfig,
    pub hidden: usize,
    pub steps: usize,
    /// Retained categories; each gets its own input maps.
    pub categories: Vec<CategoryId>,
    pub visual_dim: Option<usize>,
    pub text_dim: Option<usize>,
}

impl ModelConfig {
    fn input_dim(&self, channel: Channel) -> Option<usize> {
        match channel {
            Channel::Visual => self.visual_dim,
            Channel::Text => self.text_dim,
        }
    }

    /// Key/value form stored in checkpoint headers.
    pub fn to_metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model".into(), self.kind.as_str().into());
        m.insert("modality".into(), self.modality.mode.as_str().into());
        m.insert("beta".into(), self.modality.beta.to_string());
        m.insert("hidden".into(), self.hidden.to_string());
        m.insert("steps".into(), self.steps.to_string());
        m.insert(
            "categories".into(),
            self.categories
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some(d) = self.visual_dim {
            m.insert("visual_dim".into(), d.to_string());
        }
        if let Some(d) = self.text_dim {
            m.insert("text_dim".into(), d.to_string());
        }
        m
    }

    pub fn from_metadata(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k).ok_or_else(|| Error::Format {
                record: 0,
                message: format!("checkpoint metadata lacks `{k}`"),
            })
        };
        let bad = |k: &str| Error::Format {
            record: 0,
            message: format!("checkpoint metadata `{k}` is invalid"),
        };
        let kind: ModelKind = get("model")?.parse().map_err(|_| bad("model"))?;
        let mode: Modality = get("modality")?.parse().map_err(|_| bad("modality"))?;
        let beta: f64 = get("beta")?.parse().map_err(|_| bad("beta"))?;
        let categories = get("categories")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<CategoryId>().map_err(|_| bad("categories")))
            .collect::<Result<Vec<_>>>()?;
        let opt_dim = |k: &str| -> Result<Option<usize>> {
            m.get(k).map(|v| v.parse().map_err(|_| bad(k))).transpose()
        };
        Ok(ModelConfig {
            kind,
            modality: ModalityConfig::new(mode, beta).map_err(|_| bad("beta"))?,
            hidden: get("hidden")?.parse().map_err(|_| bad("hidden"))?,
            steps: get("steps")?.parse().map_err(|_| bad("steps"))?,
            categories,
            visual_dim: opt_dim("visual_dim")?,
            text_dim: opt_dim("text_dim")?,
        })
    }
}

/// Where a scored outfit's items, graph structure and features come from.
pub struct ScoringContext<'a> {
    pub items: &'a ItemTable,
    pub graph: &'a CategoryGraph,
    pub stores: &'a FeatureStores,
    pub key_selector: &'a dyn KeySelector,
}

impl<'a> ScoringContext<'a> {
    pub fn new(items: &'a ItemTable, graph: &'a CategoryGraph, stores: &'a FeatureStores) -> Self {
        ScoringContext {
            items,
            graph,
            stores,
            key_selector: &SmallestIds,
        }
    }
}

/// An outfit resolved into model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutfitGraph {
    pub categories: Vec<CategoryId>,
    /// Parameter index of each node's category.
    pub nodes: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    /// `features[channel][node][item]`, channels in modality order.
    pub features: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Intermediate values of a full (all-channel) forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    revision: u64,
    nodes: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    channels: Vec<ChannelCache>,
    score: f64,
}

impl ForwardCache {
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn channel(&self, channel: Channel) -> Option<&ChannelCache> {
        self.channels.iter().find(|c| c.channel() == channel)
    }
}

/// Parameter layout and scoring logic for one NGNN/HGNN configuration.
#[derive(Debug, Clone)]
pub struct CompatModel {
    config: ModelConfig,
    category_index: HashMap<CategoryId, usize>,
    channels: Vec<ChannelParams>,
    specs: Vec<ParamSpec>,
}

fn channel_specs(prefix: &str, categories: &[CategoryId], hidden: usize, input: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for c in categories {
        specs.push(ParamSpec::new(format!("{prefix}.embed.{c}.weight"), &[hidden, input]));
        specs.push(ParamSpec::new(format!("{prefix}.embed.{c}.bias"), &[hidden]));
    }
    let k = categories.len();
    specs.push(ParamSpec::new(format!("{prefix}.edge.weight"), &[k, k]));
    for gate in ["update", "reset", "candidate"] {
        specs.push(ParamSpec::new(format!("{prefix}.gru.{gate}.msg.weight"), &[hidden, hidden]));
        specs.push(ParamSpec::new(format!("{prefix}.gru.{gate}.state.weight"), &[hidden, hidden]));
        specs.push(ParamSpec::new(format!("{prefix}.gru.{gate}.bias"), &[hidden]));
    }
    specs.push(ParamSpec::new(format!("{prefix}.attn.weight"), &[hidden, hidden]));
    specs.push(ParamSpec::new(format!("{prefix}.attn.query.weight"), &[hidden]));
    specs.push(ParamSpec::new(format!("{prefix}.score.weight"), &[hidden]));
    specs
}

impl CompatModel {
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Argument("hidden size must be positive".into()));
        }
        config.categories.sort_unstable();
        config.categories.dedup();
        if config.categories.is_empty() {
            return Err(Error::Argument("model needs at least one category".into()));
        }
        let mut specs = Vec::new();
        for &channel in config.modality.mode.channels() {
            let dim = config.input_dim(channel).ok_or_else(|| {
                Error::Argument(format!(
                    "{} modality needs a {} input dimension",
                    config.modality.mode,
                    channel.as_str()
                ))
            })?;
            if dim == 0 {
                return Err(Error::Argument(format!("{} input dim is zero", channel.as_str())));
            }
            specs.extend(channel_specs(channel.as_str(), &config.categories, config.hidden, dim));
        }

        // Resolve handles against the layout a ParamSet built from `specs` will have.
        let position: HashMap<&str, usize> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let id = |name: String| crate::neural::ParamId(position[name.as_str()]);
        let gate = |p: &str, g: &str| Gate {
            msg: id(format!("{p}.gru.{g}.msg.weight")),
            state: id(format!("{p}.gru.{g}.state.weight")),
            bias: id(format!("{p}.gru.{g}.bias")),
        };
        let channels = config
            .modality
            .mode
            .channels()
            .iter()
            .map(|&channel| {
                let p = channel.as_str();
                ChannelParams {
                    channel,
                    embed_weight: config
                        .categories
                        .iter()
                        .map(|c| id(format!("{p}.embed.{c}.weight")))
                        .collect(),
                    embed_bias: config
                        .categories
                        .iter()
                        .map(|c| id(format!("{p}.embed.{c}.bias")))
                        .collect(),
                    edge: id(format!("{p}.edge.weight")),
                    update: gate(p, "update"),
                    reset: gate(p, "reset"),
                    candidate: gate(p, "candidate"),
                    attn: id(format!("{p}.attn.weight")),
                    query: id(format!("{p}.attn.query.weight")),
                    score: id(format!("{p}.score.weight")),
                }
            })
            .collect();
        let category_index = config
            .categories
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        Ok(CompatModel {
            config,
            category_index,
            channels,
            specs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        init_params(&self.specs, seed)
    }

    /// Checks that `params` has exactly this model's layout.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Format {
                record: 0,
                message: format!(
                    "parameter set has {} tensors, model expects {}",
                    params.len(),
                    self.specs.len()
                ),
            });
        }
        for (i, ((_, name, tensor), spec)) in params.iter().zip(&self.specs).enumerate() {
            if name != spec.name || tensor.shape() != spec.shape.as_slice() {
                return Err(Error::Format {
                    record: i + 1,
                    message: format!(
                        "parameter `{name}` {:?} does not match expected `{}` {:?}",
                        tensor.shape(),
                        spec.name,
                        spec.shape
                    ),
                });
            }
        }
        Ok(())
    }

    fn category_slot(&self, category: CategoryId) -> Result<usize> {
        self.category_index.get(&category).copied().ok_or_else(|| {
            Error::Model(format!("category {category} has no parameters (not retained)"))
        })
    }

    /// Resolves an outfit into nodes, neighbor lists and features.
    pub fn prepare(&self, items: &[ItemId], ctx: &ScoringContext<'_>) -> Result<OutfitGraph> {
        let outfit = Outfit::new("", items.to_vec());
        let channels = self.config.modality.mode.channels();
        let lookup = |id: &str| -> Result<Vec<Vec<f64>>> {
            channels
                .iter()
                .map(|&c| ctx.stores.lookup(id, c).map(<[f64]>::to_vec))
                .collect()
        };
        let sub: OutfitSubgraph<Vec<Vec<f64>>> = match self.config.kind {
            ModelKind::Ngnn => extract_subgraph(&outfit, ctx.items, ctx.graph, lookup)?,
            ModelKind::Hgnn => {
                extract_hyperedge_subgraph(&outfit, ctx.items, ctx.key_selector, lookup).map_err(
                    |e| match e {
                        Error::Structure(msg) => Error::Model(format!("degenerate hyperedge: {msg}")),
                        other => other,
                    },
                )?
            }
        };
        self.graph_from_subgraph(sub)
    }

    /// Builds model inputs from an already extracted subgraph whose payload
    /// holds one feature vector per channel for every item.
    pub fn graph_from_subgraph(&self, sub: OutfitSubgraph<Vec<Vec<f64>>>) -> Result<OutfitGraph> {
        let nodes = sub
            .nodes
            .iter()
            .map(|&c| self.category_slot(c))
            .collect::<Result<Vec<_>>>()?;
        let neighbors = sub.neighbors();
        let n_channels = self.channels.len();
        let mut features = vec![Vec::with_capacity(sub.nodes.len()); n_channels];
        for node_items in sub.payload {
            let mut per_channel = vec![Vec::with_capacity(node_items.len()); n_channels];
            for item in node_items {
                for (c, vector) in item.into_iter().enumerate() {
                    per_channel[c].push(vector);
                }
            }
            for (c, v) in per_channel.into_iter().enumerate() {
                features[c].push(v);
            }
        }
        for (cp, feats) in self.channels.iter().zip(&features) {
            let expected = self.config.input_dim(cp.channel).unwrap_or(0);
            if feats.iter().flatten().any(|x| x.len() != expected) {
                return Err(Error::Model(format!(
                    "{} features do not have dimension {expected}",
                    cp.channel.as_str()
                )));
            }
        }
        Ok(OutfitGraph {
            categories: sub.nodes,
            nodes,
            neighbors,
            features,
        })
    }

    pub fn forward(&self, params: &ParamSet, graph: &OutfitGraph) -> Result<ForwardCache> {
        if graph.nodes.is_empty() {
            return Err(Error::Model("cannot score an empty outfit".into()));
        }
        let mut channels = Vec::with_capacity(self.channels.len());
        let mut score = 0.0;
        for (cp, feats) in self.channels.iter().zip(&graph.features) {
            let cache = channel::forward(
                cp,
                params,
                &graph.nodes,
                &graph.neighbors,
                feats.clone(),
                self.config.hidden,
                self.config.steps,
            );
            score += self.config.modality.channel_weight(cp.channel) * cache.score();
            channels.push(cache);
        }
        Ok(ForwardCache {
            revision: params.revision(),
            nodes: graph.nodes.clone(),
            neighbors: graph.neighbors.clone(),
            channels,
            score,
        })
    }

    /// Exact gradient of `upstream · S` with respect to every parameter.
    /// Parameters the outfit never touched have no gradient slot.
    pub fn backward(&self, params: &ParamSet, cache: &ForwardCache, upstream: f64) -> Result<GradSet> {
        let mut grads = GradSet::zeros_like(params);
        self.backward_into(params, cache, upstream, &mut grads)?;
        Ok(grads)
    }

    pub fn backward_into(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        upstream: f64,
        grads: &mut GradSet,
    ) -> Result<()> {
        if cache.revision != params.revision() || cache.channels.len() != self.channels.len() {
            return Err(Error::Structure(
                "forward cache was produced with different parameters".into(),
            ));
        }
        if grads.len() != params.len() {
            return Err(Error::Structure("gradient set does not match parameters".into()));
        }
        for (cp, ch) in self.channels.iter().zip(&cache.channels) {
            let weight = self.config.modality.channel_weight(cp.channel);
            channel::backward(
                cp,
                params,
                &cache.nodes,
                &cache.neighbors,
                ch,
                upstream * weight,
                grads,
            );
        }
        Ok(())
    }

    pub fn score_graph(&self, params: &ParamSet, graph: &OutfitGraph) -> Result<f64> {
        Ok(self.forward(params, graph)?.score())
    }

    pub fn score(&self, params: &ParamSet, items: &[ItemId], ctx: &ScoringContext<'_>) -> Result<f64> {
        let graph = self.prepare(items, ctx)?;
        self.score_graph(params, &graph)
    }

    /// The attention head alone, applied to given final node states.
    pub fn attention_score(
        &self,
        params: &ParamSet,
        channel: Channel,
        states: &[Vec<f64>],
    ) -> Result<f64> {
        let cp = self
            .channels
            .iter()
            .find(|c| c.channel == channel)
            .ok_or_else(|| Error::Model(format!("model has no {} channel", channel.as_str())))?;
        Ok(channel::attention_pool(cp, params, states).3)
    }
}

/// Scores `items` with `model`.
pub fn score_outfit(
    model: &CompatModel,
    params: &ParamSet,
    items: &[ItemId],
    ctx: &ScoringContext<'_>,
) -> Result<f64> {
    model.score(params, items, ctx)
}
