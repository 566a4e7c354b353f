//! Category co-occurrence graph, outfit hypergraph, and the key/mediator
//! conversion of hyperedges into simple edges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::dataset::{CategoryId, ItemId, ItemTable, Outfit};
use crate::error::{Error, Result};

fn ordered(a: CategoryId, b: CategoryId) -> (CategoryId, CategoryId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected category graph weighted by co-occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryGraph {
    nodes: BTreeSet<CategoryId>,
    cooccurrence: BTreeMap<(CategoryId, CategoryId), u32>,
}

impl CategoryGraph {
    pub fn nodes(&self) -> &BTreeSet<CategoryId> {
        &self.nodes
    }

    pub fn count(&self, a: CategoryId, b: CategoryId) -> u32 {
        self.cooccurrence.get(&ordered(a, b)).copied().unwrap_or(0)
    }

    pub fn has_edge(&self, a: CategoryId, b: CategoryId) -> bool {
        a != b && self.count(a, b) > 0
    }

    pub fn edge_count(&self) -> usize {
        self.cooccurrence.len()
    }

    /// Edges as `(a, b, count)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (CategoryId, CategoryId, u32)> + '_ {
        self.cooccurrence.iter().map(|(&(a, b), &n)| (a, b, n))
    }

    /// `cat_a<TAB>cat_b<TAB>count` lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b, n) in self.edges() {
            writeln!(out, "{a}\t{b}\t{n}").unwrap();
        }
        out
    }
}

fn distinct_categories(outfit: &Outfit, items: &ItemTable) -> Result<Vec<CategoryId>> {
    let set: BTreeSet<CategoryId> = outfit
        .items
        .iter()
        .map(|id| items.category_of(id))
        .collect::<Result<_>>()?;
    Ok(set.into_iter().collect())
}

/// Counts every unordered pair of distinct categories inside each outfit.
pub fn build_cooccurrence_graph(outfits: &[Outfit], items: &ItemTable) -> Result<CategoryGraph> {
    let mut graph = CategoryGraph::default();
    for outfit in outfits {
        let cats = distinct_categories(outfit, items)?;
        graph.nodes.extend(cats.iter().copied());
        for (i, &a) in cats.iter().enumerate() {
            for &b in &cats[i + 1..] {
                *graph.cooccurrence.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    Ok(graph)
}

/// An outfit's category nodes with their item payloads and local edges.
///
/// Nodes are sorted by category id and the items inside a node by item id,
/// so the structure does not depend on the order of the outfit's item list.
#[derive(Debug, Clone, PartialEq)]
pub struct OutfitSubgraph<P> {
    pub nodes: Vec<CategoryId>,
    pub item_ids: Vec<Vec<ItemId>>,
    pub payload: Vec<Vec<P>>,
    /// Node-index pairs `(i, j)` with `i < j`, ascending.
    pub edges: Vec<(usize, usize)>,
}

impl<P> OutfitSubgraph<P> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == node || b == node)
            .count()
    }

    /// Sorted neighbor lists per node.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        for list in &mut lists {
            list.sort_unstable();
        }
        lists
    }
}

fn group_by_category(
    outfit: &Outfit,
    items: &ItemTable,
) -> Result<(Vec<CategoryId>, Vec<Vec<ItemId>>)> {
    let mut groups: BTreeMap<CategoryId, Vec<ItemId>> = BTreeMap::new();
    for id in &outfit.items {
        groups
            .entry(items.category_of(id)?)
            .or_default()
            .push(id.clone());
    }
    let mut nodes = Vec::with_capacity(groups.len());
    let mut members = Vec::with_capacity(groups.len());
    for (cat, mut ids) in groups {
        ids.sort();
        nodes.push(cat);
        members.push(ids);
    }
    Ok((nodes, members))
}

fn attach_payload<P, F>(
    nodes: Vec<CategoryId>,
    item_ids: Vec<Vec<ItemId>>,
    edges: Vec<(usize, usize)>,
    mut lookup: F,
) -> Result<OutfitSubgraph<P>>
where
    F: FnMut(&str) -> Result<P>,
{
    let payload = item_ids
        .iter()
        .map(|ids| ids.iter().map(|id| lookup(id)).collect::<Result<Vec<P>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(OutfitSubgraph {
        nodes,
        item_ids,
        payload,
        edges,
    })
}

/// Induced subgraph of the co-occurrence graph on the outfit's categories.
/// Categories absent from the graph become isolated nodes.
pub fn extract_subgraph<P, F>(
    outfit: &Outfit,
    items: &ItemTable,
    graph: &CategoryGraph,
    lookup: F,
) -> Result<OutfitSubgraph<P>>
where
    F: FnMut(&str) -> Result<P>,
{
    let (nodes, item_ids) = group_by_category(outfit, items)?;
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if graph.has_edge(nodes[i], nodes[j]) {
                edges.push((i, j));
            }
        }
    }
    attach_payload(nodes, item_ids, edges, lookup)
}

/// The outfit's own hyperedge, converted with `selector`, as a subgraph.
pub fn extract_hyperedge_subgraph<P, F>(
    outfit: &Outfit,
    items: &ItemTable,
    selector: &dyn KeySelector,
    lookup: F,
) -> Result<OutfitSubgraph<P>>
where
    F: FnMut(&str) -> Result<P>,
{
    let (nodes, item_ids) = group_by_category(outfit, items)?;
    let conversion = convert_hyperedge_with(&nodes, selector)?;
    let position: HashMap<CategoryId, usize> =
        nodes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut edges: Vec<(usize, usize)> = conversion
        .edges
        .iter()
        .map(|&(a, b)| {
            let (i, j) = (position[&a], position[&b]);
            (i.min(j), i.max(j))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    attach_payload(nodes, item_ids, edges, lookup)
}

/// Hypergraph with one hyperedge per outfit over its distinct categories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Hypergraph {
    pub vertices: BTreeSet<CategoryId>,
    /// Sorted, distinct vertex lists.
    pub hyperedges: Vec<Vec<CategoryId>>,
    /// Outfits skipped because they span fewer than two categories.
    pub dropped: usize,
}

impl Hypergraph {
    /// Number of hyperedges incident to each vertex.
    pub fn degrees(&self) -> BTreeMap<CategoryId, usize> {
        let mut degrees = BTreeMap::new();
        for edge in &self.hyperedges {
            for &v in edge {
                *degrees.entry(v).or_insert(0) += 1;
            }
        }
        degrees
    }
}

pub fn build_hypergraph(outfits: &[Outfit], items: &ItemTable) -> Result<Hypergraph> {
    let mut h = Hypergraph::default();
    for outfit in outfits {
        let cats = distinct_categories(outfit, items)?;
        if cats.len() < 2 {
            h.dropped += 1;
            continue;
        }
        h.vertices.extend(cats.iter().copied());
        h.hyperedges.push(cats);
    }
    if h.dropped > 0 {
        log::warn!(
            "{} outfits span fewer than two categories and form no hyperedge",
            h.dropped
        );
    }
    Ok(h)
}

/// Chooses the two key vertices of a hyperedge.
pub trait KeySelector: Sync {
    /// `vertices` is sorted, distinct and has at least two entries.
    fn select(&self, vertices: &[CategoryId]) -> (CategoryId, CategoryId);
}

/// The two smallest category ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmallestIds;

impl KeySelector for SmallestIds {
    fn select(&self, vertices: &[CategoryId]) -> (CategoryId, CategoryId) {
        (vertices[0], vertices[1])
    }
}

/// The two most frequent categories, ties broken by smaller id.
#[derive(Debug, Clone, Default)]
pub struct MostFrequent {
    pub frequency: HashMap<CategoryId, usize>,
}

impl KeySelector for MostFrequent {
    fn select(&self, vertices: &[CategoryId]) -> (CategoryId, CategoryId) {
        let mut ranked = vertices.to_vec();
        ranked.sort_by_key(|c| (std::cmp::Reverse(self.frequency.get(c).copied().unwrap_or(0)), *c));
        (ranked[0], ranked[1])
    }
}

/// Key/mediator form of one hyperedge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperedgeConversion {
    pub keys: (CategoryId, CategoryId),
    pub mediators: Vec<CategoryId>,
    /// `(key1, key2)` first, then `(m, key1)`, `(m, key2)` per mediator.
    pub edges: Vec<(CategoryId, CategoryId)>,
}

pub fn convert_hyperedge(vertices: &[CategoryId]) -> Result<HyperedgeConversion> {
    convert_hyperedge_with(vertices, &SmallestIds)
}

pub fn convert_hyperedge_with(
    vertices: &[CategoryId],
    selector: &dyn KeySelector,
) -> Result<HyperedgeConversion> {
    let distinct: Vec<CategoryId> = vertices
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if distinct.len() < 2 {
        return Err(Error::Structure(format!(
            "hyperedge needs at least 2 distinct vertices, got {}",
            distinct.len()
        )));
    }
    let (k1, k2) = selector.select(&distinct);
    let mediators: Vec<CategoryId> = distinct
        .into_iter()
        .filter(|&c| c != k1 && c != k2)
        .collect();
    let mut edges = Vec::with_capacity(2 * mediators.len() + 1);
    edges.push((k1, k2));
    for &m in &mediators {
        edges.push((m, k1));
        edges.push((m, k2));
    }
    Ok(HyperedgeConversion {
        keys: (k1, k2),
        mediators,
        edges,
    })
}

/// Union of the per-hyperedge conversions with merged parallel edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConvertedGraph {
    pub conversions: Vec<HyperedgeConversion>,
    /// Undirected edge `(a, b)`, `a < b` -> multiplicity.
    pub edges: BTreeMap<(CategoryId, CategoryId), u32>,
}

impl ConvertedGraph {
    /// Edge count before merging parallel edges.
    pub fn total_edges(&self) -> usize {
        self.edges.values().map(|&n| n as usize).sum()
    }
}

pub fn convert_hypergraph(h: &Hypergraph) -> Result<ConvertedGraph> {
    convert_hypergraph_with(h, &SmallestIds)
}

pub fn convert_hypergraph_with(h: &Hypergraph, selector: &dyn KeySelector) -> Result<ConvertedGraph> {
    let mut out = ConvertedGraph::default();
    for edge in &h.hyperedges {
        let conversion = convert_hyperedge_with(edge, selector)?;
        for &(a, b) in &conversion.edges {
            *out.edges.entry(ordered(a, b)).or_insert(0) += 1;
        }
        out.conversions.push(conversion);
    }
    Ok(out)
}

/// Plain-text summary of a hypergraph and its conversion.
pub fn hypergraph_summary(h: &Hypergraph, converted: &ConvertedGraph) -> String {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &h.hyperedges {
        *sizes.entry(e.len()).or_insert(0) += 1;
    }
    let mut out = String::new();
    writeln!(out, "vertices\t{}", h.vertices.len()).unwrap();
    writeln!(out, "hyperedges\t{}", h.hyperedges.len()).unwrap();
    writeln!(out, "dropped_outfits\t{}", h.dropped).unwrap();
    for (k, n) in sizes {
        writeln!(out, "hyperedges_of_size_{k}\t{n}").unwrap();
    }
    writeln!(out, "converted_edges\t{}", converted.total_edges()).unwrap();
    writeln!(out, "converted_distinct_edges\t{}", converted.edges.len()).unwrap();
    out
}
