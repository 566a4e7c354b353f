//! Outfit compatibility scoring with category graphs and hypergraphs.
//!
//! Outfits are read from Polyvore-style JSON (or generated synthetically),
//! filtered and split, and scored by a graph network whose nodes are the
//! outfit's categories. Two structures are supported: the co-occurrence
//! graph induced on an outfit's categories ([`ModelKind::Ngnn`]) and the
//! key/mediator conversion of its hyperedge ([`ModelKind::Hgnn`]). Models
//! are trained with a pairwise ranking loss and evaluated with
//! fill-in-the-blank accuracy and compatibility AUC.

pub mod dataset;
pub mod error;
pub mod features;
pub mod graph;
pub mod models;
pub mod evaluator;
pub mod neural;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use models::{CompatModel, ModelConfig, ModelKind, ScoringContext};
