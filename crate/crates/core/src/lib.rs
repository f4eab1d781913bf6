//! Natural numerical networks: supervised classification by forward-backward
//! diffusion of labeled points on a complete graph.
//!
//! Labeled points attract members of their own cluster and weakly repel the
//! others while a new observation is pulled towards its neighbours. Once the
//! clusters have consolidated, the newcomer takes the label of its nearest
//! point and is scored with a relevancy coefficient in `[0, 1]`. Running the
//! classifier on a square window around every pixel of a multiband raster
//! yields per-cluster relevancy maps.

pub mod classify;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod graph;
pub mod histogram;
pub mod io;
pub mod model;
pub mod pca;
pub mod relmap;
pub mod synth;
pub mod training;

pub use classify::{classify, ClassificationResult, ClassifierConfig, FrozenBase};
pub use diffusion::{DiffusionParams, SorConfig};
pub use error::{Error, Result};
pub use graph::{build_network, ClusterId, LabeledDataset, NetworkState};
pub use histogram::HistogramConfig;
pub use model::TrainedModel;
pub use pca::PcaModel;
