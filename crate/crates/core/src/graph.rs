//! Labeled points and the evolving state of the complete-graph network.
//!
//! The graph is complete, so no adjacency is stored: every vertex pair is an
//! edge and edge coefficients are evaluated from positions when needed.

use std::fmt;

use crate::error::{Error, Result};

/// Zero-based cluster index. File formats and the CLI use one-based labels;
/// convert with [`ClusterId::from_one_based`] and [`ClusterId::one_based`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub usize);

impl ClusterId {
    pub fn from_one_based(label: usize) -> Option<Self> {
        label.checked_sub(1).map(ClusterId)
    }

    pub fn one_based(self) -> usize {
        self.0 + 1
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.one_based())
    }
}

/// A labeled set of points sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    n_clusters: usize,
    coords: Vec<f64>,
    labels: Vec<ClusterId>,
    ids: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset from row vectors. Every cluster index below the
    /// largest one present must occur at least once.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<ClusterId>, ids: Vec<String>) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, labels, ids)
    }

    /// Builds a dataset from row-major coordinates.
    pub fn from_flat(
        dim: usize,
        coords: Vec<f64>,
        labels: Vec<ClusterId>,
        ids: Vec<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension must be at least 1".into()));
        }
        if coords.len() != labels.len() * dim || ids.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} labels, {} ids and {} coordinates do not describe the same points",
                labels.len(),
                ids.len(),
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite coordinate in point {}",
                i / dim
            )));
        }
        let n_clusters = labels.iter().map(|l| l.0 + 1).max().unwrap_or(0);
        let mut seen = vec![false; n_clusters];
        for l in &labels {
            seen[l.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!(
                "cluster {} has no members",
                ClusterId(missing)
            )));
        }
        Ok(Self {
            dim,
            n_clusters,
            coords,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn label(&self, i: usize) -> ClusterId {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClusterId] {
        &self.labels
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for l in &self.labels {
            sizes[l.0] += 1;
        }
        sizes
    }

    /// The dataset with point `i` removed. Fails if that empties a cluster.
    pub fn without(&self, i: usize) -> Result<Self> {
        let mut coords = self.coords.clone();
        coords.drain(i * self.dim..(i + 1) * self.dim);
        let mut labels = self.labels.clone();
        labels.remove(i);
        let mut ids = self.ids.clone();
        ids.remove(i);
        let reduced = Self::from_flat(self.dim, coords, labels, ids)?;
        if reduced.n_clusters != self.n_clusters {
            return Err(Error::InvalidDataset(format!(
                "removing point {} empties cluster {}",
                self.ids[i], self.labels[i]
            )));
        }
        Ok(reduced)
    }

    /// Keeps the points for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for i in 0..self.len() {
            if keep(i) {
                coords.extend_from_slice(self.point(i));
                labels.push(self.labels[i]);
                ids.push(self.ids[i].clone());
            }
        }
        Self::from_flat(self.dim, coords, labels, ids)
    }
}

/// Positions of all vertices at one time step, together with their labels.
///
/// At most one vertex is unlabeled: the newcomer, always stored last.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    dim: usize,
    n_clusters: usize,
    positions: Vec<f64>,
    labels: Vec<Option<ClusterId>>,
    step: usize,
}

impl NetworkState {
    /// Builds a state from raw parts. Used by tests and by callers that
    /// assemble vertex sets by hand.
    pub fn from_parts(
        dim: usize,
        positions: Vec<f64>,
        labels: Vec<Option<ClusterId>>,
        n_clusters: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 || positions.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: positions.len(),
            });
        }
        let unlabeled: Vec<usize> = (0..labels.len()).filter(|&v| labels[v].is_none()).collect();
        if unlabeled.len() > 1 || unlabeled.first().is_some_and(|&v| v + 1 != labels.len()) {
            return Err(Error::InvalidDataset(
                "only the last vertex may be unlabeled".into(),
            ));
        }
        if labels.iter().flatten().any(|l| l.0 >= n_clusters) {
            return Err(Error::InvalidDataset("label exceeds cluster count".into()));
        }
        Ok(Self {
            dim,
            n_clusters,
            positions,
            labels,
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn position(&self, v: usize) -> &[f64] {
        &self.positions[v * self.dim..(v + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn label(&self, v: usize) -> Option<ClusterId> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<ClusterId>] {
        &self.labels
    }

    /// Index of the unlabeled vertex, if any.
    pub fn newcomer(&self) -> Option<usize> {
        match self.labels.last() {
            Some(None) => Some(self.labels.len() - 1),
            _ => None,
        }
    }

    /// Members per cluster, newcomer excluded.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for l in self.labels.iter().flatten() {
            sizes[l.0] += 1;
        }
        sizes
    }

    pub(crate) fn at_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub(crate) fn advance(&self, positions: Vec<f64>) -> Self {
        Self {
            dim: self.dim,
            n_clusters: self.n_clusters,
            positions,
            labels: self.labels.clone(),
            step: self.step + 1,
        }
    }
}

/// Copies the dataset into a fresh network at step 0, appending the
/// newcomer (if any) as the last vertex.
pub fn build_network(dataset: &LabeledDataset, newcomer: Option<&[f64]>) -> Result<NetworkState> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut positions = dataset.coords().to_vec();
    let mut labels: Vec<Option<ClusterId>> = dataset.labels().iter().copied().map(Some).collect();
    if let Some(w) = newcomer {
        if w.len() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                got: w.len(),
            });
        }
        positions.extend_from_slice(w);
        labels.push(None);
    }
    NetworkState::from_parts(dataset.dim(), positions, labels, dataset.n_clusters())
}
