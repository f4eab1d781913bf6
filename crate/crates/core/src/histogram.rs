//! Histogram stopping criterion.
//!
//! Points are binned into an origin-anchored grid of spacing `h`. A cell is
//! marked when it holds at least `S_min` points (the size of the smallest
//! labeled cluster). A marked cell has formed a cluster when every cell at
//! Chebyshev distance `d` with `inner < d <= outer` is empty.

use std::collections::HashMap;

use crate::graph::NetworkState;

pub type CellIndex = Vec<i64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramConfig {
    /// Cell spacing.
    pub h: f64,
    /// Chebyshev radius of the inner square (excluded from the ring).
    pub inner: u32,
    /// Chebyshev radius of the outer square (included in the ring).
    pub outer: u32,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            inner: 1,
            outer: 8,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) || self.inner >= self.outer {
            return Err(crate::Error::InvalidParameter(format!(
                "histogram needs h > 0 and inner < outer, got h={} inner={} outer={}",
                self.h, self.inner, self.outer
            )));
        }
        Ok(())
    }

    /// Distance below which a newcomer is assigned to its nearest labeled point.
    pub fn assignment_radius(&self) -> f64 {
        10.0 * self.h
    }
}

pub fn cell_of(x: &[f64], h: f64) -> CellIndex {
    x.iter().map(|c| (c / h).floor() as i64).collect()
}

/// Counts points per occupied cell. `positions` is row-major with `dim` columns.
pub fn build_histogram(positions: &[f64], dim: usize, h: f64) -> HashMap<CellIndex, usize> {
    let mut counts = HashMap::new();
    for x in positions.chunks_exact(dim) {
        *counts.entry(cell_of(x, h)).or_insert(0) += 1;
    }
    counts
}

fn chebyshev(a: &[i64], b: &[i64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

/// Number of marked cells whose surrounding ring is empty.
///
/// `labeled` holds the labeled positions and `min_cluster_size` is `S_min`.
/// The newcomer counts only towards a cell that already holds labeled
/// points; alone it neither forms nor blocks a cluster.
pub fn clusters_formed(
    labeled: &[f64],
    newcomer: Option<&[f64]>,
    dim: usize,
    min_cluster_size: usize,
    config: &HistogramConfig,
) -> usize {
    let mut counts = build_histogram(labeled, dim, config.h);
    if let Some(n) = newcomer.and_then(|w| counts.get_mut(&cell_of(w, config.h))) {
        *n += 1;
    }
    let (inner, outer) = (u64::from(config.inner), u64::from(config.outer));
    counts
        .iter()
        .filter(|(_, &n)| n >= min_cluster_size)
        .filter(|(cell, _)| {
            counts.keys().all(|other| {
                let d = chebyshev(cell, other);
                d <= inner || d > outer
            })
        })
        .count()
}

/// Labeled positions and the newcomer position of a state.
pub fn split_newcomer(state: &NetworkState) -> (&[f64], Option<&[f64]>) {
    match state.newcomer() {
        Some(w) => (&state.positions()[..w * state.dim()], Some(state.position(w))),
        None => (state.positions(), None),
    }
}

/// Size of the smallest nonempty labeled cluster.
pub fn min_cluster_size(state: &NetworkState) -> usize {
    state
        .cluster_sizes()
        .into_iter()
        .filter(|&s| s > 0)
        .min()
        .unwrap_or(1)
}

/// True once at least `n_clusters` clusters have formed.
pub fn should_stop(state: &NetworkState, config: &HistogramConfig, n_clusters: usize) -> bool {
    let (labeled, newcomer) = split_newcomer(state);
    clusters_formed(labeled, newcomer, state.dim(), min_cluster_size(state), config) >= n_clusters
}
