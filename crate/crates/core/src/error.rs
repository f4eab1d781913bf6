use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dynamics diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("SOR did not converge in {iterations} sweeps (relative residual {residual:e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("relevancy undefined: {0}")]
    Relevancy(String),

    #[error("sample index ({row}, {col}) lies beyond one reflection of a {height}x{width} raster")]
    ReflectionOutOfRange {
        row: isize,
        col: isize,
        height: usize,
        width: usize,
    },

    #[error("raster has no band named {0:?}")]
    MissingBand(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("PCA: {0}")]
    Pca(String),

    #[error("mask is empty after erosion by {shrink}")]
    EmptyMask { shrink: usize },

    #[error("map dimension mismatch")]
    MapMismatch,

    #[error("pruning would empty cluster {0}")]
    PruneEmptiesCluster(usize),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    ModelVersion { found: String, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
