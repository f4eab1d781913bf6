//! Per-pixel relevancy maps.
//!
//! For window radius `r`, pixel `p` is classified from the statistics of the
//! square around it. The assigned cluster's map receives the relevancy, all
//! other maps receive zero, and outliers leave every map at zero.

use std::fmt;

use log::warn;
use rayon::prelude::*;

use crate::classify::{classify, FrozenBase};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, PixelMask, Raster, SquareSpec};
use crate::graph::ClusterId;
use crate::model::TrainedModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Radius(usize),
    /// Pixel-wise maximum over radii.
    Final,
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Radius(r) => write!(f, "r{r}"),
            MapKind::Final => f.write_str("final"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevancyMap {
    pub width: usize,
    pub height: usize,
    pub cluster: ClusterId,
    pub kind: MapKind,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f32>,
}

impl RelevancyMap {
    pub fn zeros(width: usize, height: usize, cluster: ClusterId, kind: MapKind) -> Self {
        Self {
            width,
            height,
            cluster,
            kind,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Classifies reduced feature vectors, exactly or against a frozen base
/// trajectory.
pub struct MapEngine<'a> {
    model: &'a TrainedModel,
    frozen: Option<FrozenBase>,
}

impl<'a> MapEngine<'a> {
    pub fn exact(model: &'a TrainedModel) -> Self {
        Self {
            model,
            frozen: None,
        }
    }

    pub fn frozen_base(model: &'a TrainedModel) -> Result<Self> {
        Ok(Self {
            model,
            frozen: Some(FrozenBase::new(&model.dataset, &model.config)?),
        })
    }

    pub fn new(model: &'a TrainedModel, frozen: bool) -> Result<Self> {
        if frozen {
            Self::frozen_base(model)
        } else {
            Ok(Self::exact(model))
        }
    }

    pub fn model(&self) -> &TrainedModel {
        self.model
    }

    /// Assigned cluster and relevancy of raw (unreduced) features.
    pub fn classify_raw(&self, raw: &[f64]) -> Result<(Option<ClusterId>, f64)> {
        let w = self.model.pca.transform(raw)?;
        let result = match &self.frozen {
            Some(f) => f.classify(&w)?,
            None => classify(&self.model.dataset, &w, &self.model.config)?,
        };
        Ok((result.assigned, result.relevancy))
    }
}

/// Maps for one radius, one per cluster, plus the count of pixels whose
/// classification failed (they are left at zero).
#[derive(Clone, Debug)]
pub struct RadiusMaps {
    pub radius: usize,
    pub maps: Vec<RelevancyMap>,
    pub failures: usize,
}

/// Relevancy maps of every cluster for window radius `radius`. When
/// `selection` is given, only its pixels are classified.
pub fn compute_maps(
    raster: &Raster,
    engine: &MapEngine<'_>,
    radius: usize,
    selection: Option<&PixelMask>,
) -> Result<RadiusMaps> {
    let model = engine.model();
    let extractor = FeatureExtractor::new(raster, &model.channels)?;
    if extractor.output_dim() != model.pca.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.pca.input_dim(),
            got: extractor.output_dim(),
        });
    }
    if radius >= raster.width().min(raster.height()) {
        return Err(Error::InvalidParameter(format!(
            "radius {radius} needs an image of at least {0}x{0} pixels",
            radius + 1
        )));
    }
    let (width, height) = (raster.width(), raster.height());
    let rows: Vec<Vec<(Option<ClusterId>, f64, bool)>> = (0..height)
        .into_par_iter()
        .map(|row| {
            (0..width)
                .map(|col| {
                    if selection.is_some_and(|m| !m.contains(row, col)) {
                        return (None, 0.0, false);
                    }
                    let outcome = extractor
                        .extract(raster, SquareSpec { row, col, radius })
                        .and_then(|f| engine.classify_raw(&f));
                    match outcome {
                        Ok((assigned, r)) => (assigned, r, false),
                        Err(_) => (None, 0.0, true),
                    }
                })
                .collect()
        })
        .collect();

    let n_clusters = model.dataset.n_clusters();
    let mut maps: Vec<RelevancyMap> = (0..n_clusters)
        .map(|c| RelevancyMap::zeros(width, height, ClusterId(c), MapKind::Radius(radius)))
        .collect();
    let mut failures = 0;
    for (row, cells) in rows.into_iter().enumerate() {
        for (col, (assigned, r, failed)) in cells.into_iter().enumerate() {
            failures += usize::from(failed);
            if let Some(a) = assigned {
                maps[a.0].values[row * width + col] = r as f32;
            }
        }
    }
    if failures > 0 {
        warn!("radius {radius}: {failures} pixels failed to classify and were set to 0");
    }
    Ok(RadiusMaps {
        radius,
        maps,
        failures,
    })
}

/// Pixel-wise maximum of maps of one cluster.
pub fn final_map(maps: &[&RelevancyMap]) -> Result<RelevancyMap> {
    let first = maps.first().ok_or(Error::MapMismatch)?;
    if maps
        .iter()
        .any(|m| m.width != first.width || m.height != first.height || m.cluster != first.cluster)
    {
        return Err(Error::MapMismatch);
    }
    let mut out = RelevancyMap::zeros(first.width, first.height, first.cluster, MapKind::Final);
    for m in maps {
        for (o, v) in out.values.iter_mut().zip(&m.values) {
            *o = o.max(*v);
        }
    }
    Ok(out)
}

/// Final map of every cluster from per-radius map sets.
pub fn final_maps(sets: &[RadiusMaps]) -> Result<Vec<RelevancyMap>> {
    let n = sets.first().map(|s| s.maps.len()).ok_or(Error::MapMismatch)?;
    (0..n)
        .map(|c| {
            let per_radius: Vec<&RelevancyMap> = sets
                .iter()
                .map(|s| s.maps.get(c).ok_or(Error::MapMismatch))
                .collect::<Result<_>>()?;
            final_map(&per_radius)
        })
        .collect()
}

/// Mean of the map over the mask eroded by `shrink` pixels.
pub fn mean_relevancy(map: &RelevancyMap, mask: &PixelMask, shrink: usize) -> Result<f64> {
    if mask.width() != map.width || mask.height() != map.height {
        return Err(Error::MapMismatch);
    }
    let inner = mask.eroded(shrink);
    let n = inner.count();
    if n == 0 {
        return Err(Error::EmptyMask { shrink });
    }
    let sum: f64 = inner.pixels().map(|(r, c)| f64::from(map.get(r, c))).sum();
    Ok(sum / n as f64)
}
