//! Leave-one-out evaluation, exhaustive parameter search, and the two
//! dataset refinements driven by relevancy maps: moving representative
//! squares to better pixels and dropping areas that never classify.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::classify::{classify, ClassifierConfig};
use crate::error::{Error, Result};
use crate::features::{ChannelSpec, FeatureExtractor, PixelMask, Raster, SquareSpec};
use crate::graph::{ClusterId, LabeledDataset};
use crate::model::{reduce, TrainedModel};
use crate::pca::PcaModel;
use crate::relmap::RadiusMaps;

/// Inclusive arithmetic range `start, start + step, ..., <= end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl ParamRange {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && start <= end && start.is_finite() && end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bad range {start}..={end} step {step}"
            )));
        }
        Ok(Self { start, end, step })
    }

    pub fn single(value: f64) -> Self {
        Self {
            start: value,
            end: value,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        // round the count so decimal steps like 0.001 do not lose the endpoint
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        // snap to 12 decimals so 0.001 + 72 * 0.001 prints as 0.073
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

/// Cartesian grid over the per-coordinate weights and the newcomer cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningGrid {
    pub weights: Vec<ParamRange>,
    pub delta: ParamRange,
}

impl TuningGrid {
    /// `K_i` in `[100, 5000]` step 100, `delta` in `[0.001, 0.1]` step 0.001.
    pub fn full(dim: usize) -> Self {
        Self {
            weights: vec![
                ParamRange {
                    start: 100.0,
                    end: 5000.0,
                    step: 100.0
                };
                dim
            ],
            delta: ParamRange {
                start: 0.001,
                end: 0.1,
                step: 0.001,
            },
        }
    }

    /// Parameter tuples in lexicographic order of `(K_1, ..., K_k, delta)`.
    pub fn trials(&self) -> Vec<Trial> {
        let mut trials = vec![Vec::new()];
        for range in &self.weights {
            trials = trials
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    range.values().into_iter().map(move |v| {
                        let mut t = prefix.clone();
                        t.push(v);
                        t
                    })
                })
                .collect();
        }
        let deltas = self.delta.values();
        trials
            .into_iter()
            .flat_map(|weights| {
                deltas.iter().map(move |&delta| Trial {
                    weights: weights.clone(),
                    delta,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub weights: Vec<f64>,
    pub delta: f64,
}

impl Trial {
    fn key(&self) -> Vec<u64> {
        self.weights
            .iter()
            .chain(std::iter::once(&self.delta))
            .map(|v| v.to_bits())
            .collect()
    }

    pub fn apply(&self, base: &ClassifierConfig) -> ClassifierConfig {
        let mut c = base.clone();
        c.diffusion.weights = self.weights.clone();
        c.diffusion.delta = self.delta;
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointOutcome {
    pub id: String,
    pub truth: ClusterId,
    pub assigned: Option<ClusterId>,
    pub relevancy: f64,
    /// Why the point could not be classified, if it could not.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LooReport {
    pub correct: usize,
    pub incorrect: usize,
    pub outliers: usize,
    pub per_point: Vec<PointOutcome>,
}

impl LooReport {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect + self.outliers
    }

    pub fn success_rate(&self) -> f64 {
        self.correct as f64 / self.total() as f64
    }

    fn from_outcomes(per_point: Vec<PointOutcome>) -> Self {
        let correct = per_point.iter().filter(|p| p.assigned == Some(p.truth)).count();
        let outliers = per_point.iter().filter(|p| p.assigned.is_none()).count();
        Self {
            correct,
            incorrect: per_point.len() - correct - outliers,
            outliers,
            per_point,
        }
    }
}

/// Holds out each point in turn and classifies it against the rest.
/// Points whose removal empties their cluster, or whose dynamics fail, count
/// as outliers with the reason recorded.
pub fn loo_evaluate(dataset: &LabeledDataset, config: &ClassifierConfig) -> Result<LooReport> {
    config.validate()?;
    let outcomes = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let truth = dataset.label(i);
            let outcome = dataset
                .without(i)
                .and_then(|rest| classify(&rest, dataset.point(i), config));
            match outcome {
                Ok(r) => PointOutcome {
                    id: dataset.id(i).to_string(),
                    truth,
                    assigned: r.assigned,
                    relevancy: r.relevancy,
                    failure: None,
                },
                Err(e) => PointOutcome {
                    id: dataset.id(i).to_string(),
                    truth,
                    assigned: None,
                    relevancy: 0.0,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(LooReport::from_outcomes(outcomes))
}

/// Summary of one evaluated parameter tuple, one line of the progress log:
///
/// ```text
/// trial<TAB>weights=2800,4700<TAB>delta=0.004<TAB>correct=105<TAB>incorrect=16<TAB>outliers=4
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: Trial,
    pub correct: usize,
    pub incorrect: usize,
    pub outliers: usize,
}

impl fmt::Display for TrialRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let weights: Vec<String> = self.trial.weights.iter().map(|w| w.to_string()).collect();
        write!(
            f,
            "trial\tweights={}\tdelta={}\tcorrect={}\tincorrect={}\toutliers={}",
            weights.join(","),
            self.trial.delta,
            self.correct,
            self.incorrect,
            self.outliers
        )
    }
}

impl FromStr for TrialRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad progress record {s:?}"));
        let fields: Vec<&str> = s.trim().split('\t').collect();
        if fields.len() != 6 || fields[0] != "trial" {
            return Err(bad());
        }
        let value = |i: usize, key: &str| fields[i].strip_prefix(key).and_then(|v| v.strip_prefix('=')).ok_or_else(bad);
        let weights = value(1, "weights")?
            .split(',')
            .map(|w| w.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let delta = value(2, "delta")?.parse().map_err(|_| bad())?;
        let count = |i: usize, key: &str| value(i, key)?.parse::<usize>().map_err(|_| bad());
        Ok(Self {
            trial: Trial { weights, delta },
            correct: count(3, "correct")?,
            incorrect: count(4, "incorrect")?,
            outliers: count(5, "outliers")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: Trial,
    pub report: LooReport,
    /// Every tuple in enumeration order.
    pub records: Vec<TrialRecord>,
}

/// Evaluates every grid tuple by leave-one-out and returns the one with the
/// most correct classifications; ties go to the lexicographically smallest
/// tuple. Tuples present in `done` are not re-evaluated. `progress` sees each
/// freshly evaluated tuple, possibly from several threads.
pub fn grid_search(
    dataset: &LabeledDataset,
    grid: &TuningGrid,
    base: &ClassifierConfig,
    done: &[TrialRecord],
    progress: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<GridOutcome> {
    if grid.weights.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: grid.weights.len(),
        });
    }
    let trials = grid.trials();
    if trials.is_empty() {
        return Err(Error::InvalidParameter("tuning grid is empty".into()));
    }
    let known: HashMap<Vec<u64>, &TrialRecord> = done.iter().map(|r| (r.trial.key(), r)).collect();
    let evaluated: Vec<(TrialRecord, Option<LooReport>)> = trials
        .par_iter()
        .map(|trial| {
            if let Some(r) = known.get(&trial.key()) {
                return Ok(((*r).clone(), None));
            }
            let report = loo_evaluate(dataset, &trial.apply(base))?;
            let record = TrialRecord {
                trial: trial.clone(),
                correct: report.correct,
                incorrect: report.incorrect,
                outliers: report.outliers,
            };
            progress(&record);
            Ok((record, Some(report)))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, (r, _)) in evaluated.iter().enumerate() {
        if r.correct > evaluated[best].0.correct {
            best = i;
        }
    }
    let best_trial = evaluated[best].0.trial.clone();
    let report = match &evaluated[best].1 {
        Some(r) => r.clone(),
        None => loo_evaluate(dataset, &best_trial.apply(base))?,
    };
    Ok(GridOutcome {
        best: best_trial,
        report,
        records: evaluated.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Fits the reduction on raw features, tunes the parameters on the reduced
/// set and returns the trained model with the winning parameters. Only the
/// fixed settings of `base` are used; weights and cutoff come from the grid.
pub fn train(
    raw: &LabeledDataset,
    channels: Vec<ChannelSpec>,
    grid: &TuningGrid,
    base: &ClassifierConfig,
    done: &[TrialRecord],
    progress: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<(TrainedModel, GridOutcome)> {
    let pca = PcaModel::fit(raw.coords(), raw.dim(), grid.weights.len())?;
    let dataset = reduce(&pca, raw)?;
    let outcome = grid_search(&dataset, grid, base, done, progress)?;
    let config = outcome.best.apply(base);
    config.validate()?;
    let model = TrainedModel {
        channels,
        pca,
        config,
        dataset,
    };
    Ok((model, outcome))
}

/// A labeled region of the image with its representative square.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingArea {
    pub id: String,
    pub label: ClusterId,
    pub mask: PixelMask,
    pub square: SquareSpec,
}

/// Raw feature vectors of each area's representative square.
pub fn areas_dataset(raster: &Raster, channels: &[ChannelSpec], areas: &[TrainingArea]) -> Result<LabeledDataset> {
    let extractor = FeatureExtractor::new(raster, channels)?;
    let points = areas
        .iter()
        .map(|a| extractor.extract(raster, a.square))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(
        points,
        areas.iter().map(|a| a.label).collect(),
        areas.iter().map(|a| a.id.clone()).collect(),
    )
}

fn own_map<'a>(maps: &'a RadiusMaps, area: &TrainingArea) -> Result<&'a crate::relmap::RelevancyMap> {
    let m = maps.maps.get(area.label.0).ok_or(Error::MapMismatch)?;
    if m.width != area.mask.width() || m.height != area.mask.height() {
        return Err(Error::MapMismatch);
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct Adjustment {
    pub areas: Vec<TrainingArea>,
    /// Ids of areas whose square moved.
    pub moved: Vec<String>,
    /// Ids of areas with zero own-cluster relevancy everywhere, left unchanged.
    pub all_zero: Vec<String>,
}

/// Moves each area's square to the `(pixel, radius)` of highest own-cluster
/// relevancy inside the area, when that beats the current centre. Radii are
/// scanned in the order of `maps`, pixels in row-major order; the first
/// maximum wins.
pub fn adjust_squares(areas: &[TrainingArea], maps: &[RadiusMaps]) -> Result<Adjustment> {
    let mut out = Vec::with_capacity(areas.len());
    let mut moved = Vec::new();
    let mut all_zero = Vec::new();
    for area in areas {
        let current = maps
            .iter()
            .find(|m| m.radius == area.square.radius)
            .map(|m| own_map(m, area).map(|map| map.get(area.square.row, area.square.col)))
            .transpose()?
            .unwrap_or(0.0);
        let mut best: Option<(f32, SquareSpec)> = None;
        for set in maps {
            let map = own_map(set, area)?;
            for (row, col) in area.mask.pixels() {
                let v = map.get(row, col);
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((
                        v,
                        SquareSpec {
                            row,
                            col,
                            radius: set.radius,
                        },
                    ));
                }
            }
        }
        let mut next = area.clone();
        match best {
            Some((v, square)) if v > current => {
                next.square = square;
                moved.push(area.id.clone());
            }
            Some((v, _)) if v <= 0.0 => all_zero.push(area.id.clone()),
            None => all_zero.push(area.id.clone()),
            _ => {}
        }
        out.push(next);
    }
    Ok(Adjustment {
        areas: out,
        moved,
        all_zero,
    })
}

/// Removes areas whose own-cluster relevancy is zero at every pixel for
/// every radius. Returns the kept areas and the removed ids.
pub fn prune_unclassifiable(areas: &[TrainingArea], maps: &[RadiusMaps]) -> Result<(Vec<TrainingArea>, Vec<String>)> {
    if maps.is_empty() {
        return Err(Error::InvalidParameter("pruning needs at least one map set".into()));
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for area in areas {
        let mut alive = false;
        for set in maps {
            let map = own_map(set, area)?;
            if area.mask.pixels().any(|(r, c)| map.get(r, c) > 0.0) {
                alive = true;
                break;
            }
        }
        if alive {
            kept.push(area.clone());
        } else {
            removed.push(area.id.clone());
        }
    }
    let had: Vec<ClusterId> = areas.iter().map(|a| a.label).collect();
    if let Some(c) = had.iter().find(|c| !kept.iter().any(|a| a.label == **c)) {
        return Err(Error::PruneEmptiesCluster(c.one_based()));
    }
    Ok((kept, removed))
}
