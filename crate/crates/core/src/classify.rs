//! Classification of a new observation by the network dynamics, and its
//! relevancy coefficient.

use crate::diffusion::{self, newcomer_coefficient, DiffusionParams};
use crate::error::{Error, Result};
use crate::graph::{build_network, ClusterId, LabeledDataset, NetworkState};
use crate::histogram::{self, HistogramConfig};

/// Everything needed to classify one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub diffusion: DiffusionParams,
    pub histogram: HistogramConfig,
    /// Steepness of the logistic relevancy rescaling.
    pub lambda: f64,
}

impl ClassifierConfig {
    pub const DEFAULT_LAMBDA: f64 = 12.0;

    pub fn new(diffusion: DiffusionParams) -> Self {
        Self {
            diffusion,
            histogram: HistogramConfig::default(),
            lambda: Self::DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.histogram.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Final state of a dynamics run.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub state: NetworkState,
    /// False when `max_steps` ran out before the stopping criterion fired.
    pub criterion_met: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    /// Cluster of the newcomer; `None` for an outlier.
    pub assigned: Option<ClusterId>,
    /// Relevancy in `[0, 1]`; exactly zero for an outlier.
    pub relevancy: f64,
    pub steps_used: usize,
    pub criterion_met: bool,
    /// Two labeled points of different clusters were equally near.
    pub tie: bool,
    /// All centroids coincided with the newcomer's initial position.
    pub degenerate: bool,
    pub final_state: NetworkState,
    pub centroids: Vec<Vec<f64>>,
}

impl ClassificationResult {
    pub fn is_outlier(&self) -> bool {
        self.assigned.is_none()
    }
}

fn nonempty_clusters(state: &NetworkState) -> usize {
    state.cluster_sizes().iter().filter(|&&s| s > 0).count()
}

/// Steps the network until the histogram criterion holds or `max_steps` is
/// exhausted. The criterion is checked before the first step.
pub fn run_dynamics(
    state: NetworkState,
    params: &DiffusionParams,
    hist: &HistogramConfig,
) -> Result<Dynamics> {
    let n_clusters = nonempty_clusters(&state);
    let s_min = histogram::min_cluster_size(&state);
    let formed = |s: &NetworkState| {
        let (labeled, newcomer) = histogram::split_newcomer(s);
        histogram::clusters_formed(labeled, newcomer, s.dim(), s_min, hist) >= n_clusters
    };
    let mut state = state;
    let start = state.step();
    loop {
        if formed(&state) {
            return Ok(Dynamics {
                state,
                criterion_met: true,
            });
        }
        if state.step() - start >= params.max_steps {
            return Ok(Dynamics {
                state,
                criterion_met: false,
            });
        }
        state = diffusion::step(&state, params)?;
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cluster of the labeled point nearest to the newcomer, if nearer than
/// `10 h`. Returns the assignment and whether the nearest distance was tied
/// between clusters (the lower vertex index wins).
pub fn assign_cluster(state: &NetworkState, hist: &HistogramConfig) -> (Option<ClusterId>, bool) {
    let Some(w) = state.newcomer() else {
        return (None, false);
    };
    let xw = state.position(w);
    let mut best: Option<(f64, ClusterId)> = None;
    let mut tie = false;
    for v in 0..state.n_vertices() {
        let Some(label) = state.label(v) else { continue };
        let d = distance(xw, state.position(v));
        match best {
            Some((bd, bl)) if d == bd => tie |= bl != label,
            Some((bd, _)) if d > bd => {}
            _ => {
                best = Some((d, label));
                tie = false;
            }
        }
    }
    match best {
        Some((d, label)) if d < hist.assignment_radius() => (Some(label), tie),
        _ => (None, false),
    }
}

/// Mean position of each cluster's members; the newcomer is excluded.
pub fn centroids(state: &NetworkState) -> Vec<Vec<f64>> {
    let dim = state.dim();
    let mut sums = vec![vec![0.0; dim]; state.n_clusters()];
    let mut counts = vec![0usize; state.n_clusters()];
    for v in 0..state.n_vertices() {
        if let Some(l) = state.label(v) {
            counts[l.0] += 1;
            for (s, x) in sums[l.0].iter_mut().zip(state.position(v)) {
                *s += x;
            }
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        for x in s.iter_mut() {
            *x /= n as f64;
        }
    }
    sums
}

/// Logistic rescaling of the raw relevancy `rp` onto `[0, 1]`.
pub fn rescale_relevancy(rp: f64, lambda: f64) -> f64 {
    let logistic = |x: f64| 1.0 / (1.0 + (lambda * (0.5 - x)).exp());
    let (lo, hi) = (logistic(0.0), logistic(1.0));
    ((logistic(rp) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Relevancy {
    pub value: f64,
    pub raw: f64,
    pub degenerate: bool,
}

/// Relevancy of assigning the observation initially at `w0` to `assigned`.
///
/// `l1` is the distance from `w0` to the assigned centroid and `l2` the mean
/// distance to the other centroids; the raw value `1 - l1/(l1+l2)` is then
/// rescaled logistically. When both distances vanish the raw value is 1 and
/// the result is flagged degenerate.
pub fn relevancy(w0: &[f64], cents: &[Vec<f64>], assigned: ClusterId, lambda: f64) -> Result<Relevancy> {
    if cents.len() < 2 {
        return Err(Error::Relevancy(format!(
            "needs at least two clusters, got {}",
            cents.len()
        )));
    }
    if assigned.0 >= cents.len() {
        return Err(Error::Relevancy(format!("no centroid for cluster {assigned}")));
    }
    let l1 = distance(w0, &cents[assigned.0]);
    // sorted so the mean does not depend on centroid order
    let mut others: Vec<f64> = cents
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != assigned.0)
        .map(|(_, c)| distance(w0, c))
        .collect();
    others.sort_by(f64::total_cmp);
    let l2 = others.iter().sum::<f64>() / others.len() as f64;
    let (raw, degenerate) = if l1 + l2 == 0.0 {
        (1.0, true)
    } else {
        (1.0 - l1 / (l1 + l2), false)
    };
    Ok(Relevancy {
        value: rescale_relevancy(raw, lambda),
        raw,
        degenerate,
    })
}

fn finish(
    w0: &[f64],
    dynamics: Dynamics,
    start_step: usize,
    config: &ClassifierConfig,
) -> Result<ClassificationResult> {
    let Dynamics {
        state,
        criterion_met,
    } = dynamics;
    let (assigned, tie) = assign_cluster(&state, &config.histogram);
    let cents = centroids(&state);
    let (relevancy, degenerate) = match assigned {
        Some(a) => {
            let r = relevancy(w0, &cents, a, config.lambda)?;
            (r.value, r.degenerate)
        }
        None => (0.0, false),
    };
    Ok(ClassificationResult {
        assigned,
        relevancy,
        steps_used: state.step() - start_step,
        criterion_met,
        tie,
        degenerate,
        final_state: state,
        centroids: cents,
    })
}

/// Adds `w` to the network, runs the dynamics and scores the assignment.
pub fn classify(dataset: &LabeledDataset, w: &[f64], config: &ClassifierConfig) -> Result<ClassificationResult> {
    let state = build_network(dataset, Some(w))?;
    let dynamics = run_dynamics(state, &config.diffusion, &config.histogram)?;
    finish(w, dynamics, 0, config)
}

/// Approximate classifier that evolves the labeled network once and then
/// moves each newcomer against the stored trajectory.
///
/// The newcomer does not act back on the labeled points, so results differ
/// slightly from [`classify`]; in exchange one classification costs
/// `O(steps * N)` instead of a full linear solve per step.
#[derive(Clone, Debug)]
pub struct FrozenBase {
    config: ClassifierConfig,
    trajectory: Vec<NetworkState>,
    s_min: usize,
    n_clusters: usize,
}

impl FrozenBase {
    pub fn new(dataset: &LabeledDataset, config: &ClassifierConfig) -> Result<Self> {
        let mut state = build_network(dataset, None)?;
        let mut trajectory = Vec::with_capacity(config.diffusion.max_steps + 1);
        for _ in 0..config.diffusion.max_steps {
            let next = diffusion::step(&state, &config.diffusion)?;
            trajectory.push(state);
            state = next;
        }
        trajectory.push(state);
        let first = &trajectory[0];
        Ok(Self {
            config: config.clone(),
            s_min: histogram::min_cluster_size(first),
            n_clusters: nonempty_clusters(first),
            trajectory,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    fn with_newcomer(&self, n: usize, w: &[f64]) -> Result<NetworkState> {
        let base = &self.trajectory[n];
        let mut positions = base.positions().to_vec();
        positions.extend_from_slice(w);
        let mut labels = base.labels().to_vec();
        labels.push(None);
        Ok(NetworkState::from_parts(base.dim(), positions, labels, base.n_clusters())?.at_step(n))
    }

    pub fn classify(&self, w: &[f64]) -> Result<ClassificationResult> {
        let base0 = &self.trajectory[0];
        if w.len() != base0.dim() {
            return Err(Error::DimensionMismatch {
                expected: base0.dim(),
                got: w.len(),
            });
        }
        let params = &self.config.diffusion;
        let dim = base0.dim();
        let mut xw = w.to_vec();
        let mut n = 0;
        let criterion_met = loop {
            let base = &self.trajectory[n];
            if histogram::clusters_formed(base.positions(), Some(&xw), dim, self.s_min, &self.config.histogram)
                >= self.n_clusters
            {
                break true;
            }
            if n >= params.max_steps {
                break false;
            }
            let next = &self.trajectory[n + 1];
            let mut weight = 1.0;
            let mut acc = xw.clone();
            for v in 0..base.n_vertices() {
                let c = params.tau * newcomer_coefficient(&xw, base.position(v), params);
                if c > 0.0 {
                    weight += c;
                    for (a, x) in acc.iter_mut().zip(next.position(v)) {
                        *a += c * x;
                    }
                }
            }
            for (x, a) in xw.iter_mut().zip(acc) {
                *x = a / weight;
            }
            if xw.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    step: n + 1,
                    detail: "newcomer coordinate is not finite".into(),
                });
            }
            n += 1;
        };
        let state = self.with_newcomer(n, &xw)?;
        finish(
            w,
            Dynamics {
                state,
                criterion_met,
            },
            0,
            &self.config,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 12.0;

    #[test]
    fn rescale_endpoints_are_exact() {
        assert_eq!(rescale_relevancy(0.0, LAMBDA), 0.0);
        assert_eq!(rescale_relevancy(1.0, LAMBDA), 1.0);
        assert!((rescale_relevancy(0.5, LAMBDA) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rescale_three_quarters() {
        // (L(0.75) - L(0)) / (L(1) - L(0)) with L(x) = 1/(1+e^{12(0.5-x)})
        let l = |x: f64| 1.0 / (1.0 + (12.0 * (0.5 - x)).exp());
        let expected = (l(0.75) - l(0.0)) / (l(1.0) - l(0.0));
        assert!((expected - 0.954824).abs() < 1e-6);
        assert!((rescale_relevancy(0.75, LAMBDA) - 0.954824).abs() < 1e-6);
    }

    #[test]
    fn relevancy_zero_l1_is_one() {
        let cents = vec![vec![0.2, 0.2], vec![0.8, 0.8], vec![0.2, 0.8]];
        let r = relevancy(&[0.2, 0.2], &cents, ClusterId(0), LAMBDA).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn relevancy_equal_distances_is_half() {
        let cents = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let r = relevancy(&[0.5, 0.0], &cents, ClusterId(1), LAMBDA).unwrap();
        assert_eq!(r.raw, 0.5);
        assert!((r.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relevancy_degenerate_when_everything_coincides() {
        let cents = vec![vec![0.4, 0.4], vec![0.4, 0.4]];
        let r = relevancy(&[0.4, 0.4], &cents, ClusterId(0), LAMBDA).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.degenerate);
        assert!(relevancy(&[0.4], &[vec![0.4]], ClusterId(0), LAMBDA).is_err());
    }

    fn labeled(positions: Vec<f64>, labels: Vec<usize>, newcomer: bool, n_clusters: usize) -> NetworkState {
        let mut l: Vec<Option<ClusterId>> = labels.into_iter().map(|c| Some(ClusterId(c))).collect();
        if newcomer {
            l.push(None);
        }
        NetworkState::from_parts(2, positions, l, n_clusters).unwrap()
    }

    #[test]
    fn assignment_threshold() {
        let hist = HistogramConfig::default();
        let s = labeled(vec![0.3, 0.3, 0.9, 0.9, 0.3, 0.3], vec![0, 1], true, 2);
        assert_eq!(assign_cluster(&s, &hist), (Some(ClusterId(0)), false));
        let s = labeled(vec![0.3, 0.3, 0.9, 0.9, 0.5, 0.3], vec![0, 1], true, 2);
        assert_eq!(assign_cluster(&s, &hist), (None, false));
        let s = labeled(vec![0.3, 0.3, 0.9, 0.9, 0.35, 0.3], vec![0, 1], true, 2);
        assert_eq!(assign_cluster(&s, &hist).0, Some(ClusterId(0)));
    }

    #[test]
    fn assignment_tie_prefers_lower_index() {
        let hist = HistogramConfig::default();
        let s = labeled(vec![0.5, 0.52, 0.5, 0.48, 0.5, 0.5], vec![1, 0], true, 2);
        assert_eq!(assign_cluster(&s, &hist), (Some(ClusterId(1)), true));
    }

    #[test]
    fn centroid_examples() {
        let s = labeled(vec![0.0, 0.0, 1.0, 1.0, 0.25, 0.75], vec![0, 0, 1], false, 2);
        let c = centroids(&s);
        assert_eq!(c[0], vec![0.5, 0.5]);
        assert_eq!(c[1], vec![0.25, 0.75]);
    }

    #[test]
    fn zero_max_steps_returns_input() {
        let s = labeled(vec![0.1, 0.1, 0.5, 0.5, 0.9, 0.9, 0.3, 0.3], vec![0, 0, 1, 1], false, 2);
        let mut p = DiffusionParams::new(vec![10.0, 10.0], 0.01);
        p.max_steps = 0;
        let d = run_dynamics(s.clone(), &p, &HistogramConfig::default()).unwrap();
        assert_eq!(d.state, s);
        assert!(!d.criterion_met);
    }

    #[test]
    fn collapsed_clusters_stop_immediately() {
        let s = labeled(
            vec![0.105, 0.105, 0.105, 0.105, 0.805, 0.805, 0.805, 0.805],
            vec![0, 0, 1, 1],
            false,
            2,
        );
        let p = DiffusionParams::new(vec![10.0, 10.0], 0.01);
        let d = run_dynamics(s, &p, &HistogramConfig::default()).unwrap();
        assert!(d.criterion_met);
        assert_eq!(d.state.step(), 0);
    }

    #[test]
    fn far_newcomer_is_outlier() {
        let ds = LabeledDataset::new(
            vec![vec![0.2, 0.2], vec![0.21, 0.2], vec![0.8, 0.8], vec![0.8, 0.81]],
            vec![ClusterId(0), ClusterId(0), ClusterId(1), ClusterId(1)],
            (0..4).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let config = ClassifierConfig::new(DiffusionParams::new(vec![100.0, 100.0], 0.01));
        let r = classify(&ds, &[10.0, 10.0], &config).unwrap();
        assert!(r.is_outlier());
        assert_eq!(r.relevancy, 0.0);
        let frozen = FrozenBase::new(&ds, &config).unwrap().classify(&[10.0, 10.0]).unwrap();
        assert!(frozen.is_outlier());
        assert_eq!(frozen.relevancy, 0.0);
    }
}
