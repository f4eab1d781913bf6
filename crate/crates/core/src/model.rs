//! The persisted classifier and its versioned text format.
//!
//! ```text
//! nnmodel 1
//! [channels]
//! count <C>
//! <channel spec>            (C lines, e.g. B04 or ndvi(B04,B08))
//! [pca]
//! input_dim <D>
//! components <k>
//! total_variance <f>
//! mean <f> x D
//! basis <f> x D             (k lines)
//! variance <f> x k
//! scale_min <f> x k
//! scale_max <f> x k
//! [diffusion]
//! weights <f> x k
//! delta, eps_forward, eps_backward, tau <f>
//! max_steps <n>
//! sor_omega, sor_tol <f>; sor_max_iters <n>
//! divergence_bounds <lo> <hi>
//! [histogram]
//! h <f>; inner <n>; outer <n>
//! [classifier]
//! lambda <f>
//! [dataset]
//! points <N>
//! <id> <label> <f> x k      (N lines, labels one-based)
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so saving and
//! loading is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::classify::{ClassificationResult, ClassifierConfig};
use crate::diffusion::{DiffusionParams, SorConfig};
use crate::error::{Error, Result};
use crate::features::ChannelSpec;
use crate::graph::{ClusterId, LabeledDataset};
use crate::histogram::HistogramConfig;
use crate::pca::PcaModel;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub channels: Vec<ChannelSpec>,
    pub pca: PcaModel,
    pub config: ClassifierConfig,
    /// Training points in reduced, scaled coordinates.
    pub dataset: LabeledDataset,
}

impl TrainedModel {
    /// Fits the reduction on raw features and stores the reduced training set.
    /// The number of components equals the number of diffusion weights.
    pub fn fit(raw: &LabeledDataset, channels: Vec<ChannelSpec>, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let pca = PcaModel::fit(raw.coords(), raw.dim(), config.diffusion.weights.len())?;
        let dataset = reduce(&pca, raw)?;
        Ok(Self {
            channels,
            pca,
            config,
            dataset,
        })
    }

    /// Classifies a raw feature vector.
    pub fn classify_raw(&self, raw: &[f64]) -> Result<ClassificationResult> {
        let w = self.pca.transform(raw)?;
        crate::classify::classify(&self.dataset, &w, &self.config)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |key: &str, values: &[f64]| {
            s.push_str(key);
            for v in values {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        };
        line(&format!("nnmodel {MODEL_VERSION}"), &[]);
        line("[channels]", &[]);
        line(&format!("count {}", self.channels.len()), &[]);
        for c in &self.channels {
            line(&c.to_string(), &[]);
        }
        let p = &self.pca;
        line("[pca]", &[]);
        line(&format!("input_dim {}", p.input_dim()), &[]);
        line(&format!("components {}", p.output_dim()), &[]);
        line("total_variance", &[p.total_variance]);
        line("mean", &p.mean);
        for b in &p.basis {
            line("basis", b);
        }
        line("variance", &p.explained_variance);
        line("scale_min", &p.scale_min);
        line("scale_max", &p.scale_max);
        let d = &self.config.diffusion;
        line("[diffusion]", &[]);
        line("weights", &d.weights);
        line("delta", &[d.delta]);
        line("eps_forward", &[d.eps_forward]);
        line("eps_backward", &[d.eps_backward]);
        line("tau", &[d.tau]);
        line(&format!("max_steps {}", d.max_steps), &[]);
        line("sor_omega", &[d.sor.omega]);
        line("sor_tol", &[d.sor.tol]);
        line(&format!("sor_max_iters {}", d.sor.max_iters), &[]);
        line("divergence_bounds", &[d.divergence_bounds.0, d.divergence_bounds.1]);
        let h = &self.config.histogram;
        line("[histogram]", &[]);
        line("h", &[h.h]);
        line(&format!("inner {}", h.inner), &[]);
        line(&format!("outer {}", h.outer), &[]);
        line("[classifier]", &[]);
        line("lambda", &[self.config.lambda]);
        line("[dataset]", &[]);
        line(&format!("points {}", self.dataset.len()), &[]);
        for i in 0..self.dataset.len() {
            let key = format!("{} {}", self.dataset.id(i), self.dataset.label(i).one_based());
            line(&key, self.dataset.point(i));
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            path,
        };
        let (_, header) = r.next()?;
        let version = header
            .strip_prefix("nnmodel ")
            .ok_or_else(|| r.err("missing nnmodel header"))?;
        if version.trim() != MODEL_VERSION.to_string() {
            return Err(Error::ModelVersion {
                found: version.trim().to_string(),
                expected: MODEL_VERSION,
            });
        }

        r.section("[channels]")?;
        let count = r.uint("count")?;
        let channels = (0..count)
            .map(|_| r.next().and_then(|(_, l)| l.parse::<ChannelSpec>()))
            .collect::<Result<Vec<_>>>()?;

        r.section("[pca]")?;
        let dim = r.uint("input_dim")?;
        let k = r.uint("components")?;
        let total_variance = r.floats("total_variance", Some(1))?[0];
        let mean = r.floats("mean", Some(dim))?;
        let basis = (0..k).map(|_| r.floats("basis", Some(dim))).collect::<Result<Vec<_>>>()?;
        let variance = r.floats("variance", Some(k))?;
        let scale_min = r.floats("scale_min", Some(k))?;
        let scale_max = r.floats("scale_max", Some(k))?;
        let pca = PcaModel::from_parts(mean, basis, variance, total_variance, scale_min, scale_max)?;

        r.section("[diffusion]")?;
        let weights = r.floats("weights", Some(k))?;
        let delta = r.float("delta")?;
        let eps_forward = r.float("eps_forward")?;
        let eps_backward = r.float("eps_backward")?;
        let tau = r.float("tau")?;
        let max_steps = r.uint("max_steps")?;
        let omega = r.float("sor_omega")?;
        let tol = r.float("sor_tol")?;
        let max_iters = r.uint("sor_max_iters")?;
        let bounds = r.floats("divergence_bounds", Some(2))?;
        let diffusion = DiffusionParams {
            weights,
            delta,
            eps_forward,
            eps_backward,
            tau,
            max_steps,
            sor: SorConfig {
                omega,
                tol,
                max_iters,
            },
            divergence_bounds: (bounds[0], bounds[1]),
        };

        r.section("[histogram]")?;
        let histogram = HistogramConfig {
            h: r.float("h")?,
            inner: r.uint("inner")? as u32,
            outer: r.uint("outer")? as u32,
        };
        r.section("[classifier]")?;
        let lambda = r.float("lambda")?;
        let config = ClassifierConfig {
            diffusion,
            histogram,
            lambda,
        };
        config.validate()?;

        r.section("[dataset]")?;
        let n = r.uint("points")?;
        let mut coords = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let (no, l) = r.next()?;
            let tokens: Vec<&str> = l.split_whitespace().collect();
            if tokens.len() != k + 2 {
                return Err(r.err_at(no, &format!("expected id, label and {k} coordinates")));
            }
            ids.push(tokens[0].to_string());
            let label = tokens[1]
                .parse::<usize>()
                .ok()
                .and_then(ClusterId::from_one_based)
                .ok_or_else(|| r.err_at(no, "labels must be positive integers"))?;
            labels.push(label);
            for t in &tokens[2..] {
                coords.push(t.parse::<f64>().map_err(|_| r.err_at(no, "bad coordinate"))?);
            }
        }
        if let Some((no, extra)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(r.err_at(no, &format!("unexpected trailing content {extra:?}")));
        }
        let dataset = LabeledDataset::from_flat(k, coords, labels, ids)?;
        Ok(Self {
            channels,
            pca,
            config,
            dataset,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(bad) = self.dataset.ids().iter().find(|id| id.is_empty() || id.contains(char::is_whitespace)) {
            return Err(Error::InvalidDataset(format!(
                "point id {bad:?} cannot be stored (empty or contains whitespace)"
            )));
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

/// Applies the reduction to every point of a raw dataset.
pub fn reduce(pca: &PcaModel, raw: &LabeledDataset) -> Result<LabeledDataset> {
    let points = raw.points().map(|p| pca.transform(p)).collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(points, raw.labels().to_vec(), raw.ids().to_vec())
}

struct Reader<'a, I> {
    lines: I,
    path: &'a Path,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, msg: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    fn err_at(&self, line: usize, msg: &str) -> Error {
        self.err(&format!("line {}: {msg}", line + 1))
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .find(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| (n, l.trim()))
            .ok_or_else(|| self.err("unexpected end of file"))
    }

    fn section(&mut self, name: &str) -> Result<()> {
        let (no, l) = self.next()?;
        if l != name {
            return Err(self.err_at(no, &format!("expected section {name}, found {l:?}")));
        }
        Ok(())
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, l) = self.next()?;
        let mut tokens = l.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.err_at(no, &format!("expected {key:?}, found {l:?}")));
        }
        Ok((no, tokens.collect()))
    }

    fn floats(&mut self, key: &str, expected: Option<usize>) -> Result<Vec<f64>> {
        let (no, tokens) = self.keyed(key)?;
        if expected.is_some_and(|n| n != tokens.len()) {
            return Err(self.err_at(no, &format!("{key}: expected {} values, found {}", expected.unwrap_or(0), tokens.len())));
        }
        tokens
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| self.err_at(no, &format!("{key}: bad number {t:?}"))))
            .collect()
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        Ok(self.floats(key, Some(1))?[0])
    }

    fn uint(&mut self, key: &str) -> Result<usize> {
        let (no, tokens) = self.keyed(key)?;
        match tokens.as_slice() {
            [t] => t.parse().map_err(|_| self.err_at(no, &format!("{key}: bad integer {t:?}"))),
            _ => Err(self.err_at(no, &format!("{key}: expected one integer"))),
        }
    }
}
