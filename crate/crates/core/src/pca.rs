//! Principal component projection followed by per-axis min-max scaling, so
//! that training data lands in the unit box.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal principal directions, each of length `D`.
    pub basis: Vec<Vec<f64>>,
    /// Variance along each retained direction, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance matrix.
    pub total_variance: f64,
    pub scale_min: Vec<f64>,
    pub scale_max: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PcaModel {
    /// Fits `k` components to the rows of `data` (row-major, `dim` columns).
    /// The covariance uses the `1/(N-1)` normalisation.
    pub fn fit(data: &[f64], dim: usize, k: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Pca("data length is not a multiple of the dimension".into()));
        }
        let n = data.len() / dim;
        if n < 2 {
            return Err(Error::Pca(format!("need at least two samples, got {n}")));
        }
        if k == 0 || k > dim.min(n - 1) {
            return Err(Error::Pca(format!(
                "cannot keep {k} components of {dim}-dimensional data with {n} samples"
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Pca("non-finite input".into()));
        }

        let rows: Vec<&[f64]> = data.chunks_exact(dim).collect();
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(*r) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
        let total_variance = cov.trace();

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut basis = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for &j in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let norm = dot(&v, &v).sqrt();
            let pivot = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for x in &mut v {
                *x *= sign / norm;
            }
            basis.push(v);
            explained_variance.push(eig.eigenvalues[j].max(0.0));
        }

        let mut model = Self {
            mean,
            basis,
            explained_variance,
            total_variance,
            scale_min: vec![f64::INFINITY; k],
            scale_max: vec![f64::NEG_INFINITY; k],
        };
        for r in &rows {
            for (i, p) in model.project(r).into_iter().enumerate() {
                model.scale_min[i] = model.scale_min[i].min(p);
                model.scale_max[i] = model.scale_max[i].max(p);
            }
        }
        if let Some(i) = (0..k).find(|&i| !(model.scale_max[i] > model.scale_min[i])) {
            return Err(Error::Pca(format!(
                "component {} has no spread in the training data",
                i + 1
            )));
        }
        Ok(model)
    }

    /// Rebuilds a model from stored parts, checking its invariants.
    pub fn from_parts(
        mean: Vec<f64>,
        basis: Vec<Vec<f64>>,
        explained_variance: Vec<f64>,
        total_variance: f64,
        scale_min: Vec<f64>,
        scale_max: Vec<f64>,
    ) -> Result<Self> {
        let k = basis.len();
        let dim = mean.len();
        if k == 0
            || basis.iter().any(|b| b.len() != dim)
            || explained_variance.len() != k
            || scale_min.len() != k
            || scale_max.len() != k
        {
            return Err(Error::Pca("inconsistent model dimensions".into()));
        }
        for i in 0..k {
            for j in i..k {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot(&basis[i], &basis[j]) - expected).abs() > 1e-10 {
                    return Err(Error::Pca("basis is not orthonormal".into()));
                }
            }
            if !(scale_max[i] > scale_min[i]) {
                return Err(Error::Pca(format!("degenerate scaling on axis {}", i + 1)));
            }
        }
        if explained_variance.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Pca("explained variance is not sorted".into()));
        }
        Ok(Self {
            mean,
            basis,
            explained_variance,
            total_variance,
            scale_min,
            scale_max,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    /// Share of total variance captured by the retained components.
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.iter().sum::<f64>() / self.total_variance
        } else {
            0.0
        }
    }

    /// Unscaled principal coordinates of `x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.basis.iter().map(|b| dot(b, &centered)).collect()
    }

    /// Scaled principal coordinates; training data maps into `[0, 1]^k`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self
            .project(x)
            .into_iter()
            .zip(self.scale_min.iter().zip(&self.scale_max))
            .map(|(p, (lo, hi))| (p - lo) / (hi - lo))
            .collect())
    }

    /// Maps scaled coordinates back to the input space. Exact only when no
    /// components were dropped.
    pub fn inverse_transform(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for ((b, yi), (lo, hi)) in self
            .basis
            .iter()
            .zip(y)
            .zip(self.scale_min.iter().zip(&self.scale_max))
        {
            let p = yi * (hi - lo) + lo;
            for (xj, bj) in x.iter_mut().zip(b) {
                *xj += p * bj;
            }
        }
        x
    }
}
