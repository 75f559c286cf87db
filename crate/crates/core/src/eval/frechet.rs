use autograd::Tensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Allowed asymmetry of a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Negative eigenvalues down to `-PSD_TOL · max(1, λ_max)` are treated as round-off.
pub const PSD_TOL: f64 = 1e-6;

/// Mean and covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let s = Self { mean, cov, count };
        s.validate()?;
        Ok(s)
    }

    /// Sample mean and unbiased covariance of the rows of an `N×E` matrix.
    pub fn from_features(features: &Tensor) -> Result<Self> {
        let (n, e) = match features.shape() {
            [n, e] => (*n, *e),
            s => return Err(Error::Shape(format!("features must be N×E, got {s:?}"))),
        };
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {n}")));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        let x = DMatrix::from_row_slice(n, e, features.data());
        let mean = DVector::from_fn(e, |j, _| x.column(j).sum() / n as f64);
        let mut centered = x;
        for j in 0..e {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        symmetrize(&mut cov);
        Self::new(mean, cov, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.mean.len();
        if self.cov.shape() != (e, e) {
            return Err(Error::Shape(format!(
                "covariance is {:?} for a {e}-dim mean",
                self.cov.shape()
            )));
        }
        if self.count < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {}", self.count)));
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian statistics".into()));
        }
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotPsd(format!("covariance asymmetric by {asym:e}")));
        }
        Ok(())
    }

    /// Adds `eps` to the diagonal.
    pub fn with_diagonal_loading(mut self, eps: f64) -> Self {
        for i in 0..self.dim() {
            self.cov[(i, i)] += eps;
        }
        self
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

fn clamped_eigenvalues(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let floor = -PSD_TOL * top.max(1.0);
    let mut vals = Vec::with_capacity(eig.eigenvalues.len());
    for &v in eig.eigenvalues.iter() {
        if v < floor {
            return Err(Error::NotPsd(format!("{what} has eigenvalue {v:e}")));
        }
        vals.push(v.max(0.0));
    }
    Ok((vals, eig.eigenvectors))
}

/// Principal square root of a symmetric PSD matrix. Diagonal input takes
/// elementwise square roots.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("sqrtm of a {:?} matrix", m.shape())));
    }
    if is_diagonal(m) {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let v = m[(i, i)];
            if v < -PSD_TOL {
                return Err(Error::NotPsd(format!("diagonal entry {v:e}")));
            }
            out[(i, i)] = v.max(0.0).sqrt();
        }
        return Ok(out);
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let (vals, vecs) = clamped_eigenvalues(&sym, "matrix")?;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt())));
    let mut out = &vecs * d * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `tr((Σa Σb)^½)` through the symmetric form `(Σa^½ Σb Σa^½)^½`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if is_diagonal(a) && is_diagonal(b) {
        return Ok((0..a.nrows()).map(|i| (a[(i, i)] * b[(i, i)]).max(0.0).sqrt()).sum());
    }
    let ra = sqrtm_psd(a)?;
    let mut inner = &ra * b * &ra;
    symmetrize(&mut inner);
    let (vals, _) = clamped_eigenvalues(&inner, "covariance product")?;
    Ok(vals.iter().map(|v| v.sqrt()).sum())
}

/// `‖μa−μb‖² + tr(Σa + Σb − 2(Σa Σb)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} vs {}", a.dim(), b.dim())));
    }
    clamped_eigenvalues(&a.cov, "covariance")?;
    clamped_eigenvalues(&b.cov, "covariance")?;
    let mean_term = (&a.mean - &b.mean).norm_squared();
    // Averaging both orders makes the result exactly symmetric.
    let cross = 0.5 * (trace_sqrt_product(&a.cov, &b.cov)? + trace_sqrt_product(&b.cov, &a.cov)?);
    let d = mean_term + (a.cov.trace() + b.cov.trace()) - 2.0 * cross;
    Ok(d.max(0.0))
}
