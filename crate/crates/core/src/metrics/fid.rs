use nalgebra::{DMatrix, SymmetricEigen};

use super::embed::FeatureStats;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected.
const SYMMETRY_TOL: f64 = 1e-9;

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Principal square root of a symmetric positive semidefinite matrix via
/// eigendecomposition. Negative eigenvalues (round-off) are clamped to zero.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(a.nrows(), a.ncols()));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(a - a.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * scale {
        log::warn!("sqrtm_psd: clamping eigenvalue {min:e}");
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Trace of `(S_r S_f)^(1/2)`, evaluated as the trace of the square root of
/// the symmetric matrix `sqrt(S_r) S_f sqrt(S_r)`, which has the same
/// eigenvalues.
fn trace_sqrt_product(real: &DMatrix<f64>, fake: &DMatrix<f64>) -> Result<f64> {
    let root = sqrtm_psd(real)?;
    let m = &root * fake * &root;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Fréchet distance between two Gaussian feature fits.
pub fn fid(real: &FeatureStats, fake: &FeatureStats) -> Result<f64> {
    if real.dim() != fake.dim() {
        return Err(Error::Dimension(real.dim(), fake.dim()));
    }
    let diff = &real.mean - &fake.mean;
    let mean_term = diff.dot(&diff);
    let tr = real.cov.trace() + fake.cov.trace() - 2.0 * trace_sqrt_product(&real.cov, &fake.cov)?;
    let value = mean_term + tr;
    if value < 0.0 && value > -1e-6 {
        return Ok(0.0);
    }
    Ok(value)
}
