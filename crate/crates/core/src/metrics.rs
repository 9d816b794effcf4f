//! PSNR, latent k-NN accuracy and Frechet distance between Gaussian fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP_DB: f64 = 200.0;

/// `10 log10(max_val^2 / MSE)` in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &[f64], x_hat: &[f64], max_val: f64) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::invalid(format!("psnr inputs differ in length: {} vs {}", x.len(), x_hat.len())));
    }
    if x.is_empty() {
        return Err(Error::invalid("psnr of empty inputs"));
    }
    if !(max_val > 0.0 && max_val.is_finite()) {
        return Err(Error::invalid(format!("psnr max value {max_val} must be > 0")));
    }
    let mse = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Label predicted for `query` by a `k`-nearest-neighbour vote over the rows
/// of `train` (row-major, `dim` columns). Distance ties go to the lower
/// index; vote ties go to the tied label whose nearest member ranks first.
pub fn knn_predict(train: &[f64], labels: &[usize], dim: usize, query: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = train
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, row)| (sq_dist(row, query), i))
        .collect();
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.truncate(k);
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // (label, votes, rank of its nearest member)
    let mut tally: Vec<(usize, usize, usize)> = Vec::new();
    for (rank, (_, i)) in order.iter().enumerate() {
        let label = labels[*i];
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => t.1 += 1,
            None => tally.push((label, 1, rank)),
        }
    }
    tally
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|t| t.0)
        .expect("k >= 1")
}

/// Fraction of test rows whose k-NN prediction over the train rows matches.
pub fn knn_accuracy(
    train_z: &DMatrix<f64>,
    train_y: &[usize],
    test_z: &DMatrix<f64>,
    test_y: &[usize],
    k: usize,
) -> Result<f64> {
    if train_z.nrows() == 0 || test_z.nrows() == 0 {
        return Err(Error::invalid("knn needs nonempty train and test sets"));
    }
    if train_z.nrows() != train_y.len() || test_z.nrows() != test_y.len() {
        return Err(Error::invalid("knn label count does not match the row count"));
    }
    if train_z.ncols() != test_z.ncols() {
        return Err(Error::invalid("knn train and test dimensions differ"));
    }
    if k == 0 || k > train_z.nrows() {
        return Err(Error::invalid(format!("knn k={k} must be in 1..={}", train_z.nrows())));
    }
    let dim = train_z.ncols();
    let train = row_major(train_z);
    let test = row_major(test_z);
    let hits = test
        .chunks_exact(dim.max(1))
        .zip(test_y)
        .filter(|(q, y)| knn_predict(&train, train_y, dim, q, k) == **y)
        .count();
    Ok(hits as f64 / test_y.len() as f64)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

/// Two-pass moments of the rows of `features`.
pub fn gaussian_stats(features: &DMatrix<f64>) -> Result<GaussianStats> {
    let (m, d) = features.shape();
    if m < 2 {
        return Err(Error::invalid("gaussian stats need at least two rows"));
    }
    if d == 0 {
        return Err(Error::invalid("gaussian stats need at least one column"));
    }
    let mean = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut covariance = centered.transpose() * &centered / (m as f64 - 1.0);
    symmetrize(&mut covariance);
    Ok(GaussianStats { mean, covariance, count: m })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn sym_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{what} contains non-finite values"), 0));
    }
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical(format!("eigendecomposition of {what} did not converge"), 0))?;
    let roots = eig.eigenvalues.map(|l| if l > 0.0 { l.sqrt() } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::invalid(format!(
            "frechet distance between dimensions {} and {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let root_a = sym_sqrt(&a.covariance, "covariance")?;
    let product = &root_a * &b.covariance * &root_a;
    let mut p = product.clone();
    symmetrize(&mut p);
    let eig = SymmetricEigen::try_new(p, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical("eigendecomposition of the covariance product did not converge", 0))?;
    let mut cross = 0.0;
    for l in eig.eigenvalues.iter() {
        if *l < -1e-8 * (1.0 + product.abs().max()) {
            return Err(Error::numerical(format!("covariance product has eigenvalue {l}"), 0));
        }
        cross += l.max(0.0).sqrt();
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let fd = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

/// Metric report written by the evaluation command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// PSNR of the test reconstructions.
    pub psnr_db: f64,
    pub psnr_max: f64,
    /// Validation latents vote for test latents.
    pub knn_accuracy: f64,
    pub knn_k: usize,
    /// Decoded samples against test features.
    pub frechet: f64,
    pub sampler: String,
    pub sample_count: usize,
    pub latent_dim: usize,
    pub seed: u64,
}
