//! Gaussian mixtures fitted by EM, and logistic-normal mixtures on the
//! simplex built from them.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{tensor_load, write_atomic, Tensor};
use crate::error::{Error, Result};
use crate::rng_from_seed;
use crate::simplex::{log_sum_exp, logistic_to_simplex, simplex_to_logistic, EuclideanVector, SimplexVector};

/// Components whose weight falls below this are re-seeded.
pub const COLLAPSE_WEIGHT: f64 = 1e-8;

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = GmmModel {
            weights,
            means,
            covariances,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::invalid("mixture needs matching, nonempty weights, means and covariances"));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        let n = self.dim();
        if n == 0 {
            return Err(Error::invalid("mixture dimension must be >= 1"));
        }
        for (mean, cov) in self.means.iter().zip(&self.covariances) {
            if mean.len() != n || cov.shape() != (n, n) {
                return Err(Error::invalid("mixture component shapes disagree"));
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid("mixture parameters must be finite"));
            }
            if (cov - cov.transpose()).abs().max() > 1e-9 * (1.0 + cov.abs().max()) {
                return Err(Error::invalid("mixture covariance is not symmetric"));
            }
        }
        Ok(())
    }

    /// Posterior component probabilities, one row per data row.
    pub fn responsibilities(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (log_resp, _) = e_step(self, y)?;
        Ok(log_resp.map(f64::exp))
    }

    /// Total log-likelihood of the rows of `y`.
    pub fn log_likelihood(&self, y: &DMatrix<f64>) -> Result<f64> {
        e_step(self, y).map(|(_, ll)| ll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the log-likelihood changes by less than this fraction.
    pub rel_tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub cov_ridge: f64,
    pub seed: u64,
    /// Independent k-means++ restarts; the best final likelihood wins.
    pub n_init: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            rel_tol: 1e-6,
            cov_ridge: 1e-6,
            seed: 0,
            n_init: 3,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.n_init == 0 {
            return Err(Error::invalid("em max_iters and n_init must be >= 1"));
        }
        if !(self.rel_tol > 0.0) || !(self.cov_ridge >= 0.0) {
            return Err(Error::invalid("em tolerances must be positive"));
        }
        Ok(())
    }
}

/// Result of [`fit_gmm_em`].
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood before each M-step of the winning restart, since its
    /// last re-seed.
    pub trace: Vec<f64>,
    /// Collapsed components re-seeded at a data point, over all restarts.
    pub reseeds: usize,
}

fn log_gauss_terms(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::numerical("covariance is not positive definite", 0))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let norm = -0.5 * (mean.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Ok((chol, norm))
}

/// Log responsibilities and the total log-likelihood.
fn e_step(model: &GmmModel, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if y.ncols() != model.dim() {
        return Err(Error::invalid(format!(
            "data has {} columns, mixture has dimension {}",
            y.ncols(),
            model.dim()
        )));
    }
    let k = model.components();
    let mut log_p = DMatrix::zeros(y.nrows(), k);
    for c in 0..k {
        let (chol, norm) = log_gauss_terms(&model.means[c], &model.covariances[c])?;
        let log_w = model.weights[c].ln();
        let mut centered = y.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &model.means[c];
        }
        // solve L v = y - mu for all rows at once
        let v = chol.l_dirty().solve_lower_triangular(&centered).expect("cholesky factor is invertible");
        for i in 0..y.nrows() {
            log_p[(i, c)] = log_w + norm - 0.5 * v.column(i).norm_squared();
        }
    }
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..y.nrows() {
        for (c, r) in row.iter_mut().enumerate() {
            *r = log_p[(i, c)];
        }
        let lse = log_sum_exp(&row);
        total += lse;
        for c in 0..k {
            log_p[(i, c)] -= lse;
        }
    }
    Ok((log_p, total))
}

fn sample_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * &centered / y.nrows() as f64
}

fn m_step(y: &DMatrix<f64>, resp: &DMatrix<f64>, ridge: f64) -> GmmModel {
    let (m, n) = y.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for c in 0..k {
        let r = resp.column(c);
        let nk: f64 = r.sum();
        weights.push(nk / m as f64);
        let safe = nk.max(f64::MIN_POSITIVE);
        let mean = y.transpose() * r / safe;
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..m {
            let d = y.row(i).transpose() - &mean;
            cov.ger(r[i] / safe, &d, &d, 1.0);
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        covariances.push(sym + DMatrix::identity(n, n) * ridge);
        means.push(mean);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel {
        weights,
        means,
        covariances,
    }
}

/// k-means++ seeding followed by one hard-assignment M-step.
fn kmeans_pp_init<R: Rng + ?Sized>(y: &DMatrix<f64>, k: usize, ridge: f64, rng: &mut R) -> GmmModel {
    let m = y.nrows();
    let mut centers = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = (0..m).map(|i| (y.row(i) - y.row(centers[0])).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((y.row(i) - y.row(next)).norm_squared());
        }
    }
    let mut resp = DMatrix::zeros(m, k);
    for i in 0..m {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, idx) in centers.iter().enumerate() {
            let d = (y.row(i) - y.row(*idx)).norm_squared();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        resp[(i, best)] = 1.0;
    }
    let mut model = m_step(y, &resp, ridge);
    let global = sample_covariance(y) + DMatrix::identity(y.ncols(), y.ncols()) * ridge;
    for c in 0..k {
        // a singleton cluster has zero spread; borrow the global covariance
        if resp.column(c).sum() < 2.0 {
            model.means[c] = y.row(centers[c]).transpose();
            model.covariances[c] = global.clone();
        }
    }
    model
}

fn reseed_collapsed<R: Rng + ?Sized>(model: &mut GmmModel, y: &DMatrix<f64>, ridge: f64, rng: &mut R) -> usize {
    let m = y.nrows();
    let mut count = 0;
    for c in 0..model.components() {
        if model.weights[c] < COLLAPSE_WEIGHT {
            let i = rng.random_range(0..m);
            model.means[c] = y.row(i).transpose();
            model.covariances[c] = sample_covariance(y) + DMatrix::identity(y.ncols(), y.ncols()) * ridge.max(1e-6);
            model.weights[c] = 1.0 / m as f64;
            count += 1;
        }
    }
    if count > 0 {
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    count
}

/// EM for a `k`-component full-covariance mixture on the rows of `y`.
pub fn fit_gmm_em(y: &DMatrix<f64>, k: usize, cfg: &EmConfig) -> Result<GmmFit> {
    cfg.validate()?;
    check_data(y, k)?;
    let mut best: Option<(f64, GmmFit)> = None;
    let mut reseeds = 0;
    for restart in 0..cfg.n_init {
        let mut rng = rng_from_seed(cfg.seed);
        rng.set_stream(restart as u64);
        let model = kmeans_pp_init(y, k, cfg.cov_ridge, &mut rng);
        let (model, trace, final_ll, r) = run_em(y, model, cfg, &mut rng)?;
        reseeds += r;
        if best.as_ref().is_none_or(|(b, _)| final_ll > *b) {
            best = Some((
                final_ll,
                GmmFit {
                    model,
                    trace,
                    reseeds: 0,
                },
            ));
        }
    }
    let (_, mut fit) = best.expect("n_init >= 1");
    fit.reseeds = reseeds;
    Ok(fit)
}

fn check_data(y: &DMatrix<f64>, k: usize) -> Result<()> {
    let (m, n) = y.shape();
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if m < k {
        return Err(Error::invalid(format!("{m} points cannot support {k} components")));
    }
    if n == 0 {
        return Err(Error::invalid("mixture data needs at least one column"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture data contains non-finite values"));
    }
    Ok(())
}

/// EM iterations from `model` until the relative likelihood change drops
/// below `cfg.rel_tol`. Returns the model, its trace, final likelihood and
/// the number of re-seeded components.
fn run_em<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    mut model: GmmModel,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<(GmmModel, Vec<f64>, f64, usize)> {
    let mut reseeds = reseed_collapsed(&mut model, y, cfg.cov_ridge, rng);
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iters {
        let (log_resp, ll) = e_step(&model, y)?;
        if !ll.is_finite() {
            return Err(Error::numerical("log-likelihood is not finite", trace.len()));
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.rel_tol * p.abs().max(1e-300) {
                break;
            }
        }
        model = m_step(y, &log_resp.map(f64::exp), cfg.cov_ridge);
        let r = reseed_collapsed(&mut model, y, cfg.cov_ridge, rng);
        if r > 0 {
            reseeds += r;
            trace.clear();
        }
    }
    // the model after the last M-step may be newer than the last trace entry
    let ll = e_step(&model, y)?.1;
    if trace.last() != Some(&ll) && ll.is_finite() {
        trace.push(ll);
    }
    Ok((model, trace, ll, reseeds))
}

/// Runs EM starting from `model` instead of a k-means++ seeding.
pub fn refine_gmm_em(y: &DMatrix<f64>, model: GmmModel, cfg: &EmConfig) -> Result<GmmFit> {
    cfg.validate()?;
    model.validate()?;
    check_data(y, model.components())?;
    let mut rng = rng_from_seed(cfg.seed);
    let (model, trace, _, reseeds) = run_em(y, model, cfg, &mut rng)?;
    Ok(GmmFit { model, trace, reseeds })
}

/// Lower Cholesky factor, escalating a diagonal ridge from 1e-10 by tenfold
/// steps up to 1e-2 when the matrix is not numerically positive definite.
fn robust_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    let n = cov.nrows();
    let mut ridge = 1e-10;
    while ridge <= 1e-2 * (1.0 + 1e-9) {
        if let Some(c) = Cholesky::new(cov + DMatrix::identity(n, n) * ridge) {
            return Ok(c.l());
        }
        ridge *= 10.0;
    }
    Err(Error::numerical("covariance Cholesky failed even with a 1e-2 ridge", 0))
}

/// `count` draws, one per row.
pub fn gmm_sample<R: Rng + ?Sized>(model: &GmmModel, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    model.validate()?;
    let factors = model
        .covariances
        .iter()
        .map(robust_cholesky)
        .collect::<Result<Vec<_>>>()?;
    let pick = WeightedIndex::new(&model.weights).map_err(|e| Error::invalid(format!("mixture weights: {e}")))?;
    let n = model.dim();
    let mut out = DMatrix::zeros(count, n);
    let mut eps = DVector::zeros(n);
    for r in 0..count {
        let c = pick.sample(rng);
        for v in eps.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let draw = &model.means[c] + &factors[c] * &eps;
        out.row_mut(r).copy_from(&draw.transpose());
    }
    Ok(out)
}

/// Projects simplex rows to log-ratio coordinates.
pub fn project_rows(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, d) = z.shape();
    if d < 2 {
        return Err(Error::invalid("simplex points need at least two coordinates"));
    }
    let mut out = DMatrix::zeros(m, d - 1);
    for i in 0..m {
        let p = SimplexVector::new(z.row(i).iter().copied().collect())?;
        let y = simplex_to_logistic(&p);
        for (c, v) in y.as_slice().iter().enumerate() {
            out[(i, c)] = *v;
        }
    }
    Ok(out)
}

/// Fits a Gaussian mixture to the log-ratio projection of simplex points
/// (one per row of `z`).
pub fn fit_logistic_normal_mixture(z: &DMatrix<f64>, k: usize, cfg: &EmConfig) -> Result<GmmFit> {
    fit_gmm_em(&project_rows(z)?, k, cfg)
}

/// Draws from the mixture and maps each draw back onto the simplex.
pub fn sample_logistic_normal_mixture<R: Rng + ?Sized>(
    model: &GmmModel,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SimplexVector>> {
    let y = gmm_sample(model, count, rng)?;
    (0..count)
        .map(|r| Ok(logistic_to_simplex(&EuclideanVector::new(y.row(r).iter().copied().collect())?)))
        .collect()
}

/// JSON manifest stored next to the parameter tensor. Offsets and lengths
/// count f64 values in the tensor payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmManifest {
    pub format: String,
    pub components: usize,
    pub dim: usize,
    pub tensor: String,
    pub weights: [usize; 2],
    pub means: [usize; 2],
    pub covariances: [usize; 2],
}

/// Writes the parameters as a rank-1 tensor at `tensor_path` and a manifest
/// naming it at `manifest_path`.
pub fn gmm_save(model: &GmmModel, tensor_path: &Path, manifest_path: &Path) -> Result<()> {
    model.validate()?;
    let (k, n) = (model.components(), model.dim());
    let mut values = model.weights.clone();
    for m in &model.means {
        values.extend(m.iter());
    }
    for c in &model.covariances {
        for r in 0..n {
            values.extend(c.row(r).iter());
        }
    }
    let manifest = GmmManifest {
        format: "gmm-v1".into(),
        components: k,
        dim: n,
        tensor: tensor_path
            .file_name()
            .ok_or_else(|| Error::invalid("tensor path has no file name"))?
            .to_string_lossy()
            .into_owned(),
        weights: [0, k],
        means: [k, k * n],
        covariances: [k + k * n, k * n * n],
    };
    write_atomic(tensor_path, &Tensor::new(vec![values.len()], values)?.to_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(manifest_path, json.as_bytes())
}

/// Reads a manifest and the tensor it names (resolved next to the manifest).
pub fn gmm_load(manifest_path: &Path) -> Result<GmmModel> {
    let text = std::fs::read_to_string(manifest_path)?;
    let man: GmmManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(0, format!("bad mixture manifest: {e}")))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let t = tensor_load(dir.join(&man.tensor))?;
    let (k, n) = (man.components, man.dim);
    let slice = |[off, len]: [usize; 2]| -> Result<&[f64]> {
        t.values
            .get(off..off + len)
            .ok_or_else(|| Error::format(0, "mixture manifest offsets exceed the tensor"))
    };
    if man.weights[1] != k || man.means[1] != k * n || man.covariances[1] != k * n * n {
        return Err(Error::format(0, "mixture manifest lengths disagree with its shape"));
    }
    let weights = slice(man.weights)?.to_vec();
    let means = slice(man.means)?.chunks(n.max(1)).map(DVector::from_column_slice).collect();
    let covariances = slice(man.covariances)?
        .chunks((n * n).max(1))
        .map(|c| DMatrix::from_row_slice(n, n, c))
        .collect();
    GmmModel::new(weights, means, covariances)
}
