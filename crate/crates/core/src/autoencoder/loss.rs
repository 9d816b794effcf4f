use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{dirichlet_sample, DirichletParams};
use crate::sinkhorn::{evaluate_divergence, EmpiricalMeasure, SinkhornConfig};

/// The three logged loss terms. `total = recon + lambda * penalty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub penalty: f64,
}

/// Loss terms plus the gradients w.r.t. the reconstructions and the latents.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: LossBreakdown,
    pub d_recon: DMatrix<f64>,
    pub d_latent: DMatrix<f64>,
    /// False when the Sinkhorn solver stopped on its iteration budget.
    pub converged: bool,
}

fn matrix_measure(m: &DMatrix<f64>) -> Result<EmpiricalMeasure> {
    let mut pts = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        pts.extend(m.row(r).iter());
    }
    EmpiricalMeasure::uniform(pts, m.ncols())
}

fn reference_sample<R: Rng + ?Sized>(alpha: &DirichletParams, count: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(count, alpha.dim());
    for r in 0..count {
        let z = dirichlet_sample(alpha, rng);
        for (c, v) in z.as_slice().iter().enumerate() {
            out[(r, c)] = *v;
        }
    }
    out
}

fn check_shapes(x: &DMatrix<f64>, x_hat: &DMatrix<f64>, z: &DMatrix<f64>, alpha: &DirichletParams) -> Result<()> {
    if x.shape() != x_hat.shape() {
        return Err(Error::invalid("inputs and reconstructions differ in shape"));
    }
    if z.nrows() != x.nrows() {
        return Err(Error::invalid("latent batch size differs from the input batch"));
    }
    if z.ncols() != alpha.dim() {
        return Err(Error::invalid(format!(
            "latent dimension {} does not match dirichlet dimension {}",
            z.ncols(),
            alpha.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    x_hat: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: &DirichletParams,
    lambda: f64,
    cfg: &SinkhornConfig,
    rng: &mut R,
    with_grads: bool,
) -> Result<LossGrads> {
    check_shapes(x, x_hat, z, alpha)?;
    let m = x.nrows();
    // the reference cloud is drawn before anything else touches the rng
    let reference = reference_sample(alpha, m, rng);
    let diff = x_hat - x;
    let recon = diff.norm_squared() / m as f64;

    let eval = evaluate_divergence(&matrix_measure(z)?, &matrix_measure(&reference)?, cfg, with_grads)?;
    let penalty = eval.value;
    let d_latent = if with_grads {
        DMatrix::from_row_slice(m, z.ncols(), &eval.gradient) * lambda
    } else {
        DMatrix::zeros(0, 0)
    };
    let total = if lambda == 0.0 { recon } else { recon + lambda * penalty };
    if !total.is_finite() {
        return Err(Error::numerical(
            format!("loss is not finite (recon {recon}, penalty {penalty})"),
            0,
        ));
    }
    Ok(LossGrads {
        loss: LossBreakdown { total, recon, penalty },
        d_recon: if with_grads { diff * (2.0 / m as f64) } else { DMatrix::zeros(0, 0) },
        d_latent,
        converged: eval.converged,
    })
}

/// Batch loss: mean squared reconstruction error plus `lambda` times the
/// Sinkhorn divergence between the latents and an equal-size Dirichlet draw.
/// Rows of `x`, `x_hat` and `z` are samples.
pub fn loss<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    x_hat: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: &DirichletParams,
    lambda: f64,
    cfg: &SinkhornConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    evaluate(x, x_hat, z, alpha, lambda, cfg, rng, false).map(|g| g.loss)
}

/// [`loss`] together with its gradients. The rng is consumed exactly as in
/// [`loss`], so both see the same reference cloud for the same rng state.
pub fn loss_and_grads<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    x_hat: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: &DirichletParams,
    lambda: f64,
    cfg: &SinkhornConfig,
    rng: &mut R,
) -> Result<LossGrads> {
    evaluate(x, x_hat, z, alpha, lambda, cfg, rng, true)
}
