use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig};
use super::loss::{loss, loss_and_grads, LossBreakdown};
use super::network::{backward, forward, NetworkSpec, ParamStore};
use crate::error::{Error, Result};
use crate::simplex::DirichletParams;
use crate::sinkhorn::SinkhornConfig;
use crate::{rng_from_seed, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: DirichletParams,
    pub seed: u64,
    pub sinkhorn: SinkhornConfig,
}

impl TrainConfig {
    /// Settings for the synthetic tabular runs: lr 1e-3, lambda 100,
    /// 20 epochs, batch 64.
    pub fn synthetic(alpha: DirichletParams, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda: 100.0,
            epochs: 20,
            batch_size: 64,
            alpha,
            seed,
            sinkhorn: SinkhornConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be >= 2"));
        }
        self.sinkhorn.validate()
    }
}

/// Per-epoch means over the processed batches, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub recon: f64,
    pub penalty: f64,
    pub total: f64,
    /// Batches whose Sinkhorn solve hit the iteration budget.
    pub unconverged: usize,
}

fn gather(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), data.ncols(), |r, c| data[(rows[r], c)])
}

fn check_data(spec: &NetworkSpec, data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if data.ncols() != spec.input_dim() || spec.output_dim() != spec.input_dim() {
        return Err(Error::invalid(format!(
            "data has {} features, network maps {} -> {}",
            data.ncols(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    if spec.latent_dim() == 0 {
        return Err(Error::invalid("network has no latent layer"));
    }
    Ok(())
}

fn training_rng(seed: u64) -> SeededRng {
    // stream 0 of the same seed initializes the weights
    let mut rng = rng_from_seed(seed);
    rng.set_stream(1);
    rng
}

/// Glorot initialization from `cfg.seed`, then [`train_from`].
pub fn train(spec: &NetworkSpec, cfg: &TrainConfig, data: &DMatrix<f64>) -> Result<(ParamStore, Vec<TraceRow>)> {
    let params = ParamStore::init(spec, &mut rng_from_seed(cfg.seed));
    train_from(spec, params, cfg, data)
}

/// Minibatch Adam over shuffled rows of `data`. Batches with fewer than two
/// rows are skipped because the Sinkhorn term needs a cloud.
pub fn train_from(
    spec: &NetworkSpec,
    mut params: ParamStore,
    cfg: &TrainConfig,
    data: &DMatrix<f64>,
) -> Result<(ParamStore, Vec<TraceRow>)> {
    cfg.validate()?;
    check_data(spec, data)?;
    params.check_shapes(spec)?;
    if cfg.alpha.dim() != spec.latent_dim() {
        return Err(Error::invalid(format!(
            "alpha has {} entries, latent dimension is {}",
            cfg.alpha.dim(),
            spec.latent_dim()
        )));
    }
    let adam = AdamConfig::new(cfg.learning_rate);
    let mut rng = training_rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut row = TraceRow {
            epoch,
            recon: 0.0,
            penalty: 0.0,
            total: 0.0,
            unconverged: 0,
        };
        let mut seen = 0usize;
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            if rows.len() < 2 {
                continue;
            }
            let fail = |e: Error| match e {
                Error::Numerical { what, .. } => {
                    Error::numerical(format!("epoch {epoch} batch {batch}: {what}"), step)
                }
                other => other,
            };
            let x = gather(data, rows);
            let pass = forward(spec, &params, &x)?;
            let lg = loss_and_grads(
                &x,
                pass.reconstruction(),
                pass.latent(),
                &cfg.alpha,
                cfg.lambda,
                &cfg.sinkhorn,
                &mut rng,
            )
            .map_err(fail)?;
            let grads = backward(spec, &params, &pass, &lg.d_recon, Some(&lg.d_latent))?;
            if !grads.max_abs().is_finite() {
                return Err(fail(Error::numerical("gradient is not finite", step)));
            }
            adam_step(&mut params, &grads, &adam);
            step += 1;

            let w = rows.len() as f64;
            row.recon += w * lg.loss.recon;
            row.penalty += w * lg.loss.penalty;
            row.total += w * lg.loss.total;
            row.unconverged += usize::from(!lg.converged);
            seen += rows.len();
        }
        if seen > 0 {
            let n = seen as f64;
            row.recon /= n;
            row.penalty /= n;
            row.total /= n;
        }
        trace.push(row);
    }
    Ok((params, trace))
}

/// Mean loss of a fixed network over `data` in consecutive batches of
/// `cfg.batch_size`, with reference clouds drawn from `cfg.seed`.
pub fn evaluate_loss(
    spec: &NetworkSpec,
    params: &ParamStore,
    cfg: &TrainConfig,
    data: &DMatrix<f64>,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    check_data(spec, data)?;
    let mut rng = rng_from_seed(cfg.seed);
    rng.set_stream(2);
    let rows: Vec<usize> = (0..data.nrows()).collect();
    let mut acc = LossBreakdown {
        total: 0.0,
        recon: 0.0,
        penalty: 0.0,
    };
    let mut seen = 0usize;
    for chunk in rows.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let x = gather(data, chunk);
        let pass = forward(spec, params, &x)?;
        let l = loss(&x, pass.reconstruction(), pass.latent(), &cfg.alpha, cfg.lambda, &cfg.sinkhorn, &mut rng)?;
        let w = chunk.len() as f64;
        acc.total += w * l.total;
        acc.recon += w * l.recon;
        acc.penalty += w * l.penalty;
        seen += chunk.len();
    }
    if seen == 0 {
        return Err(Error::invalid("need at least two rows to evaluate the loss"));
    }
    let n = seen as f64;
    Ok(LossBreakdown {
        total: acc.total / n,
        recon: acc.recon / n,
        penalty: acc.penalty / n,
    })
}
