//! Entropy-regularized optimal transport between weighted point clouds with a
//! squared Euclidean ground cost.
//!
//! Potentials are updated in the log domain:
//!
//! ```text
//! f_i <- -eps * LSE_j [ ln b_j + (g_j - C_ij) / eps ]
//! g_j <- -eps * LSE_i [ ln a_i + (f_i - C_ij) / eps ]
//! ```
//!
//! and the regularized cost `OT_eps(a, b)` is the dual value
//! `<a, f> + <b, g>`. The debiased divergence subtracts the two self-transport
//! terms so that `S(a, a) = 0`. Gradients with respect to the points of the
//! first measure hold the converged potentials fixed.

use crate::error::{Error, Result};

/// Weighted point cloud, points stored row-major (`len x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("measure points must have dimension >= 1"));
        }
        if weights.is_empty() {
            return Err(Error::invalid("measure needs at least one point"));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::invalid(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("measure points must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("measure weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("measure weights sum to {total}, expected 1")));
        }
        Ok(EmpiricalMeasure { points, dim, weights })
    }

    /// Uniform weights over the rows of `points`.
    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid("point buffer is not a whole number of rows"));
        }
        let m = points.len() / dim;
        if m == 0 {
            return Err(Error::invalid("measure needs at least one point"));
        }
        // avoid 1/m rounding drifting the sum past the tolerance
        let w = 1.0 / m as f64;
        Self::new(points, dim, vec![w; m])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// How [`SinkhornConfig::epsilon`] is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonScale {
    /// `epsilon` is used as is, in units of squared distance.
    Absolute,
    /// `epsilon` multiplies the mean entry of the cross cost matrix.
    MeanCost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub scale: EpsilonScale,
    pub max_iters: usize,
    /// Sup-norm change of the potentials between sweeps, in units of the
    /// effective epsilon, that counts as converged.
    pub tol: f64,
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.05,
            scale: EpsilonScale::MeanCost,
            max_iters: 200,
            tol: 1e-6,
            debiased: true,
        }
    }
}

impl SinkhornConfig {
    /// A fixed regularization strength.
    pub fn absolute(epsilon: f64) -> Self {
        SinkhornConfig {
            epsilon,
            scale: EpsilonScale::Absolute,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("sinkhorn epsilon {} must be > 0", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("sinkhorn max_iters must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("sinkhorn tol must be > 0"));
        }
        Ok(())
    }

    /// The regularization actually used for a problem with cross cost `cost`.
    pub fn effective_epsilon(&self, cost: &CostMatrix) -> f64 {
        match self.scale {
            EpsilonScale::Absolute => self.epsilon,
            EpsilonScale::MeanCost => {
                let mean = cost.mean();
                if mean > 0.0 {
                    self.epsilon * mean
                } else {
                    self.epsilon
                }
            }
        }
    }
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn transpose(&self) -> CostMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// `C[i][j] = |a_i - b_j|^2`.
pub fn pairwise_sq_cost(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "point dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        let ai = a.point(i);
        for j in 0..b.len() {
            data.push(
                ai.iter()
                    .zip(b.point(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum(),
            );
        }
    }
    Ok(CostMatrix {
        rows: a.len(),
        cols: b.len(),
        data,
    })
}

/// Converged (or budget-exhausted) dual potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iters_used: usize,
    pub converged: bool,
}

impl Potentials {
    /// Dual value `<wa, f> + <wb, g>`.
    pub fn dual_value(&self, wa: &[f64], wb: &[f64]) -> f64 {
        dot(wa, &self.f) + dot(wb, &self.g)
    }

    /// Transport plan `P_ij = wa_i wb_j exp((f_i + g_j - C_ij) / eps)`.
    pub fn plan(&self, cost: &CostMatrix, wa: &[f64], wb: &[f64]) -> Vec<f64> {
        let mut plan = Vec::with_capacity(cost.data.len());
        for i in 0..cost.rows {
            let row = cost.row(i);
            for j in 0..cost.cols {
                plan.push(wa[i] * wb[j] * ((self.f[i] + self.g[j] - row[j]) / self.epsilon).exp());
            }
        }
        plan
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ln_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}

/// `-eps * LSE_j [ ln_w_j + (pot_j - cost_j) / eps ]` with a reusable buffer.
#[inline]
fn soft_min(cost_row: &[f64], ln_w: &[f64], pot: &[f64], eps: f64, buf: &mut [f64]) -> f64 {
    let inv = 1.0 / eps;
    let mut max = f64::NEG_INFINITY;
    for (((b, c), lw), p) in buf.iter_mut().zip(cost_row).zip(ln_w).zip(pot) {
        *b = lw + (p - c) * inv;
        if *b > max {
            max = *b;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = buf.iter().map(|b| (b - max).exp()).sum();
    -eps * (max + sum.ln())
}

/// Largest `max(C) / eps` for which the iterations run on the exponentiated
/// kernel `exp(-C / eps)` instead of in the log domain. Far from the f64
/// underflow limit (~708), so both paths produce the same iterates up to
/// rounding.
const KERNEL_RATIO_LIMIT: f64 = 200.0;

fn kernel(cost: &CostMatrix, eps: f64) -> Option<Vec<f64>> {
    let max = cost.data.iter().copied().fold(0.0f64, f64::max);
    (max / eps < KERNEL_RATIO_LIMIT).then(|| cost.data.iter().map(|c| (-c / eps).exp()).collect())
}

fn check_finite(values: &[f64], iter: usize) -> Result<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("sinkhorn potentials became non-finite", iter));
    }
    Ok(())
}

/// Alternating Sinkhorn iterations for the cost `cost` between weights `wa`
/// (rows) and `wb` (columns). The returned `g` is the exact soft-min response
/// to `f`, so the column marginals of the plan are exact.
pub fn sinkhorn_potentials(
    cost: &CostMatrix,
    wa: &[f64],
    wb: &[f64],
    cfg: &SinkhornConfig,
) -> Result<Potentials> {
    cfg.validate()?;
    if wa.len() != cost.rows || wb.len() != cost.cols {
        return Err(Error::invalid("weight lengths do not match the cost matrix"));
    }
    if cost.data.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost matrix contains non-finite entries"));
    }
    let eps = cfg.effective_epsilon(cost);
    let (rows, cols) = (cost.rows, cost.cols);
    let cost_t = cost.transpose();
    let ln_wa = ln_weights(wa);
    let ln_wb = ln_weights(wb);
    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let mut converged = false;
    let mut iters_used = 0;

    if let Some(k) = kernel(cost, eps) {
        // u = exp(f / eps), v = exp(g / eps); the delta is measured on ln u, ln v
        let mut u = vec![1.0; rows];
        let mut v = vec![1.0; cols];
        let mut col_acc = vec![0.0; cols];
        for iter in 1..=cfg.max_iters {
            iters_used = iter;
            let mut delta: f64 = 0.0;
            for i in 0..rows {
                let krow = &k[i * cols..(i + 1) * cols];
                let s: f64 = krow.iter().zip(wb).zip(&v).map(|((k, w), v)| k * w * v).sum();
                let nu = 1.0 / s;
                delta = delta.max((nu / u[i]).ln().abs());
                u[i] = nu;
            }
            col_acc.iter_mut().for_each(|c| *c = 0.0);
            for i in 0..rows {
                let krow = &k[i * cols..(i + 1) * cols];
                let scale = wa[i] * u[i];
                for (acc, kij) in col_acc.iter_mut().zip(krow) {
                    *acc += kij * scale;
                }
            }
            for (vj, acc) in v.iter_mut().zip(&col_acc) {
                let nv = 1.0 / acc;
                delta = delta.max((nv / *vj).ln().abs());
                *vj = nv;
            }
            if !delta.is_finite() {
                return Err(Error::numerical("sinkhorn scalings became non-finite", iter));
            }
            if delta < cfg.tol {
                converged = true;
                break;
            }
        }
        for (fi, ui) in f.iter_mut().zip(&u) {
            *fi = eps * ui.ln();
        }
        check_finite(&f, iters_used)?;
    } else {
        let mut buf = vec![0.0; rows.max(cols)];
        for iter in 1..=cfg.max_iters {
            iters_used = iter;
            let mut delta: f64 = 0.0;
            for i in 0..rows {
                let v = soft_min(cost.row(i), &ln_wb, &g, eps, &mut buf[..cols]);
                delta = delta.max((v - f[i]).abs());
                f[i] = v;
            }
            for j in 0..cols {
                let v = soft_min(cost_t.row(j), &ln_wa, &f, eps, &mut buf[..rows]);
                delta = delta.max((v - g[j]).abs());
                g[j] = v;
            }
            check_finite(&f, iter)?;
            check_finite(&g, iter)?;
            // potentials compared in units of eps, so tol bounds the relative
            // marginal violation of the plan
            if delta / eps < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    // final column response in the log domain
    let mut buf = vec![0.0; rows];
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = soft_min(cost_t.row(j), &ln_wa, &f, eps, &mut buf);
    }
    check_finite(&g, iters_used)?;
    Ok(Potentials {
        f,
        g,
        epsilon: eps,
        iters_used,
        converged,
    })
}

/// Self-transport potential for `OT_eps(a, a)`, using the averaged fixed-point
/// update `f <- (f + T(f)) / 2`, which converges in a handful of sweeps.
/// Returns the potential (stored as both `f` and `g`) and the semi-dual value.
fn symmetric_potential(cost: &CostMatrix, w: &[f64], eps: f64, cfg: &SinkhornConfig) -> Result<(Potentials, f64)> {
    let ln_w = ln_weights(w);
    let n = w.len();
    let mut f = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut converged = false;
    let mut iters_used = 0;

    if let Some(k) = kernel(cost, eps) {
        let mut u = vec![1.0; n];
        let mut next = vec![0.0; n];
        for iter in 1..=cfg.max_iters {
            iters_used = iter;
            for (i, nx) in next.iter_mut().enumerate() {
                let krow = &k[i * n..(i + 1) * n];
                let s: f64 = krow.iter().zip(w).zip(&u).map(|((k, w), u)| k * w * u).sum();
                *nx = 1.0 / s;
            }
            let mut delta: f64 = 0.0;
            for (ui, nx) in u.iter_mut().zip(&next) {
                let avg = (*ui * nx).sqrt();
                delta = delta.max((avg / *ui).ln().abs());
                *ui = avg;
            }
            if !delta.is_finite() {
                return Err(Error::numerical("symmetric sinkhorn scaling became non-finite", iter));
            }
            if delta < cfg.tol {
                converged = true;
                break;
            }
        }
        for (fi, ui) in f.iter_mut().zip(&u) {
            *fi = eps * ui.ln();
        }
        check_finite(&f, iters_used)?;
    } else {
        let mut next = vec![0.0; n];
        for iter in 1..=cfg.max_iters {
            iters_used = iter;
            for (i, nx) in next.iter_mut().enumerate() {
                *nx = soft_min(cost.row(i), &ln_w, &f, eps, &mut buf);
            }
            let mut delta: f64 = 0.0;
            for (fi, nx) in f.iter_mut().zip(&next) {
                let v = 0.5 * (*fi + nx);
                delta = delta.max((v - *fi).abs());
                *fi = v;
            }
            check_finite(&f, iter)?;
            if delta / eps < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let response: Vec<f64> = (0..n)
        .map(|i| soft_min(cost.row(i), &ln_w, &f, eps, &mut buf))
        .collect();
    check_finite(&response, iters_used)?;
    let value = dot(w, &f) + dot(w, &response);
    Ok((
        Potentials {
            g: f.clone(),
            f,
            epsilon: eps,
            iters_used,
            converged,
        },
        value,
    ))
}

/// Value, point gradient and convergence status of one divergence evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEval {
    pub value: f64,
    /// Gradient with respect to the points of the first measure, row-major.
    pub gradient: Vec<f64>,
    pub epsilon: f64,
    /// False when any of the inner problems hit `max_iters`.
    pub converged: bool,
}

/// Gradient of the sinkhorn divergence with respect to the first measure's points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGradient {
    pub gradient: Vec<f64>,
    /// Set when potentials did not reach `tol`; the gradient is still returned.
    pub unconverged: bool,
}

/// Evaluates the divergence and, when `with_gradient`, its gradient in `a`.
pub fn evaluate_divergence(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
    with_gradient: bool,
) -> Result<DivergenceEval> {
    cfg.validate()?;
    let c_ab = pairwise_sq_cost(a, b)?;
    // the cross problem is always solved in one canonical orientation so that
    // S(a, b) and S(b, a) agree to the last bit
    let swap = canonical_order(b, a);
    let c_ba = if swap { Some(c_ab.transpose()) } else { None };
    let eps = cfg.effective_epsilon(c_ba.as_ref().unwrap_or(&c_ab));
    let fixed = SinkhornConfig {
        epsilon: eps,
        scale: EpsilonScale::Absolute,
        ..*cfg
    };
    let dim = a.dim();
    let identical = a == b;

    let (mut value, mut converged, mut gradient) = if identical && cfg.debiased {
        // S(a, a) = 0 exactly; the cross and self terms are the same problem
        (0.0, true, vec![0.0; a.len() * dim])
    } else {
        let pot_ab = match &c_ba {
            Some(c_ba) => {
                let p = sinkhorn_potentials(c_ba, b.weights(), a.weights(), &fixed)?;
                Potentials {
                    f: p.g,
                    g: p.f,
                    ..p
                }
            }
            None => sinkhorn_potentials(&c_ab, a.weights(), b.weights(), &fixed)?,
        };
        let mut gradient = Vec::new();
        if with_gradient {
            gradient = vec![0.0; a.len() * dim];
            let plan = pot_ab.plan(&c_ab, a.weights(), b.weights());
            accumulate_plan_gradient(&mut gradient, &plan, a, b, 1.0);
        }
        (pot_ab.dual_value(a.weights(), b.weights()), pot_ab.converged, gradient)
    };

    if cfg.debiased && !identical {
        let c_aa = pairwise_sq_cost(a, a)?;
        let (pot_aa, ot_aa) = symmetric_potential(&c_aa, a.weights(), eps, &fixed)?;
        let c_bb = pairwise_sq_cost(b, b)?;
        let (pot_bb, ot_bb) = symmetric_potential(&c_bb, b.weights(), eps, &fixed)?;
        value -= 0.5 * (ot_aa + ot_bb);
        converged &= pot_aa.converged && pot_bb.converged;
        if with_gradient {
            let plan = pot_aa.plan(&c_aa, a.weights(), a.weights());
            accumulate_plan_gradient(&mut gradient, &plan, a, a, -1.0);
        }
    }
    if !with_gradient {
        gradient.clear();
    }

    Ok(DivergenceEval {
        value,
        gradient,
        epsilon: eps,
        converged,
    })
}

/// True when `x` sorts before `y` by size, then points, then weights.
fn canonical_order(x: &EmpiricalMeasure, y: &EmpiricalMeasure) -> bool {
    use std::cmp::Ordering;
    let order = x
        .len()
        .cmp(&y.len())
        .then_with(|| x.points.iter().partial_cmp(y.points.iter()).unwrap_or(Ordering::Equal))
        .then_with(|| x.weights.iter().partial_cmp(y.weights.iter()).unwrap_or(Ordering::Equal));
    order == Ordering::Less
}

/// Adds `scale * 2 * sum_j P_ij (x_i - y_j)` for each row `i`.
fn accumulate_plan_gradient(
    grad: &mut [f64],
    plan: &[f64],
    x: &EmpiricalMeasure,
    y: &EmpiricalMeasure,
    scale: f64,
) {
    let dim = x.dim();
    let cols = y.len();
    for i in 0..x.len() {
        let xi = x.point(i);
        let prow = &plan[i * cols..(i + 1) * cols];
        let mass: f64 = prow.iter().sum();
        let out = &mut grad[i * dim..(i + 1) * dim];
        for (k, o) in out.iter_mut().enumerate() {
            let pulled: f64 = prow.iter().enumerate().map(|(j, p)| p * y.point(j)[k]).sum();
            *o += scale * 2.0 * (mass * xi[k] - pulled);
        }
    }
}

/// Sinkhorn divergence between `a` and `b`; debiased or raw per `cfg`.
pub fn sinkhorn_divergence(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<f64> {
    evaluate_divergence(a, b, cfg, false).map(|e| e.value)
}

/// Envelope gradient of [`sinkhorn_divergence`] with respect to `a`'s points.
pub fn sinkhorn_grad_points(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
) -> Result<PointGradient> {
    let eval = evaluate_divergence(a, b, cfg, true)?;
    Ok(PointGradient {
        gradient: eval.gradient,
        unconverged: !eval.converged,
    })
}
