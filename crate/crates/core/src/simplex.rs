//! Simplex geometry, the Dirichlet distribution and the additive logistic
//! transform pair linking the open simplex with Euclidean space.
//!
//! A point of the `n`-simplex is stored with all `n + 1` ambient coordinates.
//! Distribution math is carried out in the log domain so that large
//! concentration parameters and wide latent spaces do not underflow.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Absolute tolerance on the unit l1 norm of a simplex point.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Lower clamp applied to coordinates before taking logarithms in
/// [`simplex_to_logistic`].
pub const BOUNDARY_CLAMP: f64 = 1e-12;

/// A point on the probability simplex: non-negative coordinates summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates `coords` against the simplex invariants.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_simplex(&coords)?;
        Ok(SimplexVector(coords))
    }

    /// Projects a non-negative vector with positive mass onto the simplex by
    /// dividing by its l1 norm.
    pub fn normalized(mut coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("empty simplex vector"));
        }
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("cannot normalize negative or non-finite coordinates"));
        }
        let total: f64 = coords.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        coords.iter_mut().for_each(|c| *c /= total);
        Ok(SimplexVector(coords))
    }

    /// Wraps coordinates produced by an internal routine that already
    /// guarantees the invariants (softmax, logistic transform).
    pub(crate) fn from_trusted(coords: Vec<f64>) -> Self {
        debug_assert!(check_simplex(&coords).is_ok(), "{coords:?}");
        SimplexVector(coords)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of ambient coordinates (`n + 1` for a point on the `n`-simplex).
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks non-negativity, finiteness and the unit l1 norm.
pub fn check_simplex(coords: &[f64]) -> Result<()> {
    if coords.is_empty() {
        return Err(Error::invalid("empty simplex vector"));
    }
    if let Some((i, c)) = coords
        .iter()
        .enumerate()
        .find(|(_, c)| !c.is_finite() || **c < 0.0)
    {
        return Err(Error::invalid(format!(
            "simplex coordinate {i} is {c}, expected a finite non-negative value"
        )));
    }
    let total: f64 = coords.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!(
            "simplex coordinates sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Concentration parameters of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams(Vec<f64>);

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::invalid("dirichlet needs at least two concentration parameters"));
        }
        if let Some(a) = alpha.iter().find(|a| !a.is_finite() || **a <= 0.0) {
            return Err(Error::invalid(format!(
                "dirichlet concentration {a} must be finite and strictly positive"
            )));
        }
        Ok(DirichletParams(alpha))
    }

    /// Broadcasts a scalar concentration to `dim` coordinates.
    pub fn symmetric(value: f64, dim: usize) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Mean of the distribution, `alpha / sum(alpha)`.
    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.0.iter().sum();
        self.0.iter().map(|a| a / total).collect()
    }
}

/// An unconstrained point of `R^n`, the image of the open `n`-simplex under
/// the additive log-ratio map.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanVector(Vec<f64>);

impl EuclideanVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("euclidean coordinate {c} is not finite")));
        }
        Ok(EuclideanVector(coords))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `ln(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place softmax with max subtraction. The caller guarantees finite input.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Maps logits onto the simplex, `z_i = exp(t_i) / sum_j exp(t_j)`.
pub fn softmax(logits: &[f64]) -> Result<SimplexVector> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("softmax input contains a non-finite value"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(SimplexVector::from_trusted(out))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments.
///
/// Lanczos approximation below 10 (with reflection under 0.5), Stirling's
/// series above.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0
                + inv2
                    * (-1.0 / 360.0
                        + inv2
                            * (1.0 / 1260.0
                                + inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0 - inv2 * 691.0 / 360_360.0)))));
        return (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series;
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Log of the multivariate beta function, `sum ln G(a_i) - ln G(sum a_i)`.
pub fn log_beta(alpha: &DirichletParams) -> f64 {
    let a = alpha.as_slice();
    let total: f64 = a.iter().sum();
    a.iter().map(|&ai| ln_gamma(ai)).sum::<f64>() - ln_gamma(total)
}

/// Log density of `Dir(alpha)` at `x`.
///
/// Boundary points are allowed where the density stays bounded: a zero
/// coordinate with `alpha_i == 1` contributes nothing, with `alpha_i > 1` it
/// sends the density to zero (`-inf`), and with `alpha_i < 1` it is an error.
pub fn dirichlet_log_pdf(params: &DirichletParams, x: &SimplexVector) -> Result<f64> {
    if params.dim() != x.dim() {
        return Err(Error::invalid(format!(
            "dirichlet has {} parameters but the point has {} coordinates",
            params.dim(),
            x.dim()
        )));
    }
    let mut acc = -log_beta(params);
    for (i, (&a, &xi)) in params.as_slice().iter().zip(x.as_slice()).enumerate() {
        if xi == 0.0 {
            if a < 1.0 {
                return Err(Error::DensityUnbounded(format!(
                    "coordinate {i} is zero while alpha_{i} = {a} < 1"
                )));
            }
            if a > 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            continue;
        }
        acc += (a - 1.0) * xi.ln();
    }
    Ok(acc)
}

/// Draws `ln G` with `G ~ Gamma(shape, 1)`.
///
/// Marsaglia and Tsang's squeeze/rejection method; shapes below one are
/// boosted through `G(a) = G(a + 1) * U^(1/a)`, applied in log space so tiny
/// shapes do not underflow.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>();
        // random::<f64>() lies in [0, 1); shift to (0, 1] so the log is finite
        let u = 1.0 - u;
        return sample_log_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// One draw from `Dir(alpha)`: independent gamma variates normalized by
/// their sum (computed as a softmax of the log variates).
pub fn dirichlet_sample<R: Rng + ?Sized>(params: &DirichletParams, rng: &mut R) -> SimplexVector {
    let mut logs: Vec<f64> = params
        .as_slice()
        .iter()
        .map(|&a| sample_log_gamma(a, rng))
        .collect();
    softmax_in_place(&mut logs);
    SimplexVector::from_trusted(logs)
}

/// Additive logistic map `R^n -> P_n`:
/// `x_i = exp(y_i) / (1 + sum exp(y_j))`, `x_{n+1} = 1 / (1 + sum exp(y_j))`.
pub fn logistic_to_simplex(y: &EuclideanVector) -> SimplexVector {
    let mut augmented = Vec::with_capacity(y.dim() + 1);
    augmented.extend_from_slice(y.as_slice());
    augmented.push(0.0);
    softmax_in_place(&mut augmented);
    SimplexVector::from_trusted(augmented)
}

/// Additive log-ratio map `P_n -> R^n`, `y_i = ln(x_i / x_{n+1})`.
///
/// Coordinates are clamped to [`BOUNDARY_CLAMP`] first so boundary points map
/// to large finite values rather than infinities.
pub fn simplex_to_logistic(x: &SimplexVector) -> EuclideanVector {
    let coords = x.as_slice();
    let (last, head) = coords.split_last().expect("simplex vectors are nonempty");
    let ln_last = last.max(BOUNDARY_CLAMP).ln();
    EuclideanVector(
        head.iter()
            .map(|xi| xi.max(BOUNDARY_CLAMP).ln() - ln_last)
            .collect(),
    )
}
