//! Deterministic inputs shared by the criterion benches.

use nalgebra::DMatrix;
use rand::Rng;
use simplexae_core::simplex::dirichlet_sample;
use simplexae_core::{rng_from_seed, DirichletParams, EmpiricalMeasure};

/// `rows x cols` uniform values in `[-1, 1)`.
pub fn batch(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Dirichlet draws stacked as rows.
pub fn latent_cloud(seed: u64, count: usize, alpha: f64, dim: usize) -> DMatrix<f64> {
    let params = DirichletParams::symmetric(alpha, dim).expect("valid alpha");
    let mut rng = rng_from_seed(seed);
    let mut z = DMatrix::zeros(count, dim);
    for r in 0..count {
        let x = dirichlet_sample(&params, &mut rng);
        for (c, v) in x.as_slice().iter().enumerate() {
            z[(r, c)] = *v;
        }
    }
    z
}

/// Uniformly weighted measure over the rows of `m`.
pub fn measure(m: &DMatrix<f64>) -> EmpiricalMeasure {
    let mut points = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        points.extend(m.row(r).iter());
    }
    EmpiricalMeasure::uniform(points, m.ncols()).expect("finite points")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(batch(1, 4, 3), batch(1, 4, 3));
        let z = latent_cloud(2, 10, 0.3, 3);
        assert_eq!(z, latent_cloud(2, 10, 0.3, 3));
        for r in 0..10 {
            assert!((z.row(r).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(measure(&z).len(), 10);
    }
}
