use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Parameters of the Gaussian-hypercube classification generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub class_sep: f64,
    pub n_classes: usize,
    pub clusters_per_class: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_classes: usize, seed: u64) -> Self {
        SynthConfig {
            n_classes,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 4 {
            return Err(Error::invalid("n_samples must be at least 4"));
        }
        if self.n_classes < 1 || self.clusters_per_class < 1 || self.n_informative < 1 {
            return Err(Error::invalid(
                "n_classes, clusters_per_class and n_informative must be >= 1",
            ));
        }
        if self.n_informative + self.n_redundant > self.n_features {
            return Err(Error::invalid(format!(
                "{} informative + {} redundant features exceed {} features",
                self.n_informative, self.n_redundant, self.n_features
            )));
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return Err(Error::invalid("class_sep must be > 0"));
        }
        let clusters = self.n_classes * self.clusters_per_class;
        let capacity = 1usize.checked_shl(self.n_informative as u32).filter(|_| self.n_informative < 63);
        if capacity.is_some_and(|c| c < clusters) {
            return Err(Error::invalid(format!(
                "{} classes x {} clusters need more hypercube vertices than the {} available with {} informative features",
                self.n_classes,
                self.clusters_per_class,
                capacity.unwrap_or(usize::MAX),
                self.n_informative
            )));
        }
        if clusters > self.n_samples {
            return Err(Error::invalid("more clusters than samples"));
        }
        Ok(())
    }

    /// Train, validation and test sizes: a half, a quarter, and the rest.
    pub fn split_sizes(&self) -> [usize; 3] {
        let train = self.n_samples / 2;
        let validation = self.n_samples / 4;
        [train, validation, self.n_samples - train - validation]
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 20_000,
            n_features: 20,
            n_informative: 3,
            n_redundant: 2,
            class_sep: 5.0,
            n_classes: 3,
            clusters_per_class: 1,
            seed: 0,
        }
    }
}

/// Feature matrix (one row per sample), labels and split tags. Rows are
/// ordered train, then validation, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub n_classes: usize,
    /// Column positions of the informative features after the column shuffle.
    pub informative_columns: Vec<usize>,
    /// Cluster centroids in informative coordinates, one row per cluster.
    pub centroids: DMatrix<f64>,
}

impl Dataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.labels.len()).filter(|i| self.splits[*i] == split).collect()
    }

    /// Features and labels of one split.
    pub fn split(&self, split: Split) -> (DMatrix<f64>, Vec<usize>) {
        let rows = self.split_indices(split);
        let x = DMatrix::from_fn(rows.len(), self.features.ncols(), |r, c| self.features[(rows[r], c)]);
        (x, rows.iter().map(|i| self.labels[*i]).collect())
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.splits {
            counts[*s as usize] += 1;
        }
        counts
    }
}

/// Gaussian clusters at distinct vertices of the hypercube
/// `{-sep/2, +sep/2}^n_informative`, with redundant linear combinations and
/// pure-noise columns appended, columns and rows shuffled.
pub fn make_classification(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let n_inf = cfg.n_informative;
    let clusters = cfg.n_classes * cfg.clusters_per_class;
    let half = cfg.class_sep / 2.0;

    // distinct vertices; rejection keeps this sparse when 2^n_inf is huge
    let vertices: Vec<u64> = if n_inf <= 20 {
        let mut all: Vec<u64> = (0..1u64 << n_inf).collect();
        all.shuffle(&mut rng);
        all.truncate(clusters);
        all
    } else {
        let mut chosen = Vec::with_capacity(clusters);
        let bits = n_inf.min(64);
        while chosen.len() < clusters {
            let v: u64 = rand::Rng::random::<u64>(&mut rng) >> (64 - bits);
            if !chosen.contains(&v) {
                chosen.push(v);
            }
        }
        chosen
    };
    let centroids = DMatrix::from_fn(clusters, n_inf, |k, j| {
        if j < 64 && vertices[k] >> j & 1 == 1 {
            half
        } else {
            -half
        }
    });

    let redundant: DMatrix<f64> = DMatrix::from_fn(n_inf, cfg.n_redundant, |_, _| StandardNormal.sample(&mut rng));

    let n = cfg.n_samples;
    let mut x = DMatrix::zeros(n, cfg.n_features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cluster = i % clusters;
        labels.push(cluster % cfg.n_classes);
        for j in 0..n_inf {
            let noise: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = centroids[(cluster, j)] + noise;
        }
        for r in 0..cfg.n_redundant {
            let mut v = 0.0;
            for j in 0..n_inf {
                v += x[(i, j)] * redundant[(j, r)];
            }
            x[(i, n_inf + r)] = v;
        }
        for c in n_inf + cfg.n_redundant..cfg.n_features {
            x[(i, c)] = StandardNormal.sample(&mut rng);
        }
    }

    let mut columns: Vec<usize> = (0..cfg.n_features).collect();
    columns.shuffle(&mut rng);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);

    // output column c holds source column columns[c]
    let features = DMatrix::from_fn(n, cfg.n_features, |r, c| x[(rows[r], columns[c])]);
    let labels: Vec<usize> = rows.iter().map(|r| labels[*r]).collect();
    let mut informative_columns = vec![0; n_inf];
    for (c, src) in columns.iter().enumerate() {
        if *src < n_inf {
            informative_columns[*src] = c;
        }
    }
    let [train, validation, _] = cfg.split_sizes();
    let splits = (0..n)
        .map(|i| {
            if i < train {
                Split::Train
            } else if i < train + validation {
                Split::Validation
            } else {
                Split::Test
            }
        })
        .collect();
    Ok(Dataset {
        features,
        labels,
        splits,
        n_classes: cfg.n_classes,
        informative_columns,
        centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_and_balance() {
        let ds = make_classification(&SynthConfig::new(3, 1)).unwrap();
        assert_eq!(ds.features.shape(), (20_000, 20));
        assert_eq!(ds.split_counts(), [10_000, 5_000, 5_000]);
        let mut counts = [0usize; 3];
        for l in &ds.labels {
            counts[*l] += 1;
        }
        let min = *counts.iter().min().unwrap();
        let max = *counts.iter().max().unwrap();
        assert!(max - min <= 1, "{counts:?}");
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig {
            n_samples: 500,
            ..SynthConfig::new(4, 9)
        };
        let a = make_classification(&cfg).unwrap();
        let b = make_classification(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.features.iter().zip(b.features.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = make_classification(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn proportional_splits() {
        let cfg = SynthConfig {
            n_samples: 1001,
            ..SynthConfig::new(2, 0)
        };
        let ds = make_classification(&cfg).unwrap();
        assert_eq!(ds.split_counts(), [500, 250, 251]);
    }

    #[test]
    fn vertex_capacity_is_checked() {
        assert!(make_classification(&SynthConfig::new(9, 0)).is_err());
        assert!(make_classification(&SynthConfig::new(300, 0)).is_err());
        assert!(SynthConfig::new(8, 0).validate().is_ok());
        let too_many = SynthConfig {
            n_informative: 15,
            n_redundant: 6,
            ..SynthConfig::new(2, 0)
        };
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn centroids_are_distinct_vertices() {
        let ds = make_classification(&SynthConfig {
            n_samples: 100,
            ..SynthConfig::new(8, 2)
        })
        .unwrap();
        let c = &ds.centroids;
        for a in 0..8 {
            for b in 0..a {
                let hamming = (0..3).filter(|j| c[(a, *j)] != c[(b, *j)]).count();
                assert!(hamming >= 1);
                let d = (c.row(a) - c.row(b)).norm();
                assert!((d - 5.0 * (hamming as f64).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn informative_columns_track_centroids() {
        let ds = make_classification(&SynthConfig {
            n_samples: 6000,
            ..SynthConfig::new(3, 5)
        })
        .unwrap();
        // the class mean over informative columns sits at its centroid
        for class in 0..3 {
            let rows: Vec<usize> = (0..6000).filter(|i| ds.labels[*i] == class).collect();
            for (j, col) in ds.informative_columns.iter().enumerate() {
                let mean = rows.iter().map(|r| ds.features[(*r, *col)]).sum::<f64>() / rows.len() as f64;
                assert!((mean - ds.centroids[(class, j)]).abs() < 0.1, "{mean}");
            }
        }
    }
}
