//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use simplexae_core::autoencoder::Activation;
use simplexae_core::data::SynthConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Uniform,
    Alpha,
    Mixture,
    Pmf,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uniform" => SamplerKind::Uniform,
            "alpha" => SamplerKind::Alpha,
            "mm" | "mixture" => SamplerKind::Mixture,
            "pmf" => SamplerKind::Pmf,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Alpha => "alpha",
            SamplerKind::Mixture => "mm",
            SamplerKind::Pmf => "pmf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsfKind {
    Flat,
    Delta,
}

/// Every recognised key with its default. Relative paths are taken as given,
/// i.e. against the working directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Latent coordinates (`n + 1` for the `n`-simplex).
    pub dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Adam step size; see [`RunConfig::learning_rate`] for the default.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub components: Option<usize>,
    pub k: Option<usize>,
    pub knn_k: usize,
    pub count: usize,
    pub dataset: DatasetSource,
    /// Hidden widths of a symmetric MLP; empty selects the small tabular stack.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
    /// Split the mixture and histogram samplers are fitted on.
    pub fit_split: String,
    /// Split written by latent-export.
    pub split: String,
    /// Peak value for PSNR; defaults to the range of the test features.
    pub psnr_max: Option<f64>,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub iters: usize,
    pub psf: PsfKind,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 3,
            alpha: 30.0,
            lambda: 100.0,
            lr: None,
            epochs: 20,
            batch: 64,
            seed: 0,
            sampler: SamplerKind::Uniform,
            components: None,
            k: None,
            knn_k: 5,
            count: 2000,
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            hidden: Vec::new(),
            activation: Activation::Relu,
            output_activation: Activation::Identity,
            fit_split: "validation".into(),
            split: "test".into(),
            psnr_max: None,
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 200,
            iters: 30,
            psf: PsfKind::Flat,
            data_dir: None,
            checkpoint: None,
            input: None,
            output: None,
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::config(format!("{key}={value}: expected {expected}"))
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T, CliError> {
    match value.parse::<T>() {
        Ok(v) if v > T::default() => Ok(v),
        _ => Err(bad(key, value, "a positive number")),
    }
}

fn non_negative(key: &str, value: &str) -> Result<f64, CliError> {
    match value.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(bad(key, value, "a finite non-negative number")),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CliError::config(format!("line {}: {}", n + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn synth_mut(&mut self) -> &mut SynthConfig {
        if !matches!(self.dataset, DatasetSource::Synthetic(_)) {
            self.dataset = DatasetSource::Synthetic(SynthConfig::default());
        }
        match &mut self.dataset {
            DatasetSource::Synthetic(s) => s,
            DatasetSource::Idx { .. } => unreachable!(),
        }
    }

    fn idx_paths_mut(&mut self) -> (&mut PathBuf, &mut PathBuf) {
        if !matches!(self.dataset, DatasetSource::Idx { .. }) {
            self.dataset = DatasetSource::Idx {
                images: PathBuf::new(),
                labels: PathBuf::new(),
            };
        }
        match &mut self.dataset {
            DatasetSource::Idx { images, labels } => (images, labels),
            DatasetSource::Synthetic(_) => unreachable!(),
        }
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let activation = |v: &str| Activation::parse(v).ok_or_else(|| bad(key, v, "relu, silu, sigmoid or identity"));
        match key {
            "dim" => self.dim = positive(key, value)?,
            "alpha" => self.alpha = positive(key, value)?,
            "lambda" => self.lambda = non_negative(key, value)?,
            "lr" => self.lr = Some(non_negative(key, value)?),
            "epochs" => self.epochs = positive(key, value)?,
            "batch" => self.batch = positive(key, value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value, "an unsigned integer"))?,
            "sampler" => {
                self.sampler = SamplerKind::parse(value).ok_or_else(|| bad(key, value, "uniform, alpha, mm or pmf"))?
            }
            "components" => self.components = Some(positive(key, value)?),
            "k" => self.k = Some(positive(key, value)?),
            "knn_k" => self.knn_k = positive(key, value)?,
            "count" => self.count = positive(key, value)?,
            "dataset" => match value {
                "synthetic" => {
                    self.synth_mut();
                }
                "idx" => {
                    self.idx_paths_mut();
                }
                _ => return Err(bad(key, value, "synthetic or idx")),
            },
            "n_samples" => self.synth_mut().n_samples = positive(key, value)?,
            "n_features" => self.synth_mut().n_features = positive(key, value)?,
            "n_informative" => self.synth_mut().n_informative = positive(key, value)?,
            "n_redundant" => {
                self.synth_mut().n_redundant = value.parse().map_err(|_| bad(key, value, "an unsigned integer"))?
            }
            "class_sep" => self.synth_mut().class_sep = positive(key, value)?,
            "n_classes" => self.synth_mut().n_classes = positive(key, value)?,
            "clusters_per_class" => self.synth_mut().clusters_per_class = positive(key, value)?,
            "idx_images" => *self.idx_paths_mut().0 = PathBuf::from(value),
            "idx_labels" => *self.idx_paths_mut().1 = PathBuf::from(value),
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| positive::<usize>(key, w.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "activation" => self.activation = activation(value)?,
            "output_activation" => self.output_activation = activation(value)?,
            "fit_split" | "split" => {
                if !matches!(value, "train" | "validation" | "test") {
                    return Err(bad(key, value, "train, validation or test"));
                }
                if key == "split" {
                    self.split = value.into();
                } else {
                    self.fit_split = value.into();
                }
            }
            "psnr_max" => self.psnr_max = Some(positive(key, value)?),
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = positive(key, value)?,
            "sinkhorn_iters" => self.sinkhorn_iters = positive(key, value)?,
            "iters" => self.iters = positive(key, value)?,
            "psf" => {
                self.psf = match value {
                    "flat" => PsfKind::Flat,
                    "delta" => PsfKind::Delta,
                    _ => return Err(bad(key, value, "flat or delta")),
                }
            }
            "data" => self.data_dir = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            _ => return Err(CliError::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// 1e-3 on the small synthetic tables, 1e-4 on image data.
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.dataset {
            DatasetSource::Synthetic(_) => 1e-3,
            DatasetSource::Idx { .. } => 1e-4,
        })
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.dim < 2 {
            return Err(CliError::config("dim must be at least 2"));
        }
        if self.batch < 2 {
            return Err(CliError::config("batch must be at least 2"));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate().map_err(CliError::from)?;
        }
        if let DatasetSource::Idx { images, labels } = &self.dataset {
            if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                return Err(CliError::config("dataset=idx needs idx_images and idx_labels"));
            }
        }
        Ok(())
    }

    /// Checks the sampler's own parameters.
    pub fn validate_sampler(&self) -> Result<(), CliError> {
        match self.sampler {
            SamplerKind::Pmf if self.k.is_none() => {
                Err(CliError::usage("sampler=pmf needs k (bins per coordinate), e.g. k=20"))
            }
            SamplerKind::Mixture if self.components.is_none() => Err(CliError::usage(
                "sampler=mm needs components, e.g. components=<dim> or the class count",
            )),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse("# run\ndim = 4\nalpha=0.3 # sparse\n\nsampler = pmf\nk=20\nn_classes=7\n").unwrap();
        assert_eq!(cfg.dim, 4);
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.sampler, SamplerKind::Pmf);
        assert_eq!(cfg.k, Some(20));
        match cfg.dataset {
            DatasetSource::Synthetic(s) => assert_eq!(s.n_classes, 7),
            _ => panic!(),
        }
        let cfg = RunConfig::parse("hidden=256, 64\noutput_activation=sigmoid\n").unwrap();
        assert_eq!(cfg.hidden, vec![256, 64]);
        assert_eq!(cfg.output_activation, Activation::Sigmoid);
    }

    #[test]
    fn rejects_bad_lines() {
        for text in ["dim", "dim=0", "alpha=-1", "wat=3", "sampler=gan", "lr=x", "split=dev", "psf=gauss"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.message.starts_with("line 1"), "{text}: {}", err.message);
        }
    }

    #[test]
    fn sampler_requirements() {
        let mut cfg = RunConfig::parse("sampler=pmf").unwrap();
        assert!(cfg.validate_sampler().is_err());
        cfg.k = Some(5);
        assert!(cfg.validate_sampler().is_ok());
        let cfg = RunConfig::parse("sampler=mm").unwrap();
        assert!(cfg.validate_sampler().is_err());
        assert!(RunConfig::parse("n_classes=300").unwrap().validate().is_err());
        assert!(RunConfig::parse("dataset=idx").unwrap().validate().is_err());
    }
}
