//! The six pipeline commands. Each returns a one-line summary for stdout.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use simplexae_core::autoencoder::{
    decode, encode, forward, load_checkpoint, save_checkpoint, train, Checkpoint, NetworkSpec, TrainConfig,
};
use simplexae_core::data::{
    csv_to_string, idx_read, make_classification, pnm_parse, pnm_to_bytes, tensor_load, write_atomic, Image,
    Tensor,
};
use simplexae_core::deconvolution::{richardson_lucy, Psf};
use simplexae_core::metrics::{frechet_distance, gaussian_stats, knn_accuracy, psnr, MetricsReport};
use simplexae_core::mixture::{fit_logistic_normal_mixture, gmm_save, EmConfig};
use simplexae_core::sampling::{draw, pmf_build, to_matrix};
use simplexae_core::{rng_from_seed, DirichletParams, SamplerChoice, SinkhornConfig};

use crate::config::{DatasetSource, PsfKind, RunConfig, SamplerKind};
use crate::{CliError, CliResult};

pub const FEATURES_FILE: &str = "features.sxtn";
pub const LABELS_FILE: &str = "labels.sxtn";
pub const SPLITS_FILE: &str = "splits.json";
pub const MODEL_FILE: &str = "model.sxae";
pub const TRACE_FILE: &str = "trace.csv";
pub const SAMPLES_FILE: &str = "samples.sxtn";
pub const LATENTS_FILE: &str = "latents.csv";
pub const GMM_MANIFEST_FILE: &str = "gmm.json";
pub const GMM_TENSOR_FILE: &str = "gmm.sxtn";
pub const METRICS_FILE: &str = "metrics.json";

/// RNG stream for latent sampling; training uses streams 1 and 2.
const SAMPLE_STREAM: u64 = 3;

/// Where a command reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub out: PathBuf,
    /// Directory holding the gen-data outputs.
    pub data: PathBuf,
    pub checkpoint: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig, out: &Path) -> Self {
        Layout {
            out: out.to_path_buf(),
            data: cfg.data_dir.clone().unwrap_or_else(|| out.to_path_buf()),
            checkpoint: cfg.checkpoint.clone().unwrap_or_else(|| out.join(MODEL_FILE)),
        }
    }

    fn create_out(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::new("io", format!("cannot create {}: {e}", self.out.display())))
    }
}

/// Row ranges of the three splits, stored next to the features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub rows: usize,
    pub features: usize,
    pub n_classes: usize,
    /// `[first_row, row_count]`
    pub train: [usize; 2],
    pub validation: [usize; 2],
    pub test: [usize; 2],
}

impl SplitManifest {
    fn new(rows: usize, features: usize, n_classes: usize) -> Self {
        let train = rows / 2;
        let validation = rows / 4;
        SplitManifest {
            format: "splits-v1".into(),
            rows,
            features,
            n_classes,
            train: [0, train],
            validation: [train, validation],
            test: [train + validation, rows - train - validation],
        }
    }

    fn range(&self, name: &str) -> [usize; 2] {
        match name {
            "train" => self.train,
            "validation" => self.validation,
            _ => self.test,
        }
    }
}

/// A dataset as written by gen-data.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredData {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub manifest: SplitManifest,
}

impl StoredData {
    pub fn split(&self, name: &str) -> (DMatrix<f64>, Vec<usize>) {
        let [start, len] = self.manifest.range(name);
        (
            self.features.rows(start, len).into_owned(),
            self.labels[start..start + len].to_vec(),
        )
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let manifest_path = dir.join(SPLITS_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
            CliError::new(
                "io",
                format!("cannot read {} (run gen-data first?): {e}", manifest_path.display()),
            )
        })?;
        let manifest: SplitManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::new("format", format!("{}: {e}", manifest_path.display())))?;
        let features = tensor_load(dir.join(FEATURES_FILE))?.to_matrix()?;
        let labels = tensor_load(dir.join(LABELS_FILE))?;
        if features.shape() != (manifest.rows, manifest.features) || labels.values.len() != manifest.rows {
            return Err(CliError::new(
                "format",
                format!("{} does not match the stored tensors", manifest_path.display()),
            ));
        }
        let split_end = manifest.test[0] + manifest.test[1];
        if manifest.train[0] != 0
            || manifest.validation[0] != manifest.train[1]
            || manifest.test[0] != manifest.validation[0] + manifest.validation[1]
            || split_end != manifest.rows
        {
            return Err(CliError::new("format", format!("{}: inconsistent split ranges", manifest_path.display())));
        }
        let labels = labels
            .values
            .iter()
            .map(|v| {
                if *v >= 0.0 && v.fract() == 0.0 && (*v as usize) < manifest.n_classes {
                    Ok(*v as usize)
                } else {
                    Err(CliError::new("format", format!("label {v} outside 0..{}", manifest.n_classes)))
                }
            })
            .collect::<CliResult<_>>()?;
        Ok(StoredData {
            features,
            labels,
            manifest,
        })
    }
}

fn read_idx_dataset(images: &Path, labels: &Path) -> CliResult<(DMatrix<f64>, Vec<usize>)> {
    let img = idx_read(images)?;
    let lab = idx_read(labels)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 {
        return Err(CliError::new("format", "idx_images must be rank 3 and idx_labels rank 1"));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(CliError::new(
            "format",
            format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        ));
    }
    let pixels = img.dims[1] * img.dims[2];
    let x = DMatrix::from_row_slice(img.dims[0], pixels, &img.normalized());
    Ok((x, lab.data.iter().map(|b| usize::from(*b)).collect()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("format", e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn latent_headers(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("z{i}")).collect()
}

/// Writes features, labels and split ranges.
pub fn cmd_gen_data(cfg: &RunConfig, layout: &Layout) -> CliResult<String> {
    cfg.validate()?;
    let (features, labels) = match &cfg.dataset {
        DatasetSource::Synthetic(s) => {
            let mut s = *s;
            s.seed = cfg.seed;
            let ds = make_classification(&s)?;
            (ds.features, ds.labels)
        }
        DatasetSource::Idx { images, labels } => read_idx_dataset(images, labels)?,
    };
    if features.nrows() < 8 {
        return Err(CliError::config("dataset needs at least 8 rows to fill three splits"));
    }
    let n_classes = match &cfg.dataset {
        DatasetSource::Synthetic(s) => s.n_classes,
        DatasetSource::Idx { .. } => labels.iter().max().map_or(0, |m| m + 1),
    };
    let manifest = SplitManifest::new(features.nrows(), features.ncols(), n_classes);
    let label_values: Vec<f64> = labels.iter().map(|l| *l as f64).collect();

    layout.create_out()?;
    write_atomic(layout.out.join(FEATURES_FILE), &Tensor::from_matrix(&features).to_bytes())?;
    write_atomic(
        layout.out.join(LABELS_FILE),
        &Tensor::new(vec![labels.len()], label_values)?.to_bytes(),
    )?;
    write_json(&layout.out.join(SPLITS_FILE), &manifest)?;
    Ok(format!(
        "gen-data: {} rows x {} features, {} classes, splits {}/{}/{} -> {}",
        manifest.rows,
        manifest.features,
        n_classes,
        manifest.train[1],
        manifest.validation[1],
        manifest.test[1],
        layout.out.display()
    ))
}

fn network_for(cfg: &RunConfig, input_dim: usize) -> CliResult<NetworkSpec> {
    let spec = if cfg.hidden.is_empty() {
        NetworkSpec::synthetic(input_dim, cfg.dim)?
    } else {
        NetworkSpec::mlp(input_dim, &cfg.hidden, cfg.dim, cfg.activation, cfg.output_activation)?
    };
    Ok(spec)
}

/// The training settings a config describes.
pub fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate(),
        lambda: cfg.lambda,
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        alpha: DirichletParams::symmetric(cfg.alpha, cfg.dim)?,
        seed: cfg.seed,
        sinkhorn: SinkhornConfig {
            epsilon: cfg.sinkhorn_epsilon,
            max_iters: cfg.sinkhorn_iters,
            ..SinkhornConfig::default()
        },
    };
    tc.validate()?;
    Ok(tc)
}

/// Trains on the train split; writes the checkpoint and the loss trace.
pub fn cmd_train(cfg: &RunConfig, layout: &Layout) -> CliResult<String> {
    cfg.validate()?;
    let tc = train_config(cfg)?;
    let data = StoredData::load(&layout.data)?;
    let spec = network_for(cfg, data.manifest.features)?;
    let (x, _) = data.split("train");
    if x.nrows() < 2 {
        return Err(CliError::config("train split is too small"));
    }
    let (params, trace) = train(&spec, &tc, &x)?;

    let rows = DMatrix::from_fn(trace.len(), 4, |r, c| {
        let t = &trace[r];
        [t.epoch as f64, t.recon, t.penalty, t.total][c]
    });
    let csv = csv_to_string(&["epoch", "recon", "penalty", "total"], &rows)?;
    layout.create_out()?;
    save_checkpoint(&layout.checkpoint, &spec, &params)?;
    write_atomic(layout.out.join(TRACE_FILE), csv.as_bytes())?;
    let last = trace.last().expect("epochs >= 1");
    let unconverged: usize = trace.iter().map(|t| t.unconverged).sum();
    Ok(format!(
        "train: {} epochs, final recon {:.6} penalty {:.6} total {:.6}, {} unconverged sinkhorn solves -> {}",
        trace.len(),
        last.recon,
        last.penalty,
        last.total,
        unconverged,
        layout.checkpoint.display()
    ))
}

/// Latent draws, their decodings, and the sampler they came from.
#[derive(Debug, Clone)]
pub struct Samples {
    pub choice: SamplerChoice,
    pub latents: DMatrix<f64>,
    pub decoded: DMatrix<f64>,
}

/// Builds the configured sampler (fitting it on `fit_split` latents when
/// needed), draws `count` latents and decodes them.
pub fn draw_samples(cfg: &RunConfig, ckpt: &Checkpoint, data: Option<&StoredData>) -> CliResult<Samples> {
    let dim = ckpt.spec.latent_dim();
    let fit_latents = || -> CliResult<DMatrix<f64>> {
        let data = data.ok_or_else(|| CliError::usage("this sampler is fitted on data; run gen-data first"))?;
        let (x, _) = data.split(&cfg.fit_split);
        Ok(encode(&ckpt.spec, &ckpt.params, &x)?)
    };
    let choice = match cfg.sampler {
        SamplerKind::Uniform => SamplerChoice::Uniform { dim },
        SamplerKind::Alpha => SamplerChoice::Alpha(DirichletParams::symmetric(cfg.alpha, dim)?),
        SamplerKind::Mixture => {
            let k = cfg.components.expect("validated");
            let em = EmConfig {
                seed: cfg.seed,
                ..EmConfig::default()
            };
            SamplerChoice::Mixture(fit_logistic_normal_mixture(&fit_latents()?, k, &em)?.model)
        }
        SamplerKind::Pmf => SamplerChoice::Pmf(pmf_build(&fit_latents()?, cfg.k.expect("validated"))?),
    };
    let mut rng = rng_from_seed(cfg.seed);
    rng.set_stream(SAMPLE_STREAM);
    let latents = to_matrix(&draw(&choice, cfg.count, &mut rng)?);
    let decoded = decode(&ckpt.spec, &ckpt.params, &latents)?;
    Ok(Samples {
        choice,
        latents,
        decoded,
    })
}

fn needs_data(cfg: &RunConfig) -> bool {
    matches!(cfg.sampler, SamplerKind::Mixture | SamplerKind::Pmf)
}

/// Draws latents with the configured sampler and decodes them.
pub fn cmd_sample(cfg: &RunConfig, layout: &Layout) -> CliResult<String> {
    cfg.validate()?;
    cfg.validate_sampler()?;
    let ckpt = load_checkpoint(&layout.checkpoint)?;
    let data = if needs_data(cfg) {
        Some(StoredData::load(&layout.data)?)
    } else {
        None
    };
    let samples = draw_samples(cfg, &ckpt, data.as_ref())?;
    let headers = latent_headers(samples.latents.ncols());
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let csv = csv_to_string(&header_refs, &samples.latents)?;

    layout.create_out()?;
    write_atomic(
        layout.out.join(SAMPLES_FILE),
        &Tensor::from_matrix(&samples.decoded).to_bytes(),
    )?;
    write_atomic(layout.out.join(LATENTS_FILE), csv.as_bytes())?;
    if let SamplerChoice::Mixture(model) = &samples.choice {
        gmm_save(
            model,
            &layout.out.join(GMM_TENSOR_FILE),
            &layout.out.join(GMM_MANIFEST_FILE),
        )?;
    }
    Ok(format!(
        "sample: {} {} draws decoded to {} features -> {}",
        samples.latents.nrows(),
        samples.choice.name(),
        samples.decoded.ncols(),
        layout.out.join(SAMPLES_FILE).display()
    ))
}

/// Computes the metric report without writing it.
pub fn evaluate(cfg: &RunConfig, ckpt: &Checkpoint, data: &StoredData) -> CliResult<MetricsReport> {
    let (x_val, y_val) = data.split("validation");
    let (x_test, y_test) = data.split("test");
    let recon = forward(&ckpt.spec, &ckpt.params, &x_test)?.reconstruction().clone();
    let psnr_max = cfg.psnr_max.unwrap_or_else(|| {
        let range = x_test.max() - x_test.min();
        if range > 0.0 {
            range
        } else {
            1.0
        }
    });
    let psnr_db = psnr(x_test.as_slice(), recon.as_slice(), psnr_max)?;

    let z_val = encode(&ckpt.spec, &ckpt.params, &x_val)?;
    let z_test = encode(&ckpt.spec, &ckpt.params, &x_test)?;
    let knn = knn_accuracy(&z_val, &y_val, &z_test, &y_test, cfg.knn_k)?;

    let samples = draw_samples(cfg, ckpt, Some(data))?;
    let reference = x_test.rows(0, cfg.count.min(x_test.nrows())).into_owned();
    let frechet = frechet_distance(&gaussian_stats(&samples.decoded)?, &gaussian_stats(&reference)?)?;

    Ok(MetricsReport {
        psnr_db,
        psnr_max,
        knn_accuracy: knn,
        knn_k: cfg.knn_k,
        frechet,
        sampler: samples.choice.name().into(),
        sample_count: samples.decoded.nrows(),
        latent_dim: ckpt.spec.latent_dim(),
        seed: cfg.seed,
    })
}

/// PSNR on test reconstructions, validation-to-test k-NN accuracy, and the
/// Fréchet distance from decoded samples to test features.
pub fn cmd_eval(cfg: &RunConfig, layout: &Layout) -> CliResult<String> {
    cfg.validate()?;
    cfg.validate_sampler()?;
    let ckpt = load_checkpoint(&layout.checkpoint)?;
    let data = StoredData::load(&layout.data)?;
    if data.manifest.features != ckpt.spec.input_dim() {
        return Err(CliError::new(
            "invalid-input",
            format!(
                "data has {} features, checkpoint expects {}",
                data.manifest.features,
                ckpt.spec.input_dim()
            ),
        ));
    }
    let report = evaluate(cfg, &ckpt, &data)?;
    layout.create_out()?;
    write_json(&layout.out.join(METRICS_FILE), &report)?;
    Ok(format!(
        "eval: psnr {:.3} dB, knn {:.4}, frechet[{}] {:.4} -> {}",
        report.psnr_db,
        report.knn_accuracy,
        report.sampler,
        report.frechet,
        layout.out.join(METRICS_FILE).display()
    ))
}

/// Encodes one split and writes `z0..z{d-1},label` rows.
pub fn cmd_latent_export(cfg: &RunConfig, layout: &Layout, output: Option<&Path>) -> CliResult<String> {
    cfg.validate()?;
    let ckpt = load_checkpoint(&layout.checkpoint)?;
    let data = StoredData::load(&layout.data)?;
    let (x, y) = data.split(&cfg.split);
    let z = encode(&ckpt.spec, &ckpt.params, &x)?;
    let d = z.ncols();
    let rows = DMatrix::from_fn(z.nrows(), d + 1, |r, c| if c < d { z[(r, c)] } else { y[r] as f64 });
    let mut headers = latent_headers(d);
    headers.push("label".into());
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let csv = csv_to_string(&header_refs, &rows)?;
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.out.join(format!("latents_{}.csv", cfg.split)));
    if output.is_none() {
        layout.create_out()?;
    }
    write_atomic(&path, csv.as_bytes())?;
    Ok(format!("latent-export: {} {} rows -> {}", z.nrows(), cfg.split, path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImageFormat {
    Pnm,
    Tensor,
}

fn image_format(path: &Path) -> CliResult<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm" | "ppm" | "pnm") => Ok(ImageFormat::Pnm),
        Some("sxtn") => Ok(ImageFormat::Tensor),
        _ => Err(CliError::usage(format!(
            "{}: expected a .pgm, .ppm or .sxtn image",
            path.display()
        ))),
    }
}

/// Reads an image as `(channels, height, width, planes)`.
fn read_planes(path: &Path, format: ImageFormat) -> CliResult<(usize, usize, usize, Vec<Vec<f64>>)> {
    match format {
        ImageFormat::Pnm => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", path.display())))?;
            let img = pnm_parse(&bytes)?;
            let planes = (0..img.channels).map(|c| img.plane(c)).collect();
            Ok((img.channels, img.height, img.width, planes))
        }
        ImageFormat::Tensor => {
            let t = tensor_load(path)?;
            let (c, h, w) = match t.dims[..] {
                [h, w] => (1, h, w),
                [c, h, w] => (c, h, w),
                _ => {
                    return Err(CliError::new(
                        "format",
                        format!("image tensor must be [h, w] or [c, h, w], got {:?}", t.dims),
                    ))
                }
            };
            let planes = t.values.chunks(h * w).map(<[f64]>::to_vec).collect();
            Ok((c, h, w, planes))
        }
    }
}

/// Richardson-Lucy restoration of every channel plane.
pub fn cmd_deconv(cfg: &RunConfig, input: Option<&Path>, output: Option<&Path>) -> CliResult<String> {
    let input = input
        .or(cfg.input.as_deref())
        .ok_or_else(|| CliError::usage("deconv needs an input image"))?;
    let output = output
        .or(cfg.output.as_deref())
        .ok_or_else(|| CliError::usage("deconv needs an output path"))?;
    let in_format = image_format(input)?;
    let out_format = image_format(output)?;
    let psf = match cfg.psf {
        PsfKind::Flat => Psf::flat(3)?,
        PsfKind::Delta => Psf::delta(),
    };
    let (channels, height, width, planes) = read_planes(input, in_format)?;
    if out_format == ImageFormat::Pnm && !matches!(channels, 1 | 3) {
        return Err(CliError::usage(format!("{channels}-channel images cannot be written as PNM")));
    }
    let restored = planes
        .iter()
        .map(|p| richardson_lucy(p, height, width, &psf, cfg.iters))
        .collect::<Result<Vec<_>, _>>()?;
    let bytes = match out_format {
        ImageFormat::Pnm => {
            let mut img = Image::new(width, height, channels, vec![0.0; channels * height * width])?;
            for (c, p) in restored.iter().enumerate() {
                img.set_plane(c, p);
            }
            pnm_to_bytes(&img)
        }
        ImageFormat::Tensor => {
            let dims = if channels == 1 {
                vec![height, width]
            } else {
                vec![channels, height, width]
            };
            Tensor::new(dims, restored.concat())?.to_bytes()
        }
    };
    write_atomic(output, &bytes)?;
    Ok(format!(
        "deconv: {width}x{height}x{channels}, {} iterations -> {}",
        cfg.iters,
        output.display()
    ))
}
