//! Criterion 6: numerical property checks against independent oracles.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use simplexae_core::autoencoder::{backward, forward, loss, loss_and_grads, Activation, LayerSpec, NetworkSpec, ParamStore};
use simplexae_core::deconvolution::{blur, richardson_lucy, Psf};
use simplexae_core::metrics::{frechet_distance, knn_predict, psnr, GaussianStats, PSNR_CAP_DB};
use simplexae_core::mixture::{fit_gmm_em, EmConfig};
use simplexae_core::sampling::{pmf_build, pmf_sample_detailed};
use simplexae_core::simplex::{dirichlet_sample, logistic_to_simplex, simplex_to_logistic};
use simplexae_core::sinkhorn::{pairwise_sq_cost, sinkhorn_divergence};
use simplexae_core::{rng_from_seed, DirichletParams, EmpiricalMeasure, EuclideanVector, SimplexVector, SinkhornConfig};

use crate::Verdict;

const NETWORK_GRAD_REL: f64 = 1e-5;
const COMPOSITE_GRAD_REL: f64 = 2e-2;
const SIMPLEX_ROUND_TRIP_ABS: f64 = 1e-9;
const EUCLIDEAN_ROUND_TRIP_ABS: f64 = 1e-8;
/// Largest |y| whose image stays above the 1e-12 log clamp for up to 7 coordinates.
const EUCLIDEAN_RANGE: f64 = 12.0;
const MOMENT_SE: f64 = 3.0;
const SINKHORN_REL: f64 = 0.01;
const PMF_TV_MAX: f64 = 0.01;
const ANALYTIC_ABS: f64 = 1e-9;
const BUDGET_S: f64 = 120.0;

struct Check {
    name: &'static str,
    pass: bool,
    value: String,
}

fn check(name: &'static str, pass: bool, value: String) -> Check {
    Check { name, pass, value }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn network_gradients() -> Check {
    let mut worst = 0.0f64;
    for (i, act) in [Activation::Relu, Activation::Silu, Activation::Sigmoid, Activation::Identity]
        .into_iter()
        .enumerate()
    {
        let spec = NetworkSpec::new(
            vec![LayerSpec::new(3, 4, act), LayerSpec::new(4, 3, Activation::Softmax)],
            vec![LayerSpec::new(3, 4, act), LayerSpec::new(4, 3, act)],
        )
        .unwrap();
        let mut rng = rng_from_seed(100 + i as u64);
        let params = ParamStore::init(&spec, &mut rng);
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let w_out = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let w_lat = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let objective = |p: &ParamStore| {
            let pass = forward(&spec, p, &x).unwrap();
            pass.reconstruction().component_mul(&w_out).sum() + pass.latent().component_mul(&w_lat).sum()
        };
        let pass = forward(&spec, &params, &x).unwrap();
        let grads = backward(&spec, &params, &pass, &w_out, Some(&w_lat)).unwrap();
        let h = 1e-6;
        for (li, layer) in params.layers.iter().enumerate() {
            for k in 0..layer.weight.len() {
                let mut up = params.clone();
                up.layers[li].weight[k] += h;
                let mut down = params.clone();
                down.layers[li].weight[k] -= h;
                let fd = (objective(&up) - objective(&down)) / (2.0 * h);
                let an = grads.layers[li].weight[k];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
            }
        }
    }
    check("network gradient", worst <= NETWORK_GRAD_REL, format!("{worst:.2e}"))
}

fn composite_gradient() -> Check {
    let spec = NetworkSpec::new(
        vec![LayerSpec::new(4, 5, Activation::Silu), LayerSpec::new(5, 3, Activation::Softmax)],
        vec![LayerSpec::new(3, 5, Activation::Silu), LayerSpec::new(5, 4, Activation::Identity)],
    )
    .unwrap();
    let alpha = DirichletParams::symmetric(0.5, 3).unwrap();
    let cfg = SinkhornConfig {
        max_iters: 20_000,
        tol: 1e-12,
        ..SinkhornConfig::absolute(0.05)
    };
    let mut rng = rng_from_seed(7);
    let params = ParamStore::init(&spec, &mut rng);
    let x = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
    let lambda = 100.0;
    let objective = |p: &ParamStore| {
        let pass = forward(&spec, p, &x).unwrap();
        loss(&x, pass.reconstruction(), pass.latent(), &alpha, lambda, &cfg, &mut rng_from_seed(1))
            .unwrap()
            .total
    };
    let pass = forward(&spec, &params, &x).unwrap();
    let g = loss_and_grads(&x, pass.reconstruction(), pass.latent(), &alpha, lambda, &cfg, &mut rng_from_seed(1))
        .unwrap();
    let grads = backward(&spec, &params, &pass, &g.d_recon, Some(&g.d_latent)).unwrap();
    let h = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (li, layer) in params.layers.iter().enumerate() {
        for k in 0..layer.weight.len() {
            let mut up = params.clone();
            up.layers[li].weight[k] += h;
            let mut down = params.clone();
            down.layers[li].weight[k] -= h;
            let fd = (objective(&up) - objective(&down)) / (2.0 * h);
            num += (fd - grads.layers[li].weight[k]).powi(2);
            den += fd.powi(2);
        }
    }
    let rel = (num / den).sqrt();
    check("composite gradient", g.converged && rel <= COMPOSITE_GRAD_REL, format!("{rel:.2e}"))
}

fn round_trips() -> Check {
    let mut rng = rng_from_seed(8);
    let (mut worst_s, mut worst_e) = (0.0f64, 0.0f64);
    for _ in 0..2000 {
        let d = rng.random_range(2..8);
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(1e-6..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let x = SimplexVector::new(raw.iter().map(|v| v / s).collect()).unwrap();
        if x.as_slice().iter().cloned().fold(f64::INFINITY, f64::min) < 1e-6 {
            continue;
        }
        let back = logistic_to_simplex(&simplex_to_logistic(&x));
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            worst_s = worst_s.max((a - b).abs());
        }
        let y = EuclideanVector::new((0..d - 1).map(|_| rng.random_range(-EUCLIDEAN_RANGE..EUCLIDEAN_RANGE)).collect()).unwrap();
        let yb = simplex_to_logistic(&logistic_to_simplex(&y));
        for (a, b) in yb.as_slice().iter().zip(y.as_slice()) {
            worst_e = worst_e.max((a - b).abs());
        }
    }
    check(
        "logistic round trip",
        worst_s <= SIMPLEX_ROUND_TRIP_ABS && worst_e <= EUCLIDEAN_ROUND_TRIP_ABS,
        format!("{worst_s:.2e}/{worst_e:.2e} (|y| <= {EUCLIDEAN_RANGE})"),
    )
}

/// Dirichlet mean and variance against closed forms, in standard errors.
fn dirichlet_moments() -> Check {
    let alpha = DirichletParams::new(vec![0.3, 1.0, 4.0]).unwrap();
    let a0: f64 = alpha.as_slice().iter().sum();
    let n = 20_000;
    let mut rng = rng_from_seed(9);
    let draws: Vec<SimplexVector> = (0..n).map(|_| dirichlet_sample(&alpha, &mut rng)).collect();
    let mut worst = 0.0f64;
    for (i, ai) in alpha.as_slice().iter().enumerate() {
        let mean = ai / a0;
        let var = ai * (a0 - ai) / (a0 * a0 * (a0 + 1.0));
        let xs: Vec<f64> = draws.iter().map(|d| d.as_slice()[i]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        worst = worst.max((m - mean).abs() / (var / n as f64).sqrt());
        // second moment: E[x^2] = var + mean^2, SE from the empirical fourth moment
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let m2 = sq.iter().sum::<f64>() / n as f64;
        let v2 = sq.iter().map(|s| (s - m2).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        worst = worst.max((m2 - (var + mean * mean)).abs() / (v2 / n as f64).sqrt());
    }
    check("dirichlet moments", worst <= MOMENT_SE, format!("{worst:.2} SE"))
}

fn em_two_clusters() -> Check {
    let mut rng = rng_from_seed(10);
    let centers = [[-4.0, 0.0], [4.0, 1.0]];
    let y = DMatrix::from_fn(600, 2, |r, c| centers[r % 2][c] + 0.5 * normal(&mut rng));
    let fit = fit_gmm_em(&y, 2, &EmConfig::default()).unwrap();
    let monotone = fit
        .trace
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    let mut err = 0.0f64;
    for c in centers {
        let truth = DVector::from_row_slice(&c);
        let nearest = fit
            .model
            .means
            .iter()
            .map(|m| (m - &truth).norm())
            .fold(f64::INFINITY, f64::min);
        err = err.max(nearest);
    }
    let weights_ok = fit.model.weights.iter().all(|w| (w - 0.5).abs() < 0.05);
    check(
        "em monotone + recovery",
        monotone && err < 0.15 && weights_ok,
        format!("mean error {err:.3}"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn sinkhorn_exactness() -> Check {
    let raw = |eps| SinkhornConfig {
        debiased: false,
        max_iters: 100_000,
        tol: 1e-9,
        ..SinkhornConfig::absolute(eps)
    };
    let a = EmpiricalMeasure::uniform(vec![0.0, 1.0], 1).unwrap();
    let b = EmpiricalMeasure::uniform(vec![2.0, 3.0], 1).unwrap();
    let two_point = sinkhorn_divergence(&a, &b, &raw(1e-3)).unwrap();
    let mut worst = (two_point - 4.0).abs() / 4.0;
    let mut rng = rng_from_seed(11);
    for n in 2..=6 {
        let cloud = |rng: &mut rand_chacha::ChaCha8Rng| {
            EmpiricalMeasure::uniform((0..2 * n).map(|_| rng.random_range(0.0..10.0)).collect(), 2).unwrap()
        };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let c = pairwise_sq_cost(&a, &b).unwrap();
        let exact = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let ot = sinkhorn_divergence(&a, &b, &raw(1e-3)).unwrap();
        worst = worst.max((ot - exact).abs() / exact);
    }
    check("sinkhorn vs assignment", worst <= SINKHORN_REL, format!("{worst:.2e}"))
}

/// Bin frequencies of PMF draws against the occupancy histogram.
fn pmf_frequencies() -> Check {
    let mut rng = rng_from_seed(12);
    let alpha = DirichletParams::symmetric(0.7, 3).unwrap();
    let pts: Vec<SimplexVector> = (0..3000).map(|_| dirichlet_sample(&alpha, &mut rng)).collect();
    let z = DMatrix::from_fn(pts.len(), 3, |r, c| pts[r].as_slice()[c]);
    let index = pmf_build(&z, 10).unwrap();
    let expected: Vec<f64> = index
        .bins()
        .map(|(_, members)| members.len() as f64 / index.total_count() as f64)
        .collect();
    let n = 200_000;
    let draws = pmf_sample_detailed(&index, n, &mut rng).unwrap();
    let mut counts = vec![0usize; expected.len()];
    for d in &draws {
        counts[d.bin] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&expected)
            .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
            .sum::<f64>();
    check("pmf bin TV", tv <= PMF_TV_MAX, format!("{tv:.4}"))
}

fn stats(mean: &[f64], cov: DMatrix<f64>) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_row_slice(mean),
        covariance: cov,
        count: 2,
    }
}

fn frechet_analytic() -> Check {
    let shift = frechet_distance(
        &stats(&[3.0, 4.0], DMatrix::identity(2, 2)),
        &stats(&[0.0, 0.0], DMatrix::identity(2, 2)),
    )
    .unwrap();
    let scaled = frechet_distance(
        &stats(&[0.0, 0.0], DMatrix::identity(2, 2) * 4.0),
        &stats(&[0.0, 0.0], DMatrix::identity(2, 2)),
    )
    .unwrap();
    let err = (shift - 25.0).abs().max((scaled - 2.0).abs());
    check("frechet analytic", err <= ANALYTIC_ABS, format!("{shift:.6}/{scaled:.6}"))
}

fn psnr_analytic() -> Check {
    let x = vec![0.5; 100];
    let y = vec![0.6; 100];
    let p = psnr(&x, &y, 1.0).unwrap();
    let same = psnr(&x, &x, 1.0).unwrap();
    let p255 = psnr(&[0.0, 0.0], &[255.0, 255.0], 255.0).unwrap();
    let err = (p - 20.0).abs().max((same - PSNR_CAP_DB).abs()).max(p255.abs());
    check("psnr analytic", err <= 1e-9, format!("{p:.6} dB"))
}

/// Majority vote over the k nearest (ties to lower index); vote ties go to
/// the label whose nearest member comes first.
fn brute_knn(train: &[Vec<f64>], labels: &[usize], q: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (t.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let top = &order[..k];
    let mut best = (0, usize::MAX);
    for (_, i) in top {
        let votes = top.iter().filter(|(_, j)| labels[*j] == labels[*i]).count();
        if votes > best.0 {
            best = (votes, labels[*i]);
        }
    }
    best.1
}

fn knn_equivalence() -> Check {
    let mut rng = rng_from_seed(13);
    let mut mismatches = 0;
    let mut total = 0;
    for _ in 0..50 {
        let dim = rng.random_range(1..4);
        let n = rng.random_range(5..40);
        // coarse grid so distance ties actually occur
        let train: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0..4) as f64).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let flat: Vec<f64> = train.concat();
        for _ in 0..20 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(0..4) as f64).collect();
            let k = rng.random_range(1..=n.min(7));
            total += 1;
            if knn_predict(&flat, &labels, dim, &q, k) != brute_knn(&train, &labels, &q, k) {
                mismatches += 1;
            }
        }
    }
    check("knn brute force", mismatches == 0, format!("{mismatches}/{total} mismatches"))
}

fn rl_checks() -> Check {
    let (h, w) = (24, 24);
    let card: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let inside = (6..18).contains(&r) && (5..19).contains(&c);
            let stripe = (9..12).contains(&r) && (c % 4 < 2);
            if stripe {
                0.05
            } else if inside {
                0.9
            } else {
                0.1
            }
        })
        .collect();
    let identity = richardson_lucy(&card, h, w, &Psf::delta(), 30).unwrap() == card;
    let psf = Psf::flat(3).unwrap();
    let blurred = blur(&card, h, w, &psf).unwrap();
    let restored = richardson_lucy(&blurred, h, w, &psf, 30).unwrap();
    let mse = |v: &[f64]| v.iter().zip(&card).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / v.len() as f64;
    let (before, after) = (mse(&blurred), mse(&restored));
    check(
        "rl delta + improvement",
        identity && after < before,
        format!("mse {before:.5} -> {after:.5}"),
    )
}

pub fn criterion_6() -> Verdict {
    let t = Instant::now();
    let checks = [
        network_gradients(),
        composite_gradient(),
        round_trips(),
        dirichlet_moments(),
        em_two_clusters(),
        sinkhorn_exactness(),
        pmf_frequencies(),
        frechet_analytic(),
        psnr_analytic(),
        knn_equivalence(),
        rl_checks(),
    ];
    let elapsed = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let detail = checks
        .iter()
        .map(|c| format!("{} {}{}", c.name, c.value, if c.pass { "" } else { " FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict {
        id: 6,
        pass: failed.is_empty() && elapsed <= BUDGET_S,
        detail: format!("{} checks: {detail}; {elapsed:.1}s (<= {BUDGET_S}s)", checks.len()),
    }
}
