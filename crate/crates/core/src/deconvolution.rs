//! Richardson-Lucy restoration of blurred image planes.

use crate::error::{Error, Result};

/// Lower bound applied to the blurred estimate before dividing.
pub const DIVISION_GUARD: f64 = 1e-12;

/// Point spread function, normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    height: usize,
    width: usize,
    kernel: Vec<f64>,
}

impl Psf {
    /// `kernel` is row-major `height x width`; odd sizes keep the centre on a pixel.
    pub fn new(height: usize, width: usize, kernel: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || kernel.len() != height * width {
            return Err(Error::invalid("psf kernel size does not match its dimensions"));
        }
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::invalid("psf dimensions must be odd"));
        }
        if kernel.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("psf entries must be finite and non-negative"));
        }
        let total: f64 = kernel.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("psf must have positive mass"));
        }
        Ok(Psf {
            height,
            width,
            kernel: kernel.iter().map(|v| v / total).collect(),
        })
    }

    /// Square box blur with every entry `1 / size^2`.
    pub fn flat(size: usize) -> Result<Self> {
        Self::new(size, size, vec![1.0; size * size])
    }

    /// Identity kernel: a single 1.
    pub fn delta() -> Self {
        Psf {
            height: 1,
            width: 1,
            kernel: vec![1.0],
        }
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// The kernel rotated by 180 degrees.
    pub fn flipped(&self) -> Psf {
        let mut kernel = self.kernel.clone();
        kernel.reverse();
        Psf { kernel, ..*self }
    }
}

/// Correlates `plane` (`h x w`) with the centred kernel, replicating edge
/// pixels outside the image. Equivalent to convolution with the flipped kernel.
fn correlate(plane: &[f64], h: usize, w: usize, psf: &Psf) -> Vec<f64> {
    let (ry, rx) = ((psf.height / 2) as isize, (psf.width / 2) as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..psf.height {
                let sy = (y as isize + ky as isize - ry).clamp(0, h as isize - 1) as usize;
                for kx in 0..psf.width {
                    let sx = (x as isize + kx as isize - rx).clamp(0, w as isize - 1) as usize;
                    acc += psf.kernel[ky * psf.width + kx] * plane[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Blurs a plane by convolving with `psf` (replicate padding).
pub fn blur(plane: &[f64], height: usize, width: usize, psf: &Psf) -> Result<Vec<f64>> {
    check_plane(plane, height, width)?;
    Ok(correlate(plane, height, width, &psf.flipped()))
}

fn check_plane(plane: &[f64], height: usize, width: usize) -> Result<()> {
    if plane.len() != height * width || plane.is_empty() {
        return Err(Error::invalid("image plane size does not match its dimensions"));
    }
    if plane.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("image plane must be finite and non-negative"));
    }
    Ok(())
}

/// `est <- est * ((obs / (est * psf)) * psf_flipped)`, starting from the
/// observed plane, where `*` is convolution.
pub fn richardson_lucy(plane: &[f64], height: usize, width: usize, psf: &Psf, iters: usize) -> Result<Vec<f64>> {
    check_plane(plane, height, width)?;
    if iters == 0 {
        return Err(Error::invalid("richardson-lucy needs at least one iteration"));
    }
    // convolving with psf = correlating with its flip, and vice versa
    let conv = psf.flipped();
    let mut est = plane.to_vec();
    for it in 1..=iters {
        let blurred = correlate(&est, height, width, &conv);
        let ratio: Vec<f64> = plane.iter().zip(&blurred).map(|(o, b)| o / b.max(DIVISION_GUARD)).collect();
        let correction = correlate(&ratio, height, width, psf);
        for (e, c) in est.iter_mut().zip(&correction) {
            *e *= c;
        }
        if est.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("richardson-lucy estimate became non-finite", it));
        }
    }
    Ok(est)
}
