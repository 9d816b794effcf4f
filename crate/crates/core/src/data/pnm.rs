use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

/// Image with interleaved channels (1 for PGM, 3 for PPM) scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid("image data length does not match its size"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// One channel as a row-major `height x width` plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    pub fn set_plane(&mut self, channel: usize, plane: &[f64]) {
        for (i, v) in plane.iter().enumerate() {
            self.data[i * self.channels + channel] = *v;
        }
    }
}

/// Binary P5/P6 with maxval 255. Values are clamped to `[0, 1]` and rounded.
pub fn pnm_to_bytes(img: &Image) -> Vec<u8> {
    let tag = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{tag}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn pnm_parse(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(start as u64, format!("missing {what}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token("magic")?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(0, format!("unsupported image type {other:?}, expected P5 or P6"))),
    };
    let mut number = |what: &str| -> Result<usize> {
        let t = token(what)?;
        t.parse::<usize>()
            .map_err(|_| Error::format(0, format!("{what} {t:?} is not a number")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(0, format!("maxval {maxval} unsupported, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let count = width * height * channels;
    if bytes.len() < start + count {
        return Err(Error::format(bytes.len() as u64, "truncated image raster"));
    }
    let data = bytes[start..start + count].iter().map(|b| f64::from(*b) / 255.0).collect();
    Image::new(width, height, channels, data)
}

pub fn pnm_read(path: impl AsRef<Path>) -> Result<Image> {
    pnm_parse(&std::fs::read(path)?)
}

pub fn pnm_write(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_atomic(path, &pnm_to_bytes(img))
}
