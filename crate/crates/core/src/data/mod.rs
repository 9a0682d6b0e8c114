//! Images on the pixel lattice, IDX ingestion, warping by group elements and
//! warped evaluation sets.

mod dataset;
mod idx;
mod warp;

use thiserror::Error;

use crate::haar::SamplerError;
use crate::lie::{LieError, Point};

pub use dataset::{
    generate_warped_testset, load_warped_dataset, read_warped_dataset, save_warped_dataset,
    write_manifest, write_warped_dataset, WarpedDataset, WarpedExample, LGWD_HEADER_BYTES,
    LGWD_VERSION,
};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, LabeledImages};
pub use warp::{upsample_bicubic, warp_image, Warped};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("invalid image: {0}")]
    Image(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DataError {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        DataError::Format {
            offset,
            message: message.into(),
        }
    }
}

/// Lattice coordinates within this distance of an integer are treated as
/// exactly on the lattice.
const LATTICE_SNAP: f64 = 1e-9;

/// A multi-channel image on the integer lattice with an embedding into the
/// plane.
///
/// Pixel `(r, c)` sits at plane point `((c − (W−1)/2)/s, ((H−1)/2 − r)/s)`,
/// so the image centre is the origin and `y` points up. The default scale
/// `s = (W−1)/2` maps a 28-pixel-wide image onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    /// Row-major, channels innermost.
    pixels: Vec<f64>,
    scale: f64,
}

impl ImageGrid {
    /// Builds an image, clamping values to `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, DataError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DataError::Image(format!(
                "empty image {height}x{width}x{channels}"
            )));
        }
        let scale = ((width.max(2) - 1) as f64) / 2.0;
        Self::with_scale(height, width, channels, pixels, scale)
    }

    pub fn with_scale(
        height: usize,
        width: usize,
        channels: usize,
        mut pixels: Vec<f64>,
        scale: f64,
    ) -> Result<Self, DataError> {
        if pixels.len() != height * width * channels {
            return Err(DataError::Image(format!(
                "{} values for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Image("non-finite pixel value".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DataError::Image(format!("invalid plane scale {scale}")));
        }
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            scale,
        })
    }

    /// An all-zero image with the given plane scale.
    pub fn zeros(height: usize, width: usize, channels: usize, scale: f64) -> Result<Self, DataError> {
        Self::with_scale(height, width, channels, vec![0.0; height * width * channels], scale)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Pixels per unit length in the plane.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Area of one lattice cell in plane units.
    pub fn cell_area(&self) -> f64 {
        1.0 / (self.scale * self.scale)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    pub fn plane_point(&self, row: usize, col: usize) -> Point {
        [
            (col as f64 - (self.width as f64 - 1.0) / 2.0) / self.scale,
            ((self.height as f64 - 1.0) / 2.0 - row as f64) / self.scale,
        ]
    }

    /// Fractional `(row, col)` of a plane point.
    pub fn lattice_coords(&self, p: Point) -> (f64, f64) {
        (
            (self.height as f64 - 1.0) / 2.0 - p[1] * self.scale,
            p[0] * self.scale + (self.width as f64 - 1.0) / 2.0,
        )
    }

    /// Bilinear sample at fractional lattice coordinates; zero outside.
    pub fn bilinear(&self, row: f64, col: f64, channel: usize) -> f64 {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < LATTICE_SNAP {
                r
            } else {
                v
            }
        };
        let (row, col) = (snap(row), snap(col));
        let (r0, c0) = (row.floor(), col.floor());
        let (fr, fc) = (row - r0, col - c0);
        let mut acc = 0.0;
        for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
            for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                let w = wr * wc;
                if w == 0.0 {
                    continue;
                }
                let (r, c) = (r0 + dr, c0 + dc);
                if r >= 0.0 && c >= 0.0 && (r as usize) < self.height && (c as usize) < self.width {
                    acc += w * self.get(r as usize, c as usize, channel);
                }
            }
        }
        acc
    }

    /// Places the image at the centre of a larger zero canvas with the same
    /// plane scale.
    pub fn padded(&self, height: usize, width: usize) -> Result<ImageGrid, DataError> {
        if height < self.height || width < self.width {
            return Err(DataError::Image(format!(
                "canvas {height}x{width} is smaller than the {}x{} image",
                self.height, self.width
            )));
        }
        if (height - self.height) % 2 != 0 || (width - self.width) % 2 != 0 {
            return Err(DataError::Image(
                "padding must be symmetric so the lattice is preserved".into(),
            ));
        }
        let (dr, dc) = ((height - self.height) / 2, (width - self.width) / 2);
        let mut out = ImageGrid::zeros(height, width, self.channels, self.scale)?;
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    out.pixels[((r + dr) * width + c + dc) * self.channels + ch] = self.get(r, c, ch);
                }
            }
        }
        Ok(out)
    }

    /// Rounds every pixel to the nearest `f32`, the storage precision of
    /// warped datasets.
    pub fn rounded_to_f32(mut self) -> Self {
        for v in &mut self.pixels {
            *v = *v as f32 as f64;
        }
        self
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64, DataError> {
    if a.pixels.len() != b.pixels.len() {
        return Err(DataError::Image("psnr of images with different sizes".into()));
    }
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.pixels.len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests;
