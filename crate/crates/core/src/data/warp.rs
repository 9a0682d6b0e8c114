use crate::lie::{GroupElement, LieError};

use super::{DataError, ImageGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageGrid,
    /// Canvas pixels whose preimage lies at infinity; they are left at zero.
    pub at_infinity: usize,
}

/// `L_u(img)`: the output pixel at plane point `x` is the bilinear sample of
/// `img` at `u⁻¹·x`. The canvas shares the source's plane scale.
pub fn warp_image(img: &ImageGrid, u: &GroupElement, canvas: (usize, usize)) -> Result<Warped, DataError> {
    let (h, w) = canvas;
    let inv = u.inverse()?;
    let mut out = ImageGrid::zeros(h, w, img.channels(), img.scale())?;
    let mut at_infinity = 0;
    let ch = img.channels();
    let mut values = vec![0.0; h * w * ch];
    for r in 0..h {
        for c in 0..w {
            let x = out.plane_point(r, c);
            let y = match inv.act(x) {
                Ok(y) => y,
                Err(LieError::PointAtInfinity { .. }) => {
                    at_infinity += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let (sr, sc) = img.lattice_coords(y);
            for k in 0..ch {
                values[(r * w + c) * ch + k] = img.bilinear(sr, sc, k);
            }
        }
    }
    if at_infinity > 0 {
        log::warn!("{at_infinity} canvas pixels map to infinity and were set to zero");
    }
    out = ImageGrid::with_scale(h, w, ch, values, img.scale())?;
    Ok(Warped {
        image: out,
        at_infinity,
    })
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Doubles the lattice resolution: `(H, W) → (2H−1, 2W−1)` with twice the
/// plane scale, so every source pixel keeps its plane position. New pixels
/// are bicubic interpolants with zero padding; results are clamped to
/// `[0, 1]`.
pub fn upsample_bicubic(img: &ImageGrid) -> Result<ImageGrid, DataError> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (h2, w2) = (2 * h - 1, 2 * w - 1);
    let sample = |r2: usize, c2: usize, k: usize| -> f64 {
        if r2 % 2 == 0 && c2 % 2 == 0 {
            return img.get(r2 / 2, c2 / 2, k);
        }
        let (sr, sc) = (r2 as f64 / 2.0, c2 as f64 / 2.0);
        let (r0, c0) = (sr.floor() as isize, sc.floor() as isize);
        let mut acc = 0.0;
        for dr in -1..=2 {
            let r = r0 + dr;
            let wr = keys(sr - r as f64);
            if wr == 0.0 || r < 0 || r >= h as isize {
                continue;
            }
            for dc in -1..=2 {
                let c = c0 + dc;
                let wc = keys(sc - c as f64);
                if wc == 0.0 || c < 0 || c >= w as isize {
                    continue;
                }
                acc += wr * wc * img.get(r as usize, c as usize, k);
            }
        }
        acc
    };
    let mut values = Vec::with_capacity(h2 * w2 * ch);
    for r in 0..h2 {
        for c in 0..w2 {
            for k in 0..ch {
                values.push(sample(r, c, k));
            }
        }
    }
    ImageGrid::with_scale(h2, w2, ch, values, 2.0 * img.scale())
}
