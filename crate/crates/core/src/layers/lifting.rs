//! Lifting convolution from planar images to functions on the group.
//!
//! For an element `g` the layer computes
//! `Σ_x f(x) ψ(g⁻¹·x) det D(g⁻¹)(x) Δx` over lattice points `x`. The filter
//! `ψ` is an MLP on the plane multiplied by a smooth cutoff, so only pixels
//! with `g⁻¹·x` inside the filter disc contribute. A [`LiftingPlan`] lists
//! those (element, pixel) pairs once, after which a whole batch of images is
//! a single segmented matrix product against the filter values.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{ParamStore, ParamVars, SegmentedMatrix, Tape, Tensor, Var};
use crate::data::ImageGrid;
use crate::lie::{GroupElement, LieError};

use super::{LayerError, Mlp};

/// Inner fraction of the support radius on which the cutoff is exactly one.
const MASK_FLAT: f64 = 0.8;
/// Boundary points used to bound the image of the filter disc.
const RIM_POINTS: usize = 32;
/// Upper bound on plan entries per chunk in [`lifting_values`].
const CHUNK_ENTRIES: usize = 1 << 21;

/// `1` on `[0, 0.8]`, a cos² taper on `(0.8, 1)`, `0` from `1` on.
pub fn support_mask(t: f64) -> f64 {
    if t <= MASK_FLAT {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let c = (0.5 * PI * (t - MASK_FLAT) / (1.0 - MASK_FLAT)).cos();
        c * c
    }
}

/// `ψ(y) = mask(|y|/r) · MLP(y/r) / (π r²)` with values in `ℝ^{K×C}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingFilter {
    mlp: Mlp,
    radius: f64,
    in_channels: usize,
    out_channels: usize,
}

impl LiftingFilter {
    pub fn new(
        prefix: &str,
        hidden: &[usize],
        in_channels: usize,
        out_channels: usize,
        radius: f64,
    ) -> Result<Self, LayerError> {
        if !(radius > 0.0) || in_channels == 0 || out_channels == 0 {
            return Err(LayerError::Config(format!(
                "lifting filter needs positive radius and channels, got r={radius}, {in_channels}→{out_channels}"
            )));
        }
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(out_channels * in_channels);
        Ok(Self {
            mlp: Mlp::new(prefix, widths),
            radius,
            in_channels,
            out_channels,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), LayerError> {
        Ok(self.mlp.init(store, rng)?)
    }

    /// `ψ(y)` for plane points `y`, one `K·C` row per point laid out
    /// `[c][k]`.
    pub fn eval(&self, params: &ParamStore, points: &[[f64; 2]]) -> Result<Vec<f64>, LayerError> {
        let input = points
            .iter()
            .flat_map(|p| [p[0] / self.radius, p[1] / self.radius])
            .collect();
        let mut out = self.mlp.eval(params, points.len(), input)?;
        let width = self.mlp.output_width();
        let norm = 1.0 / (PI * self.radius * self.radius);
        for (row, p) in out.chunks_mut(width).zip(points) {
            let m = support_mask((p[0] * p[0] + p[1] * p[1]).sqrt() / self.radius) * norm;
            row.iter_mut().for_each(|v| *v *= m);
        }
        Ok(out)
    }
}

/// Lattice geometry a plan was built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub scale: f64,
}

impl GridShape {
    pub fn of(img: &ImageGrid) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            scale: img.scale(),
        }
    }
}

/// The (element, pixel) pairs that contribute to a lifting convolution.
#[derive(Debug, Clone)]
pub struct LiftingPlan {
    grid: GridShape,
    num_elements: usize,
    /// Filter inputs `g⁻¹·x / r`, two per entry.
    points: Vec<f64>,
    /// Cutoff, Jacobian, cell area and normalisation folded together.
    weights: Vec<f64>,
    /// Row-major pixel index of each entry.
    pixels: Vec<u32>,
    /// Entry range of each element.
    segments: Vec<(usize, usize)>,
    at_infinity: usize,
}

impl LiftingPlan {
    /// Enumerates contributing pixels for every element. With
    /// `jacobian = false` the determinant factor is dropped, which gives the
    /// naive layer.
    pub fn build(
        grid: GridShape,
        filter: &LiftingFilter,
        elements: &[GroupElement],
        jacobian: bool,
    ) -> Result<Self, LayerError> {
        let r = filter.radius();
        let (hf, wf) = (grid.height as f64, grid.width as f64);
        // Plane position of pixel (row, col) for this grid.
        let plane = |row: usize, col: usize| -> [f64; 2] {
            [
                (col as f64 - (wf - 1.0) / 2.0) / grid.scale,
                ((hf - 1.0) / 2.0 - row as f64) / grid.scale,
            ]
        };
        let lattice = |p: [f64; 2]| -> (f64, f64) {
            ((hf - 1.0) / 2.0 - p[1] * grid.scale, p[0] * grid.scale + (wf - 1.0) / 2.0)
        };
        let norm = 1.0 / (grid.scale * grid.scale * PI * r * r);

        let mut plan = LiftingPlan {
            grid,
            num_elements: elements.len(),
            points: Vec::new(),
            weights: Vec::new(),
            pixels: Vec::new(),
            segments: Vec::with_capacity(elements.len()),
            at_infinity: 0,
        };
        for g in elements {
            let start = plan.weights.len();
            let ginv = g.inverse()?;
            let (r0, r1, c0, c1) = match support_box(g, r, &lattice) {
                Some((rmin, rmax, cmin, cmax)) => {
                    let r0 = rmin.floor().max(0.0);
                    let r1 = rmax.ceil().min(hf - 1.0);
                    let c0 = cmin.floor().max(0.0);
                    let c1 = cmax.ceil().min(wf - 1.0);
                    if r0 > r1 || c0 > c1 {
                        plan.segments.push((start, start));
                        continue;
                    }
                    (r0 as usize, r1 as usize, c0 as usize, c1 as usize)
                }
                None => (0, grid.height - 1, 0, grid.width - 1),
            };
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let x = plane(row, col);
                    let y = match ginv.act(x) {
                        Ok(y) => y,
                        Err(LieError::PointAtInfinity { .. }) => {
                            plan.at_infinity += 1;
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let (yx, yy) = (y[0] / r, y[1] / r);
                    let t = (yx * yx + yy * yy).sqrt();
                    if t >= 1.0 {
                        continue;
                    }
                    let jac = if jacobian { ginv.jacobian_det(x)? } else { 1.0 };
                    plan.points.extend_from_slice(&[yx, yy]);
                    plan.weights.push(support_mask(t) * jac * norm);
                    plan.pixels.push((row * grid.width + col) as u32);
                }
            }
            plan.segments.push((start, plan.weights.len()));
        }
        if plan.at_infinity > 0 {
            log::warn!(
                "{} lattice points map to infinity under inverse elements and were skipped",
                plan.at_infinity
            );
        }
        Ok(plan)
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    /// Number of (element, pixel) entries.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn at_infinity(&self) -> usize {
        self.at_infinity
    }

    /// Constant left factor for a batch: entry `(b, p·C + c)` is
    /// `image_b[pixel_p, c] · weight_p`.
    fn batch_matrix(&self, images: &[&ImageGrid]) -> Result<SegmentedMatrix, LayerError> {
        let ch = self.grid.channels;
        let cols = self.len() * ch;
        let mut values = Vec::with_capacity(images.len() * cols);
        for img in images {
            if GridShape::of(img) != self.grid {
                return Err(LayerError::Config(format!(
                    "image {}x{}x{} (scale {}) does not match the plan's grid {:?}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    img.scale(),
                    self.grid
                )));
            }
            let px = img.pixels();
            for (&p, &w) in self.pixels.iter().zip(&self.weights) {
                let base = p as usize * ch;
                values.extend(px[base..base + ch].iter().map(|v| v * w));
            }
        }
        Ok(SegmentedMatrix {
            batch: images.len(),
            cols,
            values,
            segments: self.segments.iter().map(|&(s, e)| (s * ch, e * ch)).collect(),
        })
    }
}

/// Lattice bounding box `(row_min, row_max, col_min, col_max)` of the image
/// of the filter disc under `g`, or `None` when that image is unbounded.
fn support_box(
    g: &GroupElement,
    r: f64,
    lattice: &impl Fn([f64; 2]) -> (f64, f64),
) -> Option<(f64, f64, f64, f64)> {
    let m = g.matrix();
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut sign = 0.0;
    for k in 0..RIM_POINTS {
        let theta = 2.0 * PI * k as f64 / RIM_POINTS as f64;
        let y = [r * theta.cos(), r * theta.sin()];
        if g.kind().is_projective() {
            let w = m[(2, 0)] * y[0] + m[(2, 1)] * y[1] + m[(2, 2)];
            if w.abs() < 1e-6 || (sign != 0.0 && w.signum() != sign) {
                return None;
            }
            sign = w.signum();
        }
        let x = g.act(y).ok()?;
        let (row, col) = lattice(x);
        bounds.0 = bounds.0.min(row);
        bounds.1 = bounds.1.max(row);
        bounds.2 = bounds.2.min(col);
        bounds.3 = bounds.3.max(col);
    }
    if g.kind().is_projective() {
        // The disc centre must share the rim's side of the singular line.
        let w = m[(2, 2)];
        if w.signum() != sign {
            return None;
        }
    }
    // Slack for the curved rim between sampled points.
    let pad = 0.01 * ((bounds.1 - bounds.0).max(bounds.3 - bounds.2)) + 0.5;
    Some((bounds.0 - pad, bounds.1 + pad, bounds.2 - pad, bounds.3 + pad))
}

/// Lifting convolution of a batch on the tape, `[batch, elements, K]`.
pub fn lifting_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    filter: &LiftingFilter,
    plan: &LiftingPlan,
    images: &[&ImageGrid],
) -> Result<Var, LayerError> {
    if plan.grid.channels != filter.in_channels() {
        return Err(LayerError::Config(format!(
            "filter expects {} input channels, images have {}",
            filter.in_channels(),
            plan.grid.channels
        )));
    }
    let points = tape.constant(Tensor::new(vec![plan.len(), 2], plan.points.clone())?)?;
    let psi = filter.mlp().forward(tape, pv, points)?;
    let psi = tape.reshape(psi, vec![plan.len() * filter.in_channels(), filter.out_channels()])?;
    let lhs = Rc::new(plan.batch_matrix(images)?);
    Ok(tape.segment_matmul(lhs, psi)?)
}

/// Lifting convolution of one image at the given elements, evaluated in
/// chunks, as `[elements, K]` row-major.
pub fn lifting_values(
    params: &ParamStore,
    filter: &LiftingFilter,
    image: &ImageGrid,
    elements: &[GroupElement],
    jacobian: bool,
) -> Result<Vec<f64>, LayerError> {
    let grid = GridShape::of(image);
    let per_element = {
        let px = filter.radius() * grid.scale;
        (PI * px * px).max(1.0) as usize * 4
    };
    let chunk = (CHUNK_ENTRIES / per_element).max(1);
    let mut out = Vec::with_capacity(elements.len() * filter.out_channels());
    for els in elements.chunks(chunk) {
        let plan = LiftingPlan::build(grid, filter, els, jacobian)?;
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape)?;
        let v = lifting_forward(&mut tape, &pv, filter, &plan, &[image])?;
        out.extend_from_slice(tape.value(v).data());
    }
    Ok(out)
}

/// Direct evaluation of the lifting sum for one element, without a plan.
/// Slow; meant as a reference.
pub fn lifting_reference(
    params: &ParamStore,
    filter: &LiftingFilter,
    image: &ImageGrid,
    g: &GroupElement,
    jacobian: bool,
) -> Result<Vec<f64>, LayerError> {
    let ginv = g.inverse()?;
    let (k, ch) = (filter.out_channels(), image.channels());
    let mut terms = Vec::new();
    let mut points = Vec::new();
    for row in 0..image.height() {
        for col in 0..image.width() {
            let x = image.plane_point(row, col);
            let Ok(y) = ginv.act(x) else { continue };
            if (y[0] * y[0] + y[1] * y[1]).sqrt() >= filter.radius() {
                continue;
            }
            let jac = if jacobian { ginv.jacobian_det(x)? } else { 1.0 };
            points.push(y);
            terms.push((row, col, jac));
        }
    }
    let psi = filter.eval(params, &points)?;
    let mut out = vec![0.0; k];
    for (t, &(row, col, jac)) in terms.iter().enumerate() {
        for c in 0..ch {
            let f = image.get(row, col, c) * jac * image.cell_area();
            for kk in 0..k {
                out[kk] += f * psi[t * k * ch + c * k + kk];
            }
        }
    }
    Ok(out)
}
