//! Haar-warped evaluation sets and their binary container.
//!
//! LGWD layout, little-endian throughout:
//!
//! ```text
//! header: "LGWD" | version u32 | group u8 | support_radius f64 | plane_scale f64
//!         | n_per_image u32 | count u32 | height u32 | width u32
//! record: label u8 | warp 9×f64 (row-major) | pixels H·W×f32 (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::haar::{metropolis_haar, SampleSet, SamplerConfig};
use crate::lie::{GroupElement, GroupKind, GroupSpec, LieError};

use super::{warp_image, DataError, ImageGrid, LabeledImages};

pub const LGWD_VERSION: u32 = 1;
pub const LGWD_HEADER_BYTES: usize = 4 + 4 + 1 + 8 + 8 + 4 * 4;
const MAGIC: &[u8; 4] = b"LGWD";
const MAX_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedExample {
    pub base_id: usize,
    pub label: u8,
    pub warp: GroupElement,
    pub image: ImageGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedDataset {
    pub kind: GroupKind,
    pub support_radius: f64,
    pub plane_scale: f64,
    pub n_per_image: usize,
    pub height: usize,
    pub width: usize,
    pub examples: Vec<WarpedExample>,
}

impl WarpedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Size in bytes of the LGWD encoding.
    pub fn encoded_len(&self) -> usize {
        LGWD_HEADER_BYTES + self.examples.len() * (1 + 72 + 4 * self.height * self.width)
    }

    pub fn to_labeled(&self) -> LabeledImages {
        LabeledImages {
            images: self.examples.iter().map(|e| e.image.clone()).collect(),
            labels: self.examples.iter().map(|e| e.label).collect(),
        }
    }
}

fn group_code(kind: GroupKind) -> u8 {
    match kind {
        GroupKind::Affine => 0,
        GroupKind::Homography => 1,
        GroupKind::TranslationOnly => 2,
        GroupKind::ScalingOnly => 3,
    }
}

fn group_from_code(code: u8) -> Option<GroupKind> {
    GroupKind::all().into_iter().find(|&k| group_code(k) == code)
}

/// True when every nonzero source pixel lands inside the canvas.
fn keeps_support(img: &ImageGrid, u: &GroupElement, canvas: (usize, usize)) -> Result<bool, DataError> {
    let target = ImageGrid::zeros(canvas.0, canvas.1, 1, img.scale())?;
    let (max_r, max_c) = ((canvas.0 - 1) as f64, (canvas.1 - 1) as f64);
    for r in 0..img.height() {
        for c in 0..img.width() {
            if (0..img.channels()).all(|k| img.get(r, c, k) == 0.0) {
                continue;
            }
            let q = match u.act(img.plane_point(r, c)) {
                Ok(q) => q,
                Err(LieError::PointAtInfinity { .. }) => return Ok(false),
                Err(e) => return Err(e.into()),
            };
            let (tr, tc) = target.lattice_coords(q);
            if !(0.0..=max_r).contains(&tr) || !(0.0..=max_c).contains(&tc) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Stream of Haar samples, refilled with fresh seeds on demand.
struct WarpStream<'a> {
    spec: &'a GroupSpec,
    cfg: SamplerConfig,
    batch: usize,
    round: u64,
    current: Option<SampleSet>,
    pos: usize,
    drawn: usize,
}

impl WarpStream<'_> {
    fn next(&mut self) -> Result<GroupElement, DataError> {
        let exhausted = self.current.as_ref().is_none_or(|s| self.pos >= s.len());
        if exhausted {
            let cfg = self
                .cfg
                .with_samples(self.batch)
                .with_seed(self.cfg.seed.wrapping_add(self.round));
            self.round += 1;
            self.current = Some(metropolis_haar(self.spec, &cfg)?);
            self.pos = 0;
        }
        let s = self.current.as_ref().expect("refilled above");
        let u = s.exp_pos()[self.pos];
        self.pos += 1;
        self.drawn += 1;
        Ok(u)
    }
}

/// Draws `n_per_image` Haar warps per image and renders each onto `canvas`.
/// Warps that would push any nonzero source pixel off the canvas are
/// redrawn, up to 100 times per example.
pub fn generate_warped_testset(
    data: &LabeledImages,
    spec: &GroupSpec,
    n_per_image: usize,
    sampler: &SamplerConfig,
    canvas: (usize, usize),
) -> Result<WarpedDataset, DataError> {
    sampler.validate()?;
    let first = data
        .images
        .first()
        .ok_or_else(|| DataError::Config("no images to warp".into()))?;
    if first.channels() != 1 {
        return Err(DataError::Config("warped datasets store one channel".into()));
    }
    if canvas.0 < first.height() || canvas.1 < first.width() {
        return Err(DataError::Config(format!(
            "canvas {}x{} is smaller than the {}x{} source",
            canvas.0,
            canvas.1,
            first.height(),
            first.width()
        )));
    }
    let total = data.len() * n_per_image;
    let mut stream = WarpStream {
        spec,
        cfg: sampler.clone(),
        batch: total.max(1),
        round: 0,
        current: None,
        pos: 0,
        drawn: 0,
    };

    let mut examples = Vec::with_capacity(total);
    for (base_id, (img, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        if img.height() != first.height() || img.width() != first.width() || img.channels() != 1 {
            return Err(DataError::Config(format!("image {base_id} has a different shape")));
        }
        for _ in 0..n_per_image {
            let mut accepted = None;
            for _ in 0..MAX_TRIES {
                let u = stream.next()?;
                if keeps_support(img, &u, canvas)? {
                    accepted = Some(u);
                    break;
                }
            }
            let warp = accepted.ok_or_else(|| {
                DataError::Config(format!(
                    "no warp kept image {base_id} on the {}x{} canvas after {MAX_TRIES} draws; \
                     use a smaller support_radius",
                    canvas.0, canvas.1
                ))
            })?;
            let image = warp_image(img, &warp, canvas)?.image.rounded_to_f32();
            examples.push(WarpedExample {
                base_id,
                label,
                warp,
                image,
            });
        }
    }
    if stream.drawn > 0 {
        log::info!(
            "edge constraint kept {} of {} drawn warps ({:.1}%)",
            total,
            stream.drawn,
            100.0 * total as f64 / stream.drawn as f64
        );
    }
    Ok(WarpedDataset {
        kind: spec.kind(),
        support_radius: sampler.support_radius,
        plane_scale: first.scale(),
        n_per_image,
        height: canvas.0,
        width: canvas.1,
        examples,
    })
}

pub fn write_warped_dataset<W: Write>(ds: &WarpedDataset, mut w: W) -> Result<(), DataError> {
    w.write_all(MAGIC)?;
    w.write_all(&LGWD_VERSION.to_le_bytes())?;
    w.write_all(&[group_code(ds.kind)])?;
    w.write_all(&ds.support_radius.to_le_bytes())?;
    w.write_all(&ds.plane_scale.to_le_bytes())?;
    for v in [ds.n_per_image, ds.examples.len(), ds.height, ds.width] {
        let v = u32::try_from(v).map_err(|_| DataError::Config(format!("{v} does not fit in u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for ex in &ds.examples {
        if ex.image.height() != ds.height || ex.image.width() != ds.width || ex.image.channels() != 1 {
            return Err(DataError::Config(format!(
                "example from image {} does not match the dataset shape",
                ex.base_id
            )));
        }
        w.write_all(&[ex.label])?;
        for v in ex.warp.to_row_major() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &p in ex.image.pixels() {
            w.write_all(&(p as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| DataError::format(self.pos as u64, "file ends inside a field"))?;
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_warped_dataset<R: Read>(mut r: R) -> Result<WarpedDataset, DataError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(DataError::format(0, "missing LGWD magic"));
    }
    let version = cur.u32()?;
    if version != LGWD_VERSION {
        return Err(DataError::format(
            4,
            format!("unsupported version {version}, expected {LGWD_VERSION}"),
        ));
    }
    let code = cur.u8()?;
    let kind = group_from_code(code).ok_or_else(|| DataError::format(8, format!("unknown group code {code}")))?;
    let support_radius = cur.f64()?;
    let plane_scale = cur.f64()?;
    let n_per_image = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    let record = 1 + 72 + 4 * height * width;
    let expected = LGWD_HEADER_BYTES + count * record;
    if bytes.len() != expected {
        return Err(DataError::format(
            bytes.len().min(expected) as u64,
            format!("{count} records need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let start = cur.pos as u64;
        let label = cur.u8()?;
        let mut m = [0.0; 9];
        for v in &mut m {
            *v = cur.f64()?;
        }
        let warp = GroupElement::from_row_major(m, kind)
            .map_err(|e| DataError::format(start + 1, format!("record {i}: {e}")))?;
        let pixels = cur
            .take(4 * height * width)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let image = ImageGrid::with_scale(height, width, 1, pixels, plane_scale)?;
        examples.push(WarpedExample {
            base_id: if n_per_image == 0 { i } else { i / n_per_image },
            label,
            warp,
            image,
        });
    }
    Ok(WarpedDataset {
        kind,
        support_radius,
        plane_scale,
        n_per_image,
        height,
        width,
        examples,
    })
}

pub fn save_warped_dataset(ds: &WarpedDataset, path: &Path) -> Result<(), DataError> {
    write_warped_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_warped_dataset(path: &Path) -> Result<WarpedDataset, DataError> {
    read_warped_dataset(BufReader::new(File::open(path)?))
}

/// CSV with one row per example: id, label, then the nine warp entries.
pub fn write_manifest(ds: &WarpedDataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    for r in 1..=3 {
        for c in 1..=3 {
            header.push(format!("m{r}{c}"));
        }
    }
    w.write_record(&header)?;
    for (id, ex) in ds.examples.iter().enumerate() {
        let mut row = vec![id.to_string(), ex.label.to_string()];
        row.extend(ex.warp.to_row_major().iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
