use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::tensor::Tensor;
use crate::train::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCfg {
    pub n_samples: usize,
    /// Background plus shape classes.
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for ToyCfg {
    /// The desk-scale training split: 200 images of 96×96 with 4 classes.
    fn default() -> Self {
        Self {
            n_samples: 200,
            classes: 4,
            height: 96,
            width: 96,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Pixels `y0..y0+h`, `x0..x0+w`.
    Rect { y0: usize, x0: usize, h: usize, w: usize },
    /// Pixels whose centre lies within `r` of `(cy, cx)`.
    Disk { cy: f64, cx: f64, r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyShape {
    pub class: u8,
    pub kind: ShapeKind,
}

impl ToyShape {
    pub fn area(&self) -> f64 {
        match self.kind {
            ShapeKind::Rect { h, w, .. } => (h * w) as f64,
            ShapeKind::Disk { r, .. } => core::f64::consts::PI * r * r,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        match self.kind {
            ShapeKind::Rect { y0, x0, h, w } => (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x),
            ShapeKind::Disk { cy, cx, r } => {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                dy * dy + dx * dx <= r * r
            }
        }
    }

    /// Inclusive-exclusive bounding box `(y0, x0, y1, x1)`.
    fn bbox(&self) -> (f64, f64, f64, f64) {
        match self.kind {
            ShapeKind::Rect { y0, x0, h, w } => (y0 as f64, x0 as f64, (y0 + h) as f64, (x0 + w) as f64),
            ShapeKind::Disk { cy, cx, r } => (cy - r, cx - r, cy + r, cx + r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `H·W` class map.
    pub label: Vec<u8>,
    pub shapes: Vec<ToyShape>,
}

impl ToySample {
    pub fn to_sample(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            label: self.label.clone(),
        }
    }
}

/// Shape classes come in pairs sharing a colour family: `(1, 2)`, `(3, 4)`, ...
/// Within a pair the odd class is drawn small and the even class large, and
/// either may be a disk or a rectangle, so a pixel deep inside a large shape
/// is only told apart from a small one by looking well beyond its
/// neighbourhood. A trailing unpaired class is drawn at either size.
const FAMILIES: [[f32; 3]; 4] = [
    [0.85, 0.35, 0.2],
    [0.2, 0.45, 0.85],
    [0.3, 0.8, 0.35],
    [0.8, 0.75, 0.25],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeBand {
    Small,
    Large,
}

/// Size band a class is drawn at, `None` when it may take either.
pub fn class_size(classes: usize, class: usize) -> Option<SizeBand> {
    if class % 2 == 1 && class + 1 >= classes {
        None
    } else if class % 2 == 1 {
        Some(SizeBand::Small)
    } else {
        Some(SizeBand::Large)
    }
}

/// Disk radius range and rectangle side range, as fractions of the short side.
fn band_limits(band: SizeBand) -> ((f64, f64), (f64, f64)) {
    match band {
        SizeBand::Small => ((1.0 / 12.0, 1.0 / 7.0), (1.0 / 7.0, 1.0 / 4.0)),
        SizeBand::Large => ((2.0 / 9.0, 1.0 / 3.0), (2.0 / 5.0, 3.0 / 5.0)),
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, class: u8, classes: usize, h: usize, w: usize) -> ToyShape {
    let band = class_size(classes, class as usize).unwrap_or(if rng.gen_bool(0.5) {
        SizeBand::Small
    } else {
        SizeBand::Large
    });
    let ((r_lo, r_hi), (s_lo, s_hi)) = band_limits(band);
    let short = h.min(w) as f64;
    let kind = if rng.gen_bool(0.5) {
        let r = rng.gen_range(short * r_lo..short * r_hi);
        ShapeKind::Disk {
            cy: rng.gen_range(r..h as f64 - r),
            cx: rng.gen_range(r..w as f64 - r),
            r,
        }
    } else {
        let lo = ((short * s_lo) as usize).max(1);
        let hi = ((short * s_hi) as usize).max(lo + 1);
        let (sh, sw) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        ShapeKind::Rect {
            y0: rng.gen_range(0..=h - sh),
            x0: rng.gen_range(0..=w - sw),
            h: sh,
            w: sw,
        }
    };
    ToyShape { class, kind }
}

fn overlaps(a: &ToyShape, b: &ToyShape) -> bool {
    const MARGIN: f64 = 2.0;
    let (ay0, ax0, ay1, ax1) = a.bbox();
    let (by0, bx0, by1, bx1) = b.bbox();
    ay0 < by1 + MARGIN && by0 < ay1 + MARGIN && ax0 < bx1 + MARGIN && bx0 < ax1 + MARGIN
}

/// Sample `index` of the dataset; depends only on `(cfg.seed, index)` and the
/// image size and class count.
pub fn gen_toy_sample(cfg: &ToyCfg, index: usize) -> Result<ToySample> {
    if cfg.classes < 2 || cfg.classes > 255 {
        bail!(Config, "toy data needs 2..=255 classes, got {}", cfg.classes);
    }
    if cfg.height < 16 || cfg.width < 16 {
        bail!(Config, "toy images must be at least 16x16, got {}x{}", cfg.height, cfg.width);
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let count = rng.gen_range(1..=4);
    let mut shapes: Vec<ToyShape> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..50 {
            let class = rng.gen_range(1..cfg.classes) as u8;
            let s = draw_shape(&mut rng, class, cfg.classes, h, w);
            if shapes.iter().all(|o| !overlaps(o, &s)) {
                shapes.push(s);
                break;
            }
        }
    }

    // background: per-sample grey level with faint stripes
    let base: f32 = rng.gen_range(0.35..0.6);
    let tint: [f32; 3] = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    let (fy, fx): (f64, f64) = (rng.gen_range(0.02..0.15), rng.gen_range(0.02..0.15));
    let phase: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    let colours: Vec<[f32; 3]> = shapes
        .iter()
        .map(|s| {
            let c = FAMILIES[((s.class as usize - 1) / 2) % FAMILIES.len()];
            c.map(|v| (v + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0))
        })
        .collect();

    let plane = h * w;
    let mut image = vec![0.0f32; 3 * plane];
    let mut label = vec![0u8; plane];
    for y in 0..h {
        for x in 0..w {
            let o = y * w + x;
            let hit = shapes.iter().position(|s| s.contains(y, x));
            let stripe = 0.08 * Float::sin(core::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + phase) as f32;
            for c in 0..3 {
                let clean = match hit {
                    Some(i) => colours[i][c],
                    None => base + tint[c] + stripe,
                };
                let noise: f32 = rng.gen_range(-0.06..0.06);
                image[c * plane + o] = (clean + noise).clamp(0.0, 1.0);
            }
            if let Some(i) = hit {
                label[o] = shapes[i].class;
            }
        }
    }
    Ok(ToySample {
        image: Tensor::new(&[3, h, w], image)?,
        label,
        shapes,
    })
}

pub fn gen_toy_dataset(cfg: &ToyCfg) -> Result<Vec<ToySample>> {
    (0..cfg.n_samples).map(|i| gen_toy_sample(cfg, i)).collect()
}

/// Per-channel mean over every pixel of every image.
pub fn dataset_mean<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> [f32; 3] {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in images {
        let plane = img.len() / 3;
        for (c, chunk) in img.data().chunks_exact(plane).enumerate() {
            sum[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += plane;
    }
    sum.map(|s| if count == 0 { 0.0 } else { (s / count as f64) as f32 })
}
