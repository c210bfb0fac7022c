use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{bail, Result};
use crate::ops::loss::IGNORE_INDEX;
use crate::ops::pool::bilinear_forward;
use crate::tensor::Tensor;

/// An image `[3, H, W]` with its `H·W` label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: Vec<u8>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, label: Vec<u8>) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            bail!(Shape, "sample image must be [3, H, W], got {s:?}");
        }
        if label.len() != s[1] * s[2] {
            bail!(Shape, "label has {} pixels, image {}x{}", label.len(), s[1], s[2]);
        }
        Ok(Self { image, label })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentCfg {
    pub scale_range: (f64, f64),
    pub hflip: bool,
    pub rotate_deg: (f64, f64),
    /// Per-channel mean subtracted last.
    pub mean: [f32; 3],
    /// Output `(height, width)`.
    pub crop: (usize, usize),
}

impl Default for AugmentCfg {
    fn default() -> Self {
        Self {
            scale_range: (0.5, 1.5),
            hflip: true,
            rotate_deg: (-3.0, 3.0),
            mean: [0.0; 3],
            crop: (96, 96),
        }
    }
}

impl AugmentCfg {
    pub fn validate(&self, output_stride: usize) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            bail!(Config, "scale range must satisfy 0 < low <= high, got {lo}..{hi}");
        }
        if self.rotate_deg.0 > self.rotate_deg.1 {
            bail!(Config, "rotation range is reversed: {:?}", self.rotate_deg);
        }
        let (h, w) = self.crop;
        if h == 0 || w == 0 || h % output_stride != 0 || w % output_stride != 0 {
            bail!(Config, "crop {h}x{w} must be positive and divisible by output stride {output_stride}");
        }
        Ok(())
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub flip: bool,
    pub angle_deg: f64,
    /// Crop origin in the scaled image; negative or overhanging crops pad.
    pub crop_y: isize,
    pub crop_x: isize,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn scaled_len(len: usize, scale: f64) -> usize {
    (Float::round(len as f64 * scale) as usize).max(1)
}

/// Origin drawn so the crop lies inside the image, or the image inside the
/// crop when the image is smaller.
fn crop_origin<R: Rng + ?Sized>(rng: &mut R, len: usize, crop: usize) -> isize {
    let slack = len as isize - crop as isize;
    let (lo, hi) = (slack.min(0), slack.max(0));
    rng.gen_range(lo..=hi)
}

pub fn sample_params<R: Rng + ?Sized>(cfg: &AugmentCfg, rng: &mut R, height: usize, width: usize) -> AugmentParams {
    let scale = uniform(rng, cfg.scale_range);
    let flip = cfg.hflip && rng.gen_bool(0.5);
    let angle_deg = uniform(rng, cfg.rotate_deg);
    let crop_y = crop_origin(rng, scaled_len(height, scale), cfg.crop.0);
    let crop_x = crop_origin(rng, scaled_len(width, scale), cfg.crop.1);
    AugmentParams {
        scale,
        flip,
        angle_deg,
        crop_y,
        crop_x,
    }
}

/// Bilinear image, nearest-neighbour labels.
pub fn rescale(s: &Sample, scale: f64) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let (oh, ow) = (scaled_len(h, scale), scaled_len(w, scale));
    if (oh, ow) == (h, w) {
        return Ok(s.clone());
    }
    let img = bilinear_forward(&s.image.reshape(&[1, 3, h, w])?, oh, ow)?.reshape(&[3, oh, ow])?;
    let nearest = |d: usize, inl: usize, outl: usize| ((d * 2 + 1) * inl / (2 * outl)).min(inl - 1);
    let rows: Vec<usize> = (0..oh).map(|y| nearest(y, h, oh)).collect();
    let cols: Vec<usize> = (0..ow).map(|x| nearest(x, w, ow)).collect();
    let mut label = Vec::with_capacity(oh * ow);
    for &r in &rows {
        label.extend(cols.iter().map(|&c| s.label[r * w + c]));
    }
    Sample::new(img, label)
}

pub fn hflip(s: &Sample) -> Sample {
    let (h, w) = (s.height(), s.width());
    let mut img = s.image.clone();
    for row in img.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    let mut label = s.label.clone();
    for row in label.chunks_exact_mut(w) {
        row.reverse();
    }
    debug_assert_eq!(label.len(), h * w);
    Sample { image: img, label }
}

/// Rotation about the image centre. Pixels mapped from outside the canvas get
/// image value 0 and label [`IGNORE_INDEX`].
pub fn rotate(s: &Sample, angle_deg: f64) -> Sample {
    if angle_deg == 0.0 {
        return s.clone();
    }
    let (h, w) = (s.height(), s.width());
    let (sin, cos) = Float::sin_cos(angle_deg.to_radians());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = s.image.data();
    let mut img = vec![0.0f32; 3 * h * w];
    let mut label = vec![IGNORE_INDEX; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx >= w as f64 - 0.5 || sy >= h as f64 - 0.5 {
                continue;
            }
            let o = y * w + x;
            let (ny, nx) = (Float::round(sy) as usize, Float::round(sx) as usize);
            label[o] = s.label[ny.min(h - 1) * w + nx.min(w - 1)];
            let (fy, fx) = (sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64));
            let (y0, x0) = (Float::floor(fy) as usize, Float::floor(fx) as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ly, lx) = ((fy - y0 as f64) as f32, (fx - x0 as f64) as f32);
            for c in 0..3 {
                let p = &src[c * h * w..(c + 1) * h * w];
                let top = p[y0 * w + x0] + (p[y0 * w + x1] - p[y0 * w + x0]) * lx;
                let bot = p[y1 * w + x0] + (p[y1 * w + x1] - p[y1 * w + x0]) * lx;
                img[c * h * w + o] = top + (bot - top) * ly;
            }
        }
    }
    Sample {
        image: Tensor::from_parts(vec![3, h, w], img),
        label,
    }
}

/// Window `[y0, y0+ch) × [x0, x0+cw)`; outside pixels pad with 0 / ignore.
pub fn crop(s: &Sample, y0: isize, x0: isize, ch: usize, cw: usize) -> Sample {
    let (h, w) = (s.height(), s.width());
    let mut img = vec![0.0f32; 3 * ch * cw];
    let mut label = vec![IGNORE_INDEX; ch * cw];
    for y in 0..ch {
        let sy = y0 + y as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let sy = sy as usize;
        for x in 0..cw {
            let sx = x0 + x as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let sx = sx as usize;
            label[y * cw + x] = s.label[sy * w + sx];
            for c in 0..3 {
                img[(c * ch + y) * cw + x] = s.image.data()[(c * h + sy) * w + sx];
            }
        }
    }
    Sample {
        image: Tensor::from_parts(vec![3, ch, cw], img),
        label,
    }
}

/// Subtracts a per-channel mean from a `[3, H, W]` image.
pub fn normalize(image: &Tensor<f32>, mean: &[f32; 3]) -> Tensor<f32> {
    let plane = image.len() / 3;
    let mut out = image.clone();
    for (c, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v -= mean[c];
        }
    }
    out
}

/// Scale → flip → rotate → crop → mean subtraction.
pub fn apply(s: &Sample, p: &AugmentParams, cfg: &AugmentCfg) -> Result<Sample> {
    let mut out = rescale(s, p.scale)?;
    if p.flip {
        out = hflip(&out);
    }
    out = rotate(&out, p.angle_deg);
    out = crop(&out, p.crop_y, p.crop_x, cfg.crop.0, cfg.crop.1);
    out.image = normalize(&out.image, &cfg.mean);
    Ok(out)
}

pub fn augment<R: Rng + ?Sized>(s: &Sample, cfg: &AugmentCfg, rng: &mut R) -> Result<Sample> {
    let p = sample_params(cfg, rng, s.height(), s.width());
    apply(s, &p, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample(h: usize, w: usize) -> Sample {
        let img = (0..3 * h * w).map(|i| (i % 17) as f32 / 16.0).collect();
        let label = (0..h * w).map(|i| (i % 3) as u8).collect();
        Sample::new(Tensor::new(&[3, h, w], img).unwrap(), label).unwrap()
    }

    #[test]
    fn identity_parameters() {
        let s = sample(8, 12);
        let cfg = AugmentCfg {
            crop: (8, 12),
            ..AugmentCfg::default()
        };
        let p = AugmentParams {
            scale: 1.0,
            flip: false,
            angle_deg: 0.0,
            crop_y: 0,
            crop_x: 0,
        };
        assert_eq!(apply(&s, &p, &cfg).unwrap(), s);
    }

    #[test]
    fn flip_involution() {
        let s = sample(5, 7);
        assert_eq!(hflip(&hflip(&s)), s);
        assert_ne!(hflip(&s), s);
    }

    #[test]
    fn labels_stay_in_value_set() {
        let s = sample(20, 20);
        let cfg = AugmentCfg {
            crop: (16, 24),
            ..AugmentCfg::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = augment(&s, &cfg, &mut rng).unwrap();
            assert_eq!(a.label.len(), 16 * 24);
            assert!(a.label.iter().all(|&v| v < 3 || v == IGNORE_INDEX));
        }
    }

    #[test]
    fn rotation_marks_corners_ignored() {
        let s = sample(16, 16);
        let r = rotate(&s, 30.0);
        assert_eq!(r.label[0], IGNORE_INDEX);
        assert_eq!(r.image.data()[0], 0.0);
        // centre pixel maps onto itself
        assert_ne!(r.label[8 * 16 + 8], IGNORE_INDEX);
    }

    #[test]
    fn undersized_crop_pads() {
        let s = sample(4, 4);
        let c = crop(&s, -2, -2, 8, 8);
        assert_eq!(c.label[0], IGNORE_INDEX);
        assert_eq!(c.label[2 * 8 + 2], s.label[0]);
    }
}
