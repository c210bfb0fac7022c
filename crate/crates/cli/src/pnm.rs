//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use cifrenet_core::Tensor;

use crate::error::{Error, Result};
use crate::fsio;

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::checked(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::checked(width, height, 3, data)
    }

    fn checked(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Invalid(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload_at: usize,
}

fn header(buf: &[u8]) -> Result<Header> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(Error::format(0, "missing P5/P6 magic"));
    }
    let channels = match buf[1] {
        b'6' => 3,
        b'5' => 1,
        b'3' | b'2' => {
            return Err(Error::Unsupported(format!(
                "ASCII P{} files; only binary P5/P6 are read",
                buf[1] as char
            )))
        }
        _ => return Err(Error::format(1, "unknown netpbm variant")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, what) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments before each field
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        fields[i] = std::str::from_utf8(&buf[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))?;
        if i < 2 && fields[i] == 0 {
            return Err(Error::format(start, format!("{what} must be positive")));
        }
    }
    if fields[2] != 255 {
        return Err(Error::Unsupported(format!("maxval {}; only 255 is read", fields[2])));
    }
    match buf.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        channels,
        width: fields[0],
        height: fields[1],
        payload_at: pos,
    })
}

pub fn decode(buf: &[u8]) -> Result<Image> {
    let h = header(buf)?;
    let expected = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(h.channels))
        .ok_or_else(|| Error::format(2, "image dimensions overflow"))?;
    let actual = buf.len() - h.payload_at;
    if actual != expected {
        return Err(Error::format(
            h.payload_at,
            format!("payload holds {actual} bytes, expected {expected}"),
        ));
    }
    Ok(Image {
        width: h.width,
        height: h.height,
        channels: h.channels,
        data: buf[h.payload_at..].to_vec(),
    })
}

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode(&fsio::read(path)?)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    fsio::write_atomic(path, &encode(img))
}

/// PPM → `[3, H, W]` with values in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let img = read_image(path)?;
    if img.channels != 3 {
        return Err(Error::Invalid(format!("{}: expected an RGB (P6) image", path.display())));
    }
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &Image) -> Tensor<f32> {
    let plane = img.width * img.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, img.height, img.width], data).expect("sized from image")
}

/// `[3, H, W]` in `[0, 1]` → 8-bit RGB, rounding to nearest and clamping.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<Image> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Invalid(format!("expected a [3, H, W] image tensor, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            data.push((t.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Image::rgb(w, h, data)
}

pub fn write_ppm(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_image(path, &tensor_to_rgb(t)?)
}

/// Label PGM → `(height, width, class map)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = read_image(path)?;
    if img.channels != 1 {
        return Err(Error::Invalid(format!("{}: expected a grayscale (P5) image", path.display())));
    }
    Ok((img.height, img.width, img.data))
}

/// Class map written with class `k` as gray level `k`.
pub fn write_pgm(path: &Path, height: usize, width: usize, labels: &[u8]) -> Result<()> {
    write_image(path, &Image::gray(width, height, labels.to_vec())?)
}
