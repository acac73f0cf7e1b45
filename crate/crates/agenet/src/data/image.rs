//! Raster images: binary PPM (P6) decode/encode, grayscale PGM (P5) encode,
//! face cropping with margin, and corner-aligned bilinear resizing.

use std::path::Path;

use crate::data::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 8-bit RGB image, interleaved row-major pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<RgbImage> {
        if width == 0 || height == 0 {
            return Err(Error::data(format!("image dimensions {width}x{height} are degenerate")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::data(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> RgbImage {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        RgbImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let off = (y * self.width + x) * 3;
        [self.pixels[off], self.pixels[off + 1], self.pixels[off + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let off = (y * self.width + x) * 3;
        self.pixels[off..off + 3].copy_from_slice(&rgb);
    }

    /// Parses binary PPM (P6, maxval 255). Comments after `#` are allowed in
    /// the header. `origin` names the source in errors.
    pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<RgbImage> {
        let mut scan = HeaderScan { bytes, pos: 0 };
        let magic = scan.token().ok_or_else(|| Error::format(origin, "empty file"))?;
        if magic != b"P6" {
            return Err(Error::format(
                origin,
                format!(
                    "expected binary PPM magic 'P6' at offset 0, found '{}'",
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let width = scan.number(origin, "width")?;
        let height = scan.number(origin, "height")?;
        let maxval = scan.number(origin, "maxval")?;
        if maxval != 255 {
            return Err(Error::format(
                origin,
                format!("only maxval 255 is supported, found {maxval}"),
            ));
        }
        // Exactly one whitespace byte separates the header from the pixels.
        match bytes.get(scan.pos) {
            Some(b) if b.is_ascii_whitespace() => scan.pos += 1,
            _ => {
                return Err(Error::format(
                    origin,
                    format!("missing whitespace after maxval at offset {}", scan.pos),
                ))
            }
        }
        let need = width * height * 3;
        let have = bytes.len() - scan.pos;
        if have < need {
            return Err(Error::format(
                origin,
                format!(
                    "truncated pixel data at offset {}: need {need} bytes, found {have}",
                    scan.pos
                ),
            ));
        }
        RgbImage::new(width, height, bytes[scan.pos..scan.pos + need].to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<RgbImage> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        RgbImage::decode_ppm(&bytes, path)
    }

    /// Serializes as binary PPM. Each comment becomes a `# ...` header line.
    pub fn encode_ppm(&self, comments: &[String]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 64);
        out.extend_from_slice(b"P6\n");
        for c in comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Channel-planar [3, H, W] tensor with values scaled to [0, 1].
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![T::zero(); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * 3;
                for ch in 0..3 {
                    data[ch * h * w + y * w + x] =
                        T::from_f64(self.pixels[src + ch] as f64 / 255.0);
                }
            }
        }
        Tensor::from_vec(Shape::new(vec![3, h, w]).expect("non-degenerate image"), data)
            .expect("length matches by construction")
    }
}

struct HeaderScan<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScan<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, origin: &Path, what: &str) -> Result<usize> {
        let at = self.pos;
        let token = self.token().ok_or_else(|| {
            Error::format(origin, format!("missing {what} at offset {at}"))
        })?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::format(
                    origin,
                    format!(
                        "bad {what} '{}' at offset {at}",
                        String::from_utf8_lossy(token)
                    ),
                )
            })
    }
}

/// Serializes an 8-bit grayscale image as binary PGM (P5).
pub fn encode_pgm(width: usize, height: usize, gray: &[u8], comments: &[String]) -> Result<Vec<u8>> {
    if gray.len() != width * height {
        return Err(Error::data(format!(
            "{width}x{height} grayscale image needs {} bytes, got {}",
            width * height,
            gray.len()
        )));
    }
    let mut out = Vec::with_capacity(gray.len() + 64);
    out.extend_from_slice(b"P5\n");
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(gray);
    Ok(out)
}

/// Min-max normalizes values to 0..=255. A constant input maps to all zeros.
pub fn normalize_to_u8<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        let v = Scalar::to_f64(v);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let scale = 255.0 / (hi - lo);
    values
        .iter()
        .map(|&v| ((Scalar::to_f64(v) - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Crops the bounding box expanded by `margin` times its own width/height on
/// each side, clamped to the image. The box is half-open: x0 <= x < x1.
pub fn crop_with_margin(img: &RgbImage, bbox: BBox, margin: f64) -> Result<RgbImage> {
    if !(margin >= 0.0) {
        return Err(Error::config(format!("crop margin must be >= 0, got {margin}")));
    }
    bbox.validate(img.width(), img.height())?;
    let bw = (bbox.x1 - bbox.x0) as f64;
    let bh = (bbox.y1 - bbox.y0) as f64;
    let x0 = (bbox.x0 as f64 - margin * bw).floor().max(0.0) as usize;
    let y0 = (bbox.y0 as f64 - margin * bh).floor().max(0.0) as usize;
    let x1 = (bbox.x1 as f64 + margin * bw).ceil().min(img.width() as f64) as usize;
    let y1 = (bbox.y1 as f64 + margin * bh).ceil().min(img.height() as f64) as usize;

    let (cw, ch) = (x1 - x0, y1 - y0);
    let mut pixels = Vec::with_capacity(cw * ch * 3);
    for y in y0..y1 {
        let row = (y * img.width() + x0) * 3;
        pixels.extend_from_slice(&img.pixels()[row..row + cw * 3]);
    }
    RgbImage::new(cw, ch, pixels)
}

/// Corner-aligned bilinear resize: source corners map exactly onto
/// destination corners, so resizing to the same size is the identity.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> Result<RgbImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::config(format!("resize target {out_w}x{out_h} is degenerate")));
    }
    let (in_w, in_h) = (img.width(), img.height());
    let scale = |out: usize, inn: usize| {
        if out > 1 { (inn - 1) as f64 / (out - 1) as f64 } else { 0.0 }
    };
    let (sx, sy) = (scale(out_w, in_w), scale(out_h, in_h));
    let mut pixels = vec![0u8; out_w * out_h * 3];
    for oy in 0..out_h {
        let fy = oy as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let dy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ox as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let dx = fx - x0 as f64;
            let (p00, p01) = (img.get(x0, y0), img.get(x1, y0));
            let (p10, p11) = (img.get(x0, y1), img.get(x1, y1));
            let dst = (oy * out_w + ox) * 3;
            for ch in 0..3 {
                let top = p00[ch] as f64 * (1.0 - dx) + p01[ch] as f64 * dx;
                let bottom = p10[ch] as f64 * (1.0 - dx) + p11[ch] as f64 * dx;
                let v = top * (1.0 - dy) + bottom * dy;
                pixels[dst + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(out_w, out_h, pixels)
}
