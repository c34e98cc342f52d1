//! Planar RGB images with values nominally in `[0, 1]`, plus PNG and binary
//! PPM (P6) input/output.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Three-channel image stored channel-major: all red, then green, then blue.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; 3 * width * height] }
    }

    /// `f(channel, y, x)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape("image", format!("{} samples for a {width}x{height} RGB image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.pixels()..(c + 1) * self.pixels()]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// RGB triple at a pixel.
    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Shape `(1, 3, H, W)`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 3, self.height, self.width], |i| T::lit(self.data[i]))
    }

    /// Stack images of equal size into `(n, 3, H, W)`.
    pub fn batch<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::invalid("image_batch", "no images"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if !im.same_size(first) {
                return Err(Error::shape("image_batch", format!("{}x{} vs {}x{}", im.width, im.height, first.width, first.height)));
            }
            data.extend(im.data.iter().map(|&v| T::lit(v)));
        }
        Tensor::from_vec([images.len(), 3, first.height, first.width], data)
    }

    /// Batch entry `index` of an `(n, 3, H, W)` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if c != 3 || index >= n {
            return Err(Error::shape("image_from_tensor", format!("entry {index} of {:?}", t.shape())));
        }
        let block = &t.data()[index * 3 * h * w..(index + 1) * 3 * h * w];
        Ok(Self { width: w, height: h, data: block.iter().map(|v| v.to_f64_lossy()).collect() })
    }

    /// 8-bit interleaved RGB, rounding after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> RgbImage {
        let (w, h) = (self.width as u32, self.height as u32);
        ImageBuffer::from_fn(w, h, |x, y| {
            let px = self.rgb(y as usize, x as usize);
            Rgb(px.map(quantize))
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_fn(w, h, |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    }

    /// Bilinear (triangle filter) resampling.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| Rgb(self.rgb(y as usize, x as usize).map(|v| v as f32)));
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Self::from_fn(width, height, |c, y, x| out.get_pixel(x as u32, y as u32)[c] as f64)
    }

    /// Decode PNG (or anything the `image` crate recognises) or binary PPM.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        if bytes.starts_with(b"P6") {
            return decode_ppm(&bytes).map_err(|reason| Error::Read { path: path.to_path_buf(), reason });
        }
        let img = image::load_from_memory(&bytes).map_err(|e| Error::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Format follows the extension: `.ppm` writes P6, anything else PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        let werr = |reason: String| Error::Write { path: path.to_path_buf(), reason };
        let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if is_ppm {
            let mut f = fs::File::create(path).map_err(|e| werr(e.to_string()))?;
            f.write_all(&self.encode_ppm()).map_err(|e| werr(e.to_string()))
        } else {
            self.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|e| werr(e.to_string()))
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8().into_raw());
        out
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut fields = Vec::new();
    let mut i = 2;
    while fields.len() < 3 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err("truncated PPM header".into());
        }
        let s = std::str::from_utf8(&bytes[start..i]).map_err(|e| e.to_string())?;
        fields.push(s.parse::<usize>().map_err(|e| e.to_string())?);
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err("malformed PPM header".into());
    }
    i += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    let wide = maxval > 255;
    let bps = if wide { 2 } else { 1 };
    let body = &bytes[i..];
    if body.len() < w * h * 3 * bps {
        return Err(format!("PPM body has {} bytes, expected {}", body.len(), w * h * 3 * bps));
    }
    let m = maxval as f64;
    Ok(Image::from_fn(w, h, |c, y, x| {
        let k = (y * w + x) * 3 + c;
        let v = if wide { u16::from_be_bytes([body[2 * k], body[2 * k + 1]]) as f64 } else { body[k] as f64 };
        v / m
    }))
}
