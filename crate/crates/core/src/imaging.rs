//! Raster and tensor containers plus the image statistics shared by the rest
//! of the crate: PSNR, SSIM and the Pearson kurtosis.
//!
//! Every pixel value lives in `[0, 1]`. PNG files are 8-bit and map to floats
//! by `value / 255`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// PSNR reported when two images are numerically identical.
pub const PSNR_CAP_DB: f64 = 99.0;
const PSNR_MSE_FLOOR: f64 = 1e-12;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const KURTOSIS_EPS: f64 = 1e-8;

/// Row-major `height × width × channels` raster with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Dimension("image has a zero-sized side".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let idx = (y * self.width + x) * self.channels + c;
        self.data[idx] = clamp_unit(value);
    }

    /// Bilinear sample at sub-pixel `(x, y)` with edge clamping.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
        let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Luma conversion (ITU-R BT.601 weights); grayscale images are returned as is.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Channel-first copy (`C × H × W`) used by the network code.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::Dimension(format!(
                "planar buffer of {} values cannot hold {height}x{width}x{channels}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Quantises to 8 bits per channel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|b| f64::from(*b) / 255.0).collect(),
        )
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let (h, w) = (info.height as usize, info.width as usize);
        let bytes = &buf[..info.buffer_size()];
        let (channels, pixels): (usize, Vec<u8>) = match info.color_type {
            png::ColorType::Grayscale => (1, bytes.to_vec()),
            png::ColorType::GrayscaleAlpha => (1, bytes.chunks_exact(2).map(|p| p[0]).collect()),
            png::ColorType::Rgb => (3, bytes.to_vec()),
            png::ColorType::Rgba => (
                3,
                bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            ),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!("unsupported colour type {other:?}"),
                })
            }
        };
        Self::from_u8(h, w, channels, &pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(if self.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        let mut writer = encoder.write_header().map_err(to_err)?;
        writer.write_image_data(&self.to_u8()).map_err(to_err)?;
        writer.finish().map_err(to_err)
    }

    fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Dense n-dimensional array of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Constructor for values that are finite by construction.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Peak signal-to-noise ratio in dB with a peak value of 1.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable valid-mode Gaussian filter of one channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + t];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over every fully-contained 11×11 Gaussian
/// window (σ = 1.5), averaged across channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w, ch) = a.shape();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let pa = a.to_planar();
    let pb = b.to_planar();
    let plane = h * w;
    let mut total = 0.0;
    for c in 0..ch {
        let x = &pa[c * plane..(c + 1) * plane];
        let y = &pb[c * plane..(c + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(x, h, w, &k);
        let mu_y = filter_valid(y, h, w, &k);
        let e_xx = filter_valid(&xx, h, w, &k);
        let e_yy = filter_valid(&yy, h, w, &k);
        let e_xy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
        }
        total += acc / mu_x.len() as f64;
    }
    Ok(total / ch as f64)
}

/// Central second and fourth moments of a slice.
pub(crate) fn central_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m4 / n)
}

/// Pearson (non-excess) kurtosis `m4 / (m2² + ε)` over every element.
pub fn kurtosis_of(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!(
            "kurtosis needs at least 2 elements, got {}",
            values.len()
        )));
    }
    let (_, m2, m4) = central_moments(values);
    Ok(m4 / (m2 * m2 + KURTOSIS_EPS))
}

pub fn kurtosis(t: &Tensor) -> Result<f64> {
    kurtosis_of(t.data())
}
