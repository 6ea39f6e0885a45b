//! Image and mask containers, file codecs and evaluation metrics.

mod codec;
mod metrics;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use codec::{decode_rlt1, decode_rlt1_prefix, encode_rlt1, read_tensor, write_tensor, RawTensor};
pub use metrics::{
    masked_rmse, pearson, ssim_bbox, temporal_mae, MetricsReport, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};

/// Inclusive bounding box of the set bits of a mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row1 - self.row0 + 1
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        BinaryMask { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / self.width, i % self.width);
            bb = Some(match bb {
                None => BBox {
                    row0: r,
                    row1: r,
                    col0: c,
                    col1: c,
                },
                Some(b) => BBox {
                    row0: b.row0.min(r),
                    row1: b.row1.max(r),
                    col0: b.col0.min(c),
                    col1: b.col1.max(c),
                },
            });
        }
        bb
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape("mask intersection of different sizes"));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Mask as a single-channel 0/1 image.
    pub fn to_image(&self) -> ImageTensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ImageTensor::new(self.height, self.width, 1, data).expect("mask dims are valid")
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::new(h, w, bits)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.bits.iter().map(|&b| if b { 255u8 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// `H × W × C` float image stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    mask: Option<BinaryMask>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
            mask: None,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ImageTensor {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            mask: None,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        let mut img = Self::zeros(height, width, channels);
        img.data.fill(value);
        img
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    img.data[(r * width + c) * channels + k] = f(r, c, k);
                }
            }
        }
        img
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Result<Self> {
        self.set_mask(Some(mask))?;
        Ok(self)
    }

    pub fn set_mask(&mut self, mask: Option<BinaryMask>) -> Result<()> {
        if let Some(m) = &mask {
            if (m.height, m.width) != (self.height, self.width) {
                return Err(Error::shape(format!(
                    "mask {}x{} does not match image {}x{}",
                    m.height, m.width, self.height, self.width
                )));
            }
        }
        self.mask = mask;
        Ok(())
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    /// Copy with everything outside `mask` set to zero.
    pub fn masked(&self, mask: &BinaryMask) -> Result<ImageTensor> {
        if (mask.height, mask.width) != (self.height, self.width) {
            return Err(Error::shape("mask does not match image"));
        }
        let mut out = self.clone();
        for (i, &bit) in mask.bits.iter().enumerate() {
            if !bit {
                out.data[i * self.channels..(i + 1) * self.channels].fill(0.0);
            }
        }
        out.mask = Some(mask.clone());
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f32, f32) -> f32) -> Result<ImageTensor> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a = f(*a, *b);
        }
        Ok(out)
    }

    /// Mean over pixels inside the mask (all pixels if none), all channels.
    pub fn masked_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.height * self.width {
            if self.mask.as_ref().is_none_or(|m| m.bits[i]) {
                for k in 0..self.channels {
                    sum += self.data[i * self.channels + k] as f64;
                }
                n += self.channels;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Channel-major (`C × H × W`) f64 copy for the autodiff engine.
    pub fn to_chw(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; hw * self.channels];
        for i in 0..hw {
            for k in 0..self.channels {
                out[k * hw + i] = self.data[i * self.channels + k] as f64;
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f64]) -> Result<Self> {
        let hw = height * width;
        if chw.len() != hw * channels {
            return Err(Error::shape("CHW buffer length does not match dimensions"));
        }
        let mut data = vec![0.0f32; hw * channels];
        for k in 0..channels {
            for i in 0..hw {
                data[i * channels + k] = chw[k * hw + i] as f32;
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.height, self.width, self.channels],
            data: self.data.clone(),
        }
    }

    pub fn from_raw(raw: RawTensor) -> Result<Self> {
        match raw.dims.as_slice() {
            &[h, w, c] => Self::new(h, w, c, raw.data),
            &[h, w] => Self::new(h, w, 1, raw.data),
            dims => Err(Error::invalid(format!(
                "expected a 2-D or 3-D tensor, got dims {dims:?}"
            ))),
        }
    }

    pub fn read_rlt(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_raw(read_tensor(path)?)
    }

    pub fn write_rlt(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor(path, &self.to_raw())
    }

    /// Reads an 8-bit PNG as values in [0, 1]; grey stays 1 channel, alpha
    /// is dropped.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().channel_count() == 1 {
            let g = img.into_luma8();
            let data = g.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            Self::new(h, w, 1, data)
        } else {
            let rgb = img.into_rgb8();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Self::new(h, w, 3, data)
        }
    }

    /// Writes 1- or 3-channel images as 8-bit PNG, clamping to [0, 1].
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes)
                .expect("buffer matches dimensions")
                .save(path.as_ref())?,
            3 => image::RgbImage::from_raw(w, h, bytes)
                .expect("buffer matches dimensions")
                .save(path.as_ref())?,
            c => return Err(Error::invalid(format!("PNG output needs 1 or 3 channels, got {c}"))),
        }
        Ok(())
    }
}

/// Ordered frames sharing one shape, each carrying its own mask.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<ImageTensor>,
    pub fps: f64,
}

impl VideoSequence {
    pub fn new(frames: Vec<ImageTensor>, fps: f64) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if f.dims() != first.dims() {
                    return Err(Error::shape(format!(
                        "frame {i} is {:?}, frame 0 is {:?}",
                        f.dims(),
                        first.dims()
                    )));
                }
            }
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn frames(&self) -> &[ImageTensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean intensity inside each frame's mask.
    pub fn mean_intensity(&self) -> Vec<f64> {
        self.frames.iter().map(ImageTensor::masked_mean).collect()
    }

    /// Reads `frames_dir/*.png` in lexicographic order, pairing each with
    /// the same-named file in `masks_dir` when given.
    pub fn read_dirs(frames_dir: &Path, masks_dir: Option<&Path>, fps: f64) -> Result<Self> {
        let names = sorted_pngs(frames_dir)?;
        let mut frames = Vec::with_capacity(names.len());
        for name in &names {
            let mut img = ImageTensor::read_png(frames_dir.join(name))?;
            if let Some(md) = masks_dir {
                img.set_mask(Some(BinaryMask::read_png(md.join(name))?))?;
            }
            frames.push(img);
        }
        Self::new(frames, fps)
    }

    /// Writes `frame_0000.png`, ... and the masks when `masks_dir` is given.
    pub fn write_dirs(&self, frames_dir: &Path, masks_dir: Option<&Path>) -> Result<()> {
        fs::create_dir_all(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
        if let Some(md) = masks_dir {
            fs::create_dir_all(md).map_err(|e| Error::io(md, e))?;
        }
        for (i, f) in self.frames.iter().enumerate() {
            let name = frame_name(i);
            f.write_png(frames_dir.join(&name))?;
            if let (Some(md), Some(m)) = (masks_dir, f.mask()) {
                m.write_png(md.join(&name))?;
            }
        }
        Ok(())
    }
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            names.push(PathBuf::from(entry.file_name()));
        }
    }
    names.sort();
    Ok(names)
}
