//! Evaluation metrics: masked RMSE, bounding-box SSIM and temporal MAE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, ImageTensor, VideoSequence};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn check_mask(a: &ImageTensor, mask: &BinaryMask) -> Result<()> {
    if (mask.height(), mask.width()) != (a.height(), a.width()) {
        return Err(Error::shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Root-mean-square difference over all channels of the pixels in `mask`.
pub fn masked_rmse(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<f64> {
    a.same_shape(b)?;
    check_mask(a, mask)?;
    let c = a.channels();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, _) in mask.bits().iter().enumerate().filter(|(_, &m)| m) {
        for k in 0..c {
            let d = a.data()[i * c + k] as f64 - b.data()[i * c + k] as f64;
            sum += d * d;
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("RMSE mask is empty".into()));
    }
    Ok((sum / n as f64).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over the bounding box of `mask`, averaged across channels.
///
/// Uses an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03` and a
/// dynamic range of 1. Only windows fully inside the box contribute.
pub fn ssim_bbox(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<f64> {
    a.same_shape(b)?;
    check_mask(a, mask)?;
    let bb = mask
        .bbox()
        .ok_or_else(|| Error::EmptyRegion("SSIM mask is empty".into()))?;
    if bb.height() < SSIM_WINDOW || bb.width() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "mask bounding box {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            bb.height(),
            bb.width()
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let out_h = bb.height() - SSIM_WINDOW + 1;
    let out_w = bb.width() - SSIM_WINDOW + 1;
    let channels = a.channels();

    let per_channel: Vec<f64> = (0..channels)
        .into_par_iter()
        .map(|k| {
            let mut total = 0.0;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (dy, gy) in g.iter().enumerate() {
                        for (dx, gx) in g.iter().enumerate() {
                            let w = gy * gx;
                            let r = bb.row0 + oy + dy;
                            let c = bb.col0 + ox + dx;
                            let x = a.get(r, c, k) as f64;
                            let y = b.get(r, c, k) as f64;
                            ma += w * x;
                            mb += w * y;
                            saa += w * x * x;
                            sbb += w * y * y;
                            sab += w * x * y;
                        }
                    }
                    let va = saa - ma * ma;
                    let vb = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
            total / (out_h * out_w) as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / channels as f64)
}

fn frame_mask(f: &ImageTensor) -> BinaryMask {
    f.mask()
        .cloned()
        .unwrap_or_else(|| BinaryMask::full(f.height(), f.width()))
}

/// Mean absolute difference of each consecutive frame pair within the
/// intersection of the two masks. `None` marks an empty intersection.
pub fn temporal_mae(video: &VideoSequence) -> Result<Vec<Option<f64>>> {
    let frames = video.frames();
    if frames.len() < 2 {
        return Err(Error::invalid(format!(
            "temporal MAE needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let out = frames
        .par_windows(2)
        .map(|pair| -> Result<Option<f64>> {
            let (f0, f1) = (&pair[0], &pair[1]);
            let both = frame_mask(f0).intersect(&frame_mask(f1))?;
            let c = f0.channels();
            let mut sum = 0.0;
            let mut n = 0usize;
            for (i, _) in both.bits().iter().enumerate().filter(|(_, &m)| m) {
                for k in 0..c {
                    sum += (f0.data()[i * c + k] as f64 - f1.data()[i * c + k] as f64).abs();
                }
                n += c;
            }
            Ok((n > 0).then(|| sum / n as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}

/// Pearson correlation; zero when either series has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Metrics summary in the layout of the evaluation tables. LPIPS is not
/// computed and always reported as `"n/a"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: String,
    pub temporal_mae: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn for_images(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<Self> {
        Ok(MetricsReport {
            rmse: Some(masked_rmse(a, b, mask)?),
            ssim: Some(ssim_bbox(a, b, mask)?),
            lpips: "n/a".into(),
            temporal_mae: Vec::new(),
        })
    }

    pub fn for_video(video: &VideoSequence) -> Result<Self> {
        Ok(MetricsReport {
            rmse: None,
            ssim: None,
            lpips: "n/a".into(),
            temporal_mae: temporal_mae(video)?,
        })
    }
}
