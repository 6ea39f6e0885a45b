//! Per-frame video relighting and deep-video-prior stabilization with
//! optional light conditioning.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{pearson, temporal_mae, BinaryMask, ImageTensor, VideoSequence};
use crate::losses::{FilterBank, SubbandSpec};
use crate::nn::{clip_global_norm, mask_values, Optimizer, Stage2Config, Stage2Net, Tape, Tensor};
use crate::pipeline::{light_planes, relight, tiled_light_image, Stage1Model, Stage2Model};
use crate::sh::ShLight;

/// One frame with its target light and flickery per-frame relight.
#[derive(Clone, Debug)]
pub struct FrameLightPair {
    pub frame: ImageTensor,
    pub light: ShLight,
    pub relit: ImageTensor,
}

/// `h × w × 27` image whose every pixel holds the light's coefficients.
pub fn tile_light(light: &ShLight, h: usize, w: usize) -> Result<ImageTensor> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("tile size must be at least 1×1"));
    }
    tiled_light_image(light, h, w)
}

fn frame_mask(f: &ImageTensor) -> BinaryMask {
    f.mask()
        .cloned()
        .unwrap_or_else(|| BinaryMask::full(f.height(), f.width()))
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: {a} frames but {b} entries")));
    }
    Ok(())
}

/// Relights every frame independently. Frames without a mask are treated
/// as fully foreground.
pub fn relight_video(
    stage1: &Stage1Model,
    stage2: &Stage2Model,
    video: &VideoSequence,
    lights: &[ShLight],
) -> Result<VideoSequence> {
    check_lengths("lights", video.len(), lights.len())?;
    let frames = video
        .frames()
        .par_iter()
        .zip(lights)
        .map(|(f, l)| {
            let mask = frame_mask(f);
            relight(stage1, stage2, f, &mask, l)?.image.with_mask(mask)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, video.fps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvpConfig {
    pub epochs: usize,
    pub light_conditioning: bool,
    pub seed: u64,
    pub sf_weight: f64,
    pub l1_weight: f64,
    pub lr: f64,
    /// Cosine-anneal the step size from `lr` to this value over the run.
    pub final_lr: Option<f64>,
    pub width: usize,
    pub subbands: SubbandSpec,
    /// Concatenate the network input before the output convolution.
    pub input_skip: bool,
    /// Global gradient-norm clip per step.
    pub grad_clip: Option<f64>,
    /// Stop once the mean PSNR to the targets over an epoch exceeds this.
    pub auto_stop_psnr: Option<f64>,
}

impl Default for DvpConfig {
    fn default() -> Self {
        DvpConfig {
            epochs: 40,
            light_conditioning: true,
            seed: 0,
            sf_weight: 1e-2,
            l1_weight: 1.0,
            lr: 1e-3,
            final_lr: Some(1e-5),
            width: 8,
            subbands: SubbandSpec::default(),
            input_skip: true,
            grad_clip: Some(1.0),
            auto_stop_psnr: None,
        }
    }
}

impl DvpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.sf_weight >= 0.0 && self.l1_weight >= 0.0 && self.sf_weight + self.l1_weight > 0.0) {
            return Err(Error::invalid("loss weights must be non-negative and not both zero"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || matches!(self.final_lr, Some(f) if !(f >= 0.0 && f <= self.lr)) {
            return Err(Error::invalid(
                "learning rate must be positive and final_lr within [0, lr]",
            ));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        self.subbands.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Stabilized {
    pub video: VideoSequence,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Fits a freshly initialized refinement-architecture network that maps
/// each input frame (plus its tiled light when conditioning is on) to the
/// flickery relit frame, one step per frame in order, and returns its
/// predictions.
pub fn stabilize(
    video: &VideoSequence,
    relit: &VideoSequence,
    lights: Option<&[ShLight]>,
    cfg: &DvpConfig,
) -> Result<Stabilized> {
    cfg.validate()?;
    check_lengths("relit video", video.len(), relit.len())?;
    if video.is_empty() {
        return Err(Error::invalid("cannot stabilize an empty video"));
    }
    let lights = match (cfg.light_conditioning, lights) {
        (true, None) => return Err(Error::invalid("light conditioning needs per-frame lights")),
        (true, Some(l)) => {
            check_lengths("lights", video.len(), l.len())?;
            Some(l)
        }
        (false, _) => None,
    };
    let (h, w, c) = video.frames()[0].dims();
    if h != w || c != 3 || relit.frames()[0].dims() != (h, w, 3) {
        return Err(Error::shape(format!(
            "stabilization needs square RGB frames of matching size, got {:?} and {:?}",
            video.frames()[0].dims(),
            relit.frames()[0].dims()
        )));
    }
    let in_channels = if lights.is_some() { 30 } else { 3 };
    let (net, mut params) = Stage2Net::build(&Stage2Config {
        resolution: h,
        width: cfg.width,
        in_channels,
        out_channels: 3,
        zero_init_output: false,
        input_skip: cfg.input_skip,
        seed: cfg.seed,
    })?;
    let bank = Arc::new(FilterBank::new(&cfg.subbands)?);
    let prepared = (0..video.len())
        .map(|i| {
            let frame = &video.frames()[i];
            let mask = frame_mask(&relit.frames()[i]).intersect(&frame_mask(frame))?;
            let mut data = frame.masked(&mask)?.to_chw();
            if let Some(l) = lights {
                l[i].validate()?;
                data.extend(light_planes(&l[i], h, w));
            }
            let input = Tensor::new(vec![in_channels, h, w], data)?;
            let target = Tensor::from_image(&relit.frames()[i].masked(&mask)?);
            Ok((input, target, mask))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut opt = Optimizer::adam(&params);
    let mut epoch_loss = Vec::new();
    let total_steps = (cfg.epochs * prepared.len()) as f64;
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut mse_sum = 0.0;
        for (input, target, mask) in &prepared {
            let mut tape = Tape::new();
            let p = tape.params(&params);
            let x = tape.input(input.clone());
            let y = net.forward(&mut tape, &p, x)?;
            let y = tape.mask_mul(y, mask_values(mask))?;
            let t = tape.input(target.clone());
            let l1 = tape.l1(y, t, Some(mask_values(mask)))?;
            let l1 = tape.scale(l1, cfg.l1_weight)?;
            let sf = tape.sf(y, t, bank.clone())?;
            let sf = tape.scale(sf, cfg.sf_weight)?;
            let loss = tape.add(l1, sf)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Internal("stabilization loss became non-finite".into()));
            }
            let mse = tape.mse(y, t, Some(mask_values(mask)))?;
            mse_sum += tape.value(mse).item();
            let mut grads = tape.backward(loss)?.for_params(&params);
            clip_global_norm(&mut grads, cfg.grad_clip);
            let lr = match cfg.final_lr {
                Some(end) => end + 0.5 * (cfg.lr - end) * (1.0 + (PI * step as f64 / total_steps).cos()),
                None => cfg.lr,
            };
            step += 1;
            opt.step(&mut params, &grads, lr)?;
            params.round_to_f32();
            total += value;
        }
        epoch_loss.push(total / prepared.len() as f64);
        if let Some(threshold) = cfg.auto_stop_psnr {
            let mse = mse_sum / prepared.len() as f64;
            if mse > 0.0 && -10.0 * mse.log10() > threshold {
                break;
            }
        }
    }

    let frames = prepared
        .iter()
        .map(|(input, _, mask)| {
            let mut tape = Tape::new();
            let p = tape.params(&params);
            let x = tape.input(input.clone());
            let y = net.forward(&mut tape, &p, x)?;
            let (_, hh, ww) = tape.value(y).chw()?;
            ImageTensor::from_chw(hh, ww, 3, tape.value(y).data())?
                .masked(mask)?
                .with_mask(mask.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stabilized {
        video: VideoSequence::new(frames, video.fps)?,
        epoch_loss,
    })
}

/// Temporal-flicker comparison of two aligned videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlickerReport {
    pub before: Vec<Option<f64>>,
    pub after: Vec<Option<f64>>,
    pub mean_before: f64,
    pub mean_after: f64,
    /// `mean_after / mean_before`; 1 when both are zero.
    pub ratio: f64,
    pub before_intensity: Vec<f64>,
    pub after_intensity: Vec<f64>,
    pub reference_intensity: Vec<f64>,
    /// Pearson correlation of the after-intensity series with the
    /// reference series (the before series when no reference is given).
    pub correlation: f64,
}

fn mean_defined(series: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = series.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

pub fn flicker_report(
    before: &VideoSequence,
    after: &VideoSequence,
    reference: Option<&VideoSequence>,
) -> Result<FlickerReport> {
    check_lengths("after video", before.len(), after.len())?;
    if let Some(r) = reference {
        check_lengths("reference video", before.len(), r.len())?;
    }
    let b = temporal_mae(before)?;
    let a = temporal_mae(after)?;
    let (mean_before, mean_after) = (mean_defined(&b), mean_defined(&a));
    let ratio = if mean_before > 0.0 {
        mean_after / mean_before
    } else if mean_after == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let before_intensity = before.mean_intensity();
    let after_intensity = after.mean_intensity();
    let reference_intensity = reference.map_or_else(|| before_intensity.clone(), VideoSequence::mean_intensity);
    Ok(FlickerReport {
        correlation: pearson(&after_intensity, &reference_intensity),
        before: b,
        after: a,
        mean_before,
        mean_after,
        ratio,
        before_intensity,
        after_intensity,
        reference_intensity,
    })
}

impl FlickerReport {
    /// One row per frame; the MAE columns of row `i` describe the pair
    /// `(i − 1, i)` and are empty on the first row.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("frame,before_mae,after_mae,before_intensity,after_intensity,reference_intensity\n");
        for i in 0..self.before_intensity.len() {
            let pair = |s: &[Option<f64>]| if i == 0 { None } else { s.get(i - 1).copied().flatten() };
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                cell(pair(&self.before)),
                cell(pair(&self.after)),
                self.before_intensity[i],
                self.after_intensity[i],
                self.reference_intensity[i]
            ));
        }
        out
    }

    /// Writes `flicker.json` and `flicker.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("flicker.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("flicker.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}
