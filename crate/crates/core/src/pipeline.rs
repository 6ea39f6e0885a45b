//! Two-stage training and inference: diffuse inverse rendering, frozen
//! reconstruction, residual refinement and relighting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::masked_rmse;
use crate::imaging::{BinaryMask, ImageTensor};
use crate::losses::{self, FilterBank, FocalParams, LossBreakdown, Stage1Target, SubbandSpec};
use crate::nn::{
    clip_global_norm, mask_values, stage1_input, Checkpoint, LrSchedule, Optimizer, ParamStore, Stage1Config,
    Stage1Net, Stage2Config, Stage2Net, Stage2Variant, Tape, Tensor,
};
use crate::prt::{compose_shading, reconstruct, LoadedSample, TransportMap};
use crate::sh::{ShLight, SH_CHANNELS, SH_COEFFS};

pub const STAGE1_KIND: &str = "stage1";
pub const STAGE2_KIND: &str = "stage2";

/// Everything the first stage infers from one image.
#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub albedo: ImageTensor,
    /// One-channel skin probability.
    pub skin: ImageTensor,
    pub transport: TransportMap,
    pub light: ShLight,
    /// Always `reconstruct(albedo, compose_shading(transport, light))`.
    pub reconstruction: ImageTensor,
}

impl Stage1Output {
    /// Diffuse image of the inferred albedo and transport under `light`.
    pub fn recompose(&self, light: &ShLight) -> Result<ImageTensor> {
        reconstruct(&self.albedo, &compose_shading(&self.transport, light)?)
    }

    pub fn mask(&self) -> &BinaryMask {
        self.transport.mask()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: LrSchedule::default(),
            seed: 0,
            manifest: None,
            checkpoint_every: 0,
            max_steps: None,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr.min_lr > 0.0 && self.lr.min_lr <= self.lr.max_lr && self.lr.cycle_epochs > 0.0) {
            return Err(Error::invalid(
                "learning-rate schedule needs 0 < min <= max and a positive cycle",
            ));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize, i: usize, n: usize) -> f64 {
        self.lr.lr_at(epoch as f64 + i as f64 / n as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1TrainConfig {
    pub train: TrainConfig,
    pub net: Stage1Config,
    pub subbands: SubbandSpec,
    pub focal: FocalParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2TrainConfig {
    pub train: TrainConfig,
    pub variant: Stage2Variant,
    pub width: usize,
}

impl Default for Stage2TrainConfig {
    fn default() -> Self {
        Stage2TrainConfig {
            train: TrainConfig::default(),
            variant: Stage2Variant::B,
            width: 8,
        }
    }
}

fn dataset_error(s: &LoadedSample, what: impl std::fmt::Display) -> Error {
    Error::Dataset(format!("sample {}/{}: {what}", s.scene_id, s.light_index))
}

/// Confirms a sample carries every ground-truth component at `res`.
pub fn check_sample(s: &LoadedSample, res: usize) -> Result<()> {
    let hw = (res, res);
    let checks = [
        ("image", s.image.dims(), 3),
        ("photo", s.photo.dims(), 3),
        ("albedo", s.albedo.dims(), 3),
        ("transport", s.transport.data().dims(), 9),
    ];
    for (what, (h, w, c), want_c) in checks {
        if (h, w) != hw || c != want_c {
            return Err(dataset_error(
                s,
                format!("{what} is {h}×{w}×{c}, expected {res}×{res}×{want_c}"),
            ));
        }
    }
    for (what, m) in [("mask", &s.mask), ("skin mask", &s.skin)] {
        if (m.height(), m.width()) != hw {
            return Err(dataset_error(s, format!("{what} does not match resolution {res}")));
        }
    }
    if s.mask.is_empty() {
        return Err(dataset_error(s, "mask is empty"));
    }
    s.light.validate().map_err(|e| dataset_error(s, e))
}

fn check_image(image: &ImageTensor, mask: &BinaryMask, res: usize) -> Result<()> {
    if image.dims() != (res, res, 3) || (mask.height(), mask.width()) != (res, res) {
        return Err(Error::shape(format!(
            "network expects a {res}×{res} RGB image and mask, got {:?}",
            image.dims()
        )));
    }
    Ok(())
}

fn tensor_to_image(t: &Tensor, mask: &BinaryMask) -> Result<ImageTensor> {
    let (c, h, w) = t.chw()?;
    ImageTensor::from_chw(h, w, c, t.data())?.masked(mask)
}

/// A first-stage network with its parameters.
#[derive(Clone, Debug)]
pub struct Stage1Model {
    pub net: Stage1Net,
    pub params: ParamStore,
}

impl Stage1Model {
    pub fn new(config: &Stage1Config) -> Result<Self> {
        let (net, params) = Stage1Net::build(config)?;
        Ok(Stage1Model { net, params })
    }

    pub fn resolution(&self) -> usize {
        self.net.config.resolution
    }

    pub fn checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            STAGE1_KIND,
            serde_json::to_value(&self.net.config)?,
            step,
            self.params.clone(),
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(STAGE1_KIND)?;
        let mut model = Stage1Model::new(&ck.config::<Stage1Config>()?)?;
        model.params.check_layout(&ck.params)?;
        model.params = ck.params.clone();
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    /// Decomposes a masked RGB image at the network resolution.
    pub fn infer(&self, image: &ImageTensor, mask: &BinaryMask) -> Result<Stage1Output> {
        check_image(image, mask, self.resolution())?;
        let mut tape = Tape::new();
        let p = tape.params(&self.params);
        let x = tape.input(stage1_input(image, mask)?);
        let out = self.net.forward(&mut tape, &p, x, mask_values(mask))?;
        let albedo = tensor_to_image(tape.value(out.albedo), mask)?;
        let skin = tensor_to_image(tape.value(out.skin), mask)?;
        let transport = TransportMap::new(tensor_to_image(tape.value(out.transport), mask)?, mask.clone())?;
        let light = ShLight::from_slice(tape.value(out.light).data())?;
        let reconstruction = reconstruct(&albedo, &compose_shading(&transport, &light)?)?;
        Ok(Stage1Output {
            albedo,
            skin,
            transport,
            light,
            reconstruction,
        })
    }
}

/// Trained model plus the per-step loss log.
#[derive(Clone, Debug)]
pub struct Stage1Training {
    pub model: Stage1Model,
    pub log: Vec<LossBreakdown>,
    /// Global gradient norm of each step before clipping.
    pub grad_norms: Vec<f64>,
}

struct Outputs {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl Outputs {
    fn new(dir: Option<&Path>, log_name: &str) -> Result<Self> {
        let log = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let p = d.join(log_name);
                Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
            }
            None => None,
        };
        Ok(Outputs {
            dir: dir.map(Path::to_path_buf),
            log,
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        if let (Some(w), Some(d)) = (self.log.as_mut(), self.dir.as_ref()) {
            writeln!(w, "{text}").map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str, ck: &Checkpoint) -> Result<()> {
        match &self.dir {
            Some(d) => ck.write(d.join(name)),
            None => Ok(()),
        }
    }

    fn finish(mut self) -> Result<()> {
        if let (Some(w), Some(d)) = (self.log.as_mut(), self.dir.as_ref()) {
            w.flush().map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }
}

/// One optimizer step of a training run.
struct PlannedStep {
    sample: usize,
    lr: f64,
    /// Set on the last step of an epoch (1-based epoch number).
    ends_epoch: Option<usize>,
}

/// Shuffled visiting order and learning rates for a whole run.
fn plan(cfg: &TrainConfig, n: usize) -> Vec<PlannedStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = Vec::with_capacity(cfg.epochs * n);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (i, &sample) in order.iter().enumerate() {
            steps.push(PlannedStep {
                sample,
                lr: cfg.lr_at(epoch, i, n),
                ends_epoch: (i + 1 == n).then_some(epoch + 1),
            });
        }
    }
    if let Some(m) = cfg.max_steps {
        steps.truncate(m);
    }
    steps
}

fn wants_checkpoint(cfg: &TrainConfig, step: &PlannedStep) -> Option<usize> {
    step.ends_epoch
        .filter(|e| cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0)
}

/// Trains the first stage with Adam on `samples` (batch size 1). Writes
/// `stage1_loss.jsonl`, `stage1.ckpt` and any intermediate
/// `stage1_epochNNN.ckpt` into `out_dir` when given.
pub fn train_stage1(
    cfg: &Stage1TrainConfig,
    samples: &[LoadedSample],
    out_dir: Option<&Path>,
) -> Result<Stage1Training> {
    cfg.train.validate()?;
    cfg.subbands.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    for s in samples {
        check_sample(s, cfg.net.resolution)?;
    }
    let mut model = Stage1Model::new(&cfg.net)?;
    let data = samples
        .iter()
        .map(|s| Ok((stage1_input(&s.image, &s.mask)?, Stage1Target::from_sample(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let bank = Arc::new(FilterBank::new(&cfg.subbands)?);
    let mut opt = Optimizer::adam(&model.params);
    let mut out = Outputs::new(out_dir, "stage1_loss.jsonl")?;
    let mut log = Vec::new();
    let mut grad_norms = Vec::new();
    let plan = plan(&cfg.train, data.len());
    for (step, planned) in plan.iter().enumerate() {
        let (input, target) = &data[planned.sample];
        let mut tape = Tape::new();
        let p = tape.params(&model.params);
        let x = tape.input(input.clone());
        let vars = model.net.forward(&mut tape, &p, x, target.mask.clone())?;
        let terms = losses::stage1_terms(&mut tape, &vars, target, &bank, cfg.focal)?;
        let total = losses::total(&mut tape, &terms)?;
        let b = losses::breakdown(&tape, &terms, total);
        if !b.total.is_finite() {
            return Err(Error::Internal(format!(
                "stage-1 loss became non-finite at step {step}"
            )));
        }
        let mut grads = tape.backward(total)?.for_params(&model.params);
        grad_norms.push(clip_global_norm(&mut grads, cfg.train.grad_clip));
        opt.step(&mut model.params, &grads, planned.lr)?;
        model.params.round_to_f32();
        out.line(&b.to_json_line(step as u64))?;
        log.push(b);
        if let Some(epoch) = wants_checkpoint(&cfg.train, planned) {
            out.checkpoint(
                &format!("stage1_epoch{epoch:03}.ckpt"),
                &model.checkpoint(step as u64 + 1)?,
            )?;
        }
    }
    out.checkpoint("stage1.ckpt", &model.checkpoint(plan.len() as u64)?)?;
    out.finish()?;
    Ok(Stage1Training { model, log, grad_norms })
}

/// Mean over samples of the masked RMSE between the first-stage
/// reconstruction of `image` and `image` itself.
pub fn stage1_reconstruction_rmse(model: &Stage1Model, samples: &[LoadedSample]) -> Result<f64> {
    mean_over(samples, |s| {
        let out = model.infer(&s.image, &s.mask)?;
        masked_rmse(&out.reconstruction, &s.image, &s.mask)
    })
}

fn mean_over(samples: &[LoadedSample], f: impl Fn(&LoadedSample) -> Result<f64> + Sync + Send) -> Result<f64> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let values = samples.par_iter().map(f).collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `27 × H × W` planes holding the light coefficients, channel-major.
pub fn light_planes(light: &ShLight, h: usize, w: usize) -> Vec<f64> {
    light
        .to_vec()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, h * w))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stage2Header {
    variant: Stage2Variant,
    net: Stage2Config,
    stage1_fingerprint: String,
}

/// Refinement network bound to the first-stage model it was trained on.
#[derive(Clone, Debug)]
pub struct Stage2Model {
    pub net: Stage2Net,
    pub params: ParamStore,
    pub variant: Stage2Variant,
    pub stage1_fingerprint: String,
}

/// Result of one refinement pass.
#[derive(Clone, Debug)]
pub struct Refined {
    /// Final image before clamping, masked.
    pub output: ImageTensor,
    /// `output − diffuse`, masked.
    pub residual: ImageTensor,
}

impl Stage2Model {
    pub fn new(
        variant: Stage2Variant,
        resolution: usize,
        width: usize,
        seed: u64,
        stage1: &Stage1Model,
    ) -> Result<Self> {
        let (net, params) = Stage2Net::build(&Stage2Config::for_variant(variant, resolution, width, seed))?;
        Ok(Stage2Model {
            net,
            params,
            variant,
            stage1_fingerprint: stage1.fingerprint(),
        })
    }

    pub fn resolution(&self) -> usize {
        self.net.config.resolution
    }

    pub fn checkpoint(&self, step: u64) -> Result<Checkpoint> {
        let header = Stage2Header {
            variant: self.variant,
            net: self.net.config.clone(),
            stage1_fingerprint: self.stage1_fingerprint.clone(),
        };
        Ok(Checkpoint::new(
            STAGE2_KIND,
            serde_json::to_value(header)?,
            step,
            self.params.clone(),
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(STAGE2_KIND)?;
        let header: Stage2Header = ck.config()?;
        let (net, params) = Stage2Net::build(&header.net)?;
        params.check_layout(&ck.params)?;
        Ok(Stage2Model {
            net,
            params: ck.params.clone(),
            variant: header.variant,
            stage1_fingerprint: header.stage1_fingerprint,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Fails unless `stage1` is the model this refinement was trained on.
    pub fn check_compatible(&self, stage1: &Stage1Model) -> Result<()> {
        if stage1.fingerprint() != self.stage1_fingerprint {
            return Err(Error::invalid(
                "stage-2 checkpoint was trained on a different stage-1 model",
            ));
        }
        if stage1.resolution() != self.resolution() {
            return Err(Error::invalid("stage-1 and stage-2 resolutions differ"));
        }
        Ok(())
    }

    fn input(&self, photo: &ImageTensor, mask: &BinaryMask, diffuse: &ImageTensor, light: &ShLight) -> Result<Tensor> {
        let res = self.resolution();
        check_image(photo, mask, res)?;
        check_image(diffuse, mask, res)?;
        let mut data = photo.masked(mask)?.to_chw();
        data.extend(diffuse.masked(mask)?.to_chw());
        if self.variant == Stage2Variant::C {
            data.extend(light_planes(light, res, res));
        }
        Tensor::new(vec![self.variant.input_channels(), res, res], data)
    }

    /// Records the refined image on `tape` (unclamped, masked).
    fn forward(
        &self,
        tape: &mut Tape,
        photo: &ImageTensor,
        mask: &BinaryMask,
        diffuse: &ImageTensor,
        light: &ShLight,
    ) -> Result<crate::nn::Var> {
        let p = tape.params(&self.params);
        let x = tape.input(self.input(photo, mask, diffuse, light)?);
        let y = self.net.forward(tape, &p, x)?;
        let m = mask_values(mask);
        let y = tape.mask_mul(y, m)?;
        if self.variant.is_residual() {
            let d = tape.input(Tensor::from_image(&diffuse.masked(mask)?));
            tape.add(d, y)
        } else {
            Ok(y)
        }
    }

    /// Refines `diffuse` (rendered under `light`) given the observed photo.
    pub fn refine(
        &self,
        photo: &ImageTensor,
        mask: &BinaryMask,
        diffuse: &ImageTensor,
        light: &ShLight,
    ) -> Result<Refined> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, photo, mask, diffuse, light)?;
        let output = tensor_to_image(tape.value(y), mask)?;
        let residual = output.zip_map(&diffuse.masked(mask)?, |a, b| a - b)?.masked(mask)?;
        Ok(Refined { output, residual })
    }
}

#[derive(Clone, Debug)]
pub struct Stage2Training {
    pub model: Stage2Model,
    /// Per-step L1 loss.
    pub log: Vec<f64>,
    /// Global gradient norm of each step before clipping.
    pub grad_norms: Vec<f64>,
}

/// Trains the refinement network with RAdam under an L1 loss against the
/// photos, with the first stage frozen. Writes `stage2_loss.jsonl` and
/// `stage2.ckpt` into `out_dir` when given.
pub fn train_stage2(
    cfg: &Stage2TrainConfig,
    stage1: &Stage1Model,
    samples: &[LoadedSample],
    out_dir: Option<&Path>,
) -> Result<Stage2Training> {
    cfg.train.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let res = stage1.resolution();
    for s in samples {
        check_sample(s, res)?;
    }
    let frozen = stage1.fingerprint();
    let inferred = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| stage1.infer(&s.photo, &s.mask))
            .collect::<Result<Vec<_>>>()?
    };
    let mut model = Stage2Model::new(cfg.variant, res, cfg.width, cfg.train.seed, stage1)?;
    let mut opt = Optimizer::radam(&model.params);
    let mut out = Outputs::new(out_dir, "stage2_loss.jsonl")?;
    let mut log = Vec::new();
    let mut grad_norms = Vec::new();
    let plan = plan(&cfg.train, samples.len());
    for (step, planned) in plan.iter().enumerate() {
        let (s, inf) = (&samples[planned.sample], &inferred[planned.sample]);
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &s.photo, &s.mask, &inf.reconstruction, &inf.light)?;
        let target = tape.input(Tensor::from_image(&s.photo.masked(&s.mask)?));
        let loss = tape.l1(y, target, Some(mask_values(&s.mask)))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Internal(format!(
                "stage-2 loss became non-finite at step {step}"
            )));
        }
        let mut grads = tape.backward(loss)?.for_params(&model.params);
        grad_norms.push(clip_global_norm(&mut grads, cfg.train.grad_clip));
        opt.step(&mut model.params, &grads, planned.lr)?;
        model.params.round_to_f32();
        out.line(&serde_json::json!({ "step": step, "l1": value }).to_string())?;
        log.push(value);
        if let Some(epoch) = wants_checkpoint(&cfg.train, planned) {
            out.checkpoint(
                &format!("stage2_epoch{epoch:03}.ckpt"),
                &model.checkpoint(step as u64 + 1)?,
            )?;
        }
    }
    if stage1.fingerprint() != frozen {
        return Err(Error::Internal(
            "stage-1 parameters changed during stage-2 training".into(),
        ));
    }
    out.checkpoint("stage2.ckpt", &model.checkpoint(plan.len() as u64)?)?;
    out.finish()?;
    Ok(Stage2Training { model, log, grad_norms })
}

/// Output of [`relight`] with its intermediate parts.
#[derive(Clone, Debug)]
pub struct Relit {
    /// Final image, clamped to `[0, ∞)` and masked.
    pub image: ImageTensor,
    /// Diffuse recomposition under the new light.
    pub diffuse: ImageTensor,
    pub residual: ImageTensor,
    pub stage1: Stage1Output,
}

/// Relights `image` under `light`: decomposes it, recomposes the diffuse
/// image under the new light and refines it.
pub fn relight(
    stage1: &Stage1Model,
    stage2: &Stage2Model,
    image: &ImageTensor,
    mask: &BinaryMask,
    light: &ShLight,
) -> Result<Relit> {
    light.validate()?;
    stage2.check_compatible(stage1)?;
    let s1 = stage1.infer(image, mask)?;
    let diffuse = s1.recompose(light)?;
    let refined = stage2.refine(image, mask, &diffuse, light)?;
    Ok(Relit {
        image: refined.output.map(|v| v.max(0.0)).masked(mask)?,
        diffuse,
        residual: refined.residual,
        stage1: s1,
    })
}

/// Mean masked RMSE against the photos of the first-stage reconstruction
/// alone and of the refined two-stage output.
pub fn two_stage_rmse(stage1: &Stage1Model, stage2: &Stage2Model, samples: &[LoadedSample]) -> Result<(f64, f64)> {
    let one = mean_over(samples, |s| {
        let out = stage1.infer(&s.photo, &s.mask)?;
        masked_rmse(&out.reconstruction, &s.photo, &s.mask)
    })?;
    let two = mean_over(samples, |s| {
        let r = relight(
            stage1,
            stage2,
            &s.photo,
            &s.mask,
            &stage1.infer(&s.photo, &s.mask)?.light,
        )?;
        masked_rmse(&r.image, &s.photo, &s.mask)
    })?;
    Ok((one, two))
}

/// Mean absolute residual over masked pixels, averaged over samples.
pub fn mean_abs_residual(stage1: &Stage1Model, stage2: &Stage2Model, samples: &[LoadedSample]) -> Result<f64> {
    mean_over(samples, |s| {
        let inf = stage1.infer(&s.photo, &s.mask)?;
        let r = stage2.refine(&s.photo, &s.mask, &inf.reconstruction, &inf.light)?;
        let c = r.residual.channels();
        let n = (s.mask.count() * c) as f64;
        Ok(r.residual.data().iter().map(|v| v.abs() as f64).sum::<f64>() / n)
    })
}

/// Tiled light as an `H × W × 27` image.
pub(crate) fn tiled_light_image(light: &ShLight, h: usize, w: usize) -> Result<ImageTensor> {
    debug_assert_eq!(SH_CHANNELS * SH_COEFFS, 27);
    ImageTensor::from_chw(h, w, SH_CHANNELS * SH_COEFFS, &light_planes(light, h, w))
}
