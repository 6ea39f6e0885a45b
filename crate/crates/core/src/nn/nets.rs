use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        init: Init,
        seed: u64,
    ) -> Self {
        let init = match init {
            Init::He { .. } => Init::He { fan_in: c_in * k * k },
            z => z,
        };
        Conv {
            w: store.add(&format!("{name}.w"), &[c_out, c_in, k, k], init, seed),
            b: store.add(&format!("{name}.b"), &[c_out], Init::Zeros, seed),
            stride,
        }
    }

    fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.w], p[self.b], self.stride)
    }

    fn apply_act(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let y = self.apply(tape, p, x)?;
        tape.leaky_relu(y, SLOPE)
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, seed: u64) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), &[n_out, n_in], Init::He { fan_in: n_in }, seed),
            b: store.add(&format!("{name}.b"), &[n_out], Init::Zeros, seed),
        }
    }
}

/// Six convolutions (three of them stride 2) and a residual block.
#[derive(Clone, Debug)]
struct Encoder {
    convs: [Conv; 6],
    res: [Conv; 2],
}

struct Encoded {
    bottleneck: Var,
    /// Full, half and quarter resolution features.
    skips: [Var; 3],
}

impl Encoder {
    fn new(store: &mut ParamStore, c_in: usize, c: usize, seed: u64) -> Self {
        let he = Init::He { fan_in: 0 };
        let spec = [
            (c_in, c, 1),
            (c, 2 * c, 2),
            (2 * c, 2 * c, 1),
            (2 * c, 4 * c, 2),
            (4 * c, 4 * c, 1),
            (4 * c, 8 * c, 2),
        ];
        let convs = std::array::from_fn(|i| {
            let (a, b, s) = spec[i];
            Conv::new(store, &format!("enc.conv{}", i + 1), a, b, 3, s, he, seed)
        });
        let res = std::array::from_fn(|i| Conv::new(store, &format!("enc.res{}", i + 1), 8 * c, 8 * c, 3, 1, he, seed));
        Encoder { convs, res }
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Encoded> {
        let mut h = x;
        let mut skips = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.apply_act(tape, p, h)?;
            if i % 2 == 0 {
                skips.push(h);
            }
        }
        let r = self.res[0].apply_act(tape, p, h)?;
        let r = self.res[1].apply(tape, p, r)?;
        let sum = tape.add(h, r)?;
        let bottleneck = tape.leaky_relu(sum, SLOPE)?;
        Ok(Encoded {
            bottleneck,
            skips: [skips[0], skips[1], skips[2]],
        })
    }
}

/// Three upsample + conv stages back to full resolution, then an output
/// convolution.
#[derive(Clone, Debug)]
struct Decoder {
    ups: [Conv; 3],
    out: Conv,
    skips: bool,
    input_skip: bool,
}

impl Decoder {
    /// `input_skip` holds the network input's channel count when the input
    /// is concatenated in front of the output convolution.
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        c: usize,
        c_out: usize,
        skips: bool,
        input_skip: Option<usize>,
        zero_out: bool,
        seed: u64,
    ) -> Self {
        let he = Init::He { fan_in: 0 };
        let skip = |ch: usize| if skips { ch } else { 0 };
        let spec = [
            (8 * c + skip(4 * c), 4 * c),
            (4 * c + skip(2 * c), 2 * c),
            (2 * c + skip(c), c),
        ];
        let ups = std::array::from_fn(|i| {
            Conv::new(
                store,
                &format!("{name}.up{}", i + 1),
                spec[i].0,
                spec[i].1,
                3,
                1,
                he,
                seed,
            )
        });
        let out_init = if zero_out { Init::Zeros } else { he };
        let out = Conv::new(
            store,
            &format!("{name}.out"),
            c + input_skip.unwrap_or(0),
            c_out,
            3,
            1,
            out_init,
            seed,
        );
        Decoder {
            ups,
            out,
            skips,
            input_skip: input_skip.is_some(),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], enc: &Encoded, input: Var) -> Result<Var> {
        let mut h = enc.bottleneck;
        for (i, conv) in self.ups.iter().enumerate() {
            h = tape.upsample2x(h)?;
            if self.skips {
                h = tape.concat(&[h, enc.skips[2 - i]])?;
            }
            h = conv.apply_act(tape, p, h)?;
        }
        if self.input_skip {
            h = tape.concat(&[h, input])?;
        }
        self.out.apply(tape, p, h)
    }
}

fn check_resolution(res: usize) -> Result<()> {
    if res < 32 || !res.is_power_of_two() {
        return Err(Error::invalid(format!(
            "network resolution must be a power of two >= 32, got {res}"
        )));
    }
    Ok(())
}

fn check_input(tape: &Tape, x: Var, c: usize, res: usize) -> Result<()> {
    let (ci, h, w) = tape.value(x).chw()?;
    if (ci, h, w) != (c, res, res) {
        return Err(Error::shape(format!(
            "network expects {c}×{res}×{res} input, got {ci}×{h}×{w}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub resolution: usize,
    /// Channel width of the first encoder layer.
    pub width: usize,
    pub light_hidden: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            resolution: 64,
            width: 8,
            light_hidden: 64,
            seed: 0,
        }
    }
}

/// Input channels of the first stage: masked RGB plus the mask.
pub const STAGE1_INPUT_CHANNELS: usize = 4;

/// Shared encoder; albedo (+ skin logit) and transport decoders with
/// skips; a light head on the pooled bottleneck.
#[derive(Clone, Debug)]
pub struct Stage1Net {
    pub config: Stage1Config,
    encoder: Encoder,
    albedo: Decoder,
    transport: Decoder,
    light: [Linear; 2],
}

/// Graph nodes produced by one first-stage forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Stage1Vars {
    /// `3 × H × W`, in `[0, 1]`, masked.
    pub albedo: Var,
    /// `1 × H × W` raw logit.
    pub skin_logit: Var,
    /// `1 × H × W` sigmoid of the logit.
    pub skin: Var,
    /// `9 × H × W`, masked.
    pub transport: Var,
    /// 27 light coefficients, channel-major.
    pub light: Var,
}

impl Stage1Net {
    pub fn build(config: &Stage1Config) -> Result<(Self, ParamStore)> {
        check_resolution(config.resolution)?;
        if config.width == 0 || config.light_hidden == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        let (c, seed) = (config.width, config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, STAGE1_INPUT_CHANNELS, c, seed);
        let albedo = Decoder::new(&mut store, "dec_a", c, 4, true, None, false, seed);
        let transport = Decoder::new(&mut store, "dec_t", c, 9, true, None, false, seed);
        let light = [
            Linear::new(&mut store, "dec_l.fc1", 8 * c, config.light_hidden, seed),
            Linear::new(&mut store, "dec_l.fc2", config.light_hidden, 27, seed),
        ];
        Ok((
            Stage1Net {
                config: config.clone(),
                encoder,
                albedo,
                transport,
                light,
            },
            store,
        ))
    }

    /// Runs the net on a `4 × R × R` input; `mask` (`R·R` values) zeroes
    /// albedo and transport outside the figure.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var, mask: Arc<Vec<f64>>) -> Result<Stage1Vars> {
        let res = self.config.resolution;
        check_input(tape, input, STAGE1_INPUT_CHANNELS, res)?;
        let enc = self.encoder.forward(tape, params, input)?;
        let a = self.albedo.forward(tape, params, &enc, input)?;
        let rgb = tape.slice_channels(a, 0, 3)?;
        let rgb = tape.sigmoid(rgb)?;
        let albedo = tape.mask_mul(rgb, mask.clone())?;
        let skin_logit = tape.slice_channels(a, 3, 4)?;
        let skin = tape.sigmoid(skin_logit)?;
        let t = self.transport.forward(tape, params, &enc, input)?;
        let transport = tape.mask_mul(t, mask)?;
        let pooled = tape.global_avg_pool(enc.bottleneck)?;
        let h = tape.linear(pooled, params[self.light[0].w], params[self.light[0].b])?;
        let h = tape.leaky_relu(h, SLOPE)?;
        let light = tape.linear(h, params[self.light[1].w], params[self.light[1].b])?;
        Ok(Stage1Vars {
            albedo,
            skin_logit,
            skin,
            transport,
            light,
        })
    }
}

/// Refinement architecture candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Variant {
    /// Predicts the final image directly.
    A,
    /// Predicts a residual added to the diffuse reconstruction.
    #[default]
    B,
    /// As `B`, with the inferred light tiled into the input.
    C,
}

impl Stage2Variant {
    pub fn input_channels(self) -> usize {
        match self {
            Stage2Variant::A | Stage2Variant::B => 6,
            Stage2Variant::C => 6 + 27,
        }
    }

    pub fn is_residual(self) -> bool {
        self != Stage2Variant::A
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub resolution: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Zero-initialise the output layer.
    pub zero_init_output: bool,
    /// Feed the input straight into the output convolution.
    pub input_skip: bool,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config::for_variant(Stage2Variant::B, 64, 8, 0)
    }
}

impl Stage2Config {
    pub fn for_variant(variant: Stage2Variant, resolution: usize, width: usize, seed: u64) -> Self {
        Stage2Config {
            resolution,
            width,
            in_channels: variant.input_channels(),
            out_channels: 3,
            zero_init_output: variant.is_residual(),
            input_skip: true,
            seed,
        }
    }
}

/// U-Net with the first-stage encoder and a single skip-connected decoder.
#[derive(Clone, Debug)]
pub struct Stage2Net {
    pub config: Stage2Config,
    encoder: Encoder,
    decoder: Decoder,
}

impl Stage2Net {
    pub fn build(config: &Stage2Config) -> Result<(Self, ParamStore)> {
        check_resolution(config.resolution)?;
        if config.width == 0 || config.in_channels == 0 || config.out_channels == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, config.in_channels, config.width, config.seed);
        let decoder = Decoder::new(
            &mut store,
            "dec",
            config.width,
            config.out_channels,
            true,
            config.input_skip.then_some(config.in_channels),
            config.zero_init_output,
            config.seed,
        );
        Ok((
            Stage2Net {
                config: config.clone(),
                encoder,
                decoder,
            },
            store,
        ))
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var> {
        check_input(tape, input, self.config.in_channels, self.config.resolution)?;
        let enc = self.encoder.forward(tape, params, input)?;
        self.decoder.forward(tape, params, &enc, input)
    }
}

/// `H·W` mask values as the shared buffer the tape ops take.
pub fn mask_values(mask: &crate::imaging::BinaryMask) -> Arc<Vec<f64>> {
    Arc::new(mask.bits().iter().map(|&b| b as u8 as f64).collect())
}

/// Masked RGB plus the mask as a `4 × H × W` first-stage input.
pub fn stage1_input(image: &crate::imaging::ImageTensor, mask: &crate::imaging::BinaryMask) -> Result<Tensor> {
    let masked = image.masked(mask)?;
    if masked.channels() != 3 {
        return Err(Error::shape("first-stage input must be RGB"));
    }
    let mut data = masked.to_chw();
    data.extend(mask.bits().iter().map(|&b| b as u8 as f64));
    Tensor::new(vec![STAGE1_INPUT_CHANNELS, mask.height(), mask.width()], data)
}
