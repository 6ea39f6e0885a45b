use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FilterBank, FocalParams, SubbandSpec};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImageTensor};
use crate::nn::{mask_values, Stage1Vars, Tape, Tensor, Var};
use crate::prt::{compose_shading, LoadedSample};
use crate::sh::ShLight;

/// Term names in evaluation order. In `triple_xyz` the letters mark albedo,
/// transport and light as predicted (`p`) or ground truth (`g`); in
/// `double_xy` they mark transport and light.
pub const STAGE1_TERMS: [&str; 16] = [
    "unary_albedo",
    "unary_transport",
    "unary_light",
    "triple_ppp",
    "triple_ppg",
    "triple_pgp",
    "triple_pgg",
    "triple_gpp",
    "triple_gpg",
    "triple_ggp",
    "double_pp",
    "double_pg",
    "double_gp",
    "sf_albedo",
    "sf_shading",
    "focal",
];

/// Ground truth for one first-stage training sample, in `C × H × W`.
#[derive(Clone, Debug)]
pub struct Stage1Target {
    pub albedo: Tensor,
    pub transport: Tensor,
    pub light: Tensor,
    pub image: Tensor,
    /// Clamped ground-truth shading.
    pub shading: Tensor,
    pub skin: Arc<Vec<bool>>,
    pub mask: Arc<Vec<f64>>,
}

impl Stage1Target {
    pub fn from_sample(s: &LoadedSample) -> Result<Self> {
        let shading = compose_shading(&s.transport, &s.light)?;
        Ok(Stage1Target {
            albedo: Tensor::from_image(&s.albedo.masked(&s.mask)?),
            transport: Tensor::from_image(s.transport.data()),
            light: Tensor::new(vec![27], s.light.to_vec())?,
            image: Tensor::from_image(&s.image.masked(&s.mask)?),
            shading: Tensor::from_image(&shading),
            skin: Arc::new(s.skin.bits().to_vec()),
            mask: mask_values(&s.mask),
        })
    }
}

/// Inferred first-stage components as plain values.
#[derive(Clone, Debug)]
pub struct Stage1Prediction {
    pub albedo: ImageTensor,
    /// One-channel skin probability.
    pub skin: ImageTensor,
    pub transport: ImageTensor,
    pub light: ShLight,
}

/// Per-term values and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<(String, f64)>,
}

impl LossBreakdown {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// `{"total": …, "<term>": …}` on one line.
    pub fn to_json_line(&self, step: u64) -> String {
        let mut map = serde_json::Map::new();
        map.insert("step".into(), step.into());
        map.insert("total".into(), self.total.into());
        for (n, v) in &self.terms {
            map.insert(n.clone(), (*v).into());
        }
        serde_json::Value::Object(map).to_string()
    }
}

/// Records every first-stage loss term on `tape` and returns them with
/// their names, in [`STAGE1_TERMS`] order.
pub fn stage1_terms(
    tape: &mut Tape,
    pred: &Stage1Vars,
    target: &Stage1Target,
    bank: &Arc<FilterBank>,
    focal: FocalParams,
) -> Result<Vec<(&'static str, Var)>> {
    let m = Some(target.mask.clone());
    let ga = tape.input(target.albedo.clone());
    let gt = tape.input(target.transport.clone());
    let gl = tape.input(target.light.clone());
    let image = tape.input(target.image.clone());
    let shading = tape.input(target.shading.clone());

    let mut terms = vec![
        ("unary_albedo", tape.mse(pred.albedo, ga, m.clone())?),
        ("unary_transport", tape.mse(pred.transport, gt, m.clone())?),
        ("unary_light", tape.mse(pred.light, gl, None)?),
    ];
    let pick = |p: bool, a: Var, b: Var| if p { a } else { b };
    let shade = |tape: &mut Tape, pt: bool, pl: bool| -> Result<Var> {
        let s = tape.sh_dot(pick(pt, pred.transport, gt), pick(pl, pred.light, gl))?;
        tape.relu(s)
    };
    for (name, pa, pt, pl) in [
        ("triple_ppp", true, true, true),
        ("triple_ppg", true, true, false),
        ("triple_pgp", true, false, true),
        ("triple_pgg", true, false, false),
        ("triple_gpp", false, true, true),
        ("triple_gpg", false, true, false),
        ("triple_ggp", false, false, true),
    ] {
        let s = shade(tape, pt, pl)?;
        let recon = tape.mul(pick(pa, pred.albedo, ga), s)?;
        terms.push((name, tape.mse(recon, image, m.clone())?));
    }
    let mut pred_shading = None;
    for (name, pt, pl) in [
        ("double_pp", true, true),
        ("double_pg", true, false),
        ("double_gp", false, true),
    ] {
        let s = shade(tape, pt, pl)?;
        if pt && pl {
            pred_shading = Some(s);
        }
        terms.push((name, tape.mse(s, shading, m.clone())?));
    }
    terms.push(("sf_albedo", tape.sf(pred.albedo, ga, bank.clone())?));
    terms.push(("sf_shading", tape.sf(pred_shading.unwrap(), shading, bank.clone())?));
    terms.push(("focal", tape.focal(pred.skin, target.skin.clone(), m, focal)?));
    Ok(terms)
}

/// Sums recorded terms into one scalar node.
pub(crate) fn total(tape: &mut Tape, terms: &[(&'static str, Var)]) -> Result<Var> {
    let mut acc = terms[0].1;
    for &(_, v) in &terms[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

pub(crate) fn breakdown(tape: &Tape, terms: &[(&'static str, Var)], total: Var) -> LossBreakdown {
    LossBreakdown {
        total: tape.value(total).item(),
        terms: terms
            .iter()
            .map(|(n, v)| (n.to_string(), tape.value(*v).item()))
            .collect(),
    }
}

/// First-stage loss of fixed predictions against a ground-truth sample.
pub fn stage1_loss(
    pred: &Stage1Prediction,
    gt: &Stage1Target,
    spec: &SubbandSpec,
    focal: FocalParams,
) -> Result<LossBreakdown> {
    let dims = |t: &Tensor| t.chw().map(|(_, h, w)| (h, w));
    let (h, w) = dims(&gt.image)?;
    let check = |img: &ImageTensor, c: usize, what: &str| -> Result<Tensor> {
        if img.dims() != (h, w, c) {
            return Err(Error::invalid(format!(
                "prediction {what} has dims {:?}, expected {:?}",
                img.dims(),
                (h, w, c)
            )));
        }
        Ok(Tensor::from_image(img))
    };
    let mask = BinaryMask::new(h, w, gt.mask.iter().map(|&v| v != 0.0).collect())?;
    let mut tape = Tape::new();
    let albedo = check(&pred.albedo.masked(&mask)?, 3, "albedo")?;
    let skin = check(&pred.skin, 1, "skin")?;
    let transport = check(&pred.transport.masked(&mask)?, 9, "transport")?;
    let albedo = tape.input(albedo);
    let skin = tape.input(skin);
    let transport = tape.input(transport);
    let light = tape.input(Tensor::new(vec![27], pred.light.to_vec())?);
    let vars = Stage1Vars {
        albedo,
        skin_logit: skin,
        skin,
        transport,
        light,
    };
    let bank = Arc::new(FilterBank::new(spec)?);
    let terms = stage1_terms(&mut tape, &vars, gt, &bank, focal)?;
    let t = total(&mut tape, &terms)?;
    Ok(breakdown(&tape, &terms, t))
}
