//! Training losses: the multiscale LoG ("SF") loss, focal loss for the
//! skin mask, masked L1, and the first-stage loss family.

mod stage1;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImageTensor};

pub(crate) use stage1::{breakdown, total};
pub use stage1::{stage1_loss, stage1_terms, LossBreakdown, Stage1Prediction, Stage1Target, STAGE1_TERMS};

/// Subband scales and their weights, paired by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubbandSpec {
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub kind: KernelKind,
}

impl Default for SubbandSpec {
    fn default() -> Self {
        SubbandSpec {
            sigmas: vec![0.6, 1.2, 2.4, 4.8, 9.6, 19.2],
            weights: vec![600.0, 500.0, 400.0, 20.0, 10.0, 10.0],
            kind: KernelKind::Normalized,
        }
    }
}

impl SubbandSpec {
    pub fn single(sigma: f64, weight: f64) -> Self {
        SubbandSpec {
            sigmas: vec![sigma],
            weights: vec![weight],
            kind: KernelKind::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.len() != self.weights.len() || self.sigmas.is_empty() {
            return Err(Error::invalid("subband sigmas and weights must pair up"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("subband weights must be positive"));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("subband sigmas must be positive"));
        }
        Ok(())
    }
}

/// Which LoG formula the filter bank samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `−(1/(2πσ²))·(2 − r²/σ²)·exp(−r²/σ²)`; not zero-sum.
    #[default]
    Normalized,
    /// Scale-normalised textbook LoG `σ²∇²G`, zero-sum in the continuum.
    Standard,
}

/// Dense `K × K` taps of a LoG kernel, `K = 2·ceil(3σ) + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogKernel {
    pub sigma: f64,
    pub size: usize,
    pub taps: Vec<f64>,
}

impl LogKernel {
    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

pub fn log_kernel(sigma: f64) -> Result<LogKernel> {
    log_kernel_with(sigma, KernelKind::Normalized)
}

pub fn log_kernel_with(sigma: f64, kind: KernelKind) -> Result<LogKernel> {
    let sep = Separable::new(sigma, kind)?;
    let k = sep.g.len();
    let mut taps = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            taps[i * k + j] = sep.c * (sep.alpha * sep.g[i] * sep.g[j] - sep.h[i] * sep.g[j] - sep.g[i] * sep.h[j]);
        }
    }
    Ok(LogKernel { sigma, size: k, taps })
}

/// Rank-3 separable form `c·(α·g⊗g − h⊗g − g⊗h)` of a LoG kernel.
#[derive(Clone, Debug, PartialEq)]
struct Separable {
    c: f64,
    alpha: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl Separable {
    fn new(sigma: f64, kind: KernelKind) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let r = (3.0 * sigma).ceil() as i64;
        let (c, alpha, s2) = match kind {
            KernelKind::Normalized => (-1.0 / (2.0 * PI * sigma * sigma), 2.0, sigma * sigma),
            KernelKind::Standard => (-1.0 / (PI * sigma * sigma), 1.0, 2.0 * sigma * sigma),
        };
        let g: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / s2).exp()).collect();
        let h = (-r..=r).zip(&g).map(|(t, g)| (t * t) as f64 / s2 * g).collect();
        Ok(Separable { c, alpha, g, h })
    }

    fn radius(&self) -> usize {
        self.g.len() / 2
    }
}

/// 1-D zero-padded "same" correlation along rows (`axis = 1`) or columns.
/// Taps are symmetric, so this is also a convolution.
fn filter_1d(src: &[f64], h: usize, w: usize, taps: &[f64], axis: usize, dst: &mut [f64]) {
    let r = taps.len() / 2;
    dst.fill(0.0);
    if axis == 1 {
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let out = &mut dst[y * w..(y + 1) * w];
            for (t, &k) in taps.iter().enumerate() {
                // out[x] += k * row[x + t - r]
                let off = t as isize - r as isize;
                let x0 = (-off).max(0) as usize;
                let x1 = (w as isize - off).min(w as isize);
                if x1 <= x0 as isize {
                    continue;
                }
                let x1 = x1 as usize;
                let s = &row[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                for (o, v) in out[x0..x1].iter_mut().zip(s) {
                    *o += k * v;
                }
            }
        }
    } else {
        for y in 0..h {
            let out = &mut dst[y * w..(y + 1) * w];
            for (t, &k) in taps.iter().enumerate() {
                let sy = y as isize + t as isize - r as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let row = &src[sy as usize * w..(sy as usize + 1) * w];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += k * v;
                }
            }
        }
    }
}

/// Precomputed separable kernels for an [`SubbandSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kernels: Vec<Separable>,
    weights: Vec<f64>,
}

impl FilterBank {
    pub fn new(spec: &SubbandSpec) -> Result<Self> {
        spec.validate()?;
        Ok(FilterBank {
            kernels: spec
                .sigmas
                .iter()
                .map(|&s| Separable::new(s, spec.kind))
                .collect::<Result<_>>()?,
            weights: spec.weights.clone(),
        })
    }

    /// `G * plane` for subband `i`, zero padding, same size.
    fn apply(&self, i: usize, plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        let k = &self.kernels[i];
        // clip taps that can never reach a pixel inside the image
        let reach = k.radius().min(h.max(w).saturating_sub(1));
        let lo = k.radius() - reach;
        let (g, hh) = (&k.g[lo..k.g.len() - lo], &k.h[lo..k.h.len() - lo]);
        let n = h * w;
        let mut gx = vec![0.0; n];
        let mut hx = vec![0.0; n];
        filter_1d(plane, h, w, g, 1, &mut gx);
        filter_1d(plane, h, w, hh, 1, &mut hx);
        let mix: Vec<f64> = gx.iter().zip(&hx).map(|(a, b)| k.alpha * a - b).collect();
        let mut out = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        filter_1d(&mix, h, w, g, 0, &mut out);
        filter_1d(&gx, h, w, hh, 0, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = k.c * (*o - t);
        }
        out
    }

    /// `Σ_i w_i ‖G_i * d‖² / (C·H·W)` over a `C × H × W` difference, and
    /// optionally its gradient with respect to `d`.
    pub fn energy(&self, d: &[f64], c: usize, h: usize, w: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let n = h * w;
        let norm = 1.0 / (c * n) as f64;
        let mut total = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; d.len()]);
        for ch in 0..c {
            let plane = &d[ch * n..(ch + 1) * n];
            for (i, &wt) in self.weights.iter().enumerate() {
                let f = self.apply(i, plane, h, w);
                total += wt * f.iter().map(|v| v * v).sum::<f64>();
                if let Some(g) = grad.as_mut() {
                    // the filter matrix is symmetric, so its adjoint is itself
                    let back = self.apply(i, &f, h, w);
                    for (gv, b) in g[ch * n..(ch + 1) * n].iter_mut().zip(&back) {
                        *gv += 2.0 * wt * norm * b;
                    }
                }
            }
        }
        (total * norm, grad)
    }
}

/// Multiscale LoG loss between two same-shaped images.
pub fn sf_loss(a: &ImageTensor, b: &ImageTensor, spec: &SubbandSpec) -> Result<f64> {
    a.same_shape(b)?;
    let bank = FilterBank::new(spec)?;
    let (h, w, c) = a.dims();
    let d: Vec<f64> = a.to_chw().iter().zip(b.to_chw()).map(|(x, y)| x - y).collect();
    Ok(bank.energy(&d, c, h, w, false).0)
}

pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

/// Per-pixel focal term and its derivative with respect to `p`.
pub(crate) fn focal_term(p: f64, positive: bool, fp: FocalParams) -> (f64, f64) {
    let clamped = !(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&p);
    let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let (q, a, dq) = if positive {
        (p, fp.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - fp.alpha, -1.0)
    };
    let one_m = 1.0 - q;
    let value = -a * one_m.powf(fp.gamma) * q.ln();
    let dvalue_dq = if fp.gamma == 0.0 {
        -a / q
    } else {
        -a * (-fp.gamma * one_m.powf(fp.gamma - 1.0) * q.ln() + one_m.powf(fp.gamma) / q)
    };
    (value, if clamped { 0.0 } else { dvalue_dq * dq })
}

/// Mean focal loss of a one-channel probability map over `region`
/// (every pixel when `None`).
pub fn focal_loss(
    pred: &ImageTensor,
    target: &BinaryMask,
    region: Option<&BinaryMask>,
    params: FocalParams,
) -> Result<f64> {
    let (h, w, c) = pred.dims();
    if c != 1 || target.height() != h || target.width() != w {
        return Err(Error::shape("focal loss needs a 1-channel map matching the target"));
    }
    if let Some(r) = region {
        if r.height() != h || r.width() != w {
            return Err(Error::shape("focal region does not match the prediction"));
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &p) in pred.data().iter().enumerate() {
        if region.is_some_and(|r| !r.bits()[i]) {
            continue;
        }
        sum += focal_term(p as f64, target.bits()[i], params).0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("focal loss region is empty".into()));
    }
    Ok(sum / n as f64)
}

fn region_of<'a>(a: &'a ImageTensor, mask: Option<&'a BinaryMask>) -> Option<&'a BinaryMask> {
    mask.or(a.mask())
}

/// Mean absolute difference over masked pixels and channels. The mask is
/// `mask`, else `a`'s own mask, else the whole image.
pub fn l1_loss(a: &ImageTensor, b: &ImageTensor, mask: Option<&BinaryMask>) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w, c) = a.dims();
    let region = region_of(a, mask);
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..h * w {
        if region.is_some_and(|m| !m.bits()[p]) {
            continue;
        }
        for k in 0..c {
            sum += (a.data()[p * c + k] as f64 - b.data()[p * c + k] as f64).abs();
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("l1 loss region is empty".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_tap_and_zero_ring() {
        let k = log_kernel(1.0).unwrap();
        assert_eq!(k.size, 7);
        assert!((k.tap(3, 3) + 1.0 / PI).abs() < 1e-12);
        // |x|² = 2 at (±1, ±1)
        assert!(k.tap(2, 2).abs() < 1e-15);
        assert!(k.tap(4, 2).abs() < 1e-15);
        assert!(log_kernel(0.0).is_err());
        assert!(log_kernel(-1.0).is_err());
    }

    #[test]
    fn standard_kernel_is_nearly_zero_sum() {
        let k = log_kernel_with(2.4, KernelKind::Standard).unwrap();
        assert!(k.sum().abs() < 1e-2, "{}", k.sum());
        let n = log_kernel(2.4).unwrap();
        // continuous integral of the normalized kernel is -1/2
        assert!((n.sum() + 0.5).abs() < 1e-2, "{}", n.sum());
    }

    #[test]
    fn focal_closed_forms() {
        let p = ImageTensor::filled(2, 2, 1, 0.5);
        let t = BinaryMask::from_fn(2, 2, |r, c| r == c);
        let fp = FocalParams { gamma: 0.0, alpha: 0.5 };
        let v = focal_loss(&p, &t, None, fp).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-12);
        let exact = ImageTensor::from_fn(2, 2, 1, |r, c, _| (r == c) as u8 as f32);
        assert!(focal_loss(&exact, &t, None, FocalParams::default()).unwrap() <= 1e-5);
    }

    #[test]
    fn l1_offsets() {
        let a = ImageTensor::from_fn(3, 3, 3, |r, c, k| (r + c + k) as f32 * 0.1);
        let b = a.map(|v| v + 0.25);
        assert!((l1_loss(&a, &b, None).unwrap() - 0.25).abs() < 1e-6);
        assert_eq!(l1_loss(&a, &a, None).unwrap(), 0.0);
        let empty = BinaryMask::from_fn(3, 3, |_, _| false);
        assert!(matches!(l1_loss(&a, &b, Some(&empty)), Err(Error::EmptyRegion(_))));
    }
}
