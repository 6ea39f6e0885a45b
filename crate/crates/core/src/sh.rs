//! Second-order real spherical harmonics.
//!
//! Bands 0..=2, nine coefficients per colour channel, real basis without the
//! Condon–Shortley phase. Coefficient order is
//!
//! ```text
//! (0,0) (1,-1) (1,0) (1,1) (2,-2) (2,-1) (2,0) (2,1) (2,2)
//! ```
//!
//! Environment maps are equirectangular with the pole on `+z`: row 0 is
//! θ = 0 and the centre column is φ = 0 (the `+x` half-plane). A rotation of
//! the light about `z` is therefore a horizontal shift of the map.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SH_COEFFS: usize = 9;
pub const SH_CHANNELS: usize = 3;
pub const SH_LEN: usize = SH_COEFFS * SH_CHANNELS;

/// `(l, m)` of each coefficient slot.
pub const SH_INDEX: [(i32, i32); SH_COEFFS] = [
    (0, 0),
    (1, -1),
    (1, 0),
    (1, 1),
    (2, -2),
    (2, -1),
    (2, 0),
    (2, 1),
    (2, 2),
];

const K00: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))
const K1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / (4 pi))
const K2: f64 = 1.092_548_430_592_079_2; // sqrt(15 / (4 pi))
const K20: f64 = 0.315_391_565_252_520_05; // sqrt(5 / (16 pi))
const K22: f64 = 0.546_274_215_296_039_6; // sqrt(15 / (16 pi))

/// Evaluates the nine basis functions at a unit direction.
pub fn sh_basis(direction: [f64; 3]) -> Result<[f64; SH_COEFFS]> {
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("direction has non-finite components"));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "direction must be unit length, got |d| = {norm}"
        )));
    }
    Ok(sh_basis_unchecked(direction))
}

#[inline]
pub(crate) fn sh_basis_unchecked([x, y, z]: [f64; 3]) -> [f64; SH_COEFFS] {
    [
        K00,
        K1 * y,
        K1 * z,
        K1 * x,
        K2 * x * y,
        K2 * y * z,
        K20 * (3.0 * z * z - 1.0),
        K2 * x * z,
        K22 * (x * x - y * y),
    ]
}

/// Distant illumination as 3 × 9 SH coefficients (R, G, B rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShLight {
    pub coeffs: [[f64; SH_COEFFS]; SH_CHANNELS],
}

impl ShLight {
    pub fn new(coeffs: [[f64; SH_COEFFS]; SH_CHANNELS]) -> Result<Self> {
        let light = ShLight { coeffs };
        light.validate()?;
        Ok(light)
    }

    pub fn zero() -> Self {
        ShLight {
            coeffs: [[0.0; SH_COEFFS]; SH_CHANNELS],
        }
    }

    /// Uniform white radiance `radiance` from every direction.
    pub fn ambient(radiance: f64) -> Self {
        let mut light = Self::zero();
        for row in &mut light.coeffs {
            row[0] = radiance / K00;
        }
        light
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("light coefficients must be finite"));
        }
        Ok(())
    }

    /// Channel-major flattening: `[r0..r8, g0..g8, b0..b8]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != SH_LEN {
            return Err(Error::invalid(format!(
                "expected {SH_LEN} light coefficients, got {}",
                values.len()
            )));
        }
        let mut coeffs = [[0.0; SH_COEFFS]; SH_CHANNELS];
        for (c, row) in coeffs.iter_mut().enumerate() {
            row.copy_from_slice(&values[c * SH_COEFFS..(c + 1) * SH_COEFFS]);
        }
        Self::new(coeffs)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &ShLight) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().flatten().zip(other.coeffs.iter().flatten()) {
            *a += b;
        }
        out
    }

    /// Radiance in direction `dir` reconstructed from the coefficients.
    pub fn eval(&self, dir: [f64; 3]) -> [f64; SH_CHANNELS] {
        let y = sh_basis_unchecked(dir);
        let mut out = [0.0; SH_CHANNELS];
        for (o, row) in out.iter_mut().zip(&self.coeffs) {
            *o = row.iter().zip(&y).map(|(c, b)| c * b).sum();
        }
        out
    }

    /// 2-norm of each band per channel: `[channel][band]`.
    pub fn band_norms(&self) -> [[f64; 3]; SH_CHANNELS] {
        let mut out = [[0.0; 3]; SH_CHANNELS];
        for (o, row) in out.iter_mut().zip(&self.coeffs) {
            o[0] = row[0].abs();
            o[1] = row[1..4].iter().map(|v| v * v).sum::<f64>().sqrt();
            o[2] = row[4..9].iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        out
    }

    /// Dominant direction from the luminance-weighted band-1 vector and the
    /// per-channel intensity of the equivalent directional light.
    ///
    /// A directional light of intensity `E` along `d` projects to
    /// `c_1m = E·Y_1m(d)`, so `E = |c_1| / K1`.
    pub fn dominant_light(&self) -> Option<([f64; 3], [f64; SH_CHANNELS])> {
        const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];
        let mut v = [0.0; 3];
        for (w, row) in LUMA.iter().zip(&self.coeffs) {
            v[0] += w * row[3];
            v[1] += w * row[1];
            v[2] += w * row[2];
        }
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n < 1e-12 {
            return None;
        }
        let dir = [v[0] / n, v[1] / n, v[2] / n];
        let mut intensity = [0.0; SH_CHANNELS];
        for (e, row) in intensity.iter_mut().zip(&self.coeffs) {
            let along = row[3] * dir[0] + row[1] * dir[1] + row[2] * dir[2];
            *e = (along / K1).max(0.0);
        }
        Some((dir, intensity))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let light: ShLight = serde_json::from_str(text)?;
        light.validate()?;
        Ok(light)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Rotates a light about the z axis by `phi` radians.
///
/// Band 0 and the `m = 0` terms are unchanged; each `(m, -m)` pair mixes
/// through the 2×2 block `[cos mφ, -sin mφ; sin mφ, cos mφ]`.
pub fn rotate_z(light: &ShLight, phi: f64) -> Result<ShLight> {
    if !phi.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    light.validate()?;
    // (index of +m, index of -m, m)
    const PAIRS: [(usize, usize, f64); 3] = [(3, 1, 1.0), (7, 5, 1.0), (8, 4, 2.0)];
    let mut out = light.clone();
    for (row_out, row_in) in out.coeffs.iter_mut().zip(&light.coeffs) {
        for &(pos, neg, m) in &PAIRS {
            let (s, c) = (m * phi).sin_cos();
            row_out[pos] = row_in[pos] * c - row_in[neg] * s;
            row_out[neg] = row_in[neg] * c + row_in[pos] * s;
        }
    }
    Ok(out)
}

/// Equirectangular environment map, `width == 2 * height`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvMap {
    width: usize,
    height: usize,
    pixels: Vec<[f32; 3]>,
}

impl EnvMap {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::invalid(format!(
                "environment map must be 2:1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} texels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("environment map has non-finite texels"));
        }
        Ok(EnvMap { width, height, pixels })
    }

    /// Samples `radiance(direction)` at every texel centre.
    pub fn from_fn(height: usize, radiance: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let width = 2 * height;
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let (theta, phi) = texel_angles(row, col, width, height);
                let rgb = radiance(spherical_dir(theta, phi));
                pixels.push([rgb[0] as f32, rgb[1] as f32, rgb[2] as f32]);
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn texel(&self, row: usize, col: usize) -> [f32; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn is_physical(&self) -> bool {
        self.pixels.iter().flatten().all(|&v| v >= 0.0)
    }

    /// Nearest-texel lookup in direction `dir` (assumed unit length).
    pub fn lookup(&self, dir: [f64; 3]) -> [f64; 3] {
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let row = ((theta / PI) * self.height as f64).floor() as isize;
        let col = (((phi + PI) / (2.0 * PI)) * self.width as f64).floor() as isize;
        let row = row.clamp(0, self.height as isize - 1) as usize;
        let col = col.rem_euclid(self.width as isize) as usize;
        let t = self.texel(row, col);
        [t[0] as f64, t[1] as f64, t[2] as f64]
    }

    /// The map rotated about `z` by `phi`: `L'(θ, φ) = L(θ, φ - phi)`.
    ///
    /// Shifts columns with linear interpolation; exact when `phi` is a
    /// multiple of the texel width.
    pub fn rotated_z(&self, phi: f64) -> EnvMap {
        let shift = phi / (2.0 * PI) * self.width as f64;
        let whole = shift.floor();
        let frac = shift - whole;
        let w = self.width as isize;
        let mut pixels = vec![[0.0f32; 3]; self.pixels.len()];
        for row in 0..self.height {
            for col in 0..self.width {
                let src = col as isize - whole as isize;
                let a = self.texel(row, src.rem_euclid(w) as usize);
                let b = self.texel(row, (src - 1).rem_euclid(w) as usize);
                let out = &mut pixels[row * self.width + col];
                for k in 0..3 {
                    out[k] = if frac == 0.0 {
                        a[k]
                    } else {
                        ((1.0 - frac) * a[k] as f64 + frac * b[k] as f64) as f32
                    };
                }
            }
        }
        EnvMap {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn scaled(&self, s: f32) -> EnvMap {
        EnvMap {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect(),
        }
    }

    /// Reads a Radiance `.hdr` or a `.pfm` file, chosen by extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match extension(path).as_deref() {
            Some("pfm") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let (width, height, pixels) = decode_pfm(&bytes)?;
                Self::new(width, height, pixels)
            }
            Some("hdr") => {
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                let img = image::ImageReader::with_format(BufReader::new(file), image::ImageFormat::Hdr)
                    .decode()?
                    .into_rgb32f();
                let (w, h) = (img.width() as usize, img.height() as usize);
                let pixels = img.pixels().map(|p| p.0).collect();
                Self::new(w, h, pixels)
            }
            _ => Err(Error::invalid(format!(
                "{}: unsupported environment map extension (want .hdr or .pfm)",
                path.display()
            ))),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match extension(path).as_deref() {
            Some("pfm") => {
                let bytes = encode_pfm(self.width, self.height, &self.pixels);
                fs::write(path, bytes).map_err(|e| Error::io(path, e))
            }
            Some("hdr") => {
                let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
                let data: Vec<image::Rgb<f32>> = self.pixels.iter().map(|&p| image::Rgb(p)).collect();
                image::codecs::hdr::HdrEncoder::new(BufWriter::new(file)).encode(&data, self.width, self.height)?;
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "{}: unsupported environment map extension (want .hdr or .pfm)",
                path.display()
            ))),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Polar and azimuthal angle of a texel centre.
pub fn texel_angles(row: usize, col: usize, width: usize, height: usize) -> (f64, f64) {
    let theta = PI * (row as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (col as f64 + 0.5) / width as f64 - PI;
    (theta, phi)
}

pub fn spherical_dir(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Projects an environment map onto the SH basis by solid-angle-weighted
/// texel summation.
///
/// Each texel is treated as constant radiance over its cell. When the map
/// has fewer than `n_samples` texels, every cell is split into an `s × s`
/// sub-grid so that at least `n_samples` quadrature points are used.
pub fn project_envmap(env: &EnvMap, n_samples: usize) -> Result<ShLight> {
    if n_samples < 1000 {
        return Err(Error::invalid(format!(
            "projection needs at least 1000 samples, got {n_samples}"
        )));
    }
    let (w, h) = (env.width, env.height);
    let texels = w * h;
    let sub = if texels >= n_samples {
        1
    } else {
        ((n_samples as f64 / texels as f64).sqrt().ceil()) as usize
    };
    let d_theta = PI / (h * sub) as f64;
    let d_phi = 2.0 * PI / (w * sub) as f64;

    let rows: Vec<[[f64; SH_COEFFS]; SH_CHANNELS]> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut acc = [[0.0; SH_COEFFS]; SH_CHANNELS];
            for col in 0..w {
                let rgb = env.texel(row, col);
                let mut weighted = [0.0; SH_COEFFS];
                for si in 0..sub {
                    let theta = (row * sub + si) as f64 * d_theta + 0.5 * d_theta;
                    let weight = theta.sin() * d_theta * d_phi;
                    for sj in 0..sub {
                        let phi = (col * sub + sj) as f64 * d_phi + 0.5 * d_phi - PI;
                        let y = sh_basis_unchecked(spherical_dir(theta, phi));
                        for (acc_k, y_k) in weighted.iter_mut().zip(&y) {
                            *acc_k += y_k * weight;
                        }
                    }
                }
                for (c, row_acc) in acc.iter_mut().enumerate() {
                    let l = rgb[c] as f64;
                    for (a, wk) in row_acc.iter_mut().zip(&weighted) {
                        *a += l * wk;
                    }
                }
            }
            acc
        })
        .collect();

    let mut coeffs = [[0.0; SH_COEFFS]; SH_CHANNELS];
    for partial in &rows {
        for (dst, src) in coeffs.iter_mut().flatten().zip(partial.iter().flatten()) {
            *dst += src;
        }
    }
    ShLight::new(coeffs)
}

/// Provenance of one light in a [`LightSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightEntry {
    pub source: String,
    pub rotation_deg: f64,
    pub light: ShLight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightSet {
    pub interval_deg: f64,
    pub entries: Vec<LightEntry>,
}

impl LightSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lights(&self) -> impl Iterator<Item = &ShLight> {
        self.entries.iter().map(|e| &e.light)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: LightSet = serde_json::from_str(&text)?;
        for e in &set.entries {
            e.light.validate()?;
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Number of rotations per map, or an error if `interval_deg` does not
/// divide 360.
pub fn rotations_per_map(interval_deg: f64) -> Result<usize> {
    if !(interval_deg.is_finite() && interval_deg > 0.0) {
        return Err(Error::invalid("rotation interval must be positive"));
    }
    let n = 360.0 / interval_deg;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "rotation interval {interval_deg} does not divide 360"
        )));
    }
    Ok(rounded as usize)
}

/// Projects every map once and expands it by z-rotations at
/// `interval_deg` steps. Entry `i * n + k` is map `i` rotated `k` times.
pub fn expand_light_set(maps: &[EnvMap], interval_deg: f64, n_samples: usize) -> Result<LightSet> {
    let per_map = rotations_per_map(interval_deg)?;
    let mut entries = Vec::with_capacity(maps.len() * per_map);
    for (i, env) in maps.iter().enumerate() {
        let base = project_envmap(env, n_samples)?;
        for k in 0..per_map {
            let deg = k as f64 * interval_deg;
            entries.push(LightEntry {
                source: format!("map-{i}"),
                rotation_deg: deg,
                light: rotate_z(&base, deg.to_radians())?,
            });
        }
    }
    Ok(LightSet { interval_deg, entries })
}

fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<[f32; 3]>)> {
    // Three whitespace-terminated header tokens after the "PF" magic line.
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated PFM header"));
        }
        tokens.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    if tokens[0].1 != "PF" {
        return Err(Error::format(0, "PFM magic must be `PF` (RGB)"));
    }
    let parse = |(off, tok): &(usize, String)| -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| Error::format(*off, format!("bad PFM header token `{tok}`")))
    };
    let width = parse(&tokens[1])? as usize;
    let height = parse(&tokens[2])? as usize;
    let scale = parse(&tokens[3])?;
    let little = scale < 0.0;
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(12))
        .ok_or_else(|| Error::format(tokens[1].0, "PFM dimensions overflow"))?;
    if bytes.len() < pos + needed {
        return Err(Error::format(bytes.len(), "truncated PFM payload"));
    }
    let mut pixels = vec![[0.0f32; 3]; width * height];
    for file_row in 0..height {
        // PFM stores the bottom row first
        let row = height - 1 - file_row;
        for col in 0..width {
            for (k, slot) in pixels[row * width + col].iter_mut().enumerate() {
                let off = pos + ((file_row * width + col) * 3 + k) * 4;
                let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
                *slot = if little {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
            }
        }
    }
    Ok((width, height, pixels))
}

fn encode_pfm(width: usize, height: usize, pixels: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(width * height * 12 + 32);
    write!(out, "PF\n{width} {height}\n-1.0\n").unwrap();
    for row in (0..height).rev() {
        for p in &pixels[row * width..(row + 1) * width] {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn y00_is_constant() {
        for d in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.6, 0.0, 0.8]] {
            assert_abs_diff_eq!(sh_basis(d).unwrap()[0], 0.282_094_8, epsilon = 1e-7);
        }
    }

    #[test]
    fn basis_on_z_axis() {
        let y = sh_basis([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(y[1], 0.0);
        assert_eq!(y[3], 0.0);
        // closed form: sqrt(5/pi)/4 * (3*1 - 1)
        let expected = (5.0 / PI).sqrt() / 4.0 * 2.0;
        assert_abs_diff_eq!(y[6], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(y[6], 0.630_783_1, epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_directions() {
        assert!(matches!(sh_basis([0.0, 0.0, 2.0]), Err(Error::InvalidArgument(_))));
        assert!(sh_basis([f64::NAN, 0.0, 1.0]).is_err());
    }

    #[test]
    fn constant_map_projects_to_dc() {
        let env = EnvMap::from_fn(64, |_| [1.0, 1.0, 1.0]).unwrap();
        let light = project_envmap(&env, 10_000).unwrap();
        for row in &light.coeffs {
            assert_abs_diff_eq!(row[0], 2.0 * PI.sqrt(), epsilon = 1e-3);
            for v in &row[1..] {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn env_map_shape_checked() {
        assert!(EnvMap::new(10, 10, vec![[0.0; 3]; 100]).is_err());
        assert!(EnvMap::new(4, 2, vec![[0.0; 3]; 7]).is_err());
        assert!(project_envmap(&EnvMap::from_fn(8, |_| [1.0; 3]).unwrap(), 999).is_err());
    }

    #[test]
    fn rotate_identity_and_zonal() {
        let light = ShLight::new([[0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.2, 0.9, -0.6]; 3]).unwrap();
        assert_eq!(rotate_z(&light, 0.0).unwrap(), light);
        let r = rotate_z(&light, 1.234).unwrap();
        for c in 0..3 {
            for k in [0, 2, 6] {
                assert_eq!(r.coeffs[c][k], light.coeffs[c][k]);
            }
        }
        assert!(rotate_z(&light, f64::INFINITY).is_err());
    }

    #[test]
    fn rotation_matches_rotated_evaluation() {
        // L'(w) = L(R^-1 w)
        let light = ShLight::new([[0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.2, 0.9, -0.6]; 3]).unwrap();
        let phi = 0.7f64;
        let r = rotate_z(&light, phi).unwrap();
        let d = spherical_dir(1.1, 0.4);
        let back = spherical_dir(1.1, 0.4 - phi);
        assert_abs_diff_eq!(r.eval(d)[0], light.eval(back)[0], epsilon = 1e-12);
    }

    #[test]
    fn interval_divisibility() {
        assert_eq!(rotations_per_map(36.0).unwrap(), 10);
        assert_eq!(rotations_per_map(360.0).unwrap(), 1);
        assert!(rotations_per_map(7.0).is_err());
        assert!(rotations_per_map(0.0).is_err());
        assert!(rotations_per_map(720.0).is_err());
    }

    #[test]
    fn pfm_round_trip_keeps_orientation() {
        let env = EnvMap::from_fn(4, |d| [d[2], d[0], -d[1]]).unwrap();
        let bytes = encode_pfm(env.width, env.height, &env.pixels);
        let (w, h, px) = decode_pfm(&bytes).unwrap();
        assert_eq!((w, h), (8, 4));
        assert_eq!(px, env.pixels);
    }

    #[test]
    fn pfm_rejects_truncation() {
        let env = EnvMap::from_fn(4, |_| [1.0; 3]).unwrap();
        let bytes = encode_pfm(env.width, env.height, &env.pixels);
        let err = decode_pfm(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(decode_pfm(b"Pf\n2 1\n-1\n").is_err());
    }

    #[test]
    fn light_json_schema() {
        let light = ShLight::ambient(1.0);
        let json: serde_json::Value = serde_json::from_str(&light.to_json().unwrap()).unwrap();
        let rows = json["coeffs"].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 9));
        assert!(ShLight::from_json(r#"{"coeffs":[[1,2],[3],[4]]}"#).is_err());
    }

    #[test]
    fn dominant_light_of_directional_projection() {
        // a single directional light projected analytically
        let d = [0.6, 0.0, 0.8];
        let y = sh_basis(d).unwrap();
        let light = ShLight::new([y, y.map(|v| 0.5 * v), [0.0; 9]]).unwrap();
        let (dir, e) = light.dominant_light().unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(dir[k], d[k], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 0.5, epsilon = 1e-12);
        assert!(ShLight::zero().dominant_light().is_none());
    }
}
