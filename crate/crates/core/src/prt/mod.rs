//! Procedural toy scenes, occlusion-aware light transport and forward
//! rendering.
//!
//! The camera is orthographic, looking down `-z` onto the square
//! `[-1, 1]²`; image row 0 is `y = +1`. Normals, hit points and SH
//! directions all live in this one world frame.

mod dataset;
mod scene;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImageTensor, RawTensor};
use crate::sh::{sh_basis_unchecked, ShLight, SH_COEFFS};

pub use dataset::{
    generate_dataset, procedural_envmap, random_scene, Dataset, DatasetConfig, DatasetManifest, LoadedSample,
    SampleEntry, SceneEntry,
};
use scene::{add_scaled, dot, normalize};
pub use scene::{Gloss, Primitive, Scene, Shape, Texture, Vec3};

const CAMERA_Z: f64 = 10.0;
const SHADOW_EPS: f64 = 1e-4;

/// Per-pixel geometry of a rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub mask: BinaryMask,
    /// Unit normals, `H × W × 3`, zero outside the mask.
    pub normals: ImageTensor,
    pub albedo: ImageTensor,
    pub skin: BinaryMask,
    pub positions: Vec<Vec3>,
    pub primitive: Vec<Option<usize>>,
}

impl Geometry {
    pub fn resolution(&self) -> usize {
        self.mask.height()
    }
}

/// World-space `(x, y)` of a pixel centre.
pub fn pixel_to_world(row: usize, col: usize, res: usize) -> (f64, f64) {
    let x = (col as f64 + 0.5) / res as f64 * 2.0 - 1.0;
    let y = 1.0 - (row as f64 + 0.5) / res as f64 * 2.0;
    (x, y)
}

/// Fractional pixel coordinates `(row, col)` of a world-space point.
pub fn world_to_pixel(x: f64, y: f64, res: usize) -> (f64, f64) {
    let col = (x + 1.0) / 2.0 * res as f64 - 0.5;
    let row = (1.0 - y) / 2.0 * res as f64 - 0.5;
    (row, col)
}

/// Casts one orthographic ray per pixel and records the nearest hit.
pub fn render_scene_geometry(scene: &Scene, resolution: usize) -> Result<Geometry> {
    scene.validate()?;
    if resolution < 16 {
        return Err(Error::invalid(format!(
            "resolution must be at least 16, got {resolution}"
        )));
    }
    let res = resolution;
    let hits: Vec<Option<(Vec3, usize)>> = (0..res * res)
        .into_par_iter()
        .map(|i| {
            let (x, y) = pixel_to_world(i / res, i % res, res);
            let o = [x, y, CAMERA_Z];
            let d = [0.0, 0.0, -1.0];
            scene.intersect(o, d, 0.0).map(|(t, prim)| (add_scaled(o, d, t), prim))
        })
        .collect();

    let mut normals = ImageTensor::zeros(res, res, 3);
    let mut albedo = ImageTensor::zeros(res, res, 3);
    let mut mask = vec![false; res * res];
    let mut skin = vec![false; res * res];
    let mut positions = vec![[0.0; 3]; res * res];
    let mut primitive = vec![None; res * res];
    for (i, hit) in hits.into_iter().enumerate() {
        let Some((p, prim_idx)) = hit else { continue };
        let prim = &scene.primitives[prim_idx];
        let n = prim.shape.normal_at(p);
        let a = prim.texture.eval(p);
        let (r, c) = (i / res, i % res);
        for k in 0..3 {
            normals.set(r, c, k, n[k] as f32);
            albedo.set(r, c, k, a[k] as f32);
        }
        mask[i] = true;
        skin[i] = prim.skin;
        positions[i] = p;
        primitive[i] = Some(prim_idx);
    }
    let mask = BinaryMask::new(res, res, mask)?;
    Ok(Geometry {
        normals: normals.with_mask(mask.clone())?,
        albedo: albedo.with_mask(mask.clone())?,
        skin: BinaryMask::new(res, res, skin)?,
        mask,
        positions,
        primitive,
    })
}

/// Per-pixel SH transport vectors, `H × W × 9`, zero outside the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportMap {
    data: ImageTensor,
    mask: BinaryMask,
}

impl TransportMap {
    pub fn new(data: ImageTensor, mask: BinaryMask) -> Result<Self> {
        if data.channels() != SH_COEFFS {
            return Err(Error::shape(format!(
                "transport needs {SH_COEFFS} channels, got {}",
                data.channels()
            )));
        }
        let data = data.masked(&mask)?;
        Ok(TransportMap { data, mask })
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn data(&self) -> &ImageTensor {
        &self.data
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn coeffs(&self, row: usize, col: usize) -> &[f32] {
        self.data.pixel(row, col)
    }

    pub fn to_raw(&self) -> RawTensor {
        self.data.to_raw()
    }

    pub fn from_raw(raw: RawTensor, mask: BinaryMask) -> Result<Self> {
        Self::new(ImageTensor::from_raw(raw)?, mask)
    }
}

fn pixel_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Transport vector at one surface point by Monte-Carlo integration of
/// `V(ω)·max(0, n·ω)·Y(ω)` over `n_dirs` Latin-hypercube-stratified
/// uniform sphere directions. `scene = None` means no occluders.
pub fn point_transport(
    scene: Option<&Scene>,
    position: Vec3,
    normal: Vec3,
    n_dirs: usize,
    seed: u64,
    stream: u64,
) -> [f64; SH_COEFFS] {
    let mut rng = pixel_stream(seed, stream);
    let mut perm: Vec<usize> = (0..n_dirs).collect();
    for i in (1..n_dirs).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let weight = 4.0 * PI / n_dirs as f64;
    let origin = add_scaled(position, normal, SHADOW_EPS);
    let mut t = [0.0; SH_COEFFS];
    for (i, &j) in perm.iter().enumerate() {
        let u = (i as f64 + rng.gen::<f64>()) / n_dirs as f64;
        let v = (j as f64 + rng.gen::<f64>()) / n_dirs as f64;
        let z = 1.0 - 2.0 * u;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let (s, c) = (2.0 * PI * v).sin_cos();
        let w = [r * c, r * s, z];
        let cos = dot(normal, w);
        if cos <= 0.0 {
            continue;
        }
        if scene.is_some_and(|sc| sc.occluded(origin, w, 0.0)) {
            continue;
        }
        let y = sh_basis_unchecked(w);
        for (tk, yk) in t.iter_mut().zip(&y) {
            *tk += cos * yk * weight;
        }
    }
    t
}

/// Occlusion-aware transport map for every masked pixel of `geometry`.
///
/// Pixel `i` draws its directions from its own RNG stream `(seed, i)`, so
/// the result does not depend on scheduling.
pub fn transport_from_geometry(geometry: &Geometry, scene: &Scene, n_dirs: usize, seed: u64) -> Result<TransportMap> {
    if n_dirs < 256 {
        return Err(Error::invalid(format!(
            "transport needs at least 256 directions, got {n_dirs}"
        )));
    }
    let res = geometry.resolution();
    let rows: Vec<[f64; SH_COEFFS]> = (0..res * res)
        .into_par_iter()
        .map(|i| {
            if !geometry.mask.bits()[i] {
                return [0.0; SH_COEFFS];
            }
            let n = geometry.normals.pixel(i / res, i % res);
            let n = normalize([n[0] as f64, n[1] as f64, n[2] as f64]);
            point_transport(Some(scene), geometry.positions[i], n, n_dirs, seed, i as u64)
        })
        .collect();
    let data: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    TransportMap::new(ImageTensor::new(res, res, SH_COEFFS, data)?, geometry.mask.clone())
}

/// `S(p, c) = Σ_k t_k(p)·L_{c,k}` without the non-negativity clamp.
pub fn compose_shading_unclamped(transport: &TransportMap, light: &ShLight) -> Result<ImageTensor> {
    light.validate()?;
    let (h, w) = (transport.height(), transport.width());
    let mut out = ImageTensor::zeros(h, w, 3);
    for r in 0..h {
        for c in 0..w {
            if !transport.mask.get(r, c) {
                continue;
            }
            let t = transport.coeffs(r, c);
            for (ch, row) in light.coeffs.iter().enumerate() {
                let s: f64 = t.iter().zip(row).map(|(a, b)| *a as f64 * b).sum();
                out.set(r, c, ch, s as f32);
            }
        }
    }
    out.with_mask(transport.mask.clone())
}

/// Diffuse shading, clamped at zero after the dot product.
pub fn compose_shading(transport: &TransportMap, light: &ShLight) -> Result<ImageTensor> {
    Ok(compose_shading_unclamped(transport, light)?.map(|v| v.max(0.0)))
}

/// `albedo ⊙ shading`, zero outside the shading mask (or the albedo mask
/// when shading has none).
pub fn reconstruct(albedo: &ImageTensor, shading: &ImageTensor) -> Result<ImageTensor> {
    let mut out = albedo.zip_map(shading, |a, s| a * s)?;
    let mask = shading.mask().or(albedo.mask()).cloned();
    out.set_mask(None)?;
    match mask {
        Some(m) => out.masked(&m),
        None => Ok(out),
    }
}

/// Everything rendered for one scene, independent of the light.
#[derive(Clone, Debug)]
pub struct RenderSample {
    pub scene: Scene,
    pub geometry: Geometry,
    pub transport: TransportMap,
}

impl RenderSample {
    pub fn render(scene: &Scene, resolution: usize, n_dirs: usize, seed: u64) -> Result<Self> {
        let geometry = render_scene_geometry(scene, resolution)?;
        let transport = transport_from_geometry(&geometry, scene, n_dirs, seed)?;
        Ok(RenderSample {
            scene: scene.clone(),
            geometry,
            transport,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.geometry.mask
    }

    pub fn diffuse(&self, light: &ShLight) -> Result<ImageTensor> {
        reconstruct(&self.geometry.albedo, &compose_shading(&self.transport, light)?)
    }
}

/// Diffuse reconstruction plus a Blinn-Phong lobe on every glossy
/// primitive, lit by a single directional light at the dominant SH
/// direction and shadowed against the scene.
pub fn render_glossy(sample: &RenderSample, light: &ShLight, view: Vec3) -> Result<ImageTensor> {
    let vn = dot(view, view).sqrt();
    if !vn.is_finite() || (vn - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("view direction must be a unit vector"));
    }
    let mut image = sample.diffuse(light)?;
    let Some((l, intensity)) = light.dominant_light() else {
        return Ok(image);
    };
    let h = normalize(add_scaled(l, view, 1.0));
    let geo = &sample.geometry;
    let res = geo.resolution();
    for i in 0..res * res {
        let Some(prim) = geo.primitive[i] else { continue };
        let Some(gloss) = sample.scene.primitives[prim].gloss else {
            continue;
        };
        if gloss.ks == 0.0 {
            continue;
        }
        let (r, c) = (i / res, i % res);
        let n = geo.normals.pixel(r, c);
        let n = [n[0] as f64, n[1] as f64, n[2] as f64];
        if dot(n, l) <= 0.0 {
            continue;
        }
        let origin = add_scaled(geo.positions[i], n, SHADOW_EPS);
        if sample.scene.occluded(origin, l, 0.0) {
            continue;
        }
        let lobe = gloss.ks * dot(n, h).max(0.0).powf(gloss.exponent);
        for (ch, e) in intensity.iter().enumerate() {
            let v = image.get(r, c, ch) + (lobe * e) as f32;
            image.set(r, c, ch, v);
        }
    }
    Ok(image)
}
