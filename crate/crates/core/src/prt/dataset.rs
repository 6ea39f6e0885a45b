use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{normalize, Gloss, Primitive, Scene, Shape, Texture, Vec3};
use super::{compose_shading, reconstruct, render_glossy, RenderSample, TransportMap};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImageTensor};
use crate::sh::{expand_light_set, project_envmap, EnvMap, LightSet, ShLight};

/// Clamped-cosine transport of an unoccluded `+z` normal (zonal terms only).
const FRONTAL_TRANSPORT: [(usize, f64); 3] = [(0, 0.886_226_9), (2, 1.023_326_7), (6, 0.495_415_1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub test: usize,
    pub resolution: usize,
    pub n_dirs: usize,
    pub interval_deg: f64,
    pub env_height: usize,
    /// Target mean frontal irradiance of every env map.
    pub exposure: f64,
    /// Adds the specular lobes to the "photo" renders when true.
    pub gloss: bool,
    /// Light test scenes with a second env map instead of the training one.
    pub held_out_lights: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 8,
            test: 2,
            resolution: 64,
            n_dirs: 1024,
            interval_deg: 36.0,
            env_height: 64,
            exposure: 0.8,
            gloss: true,
            held_out_lights: false,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::invalid("dataset needs at least one train and one test scene"));
        }
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return Err(Error::invalid("exposure must be positive"));
        }
        if self.env_height < 23 {
            return Err(Error::invalid("env_height must give at least 1000 texels"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub light_index: usize,
    pub light: String,
    pub image: String,
    pub image_png: String,
    pub photo: String,
    pub photo_png: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: String,
    pub scene: String,
    pub albedo: String,
    pub mask: String,
    pub skin: String,
    pub normals: String,
    pub transport: String,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub resolution: usize,
    pub n_dirs: usize,
    pub interval_deg: f64,
    pub gloss: bool,
    pub train_lights: String,
    pub test_lights: String,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, split: &str) -> impl Iterator<Item = &SceneEntry> {
        let split = split.to_string();
        self.scenes.iter().filter(move |s| s.split == split)
    }
}

/// One (scene, light) pair loaded from disk with every ground-truth part.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub scene_id: String,
    pub light_index: usize,
    pub albedo: ImageTensor,
    pub mask: BinaryMask,
    pub skin: BinaryMask,
    pub normals: ImageTensor,
    pub transport: TransportMap,
    pub light: ShLight,
    /// Diffuse render, `albedo ⊙ shading`.
    pub image: ImageTensor,
    /// Diffuse render plus specular highlights.
    pub photo: ImageTensor,
}

impl LoadedSample {
    /// In-memory sample from a render; the photo carries gloss when
    /// `gloss` is set.
    pub fn from_render(render: &RenderSample, light: &ShLight, gloss: bool, scene_id: &str) -> Result<Self> {
        let mask = render.mask().clone();
        let photo_source = if gloss {
            render.clone()
        } else {
            RenderSample {
                scene: render.scene.without_gloss(),
                ..render.clone()
            }
        };
        Ok(LoadedSample {
            scene_id: scene_id.into(),
            light_index: 0,
            albedo: render.geometry.albedo.clone(),
            skin: render.geometry.skin.clone(),
            normals: render.geometry.normals.clone(),
            transport: render.transport.clone(),
            light: light.clone(),
            image: render.diffuse(light)?,
            photo: render_glossy(&photo_source, light, [0.0, 0.0, 1.0])?,
            mask,
        })
    }

    pub fn shading(&self) -> Result<ImageTensor> {
        compose_shading(&self.transport, &self.light)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<LoadedSample>,
    pub test: Vec<LoadedSample>,
    pub train_lights: LightSet,
    pub test_lights: LightSet,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::read(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut train = Vec::new();
        let mut test = Vec::new();
        for entry in &manifest.scenes {
            let samples = load_scene(root, entry)?;
            match entry.split.as_str() {
                "train" => train.extend(samples),
                "test" => test.extend(samples),
                other => {
                    return Err(Error::Dataset(format!(
                        "scene {} has unknown split `{other}`",
                        entry.id
                    )))
                }
            }
        }
        if train.is_empty() {
            return Err(Error::Dataset("manifest lists no training samples".into()));
        }
        Ok(Dataset {
            train_lights: LightSet::read(root.join(&manifest.train_lights))?,
            test_lights: LightSet::read(root.join(&manifest.test_lights))?,
            manifest,
            train,
            test,
        })
    }
}

fn load_scene(root: &Path, entry: &SceneEntry) -> Result<Vec<LoadedSample>> {
    let missing = |what: &str| Error::Dataset(format!("scene {} lacks {what}", entry.id));
    let need = |rel: &str, what: &str| -> Result<PathBuf> {
        let p = root.join(rel);
        if rel.is_empty() || !p.is_file() {
            Err(missing(what))
        } else {
            Ok(p)
        }
    };
    let mask = BinaryMask::read_png(need(&entry.mask, "a mask")?)?;
    let skin = BinaryMask::read_png(need(&entry.skin, "a skin mask")?)?;
    let albedo = ImageTensor::read_png(need(&entry.albedo, "an albedo map")?)?.masked(&mask)?;
    let normals = ImageTensor::read_rlt(need(&entry.normals, "a normal map")?)?;
    let transport = TransportMap::new(
        ImageTensor::read_rlt(need(&entry.transport, "a transport map")?)?,
        mask.clone(),
    )?;
    if entry.samples.is_empty() {
        return Err(missing("samples"));
    }
    entry
        .samples
        .iter()
        .map(|s| {
            let light = ShLight::read(need(&s.light, "a light")?)?;
            let image = ImageTensor::read_rlt(need(&s.image, "an image")?)?.with_mask(mask.clone())?;
            let photo = ImageTensor::read_rlt(need(&s.photo, "a photo")?)?.with_mask(mask.clone())?;
            Ok(LoadedSample {
                scene_id: entry.id.clone(),
                light_index: s.light_index,
                albedo: albedo.clone(),
                mask: mask.clone(),
                skin: skin.clone(),
                normals: normals.clone(),
                transport: transport.clone(),
                light,
                image,
                photo,
            })
        })
        .collect()
}

fn quantize(c: f64) -> f64 {
    (c.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    [0, 1, 2].map(|_| quantize(rng.gen_range(lo..hi)))
}

fn clothing(rng: &mut ChaCha8Rng) -> Texture {
    let a = color(rng, 0.1, 0.9);
    let b = color(rng, 0.1, 0.9);
    match rng.gen_range(0..3) {
        0 => Texture::Constant { color: a },
        1 => Texture::Checker {
            a,
            b,
            scale: rng.gen_range(3.0..6.0),
        },
        _ => Texture::Gradient { a, b },
    }
}

fn capsule(a: Vec3, b: Vec3, radius: f64, texture: Texture, gloss: Option<Gloss>, skin: bool) -> Primitive {
    Primitive {
        shape: Shape::Capsule { a, b, radius },
        texture,
        gloss,
        skin,
    }
}

/// A standing figure: clothed torso and legs, glossy skin on head and arms.
/// Arms hug the torso to create occluded crevices.
pub fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let cx = rng.gen_range(-0.1..0.1);
    let skin_color = {
        let base = rng.gen_range(0.45..0.85);
        [quantize(base), quantize(base * 0.78), quantize(base * 0.62)]
    };
    let mut skin_gloss = || Gloss {
        ks: rng.gen_range(0.3..0.6),
        exponent: rng.gen_range(16.0..48.0),
    };
    let head_gloss = skin_gloss();
    let arm_gloss = skin_gloss();
    let skin_tex = Texture::Constant { color: skin_color };

    let torso_r = rng.gen_range(0.2..0.26);
    let top = rng.gen_range(0.25..0.35);
    let mut prims = vec![
        capsule([cx, -0.2, 0.0], [cx, top, 0.0], torso_r, clothing(rng), None, false),
        Primitive {
            shape: Shape::Sphere {
                center: [cx + rng.gen_range(-0.04..0.04), top + torso_r + 0.14, 0.05],
                radius: rng.gen_range(0.13..0.17),
            },
            texture: skin_tex.clone(),
            gloss: Some(head_gloss),
            skin: true,
        },
    ];
    let arm_r = rng.gen_range(0.06..0.08);
    let leg_r = rng.gen_range(0.08..0.1);
    let pants = clothing(rng);
    for side in [-1.0, 1.0] {
        let shoulder = [cx + side * (torso_r + arm_r * 0.8), top + 0.02, 0.04];
        let hand = [
            cx + side * (torso_r + arm_r + rng.gen_range(0.0..0.25)),
            rng.gen_range(-0.35..-0.1),
            rng.gen_range(0.0..0.12),
        ];
        prims.push(capsule(shoulder, hand, arm_r, skin_tex.clone(), Some(arm_gloss), true));
        let hip = [cx + side * leg_r * 1.1, -0.25, 0.0];
        let foot = [cx + side * rng.gen_range(0.1..0.25), -0.9, rng.gen_range(-0.05..0.05)];
        prims.push(capsule(hip, foot, leg_r, pants.clone(), None, false));
    }
    Scene { primitives: prims }
}

/// Sky gradient plus two soft lobes placed off the `z` axis, scaled so the
/// mean unoccluded frontal irradiance equals `exposure`.
pub fn procedural_envmap(rng: &mut ChaCha8Rng, height: usize, exposure: f64) -> Result<EnvMap> {
    let sky = color(rng, 0.2, 0.5);
    let lobes: Vec<(Vec3, Vec3, f64)> = (0..2)
        .map(|i| {
            let theta = rng.gen_range(35.0f64..75.0).to_radians();
            let phi = rng.gen_range(-PI..PI);
            let dir = normalize([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
            let strength = if i == 0 { 6.0 } else { 2.0 };
            let tint = color(rng, 0.7, 1.0).map(|c| c * strength);
            (dir, tint, rng.gen_range(6.0..14.0))
        })
        .collect();
    let env = EnvMap::from_fn(height, |w| {
        let up = 0.5 * (1.0 + w[2]);
        let mut c = sky.map(|s| s * (0.4 + 0.6 * up));
        for (dir, tint, sharp) in &lobes {
            let cos = dir[0] * w[0] + dir[1] * w[1] + dir[2] * w[2];
            let f = (sharp * (cos - 1.0)).exp();
            for k in 0..3 {
                c[k] += tint[k] * f;
            }
        }
        c
    })?;
    let light = project_envmap(&env, 1000.max(env.width() * env.height()))?;
    let frontal: f64 = light
        .coeffs
        .iter()
        .map(|row| FRONTAL_TRANSPORT.iter().map(|&(k, t)| row[k] * t).sum::<f64>())
        .sum::<f64>()
        / 3.0;
    Ok(env.scaled((exposure / frontal) as f32))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders `train + test` figure scenes, each under every light of its
/// split, and writes them below `out_dir` with a `manifest.json`.
///
/// Train scenes use the rotations of one env map, test scenes the
/// rotations of a second, unseen map.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_samples = (2 * config.env_height * config.env_height).max(1000);
    let mut env_rng = stream_rng(config.seed, 0);
    let env = procedural_envmap(&mut env_rng, config.env_height, config.exposure)?;
    let train_lights = expand_light_set(&[env], config.interval_deg, n_samples)?;
    let test_lights = if config.held_out_lights {
        let env = procedural_envmap(&mut env_rng, config.env_height, config.exposure)?;
        expand_light_set(&[env], config.interval_deg, n_samples)?
    } else {
        train_lights.clone()
    };
    train_lights.write(out_dir.join("lights_train.json"))?;
    test_lights.write(out_dir.join("lights_test.json"))?;

    let mut scenes = Vec::new();
    for idx in 0..config.train + config.test {
        let (split, lights) = if idx < config.train {
            ("train", &train_lights)
        } else {
            ("test", &test_lights)
        };
        let id = format!("scene_{idx:03}");
        let rel = |name: &str| format!("{id}/{name}");
        let dir = out_dir.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mut rng = stream_rng(config.seed, 1 + idx as u64);
        let scene = random_scene(&mut rng);
        let mut sample = RenderSample::render(
            &scene,
            config.resolution,
            config.n_dirs,
            config.seed.wrapping_add(idx as u64 + 1),
        )?;
        let albedo = sample.geometry.albedo.map(|a| quantize(a as f64) as f32);
        sample.geometry.albedo = albedo.clone();

        write_json(&dir.join("scene.json"), &scene)?;
        albedo.write_png(dir.join("albedo.png"))?;
        sample.geometry.mask.write_png(dir.join("mask.png"))?;
        sample.geometry.skin.write_png(dir.join("skin.png"))?;
        sample.geometry.normals.write_rlt(dir.join("normals.rlt"))?;
        sample.transport.data().write_rlt(dir.join("transport.rlt"))?;

        let photo_source = if config.gloss {
            sample.clone()
        } else {
            RenderSample {
                scene: scene.without_gloss(),
                ..sample.clone()
            }
        };
        let mut samples = Vec::new();
        for (k, light) in lights.lights().enumerate() {
            let image = reconstruct(&albedo, &compose_shading(&sample.transport, light)?)?;
            let photo = render_glossy(&photo_source, light, [0.0, 0.0, 1.0])?;
            let names = [
                format!("light_{k:02}.json"),
                format!("image_{k:02}.rlt"),
                format!("image_{k:02}.png"),
                format!("photo_{k:02}.rlt"),
                format!("photo_{k:02}.png"),
            ];
            light.write(dir.join(&names[0]))?;
            image.write_rlt(dir.join(&names[1]))?;
            image.write_png(dir.join(&names[2]))?;
            photo.write_rlt(dir.join(&names[3]))?;
            photo.write_png(dir.join(&names[4]))?;
            let [light, image, image_png, photo, photo_png] = names.map(|n| rel(&n));
            samples.push(SampleEntry {
                light_index: k,
                light,
                image,
                image_png,
                photo,
                photo_png,
            });
        }
        scenes.push(SceneEntry {
            id: id.clone(),
            split: split.into(),
            scene: rel("scene.json"),
            albedo: rel("albedo.png"),
            mask: rel("mask.png"),
            skin: rel("skin.png"),
            normals: rel("normals.rlt"),
            transport: rel("transport.rlt"),
            samples,
        });
    }
    let manifest = DatasetManifest {
        seed: config.seed,
        resolution: config.resolution,
        n_dirs: config.n_dirs,
        interval_deg: config.interval_deg,
        gloss: config.gloss,
        train_lights: "lights_train.json".into(),
        test_lights: "lights_test.json".into(),
        scenes,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
