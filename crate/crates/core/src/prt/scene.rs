use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

#[inline]
pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Segment `a`–`b` swept by a sphere of `radius`.
    Capsule {
        a: Vec3,
        b: Vec3,
        radius: f64,
    },
}

/// Albedo pattern, evaluated at the world-space hit point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Constant {
        color: Vec3,
    },
    /// Squares of side `1 / scale` in world x/y.
    Checker {
        a: Vec3,
        b: Vec3,
        scale: f64,
    },
    /// Linear blend from `a` at world y = -1 to `b` at y = +1.
    Gradient {
        a: Vec3,
        b: Vec3,
    },
}

impl Texture {
    pub fn eval(&self, p: Vec3) -> Vec3 {
        match self {
            Texture::Constant { color } => *color,
            Texture::Checker { a, b, scale } => {
                let i = ((p[0] + 1.0) * scale).floor() as i64 + ((p[1] + 1.0) * scale).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Gradient { a, b } => {
                let t = ((p[1] + 1.0) * 0.5).clamp(0.0, 1.0);
                [
                    a[0] + t * (b[0] - a[0]),
                    a[1] + t * (b[1] - a[1]),
                    a[2] + t * (b[2] - a[2]),
                ]
            }
        }
    }
}

/// Blinn-Phong lobe `ks · max(0, n·h)^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gloss {
    pub ks: f64,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
    #[serde(default)]
    pub gloss: Option<Gloss>,
    #[serde(default)]
    pub skin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

/// Closest positive root of `|o + t d - c|^2 = r^2` above `t_min`.
fn sphere_hit(o: Vec3, d: Vec3, c: Vec3, r: f64, t_min: f64) -> Option<f64> {
    let oc = sub(o, c);
    let a = dot(d, d);
    let b = dot(oc, d);
    let cc = dot(oc, oc) - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = (-b - s) / a;
    if t0 > t_min {
        return Some(t0);
    }
    let t1 = (-b + s) / a;
    (t1 > t_min).then_some(t1)
}

/// Hit against the open cylinder between `a` and `b`.
fn cylinder_hit(o: Vec3, d: Vec3, a: Vec3, b: Vec3, r: f64, t_min: f64) -> Option<f64> {
    let ba = sub(b, a);
    let oa = sub(o, a);
    let baba = dot(ba, ba);
    let bard = dot(ba, d);
    let baoa = dot(ba, oa);
    let qa = baba * dot(d, d) - bard * bard;
    if qa.abs() < 1e-12 {
        return None;
    }
    let qb = baba * dot(oa, d) - baoa * bard;
    let qc = baba * dot(oa, oa) - baoa * baoa - r * r * baba;
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    for t in [(-qb - s) / qa, (-qb + s) / qa] {
        if t > t_min {
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                return Some(t);
            }
        }
    }
    None
}

fn closest_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ba = sub(b, a);
    let t = (dot(sub(p, a), ba) / dot(ba, ba)).clamp(0.0, 1.0);
    add_scaled(a, ba, t)
}

impl Shape {
    pub fn intersect(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => sphere_hit(o, d, center, radius, t_min),
            Shape::Capsule { a, b, radius } => [
                cylinder_hit(o, d, a, b, radius, t_min),
                sphere_hit(o, d, a, radius, t_min),
                sphere_hit(o, d, b, radius, t_min),
            ]
            .into_iter()
            .flatten()
            .min_by(f64::total_cmp),
        }
    }

    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } => normalize(sub(p, center)),
            Shape::Capsule { a, b, .. } => normalize(sub(p, closest_on_segment(p, a, b))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { center, radius } => {
                center.iter().all(|v| v.is_finite()) && radius.is_finite() && *radius > 0.0
            }
            Shape::Capsule { a, b, radius } => {
                a.iter().chain(b).all(|v| v.is_finite())
                    && radius.is_finite()
                    && *radius > 0.0
                    && dot(sub(*b, *a), sub(*b, *a)) > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate shape {self:?}")))
        }
    }
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        let scene = Scene { primitives };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            if let Some(g) = p.gloss {
                if !(g.ks >= 0.0 && g.exponent >= 1.0) {
                    return Err(Error::invalid(format!(
                        "gloss needs ks >= 0 and exponent >= 1, got {g:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nearest hit as `(t, primitive index)`.
    pub fn intersect(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.shape.intersect(o, d, t_min).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn occluded(&self, o: Vec3, d: Vec3, t_min: f64) -> bool {
        self.primitives.iter().any(|p| p.shape.intersect(o, d, t_min).is_some())
    }

    /// Same scene with every gloss lobe removed.
    pub fn without_gloss(&self) -> Scene {
        let mut s = self.clone();
        s.primitives.iter_mut().for_each(|p| p.gloss = None);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}
