//! Closed-form and brute-force references.

use std::f64::consts::PI;

use relight_core::imaging::ImageTensor;

pub fn formula_tap(sigma: f64, dx: f64, dy: f64) -> f64 {
    let r2 = dx * dx + dy * dy;
    let s2 = sigma * sigma;
    -(1.0 / (2.0 * PI * s2)) * (2.0 - r2 / s2) * (-r2 / s2).exp()
}

/// Zero-padded nested-loop filtering with the kernel evaluated from the
/// closed form, then the weighted mean squared response.
pub fn brute_force_sf(a: &ImageTensor, b: &ImageTensor, sigmas: &[f64], weights: &[f64]) -> f64 {
    let (h, w, c) = a.dims();
    let mut total = 0.0;
    for (&sigma, &weight) in sigmas.iter().zip(weights) {
        let r = (3.0 * sigma).ceil() as i64;
        let mut energy = 0.0;
        for ch in 0..c {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y + dy, x + dx);
                            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            let (yy, xx) = (yy as usize, xx as usize);
                            let d = a.get(yy, xx, ch) as f64 - b.get(yy, xx, ch) as f64;
                            acc += formula_tap(sigma, dx as f64, dy as f64) * d;
                        }
                    }
                    energy += acc * acc;
                }
            }
        }
        total += weight * energy;
    }
    total / (c * h * w) as f64
}

/// Zonal basis `Y_l0(θ)` written from the Legendre polynomials.
pub fn y_l0(l: usize, theta: f64) -> f64 {
    let x = theta.cos();
    let p = match l {
        0 => 1.0,
        1 => x,
        _ => 0.5 * (3.0 * x * x - 1.0),
    };
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * p
}

/// `2π ∫₀^{π/2} cosθ · Y_l0(θ) · sinθ dθ` by composite Simpson.
pub fn clamped_cosine_quadrature(l: usize) -> f64 {
    let n = 2000;
    let h = (PI / 2.0) / n as f64;
    let f = |t: f64| t.cos() * y_l0(l, t) * t.sin();
    let mut s = f(0.0) + f(PI / 2.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * PI * s * h / 3.0
}
