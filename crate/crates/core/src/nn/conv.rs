//! Direct 2-D convolution kernels. Each output plane is produced by one
//! task with a fixed loop order, so results do not depend on threading.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output positions `o` whose input index `o·s + t − p` lies in `0..n`.
    fn valid(&self, t: usize, n: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(t).div_ceil(s);
        // largest o with o*s + t - p <= n - 1
        let hi = if n + self.pad < t + 1 {
            0
        } else {
            ((n + self.pad - t - 1) / s + 1).min(n_out)
        };
        (lo, hi.max(lo))
    }
}

pub fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let (k, s, p) = (g.k, g.stride, g.pad);
    let mut out = vec![0.0; g.c_out * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(oc, plane)| {
        plane.fill(b[oc]);
        for ic in 0..g.c_in {
            let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..k {
                let (y0, y1) = g.valid(ky, g.h, ho);
                for kx in 0..k {
                    let wv = w[((oc * g.c_in + ic) * k + ky) * k + kx];
                    let (x0, x1) = g.valid(kx, g.w, wo);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let row_in = &xin[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut plane[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let off = kx as isize - p as isize;
                            let src = &row_in[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                            for (o, v) in row_out[x0..x1].iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                row_out[ox] += wv * row_in[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the input.
pub fn backward_input(g: &ConvGeom, dy: &[f64], w: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let (k, s, p) = (g.k, g.stride, g.pad);
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    dx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(ic, plane)| {
        for oc in 0..g.c_out {
            let dplane = &dy[oc * ho * wo..(oc + 1) * ho * wo];
            for ky in 0..k {
                let (y0, y1) = g.valid(ky, g.h, ho);
                for kx in 0..k {
                    let wv = w[((oc * g.c_in + ic) * k + ky) * k + kx];
                    let (x0, x1) = g.valid(kx, g.w, wo);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let drow = &dplane[oy * wo..(oy + 1) * wo];
                        let row = &mut plane[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            let off = kx as isize - p as isize;
                            let dst = &mut row[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                            for (d, v) in dst.iter_mut().zip(&drow[x0..x1]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                row[ox * s + kx - p] += wv * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Gradients with respect to the weights and the bias.
pub fn backward_params(g: &ConvGeom, dy: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let (k, s, p) = (g.k, g.stride, g.pad);
    let per_oc = g.c_in * k * k;
    let mut dw = vec![0.0; g.c_out * per_oc];
    dw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, dwo)| {
        let dplane = &dy[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..g.c_in {
            let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..k {
                let (y0, y1) = g.valid(ky, g.h, ho);
                for kx in 0..k {
                    let (x0, x1) = g.valid(kx, g.w, wo);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let drow = &dplane[oy * wo..(oy + 1) * wo];
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            let off = kx as isize - p as isize;
                            let src = &row[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                            acc += drow[x0..x1].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            for ox in x0..x1 {
                                acc += drow[ox] * row[ox * s + kx - p];
                            }
                        }
                    }
                    dwo[(ic * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    let db = dy.chunks(ho * wo).map(|c| c.iter().sum()).collect();
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut out = vec![0.0; g.c_out * ho * wo];
        for oc in 0..g.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((oc * g.c_in + ic) * g.k + ky) * g.k + kx]
                                    * x[(ic * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(oc * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_nested_loops() {
        for (stride, k, h, w) in [(1, 3, 5, 5), (2, 3, 6, 6), (2, 3, 7, 5), (1, 1, 4, 3), (1, 3, 1, 4)] {
            let g = ConvGeom {
                c_in: 2,
                c_out: 3,
                h,
                w,
                k,
                stride,
                pad: k / 2,
            };
            let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
            let wt: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 13 % 11) as f64 - 5.0) / 5.0).collect();
            let b = [0.1, -0.2, 0.3];
            let got = forward(&g, &x, &wt, &b);
            let want = naive(&g, &x, &wt, &b);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
