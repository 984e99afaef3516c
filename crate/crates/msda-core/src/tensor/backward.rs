//! Backward rules, one per op.

use super::fft::{fft2_batch, FftDirection};
use super::graph::{matmul_raw, softmax_raw, transpose_last_raw, Graph, Op};
use super::ops_fft::darcy_div_raw;
use super::tensor::Tensor;
use crate::error::Result;
use rayon::prelude::*;

impl Graph {
    pub(crate) fn backprop_one(&mut self, idx: usize, op: Op, grad: Tensor) -> Result<()> {
        let g = grad.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = {
                    let bv = self.nodes[b.0].value.data();
                    g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect()
                };
                let db: Vec<f64> = {
                    let av = self.nodes[a.0].value.data();
                    g.iter().zip(av).map(|(gi, ai)| gi * ai).collect()
                };
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Neg(a) => {
                let d: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(a, &d);
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                self.accumulate(a, &d);
            }
            Op::AddBias(a, bias) => {
                self.accumulate(a, g);
                let m = self.nodes[bias.0].value.numel();
                let mut db = vec![0.0; m];
                for (i, gi) in g.iter().enumerate() {
                    db[i % m] += gi;
                }
                self.accumulate(bias, &db);
            }
            Op::AddConst(a) => self.accumulate(a, g),
            Op::Relu(a) => {
                let d: Vec<f64> = {
                    let xv = self.nodes[a.0].value.data();
                    g.iter()
                        .zip(xv)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect()
                };
                self.accumulate(a, &d);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = {
                    let yv = self.nodes[idx].value.data();
                    g.iter().zip(yv).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect()
                };
                self.accumulate(a, &d);
            }
            Op::Matmul(a, w) => {
                let (n, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let m = self.nodes[w.0].value.shape()[1];
                if self.requires(a) {
                    let da = {
                        let wt = transpose_last_raw(&self.nodes[w.0].value);
                        matmul_raw(g, wt.data(), n, m, k)
                    };
                    self.accumulate(a, &da);
                }
                if self.requires(w) {
                    let dw = {
                        let at = transpose_last_raw(&self.nodes[a.0].value);
                        matmul_raw(at.data(), g, k, n, m)
                    };
                    self.accumulate(w, &dw);
                }
            }
            Op::Bmm(a, w) => {
                let (b, n, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let m = self.nodes[w.0].value.shape()[2];
                if self.requires(a) {
                    let mut da = vec![0.0; b * n * k];
                    {
                        let wt = transpose_last_raw(&self.nodes[w.0].value);
                        for i in 0..b {
                            let block = matmul_raw(
                                &g[i * n * m..(i + 1) * n * m],
                                &wt.data()[i * m * k..(i + 1) * m * k],
                                n,
                                m,
                                k,
                            );
                            da[i * n * k..(i + 1) * n * k].copy_from_slice(&block);
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.requires(w) {
                    let mut dw = vec![0.0; b * k * m];
                    {
                        let at = transpose_last_raw(&self.nodes[a.0].value);
                        for i in 0..b {
                            let block = matmul_raw(
                                &at.data()[i * k * n..(i + 1) * k * n],
                                &g[i * n * m..(i + 1) * n * m],
                                k,
                                n,
                                m,
                            );
                            dw[i * k * m..(i + 1) * k * m].copy_from_slice(&block);
                        }
                    }
                    self.accumulate(w, &dw);
                }
            }
            Op::TransposeLast(a) => {
                let d = transpose_last_raw(&grad);
                self.accumulate(a, d.data());
            }
            Op::Reshape(a) => self.accumulate(a, g),
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                let d = vec![g[0]; n];
                self.accumulate(a, &d);
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[idx].value.clone();
                let shape = y.shape();
                let len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let yv = y.data();
                let mut d = vec![0.0; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let mut dot = 0.0;
                        for k in 0..len {
                            dot += g[at(k)] * yv[at(k)];
                        }
                        for k in 0..len {
                            d[at(k)] = yv[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(x, &d);
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0;
                for p in parts {
                    let len_p = self.nodes[p.0].value.shape()[axis];
                    let mut d = vec![0.0; outer * len_p * inner];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len_p * inner;
                        d[dst..dst + len_p * inner].copy_from_slice(&g[src..src + len_p * inner]);
                    }
                    self.accumulate(p, &d);
                    offset += len_p;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.nodes[x.0].value.shape().to_vec();
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let (full, len) = (in_shape[axis], out_shape[axis]);
                let mut d = vec![0.0; self.nodes[x.0].value.numel()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(x, &d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let m = *normalized.shape().last().unwrap();
                let rows = normalized.numel() / m;
                let nv = normalized.data();
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let mut dx = vec![0.0; nv.len()];
                let mut dgamma = vec![0.0; m];
                let mut dbeta = vec![0.0; m];
                for r in 0..rows {
                    let mut mean_gg = 0.0;
                    let mut mean_ggx = 0.0;
                    for j in 0..m {
                        let gg = gv[j] * g[r * m + j];
                        mean_gg += gg;
                        mean_ggx += gg * nv[r * m + j];
                    }
                    mean_gg /= m as f64;
                    mean_ggx /= m as f64;
                    for j in 0..m {
                        let gg = gv[j] * g[r * m + j];
                        dx[r * m + j] = inv_std[r] * (gg - mean_gg - nv[r * m + j] * mean_ggx);
                        dgamma[j] += g[r * m + j] * nv[r * m + j];
                        dbeta[j] += g[r * m + j];
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
            } => {
                let shape = normalized.shape().to_vec();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let n_eff = (n * h * w) as f64;
                let nv = normalized.data();
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let mut dx = vec![0.0; nv.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ch) * h * w;
                        for k in 0..h * w {
                            sum_g += g[base + k];
                            sum_gx += g[base + k] * nv[base + k];
                        }
                    }
                    dgamma[ch] = sum_gx;
                    dbeta[ch] = sum_g;
                    let (mean_gg, mean_ggx) = if train {
                        (gv[ch] * sum_g / n_eff, gv[ch] * sum_gx / n_eff)
                    } else {
                        (0.0, 0.0)
                    };
                    for ni in 0..n {
                        let base = (ni * c + ch) * h * w;
                        for k in 0..h * w {
                            let gg = gv[ch] * g[base + k];
                            dx[base + k] =
                                inv_std[ch] * (gg - mean_gg - nv[base + k] * mean_ggx);
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::Conv2d { x, w, b, kernel } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = self.nodes[w.0].value.shape()[0];
                let pad = kernel / 2;
                if self.requires(x) {
                    let dx = {
                        let wv = self.nodes[w.0].value.data();
                        let mut dx = vec![0.0; n * cin * h * wd];
                        dx.par_chunks_mut(h * wd).enumerate().for_each(|(plane, dst)| {
                            let ni = plane / cin;
                            let ic = plane % cin;
                            for yy in 0..h {
                                for xx in 0..wd {
                                    let mut acc = 0.0;
                                    for oc in 0..cout {
                                        for di in 0..kernel {
                                            let oy = yy as isize - (di as isize - pad as isize);
                                            if oy < 0 || oy >= h as isize {
                                                continue;
                                            }
                                            for dj in 0..kernel {
                                                let ox = xx as isize - (dj as isize - pad as isize);
                                                if ox < 0 || ox >= wd as isize {
                                                    continue;
                                                }
                                                acc += wv
                                                    [((oc * cin + ic) * kernel + di) * kernel + dj]
                                                    * g[((ni * cout + oc) * h + oy as usize) * wd
                                                        + ox as usize];
                                            }
                                        }
                                    }
                                    dst[yy * wd + xx] = acc;
                                }
                            }
                        });
                        dx
                    };
                    self.accumulate(x, &dx);
                }
                if self.requires(w) {
                    let dw = {
                        let xv = self.nodes[x.0].value.data();
                        let mut dw = vec![0.0; cout * cin * kernel * kernel];
                        dw.par_chunks_mut(kernel * kernel)
                            .enumerate()
                            .for_each(|(pair, dst)| {
                                let oc = pair / cin;
                                let ic = pair % cin;
                                for di in 0..kernel {
                                    for dj in 0..kernel {
                                        let mut acc = 0.0;
                                        for ni in 0..n {
                                            for yy in 0..h {
                                                let sy =
                                                    yy as isize + di as isize - pad as isize;
                                                if sy < 0 || sy >= h as isize {
                                                    continue;
                                                }
                                                for xx in 0..wd {
                                                    let sx = xx as isize + dj as isize
                                                        - pad as isize;
                                                    if sx < 0 || sx >= wd as isize {
                                                        continue;
                                                    }
                                                    acc += g[((ni * cout + oc) * h + yy) * wd + xx]
                                                        * xv[((ni * cin + ic) * h + sy as usize)
                                                            * wd
                                                            + sx as usize];
                                                }
                                            }
                                        }
                                        dst[di * kernel + dj] = acc;
                                    }
                                }
                            });
                        dw
                    };
                    self.accumulate(w, &dw);
                }
                if self.requires(b) {
                    let mut db = vec![0.0; cout];
                    for ni in 0..n {
                        for oc in 0..cout {
                            let base = (ni * cout + oc) * h * wd;
                            for k in 0..h * wd {
                                db[oc] += g[base + k];
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Dropout { x, mask } => {
                let d: Vec<f64> = g.iter().zip(&mask).map(|(gi, m)| gi * m).collect();
                self.accumulate(x, &d);
            }
            Op::RealToComplex(a) => {
                let d: Vec<f64> = g.chunks_exact(2).map(|c| c[0]).collect();
                self.accumulate(a, &d);
            }
            Op::RealPart(a) => {
                let mut d = vec![0.0; g.len() * 2];
                for (i, gi) in g.iter().enumerate() {
                    d[i * 2] = *gi;
                }
                self.accumulate(a, &d);
            }
            Op::Fft2 { x, inverse } => {
                // Adjoint of the unnormalized DFT is N·IFFT; adjoint of the
                // 1/N-scaled inverse is (1/N)·FFT.
                let shape = self.nodes[idx].value.shape().to_vec();
                let (h, w) = (shape[shape.len() - 3], shape[shape.len() - 2]);
                let mut d = g.to_vec();
                if inverse {
                    fft2_batch(&mut d, h, w, FftDirection::Forward);
                    let scale = 1.0 / (h * w) as f64;
                    for v in d.iter_mut() {
                        *v *= scale;
                    }
                } else {
                    fft2_batch(&mut d, h, w, FftDirection::Inverse);
                    let scale = (h * w) as f64;
                    for v in d.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(x, &d);
            }
            Op::SpectralMix { x, w, rows, cols } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = self.nodes[w.0].value.shape()[0];
                let (nr, nc) = (rows.len(), cols.len());
                if self.requires(x) {
                    let dx = {
                        let wv = self.nodes[w.0].value.data();
                        let mut dx = vec![0.0; n * cin * h * wd * 2];
                        for ni in 0..n {
                            for ic in 0..cin {
                                for (ri, &rr) in rows.iter().enumerate() {
                                    for (ci, &cc) in cols.iter().enumerate() {
                                        let (mut acc_re, mut acc_im) = (0.0, 0.0);
                                        for oc in 0..cout {
                                            let gb = (((ni * cout + oc) * h + rr) * wd + cc) * 2;
                                            let wb =
                                                (((oc * cin + ic) * nr + ri) * nc + ci) * 2;
                                            let (gr, gi) = (g[gb], g[gb + 1]);
                                            let (wr, wi) = (wv[wb], wv[wb + 1]);
                                            // conj(w) · g
                                            acc_re += wr * gr + wi * gi;
                                            acc_im += wr * gi - wi * gr;
                                        }
                                        let xb = (((ni * cin + ic) * h + rr) * wd + cc) * 2;
                                        dx[xb] = acc_re;
                                        dx[xb + 1] = acc_im;
                                    }
                                }
                            }
                        }
                        dx
                    };
                    self.accumulate(x, &dx);
                }
                if self.requires(w) {
                    let dw = {
                        let xv = self.nodes[x.0].value.data();
                        let mut dw = vec![0.0; cout * cin * nr * nc * 2];
                        for oc in 0..cout {
                            for ic in 0..cin {
                                for (ri, &rr) in rows.iter().enumerate() {
                                    for (ci, &cc) in cols.iter().enumerate() {
                                        let (mut acc_re, mut acc_im) = (0.0, 0.0);
                                        for ni in 0..n {
                                            let gb = (((ni * cout + oc) * h + rr) * wd + cc) * 2;
                                            let xb = (((ni * cin + ic) * h + rr) * wd + cc) * 2;
                                            let (gr, gi) = (g[gb], g[gb + 1]);
                                            let (xr, xi) = (xv[xb], xv[xb + 1]);
                                            // conj(x) · g
                                            acc_re += xr * gr + xi * gi;
                                            acc_im += xr * gi - xi * gr;
                                        }
                                        let wb = (((oc * cin + ic) * nr + ri) * nc + ci) * 2;
                                        dw[wb] = acc_re;
                                        dw[wb + 1] = acc_im;
                                    }
                                }
                            }
                        }
                        dw
                    };
                    self.accumulate(w, &dw);
                }
            }
            Op::Tokenize { x, map } => {
                let plane = map.len();
                let n = self.nodes[x.0].value.numel() / plane;
                let mut d = vec![0.0; n * plane];
                for ni in 0..n {
                    for (pos, &src) in map.iter().enumerate() {
                        d[ni * plane + src] = g[ni * plane + pos];
                    }
                }
                self.accumulate(x, &d);
            }
            Op::Untokenize { x, map } => {
                let plane = map.len();
                let n = self.nodes[x.0].value.numel() / plane;
                let mut d = vec![0.0; n * plane];
                for ni in 0..n {
                    for (pos, &dst) in map.iter().enumerate() {
                        d[ni * plane + pos] = g[ni * plane + dst];
                    }
                }
                self.accumulate(x, &d);
            }
            Op::DarcyResidual { p, kappa, hx, hy } => {
                // The stencil matrix is symmetric, so the adjoint reapplies it.
                let shape = self.nodes[idx].value.shape().to_vec();
                let d = darcy_div_raw(g, kappa.data(), &shape, hx, hy);
                self.accumulate(p, &d);
            }
        }
        Ok(())
    }
}

/// The softmax forward helper is re-exported for tests.
pub(crate) fn _softmax_for_tests(t: &Tensor, axis: usize) -> Tensor {
    softmax_raw(t, axis)
}
