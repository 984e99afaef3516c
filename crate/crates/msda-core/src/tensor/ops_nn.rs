//! Convolution, normalization, and dropout builders.

use super::graph::{Graph, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rayon::prelude::*;

/// Per-channel statistics produced by a train-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/N) variance, the quantity tracked by running statistics.
    pub var: Vec<f64>,
}

impl Graph {
    /// Same-padding stride-1 convolution on NCHW tensors; `kernel` is 1 or 3.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        if !(kernel == 1 || kernel == 3)
            || ws != [ws[0], cin, kernel, kernel]
            || self.shape(b) != [ws[0]]
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: ws,
                rhs: vec![cin, kernel, kernel],
            });
        }
        let cout = ws[0];
        let pad = kernel / 2;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();

        let mut out = vec![0.0; n * cout * h * wd];
        out.par_chunks_mut(h * wd).enumerate().for_each(|(plane, dst)| {
            let ni = plane / cout;
            let oc = plane % cout;
            for yy in 0..h {
                for xx in 0..wd {
                    let mut acc = bv[oc];
                    for ic in 0..cin {
                        for di in 0..kernel {
                            let sy = yy as isize + di as isize - pad as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for dj in 0..kernel {
                                let sx = xx as isize + dj as isize - pad as isize;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                acc += wv[((oc * cin + ic) * kernel + di) * kernel + dj]
                                    * xv[((ni * cin + ic) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    dst[yy * wd + xx] = acc;
                }
            }
        });
        let t = Tensor::from_vec(&[n, cout, h, wd], out)?;
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, kernel }, req))
    }

    /// Layer normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().ok_or(Error::InvalidArgument {
            what: "layer_norm",
            msg: "rank-0 input".to_string(),
        })?;
        if self.shape(gamma) != [m] || self.shape(beta) != [m] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = self.value(x).numel() / m;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..m {
                let nrm = (row[j] - mean) * is;
                normalized[r * m + j] = nrm;
                out[r * m + j] = gv[j] * nrm + bv[j];
            }
        }
        let t = Tensor::from_vec(&shape, out)?;
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized: Tensor::from_vec(&shape, normalized)?,
                inv_std,
            },
            req,
        ))
    }

    /// Batch normalization over (N, H, W) per channel of an NCHW tensor.
    ///
    /// In train mode the batch statistics normalize the data and are returned
    /// so the caller can update running statistics; in eval mode the provided
    /// running statistics make this a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: (&[f64], &[f64]),
        train: bool,
        eps: f64,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: shape,
                rhs: vec![0, 0, 0, 0],
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![c],
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let n_eff = (n * h * w) as f64;
        let xv = self.value(x).data();
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * h * w;
                    for k in 0..h * w {
                        s += xv[base + k];
                    }
                }
                let m = s / n_eff;
                let mut v = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * h * w;
                    for k in 0..h * w {
                        let d = xv[base + k] - m;
                        v += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = v / n_eff;
            }
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };

        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; xv.len()];
        for ch in 0..c {
            inv_std[ch] = 1.0 / (var[ch] + eps).sqrt();
        }
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * h * w;
                for k in 0..h * w {
                    let nrm = (xv[base + k] - mean[ch]) * inv_std[ch];
                    normalized[base + k] = nrm;
                    out[base + k] = gv[ch] * nrm + bv[ch];
                }
            }
        }
        let t = Tensor::from_vec(&shape, out)?;
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let id = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized: Tensor::from_vec(&shape, normalized)?,
                inv_std,
                train,
            },
            req,
        );
        let stats = train.then_some(BatchStats { mean, var });
        Ok((id, stats))
    }

    /// Inverted dropout with keep-scaling; identity in eval mode (do not
    /// insert the op). Mask draws come from the graph's seeded RNG.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument {
                what: "dropout rate",
                msg: format!("{rate} outside [0, 1)"),
            });
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::from_vec(self.shape(x), data)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::Dropout { x, mask }, req))
    }
}
