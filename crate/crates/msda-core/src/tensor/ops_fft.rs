//! Spectral-domain ops, coarse-cell tokenization, and the Darcy residual.

use super::fft::{fft2_batch, FftDirection};
use super::graph::{Graph, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::rc::Rc;

/// Retained mode indices along one axis: the lowest `m` nonnegative
/// frequencies plus the `m` highest (negative) ones, deduplicated. With
/// `m = H/2` (even `H`) or `m = ⌈H/2⌉` (odd) this covers every index.
pub fn retained_modes(len: usize, m: usize) -> Vec<usize> {
    let mut set = std::collections::BTreeSet::new();
    for i in 0..m.min(len) {
        set.insert(i);
    }
    for i in len.saturating_sub(m)..len {
        set.insert(i);
    }
    set.into_iter().collect()
}

impl Graph {
    /// Real tensor [..., H, W] → packed complex [..., H, W, 2] with zero
    /// imaginary part.
    pub fn to_complex(&mut self, x: NodeId) -> Result<NodeId> {
        let mut shape = self.shape(x).to_vec();
        shape.push(2);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len() * 2];
        for (i, &v) in xv.iter().enumerate() {
            out[i * 2] = v;
        }
        let t = Tensor::from_vec(&shape, out)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::RealToComplex(x), req))
    }

    /// Real part of a packed complex tensor.
    pub fn real_part(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.last() != Some(&2) {
            return Err(Error::ShapeMismatch {
                op: "real_part",
                lhs: shape,
                rhs: vec![2],
            });
        }
        let xv = self.value(x).data();
        let out: Vec<f64> = xv.chunks_exact(2).map(|c| c[0]).collect();
        let t = Tensor::from_vec(&shape[..shape.len() - 1], out)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::RealPart(x), req))
    }

    /// Unnormalized forward 2D FFT over the trailing [H, W, 2] axes.
    pub fn fft2(&mut self, x: NodeId) -> Result<NodeId> {
        self.fft2_impl(x, false)
    }

    /// Inverse 2D FFT (scaled by 1/(H·W)) over the trailing [H, W, 2] axes.
    pub fn ifft2(&mut self, x: NodeId) -> Result<NodeId> {
        self.fft2_impl(x, true)
    }

    fn fft2_impl(&mut self, x: NodeId, inverse: bool) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 || shape.last() != Some(&2) {
            return Err(Error::ShapeMismatch {
                op: "fft2",
                lhs: shape,
                rhs: vec![0, 0, 2],
            });
        }
        if shape.iter().product::<usize>() == 0 {
            return Err(Error::InvalidArgument {
                what: "fft2",
                msg: "empty tensor".to_string(),
            });
        }
        let (h, w) = (shape[shape.len() - 3], shape[shape.len() - 2]);
        let mut data = self.value(x).data().to_vec();
        fft2_batch(
            &mut data,
            h,
            w,
            if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            },
        );
        let t = Tensor::from_vec(&shape, data)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::Fft2 { x, inverse }, req))
    }

    /// Mode-truncated channel mixing in the frequency domain.
    ///
    /// `x`: [N, Cin, H, W, 2]; `w`: [Cout, Cin, NR, NC, 2] with NR/NC the
    /// retained row/column index counts. Output spectrum is zero outside the
    /// retained modes and `ŷ[n,o] = Σ_c w[o,c] · x̂[n,c]` (complex) on them.
    pub fn spectral_mix(
        &mut self,
        x: NodeId,
        w: NodeId,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || xs[4] != 2 || ws.len() != 5 || ws[4] != 2 {
            return Err(Error::ShapeMismatch {
                op: "spectral_mix",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        if ws[1] != cin || ws[2] != rows.len() || ws[3] != cols.len() {
            let expected = vec![ws[0], cin, rows.len(), cols.len(), 2];
            return Err(Error::ShapeMismatch {
                op: "spectral_mix",
                lhs: ws,
                rhs: expected,
            });
        }
        if rows.iter().any(|&r| r >= h) || cols.iter().any(|&c| c >= wd) {
            return Err(Error::InvalidArgument {
                what: "spectral_mix",
                msg: format!("mode index outside {h}x{wd} grid"),
            });
        }
        let cout = ws[0];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * cout * h * wd * 2];
        for ni in 0..n {
            for oc in 0..cout {
                for (ri, &rr) in rows.iter().enumerate() {
                    for (ci, &cc) in cols.iter().enumerate() {
                        let (mut acc_re, mut acc_im) = (0.0, 0.0);
                        for ic in 0..cin {
                            let xb = (((ni * cin + ic) * h + rr) * wd + cc) * 2;
                            let wb = (((oc * cin + ic) * rows.len() + ri) * cols.len() + ci) * 2;
                            let (xr, xi) = (xv[xb], xv[xb + 1]);
                            let (wr, wi) = (wv[wb], wv[wb + 1]);
                            acc_re += wr * xr - wi * xi;
                            acc_im += wr * xi + wi * xr;
                        }
                        let ob = (((ni * cout + oc) * h + rr) * wd + cc) * 2;
                        out[ob] = acc_re;
                        out[ob + 1] = acc_im;
                    }
                }
            }
        }
        let t = Tensor::from_vec(&[n, cout, h, wd, 2], out)?;
        let req = self.requires(x) || self.requires(w);
        Ok(self.push(
            t,
            Op::SpectralMix {
                x,
                w,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
            },
            req,
        ))
    }

    /// Partition a [N, 1, H, W] field into tokens by a fixed cell order:
    /// `map[t·k + j]` is the row-major plane index of token `t`, slot `j`.
    pub fn tokenize(&mut self, x: NodeId, map: Rc<Vec<usize>>, token_len: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != 1 || map.len() != xs[2] * xs[3] || map.len() % token_len != 0 {
            return Err(Error::ShapeMismatch {
                op: "tokenize",
                lhs: xs,
                rhs: vec![map.len(), token_len],
            });
        }
        let n = xs[0];
        let plane = xs[2] * xs[3];
        let tokens = map.len() / token_len;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * plane];
        for ni in 0..n {
            for (pos, &src) in map.iter().enumerate() {
                out[ni * plane + pos] = xv[ni * plane + src];
            }
        }
        let t = Tensor::from_vec(&[n, tokens, token_len], out)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::Tokenize { x, map }, req))
    }

    /// Inverse of [`tokenize`](Self::tokenize): [N, T, k] → [N, 1, H, W].
    pub fn untokenize(
        &mut self,
        x: NodeId,
        map: Rc<Vec<usize>>,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] * xs[2] != h * w || map.len() != h * w {
            return Err(Error::ShapeMismatch {
                op: "untokenize",
                lhs: xs,
                rhs: vec![h, w],
            });
        }
        let n = xs[0];
        let plane = h * w;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * plane];
        for ni in 0..n {
            for (pos, &dst) in map.iter().enumerate() {
                out[ni * plane + dst] = xv[ni * plane + pos];
            }
        }
        let t = Tensor::from_vec(&[n, 1, h, w], out)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::Untokenize { x, map }, req))
    }

    /// Conservative five-point `−div(κ∇p)` of cell-centered pressures.
    ///
    /// `p`: [N, H, W]; `kappa`: per-sample positive fields of the same shape
    /// (not differentiated). Face conductances use harmonic means; boundary
    /// faces are no-flow. Subtract the source field to obtain the residual.
    pub fn darcy_div(&mut self, p: NodeId, kappa: Rc<Tensor>, hx: f64, hy: f64) -> Result<NodeId> {
        let ps = self.shape(p).to_vec();
        if ps.len() != 3 || kappa.shape() != ps {
            return Err(Error::ShapeMismatch {
                op: "darcy_div",
                lhs: ps,
                rhs: kappa.shape().to_vec(),
            });
        }
        if let Some(k) = kappa.data().iter().find(|&&k| !(k > 0.0)) {
            return Err(Error::InvalidArgument {
                what: "kappa",
                msg: format!("permeability must be positive, found {k}"),
            });
        }
        let out = darcy_div_raw(self.value(p).data(), kappa.data(), &ps, hx, hy);
        let t = Tensor::from_vec(&ps, out)?;
        let req = self.requires(p);
        Ok(self.push(t, Op::DarcyResidual { p, kappa, hx, hy }, req))
    }
}

/// The κ-weighted stencil shared by forward and backward (it is symmetric).
pub(crate) fn darcy_div_raw(p: &[f64], kappa: &[f64], shape: &[usize], hx: f64, hy: f64) -> Vec<f64> {
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    let (hx2, hy2) = (hx * hx, hy * hy);
    let harm = |a: f64, b: f64| 2.0 / (1.0 / a + 1.0 / b);
    let mut out = vec![0.0; p.len()];
    for ni in 0..n {
        let base = ni * h * w;
        for j in 0..h {
            for i in 0..w {
                let c = base + j * w + i;
                let mut acc = 0.0;
                if i > 0 {
                    let o = c - 1;
                    acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hx2;
                }
                if i + 1 < w {
                    let o = c + 1;
                    acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hx2;
                }
                if j > 0 {
                    let o = c - w;
                    acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hy2;
                }
                if j + 1 < h {
                    let o = c + w;
                    acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hy2;
                }
                out[c] = acc;
            }
        }
    }
    out
}
