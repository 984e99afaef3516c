//! Minimal reverse-mode differentiation engine over dense f64 tensors.
//!
//! Covers exactly the operator set the two neural stages need: elementwise
//! arithmetic, (batched) matmul, same-padding 1×1/3×3 convolution, relu/tanh,
//! softmax, layer/batch norm, dropout, concat/slice/reshape, 2D FFTs with a
//! mode-truncated spectral mixer, coarse-cell tokenization, and the
//! conservative Darcy residual stencil. Complex tensors are packed real
//! pairs on a trailing axis of size 2.

mod adam;
mod backward;
mod checkpoint;
pub mod fft;
mod gradcheck;
mod graph;
mod ops_fft;
mod ops_nn;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{AdamConfig, Param, ParamSet};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use graph::{Graph, NodeId};
pub use ops_fft::retained_modes;
pub use ops_nn::BatchStats;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn randt(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 1.0, &mut rng)
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let mut g = Graph::new(0);
        let x = g.leaf(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap(), true);
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new(0);
        let x = g.leaf(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap(), false);
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut g = Graph::new(0);
        let x = g.leaf(randt(&[3, 5], 1), false);
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted_data: Vec<f64> = g.value(x).data().iter().map(|v| v + 7.5).collect();
        let xs = g.leaf(Tensor::from_vec(&[3, 5], shifted_data).unwrap(), false);
        let ys = g.softmax(xs, 1).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(ys).data()) {
            assert!((a - b).abs() < 1e-12, "softmax must ignore row shifts");
        }
    }

    /// Sliding-window convolution oracle, written directly from the
    /// definition.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64], kernel: usize) -> Vec<f64> {
        let (n, cin, h, wd) = (
            x.shape()[0],
            x.shape()[1],
            x.shape()[2],
            x.shape()[3],
        );
        let cout = w.shape()[0];
        let pad = kernel as isize / 2;
        let mut out = vec![0.0; n * cout * h * wd];
        for ni in 0..n {
            for oc in 0..cout {
                for yy in 0..h as isize {
                    for xx in 0..wd as isize {
                        let mut acc = b[oc];
                        for ic in 0..cin {
                            for di in 0..kernel as isize {
                                for dj in 0..kernel as isize {
                                    let (sy, sx) = (yy + di - pad, xx + dj - pad);
                                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((oc * cin + ic) * kernel
                                        + di as usize)
                                        * kernel
                                        + dj as usize]
                                        * x.data()[((ni * cin + ic) * h + sy as usize) * wd
                                            + sx as usize];
                                }
                            }
                        }
                        out[((ni * cout + oc) * h + yy as usize) * wd + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_sliding_window_oracle() {
        for kernel in [1usize, 3] {
            let x = randt(&[2, 3, 5, 5], 2);
            let w = randt(&[4, 3, kernel, kernel], 3);
            let b = randt(&[4], 4);
            let mut g = Graph::new(0);
            let (xi, wi, bi) = (g.leaf(x.clone(), false), g.leaf(w.clone(), false), g.leaf(b.clone(), false));
            let y = g.conv2d(xi, wi, bi, kernel).unwrap();
            let oracle = conv_oracle(&x, &w, b.data(), kernel);
            for (a, o) in g.value(y).data().iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_trivial_spectra_via_graph_ops() {
        let mut g = Graph::new(0);
        let c = 3.25;
        let x = g.leaf(Tensor::full(&[1, 4, 5], c), false);
        let xc = g.to_complex(x).unwrap();
        let f = g.fft2(xc).unwrap();
        let fv = g.value(f).data();
        assert_relative_eq!(fv[0], 20.0 * c, epsilon = 1e-10);
        for v in &fv[1..] {
            assert!(v.abs() < 1e-10);
        }
        let back = g.ifft2(f).unwrap();
        let re = g.real_part(back).unwrap();
        for (a, b) in g.value(re).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fft_rejects_empty_tensors() {
        let mut g = Graph::new(0);
        let x = g.leaf(Tensor::zeros(&[0, 3, 2]), false);
        assert!(g.fft2(x).is_err());
    }

    #[test]
    fn shape_errors_carry_both_shapes() {
        let mut g = Graph::new(0);
        let a = g.leaf(Tensor::zeros(&[2, 3]), false);
        let b = g.leaf(Tensor::zeros(&[3, 2]), false);
        match g.add(a, b) {
            Err(crate::error::Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn diamond_graph_sums_adjoints() {
        // y = x·a + x·b with shared x must equal the duplicated-x reference.
        let xval = randt(&[4], 10);
        let aval = randt(&[4], 11);
        let bval = randt(&[4], 12);

        let mut g = Graph::new(0);
        let x = g.leaf(xval.clone(), true);
        let a = g.leaf(aval.clone(), false);
        let b = g.leaf(bval.clone(), false);
        let xa = g.mul(x, a).unwrap();
        let xb = g.mul(x, b).unwrap();
        let y = g.add(xa, xb).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let shared = g.grad(x).unwrap().clone();

        let mut g2 = Graph::new(0);
        let x1 = g2.leaf(xval.clone(), true);
        let x2 = g2.leaf(xval, true);
        let a2 = g2.leaf(aval, false);
        let b2 = g2.leaf(bval, false);
        let xa2 = g2.mul(x1, a2).unwrap();
        let xb2 = g2.mul(x2, b2).unwrap();
        let y2 = g2.add(xa2, xb2).unwrap();
        let s2 = g2.sum(y2).unwrap();
        g2.backward(s2).unwrap();
        for i in 0..4 {
            let expect = g2.grad(x1).unwrap().data()[i] + g2.grad(x2).unwrap().data()[i];
            assert_relative_eq!(shared.data()[i], expect, epsilon = 1e-14);
        }
    }

    /// Build-and-sum helper for single-op gradient checks.
    fn check<F>(build: F, params: &[Tensor]) -> f64
    where
        F: Fn(&mut Graph, &[NodeId]) -> crate::error::Result<NodeId>,
    {
        grad_check(build, params, 1e-5).unwrap()
    }

    #[test]
    fn gradients_of_elementwise_and_linear_ops() {
        // Inputs kept away from relu kinks.
        let a = Tensor::from_vec(&[6], vec![0.3, -0.7, 1.2, -1.5, 0.9, 2.1]).unwrap();
        let b = Tensor::from_vec(&[6], vec![1.1, 0.4, -0.8, 0.6, -1.3, 0.2]).unwrap();
        assert!(check(|g, p| { let y = g.add(p[0], p[1])?; let y = g.mul(y, p[0])?; g.sum(y) }, &[a.clone(), b.clone()]) < 1e-7);
        assert!(check(|g, p| { let y = g.sub(p[0], p[1])?; g.sum(y) }, &[a.clone(), b.clone()]) < 1e-7);
        assert!(check(|g, p| { let y = g.relu(p[0])?; g.sum(y) }, &[a.clone()]) < 1e-7);
        assert!(check(|g, p| { let y = g.tanh(p[0])?; let y = g.mul(y, y)?; g.sum(y) }, &[a.clone()]) < 1e-7);
        assert!(check(|g, p| { let y = g.neg(p[0])?; let y = g.scale(y, 2.5)?; g.sum(y) }, &[a.clone()]) < 1e-7);

        let m = randt(&[3, 4], 20);
        let w = randt(&[4, 2], 21);
        let bias = randt(&[2], 22);
        assert!(
            check(
                |g, p| {
                    let y = g.matmul(p[0], p[1])?;
                    let y = g.add_bias(y, p[2])?;
                    let y = g.mul(y, y)?;
                    g.sum(y)
                },
                &[m, w, bias]
            ) < 1e-6
        );

        let ba = randt(&[2, 3, 4], 23);
        let bb = randt(&[2, 4, 5], 24);
        assert!(
            check(
                |g, p| {
                    let t = g.transpose_last(p[1])?;
                    let t = g.transpose_last(t)?;
                    let y = g.bmm(p[0], t)?;
                    let y = g.mul(y, y)?;
                    g.sum(y)
                },
                &[ba, bb]
            ) < 1e-6
        );
    }

    #[test]
    fn gradients_of_shape_and_reduction_ops() {
        let x = randt(&[2, 6], 30);
        assert!(
            check(
                |g, p| {
                    let y = g.reshape(p[0], &[3, 4])?;
                    let a = g.slice(y, 1, 1, 2)?;
                    let b = g.slice(y, 1, 0, 2)?;
                    let c = g.concat(&[a, b], 1)?;
                    let c = g.mul(c, c)?;
                    g.mean(c)
                },
                &[x]
            ) < 1e-7
        );
    }

    #[test]
    fn gradients_of_softmax_and_norms() {
        let x = randt(&[3, 5], 40);
        assert!(
            check(
                |g, p| {
                    let y = g.softmax(p[0], 1)?;
                    let y = g.mul(y, y)?;
                    g.sum(y)
                },
                &[x.clone()]
            ) < 1e-6
        );

        let gamma = Tensor::from_vec(&[5], vec![1.1, 0.9, 1.3, 0.7, 1.0]).unwrap();
        let beta = Tensor::from_vec(&[5], vec![0.1, -0.2, 0.3, 0.0, -0.1]).unwrap();
        assert!(
            check(
                |g, p| {
                    let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
                    let y = g.mul(y, y)?;
                    g.sum(y)
                },
                &[x, gamma.clone(), beta.clone()]
            ) < 1e-5
        );

        // A fixed random target keeps the loss sensitive to the input; a sum
        // of squared normalized outputs is nearly invariant by construction.
        let xb = randt(&[2, 5, 3, 3], 41);
        let target = randt(&[2, 5, 3, 3], 42);
        assert!(
            check(
                |g, p| {
                    let (y, _) = g.batch_norm(p[0], p[1], p[2], (&[], &[]), true, 1e-5)?;
                    let t = g.constant(target.clone());
                    g.mse(y, t)
                },
                &[xb, gamma, beta]
            ) < 1e-5
        );
    }

    #[test]
    fn gradients_of_conv_and_dropout() {
        let x = randt(&[2, 2, 4, 4], 50);
        let w3 = randt(&[3, 2, 3, 3], 51);
        let w1 = randt(&[3, 2, 1, 1], 52);
        let b = randt(&[3], 53);
        for (w, k) in [(w3, 3usize), (w1, 1)] {
            assert!(
                check(
                    |g, p| {
                        let y = g.conv2d(p[0], p[1], p[2], k)?;
                        let y = g.mul(y, y)?;
                        g.sum(y)
                    },
                    &[x.clone(), w, b.clone()]
                ) < 1e-6
            );
        }
        // Dropout masks repeat across rebuilds (fixed graph seed), so FD works.
        let xd = randt(&[40], 54);
        assert!(
            check(
                |g, p| {
                    let y = g.dropout(p[0], 0.3)?;
                    let y = g.mul(y, y)?;
                    g.sum(y)
                },
                &[xd]
            ) < 1e-6
        );
    }

    #[test]
    fn gradients_of_fft_and_spectral_ops() {
        let x = randt(&[1, 1, 4, 4], 60);
        let w = randt(&[2, 1, 2, 2, 2], 61);
        let rows = retained_modes(4, 1);
        let cols = retained_modes(4, 1);
        assert!(
            check(
                |g, p| {
                    let xc = g.to_complex(p[0])?;
                    let f = g.fft2(xc)?;
                    let mixed = g.spectral_mix(f, p[1], &rows, &cols)?;
                    let back = g.ifft2(mixed)?;
                    let re = g.real_part(back)?;
                    let y = g.mul(re, re)?;
                    g.sum(y)
                },
                &[x, w]
            ) < 1e-6
        );
    }

    #[test]
    fn gradients_of_tokenize_and_residual() {
        let map: Rc<Vec<usize>> = Rc::new(
            crate::grid::CoarseGrid::new(crate::grid::FineGrid::new(4, 4), 2)
                .unwrap()
                .canonical_order(),
        );
        let x = randt(&[2, 1, 4, 4], 70);
        assert!(
            check(
                |g, p| {
                    let t = g.tokenize(p[0], map.clone(), 4)?;
                    let u = g.untokenize(t, map.clone(), 4, 4)?;
                    let y = g.mul(u, u)?;
                    g.sum(y)
                },
                &[x.clone()]
            ) < 1e-7
        );

        let kappa = Rc::new(Tensor::from_vec(
            &[2, 4, 4],
            (0..32).map(|i| 1.0 + (i % 5) as f64).collect(),
        ).unwrap());
        let p3 = randt(&[2, 4, 4], 71);
        assert!(
            check(
                |g, p| {
                    let r = g.darcy_div(p[0], kappa.clone(), 0.25, 0.25)?;
                    let y = g.mul(r, r)?;
                    g.mean(y)
                },
                &[p3]
            ) < 1e-5
        );
    }

    #[test]
    fn tokenize_untokenize_roundtrip_is_exact() {
        let cg = crate::grid::CoarseGrid::default_hierarchy();
        let map: Rc<Vec<usize>> = Rc::new(cg.canonical_order());
        let x = randt(&[3, 1, 30, 30], 80);
        let mut g = Graph::new(0);
        let xi = g.leaf(x.clone(), false);
        let t = g.tokenize(xi, map.clone(), 9).unwrap();
        assert_eq!(g.shape(t), &[3, 100, 9]);
        let u = g.untokenize(t, map, 30, 30).unwrap();
        assert_eq!(g.value(u).data(), x.data());
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut ps = ParamSet::new();
        ps.register("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let before = ps.value(0).clone();
        ps.adam_step(&[Tensor::zeros(&[3])], &AdamConfig::default())
            .unwrap();
        assert_eq!(ps.value(0).data(), before.data());
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut ps = ParamSet::new();
        ps.register("w", Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let g = Tensor::from_vec(&[3], vec![0.4, -3.0, 1e-3]).unwrap();
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        ps.adam_step(&[g.clone()], &cfg).unwrap();
        for (w, gi) in ps.value(0).data().iter().zip(g.data()) {
            assert_relative_eq!(*w, -cfg.lr * gi.signum(), epsilon = 1e-4);
        }
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        // min (x − 3)²; closed-form minimum is the oracle. Constant-rate Adam
        // oscillates around the optimum, so the step size is kept small.
        let mut ps = ParamSet::new();
        ps.register("x", Tensor::from_vec(&[1], vec![2.8]).unwrap())
            .unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..100 {
            let x = ps.value(0).data()[0];
            let grad = Tensor::from_vec(&[1], vec![2.0 * (x - 3.0)]).unwrap();
            ps.adam_step(&[grad], &cfg).unwrap();
        }
        let x = ps.value(0).data()[0];
        assert!((x - 3.0).abs() < 1e-3, "ended at {x}");
    }

    #[test]
    fn adam_rejects_nonpositive_learning_rate() {
        let mut ps = ParamSet::new();
        ps.register("w", Tensor::zeros(&[1])).unwrap();
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(ps.adam_step(&[Tensor::zeros(&[1])], &cfg).is_err());
    }

    #[test]
    fn duplicate_parameter_names_are_rejected() {
        let mut ps = ParamSet::new();
        ps.register("w", Tensor::zeros(&[1])).unwrap();
        assert!(ps.register("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn batch_norm_eval_is_bit_identical_and_tracks_train() {
        let x = randt(&[4, 2, 3, 3], 90);
        let gamma = Tensor::from_vec(&[2], vec![1.2, 0.8]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.1, -0.4]).unwrap();

        // Converge running stats on the fixed batch.
        let mut run_mean = vec![0.0; 2];
        let mut run_var = vec![1.0; 2];
        let momentum = 0.1;
        let mut train_out = Vec::new();
        for _ in 0..400 {
            let mut g = Graph::new(0);
            let xi = g.leaf(x.clone(), false);
            let gi = g.leaf(gamma.clone(), false);
            let bi = g.leaf(beta.clone(), false);
            let (y, stats) = g
                .batch_norm(xi, gi, bi, (&run_mean, &run_var), true, 1e-5)
                .unwrap();
            let stats = stats.unwrap();
            for c in 0..2 {
                run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * stats.mean[c];
                run_var[c] = (1.0 - momentum) * run_var[c] + momentum * stats.var[c];
            }
            train_out = g.value(y).data().to_vec();
        }

        let eval = |rm: &[f64], rv: &[f64]| {
            let mut g = Graph::new(0);
            let xi = g.leaf(x.clone(), false);
            let gi = g.leaf(gamma.clone(), false);
            let bi = g.leaf(beta.clone(), false);
            let (y, _) = g.batch_norm(xi, gi, bi, (rm, rv), false, 1e-5).unwrap();
            g.value(y).data().to_vec()
        };
        let e1 = eval(&run_mean, &run_var);
        let e2 = eval(&run_mean, &run_var);
        assert_eq!(e1, e2, "eval mode must be a fixed affine map");
        for (t, e) in train_out.iter().zip(&e1) {
            assert!((t - e).abs() < 1e-3, "train/eval gap {}", (t - e).abs());
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("msda_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.msda");
        let a = randt(&[3, 4], 100);
        let b = randt(&[7], 101);
        save_checkpoint(&path, &[("layer.w".to_string(), &a), ("layer.b".to_string(), &b)])
            .unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let items = load_checkpoint(&path).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].0, "layer.w");
        assert_eq!(items[0].1, a);
        assert_eq!(items[1].1, b);
        save_checkpoint(
            &path,
            &[
                (items[0].0.clone(), &items[0].1),
                (items[1].0.clone(), &items[1].1),
            ],
        )
        .unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn retained_mode_sets() {
        assert_eq!(retained_modes(30, 12).len(), 24);
        assert_eq!(retained_modes(30, 15), (0..30).collect::<Vec<_>>());
        assert_eq!(retained_modes(3, 2), vec![0, 1, 2]);
        assert_eq!(retained_modes(4, 1), vec![0, 3]);
    }
}
