//! 2D FFT kernels on packed-complex buffers.
//!
//! Complex planes are stored interleaved: a tensor of shape `[..., H, W, 2]`
//! holds `(re, im)` at the last axis. The forward transform is unnormalized;
//! the inverse carries the 1/(H·W) factor, so `ifft2(fft2(x)) = x`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Transform direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftDirection {
    Forward,
    Inverse,
}

/// In-place 2D FFT of one packed `[H, W, 2]` plane.
pub fn fft2_plane(
    planner: &mut FftPlanner<f64>,
    plane: &mut [f64],
    h: usize,
    w: usize,
    dir: FftDirection,
) {
    debug_assert_eq!(plane.len(), h * w * 2);
    let fft_row = match dir {
        FftDirection::Forward => planner.plan_fft_forward(w),
        FftDirection::Inverse => planner.plan_fft_inverse(w),
    };
    let fft_col = match dir {
        FftDirection::Forward => planner.plan_fft_forward(h),
        FftDirection::Inverse => planner.plan_fft_inverse(h),
    };

    let mut row = vec![Complex::new(0.0, 0.0); w];
    for r in 0..h {
        for c in 0..w {
            let base = (r * w + c) * 2;
            row[c] = Complex::new(plane[base], plane[base + 1]);
        }
        fft_row.process(&mut row);
        for c in 0..w {
            let base = (r * w + c) * 2;
            plane[base] = row[c].re;
            plane[base + 1] = row[c].im;
        }
    }

    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            let base = (r * w + c) * 2;
            col[r] = Complex::new(plane[base], plane[base + 1]);
        }
        fft_col.process(&mut col);
        for r in 0..h {
            let base = (r * w + c) * 2;
            plane[base] = col[r].re;
            plane[base + 1] = col[r].im;
        }
    }

    if dir == FftDirection::Inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in plane.iter_mut() {
            *v *= scale;
        }
    }
}

/// Apply [`fft2_plane`] to every `[H, W, 2]` plane of a packed buffer.
pub fn fft2_batch(data: &mut [f64], h: usize, w: usize, dir: FftDirection) {
    let plane = h * w * 2;
    debug_assert_eq!(data.len() % plane, 0);
    let mut planner = FftPlanner::new();
    for chunk in data.chunks_exact_mut(plane) {
        fft2_plane(&mut planner, chunk, h, w, dir);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(n²) DFT, written against the definition; the test oracle.
    fn naive_dft2(input: &[f64], h: usize, w: usize, inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; h * w * 2];
        let sign = if inverse { 1.0 } else { -1.0 };
        for kr in 0..h {
            for kc in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ang = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((kr * r) as f64 / h as f64 + (kc * c) as f64 / w as f64);
                        let (x_re, x_im) = (input[(r * w + c) * 2], input[(r * w + c) * 2 + 1]);
                        re += x_re * ang.cos() - x_im * ang.sin();
                        im += x_re * ang.sin() + x_im * ang.cos();
                    }
                }
                let scale = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
                out[(kr * w + kc) * 2] = re * scale;
                out[(kr * w + kc) * 2 + 1] = im * scale;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_30_and_3() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(30, 30), (3, 3), (6, 3), (5, 7)] {
            let mut data: Vec<f64> = (0..h * w * 2).map(|_| rng.gen::<f64>() - 0.5).collect();
            let reference = naive_dft2(&data, h, w, false);
            fft2_batch(&mut data, h, w, FftDirection::Forward);
            for (a, b) in data.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-9, "fft mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn roundtrip_within_1e10() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(30, 30), (3, 3)] {
            let original: Vec<f64> = (0..h * w * 2).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut data = original.clone();
            fft2_batch(&mut data, h, w, FftDirection::Forward);
            fft2_batch(&mut data, h, w, FftDirection::Inverse);
            for (a, b) in data.iter().zip(&original) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_field_concentrates_at_dc() {
        let (h, w) = (6, 5);
        let c = 2.5;
        let mut data = vec![0.0; h * w * 2];
        for i in 0..h * w {
            data[i * 2] = c;
        }
        fft2_batch(&mut data, h, w, FftDirection::Forward);
        assert!((data[0] - c * (h * w) as f64).abs() < 1e-10);
        assert!(data[1].abs() < 1e-10);
        for i in 1..h * w {
            assert!(data[i * 2].abs() < 1e-10 && data[i * 2 + 1].abs() < 1e-10);
        }
    }

    #[test]
    fn unit_impulse_has_flat_spectrum() {
        let (h, w) = (4, 6);
        let mut data = vec![0.0; h * w * 2];
        data[0] = 1.0; // impulse at (0,0)
        fft2_batch(&mut data, h, w, FftDirection::Forward);
        for i in 0..h * w {
            assert!((data[i * 2] - 1.0).abs() < 1e-12);
            assert!(data[i * 2 + 1].abs() < 1e-12);
        }
    }
}
