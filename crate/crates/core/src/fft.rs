// SPDX-License-Identifier: Apache-2.0
//! 2-D complex FFTs on row-major buffers.
//!
//! Plans come from a per-thread planner cache so concurrent callers never
//! share mutable FFT state.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    const B: usize = 16;
    for yb in (0..h).step_by(B) {
        for xb in (0..w).step_by(B) {
            for y in yb..(yb + B).min(h) {
                for x in xb..(xb + B).min(w) {
                    dst[x * h + y] = src[y * w + x];
                }
            }
        }
    }
}

/// Unnormalized 2-D DFT of an `h` x `w` buffer, in place. The inverse
/// direction uses `exp(+i...)` and is not scaled.
pub(crate) fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    if h == 0 || w == 0 {
        return;
    }
    let row = plan(w, inverse);
    let col = plan(h, inverse);
    let scratch_len = row
        .get_inplace_scratch_len()
        .max(col.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
    row.process_with_scratch(data, &mut scratch);
    if h == 1 {
        return;
    }
    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    transpose(data, &mut t, h, w);
    col.process_with_scratch(&mut t, &mut scratch);
    transpose(&t, data, w, h);
}

/// Batched 2-D FFT over `count` consecutive `h` x `w` planes.
pub(crate) fn fft2_batch(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    if plane == 0 {
        return;
    }
    for chunk in data.chunks_exact_mut(plane) {
        fft2(chunk, h, w, inverse);
    }
}

/// Smallest size >= `n` whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn naive_dft2(x: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += x[y * w + xx] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_rectangular_grid() {
        let (h, w) = (6, 10);
        let mut rng = DetRng::new(9);
        let x: Vec<Complex64> = (0..h * w)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let mut y = x.clone();
        fft2(&mut y, h, w, false);
        let r = naive_dft2(&x, h, w);
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).norm() < 1e-10);
        }
        fft2(&mut y, h, w, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a / (h * w) as f64 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_len_is_smooth() {
        assert_eq!(fast_len(158), 160);
        assert_eq!(fast_len(128), 128);
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(11), 12);
    }
}
