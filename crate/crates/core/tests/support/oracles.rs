// SPDX-License-Identifier: Apache-2.0
//! Brute-force reference computations shared by the integration tests.
#![allow(dead_code)]

use litho_cfno::ad::{Graph, ParamSet, Tensor};
use litho_cfno::cfno::fno_unit;
use litho_cfno::litho::{KernelVariant, LithoKernelSet};
use litho_cfno::rng::DetRng;
use litho_cfno::Grid;
use num_complex::Complex64;

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let err = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    err / norm.max(f64::MIN_POSITIVE)
}

/// Direct spatial `sum_k a_k |h_k (*) M|^2` on the mask's own period, with
/// each kernel centred on its `(kh/2, kw/2)` entry.
pub fn aerial_spatial(mask: &Grid<f64>, k: &LithoKernelSet) -> Grid<f64> {
    let (h, w) = mask.dims();
    let (kh, kw) = k.kernel_dims();
    let (ch, cw) = (kh / 2, kw / 2);
    let dose = k.dose();
    let mut out = Grid::filled(h, w, 0.0);
    for (kern, &a) in k.kernels().iter().zip(k.coeffs()) {
        for y in 0..h {
            for x in 0..w {
                let mut f = Complex64::new(0.0, 0.0);
                for p in 0..kh {
                    for q in 0..kw {
                        let my = (y + h + ch - p % h) % h;
                        let mx = (x + w + cw - q % w) % w;
                        f += kern.get(p, q) * (dose * mask.get(my, mx));
                    }
                }
                *out.get_mut(y, x) += a * f.norm_sqr();
            }
        }
    }
    out
}

pub fn random_kernels(rng: &mut DetRng, count: usize, kh: usize, kw: usize) -> LithoKernelSet {
    let kernels = (0..count)
        .map(|_| Grid::from_fn(kh, kw, |_, _| Complex64::new(rng.normal(), rng.normal())))
        .collect();
    let mut coeffs: Vec<f64> = (0..count).map(|_| rng.uniform_in(0.1, 1.0)).collect();
    coeffs.sort_by(|a, b| b.total_cmp(a));
    LithoKernelSet::new(kernels, coeffs, KernelVariant::Nominal).unwrap()
}

/// Unit with identity lift/projection, zero biases and the given spectral
/// weights `[k, k, 1, 1]`.
pub fn scalar_unit(spec: Tensor) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("u.lift.w", Tensor::real(&[1, 1], vec![1.0]).unwrap())
        .unwrap();
    p.insert("u.lift.b", Tensor::zeros(&[1])).unwrap();
    p.insert("u.spec", spec).unwrap();
    p.insert("u.proj.w", Tensor::real(&[1, 1], vec![1.0]).unwrap())
        .unwrap();
    p.insert("u.proj.b", Tensor::zeros(&[1])).unwrap();
    p
}

pub fn unit_pre_activation(p: &ParamSet, token: &[f64], k: usize) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g
        .input(Tensor::real(&[1, 1, k, k], token.to_vec()).unwrap())
        .unwrap();
    let y = fno_unit(&mut g, x, p, "u", false).unwrap();
    g.value(y).unwrap().as_real().unwrap().to_vec()
}

pub fn inverse_dft(w: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); k * k];
    for y in 0..k {
        for x in 0..k {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..k {
                for v in 0..k {
                    let ph =
                        2.0 * std::f64::consts::PI * ((u * y) as f64 + (v * x) as f64) / k as f64;
                    acc += w[u * k + v] * Complex64::new(ph.cos(), ph.sin());
                }
            }
            out[y * k + x] = acc / (k * k) as f64;
        }
    }
    out
}

/// Relative error between a full-mode FNO unit with random spectral
/// weights and circular convolution of a random token with their inverse
/// transform.
pub fn fno_unit_vs_convolution(rng: &mut DetRng, k: usize) -> f64 {
    let spec = super::ad_cases::complex(rng, &[k, k, 1, 1]);
    let kernel = inverse_dft(spec.as_complex().unwrap(), k);
    let p = scalar_unit(spec);
    let token: Vec<f64> = (0..k * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let got = unit_pre_activation(&p, &token, k);
    let mut want = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    acc += kernel[a * k + b].re * token[((y + k - a) % k) * k + (x + k - b) % k];
                }
            }
            want[y * k + x] = acc;
        }
    }
    rel_err(&got, &want)
}
