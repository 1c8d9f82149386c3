// SPDX-License-Identifier: Apache-2.0
//! Finite-difference cases covering every differentiable graph operation.
#![allow(dead_code)]

use litho_cfno::ad::{gradient_check, Graph, ParamSet, Tensor, Var};
use litho_cfno::rng::DetRng;
use litho_cfno::Result;
use num_complex::Complex64;

pub const STEP: f64 = 1e-6;

pub fn real(rng: &mut DetRng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::real(dims, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

pub fn complex(rng: &mut DetRng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    let v = (0..n)
        .map(|_| Complex64::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
        .collect();
    Tensor::complex(dims, v).unwrap()
}

/// Reduces any real or complex node to a scalar through fixed random
/// weights, so every output element carries a distinct sensitivity.
pub fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let t = g.value(y)?.clone();
    let mut rng = DetRng::new(seed);
    if t.is_complex() {
        let re = g.real(y)?;
        let im = g.imag(y)?;
        let cr = real(&mut rng, t.dims());
        let ci = real(&mut rng, t.dims());
        let a = g.dot_const(re, &cr)?;
        let b = g.dot_const(im, &ci)?;
        g.add(a, b)
    } else {
        let c = real(&mut rng, t.dims());
        g.dot_const(y, &c)
    }
}

fn set(entries: Vec<(&str, Tensor)>) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t).unwrap();
    }
    p
}

pub type Case = (&'static str, Vec<f64>);

fn run<F>(name: &'static str, p: ParamSet, f: F) -> Case
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    (name, gradient_check(&p, STEP, f).unwrap())
}

/// One entry per operation: the per-input relative errors.
pub fn all_cases() -> Vec<Case> {
    let mut rng = DetRng::new(0xAD);
    let mut out = Vec::new();

    let p = set(vec![("x", real(&mut rng, &[2, 2, 4, 6]))]);
    out.push(run("fft2(real)", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.fft2(x)?;
        probe(g, y, 1)
    }));

    let p = set(vec![("x", complex(&mut rng, &[1, 2, 5, 4]))]);
    out.push(run("fft2(complex)", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.fft2(x)?;
        probe(g, y, 2)
    }));

    let p = set(vec![("x", complex(&mut rng, &[2, 1, 4, 4]))]);
    out.push(run("ifft2", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.ifft2(x)?;
        probe(g, y, 3)
    }));

    let p = set(vec![("x", complex(&mut rng, &[1, 2, 3, 3]))]);
    out.push(run("real", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.real(x)?;
        probe(g, y, 4)
    }));

    let p = set(vec![("x", complex(&mut rng, &[1, 2, 3, 3]))]);
    out.push(run("imag", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.imag(x)?;
        probe(g, y, 5)
    }));

    let p = set(vec![
        ("x", complex(&mut rng, &[2, 3, 6, 6])),
        ("w", complex(&mut rng, &[3, 4, 3, 2])),
    ]);
    out.push(run("spectral_mix", p, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let y = g.spectral_mix(x, w)?;
        probe(g, y, 6)
    }));

    for (stride, pad, k) in [(1usize, 1usize, 3usize), (2, 1, 3), (1, 0, 2)] {
        let p = set(vec![
            ("x", real(&mut rng, &[2, 2, 7, 6])),
            ("w", real(&mut rng, &[3, 2, k, k])),
            ("b", real(&mut rng, &[3])),
        ]);
        out.push(run("conv2d", p, move |g, p| {
            let x = g.param(p, "x")?;
            let w = g.param(p, "w")?;
            let b = g.param(p, "b")?;
            let y = g.conv2d(x, w, Some(b), stride, pad)?;
            probe(g, y, 7)
        }));
    }

    let p = set(vec![
        ("x", real(&mut rng, &[1, 3, 4, 5])),
        ("w", real(&mut rng, &[2, 3])),
        ("b", real(&mut rng, &[2])),
    ]);
    out.push(run("channel_linear", p, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let b = g.param(p, "b")?;
        let y = g.channel_linear(x, w, Some(b))?;
        probe(g, y, 8)
    }));

    for (k, pad) in [(4usize, 1usize), (3, 0)] {
        let p = set(vec![
            ("x", real(&mut rng, &[2, 2, 3, 4])),
            ("w", real(&mut rng, &[2, 3, k, k])),
            ("b", real(&mut rng, &[3])),
        ]);
        out.push(run("conv_transpose2d", p, move |g, p| {
            let x = g.param(p, "x")?;
            let w = g.param(p, "w")?;
            let b = g.param(p, "b")?;
            let y = g.conv_transpose2d(x, w, Some(b), 2, pad)?;
            probe(g, y, 9)
        }));
    }

    let p = set(vec![("x", real(&mut rng, &[1, 2, 3, 3]))]);
    out.push(run("gelu", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.gelu(x)?;
        probe(g, y, 10)
    }));

    let p = set(vec![("x", real(&mut rng, &[1, 2, 3, 3]))]);
    out.push(run("sigmoid", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.sigmoid(x)?;
        probe(g, y, 11)
    }));

    let p = set(vec![
        ("a", real(&mut rng, &[1, 2, 3, 3])),
        ("b", real(&mut rng, &[1, 2, 3, 3])),
    ]);
    out.push(run("add", p, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        let y = g.add(a, b)?;
        probe(g, y, 12)
    }));

    let p = set(vec![
        ("a", real(&mut rng, &[2, 1, 3, 3])),
        ("b", real(&mut rng, &[2, 3, 3, 3])),
    ]);
    out.push(run("concat_channels", p, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        let y = g.concat_channels(&[a, b, a])?;
        probe(g, y, 13)
    }));

    let p = set(vec![("x", real(&mut rng, &[2, 2, 4, 6]))]);
    out.push(run("tokenize", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.tokenize(x, 2)?;
        probe(g, y, 14)
    }));

    let p = set(vec![("x", real(&mut rng, &[12, 2, 2, 2]))]);
    out.push(run("detokenize", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.detokenize(x, 2, 3)?;
        probe(g, y, 15)
    }));

    let p = set(vec![
        ("x", real(&mut rng, &[2 * 12, 2, 3, 3])),
        ("w", real(&mut rng, &[3, 3])),
    ]);
    out.push(run("token_conv", p, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let y = g.token_conv(x, w, 3, 4)?;
        probe(g, y, 16)
    }));

    let p = set(vec![
        ("x", real(&mut rng, &[12, 2, 2, 2])),
        ("w", real(&mut rng, &[2, 5, 5])),
    ]);
    out.push(run("token_conv(per-channel)", p, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let y = g.token_conv(x, w, 4, 3)?;
        probe(g, y, 17)
    }));

    let p = set(vec![("x", real(&mut rng, &[1, 2, 3, 4]))]);
    out.push(run("pad2d", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.pad2d(x, 1, 2, 5, 7)?;
        probe(g, y, 18)
    }));

    let p = set(vec![("x", real(&mut rng, &[1, 2, 5, 6]))]);
    out.push(run("crop2d", p, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.crop2d(x, 1, 2, 3, 3)?;
        probe(g, y, 19)
    }));

    let target = real(&mut rng, &[1, 1, 4, 4]);
    let p = set(vec![("x", real(&mut rng, &[1, 1, 4, 4]))]);
    let t1 = target.clone();
    out.push(run("l1_loss", p.clone(), move |g, p| {
        let x = g.param(p, "x")?;
        g.l1_loss(x, &t1)
    }));
    out.push(run("l2_loss", p, move |g, p| {
        let x = g.param(p, "x")?;
        g.l2_loss(x, &target)
    }));

    out
}

/// Whole-network check: a two-path net of width 2 on a 32 x 32 input,
/// reduced to a scalar through L2 against a random target.
pub fn tiny_cfno_case() -> Case {
    use litho_cfno::cfno::{CfnoConfig, CfnoNet};
    let net = CfnoNet::new(CfnoConfig::new(vec![4, 8], 2), 21).unwrap();
    let mut rng = DetRng::new(22);
    let x = Tensor::real(
        &[1, 1, 32, 32],
        (0..1024).map(|_| rng.below(2) as f64).collect(),
    )
    .unwrap();
    let target = real(&mut rng, &[1, 1, 32, 32]);
    let cfg = net.config().clone();
    let errs = gradient_check(net.params(), STEP, move |g, p| {
        let n = CfnoNet::from_parts(cfg.clone(), p.clone())?;
        let xv = g.input(x.clone())?;
        let y = n.forward(g, xv)?;
        g.l2_loss(y, &target)
    })
    .unwrap();
    ("cfno end-to-end", errs)
}
