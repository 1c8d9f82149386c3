// SPDX-License-Identifier: Apache-2.0
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use super::tensor::{Data, ParamSet, Tensor};
use crate::fft;
use crate::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    node: usize,
    graph: u64,
}

/// Frequencies kept when `modes` of the `len` DFT bins along one axis are
/// retained: the lowest `ceil(modes/2)` non-negative and `floor(modes/2)`
/// negative frequencies.
pub fn kept_modes(modes: usize, len: usize) -> Vec<usize> {
    if modes >= len {
        return (0..len).collect();
    }
    let pos = modes.div_ceil(2);
    let neg = modes / 2;
    (0..pos).chain(len - neg..len).collect()
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Fft2(usize),
    Ifft2(usize),
    Real(usize),
    Imag(usize),
    SpectralMix {
        x: usize,
        w: usize,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    Gelu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Concat(Vec<usize>),
    Tokenize {
        x: usize,
        k: usize,
    },
    Detokenize(usize),
    TokenConv {
        x: usize,
        w: usize,
        s: usize,
        m: usize,
        n: usize,
    },
    Pad {
        x: usize,
        top: usize,
        left: usize,
    },
    Crop {
        x: usize,
        top: usize,
        left: usize,
    },
    L1 {
        x: usize,
        target: Vec<f64>,
    },
    L2 {
        x: usize,
        target: Vec<f64>,
    },
    Dot {
        x: usize,
        c: Vec<f64>,
    },
}

/// Spatial geometry of a (transposed) convolution; `small` is the side the
/// stride applies to, `big` the strided side.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    small_c: usize,
    big_c: usize,
    small: (usize, usize),
    big: (usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// An eagerly evaluated expression graph.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn nchw(t: &Tensor) -> Result<[usize; 4]> {
    match *t.dims() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref d => Err(Error::dims("rank-4 [N, C, H, W]", format!("{d:?}"))),
    }
}

/// Output range `o` in `0..out_len` for which `o * s + k - p` lands inside
/// `0..in_len`.
fn valid_range(k: usize, p: usize, s: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if in_len + p > k {
        ((in_len + p - k - 1) / s + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// `small[y, x] += wv * big[y*s + ky - p, x*s + kx - p]`
fn gather(small: &mut [f64], big: &[f64], g: &ConvGeom, ky: usize, kx: usize, wv: f64) {
    let (sh, sw) = g.small;
    let (bh, bw) = g.big;
    let (s, p) = (g.stride, g.pad);
    let (y0, y1) = valid_range(ky, p, s, bh, sh);
    let (x0, x1) = valid_range(kx, p, s, bw, sw);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let by = y * s + ky - p;
        let dst = &mut small[y * sw + x0..y * sw + x1];
        let bx0 = x0 * s + kx - p;
        let row = &big[by * bw..(by + 1) * bw];
        if s == 1 {
            for (d, v) in dst.iter_mut().zip(&row[bx0..bx0 + (x1 - x0)]) {
                *d += wv * v;
            }
        } else {
            for (i, d) in dst.iter_mut().enumerate() {
                *d += wv * row[bx0 + i * s];
            }
        }
    }
}

/// `big[y*s + ky - p, x*s + kx - p] += wv * small[y, x]`
fn scatter(big: &mut [f64], small: &[f64], g: &ConvGeom, ky: usize, kx: usize, wv: f64) {
    let (sh, sw) = g.small;
    let (bh, bw) = g.big;
    let (s, p) = (g.stride, g.pad);
    let (y0, y1) = valid_range(ky, p, s, bh, sh);
    let (x0, x1) = valid_range(kx, p, s, bw, sw);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let by = y * s + ky - p;
        let src = &small[y * sw + x0..y * sw + x1];
        let bx0 = x0 * s + kx - p;
        let row = &mut big[by * bw..(by + 1) * bw];
        if s == 1 {
            for (d, v) in row[bx0..bx0 + (x1 - x0)].iter_mut().zip(src) {
                *d += wv * v;
            }
        } else {
            for (i, v) in src.iter().enumerate() {
                row[bx0 + i * s] += wv * v;
            }
        }
    }
}

/// `sum small[y, x] * big[y*s + ky - p, x*s + kx - p]`
fn correlate(small: &[f64], big: &[f64], g: &ConvGeom, ky: usize, kx: usize) -> f64 {
    let (sh, sw) = g.small;
    let (bh, bw) = g.big;
    let (s, p) = (g.stride, g.pad);
    let (y0, y1) = valid_range(ky, p, s, bh, sh);
    let (x0, x1) = valid_range(kx, p, s, bw, sw);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let by = y * s + ky - p;
        let a = &small[y * sw + x0..y * sw + x1];
        let bx0 = x0 * s + kx - p;
        let row = &big[by * bw..(by + 1) * bw];
        if s == 1 {
            acc += a
                .iter()
                .zip(&row[bx0..bx0 + (x1 - x0)])
                .map(|(u, v)| u * v)
                .sum::<f64>();
        } else {
            acc += a
                .iter()
                .enumerate()
                .map(|(i, u)| u * row[bx0 + i * s])
                .sum::<f64>();
        }
    }
    acc
}

/// Copies between image layout `[N, C, m*k, n*k]` and token layout
/// `[N*m*n, C, k, k]`.
fn token_permute(src: &[f64], dst: &mut [f64], dims: [usize; 4], k: usize, to_tokens: bool) {
    let [batch, c, h, w] = dims;
    let (m, n) = (h / k, w / k);
    for b in 0..batch {
        for ti in 0..m {
            for tj in 0..n {
                let tok = (b * m + ti) * n + tj;
                for ch in 0..c {
                    for y in 0..k {
                        let img = ((b * c + ch) * h + ti * k + y) * w + tj * k;
                        let tk = ((tok * c + ch) * k + y) * k;
                        if to_tokens {
                            dst[tk..tk + k].copy_from_slice(&src[img..img + k]);
                        } else {
                            dst[img..img + k].copy_from_slice(&src[tk..tk + k]);
                        }
                    }
                }
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Logistic function held inside the open unit interval, where plain f64
/// evaluation would round large logits to exactly 0 or 1.
fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn to_complex(d: &Data) -> Vec<Complex64> {
    match d {
        Data::Real(v) => v.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        Data::Complex(v) => v.clone(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Reject any operation whose output contains NaN or infinity.
    pub fn with_finite_check(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.check_finite && !value.data().all_finite() {
            return Err(Error::NonFinite(format!(
                "node {} ({}) produced a non-finite value",
                self.nodes.len(),
                op_name(&op)
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            node: self.nodes.len() - 1,
            graph: self.id,
        })
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.node >= self.nodes.len() {
            return Err(Error::Graph("variable belongs to a different graph".into()));
        }
        Ok(v.node)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(self.val(self.idx(v)?))
    }

    /// A constant input; gradients are still reported for it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let i = params
            .index_of(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter `{name}`")))?;
        self.push(params.tensor(i).clone(), Op::Param(i))
    }

    /// Unnormalized forward 2-D DFT over the last two axes.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.val(xi);
        let [_, _, h, w] = nchw(t)?;
        let mut d = to_complex(t.data());
        fft::fft2_batch(&mut d, h, w, false);
        let dims = t.dims().to_vec();
        self.push(Tensor::complex(&dims, d)?, Op::Fft2(xi))
    }

    /// Inverse 2-D DFT including the `1/(H W)` factor.
    pub fn ifft2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.val(xi);
        let [_, _, h, w] = nchw(t)?;
        let mut d = to_complex(t.data());
        fft::fft2_batch(&mut d, h, w, true);
        let scale = 1.0 / (h * w) as f64;
        d.iter_mut().for_each(|v| *v *= scale);
        let dims = t.dims().to_vec();
        self.push(Tensor::complex(&dims, d)?, Op::Ifft2(xi))
    }

    pub fn real(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.val(xi);
        let v = t.as_complex()?.iter().map(|c| c.re).collect();
        let dims = t.dims().to_vec();
        self.push(Tensor::real(&dims, v)?, Op::Real(xi))
    }

    pub fn imag(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.val(xi);
        let v = t.as_complex()?.iter().map(|c| c.im).collect();
        let dims = t.dims().to_vec();
        self.push(Tensor::real(&dims, v)?, Op::Imag(xi))
    }

    /// Per-frequency channel mixing of a spectrum `[N, Cin, H, W]` by
    /// complex weights `[mh, mw, Cin, Cout]`. Only the `mh x mw` lowest
    /// frequencies (see [`kept_modes`]) survive; the rest are zeroed.
    pub fn spectral_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let [n, ci, h, wd] = nchw(self.val(xi))?;
        let (mh, mw, wci, co) = match *self.val(wi).dims() {
            [a, b, c, d] => (a, b, c, d),
            ref d => return Err(Error::dims("rank-4 [mh, mw, Cin, Cout]", format!("{d:?}"))),
        };
        if wci != ci || mh > h || mw > wd || mh == 0 || mw == 0 {
            return Err(Error::dims(
                format!("weights [<= {h}, <= {wd}, {ci}, _]"),
                format!("{:?}", self.val(wi).dims()),
            ));
        }
        let xs = self.val(xi).as_complex()?;
        let ws = self.val(wi).as_complex()?;
        let rows = kept_modes(mh, h);
        let cols = kept_modes(mw, wd);
        let plane = h * wd;
        let mut y = vec![ZERO; n * co * plane];
        for b in 0..n {
            for (r, &fy) in rows.iter().enumerate() {
                for (c, &fx) in cols.iter().enumerate() {
                    let f = fy * wd + fx;
                    let wbase = (r * mw + c) * ci * co;
                    for i in 0..ci {
                        let xv = xs[(b * ci + i) * plane + f];
                        let wrow = &ws[wbase + i * co..wbase + (i + 1) * co];
                        for (o, wv) in wrow.iter().enumerate() {
                            y[(b * co + o) * plane + f] += xv * wv;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::complex(&[n, co, h, wd], y)?,
            Op::SpectralMix {
                x: xi,
                w: wi,
                rows,
                cols,
            },
        )
    }

    fn conv_weights(
        &self,
        wi: usize,
        bi: Option<usize>,
        out_c: usize,
        in_c: usize,
        transposed: bool,
    ) -> Result<(usize, usize)> {
        let wt = self.val(wi);
        let (a, b, kh, kw) = match *wt.dims() {
            [a, b] => (a, b, 1, 1),
            [a, b, kh, kw] => (a, b, kh, kw),
            ref d => return Err(Error::dims("rank-2 or rank-4 weights", format!("{d:?}"))),
        };
        let (want_a, want_b) = if transposed {
            (in_c, out_c)
        } else {
            (out_c, in_c)
        };
        if b != want_b || (a != want_a && want_a != usize::MAX) {
            return Err(Error::dims(
                format!(
                    "weights [{}, {want_b}, _, _]",
                    if want_a == usize::MAX { a } else { want_a }
                ),
                format!("{:?}", wt.dims()),
            ));
        }
        wt.as_real()?;
        if let Some(bi) = bi {
            let bt = self.val(bi);
            let oc = if transposed { b } else { a };
            if bt.dims() != [oc] {
                return Err(Error::dims(
                    format!("bias [{oc}]"),
                    format!("{:?}", bt.dims()),
                ));
            }
            bt.as_real()?;
        }
        Ok((kh, kw))
    }

    /// Zero-padded cross-correlation. `w` is `[Cout, Cin, kh, kw]` (or
    /// `[Cout, Cin]` for a pointwise channel map), optional bias `[Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        if stride == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        let [n, ci, h, wd] = nchw(self.val(xi))?;
        let co = self.val(wi).dims()[0];
        let (kh, kw) = self.conv_weights(wi, bi, co, ci, false)?;
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::dims(
                format!("input of at least {kh}x{kw}"),
                format!("{h}x{wd} + pad {pad}"),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            batch: n,
            small_c: co,
            big_c: ci,
            small: (oh, ow),
            big: (h, wd),
            kh,
            kw,
            stride,
            pad,
        };
        let xs = self.val(xi).as_real()?;
        let ws = self.val(wi).as_real()?;
        let bias = bi.map(|bi| self.val(bi).as_real()).transpose()?;
        let (op, ip) = (oh * ow, h * wd);
        let mut out = vec![0.0; n * co * op];
        for bt in 0..n {
            for o in 0..co {
                let dst = &mut out[(bt * co + o) * op..(bt * co + o + 1) * op];
                if let Some(bias) = bias {
                    dst.iter_mut().for_each(|v| *v = bias[o]);
                }
                for i in 0..ci {
                    let src = &xs[(bt * ci + i) * ip..(bt * ci + i + 1) * ip];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = ws[((o * ci + i) * kh + ky) * kw + kx];
                            gather(dst, src, &geom, ky, kx, wv);
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::real(&[n, co, oh, ow], out)?,
            Op::Conv {
                x: xi,
                w: wi,
                b: bi,
                geom,
            },
        )
    }

    /// Pointwise channel map `y[o] = sum_i w[o, i] x[i] + b[o]`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let wi = self.idx(w)?;
        if self.val(wi).dims().len() != 2 {
            return Err(Error::dims(
                "rank-2 [Cout, Cin]",
                format!("{:?}", self.val(wi).dims()),
            ));
        }
        self.conv2d(x, w, b, 1, 0)
    }

    /// Transposed convolution; `w` is `[Cin, Cout, kh, kw]` and the output
    /// side is `(H - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        if stride == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        let [n, ci, h, wd] = nchw(self.val(xi))?;
        let co = match *self.val(wi).dims() {
            [_, c, ..] => c,
            ref d => return Err(Error::dims("rank-4 [Cin, Cout, kh, kw]", format!("{d:?}"))),
        };
        let (kh, kw) = self.conv_weights(wi, bi, co, ci, true)?;
        if h == 0
            || wd == 0
            || (h - 1) * stride + kh < 2 * pad + 1
            || (wd - 1) * stride + kw < 2 * pad + 1
        {
            return Err(Error::dims(
                "non-empty transposed-conv output",
                format!("{h}x{wd}"),
            ));
        }
        let oh = (h - 1) * stride + kh - 2 * pad;
        let ow = (wd - 1) * stride + kw - 2 * pad;
        let geom = ConvGeom {
            batch: n,
            small_c: ci,
            big_c: co,
            small: (h, wd),
            big: (oh, ow),
            kh,
            kw,
            stride,
            pad,
        };
        let xs = self.val(xi).as_real()?;
        let ws = self.val(wi).as_real()?;
        let bias = bi.map(|bi| self.val(bi).as_real()).transpose()?;
        let (op, ip) = (oh * ow, h * wd);
        let mut out = vec![0.0; n * co * op];
        for bt in 0..n {
            for o in 0..co {
                let dst = &mut out[(bt * co + o) * op..(bt * co + o + 1) * op];
                if let Some(bias) = bias {
                    dst.iter_mut().for_each(|v| *v = bias[o]);
                }
                for i in 0..ci {
                    let src = &xs[(bt * ci + i) * ip..(bt * ci + i + 1) * ip];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = ws[((i * co + o) * kh + ky) * kw + kx];
                            scatter(dst, src, &geom, ky, kx, wv);
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::real(&[n, co, oh, ow], out)?,
            Op::ConvTranspose {
                x: xi,
                w: wi,
                b: bi,
                geom,
            },
        )
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.val(xi);
        let v = t.as_real()?.iter().map(|&a| f(a)).collect();
        let dims = t.dims().to_vec();
        self.push(Tensor::real(&dims, v)?, op(xi))
    }

    /// Gaussian-error linear unit with the exact `erf`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, gelu, Op::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.dims() != tb.dims() {
            return Err(Error::dims(
                format!("{:?}", ta.dims()),
                format!("{:?}", tb.dims()),
            ));
        }
        let v = ta
            .as_real()?
            .iter()
            .zip(tb.as_real()?)
            .map(|(x, y)| x + y)
            .collect();
        let dims = ta.dims().to_vec();
        self.push(Tensor::real(&dims, v)?, Op::Add(ai, bi))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let ids = xs
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>>>()?;
        let first = *ids
            .first()
            .ok_or_else(|| Error::Graph("concat of zero tensors".into()))?;
        let [n, _, h, w] = nchw(self.val(first))?;
        let mut total_c = 0;
        for &i in &ids {
            let [n2, c, h2, w2] = nchw(self.val(i))?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::dims(
                    format!("[{n}, _, {h}, {w}]"),
                    format!("{:?}", self.val(i).dims()),
                ));
            }
            total_c += c;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &i in &ids {
                let c = self.val(i).dims()[1];
                out.extend_from_slice(&self.val(i).as_real()?[b * c * plane..(b + 1) * c * plane]);
            }
        }
        self.push(Tensor::real(&[n, total_c, h, w], out)?, Op::Concat(ids))
    }

    /// Splits `[N, C, m*k, n*k]` into `N*m*n` tokens of shape `[C, k, k]`,
    /// row-major over the token grid.
    pub fn tokenize(&mut self, x: Var, k: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let dims = nchw(self.val(xi))?;
        let [n, c, h, w] = dims;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::dims(
                format!("spatial dims divisible by {k}"),
                format!("{h}x{w}"),
            ));
        }
        let mut out = vec![0.0; n * c * h * w];
        token_permute(self.val(xi).as_real()?, &mut out, dims, k, true);
        let tokens = n * (h / k) * (w / k);
        self.push(
            Tensor::real(&[tokens, c, k, k], out)?,
            Op::Tokenize { x: xi, k },
        )
    }

    /// Inverse of [`Graph::tokenize`] for an `m x n` token grid.
    pub fn detokenize(&mut self, x: Var, m: usize, n: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let [t, c, k, k2] = nchw(self.val(xi))?;
        if k != k2 || m * n == 0 || t % (m * n) != 0 {
            return Err(Error::dims(
                format!("[multiple of {}, C, k, k]", m * n),
                format!("{:?}", self.val(xi).dims()),
            ));
        }
        let batch = t / (m * n);
        let dims = [batch, c, m * k, n * k];
        let mut out = vec![0.0; t * c * k * k];
        token_permute(self.val(xi).as_real()?, &mut out, dims, k, false);
        self.push(Tensor::real(&dims, out)?, Op::Detokenize(xi))
    }

    /// Mixes whole neighbouring tokens of an `m x n` grid with scalar
    /// weights `w` of shape `[2s+1, 2s+1]` (shared by all channels) or
    /// `[C, 2s+1, 2s+1]` (one kernel per channel). Tokens beyond the grid
    /// count as zero.
    pub fn token_conv(&mut self, x: Var, w: Var, m: usize, n: usize) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let [t, c, k, k2] = nchw(self.val(xi))?;
        if k != k2 || m * n == 0 || t % (m * n) != 0 {
            return Err(Error::dims(
                format!("[multiple of {}, C, k, k]", m * n),
                format!("{:?}", self.val(xi).dims()),
            ));
        }
        let (per_channel, side) = match *self.val(wi).dims() {
            [a, b] if a == b && a % 2 == 1 => (false, a),
            [ch, a, b] if ch == c && a == b && a % 2 == 1 => (true, a),
            ref d => {
                return Err(Error::dims(
                    "[2s+1, 2s+1] or [C, 2s+1, 2s+1]",
                    format!("{d:?}"),
                ))
            }
        };
        let s = side / 2;
        let xs = self.val(xi).as_real()?;
        let ws = self.val(wi).as_real()?;
        let tok = c * k * k;
        let plane = k * k;
        let mut out = vec![0.0; t * tok];
        for b in 0..t / (m * n) {
            for i in 0..m {
                for j in 0..n {
                    let dst_tok = (b * m + i) * n + j;
                    for (ty, sy) in (i as isize - s as isize..=i as isize + s as isize).enumerate()
                    {
                        if sy < 0 || sy >= m as isize {
                            continue;
                        }
                        for (tx, sx) in
                            (j as isize - s as isize..=j as isize + s as isize).enumerate()
                        {
                            if sx < 0 || sx >= n as isize {
                                continue;
                            }
                            let src_tok = (b * m + sy as usize) * n + sx as usize;
                            let src = &xs[src_tok * tok..(src_tok + 1) * tok];
                            let dst = &mut out[dst_tok * tok..(dst_tok + 1) * tok];
                            for ch in 0..c {
                                let wv = if per_channel {
                                    ws[(ch * side + ty) * side + tx]
                                } else {
                                    ws[ty * side + tx]
                                };
                                let r = ch * plane..(ch + 1) * plane;
                                for (d, v) in dst[r.clone()].iter_mut().zip(&src[r]) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::real(&[t, c, k, k], out)?,
            Op::TokenConv {
                x: xi,
                w: wi,
                s,
                m,
                n,
            },
        )
    }

    /// Zero-pads the spatial axes to `h x w`, placing the input at
    /// `(top, left)`.
    pub fn pad2d(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let [n, c, ih, iw] = nchw(self.val(xi))?;
        if top + ih > h || left + iw > w {
            return Err(Error::dims(
                format!("padded extent {h}x{w}"),
                format!("{ih}x{iw} at ({top}, {left})"),
            ));
        }
        let xs = self.val(xi).as_real()?;
        let mut out = vec![0.0; n * c * h * w];
        for p in 0..n * c {
            for y in 0..ih {
                let d = (p * h + top + y) * w + left;
                out[d..d + iw].copy_from_slice(&xs[(p * ih + y) * iw..(p * ih + y + 1) * iw]);
            }
        }
        self.push(
            Tensor::real(&[n, c, h, w], out)?,
            Op::Pad { x: xi, top, left },
        )
    }

    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let [n, c, ih, iw] = nchw(self.val(xi))?;
        if top + h > ih || left + w > iw {
            return Err(Error::dims(
                format!("crop inside {ih}x{iw}"),
                format!("{h}x{w} at ({top}, {left})"),
            ));
        }
        let xs = self.val(xi).as_real()?;
        let mut out = vec![0.0; n * c * h * w];
        for p in 0..n * c {
            for y in 0..h {
                let s = (p * ih + top + y) * iw + left;
                out[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(&xs[s..s + w]);
            }
        }
        self.push(
            Tensor::real(&[n, c, h, w], out)?,
            Op::Crop { x: xi, top, left },
        )
    }

    fn check_target(&self, xi: usize, target: &Tensor) -> Result<Vec<f64>> {
        if target.dims() != self.val(xi).dims() {
            return Err(Error::dims(
                format!("{:?}", self.val(xi).dims()),
                format!("{:?}", target.dims()),
            ));
        }
        self.val(xi).as_real()?;
        Ok(target.as_real()?.to_vec())
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.check_target(xi, target)?;
        let xs = self.val(xi).as_real()?;
        let v = xs.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / xs.len().max(1) as f64;
        self.push(Tensor::scalar(v), Op::L1 { x: xi, target: t })
    }

    /// Mean squared error against a constant target.
    pub fn l2_loss(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.check_target(xi, target)?;
        let xs = self.val(xi).as_real()?;
        let v = xs
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / xs.len().max(1) as f64;
        self.push(Tensor::scalar(v), Op::L2 { x: xi, target: t })
    }

    /// `sum x * c` for a constant `c`; a convenient scalar probe.
    pub fn dot_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xi = self.idx(x)?;
        let c = self.check_target(xi, c)?;
        let v = self
            .val(xi)
            .as_real()?
            .iter()
            .zip(&c)
            .map(|(a, b)| a * b)
            .sum();
        self.push(Tensor::scalar(v), Op::Dot { x: xi, c })
    }

    /// Reverse sweep from a scalar `loss`. The graph is left untouched, so
    /// the sweep can be repeated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss)?;
        let lt = self.val(li);
        if lt.len() != 1 || lt.is_complex() {
            return Err(Error::Graph(format!(
                "backward needs a real scalar, got dims {:?}",
                lt.dims()
            )));
        }
        let mut grads: Vec<Option<Data>> = vec![None; self.nodes.len()];
        grads[li] = Some(Data::Real(vec![1.0]));
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(n, node)| match node.op {
                    Op::Param(p) => Some((n, p)),
                    _ => None,
                })
                .collect(),
        })
    }

    fn backprop(&self, i: usize, g: &Data, grads: &mut [Option<Data>]) -> Result<()> {
        let mut acc = |j: usize, d: Data| match &mut grads[j] {
            Some(e) => e.add_assign(&d),
            slot => *slot = Some(d),
        };
        let real_g = || match g {
            Data::Real(v) => v.as_slice(),
            Data::Complex(_) => unreachable!("real node with complex gradient"),
        };
        let cplx_g = || match g {
            Data::Complex(v) => v.as_slice(),
            Data::Real(_) => unreachable!("complex node with real gradient"),
        };
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Fft2(x) | Op::Ifft2(x) => {
                let inverse_fwd = matches!(self.nodes[i].op, Op::Ifft2(_));
                let [_, _, h, w] = nchw(self.val(*x))?;
                let mut d = cplx_g().to_vec();
                fft::fft2_batch(&mut d, h, w, !inverse_fwd);
                if inverse_fwd {
                    let s = 1.0 / (h * w) as f64;
                    d.iter_mut().for_each(|v| *v *= s);
                }
                if self.val(*x).is_complex() {
                    acc(*x, Data::Complex(d));
                } else {
                    acc(*x, Data::Real(d.iter().map(|c| c.re).collect()));
                }
            }
            Op::Real(x) => acc(
                *x,
                Data::Complex(real_g().iter().map(|&r| Complex64::new(r, 0.0)).collect()),
            ),
            Op::Imag(x) => acc(
                *x,
                Data::Complex(real_g().iter().map(|&r| Complex64::new(0.0, r)).collect()),
            ),
            Op::SpectralMix { x, w, rows, cols } => {
                let gy = cplx_g();
                let xs = self.val(*x).as_complex()?;
                let ws = self.val(*w).as_complex()?;
                let [n, ci, h, wd] = nchw(self.val(*x))?;
                let co = self.val(*w).dims()[3];
                let mw = cols.len();
                let plane = h * wd;
                let mut gx = vec![ZERO; xs.len()];
                let mut gw = vec![ZERO; ws.len()];
                for b in 0..n {
                    for (r, &fy) in rows.iter().enumerate() {
                        for (c, &fx) in cols.iter().enumerate() {
                            let f = fy * wd + fx;
                            let wbase = (r * mw + c) * ci * co;
                            for ii in 0..ci {
                                let xv = xs[(b * ci + ii) * plane + f].conj();
                                let mut sx = ZERO;
                                for o in 0..co {
                                    let gv = gy[(b * co + o) * plane + f];
                                    sx += ws[wbase + ii * co + o].conj() * gv;
                                    gw[wbase + ii * co + o] += xv * gv;
                                }
                                gx[(b * ci + ii) * plane + f] = sx;
                            }
                        }
                    }
                }
                acc(*x, Data::Complex(gx));
                acc(*w, Data::Complex(gw));
            }
            Op::Conv { x, w, b, geom } => {
                let gy = real_g();
                let xs = self.val(*x).as_real()?;
                let ws = self.val(*w).as_real()?;
                let (co, ci) = (geom.small_c, geom.big_c);
                let (op, ip) = (geom.small.0 * geom.small.1, geom.big.0 * geom.big.1);
                let (kh, kw) = (geom.kh, geom.kw);
                let mut gx = vec![0.0; xs.len()];
                let mut gw = vec![0.0; ws.len()];
                for bt in 0..geom.batch {
                    for o in 0..co {
                        let gplane = &gy[(bt * co + o) * op..(bt * co + o + 1) * op];
                        for ii in 0..ci {
                            let r = (bt * ci + ii) * ip..(bt * ci + ii + 1) * ip;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let wid = ((o * ci + ii) * kh + ky) * kw + kx;
                                    scatter(&mut gx[r.clone()], gplane, geom, ky, kx, ws[wid]);
                                    gw[wid] += correlate(gplane, &xs[r.clone()], geom, ky, kx);
                                }
                            }
                        }
                    }
                }
                acc(*x, Data::Real(gx));
                acc(*w, Data::Real(gw));
                if let Some(b) = b {
                    acc(*b, Data::Real(bias_grad(gy, geom.batch, co, op)));
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                let gy = real_g();
                let xs = self.val(*x).as_real()?;
                let ws = self.val(*w).as_real()?;
                let (ci, co) = (geom.small_c, geom.big_c);
                let (ip, op) = (geom.small.0 * geom.small.1, geom.big.0 * geom.big.1);
                let (kh, kw) = (geom.kh, geom.kw);
                let mut gx = vec![0.0; xs.len()];
                let mut gw = vec![0.0; ws.len()];
                for bt in 0..geom.batch {
                    for o in 0..co {
                        let gplane = &gy[(bt * co + o) * op..(bt * co + o + 1) * op];
                        for ii in 0..ci {
                            let r = (bt * ci + ii) * ip..(bt * ci + ii + 1) * ip;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let wid = ((ii * co + o) * kh + ky) * kw + kx;
                                    gather(&mut gx[r.clone()], gplane, geom, ky, kx, ws[wid]);
                                    gw[wid] += correlate(&xs[r.clone()], gplane, geom, ky, kx);
                                }
                            }
                        }
                    }
                }
                acc(*x, Data::Real(gx));
                acc(*w, Data::Real(gw));
                if let Some(b) = b {
                    acc(*b, Data::Real(bias_grad(gy, geom.batch, co, op)));
                }
            }
            Op::Gelu(x) => {
                let xs = self.val(*x).as_real()?;
                acc(
                    *x,
                    Data::Real(
                        xs.iter()
                            .zip(real_g())
                            .map(|(&a, gv)| gv * gelu_grad(a))
                            .collect(),
                    ),
                );
            }
            Op::Sigmoid(x) => {
                let ys = self.val(i).as_real()?;
                acc(
                    *x,
                    Data::Real(
                        ys.iter()
                            .zip(real_g())
                            .map(|(&y, gv)| gv * y * (1.0 - y))
                            .collect(),
                    ),
                );
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Concat(ids) => {
                let gy = real_g();
                let [n, total_c, h, w] = nchw(self.val(i))?;
                let plane = h * w;
                let mut offset = 0;
                for &j in ids {
                    let c = self.val(j).dims()[1];
                    let mut gx = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let s = (b * total_c + offset) * plane;
                        gx.extend_from_slice(&gy[s..s + c * plane]);
                    }
                    offset += c;
                    acc(j, Data::Real(gx));
                }
            }
            Op::Tokenize { x, k } => {
                let dims = nchw(self.val(*x))?;
                let mut gx = vec![0.0; real_g().len()];
                token_permute(real_g(), &mut gx, dims, *k, false);
                acc(*x, Data::Real(gx));
            }
            Op::Detokenize(x) => {
                let dims = nchw(self.val(i))?;
                let k = self.val(*x).dims()[2];
                let mut gx = vec![0.0; real_g().len()];
                token_permute(real_g(), &mut gx, dims, k, true);
                acc(*x, Data::Real(gx));
            }
            Op::TokenConv { x, w, s, m, n } => {
                let gy = real_g();
                let xs = self.val(*x).as_real()?;
                let ws = self.val(*w).as_real()?;
                let per_channel = self.val(*w).dims().len() == 3;
                let [t, c, k, _] = nchw(self.val(*x))?;
                let (s, m, n) = (*s, *m, *n);
                let side = 2 * s + 1;
                let plane = k * k;
                let tok = c * plane;
                let mut gx = vec![0.0; xs.len()];
                let mut gw = vec![0.0; ws.len()];
                for b in 0..t / (m * n) {
                    for i0 in 0..m {
                        for j0 in 0..n {
                            let dst_tok = (b * m + i0) * n + j0;
                            let gt = &gy[dst_tok * tok..(dst_tok + 1) * tok];
                            for ty in 0..side {
                                let sy = i0 as isize + ty as isize - s as isize;
                                if sy < 0 || sy >= m as isize {
                                    continue;
                                }
                                for tx in 0..side {
                                    let sx = j0 as isize + tx as isize - s as isize;
                                    if sx < 0 || sx >= n as isize {
                                        continue;
                                    }
                                    let src_tok = (b * m + sy as usize) * n + sx as usize;
                                    for ch in 0..c {
                                        let wid = if per_channel {
                                            (ch * side + ty) * side + tx
                                        } else {
                                            ty * side + tx
                                        };
                                        let r = src_tok * tok + ch * plane
                                            ..src_tok * tok + (ch + 1) * plane;
                                        let gr = &gt[ch * plane..(ch + 1) * plane];
                                        let wv = ws[wid];
                                        let mut dot = 0.0;
                                        for ((d, gv), xv) in
                                            gx[r.clone()].iter_mut().zip(gr).zip(&xs[r])
                                        {
                                            *d += wv * gv;
                                            dot += gv * xv;
                                        }
                                        gw[wid] += dot;
                                    }
                                }
                            }
                        }
                    }
                }
                acc(*x, Data::Real(gx));
                acc(*w, Data::Real(gw));
            }
            Op::Pad { x, top, left } => {
                let [n, c, ih, iw] = nchw(self.val(*x))?;
                let [_, _, h, w] = nchw(self.val(i))?;
                let gy = real_g();
                let mut gx = vec![0.0; n * c * ih * iw];
                for p in 0..n * c {
                    for y in 0..ih {
                        let s = (p * h + top + y) * w + left;
                        gx[(p * ih + y) * iw..(p * ih + y + 1) * iw]
                            .copy_from_slice(&gy[s..s + iw]);
                    }
                }
                acc(*x, Data::Real(gx));
            }
            Op::Crop { x, top, left } => {
                let [n, c, ih, iw] = nchw(self.val(*x))?;
                let [_, _, h, w] = nchw(self.val(i))?;
                let gy = real_g();
                let mut gx = vec![0.0; n * c * ih * iw];
                for p in 0..n * c {
                    for y in 0..h {
                        let d = (p * ih + top + y) * iw + left;
                        gx[d..d + w].copy_from_slice(&gy[(p * h + y) * w..(p * h + y + 1) * w]);
                    }
                }
                acc(*x, Data::Real(gx));
            }
            Op::L1 { x, target } => {
                let xs = self.val(*x).as_real()?;
                let scale = real_g()[0] / xs.len().max(1) as f64;
                let gx = xs
                    .iter()
                    .zip(target)
                    .map(|(a, b)| {
                        let d = a - b;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*x, Data::Real(gx));
            }
            Op::L2 { x, target } => {
                let xs = self.val(*x).as_real()?;
                let scale = 2.0 * real_g()[0] / xs.len().max(1) as f64;
                acc(
                    *x,
                    Data::Real(
                        xs.iter()
                            .zip(target)
                            .map(|(a, b)| scale * (a - b))
                            .collect(),
                    ),
                );
            }
            Op::Dot { x, c } => {
                let gv = real_g()[0];
                acc(*x, Data::Real(c.iter().map(|v| v * gv).collect()));
            }
        }
        Ok(())
    }
}

fn bias_grad(gy: &[f64], batch: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for b in 0..batch {
        for (o, v) in gb.iter_mut().enumerate() {
            *v += gy[(b * c + o) * plane..(b * c + o + 1) * plane]
                .iter()
                .sum::<f64>();
        }
    }
    gb
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::Fft2(_) => "fft2",
        Op::Ifft2(_) => "ifft2",
        Op::Real(_) => "real",
        Op::Imag(_) => "imag",
        Op::SpectralMix { .. } => "spectral_mix",
        Op::Conv { .. } => "conv2d",
        Op::ConvTranspose { .. } => "conv_transpose2d",
        Op::Gelu(_) => "gelu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Add(..) => "add",
        Op::Concat(_) => "concat_channels",
        Op::Tokenize { .. } => "tokenize",
        Op::Detokenize(_) => "detokenize",
        Op::TokenConv { .. } => "token_conv",
        Op::Pad { .. } => "pad2d",
        Op::Crop { .. } => "crop2d",
        Op::L1 { .. } => "l1_loss",
        Op::L2 { .. } => "l2_loss",
        Op::Dot { .. } => "dot_const",
    }
}

/// Result of one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Data>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss.
    pub fn get(&self, v: Var) -> Result<Option<&Data>> {
        if v.graph != self.graph || v.node >= self.grads.len() {
            return Err(Error::Graph("variable belongs to a different graph".into()));
        }
        Ok(self.grads[v.node].as_ref())
    }

    /// Gradients aligned with `params`; parameters unused by the graph get
    /// zeros and repeated uses are summed.
    pub fn for_params(&self, params: &ParamSet) -> Vec<Data> {
        let mut out: Vec<Data> = (0..params.len())
            .map(|i| params.tensor(i).data().zeros_like())
            .collect();
        for &(node, p) in &self.params {
            if let (Some(g), Some(slot)) = (&self.grads[node], out.get_mut(p)) {
                slot.add_assign(g);
            }
        }
        out
    }
}
