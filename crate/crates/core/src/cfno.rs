// SPDX-License-Identifier: Apache-2.0
//! Convolutional Fourier neural operator.
//!
//! The image is cut into non-overlapping `k x k` tokens. Every token passes
//! through the same Fourier unit (channel lift, low-mode spectral mixing,
//! projection, activation), and a small token-wise convolution then mixes
//! whole neighbouring token embeddings with scalar weights. Three such paths
//! with different `k` run beside a plain convolutional path; their features
//! are concatenated, aggregated by a `1 x 1` convolution and decoded by a
//! strided head into a one-channel mask in `(0, 1)`.

use num_complex::Complex64;

use crate::ad::{Graph, ParamSet, Tensor, Var};
use crate::ilt::MaskGrid;
use crate::layout::LayoutRaster;
use crate::rng::DetRng;
use crate::{Error, Grid, Result};

/// Non-overlapping `k x k` tiling of a `d`-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    k: usize,
    m: usize,
    n: usize,
    d: usize,
    /// `[m*n, d, k, k]`, row-major over the token grid.
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Token rows and columns.
    pub fn grid(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    /// Channel `c` of token `(i, j)`.
    pub fn token(&self, i: usize, j: usize, c: usize) -> Grid<f64> {
        let kk = self.k * self.k;
        let start = ((i * self.n + j) * self.d + c) * kk;
        Grid::from_vec(self.k, self.k, self.data[start..start + kk].to_vec()).expect("token size")
    }

    fn tensor(&self) -> Tensor {
        Tensor::real(
            &[self.m * self.n, self.d, self.k, self.k],
            self.data.clone(),
        )
        .expect("token dims")
    }

    fn from_tensor(t: &Tensor, m: usize, n: usize) -> Result<TokenGrid> {
        let d = t.dims();
        Ok(TokenGrid {
            k: d[2],
            m,
            n,
            d: d[1],
            data: t.as_real()?.to_vec(),
        })
    }

    /// Reassemble the `m*k x n*k` image of channel `c`.
    pub fn detokenize(&self, c: usize) -> Result<Grid<f64>> {
        if c >= self.d {
            return Err(Error::param("channel", format!("{c} out of {}", self.d)));
        }
        let mut g = Graph::new();
        let x = g.input(self.tensor())?;
        let y = g.detokenize(x, self.m, self.n)?;
        let (h, w) = (self.m * self.k, self.n * self.k);
        let v = g.value(y)?.as_real()?;
        Grid::from_vec(h, w, v[c * h * w..(c + 1) * h * w].to_vec())
    }
}

/// Splits a single-channel image into `k x k` tokens.
pub fn tokenize(z: &Grid<f64>, k: usize) -> Result<TokenGrid> {
    let (h, w) = z.dims();
    let mut g = Graph::new();
    let x = g.input(Tensor::real(&[1, 1, h, w], z.as_slice().to_vec())?)?;
    let t = g.tokenize(x, k)?;
    TokenGrid::from_tensor(g.value(t)?, h / k, w / k)
}

/// Scalar-weighted sum of neighbouring tokens. `w` is `(2s+1) x (2s+1)`;
/// entry `(s + dy, s + dx)` weights the token `dy` rows and `dx` columns
/// away. Tokens outside the grid are zero.
pub fn token_conv(t: &TokenGrid, w: &Grid<f64>) -> Result<TokenGrid> {
    let (a, b) = w.dims();
    if a != b || a % 2 == 0 {
        return Err(Error::dims("odd square kernel", format!("{a}x{b}")));
    }
    if a / 2 >= t.m.min(t.n) {
        return Err(Error::param(
            "s",
            format!(
                "radius {} needs a token grid wider than {}x{}",
                a / 2,
                t.m,
                t.n
            ),
        ));
    }
    let mut g = Graph::new();
    let x = g.input(t.tensor())?;
    let wv = g.input(Tensor::real(&[a, b], w.as_slice().to_vec())?)?;
    let y = g.token_conv(x, wv, t.m, t.n)?;
    TokenGrid::from_tensor(g.value(y)?, t.m, t.n)
}

/// Token-shared Fourier unit on a token batch `[T, C, k, k]` using the
/// parameters `{prefix}.lift.w/b`, `{prefix}.spec` and `{prefix}.proj.w/b`.
/// With `activate == false` the final nonlinearity is skipped.
pub fn fno_unit(
    g: &mut Graph,
    tokens: Var,
    params: &ParamSet,
    prefix: &str,
    activate: bool,
) -> Result<Var> {
    let lw = g.param(params, &format!("{prefix}.lift.w"))?;
    let lb = g.param(params, &format!("{prefix}.lift.b"))?;
    let spec = g.param(params, &format!("{prefix}.spec"))?;
    let pw = g.param(params, &format!("{prefix}.proj.w"))?;
    let pb = g.param(params, &format!("{prefix}.proj.b"))?;
    let v = g.channel_linear(tokens, lw, Some(lb))?;
    let f = g.fft2(v)?;
    let mixed = g.spectral_mix(f, spec)?;
    let back = g.ifft2(mixed)?;
    let re = g.real(back)?;
    let u = g.channel_linear(re, pw, Some(pb))?;
    if activate {
        g.gelu(u)
    } else {
        Ok(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnoConfig {
    /// Token side of each Fourier path.
    pub token_sizes: Vec<usize>,
    /// Kept Fourier modes per axis, one per path.
    pub modes: Vec<usize>,
    /// Token-convolution radius `s` (kernel side `2s + 1`).
    pub token_radius: usize,
    /// Lifted channel count `d`.
    pub width: usize,
    /// One token-convolution kernel per channel instead of a shared one.
    pub per_channel_token_conv: bool,
}

impl Default for CfnoConfig {
    fn default() -> Self {
        CfnoConfig::new(vec![8, 16, 32], 16)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl CfnoConfig {
    /// Paths with the given token sizes, `k/2` modes each and `s = 1`.
    pub fn new(token_sizes: Vec<usize>, width: usize) -> Self {
        let modes = token_sizes.iter().map(|k| (k / 2).max(1)).collect();
        CfnoConfig {
            token_sizes,
            modes,
            token_radius: 1,
            width,
            per_channel_token_conv: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_sizes.is_empty() {
            return Err(Error::param(
                "token_sizes",
                "at least one Fourier path is required",
            ));
        }
        if self.modes.len() != self.token_sizes.len() {
            return Err(Error::param("modes", "one entry per token size"));
        }
        for (&k, &m) in self.token_sizes.iter().zip(&self.modes) {
            if k < 2 {
                return Err(Error::param("token_sizes", format!("token side {k} < 2")));
            }
            if m == 0 || m > k {
                return Err(Error::param(
                    "modes",
                    format!("{m} modes for token side {k}"),
                ));
            }
        }
        if self.width == 0 {
            return Err(Error::param("width", "must be positive"));
        }
        Ok(())
    }

    /// Inputs are zero-padded to a multiple of this side.
    pub fn pad_multiple(&self) -> usize {
        let l = self
            .token_sizes
            .iter()
            .fold(1, |acc, &k| acc / gcd(acc, k) * k);
        // the strided convolutions need an even side as well
        if l % 2 == 0 {
            l
        } else {
            2 * l
        }
    }

    fn token_kernel_dims(&self) -> Vec<usize> {
        let side = 2 * self.token_radius + 1;
        if self.per_channel_token_conv {
            vec![self.width, side, side]
        } else {
            vec![side, side]
        }
    }

    /// Parameter names and shapes in construction order. Complex tensors
    /// are flagged.
    fn layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let d = self.width;
        let mut v = Vec::new();
        for (p, &m) in self.modes.iter().enumerate() {
            v.push((format!("path{p}.lift.w"), vec![d, 1], false));
            v.push((format!("path{p}.lift.b"), vec![d], false));
            v.push((format!("path{p}.spec"), vec![m, m, d, d], true));
            v.push((format!("path{p}.proj.w"), vec![d, d], false));
            v.push((format!("path{p}.proj.b"), vec![d], false));
            v.push((format!("path{p}.tok"), self.token_kernel_dims(), false));
        }
        let paths = self.token_sizes.len() + 1;
        for (name, dims) in [
            ("conv.0.w", vec![d, 1, 3, 3]),
            ("conv.0.b", vec![d]),
            ("conv.1.w", vec![d, d, 3, 3]),
            ("conv.1.b", vec![d]),
            ("conv.2.w", vec![d, d, 4, 4]),
            ("conv.2.b", vec![d]),
            ("agg.w", vec![d, paths * d]),
            ("agg.b", vec![d]),
            ("head.0.w", vec![d, d, 3, 3]),
            ("head.0.b", vec![d]),
            ("head.1.w", vec![d, d, 4, 4]),
            ("head.1.b", vec![d]),
            ("head.2.w", vec![1, d, 3, 3]),
            ("head.2.b", vec![1]),
        ] {
            v.push((name.to_string(), dims, false));
        }
        v
    }
}

/// Parameter counts by component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBreakdown {
    /// Real scalars of each Fourier path, complex weights counted twice.
    pub fourier_paths: Vec<usize>,
    pub conv_path: usize,
    pub aggregation: usize,
    pub head: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.fourier_paths.iter().sum::<usize>() + self.conv_path + self.aggregation + self.head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnoNet {
    config: CfnoConfig,
    params: ParamSet,
}

impl CfnoNet {
    /// Fresh weights. Convolution and channel maps draw from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, spectral weights from a complex
    /// Gaussian with standard deviation `1/(d * modes)`, token kernels start
    /// as the identity and biases at zero.
    pub fn new(config: CfnoConfig, seed: u64) -> Result<CfnoNet> {
        config.validate()?;
        let mut rng = DetRng::new(seed);
        let mut params = ParamSet::new();
        let d = config.width;
        for (name, dims, is_complex) in config.layout() {
            let n: usize = dims.iter().product();
            let t = if is_complex {
                let sd = 1.0 / (d * dims[0]) as f64;
                let v = (0..n)
                    .map(|_| Complex64::new(rng.normal() * sd, rng.normal() * sd))
                    .collect();
                Tensor::complex(&dims, v)?
            } else if name.ends_with(".tok") {
                let side = 2 * config.token_radius + 1;
                let centre = config.token_radius * side + config.token_radius;
                let v = (0..n)
                    .map(|i| {
                        if i % (side * side) == centre {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Tensor::real(&dims, v)?
            } else if dims.len() == 1 {
                Tensor::zeros(&dims)
            } else {
                let fan_in = if name.starts_with("conv.2") || name.starts_with("head.1") {
                    // transposed: [Cin, Cout, kh, kw]
                    dims[0] * dims[2] * dims[3] / 4
                } else {
                    dims[1..].iter().product()
                };
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                Tensor::real(
                    &dims,
                    (0..n).map(|_| rng.uniform_in(-bound, bound)).collect(),
                )?
            };
            params.insert(name, t)?;
        }
        Ok(CfnoNet { config, params })
    }

    /// Rebuild a net from stored weights, checking every name and shape.
    pub fn from_parts(config: CfnoConfig, params: ParamSet) -> Result<CfnoNet> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::dims(
                format!("{} parameter tensors", layout.len()),
                format!("{}", params.len()),
            ));
        }
        for (name, dims, is_complex) in layout {
            let t = params
                .get(&name)
                .ok_or_else(|| Error::Graph(format!("missing parameter `{name}`")))?;
            if t.dims() != dims.as_slice() || t.is_complex() != is_complex {
                return Err(Error::dims(
                    format!("`{name}` {dims:?}"),
                    format!("{:?}", t.dims()),
                ));
            }
        }
        Ok(CfnoNet { config, params })
    }

    pub fn config(&self) -> &CfnoConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let count = |prefix: &str| -> usize {
            self.params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, t)| if t.is_complex() { 2 * t.len() } else { t.len() })
                .sum()
        };
        ParamBreakdown {
            fourier_paths: (0..self.config.token_sizes.len())
                .map(|p| count(&format!("path{p}.")))
                .collect(),
            conv_path: count("conv."),
            aggregation: count("agg."),
            head: count("head."),
        }
    }

    /// Output of Fourier path `p` before the token convolution, for a batch
    /// `[N, 1, H, W]` whose sides are multiples of the path's token size.
    pub fn path_embeddings(&self, g: &mut Graph, x: Var, p: usize) -> Result<Var> {
        let k = *self
            .config
            .token_sizes
            .get(p)
            .ok_or_else(|| Error::param("path", format!("no Fourier path {p}")))?;
        let t = g.tokenize(x, k)?;
        fno_unit(g, t, &self.params, &format!("path{p}"), true)
    }

    /// Fourier path `p` including the token convolution, reassembled into
    /// an image `[N, d, H, W]`.
    pub fn path_forward(&self, g: &mut Graph, x: Var, p: usize) -> Result<Var> {
        let u = self.path_embeddings(g, x, p)?;
        let dims = g.value(x)?.dims().to_vec();
        let k = self.config.token_sizes[p];
        let (m, n) = (dims[2] / k, dims[3] / k);
        let w = g.param(&self.params, &format!("path{p}.tok"))?;
        let t = g.token_conv(u, w, m, n)?;
        g.detokenize(t, m, n)
    }

    fn conv_block(
        &self,
        g: &mut Graph,
        x: Var,
        name: &str,
        stride: usize,
        transposed: bool,
    ) -> Result<Var> {
        let w = g.param(&self.params, &format!("{name}.w"))?;
        let b = g.param(&self.params, &format!("{name}.b"))?;
        let y = if transposed {
            g.conv_transpose2d(x, w, Some(b), stride, 1)?
        } else {
            g.conv2d(x, w, Some(b), stride, 1)?
        };
        g.gelu(y)
    }

    /// Builds the network on a batch `[N, 1, H, W]` of any spatial size and
    /// returns the mask batch of the same shape.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let dims = g.value(x)?.dims().to_vec();
        if dims.len() != 4 || dims[1] != 1 {
            return Err(Error::dims("[N, 1, H, W]", format!("{dims:?}")));
        }
        let (h, w) = (dims[2], dims[3]);
        let l = self.config.pad_multiple();
        let (ph, pw) = (h.div_ceil(l) * l, w.div_ceil(l) * l);
        let xp = if (ph, pw) == (h, w) {
            x
        } else {
            g.pad2d(x, 0, 0, ph, pw)?
        };

        let mut feats = Vec::with_capacity(self.config.token_sizes.len() + 1);
        for p in 0..self.config.token_sizes.len() {
            feats.push(self.path_forward(g, xp, p)?);
        }
        let c0 = self.conv_block(g, xp, "conv.0", 1, false)?;
        let c1 = self.conv_block(g, c0, "conv.1", 2, false)?;
        feats.push(self.conv_block(g, c1, "conv.2", 2, true)?);

        let cat = g.concat_channels(&feats)?;
        let aw = g.param(&self.params, "agg.w")?;
        let ab = g.param(&self.params, "agg.b")?;
        let agg = g.channel_linear(cat, aw, Some(ab))?;
        let agg = g.gelu(agg)?;

        let h0 = self.conv_block(g, agg, "head.0", 2, false)?;
        let h1 = self.conv_block(g, h0, "head.1", 2, true)?;
        let ow = g.param(&self.params, "head.2.w")?;
        let ob = g.param(&self.params, "head.2.b")?;
        let logits = g.conv2d(h1, ow, Some(ob), 1, 1)?;
        let logits = if (ph, pw) == (h, w) {
            logits
        } else {
            g.crop2d(logits, 0, 0, h, w)?
        };
        g.sigmoid(logits)
    }

    /// Mask for a single real-valued image.
    pub fn infer(&self, z: &Grid<f64>) -> Result<Grid<f64>> {
        let (h, w) = z.dims();
        let mut g = Graph::new();
        let x = g.input(Tensor::real(&[1, 1, h, w], z.as_slice().to_vec())?)?;
        let y = self.forward(&mut g, x)?;
        Grid::from_vec(h, w, g.value(y)?.as_real()?.to_vec())
    }
}

/// Continuous mask predicted for a layout; same size as the layout.
pub fn cfno_forward(z: &LayoutRaster, net: &CfnoNet) -> Result<MaskGrid> {
    let m = net.infer(&z.to_real())?;
    MaskGrid::new(m, z.nm_per_px())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Fno,
    Cfno,
}

/// Asymptotic cost model of a whole-image FNO layer versus a CFNO layer
/// on an `N = m n k^2` pixel image: returns `(flops, parameters)`.
///
/// FNO: `N log N + N d^2` operations and `N d^2` weights. CFNO:
/// `N log k^2 + s^2 m n d^2` operations and `s^2 d^2` weights. Logarithms are
/// base 2.
pub fn complexity_estimate(
    kind: OperatorKind,
    n_pixels: u64,
    k: u64,
    s: u64,
    m: u64,
    n: u64,
    d: u64,
) -> Result<(f64, u64)> {
    if n_pixels == 0 || m.checked_mul(n).and_then(|v| v.checked_mul(k * k)) != Some(n_pixels) {
        return Err(Error::param(
            "n_pixels",
            format!("N = {n_pixels} is not m*n*k^2 = {m}*{n}*{k}^2"),
        ));
    }
    let nf = n_pixels as f64;
    let d2 = (d * d) as f64;
    Ok(match kind {
        OperatorKind::Fno => (nf * nf.log2() + nf * d2, n_pixels * d * d),
        OperatorKind::Cfno => {
            let k2 = (k * k) as f64;
            (nf * k2.log2() + (s * s * m * n) as f64 * d2, s * s * d * d)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Grid<f64> {
        Grid::from_fn(h, w, |y, x| (y * w + x) as f64)
    }

    #[test]
    fn single_token_equals_image() {
        let z = ramp(4, 4);
        let t = tokenize(&z, 4).unwrap();
        assert_eq!(t.grid(), (1, 1));
        assert_eq!(t.token(0, 0, 0), z);
    }

    #[test]
    fn tokens_are_image_blocks() {
        let z = ramp(4, 6);
        let t = tokenize(&z, 2).unwrap();
        assert_eq!(t.grid(), (2, 3));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(
                    t.token(i, j, 0),
                    z.window((2 * i) as isize, (2 * j) as isize, 2, 2)
                );
            }
        }
        assert_eq!(t.detokenize(0).unwrap(), z);
    }

    #[test]
    fn tokenize_rejects_indivisible() {
        assert!(tokenize(&ramp(6, 6), 4).is_err());
    }

    #[test]
    fn identity_token_kernel() {
        let t = tokenize(&ramp(6, 6), 2).unwrap();
        let w = Grid::filled(1, 1, 1.0);
        assert_eq!(token_conv(&t, &w).unwrap(), t);
    }

    #[test]
    fn constant_field_interior_scales_by_kernel_sum() {
        let z = Grid::filled(8, 8, 2.0);
        let t = tokenize(&z, 2).unwrap();
        let w = Grid::from_vec(3, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let out = token_conv(&t, &w).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        for i in 1..3 {
            for j in 1..3 {
                for v in out.token(i, j, 0).as_slice() {
                    assert!((v - 2.0 * sum).abs() < 1e-12);
                }
            }
        }
        // the corner token misses the top row and left column of the kernel
        let corner = 2.0 * (0.5 + 0.6 + 0.8 + 0.9);
        assert!((out.token(0, 0, 0).get(0, 0) - corner).abs() < 1e-12);
    }

    #[test]
    fn token_conv_radius_must_fit_grid() {
        let t = tokenize(&ramp(4, 4), 2).unwrap();
        let w = Grid::filled(5, 5, 1.0);
        assert!(token_conv(&t, &w).is_err());
    }

    #[test]
    fn table_one_spot_values() {
        let (_, p) =
            complexity_estimate(OperatorKind::Cfno, 16 * 16 * 4 * 4, 4, 1, 16, 16, 4).unwrap();
        assert_eq!(p, 16);
        let (_, p) = complexity_estimate(OperatorKind::Fno, 4096, 16, 1, 4, 4, 4).unwrap();
        assert_eq!(p, 65536);
        let (fc, _) = complexity_estimate(OperatorKind::Cfno, 65536, 16, 1, 16, 16, 16).unwrap();
        let (ff, _) = complexity_estimate(OperatorKind::Fno, 65536, 16, 1, 16, 16, 16).unwrap();
        assert!(fc < ff);
        assert!(complexity_estimate(OperatorKind::Cfno, 100, 4, 1, 2, 2, 4).is_err());
    }

    #[test]
    fn pad_multiple_is_lcm() {
        assert_eq!(CfnoConfig::default().pad_multiple(), 32);
        assert_eq!(CfnoConfig::new(vec![4, 6], 2).pad_multiple(), 12);
        assert_eq!(CfnoConfig::new(vec![3], 2).pad_multiple(), 6);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let net = CfnoNet::new(CfnoConfig::new(vec![4, 8], 2), 1).unwrap();
        let again = CfnoNet::from_parts(net.config().clone(), net.params().clone()).unwrap();
        assert_eq!(again, net);
        let other = CfnoConfig::new(vec![4, 8], 3);
        assert!(CfnoNet::from_parts(other, net.params().clone()).is_err());
    }

    #[test]
    fn breakdown_sums_to_total() {
        let net = CfnoNet::new(CfnoConfig::default(), 7).unwrap();
        assert_eq!(net.param_breakdown().total(), net.param_count());
    }
}
