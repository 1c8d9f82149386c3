// SPDX-License-Identifier: Apache-2.0
//! Forward lithography: SVD-kernel aerial images, threshold resist and
//! process corners.
//!
//! The aerial image of a mask `M` under kernels `h_k` with weights `a_k` is
//!
//! ```text
//! I = sum_k a_k * |h_k (*) (dose * M)|^2
//! ```
//!
//! where `(*)` is a circular convolution computed in the frequency domain.
//! Kernel element `(a, b)` acts at offset `(a - kh/2, b - kw/2)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::fft::{self, fast_len};
use crate::ilt::MaskGrid;
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelVariant {
    Nominal,
    Defocus,
}

impl KernelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelVariant::Nominal => "nominal",
            KernelVariant::Defocus => "defocus",
        }
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(KernelVariant::Nominal),
            "defocus" => Ok(KernelVariant::Defocus),
            other => Err(Error::param(
                "variant",
                format!("unknown kernel variant `{other}`"),
            )),
        }
    }
}

/// Complex optical kernels with their non-increasing SVD weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LithoKernelSet {
    kernels: Vec<Grid<Complex64>>,
    coeffs: Vec<f64>,
    variant: KernelVariant,
    dose: f64,
}

impl LithoKernelSet {
    pub fn new(
        kernels: Vec<Grid<Complex64>>,
        coeffs: Vec<f64>,
        variant: KernelVariant,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        if kernels.len() != coeffs.len() {
            return Err(Error::dims(kernels.len(), coeffs.len()));
        }
        let dims = kernels[0].dims();
        if dims.0 == 0 || dims.1 == 0 {
            return Err(Error::param("kernels", "kernel grids must be non-empty"));
        }
        if let Some(k) = kernels.iter().find(|k| k.dims() != dims) {
            return Err(Error::dims(dims, k.dims()));
        }
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::param(
                "coeffs",
                "weights must be finite and non-negative",
            ));
        }
        if coeffs.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::param(
                "coeffs",
                "weights must be sorted non-increasing",
            ));
        }
        Ok(LithoKernelSet {
            kernels,
            coeffs,
            variant,
            dose: 1.0,
        })
    }

    pub fn with_dose(mut self, dose: f64) -> Result<Self> {
        if !(dose > 0.0 && dose.is_finite()) {
            return Err(Error::param(
                "dose",
                format!("must be positive, got {dose}"),
            ));
        }
        self.dose = dose;
        Ok(self)
    }

    pub fn kernels(&self) -> &[Grid<Complex64>] {
        &self.kernels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        self.kernels[0].dims()
    }

    /// Padding that keeps the circular wrap of a kernel inside dark field.
    pub fn halo(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel_dims();
        (kh / 2 + 1, kw / 2 + 1)
    }

    /// Intensity far inside an infinite clear mask.
    pub fn open_frame_intensity(&self) -> f64 {
        let d2 = self.dose * self.dose;
        self.kernels
            .iter()
            .zip(&self.coeffs)
            .map(|(k, a)| a * k.as_slice().iter().sum::<Complex64>().norm_sqr() * d2)
            .sum()
    }

    /// Frequency responses of every kernel embedded in an `h` x `w` period.
    pub fn spectra(&self, h: usize, w: usize) -> Result<KernelSpectra> {
        let (kh, kw) = self.kernel_dims();
        if h < kh || w < kw {
            return Err(Error::dims((kh, kw), (h, w)));
        }
        let (ch, cw) = (kh / 2, kw / 2);
        let spectra = self
            .kernels
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
                for a in 0..kh {
                    for b in 0..kw {
                        let y = (a + h - ch) % h;
                        let x = (b + w - cw) % w;
                        buf[y * w + x] += *k.get(a, b);
                    }
                }
                fft::fft2(&mut buf, h, w, false);
                buf
            })
            .collect();
        Ok(KernelSpectra {
            h,
            w,
            spectra,
            coeffs: self.coeffs.clone(),
            dose: self.dose,
        })
    }
}

/// Kernel frequency responses for one simulation period.
#[derive(Debug, Clone)]
pub struct KernelSpectra {
    h: usize,
    w: usize,
    spectra: Vec<Vec<Complex64>>,
    coeffs: Vec<f64>,
    dose: f64,
}

/// Per-kernel complex fields `h_k (*) (dose * M)`, kept for gradients.
pub struct FieldStack {
    pub fields: Vec<Vec<Complex64>>,
    pub intensity: Vec<f64>,
}

impl KernelSpectra {
    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    /// Forward model on a buffer that already has the period's dimensions.
    pub fn fields(&self, mask: &[f64]) -> FieldStack {
        let n = self.h * self.w;
        debug_assert_eq!(mask.len(), n);
        let mut spec: Vec<Complex64> = mask
            .iter()
            .map(|&m| Complex64::new(m * self.dose, 0.0))
            .collect();
        fft::fft2(&mut spec, self.h, self.w, false);
        let scale = 1.0 / n as f64;
        let mut intensity = vec![0.0; n];
        let mut fields = Vec::with_capacity(self.spectra.len());
        for (hk, &a) in self.spectra.iter().zip(&self.coeffs) {
            let mut f: Vec<Complex64> = hk.iter().zip(&spec).map(|(h, s)| h * s).collect();
            fft::fft2(&mut f, self.h, self.w, true);
            for (i, v) in f.iter_mut().enumerate() {
                *v *= scale;
                intensity[i] += a * v.norm_sqr();
            }
            fields.push(f);
        }
        FieldStack { fields, intensity }
    }

    /// Gradient of `sum(g * I)` with respect to the (undosed) mask, given the
    /// fields from [`KernelSpectra::fields`] and `g = dL/dI`.
    pub fn intensity_vjp(&self, stack: &FieldStack, g: &[f64]) -> Vec<f64> {
        let n = self.h * self.w;
        let scale = 1.0 / n as f64;
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for ((hk, &a), field) in self.spectra.iter().zip(&self.coeffs).zip(&stack.fields) {
            let mut t: Vec<Complex64> = field
                .iter()
                .zip(g)
                .map(|(f, gi)| f * (2.0 * a * gi))
                .collect();
            fft::fft2(&mut t, self.h, self.w, false);
            for ((dst, tv), h) in acc.iter_mut().zip(&t).zip(hk) {
                *dst += tv * h.conj();
            }
        }
        fft::fft2(&mut acc, self.h, self.w, true);
        acc.iter().map(|v| v.re * scale * self.dose).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AerialImage {
    pub intensity: Grid<f64>,
    pub nm_per_px: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResistImage {
    pub pixels: Grid<u8>,
}

impl ResistImage {
    pub fn new(pixels: Grid<u8>) -> Result<Self> {
        if pixels.as_slice().iter().any(|&v| v > 1) {
            return Err(Error::param("pixels", "resist image must be binary"));
        }
        Ok(ResistImage { pixels })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn rot90(&self) -> ResistImage {
        ResistImage {
            pixels: self.pixels.rot90(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistModel {
    pub d_th: f64,
    pub sigmoid_steepness: f64,
}

impl ResistModel {
    pub fn new(d_th: f64, sigmoid_steepness: f64) -> Result<Self> {
        if !(d_th > 0.0 && d_th.is_finite()) {
            return Err(Error::param(
                "d_th",
                format!("must be positive, got {d_th}"),
            ));
        }
        if !(sigmoid_steepness > 0.0 && sigmoid_steepness.is_finite()) {
            return Err(Error::param(
                "sigmoid_steepness",
                format!("must be positive, got {sigmoid_steepness}"),
            ));
        }
        Ok(ResistModel {
            d_th,
            sigmoid_steepness,
        })
    }

    /// Threshold placed at `fraction` of the open-frame intensity of `kernels`.
    pub fn relative_to(
        kernels: &LithoKernelSet,
        fraction: f64,
        sigmoid_steepness: f64,
    ) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param(
                "fraction",
                format!("must lie in (0, 1), got {fraction}"),
            ));
        }
        Self::new(fraction * kernels.open_frame_intensity(), sigmoid_steepness)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_kernel_fit(mask: &Grid<f64>, k: &LithoKernelSet) -> Result<()> {
    let (kh, kw) = k.kernel_dims();
    if mask.height() < kh || mask.width() < kw {
        return Err(Error::dims((kh, kw), mask.dims()));
    }
    Ok(())
}

/// Aerial image with the mask grid itself as the convolution period.
pub fn aerial_image(mask: &MaskGrid, k: &LithoKernelSet) -> Result<AerialImage> {
    let values = mask.values();
    check_kernel_fit(values, k)?;
    let (h, w) = values.dims();
    let spectra = k.spectra(h, w)?;
    let stack = spectra.fields(values.as_slice());
    Ok(AerialImage {
        intensity: Grid::from_vec(h, w, stack.intensity)?,
        nm_per_px: mask.nm_per_px(),
    })
}

/// Simulation period used for dark-field padded simulation of an `h` x `w` mask.
pub fn padded_period(h: usize, w: usize, k: &LithoKernelSet) -> (usize, usize) {
    let (ph, pw) = k.halo();
    (fast_len(h + 2 * ph), fast_len(w + 2 * pw))
}

/// Aerial image of a mask surrounded by dark field: the mask is zero-padded by
/// at least the kernel half-width, simulated circularly and cropped back.
pub fn aerial_image_padded(mask: &MaskGrid, k: &LithoKernelSet) -> Result<AerialImage> {
    let (h, w) = mask.values().dims();
    let (ph, pw) = padded_period(h, w, k);
    let (oy, ox) = k.halo();
    let spectra = k.spectra(ph, pw)?;
    let padded = mask.values().pad(oy, ox, ph, pw);
    let stack = spectra.fields(padded.as_slice());
    let full = Grid::from_vec(ph, pw, stack.intensity)?;
    Ok(AerialImage {
        intensity: full.window(oy as isize, ox as isize, h, w),
        nm_per_px: mask.nm_per_px(),
    })
}

/// Constant-threshold resist: a pixel prints iff `I >= d_th`.
pub fn resist(i: &AerialImage, m: &ResistModel) -> ResistImage {
    ResistImage {
        pixels: i.intensity.map(|&v| u8::from(v >= m.d_th)),
    }
}

/// Smooth resist surrogate `logistic(steepness * (I - d_th))`.
pub fn resist_relaxed(i: &AerialImage, m: &ResistModel) -> Grid<f64> {
    i.intensity
        .map(|&v| logistic(m.sigmoid_steepness * (v - m.d_th)))
}

/// Resist images at every process corner, in the order
/// `(nominal, 1.0)` then `(defocus, d)` for each entry of `doses`.
pub fn corner_images(
    mask: &MaskGrid,
    nominal: &LithoKernelSet,
    defocus: &LithoKernelSet,
    doses: &[f64],
    resist_model: &ResistModel,
) -> Result<Vec<ResistImage>> {
    if doses.is_empty() {
        return Err(Error::param(
            "doses",
            "at least one corner dose is required",
        ));
    }
    if nominal.kernel_dims() != defocus.kernel_dims() {
        return Err(Error::dims(nominal.kernel_dims(), defocus.kernel_dims()));
    }
    let mut out = Vec::with_capacity(doses.len() + 1);
    let nom = nominal.clone().with_dose(1.0)?;
    out.push(resist(&aerial_image_padded(mask, &nom)?, resist_model));
    for &d in doses {
        let k = defocus.clone().with_dose(d)?;
        out.push(resist(&aerial_image_padded(mask, &k)?, resist_model));
    }
    Ok(out)
}

/// Parameters of the synthetic stand-in optical model.
///
/// Kernel 1 is a Gaussian low-pass; further kernels are Gaussian-enveloped
/// vortex and radial modes `(u +- iv)^p (u^2+v^2)^q G`, Gram-Schmidt
/// orthogonalized. Every kernel has unit L2 norm and the weights decay
/// geometrically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticKernels {
    pub size: usize,
    pub count: usize,
    pub sigma_nm: f64,
    pub nm_per_px: f64,
    pub defocus_blur: f64,
    pub alpha_decay: f64,
}

impl Default for SyntheticKernels {
    fn default() -> Self {
        SyntheticKernels {
            size: 25,
            count: 4,
            sigma_nm: 40.0,
            nm_per_px: 8.0,
            defocus_blur: 1.25,
            alpha_decay: 0.3,
        }
    }
}

impl SyntheticKernels {
    fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::param("size", "kernel size must be >= 4"));
        }
        if self.count < 1 {
            return Err(Error::param("count", "at least one kernel is required"));
        }
        if !(self.sigma_nm > 0.0 && self.nm_per_px > 0.0) {
            return Err(Error::param(
                "sigma_nm",
                "sigma and pixel size must be positive",
            ));
        }
        if !(self.defocus_blur >= 1.0) {
            return Err(Error::param(
                "defocus_blur",
                "defocus blur factor must be >= 1",
            ));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay < 1.0) {
            return Err(Error::param("alpha_decay", "decay must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn nominal(&self) -> Result<LithoKernelSet> {
        self.build(KernelVariant::Nominal)
    }

    pub fn defocus(&self) -> Result<LithoKernelSet> {
        self.build(KernelVariant::Defocus)
    }

    pub fn build(&self, variant: KernelVariant) -> Result<LithoKernelSet> {
        self.validate()?;
        let sigma = match variant {
            KernelVariant::Nominal => self.sigma_nm,
            KernelVariant::Defocus => self.sigma_nm * self.defocus_blur,
        } / self.nm_per_px;
        let n = self.size;
        let c = (n / 2) as f64;
        let coords: Vec<(f64, f64)> = (0..n * n)
            .map(|i| (((i / n) as f64 - c) / sigma, ((i % n) as f64 - c) / sigma))
            .collect();
        let envelope: Vec<f64> = coords
            .iter()
            .map(|(v, u)| (-(u * u + v * v) / 2.0).exp())
            .collect();
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(self.count);
        for (p, sign, q) in mode_sequence().take(self.count) {
            let mut k: Vec<Complex64> = coords
                .iter()
                .zip(&envelope)
                .map(|(&(v, u), &g)| {
                    let z = Complex64::new(u, sign * v);
                    z.powu(p) * (u * u + v * v).powi(q as i32) * g
                })
                .collect();
            for b in &basis {
                let proj: Complex64 = b.iter().zip(&k).map(|(bi, ki)| bi.conj() * ki).sum();
                for (ki, bi) in k.iter_mut().zip(b) {
                    *ki -= proj * bi;
                }
            }
            let norm = k.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                return Err(Error::param(
                    "size",
                    "kernel too small to hold the requested modes",
                ));
            }
            k.iter_mut().for_each(|v| *v /= norm);
            basis.push(k);
        }
        let kernels = basis
            .into_iter()
            .map(|k| Grid::from_vec(n, n, k))
            .collect::<Result<Vec<_>>>()?;
        let coeffs = (0..self.count)
            .map(|i| self.alpha_decay.powi(i as i32))
            .collect();
        LithoKernelSet::new(kernels, coeffs, variant)
    }
}

/// (vortex order, vortex sign, radial order), lowest total order first.
fn mode_sequence() -> impl Iterator<Item = (u32, f64, u32)> {
    (0u32..).flat_map(|order| {
        let mut modes = Vec::new();
        for q in 0..=order / 2 {
            let p = order - 2 * q;
            if p == 0 {
                modes.push((0, 1.0, q));
            } else {
                modes.push((p, 1.0, q));
                modes.push((p, -1.0, q));
            }
        }
        modes
    })
}

/// Lazily builds and caches kernel spectra per simulation period; safe to
/// share between threads.
type SpectraKey = (KernelVariant, u64, usize, usize);

#[derive(Debug, Default)]
pub struct SpectraCache {
    map: Mutex<HashMap<SpectraKey, Arc<KernelSpectra>>>,
}

impl SpectraCache {
    pub fn get(&self, k: &LithoKernelSet, h: usize, w: usize) -> Result<Arc<KernelSpectra>> {
        let key = (k.variant(), k.dose().to_bits(), h, w);
        if let Some(s) = self.map.lock().expect("spectra cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(k.spectra(h, w)?);
        self.map
            .lock()
            .expect("spectra cache poisoned")
            .insert(key, Arc::clone(&s));
        Ok(s)
    }
}

/// Full optical setup: nominal and defocus kernels, resist threshold and the
/// corner doses used for PVB.
#[derive(Debug)]
pub struct Simulator {
    pub nominal: LithoKernelSet,
    pub defocus: LithoKernelSet,
    pub resist: ResistModel,
    pub doses: Vec<f64>,
    cache: SpectraCache,
}

impl Clone for Simulator {
    fn clone(&self) -> Self {
        Simulator {
            nominal: self.nominal.clone(),
            defocus: self.defocus.clone(),
            resist: self.resist,
            doses: self.doses.clone(),
            cache: SpectraCache::default(),
        }
    }
}

pub const DEFAULT_CORNER_DOSES: [f64; 2] = [0.98, 1.02];

impl Simulator {
    pub fn new(
        nominal: LithoKernelSet,
        defocus: LithoKernelSet,
        resist: ResistModel,
        doses: Vec<f64>,
    ) -> Result<Self> {
        if nominal.kernel_dims() != defocus.kernel_dims() {
            return Err(Error::dims(nominal.kernel_dims(), defocus.kernel_dims()));
        }
        if doses.is_empty() {
            return Err(Error::param(
                "doses",
                "at least one corner dose is required",
            ));
        }
        Ok(Simulator {
            nominal,
            defocus,
            resist,
            doses,
            cache: SpectraCache::default(),
        })
    }

    /// Dark-field padded spectra for an `h` x `w` mask, plus the crop offset.
    pub fn padded_spectra(
        &self,
        k: &LithoKernelSet,
        h: usize,
        w: usize,
    ) -> Result<(Arc<KernelSpectra>, (usize, usize))> {
        let (ph, pw) = padded_period(h, w, k);
        Ok((self.cache.get(k, ph, pw)?, k.halo()))
    }

    pub fn aerial(&self, mask: &Grid<f64>, k: &LithoKernelSet) -> Result<Grid<f64>> {
        let (h, w) = mask.dims();
        let (spectra, (oy, ox)) = self.padded_spectra(k, h, w)?;
        let (ph, pw) = spectra.dims();
        let stack = spectra.fields(mask.pad(oy, ox, ph, pw).as_slice());
        Ok(Grid::from_vec(ph, pw, stack.intensity)?.window(oy as isize, ox as isize, h, w))
    }

    /// Nominal-condition resist image.
    pub fn print(&self, mask: &Grid<f64>) -> Result<ResistImage> {
        let i = self.aerial(mask, &self.nominal)?;
        Ok(ResistImage {
            pixels: i.map(|&v| u8::from(v >= self.resist.d_th)),
        })
    }

    /// Same ordering contract as [`corner_images`].
    pub fn corners(&self, mask: &Grid<f64>) -> Result<Vec<ResistImage>> {
        let mut out = vec![self.print(mask)?];
        for &d in &self.doses {
            let k = self.defocus.clone().with_dose(d)?;
            let i = self.aerial(mask, &k)?;
            out.push(ResistImage {
                pixels: i.map(|&v| u8::from(v >= self.resist.d_th)),
            });
        }
        Ok(out)
    }
}
