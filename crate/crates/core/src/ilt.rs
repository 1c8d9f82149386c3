// SPDX-License-Identifier: Apache-2.0
//! Pixel ILT by gradient descent through the relaxed litho model.
//!
//! The mask is parameterized as `M = logistic(mask_steepness * theta)` and
//! the loss is
//!
//! ```text
//! L = sum_c w_c * sum_px (logistic(beta * (I_c(M) - d_th)) - Z_t)^2
//! ```
//!
//! over the nominal condition and, optionally, the defocus/dose corners.

use std::sync::Arc;

use crate::layout::LayoutRaster;
use crate::litho::{logistic, KernelSpectra, LithoKernelSet, ResistModel, Simulator};
use crate::{Error, Grid, Result};

/// Real-valued mask in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    values: Grid<f64>,
    nm_per_px: f64,
}

impl MaskGrid {
    pub fn new(values: Grid<f64>, nm_per_px: f64) -> Result<Self> {
        if !(nm_per_px > 0.0 && nm_per_px.is_finite()) {
            return Err(Error::param(
                "nm_per_px",
                format!("must be positive, got {nm_per_px}"),
            ));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(
                "values",
                format!("mask value {v} outside [0, 1]"),
            ));
        }
        Ok(MaskGrid { values, nm_per_px })
    }

    pub fn from_layout(target: &LayoutRaster) -> Self {
        MaskGrid {
            values: target.to_real(),
            nm_per_px: target.nm_per_px(),
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn nm_per_px(&self) -> f64 {
        self.nm_per_px
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn is_binary(&self) -> bool {
        self.values.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Pixelwise threshold with ties going to 1.
pub fn binarize(m: &MaskGrid, threshold: f64) -> MaskGrid {
    MaskGrid {
        values: m.values.map(|&v| if v >= threshold { 1.0 } else { 0.0 }),
        nm_per_px: m.nm_per_px,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IltConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub mask_steepness: f64,
    /// Replaces the resist model's steepness inside the loss when set.
    pub resist_steepness: Option<f64>,
    pub target_weight_nominal: f64,
    /// Weight of each defocus/dose corner; 0 disables the PVB-aware term.
    pub target_weight_pvb: f64,
    pub momentum: f64,
    pub binarize_threshold: f64,
}

impl Default for IltConfig {
    fn default() -> Self {
        IltConfig {
            max_iters: 60,
            step_size: 1.0,
            mask_steepness: 1.0,
            resist_steepness: None,
            target_weight_nominal: 1.0,
            target_weight_pvb: 0.0,
            momentum: 0.0,
            binarize_threshold: 0.5,
        }
    }
}

impl IltConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("step_size", "must be positive"));
        }
        if !(self.mask_steepness > 0.0) {
            return Err(Error::param("mask_steepness", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::param("binarize_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

const LOGIT_CLAMP: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct IltResult {
    pub mask: MaskGrid,
    /// Loss before every update, followed by the loss of the returned mask.
    pub loss_trace: Vec<f64>,
}

struct Corner {
    spectra: Arc<KernelSpectra>,
    offset: (usize, usize),
    weight: f64,
}

/// The differentiable objective; exposed so gradients can be checked.
pub struct IltObjective {
    target: Vec<f64>,
    dims: (usize, usize),
    corners: Vec<Corner>,
    d_th: f64,
    beta: f64,
    gamma: f64,
}

impl IltObjective {
    pub fn nominal(
        target: &LayoutRaster,
        k: &LithoKernelSet,
        rm: &ResistModel,
        cfg: &IltConfig,
    ) -> Result<Self> {
        let (h, w) = target.dims();
        let (ph, pw) = crate::litho::padded_period(h, w, k);
        let corner = Corner {
            spectra: Arc::new(k.spectra(ph, pw)?),
            offset: k.halo(),
            weight: cfg.target_weight_nominal,
        };
        Ok(Self::build(target, vec![corner], rm, cfg))
    }

    pub fn with_simulator(target: &LayoutRaster, sim: &Simulator, cfg: &IltConfig) -> Result<Self> {
        let (h, w) = target.dims();
        let (spectra, offset) = sim.padded_spectra(&sim.nominal, h, w)?;
        let mut corners = vec![Corner {
            spectra,
            offset,
            weight: cfg.target_weight_nominal,
        }];
        if cfg.target_weight_pvb > 0.0 {
            for &d in &sim.doses {
                let k = sim.defocus.clone().with_dose(d)?;
                let (spectra, offset) = sim.padded_spectra(&k, h, w)?;
                corners.push(Corner {
                    spectra,
                    offset,
                    weight: cfg.target_weight_pvb,
                });
            }
        }
        Ok(Self::build(target, corners, &sim.resist, cfg))
    }

    fn build(
        target: &LayoutRaster,
        corners: Vec<Corner>,
        rm: &ResistModel,
        cfg: &IltConfig,
    ) -> Self {
        IltObjective {
            target: target.to_real().into_vec(),
            dims: target.dims(),
            corners,
            d_th: rm.d_th,
            beta: cfg.resist_steepness.unwrap_or(rm.sigmoid_steepness),
            gamma: cfg.mask_steepness,
        }
    }

    /// Parameters that reproduce the target up to the logit clamp.
    pub fn initial_theta(&self) -> Vec<f64> {
        self.target
            .iter()
            .map(|&t| {
                let logit = if t >= 0.5 { LOGIT_CLAMP } else { -LOGIT_CLAMP };
                logit / self.gamma
            })
            .collect()
    }

    pub fn mask(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|&t| logistic(self.gamma * t)).collect()
    }

    /// Loss and its gradient with respect to `theta`.
    pub fn loss_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (h, w) = self.dims;
        let mask = self.mask(theta);
        let mut loss = 0.0;
        let mut dmask = vec![0.0; h * w];
        for c in &self.corners {
            let (ph, pw) = c.spectra.dims();
            let (oy, ox) = c.offset;
            let mut padded = vec![0.0; ph * pw];
            for y in 0..h {
                padded[(y + oy) * pw + ox..(y + oy) * pw + ox + w]
                    .copy_from_slice(&mask[y * w..(y + 1) * w]);
            }
            let stack = c.spectra.fields(&padded);
            let mut g = vec![0.0; ph * pw];
            for y in 0..h {
                for x in 0..w {
                    let pi = (y + oy) * pw + ox + x;
                    let z = logistic(self.beta * (stack.intensity[pi] - self.d_th));
                    let diff = z - self.target[y * w + x];
                    loss += c.weight * diff * diff;
                    g[pi] = c.weight * 2.0 * diff * self.beta * z * (1.0 - z);
                }
            }
            // Padding pixels hold a fixed dark mask, so they contribute to the
            // loss through the field but are not optimized.
            let gm = c.spectra.intensity_vjp(&stack, &g);
            for y in 0..h {
                for x in 0..w {
                    dmask[y * w + x] += gm[(y + oy) * pw + ox + x];
                }
            }
        }
        let grad = dmask
            .iter()
            .zip(&mask)
            .map(|(d, m)| d * self.gamma * m * (1.0 - m))
            .collect();
        (loss, grad)
    }
}

/// Runs plain (optionally momentum) gradient descent from the target.
pub fn ilt_optimize(
    target: &LayoutRaster,
    k: &LithoKernelSet,
    rm: &ResistModel,
    cfg: &IltConfig,
) -> Result<IltResult> {
    cfg.validate()?;
    let obj = IltObjective::nominal(target, k, rm, cfg)?;
    run(&obj, target, cfg)
}

/// Same as [`ilt_optimize`] using the simulator's kernels, with the PVB-aware
/// corner term when `cfg.target_weight_pvb > 0`.
pub fn ilt_optimize_sim(
    target: &LayoutRaster,
    sim: &Simulator,
    cfg: &IltConfig,
) -> Result<IltResult> {
    cfg.validate()?;
    let obj = IltObjective::with_simulator(target, sim, cfg)?;
    run(&obj, target, cfg)
}

fn run(obj: &IltObjective, target: &LayoutRaster, cfg: &IltConfig) -> Result<IltResult> {
    let (h, w) = target.dims();
    let mut theta = obj.initial_theta();
    let mut velocity = vec![0.0; theta.len()];
    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    for iter in 0..cfg.max_iters {
        let (loss, grad) = obj.loss_and_grad(&theta);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "ILT loss diverged at iteration {iter} (loss {loss}); reduce step_size (currently {})",
                cfg.step_size
            )));
        }
        trace.push(loss);
        for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - cfg.step_size * g;
            *t += *v;
        }
    }
    let (final_loss, _) = obj.loss_and_grad(&theta);
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("ILT final loss is {final_loss}")));
    }
    trace.push(final_loss);
    let mask = MaskGrid::new(Grid::from_vec(h, w, obj.mask(&theta))?, target.nm_per_px())?;
    Ok(IltResult {
        mask,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::litho::SyntheticKernels;
    use crate::rng::DetRng;

    #[test]
    fn binarize_rules() {
        let m = MaskGrid::new(
            Grid::from_vec(1, 4, vec![0.0, 1.0, 0.5, 0.49]).unwrap(),
            1.0,
        )
        .unwrap();
        let b = binarize(&m, 0.5);
        assert_eq!(b.values().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(binarize(&b, 0.5), b);
        assert!(b.is_binary());
        let tie = MaskGrid::new(Grid::filled(2, 2, 0.3), 1.0).unwrap();
        assert!(binarize(&tie, 0.3)
            .values()
            .as_slice()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn mask_grid_range_checked() {
        assert!(MaskGrid::new(Grid::filled(2, 2, 1.5), 1.0).is_err());
        assert!(MaskGrid::new(Grid::filled(2, 2, 0.5), 0.0).is_err());
    }

    fn small_problem() -> (LayoutRaster, LithoKernelSet, ResistModel) {
        let p = SyntheticKernels {
            size: 7,
            count: 2,
            sigma_nm: 1.5,
            nm_per_px: 1.0,
            ..Default::default()
        };
        let k = p.nominal().unwrap();
        let i0 = k.open_frame_intensity();
        let rm = ResistModel::new(0.3 * i0, 8.0 / i0).unwrap();
        let t = LayoutRaster::new(
            Grid::from_fn(16, 16, |y, x| {
                ((4..10).contains(&y) && (5..12).contains(&x)) as u8
            }),
            1.0,
        )
        .unwrap();
        (t, k, rm)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (t, k, rm) = small_problem();
        let cfg = IltConfig {
            mask_steepness: 0.7,
            ..Default::default()
        };
        let obj = IltObjective::nominal(&t, &k, &rm, &cfg).unwrap();
        let mut rng = DetRng::new(21);
        let theta: Vec<f64> = obj
            .initial_theta()
            .iter()
            .map(|v| v * 0.3 + rng.normal() * 0.5)
            .collect();
        let (_, g) = obj.loss_and_grad(&theta);
        let eps = 1e-5;
        let mut num = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += eps;
            let (lp, _) = obj.loss_and_grad(&p);
            p[i] -= 2.0 * eps;
            let (lm, _) = obj.loss_and_grad(&p);
            num[i] = (lp - lm) / (2.0 * eps);
        }
        let diff: f64 = g
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-6);
        assert!(
            diff / norm <= 1e-4,
            "relative gradient error {}",
            diff / norm
        );
    }

    #[test]
    fn first_order_decrease_for_small_steps() {
        let (t, k, rm) = small_problem();
        let cfg = IltConfig::default();
        let obj = IltObjective::nominal(&t, &k, &rm, &cfg).unwrap();
        let theta: Vec<f64> = obj.initial_theta().iter().map(|v| v * 0.25).collect();
        let (l0, g) = obj.loss_and_grad(&theta);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        for step in [1e-3, 1e-4, 1e-5] {
            let moved: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t - step * g).collect();
            let (l1, _) = obj.loss_and_grad(&moved);
            let predicted = -step * g2;
            assert!(
                ((l1 - l0) - predicted).abs() <= 0.05 * predicted.abs(),
                "step {step}"
            );
        }
    }

    #[test]
    fn zero_target_stays_dark() {
        let (t, k, rm) = small_problem();
        let zero = LayoutRaster::zeros(t.dims().0, t.dims().1, 1.0).unwrap();
        let res = ilt_optimize(&zero, &k, &rm, &IltConfig::default()).unwrap();
        assert!(res.loss_trace.last().unwrap() <= &res.loss_trace[0]);
        let sim = Simulator::new(k.clone(), k.clone(), rm, vec![1.0]).unwrap();
        let printed = sim.print(binarize(&res.mask, 0.5).values()).unwrap();
        assert!(printed.pixels.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn deterministic_and_finite() {
        let (t, k, rm) = small_problem();
        let cfg = IltConfig {
            max_iters: 10,
            momentum: 0.5,
            ..Default::default()
        };
        let a = ilt_optimize(&t, &k, &rm, &cfg).unwrap();
        let b = ilt_optimize(&t, &k, &rm, &cfg).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.loss_trace.len(), 11);
        assert!(a.loss_trace.iter().all(|l| l.is_finite()));
    }
}
