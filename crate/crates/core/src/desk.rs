// SPDX-License-Identifier: Apache-2.0
//! Small-scale defaults that make the full pipeline run on one CPU core:
//! 128 x 128 clips at 8 nm per pixel, synthetic kernels, short ILT.

use crate::cfno::CfnoConfig;
use crate::ilt::IltConfig;
use crate::layout::{generate, rasterize, GeneratorSpec, LayoutRaster, PatternKind};
use crate::lgst::TrainConfig;
use crate::litho::{ResistModel, Simulator, SyntheticKernels, DEFAULT_CORNER_DOSES};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct DeskSetup {
    pub kernels: SyntheticKernels,
    /// Resist threshold as a fraction of the open-frame intensity.
    pub threshold_fraction: f64,
    /// Resist sigmoid steepness times the open-frame intensity.
    pub relative_steepness: f64,
    pub side_px: usize,
    pub via: GeneratorSpec,
    pub metal: GeneratorSpec,
    pub ilt: IltConfig,
    pub model: CfnoConfig,
    /// Batches of 4 keep roughly 16 optimizer steps per epoch on a
    /// 64-design set.
    pub train: TrainConfig,
}

impl Default for DeskSetup {
    fn default() -> Self {
        let kernels = SyntheticKernels::default();
        let canvas_nm = (128.0 * kernels.nm_per_px) as u64;
        DeskSetup {
            kernels,
            threshold_fraction: 0.25,
            relative_steepness: 50.0,
            side_px: 128,
            via: GeneratorSpec {
                kind: PatternKind::ViaLike,
                seed: 0,
                density: 0.08,
                min_feature_nm: 96,
                min_space_nm: 80,
                canvas_nm,
            },
            metal: GeneratorSpec {
                kind: PatternKind::MetalLike,
                seed: 0,
                density: 0.15,
                min_feature_nm: 64,
                min_space_nm: 64,
                canvas_nm,
            },
            ilt: IltConfig {
                max_iters: 20,
                step_size: 10.0,
                ..IltConfig::default()
            },
            model: CfnoConfig::new(vec![8, 16, 32], 8),
            train: TrainConfig {
                batch_size: 4,
                ..TrainConfig::default()
            },
        }
    }
}

impl DeskSetup {
    pub fn simulator(&self) -> Result<Simulator> {
        let nominal = self.kernels.nominal()?;
        let defocus = self.kernels.defocus()?;
        let open = nominal.open_frame_intensity();
        let resist = ResistModel::relative_to(
            &nominal,
            self.threshold_fraction,
            self.relative_steepness / open,
        )?;
        Simulator::new(nominal, defocus, resist, DEFAULT_CORNER_DOSES.to_vec())
    }

    /// `count` designs alternating via-like and metal-like, seeded from
    /// `seed`.
    pub fn designs(&self, count: usize, seed: u64) -> Result<Vec<LayoutRaster>> {
        (0..count)
            .map(|i| {
                let mut spec = if i % 2 == 0 {
                    self.via.clone()
                } else {
                    self.metal.clone()
                };
                spec.seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                rasterize(&generate(&spec)?, self.kernels.nm_per_px)
            })
            .collect()
    }
}
