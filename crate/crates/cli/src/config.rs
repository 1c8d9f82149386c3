// SPDX-License-Identifier: Apache-2.0
//! Flat `key = value` run configuration.
//!
//! Every knob of the pipeline lives here with its desk-scale default, so a
//! serialized config fully describes a run. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use litho_cfno::ad::StepSchedule;
use litho_cfno::cfno::CfnoConfig;
use litho_cfno::desk::DeskSetup;
use litho_cfno::ilt::IltConfig;
use litho_cfno::layout::GeneratorSpec;
use litho_cfno::lgst::{LgstConfig, TrainConfig};
use litho_cfno::litho::{ResistModel, Simulator, SyntheticKernels};
use litho_cfno::metrics::EpeSpec;
use litho_cfno::tiling::TileSpec;

use crate::error::{IoError, Result};

trait Value: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(usize, u32, u64, f64, bool, String);

impl<T: Value> Value for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }

    fn render(&self) -> String {
        self.iter().map(Value::render).collect::<Vec<_>>().join(",")
    }
}

impl<T: Value> Value for Option<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }

    fn render(&self) -> String {
        self.as_ref()
            .map_or_else(|| "none".to_string(), Value::render)
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident : $t:ty,)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $t,)*
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($key) => self.$key = <$t as Value>::parse_value(value)?,)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            pub fn serialize(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($key), self.$key.render()).expect("string write");)*
                s
            }
        }
    };
}

run_config! {
    /// Kernel files; `none` selects the synthetic kernels below.
    kernel_nominal: Option<String>,
    kernel_defocus: Option<String>,
    kernel_size: usize,
    kernel_count: usize,
    kernel_sigma_nm: f64,
    nm_per_px: f64,
    defocus_blur: f64,
    kernel_alpha_decay: f64,
    /// Resist threshold as a fraction of the nominal open-frame intensity.
    threshold_fraction: f64,
    /// Resist sigmoid steepness times the open-frame intensity.
    resist_steepness: f64,
    corner_doses: Vec<f64>,
    epe_tolerance_nm: f64,
    epe_spacing_nm: f64,
    epe_min_edge_nm: f64,
    designs: usize,
    side_px: usize,
    data_seed: u64,
    via_density: f64,
    via_feature_nm: u64,
    via_space_nm: u64,
    metal_density: f64,
    metal_feature_nm: u64,
    metal_space_nm: u64,
    ilt_iters: usize,
    ilt_step: f64,
    ilt_mask_steepness: f64,
    ilt_pvb_weight: f64,
    ilt_momentum: f64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    lr_every: usize,
    lr_factor: f64,
    train_seed: u64,
    holdout: Option<usize>,
    token_sizes: Vec<usize>,
    modes: Vec<usize>,
    width: usize,
    token_radius: usize,
    per_channel_token_conv: bool,
    model_seed: u64,
    rounds: u32,
    binarize_threshold: f64,
    cold_restart: bool,
    /// Weight of the PVB area in the LGST replacement gate; 0 gates on MSE.
    gate_pvb_weight: f64,
    clip_nm: u64,
    tile_nm: u64,
    stride_nm: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DeskSetup::default();
        let k = d.kernels;
        let epe = EpeSpec::default();
        let tiles = TileSpec::default();
        let lgst = LgstConfig::default();
        RunConfig {
            kernel_nominal: None,
            kernel_defocus: None,
            kernel_size: k.size,
            kernel_count: k.count,
            kernel_sigma_nm: k.sigma_nm,
            nm_per_px: k.nm_per_px,
            defocus_blur: k.defocus_blur,
            kernel_alpha_decay: k.alpha_decay,
            threshold_fraction: d.threshold_fraction,
            resist_steepness: d.relative_steepness,
            corner_doses: litho_cfno::litho::DEFAULT_CORNER_DOSES.to_vec(),
            epe_tolerance_nm: epe.tolerance_nm,
            epe_spacing_nm: epe.sample_spacing_nm,
            epe_min_edge_nm: epe.min_edge_len_nm,
            designs: 64,
            side_px: d.side_px,
            data_seed: 1,
            via_density: d.via.density,
            via_feature_nm: d.via.min_feature_nm,
            via_space_nm: d.via.min_space_nm,
            metal_density: d.metal.density,
            metal_feature_nm: d.metal.min_feature_nm,
            metal_space_nm: d.metal.min_space_nm,
            ilt_iters: d.ilt.max_iters,
            ilt_step: d.ilt.step_size,
            ilt_mask_steepness: d.ilt.mask_steepness,
            ilt_pvb_weight: d.ilt.target_weight_pvb,
            ilt_momentum: d.ilt.momentum,
            epochs: d.train.epochs,
            batch_size: d.train.batch_size,
            lr: d.train.schedule.base_lr,
            lr_every: d.train.schedule.every,
            lr_factor: d.train.schedule.factor,
            train_seed: d.train.seed,
            holdout: d.train.holdout,
            token_sizes: d.model.token_sizes.clone(),
            modes: d.model.modes.clone(),
            width: d.model.width,
            token_radius: d.model.token_radius,
            per_channel_token_conv: d.model.per_channel_token_conv,
            model_seed: 0,
            rounds: lgst.rounds,
            binarize_threshold: lgst.binarize_threshold,
            cold_restart: lgst.cold_restart,
            gate_pvb_weight: 0.0,
            clip_nm: tiles.clip_nm,
            tile_nm: tiles.tile_nm,
            stride_nm: tiles.stride_nm,
        }
    }
}

impl RunConfig {
    /// Starts from the defaults and applies every assignment in `text`.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                IoError::syntax(i + 1, format!("expected `key = value`, found `{line}`"))
            })?;
            let key = k.trim();
            c.set(key, v.trim())
                .map_err(|e| IoError::syntax(i + 1, format!("{key}: {e}")))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&crate::error::read_to_string(path)?)
    }

    /// Applies a single `key=value` override, as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| IoError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim()).map_err(IoError::Config)
    }

    pub fn synthetic_kernels(&self) -> SyntheticKernels {
        SyntheticKernels {
            size: self.kernel_size,
            count: self.kernel_count,
            sigma_nm: self.kernel_sigma_nm,
            nm_per_px: self.nm_per_px,
            defocus_blur: self.defocus_blur,
            alpha_decay: self.kernel_alpha_decay,
        }
    }

    /// Relative paths in the kernel keys resolve against `base`.
    pub fn simulator(&self, base: &Path) -> Result<Simulator> {
        let resolve = |p: &str| -> PathBuf { base.join(p) };
        let synth = self.synthetic_kernels();
        let nominal = match &self.kernel_nominal {
            Some(p) => crate::kernels::load_kernels(&resolve(p))?,
            None => synth.nominal()?,
        };
        let defocus = match &self.kernel_defocus {
            Some(p) => crate::kernels::load_kernels(&resolve(p))?,
            None => synth.defocus()?,
        };
        let open = nominal.open_frame_intensity();
        let resist = ResistModel::relative_to(
            &nominal,
            self.threshold_fraction,
            self.resist_steepness / open,
        )?;
        Ok(Simulator::new(
            nominal,
            defocus,
            resist,
            self.corner_doses.clone(),
        )?)
    }

    pub fn epe_spec(&self) -> EpeSpec {
        EpeSpec {
            tolerance_nm: self.epe_tolerance_nm,
            sample_spacing_nm: self.epe_spacing_nm,
            min_edge_len_nm: self.epe_min_edge_nm,
        }
    }

    pub fn ilt_config(&self) -> IltConfig {
        IltConfig {
            max_iters: self.ilt_iters,
            step_size: self.ilt_step,
            mask_steepness: self.ilt_mask_steepness,
            target_weight_pvb: self.ilt_pvb_weight,
            momentum: self.ilt_momentum,
            binarize_threshold: self.binarize_threshold,
            ..IltConfig::default()
        }
    }

    pub fn cfno_config(&self) -> CfnoConfig {
        CfnoConfig {
            token_sizes: self.token_sizes.clone(),
            modes: self.modes.clone(),
            token_radius: self.token_radius,
            width: self.width,
            per_channel_token_conv: self.per_channel_token_conv,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: StepSchedule {
                base_lr: self.lr,
                every: self.lr_every,
                factor: self.lr_factor,
            },
            seed: self.train_seed,
            holdout: self.holdout,
        }
    }

    pub fn lgst_config(&self) -> LgstConfig {
        LgstConfig {
            rounds: self.rounds,
            train: self.train_config(),
            binarize_threshold: self.binarize_threshold,
            cold_restart: self.cold_restart,
        }
    }

    pub fn tile_spec(&self) -> TileSpec {
        TileSpec {
            clip_nm: self.clip_nm,
            tile_nm: self.tile_nm,
            stride_nm: self.stride_nm,
        }
    }

    pub fn desk(&self) -> DeskSetup {
        let base = DeskSetup::default();
        let canvas_nm = (self.side_px as f64 * self.nm_per_px).round() as u64;
        let spec = |g: &GeneratorSpec, density, feature, space| GeneratorSpec {
            density,
            min_feature_nm: feature,
            min_space_nm: space,
            canvas_nm,
            ..g.clone()
        };
        DeskSetup {
            kernels: self.synthetic_kernels(),
            threshold_fraction: self.threshold_fraction,
            relative_steepness: self.resist_steepness,
            side_px: self.side_px,
            via: spec(
                &base.via,
                self.via_density,
                self.via_feature_nm,
                self.via_space_nm,
            ),
            metal: spec(
                &base.metal,
                self.metal_density,
                self.metal_feature_nm,
                self.metal_space_nm,
            ),
            ilt: self.ilt_config(),
            model: self.cfno_config(),
            train: self.train_config(),
        }
    }
}
