// SPDX-License-Identifier: Apache-2.0
//! Litho-guided self training.
//!
//! The network is first fitted to ILT labels. Each round then predicts a
//! mask for every training design, simulates it, and swaps the stored label
//! for the prediction whenever the prediction prints strictly better. The
//! network is retrained on the upgraded set before the next round.

use rayon::prelude::*;

use crate::ad::{AdamState, Data, Graph, StepSchedule, Tensor};
use crate::cfno::{cfno_forward, CfnoNet};
use crate::ilt::{binarize, ilt_optimize_sim, IltConfig, MaskGrid};
use crate::layout::LayoutRaster;
use crate::litho::Simulator;
use crate::metrics::{epe_violations, mse, pvb_area, EpeSpec};
use crate::rng::DetRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Ilt,
    /// Produced by the network during the given self-training round.
    ModelRound(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub design: LayoutRaster,
    pub mask: MaskGrid,
    /// Nominal-corner litho MSE of `mask` against `design`.
    pub mask_mse: f64,
    pub provenance: Provenance,
}

/// Scores candidate labels by lithography simulation.
pub trait LabelEvaluator: Sync {
    /// Nominal-corner MSE of the printed `mask` against `design`.
    fn mse(&self, mask: &MaskGrid, design: &LayoutRaster) -> Result<f64>;

    /// Quantity compared when deciding on a replacement; lower is better.
    fn gate(&self, _mask: &MaskGrid, _design: &LayoutRaster, mse: f64) -> Result<f64> {
        Ok(mse)
    }

    /// EPE violation count of the printed `mask`.
    fn epe(&self, mask: &MaskGrid, design: &LayoutRaster) -> Result<u64>;
}

/// Simulator-backed evaluator. With `pvb_weight > 0` the replacement gate
/// becomes `MSE + pvb_weight * PVB`.
#[derive(Debug)]
pub struct LithoEvaluator<'a> {
    pub sim: &'a Simulator,
    pub epe: EpeSpec,
    pub pvb_weight: f64,
}

impl<'a> LithoEvaluator<'a> {
    pub fn new(sim: &'a Simulator) -> Self {
        LithoEvaluator {
            sim,
            epe: EpeSpec::default(),
            pvb_weight: 0.0,
        }
    }
}

impl LabelEvaluator for LithoEvaluator<'_> {
    fn mse(&self, mask: &MaskGrid, design: &LayoutRaster) -> Result<f64> {
        mse(&self.sim.print(mask.values())?, design)
    }

    fn gate(&self, mask: &MaskGrid, _design: &LayoutRaster, mse: f64) -> Result<f64> {
        if self.pvb_weight == 0.0 {
            return Ok(mse);
        }
        let pvb = pvb_area(&self.sim.corners(mask.values())?)? as f64;
        Ok(mse + self.pvb_weight * pvb)
    }

    fn epe(&self, mask: &MaskGrid, design: &LayoutRaster) -> Result<u64> {
        Ok(epe_violations(&self.sim.print(mask.values())?, design, &self.epe)?.violations)
    }
}

/// Designs with their current labels. The version increases with every
/// round that replaces at least one label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    samples: Vec<Sample>,
    version: u64,
}

impl TrainingSet {
    pub fn new(samples: Vec<Sample>, version: u64) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.design.dims() != s.mask.dims() {
                return Err(Error::Evaluation {
                    index: i,
                    reason: format!(
                        "mask {:?} does not match design {:?}",
                        s.mask.dims(),
                        s.design.dims()
                    ),
                });
            }
        }
        Ok(TrainingSet { samples, version })
    }

    /// Builds a set from designs and ILT masks, scoring each label.
    pub fn from_ilt_labels(
        pairs: Vec<(LayoutRaster, MaskGrid)>,
        eval: &dyn LabelEvaluator,
    ) -> Result<Self> {
        let samples = pairs
            .into_par_iter()
            .enumerate()
            .map(|(i, (design, mask))| {
                let mask_mse = eval.mse(&mask, &design).map_err(|e| Error::Evaluation {
                    index: i,
                    reason: e.to_string(),
                })?;
                Ok(Sample {
                    design,
                    mask,
                    mask_mse,
                    provenance: Provenance::Ilt,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TrainingSet::new(samples, 0)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_mse(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.mask_mse).sum::<f64>() / self.samples.len() as f64
    }

    /// Fraction of labels that no longer come from ILT.
    pub fn replaced_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let n = self
            .samples
            .iter()
            .filter(|s| s.provenance != Provenance::Ilt)
            .count();
        n as f64 / self.samples.len() as f64
    }

    /// Re-simulates every label and fails on the first stored MSE that
    /// disagrees with the evaluator.
    pub fn verify(&self, eval: &dyn LabelEvaluator) -> Result<()> {
        self.samples.par_iter().enumerate().try_for_each(|(i, s)| {
            let m = eval.mse(&s.mask, &s.design)?;
            if m != s.mask_mse {
                return Err(Error::Evaluation {
                    index: i,
                    reason: format!("stored MSE {} but simulation gives {m}", s.mask_mse),
                });
            }
            Ok(())
        })
    }
}

/// Labels every design with a binarized ILT mask.
pub fn label_with_ilt(
    designs: Vec<LayoutRaster>,
    sim: &Simulator,
    cfg: &IltConfig,
) -> Result<TrainingSet> {
    let pairs = designs
        .into_par_iter()
        .enumerate()
        .map(|(i, d)| {
            let r = ilt_optimize_sim(&d, sim, cfg).map_err(|e| Error::Evaluation {
                index: i,
                reason: e.to_string(),
            })?;
            let m = binarize(&r.mask, cfg.binarize_threshold);
            Ok((d, m))
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::from_ilt_labels(pairs, &LithoEvaluator::new(sim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    /// Sample excluded from training and scored after every epoch.
    pub holdout: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            schedule: StepSchedule {
                base_lr: 0.004,
                every: 2,
                factor: 0.5,
            },
            seed: 0,
            holdout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample L1 loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Litho MSE of the binarized prediction for the held-out design after
    /// each epoch (empty without a holdout).
    pub holdout_mse: Vec<f64>,
}

/// Shuffles `indices` and cuts them into consecutive batches; the last
/// batch holds the remainder.
pub fn epoch_batches(indices: &[usize], batch_size: usize, rng: &mut DetRng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

fn sample_tensor(g: &[f64], h: usize, w: usize) -> Tensor {
    Tensor::real(&[1, 1, h, w], g.to_vec()).expect("sample dims")
}

/// Loss and parameter gradients of one sample.
fn sample_grad(net: &CfnoNet, s: &Sample) -> Result<(f64, Vec<Data>)> {
    let (h, w) = s.design.dims();
    let mut g = Graph::new();
    let x = g.input(sample_tensor(s.design.to_real().as_slice(), h, w))?;
    let y = net.forward(&mut g, x)?;
    let loss = g.l1_loss(y, &sample_tensor(s.mask.values().as_slice(), h, w))?;
    let l = g.value(loss)?.item()?;
    Ok((l, g.backward(loss)?.for_params(net.params())))
}

fn model_mask(net: &CfnoNet, design: &LayoutRaster, threshold: f64) -> Result<MaskGrid> {
    Ok(binarize(&cfno_forward(design, net)?, threshold))
}

/// Fits `net` to the labels with Adam on the L1 loss and the step learning
/// rate schedule. Optimizer state starts fresh; weights are taken as given.
pub fn train_epochs(
    net: &mut CfnoNet,
    ds: &TrainingSet,
    cfg: &TrainConfig,
    eval: &dyn LabelEvaluator,
) -> Result<TrainReport> {
    if ds.is_empty() {
        return Err(Error::param("dataset", "cannot train on an empty dataset"));
    }
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| Some(i) != cfg.holdout).collect();
    if train_idx.is_empty() {
        return Err(Error::param("holdout", "no samples left for training"));
    }
    if let Some(h) = cfg.holdout {
        if h >= ds.len() {
            return Err(Error::param(
                "holdout",
                format!("index {h} outside a dataset of {}", ds.len()),
            ));
        }
    }
    let mut rng = DetRng::new(cfg.seed);
    let mut adam = AdamState::new(cfg.schedule.base_lr);
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        holdout_mse: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr(epoch);
        let mut total = 0.0;
        for (b, batch) in epoch_batches(&train_idx, cfg.batch_size, &mut rng)
            .iter()
            .enumerate()
        {
            let results = batch
                .par_iter()
                .map(|&i| sample_grad(net, &ds.samples[i]))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Data> = (0..net.params().len())
                .map(|i| net.params().tensor(i).data().zeros_like())
                .collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {loss} at epoch {epoch}, batch {b}"
                    )));
                }
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    scale_add(acc, gi, scale);
                }
            }
            adam.step(net.params_mut(), &grads)?;
            if !net.params().all_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters became non-finite at epoch {epoch}, batch {b} (lr {})",
                    adam.lr
                )));
            }
        }
        report.epoch_loss.push(total / train_idx.len() as f64);
        if let Some(h) = cfg.holdout {
            let s = &ds.samples[h];
            report
                .holdout_mse
                .push(eval.mse(&model_mask(net, &s.design, 0.5)?, &s.design)?);
        }
    }
    Ok(report)
}

fn scale_add(acc: &mut Data, g: &Data, s: f64) {
    match (acc, g) {
        (Data::Real(a), Data::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y),
        (Data::Complex(a), Data::Complex(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y * s),
        _ => unreachable!("gradient kinds follow parameter kinds"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgstReport {
    pub round: u32,
    pub replaced_count: usize,
    pub replaced_fraction: f64,
    /// Fraction of samples replaced in this or any earlier round.
    pub accumulated_fraction: f64,
    pub dataset_mean_mse_before: f64,
    pub dataset_mean_mse_after: f64,
}

/// One scan-and-replace pass. Every sample's binarized model mask is
/// simulated; a label is replaced only when the prediction scores strictly
/// better. Any evaluation failure aborts the round and leaves `ds` as it was.
pub fn lgst_round(
    net: &CfnoNet,
    ds: &TrainingSet,
    eval: &dyn LabelEvaluator,
    round: u32,
    threshold: f64,
) -> Result<(TrainingSet, LgstReport)> {
    let candidates = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let wrap = |e: Error| Error::Evaluation {
                index: i,
                reason: e.to_string(),
            };
            let mask = model_mask(net, &s.design, threshold).map_err(wrap)?;
            let m = eval.mse(&mask, &s.design).map_err(wrap)?;
            let new_gate = eval.gate(&mask, &s.design, m).map_err(wrap)?;
            let old_gate = eval.gate(&s.mask, &s.design, s.mask_mse).map_err(wrap)?;
            Ok((new_gate < old_gate).then_some((mask, m)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut next = ds.clone();
    let mut replaced = 0;
    for (s, c) in next.samples.iter_mut().zip(candidates) {
        if let Some((mask, m)) = c {
            s.mask = mask;
            s.mask_mse = m;
            s.provenance = Provenance::ModelRound(round);
            replaced += 1;
        }
    }
    if replaced > 0 {
        next.version += 1;
    }
    let report = LgstReport {
        round,
        replaced_count: replaced,
        replaced_fraction: replaced as f64 / ds.len().max(1) as f64,
        accumulated_fraction: next.replaced_fraction(),
        dataset_mean_mse_before: ds.mean_mse(),
        dataset_mean_mse_after: next.mean_mse(),
    };
    Ok((next, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgstConfig {
    pub rounds: u32,
    pub train: TrainConfig,
    pub binarize_threshold: f64,
    /// Re-initialise the weights before every retraining instead of
    /// continuing from the previous round.
    pub cold_restart: bool,
}

impl Default for LgstConfig {
    fn default() -> Self {
        LgstConfig {
            rounds: 5,
            train: TrainConfig::default(),
            binarize_threshold: 0.5,
            cold_restart: false,
        }
    }
}

/// Per-stage outcome of [`lgst_run`]; stage 0 is the initial training.
#[derive(Debug, Clone, PartialEq)]
pub struct LgstRun {
    pub rounds: Vec<LgstReport>,
    pub training: Vec<TrainReport>,
    /// EPE violations of the held-out prediction after each stage.
    pub holdout_epe: Vec<u64>,
    /// Litho MSE of the held-out prediction after each stage.
    pub holdout_mse: Vec<f64>,
}

/// Train, then `rounds` times scan/replace and retrain. `on_stage` sees the
/// network and dataset after the initial training and after every round.
pub fn lgst_run<F>(
    net: &mut CfnoNet,
    ds: &mut TrainingSet,
    cfg: &LgstConfig,
    eval: &dyn LabelEvaluator,
    mut on_stage: F,
) -> Result<LgstRun>
where
    F: FnMut(u32, &CfnoNet, &TrainingSet) -> Result<()>,
{
    if cfg.rounds < 1 {
        return Err(Error::param("rounds", "at least one round is required"));
    }
    let initial = net.clone();
    let mut out = LgstRun {
        rounds: Vec::new(),
        training: Vec::new(),
        holdout_epe: Vec::new(),
        holdout_mse: Vec::new(),
    };
    let mut stage =
        |net: &mut CfnoNet, ds: &TrainingSet, t: u32, out: &mut LgstRun| -> Result<()> {
            let mut tc = cfg.train.clone();
            tc.seed = cfg.train.seed.wrapping_add(t as u64);
            out.training.push(train_epochs(net, ds, &tc, eval)?);
            if let Some(h) = cfg.train.holdout {
                let s = &ds.samples[h];
                let m = model_mask(net, &s.design, cfg.binarize_threshold)?;
                out.holdout_epe.push(eval.epe(&m, &s.design)?);
                out.holdout_mse.push(eval.mse(&m, &s.design)?);
            }
            on_stage(t, net, ds)
        };
    stage(net, ds, 0, &mut out)?;
    for t in 1..=cfg.rounds {
        let (next, report) = lgst_round(net, ds, eval, t, cfg.binarize_threshold)?;
        *ds = next;
        out.rounds.push(report);
        if cfg.cold_restart {
            *net = initial.clone();
        }
        stage(net, ds, t, &mut out)?;
    }
    Ok(out)
}
