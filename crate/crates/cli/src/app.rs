// SPDX-License-Identifier: Apache-2.0
//! The `cfno` command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use litho_cfno::cfno::{cfno_forward, CfnoNet};
use litho_cfno::ilt::{binarize, ilt_optimize_sim, MaskGrid};
use litho_cfno::layout::rasterize;
use litho_cfno::lgst::{lgst_run, train_epochs, LithoEvaluator, TrainingSet};
use litho_cfno::litho::Simulator;
use litho_cfno::metrics::{epe_violations, mse, pvb_area, pvb_map, ScoreWeights};
use litho_cfno::tiling::{merge, split, MaskTile};
use litho_cfno::Grid;
use rayon::prelude::*;

use crate::checkpoint::{decode_mask, load_net, save_net};
use crate::config::RunConfig;
use crate::dataset::{load_designs, load_training_set, save_designs, save_training_set};
use crate::error::{read_bytes, read_to_string, write_bytes, IoError, Result};
use crate::pgm::{decode_pgm, encode_binary, encode_unit};
use crate::rectlist::{load_rectlist, parse_rectlist};
use crate::report::{
    eval_csv, ilt_csv, lgst_csv, parse_eval_average, throughput_um2_per_s, train_csv, EvalRow,
};

#[derive(Debug, Parser)]
#[command(
    name = "cfno",
    version,
    about = "Desk-scale inverse lithography with CFNO mask generation"
)]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a single configuration key, e.g. `--set epochs=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write zeros for every runtime field so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic designs into a dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Number of designs; defaults to the `designs` key.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Label every design of a dataset with a binarized ILT mask.
    Ilt {
        #[arg(long)]
        data: PathBuf,
        /// Output dataset directory; defaults to updating `--data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a fresh CFNO on a labelled dataset.
    Train(TrainArgs),
    /// Litho-guided self training: train, then scan/replace/retrain.
    Lgst {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        rounds: Option<u32>,
    },
    /// Score masks for every design of a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Predict masks with this checkpoint.
        #[arg(long, conflicts_with = "ilt")]
        model: Option<PathBuf>,
        /// Run ILT per design instead of reading stored labels.
        #[arg(long)]
        ilt: bool,
        /// Earlier eval.csv whose average row the ratio row divides by.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a large clip tile by tile and stitch the keep-regions.
    TileOpt {
        /// Rectangle-list layout of the whole clip.
        #[arg(long)]
        layout: PathBuf,
        /// Use the CFNO per tile instead of ILT.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a mask and write it with its aerial, resist and PVB images as PGM.
    Render {
        /// PGM, single-tensor CFNOCKPT mask, or rectangle list.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

struct Ctx {
    cfg: RunConfig,
    base: PathBuf,
    deterministic: bool,
}

impl Ctx {
    fn simulator(&self) -> Result<Simulator> {
        self.cfg.simulator(&self.base)
    }

    fn seconds(&self, t: Instant) -> f64 {
        if self.deterministic {
            0.0
        } else {
            t.elapsed().as_secs_f64()
        }
    }

    fn write(&self, dir: &Path, name: &str, text: &str) -> Result<()> {
        write_bytes(&dir.join(name), text.as_bytes())
    }

    fn save_config(&self, dir: &Path) -> Result<()> {
        self.write(dir, "run_config.txt", &self.cfg.serialize())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| IoError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let (mut cfg, base) = match &cli.config {
        Some(p) => (
            RunConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (RunConfig::default(), PathBuf::new()),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    let ctx = Ctx {
        cfg,
        base,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::GenData { out, count } => gen_data(&ctx, &out, count),
        Command::Ilt { data, out } => ilt(&ctx, &data, out.as_deref().unwrap_or(&data)),
        Command::Train(a) => train(&ctx, &a.data, &a.out),
        Command::Lgst { common, rounds } => lgst(&ctx, &common.data, &common.out, rounds),
        Command::Eval {
            data,
            model,
            ilt,
            reference,
            out,
        } => eval(
            &ctx,
            &data,
            model.as_deref(),
            ilt,
            reference.as_deref(),
            &out,
        ),
        Command::TileOpt { layout, model, out } => tile_opt(&ctx, &layout, model.as_deref(), &out),
        Command::Render { mask, out } => render(&ctx, &mask, &out),
        Command::Config => {
            print!("{}", ctx.cfg.serialize());
            Ok(())
        }
    }
}

fn gen_data(ctx: &Ctx, out: &Path, count: Option<usize>) -> Result<()> {
    let n = count.unwrap_or(ctx.cfg.designs);
    let designs = ctx.cfg.desk().designs(n, ctx.cfg.data_seed)?;
    save_designs(out, &designs)?;
    ctx.save_config(out)?;
    println!("wrote {n} designs to {}", out.display());
    Ok(())
}

fn ilt(ctx: &Ctx, data: &Path, out: &Path) -> Result<()> {
    let sim = ctx.simulator()?;
    let loaded = load_designs(data, ctx.cfg.nm_per_px)?;
    let icfg = ctx.cfg.ilt_config();
    let results = loaded
        .designs
        .into_par_iter()
        .zip(&loaded.rows)
        .map(|(d, r)| {
            let res = ilt_optimize_sim(&d, &sim, &icfg)?;
            let mask = binarize(&res.mask, icfg.binarize_threshold);
            Ok(((d, mask), (r.design.clone(), res.loss_trace)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (pairs, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let ds = TrainingSet::from_ilt_labels(pairs, &LithoEvaluator::new(&sim))?;
    save_training_set(out, &ds)?;
    ctx.write(out, "ilt_loss.csv", &ilt_csv(&traces))?;
    ctx.save_config(out)?;
    println!("labelled {} designs, mean MSE {}", ds.len(), ds.mean_mse());
    Ok(())
}

fn evaluator<'a>(ctx: &Ctx, sim: &'a Simulator) -> LithoEvaluator<'a> {
    LithoEvaluator {
        sim,
        epe: ctx.cfg.epe_spec(),
        pvb_weight: ctx.cfg.gate_pvb_weight,
    }
}

fn train(ctx: &Ctx, data: &Path, out: &Path) -> Result<()> {
    let sim = ctx.simulator()?;
    let ds = load_training_set(data, ctx.cfg.nm_per_px)?;
    ds.verify(&evaluator(ctx, &sim))?;
    let mut net = CfnoNet::new(ctx.cfg.cfno_config(), ctx.cfg.model_seed)?;
    let report = train_epochs(
        &mut net,
        &ds,
        &ctx.cfg.train_config(),
        &evaluator(ctx, &sim),
    )?;
    save_net(&out.join("model.ckpt"), &net)?;
    ctx.write(out, "train.csv", &train_csv(std::slice::from_ref(&report)))?;
    ctx.save_config(out)?;
    println!(
        "trained {} parameters, final loss {}",
        net.param_count(),
        report.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn lgst(ctx: &Ctx, data: &Path, out: &Path, rounds: Option<u32>) -> Result<()> {
    let sim = ctx.simulator()?;
    let mut ds = load_training_set(data, ctx.cfg.nm_per_px)?;
    ds.verify(&evaluator(ctx, &sim))?;
    let mut cfg = ctx.cfg.lgst_config();
    if let Some(r) = rounds {
        cfg.rounds = r;
    }
    let mut net = CfnoNet::new(ctx.cfg.cfno_config(), ctx.cfg.model_seed)?;
    let mut failure = None;
    let result = lgst_run(
        &mut net,
        &mut ds,
        &cfg,
        &evaluator(ctx, &sim),
        |t, net, _| {
            save_net(&out.join(format!("checkpoints/stage{t}.ckpt")), net).map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                litho_cfno::Error::InvalidParameter {
                    name: "checkpoint",
                    reason: msg,
                }
            })
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let run = result?;
    save_training_set(&out.join("dataset"), &ds)?;
    ctx.write(out, "lgst.csv", &lgst_csv(&run.rounds))?;
    ctx.write(out, "train.csv", &train_csv(&run.training))?;
    if !run.holdout_epe.is_empty() {
        let mut s = "stage,epe,mse\n".to_string();
        for (t, (e, m)) in run.holdout_epe.iter().zip(&run.holdout_mse).enumerate() {
            s += &format!("{t},{e},{m}\n");
        }
        ctx.write(out, "holdout.csv", &s)?;
    }
    ctx.save_config(out)?;
    for r in &run.rounds {
        println!(
            "round {}: replaced {} ({:.1}%), mean MSE {} -> {}",
            r.round,
            r.replaced_count,
            100.0 * r.replaced_fraction,
            r.dataset_mean_mse_before,
            r.dataset_mean_mse_after
        );
    }
    Ok(())
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
}

fn eval(
    ctx: &Ctx,
    data: &Path,
    model: Option<&Path>,
    run_ilt: bool,
    reference: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let sim = ctx.simulator()?;
    let loaded = load_designs(data, ctx.cfg.nm_per_px)?;
    let net = model.map(load_net).transpose()?;
    let icfg = ctx.cfg.ilt_config();
    let threshold = ctx.cfg.binarize_threshold;

    let mut masks = Vec::with_capacity(loaded.designs.len());
    for (d, r) in loaded.designs.iter().zip(&loaded.rows) {
        let t = Instant::now();
        let m = if let Some(net) = &net {
            binarize(&cfno_forward(d, net)?, threshold)
        } else if run_ilt {
            binarize(&ilt_optimize_sim(d, &sim, &icfg)?.mask, threshold)
        } else {
            let label = r.label.as_ref().ok_or_else(|| {
                IoError::Format(format!(
                    "design `{}` has no label; pass --model or --ilt",
                    r.design
                ))
            })?;
            let bits = crate::pgm::decode_binary(&read_bytes(&data.join(&label.mask))?)?;
            MaskGrid::new(bits.map(|&b| f64::from(b)), ctx.cfg.nm_per_px)?
        };
        let runtime = if net.is_some() || run_ilt {
            ctx.seconds(t)
        } else {
            0.0
        };
        masks.push((m, runtime));
    }

    let epe_spec = ctx.cfg.epe_spec();
    let rows = loaded
        .designs
        .par_iter()
        .zip(&loaded.rows)
        .zip(&masks)
        .map(|((d, r), (m, runtime_s))| {
            let corners = sim.corners(m.values())?;
            Ok(EvalRow {
                design: stem(&r.design),
                mse: mse(&corners[0], d)?,
                epe: epe_violations(&corners[0], d, &epe_spec)?.violations as f64,
                pvb: pvb_area(&corners)? as f64,
                runtime_s: *runtime_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = reference
        .map(|p| read_to_string(p).and_then(|t| parse_eval_average(&t)))
        .transpose()?;
    ctx.write(
        out,
        "eval.csv",
        &eval_csv(&rows, reference.as_ref(), &ScoreWeights::default())?,
    )?;

    let area_um2: f64 = loaded
        .designs
        .iter()
        .map(|d| {
            let (h, w) = d.dims();
            (h * w) as f64 * (d.nm_per_px() / 1000.0).powi(2)
        })
        .sum();
    let runtime: f64 = rows.iter().map(|r| r.runtime_s).sum();
    let tp = throughput_um2_per_s(area_um2, runtime);
    let mut summary = format!(
        "metric,value\ndesigns,{}\narea_um2,{area_um2}\nruntime_s,{runtime}\n",
        rows.len()
    );
    summary += &format!(
        "throughput_um2_per_s,{}\n",
        tp.map_or_else(|| "nan".to_string(), |v| v.to_string())
    );
    ctx.write(out, "summary.csv", &summary)?;
    match tp {
        Some(v) => println!("evaluated {} designs, throughput {v:.3} um^2/s", rows.len()),
        None => println!("evaluated {} designs", rows.len()),
    }
    Ok(())
}

fn tile_opt(ctx: &Ctx, layout: &Path, model: Option<&Path>, out: &Path) -> Result<()> {
    let sim = ctx.simulator()?;
    let spec = ctx.cfg.tile_spec();
    let clip = rasterize(&load_rectlist(layout)?, ctx.cfg.nm_per_px)?;
    let net = model.map(load_net).transpose()?;
    let icfg = ctx.cfg.ilt_config();
    let t = Instant::now();
    let tiles = split(&clip, &spec)?
        .into_par_iter()
        .map(|tile| {
            let mask = match &net {
                Some(net) => cfno_forward(&tile.raster, net)?,
                None => ilt_optimize_sim(&tile.raster, &sim, &icfg)?.mask,
            };
            Ok(MaskTile {
                mask: binarize(&mask, ctx.cfg.binarize_threshold),
                pos: tile.pos,
                role: tile.role,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge(&tiles, &spec)?;
    let runtime = ctx.seconds(t);

    let mut listing = "row,col,role\n".to_string();
    for tile in &tiles {
        listing += &format!("{},{},{:?}\n", tile.pos.row, tile.pos.col, tile.role);
    }
    ctx.write(out, "tiles.csv", &listing)?;
    let bits = merged.values().map(|&v| u8::from(v >= 0.5));
    write_bytes(&out.join("mask.pgm"), &encode_binary(&bits))?;
    let corners = sim.corners(merged.values())?;
    let row = EvalRow {
        design: stem(&layout.to_string_lossy()),
        mse: mse(&corners[0], &clip)?,
        epe: epe_violations(&corners[0], &clip, &ctx.cfg.epe_spec())?.violations as f64,
        pvb: pvb_area(&corners)? as f64,
        runtime_s: runtime,
    };
    ctx.write(
        out,
        "eval.csv",
        &eval_csv(std::slice::from_ref(&row), None, &ScoreWeights::default())?,
    )?;
    println!("stitched {} tiles, MSE {}", tiles.len(), row.mse);
    Ok(())
}

/// Reads a mask from PGM (scaled to `[0, 1]`), a CFNOCKPT mask tensor or a
/// rectangle list.
fn read_mask(path: &Path, nm_per_px: f64) -> Result<MaskGrid> {
    let bytes = read_bytes(path)?;
    let values = if bytes.starts_with(crate::checkpoint::MAGIC) {
        decode_mask(&bytes)?
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)?.map(|&v| f64::from(v) / 255.0)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| {
            IoError::Format(format!("{}: unrecognised mask format", path.display()))
        })?;
        rasterize(&parse_rectlist(&text)?, nm_per_px)?.to_real()
    };
    Ok(MaskGrid::new(values, nm_per_px)?)
}

fn render(ctx: &Ctx, mask_path: &Path, out: &Path) -> Result<()> {
    let sim = ctx.simulator()?;
    let mask = read_mask(mask_path, ctx.cfg.nm_per_px)?;
    let aerial = sim.aerial(mask.values(), &sim.nominal)?;
    let peak = aerial.as_slice().iter().cloned().fold(0.0, f64::max);
    let scaled: Grid<f64> = aerial.map(|&v| if peak > 0.0 { v / peak } else { 0.0 });
    let corners = sim.corners(mask.values())?;
    write_bytes(&out.join("mask.pgm"), &encode_unit(mask.values()))?;
    write_bytes(&out.join("aerial.pgm"), &encode_unit(&scaled))?;
    write_bytes(&out.join("resist.pgm"), &encode_binary(&corners[0].pixels))?;
    write_bytes(&out.join("pvb.pgm"), &encode_binary(&pvb_map(&corners)?))?;
    println!("rendered {}", out.display());
    Ok(())
}
