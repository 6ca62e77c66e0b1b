//! Experiment commands. Each returns its table so callers other than the
//! binary can inspect results without re-reading files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::config::{FeatureMode, RunConfig};
use super::output::{mean_std, num, write_json, write_table, write_text, Table};
use crate::channel::{lmmse_detect, normalize_power, transmit, Channel, ChannelConfig, ChannelKind};
use crate::codec::SemanticModel;
use crate::error::{Error, Result};
use crate::mask::PatchGrid;
use crate::metrics::{nmse, region_metric, Metric, MetricReport};
use crate::mss::{bandwidth_savings_with, partition, Accounting, MultiUserSemantics};
use crate::numeric::snapshot::write_tensor;
use crate::numeric::{ComplexTensor, RngStream, Tensor};
use crate::pipeline::{paired_plans, paired_trial, run_link, score, LinkOutcome, Masking};
use crate::scene::{generate_correlated_batch, load_annotated, save_annotated, CorrelatedConfig, Scene, ShareProfile};
use crate::training::{train_phase, training_mask, Dataset, LossRecord, Phase, TrainConfig};

/// Stream offset separating held-out scenes from training scenes.
const HELD_OUT_STREAM: u64 = 1 << 40;

fn grid(cfg: &RunConfig) -> Result<PatchGrid> {
    cfg.scene.grid()
}

fn external_dataset(cfg: &RunConfig, dir: &Path) -> Result<Dataset> {
    let scenes = load_annotated(dir)?;
    if scenes.is_empty() {
        return Err(Error::Config(format!("no annotated scenes in {}", dir.display())));
    }
    let g = grid(cfg)?;
    for s in &scenes {
        if s.image.shape() != [g.channels(), g.height(), g.width()] {
            return Err(Error::Config(format!(
                "scene `{}` is {:?}; the configured grid needs {}x{}x{} with patch {}",
                s.id,
                s.image.shape(),
                g.channels(),
                g.height(),
                g.width(),
                g.patch_size()
            )));
        }
    }
    Dataset::from_scenes(scenes, g)
}

pub fn training_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => external_dataset(cfg, dir),
        None => Dataset::synthetic(cfg.train.scenes, &cfg.scene, cfg.seed, 0),
    }
}

/// `n` scenes never seen in training (or the external directory).
pub fn held_out_data(cfg: &RunConfig, n: usize) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => external_dataset(cfg, dir),
        None => Dataset::synthetic(n, &cfg.scene, cfg.seed, HELD_OUT_STREAM),
    }
}

fn checkpoint_file(cfg: &RunConfig, phase: Phase) -> PathBuf {
    cfg.out.join(format!("{}.ckpt", phase.as_str()))
}

fn load_checked(cfg: &RunConfig, path: &Path) -> Result<SemanticModel> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let model = SemanticModel::load(path)?;
    if model.config != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different codec configuration",
            path.display()
        )));
    }
    Ok(model)
}

/// Model for evaluation commands: `eval.checkpoint`, else the whole-network
/// checkpoint in the output directory.
pub fn eval_model(cfg: &RunConfig) -> Result<SemanticModel> {
    let path = cfg
        .eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| checkpoint_file(cfg, Phase::Whole));
    load_checked(cfg, &path)
}

pub struct TrainResult {
    pub model: SemanticModel,
    pub records: Vec<LossRecord>,
}

/// Runs the requested phases in order `codec → channel → whole`.
pub fn train(cfg: &RunConfig) -> Result<TrainResult> {
    train_with(cfg, &cfg.train.cfg, &cfg.out, true)
}

fn train_with(cfg: &RunConfig, tcfg: &TrainConfig, out: &Path, write: bool) -> Result<TrainResult> {
    let phases = cfg.train.phase.phases();
    let mut model = match (&cfg.train.init, phases[0]) {
        (Some(path), _) => load_checked(cfg, path)?,
        (None, Phase::Codec) => SemanticModel::init(cfg.model, cfg.seed)?,
        (None, first) => {
            let prev = match first {
                Phase::Channel => Phase::Codec,
                _ => Phase::Channel,
            };
            let path = out.join(format!("{}.ckpt", prev.as_str()));
            if !path.exists() {
                return Err(Error::Config(format!(
                    "phase `{first}` needs {} from phase `{prev}`; run it first or set train.init",
                    path.display()
                )));
            }
            load_checked(cfg, &path)?
        }
    };
    let data = training_data(cfg)?;
    if write {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let mut records = Vec::new();
    for phase in phases {
        let ckpt = out.join(format!("{}.ckpt", phase.as_str()));
        records.extend(train_phase(
            &mut model,
            phase,
            &data,
            tcfg,
            write.then_some(ckpt.as_path()),
        )?);
    }
    if write {
        let mut table = Table::new(&["phase", "epoch", "batch", "loss"]);
        for r in &records {
            table.push(vec![
                r.phase.to_string(),
                r.epoch.to_string(),
                r.batch.to_string(),
                num(r.loss),
            ]);
        }
        write_table(&out.join("loss.csv"), &table, "train", cfg)?;
    }
    Ok(TrainResult { model, records })
}

fn channel_for(cfg: &RunConfig, kind: ChannelKind, snr_db: f64) -> Result<Channel> {
    Channel::new(ChannelConfig {
        kind,
        snr_db,
        ..cfg.channel
    })
}

fn trial_stream(seed: u64, cell: u64, trial: usize) -> RngStream {
    RngStream::new(seed, (cell << 32) | trial as u64)
}

fn dump_outcome(dir: &Path, trial: usize, scene: &Scene, out: &LinkOutcome, loc: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (suffix, t) in [("orig", &scene.image), ("recon", &out.image)] {
        let path = dir.join(format!("trial{trial:04}.{suffix}.slnk"));
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_tensor(&mut f, t)?;
        f.flush().map_err(|e| Error::io(&path, e))?;
    }
    let meta = json!({ "loc": loc, "keep": out.plan.keep, "scene": scene.id });
    write_json(&dir.join(format!("trial{trial:04}.json")), &meta)
}

/// Mean ± std of global and region metrics per `(snr, channel, masking)`.
pub fn eval(cfg: &RunConfig) -> Result<Table> {
    let model = eval_model(cfg)?;
    let data = held_out_data(cfg, cfg.eval.trials)?;
    let g = data.grid;
    let n = cfg.eval.trials.min(data.len());
    let mut table = Table::new(&[
        "snr_db",
        "channel",
        "masking",
        "trials",
        "keep_mean",
        "psnr_mean",
        "psnr_std",
        "ssim_mean",
        "ssim_std",
        "region_psnr_mean",
        "region_psnr_std",
        "region_ssim_mean",
        "region_ssim_std",
        "nmse_mean",
    ]);
    for (si, &snr) in cfg.eval.snr_db.iter().enumerate() {
        for (ki, &kind) in cfg.eval.channels.iter().enumerate() {
            let channel = channel_for(cfg, kind, snr)?;
            let cell = (si * 64 + ki) as u64;
            let outcomes = (0..n)
                .into_par_iter()
                .map(|i| {
                    let rng = trial_stream(cfg.seed, cell, i);
                    let (a, r) = paired_trial(&model, &data.scenes[i], &data.locs[i], &g, cfg.p_r, &channel, &rng)?;
                    let sa = score(&data.scenes[i], &a, &data.locs[i], &g)?;
                    let sr = score(&data.scenes[i], &r, &data.locs[i], &g)?;
                    Ok(((a, sa), (r, sr)))
                })
                .collect::<Result<Vec<_>>>()?;
            for &masking in &cfg.eval.maskings {
                let pick = |o: &((LinkOutcome, MetricReport), (LinkOutcome, MetricReport))| match masking {
                    Masking::Adaptive => o.0.clone(),
                    Masking::Random => o.1.clone(),
                };
                let cells: Vec<(LinkOutcome, MetricReport)> = outcomes.iter().map(pick).collect();
                if cfg.eval.dump {
                    let dir = cfg.out.join("dump").join(format!("snr{snr}_{kind}_{masking}"));
                    for (i, (o, _)) in cells.iter().enumerate() {
                        dump_outcome(&dir, i, &data.scenes[i], o, &data.locs[i].patch_indices)?;
                    }
                }
                let reps: Vec<&MetricReport> = cells.iter().map(|(_, r)| r).collect();
                let keep = mean_std(cells.iter().map(|(o, _)| o.plan.keep_count() as f64)).0;
                let (pm, ps) = mean_std(reps.iter().map(|r| r.psnr_db));
                let (sm, ss) = mean_std(reps.iter().map(|r| r.ssim));
                let (rpm, rps) = mean_std(reps.iter().map(|r| r.region_psnr_db));
                let (rsm, rss) = mean_std(reps.iter().map(|r| r.region_ssim));
                let nm = mean_std(reps.iter().map(|r| r.nmse)).0;
                table.push(vec![
                    num(snr),
                    kind.to_string(),
                    masking.to_string(),
                    n.to_string(),
                    num(keep),
                    num(pm),
                    num(ps),
                    num(sm),
                    num(ss),
                    num(rpm),
                    num(rps),
                    num(rsm),
                    num(rss),
                    num(nm),
                ]);
            }
        }
    }
    write_table(&cfg.out.join("eval.csv"), &table, "eval", cfg)?;
    Ok(table)
}

/// Region metrics of adaptive masking across `sweep.p_r`, per channel kind.
pub fn sweep_pr(cfg: &RunConfig) -> Result<Table> {
    let shared = if cfg.sweep.retrain {
        None
    } else {
        Some(eval_model(cfg)?)
    };
    let data = held_out_data(cfg, cfg.sweep.trials)?;
    let g = data.grid;
    let n = cfg.sweep.trials.min(data.len());
    let mut p_rs = cfg.sweep.p_r.clone();
    p_rs.sort_by(f64::total_cmp);
    p_rs.dedup();
    let mut table = Table::new(&[
        "p_r",
        "channel",
        "trials",
        "keep_mean",
        "region_psnr_mean",
        "region_psnr_std",
        "region_ssim_mean",
        "region_ssim_std",
    ]);
    let mut best: serde_json::Map<String, serde_json::Value> = serde_json::Map::new();
    for (pi, &p_r) in p_rs.iter().enumerate() {
        let model = match &shared {
            Some(m) => m.clone(),
            None => {
                let tcfg = TrainConfig {
                    p_r,
                    ..cfg.train.cfg.clone()
                };
                let mut c = cfg.clone();
                c.train.phase = super::config::PhaseSel::All;
                c.train.init = None;
                train_with(&c, &tcfg, &cfg.out.join(format!("p_r_{p_r}")), true)?.model
            }
        };
        for (ki, &kind) in cfg.sweep.channels.iter().enumerate() {
            let channel = channel_for(cfg, kind, cfg.channel.snr_db)?;
            let cell = (pi * 64 + ki) as u64;
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = trial_stream(cfg.seed, 0x5000 + cell, i);
                    let plan = training_mask(&g, &data.locs[i], p_r, &mut rng)?;
                    let patches = g.patchify(&data.scenes[i].image)?;
                    let out = run_link(&model, &g, &patches, plan, &channel, &mut rng)?;
                    let loc = &data.locs[i];
                    if loc.is_empty() {
                        return Ok((out.plan.keep_count() as f64, f64::NAN, f64::NAN));
                    }
                    let img = &data.scenes[i].image;
                    Ok((
                        out.plan.keep_count() as f64,
                        region_metric(img, &out.image, loc, &g, Metric::Psnr, 1.0)?,
                        region_metric(img, &out.image, loc, &g, Metric::Ssim, 1.0)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let keep = mean_std(rows.iter().map(|r| r.0)).0;
            let (pm, ps) = mean_std(rows.iter().map(|r| r.1));
            let (sm, ss) = mean_std(rows.iter().map(|r| r.2));
            let better = best
                .get(kind.as_str())
                .and_then(|v| v["region_psnr_mean"].as_f64())
                .is_none_or(|b| pm > b);
            if better {
                best.insert(kind.to_string(), json!({ "p_r": p_r, "region_psnr_mean": pm }));
            }
            table.push(vec![
                num(p_r),
                kind.to_string(),
                n.to_string(),
                num(keep),
                num(pm),
                num(ps),
                num(sm),
                num(ss),
            ]);
        }
    }
    write_table(&cfg.out.join("sweep_pr.csv"), &table, "sweep-pr", cfg)?;
    write_json(&cfg.out.join("sweep_pr.summary.json"), &json!({ "best": best }))?;
    Ok(table)
}

/// Centered, scaled patch rows used as stand-in semantics.
pub fn patch_features(scene: &Scene, grid: &PatchGrid) -> Result<Tensor> {
    grid.patchify(&scene.image)?.map(|v| (v - 0.5) * 4.0)
}

fn encoder_features(model: &SemanticModel, scene: &Scene, grid: &PatchGrid) -> Result<Tensor> {
    let all: Vec<usize> = (0..grid.num_patches()).collect();
    let z = model.esc.encode(&model.store, &grid.patchify(&scene.image)?, &all)?;
    Ok(z.values().clone())
}

/// Per `(K, ε)`: mean savings and shared length over paired Monte Carlo
/// batches (the same batches are reused for every ε).
pub fn sweep_users(cfg: &RunConfig) -> Result<Table> {
    let model = match cfg.mss.features {
        FeatureMode::Patch => None,
        FeatureMode::Encoder => Some(eval_model(cfg)?),
    };
    let g = grid(cfg)?;
    let corr = CorrelatedConfig {
        scene: cfg.scene.clone(),
        share: ShareProfile::Decay {
            base: cfg.mss.share_base,
            rate: cfg.mss.share_decay,
        },
        jitter: cfg.mss.jitter,
    };
    let acc = Accounting {
        count_side_info: cfg.mss.count_side_info,
        d_c: cfg.model.d_c,
    };
    let eps = &cfg.mss.epsilon;
    let mut table = Table::new(&["k", "epsilon", "trials", "savings_mean", "savings_std", "l_pub_mean"]);
    let mut log = String::new();
    for &k in &cfg.mss.k {
        let per_trial = (0..cfg.mss.trials)
            .into_par_iter()
            .map(|t| {
                let rng = trial_stream(cfg.seed, 0x9000 + k as u64, t);
                let scenes = generate_correlated_batch(&rng, k, &corr)?;
                let feats = scenes
                    .iter()
                    .map(|s| match &model {
                        Some(m) => encoder_features(m, s, &g),
                        None => patch_features(s, &g),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let z = MultiUserSemantics::new(feats)?;
                eps.iter()
                    .map(|&e| {
                        let p = partition(&z, e, cfg.mss.pairs)?;
                        Ok((p.l_pub(), bandwidth_savings_with(&p, k, acc)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (ei, &e) in eps.iter().enumerate() {
            let (sm, ss) = mean_std(per_trial.iter().map(|r| r[ei].1));
            let lp = mean_std(per_trial.iter().map(|r| r[ei].0 as f64)).0;
            table.push(vec![
                k.to_string(),
                num(e),
                cfg.mss.trials.to_string(),
                num(sm),
                num(ss),
                num(lp),
            ]);
            if cfg.mss.log {
                for (t, r) in per_trial.iter().enumerate() {
                    let line = json!({ "trial": t, "K": k, "eps": e, "L_pub": r[ei].0, "savings": r[ei].1 });
                    log.push_str(&line.to_string());
                    log.push('\n');
                }
            }
        }
    }
    write_table(&cfg.out.join("sweep_users.csv"), &table, "sweep-users", cfg)?;
    if cfg.mss.log {
        write_text(&cfg.out.join("partitions.jsonl"), &log)?;
    }
    Ok(table)
}

/// Detection NMSE of random unit-power symbols per kind, SNR and CSI error.
pub fn channel_bench(cfg: &RunConfig) -> Result<Table> {
    let mut table = Table::new(&["kind", "snr_db", "csi_var", "nmse_mean", "nmse_std"]);
    let b = &cfg.bench;
    for (ki, &kind) in b.kinds.iter().enumerate() {
        for (si, &snr_db) in b.snr_db.iter().enumerate() {
            for (ci, &csi) in b.csi_var.iter().enumerate() {
                let channel = Channel::new(ChannelConfig {
                    kind,
                    snr_db,
                    csi_error_var: csi,
                    ..cfg.channel
                })?;
                let cell = ((ki * 64 + si) * 64 + ci) as u64;
                let vals = (0..b.trials)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = trial_stream(cfg.seed, 0xb000 + cell, t);
                        let data = (0..b.symbols).map(|_| rng.complex_normal(1.0)).collect();
                        let x = ComplexTensor::new([b.symbols, 1], data)?;
                        let (xn, _) = normalize_power(&x, channel.cfg.p_s)?;
                        let frame = channel.draw_frame(&mut rng);
                        let rx = transmit(&xn, &frame, &mut rng)?;
                        nmse(&xn, &lmmse_detect(&rx, &frame)?)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (m, s) = mean_std(vals);
                table.push(vec![kind.to_string(), num(snr_db), num(csi), num(m), num(s)]);
            }
        }
    }
    write_table(&cfg.out.join("channel_bench.csv"), &table, "channel-bench", cfg)?;
    Ok(table)
}

/// Writes `gen.count` synthetic scenes with sidecars to `<out>/scenes`.
pub fn gen_scenes(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out.join("scenes");
    let data = Dataset::synthetic(cfg.gen_count, &cfg.scene, cfg.seed, 0)?;
    data.scenes.iter().map(|s| save_annotated(s, &dir)).collect()
}

/// Adaptive and matched random plans for one scene, exposed for scripting.
pub fn plans_for(cfg: &RunConfig, data: &Dataset, i: usize) -> Result<(crate::mask::MaskPlan, crate::mask::MaskPlan)> {
    let mut rng = trial_stream(cfg.seed, 0x7000, i);
    paired_plans(&data.grid, &data.locs[i], cfg.p_r, &mut rng)
}
