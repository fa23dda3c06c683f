//! The five CLI verbs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ripnerf_core::data::{load_blender, make_multiscale, toy_scene, write_blender, ScaledDataset, Split, ToyScene, ViewRecord};
use ripnerf_core::geometry::PlatonicSolid;
use ripnerf_core::metrics;
use ripnerf_core::raster::Image;
use ripnerf_core::render::render_image;
use ripnerf_core::train::{evaluate_views, Checkpoint, TrainSet, Trainer, ViewMetric};
use serde::{Deserialize, Serialize};

use crate::ambiguity;
use crate::config::RunConfig;
use crate::error::{io_err, CliError};
use crate::report::MetricReport;

pub const LOSS_HEADER: &str = "iteration,loss,mse,psnr,rays,samples,lr";

/// Train and eval splits at every configured scale.
pub fn load_data(cfg: &RunConfig) -> Result<(ScaledDataset, ScaledDataset), CliError> {
    let (train, eval) = match &cfg.data.dir {
        Some(dir) => (
            load_blender(dir, Split::Train, cfg.field.scene_radius)?,
            load_blender(dir, Split::Eval, cfg.field.scene_radius)?,
        ),
        None => {
            if cfg.data.toy.scene_radius != cfg.field.scene_radius {
                return Err(CliError::Usage("data.toy.scene_radius must equal field.scene_radius".into()));
            }
            let (train, eval, _) = toy_scene(&cfg.data.toy)?;
            (train, eval)
        }
    };
    Ok((make_multiscale(&train, &cfg.data.scales)?, make_multiscale(&eval, &cfg.data.scales)?))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn take_views(dataset: &ScaledDataset, limit: usize) -> ScaledDataset {
    let views = if limit == 0 { dataset.views.clone() } else { dataset.views.iter().take(limit).cloned().collect() };
    ScaledDataset { views, ..dataset.clone() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTiming {
    pub seconds: f64,
    pub iterations: u64,
}

/// Train from scratch or from `resume`, writing `config.json`, `loss.csv`,
/// periodic `ckpt_<iteration>.ripf`, `final.ripf` and, when validation is
/// scheduled, `eval.csv`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    create_dir(out)?;
    let config_json = cfg.to_json();
    write_text(&out.join("config.json"), &config_json)?;
    let (train, eval) = load_data(cfg)?;
    let set = TrainSet::new(&train, cfg.render.background);
    let eval_subset = take_views(&eval, cfg.schedule.eval_views);

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path, Some(&cfg.field))?;
            Trainer::from_checkpoint(&ck, cfg.train.clone(), cfg.render.clone())?
        }
        None => Trainer::new(cfg.field.clone(), cfg.train.clone(), cfg.render.clone())?,
    };

    let loss_path = out.join("loss.csv");
    let mut loss_csv = BufWriter::new(File::create(&loss_path).map_err(io_err(&loss_path))?);
    writeln!(loss_csv, "{LOSS_HEADER}").map_err(io_err(&loss_path))?;
    let mut eval_csv = None;
    if cfg.schedule.eval_every > 0 {
        let p = out.join("eval.csv");
        let mut f = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
        writeln!(f, "iteration,psnr").map_err(io_err(&p))?;
        eval_csv = Some((f, p));
    }

    let started = Instant::now();
    let first = trainer.iteration();
    while trainer.iteration() < cfg.train.iterations {
        let s = trainer.step(&set)?;
        writeln!(loss_csv, "{},{},{},{},{},{},{}", s.iteration, s.loss, s.mse, s.psnr(), s.rays, s.samples, s.lr)
            .map_err(io_err(&loss_path))?;
        let done = trainer.iteration();
        if cfg.schedule.checkpoint_every > 0 && done % cfg.schedule.checkpoint_every == 0 {
            trainer.checkpoint(config_json.clone()).save(&out.join(format!("ckpt_{done:06}.ripf")))?;
        }
        if let Some((f, p)) = eval_csv.as_mut() {
            if done % cfg.schedule.eval_every == 0 {
                let m = evaluate_views(trainer.field(), trainer.grid(), &eval_subset, &cfg.render)?;
                let psnr = m.iter().map(|v| v.psnr).sum::<f64>() / m.len().max(1) as f64;
                writeln!(f, "{done},{psnr}").map_err(io_err(p))?;
                eprintln!("iteration {done}: eval psnr {psnr:.2} dB");
            }
        }
        if done % 100 == 0 {
            eprintln!("iteration {done}: loss {:.6} psnr {:.2} dB", s.loss, s.psnr());
        }
    }
    loss_csv.flush().map_err(io_err(&loss_path))?;
    if let Some((mut f, p)) = eval_csv {
        f.flush().map_err(io_err(&p))?;
    }
    trainer.checkpoint(config_json).save(&out.join("final.ripf"))?;
    let timing = TrainTiming { seconds: started.elapsed().as_secs_f64(), iterations: trainer.iteration() - first };
    write_text(&out.join("train_time.json"), &serde_json::to_string_pretty(&timing).expect("serializable"))
}

/// The run config embedded in a checkpoint.
pub fn embedded_config(ck: &Checkpoint) -> Result<RunConfig, CliError> {
    RunConfig::from_json(&ck.config_json).map_err(|e| CliError::Data(format!("checkpoint config: {e}")))
}

/// Resolve the config for a checkpoint consumer: the explicit config if
/// given, else the one embedded in the checkpoint, then `overrides`.
pub fn checkpoint_config(checkpoint: &Path, base: Option<RunConfig>, overrides: &[String]) -> Result<(RunConfig, Checkpoint), CliError> {
    let ck = Checkpoint::load(checkpoint, None)?;
    let base = match base {
        Some(b) => b,
        None => embedded_config(&ck)?,
    };
    let cfg = base.with_overrides(overrides)?;
    if cfg.field != ck.field_config {
        return Err(CliError::Data("checkpoint was trained with a different field config".into()));
    }
    Ok((cfg, ck))
}

fn opaque(rgb: &Image) -> Image {
    let mut out = Image::new(rgb.width, rgb.height, 4);
    for (dst, src) in out.data.chunks_exact_mut(4).zip(rgb.data.chunks_exact(3)) {
        dst[..3].copy_from_slice(src);
        dst[3] = 1.0;
    }
    out
}

/// Render every camera of `split` at the configured scales and write them
/// as a Blender-convention dataset of opaque composited images.
pub fn cmd_render(cfg: &RunConfig, ck: &Checkpoint, split: Split, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let trainer = Trainer::from_checkpoint(ck, cfg.train.clone(), cfg.render.clone())?;
    let (train, eval) = load_data(cfg)?;
    let poses = if split == Split::Train { train } else { eval };
    let views = poses
        .views
        .iter()
        .map(|v| ViewRecord {
            name: v.name.clone(),
            camera: v.camera,
            image: opaque(&render_image(trainer.field(), trainer.grid(), &v.camera, &cfg.render).take_channels(3)),
            scale: v.scale,
        })
        .collect();
    write_blender(&ScaledDataset { views, ..poses }, out)?;
    write_text(&out.join("config.json"), &cfg.to_json())
}

/// Score `pred` against `target` view by view.
pub fn compare_datasets(pred: &ScaledDataset, target: &ScaledDataset, background: [f64; 3]) -> Result<Vec<ViewMetric>, CliError> {
    if pred.views.len() != target.views.len() {
        return Err(CliError::Data(format!("{} predicted views for {} targets", pred.views.len(), target.views.len())));
    }
    pred.views
        .iter()
        .zip(&target.views)
        .map(|(p, t)| {
            if p.scale != t.scale {
                return Err(CliError::Data(format!("view {}: scale {} does not match target scale {}", p.name, p.scale, t.scale)));
            }
            let (a, b) = (p.composited(background), t.composited(background));
            let psnr = metrics::psnr(&a, &b).map_err(|e| CliError::Data(format!("view {}: {e}", p.name)))?;
            let ssim = match metrics::ssim(&a, &b) {
                Ok(s) => Some(s),
                Err(metrics::MetricError::TooSmall(..)) => None,
                Err(e) => return Err(CliError::Data(format!("view {}: {e}", p.name))),
            };
            Ok(ViewMetric { name: t.name.clone(), scale: t.scale, psnr, ssim })
        })
        .collect()
}

pub enum EvalSource<'a> {
    Checkpoint(&'a Checkpoint),
    /// A Blender-convention directory of predictions; full-resolution-only
    /// predictions are downsampled to the configured scales.
    Predictions(&'a Path),
}

/// Write `metrics.json` and `metrics.txt` for the eval split.
pub fn cmd_eval(cfg: &RunConfig, source: EvalSource<'_>, out: &Path, train_time: Option<f64>) -> Result<MetricReport, CliError> {
    create_dir(out)?;
    let started = Instant::now();
    let (_, eval) = load_data(cfg)?;
    let (per_view, params, size) = match source {
        EvalSource::Checkpoint(ck) => {
            let trainer = Trainer::from_checkpoint(ck, cfg.train.clone(), cfg.render.clone())?;
            let m = evaluate_views(trainer.field(), trainer.grid(), &eval, &cfg.render)?;
            (m, trainer.field().param_count(), ck.model_size_bytes())
        }
        EvalSource::Predictions(dir) => {
            let mut pred = load_blender(dir, Split::Eval, cfg.field.scene_radius)?;
            if pred.scales() == [1] {
                pred = make_multiscale(&pred, &cfg.data.scales)?;
            }
            (compare_datasets(&pred, &eval, cfg.render.background)?, 0, 0)
        }
    };
    let config = serde_json::to_value(cfg).expect("serializable");
    let mut report = MetricReport::from_views(per_view, started.elapsed().as_secs_f64(), params, size, config);
    report.train_seconds = train_time;
    write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    write_text(&out.join("metrics.txt"), &report.table())?;
    Ok(report)
}

/// Write the configured toy scene as a Blender-convention dataset, plus
/// its spec and a config that trains on the written files.
pub fn cmd_fixtures(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let scene = ToyScene::new(cfg.data.toy.clone())?;
    write_blender(&scene.dataset(Split::Train)?, out)?;
    write_blender(&scene.dataset(Split::Eval)?, out)?;
    write_text(&out.join("toy_spec.json"), &serde_json::to_string_pretty(&cfg.data.toy).expect("serializable"))?;
    let abs = fs::canonicalize(out).map_err(io_err(out))?;
    let mut fixture_cfg = cfg.clone();
    fixture_cfg.data.dir = Some(abs);
    write_text(&out.join("config.json"), &fixture_cfg.to_json())
}

/// Fails with a check error when `candidate` leaves any cube-conflated
/// pair conflated.
pub fn cmd_ambiguity(cfg: &RunConfig, candidate: PlatonicSolid, pairs: usize, out: Option<&Path>) -> Result<ambiguity::AmbiguityReport, CliError> {
    let report = ambiguity::run(candidate, &cfg.field, cfg.train.seed, pairs);
    print!("{}", report.summary());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("ambiguity.json"), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    if !report.passed() {
        return Err(CliError::Check(format!(
            "{candidate} leaves {} of {} cube-conflated pairs conflated{}",
            report.unresolved,
            report.cube_collisions,
            if report.body_diagonal_candidate.collides() { ", including the body-diagonal pair" } else { "" }
        )));
    }
    Ok(report)
}

/// Training time recorded next to a checkpoint, if any.
pub fn train_time_near(checkpoint: &Path) -> Option<f64> {
    let p: PathBuf = checkpoint.parent()?.join("train_time.json");
    let t: TrainTiming = serde_json::from_str(&fs::read_to_string(p).ok()?).ok()?;
    Some(t.seconds)
}
