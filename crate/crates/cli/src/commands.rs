//! The work behind each subcommand, callable without going through argv.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wildsplat::appearance::transfer_lighting;
use wildsplat::camera::{load_cameras, Camera, Intrinsics};
use wildsplat::imaging::Image;
use wildsplat::metrics::{evaluate, MetricReport};
use wildsplat::render::{rasterize, RenderConfig, RenderOutput};
use wildsplat::scene::{read_ply, write_ply, GaussianScene};
use wildsplat::scenegen::{build_dataset, Dataset};
use wildsplat::trainer::{load_state, run_curriculum, RunOptions, TrainOutcome, TrainState};
use wildsplat::{Error, Result};

use crate::config::{
    EvalRunConfig, ExportRunConfig, GenConfig, RenderRunConfig, TrainRunConfig, TransferRunConfig,
};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Generates a dataset; returns the manifest path.
pub fn gen(cfg: &GenConfig) -> Result<PathBuf> {
    cfg.validate()?;
    build_dataset(&cfg.out, &cfg.dataset)?;
    Ok(cfg.out.join("manifest.json"))
}

/// Trains, writing `config.json`, `metrics.csv`, per-stage and final
/// checkpoints into `cfg.out`.
pub fn train(cfg: &TrainRunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resume = cfg.resume.as_deref().map(load_state).transpose()?;
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let opts = RunOptions {
        out_dir: Some(cfg.out.clone()),
        resume,
        skip_eval: cfg.skip_eval,
    };
    let outcome = run_curriculum(&cfg.effective(), &opts)?;
    outcome.state.to_checkpoint().save(&cfg.out.join("final.wskt"))?;
    Ok(outcome)
}

/// Finds a scene by id, or by index into the dataset (when given) or into
/// the checkpoint's sorted ids. Returns the id and the dataset index.
pub fn resolve_scene(state: &TrainState, key: &str, data: Option<&Dataset>) -> Result<(String, Option<usize>)> {
    if let Some(data) = data {
        let scenes = &data.manifest.scenes;
        let k = scenes
            .iter()
            .position(|s| s.id == key)
            .or_else(|| key.parse::<usize>().ok().filter(|&k| k < scenes.len()))
            .ok_or_else(|| Error::Config(format!("scene {key:?} is not in the dataset")))?;
        return Ok((scenes[k].id.clone(), Some(k)));
    }
    if state.scenes.contains_key(key) {
        return Ok((key.to_owned(), None));
    }
    key.parse::<usize>()
        .ok()
        .and_then(|k| state.scenes.keys().nth(k).cloned())
        .map(|id| (id, None))
        .ok_or_else(|| Error::Config(format!("scene {key:?} is not in the checkpoint")))
}

/// Rescales intrinsics to a new image size.
pub fn resize_intrinsics(k: &Intrinsics, width: usize, height: usize) -> Result<Intrinsics> {
    let sx = width as f64 / k.width as f64;
    let sy = height as f64 / k.height as f64;
    Intrinsics::new(k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy, width, height)
}

fn open_dataset(path: Option<&Path>) -> Result<Option<Dataset>> {
    path.map(Dataset::open).transpose()
}

fn resolve_camera(cfg: &RenderRunConfig, data: Option<&Dataset>, scene: usize) -> Result<Camera> {
    let spec = &cfg.camera;
    let cameras = match (&spec.file, spec.view, data) {
        (Some(file), _, _) => load_cameras(file)?,
        (None, Some(_), Some(data)) => data.cameras(scene)?,
        _ => return Err(Error::Config("no camera source".into())),
    };
    let index = spec.view.unwrap_or(spec.index);
    let mut camera = *cameras
        .get(index)
        .ok_or_else(|| Error::Config(format!("camera {index} does not exist ({} available)", cameras.len())))?;
    if let Some([w, h]) = spec.size {
        camera.intrinsics = resize_intrinsics(&camera.intrinsics, w, h)?;
    }
    Ok(camera)
}

/// The scene with its coefficients replaced by those used under `reference`.
fn lit_scene(state: &TrainState, id: &str, reference: Option<&Image>) -> Result<GaussianScene> {
    let params = state.scene(id)?;
    let table = match reference {
        Some(r) => state.adapted_table(params, r)?,
        None => params.table.clone(),
    };
    params.geometry.with_sh_table(table.data())
}

/// Renders a novel view under the lighting of `cfg.reference` and writes
/// the PNG (plus the adapted PLY when requested).
pub fn render(cfg: &RenderRunConfig) -> Result<RenderOutput> {
    cfg.validate()?;
    let state = load_state(&cfg.checkpoint)?;
    let reference = Image::load_png(&cfg.reference)?;
    let data = open_dataset(cfg.dataset.as_deref())?;
    let (out, exported) = match (&cfg.ply, &cfg.scene) {
        (Some(ply), _) => {
            let scene = read_ply(ply)?;
            let camera = resolve_camera(cfg, data.as_ref(), 0)?;
            let out = if state.use_adapter {
                transfer_lighting(&scene, &reference, &state.encoder, &state.adapter, &camera, &cfg.render)?
            } else {
                rasterize(&scene, None, &camera.intrinsics, &camera.extrinsics, &cfg.render)?
            };
            let exported = match &cfg.export_ply {
                Some(_) if state.use_adapter => Some(wildsplat::appearance::adapted_scene(
                    &scene,
                    &wildsplat::appearance::encode_light(&reference, &state.encoder)?,
                    &state.adapter,
                )?),
                Some(_) => Some(scene),
                None => None,
            };
            (out, exported)
        }
        (None, Some(key)) => {
            let (id, index) = resolve_scene(&state, key, data.as_ref())?;
            let camera = resolve_camera(cfg, data.as_ref(), index.unwrap_or(0))?;
            let out = state.render(&id, &camera, &reference, &cfg.render)?;
            let exported = cfg
                .export_ply
                .as_ref()
                .map(|_| lit_scene(&state, &id, Some(&reference)))
                .transpose()?;
            (out, exported)
        }
        (None, None) => return Err(Error::Config("give exactly one of --scene and --ply".into())),
    };
    out.image.save_png(&cfg.out)?;
    if let (Some(path), Some(scene)) = (&cfg.export_ply, exported) {
        write_ply(&scene, path, 4)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source_scene: usize,
    pub source_view: usize,
    pub lighting: usize,
    pub target_scene: usize,
    pub view: usize,
    /// PSNR of the render against the target scene's clean image under each lighting.
    pub psnr_by_lighting: Vec<f64>,
    pub best_lighting: usize,
}

/// Renders `target_scene` with the light code of a `source_scene` image.
pub fn transfer(cfg: &TransferRunConfig) -> Result<TransferReport> {
    let state = load_state(&cfg.checkpoint)?;
    let data = Dataset::open(&cfg.dataset)?;
    let check = |k: usize, what: &str| {
        if k < data.n_scenes() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} {k} is out of range ({} scenes)", data.n_scenes())))
        }
    };
    check(cfg.source_scene, "source scene")?;
    check(cfg.target_scene, "target scene")?;
    let reference = data.image(cfg.source_scene, cfg.source_view, cfg.lighting)?;
    let id = &data.manifest.scenes[cfg.target_scene].id;
    let camera = *data
        .cameras(cfg.target_scene)?
        .get(cfg.view)
        .ok_or_else(|| Error::Config(format!("view {} does not exist", cfg.view)))?;
    let out = state.render(id, &camera, &reference, &cfg.render)?;
    if let Some(path) = &cfg.out {
        out.image.save_png(path)?;
    }
    let psnr_by_lighting = (0..data.n_lightings(cfg.target_scene))
        .map(|l| wildsplat::metrics::psnr(&out.image, &data.clean_image(cfg.target_scene, cfg.view, l)?, None))
        .collect::<Result<Vec<_>>>()?;
    let best_lighting = psnr_by_lighting
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(l, _)| l)
        .unwrap_or(0);
    Ok(TransferReport {
        source_scene: cfg.source_scene,
        source_view: cfg.source_view,
        lighting: cfg.lighting,
        target_scene: cfg.target_scene,
        view: cfg.view,
        psnr_by_lighting,
        best_lighting,
    })
}

/// Writes a scene's canonical (or reference-lit) Gaussians as PLY.
pub fn export_ply(cfg: &ExportRunConfig) -> Result<GaussianScene> {
    let state = load_state(&cfg.checkpoint)?;
    let data = open_dataset(cfg.dataset.as_deref())?;
    let (id, _) = resolve_scene(&state, &cfg.scene, data.as_ref())?;
    let reference = cfg.reference.as_deref().map(Image::load_png).transpose()?;
    let scene = lit_scene(&state, &id, reference.as_ref())?;
    write_ply(&scene, &cfg.out, cfg.degree)?;
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene: String,
    pub view: usize,
    pub lighting: usize,
    pub split: String,
    pub psnr: f64,
    pub ssim: f64,
    pub n_pixels_evaluated: usize,
    pub mask_applied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMean {
    pub split: String,
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub means: Vec<EvalMean>,
}

pub const EVAL_CSV_HEADER: &str = "scene,view,lighting,split,psnr,ssim,n_pixels_evaluated,mask_applied";

impl EvalReport {
    pub fn mean(&self, split: &str) -> Option<&EvalMean> {
        self.means.iter().find(|m| m.split == split)
    }

    /// Per-view rows followed by one `mean` row per split.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{:.6},{:.6},{},{}\n",
                r.scene, r.view, r.lighting, r.split, r.psnr, r.ssim, r.n_pixels_evaluated, r.mask_applied
            );
        }
        for m in &self.means {
            out += &format!("mean,,,{},{:.6},{:.6},{},\n", m.split, m.psnr, m.ssim, m.count);
        }
        out
    }
}

/// Split label of `(view, lighting)` under the held-out protocol.
pub fn split_of(hold_out: bool, view: usize, n_views: usize, lighting: usize, n_lightings: usize) -> &'static str {
    if !hold_out {
        return "all";
    }
    match (view + 1 == n_views, lighting + 1 == n_lightings) {
        (false, false) => "train",
        (true, false) => "held-out-view",
        (false, true) => "held-out-lighting",
        (true, true) => "held-out-both",
    }
}

/// Metrics of one render against its target, masking transients when a mask is given.
pub fn eval_pair(rendered: &Image, target: &Image, mask: Option<&wildsplat::occlusion::TransientMask>) -> Result<MetricReport> {
    evaluate(rendered, target, mask)
}

/// Reconstructs every view and lighting of every dataset scene from its own
/// image's light code and scores it.
pub fn eval(cfg: &EvalRunConfig) -> Result<EvalReport> {
    let state = load_state(&cfg.checkpoint)?;
    let data = Dataset::open(&cfg.dataset)?;
    let report = eval_state(&state, &data, cfg.hold_out, &cfg.render)?;
    if let Some(path) = &cfg.out {
        write_json(path, &report)?;
    }
    if let Some(path) = &cfg.csv {
        fs::write(path, report.to_csv()).map_err(|e| io_err(path, e))?;
    }
    Ok(report)
}

pub fn eval_state(state: &TrainState, data: &Dataset, hold_out: bool, render: &RenderConfig) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let n_views = data.n_views();
    for k in 0..data.n_scenes() {
        let id = &data.manifest.scenes[k].id;
        let cameras = data.cameras(k)?;
        let n_light = data.n_lightings(k);
        for (v, camera) in cameras.iter().enumerate() {
            for l in 0..n_light {
                let target = data.image(k, v, l)?;
                let mask = data.mask(k, v, l)?;
                let out = state.render(id, camera, &target, render)?;
                let m = eval_pair(&out.image, &target, mask.as_ref())?;
                rows.push(EvalRow {
                    scene: id.clone(),
                    view: v,
                    lighting: l,
                    split: split_of(hold_out, v, n_views, l, n_light).to_owned(),
                    psnr: m.psnr,
                    ssim: m.ssim,
                    n_pixels_evaluated: m.n_pixels_evaluated,
                    mask_applied: m.mask_applied,
                });
            }
        }
    }
    let mut splits: Vec<String> = Vec::new();
    for r in &rows {
        if !splits.contains(&r.split) {
            splits.push(r.split.clone());
        }
    }
    if splits.len() > 1 {
        splits.push("all".into());
    }
    let means = splits
        .into_iter()
        .map(|split| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| split == "all" || r.split == split).collect();
            let n = sel.len() as f64;
            EvalMean {
                psnr: sel.iter().map(|r| r.psnr).sum::<f64>() / n,
                ssim: sel.iter().map(|r| r.ssim).sum::<f64>() / n,
                count: sel.len(),
                split,
            }
        })
        .collect();
    Ok(EvalReport { rows, means })
}
