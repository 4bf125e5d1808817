//! Curriculum training of per-scene canonical colors and the shared light
//! encoder and appearance adapter, over frozen registered geometry.

mod adam;
mod register;
mod state;

use std::borrow::Cow;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{
    adapter_forward, encoder_forward, image_to_tensor, AdapterMode, AdapterVars, EncoderVars,
};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::metrics::psnr;
use crate::numerics::{Tape, Tensor, Var};
use crate::occlusion::{masked_loss, LossConfig, TransientMask};
use crate::render::ops::{render_colors, sh_to_rgb};
use crate::render::{view_basis, RenderConfig};
use crate::rng::{derive_seed, stream_rng, STREAM_TRAIN};
use crate::scene::GaussianScene;
use crate::scenegen::{relight, Dataset, LightingSpec};

pub use adam::{optimizer_step, AdamConfig, Moments};
pub use register::{register_scene, RegisterConfig, REGISTER_OPACITY};
pub use state::{SceneParams, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub stage: u8,
    pub dataset: PathBuf,
    pub iterations: usize,
    /// Learning rate of the encoder and adapter.
    pub lr_network: f64,
    /// Learning rate of the canonical tables.
    pub lr_tables: f64,
    /// Both rates follow a cosine from 1 down to this fraction over the stage.
    pub lr_final_fraction: f64,
    pub loss: LossConfig,
    /// Use the dataset's transient masks in the loss.
    pub occlusion: bool,
}

impl StageConfig {
    /// Learning-rate multiplier at step `t` of the stage.
    pub fn lr_scale(&self, t: u64) -> f64 {
        let f = self.lr_final_fraction;
        let progress = (t as f64 / self.iterations.max(1) as f64).min(1.0);
        f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            dataset: PathBuf::new(),
            iterations: 500,
            lr_network: 1e-3,
            lr_tables: 1e-2,
            lr_final_fraction: 0.1,
            loss: LossConfig::default(),
            occlusion: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Render canonical colors directly; encoder and adapter are unused.
    pub no_adapter: bool,
    /// Treat every pixel as visible.
    pub no_mask: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub stages: Vec<StageConfig>,
    pub voxel_size: f64,
    pub init_scale_factor: f64,
    /// Views drawn per step, each with a random training lighting.
    pub views_per_step: usize,
    /// Probability that a drawn view is additionally relit with a freshly
    /// sampled [`LightingSpec`] before use, widening the set of lightings the
    /// networks see. `0` trains on the dataset images only.
    pub relight_augment: f64,
    /// Probability that a drawn view's light code comes from another scene's
    /// image under the same lighting. Only used when the dataset shares its
    /// lightings across scenes and has more than one scene.
    pub cross_scene_codes: f64,
    /// Exclude the last view and the last lighting of every scene from training.
    pub hold_out: bool,
    pub adapter_mode: AdapterMode,
    pub ablate: Ablations,
    pub adam: AdamConfig,
    pub render: RenderConfig,
    /// Metrics rows (and their PSNR evaluation) every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: Vec::new(),
            voxel_size: 0.2,
            init_scale_factor: 0.3,
            views_per_step: 6,
            relight_augment: 0.5,
            cross_scene_codes: 0.5,
            hold_out: true,
            adapter_mode: AdapterMode::Direct,
            ablate: Ablations::default(),
            adam: AdamConfig::default(),
            render: RenderConfig::default(),
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Standard three-stage schedule with a 1:1:2 iteration ratio.
    pub fn curriculum(stage1: PathBuf, stage2: PathBuf, stage3: PathBuf, base_iterations: usize) -> Self {
        let stage = |stage: u8, dataset: PathBuf, iterations: usize| StageConfig {
            stage,
            dataset,
            iterations,
            occlusion: stage == 3,
            ..StageConfig::default()
        };
        Self {
            stages: vec![
                stage(1, stage1, base_iterations),
                stage(2, stage2, base_iterations),
                stage(3, stage3, 2 * base_iterations),
            ],
            ..Self::default()
        }
    }

    /// Only the last stage, run for the whole curriculum's iteration budget.
    pub fn without_curriculum(&self) -> Self {
        let total = self.stages.iter().map(|s| s.iterations).sum();
        let mut out = self.clone();
        if let Some(last) = self.stages.last() {
            out.stages = vec![StageConfig {
                iterations: total,
                ..last.clone()
            }];
        }
        out
    }

    pub fn total_iterations(&self) -> u64 {
        self.stages.iter().map(|s| s.iterations as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let mut prev = 0;
        for s in &self.stages {
            if !(1..=3).contains(&s.stage) || s.stage < prev {
                return bad(format!("stage ids must be 1..=3 and non-decreasing, got {}", s.stage));
            }
            prev = s.stage;
            if s.iterations == 0 {
                return bad(format!("stage {} has zero iterations", s.stage));
            }
            if s.stage == 3 && !s.occlusion {
                return bad("stage 3 must enable occlusion".into());
            }
            if !(s.lr_network > 0.0 && s.lr_tables > 0.0) {
                return bad(format!("stage {}: learning rates must be positive", s.stage));
            }
            if !(s.lr_final_fraction > 0.0 && s.lr_final_fraction <= 1.0) {
                return bad(format!("stage {}: lr_final_fraction must be in (0, 1]", s.stage));
            }
            if !(s.loss.lambda >= 0.0 && s.loss.lambda.is_finite()) {
                return bad(format!("stage {}: lambda must be >= 0", s.stage));
            }
        }
        if !(self.voxel_size > 0.0 && self.init_scale_factor > 0.0) {
            return bad("voxel_size and init_scale_factor must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.relight_augment) {
            return bad(format!("relight_augment must be in [0, 1], got {}", self.relight_augment));
        }
        if !(0.0..=1.0).contains(&self.cross_scene_codes) {
            return bad(format!("cross_scene_codes must be in [0, 1], got {}", self.cross_scene_codes));
        }
        if self.views_per_step == 0 || self.log_every == 0 {
            return bad("views_per_step and log_every must be >= 1".into());
        }
        self.render.validate()
    }
}

/// One training or evaluation image with everything the forward pass needs.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub camera: Camera,
    pub target: Image,
    pub encoder_input: Tensor,
    pub mask: Option<TransientMask>,
    pub basis: Arc<Vec<f64>>,
}

/// Cached, frozen per-scene data for one stage.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub index: usize,
    pub id: String,
    pub geometry: Arc<GaussianScene>,
    pub cameras: Vec<Camera>,
    /// `[view][lighting]`.
    pub views: Vec<Vec<ViewInput>>,
    pub clean: Vec<Vec<Image>>,
    pub train_views: Vec<usize>,
    pub train_lightings: Vec<usize>,
    pub held_out_view: Option<usize>,
    pub held_out_lighting: Option<usize>,
}

impl SceneData {
    /// Loads scene `index` of `data`; `geometry` must come from [`register_scene`].
    pub fn load(data: &Dataset, index: usize, geometry: Arc<GaussianScene>, hold_out: bool, use_masks: bool) -> Result<Self> {
        let cameras = data.cameras(index)?;
        let n_views = cameras.len();
        let n_light = data.n_lightings(index);
        let (held_out_view, held_out_lighting) = if hold_out {
            (Some(n_views - 1), Some(n_light - 1))
        } else {
            (None, None)
        };
        if hold_out && n_views < 2 {
            return Err(Error::Config("holding out a view needs at least 2 views".into()));
        }
        let mut views = Vec::with_capacity(n_views);
        let mut clean = Vec::with_capacity(n_views);
        for (v, camera) in cameras.iter().enumerate() {
            let basis = Arc::new(view_basis(&geometry, &camera.extrinsics));
            let mut row = Vec::with_capacity(n_light);
            let mut clean_row = Vec::with_capacity(n_light);
            for l in 0..n_light {
                let target = data.image(index, v, l)?;
                let mask = if use_masks { data.mask(index, v, l)? } else { None };
                if let Some(m) = &mask {
                    m.check_size(target.width(), target.height())?;
                }
                row.push(ViewInput {
                    camera: *camera,
                    encoder_input: image_to_tensor(&target)?,
                    target,
                    mask,
                    basis: Arc::clone(&basis),
                });
                clean_row.push(data.clean_image(index, v, l)?);
            }
            views.push(row);
            clean.push(clean_row);
        }
        Ok(Self {
            index,
            id: data.manifest.scenes[index].id.clone(),
            geometry,
            cameras,
            views,
            clean,
            train_views: (0..n_views).filter(|&v| Some(v) != held_out_view).collect(),
            train_lightings: (0..n_light).filter(|&l| Some(l) != held_out_lighting).collect(),
            held_out_view,
            held_out_lighting,
        })
    }
}

/// Tape handles of the networks; `None` when the adapter is ablated.
pub struct NetworkVars {
    pub encoder: EncoderVars,
    pub adapter: AdapterVars,
}

/// Masked loss of one view: encode → adapt → SH colors → render → loss.
pub fn view_loss(
    tape: &mut Tape,
    nets: Option<&NetworkVars>,
    table: Var,
    geometry: &Arc<GaussianScene>,
    view: &ViewInput,
    loss: &LossConfig,
    render: &RenderConfig,
) -> Result<Var> {
    let sh = match nets {
        Some(n) => {
            let input = tape.constant(view.encoder_input.clone());
            let code = encoder_forward(tape, input, &n.encoder)?;
            adapter_forward(tape, table, code, &n.adapter)?
        }
        None => table,
    };
    let colors = sh_to_rgb(tape, sh, Arc::clone(&view.basis))?;
    let cam = &view.camera;
    let (image, _) = render_colors(tape, colors, Arc::clone(geometry), &cam.intrinsics, &cam.extrinsics, render)?;
    masked_loss(tape, &view.target, image, view.mask.as_ref(), loss)
}

/// Where a step's views come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub view: usize,
    pub lighting: usize,
    /// Extra relighting applied on top of the stored image.
    pub relight: Option<LightingSpec>,
    /// `(scene, view)` whose image under the same lighting feeds the encoder
    /// instead of the view's own image.
    pub reference: Option<(usize, usize)>,
}

/// Draws `count` distinct training views of `scenes[scene]`, each with a
/// random training lighting, relit with probability `relight_augment` and
/// encoded from another scene's image with probability `cross_scene`.
pub fn pick_views(
    scenes: &[SceneData],
    scene: usize,
    count: usize,
    relight_augment: f64,
    cross_scene: f64,
    rng: &mut impl Rng,
) -> Vec<Pick> {
    let own = &scenes[scene];
    let mut views = own.train_views.clone();
    views.shuffle(rng);
    views.truncate(count.min(views.len()));
    let chance = |p: f64, rng: &mut _| p > 0.0 && Rng::gen_bool(rng, p.min(1.0));
    views
        .into_iter()
        .map(|view| {
            let lighting = *own.train_lightings.choose(rng).expect("at least one training lighting");
            let relight = chance(relight_augment, rng).then(|| LightingSpec::sample(rng));
            let reference = (scenes.len() > 1 && chance(cross_scene, rng)).then(|| {
                let other = (scene + rng.gen_range(1..scenes.len())) % scenes.len();
                let v = *scenes[other].train_views.choose(rng).expect("at least one training view");
                (other, v)
            });
            Pick {
                view,
                lighting,
                relight,
                reference,
            }
        })
        .collect()
}

/// The stored view with the pick's relighting and light-code source applied.
fn picked_view<'a>(scenes: &'a [SceneData], scene: usize, p: &Pick) -> Result<Cow<'a, ViewInput>> {
    let stored = &scenes[scene].views[p.view][p.lighting];
    if p.relight.is_none() && p.reference.is_none() {
        return Ok(Cow::Borrowed(stored));
    }
    let apply = |image: &Image| p.relight.as_ref().map_or_else(|| image.clone(), |spec| relight(image, spec));
    let target = apply(&stored.target);
    let encoder_input = match p.reference {
        Some((s, v)) => image_to_tensor(&apply(&scenes[s].views[v][p.lighting].target))?,
        None => image_to_tensor(&target)?,
    };
    Ok(Cow::Owned(ViewInput {
        encoder_input,
        target,
        ..stored.clone()
    }))
}

/// One optimizer step on `scenes[scene]` over `picks`, with the stage's
/// learning rates multiplied by `lr_scale`; returns the mean view loss.
pub fn train_step(
    state: &mut TrainState,
    scenes: &[SceneData],
    scene_index: usize,
    picks: &[Pick],
    stage: &StageConfig,
    cfg: &TrainConfig,
    lr_scale: f64,
) -> Result<f64> {
    let scene = &scenes[scene_index];
    let mut tape = Tape::new();
    let nets = state.use_adapter.then(|| NetworkVars {
        encoder: state.encoder.register(&mut tape, true),
        adapter: state.adapter.register(&mut tape, true),
    });
    let params = state.scene(&scene.id)?;
    let table = tape.param(params.table.clone());
    let mut losses = Vec::with_capacity(picks.len());
    for p in picks {
        let view = picked_view(scenes, scene_index, p)?;
        let l = view_loss(&mut tape, nets.as_ref(), table, &scene.geometry, &view, &stage.loss, &cfg.render)?;
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {}, scene {}, view {}, lighting {}",
                state.iteration, scene.id, p.view, p.lighting
            )));
        }
        losses.push(l);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let total = tape.scale(total, 1.0 / losses.len() as f64);
    let loss = tape.value(total).item();
    tape.backward(total)?;

    let mut updates: Vec<(String, Var, f64)> = vec![(format!("scene.{}.sh", scene.id), table, stage.lr_tables * lr_scale)];
    if let Some(n) = &nets {
        let enc_names = crate::appearance::EncoderParams::names();
        let adp_names = crate::appearance::AdapterParams::names();
        updates.extend(enc_names.into_iter().zip(&n.encoder.vars).map(|(name, &v)| (format!("enc.{name}"), v, stage.lr_network * lr_scale)));
        updates.extend(adp_names.into_iter().zip(&n.adapter.vars).map(|(name, &v)| (format!("adp.{name}"), v, stage.lr_network * lr_scale)));
    }
    let grads: Vec<Tensor> = updates.iter().map(|(_, v, _)| tape.grad(*v)).collect();
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for {} at iteration {} (scene {})",
            updates[i].0, state.iteration, scene.id
        )));
    }
    let n_enc = crate::appearance::EncoderParams::names().len();
    for (k, ((name, _, lr), grad)) in updates.iter().zip(&grads).enumerate() {
        let moments = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| Moments::zeros(grad.shape()));
        let param = if k == 0 {
            &mut state.scenes.get_mut(&scene.id).expect("scene registered").table
        } else if k <= n_enc {
            &mut state.encoder.tensors_mut()[k - 1]
        } else {
            &mut state.adapter.tensors_mut()[k - 1 - n_enc]
        };
        optimizer_step(param, grad, moments, *lr, &cfg.adam)?;
    }
    state.iteration += 1;
    Ok(loss)
}

/// PSNRs of one scene's reconstructions, each rendered from its own image's
/// light code. `None` where the split is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub train: f64,
    pub held_out_view: Option<f64>,
    pub held_out_lighting: Option<f64>,
    /// Static-region PSNR over training views and lightings (masked pixels excluded).
    pub static_region: Option<f64>,
    /// PSNR against the pre-occluder images on training views and lightings.
    pub clean: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Renders view `v` under lighting `l` with its own image as reference.
pub fn reconstruct(state: &TrainState, scene: &SceneData, v: usize, l: usize, render: &RenderConfig) -> Result<Image> {
    let view = &scene.views[v][l];
    Ok(state.render(&scene.id, &view.camera, &view.target, render)?.image)
}

pub fn evaluate_scene(state: &TrainState, scene: &SceneData, render: &RenderConfig) -> Result<SceneEval> {
    let mut train = Vec::new();
    let mut clean = Vec::new();
    let mut static_region = Vec::new();
    let mut held_view = Vec::new();
    let mut held_light = Vec::new();
    let n_light = scene.views[0].len();
    for v in 0..scene.views.len() {
        for l in 0..n_light {
            let is_train_v = Some(v) != scene.held_out_view;
            let is_train_l = Some(l) != scene.held_out_lighting;
            let out = reconstruct(state, scene, v, l, render)?;
            let view = &scene.views[v][l];
            match (is_train_v, is_train_l) {
                (true, true) => {
                    train.push(psnr(&out, &view.target, None)?);
                    clean.push(psnr(&out, &scene.clean[v][l], None)?);
                    if let Some(m) = &view.mask {
                        static_region.push(psnr(&out, &view.target, Some(m))?);
                    }
                }
                (false, true) => held_view.push(psnr(&out, &view.target, view.mask.as_ref())?),
                (true, false) => held_light.push(psnr(&out, &view.target, view.mask.as_ref())?),
                (false, false) => {}
            }
        }
    }
    Ok(SceneEval {
        train: mean(&train).unwrap_or(f64::NAN),
        held_out_view: mean(&held_view),
        held_out_lighting: mean(&held_light),
        static_region: mean(&static_region),
        clean: mean(&clean).unwrap_or(f64::NAN),
    })
}

/// One metrics CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub stage: u8,
    /// Mean step loss since the previous row.
    pub loss: f64,
    pub train_psnr: f64,
    pub held_out_view_psnr: f64,
    pub held_out_lighting_psnr: f64,
}

pub const METRICS_HEADER: &str = "iteration,stage,loss,train_psnr,held_out_view_psnr,held_out_lighting_psnr";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.9e},{:.4},{:.4},{:.4}",
            self.iteration,
            self.stage,
            self.loss,
            self.train_psnr,
            self.held_out_view_psnr,
            self.held_out_lighting_psnr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Loss of every step run in this call, in order.
    pub losses: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
}

/// Registers every scene of `data` that `state` does not know yet and loads
/// the per-scene caches.
pub fn prepare_stage(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig, use_masks: bool) -> Result<Vec<SceneData>> {
    let reg = RegisterConfig {
        voxel_size: cfg.voxel_size,
        scale_factor: cfg.init_scale_factor,
    };
    let mut scenes = Vec::with_capacity(data.n_scenes());
    for k in 0..data.n_scenes() {
        let id = data.manifest.scenes[k].id.clone();
        if !state.scenes.contains_key(&id) {
            let n_views = data.n_views();
            let n_light = data.n_lightings(k);
            let views: Vec<usize> = (0..n_views).filter(|&v| !(cfg.hold_out && v + 1 == n_views)).collect();
            let lights: Vec<usize> = (0..n_light).filter(|&l| !(cfg.hold_out && l + 1 == n_light)).collect();
            let geometry = register_scene(data, k, &views, &lights, &reg)?;
            state.scenes.insert(id.clone(), SceneParams::new(geometry)?);
        }
        let geometry = Arc::clone(&state.scene(&id)?.geometry);
        scenes.push(SceneData::load(data, k, geometry, cfg.hold_out, use_masks)?);
    }
    Ok(scenes)
}

fn eval_row(state: &TrainState, scenes: &[SceneData], cfg: &TrainConfig, stage: u8, loss: f64) -> Result<MetricsRow> {
    let evals = scenes
        .iter()
        .map(|s| evaluate_scene(state, s, &cfg.render))
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: &dyn Fn(&SceneEval) -> Option<f64>| {
        mean(&evals.iter().filter_map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    };
    Ok(MetricsRow {
        iteration: state.iteration,
        stage,
        loss,
        train_psnr: avg(&|e| Some(e.train)),
        held_out_view_psnr: avg(&|e| e.held_out_view),
        held_out_lighting_psnr: avg(&|e| e.held_out_lighting),
    })
}

/// Options for [`run_curriculum`] beyond the config itself.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `metrics.csv` and `stage<k>.wskt` checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Continue from this state; its iteration counter selects the position
    /// in the schedule.
    pub resume: Option<TrainState>,
    /// Skip the periodic PSNR evaluation (metrics rows then carry NaN PSNRs).
    pub skip_eval: bool,
}

/// Runs the configured stages in order, carrying parameters forward.
pub fn run_curriculum(cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let datasets = cfg
        .stages
        .iter()
        .map(|s| {
            Dataset::open(&s.dataset).map_err(|e| {
                Error::Config(format!("stage {} dataset {}: {e}", s.stage, s.dataset.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (s, d) in cfg.stages.iter().zip(&datasets) {
        if s.occlusion && !d.occluded() {
            return Err(Error::Config(format!(
                "stage {} enables occlusion but {} has no occluders",
                s.stage,
                s.dataset.display()
            )));
        }
    }
    let mut state = match &opts.resume {
        Some(s) => s.clone(),
        None => TrainState::new(cfg.seed, cfg.adapter_mode, !cfg.ablate.no_adapter),
    };
    if state.use_adapter == cfg.ablate.no_adapter {
        return Err(Error::Config("resumed state disagrees with the no-adapter ablation".into()));
    }
    let mut csv = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((path, f))
        }
        None => None,
    };
    let mut losses = Vec::new();
    let mut metrics = Vec::new();
    let mut window = Vec::new();
    let mut stage_start = 0u64;
    for (stage, data) in cfg.stages.iter().zip(&datasets) {
        let stage_end = stage_start + stage.iterations as u64;
        if state.iteration >= stage_end {
            stage_start = stage_end;
            continue;
        }
        state.stage = stage.stage;
        let use_masks = stage.occlusion && !cfg.ablate.no_mask;
        let scenes = prepare_stage(&mut state, data, cfg, use_masks)?;
        let cross_scene = if data.manifest.config.shared_lightings { cfg.cross_scene_codes } else { 0.0 };
        while state.iteration < stage_end {
            let mut rng = stream_rng(derive_seed(cfg.seed, "step", state.iteration), STREAM_TRAIN);
            let k = rng.gen_range(0..scenes.len());
            let picks = pick_views(&scenes, k, cfg.views_per_step, cfg.relight_augment, cross_scene, &mut rng);
            let lr_scale = stage.lr_scale(state.iteration - stage_start);
            let loss = train_step(&mut state, &scenes, k, &picks, stage, cfg, lr_scale)?;
            losses.push(loss);
            window.push(loss);
            let done = state.iteration == stage_end;
            if state.iteration % cfg.log_every as u64 == 0 || done {
                let loss_mean = mean(&window).unwrap_or(f64::NAN);
                window.clear();
                let row = if opts.skip_eval {
                    MetricsRow {
                        iteration: state.iteration,
                        stage: stage.stage,
                        loss: loss_mean,
                        train_psnr: f64::NAN,
                        held_out_view_psnr: f64::NAN,
                        held_out_lighting_psnr: f64::NAN,
                    }
                } else {
                    eval_row(&state, &scenes, cfg, stage.stage, loss_mean)?
                };
                log::info!("{}", row.csv());
                if let Some((path, f)) = &mut csv {
                    writeln!(f, "{}", row.csv())
                        .and_then(|_| f.flush())
                        .map_err(|e| Error::io(path.as_path(), e))?;
                }
                metrics.push(row);
            }
        }
        if let Some(dir) = &opts.out_dir {
            state.to_checkpoint().save(&dir.join(format!("stage{}.wskt", stage.stage)))?;
        }
        stage_start = stage_end;
    }
    Ok(TrainOutcome { state, losses, metrics })
}

/// Loads a checkpoint written by [`run_curriculum`].
pub fn load_state(path: &Path) -> Result<TrainState> {
    TrainState::from_checkpoint(&crate::numerics::Checkpoint::load(path)?)
}
