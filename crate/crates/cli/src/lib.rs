//! Command-line front end: argument parsing, config resolution and exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wildsplat::appearance::AdapterMode;
use wildsplat::trainer::{StageConfig, TrainConfig};
use wildsplat::Error;

use config::{
    load_or_default, EvalRunConfig, ExportRunConfig, GenConfig, RenderRunConfig, TrainRunConfig, TransferRunConfig,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "wildsplat", version, about = "Light-conditioned Gaussian splatting toolkit")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "WSK_THREADS")]
    pub threads: Option<usize>,
    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// JSON configuration for the subcommand; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-lighting dataset.
    Gen(GenArgs),
    /// Train the encoder, adapter and per-scene canonical colors.
    Train(TrainArgs),
    /// Render a novel view under the lighting of a reference image.
    Render(RenderArgs),
    /// Render one dataset scene with the lighting of another scene's image.
    Transfer(TransferArgs),
    /// Write a trained scene as PLY.
    ExportPly(ExportArgs),
    /// Score reconstructions of every dataset view and lighting.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Curriculum preset: 1 = one scene, 2 = three scenes, 3 = three occluded scenes.
    #[arg(long)]
    pub stage: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub lightings: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub occlude: bool,
    /// Directory of RGBA PNG occluder sprites.
    #[arg(long)]
    pub occluders: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    NoAdapter,
    NoMask,
    NoCurriculum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Direct,
    Residual,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    #[arg(long)]
    pub stage2: Option<PathBuf>,
    #[arg(long)]
    pub stage3: Option<PathBuf>,
    /// Iterations of stages 1 and 2; stage 3 runs twice as many.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Weight of the Sobel term in every stage.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub lr_network: Option<f64>,
    #[arg(long)]
    pub lr_tables: Option<f64>,
    #[arg(long)]
    pub views_per_step: Option<usize>,
    #[arg(long)]
    pub relight_augment: Option<f64>,
    /// Probability of taking a view's light code from another scene's image.
    #[arg(long)]
    pub cross_scene_codes: Option<f64>,
    #[arg(long, value_enum)]
    pub adapter_mode: Option<ModeArg>,
    /// Background color as `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb)]
    pub background: Option<[f64; 3]>,
    /// Train on every view and lighting.
    #[arg(long)]
    pub no_hold_out: bool,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub skip_eval: bool,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scene id in the checkpoint, or its index in the dataset.
    #[arg(long)]
    pub scene: Option<String>,
    /// Render this PLY's Gaussians instead of a checkpoint scene.
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image whose lighting is transferred.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Dataset view to render from.
    #[arg(long)]
    pub view: Option<usize>,
    /// Cameras JSON file to render from.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub camera_index: Option<usize>,
    /// Output size `WxH`.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<[usize; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the adapted Gaussians.
    #[arg(long)]
    pub export_ply: Option<PathBuf>,
    #[arg(long, value_parser = parse_rgb)]
    pub background: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub source_scene: Option<usize>,
    #[arg(long)]
    pub source_view: Option<usize>,
    #[arg(long)]
    pub lighting: Option<usize>,
    #[arg(long)]
    pub target_scene: Option<usize>,
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 3 or 4.
    #[arg(long)]
    pub degree: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Score every view and lighting under one "all" split.
    #[arg(long)]
    pub no_hold_out: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([*r, *g, *b]),
        _ => Err(format!("expected r,g,b in [0, 1], got {s:?}")),
    }
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok([p(w)?, p(h)?])
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

pub fn resolve_gen(args: &GenArgs, file: Option<&std::path::Path>) -> Result<GenConfig, Error> {
    let mut cfg: GenConfig = load_or_default(file)?;
    if let Some(stage) = args.stage {
        cfg.apply_stage(stage)?;
    }
    set(&mut cfg.out, args.out.clone());
    let d = &mut cfg.dataset;
    set(&mut d.seed, args.seed);
    set(&mut d.n_scenes, args.scenes);
    set(&mut d.lightings_per_scene, args.lightings);
    set(&mut d.scene.n_views, args.views);
    set(&mut d.scene.image_size, args.image_size);
    if args.occlude {
        d.occlude = true;
    }
    if args.occluders.is_some() {
        d.occluder_dir = args.occluders.clone();
    }
    Ok(cfg)
}

pub fn resolve_train(args: &TrainArgs, file: Option<&std::path::Path>) -> Result<TrainRunConfig, Error> {
    let mut cfg: TrainRunConfig = load_or_default(file)?;
    set(&mut cfg.out, args.out.clone());
    let datasets = [&args.stage1, &args.stage2, &args.stage3];
    if datasets.iter().any(|d| d.is_some()) {
        let base = args.iterations.unwrap_or(StageConfig::default().iterations);
        cfg.train.stages = datasets
            .iter()
            .zip(1u8..)
            .filter_map(|(d, stage)| {
                d.as_ref().map(|path| StageConfig {
                    stage,
                    dataset: path.clone(),
                    iterations: if stage == 3 { 2 * base } else { base },
                    occlusion: stage == 3,
                    ..StageConfig::default()
                })
            })
            .collect();
    } else if let Some(n) = args.iterations {
        for s in &mut cfg.train.stages {
            s.iterations = if s.stage == 3 { 2 * n } else { n };
        }
    }
    let t: &mut TrainConfig = &mut cfg.train;
    set(&mut t.seed, args.seed);
    set(&mut t.voxel_size, args.voxel_size);
    set(&mut t.views_per_step, args.views_per_step);
    set(&mut t.relight_augment, args.relight_augment);
    set(&mut t.cross_scene_codes, args.cross_scene_codes);
    set(&mut t.log_every, args.log_every);
    if let Some(bg) = args.background {
        t.render.background = bg;
    }
    if let Some(mode) = args.adapter_mode {
        t.adapter_mode = match mode {
            ModeArg::Direct => AdapterMode::Direct,
            ModeArg::Residual => AdapterMode::Residual,
        };
    }
    if args.no_hold_out {
        t.hold_out = false;
    }
    for s in &mut t.stages {
        set(&mut s.loss.lambda, args.lambda);
        set(&mut s.lr_network, args.lr_network);
        set(&mut s.lr_tables, args.lr_tables);
    }
    for a in &args.ablate {
        match a {
            Ablation::NoAdapter => t.ablate.no_adapter = true,
            Ablation::NoMask => t.ablate.no_mask = true,
            Ablation::NoCurriculum => cfg.no_curriculum = true,
        }
    }
    if args.skip_eval {
        cfg.skip_eval = true;
    }
    if args.resume.is_some() {
        cfg.resume = args.resume.clone();
    }
    Ok(cfg)
}

pub fn resolve_render(args: &RenderArgs, file: Option<&std::path::Path>) -> Result<RenderRunConfig, Error> {
    let mut cfg: RenderRunConfig = load_or_default(file)?;
    set(&mut cfg.checkpoint, args.checkpoint.clone());
    set(&mut cfg.reference, args.reference.clone());
    set(&mut cfg.out, args.out.clone());
    if args.scene.is_some() {
        cfg.scene = args.scene.clone();
    }
    if args.ply.is_some() {
        cfg.ply = args.ply.clone();
    }
    if args.dataset.is_some() {
        cfg.dataset = args.dataset.clone();
    }
    if args.view.is_some() {
        cfg.camera.view = args.view;
    }
    if args.camera.is_some() {
        cfg.camera.file = args.camera.clone();
    }
    set(&mut cfg.camera.index, args.camera_index);
    if args.size.is_some() {
        cfg.camera.size = args.size;
    }
    if args.export_ply.is_some() {
        cfg.export_ply = args.export_ply.clone();
    }
    if let Some(bg) = args.background {
        cfg.render.background = bg;
    }
    Ok(cfg)
}

pub fn resolve_transfer(args: &TransferArgs, file: Option<&std::path::Path>) -> Result<TransferRunConfig, Error> {
    let mut cfg: TransferRunConfig = load_or_default(file)?;
    set(&mut cfg.checkpoint, args.checkpoint.clone());
    set(&mut cfg.dataset, args.dataset.clone());
    set(&mut cfg.source_scene, args.source_scene);
    set(&mut cfg.source_view, args.source_view);
    set(&mut cfg.lighting, args.lighting);
    set(&mut cfg.target_scene, args.target_scene);
    set(&mut cfg.view, args.view);
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    Ok(cfg)
}

pub fn resolve_export(args: &ExportArgs, file: Option<&std::path::Path>) -> Result<ExportRunConfig, Error> {
    let mut cfg: ExportRunConfig = load_or_default(file)?;
    set(&mut cfg.checkpoint, args.checkpoint.clone());
    set(&mut cfg.scene, args.scene.clone());
    set(&mut cfg.out, args.out.clone());
    set(&mut cfg.degree, args.degree);
    if args.dataset.is_some() {
        cfg.dataset = args.dataset.clone();
    }
    if args.reference.is_some() {
        cfg.reference = args.reference.clone();
    }
    Ok(cfg)
}

pub fn resolve_eval(args: &EvalArgs, file: Option<&std::path::Path>) -> Result<EvalRunConfig, Error> {
    let mut cfg: EvalRunConfig = load_or_default(file)?;
    set(&mut cfg.checkpoint, args.checkpoint.clone());
    set(&mut cfg.dataset, args.dataset.clone());
    if args.no_hold_out {
        cfg.hold_out = false;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.csv.is_some() {
        cfg.csv = args.csv.clone();
    }
    Ok(cfg)
}

/// Exit code for a failed run: 2 config, 3 data, 4 numeric.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Contract(_)) => EXIT_CONFIG,
        Some(Error::Numeric(_)) => EXIT_NUMERIC,
        Some(_) => EXIT_DATA,
        None => 1,
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs the parsed command line.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Gen(a) => {
            let cfg = resolve_gen(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            let manifest = commands::gen(&cfg)?;
            println!("{}", manifest.display());
        }
        Command::Train(a) => {
            let cfg = resolve_train(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            let outcome = commands::train(&cfg)?;
            if let Some(row) = outcome.metrics.last() {
                println!("{}", wildsplat::trainer::METRICS_HEADER);
                println!("{}", row.csv());
            }
            println!("{}", cfg.out.join("final.wskt").display());
        }
        Command::Render(a) => {
            let cfg = resolve_render(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            commands::render(&cfg)?;
            println!("{}", cfg.out.display());
        }
        Command::Transfer(a) => {
            let cfg = resolve_transfer(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            print_json(&commands::transfer(&cfg)?)?;
        }
        Command::ExportPly(a) => {
            let cfg = resolve_export(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            let scene = commands::export_ply(&cfg)?;
            println!("{} ({} gaussians)", cfg.out.display(), scene.len());
        }
        Command::Eval(a) => {
            let cfg = resolve_eval(a, file)?;
            if cli.print_config {
                return print_json(&cfg);
            }
            print_json(&commands::eval(&cfg)?)?;
        }
    }
    Ok(())
}
