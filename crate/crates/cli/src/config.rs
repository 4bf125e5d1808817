//! Resolved per-command configurations. Each one can be read from a JSON
//! file, is then patched by command-line flags, and is echoed by
//! `--print-config`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wildsplat::render::RenderConfig;
use wildsplat::scenegen::DatasetConfig;
use wildsplat::trainer::TrainConfig;
use wildsplat::Error;

/// Reads `path` as JSON, rejecting unknown keys; the default when absent.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub out: PathBuf,
    pub dataset: DatasetConfig,
}

impl GenConfig {
    /// Dataset presets for each curriculum stage.
    pub fn apply_stage(&mut self, stage: u8) -> Result<(), Error> {
        let d = &mut self.dataset;
        match stage {
            1 => {
                d.n_scenes = 1;
                d.occlude = false;
            }
            2 => {
                d.n_scenes = 3;
                d.occlude = false;
            }
            3 => {
                d.n_scenes = 3;
                d.occlude = true;
            }
            s => return Err(Error::Config(format!("--stage must be 1, 2 or 3, got {s}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("an output directory is required".into()));
        }
        self.dataset.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub out: PathBuf,
    pub train: TrainConfig,
    /// Replace the curriculum by its last stage run for the whole budget.
    pub no_curriculum: bool,
    pub resume: Option<PathBuf>,
    pub skip_eval: bool,
}

impl TrainRunConfig {
    /// The configuration actually handed to the trainer.
    pub fn effective(&self) -> TrainConfig {
        if self.no_curriculum {
            self.train.without_curriculum()
        } else {
            self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("an output directory is required".into()));
        }
        self.effective().validate()
    }
}

/// Where the novel camera comes from: a dataset view or a cameras file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub view: Option<usize>,
    pub file: Option<PathBuf>,
    /// Camera index inside `file`.
    pub index: usize,
    /// Output `[width, height]`; intrinsics are rescaled to match.
    pub size: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderRunConfig {
    pub checkpoint: PathBuf,
    /// Scene id in the checkpoint, or its index in `dataset`.
    pub scene: Option<String>,
    /// Geometry and canonical colors from a PLY instead of the checkpoint.
    pub ply: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub reference: PathBuf,
    pub camera: CameraSpec,
    pub out: PathBuf,
    pub export_ply: Option<PathBuf>,
    pub render: RenderConfig,
}

impl RenderRunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.scene.is_none() == self.ply.is_none() {
            return Err(Error::Config("give exactly one of --scene and --ply".into()));
        }
        if self.camera.view.is_none() == self.camera.file.is_none() {
            return Err(Error::Config("give exactly one of --view and --camera".into()));
        }
        if self.camera.view.is_some() && self.dataset.is_none() {
            return Err(Error::Config("--view needs --dataset".into()));
        }
        if self.out.as_os_str().is_empty() || self.reference.as_os_str().is_empty() {
            return Err(Error::Config("--out and --reference are required".into()));
        }
        if matches!(self.camera.size, Some([0, _] | [_, 0])) {
            return Err(Error::Config("image size must be positive".into()));
        }
        self.render.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferRunConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Scene whose image supplies the lighting.
    pub source_scene: usize,
    pub source_view: usize,
    pub lighting: usize,
    /// Scene that is rendered.
    pub target_scene: usize,
    pub view: usize,
    pub out: Option<PathBuf>,
    pub render: RenderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportRunConfig {
    pub checkpoint: PathBuf,
    pub scene: String,
    pub dataset: Option<PathBuf>,
    /// Bake the lighting of this image into the exported coefficients.
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
    /// 3 writes the widely supported degree-3 layout; 4 keeps every coefficient.
    pub degree: usize,
}

impl Default for ExportRunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            scene: String::new(),
            dataset: None,
            reference: None,
            out: PathBuf::new(),
            degree: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Label the last view and lighting of each scene as held out.
    pub hold_out: bool,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub render: RenderConfig,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            dataset: PathBuf::new(),
            hold_out: true,
            out: None,
            csv: None,
            render: RenderConfig::default(),
        }
    }
}
