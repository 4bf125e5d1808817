use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_scene, relight, LightingSpec, SceneConfig, ToyScene};
use crate::camera::{load_cameras, save_cameras, Camera, DepthMap};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::occlusion::{composite_occluders, default_bank, load_bank, TransientMask};
use crate::rng::derive_seed;
use crate::scene::{read_ply, write_ply, GaussianScene, SH_DEGREE};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub lightings_per_scene: usize,
    pub occlude: bool,
    pub seed: u64,
    /// Use the same lighting specs for every scene.
    pub shared_lightings: bool,
    /// Directory of RGBA PNG sprites; the built-in bank when absent.
    pub occluder_dir: Option<PathBuf>,
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_scenes: 1,
            lightings_per_scene: 3,
            occlude: false,
            seed: 0,
            shared_lightings: true,
            occluder_dir: None,
            scene: SceneConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::Config("n_scenes must be >= 1".into()));
        }
        if self.lightings_per_scene < 2 {
            return Err(Error::Config("lightings_per_scene must be >= 2".into()));
        }
        self.scene.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub index: usize,
    pub id: String,
    pub seed: u64,
    pub n_gaussians: usize,
    pub lightings: Vec<LightingSpec>,
    /// Occluder seed per `[view][lighting]`; empty without occluders.
    pub occluder_seeds: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub scenes: Vec<SceneRecord>,
}

fn lightings(seed: u64, count: usize) -> Vec<LightingSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| LightingSpec::sample(&mut rng)).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-view images for one lighting: (final, clean, mask).
type ViewImages = Vec<(Image, Image, Option<TransientMask>)>;

/// Generates the dataset under `root` and returns its manifest. The output
/// is a pure function of `cfg`.
pub fn build_dataset(root: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    cfg.validate()?;
    let bank = match &cfg.occluder_dir {
        Some(dir) if cfg.occlude => load_bank(dir)?,
        _ => default_bank(),
    };
    create_dir(root)?;
    let shared = lightings(derive_seed(cfg.seed, "lighting", 0), cfg.lightings_per_scene);
    let mut records = Vec::with_capacity(cfg.n_scenes);
    for k in 0..cfg.n_scenes {
        let seed = derive_seed(cfg.seed, "scene", k as u64);
        let toy = make_scene(seed, &cfg.scene)?;
        let specs = if cfg.shared_lightings {
            shared.clone()
        } else {
            lightings(derive_seed(seed, "lighting", k as u64), cfg.lightings_per_scene)
        };
        let n_light = specs.len();
        let occluder_seeds: Vec<Vec<u64>> = if cfg.occlude {
            (0..cfg.scene.n_views)
                .map(|v| {
                    (0..n_light)
                        .map(|l| derive_seed(seed, "occluder", (v * n_light + l) as u64))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };

        let identities = (0..toy.cameras.len())
            .into_par_iter()
            .map(|v| toy.render_identity(v, &cfg.scene.render))
            .collect::<Result<Vec<_>>>()?;
        let per_view: Vec<ViewImages> = identities
            .par_iter()
            .enumerate()
            .map(|(v, identity)| {
                specs
                    .iter()
                    .enumerate()
                    .map(|(l, spec)| {
                        let clean = relight(identity, spec);
                        if cfg.occlude {
                            let occ = composite_occluders(&clean, &bank, occluder_seeds[v][l])?;
                            Ok((occ.image, clean, Some(occ.mask)))
                        } else {
                            Ok((clean.clone(), clean, None))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let dir = root.join(format!("scene_{k}"));
        create_dir(&dir)?;
        save_cameras(&dir.join("cameras.json"), &toy.cameras)?;
        write_ply(&toy.gaussians, &dir.join("gt.ply"), SH_DEGREE)?;
        for (v, images) in per_view.iter().enumerate() {
            let vdir = dir.join(format!("view_{v}"));
            create_dir(&vdir)?;
            write_bytes(&vdir.join("depth.wsdm"), &toy.depths[v].to_bytes())?;
            identities[v].save_png(&vdir.join("light_identity.png"))?;
            for (l, (image, clean, mask)) in images.iter().enumerate() {
                image.save_png(&vdir.join(format!("light_{l}.png")))?;
                if let Some(mask) = mask {
                    mask.save_png(&vdir.join(format!("light_{l}.mask.png")))?;
                    clean.save_png(&vdir.join(format!("light_{l}.clean.png")))?;
                }
            }
        }
        records.push(SceneRecord {
            index: k,
            id: toy.gaussians.scene_id.clone(),
            seed,
            n_gaussians: toy.gaussians.len(),
            lightings: specs,
            occluder_seeds,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        scenes: records,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_bytes(&root.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

/// Read access to a generated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", manifest.version)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn n_scenes(&self) -> usize {
        self.manifest.scenes.len()
    }

    pub fn n_views(&self) -> usize {
        self.manifest.config.scene.n_views
    }

    pub fn n_lightings(&self, scene: usize) -> usize {
        self.manifest.scenes[scene].lightings.len()
    }

    pub fn occluded(&self) -> bool {
        self.manifest.config.occlude
    }

    fn scene_dir(&self, scene: usize) -> PathBuf {
        self.root.join(format!("scene_{scene}"))
    }

    fn view_dir(&self, scene: usize, view: usize) -> PathBuf {
        self.scene_dir(scene).join(format!("view_{view}"))
    }

    pub fn cameras(&self, scene: usize) -> Result<Vec<Camera>> {
        load_cameras(&self.scene_dir(scene).join("cameras.json"))
    }

    pub fn depth(&self, scene: usize, view: usize) -> Result<DepthMap> {
        DepthMap::load(&self.view_dir(scene, view).join("depth.wsdm"))
    }

    pub fn image(&self, scene: usize, view: usize, lighting: usize) -> Result<Image> {
        Image::load_png(&self.view_dir(scene, view).join(format!("light_{lighting}.png")))
    }

    /// The image before occluders were pasted in.
    pub fn clean_image(&self, scene: usize, view: usize, lighting: usize) -> Result<Image> {
        if !self.occluded() {
            return self.image(scene, view, lighting);
        }
        Image::load_png(&self.view_dir(scene, view).join(format!("light_{lighting}.clean.png")))
    }

    pub fn identity_image(&self, scene: usize, view: usize) -> Result<Image> {
        Image::load_png(&self.view_dir(scene, view).join("light_identity.png"))
    }

    pub fn mask(&self, scene: usize, view: usize, lighting: usize) -> Result<Option<TransientMask>> {
        if !self.occluded() {
            return Ok(None);
        }
        let path = self.view_dir(scene, view).join(format!("light_{lighting}.mask.png"));
        TransientMask::load_png(&path).map(Some)
    }

    pub fn gt_scene(&self, scene: usize) -> Result<GaussianScene> {
        read_ply(&self.scene_dir(scene).join("gt.ply"))
    }

    /// Regenerates the toy scene recorded for `scene`.
    pub fn toy_scene(&self, scene: usize) -> Result<ToyScene> {
        make_scene(self.manifest.scenes[scene].seed, &self.manifest.config.scene)
    }
}
