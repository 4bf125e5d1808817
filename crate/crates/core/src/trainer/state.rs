use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;

use super::adam::Moments;
use crate::appearance::{
    colors_from_table, encode_light, adapt_colors, AdapterMode, AdapterParams, EncoderParams,
};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::numerics::{Checkpoint, Tensor};
use crate::render::{rasterize, RenderConfig, RenderOutput};
use crate::rng::{stream_rng, STREAM_INIT};
use crate::scene::{Gaussian, GaussianScene, SH_LEN};

/// One registered scene: frozen geometry plus its learnable canonical table.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    /// Geometry; its SH holds the initial table and is never read for rendering.
    pub geometry: Arc<GaussianScene>,
    /// Canonical SH, `N×75`.
    pub table: Tensor,
}

impl SceneParams {
    pub fn new(geometry: GaussianScene) -> Result<Self> {
        let table = Tensor::matrix(geometry.len(), SH_LEN, geometry.sh_table())?;
        Ok(Self {
            geometry: Arc::new(geometry),
            table,
        })
    }

    /// The scene with the current canonical table.
    pub fn canonical(&self) -> Result<GaussianScene> {
        self.geometry.with_sh_table(self.table.data())
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub encoder: EncoderParams,
    pub adapter: AdapterParams,
    /// Canonical colors are rendered directly when false.
    pub use_adapter: bool,
    pub scenes: BTreeMap<String, SceneParams>,
    pub moments: BTreeMap<String, Moments>,
    /// Completed optimizer steps over the whole curriculum.
    pub iteration: u64,
    pub stage: u8,
}

impl TrainState {
    /// Fresh parameters drawn from the "init" stream of `seed`.
    pub fn new(seed: u64, mode: AdapterMode, use_adapter: bool) -> Self {
        let mut rng: ChaCha8Rng = stream_rng(seed, STREAM_INIT);
        let encoder = EncoderParams::init(&mut rng);
        let adapter = AdapterParams::init(mode, &mut rng);
        Self {
            encoder,
            adapter,
            use_adapter,
            scenes: BTreeMap::new(),
            moments: BTreeMap::new(),
            iteration: 0,
            stage: 1,
        }
    }

    pub fn scene(&self, id: &str) -> Result<&SceneParams> {
        self.scenes
            .get(id)
            .ok_or_else(|| Error::Data(format!("scene {id:?} is not in the training state")))
    }

    /// Renders scene `id` from `camera` under the lighting of `reference`.
    /// This is the inference path shared by evaluation and the CLI.
    pub fn render(&self, id: &str, camera: &Camera, reference: &Image, cfg: &RenderConfig) -> Result<RenderOutput> {
        let params = self.scene(id)?;
        let table = self.adapted_table(params, reference)?;
        let colors = colors_from_table(&params.geometry, &table, camera)?;
        rasterize(&params.geometry, Some(&colors), &camera.intrinsics, &camera.extrinsics, cfg)
    }

    /// SH table used to render `params` under `reference`'s lighting.
    pub fn adapted_table(&self, params: &SceneParams, reference: &Image) -> Result<Tensor> {
        if !self.use_adapter {
            return Ok(params.table.clone());
        }
        let code = encode_light(reference, &self.encoder)?;
        adapt_colors(&params.table, &code, &self.adapter)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.extend_prefixed("enc.", &self.encoder.to_checkpoint());
        ckpt.extend_prefixed("adp.", &self.adapter.to_checkpoint());
        ckpt.insert("state.iteration", Tensor::scalar(self.iteration as f64));
        ckpt.insert("state.stage", Tensor::scalar(f64::from(self.stage)));
        ckpt.insert("state.use_adapter", Tensor::scalar(if self.use_adapter { 1.0 } else { 0.0 }));
        for (id, p) in &self.scenes {
            let g = &p.geometry.gaussians;
            let n = g.len();
            let flat = |f: &dyn Fn(&Gaussian) -> Vec<f64>| g.iter().flat_map(f).collect::<Vec<_>>();
            let mat = |cols: usize, data: Vec<f64>| Tensor::matrix(n, cols, data).expect("sizes match");
            ckpt.insert(format!("scene.{id}.xyz"), mat(3, flat(&|g| g.position.as_slice().to_vec())));
            ckpt.insert(format!("scene.{id}.log_scale"), mat(3, flat(&|g| g.log_scale.as_slice().to_vec())));
            ckpt.insert(format!("scene.{id}.rotation"), mat(4, flat(&|g| g.rotation.to_vec())));
            ckpt.insert(format!("scene.{id}.opacity_logit"), mat(1, flat(&|g| vec![g.opacity_logit])));
            ckpt.insert(format!("scene.{id}.init_sh"), mat(SH_LEN, p.geometry.sh_table()));
            ckpt.insert(format!("scene.{id}.sh"), p.table.clone());
        }
        for (name, m) in &self.moments {
            ckpt.insert(format!("opt.{name}.m"), m.m.clone());
            ckpt.insert(format!("opt.{name}.v"), m.v.clone());
            ckpt.insert(format!("opt.{name}.step"), Tensor::scalar(m.step as f64));
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let encoder = EncoderParams::from_checkpoint(&ckpt.strip_prefix("enc."))?;
        let adapter = AdapterParams::from_checkpoint(&ckpt.strip_prefix("adp."))?;
        let scalar = |name: &str| -> Result<f64> {
            let t = ckpt.require(name)?;
            if t.len() != 1 {
                return Err(Error::Data(format!("{name} must be a scalar")));
            }
            Ok(t.data()[0])
        };
        let mut scenes = BTreeMap::new();
        let ids: Vec<String> = ckpt
            .entries()
            .iter()
            .filter_map(|(name, _)| name.strip_prefix("scene.")?.strip_suffix(".xyz").map(str::to_owned))
            .collect();
        for id in ids {
            let get = |field: &str| ckpt.require(&format!("scene.{id}.{field}"));
            let xyz = get("xyz")?;
            let (n, _) = xyz.dims2()?;
            let (ls, rot, op, init) = (get("log_scale")?, get("rotation")?, get("opacity_logit")?, get("init_sh")?);
            let expect = [(ls, 3), (rot, 4), (op, 1), (init, SH_LEN)];
            if expect.iter().any(|(t, c)| t.shape() != [n, *c]) || xyz.shape() != [n, 3] {
                return Err(Error::Data(format!("scene {id:?}: inconsistent tensor shapes")));
            }
            let gaussians = (0..n)
                .map(|i| {
                    let r = rot.row(i);
                    let mut sh = [0.0; SH_LEN];
                    sh.copy_from_slice(init.row(i));
                    Gaussian {
                        position: Vector3::from_row_slice(xyz.row(i)),
                        opacity_logit: op.row(i)[0],
                        rotation: [r[0], r[1], r[2], r[3]],
                        log_scale: Vector3::from_row_slice(ls.row(i)),
                        sh,
                    }
                })
                .collect();
            let table = get("sh")?.clone();
            if table.shape() != [n, SH_LEN] {
                return Err(Error::Data(format!("scene {id:?}: table shape {:?}", table.shape())));
            }
            let geometry = GaussianScene::new(id.clone(), gaussians);
            geometry.validate()?;
            scenes.insert(
                id,
                SceneParams {
                    geometry: Arc::new(geometry),
                    table,
                },
            );
        }
        let mut moments = BTreeMap::new();
        let names: Vec<String> = ckpt
            .entries()
            .iter()
            .filter_map(|(name, _)| name.strip_prefix("opt.")?.strip_suffix(".step").map(str::to_owned))
            .collect();
        for name in names {
            moments.insert(
                name.clone(),
                Moments {
                    m: ckpt.require(&format!("opt.{name}.m"))?.clone(),
                    v: ckpt.require(&format!("opt.{name}.v"))?.clone(),
                    step: scalar(&format!("opt.{name}.step"))? as u64,
                },
            );
        }
        Ok(Self {
            encoder,
            adapter,
            use_adapter: scalar("state.use_adapter")? != 0.0,
            scenes,
            moments,
            iteration: scalar("state.iteration")? as u64,
            stage: scalar("state.stage")? as u8,
        })
    }
}
