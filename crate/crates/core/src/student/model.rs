//! Pillar encoder, two-frame U-Net and per-point flow decoder.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pillars::{pillar_cells, pillar_features, Pseudoimage};
use super::PillarConfig;
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::{Activation, Bound, Conv2d, ConvTranspose2d, Graph, Mlp, ParamStore, Tensor, Var};
use crate::scene::io::{read_json, write_json};
use crate::scene::{FlowField, PointCloud, Vec3};
use crate::{Error, Result};

const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    config: PillarConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    config: PillarConfig,
    store: ParamStore,
    embed: Mlp,
    /// One 3×3 conv per level; level 0 keeps resolution, later levels halve it.
    encoder: Vec<Conv2d>,
    /// Upsampling and fusion convs, coarsest level first.
    up: Vec<ConvTranspose2d>,
    decoder: Vec<Conv2d>,
    head: Mlp,
}

/// Encoder activations of one frame plus its point-to-cell map.
struct Encoded {
    skips: Vec<Var>,
    cells: Vec<usize>,
}

impl StudentModel {
    pub fn new(config: PillarConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        let ch = config.channels();
        let levels = config.unet_levels;

        let embed = Mlp::new(&mut store, "embed", &[4, e, e], Activation::Relu, &mut rng)?;
        let encoder = (0..levels)
            .map(|i| {
                let (cin, stride) = if i == 0 { (e, 1) } else { (ch[i - 1], 2) };
                Conv2d::new(
                    &mut store,
                    &format!("enc.{i}"),
                    cin,
                    ch[i],
                    3,
                    stride,
                    &mut rng,
                )
            })
            .collect();
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        let mut width = 2 * ch[levels - 1];
        for (k, i) in (1..levels).rev().enumerate() {
            up.push(ConvTranspose2d::new(
                &mut store,
                &format!("up.{k}"),
                width,
                ch[i - 1],
                2,
                &mut rng,
            ));
            decoder.push(Conv2d::new(
                &mut store,
                &format!("dec.{k}"),
                3 * ch[i - 1],
                ch[i - 1],
                3,
                1,
                &mut rng,
            ));
            width = ch[i - 1];
        }
        let head = Mlp::new(
            &mut store,
            "head",
            &[3 + width, config.decoder_hidden, config.decoder_hidden, 3],
            Activation::Relu,
            &mut rng,
        )?;
        Ok(StudentModel {
            config,
            store,
            embed,
            encoder,
            up,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &PillarConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Pooled pillar embedding of one cloud.
    pub fn pillarize(&self, cloud: &PointCloud) -> Result<Pseudoimage> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (pooled, cells) = self.pool(&mut g, &p, cloud)?;
        Ok(Pseudoimage {
            grid: self.config.grid_cells(),
            channels: self.config.embed_dim,
            data: g.value(pooled).data().to_vec(),
            cells,
        })
    }

    /// `[grid², embed_dim]` pooled features.
    fn pool(&self, g: &mut Graph, p: &Bound, cloud: &PointCloud) -> Result<(Var, Vec<usize>)> {
        let cells = pillar_cells(cloud, &self.config)?;
        let grid = self.config.grid_cells();
        let feats = Tensor::matrix(cloud.len(), 4, pillar_features(cloud, &cells, &self.config))?;
        let x = g.constant(feats);
        let emb = self.embed.forward(g, p, x)?;
        let pooled = g.segment_max(emb, &cells, grid * grid)?;
        Ok((pooled, cells))
    }

    fn encode(&self, g: &mut Graph, p: &Bound, cloud: &PointCloud) -> Result<Encoded> {
        let grid = self.config.grid_cells();
        let (pooled, cells) = self.pool(g, p, cloud)?;
        let chw = g.transpose(pooled)?;
        let mut h = g.reshape(chw, &[self.config.embed_dim, grid, grid])?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for conv in &self.encoder {
            let y = conv.forward(g, p, h)?;
            h = g.relu(y);
            skips.push(h);
        }
        Ok(Encoded { skips, cells })
    }

    /// Flow for every point of `cloud_t`, as a `[N, 3]` graph node.
    pub fn forward_on_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud_t: &PointCloud,
        cloud_t1: &PointCloud,
    ) -> Result<Var> {
        cloud_t.ensure_non_empty("cloud_t")?;
        cloud_t1.ensure_non_empty("cloud_t1")?;
        let a = self.encode(g, p, cloud_t)?;
        let b = self.encode(g, p, cloud_t1)?;
        let top = self.encoder.len() - 1;
        let mut h = g.concat(&[a.skips[top], b.skips[top]], 0)?;
        for (k, level) in (0..top).rev().enumerate() {
            let y = self.up[k].forward(g, p, h)?;
            let y = g.relu(y);
            let fused = g.concat(&[y, a.skips[level], b.skips[level]], 0)?;
            let y = self.decoder[k].forward(g, p, fused)?;
            h = g.relu(y);
        }

        let grid = self.config.grid_cells();
        let channels = g.shape(h)[0];
        let flat = g.reshape(h, &[channels, grid * grid])?;
        let per_cell = g.transpose(flat)?;
        let per_point = g.gather_rows(per_cell, &a.cells)?;
        let scale = 1.0 / self.config.area_half_extent;
        let coords = Tensor::matrix(
            cloud_t.len(),
            3,
            cloud_t
                .points
                .iter()
                .flat_map(|q| (*q * scale).to_array())
                .collect(),
        )?;
        let coords = g.constant(coords);
        let input = g.concat(&[coords, per_point], 1)?;
        self.head.forward(g, p, input)
    }

    pub fn forward(&self, cloud_t: &PointCloud, cloud_t1: &PointCloud) -> Result<FlowField> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let out = self.forward_on_graph(&mut g, &p, cloud_t, cloud_t1)?;
        Ok(flow_from_tensor(g.value(out)))
    }

    /// Writes the checkpoint to `path` and the config to [`sidecar_path`].
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, self.store.entries())?;
        write_json(
            &sidecar_path(path),
            &Sidecar {
                version: SIDECAR_VERSION,
                config: self.config.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = read_json(&sidecar_path(path))?;
        if sidecar.version != SIDECAR_VERSION {
            return Err(Error::format(
                &sidecar_path(path),
                format!("unsupported version {}", sidecar.version),
            ));
        }
        let mut model = StudentModel::new(sidecar.config, 0)?;
        model.store.load_entries(load_checkpoint(path)?)?;
        Ok(model)
    }
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn flow_from_tensor(t: &Tensor) -> FlowField {
    FlowField::new(
        t.data()
            .chunks(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect(),
    )
}

/// Convenience wrapper over [`StudentModel::forward`].
pub fn student_forward(
    model: &StudentModel,
    cloud_t: &PointCloud,
    cloud_t1: &PointCloud,
) -> Result<FlowField> {
    model.forward(cloud_t, cloud_t1)
}
