//! Semantic and channel codecs, the single-user model that bundles them, and
//! checkpoint persistence.

pub mod channel_codec;
pub mod esc;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use channel_codec::{chan_decode, chan_encode, ChanCodecParams, ChannelCodec};
pub use esc::{positional_encoding, zero_fill, CodecConfig, EscCodec, SemanticTensor};

use crate::error::{Error, Result};
use crate::mask::{sample_mask, MaskPlan, PatchGrid};
use crate::numeric::snapshot::{read_tensor, write_tensor};
use crate::numeric::{ParamId, ParamStore, RngStream, Tensor};
use crate::scene::{Loc, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    /// Complex channel symbols per semantic row.
    pub d_c: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            d_c: 8,
        }
    }
}

/// One user's semantic codec and channel codec sharing a parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub esc: EscCodec,
    pub chan: ChannelCodec,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    params: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

const MANIFEST_FORMAT: &str = "semlink-checkpoint-v1";

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl SemanticModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, 0x1417);
        let esc = EscCodec::init(&mut store, config.codec, &mut rng)?;
        let chan = ChannelCodec::init(&mut store, "chan", config.codec.d_s, config.d_c, &mut rng)?;
        Ok(Self {
            config,
            store,
            esc,
            chan,
        })
    }

    /// Membership mask over the store for the semantic codec parameters.
    pub fn esc_mask(&self) -> Vec<bool> {
        self.mask_of(&self.esc.ids())
    }

    pub fn chan_mask(&self) -> Vec<bool> {
        self.mask_of(&self.chan.ids())
    }

    fn mask_of(&self, ids: &[ParamId]) -> Vec<bool> {
        let mut m = vec![false; self.store.len()];
        ids.iter().for_each(|id| m[id.index()] = true);
        m
    }

    pub fn chan_params(&self) -> ChanCodecParams {
        self.chan.params(&self.store)
    }

    /// Writes parameters as concatenated snapshots plus a `<path>.json`
    /// manifest with the configuration and parameter names.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for id in self.store.ids() {
            write_tensor(&mut w, self.store.get(id))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            config: self.config,
            params: self
                .store
                .ids()
                .map(|id| ManifestEntry {
                    name: self.store.name(id).to_string(),
                    shape: self.store.get(id).shape().to_vec(),
                })
                .collect(),
        };
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::parse(&mpath, format!("unknown format `{}`", manifest.format)));
        }
        let mut model = Self::init(manifest.config, 0)?;
        if manifest.params.len() != model.store.len() {
            return Err(Error::parse(&mpath, "parameter count does not match configuration"));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let ids: Vec<ParamId> = model.store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&manifest.params) {
            let t = read_tensor(&mut r).map_err(|e| Error::parse(path, e.to_string()))?;
            if entry.name != model.store.name(id) || t.shape() != model.store.get(id).shape() {
                return Err(Error::parse(
                    path,
                    format!("parameter `{}` does not match the configured model", entry.name),
                ));
            }
            model.store.set(id, t);
        }
        Ok(model)
    }

    /// Noiseless codec pass: adaptive mask, encode, zero-fill, decode.
    pub fn reconstruct(
        &self,
        scene: &Scene,
        loc: &Loc,
        p_r: f64,
        grid: &PatchGrid,
        rng: &mut RngStream,
    ) -> Result<(Tensor, SemanticTensor, MaskPlan)> {
        let plan = sample_mask(grid, loc, p_r, rng)?;
        let patches = grid.patchify(&scene.image)?;
        let kept = gather(&patches, &plan.keep)?;
        let z = self.esc.encode(&self.store, &kept, &plan.keep)?;
        let full = zero_fill(&z)?;
        let q = self.esc.decode(&self.store, &full)?;
        Ok((grid.unpatchify(&q)?, z, plan))
    }
}

/// Selected rows of a matrix, in the given order.
pub fn gather(m: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (n, d) = m.dims2()?;
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        if r >= n {
            return Err(Error::Contract(format!("row {r} outside {n} rows")));
        }
        data.extend_from_slice(m.row(r));
    }
    Tensor::new([rows.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            codec: CodecConfig {
                d_s: 8,
                enc_layers: 1,
                dec_layers: 1,
                num_heads: 2,
                patch_dim: 12,
                num_patches: 4,
            },
            d_c: 2,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = SemanticModel::init(tiny(), 5).unwrap();
        m.save(&path).unwrap();
        let back = SemanticModel::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn masks_partition_store() {
        let m = SemanticModel::init(tiny(), 5).unwrap();
        let (e, c) = (m.esc_mask(), m.chan_mask());
        assert!(e.iter().zip(&c).all(|(a, b)| a ^ b));
    }

    #[test]
    fn reconstruct_is_deterministic() {
        let m = SemanticModel::init(tiny(), 5).unwrap();
        let grid = PatchGrid::new(3, 4, 4, 2).unwrap();
        let scene = Scene::new("s", Tensor::full([3, 4, 4], 0.5), vec![]).unwrap();
        let loc = Loc::from_indices(&grid, [0, 1]).unwrap();
        let a = m
            .reconstruct(&scene, &loc, 0.3, &grid, &mut RngStream::new(1, 1))
            .unwrap();
        let b = m
            .reconstruct(&scene, &loc, 0.3, &grid, &mut RngStream::new(1, 1))
            .unwrap();
        assert_eq!(a, b);
        let all = Loc::full(&grid);
        assert!(matches!(
            m.reconstruct(&scene, &all, 1.0, &grid, &mut RngStream::new(1, 1)),
            Err(Error::Contract(_))
        ));
    }
}
