//! Training checkpoints stored as tensor containers.
//!
//! Entries: `param.<name>`, `adam.m.<name>`, `adam.v.<name>`, `genre.<label>`
//! (text embeddings), `norm.mean`, `norm.std`, and `meta.*` scalars. The
//! training config and skeleton are stored as byte tensors holding their
//! text form, so they survive the 32-bit payload exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::TrainConfig;
use crate::diffusion::NormStats;
use crate::error::{Error, Result};
use crate::format::{load_container, save_container};
use crate::motion::SkeletonDef;
use crate::numerics::{Adam, ParamStore, Tensor};

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub skeleton: SkeletonDef,
    pub params: ParamStore,
    pub adam_step: u64,
    /// `(name, first moment, second moment)`.
    pub adam_moments: Vec<(String, Tensor, Tensor)>,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: usize,
    pub norm: NormStats,
    pub genres: BTreeMap<String, Tensor>,
}

fn text_tensor(s: &str) -> Tensor {
    let bytes = s.as_bytes();
    Tensor::new(vec![bytes.len()], bytes.iter().map(|&b| b as f64).collect()).expect("rank-1 shape")
}

fn tensor_text(t: &Tensor, what: &str) -> Result<String> {
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Format(format!("{what}: not a byte string")))
            }
        })
        .collect::<Result<_>>()?;
    String::from_utf8(bytes).map_err(|_| Error::Format(format!("{what}: invalid UTF-8")))
}

fn counter(v: usize) -> Result<Tensor> {
    // f32 payloads hold integers exactly up to 2^24
    if v > 1 << 24 {
        return Err(Error::Format(format!("counter {v} too large to store")));
    }
    Ok(Tensor::scalar(v as f64))
}

impl Checkpoint {
    pub fn restore_adam(&self, adam: &mut Adam) {
        adam.restore(self.adam_step, self.adam_moments.clone());
    }

    pub fn entries(&self) -> Result<Vec<(String, Tensor)>> {
        let mut out = vec![
            ("meta.config".to_string(), text_tensor(&self.config.to_toml()?)),
            ("meta.skeleton".to_string(), text_tensor(&self.skeleton.to_config())),
            ("meta.epoch".to_string(), counter(self.epoch)?),
            ("meta.step".to_string(), counter(self.step)?),
            ("meta.adam_step".to_string(), counter(self.adam_step as usize)?),
            ("norm.mean".to_string(), self.norm.mean.clone()),
            ("norm.std".to_string(), self.norm.std.clone()),
        ];
        for (g, v) in &self.genres {
            out.push((format!("genre.{g}"), v.clone()));
        }
        for (name, v) in self.params.iter() {
            out.push((format!("param.{name}"), v.clone()));
        }
        for (name, m, v) in &self.adam_moments {
            out.push((format!("adam.m.{name}"), m.clone()));
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        Ok(out)
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let mut take = |k: &str| {
            map.remove(k)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{k}`")))
        };
        let config = TrainConfig::from_toml(&tensor_text(&take("meta.config")?, "meta.config")?)?;
        let skeleton = SkeletonDef::parse(&tensor_text(&take("meta.skeleton")?, "meta.skeleton")?)?;
        let epoch = take("meta.epoch")?.item()? as usize;
        let step = take("meta.step")?.item()? as usize;
        let adam_step = take("meta.adam_step")?.item()? as u64;
        let norm = NormStats {
            mean: take("norm.mean")?,
            std: take("norm.std")?,
        };
        let mut params = ParamStore::new();
        let mut genres = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (k, t) in map {
            if let Some(n) = k.strip_prefix("param.") {
                params.insert(n, t);
            } else if let Some(n) = k.strip_prefix("genre.") {
                genres.insert(n.to_string(), t);
            } else if let Some(n) = k.strip_prefix("adam.m.") {
                m.insert(n.to_string(), t);
            } else if let Some(n) = k.strip_prefix("adam.v.") {
                v.insert(n.to_string(), t);
            } else {
                return Err(Error::Format(format!("unexpected checkpoint entry `{k}`")));
            }
        }
        let mut adam_moments = Vec::with_capacity(m.len());
        for (n, mt) in m {
            let vt = v
                .remove(&n)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `adam.v.{n}`")))?;
            adam_moments.push((n, mt, vt));
        }
        if let Some(n) = v.keys().next() {
            return Err(Error::Format(format!("checkpoint lacks `adam.m.{n}`")));
        }
        Ok(Self {
            config,
            skeleton,
            params,
            adam_step,
            adam_moments,
            epoch,
            step,
            norm,
            genres,
        })
    }

    /// Atomic: a reader sees either the previous file or the complete new one.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_container(path, &self.entries()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(load_container(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::init_model;
    use crate::motion::POSE_DIM;

    #[test]
    fn round_trip_keeps_everything() {
        let mut config = TrainConfig::default();
        config.model = DenoiserConfig::toy();
        config.window = 8;
        config.guidance = 2.7;
        let params = init_model(&config.model, 1).unwrap();
        let moments = params
            .iter()
            .take(3)
            .map(|(n, t)| (n.to_string(), t.map(|x| x * 0.5), t.map(|x| x * x)))
            .collect();
        let ck = Checkpoint {
            config,
            skeleton: SkeletonDef::default_52(),
            params,
            adam_step: 17,
            adam_moments: moments,
            epoch: 3,
            step: 17,
            norm: NormStats {
                mean: Tensor::full(&[POSE_DIM], 0.25),
                std: Tensor::full(&[POSE_DIM], 2.0),
            },
            genres: [("Jazz".to_string(), Tensor::full(&[512], 0.5))].into_iter().collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.dgfm");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.skeleton, ck.skeleton);
        assert_eq!((back.epoch, back.step, back.adam_step), (3, 17, 17));
        assert_eq!(back.genres, ck.genres);
        assert_eq!(back.norm, ck.norm);
        assert_eq!(back.params.len(), ck.params.len());
        for (n, t) in ck.params.iter() {
            let b = back.params.get(n).unwrap();
            assert!(t.max_abs_diff(b) <= 1e-6 * (1.0 + t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        }
        assert_eq!(back.adam_moments.len(), 3);
    }

    #[test]
    fn missing_entries_are_format_errors() {
        assert!(matches!(Checkpoint::from_entries(vec![]), Err(Error::Format(_))));
    }
}
