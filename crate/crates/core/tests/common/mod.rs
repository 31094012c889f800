#![allow(dead_code)]

pub mod fixtures;
pub mod oracles;

use dgfm::audio::STFT_BINS;
use dgfm::conditioning::{build_prompt, stub_embedding, stub_genre_embedding};
use dgfm::denoiser::DenoiserConfig;
use dgfm::diffusion::{
    init_model, make_schedule, DiffusionSchedule, LossWeights, NormStats, TrainContext, TrainExample,
};
use dgfm::motion::{synthetic_dance, SkeletonDef};
use dgfm::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// A small, fully deterministic training setup on `k` frames.
pub struct Toy {
    pub cfg: DenoiserConfig,
    pub schedule: DiffusionSchedule,
    pub norm: NormStats,
    pub skel: SkeletonDef,
    pub params: ParamStore,
    pub example: TrainExample,
}

impl Toy {
    pub fn new(k: usize, seed: u64) -> Self {
        let cfg = DenoiserConfig {
            max_len: k.max(8),
            ..DenoiserConfig::toy()
        };
        let skel = SkeletonDef::default_52();
        let clip = synthetic_dance(&skel, seed, 40).motion.slice(0, k).unwrap();
        let reference = synthetic_dance(&skel, seed + 1, 120);
        let norm = NormStats::from_sequences(&[clip.frames(), reference.motion.frames()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let example = TrainExample {
            motion: norm.normalize(clip.frames()).unwrap(),
            w2c: stub_embedding(seed, k).unwrap().frames,
            stft: Tensor::from_fn(&[k, STFT_BINS], |_| rng.gen_range(0.0..2.0)),
            text: stub_genre_embedding(&build_prompt("Jazz").unwrap()).unwrap().vector,
        };
        Self {
            params: init_model(&cfg, seed).unwrap(),
            cfg,
            schedule: make_schedule(1000).unwrap(),
            norm,
            skel,
            example,
        }
    }

    pub fn ctx(&self) -> TrainContext<'_> {
        TrainContext {
            model: &self.cfg,
            schedule: &self.schedule,
            weights: LossWeights::default(),
            p_uncond: 0.1,
            norm: &self.norm,
            skel: &self.skel,
        }
    }

    /// Parameters with every all-zero weight matrix redrawn, so gradient
    /// checks see paths that start switched off.
    pub fn live_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ParamStore::new();
        for (name, v) in self.params.iter() {
            let moved = if v.rank() == 2 && v.data().iter().all(|&x| x == 0.0) {
                dgfm::numerics::randn(&mut rng, v.shape(), 0.2)
            } else {
                v.clone()
            };
            out.insert(name, moved);
        }
        out
    }
}
