use std::path::{Path, PathBuf};

use dgfm::audio::{write_wav, AudioClip, ANALYSIS_RATE, HOP};
use dgfm::denoiser::DenoiserConfig;
use dgfm::format::save_tensor;
use dgfm::motion::{synthetic_dance, SkeletonDef};
use dgfm::pipeline::TrainConfig;

/// Click track at the analysis rate lasting exactly `frames` feature frames.
pub fn click_track(frames: usize, period_s: f64) -> AudioClip {
    let n = frames * HOP;
    let sr = ANALYSIS_RATE as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let phase = t % period_s;
            if phase < 0.02 {
                (1.0 - phase / 0.02) * (2.0 * std::f64::consts::PI * 880.0 * t).sin()
            } else {
                0.0
            }
        })
        .collect();
    AudioClip::new(samples, ANALYSIS_RATE).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// Writes `clips` synthetic motions with click tracks and a manifest whose
/// first `train` records are in the train split.
pub fn dataset(clips: usize, train: usize, frames: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for sub in ["motion", "music"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    let skel = SkeletonDef::default_52();
    let mut lines = vec!["# synthetic fixture".to_string(), "genres\tJazz\tPop".to_string()];
    for i in 0..clips {
        let clip = synthetic_dance(&skel, i as u64, frames);
        save_tensor(&root.join(format!("motion/c{i}.dgfm")), clip.motion.frames()).unwrap();
        write_wav(&root.join(format!("music/c{i}.wav")), &click_track(frames, 0.5 + 0.1 * i as f64)).unwrap();
        let split = if i < train { "train" } else { "test" };
        let genre = if i % 2 == 0 { "Jazz" } else { "Pop" };
        lines.push(format!("{split}\t{genre}\tmotion/c{i}.dgfm\taudio:music/c{i}.wav\tstub:{}", 100 + i));
    }
    let manifest = root.join("manifest.tsv");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    Fixture { dir, manifest }
}

pub fn tiny_config(manifest: &Path, window: usize) -> TrainConfig {
    TrainConfig {
        manifest: manifest.to_path_buf(),
        lr: 1e-3,
        batch: 2,
        epochs: 3,
        window,
        diffusion_steps: 20,
        checkpoint_every: 1,
        seed: 5,
        model: DenoiserConfig {
            hidden: 16,
            layers: 1,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.1,
            max_len: window,
        },
        ..TrainConfig::default()
    }
}
