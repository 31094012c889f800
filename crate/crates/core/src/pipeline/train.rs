use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::manifest::Dataset;
use super::{mix_seed, thread_pool};
use crate::diffusion::{init_model, make_schedule, training_step, LossTerms, StepDraw, TrainContext, TrainExample};
use crate::error::{Error, Result};
use crate::motion::SkeletonDef;
use crate::numerics::{Adam, Tensor};

pub const LOG_HEADER: &str = "step,epoch,loss_s,loss_j,loss_v,loss_c,total";

/// Non-overlapping training windows cut from the train split.
pub fn training_windows(data: &Dataset, window: usize) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for s in data.train() {
        let text = data
            .text
            .get(&s.genre)
            .ok_or_else(|| Error::Validation(format!("no text embedding for genre `{}`", s.genre)))?;
        let motion = data.norm.normalize(s.motion.frames())?;
        let mut start = 0;
        while start + window <= s.motion.len() {
            out.push(TrainExample {
                motion: motion.slice_rows(start, window)?,
                w2c: s.w2c.slice_rows(start, window)?,
                stft: s.stft.slice_rows(start, window)?,
                text: text.clone(),
            });
            start += window;
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no train clip has {window} frames"
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub last: LossTerms,
}

/// Runs (or resumes) training. The per-term losses of every step go to
/// `log` as CSV; checkpoints are written atomically to `out`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    skel: &SkeletonDef,
    out: &Path,
    log: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let examples = training_windows(data, cfg.window)?;
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let ctx = TrainContext {
        model: &cfg.model,
        schedule: &schedule,
        weights: cfg.weights(),
        p_uncond: cfg.p_uncond,
        norm: &data.norm,
        skel,
    };
    let mut adam = Adam::new(cfg.lr);
    let (mut params, mut epoch, mut step) = match resume {
        Some(ck) => {
            if ck.config.model != cfg.model {
                return Err(Error::Config("checkpoint was trained with a different model config".into()));
            }
            ck.restore_adam(&mut adam);
            (ck.params.clone(), ck.epoch, ck.step)
        }
        None => (init_model(&cfg.model, cfg.seed)?, 0, 0),
    };
    let fresh_log = resume.is_none() || !log.exists();
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh_log)
        .truncate(fresh_log)
        .open(log)?;
    if fresh_log {
        writeln!(log_file, "{LOG_HEADER}")?;
    }
    let checkpoint = |params: &crate::numerics::ParamStore, adam: &Adam, epoch: usize, step: usize| {
        Checkpoint {
            config: cfg.clone(),
            skeleton: skel.clone(),
            params: params.clone(),
            adam_step: adam.step_count(),
            adam_moments: adam
                .moments()
                .map(|(n, m, v)| (n.to_string(), m.clone(), v.clone()))
                .collect(),
            epoch,
            step,
            norm: data.norm.clone(),
            genres: data.text.clone(),
        }
        .save(out)
    };

    let pool = thread_pool()?;
    let mut last = LossTerms::default();
    let mut saved_at = None;
    'epochs: while epoch < cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64)));
        for batch in order.chunks(cfg.batch) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0x5354_4550, step as u64));
            let draws: Vec<StepDraw> = batch
                .iter()
                .map(|_| StepDraw::sample(&mut rng, &ctx, cfg.window))
                .collect();
            let outputs = pool.install(|| {
                batch
                    .par_iter()
                    .zip(&draws)
                    .map(|(&i, d)| training_step(&params, &examples[i], &ctx, d))
                    .collect::<Result<Vec<_>>>()
            })?;
            let w = 1.0 / outputs.len() as f64;
            let mut terms = LossTerms::default();
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for o in outputs {
                terms = terms.add(&o.terms.scaled(w));
                for (k, g) in o.grads {
                    match grads.get_mut(&k) {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, b)| *a += w * b),
                        None => {
                            grads.insert(k, g.map(|x| x * w));
                        }
                    }
                }
            }
            if !terms.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            adam.update(&mut params, &grads)?;
            writeln!(
                log_file,
                "{step},{epoch},{},{},{},{},{}",
                terms.sample, terms.joint, terms.velocity, terms.contact, terms.total
            )?;
            last = terms;
        }
        epoch += 1;
        if epoch % cfg.checkpoint_every == 0 {
            checkpoint(&params, &adam, epoch, step)?;
            saved_at = Some(step);
            log::info!("epoch {epoch} step {step}: checkpoint written");
        }
    }
    if saved_at != Some(step) {
        checkpoint(&params, &adam, epoch, step)?;
    }
    log_file.flush()?;
    Ok(TrainSummary {
        steps: step,
        epochs: epoch,
        last,
    })
}
