//! Cosine noise schedule, forward noising, the training objective with
//! kinematic auxiliary losses, and classifier-free guided DDPM sampling.
//!
//! The network predicts the clean sample directly. Poses are z-scored per
//! dimension; the joint and contact terms run forward kinematics on the
//! de-normalized poses.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{fuse_graph, EMBED_DIM};
use crate::denoiser::{self, DenoiserConfig, ForwardOptions};
use crate::error::{Error, Result};
use crate::motion::{fk_graph, SkeletonDef, CONTACT_DIM, POSE_DIM};
use crate::numerics::{randn, Bound, Graph, ParamStore, Tensor, Var};

pub const DEFAULT_STEPS: usize = 1000;
pub const CLIP_BOUND: f64 = 5.0;
const COSINE_S: f64 = 0.008;
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Cosine schedule with `steps` steps; `beta` clipped to `[1e-8, 0.999]`.
/// Vectors are indexed by `t - 1` for `t` in `1..=steps`.
pub fn make_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::Validation(format!("schedule needs at least 2 steps, got {steps}")));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_S) / (1.0 + COSINE_S) * FRAC_PI_2;
        x.cos().powi(2)
    };
    let beta: Vec<f64> = (1..=steps)
        .map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-8, 0.999))
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule { beta, alpha, alpha_bar })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index { t, max: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `alpha_bar` at `t - 1`, with `alpha_bar_0 = 1`.
    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// Posterior variance `beta_t (1 - abar_{t-1}) / (1 - abar_t)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let i = self.check(t)?;
        Ok(self.beta[i] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar[i]))
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0 m0 + ct d_t`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let i = self.check(t)?;
        let ab_prev = self.alpha_bar_prev(t);
        let denom = 1.0 - self.alpha_bar[i];
        Ok((
            ab_prev.sqrt() * self.beta[i] / denom,
            self.alpha[i].sqrt() * (1.0 - ab_prev) / denom,
        ))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `sqrt(abar_t) m0 + sqrt(1 - abar_t) noise`.
pub fn q_sample(s: &DiffusionSchedule, m0: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
    check_same("q_sample", m0, noise)?;
    let ab = s.alpha_bar_at(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    m0.zip_map(noise, |x, n| a * x + b * n)
}

/// One forward kernel step `d_t = sqrt(alpha_t) d_{t-1} + sqrt(beta_t) noise`.
pub fn q_step(s: &DiffusionSchedule, prev: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
    check_same("q_step", prev, noise)?;
    let i = s.check(t)?;
    let (a, b) = (s.alpha[i].sqrt(), s.beta[i].sqrt());
    prev.zip_map(noise, |x, n| a * x + b * n)
}

/// Per-dimension z-score statistics of the training poses.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Tensor,
    pub std: Tensor,
}

impl NormStats {
    /// Statistics over all rows of all sequences. Dimensions with standard
    /// deviation below 1e-6 get a scale of 1.
    pub fn from_sequences(seqs: &[&Tensor]) -> Result<Self> {
        if let Some(s) = seqs.iter().find(|s| s.cols() != POSE_DIM) {
            return Err(Error::Shape {
                op: "normalization",
                lhs: s.shape().to_vec(),
                rhs: vec![POSE_DIM],
            });
        }
        let n: usize = seqs.iter().map(|s| s.rows()).sum();
        if n == 0 {
            return Err(Error::InsufficientData("no frames to normalize".into()));
        }
        let mut mean = vec![0.0; POSE_DIM];
        for s in seqs {
            for (i, v) in s.data().iter().enumerate() {
                mean[i % POSE_DIM] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; POSE_DIM];
        for s in seqs {
            for (i, v) in s.data().iter().enumerate() {
                var[i % POSE_DIM] += (v - mean[i % POSE_DIM]).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt())
            .map(|s| if s < STD_FLOOR { 1.0 } else { s })
            .collect();
        Ok(Self {
            mean: Tensor::new(vec![POSE_DIM], mean)?,
            std: Tensor::new(vec![POSE_DIM], std)?,
        })
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| v * s + m)
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if x.cols() != POSE_DIM {
            return Err(Error::Shape {
                op: "normalization",
                lhs: x.shape().to_vec(),
                rhs: vec![POSE_DIM],
            });
        }
        let (m, s) = (self.mean.data(), self.std.data());
        Ok(Tensor::from_fn(x.shape(), |i| f(x.data()[i], m[i % POSE_DIM], s[i % POSE_DIM])))
    }

    fn denormalize_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.constant(self.std.clone());
        let m = g.constant(self.mean.clone());
        let y = g.mul(x, s)?;
        g.add(y, m)
    }
}

/// Weights of the auxiliary terms. `L_J` and `L_V` sum over 156 and 319
/// coordinates per frame while `L_S` is a per-coordinate mean, so the
/// defaults of roughly one over those counts put every weighted term on the
/// scale of `L_S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_j: f64,
    pub lambda_v: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_j: 0.006,
            lambda_v: 0.003,
            lambda_c: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lambda_j", self.lambda_j), ("lambda_v", self.lambda_v), ("lambda_c", self.lambda_c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub w: f64,
    pub p_uncond: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { w: 2.7, p_uncond: 0.1 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Config(format!("guidance weight {} must be >= 0", self.w)));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::Config(format!("p_uncond {} outside [0, 1)", self.p_uncond)));
        }
        Ok(())
    }
}

/// Values of the individual loss terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub sample: f64,
    pub joint: f64,
    pub velocity: f64,
    pub contact: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.sample, self.joint, self.velocity, self.contact, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            sample: self.sample * s,
            joint: self.joint * s,
            velocity: self.velocity * s,
            contact: self.contact * s,
            total: self.total * s,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            sample: self.sample + o.sample,
            joint: self.joint + o.joint,
            velocity: self.velocity + o.velocity,
            contact: self.contact + o.contact,
            total: self.total + o.total,
        }
    }
}

fn frame_diff(g: &mut Graph, x: Var) -> Result<Var> {
    let k = g.shape(x)[0];
    let next = g.slice(x, 0, 1, k - 1)?;
    let prev = g.slice(x, 0, 0, k - 1)?;
    g.sub(next, prev)
}

fn foot_columns(g: &mut Graph, pos: Var, skel: &SkeletonDef) -> Result<Var> {
    let cols = skel
        .foot_joints
        .iter()
        .map(|&j| g.slice(pos, 1, 3 * j, 3))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&cols, 1)
}

/// Builds the objective for a normalized prediction against a normalized
/// target: sample MSE, joint-position error, velocity error and foot
/// sliding under predicted contacts (thresholded at 0.5).
pub fn loss_graph(
    g: &mut Graph,
    target: &Tensor,
    pred: Var,
    norm: &NormStats,
    skel: &SkeletonDef,
    weights: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let k = target.rows();
    let tv = g.constant(target.clone());
    let ls = g.mse(pred, tv)?;

    let raw_target = g.constant(norm.denormalize(target)?);
    let raw_pred = norm.denormalize_graph(g, pred)?;
    let fk_t = fk_graph(g, raw_target, skel)?;
    let fk_p = fk_graph(g, raw_pred, skel)?;
    let lj = g.mse(fk_p, fk_t)?;
    let lj = g.scale(lj, (3 * skel.len()) as f64)?;

    let mut total = ls;
    let jt = g.scale(lj, weights.lambda_j)?;
    total = g.add(total, jt)?;
    let (mut lv_val, mut lc_val) = (0.0, 0.0);
    if k >= 2 {
        let dp = frame_diff(g, pred)?;
        let dt = frame_diff(g, tv)?;
        let lv = g.mse(dp, dt)?;
        let lv = g.scale(lv, POSE_DIM as f64)?;
        lv_val = g.value(lv).item()?;

        let feet = foot_columns(g, fk_p, skel)?;
        let slide = frame_diff(g, feet)?;
        let contact = g.value(raw_pred).clone();
        let mask = Tensor::from_fn(&[k - 1, 3 * CONTACT_DIM], |i| {
            let (f, c) = (i / (3 * CONTACT_DIM), (i % (3 * CONTACT_DIM)) / 3);
            f64::from(u8::from(contact.at(f, c) > 0.5))
        });
        let mv = g.constant(mask);
        let masked = g.mul(slide, mv)?;
        let zero = g.constant(Tensor::zeros(&[k - 1, 3 * CONTACT_DIM]));
        let lc = g.mse(masked, zero)?;
        let lc = g.scale(lc, (3 * CONTACT_DIM) as f64)?;
        lc_val = g.value(lc).item()?;

        let vt = g.scale(lv, weights.lambda_v)?;
        total = g.add(total, vt)?;
        let ct = g.scale(lc, weights.lambda_c)?;
        total = g.add(total, ct)?;
    }
    let terms = LossTerms {
        sample: g.value(ls).item()?,
        joint: g.value(lj).item()?,
        velocity: lv_val,
        contact: lc_val,
        total: g.value(total).item()?,
    };
    Ok((total, terms))
}

/// Adds the learned null embeddings used when conditioning is dropped.
pub fn init_null_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    store.insert("null.music", randn(rng, &[EMBED_DIM], 0.02));
    store.insert("null.text", randn(rng, &[EMBED_DIM], 0.02));
}

/// All trainable parameters: fusion, denoiser and null embeddings.
pub fn init_model(cfg: &DenoiserConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    crate::conditioning::init_fusion_params(&mut store, &mut rng);
    denoiser::init_params(cfg, &mut store, &mut rng)?;
    init_null_params(&mut store, &mut rng);
    Ok(store)
}

/// One training example, poses already normalized.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub motion: Tensor,
    pub w2c: Tensor,
    pub stft: Tensor,
    pub text: Tensor,
}

/// Everything a training step needs besides parameters and data.
pub struct TrainContext<'a> {
    pub model: &'a DenoiserConfig,
    pub schedule: &'a DiffusionSchedule,
    pub weights: LossWeights,
    pub p_uncond: f64,
    pub norm: &'a NormStats,
    pub skel: &'a SkeletonDef,
}

/// The random choices of one step, drawn up front so a step can be replayed.
#[derive(Clone, Debug)]
pub struct StepDraw {
    pub t: usize,
    pub noise: Tensor,
    pub unconditional: bool,
    pub dropout_seed: u64,
}

impl StepDraw {
    pub fn sample(rng: &mut ChaCha8Rng, ctx: &TrainContext<'_>, frames: usize) -> Self {
        let t = rng.gen_range(1..=ctx.schedule.steps());
        let noise = randn(rng, &[frames, POSE_DIM], 1.0);
        let unconditional = rng.gen::<f64>() < ctx.p_uncond;
        Self {
            t,
            noise,
            unconditional,
            dropout_seed: rng.gen(),
        }
    }
}

/// Music and text conditioning on the graph, or the null embeddings.
fn conditioning_vars(
    g: &mut Graph,
    p: &Bound,
    ex: &TrainExample,
    unconditional: bool,
) -> Result<(Var, Var)> {
    let k = ex.motion.rows();
    if unconditional {
        let zeros = g.constant(Tensor::zeros(&[k, EMBED_DIM]));
        let cm = g.add(zeros, p.get("null.music")?)?;
        Ok((cm, p.get("null.text")?))
    } else {
        let w = g.constant(ex.w2c.clone());
        let s = g.constant(ex.stft.clone());
        let cm = fuse_graph(g, p, w, s, false)?;
        let ce = g.constant(ex.text.clone());
        Ok((cm, ce))
    }
}

/// Builds the loss for a given draw on an existing graph.
pub fn step_loss(
    g: &mut Graph,
    p: &Bound,
    ex: &TrainExample,
    ctx: &TrainContext<'_>,
    draw: &StepDraw,
) -> Result<(Var, LossTerms)> {
    let d_t = q_sample(ctx.schedule, &ex.motion, draw.t, &draw.noise)?;
    let dv = g.constant(d_t);
    let (cm, ce) = conditioning_vars(g, p, ex, draw.unconditional)?;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(draw.dropout_seed);
    let pred = denoiser::forward(
        g,
        p,
        ctx.model,
        dv,
        cm,
        ce,
        ForwardOptions {
            t: draw.t,
            rng: Some(&mut drop_rng),
            skip_text_film: false,
        },
    )?;
    loss_graph(g, &ex.motion, pred, ctx.norm, ctx.skel, &ctx.weights)
}

pub struct StepOutput {
    pub terms: LossTerms,
    pub grads: BTreeMap<String, Tensor>,
}

/// Loss and parameter gradients for one example under `draw`.
pub fn training_step(
    params: &ParamStore,
    ex: &TrainExample,
    ctx: &TrainContext<'_>,
    draw: &StepDraw,
) -> Result<StepOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let (loss, terms) = step_loss(&mut g, &p, ex, ctx, draw).map_err(|e| match e {
        Error::NonFinite(op) => Error::NonFinite(format!("{op} (t = {})", draw.t)),
        other => other,
    })?;
    if !terms.is_finite() {
        return Err(Error::NonFinite(format!("loss (t = {})", draw.t)));
    }
    let grads = g.backward(loss)?;
    Ok(StepOutput {
        terms,
        grads: p.collect(&g, &grads),
    })
}

/// Loss terms with dropout and conditioning dropout off, for monitoring.
pub fn eval_losses(
    params: &ParamStore,
    ex: &TrainExample,
    ctx: &TrainContext<'_>,
    t: usize,
    noise: &Tensor,
) -> Result<LossTerms> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let d_t = q_sample(ctx.schedule, &ex.motion, t, noise)?;
    let dv = g.constant(d_t);
    let (cm, ce) = conditioning_vars(&mut g, &p, ex, false)?;
    let pred = denoiser::forward(&mut g, &p, ctx.model, dv, cm, ce, ForwardOptions::eval(t))?;
    Ok(loss_graph(&mut g, &ex.motion, pred, ctx.norm, ctx.skel, &ctx.weights)?.1)
}

/// Anything that predicts the clean sample from a noised one, with and
/// without conditioning.
pub trait X0Predictor {
    fn predict(&self, d_t: &Tensor, t: usize, conditional: bool) -> Result<Tensor>;
}

/// `u + w (c - u)`. Only the needed branch runs when `w` is 0 or 1.
pub fn guided_predict<P: X0Predictor + ?Sized>(p: &P, d_t: &Tensor, t: usize, w: f64) -> Result<Tensor> {
    if w == 1.0 {
        return p.predict(d_t, t, true);
    }
    let u = p.predict(d_t, t, false)?;
    if w == 0.0 {
        return Ok(u);
    }
    let c = p.predict(d_t, t, true)?;
    c.zip_map(&u, |c, u| u + w * (c - u))
}

/// Ancestral DDPM sampling from `N(0, I)` with guided, clipped predictions.
/// At `t = 1` the posterior mean equals the prediction and no noise is
/// added, so the clipped prediction is returned directly.
pub fn sample_loop<P: X0Predictor + ?Sized>(
    p: &P,
    s: &DiffusionSchedule,
    frames: usize,
    w: f64,
    clip: f64,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = randn(&mut rng, &[frames, POSE_DIM], 1.0);
    for t in (1..=s.steps()).rev() {
        let m0 = guided_predict(p, &d, t, w)?.map(|v| v.clamp(-clip, clip));
        if !m0.is_finite() {
            return Err(Error::NonFinite(format!("prediction at step {t}")));
        }
        if t == 1 {
            return Ok(m0);
        }
        let (c0, ct) = s.posterior_coefficients(t)?;
        let sigma = s.posterior_variance(t)?.sqrt();
        let z = randn(&mut rng, &[frames, POSE_DIM], 1.0);
        let mean = m0.zip_map(&d, |m, x| c0 * m + ct * x)?;
        d = mean.zip_map(&z, |m, n| m + sigma * n)?;
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("sample at step {t}")));
        }
    }
    unreachable!("schedules have at least two steps")
}

/// The trained model bound to one segment's conditioning. Fusion runs once.
pub struct ModelPredictor<'a> {
    cfg: &'a DenoiserConfig,
    params: &'a ParamStore,
    cond: (Tensor, Tensor),
    uncond: (Tensor, Tensor),
}

impl<'a> ModelPredictor<'a> {
    pub fn new(
        cfg: &'a DenoiserConfig,
        params: &'a ParamStore,
        w2c: &Tensor,
        stft: &Tensor,
        text: &Tensor,
    ) -> Result<Self> {
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let w = g.constant(w2c.clone());
        let s = g.constant(stft.clone());
        let cm = fuse_graph(&mut g, &p, w, s, false)?;
        let k = w2c.rows();
        let null_music = params.get("null.music")?;
        let uncond_cm = Tensor::from_fn(&[k, EMBED_DIM], |i| null_music.data()[i % EMBED_DIM]);
        Ok(Self {
            cfg,
            params,
            cond: (g.value(cm).clone(), text.clone()),
            uncond: (uncond_cm, params.get("null.text")?.clone()),
        })
    }
}

impl X0Predictor for ModelPredictor<'_> {
    fn predict(&self, d_t: &Tensor, t: usize, conditional: bool) -> Result<Tensor> {
        let (cm, ce) = if conditional { &self.cond } else { &self.uncond };
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let d = g.constant(d_t.clone());
        let cm = g.constant(cm.clone());
        let ce = g.constant(ce.clone());
        let out = denoiser::forward(&mut g, &p, self.cfg, d, cm, ce, ForwardOptions::eval(t))?;
        Ok(g.value(out).clone())
    }
}
