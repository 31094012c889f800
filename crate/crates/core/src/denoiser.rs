//! Transformer denoiser `f(d_t, t, C_M, C_E) -> m0_hat`.
//!
//! Each layer runs self-attention over frames, cross-attention into the
//! music map, and an MLP. Every sub-block output is scaled and shifted by a
//! time-embedding FiLM before its residual add and layer norm. After the
//! stack a text FiLM derived from the genre embedding modulates the hidden
//! state, then a linear map returns to pose space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::EMBED_DIM;
use crate::error::{Error, Result};
use crate::motion::POSE_DIM;
use crate::numerics::{linear, randn, Bound, Graph, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            layers: 4,
            heads: 8,
            mlp_ratio: 4,
            dropout: 0.1,
            max_len: 120,
        }
    }
}

impl DenoiserConfig {
    /// Small configuration for gradient checks.
    pub fn toy() -> Self {
        Self {
            hidden: 16,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.0,
            max_len: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.mlp_ratio == 0 || self.max_len == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("hidden must be even".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// FiLM scale and shift, one value per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FiLMParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    randn(rng, &[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt())
}

fn insert_linear(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize) {
    s.insert(format!("{name}.w"), glorot(rng, i, o));
    s.insert(format!("{name}.b"), Tensor::zeros(&[o]));
}

fn insert_attention(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, kv_in: usize, h: usize) {
    insert_linear(s, rng, &format!("{name}.q"), h, h);
    // no key bias: it shifts every score of a query equally and has no effect
    s.insert(format!("{name}.k.w"), glorot(rng, kv_in, h));
    insert_linear(s, rng, &format!("{name}.v"), kv_in, h);
    insert_linear(s, rng, &format!("{name}.o"), h, h);
}

fn insert_norm(s: &mut ParamStore, name: &str, h: usize) {
    s.insert(format!("{name}.g"), Tensor::full(&[h], 1.0));
    s.insert(format!("{name}.b"), Tensor::zeros(&[h]));
}

/// Adds all denoiser parameters. The text FiLM starts as the identity.
pub fn init_params(cfg: &DenoiserConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hidden;
    insert_linear(store, rng, "in", POSE_DIM, h);
    // learned, but started from a sinusoid table so frames are distinct at step 0
    store.insert("pos", sinusoid_table(cfg.max_len, h)?);
    store.insert("music_pos", sinusoid_table(cfg.max_len, EMBED_DIM)?);
    insert_linear(store, rng, "time.l1", h, h);
    insert_linear(store, rng, "time.l2", h, h);
    for l in 0..cfg.layers {
        let p = format!("layers.{l}");
        insert_attention(store, rng, &format!("{p}.self"), h, h);
        insert_attention(store, rng, &format!("{p}.cross"), EMBED_DIM, h);
        insert_linear(store, rng, &format!("{p}.mlp.l1"), h, h * cfg.mlp_ratio);
        insert_linear(store, rng, &format!("{p}.mlp.l2"), h * cfg.mlp_ratio, h);
        for n in ["norm1", "norm2", "norm3"] {
            insert_norm(store, &format!("{p}.{n}"), h);
        }
        // (gamma, beta) for each of the three sub-blocks; starts at gamma = 1,
        // beta = 0 for every timestep
        store.insert(format!("{p}.film.w"), Tensor::zeros(&[h, 6 * h]));
        let mut b = Tensor::zeros(&[6 * h]);
        for blk in 0..3 {
            b.data_mut()[2 * blk * h..(2 * blk + 1) * h].fill(1.0);
        }
        store.insert(format!("{p}.film.b"), b);
    }
    insert_linear(store, rng, "text.adapter", EMBED_DIM, h);
    store.insert("text.gamma.w", Tensor::zeros(&[h, h]));
    store.insert("text.gamma.b", Tensor::full(&[h], 1.0));
    store.insert("text.beta.w", Tensor::zeros(&[h, h]));
    store.insert("text.beta.b", Tensor::zeros(&[h]));
    insert_linear(store, rng, "out", h, POSE_DIM);
    Ok(())
}

fn sinusoid_table(len: usize, dim: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let frames = g.constant(Tensor::new(vec![len], (0..len).map(|i| i as f64).collect())?);
    let e = g.sinusoidal_embed(frames, dim)?;
    Ok(g.value(e).clone())
}

/// `gamma * y + beta` with per-channel `gamma`, `beta` of shape `[C]` or `[1, C]`.
pub fn film_apply(g: &mut Graph, y: Var, gamma: Var, beta: Var) -> Result<Var> {
    let c = *g.shape(y).last().unwrap_or(&0);
    for v in [gamma, beta] {
        if *g.shape(v).last().unwrap_or(&0) != c || g.value(v).len() != c {
            return Err(Error::Shape {
                op: "film",
                lhs: g.shape(y).to_vec(),
                rhs: g.shape(v).to_vec(),
            });
        }
    }
    let scaled = g.mul(y, gamma)?;
    g.add(scaled, beta)
}

/// `gamma = W_g a + b_g`, `beta = W_b a + b_b` with `a = gelu(adapter(C_E))`,
/// each of shape `[1, hidden]`.
pub fn text_film_graph(g: &mut Graph, p: &Bound, ce: Var) -> Result<(Var, Var)> {
    let row = g.reshape(ce, &[1, EMBED_DIM])?;
    let a = linear(g, row, p.get("text.adapter.w")?, p.get("text.adapter.b")?)?;
    let a = g.gelu(a)?;
    let gamma = linear(g, a, p.get("text.gamma.w")?, p.get("text.gamma.b")?)?;
    let beta = linear(g, a, p.get("text.beta.w")?, p.get("text.beta.b")?)?;
    Ok((gamma, beta))
}

pub fn text_film_params(params: &ParamStore, ce: &Tensor) -> Result<FiLMParams> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let c = g.constant(ce.clone());
    let (gamma, beta) = text_film_graph(&mut g, &p, c)?;
    Ok(FiLMParams {
        gamma: g.value(gamma).reshape(&[g.value(gamma).len()])?,
        beta: g.value(beta).reshape(&[g.value(beta).len()])?,
    })
}

fn attention(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    x: Var,
    kv: Var,
    heads: usize,
) -> Result<Var> {
    let w = |s: &str| p.get(&format!("{name}.{s}"));
    let q = linear(g, x, w("q.w")?, w("q.b")?)?;
    let k = g.matmul(kv, w("k.w")?)?;
    let v = linear(g, kv, w("v.w")?, w("v.b")?)?;
    let h = g.shape(q)[1];
    let hd = h / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let qh = g.slice(q, 1, i * hd, hd)?;
        let kh = g.slice(k, 1, i * hd, hd)?;
        let vh = g.slice(v, 1, i * hd, hd)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale)?;
        let a = g.softmax(s)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, cat, w("o.w")?, w("o.b")?)
}

fn layer_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let n = g.mul(n, p.get(&format!("{name}.g"))?)?;
    g.add(n, p.get(&format!("{name}.b"))?)
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = Tensor::from_fn(g.shape(x), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
            let m = g.constant(mask);
            g.mul(x, m)
        }
        _ => Ok(x),
    }
}

/// Sinusoidal embedding of `t` followed by a two-layer MLP, `[1, hidden]`.
pub fn timestep_embedding(g: &mut Graph, p: &Bound, t: usize, hidden: usize) -> Result<Var> {
    let tv = g.constant(Tensor::scalar(t as f64));
    let e = g.sinusoidal_embed(tv, hidden)?;
    let e = linear(g, e, p.get("time.l1.w")?, p.get("time.l1.b")?)?;
    let e = g.gelu(e)?;
    linear(g, e, p.get("time.l2.w")?, p.get("time.l2.b")?)
}

/// Inputs and knobs for a forward pass that are not graph variables.
pub struct ForwardOptions<'a> {
    pub t: usize,
    /// Dropout masks are drawn from this generator; `None` disables dropout.
    pub rng: Option<&'a mut ChaCha8Rng>,
    /// Skip the final text FiLM (used to observe the pre-FiLM path).
    pub skip_text_film: bool,
}

impl ForwardOptions<'_> {
    pub fn eval(t: usize) -> Self {
        Self {
            t,
            rng: None,
            skip_text_film: false,
        }
    }
}

/// `d_t: [k, 319]`, `cm: [k, 512]`, `ce: [512]` to `m0_hat: [k, 319]`.
pub fn forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &DenoiserConfig,
    d_t: Var,
    cm: Var,
    ce: Var,
    mut opts: ForwardOptions<'_>,
) -> Result<Var> {
    let k = g.shape(d_t)[0];
    if g.shape(d_t) != [k, POSE_DIM] {
        return Err(Error::Shape {
            op: "denoiser input",
            lhs: g.shape(d_t).to_vec(),
            rhs: vec![k, POSE_DIM],
        });
    }
    if g.shape(cm) != [k, EMBED_DIM] {
        let got = g.shape(cm)[0];
        return Err(if g.shape(cm).len() == 2 && g.shape(cm)[1] == EMBED_DIM {
            Error::Alignment { expected: k, got }
        } else {
            Error::Shape {
                op: "music conditioning",
                lhs: g.shape(cm).to_vec(),
                rhs: vec![k, EMBED_DIM],
            }
        });
    }
    if g.shape(ce) != [EMBED_DIM] {
        return Err(Error::Shape {
            op: "text conditioning",
            lhs: g.shape(ce).to_vec(),
            rhs: vec![EMBED_DIM],
        });
    }
    if k > cfg.max_len {
        return Err(Error::Contract(format!("{k} frames exceed max_len {}", cfg.max_len)));
    }
    let hd = cfg.hidden;
    let x = linear(g, d_t, p.get("in.w")?, p.get("in.b")?)?;
    let pos = g.slice(p.get("pos")?, 0, 0, k)?;
    let mut h = g.add(x, pos)?;
    // frame positions on the music memory let each frame attend to its own beat
    let mpos = g.slice(p.get("music_pos")?, 0, 0, k)?;
    let cm = g.add(cm, mpos)?;
    let temb = timestep_embedding(g, p, opts.t, hd)?;

    for l in 0..cfg.layers {
        let name = format!("layers.{l}");
        let film = linear(g, temb, p.get(&format!("{name}.film.w"))?, p.get(&format!("{name}.film.b"))?)?;
        let mut mods = Vec::with_capacity(6);
        for i in 0..6 {
            mods.push(g.slice(film, 1, i * hd, hd)?);
        }
        let blocks: [(&str, &str); 3] = [("self", "norm1"), ("cross", "norm2"), ("mlp", "norm3")];
        for (b, (block, norm)) in blocks.iter().enumerate() {
            let n = layer_norm(g, p, &format!("{name}.{norm}"), h)?;
            let y = match *block {
                "self" => attention(g, p, &format!("{name}.self"), n, n, cfg.heads)?,
                "cross" => attention(g, p, &format!("{name}.cross"), n, cm, cfg.heads)?,
                _ => {
                    let m = linear(g, n, p.get(&format!("{name}.mlp.l1.w"))?, p.get(&format!("{name}.mlp.l1.b"))?)?;
                    let m = g.gelu(m)?;
                    linear(g, m, p.get(&format!("{name}.mlp.l2.w"))?, p.get(&format!("{name}.mlp.l2.b"))?)?
                }
            };
            let y = dropout(g, y, cfg.dropout, opts.rng.as_deref_mut())?;
            let y = film_apply(g, y, mods[2 * b], mods[2 * b + 1])?;
            h = g.add(h, y)?;
        }
    }
    if !opts.skip_text_film {
        let (gamma, beta) = text_film_graph(g, p, ce)?;
        h = film_apply(g, h, gamma, beta)?;
    }
    linear(g, h, p.get("out.w")?, p.get("out.b")?)
}
