mod common;

use common::Toy;
use dgfm::denoiser::{forward, ForwardOptions};
use dgfm::motion::POSE_DIM;
use dgfm::numerics::{grad_check, randn, GradCheckOptions, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_denoiser_parameter_passes_gradient_check() {
    let toy = Toy::new(8, 1);
    // only denoiser parameters, with the text FiLM moved off its identity init
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, value) in toy.params.iter() {
        if name.starts_with("fuse.") || name.starts_with("null.") {
            continue;
        }
        let v = if name.starts_with("text.gamma") || name.starts_with("text.beta") {
            randn(&mut rng, value.shape(), 0.3)
        } else {
            value.clone()
        };
        params.insert(name, v);
    }
    let d = randn(&mut rng, &[8, POSE_DIM], 1.0);
    let cm = randn(&mut rng, &[8, 512], 1.0);
    let ce = randn(&mut rng, &[512], 1.0);
    let proj = randn(&mut rng, &[8, POSE_DIM], 1.0);
    let cfg = toy.cfg.clone();
    let rep = grad_check(
        |g, p| {
            let (dv, cv, ev) = (g.constant(d.clone()), g.constant(cm.clone()), g.constant(ce.clone()));
            let out = forward(g, p, &cfg, dv, cv, ev, ForwardOptions::eval(123))?;
            let w = g.constant(proj.clone());
            let m = g.mul(out, w)?;
            g.sum(m)
        },
        &params,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_err <= 1e-5, "{rep:?}");
}
