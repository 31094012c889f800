mod common;

use common::{ks_two_sample, Toy};
use dgfm::diffusion::{
    guided_predict, loss_graph, make_schedule, q_sample, q_step, sample_loop, step_loss, training_step,
    LossWeights, StepDraw, X0Predictor,
};
use dgfm::motion::{axis_angle, matrix_to_rot6d, SkeletonDef, CONTACT_DIM, POSE_DIM, ROT_OFFSET};
use dgfm::numerics::{grad_check, randn, GradCheckOptions, Graph, Tensor};
use dgfm::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_marginal_matches_monte_carlo() {
    let s = make_schedule(1000).unwrap();
    let m0 = Tensor::new(vec![1, 3], vec![1.5, -0.7, 0.2]).unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for t in [1, 250, 500, 999] {
        let ab = s.alpha_bar_at(t).unwrap();
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let noise = randn(&mut rng, &[1, 3], 1.0);
            let d = q_sample(&s, &m0, t, &noise).unwrap();
            for i in 0..3 {
                sum[i] += d.data()[i];
                sq[i] += d.data()[i] * d.data()[i];
            }
        }
        let var = 1.0 - ab;
        for i in 0..3 {
            let mean = sum[i] / n as f64;
            let emp_var = (sq[i] - n as f64 * mean * mean) / (n - 1) as f64;
            let se_mean = (var / n as f64).sqrt();
            let se_var = var * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - ab.sqrt() * m0.data()[i]).abs() <= 3.0 * se_mean, "t={t} mean {mean}");
            assert!((emp_var - var).abs() <= 3.0 * se_var, "t={t} var {emp_var} vs {var}");
        }
    }
}

#[test]
fn composed_kernel_matches_marginal() {
    let s = make_schedule(1000).unwrap();
    let m0 = Tensor::scalar(0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in [1, 20, 150] {
        let direct: Vec<f64> = (0..2000)
            .map(|_| q_sample(&s, &m0, t, &randn(&mut rng, &[1], 1.0)).unwrap().item().unwrap())
            .collect();
        let iterated: Vec<f64> = (0..2000)
            .map(|_| {
                let mut d = m0.clone();
                for step in 1..=t {
                    d = q_step(&s, &d, step, &randn(&mut rng, &[1], 1.0)).unwrap();
                }
                d.item().unwrap()
            })
            .collect();
        let (d, p) = ks_two_sample(&direct, &iterated);
        assert!(p > 0.01, "t={t}: D={d} p={p}");
    }
}

#[test]
fn perfect_prediction_has_zero_reconstruction_losses() {
    let toy = Toy::new(8, 1);
    let mut g = Graph::new();
    let pred = g.constant(toy.example.motion.clone());
    let (_, terms) = loss_graph(&mut g, &toy.example.motion, pred, &toy.norm, &toy.skel, &LossWeights::default()).unwrap();
    assert_eq!(terms.sample, 0.0);
    assert_eq!(terms.joint, 0.0);
    assert_eq!(terms.velocity, 0.0);
    assert!(terms.contact >= 0.0);
}

#[test]
fn static_pose_with_contacts_has_no_sliding() {
    let toy = Toy::new(8, 2);
    let mut row = vec![0.0; POSE_DIM];
    row[..CONTACT_DIM].fill(1.0);
    row[5] = 0.93;
    for j in 0..52 {
        row[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6]
            .copy_from_slice(&matrix_to_rot6d(&axis_angle([0.0, 1.0, 0.0], 0.1 * j as f64)));
    }
    let raw = Tensor::from_fn(&[8, POSE_DIM], |i| row[i % POSE_DIM]);
    let target = toy.norm.normalize(&raw).unwrap();
    let mut g = Graph::new();
    let pred = g.constant(target.clone());
    let (_, terms) = loss_graph(&mut g, &target, pred, &toy.norm, &toy.skel, &LossWeights::default()).unwrap();
    assert!(terms.contact.abs() < 1e-20);
    assert!(terms.velocity.abs() < 1e-20);
}

#[test]
fn contact_loss_penalizes_sliding_feet() {
    let skel = SkeletonDef::default_52();
    let toy = Toy::new(8, 3);
    let mut raw = toy.norm.denormalize(&toy.example.motion).unwrap();
    for f in 0..8 {
        let r = raw.row_mut(f);
        r[..CONTACT_DIM].fill(1.0);
        r[4] = 0.1 * f as f64;
    }
    let target = toy.norm.normalize(&raw).unwrap();
    let mut g = Graph::new();
    let pred = g.constant(target.clone());
    let (_, terms) = loss_graph(&mut g, &target, pred, &toy.norm, &skel, &LossWeights::default()).unwrap();
    // every foot moves at least 0.1 m per frame along x
    assert!(terms.contact >= 0.01 * 4.0 - 1e-12, "{}", terms.contact);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let toy = Toy::new(8, 4);
    let ctx = toy.ctx();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for unconditional in [false, true] {
        let draw = StepDraw {
            t: 37,
            noise: randn(&mut rng, &[8, POSE_DIM], 1.0),
            unconditional,
            dropout_seed: 0,
        };
        let rep = grad_check(
            |g, p| step_loss(g, p, &toy.example, &ctx, &draw).map(|(l, _)| l),
            &toy.live_params(6),
            &GradCheckOptions {
                samples_per_tensor: 20,
                // unconditional draws leave the music keys nearly constant, so
                // their gradients sit at the roundoff level of the loss
                floor: 1e-6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
    }
}

#[test]
fn training_step_is_deterministic() {
    let toy = Toy::new(8, 6);
    let ctx = toy.ctx();
    let draw = StepDraw::sample(&mut ChaCha8Rng::seed_from_u64(9), &ctx, 8);
    let a = training_step(&toy.params, &toy.example, &ctx, &draw).unwrap();
    let b = training_step(&toy.params, &toy.example, &ctx, &draw).unwrap();
    assert_eq!(a.terms, b.terms);
    assert_eq!(a.grads, b.grads);
    assert!(a.terms.is_finite() && a.terms.total > 0.0);
}

struct Constant(Tensor);

impl X0Predictor for Constant {
    fn predict(&self, _: &Tensor, _: usize, _: bool) -> Result<Tensor> {
        Ok(self.0.clone())
    }
}

#[test]
fn constant_oracle_is_reproduced_exactly() {
    let s = make_schedule(1000).unwrap();
    let target = randn(&mut ChaCha8Rng::seed_from_u64(3), &[6, POSE_DIM], 1.0).map(|v| v.clamp(-4.0, 4.0));
    let out = sample_loop(&Constant(target.clone()), &s, 6, 2.7, 5.0, 11).unwrap();
    assert_eq!(out, target);
}

#[test]
fn sampling_is_seed_deterministic() {
    let toy = Toy::new(8, 7);
    let s = make_schedule(50).unwrap();
    let p = dgfm::diffusion::ModelPredictor::new(
        &toy.cfg,
        &toy.params,
        &toy.example.w2c,
        &toy.example.stft,
        &toy.example.text,
    )
    .unwrap();
    let a = sample_loop(&p, &s, 8, 2.7, 5.0, 1).unwrap();
    let b = sample_loop(&p, &s, 8, 2.7, 5.0, 1).unwrap();
    assert_eq!(a, b);
    let c = sample_loop(&p, &s, 8, 2.7, 5.0, 2).unwrap();
    assert_ne!(a, c);
    assert!(a.data().iter().all(|v| v.abs() <= 5.0));
}

#[test]
fn guidance_on_a_real_model_matches_recomputed_branches() {
    let toy = Toy::new(8, 8);
    let p = dgfm::diffusion::ModelPredictor::new(
        &toy.cfg,
        &toy.params,
        &toy.example.w2c,
        &toy.example.stft,
        &toy.example.text,
    )
    .unwrap();
    let d = randn(&mut ChaCha8Rng::seed_from_u64(1), &[8, POSE_DIM], 1.0);
    let c = p.predict(&d, 300, true).unwrap();
    let u = p.predict(&d, 300, false).unwrap();
    assert!(c.max_abs_diff(&u) > 1e-6);
    assert!(guided_predict(&p, &d, 300, 1.0).unwrap().max_abs_diff(&c) <= 1e-12);
    assert_eq!(guided_predict(&p, &d, 300, 0.0).unwrap(), u);
    let g = guided_predict(&p, &d, 300, 2.7).unwrap();
    for i in 0..g.len() {
        let expect = u.data()[i] + 2.7 * (c.data()[i] - u.data()[i]);
        assert!((g.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }
}
