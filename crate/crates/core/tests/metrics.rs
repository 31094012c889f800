mod common;

use common::oracles::{closed_form_fid, draw, gauss, random_factor};
use dgfm::audio::BeatTimes;
use dgfm::metrics::{bas, dance_beats, diversity, fid, pfc, FeatureDist, BAS_SIGMA};
use dgfm::motion::{JointPositions, SkeletonDef};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn empirical_fid_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let d = 5;
    for _ in 0..3 {
        let (la, lb) = (random_factor(&mut rng, d), random_factor(&mut rng, d));
        let ma = DVector::from_fn(d, |_, _| gauss(&mut rng));
        let mb = DVector::from_fn(d, |_, _| gauss(&mut rng));
        let expect = closed_form_fid(&ma, &(&la * la.transpose()), &mb, &(&lb * lb.transpose()));
        let a = FeatureDist::fit(&draw(&mut rng, &ma, &la, 10_000)).unwrap();
        let b = FeatureDist::fit(&draw(&mut rng, &mb, &lb, 10_000)).unwrap();
        let got = fid(&a, &b).unwrap();
        assert!((got - expect).abs() <= 0.05 * expect, "fid {got} vs closed form {expect}");
        assert!(fid(&a, &a).unwrap() <= 1e-9);
        assert!((got - fid(&b, &a).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn diversity_matches_brute_force_and_ignores_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..10).map(|_| gauss(&mut rng)).collect()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in &rows {
        for b in &rows {
            if !std::ptr::eq(a, b) {
                sum += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                pairs += 1;
            }
        }
    }
    let got = diversity(&rows).unwrap();
    assert!((got - sum / pairs as f64).abs() <= 1e-12);
    let shift: Vec<f64> = (0..10).map(|i| 0.3 * i as f64 - 1.0).collect();
    let moved: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect())
        .collect();
    assert!((diversity(&moved).unwrap() - got).abs() < 1e-12);
}

fn sorted_times(rng: &mut ChaCha8Rng, n: usize) -> BeatTimes {
    let mut t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    BeatTimes::new(t).unwrap()
}

#[test]
fn bas_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (nm, nd) = (1 + rng.gen_range(0..30), 1 + rng.gen_range(0..30));
        let m = sorted_times(&mut rng, nm);
        let d = sorted_times(&mut rng, nd);
        let mut total = 0.0;
        for &tm in m.times() {
            let mut best = f64::INFINITY;
            for &td in d.times() {
                best = best.min((td - tm).powi(2));
            }
            total += (-best / (2.0 * 0.1 * 0.1)).exp();
        }
        let expect = total / m.len() as f64;
        let got = bas(&m, &d).unwrap();
        assert!((got - expect).abs() <= 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn bas_decays_with_uniform_offset() {
    let music: Vec<f64> = (1..20).map(|i| i as f64).collect();
    let m = BeatTimes::new(music.clone()).unwrap();
    let mut last = f64::INFINITY;
    for step in 0..=30 {
        let off = 3.0 * BAS_SIGMA * step as f64 / 30.0;
        let d = BeatTimes::new(music.iter().map(|t| t + off).collect()).unwrap();
        let s = bas(&m, &d).unwrap();
        assert!(s <= last);
        last = s;
    }
}

fn clip(k: usize, at: impl Fn(usize, usize) -> [f64; 3]) -> JointPositions {
    let mut data = Vec::new();
    for f in 0..k {
        for j in 0..52 {
            data.extend_from_slice(&at(f, j));
        }
    }
    JointPositions::new(k, 52, data).unwrap()
}

#[test]
fn pfc_ignores_horizontal_translation() {
    let skel = SkeletonDef::default_52();
    let p = clip(20, |f, j| {
        let t = f as f64 / 30.0;
        [(t * 3.0 + j as f64).sin(), 0.5 + (t * 5.0 + j as f64).cos() * 0.2, t * t]
    });
    let a = pfc(&p, &skel).unwrap();
    let b = pfc(&p.translated([3.5, 0.0, -2.0]), &skel).unwrap();
    assert!(a > 0.0);
    assert!((a - b).abs() <= 1e-9);
}

#[test]
fn scripted_hop_scores_below_sliding() {
    let skel = SkeletonDef::default_52();
    let (left, right) = skel.foot_sides();
    // root height per frame; accelerations are second differences
    let y = [0.90, 0.90, 0.91, 0.93, 0.96, 0.99, 1.01, 1.02];
    let k = y.len();
    // hop: left foot planted until frame 4 (push-off), then lifts 0.03 per
    // frame; right foot lifts 0.02 per frame throughout
    let hop = clip(k, |f, j| {
        if j == 0 {
            [0.0, y[f], 0.0]
        } else if left.contains(&j) {
            [0.1, 0.03 * (f.saturating_sub(4)) as f64, 0.0]
        } else if right.contains(&j) {
            [-0.1, 0.02 * f as f64, 0.0]
        } else {
            [0.0; 3]
        }
    });
    // sliding: both feet move 0.04 per frame along x
    let slide = clip(k, |f, j| {
        if j == 0 {
            [0.0, y[f], 0.0]
        } else if left.contains(&j) || right.contains(&j) {
            [0.04 * f as f64, 0.0, j as f64]
        } else {
            [0.0; 3]
        }
    });
    let fps = 30.0;
    // upward second differences (0.01, 0.01, 0.01, 0, -0.01, -0.01) scaled by fps^2
    let acc = [0.01, 0.01, 0.01, 0.0, 0.0, 0.0].map(|a: f64| a * fps * fps);
    let amax = 0.01 * fps * fps;
    // foot speeds between frames i+1 and i+2
    let hop_left = [0.0, 0.0, 0.0, 0.03, 0.03, 0.03].map(|v: f64| v * fps);
    let hop_right = 0.02 * fps;
    let slide_speed = 0.04 * fps;
    let hop_sum: f64 = (0..6).map(|i| acc[i] * hop_left[i] * hop_right).sum();
    let slide_sum: f64 = (0..6).map(|i| acc[i] * slide_speed * slide_speed).sum();
    let hop_pfc = pfc(&hop, &skel).unwrap();
    let slide_pfc = pfc(&slide, &skel).unwrap();
    assert!((hop_pfc - hop_sum / (k as f64 * amax)).abs() <= 1e-9);
    assert!((slide_pfc - slide_sum / (k as f64 * amax)).abs() <= 1e-9);
    assert!(hop_pfc < slide_pfc);
    assert!((hop_pfc / slide_pfc - hop_sum / slide_sum).abs() <= 1e-9);
}

#[test]
fn scripted_pauses_become_dance_beats() {
    let speed = |f: usize| 0.002 + 0.02 * (std::f64::consts::PI * f as f64 / 30.0).sin().powi(2);
    let mut x = vec![0.0];
    for f in 0..119 {
        x.push(x[f] + speed(f));
    }
    let p = clip(120, |f, j| [x[f], 0.02 * j as f64, 0.0]);
    let beats = dance_beats(&p).unwrap();
    let frames: Vec<f64> = beats.times().iter().map(|t| t * 30.0).collect();
    assert_eq!(frames.len(), 3, "{frames:?}");
    for (f, centre) in frames.iter().zip([30.0, 60.0, 90.0]) {
        assert!((f - centre).abs() <= 2.0, "{frames:?}");
    }
}
