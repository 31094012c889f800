use std::fmt::Write;

use super::rotation::{axis_angle, mat_mul, rot6d_to_matrix, Mat3};
use super::skeleton::SkeletonDef;
use super::{MotionSequence, NUM_JOINTS, ROT_OFFSET};
use crate::error::{Error, Result};

/// `Rz(z) Ry(y) Rx(x)`, radians.
pub fn euler_zyx_to_matrix(z: f64, y: f64, x: f64) -> Mat3 {
    let rz = axis_angle([0.0, 0.0, 1.0], z);
    let ry = axis_angle([0.0, 1.0, 0.0], y);
    let rx = axis_angle([1.0, 0.0, 0.0], x);
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

/// Inverse of [`euler_zyx_to_matrix`] with `y` in `[-pi/2, pi/2]`. At gimbal
/// lock `x` is set to 0.
pub fn matrix_to_euler_zyx(m: &Mat3) -> (f64, f64, f64) {
    let sy = (-m[2][0]).clamp(-1.0, 1.0);
    let y = sy.asin();
    if sy.abs() > 1.0 - 1e-12 {
        let z = (-m[0][1]).atan2(m[1][1]);
        (z, y, 0.0)
    } else {
        (m[1][0].atan2(m[0][0]), y, m[2][1].atan2(m[2][2]))
    }
}

fn write_joint(out: &mut String, skel: &SkeletonDef, j: usize, depth: usize) {
    let pad = "  ".repeat(depth);
    let [x, y, z] = skel.offsets[j];
    if skel.parents[j].is_none() {
        let _ = writeln!(out, "{pad}ROOT {}", skel.names[j]);
    } else {
        let _ = writeln!(out, "{pad}JOINT {}", skel.names[j]);
    }
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}  OFFSET {x:.6} {y:.6} {z:.6}");
    if skel.parents[j].is_none() {
        let _ = writeln!(out, "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation");
    } else {
        let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Yrotation Xrotation");
    }
    let mut leaf = true;
    for c in skel.children(j) {
        leaf = false;
        write_joint(out, skel, c, depth + 1);
    }
    if leaf {
        let _ = writeln!(out, "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET 0.000000 0.000000 0.000000\n{pad}  }}");
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Renders a BVH file: hierarchy from the skeleton (meters), ZYX Euler
/// channels in degrees, 30 fps.
pub fn write_bvh(motion: &MotionSequence, skel: &SkeletonDef) -> Result<String> {
    if skel.len() != NUM_JOINTS {
        return Err(Error::Structure(format!(
            "BVH export needs a {NUM_JOINTS}-joint skeleton, got {}",
            skel.len()
        )));
    }
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, skel, 0, 0);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {:.8}", motion.len(), 1.0 / motion.fps() as f64);
    // channels appear in depth-first order, which is the hierarchy order
    let mut order = Vec::with_capacity(skel.len());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        let mut kids: Vec<usize> = skel.children(j).collect();
        kids.reverse();
        stack.extend(kids);
    }
    for f in 0..motion.len() {
        let t = motion.root_translation(f);
        let mut vals = vec![t[0], t[1], t[2]];
        for &j in &order {
            let r = rot6d_to_matrix(&motion.pose(f)[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6])?;
            let (z, y, x) = matrix_to_euler_zyx(&r);
            vals.extend([z.to_degrees(), y.to_degrees(), x.to_degrees()]);
        }
        let line: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
        out += &line.join(" ");
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synthetic_dance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let (z, y, x) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let m = euler_zyx_to_matrix(z, y, x);
            let (z2, y2, x2) = matrix_to_euler_zyx(&m);
            let m2 = euler_zyx_to_matrix(z2, y2, x2);
            for i in 0..9 {
                assert!((m[i / 3][i % 3] - m2[i / 3][i % 3]).abs() < 1e-10);
            }
        }
        let lock = euler_zyx_to_matrix(0.4, std::f64::consts::FRAC_PI_2, 0.0);
        let (z, y, x) = matrix_to_euler_zyx(&lock);
        let back = euler_zyx_to_matrix(z, y, x);
        for i in 0..9 {
            assert!((lock[i / 3][i % 3] - back[i / 3][i % 3]).abs() < 1e-6);
        }
    }

    #[test]
    fn bvh_structure() {
        let skel = SkeletonDef::default_52();
        let m = synthetic_dance(&skel, 0, 10).motion;
        let text = write_bvh(&m, &skel).unwrap();
        assert_eq!(text.matches("JOINT ").count() + text.matches("ROOT ").count(), 52);
        assert_eq!(text.matches('{').count(), text.matches('}').count());
        let motion = text.split("Frame Time:").nth(1).unwrap();
        let rows: Vec<&str> = motion.lines().skip(1).collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.split_whitespace().count() == 6 + 3 * 51));
    }
}
