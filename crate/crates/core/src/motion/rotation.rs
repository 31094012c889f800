use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

const DEGENERATE: f64 = 1e-8;

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn axpy(s: f64, x: Vec3, y: Vec3) -> Vec3 {
    [y[0] + s * x[0], y[1] + s * x[1], y[2] + s * x[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub(crate) fn from_columns(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
    [[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]]
}

/// Intermediate quantities of the Gram-Schmidt decode, reused by backward.
pub(crate) struct GramSchmidt {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub y: Vec3,
    pub x_norm: f64,
    pub u_norm: f64,
}

pub(crate) fn gram_schmidt(r: &[f64]) -> Result<GramSchmidt> {
    let x = [r[0], r[1], r[2]];
    let y = [r[3], r[4], r[5]];
    let x_norm = norm(x);
    if !(x_norm > DEGENERATE) {
        return Err(Error::Singular(format!("first column has norm {x_norm:e}")));
    }
    let a = x.map(|v| v / x_norm);
    let u = axpy(-dot(a, y), a, y);
    let u_norm = norm(u);
    if !(u_norm > DEGENERATE) {
        return Err(Error::Singular(format!(
            "second column is parallel to the first (residual {u_norm:e})"
        )));
    }
    let b = u.map(|v| v / u_norm);
    Ok(GramSchmidt {
        a,
        b,
        c: cross(a, b),
        y,
        x_norm,
        u_norm,
    })
}

impl GramSchmidt {
    pub fn matrix(&self) -> Mat3 {
        from_columns(self.a, self.b, self.c)
    }

    /// Vector-Jacobian product: gradient of the 6 inputs given `g = dL/dR`.
    pub fn backward(&self, g: &Mat3) -> [f64; 6] {
        let col = |j: usize| [g[0][j], g[1][j], g[2][j]];
        let (mut ga, mut gb, gc) = (col(0), col(1), col(2));
        let (a, b, y) = (self.a, self.b, self.y);
        // c = a x b
        ga = axpy(1.0, cross(b, gc), ga);
        gb = axpy(1.0, cross(gc, a), gb);
        // b = u / |u|
        let gu = axpy(-dot(b, gb), b, gb).map(|v| v / self.u_norm);
        // u = y - (a.y) a
        let gy = axpy(-dot(a, gu), a, gu);
        ga = axpy(-dot(a, y), gu, axpy(-dot(a, gu), y, ga));
        // a = x / |x|
        let gx = axpy(-dot(a, ga), a, ga).map(|v| v / self.x_norm);
        [gx[0], gx[1], gx[2], gy[0], gy[1], gy[2]]
    }
}

/// Decodes a 6D rotation by Gram-Schmidt into a matrix with columns
/// `(a, b, a x b)`.
pub fn rot6d_to_matrix(r: &[f64]) -> Result<Mat3> {
    if r.len() != 6 {
        return Err(Error::Shape {
            op: "rot6d",
            lhs: vec![r.len()],
            rhs: vec![6],
        });
    }
    Ok(gram_schmidt(r)?.matrix())
}

/// First two columns of `m`.
pub fn matrix_to_rot6d(m: &Mat3) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Rotation by `angle` radians about `axis` (normalized here).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let n = norm(axis);
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[cfg(test)]
fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}
