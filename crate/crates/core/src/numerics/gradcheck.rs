use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Step of the fourth-order central-difference stencil.
    pub h: f64,
    /// Coordinates sampled per parameter tensor (all of them when smaller).
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Smallest denominator of the relative error, so coordinates whose
    /// gradient is below this are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            samples_per_tensor: 50,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

fn eval<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = f(&mut g, &bound)?;
    g.value(out).item()
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// fourth-order central differences on sampled coordinates of every
/// parameter.
pub fn grad_check<F>(f: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = f(&mut g, &bound)?;
    let grads = g.backward(loss)?;
    let analytic = bound.collect(&g, &grads);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, grad) in &analytic {
        let n = grad.len();
        let idx: Vec<usize> = if n <= opts.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in idx {
            let orig = params.get(name)?.data()[i];
            let fail = |detail: String| Error::GradCheck {
                param: name.clone(),
                index: i,
                detail,
            };
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(name)?.data_mut()[i] = orig + offset;
                let v = eval(&f, &probe).map_err(|e| fail(e.to_string()));
                probe.get_mut(name)?.data_mut()[i] = orig;
                v
            };
            let h = opts.h;
            let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = grad.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(fail(format!("non-finite gradient (analytic {a}, numeric {numeric})")));
            }
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
