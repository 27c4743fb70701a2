//! Central-difference gradient checking.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(input index, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Below this magnitude differences are measured absolutely; central
/// differences at the step above carry roundoff of roughly 1e-11.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Compares the tape gradient of scalar `f` at `inputs` with central
/// differences on up to `samples` coordinates drawn with `seed` (every
/// coordinate when there are fewer).
pub fn grad_check<F>(f: F, inputs: &[Tensor], samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(g);

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let coords: Vec<(usize, usize)> = if total <= samples {
        inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
            .collect()
    } else {
        let mut r = rng::stream(seed, "grad-check", 0);
        (0..samples)
            .map(|_| {
                let mut k = r.random_range(0..total);
                let mut i = 0;
                while k >= inputs[i].len() {
                    k -= inputs[i].len();
                    i += 1;
                }
                (i, k)
            })
            .collect()
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: coords.len(),
        worst: None,
    };
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + GRAD_CHECK_STEP;
        let plus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = orig - GRAD_CHECK_STEP;
        let minus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i].data()[j];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((i, j, a, numeric));
        }
    }
    Ok(report)
}
