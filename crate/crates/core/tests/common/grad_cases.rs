//! Finite-difference cases: every differentiable op and the full reasoner
//! and selector losses, at ten seeds each.

use vislab::autodiff::{Graph, Var};
use vislab::detector::{DetectedObject, ObjectSet};
use vislab::geometry::BBox;
use vislab::gradcheck::grad_check;
use vislab::grounding::{Selector, SelectorConfig, SelectorExample, SelectorInput};
use vislab::nn::{normal_matrix, Bound, ParamSet};
use vislab::rng::{self, LabRng};
use vislab::updn::{UpDn, UpDnConfig, VqaExample};
use vislab::{Result, Tensor};

pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 10;

pub struct GradCase {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
}

type Cases = Vec<GradCase>;

fn rand_t(r: &mut LabRng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    normal_matrix(r, 1, n, std).reshaped(shape).unwrap()
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output coordinate contributes a distinct gradient.
fn weigh(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = rand_t(&mut rng::stream(seed, "weights", 0), &shape, 1.0);
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn check<F>(out: &mut Cases, name: &'static str, inputs: Vec<Tensor>, seed: u64, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report = grad_check(&f, &inputs, 200, seed).unwrap();
    out.push(GradCase {
        name,
        seed,
        max_rel_error: report.max_rel_error,
    });
}

pub fn elementwise_and_shape_ops() -> Cases {
    let mut out = Vec::new();
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, "ops", 0);
        let a = rand_t(&mut r, &[3, 4], 1.0);
        let b = rand_t(&mut r, &[3, 4], 1.0);
        let row = rand_t(&mut r, &[4], 1.0);
        check(&mut out, "add/sub/mul", vec![a.clone(), b.clone()], seed, |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            weigh(g, m, seed)
        });
        check(&mut out, "add_row/affine", vec![a.clone(), row.clone()], seed, |g, v| {
            let x = g.add_row(v[0], v[1])?;
            let x = g.affine(x, -1.5, 0.25)?;
            weigh(g, x, seed)
        });
        check(&mut out, "sigmoid", vec![a.clone()], seed, |g, v| {
            let x = g.sigmoid(v[0])?;
            weigh(g, x, seed)
        });
        check(&mut out, "tanh", vec![a.clone()], seed, |g, v| {
            let x = g.tanh(v[0])?;
            weigh(g, x, seed)
        });
        // keep relu inputs away from the kink
        let away = a.map(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
        check(&mut out, "relu", vec![away], seed, |g, v| {
            let x = g.relu(v[0])?;
            weigh(g, x, seed)
        });
        check(&mut out, "gelu", vec![a.clone()], seed, |g, v| {
            let x = g.gelu(v[0])?;
            weigh(g, x, seed)
        });
        check(&mut out, "transpose/reshape", vec![a.clone()], seed, |g, v| {
            let x = g.transpose(v[0])?;
            let x = g.reshape(x, &[2, 6])?;
            weigh(g, x, seed)
        });
        check(&mut out, "concat", vec![a.clone(), rand_t(&mut r, &[3, 2], 1.0)], seed, |g, v| {
            let x = g.concat(v[0], v[1])?;
            weigh(g, x, seed)
        });
        check(&mut out, "gather/expand", vec![a.clone(), row.clone()], seed, |g, v| {
            let x = g.gather_rows(v[0], &[2, 0, 2, 1])?;
            let e = g.reshape(v[1], &[1, 4])?;
            let e = g.expand_rows(e, 4)?;
            let s = g.add(x, e)?;
            weigh(g, s, seed)
        });
        check(&mut out, "mean", vec![a.clone()], seed, |g, v| {
            let x = g.mul(v[0], v[0])?;
            g.mean(x)
        });
    }
    out
}

pub fn products_and_normalizations() -> Cases {
    let mut out = Vec::new();
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, "prod", 0);
        let a = rand_t(&mut r, &[3, 4], 1.0);
        let w = rand_t(&mut r, &[4, 5], 1.0);
        let bias = rand_t(&mut r, &[5], 1.0);
        check(&mut out, "matmul", vec![a.clone(), w.clone()], seed, |g, v| {
            let x = g.matmul(v[0], v[1])?;
            weigh(g, x, seed)
        });
        check(&mut out, "linear", vec![rand_t(&mut r, &[2, 3, 4], 1.0), w.clone(), bias.clone()], seed, |g, v| {
            let x = g.linear(v[0], v[1], Some(v[2]))?;
            weigh(g, x, seed)
        });
        let x3 = rand_t(&mut r, &[2, 3, 4], 1.0);
        let y3 = rand_t(&mut r, &[2, 5, 4], 1.0);
        check(&mut out, "bmm^T", vec![x3.clone(), y3.clone()], seed, |g, v| {
            let x = g.bmm(v[0], v[1], true)?;
            weigh(g, x, seed)
        });
        check(&mut out, "bmm", vec![x3.clone(), rand_t(&mut r, &[2, 4, 3], 1.0)], seed, |g, v| {
            let x = g.bmm(v[0], v[1], false)?;
            weigh(g, x, seed)
        });
        let mask: Vec<bool> = (0..12).map(|i| i % 4 != 3).collect();
        check(&mut out, "softmax", vec![a.clone()], seed, |g, v| {
            let x = g.softmax(v[0], None)?;
            weigh(g, x, seed)
        });
        check(&mut out, "softmax masked", vec![a.clone()], seed, |g, v| {
            let x = g.softmax(v[0], Some(&mask))?;
            weigh(g, x, seed)
        });
        check(
            &mut out,
            "layer_norm",
            vec![a.clone(), rand_t(&mut r, &[4], 1.0), rand_t(&mut r, &[4], 1.0)],
            seed,
            |g, v| {
                let x = g.layer_norm(v[0], v[1], v[2])?;
                weigh(g, x, seed)
            },
        );
        let labels = [1usize, 3, 0];
        check(&mut out, "cross_entropy", vec![a.clone()], seed, |g, v| g.cross_entropy(v[0], &labels));
        let targets = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let include = [true, true, false, true, true, true];
        check(&mut out, "weighted_bce", vec![rand_t(&mut r, &[2, 3], 1.0)], seed, |g, v| {
            let p = g.sigmoid(v[0])?;
            g.weighted_bce(p, &targets, 40.0, 1.0, Some(&include))
        });
    }
    out
}

fn randomize(params: &mut ParamSet, seed: u64) {
    let mut r = rng::stream(seed, "perturb-params", 0);
    for t in params.tensors_mut() {
        let noise = rand_t(&mut r, t.shape(), 0.3);
        t.add_assign(&noise);
    }
}

fn object(r: &mut LabRng, dim: usize) -> DetectedObject {
    let f = rand_t(r, &[dim], 1.0).into_data();
    let x = 0.1 + 0.5 * f[0].abs().min(1.0);
    DetectedObject {
        feature: f,
        bbox: BBox::new(x * 0.5, 0.2, x * 0.5 + 0.3, 0.6),
    }
}

pub fn full_updn_loss() -> Cases {
    let mut out = Vec::new();
    let cfg = UpDnConfig {
        embed_dim: 5,
        hidden_dim: 6,
        attention_dim: 5,
        fusion_dim: 6,
        classifier_dim: 5,
        necessity_head: true,
        ..UpDnConfig::default()
    };
    for seed in 0..SEEDS {
        let mut model = UpDn::new(&cfg, 9, 7, 6, seed);
        randomize(&mut model.params, seed);
        let mut r = rng::stream(seed, "updn-data", 0);
        let ex = vec![
            VqaExample {
                tokens: vec![1, 4, 2],
                answer: 3,
                binary: false,
                objects: ObjectSet {
                    objects: (0..3).map(|_| object(&mut r, 3)).collect(),
                },
                necessity: Some(vec![true, false, false]),
            },
            VqaExample {
                tokens: vec![5, 8],
                answer: 0,
                binary: true,
                objects: ObjectSet {
                    objects: (0..2).map(|_| object(&mut r, 3)).collect(),
                },
                necessity: None,
            },
            VqaExample {
                tokens: vec![7],
                answer: 1,
                binary: true,
                objects: ObjectSet::default(),
                necessity: None,
            },
        ];
        let params = model.params.tensors().to_vec();
        check(&mut out, "updn", params, seed, |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let batch: Vec<(&[usize], &ObjectSet)> = ex.iter().map(|e| (e.tokens.as_slice(), &e.objects)).collect();
            let f = model.forward_batch(g, &p, &batch)?;
            let refs: Vec<&VqaExample> = ex.iter().collect();
            model.loss(g, &f, &refs)
        });
    }
    out
}

pub fn full_selector_loss() -> Cases {
    let mut out = Vec::new();
    let cfg = SelectorConfig {
        d_model: 6,
        ff_dim: 8,
        n_intra: 2,
        n_cross: 2,
        max_tokens: 5,
        ..SelectorConfig::default()
    };
    for seed in 0..SEEDS {
        let mut sel = Selector::new(&cfg, 9, 5, seed);
        randomize(&mut sel.params, seed);
        let mut r = rng::stream(seed, "selector-data", 0);
        let mk = |r: &mut LabRng, n: usize, tokens: Vec<usize>, labels: Vec<bool>| SelectorExample {
            input: SelectorInput {
                rows: (0..n).map(|_| rand_t(r, &[5], 1.0).into_data()).collect(),
                tokens,
            },
            labels,
        };
        let ex = vec![
            mk(&mut r, 3, vec![1, 2, 3], vec![true, false, false]),
            mk(&mut r, 2, vec![4, 8, 0, 2], vec![false, true]),
        ];
        let params = sel.params.tensors().to_vec();
        check(&mut out, "selector", params, seed, |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let inputs: Vec<&SelectorInput> = ex.iter().map(|e| &e.input).collect();
            let f = sel.forward_batch(g, &p, &inputs)?;
            let refs: Vec<&SelectorExample> = ex.iter().collect();
            sel.loss(g, &f, &refs)
        });
    }
    out
}

pub fn all() -> Cases {
    let mut out = elementwise_and_shape_ops();
    out.extend(products_and_normalizations());
    out.extend(full_updn_loss());
    out.extend(full_selector_loss());
    out
}
