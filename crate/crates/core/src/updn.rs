//! Bottom-up/top-down VQA reasoner: GRU question encoder, question-guided
//! attention over object features, multiplicative fusion and a softmax answer
//! classifier, with an optional per-object necessity head.

use crate::autodiff::{Graph, Var};
use crate::detector::ObjectSet;
use crate::error::{LabError, Result};
use crate::nn::{normal_matrix, xavier, Bound, Linear, ParamId, ParamSet};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::rng::{self, LabRng};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpDnConfig {
    pub embed_dim: usize,
    /// Question encoding size d_q.
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub fusion_dim: usize,
    pub classifier_dim: usize,
    pub max_tokens: usize,
    pub necessity_head: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
}

impl Default for UpDnConfig {
    fn default() -> Self {
        UpDnConfig {
            embed_dim: 32,
            hidden_dim: 64,
            attention_dim: 64,
            fusion_dim: 64,
            classifier_dim: 64,
            max_tokens: 16,
            necessity_head: false,
            epochs: 15,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            schedule: LrSchedule::WarmupStepDecay {
                start: 2e-4,
                peak: 2e-3,
                warmup_epochs: 3,
                decay_epochs: vec![10, 12],
                factor: 0.2,
            },
        }
    }
}

impl UpDnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(LabError::Config {
                key: format!("updn.{key}"),
                message: message.into(),
            })
        };
        for (key, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("fusion_dim", self.fusion_dim),
            ("classifier_dim", self.classifier_dim),
            ("max_tokens", self.max_tokens),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        validate_schedule(&self.schedule, "updn.schedule")
    }
}

pub(crate) fn validate_schedule(s: &LrSchedule, key: &str) -> Result<()> {
    let lrs: Vec<f64> = match s {
        LrSchedule::Constant { lr } => vec![*lr],
        LrSchedule::WarmupStepDecay { start, peak, factor, .. } => vec![*start, *peak, *factor],
        LrSchedule::StepEvery { base, factor, every } => {
            if *every == 0 {
                return Err(LabError::Config {
                    key: format!("{key}.every"),
                    message: "must be positive".into(),
                });
            }
            vec![*base, *factor]
        }
    };
    if lrs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LabError::Config {
            key: key.into(),
            message: "learning rates and factors must be finite and non-negative".into(),
        });
    }
    Ok(())
}

/// One training or evaluation instance as seen by the reasoner.
#[derive(Clone, Debug, PartialEq)]
pub struct VqaExample {
    pub tokens: Vec<usize>,
    pub answer: usize,
    pub binary: bool,
    pub objects: ObjectSet,
    /// Per-object necessity labels; `None` excludes the instance from the
    /// auxiliary loss.
    pub necessity: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug)]
struct Gru {
    wz: Linear,
    uz: ParamId,
    wr: Linear,
    ur: ParamId,
    wh: Linear,
    uh: ParamId,
}

#[derive(Clone, Debug)]
pub struct UpDn {
    pub cfg: UpDnConfig,
    pub params: ParamSet,
    vocab_size: usize,
    object_dim: usize,
    n_answers: usize,
    embed: ParamId,
    gru: Gru,
    att_v: ParamId,
    att_q: Linear,
    att_out: ParamId,
    null_object: ParamId,
    fuse_q: Linear,
    fuse_v: Linear,
    cls_hidden: Linear,
    cls_out: Linear,
    necessity: Option<Linear>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpDnOutput {
    pub answer_probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub necessity: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Digest of every minibatch's instance indices, in order.
    pub data_order_hash: String,
}

/// Graph handles of one forward pass.
pub struct Forward {
    pub logits: Var,
    pub attention: Var,
    pub necessity: Option<Var>,
    pub batch: usize,
    pub max_objects: usize,
    pub object_mask: Vec<bool>,
}

impl UpDn {
    pub fn new(cfg: &UpDnConfig, vocab_size: usize, object_dim: usize, n_answers: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "updn-init", 0);
        let mut p = ParamSet::new();
        let (e, h, a) = (cfg.embed_dim, cfg.hidden_dim, cfg.attention_dim);
        let embed = p.add("embed", normal_matrix(&mut r, vocab_size, e, 0.3));
        let gate = |p: &mut ParamSet, r: &mut LabRng, name: &str| {
            let w = Linear::new(p, &format!("gru.w{name}"), r, e, h);
            let u = p.add(format!("gru.u{name}"), xavier(r, h, h));
            (w, u)
        };
        let (wz, uz) = gate(&mut p, &mut r, "z");
        let (wr, ur) = gate(&mut p, &mut r, "r");
        let (wh, uh) = gate(&mut p, &mut r, "h");
        let gru = Gru { wz, uz, wr, ur, wh, uh };
        let att_v = p.add("att.v", xavier(&mut r, object_dim, a));
        let att_q = Linear::new(&mut p, "att.q", &mut r, h, a);
        let att_out = p.add("att.out", xavier(&mut r, a, 1));
        let null_object = p.add("null_object", normal_matrix(&mut r, 1, object_dim, 0.1));
        let fuse_q = Linear::new(&mut p, "fuse.q", &mut r, h, cfg.fusion_dim);
        let fuse_v = Linear::new(&mut p, "fuse.v", &mut r, object_dim, cfg.fusion_dim);
        let cls_hidden = Linear::new(&mut p, "cls.hidden", &mut r, cfg.fusion_dim, cfg.classifier_dim);
        let cls_out = Linear::new(&mut p, "cls.out", &mut r, cfg.classifier_dim, n_answers);
        // separate stream: toggling the head leaves every other initial value unchanged
        let necessity = cfg.necessity_head.then(|| {
            let mut hr = rng::stream(seed, "updn-necessity-init", 0);
            Linear::new(&mut p, "necessity", &mut hr, a, 1)
        });
        UpDn {
            cfg: cfg.clone(),
            params: p,
            vocab_size,
            object_dim,
            n_answers,
            embed,
            gru,
            att_v,
            att_q,
            att_out,
            null_object,
            fuse_q,
            fuse_v,
            cls_hidden,
            cls_out,
            necessity,
        }
    }

    pub fn object_dim(&self) -> usize {
        self.object_dim
    }

    pub fn n_answers(&self) -> usize {
        self.n_answers
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.cfg.max_tokens {
            return Err(LabError::Contract(format!(
                "question length {} outside [1, {}]",
                tokens.len(),
                self.cfg.max_tokens
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(LabError::Vocabulary {
                token: t,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Final GRU state for each question in the batch, `[B, d_q]`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, questions: &[&[usize]]) -> Result<Var> {
        for q in questions {
            self.check_tokens(q)?;
        }
        let b = questions.len();
        let h_dim = self.cfg.hidden_dim;
        let steps = questions.iter().map(|q| q.len()).max().unwrap_or(0);
        let mut h = g.constant(Tensor::zeros(&[b, h_dim]));
        let gr = self.gru;
        for t in 0..steps {
            let ids: Vec<usize> = questions.iter().map(|q| q.get(t).copied().unwrap_or(0)).collect();
            let x = g.gather_rows(p.var(self.embed), &ids)?;
            let hz = g.matmul(h, p.var(gr.uz))?;
            let xz = gr.wz.apply(g, p, x)?;
            let z_pre = g.add(xz, hz)?;
            let z = g.sigmoid(z_pre)?;
            let hr = g.matmul(h, p.var(gr.ur))?;
            let xr = gr.wr.apply(g, p, x)?;
            let r_pre = g.add(xr, hr)?;
            let r = g.sigmoid(r_pre)?;
            let rh = g.mul(r, h)?;
            let hh = g.matmul(rh, p.var(gr.uh))?;
            let xh = gr.wh.apply(g, p, x)?;
            let c_pre = g.add(xh, hh)?;
            let cand = g.tanh(c_pre)?;
            // h' = h + z ⊙ (cand − h)
            let diff = g.sub(cand, h)?;
            let mut step = g.mul(z, diff)?;
            if questions.iter().any(|q| q.len() <= t) {
                let mut m = vec![0.0; b * h_dim];
                for (i, q) in questions.iter().enumerate() {
                    if t < q.len() {
                        m[i * h_dim..(i + 1) * h_dim].fill(1.0);
                    }
                }
                let mask = g.constant(Tensor::new(vec![b, h_dim], m)?);
                step = g.mul(step, mask)?;
            }
            h = g.add(h, step)?;
        }
        Ok(h)
    }

    /// Batched forward pass. Empty object sets are replaced by the learned
    /// null object.
    pub fn forward_batch(&self, g: &mut Graph, p: &Bound, batch: &[(&[usize], &ObjectSet)]) -> Result<Forward> {
        let b = batch.len();
        if b == 0 {
            return Err(LabError::Contract("empty batch".into()));
        }
        let dv = self.object_dim;
        let k = batch.iter().map(|(_, o)| o.len().max(1)).max().unwrap_or(1);
        let mut vdata = vec![0.0; b * k * dv];
        let mut null_ind = vec![0.0; b * k];
        let mut mask = vec![false; b * k];
        for (i, (_, objs)) in batch.iter().enumerate() {
            if objs.is_empty() {
                null_ind[i * k] = 1.0;
                mask[i * k] = true;
                continue;
            }
            for (j, o) in objs.objects.iter().enumerate() {
                let row = o.input_row();
                if row.len() != dv {
                    return Err(LabError::dim("updn objects", &[dv], &[row.len()]));
                }
                let at = (i * k + j) * dv;
                vdata[at..at + dv].copy_from_slice(&row);
                mask[i * k + j] = true;
            }
        }
        let questions: Vec<&[usize]> = batch.iter().map(|(q, _)| *q).collect();
        let q = self.encode(g, p, &questions)?;

        let mut v = g.constant(Tensor::new(vec![b * k, dv], vdata)?);
        if null_ind.iter().any(|&x| x > 0.0) {
            let ind = g.constant(Tensor::new(vec![b * k, 1], null_ind)?);
            let nulls = g.matmul(ind, p.var(self.null_object))?;
            v = g.add(v, nulls)?;
        }
        let va = g.matmul(v, p.var(self.att_v))?;
        let qa = self.att_q.apply(g, p, q)?;
        let qa = g.expand_rows(qa, k)?;
        let joint_pre = g.add(va, qa)?;
        let joint = g.relu(joint_pre)?;
        let att_logits = g.matmul(joint, p.var(self.att_out))?;
        let att_logits = g.reshape(att_logits, &[b, k])?;
        let attention = g.softmax(att_logits, Some(&mask))?;
        let att3 = g.reshape(attention, &[b, 1, k])?;
        let v3 = g.reshape(v, &[b, k, dv])?;
        let pooled = g.bmm(att3, v3, false)?;
        let pooled = g.reshape(pooled, &[b, dv])?;

        let fq = self.fuse_q.apply(g, p, q)?;
        let fq = g.relu(fq)?;
        let fv = self.fuse_v.apply(g, p, pooled)?;
        let fv = g.relu(fv)?;
        let fused = g.mul(fq, fv)?;
        let hid = self.cls_hidden.apply(g, p, fused)?;
        let hid = g.relu(hid)?;
        let logits = self.cls_out.apply(g, p, hid)?;

        let necessity = match &self.necessity {
            Some(head) => {
                let s = head.apply(g, p, joint)?;
                let s = g.reshape(s, &[b, k])?;
                Some(g.sigmoid(s)?)
            }
            None => None,
        };
        Ok(Forward {
            logits,
            attention,
            necessity,
            batch: b,
            max_objects: k,
            object_mask: mask,
        })
    }

    /// Batch-mean of cross-entropy plus, with the head enabled, the summed
    /// unweighted BCE over each instance's labelled objects.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, examples: &[&VqaExample]) -> Result<Var> {
        let labels: Vec<usize> = examples.iter().map(|e| e.answer).collect();
        let mut total = g.cross_entropy(fwd.logits, &labels)?;
        if let Some(pn) = fwd.necessity {
            let k = fwd.max_objects;
            let mut targets = vec![0.0; fwd.batch * k];
            let mut include = vec![false; fwd.batch * k];
            for (i, e) in examples.iter().enumerate() {
                let Some(y) = &e.necessity else { continue };
                if y.len() != e.objects.len() {
                    return Err(LabError::dim("necessity labels", &[e.objects.len()], &[y.len()]));
                }
                for (j, &yj) in y.iter().enumerate() {
                    targets[i * k + j] = if yj { 1.0 } else { 0.0 };
                    include[i * k + j] = true;
                }
            }
            if include.iter().any(|&x| x) {
                let bce = g.weighted_bce(pn, &targets, 1.0, 1.0, Some(&include))?;
                total = g.add(total, bce)?;
            }
        }
        g.scale(total, 1.0 / fwd.batch as f64)
    }

    fn outputs(&self, g: &Graph, fwd: &Forward, sizes: &[usize]) -> Vec<UpDnOutput> {
        let (b, k, a) = (fwd.batch, fwd.max_objects, self.n_answers);
        let logits = g.value(fwd.logits).data();
        let att = g.value(fwd.attention).data();
        let nec = fwd.necessity.map(|v| g.value(v).data());
        (0..b)
            .map(|i| {
                let row = &logits[i * a..(i + 1) * a];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let n = sizes[i].max(1);
                UpDnOutput {
                    answer_probs: exps.into_iter().map(|e| e / z).collect(),
                    attention: att[i * k..i * k + n].to_vec(),
                    necessity: nec.map(|d| d[i * k..i * k + sizes[i]].to_vec()),
                }
            })
            .collect()
    }

    pub fn forward(&self, tokens: &[usize], objects: &ObjectSet) -> Result<UpDnOutput> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let fwd = self.forward_batch(&mut g, &p, &[(tokens, objects)])?;
        Ok(self.outputs(&g, &fwd, &[objects.len()]).remove(0))
    }

    pub fn predict(&self, examples: &[VqaExample]) -> Result<Vec<UpDnOutput>> {
        let mut out = Vec::with_capacity(examples.len());
        let mut g = Graph::new();
        for chunk in examples.chunks(self.cfg.batch_size.max(1)) {
            g.reset();
            let p = self.params.bind_frozen(&mut g);
            let batch: Vec<(&[usize], &ObjectSet)> = chunk.iter().map(|e| (e.tokens.as_slice(), &e.objects)).collect();
            let fwd = self.forward_batch(&mut g, &p, &batch)?;
            let sizes: Vec<usize> = chunk.iter().map(|e| e.objects.len()).collect();
            out.extend(self.outputs(&g, &fwd, &sizes));
        }
        Ok(out)
    }

    /// Shuffled-minibatch training. The shuffle of epoch `e` is keyed by
    /// `(seed, e)` only, so runs with equal seeds see equal batches.
    pub fn train(&mut self, examples: &[VqaExample], seed: u64) -> Result<TrainReport> {
        if examples.is_empty() {
            return Err(LabError::Contract("training set is empty".into()));
        }
        let mut opt = Optimizer::new(self.cfg.optimizer, &self.params);
        let mut hasher = Sha256::new();
        let mut records = Vec::with_capacity(self.cfg.epochs);
        let bs = self.cfg.batch_size;
        let mut g = Graph::new();
        for epoch in 0..self.cfg.epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut rng::stream(seed, "updn-shuffle", epoch as u64));
            let n_batches = order.len().div_ceil(bs);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            let mut lr = 0.0;
            for (bi, idx) in order.chunks(bs).enumerate() {
                for i in idx {
                    hasher.update((*i as u64).to_le_bytes());
                }
                lr = self.cfg.schedule.lr(epoch, bi as f64 / n_batches as f64);
                let batch: Vec<&VqaExample> = idx.iter().map(|&i| &examples[i]).collect();
                g.reset();
                let p = self.params.bind(&mut g);
                let inputs: Vec<(&[usize], &ObjectSet)> = batch.iter().map(|e| (e.tokens.as_slice(), &e.objects)).collect();
                let diverged = |loss: f64| LabError::Divergence {
                    epoch,
                    step: bi,
                    loss,
                };
                let step = self.forward_batch(&mut g, &p, &inputs).and_then(|fwd| {
                    let loss = self.loss(&mut g, &fwd, &batch)?;
                    Ok((fwd, loss))
                });
                let (fwd, loss) = match step {
                    Ok(x) => x,
                    Err(LabError::NonFinite(_)) => return Err(diverged(f64::NAN)),
                    Err(e) => return Err(e),
                };
                let lv = g.value(loss).item()?;
                if !lv.is_finite() {
                    return Err(diverged(lv));
                }
                loss_sum += lv * batch.len() as f64;
                let a = self.n_answers;
                let logits = g.value(fwd.logits).data();
                for (i, e) in batch.iter().enumerate() {
                    if argmax(&logits[i * a..(i + 1) * a]) == e.answer {
                        correct += 1;
                    }
                }
                let mut grads = g.backward(loss)?;
                let gs = p.gradients(&mut grads);
                opt.step(&mut self.params, &gs, lr)?;
            }
            records.push(EpochRecord {
                epoch,
                lr,
                loss: loss_sum / examples.len() as f64,
                train_accuracy: correct as f64 / examples.len() as f64,
            });
        }
        Ok(TrainReport {
            epochs: records,
            steps: opt.steps_taken(),
            data_order_hash: crate::io::hex(&hasher.finalize()),
        })
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectedObject;
    use crate::geometry::BBox;

    fn objects(n: usize, seed: u64) -> ObjectSet {
        let mut r = rng::stream(seed, "objs", 0);
        ObjectSet {
            objects: (0..n)
                .map(|i| DetectedObject {
                    feature: normal_matrix(&mut r, 1, 4, 1.0).into_data(),
                    bbox: BBox::new(0.1 * i as f64, 0.1, 0.1 * i as f64 + 0.2, 0.4),
                })
                .collect(),
        }
    }

    fn small_cfg(head: bool) -> UpDnConfig {
        UpDnConfig {
            embed_dim: 6,
            hidden_dim: 8,
            attention_dim: 7,
            fusion_dim: 5,
            classifier_dim: 6,
            necessity_head: head,
            epochs: 2,
            batch_size: 3,
            ..UpDnConfig::default()
        }
    }

    fn model(head: bool) -> UpDn {
        UpDn::new(&small_cfg(head), 10, 8, 5, 3)
    }

    #[test]
    fn single_object_gets_full_attention() {
        let out = model(false).forward(&[1, 2, 3], &objects(1, 0)).unwrap();
        assert_eq!(out.attention, vec![1.0]);
        assert!((out.answer_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_object_leaves_answer_unchanged() {
        let m = model(true);
        let one = objects(1, 4);
        let two = ObjectSet {
            objects: vec![one.objects[0].clone(), one.objects[0].clone()],
        };
        let a = m.forward(&[4, 2], &one).unwrap();
        let b = m.forward(&[4, 2], &two).unwrap();
        for (x, y) in a.answer_probs.iter().zip(&b.answer_probs) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((b.attention[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn permuting_objects_permutes_attention() {
        let m = model(false);
        let objs = objects(4, 9);
        let mut rev = objs.clone();
        rev.objects.reverse();
        let a = m.forward(&[1, 5], &objs).unwrap();
        let b = m.forward(&[1, 5], &rev).unwrap();
        for i in 0..4 {
            assert!((a.attention[i] - b.attention[3 - i]).abs() < 1e-12);
        }
        for (x, y) in a.answer_probs.iter().zip(&b.answer_probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_encoding() {
        let mut m = model(false);
        for t in m.params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let h = m.encode(&mut g, &p, &[&[1, 2, 3], &[4]]).unwrap();
        assert!(g.value(h).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn token_order_matters() {
        let m = model(false);
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let h = m.encode(&mut g, &p, &[&[1, 2, 3], &[3, 2, 1]]).unwrap();
        let v = g.value(h).data();
        assert!(v[..8].iter().zip(&v[8..]).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn unknown_token_and_empty_set() {
        let m = model(false);
        assert!(matches!(m.forward(&[11], &objects(1, 0)), Err(LabError::Vocabulary { .. })));
        // oracle questions without necessary objects see the null object
        let out = m.forward(&[1], &ObjectSet::default()).unwrap();
        assert_eq!(out.attention, vec![1.0]);
    }

    #[test]
    fn head_toggle_keeps_shared_init() {
        let (a, b) = (model(false), model(true));
        for (name, t) in a.params.iter() {
            let other = b.params.iter().find(|(n, _)| *n == name).unwrap().1;
            assert_eq!(t, other, "{name}");
        }
        assert_eq!(b.params.len(), a.params.len() + 2);
    }

    #[test]
    fn loss_without_head_is_cross_entropy() {
        let m = model(false);
        let ex = VqaExample {
            tokens: vec![1, 2],
            answer: 3,
            binary: false,
            objects: objects(2, 1),
            necessity: Some(vec![true, false]),
        };
        let out = m.forward(&ex.tokens, &ex.objects).unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let fwd = m.forward_batch(&mut g, &p, &[(&ex.tokens, &ex.objects)]).unwrap();
        let l = m.loss(&mut g, &fwd, &[&ex]).unwrap();
        assert!((g.value(l).item().unwrap() + out.answer_probs[3].ln()).abs() < 1e-10);
    }

    #[test]
    fn loss_with_head_adds_bce() {
        let m = model(true);
        let ex = VqaExample {
            tokens: vec![1, 2],
            answer: 0,
            binary: true,
            objects: objects(2, 1),
            necessity: Some(vec![true, false]),
        };
        let out = m.forward(&ex.tokens, &ex.objects).unwrap();
        let p = out.necessity.clone().unwrap();
        let expect = -out.answer_probs[0].ln() - p[0].ln() - (1.0 - p[1]).ln();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let fwd = m.forward_batch(&mut g, &b, &[(&ex.tokens, &ex.objects)]).unwrap();
        let l = m.loss(&mut g, &fwd, &[&ex]).unwrap();
        assert!((g.value(l).item().unwrap() - expect).abs() < 1e-10);
        let bad = VqaExample {
            necessity: Some(vec![true]),
            ..ex
        };
        assert!(matches!(m.loss(&mut g, &fwd, &[&bad]), Err(LabError::Dimension { .. })));
    }

    fn toy_data() -> Vec<VqaExample> {
        (0..10)
            .map(|i| VqaExample {
                tokens: vec![1 + i % 3, 2],
                answer: i % 5,
                binary: false,
                objects: objects(1 + i % 3, i as u64),
                necessity: Some(vec![true; 1 + i % 3]),
            })
            .collect()
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut cfg = small_cfg(true);
        cfg.schedule = LrSchedule::Constant { lr: 0.0 };
        let mut m = UpDn::new(&cfg, 10, 8, 5, 3);
        let before = m.params.clone();
        m.train(&toy_data(), 1).unwrap();
        assert_eq!(before.tensors(), m.params.tensors());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut m = model(true);
            let r = m.train(&toy_data(), 5).unwrap();
            (r, m.params.tensors().to_vec())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
