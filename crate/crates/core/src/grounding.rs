//! Question-conditioned proposal selector: self-attention over proposals,
//! cross-attention with the question, per-proposal sigmoid scores and the
//! two-stage NMS selection pipeline.

use crate::autodiff::{Graph, Var};
use crate::detector::RegionProposal;
use crate::error::{LabError, Result};
use crate::geometry::{iou, match_gt, nms, rank_by_score, BBox};
use crate::nn::{normal_matrix, xavier, Bound, LayerNorm, Linear, ParamId, ParamSet};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::rng::{self, LabRng};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    /// Intra-modality blocks on the proposal side (N_r).
    pub n_intra: usize,
    /// Cross-modality quadruplets (N_x).
    pub n_cross: usize,
    /// Intra-modality blocks of the question encoder.
    pub n_question: usize,
    pub max_tokens: usize,
    pub nms1: f64,
    pub nms2: f64,
    pub theta_s: f64,
    pub theta_iou: f64,
    pub w_pos: f64,
    pub w_neg: f64,
    /// Loss over a batch: summed over proposals, then summed or averaged
    /// over instances.
    pub reduction: Reduction,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            d_model: 64,
            ff_dim: 128,
            n_intra: 3,
            n_cross: 3,
            n_question: 1,
            max_tokens: 16,
            nms1: 0.7,
            nms2: 0.4,
            theta_s: 0.5,
            theta_iou: 0.5,
            w_pos: 5.0,
            w_neg: 1.0,
            reduction: Reduction::Mean,
            epochs: 8,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            schedule: LrSchedule::StepEvery {
                base: 1e-3,
                every: 6,
                factor: 0.1,
            },
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(LabError::Config {
                key: format!("selector.{key}"),
                message: message.into(),
            })
        };
        for (key, v) in [
            ("d_model", self.d_model),
            ("ff_dim", self.ff_dim),
            ("n_intra", self.n_intra),
            ("n_cross", self.n_cross),
            ("max_tokens", self.max_tokens),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        for (key, v) in [
            ("nms1", self.nms1),
            ("nms2", self.nms2),
            ("theta_s", self.theta_s),
            ("theta_iou", self.theta_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, "must be in [0, 1]");
            }
        }
        if !(self.w_pos.is_finite() && self.w_neg.is_finite() && self.w_pos >= 0.0 && self.w_neg >= 0.0) {
            return bad("w_pos", "class weights must be finite and non-negative");
        }
        crate::updn::validate_schedule(&self.schedule, "selector.schedule")
    }
}

/// Residual attention sublayer plus position-wise feed-forward, each with
/// layer normalization on its input.
#[derive(Clone, Copy, Debug)]
struct Block {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

impl Block {
    fn new(p: &mut ParamSet, name: &str, r: &mut LabRng, d: usize, ff: usize) -> Block {
        Block {
            wq: p.add(format!("{name}.wq"), xavier(r, d, d)),
            wk: p.add(format!("{name}.wk"), xavier(r, d, d)),
            wv: p.add(format!("{name}.wv"), xavier(r, d, d)),
            ln1: LayerNorm::new(p, &format!("{name}.ln1"), d),
            ff1: Linear::new(p, &format!("{name}.ff1"), r, d, ff),
            ff2: Linear::new(p, &format!("{name}.ff2"), r, ff, d),
            ln2: LayerNorm::new(p, &format!("{name}.ln2"), d),
        }
    }
}

/// Sequences of a batch, padded to a common length.
#[derive(Clone, Copy, Debug)]
pub struct Seq<'a> {
    /// `[B, L, d]`
    pub x: Var,
    /// Valid positions, `B·L` entries.
    pub mask: &'a [bool],
    pub len: usize,
}

fn query_mask(key_mask: &[bool], batch: usize, lq: usize, lk: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(batch * lq * lk);
    for b in 0..batch {
        for _ in 0..lq {
            m.extend_from_slice(&key_mask[b * lk..(b + 1) * lk]);
        }
    }
    m
}

/// Scaled dot-product attention of `x` queries over `y` keys/values, then
/// residual + norm and feed-forward + norm. Returns the output `[B, Lx, d]`
/// and the coefficients `[B, Lx, Ly]`.
fn attend(g: &mut Graph, p: &Bound, blk: &Block, x: Seq, y: Seq, batch: usize) -> Result<(Var, Var)> {
    if !y.mask.chunks(y.len.max(1)).all(|row| row.iter().any(|&m| m)) {
        return Err(LabError::Contract("attention over an all-masked sequence".into()));
    }
    let d = g.shape(x.x)[2];
    let xn = blk.ln1.apply(g, p, x.x)?;
    let yn = if x.x == y.x { xn } else { blk.ln1.apply(g, p, y.x)? };
    let q = g.linear(xn, p.var(blk.wq), None)?;
    let k = g.linear(yn, p.var(blk.wk), None)?;
    let v = g.linear(yn, p.var(blk.wv), None)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
    let mask = query_mask(y.mask, batch, x.len, y.len);
    let alpha = g.softmax(scores, Some(&mask))?;
    let ctx = g.bmm(alpha, v, false)?;
    let h = g.add(x.x, ctx)?;
    let f = blk.ln2.apply(g, p, h)?;
    let f = blk.ff1.apply(g, p, f)?;
    let f = g.gelu(f)?;
    let f = blk.ff2.apply(g, p, f)?;
    let out = g.add(h, f)?;
    Ok((out, alpha))
}

fn intra(g: &mut Graph, p: &Bound, blk: &Block, x: Seq, batch: usize) -> Result<(Var, Var)> {
    attend(g, p, blk, x, x, batch)
}

#[derive(Clone, Copy, Debug)]
struct Quad {
    x_from_y: Block,
    y_from_x: Block,
    x_self: Block,
    y_self: Block,
}

#[derive(Clone, Debug)]
pub struct Selector {
    pub cfg: SelectorConfig,
    pub params: ParamSet,
    vocab_size: usize,
    input_dim: usize,
    token_embed: ParamId,
    pos_embed: ParamId,
    input_proj: Linear,
    /// Normalizes each stream's embeddings before the first block.
    input_norm: LayerNorm,
    question_norm: LayerNorm,
    question_blocks: Vec<Block>,
    intra_blocks: Vec<Block>,
    cross: Vec<Quad>,
    final_norm: LayerNorm,
    score: Linear,
}

/// One selector input: proposal rows (feature ⊕ box) and question tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorInput {
    pub rows: Vec<Vec<f64>>,
    pub tokens: Vec<usize>,
}

pub struct SelectorForward {
    /// `[B, Lx]` sigmoid scores.
    pub scores: Var,
    /// Last proposal→token cross-attention coefficients, `[B, Lx, Ly]`.
    pub cross_attention: Var,
    pub batch: usize,
    pub lx: usize,
    pub ly: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Training instance: proposals surviving the first NMS, with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorExample {
    pub input: SelectorInput,
    pub labels: Vec<bool>,
}

impl Selector {
    pub fn new(cfg: &SelectorConfig, vocab_size: usize, input_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "selector-init", 0);
        let mut p = ParamSet::new();
        let (d, ff) = (cfg.d_model, cfg.ff_dim);
        let token_embed = p.add("q.embed", normal_matrix(&mut r, vocab_size, d, 1.0));
        let pos_embed = p.add("q.pos", normal_matrix(&mut r, cfg.max_tokens, d, 0.5));
        let question_norm = LayerNorm::new(&mut p, "q.norm", d);
        let question_blocks = (0..cfg.n_question)
            .map(|i| Block::new(&mut p, &format!("q.intra{i}"), &mut r, d, ff))
            .collect();
        let input_proj = Linear::new(&mut p, "r.proj", &mut r, input_dim, d);
        let input_norm = LayerNorm::new(&mut p, "r.proj_norm", d);
        let intra_blocks = (0..cfg.n_intra)
            .map(|i| Block::new(&mut p, &format!("r.intra{i}"), &mut r, d, ff))
            .collect();
        let cross = (0..cfg.n_cross)
            .map(|i| Quad {
                x_from_y: Block::new(&mut p, &format!("x{i}.r_from_q"), &mut r, d, ff),
                y_from_x: Block::new(&mut p, &format!("x{i}.q_from_r"), &mut r, d, ff),
                x_self: Block::new(&mut p, &format!("x{i}.r_self"), &mut r, d, ff),
                y_self: Block::new(&mut p, &format!("x{i}.q_self"), &mut r, d, ff),
            })
            .collect();
        let final_norm = LayerNorm::new(&mut p, "r.norm", d);
        let score = Linear::zeroed(&mut p, "score", d, 1);
        Selector {
            cfg: cfg.clone(),
            params: p,
            vocab_size,
            input_dim,
            token_embed,
            pos_embed,
            input_proj,
            input_norm,
            question_norm,
            question_blocks,
            intra_blocks,
            cross,
            final_norm,
            score,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn forward_batch(&self, g: &mut Graph, p: &Bound, batch: &[&SelectorInput]) -> Result<SelectorForward> {
        let b = batch.len();
        if b == 0 {
            return Err(LabError::Contract("empty batch".into()));
        }
        let d = self.cfg.d_model;
        let lx = batch.iter().map(|s| s.rows.len()).max().unwrap_or(0);
        let ly = batch.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
        let mut xmask = vec![false; b * lx];
        let mut ymask = vec![false; b * ly];
        let mut rows = vec![0.0; b * lx * self.input_dim];
        let mut ids = vec![0usize; b * ly];
        let mut pos = vec![0usize; b * ly];
        for (i, s) in batch.iter().enumerate() {
            if s.rows.is_empty() {
                return Err(LabError::Contract("selector needs at least one proposal".into()));
            }
            if s.tokens.is_empty() || s.tokens.len() > self.cfg.max_tokens {
                return Err(LabError::Contract(format!("question length {} out of range", s.tokens.len())));
            }
            for (j, r) in s.rows.iter().enumerate() {
                if r.len() != self.input_dim {
                    return Err(LabError::dim("selector rows", &[self.input_dim], &[r.len()]));
                }
                let at = (i * lx + j) * self.input_dim;
                rows[at..at + self.input_dim].copy_from_slice(r);
                xmask[i * lx + j] = true;
            }
            for (t, &tok) in s.tokens.iter().enumerate() {
                if tok >= self.vocab_size {
                    return Err(LabError::Vocabulary {
                        token: tok,
                        size: self.vocab_size,
                    });
                }
                ids[i * ly + t] = tok;
                pos[i * ly + t] = t;
                ymask[i * ly + t] = true;
            }
        }
        let emb = g.gather_rows(p.var(self.token_embed), &ids)?;
        let pe = g.gather_rows(p.var(self.pos_embed), &pos)?;
        let y0 = g.add(emb, pe)?;
        let y0 = g.reshape(y0, &[b, ly, d])?;
        let mut y = self.question_norm.apply(g, p, y0)?;
        for blk in &self.question_blocks {
            y = intra(g, p, blk, Seq { x: y, mask: &ymask, len: ly }, b)?.0;
        }
        let xin = g.constant(Tensor::new(vec![b, lx, self.input_dim], rows)?);
        let x0 = self.input_proj.apply(g, p, xin)?;
        let mut x = self.input_norm.apply(g, p, x0)?;
        for blk in &self.intra_blocks {
            x = intra(g, p, blk, Seq { x, mask: &xmask, len: lx }, b)?.0;
        }
        let mut last_cross = None;
        for quad in &self.cross {
            let xs = Seq { x, mask: &xmask, len: lx };
            let ys = Seq { x: y, mask: &ymask, len: ly };
            let (x1, a) = attend(g, p, &quad.x_from_y, xs, ys, b)?;
            let (y1, _) = attend(g, p, &quad.y_from_x, ys, xs, b)?;
            x = intra(g, p, &quad.x_self, Seq { x: x1, mask: &xmask, len: lx }, b)?.0;
            y = intra(g, p, &quad.y_self, Seq { x: y1, mask: &ymask, len: ly }, b)?.0;
            last_cross = Some(a);
        }
        let x = self.final_norm.apply(g, p, x)?;
        let s = self.score.apply(g, p, x)?;
        let s = g.reshape(s, &[b, lx])?;
        let scores = g.sigmoid(s)?;
        Ok(SelectorForward {
            scores,
            cross_attention: last_cross.expect("n_cross >= 1"),
            batch: b,
            lx,
            ly,
        })
    }

    /// Scores and last cross-attention rows for one input.
    pub fn score(&self, input: &SelectorInput) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let f = self.forward_batch(&mut g, &p, &[input])?;
        let n = input.rows.len();
        let scores = g.value(f.scores).data()[..n].to_vec();
        let att = g.value(f.cross_attention).data();
        let rows = (0..n)
            .map(|i| att[i * f.ly..i * f.ly + input.tokens.len()].to_vec())
            .collect();
        Ok((scores, rows))
    }

    pub fn score_many(&self, inputs: &[SelectorInput]) -> Result<Vec<(Vec<f64>, Vec<Vec<f64>>)>> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut g = Graph::new();
        for chunk in inputs.chunks(self.cfg.batch_size.max(1)) {
            g.reset();
            let p = self.params.bind_frozen(&mut g);
            let refs: Vec<&SelectorInput> = chunk.iter().collect();
            let f = self.forward_batch(&mut g, &p, &refs)?;
            let sc = g.value(f.scores).data();
            let att = g.value(f.cross_attention).data();
            for (i, inp) in chunk.iter().enumerate() {
                let n = inp.rows.len();
                let scores = sc[i * f.lx..i * f.lx + n].to_vec();
                let rows = (0..n)
                    .map(|j| {
                        let at = (i * f.lx + j) * f.ly;
                        att[at..at + inp.tokens.len()].to_vec()
                    })
                    .collect();
                out.push((scores, rows));
            }
        }
        Ok(out)
    }

    pub fn loss(&self, g: &mut Graph, f: &SelectorForward, batch: &[&SelectorExample]) -> Result<Var> {
        let mut targets = vec![0.0; f.batch * f.lx];
        let mut include = vec![false; f.batch * f.lx];
        for (i, e) in batch.iter().enumerate() {
            if e.labels.len() != e.input.rows.len() {
                return Err(LabError::dim("selector labels", &[e.input.rows.len()], &[e.labels.len()]));
            }
            for (j, &y) in e.labels.iter().enumerate() {
                targets[i * f.lx + j] = if y { 1.0 } else { 0.0 };
                include[i * f.lx + j] = true;
            }
        }
        let l = g.weighted_bce(f.scores, &targets, self.cfg.w_pos, self.cfg.w_neg, Some(&include))?;
        match self.cfg.reduction {
            Reduction::Sum => Ok(l),
            Reduction::Mean => g.scale(l, 1.0 / f.batch as f64),
        }
    }

    pub fn train(&mut self, examples: &[SelectorExample], seed: u64) -> Result<Vec<SelectorEpoch>> {
        if examples.is_empty() {
            return Err(LabError::Contract("selector training set is empty".into()));
        }
        let mut opt = Optimizer::new(self.cfg.optimizer, &self.params);
        let mut g = Graph::new();
        let mut log = Vec::with_capacity(self.cfg.epochs);
        let theta = self.cfg.theta_s;
        for epoch in 0..self.cfg.epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut rng::stream(seed, "selector-shuffle", epoch as u64));
            let n_batches = order.len().div_ceil(self.cfg.batch_size);
            let (mut loss_sum, mut tp, mut fp, mut fneg) = (0.0, 0usize, 0usize, 0usize);
            let mut lr = 0.0;
            for (bi, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                lr = self.cfg.schedule.lr(epoch, bi as f64 / n_batches as f64);
                let batch: Vec<&SelectorExample> = idx.iter().map(|&i| &examples[i]).collect();
                let inputs: Vec<&SelectorInput> = batch.iter().map(|e| &e.input).collect();
                g.reset();
                let p = self.params.bind(&mut g);
                let step = self
                    .forward_batch(&mut g, &p, &inputs)
                    .and_then(|f| self.loss(&mut g, &f, &batch).map(|l| (f, l)));
                let (f, loss) = match step {
                    Ok(x) => x,
                    Err(LabError::NonFinite(_)) => {
                        return Err(LabError::Divergence {
                            epoch,
                            step: bi,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                };
                let lv = g.value(loss).item()?;
                loss_sum += lv;
                let sc = g.value(f.scores).data();
                for (i, e) in batch.iter().enumerate() {
                    for (j, &y) in e.labels.iter().enumerate() {
                        match (sc[i * f.lx + j] >= theta, y) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fneg += 1,
                            _ => {}
                        }
                    }
                }
                let mut grads = g.backward(loss)?;
                let gs = p.gradients(&mut grads);
                opt.step(&mut self.params, &gs, lr)?;
            }
            log.push(SelectorEpoch {
                epoch,
                lr,
                loss: loss_sum / n_batches as f64,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fneg),
            });
        }
        Ok(log)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// NMS at `nms1` on objectness; the survivors are what the selector sees.
pub fn first_stage(proposals: &[RegionProposal], nms1: f64) -> Result<Vec<usize>> {
    let boxes: Vec<BBox> = proposals.iter().map(|r| r.bbox).collect();
    let obj: Vec<f64> = proposals.iter().map(|r| r.objectness).collect();
    nms(&boxes, &obj, nms1)
}

pub fn selector_input(proposals: &[RegionProposal], candidates: &[usize], tokens: &[usize]) -> SelectorInput {
    SelectorInput {
        rows: candidates
            .iter()
            .map(|&i| {
                let mut r = proposals[i].feature.clone();
                r.extend_from_slice(&proposals[i].bbox.coords());
                r
            })
            .collect(),
        tokens: tokens.to_vec(),
    }
}

/// Labels of first-stage survivors against the necessary boxes.
pub fn training_example(
    proposals: &[RegionProposal],
    tokens: &[usize],
    necessary: &[BBox],
    cfg: &SelectorConfig,
) -> Result<SelectorExample> {
    let candidates = first_stage(proposals, cfg.nms1)?;
    let input = selector_input(proposals, &candidates, tokens);
    let boxes: Vec<BBox> = candidates.iter().map(|&i| proposals[i].bbox).collect();
    Ok(SelectorExample {
        input,
        labels: match_gt(&boxes, necessary, cfg.theta_iou),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// First-stage survivors (proposal indices).
    pub candidates: Vec<usize>,
    /// Selector score per candidate.
    pub scores: Vec<f64>,
    /// Selected proposal indices, in score order.
    pub selected: Vec<usize>,
    /// Last cross-attention row per candidate (over question tokens).
    pub attention: Vec<Vec<f64>>,
    pub fallback: bool,
}

/// Second stage on precomputed candidate scores: threshold at `theta_s`,
/// then NMS at `nms2` on the scores; falls back to the best candidate.
pub fn second_stage(
    proposals: &[RegionProposal],
    candidates: &[usize],
    scores: &[f64],
    theta_s: f64,
    nms2: f64,
) -> Result<(Vec<usize>, bool)> {
    if candidates.is_empty() || candidates.len() != scores.len() {
        return Err(LabError::dim("second_stage", &[candidates.len()], &[scores.len()]));
    }
    let passing: Vec<usize> = (0..candidates.len()).filter(|&i| scores[i] >= theta_s).collect();
    if passing.is_empty() {
        return Ok((vec![candidates[rank_by_score(scores)[0]]], true));
    }
    let boxes: Vec<BBox> = passing.iter().map(|&i| proposals[candidates[i]].bbox).collect();
    let sc: Vec<f64> = passing.iter().map(|&i| scores[i]).collect();
    let kept = nms(&boxes, &sc, nms2)?;
    Ok((kept.into_iter().map(|k| candidates[passing[k]]).collect(), false))
}

pub fn select(selector: &Selector, proposals: &[RegionProposal], tokens: &[usize]) -> Result<SelectionResult> {
    let cfg = &selector.cfg;
    let candidates = first_stage(proposals, cfg.nms1)?;
    let (scores, attention) = selector.score(&selector_input(proposals, &candidates, tokens))?;
    let (selected, fallback) = second_stage(proposals, &candidates, &scores, cfg.theta_s, cfg.nms2)?;
    Ok(SelectionResult {
        candidates,
        scores,
        selected,
        attention,
        fallback,
    })
}

/// Baseline indices plus every scored candidate at or above `theta_s` whose
/// IoU with each baseline box stays below `theta_iou`. No NMS among the additions.
pub fn union_augment(
    baseline: &[usize],
    proposals: &[RegionProposal],
    candidates: &[usize],
    scores: &[f64],
    theta_s: f64,
    theta_iou: f64,
) -> Vec<usize> {
    let mut out = baseline.to_vec();
    for (&c, &s) in candidates.iter().zip(scores) {
        if s >= theta_s
            && !out[..baseline.len()].contains(&c)
            && baseline.iter().all(|&b| iou(&proposals[c].bbox, &proposals[b].bbox) < theta_iou)
        {
            out.push(c);
        }
    }
    out
}

/// Object-by-token attention rows for the selected proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub tokens: Vec<String>,
    pub proposal_ids: Vec<usize>,
    pub boxes: Vec<BBox>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn export_attention(
    result: &SelectionResult,
    proposals: &[RegionProposal],
    tokens: &[String],
) -> Result<AttentionExport> {
    let mut matrix = Vec::with_capacity(result.selected.len());
    for &s in &result.selected {
        let pos = result
            .candidates
            .iter()
            .position(|&c| c == s)
            .ok_or_else(|| LabError::Contract(format!("selected proposal {s} is not a candidate")))?;
        let row = result.attention[pos].clone();
        if row.len() != tokens.len() {
            return Err(LabError::dim("export_attention", &[tokens.len()], &[row.len()]));
        }
        matrix.push(row);
    }
    Ok(AttentionExport {
        tokens: tokens.to_vec(),
        proposal_ids: result.selected.clone(),
        boxes: result.selected.iter().map(|&i| proposals[i].bbox).collect(),
        matrix,
    })
}

impl AttentionExport {
    pub fn to_text(&self) -> String {
        let mut s = format!("proposal\t{}\n", self.tokens.join("\t"));
        for (id, row) in self.proposal_ids.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&format!("{id}\t{}\n", cells.join("\t")));
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let (cell, left, top) = (36.0, 70.0, 80.0);
        let w = left + cell * self.tokens.len() as f64 + 10.0;
        let h = top + cell * self.matrix.len() as f64 + 10.0;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        for (j, t) in self.tokens.iter().enumerate() {
            let x = left + cell * (j as f64 + 0.5);
            s.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-45 {x} {})\">{}</text>\n",
                top - 6.0,
                top - 6.0,
                xml_escape(t)
            ));
        }
        for (i, row) in self.matrix.iter().enumerate() {
            let y = top + cell * i as f64;
            s.push_str(&format!(
                "<text x=\"4\" y=\"{}\">obj {}</text>\n",
                y + cell * 0.6,
                self.proposal_ids[i]
            ));
            for (j, &v) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                s.push_str(&format!(
                    "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb(255,{shade},{shade})\" stroke=\"#ccc\"/>\n",
                    left + cell * j as f64
                ));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Shannon entropy (nats) of an attention row.
pub fn row_entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ProposalSource;

    fn tiny_cfg() -> SelectorConfig {
        SelectorConfig {
            d_model: 8,
            ff_dim: 12,
            n_intra: 1,
            n_cross: 1,
            epochs: 1,
            batch_size: 2,
            ..SelectorConfig::default()
        }
    }

    fn input(n: usize, tokens: Vec<usize>, seed: u64) -> SelectorInput {
        let mut r = rng::stream(seed, "rows", 0);
        SelectorInput {
            rows: (0..n).map(|_| normal_matrix(&mut r, 1, 6, 1.0).into_data()).collect(),
            tokens,
        }
    }

    fn randomized(cfg: &SelectorConfig) -> Selector {
        let mut s = Selector::new(cfg, 10, 6, 2);
        // non-zero scoring weights so scores depend on the inputs
        let mut r = rng::stream(4, "score", 0);
        let names: Vec<String> = s.params.names().to_vec();
        for (n, t) in names.iter().zip(s.params.tensors_mut()) {
            if n.starts_with("score") {
                let shape = t.shape().to_vec();
                *t = normal_matrix(&mut r, 1, t.len(), 1.0).reshaped(&shape).unwrap();
            }
        }
        s
    }

    #[test]
    fn zero_init_scores_are_half() {
        let s = Selector::new(&tiny_cfg(), 10, 6, 1);
        let (sc, att) = s.score(&input(3, vec![1, 2], 0)).unwrap();
        assert!(sc.iter().all(|&v| v == 0.5));
        for row in att {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_gets_full_cross_attention() {
        let s = randomized(&tiny_cfg());
        let (_, att) = s.score(&input(4, vec![3], 0)).unwrap();
        assert!(att.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn proposal_permutation_permutes_scores() {
        let s = randomized(&tiny_cfg());
        let a = input(5, vec![1, 2, 3], 7);
        let mut b = a.clone();
        b.rows.reverse();
        let (sa, _) = s.score(&a).unwrap();
        let (sb, _) = s.score(&b).unwrap();
        for i in 0..5 {
            assert!((sa[i] - sb[4 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn token_order_changes_scores() {
        let s = randomized(&tiny_cfg());
        let a = input(3, vec![1, 2, 3], 7);
        let b = SelectorInput {
            tokens: vec![3, 2, 1],
            ..a.clone()
        };
        let (sa, _) = s.score(&a).unwrap();
        let (sb, _) = s.score(&b).unwrap();
        assert!(sa.iter().zip(&sb).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn batched_scores_match_single() {
        let s = randomized(&tiny_cfg());
        let inputs = vec![input(3, vec![1, 2], 1), input(5, vec![4, 5, 6, 7], 2), input(1, vec![9], 3)];
        let many = s.score_many(&inputs).unwrap();
        for (inp, (sc, att)) in inputs.iter().zip(&many) {
            let (s1, a1) = s.score(inp).unwrap();
            for (x, y) in s1.iter().zip(sc) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a1.len(), att.len());
        }
    }

    #[test]
    fn balanced_unit_weight_loss_at_init() {
        let cfg = SelectorConfig {
            w_pos: 1.0,
            ..tiny_cfg()
        };
        let s = Selector::new(&cfg, 10, 6, 1);
        let ex = SelectorExample {
            input: input(4, vec![1, 2], 0),
            labels: vec![true, false, true, false],
        };
        let mut g = Graph::new();
        let p = s.params.bind(&mut g);
        let f = s.forward_batch(&mut g, &p, &[&ex.input]).unwrap();
        let l = s.loss(&mut g, &f, &[&ex]).unwrap();
        assert!((g.value(l).item().unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_checked() {
        let s = Selector::new(&tiny_cfg(), 10, 6, 1);
        assert!(matches!(s.score(&input(2, vec![10], 0)), Err(LabError::Vocabulary { .. })));
    }

    fn proposal(b: BBox) -> RegionProposal {
        RegionProposal {
            bbox: b,
            feature: vec![0.0; 2],
            objectness: 0.5,
            class_conf: vec![1.0],
            source: ProposalSource::Rpn,
        }
    }

    #[test]
    fn second_stage_fallback_and_overlap() {
        let a = BBox::new(0.1, 0.1, 0.5, 0.5);
        let b = BBox::new(0.12, 0.1, 0.52, 0.5);
        let c = BBox::new(0.7, 0.7, 0.9, 0.9);
        let props = vec![proposal(a), proposal(b), proposal(c)];
        let (sel, fb) = second_stage(&props, &[0, 1, 2], &[0.9, 0.8, 0.2], 0.5, 0.4).unwrap();
        assert_eq!((sel, fb), (vec![0], false));
        let (sel, fb) = second_stage(&props, &[0, 1, 2], &[0.1, 0.3, 0.2], 0.5, 0.4).unwrap();
        assert_eq!((sel, fb), (vec![1], true));
    }

    #[test]
    fn union_examples() {
        let a = BBox::new(0.1, 0.1, 0.3, 0.3);
        let far = BBox::new(0.6, 0.6, 0.8, 0.8);
        let props = vec![proposal(a), proposal(far), proposal(a)];
        assert_eq!(union_augment(&[0], &props, &[0, 1, 2], &[0.9, 0.2, 0.9], 0.5, 0.5), vec![0]);
        assert_eq!(union_augment(&[0], &props, &[0, 1, 2], &[0.9, 0.7, 0.9], 0.5, 0.5), vec![0, 1]);
    }

    #[test]
    fn export_shape() {
        let props = vec![proposal(BBox::new(0.0, 0.0, 0.2, 0.2)), proposal(BBox::new(0.5, 0.5, 0.7, 0.7))];
        let r = SelectionResult {
            candidates: vec![0, 1],
            scores: vec![0.9, 0.6],
            selected: vec![0, 1],
            attention: vec![vec![0.2, 0.8], vec![0.5, 0.5]],
            fallback: false,
        };
        let e = export_attention(&r, &props, &["is".into(), "cat".into()]).unwrap();
        assert_eq!((e.matrix.len(), e.matrix[0].len()), (2, 2));
        assert!(e.to_text().starts_with("proposal\tis\tcat\n"));
        assert!(e.to_svg().contains("<rect"));
        assert!((row_entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-12);
    }
}
