//! Emulated two-stage detector: region proposals with prototype-mixture
//! features, objectness and class confidences, plus the ground-truth oracle
//! modes used by the detection-quality ablation.

use crate::error::{LabError, Result};
use crate::geometry::{iou, perturb_box, rank_by_score, BBox};
use crate::rng::{self, LabRng};
use crate::world::{QaInstance, Scene, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub feature_dim: usize,
    /// Feature noise σ_f.
    pub feature_noise: f64,
    /// Corner jitter σ_b of per-object proposals.
    pub box_jitter: f64,
    pub miss_rate: f64,
    pub n_spurious: usize,
    pub n_duplicates: usize,
    /// Corner jitter of duplicate near-copies.
    pub duplicate_jitter: f64,
    pub objectness_noise: f64,
    /// Inverse temperature of the class-confidence softmax.
    pub confidence_sharpness: f64,
    pub color_scale: f64,
    pub size_scale: f64,
    pub background_scale: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            feature_dim: 32,
            feature_noise: 0.05,
            box_jitter: 0.02,
            miss_rate: 0.15,
            n_spurious: 4,
            n_duplicates: 2,
            duplicate_jitter: 0.01,
            objectness_noise: 0.05,
            confidence_sharpness: 8.0,
            color_scale: 0.8,
            size_scale: 0.3,
            background_scale: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(LabError::Config {
                key: format!("detector.{key}"),
                message: message.into(),
            })
        };
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        for (key, v) in [
            ("feature_noise", self.feature_noise),
            ("box_jitter", self.box_jitter),
            ("duplicate_jitter", self.duplicate_jitter),
            ("objectness_noise", self.objectness_noise),
            ("confidence_sharpness", self.confidence_sharpness),
            ("color_scale", self.color_scale),
            ("size_scale", self.size_scale),
            ("background_scale", self.background_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(key, "must be finite and non-negative");
            }
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return bad("miss_rate", "must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalSource {
    Rpn,
    GtOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub bbox: BBox,
    pub feature: Vec<f64>,
    pub objectness: f64,
    pub class_conf: Vec<f64>,
    pub source: ProposalSource,
}

impl RegionProposal {
    pub fn max_confidence(&self) -> f64 {
        self.class_conf.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub feature: Vec<f64>,
    pub bbox: BBox,
}

impl DetectedObject {
    /// Feature with the four box coordinates appended.
    pub fn input_row(&self) -> Vec<f64> {
        let mut row = self.feature.clone();
        row.extend_from_slice(&self.bbox.coords());
        row
    }
}

/// The ordered object set handed to the reasoner. May be empty only for
/// oracle modes on questions without necessary objects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectSet {
    pub objects: Vec<DetectedObject>,
}

impl ObjectSet {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn from_proposals(proposals: &[RegionProposal], indices: &[usize]) -> ObjectSet {
        ObjectSet {
            objects: indices
                .iter()
                .map(|&i| DetectedObject {
                    feature: proposals[i].feature.clone(),
                    bbox: proposals[i].bbox,
                })
                .collect(),
        }
    }
}

fn unit_vector(rng: &mut LabRng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Fixed per-dataset random directions for classes, colors and sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub class: Vec<Vec<f64>>,
    pub color: Vec<Vec<f64>>,
    pub size: Vec<Vec<f64>>,
    seed: u64,
    dim: usize,
    background_scale: f64,
}

impl Prototypes {
    pub fn new(cfg: &DetectorConfig, vocab: &Vocab, seed: u64) -> Self {
        let mut r = rng::stream(seed, "prototypes", 0);
        let d = cfg.feature_dim;
        let class = (0..vocab.n_classes()).map(|_| unit_vector(&mut r, d)).collect();
        let scaled = |r: &mut LabRng, s: f64| unit_vector(r, d).into_iter().map(|x| x * s).collect::<Vec<_>>();
        let color = (0..vocab.n_colors()).map(|_| scaled(&mut r, cfg.color_scale)).collect();
        let size = (0..2).map(|_| scaled(&mut r, cfg.size_scale)).collect();
        Prototypes {
            class,
            color,
            size,
            seed,
            dim: d,
            background_scale: cfg.background_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn object(&self, class: usize, color: usize, size: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.class[class][j] + self.color[color][j] + self.size[size][j])
            .collect()
    }

    pub fn background(&self, scene_id: u64) -> Vec<f64> {
        let mut r = rng::stream(self.seed, "background", scene_id);
        unit_vector(&mut r, self.dim)
            .into_iter()
            .map(|x| x * self.background_scale)
            .collect()
    }
}

/// Fraction of `region` covered by `object` (intersection over region area).
pub fn overlap_fraction(region: &BBox, object: &BBox) -> f64 {
    let a = region.area();
    if a <= 0.0 {
        0.0
    } else {
        (region.intersection(object) / a).clamp(0.0, 1.0)
    }
}

/// Pooled feature for `region`: overlap-weighted prototypes, background for
/// the uncovered part, plus gaussian noise of std `noise`.
pub fn extract_feature(scene: &Scene, region: &BBox, protos: &Prototypes, noise: f64, rng: &mut LabRng) -> Vec<f64> {
    let mut fracs: Vec<f64> = scene.objects.iter().map(|o| overlap_fraction(region, &o.bbox)).collect();
    let total: f64 = fracs.iter().sum();
    if total > 1.0 {
        for f in &mut fracs {
            *f /= total;
        }
    }
    let coverage = total.min(1.0);
    let mut feature: Vec<f64> = protos
        .background(scene.id)
        .into_iter()
        .map(|b| b * (1.0 - coverage))
        .collect();
    for (o, &f) in scene.objects.iter().zip(&fracs) {
        if f > 0.0 {
            let p = protos.object(o.class, o.color, o.size);
            for (x, pv) in feature.iter_mut().zip(p) {
                *x += f * pv;
            }
        }
    }
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).expect("noise > 0");
        for x in &mut feature {
            *x += n.sample(rng);
        }
    }
    feature
}

fn class_confidence(feature: &[f64], protos: &Prototypes, sharpness: f64) -> Vec<f64> {
    let logits: Vec<f64> = protos
        .class
        .iter()
        .map(|c| sharpness * c.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn jitter(b: &BBox, sigma: f64, rng: &mut LabRng) -> BBox {
    if sigma <= 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut c = b.coords();
    for v in &mut c {
        *v += n.sample(rng);
    }
    BBox::new(c[0], c[1], c[2], c[3])
}

fn make_proposal(
    scene: &Scene,
    bbox: BBox,
    cfg: &DetectorConfig,
    protos: &Prototypes,
    source: ProposalSource,
    rng: &mut LabRng,
) -> RegionProposal {
    let feature = extract_feature(scene, &bbox, protos, cfg.feature_noise, rng);
    let best = scene.objects.iter().map(|o| iou(&bbox, &o.bbox)).fold(0.0, f64::max);
    let noise = if cfg.objectness_noise > 0.0 {
        Normal::new(0.0, cfg.objectness_noise).expect("noise").sample(rng)
    } else {
        0.0
    };
    let class_conf = class_confidence(&feature, protos, cfg.confidence_sharpness);
    RegionProposal {
        bbox,
        feature,
        objectness: (best + noise).clamp(0.0, 1.0),
        class_conf,
        source,
    }
}

/// Region proposals for one scene: a jittered box per detected object,
/// near-duplicate copies of detected boxes, and spurious background boxes,
/// in shuffled order.
pub fn propose_regions(
    scene: &Scene,
    cfg: &DetectorConfig,
    protos: &Prototypes,
    rng: &mut LabRng,
) -> Vec<RegionProposal> {
    let mut boxes = Vec::new();
    for o in &scene.objects {
        if rng.random_bool(cfg.miss_rate) {
            continue;
        }
        boxes.push(jitter(&o.bbox, cfg.box_jitter, rng));
    }
    let detected = boxes.len();
    if detected > 0 {
        for _ in 0..cfg.n_duplicates {
            let src = boxes[rng.random_range(0..detected)];
            boxes.push(jitter(&src, cfg.duplicate_jitter, rng));
        }
    }
    for _ in 0..cfg.n_spurious {
        let w = rng.random_range(0.06..0.3);
        let h = rng.random_range(0.06..0.3);
        let x = rng.random_range(0.0..1.0 - w);
        let y = rng.random_range(0.0..1.0 - h);
        boxes.push(BBox::new(x, y, x + w, y + h));
    }
    boxes.shuffle(rng);
    boxes
        .into_iter()
        .map(|b| make_proposal(scene, b, cfg, protos, ProposalSource::Rpn, rng))
        .collect()
}

/// Purely bottom-up selection: keep proposals whose top class confidence
/// exceeds `theta_c`, ranked by it, truncated to `k`. Falls back to the single
/// most confident proposal when nothing passes.
pub fn baseline_select(proposals: &[RegionProposal], theta_c: f64, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(LabError::Contract("baseline_select needs k >= 1".into()));
    }
    if proposals.is_empty() {
        return Err(LabError::Contract("baseline_select on an empty proposal list".into()));
    }
    let conf: Vec<f64> = proposals.iter().map(RegionProposal::max_confidence).collect();
    let ranked = rank_by_score(&conf);
    let kept: Vec<usize> = ranked.iter().copied().filter(|&i| conf[i] > theta_c).take(k).collect();
    if kept.is_empty() {
        Ok(vec![ranked[0]])
    } else {
        Ok(kept)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    GtBox,
    #[serde(rename = "gt-box+onehot")]
    GtBoxOneHot,
    GtBoxPerturbed,
    #[serde(rename = "gt-box-perturbed+refeature")]
    GtBoxPerturbedRefeature,
}

impl OracleMode {
    pub const ALL: [OracleMode; 4] = [
        OracleMode::GtBox,
        OracleMode::GtBoxOneHot,
        OracleMode::GtBoxPerturbed,
        OracleMode::GtBoxPerturbedRefeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleMode::GtBox => "gt-box",
            OracleMode::GtBoxOneHot => "gt-box+onehot",
            OracleMode::GtBoxPerturbed => "gt-box-perturbed",
            OracleMode::GtBoxPerturbedRefeature => "gt-box-perturbed+refeature",
        }
    }

    pub fn parse(s: &str) -> Option<OracleMode> {
        OracleMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

fn object_key(scene_id: u64, object_id: usize) -> u64 {
    scene_id.wrapping_mul(1 << 16).wrapping_add(object_id as u64)
}

/// Class one-hot followed by color one-hot, zero-padded to the feature size.
pub fn onehot_feature(class: usize, color: usize, vocab: &Vocab, dim: usize) -> Vec<f64> {
    let mut f = vec![0.0; dim.max(vocab.n_classes() + vocab.n_colors())];
    f[class] = 1.0;
    f[vocab.n_classes() + color] = 1.0;
    f
}

/// Ground-truth object sets built from the question's necessary objects.
/// Feature noise and box perturbations are keyed per (scene, object), so the
/// perturbed mode reuses the exact unperturbed features.
pub fn oracle_objects(
    scene: &Scene,
    qa: &QaInstance,
    mode: OracleMode,
    cfg: &DetectorConfig,
    protos: &Prototypes,
    vocab: &Vocab,
) -> Result<ObjectSet> {
    let mut objects = Vec::with_capacity(qa.necessary.len());
    for &id in &qa.necessary {
        let o = scene
            .object(id)
            .ok_or(LabError::Index { index: id, size: scene.objects.len() })?;
        let key = object_key(scene.id, id);
        let mut noise_rng = rng::stream(protos.seed, "gt-feature", key);
        let perturbed = || perturb_box(&o.bbox, &mut rng::stream(protos.seed, "gt-perturb", key));
        let obj = match mode {
            OracleMode::GtBox => DetectedObject {
                feature: extract_feature(scene, &o.bbox, protos, cfg.feature_noise, &mut noise_rng),
                bbox: o.bbox,
            },
            OracleMode::GtBoxOneHot => DetectedObject {
                feature: onehot_feature(o.class, o.color, vocab, cfg.feature_dim),
                bbox: o.bbox,
            },
            OracleMode::GtBoxPerturbed => DetectedObject {
                feature: extract_feature(scene, &o.bbox, protos, cfg.feature_noise, &mut noise_rng),
                bbox: perturbed(),
            },
            OracleMode::GtBoxPerturbedRefeature => {
                let b = perturbed();
                DetectedObject {
                    feature: extract_feature(scene, &b, protos, cfg.feature_noise, &mut noise_rng),
                    bbox: b,
                }
            }
        };
        objects.push(obj);
    }
    Ok(ObjectSet { objects })
}

/// Proposals for every scene of a split, keyed by `(seed, scene id)`.
pub fn propose_all(scenes: &[Scene], cfg: &DetectorConfig, protos: &Prototypes) -> Vec<Vec<RegionProposal>> {
    scenes
        .iter()
        .map(|s| propose_regions(s, cfg, protos, &mut rng::stream(protos.seed, "proposals", s.id)))
        .collect()
}

/// Fraction of necessary objects matched (IoU ≥ `threshold`) by some box.
pub fn necessary_recall(boxes: &[BBox], necessary: &[BBox], threshold: f64) -> Option<f64> {
    if necessary.is_empty() {
        return None;
    }
    let hit = necessary
        .iter()
        .filter(|g| boxes.iter().any(|b| iou(b, g) >= threshold))
        .count();
    Some(hit as f64 / necessary.len() as f64)
}
