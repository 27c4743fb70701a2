//! Experiment drivers: a [`Lab`] owns the dataset, the detector outputs and
//! a cache of finished runs, so the studies can share identical runs.

pub mod metrics;
pub mod report;
pub mod studies;

pub use metrics::{auc, compute_metrics, mean, std_dev, MetricsRecord, Truth};
pub use studies::*;

use crate::config::LabConfig;
use crate::detector::{
    baseline_select, necessary_recall, oracle_objects, propose_all, ObjectSet, OracleMode, Prototypes, RegionProposal,
};
use crate::error::{LabError, Result};
use crate::geometry::{match_gt, BBox};
use crate::grounding::{
    first_stage, row_entropy, second_stage, selector_input, training_example, union_augment, SelectionResult,
    Selector, SelectorEpoch, SelectorExample,
};
use crate::updn::{argmax, EpochRecord, UpDn, UpDnConfig, VqaExample};
use crate::world::{build_dataset, Dataset, QaInstance, QuestionFamily, Scene, Split};
use serde::{Deserialize, Serialize};
use std::cell::{OnceCell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn parse(s: &str) -> Option<SplitKind> {
        match s {
            "train" => Some(SplitKind::Train),
            "val" => Some(SplitKind::Val),
            "test" => Some(SplitKind::Test),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Where the reasoner's objects come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectSource {
    /// Confidence top-k.
    Baseline { k: usize },
    Oracle(OracleMode),
    /// Question-conditioned selection.
    Grounded,
    /// Top-k plus novel grounded selections.
    Union { k: usize },
}

impl fmt::Display for ObjectSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectSource::Baseline { k } => write!(f, "baseline@{k}"),
            ObjectSource::Oracle(m) => f.write_str(m.name()),
            ObjectSource::Grounded => f.write_str("lg"),
            ObjectSource::Union { k } => write!(f, "union@{k}"),
        }
    }
}

impl ObjectSource {
    /// Accepts `baseline`, `baseline@K`, oracle mode names, `lg`, `union`
    /// and `union@K`; a missing `K` means `default_k`.
    pub fn parse(s: &str, default_k: usize) -> Option<ObjectSource> {
        let (head, k) = match s.split_once('@') {
            Some((h, k)) => (h, k.parse().ok().filter(|&k| k > 0)?),
            None => (s, default_k),
        };
        match head {
            "baseline" => Some(ObjectSource::Baseline { k }),
            "union" => Some(ObjectSource::Union { k }),
            "lg" if !s.contains('@') => Some(ObjectSource::Grounded),
            _ if !s.contains('@') => OracleMode::parse(s).map(ObjectSource::Oracle),
            _ => None,
        }
    }

    pub fn needs_selector(self) -> bool {
        matches!(self, ObjectSource::Grounded | ObjectSource::Union { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub source: String,
    pub necessity_head: bool,
    pub metrics: MetricsRecord,
    pub family_accuracy: BTreeMap<String, f64>,
    /// Validation AUC of the necessity head on labelled objects.
    pub necessity_auc: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub data_order_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallStats {
    pub source: String,
    pub mean_objects: f64,
    /// Mean fraction of necessary objects matched at IoU 0.5.
    pub necessary_recall: f64,
    /// Fraction of relational-object questions whose answer object is matched.
    pub answer_recall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub necessary: f64,
    pub unnecessary: f64,
    pub n_necessary: usize,
    pub n_unnecessary: usize,
}

type RunKey = (ObjectSource, bool, u64);

pub struct Lab {
    pub cfg: LabConfig,
    pub config_hash: String,
    pub data: Dataset,
    pub protos: Prototypes,
    proposals: [Vec<Vec<RegionProposal>>; 3],
    selector: OnceCell<(Selector, Vec<SelectorEpoch>)>,
    selections: OnceCell<Vec<Vec<SelectionResult>>>,
    runs: RefCell<HashMap<RunKey, RunOutcome>>,
}

impl Lab {
    pub fn new(cfg: LabConfig) -> Result<Lab> {
        cfg.validate()?;
        let data = build_dataset(&cfg.world, cfg.data.sizes(), cfg.data.seed)?;
        Lab::with_dataset(cfg, data)
    }

    pub fn with_dataset(cfg: LabConfig, data: Dataset) -> Result<Lab> {
        cfg.validate()?;
        if data.meta.world != cfg.world {
            return Err(LabError::Config {
                key: "world".into(),
                message: "dataset was generated with a different world configuration".into(),
            });
        }
        for split in data.splits() {
            if split.questions.iter().zip(&split.scenes).any(|(q, s)| q.scene_id != s.id) {
                return Err(LabError::Format(format!("{}: questions and scenes are not aligned", split.name)));
            }
        }
        let protos = Prototypes::new(&cfg.detector, &data.vocab, data.meta.seed);
        let proposals = data.splits().map(|s| propose_all(&s.scenes, &cfg.detector, &protos));
        Ok(Lab {
            config_hash: cfg.hash(),
            cfg,
            data,
            protos,
            proposals,
            selector: OnceCell::new(),
            selections: OnceCell::new(),
            runs: RefCell::new(HashMap::new()),
        })
    }

    pub fn eval_split(&self) -> SplitKind {
        SplitKind::parse(&self.cfg.experiment.eval_split).expect("validated split name")
    }

    pub fn split(&self, s: SplitKind) -> &Split {
        self.data.splits()[s.index()]
    }

    pub fn proposals(&self, s: SplitKind) -> &[Vec<RegionProposal>] {
        &self.proposals[s.index()]
    }

    pub fn default_source(&self) -> ObjectSource {
        ObjectSource::Baseline {
            k: self.cfg.baseline.k,
        }
    }

    fn necessary_boxes(scene: &Scene, q: &QaInstance) -> Vec<BBox> {
        q.necessary
            .iter()
            .filter_map(|&id| scene.object(id).map(|o| o.bbox))
            .collect()
    }

    fn answer_box(&self, scene: &Scene, q: &QaInstance) -> Option<BBox> {
        if q.family != QuestionFamily::RelationalObject {
            return None;
        }
        let hits: Vec<BBox> = q
            .necessary
            .iter()
            .filter_map(|&id| scene.object(id))
            .filter(|o| self.data.vocab.answer_for_class(o.class) == q.answer)
            .map(|o| o.bbox)
            .collect();
        (hits.len() == 1).then(|| hits[0])
    }

    // ---- grounded selection ----

    pub fn selector_examples(&self) -> Result<Vec<SelectorExample>> {
        let split = self.split(SplitKind::Train);
        let props = self.proposals(SplitKind::Train);
        let mut out = Vec::new();
        for (i, (scene, q)) in split.pairs().enumerate() {
            let gt = Lab::necessary_boxes(scene, q);
            if gt.is_empty() {
                continue;
            }
            out.push(training_example(&props[i], &q.tokens, &gt, &self.cfg.selector)?);
        }
        Ok(out)
    }

    /// Trains the selector on first use.
    pub fn selector(&self) -> Result<&(Selector, Vec<SelectorEpoch>)> {
        if let Some(s) = self.selector.get() {
            return Ok(s);
        }
        let examples = self.selector_examples()?;
        let mut sel = Selector::new(
            &self.cfg.selector,
            self.data.vocab.n_words(),
            self.cfg.detector.feature_dim + 4,
            self.cfg.experiment.selector_seed,
        );
        let log = sel.train(&examples, self.cfg.experiment.selector_seed)?;
        Ok(self.selector.get_or_init(|| (sel, log)))
    }

    /// Installs an already trained selector; fails if one is in place.
    pub fn set_selector(&self, selector: Selector, log: Vec<SelectorEpoch>) -> Result<()> {
        self.selector
            .set((selector, log))
            .map_err(|_| LabError::Contract("selector already set".into()))
    }

    /// Selections for every question of `s`.
    pub fn selections(&self, s: SplitKind) -> Result<&[SelectionResult]> {
        if self.selections.get().is_none() {
            let (sel, _) = self.selector()?;
            let all = [SplitKind::Train, SplitKind::Val, SplitKind::Test]
                .iter()
                .map(|&k| self.select_split(sel, k))
                .collect::<Result<Vec<_>>>()?;
            let _ = self.selections.set(all);
        }
        Ok(&self.selections.get().expect("just set")[s.index()])
    }

    pub fn select_split(&self, sel: &Selector, s: SplitKind) -> Result<Vec<SelectionResult>> {
        let split = self.split(s);
        let props = self.proposals(s);
        let cfg = &sel.cfg;
        let candidates = props
            .iter()
            .map(|p| first_stage(p, cfg.nms1))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<_> = split
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| selector_input(&props[i], &candidates[i], &q.tokens))
            .collect();
        let scored = sel.score_many(&inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for (i, (scores, attention)) in scored.into_iter().enumerate() {
            let (selected, fallback) = second_stage(&props[i], &candidates[i], &scores, cfg.theta_s, cfg.nms2)?;
            out.push(SelectionResult {
                candidates: candidates[i].clone(),
                scores,
                selected,
                attention,
                fallback,
            });
        }
        Ok(out)
    }

    // ---- object sets ----

    fn proposal_indices(&self, s: SplitKind, i: usize, source: ObjectSource) -> Result<Option<Vec<usize>>> {
        let props = &self.proposals(s)[i];
        let theta_c = self.cfg.baseline.theta_c;
        Ok(match source {
            ObjectSource::Baseline { k } => Some(baseline_select(props, theta_c, k)?),
            ObjectSource::Oracle(_) => None,
            ObjectSource::Grounded => Some(self.selections(s)?[i].selected.clone()),
            ObjectSource::Union { k } => {
                let base = baseline_select(props, theta_c, k)?;
                let sel = &self.selections(s)?[i];
                let c = &self.cfg.selector;
                Some(union_augment(&base, props, &sel.candidates, &sel.scores, c.theta_s, c.theta_iou))
            }
        })
    }

    pub fn objects(&self, s: SplitKind, i: usize, source: ObjectSource) -> Result<ObjectSet> {
        let split = self.split(s);
        match self.proposal_indices(s, i, source)? {
            Some(idx) => Ok(ObjectSet::from_proposals(&self.proposals(s)[i], &idx)),
            None => {
                let ObjectSource::Oracle(mode) = source else {
                    unreachable!("only oracle sources bypass proposals")
                };
                let q = &split.questions[i];
                oracle_objects(
                    &split.scenes[i],
                    q,
                    mode,
                    &self.cfg.detector,
                    &self.protos,
                    &self.data.vocab,
                )
            }
        }
    }

    pub fn examples(&self, s: SplitKind, source: ObjectSource) -> Result<Vec<VqaExample>> {
        let split = self.split(s);
        let theta = self.cfg.selector.theta_iou;
        let mut out = Vec::with_capacity(split.len());
        for (i, (scene, q)) in split.pairs().enumerate() {
            let objects = self.objects(s, i, source)?;
            let gt = Lab::necessary_boxes(scene, q);
            let necessity = (!gt.is_empty()).then(|| match_gt(&objects.boxes(), &gt, theta));
            out.push(VqaExample {
                tokens: q.tokens.clone(),
                answer: q.answer,
                binary: self.data.vocab.is_binary_answer(q.answer),
                objects,
                necessity,
            });
        }
        Ok(out)
    }

    // ---- reasoner runs ----

    pub fn updn_config(&self, necessity_head: bool) -> UpDnConfig {
        UpDnConfig {
            necessity_head,
            ..self.cfg.updn.clone()
        }
    }

    pub fn new_updn(&self, necessity_head: bool, seed: u64) -> UpDn {
        UpDn::new(
            &self.updn_config(necessity_head),
            self.data.vocab.n_words(),
            self.cfg.detector.feature_dim + 4,
            self.data.vocab.n_answers(),
            seed,
        )
    }

    /// Trains a fresh reasoner on the train split.
    pub fn train_updn(&self, source: ObjectSource, necessity_head: bool, seed: u64) -> Result<(UpDn, crate::updn::TrainReport)> {
        let train = self.examples(SplitKind::Train, source)?;
        let mut model = self.new_updn(necessity_head, seed);
        let report = model.train(&train, seed)?;
        Ok((model, report))
    }

    /// Scores `model` on split `s` with objects from `source`.
    pub fn evaluate(
        &self,
        model: &UpDn,
        s: SplitKind,
        source: ObjectSource,
        seed: u64,
    ) -> Result<(MetricsRecord, BTreeMap<String, f64>, Option<f64>)> {
        let examples = self.examples(s, source)?;
        let outputs = model.predict(&examples)?;
        let preds: Vec<usize> = outputs.iter().map(|o| argmax(&o.answer_probs)).collect();
        let truth: Vec<Truth> = examples
            .iter()
            .map(|e| Truth {
                answer: e.answer,
                binary: e.binary,
                n_objects: e.objects.len(),
            })
            .collect();
        let metrics = compute_metrics(&preds, &truth, seed, &self.config_hash)?;
        let mut fam: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for ((p, e), q) in preds.iter().zip(&examples).zip(&self.split(s).questions) {
            let ent = fam.entry(q.family.tag().to_string()).or_default();
            ent.0 += (*p == e.answer) as usize;
            ent.1 += 1;
        }
        let family = fam.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect();
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for (o, e) in outputs.iter().zip(&examples) {
            if let (Some(p), Some(y)) = (&o.necessity, &e.necessity) {
                scores.extend_from_slice(&p[..y.len()]);
                labels.extend_from_slice(y);
            }
        }
        Ok((metrics, family, auc(&scores, &labels)))
    }

    /// Train on train, evaluate on the configured split; cached per
    /// (source, head, seed).
    pub fn run(&self, source: ObjectSource, necessity_head: bool, seed: u64) -> Result<RunOutcome> {
        let key = (source, necessity_head, seed);
        if let Some(r) = self.runs.borrow().get(&key) {
            return Ok(r.clone());
        }
        let (model, report) = self.train_updn(source, necessity_head, seed)?;
        let (metrics, family_accuracy, necessity_auc) = self.evaluate(&model, self.eval_split(), source, seed)?;
        let out = RunOutcome {
            source: source.to_string(),
            necessity_head,
            metrics,
            family_accuracy,
            necessity_auc,
            epochs: report.epochs,
            data_order_hash: report.data_order_hash,
        };
        self.runs.borrow_mut().insert(key, out.clone());
        Ok(out)
    }

    pub fn cached_runs(&self) -> usize {
        self.runs.borrow().len()
    }

    // ---- selection statistics ----

    pub fn recall(&self, s: SplitKind, source: ObjectSource) -> Result<RecallStats> {
        let split = self.split(s);
        let theta = self.cfg.selector.theta_iou;
        let (mut recall_sum, mut n_rec, mut ans_hit, mut n_ans, mut objects) = (0.0, 0usize, 0usize, 0usize, 0usize);
        for (i, (scene, q)) in split.pairs().enumerate() {
            let boxes = self.objects(s, i, source)?.boxes();
            objects += boxes.len();
            if let Some(r) = necessary_recall(&boxes, &Lab::necessary_boxes(scene, q), theta) {
                recall_sum += r;
                n_rec += 1;
            }
            if let Some(a) = self.answer_box(scene, q) {
                n_ans += 1;
                ans_hit += (necessary_recall(&boxes, &[a], theta) == Some(1.0)) as usize;
            }
        }
        Ok(RecallStats {
            source: source.to_string(),
            mean_objects: objects as f64 / split.len().max(1) as f64,
            necessary_recall: recall_sum / n_rec.max(1) as f64,
            answer_recall: ans_hit as f64 / n_ans.max(1) as f64,
        })
    }

    /// Mean row entropy of the last cross-attention, over candidates
    /// labelled necessary vs unnecessary.
    pub fn attention_entropy(&self, s: SplitKind) -> Result<EntropyStats> {
        let split = self.split(s);
        let props = self.proposals(s);
        let sels = self.selections(s)?;
        let theta = self.cfg.selector.theta_iou;
        let (mut en, mut nn, mut eu, mut nu) = (0.0, 0usize, 0.0, 0usize);
        for (i, (scene, q)) in split.pairs().enumerate() {
            let gt = Lab::necessary_boxes(scene, q);
            let sel = &sels[i];
            let boxes: Vec<BBox> = sel.candidates.iter().map(|&c| props[i][c].bbox).collect();
            for (row, y) in sel.attention.iter().zip(match_gt(&boxes, &gt, theta)) {
                let h = row_entropy(row);
                if y {
                    en += h;
                    nn += 1;
                } else {
                    eu += h;
                    nu += 1;
                }
            }
        }
        Ok(EntropyStats {
            necessary: en / nn.max(1) as f64,
            unnecessary: eu / nu.max(1) as f64,
            n_necessary: nn,
            n_unnecessary: nu,
        })
    }
}
