//! The five studies: object quantity, detection quality, auxiliary
//! necessity supervision and grounded selection (with its budget and union
//! variants).

use super::metrics::{mean, std_dev, MetricsRecord};
use super::{EntropyStats, Lab, ObjectSource, RecallStats, RunOutcome};
use crate::detector::OracleMode;
use crate::error::{LabError, Result};
use crate::grounding::SelectorEpoch;
use serde::{Deserialize, Serialize};

fn accuracies(runs: &[RunOutcome]) -> Vec<f64> {
    runs.iter().map(|r| r.metrics.accuracy).collect()
}

fn opt_mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Seed-aggregated metrics of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub binary_accuracy: Option<f64>,
    pub open_accuracy: Option<f64>,
    pub mean_objects: f64,
    pub runs: Vec<MetricsRecord>,
}

impl Aggregate {
    fn from_runs(name: String, runs: &[RunOutcome]) -> Aggregate {
        let acc = accuracies(runs);
        Aggregate {
            name,
            accuracy: mean(&acc),
            accuracy_std: std_dev(&acc),
            binary_accuracy: opt_mean(runs.iter().map(|r| r.metrics.binary_accuracy)),
            open_accuracy: opt_mean(runs.iter().map(|r| r.metrics.open_accuracy)),
            mean_objects: mean(&runs.iter().map(|r| r.metrics.mean_objects).collect::<Vec<_>>()),
            runs: runs.iter().map(|r| r.metrics.clone()).collect(),
        }
    }
}

fn seeded(lab: &Lab, source: ObjectSource, head: bool, n: usize) -> Result<Vec<RunOutcome>> {
    let base = lab.cfg.experiment.seed;
    (base..base + n as u64).map(|s| lab.run(source, head, s)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_objects: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub seeds: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepPoint {
        self.points
            .iter()
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
            .expect("nonempty sweep")
    }
}

pub fn run_quantity_sweep(lab: &Lab, ks: &[usize], seeds: usize) -> Result<SweepResult> {
    if ks.is_empty() || !ks.windows(2).all(|w| w[0] < w[1]) {
        return Err(LabError::Contract("sweep k values must be nonempty and ascending".into()));
    }
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let runs = seeded(lab, ObjectSource::Baseline { k }, false, seeds)?;
        let a = Aggregate::from_runs(String::new(), &runs);
        points.push(SweepPoint {
            k,
            mean: a.accuracy,
            std: a.accuracy_std,
            mean_objects: a.mean_objects,
        });
    }
    Ok(SweepResult { points, seeds })
}

pub fn mode_source(lab: &Lab, mode: &str) -> Result<ObjectSource> {
    if mode == "baseline" {
        return Ok(lab.default_source());
    }
    OracleMode::parse(mode)
        .map(ObjectSource::Oracle)
        .ok_or_else(|| LabError::Config {
            key: "experiment.quality_modes".into(),
            message: format!("unknown mode `{mode}`"),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityTable {
    pub rows: Vec<Aggregate>,
}

impl QualityTable {
    pub fn row(&self, name: &str) -> Option<&Aggregate> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub fn run_quality_ablation(lab: &Lab, modes: &[String], seeds: usize) -> Result<QualityTable> {
    let mut rows = Vec::with_capacity(modes.len());
    for m in modes {
        let runs = seeded(lab, mode_source(lab, m)?, false, seeds)?;
        rows.push(Aggregate::from_runs(m.clone(), &runs));
    }
    Ok(QualityTable { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxPair {
    pub seed: u64,
    pub without: f64,
    pub with: f64,
    pub delta: f64,
    pub auc: Option<f64>,
    /// Both arms saw the same minibatch sequence.
    pub same_order: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxTable {
    pub pairs: Vec<AuxPair>,
    pub without: Aggregate,
    pub with: Aggregate,
    pub mean_delta: f64,
    pub mean_auc: Option<f64>,
}

pub fn run_aux_supervision(lab: &Lab, seeds: usize) -> Result<AuxTable> {
    let source = lab.default_source();
    let off = seeded(lab, source, false, seeds)?;
    let on = seeded(lab, source, true, seeds)?;
    let pairs: Vec<AuxPair> = off
        .iter()
        .zip(&on)
        .map(|(a, b)| AuxPair {
            seed: a.metrics.seed,
            without: a.metrics.accuracy,
            with: b.metrics.accuracy,
            delta: b.metrics.accuracy - a.metrics.accuracy,
            auc: b.necessity_auc,
            same_order: a.data_order_hash == b.data_order_hash,
        })
        .collect();
    Ok(AuxTable {
        mean_delta: mean(&pairs.iter().map(|p| p.delta).collect::<Vec<_>>()),
        mean_auc: opt_mean(pairs.iter().map(|p| p.auc)),
        without: Aggregate::from_runs("without head".into(), &off),
        with: Aggregate::from_runs("with head".into(), &on),
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgArm {
    pub arm: String,
    pub source: String,
    pub result: Aggregate,
    pub recall: RecallStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgTable {
    pub arms: Vec<LgArm>,
    /// Baseline budget matched to the grounded arm's measured object count.
    pub matched_k: usize,
    pub selector_epochs: Vec<SelectorEpoch>,
    pub entropy: EntropyStats,
}

impl LgTable {
    pub fn arm(&self, name: &str) -> Option<&LgArm> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

pub fn run_lg_comparison(lab: &Lab, seeds: usize) -> Result<LgTable> {
    let eval = lab.eval_split();
    let lg_recall = lab.recall(eval, ObjectSource::Grounded)?;
    let matched_k = (lg_recall.mean_objects.round() as usize).max(1);
    let large = lab.cfg.baseline.k;
    let mut arms = Vec::new();
    let mut push = |arm: &str, source: ObjectSource| -> Result<()> {
        let runs = seeded(lab, source, false, seeds)?;
        arms.push(LgArm {
            arm: arm.into(),
            source: source.to_string(),
            result: Aggregate::from_runs(source.to_string(), &runs),
            recall: lab.recall(eval, source)?,
        });
        Ok(())
    };
    push("baseline-small", ObjectSource::Baseline { k: lab.cfg.experiment.small_k })?;
    push("baseline-matched", ObjectSource::Baseline { k: matched_k })?;
    push("baseline-default", ObjectSource::Baseline { k: large })?;
    push("lg", ObjectSource::Grounded)?;
    push("union", ObjectSource::Union { k: large })?;
    let (_, log) = lab.selector()?;
    Ok(LgTable {
        arms,
        matched_k,
        selector_epochs: log.clone(),
        entropy: lab.attention_entropy(eval)?,
    })
}
