use anyhow::{anyhow, bail, Context, Result};
use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use vislab::checkpoint::Checkpoint;
use vislab::config::LabConfig;
use vislab::detector::RegionProposal;
use vislab::grounding::{export_attention, Selector};
use vislab::harness::{self, report, Lab, MetricsRecord, ObjectSource, SplitKind, SweepResult};
use vislab::manifest::{digest_outputs, FileDigest, RunManifest};
use vislab::optim::LrSchedule;
use vislab::world::{build_dataset, Dataset};
use vislab::{io, LabError};

#[derive(Parser)]
#[command(name = "vislab", version, about = "Synthetic VQA experiments: object quantity, quality and grounded selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML config file; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (the selector seed for train-selector).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set selector.theta_s=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
struct DataArg {
    /// Dataset directory written by gen-data; generated from the config if absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Debug)]
enum Command {
    /// Generate scenes and questions for all splits.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Also dump the detector proposals of every scene.
        #[arg(long)]
        proposals: bool,
    },
    /// Train one reasoner and evaluate it.
    TrainUpdn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// baseline, baseline@K, gt-box, gt-box+onehot, gt-box-perturbed, gt-box-perturbed+refeature, lg, union@K.
        #[arg(long, default_value = "baseline")]
        source: String,
        /// Attach the object-necessity head.
        #[arg(long)]
        head: bool,
        /// Constant learning rate instead of the configured schedule.
        #[arg(long)]
        lr: Option<f64>,
        /// Selector checkpoint for the lg and union sources.
        #[arg(long)]
        selector: Option<PathBuf>,
    },
    /// Train the grounded object selector.
    TrainSelector {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Evaluate a reasoner checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "baseline")]
        source: String,
        /// train, val or test; defaults to experiment.eval_split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        selector: Option<PathBuf>,
    },
    /// Accuracy against the number of objects per question.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Detection-quality ablation.
    AblateQuality {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Paired runs with and without the necessity head.
    AblateAux {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Grounded selection against confidence top-k budgets.
    CompareLg {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        selector: Option<PathBuf>,
    },
    /// Object-to-token attention of one question.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// Question index within the split.
        #[arg(long, default_value_t = 0)]
        question: usize,
    },
    /// Render a sweep.json as SVG and text.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainUpdn { .. } => "train-updn",
            Command::TrainSelector { .. } => "train-selector",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::AblateQuality { .. } => "ablate-quality",
            Command::AblateAux { .. } => "ablate-aux",
            Command::CompareLg { .. } => "compare-lg",
            Command::ExportAttention { .. } => "export-attention",
            Command::Plot { .. } => "plot",
            Command::Replay { .. } => "replay",
        }
    }

    fn common(&self) -> Option<&Common> {
        match self {
            Command::GenData { common, .. }
            | Command::TrainUpdn { common, .. }
            | Command::TrainSelector { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::AblateQuality { common, .. }
            | Command::AblateAux { common, .. }
            | Command::CompareLg { common, .. }
            | Command::ExportAttention { common, .. }
            | Command::Plot { common, .. } => Some(common),
            Command::Replay { .. } => None,
        }
    }

    fn seed_key(&self) -> &'static str {
        match self {
            Command::TrainSelector { .. } => "experiment.selector_seed",
            _ => "experiment.seed",
        }
    }
}

/// Flags whose values the config snapshot already captures.
const CONFIG_FLAGS: [&str; 4] = ["--config", "--seed", "--set", "--out"];
/// Flags whose values are input paths.
const PATH_FLAGS: [&str; 4] = ["--data", "--selector", "--checkpoint", "--input"];

/// Command arguments to record: config-shaping flags dropped, input paths
/// made absolute so a replay works from any directory.
fn recorded_args(raw: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        let (flag, inline) = match a.split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f, Some(v.to_string())),
            _ => (a.as_str(), None),
        };
        if CONFIG_FLAGS.contains(&flag) {
            if inline.is_none() {
                it.next();
            }
            continue;
        }
        if PATH_FLAGS.contains(&flag) {
            let v = match inline {
                Some(v) => v,
                None => it.next().cloned().ok_or_else(|| anyhow!("{flag} needs a value"))?,
            };
            let abs = std::fs::canonicalize(&v).with_context(|| format!("resolving {v}"))?;
            out.push(flag.to_string());
            out.push(abs.display().to_string());
            continue;
        }
        out.push(a.clone());
    }
    Ok(out)
}

fn resolve_config(common: &Common, seed_key: &str) -> Result<LabConfig> {
    let base = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| LabError::io(p, e))?;
            LabConfig::from_toml(&text)?
        }
        None => LabConfig::default(),
    };
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("{seed_key}={s}"));
    }
    Ok(base.with_overrides(&overrides)?)
}

fn invalid(key: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn parse_source(s: &str, cfg: &LabConfig) -> Result<ObjectSource> {
    Ok(ObjectSource::parse(s, cfg.baseline.k).ok_or_else(|| invalid("--source", format!("unknown source `{s}`")))?)
}

fn parse_split(s: Option<&str>, lab: &Lab) -> Result<SplitKind> {
    match s {
        None => Ok(lab.eval_split()),
        Some(s) => Ok(SplitKind::parse(s).ok_or_else(|| invalid("--split", format!("unknown split `{s}`")))?),
    }
}

/// Collects output files and input digests for the manifest.
struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    inputs: Vec<FileDigest>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_atomic(&self.out.join(name), bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        io::write_json(&self.out.join(name), value)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn table(&mut self, stem: &str, rows: &[Vec<String>]) -> Result<()> {
        let text = report::text_table(rows);
        print!("{text}");
        self.write(&format!("{stem}.txt"), text.as_bytes())?;
        self.write(&format!("{stem}.csv"), report::csv(rows).as_bytes())
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let abs = std::fs::canonicalize(path).map_err(|e| LabError::io(path, e))?;
        self.inputs.push(FileDigest::of(&abs)?);
        Ok(())
    }

    fn lab(&mut self, cfg: &LabConfig, data: &DataArg) -> Result<Lab> {
        let Some(dir) = &data.data else {
            return Ok(Lab::new(cfg.clone())?);
        };
        let ds = Dataset::load(dir)?;
        if ds.meta.seed != cfg.data.seed || ds.meta.sizes != cfg.data.sizes() {
            return Err(invalid("data", "dataset seed or split sizes differ from the config").into());
        }
        let mut files = vec!["dataset.json".to_string()];
        for s in ["train", "val", "test"] {
            files.push(format!("{s}_scenes.jsonl"));
            files.push(format!("{s}_questions.jsonl"));
        }
        for f in files {
            self.input(&dir.join(f))?;
        }
        Ok(Lab::with_dataset(cfg.clone(), ds)?)
    }

    fn selector(&mut self, lab: &Lab, path: &Option<PathBuf>) -> Result<()> {
        let Some(p) = path else { return Ok(()) };
        self.input(p)?;
        let cfg = &lab.cfg;
        let mut sel = Selector::new(
            &cfg.selector,
            lab.data.vocab.n_words(),
            cfg.detector.feature_dim + 4,
            cfg.experiment.selector_seed,
        );
        Checkpoint::load(p)?.restore("selector", &mut sel.params)?;
        lab.set_selector(sel, Vec::new())?;
        Ok(())
    }
}

fn updn_model_name(head: bool) -> &'static str {
    if head {
        "updn+necessity"
    } else {
        "updn"
    }
}

#[derive(Serialize, Deserialize)]
struct ProposalRecord {
    scene_id: u64,
    proposals: Vec<RegionProposal>,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    source: String,
    split: SplitKind,
    metrics: &'a MetricsRecord,
    family_accuracy: &'a std::collections::BTreeMap<String, f64>,
    necessity_auc: Option<f64>,
}

#[derive(Serialize)]
struct SelectorSummary {
    examples: usize,
    epochs: Vec<vislab::grounding::SelectorEpoch>,
    fallbacks: usize,
    grounded: harness::RecallStats,
    matched_baseline: harness::RecallStats,
    entropy: harness::EntropyStats,
}

fn metrics_csv(m: &MetricsRecord) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    report::csv(&[
        ["accuracy", "binary_accuracy", "open_accuracy", "n_binary", "n_open", "mean_objects", "seed", "config_hash"]
            .map(String::from)
            .to_vec(),
        vec![
            m.accuracy.to_string(),
            opt(m.binary_accuracy),
            opt(m.open_accuracy),
            m.n_binary.to_string(),
            m.n_open.to_string(),
            m.mean_objects.to_string(),
            m.seed.to_string(),
            m.config_hash.clone(),
        ],
    ])
}

fn execute(cmd: &Command, cfg: LabConfig, run: &mut Run) -> Result<()> {
    run.write("config.toml", cfg.to_toml()?.as_bytes())?;
    let seed = cfg.experiment.seed;
    match cmd {
        Command::GenData { proposals, .. } => {
            let ds = build_dataset(&cfg.world, cfg.data.sizes(), cfg.data.seed)?;
            run.outputs.extend(ds.save(&run.out)?);
            if *proposals {
                let lab = Lab::with_dataset(cfg, ds)?;
                for s in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
                    let recs: Vec<ProposalRecord> = lab
                        .split(s)
                        .scenes
                        .iter()
                        .zip(lab.proposals(s))
                        .map(|(sc, p)| ProposalRecord {
                            scene_id: sc.id,
                            proposals: p.clone(),
                        })
                        .collect();
                    let name = format!("{}_proposals.jsonl", lab.split(s).name);
                    run.write(&name, io::to_jsonl(&recs)?.as_bytes())?;
                }
            }
        }
        Command::TrainUpdn {
            data,
            source,
            head,
            selector,
            ..
        } => {
            let source = parse_source(source, &cfg)?;
            let lab = run.lab(&cfg, data)?;
            run.selector(&lab, selector)?;
            let (model, report) = lab.train_updn(source, *head, seed)?;
            let (metrics, family, auc) = lab.evaluate(&model, lab.eval_split(), source, seed)?;
            let ckpt = Checkpoint::from_params(updn_model_name(*head), &lab.config_hash, &model.params);
            run.write("updn.ckpt", ckpt.to_text().as_bytes())?;
            let mut log = vec![["epoch", "lr", "loss", "train_accuracy"].map(String::from).to_vec()];
            log.extend(report.epochs.iter().map(|e| {
                vec![e.epoch.to_string(), e.lr.to_string(), e.loss.to_string(), e.train_accuracy.to_string()]
            }));
            run.write("train_log.csv", report::csv(&log).as_bytes())?;
            run.write("metrics.csv", metrics_csv(&metrics).as_bytes())?;
            println!("{source}: accuracy {:.2}% with {:.2} objects", 100.0 * metrics.accuracy, metrics.mean_objects);
            let outcome = harness::RunOutcome {
                source: source.to_string(),
                necessity_head: *head,
                metrics,
                family_accuracy: family,
                necessity_auc: auc,
                epochs: report.epochs,
                data_order_hash: report.data_order_hash,
            };
            run.json("metrics.json", &outcome)?;
        }
        Command::TrainSelector { data, .. } => {
            let lab = run.lab(&cfg, data)?;
            let examples = lab.selector_examples()?.len();
            let (sel, log) = lab.selector()?;
            let ckpt = Checkpoint::from_params("selector", &lab.config_hash, &sel.params);
            run.write("selector.ckpt", ckpt.to_text().as_bytes())?;
            let mut rows = vec![["epoch", "lr", "loss", "precision", "recall"].map(String::from).to_vec()];
            rows.extend(log.iter().map(|e| {
                vec![
                    e.epoch.to_string(),
                    e.lr.to_string(),
                    e.loss.to_string(),
                    e.precision.to_string(),
                    e.recall.to_string(),
                ]
            }));
            run.write("selector_log.csv", report::csv(&rows).as_bytes())?;
            let ev = lab.eval_split();
            let grounded = lab.recall(ev, ObjectSource::Grounded)?;
            let k = (grounded.mean_objects.round() as usize).max(1);
            let summary = SelectorSummary {
                examples,
                epochs: log.clone(),
                fallbacks: lab.selections(ev)?.iter().filter(|s| s.fallback).count(),
                matched_baseline: lab.recall(ev, ObjectSource::Baseline { k })?,
                grounded,
                entropy: lab.attention_entropy(ev)?,
            };
            println!(
                "selector: {:.2} objects, necessary recall {:.3} (top-{k}: {:.3})",
                summary.grounded.mean_objects, summary.grounded.necessary_recall, summary.matched_baseline.necessary_recall
            );
            run.json("selection.json", &summary)?;
        }
        Command::Eval {
            data,
            checkpoint,
            source,
            split,
            selector,
            ..
        } => {
            let source = parse_source(source, &cfg)?;
            let lab = run.lab(&cfg, data)?;
            run.selector(&lab, selector)?;
            let split = parse_split(split.as_deref(), &lab)?;
            run.input(checkpoint)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let head = ckpt.model == updn_model_name(true);
            let mut model = lab.new_updn(head, seed);
            ckpt.restore(updn_model_name(head), &mut model.params)?;
            let (metrics, family, auc) = lab.evaluate(&model, split, source, seed)?;
            println!("{source}: accuracy {:.2}% with {:.2} objects", 100.0 * metrics.accuracy, metrics.mean_objects);
            run.write("metrics.csv", metrics_csv(&metrics).as_bytes())?;
            run.json(
                "metrics.json",
                &EvalRecord {
                    source: source.to_string(),
                    split,
                    metrics: &metrics,
                    family_accuracy: &family,
                    necessity_auc: auc,
                },
            )?;
        }
        Command::Sweep { data, .. } => {
            let lab = run.lab(&cfg, data)?;
            let e = &cfg.experiment;
            let sweep = harness::run_quantity_sweep(&lab, &e.sweep_ks, e.sweep_seeds)?;
            run.table("sweep", &report::sweep_rows(&sweep))?;
            run.write("sweep.svg", report::sweep_svg(&sweep).as_bytes())?;
            run.json("sweep.json", &sweep)?;
        }
        Command::AblateQuality { data, .. } => {
            let lab = run.lab(&cfg, data)?;
            let e = &cfg.experiment;
            let table = harness::run_quality_ablation(&lab, &e.quality_modes, e.seeds)?;
            run.table("quality", &report::quality_rows(&table))?;
            run.json("quality.json", &table)?;
        }
        Command::AblateAux { data, .. } => {
            let lab = run.lab(&cfg, data)?;
            let table = harness::run_aux_supervision(&lab, cfg.experiment.seeds)?;
            run.table("aux", &report::aux_rows(&table))?;
            run.json("aux.json", &table)?;
        }
        Command::CompareLg { data, selector, .. } => {
            let lab = run.lab(&cfg, data)?;
            run.selector(&lab, selector)?;
            let table = harness::run_lg_comparison(&lab, cfg.experiment.seeds)?;
            run.table("lg", &report::lg_rows(&table))?;
            run.json("lg.json", &table)?;
        }
        Command::ExportAttention {
            data,
            selector,
            split,
            question,
            ..
        } => {
            let lab = run.lab(&cfg, data)?;
            run.selector(&lab, selector)?;
            let s = parse_split(split.as_deref(), &lab)?;
            let sels = lab.selections(s)?;
            let result = sels.get(*question).ok_or(LabError::Index {
                index: *question,
                size: sels.len(),
            })?;
            let q = &lab.split(s).questions[*question];
            let words: Vec<String> = q
                .tokens
                .iter()
                .map(|&t| lab.data.vocab.word(t).unwrap_or("?").to_string())
                .collect();
            println!("question {}: {}", q.id, words.join(" "));
            let export = export_attention(result, &lab.proposals(s)[*question], &words)?;
            run.write("attention.txt", export.to_text().as_bytes())?;
            run.write("attention.svg", export.to_svg().as_bytes())?;
            run.json("attention.json", &export)?;
        }
        Command::Plot { input, .. } => {
            run.input(input)?;
            let sweep: SweepResult = io::read_json(input)?;
            if sweep.points.is_empty() {
                bail!(LabError::Format(format!("{}: sweep has no points", input.display())));
            }
            run.table("sweep", &report::sweep_rows(&sweep))?;
            run.write("sweep.svg", report::sweep_svg(&sweep).as_bytes())?;
        }
        Command::Replay { .. } => unreachable!("replay is dispatched before execute"),
    }
    Ok(())
}

fn run_recorded(cmd: &Command, cfg: LabConfig, out: &Path, args: Vec<String>) -> Result<RunManifest> {
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let mut run = Run {
        out: out.to_path_buf(),
        outputs: Vec::new(),
        inputs: Vec::new(),
    };
    let seed = match cmd {
        Command::TrainSelector { .. } => cfg.experiment.selector_seed,
        _ => cfg.experiment.seed,
    };
    let mut cfg = cfg;
    if let Command::TrainUpdn { lr: Some(lr), .. } = cmd {
        cfg.updn.schedule = LrSchedule::Constant { lr: *lr };
        cfg.validate()?;
    }
    let snapshot = cfg.clone();
    execute(cmd, cfg, &mut run)?;
    let manifest = RunManifest {
        tool: "vislab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        args,
        config_hash: snapshot.hash(),
        eval_split: snapshot.experiment.eval_split.clone(),
        config: snapshot,
        seed,
        inputs: run.inputs,
        outputs: digest_outputs(out, &run.outputs)?,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    manifest.save(out)?;
    eprintln!("wrote {} files to {}", manifest.outputs.len() + 1, out.display());
    Ok(manifest)
}

fn replay(manifest_path: &Path, out: &Path) -> Result<()> {
    let recorded = RunManifest::load(manifest_path)?;
    recorded.check_inputs()?;
    let argv = ["vislab".to_string(), recorded.command.clone()]
        .into_iter()
        .chain(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| anyhow!("manifest arguments do not parse: {e}"))?;
    if matches!(cli.command, Command::Replay { .. }) {
        bail!("a manifest cannot record a replay");
    }
    let fresh = run_recorded(&cli.command, recorded.config.clone(), out, recorded.args.clone())?;
    let mismatched: Vec<&str> = recorded
        .outputs
        .iter()
        .filter(|f| !fresh.outputs.contains(f))
        .map(|f| f.path.as_str())
        .collect();
    if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        bail!(LabError::Format(format!("replay differs in: {}", mismatched.join(", "))));
    }
    println!("replay identical: {} outputs", fresh.outputs.len());
    Ok(())
}

fn dispatch(cli: Cli, raw: &[String]) -> Result<()> {
    if let Command::Replay { manifest, out } = &cli.command {
        return replay(manifest, out);
    }
    let common = cli.command.common().expect("non-replay commands carry common flags");
    let cfg = resolve_config(common, cli.command.seed_key())?;
    // raw[0] is the binary, raw[1] the subcommand
    let args = recorded_args(raw.get(2..).unwrap_or_default())?;
    run_recorded(&cli.command, cfg, &common.out, args)?;
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn usage_error(e: clap::Error) -> ExitCode {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
        }
        _ => {}
    }
    let key = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s.split_whitespace().next().unwrap_or("-").to_string(),
        _ => "-".into(),
    };
    let msg = e.to_string();
    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
    eprintln!("error: kind=usage key={key} msg={}", one_line(first));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    match dispatch(cli, &raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let lab = e.chain().find_map(|c| c.downcast_ref::<LabError>());
            let (kind, key, code) = match lab {
                Some(LabError::Config { key, .. }) => ("validation", key.clone(), 3),
                Some(LabError::Checkpoint { tensor, .. }) => ("checkpoint", tensor.clone(), 1),
                Some(other) => (other.kind(), "-".to_string(), 1),
                None => ("runtime", "-".to_string(), 1),
            };
            eprintln!("error: kind={kind} key={key} msg={}", one_line(&format!("{e:#}")));
            ExitCode::from(code)
        }
    }
}
