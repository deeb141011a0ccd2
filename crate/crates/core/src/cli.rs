//! Command-line interface. Every command is a pure function of its inputs,
//! flags and seed; each output is accompanied by a provenance JSON file
//! recording the full configuration.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical or training
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::bank::{self, BankMode, ConfusionMatrix, ModelBank, TrainOptions};
use crate::bpf::{self, Calibration, FilterConfig};
use crate::error::{Error, Result};
use crate::mom::{self, FitOptions, MomModel};
use crate::pipeline::{self, ExperimentConfig, ExternalSet};
use crate::seqdata::{self, Label, RngStream, SeqFormat, SequenceRecord};
use crate::simulator::{self, SignalKind, SimulatorConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FLIPFAKE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "flipfake", version, about = "Generate and detect fake coin-flip sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a file of flip sequences.
    Generate(GenerateArgs),
    /// Fit one model per training sequence and write a model bank.
    Train(TrainArgs),
    /// Choose a particle-filter threshold on labeled sequences.
    Calibrate(CalibrateArgs),
    /// Classify sequences with a model bank or the particle filter.
    Classify(ClassifyArgs),
    /// Regenerate data and report accuracies over repeated splits.
    Evaluate(EvaluateArgs),
    /// Build a confusion matrix from counts or from classifier output.
    Confusion(ConfusionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Real,
    Tf,
    Rsc,
    Mom,
}

#[derive(Debug, Args)]
pub struct SignalFlags {
    /// Step size of the marginal and covariance random walks.
    #[arg(long, default_value_t = simulator::DEFAULT_EPS)]
    pub eps: f64,
    /// Per-step probability of a sign change (RSC faker).
    #[arg(long, default_value_t = simulator::DEFAULT_DELTA)]
    pub delta: f64,
    /// Number of covariance lags.
    #[arg(long, default_value_t = simulator::DEFAULT_LAGS)]
    pub lags: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = seqdata::DEFAULT_LENGTH)]
    pub length: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub signal: SignalFlags,
    /// Initial marginal.
    #[arg(long, default_value_t = simulator::DEFAULT_R0)]
    pub r0: f64,
    /// Initial covariance, applied to every lag.
    #[arg(long, default_value_t = 0.0)]
    pub beta0: f64,
    /// Simulator config JSON; replaces the signal flags when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model JSON used by `--kind mom`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<SeqFormat>,
    /// Output file; defaults to `<kind>.csv` in the default output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training file as `LABEL=PATH`; repeat for several labels.
    #[arg(long = "input", required = true, value_parser = parse_labeled_path)]
    pub inputs: Vec<(Label, PathBuf)>,
    /// Hidden states of the first fit; the bank ends with one more.
    #[arg(long, default_value_t = bank::DEFAULT_STATES)]
    pub states: usize,
    /// Skip the extra hidden state and second fit.
    #[arg(long)]
    pub no_raise: bool,
    #[arg(long, default_value_t = mom::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = mom::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = bank::DEFAULT_JITTER)]
    pub jitter: f64,
    #[arg(long)]
    pub seed: u64,
    /// Bank directory; defaults to `bank` in the default output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterFlags {
    /// Filter config JSON; replaces the filter flags when given.
    #[arg(long)]
    pub filter_config: Option<PathBuf>,
    /// Initial particle count.
    #[arg(long, default_value_t = bpf::DEFAULT_PARTICLES)]
    pub particles: usize,
    #[arg(long, default_value_t = bpf::DEFAULT_R_RESAMPLE)]
    pub r_resample: f64,
    #[command(flatten)]
    pub signal: SignalFlags,
}

impl FilterFlags {
    fn config(&self, seed: Option<u64>) -> Result<FilterConfig> {
        let mut cfg = match &self.filter_config {
            Some(path) => read_json::<FilterConfig>(path)?,
            None => FilterConfig {
                n0: self.particles,
                r_resample: self.r_resample,
                eps: self.signal.eps,
                delta: self.signal.delta,
                nc: self.signal.lags,
                ..Default::default()
            },
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        } else if self.filter_config.is_none() {
            return Err(Error::InvalidArgument("--seed is required for the particle filter".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Labeled sequence file(s); Real is positive, every other label fake.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub filter: FilterFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Argmax,
    CorrectVsRest,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Label for records of a plain lines file.
    #[arg(long)]
    pub label: Option<Label>,
    /// Model bank directory.
    #[arg(long, conflicts_with = "bpf")]
    pub bank: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Argmax)]
    pub mode: ModeArg,
    /// Use the particle filter instead of a bank.
    #[arg(long)]
    pub bpf: bool,
    /// Error threshold for the filter.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Calibration JSON written by `calibrate`.
    #[arg(long, conflicts_with = "threshold")]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub filter: FilterFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub r_resample: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Extra externally produced type as `LABEL=PATH` (GAN, Handwritten).
    #[arg(long = "external", value_parser = parse_labeled_path)]
    pub external: Vec<(Label, PathBuf)>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    /// CSV count table: header of predicted classes, then one row per true class.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub matrix: Option<PathBuf>,
    /// Output of `classify`; true and predicted columns are tallied.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_labeled_path(s: &str) -> std::result::Result<(Label, PathBuf), String> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=PATH, got `{s}`"))?;
    let label = label.parse::<Label>().map_err(|e| e.to_string())?;
    if path.is_empty() {
        return Err("empty path".into());
    }
    Ok((label, PathBuf::from(path)))
}

fn default_out(name: &str) -> PathBuf {
    let base = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    base.join(name)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    write_text(path, &(text + "\n"))
}

/// `<out>.provenance.json` next to a file output.
fn provenance_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    out.with_file_name(name)
}

fn provenance(command: &str, config: serde_json::Value) -> serde_json::Value {
    json!({
        "tool": "flipfake",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_generate(a: &GenerateArgs) -> Result<PathBuf> {
    let format = a.format.unwrap_or(SeqFormat::Csv);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("{}.{}", kind_name(a.kind), format.extension())));
    let format = a.format.unwrap_or_else(|| SeqFormat::from_path(&out));
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    let rng = RngStream::new(a.seed, 0);
    let (records, detail) = match a.kind {
        GenKind::Real => {
            let recs = seqdata::generate_real(a.count, a.length, &mut rng.clone())?;
            (recs, json!(null))
        }
        GenKind::Tf | GenKind::Rsc => {
            let kind = if a.kind == GenKind::Tf { SignalKind::TrivialFaker } else { SignalKind::RscFaker };
            let mut cfg = match &a.config {
                Some(path) => read_json::<SimulatorConfig>(path)?,
                None => SimulatorConfig {
                    l: a.signal.lags,
                    eps: a.signal.eps,
                    delta: a.signal.delta,
                    r0: a.r0,
                    beta0: vec![a.beta0],
                    ..Default::default()
                },
            };
            cfg.kind = kind;
            cfg.length = a.length;
            cfg.seed = a.seed;
            let samples = cfg.generate(a.count, kind.name(), &rng)?;
            let clamps: usize = samples.iter().map(|s| s.clamp_events).sum();
            let recs = samples.into_iter().map(|s| s.record).collect();
            (recs, json!({ "simulator": cfg, "clamp_events": clamps }))
        }
        GenKind::Mom => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--kind mom requires --model".into()))?;
            let model = MomModel::load(path)?;
            let recs = (0..a.count)
                .map(|i| mom::generate_sequence(&model, a.length, format!("mom-{i:04}"), &mut rng.child(i as u64)))
                .collect::<Result<Vec<_>>>()?;
            (recs, json!({ "model": path_str(path), "states": model.states() }))
        }
    };
    seqdata::save_sequences(&records, &out, format)?;
    write_json(
        &provenance_path(&out),
        &provenance(
            "generate",
            json!({
                "kind": a.kind,
                "count": a.count,
                "length": a.length,
                "seed": a.seed,
                "format": format,
                "output": path_str(&out),
                "detail": detail,
            }),
        ),
    )?;
    Ok(out)
}

fn kind_name(k: GenKind) -> &'static str {
    match k {
        GenKind::Real => "real",
        GenKind::Tf => "tf",
        GenKind::Rsc => "rsc",
        GenKind::Mom => "mom",
    }
}

fn load_labeled(path: &Path, label: Label) -> Result<Vec<SequenceRecord>> {
    seqdata::load_sequences(path, SeqFormat::from_path(path), label)
}

/// Returns the bank directory and whether any fit failed.
fn cmd_train(a: &TrainArgs) -> Result<(PathBuf, Vec<bank::TrainFailure>)> {
    let out = a.out.clone().unwrap_or_else(|| default_out("bank"));
    let mut sets: Vec<(Label, Vec<SequenceRecord>)> = Vec::new();
    for (label, path) in &a.inputs {
        let recs = load_labeled(path, *label)?;
        match sets.iter_mut().find(|(l, _)| l == label) {
            Some((_, v)) => v.extend(recs),
            None => sets.push((*label, recs)),
        }
    }
    let opts = TrainOptions {
        s_init: a.states,
        jitter: a.jitter,
        fit: FitOptions {
            max_iters: a.max_iters,
            tol: a.tol,
        },
        raise: !a.no_raise,
    };
    let outcome = bank::train_bank(&sets, &opts, &RngStream::new(a.seed, 0))?;
    if !outcome.bank.is_empty() {
        outcome.bank.save(&out)?;
    }
    let failures: Vec<_> = outcome
        .failures
        .iter()
        .map(|f| json!({ "id": f.id, "label": f.label, "error": f.error.to_string() }))
        .collect();
    write_json(
        &out.join("provenance.json"),
        &provenance(
            "train",
            json!({
                "inputs": a.inputs.iter().map(|(l, p)| json!({ "label": l, "path": path_str(p) })).collect::<Vec<_>>(),
                "options": opts,
                "seed": a.seed,
                "models": outcome.bank.len(),
                "failures": failures,
            }),
        ),
    )?;
    Ok((out, outcome.failures))
}

fn filter_errors(records: &[SequenceRecord], cfg: &FilterConfig) -> Result<Vec<f64>> {
    let rng = RngStream::new(cfg.seed, 0);
    records
        .iter()
        .enumerate()
        .map(|(i, r)| bpf::filter_error(r.flips(), cfg, &rng.child(i as u64)).map(|(e, _)| e))
        .collect()
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(PathBuf, Calibration)> {
    let out = a.out.clone().unwrap_or_else(|| default_out("calibration.json"));
    let cfg = a.filter.config(a.seed)?;
    let mut records = Vec::new();
    for path in &a.inputs {
        records.extend(load_labeled(path, Label::Real)?);
    }
    let errs = filter_errors(&records, &cfg)?;
    let samples: Vec<(f64, bool)> = errs
        .iter()
        .zip(&records)
        .map(|(e, r)| (*e, r.label == Label::Real))
        .collect();
    let cal = bpf::calibrate_threshold(&samples)?;
    write_json(&out, &cal)?;
    write_json(
        &provenance_path(&out),
        &provenance(
            "calibrate",
            json!({
                "inputs": a.inputs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
                "filter": cfg,
            }),
        ),
    )?;
    Ok((out, cal))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_score(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn cmd_classify(a: &ClassifyArgs) -> Result<PathBuf> {
    let out = a.out.clone().unwrap_or_else(|| default_out("verdicts.csv"));
    let format = SeqFormat::from_path(&a.input);
    let labels_known = format == SeqFormat::Csv || a.label.is_some();
    let records = seqdata::load_sequences(&a.input, format, a.label.unwrap_or(Label::Real))?;
    let mut rows: Vec<(String, String, String)> = Vec::with_capacity(records.len());
    let detail;
    if a.bpf {
        let tau = match (a.threshold, &a.calibration) {
            (Some(t), _) => t,
            (None, Some(path)) => read_json::<Calibration>(path)?.tau,
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "particle-filter mode needs --threshold or --calibration".into(),
                ))
            }
        };
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("threshold {tau} must be positive")));
        }
        let cfg = a.filter.config(a.seed)?;
        let errs = filter_errors(&records, &cfg)?;
        for e in errs {
            let v = bpf::verdict_for_error(e, tau);
            rows.push((v.as_str().into(), fmt_score(e), String::new()));
        }
        detail = json!({ "method": "bpf", "threshold": tau, "filter": cfg });
    } else {
        let dir = a
            .bank
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("pass --bank DIR or --bpf".into()))?;
        if a.mode == ModeArg::CorrectVsRest && !labels_known {
            return Err(Error::InvalidArgument(
                "correct-vs-rest mode needs true labels (CSV input or --label)".into(),
            ));
        }
        let bank = ModelBank::load(dir)?;
        let decisions = records
            .par_iter()
            .map(|r| {
                let mode = match a.mode {
                    ModeArg::Argmax => BankMode::Argmax,
                    ModeArg::CorrectVsRest => BankMode::CorrectVsRest(r.label),
                };
                bank::classify_with_bank(r, &bank, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        for d in decisions {
            rows.push((d.verdict.name().into(), fmt_score(d.score), String::new()));
        }
        detail = json!({ "method": "bank", "bank": path_str(dir), "mode": a.mode, "models": bank.len() });
    }
    let mut csv = String::from("id,true_label,predicted,score\n");
    for (rec, (pred, score, _)) in records.iter().zip(&rows) {
        let truth = if labels_known { rec.label.as_str() } else { "" };
        let _ = writeln!(csv, "{},{},{},{}", csv_field(&rec.id), truth, pred, score);
    }
    write_text(&out, &csv)?;
    write_json(
        &provenance_path(&out),
        &provenance(
            "classify",
            json!({ "input": path_str(&a.input), "label": a.label, "detail": detail }),
        ),
    )?;
    Ok(out)
}

fn experiment_config(a: &EvaluateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(l) = a.length {
        cfg.length = l;
        cfg.simulator.length = l;
    }
    if let Some(n) = a.particles {
        cfg.filter.n0 = n;
    }
    if let Some(s) = a.states {
        cfg.train.s_init = s;
        cfg.generator_states = s;
    }
    if let Some(r) = a.r_resample {
        cfg.filter.r_resample = r;
    }
    if let Some(e) = a.eps {
        cfg.simulator.eps = e;
        cfg.filter.eps = e;
    }
    if let Some(d) = a.delta {
        cfg.simulator.delta = d;
        cfg.filter.delta = d;
    }
    cfg.external
        .extend(a.external.iter().map(|(label, path)| ExternalSet { label: *label, path: path.clone() }));
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(PathBuf, pipeline::ExperimentResult)> {
    let out = a.out.clone().unwrap_or_else(|| default_out("evaluation"));
    let cfg = experiment_config(a)?;
    let result = pipeline::run_experiment(&cfg)?;
    write_json(&out.join("report.json"), &result)?;
    let mut text = String::new();
    for r in [&result.mom, &result.mom_argmax, &result.bpf] {
        text += &r.render_table();
        text.push('\n');
        text += &r.confusion.render();
        text.push('\n');
    }
    write_text(&out.join("report.txt"), &text)?;
    write_json(&out.join("provenance.json"), &provenance("evaluate", json!(cfg)))?;
    Ok((out, result))
}

fn parse_count_table(path: &Path) -> Result<ConfusionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        column: 1,
        message,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyDataset(path.display().to_string()))?;
    let columns: Vec<String> = header.split(',').skip(1).map(|c| c.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for (n, line) in lines {
        let mut cells = line.split(',').map(str::trim);
        rows.push(cells.next().unwrap_or_default().to_string());
        let row = cells
            .map(|c| c.parse::<u64>().map_err(|_| parse_err(n, format!("`{c}` is not a count"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != columns.len() {
            return Err(parse_err(n, format!("expected {} counts, found {}", columns.len(), row.len())));
        }
        counts.push(row);
    }
    ConfusionMatrix::from_counts(rows, columns, counts)
}

fn parse_predictions(path: &Path) -> Result<ConfusionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyDataset(path.display().to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter().position(|c| c.trim() == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (ti, pi) = (find("true_label")?, find("predicted")?);
    let mut pairs = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let (Some(t), Some(p)) = (cells.get(ti), cells.get(pi)) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                column: 1,
                message: "too few columns".into(),
            });
        };
        if t.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                column: 1,
                message: "true label missing".into(),
            });
        }
        pairs.push((t.to_string(), p.to_string()));
    }
    Ok(ConfusionMatrix::from_pairs(pairs.iter().map(|(t, p)| (t.as_str(), p.as_str()))))
}

pub fn render_confusion_report(m: &ConfusionMatrix) -> String {
    let mut text = m.render();
    text.push('\n');
    for (i, (row, sum)) in m.rows.iter().zip(m.row_sums()).enumerate() {
        match m.row_accuracy(i) {
            Some(acc) => {
                let c = m.columns.iter().position(|c| c == row).map(|c| m.counts[i][c]).unwrap_or(0);
                let _ = writeln!(text, "True {row}: {c}/{sum} correct ({:.1}%)", 100.0 * acc);
            }
            None => {
                let _ = writeln!(text, "True {row}: {sum} sequences");
            }
        }
    }
    text
}

fn cmd_confusion(a: &ConfusionArgs) -> Result<(Option<PathBuf>, String)> {
    let m = match (&a.matrix, &a.predictions) {
        (Some(p), _) => parse_count_table(p)?,
        (None, Some(p)) => parse_predictions(p)?,
        (None, None) => return Err(Error::InvalidArgument("pass --matrix or --predictions".into())),
    };
    let text = render_confusion_report(&m);
    if let Some(out) = &a.out {
        write_json(out, &m)?;
        write_json(
            &provenance_path(out),
            &provenance(
                "confusion",
                json!({
                    "matrix": a.matrix.as_deref().map(path_str),
                    "predictions": a.predictions.as_deref().map(path_str),
                }),
            ),
        )?;
    }
    Ok((a.out.clone(), text))
}

/// Run a parsed command, reporting progress on stderr and summaries on stdout.
pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(a) => {
            let out = cmd_generate(a)?;
            eprintln!("wrote {}", out.display());
            Ok(0)
        }
        Command::Train(a) => {
            let (out, failures) = cmd_train(a)?;
            for f in &failures {
                eprintln!("fit failed for {} ({}): {}", f.id, f.label, f.error);
            }
            eprintln!("wrote bank to {}", out.display());
            Ok(if failures.is_empty() { 0 } else { 2 })
        }
        Command::Calibrate(a) => {
            let (out, cal) = cmd_calibrate(a)?;
            println!("tau = {} (accuracy {:.4})", cal.tau, cal.accuracy);
            eprintln!("wrote {}", out.display());
            Ok(0)
        }
        Command::Classify(a) => {
            let out = cmd_classify(a)?;
            eprintln!("wrote {}", out.display());
            Ok(0)
        }
        Command::Evaluate(a) => {
            let (out, result) = cmd_evaluate(a)?;
            print!("{}", result.mom.render_table());
            print!("{}", result.bpf.render_table());
            for (id, e) in &result.fit_failures {
                eprintln!("fit failed for {id}: {e}");
            }
            eprintln!("wrote {}", out.display());
            Ok(if result.fit_failures.is_empty() { 0 } else { 2 })
        }
        Command::Confusion(a) => {
            let (_, text) = cmd_confusion(a)?;
            print!("{text}");
            Ok(0)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
