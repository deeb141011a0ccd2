//! Model bank and the recursive-likelihood discriminator, plus accuracy
//! and confusion-matrix reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mom::{self, FitOptions, MomModel};
use crate::seqdata::{Label, RngStream, SequenceRecord};

pub const DEFAULT_STATES: usize = 6;
/// Half-width of the uniform perturbation applied to initial emission rows.
pub const DEFAULT_JITTER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub id: String,
    pub label: Label,
    pub model: MomModel,
}

/// Labeled collection of fitted models. Entry order never affects a decision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBank {
    entries: Vec<BankEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: Label,
    states: usize,
    file: String,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: impl Into<String>, label: Label, model: MomModel) {
        self.entries.push(BankEntry {
            id: id.into(),
            label,
            model: model.with_label(label),
        });
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels present in the bank, in tie-break order.
    pub fn labels(&self) -> Vec<Label> {
        Label::ALL
            .into_iter()
            .filter(|l| self.entries.iter().any(|e| e.label == *l))
            .collect()
    }

    pub fn entry_labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Write `manifest.json` and one JSON file per model under `models/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let models = dir.join("models");
        fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        let mut manifest = Manifest { entries: Vec::new() };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("models/{i:04}-{}.json", e.label.as_str().to_lowercase());
            e.model.save(&dir.join(&file))?;
            manifest.entries.push(ManifestEntry {
                id: e.id.clone(),
                label: e.label,
                states: e.model.states(),
                file,
            });
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut bank = ModelBank::new();
        for m in manifest.entries {
            let model = MomModel::load(&dir.join(&m.file))?;
            if model.states() != m.states {
                return Err(Error::InvalidModel(format!(
                    "{}: manifest says s = {} but the model has s = {}",
                    m.file,
                    m.states,
                    model.states()
                )));
            }
            if model.label.is_some_and(|l| l != m.label) {
                return Err(Error::InvalidModel(format!("{}: label disagrees with manifest", m.file)));
            }
            bank.push(m.id, m.label, model);
        }
        if bank.is_empty() {
            return Err(Error::EmptyDataset(format!("bank at {} has no models", dir.display())));
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub s_init: usize,
    pub jitter: f64,
    pub fit: FitOptions,
    /// Add one hidden state after the first fit and refit.
    pub raise: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            s_init: DEFAULT_STATES,
            jitter: DEFAULT_JITTER,
            fit: FitOptions::default(),
            raise: true,
        }
    }
}

/// Fit one model to one sequence: `s_init` states, then (optionally) one
/// more state and a second fit.
pub fn train_model(y: &[u8], opts: &TrainOptions, rng: &mut RngStream) -> Result<MomModel> {
    let init = MomModel::jittered(opts.s_init, opts.jitter, rng)?;
    let seed = init.meta.seed;
    let mut model = mom::fit(y, init, opts.fit)?;
    if opts.raise {
        let raised = mom::raise_states(&model, rng)?;
        model = mom::fit(y, raised, opts.fit)?;
    }
    model.meta.seed = seed;
    Ok(model)
}

#[derive(Debug)]
pub struct TrainFailure {
    pub id: String,
    pub label: Label,
    pub error: Error,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bank: ModelBank,
    pub failures: Vec<TrainFailure>,
}

/// Fit one model per training sequence. Sequence `i` (counting across all
/// sets in order) uses child stream `i` of `rng`.
pub fn train_bank(sets: &[(Label, Vec<SequenceRecord>)], opts: &TrainOptions, rng: &RngStream) -> Result<TrainOutcome> {
    for (label, records) in sets {
        if records.is_empty() {
            return Err(Error::EmptyLabel(*label));
        }
    }
    let jobs: Vec<(Label, &SequenceRecord)> = sets
        .iter()
        .flat_map(|(label, recs)| recs.iter().map(move |r| (*label, r)))
        .collect();
    let fitted: Vec<Result<MomModel>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (_, rec))| train_model(rec.flips(), opts, &mut rng.child(i as u64)))
        .collect();
    let mut outcome = TrainOutcome {
        bank: ModelBank::new(),
        failures: Vec::new(),
    };
    for ((label, rec), res) in jobs.into_iter().zip(fitted) {
        match res {
            Ok(model) => outcome.bank.push(rec.id.clone(), label, model),
            Err(error) => outcome.failures.push(TrainFailure {
                id: rec.id.clone(),
                label,
                error,
            }),
        }
    }
    Ok(outcome)
}

/// Log-likelihood of `y` under every bank entry, in entry order.
pub fn classify_scores(y: &[u8], bank: &ModelBank) -> Result<Vec<f64>> {
    bank.entries
        .par_iter()
        .map(|e| mom::log_likelihood(&e.model, y))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankMode {
    Argmax,
    CorrectVsRest(Label),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankVerdict {
    Class(Label),
    CorrectlyIdentified,
    IncorrectlyIdentified,
}

impl BankVerdict {
    pub fn name(self) -> &'static str {
        match self {
            BankVerdict::Class(l) => l.as_str(),
            BankVerdict::CorrectlyIdentified => "Correct",
            BankVerdict::IncorrectlyIdentified => "Incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankDecision {
    pub verdict: BankVerdict,
    /// Mean log-likelihood per label present, in tie-break order.
    pub group_means: Vec<(Label, f64)>,
    /// Score of the verdict: winning group mean (argmax) or the difference
    /// between the true-label mean and the rest (correct-vs-rest).
    pub score: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Decide from precomputed per-entry log-likelihoods. `labels[i]` is the
/// label of the entry that produced `logliks[i]`.
pub fn decide(logliks: &[f64], labels: &[Label], mode: BankMode, id: &str) -> Result<BankDecision> {
    if logliks.len() != labels.len() || logliks.is_empty() {
        return Err(Error::InvalidArgument("score and label counts differ or are zero".into()));
    }
    if logliks.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::AllImpossible(id.to_string()));
    }
    // Sum in entry order per group so the reduction is deterministic;
    // addition order within a group follows the bank, which is fixed.
    let mut groups: BTreeMap<Label, (f64, usize)> = BTreeMap::new();
    for (&ll, &label) in logliks.iter().zip(labels) {
        let g = groups.entry(label).or_insert((0.0, 0));
        g.0 += ll;
        g.1 += 1;
    }
    let group_means: Vec<(Label, f64)> = groups.iter().map(|(l, (s, n))| (*l, s / *n as f64)).collect();
    match mode {
        BankMode::Argmax => {
            let mut best = group_means[0];
            for &(label, m) in &group_means[1..] {
                if m > best.1 {
                    best = (label, m);
                }
            }
            Ok(BankDecision {
                verdict: BankVerdict::Class(best.0),
                score: best.1,
                group_means,
            })
        }
        BankMode::CorrectVsRest(truth) => {
            let own = group_means
                .iter()
                .find(|(l, _)| *l == truth)
                .map(|(_, m)| *m)
                .ok_or(Error::EmptyLabel(truth))?;
            if labels.iter().all(|l| *l == truth) {
                return Err(Error::InvalidArgument(format!(
                    "bank has no models outside label {truth}"
                )));
            }
            let rest = mean(
                logliks
                    .iter()
                    .zip(labels)
                    .filter(|(_, l)| **l != truth)
                    .map(|(ll, _)| *ll),
            );
            let verdict = if own > rest {
                BankVerdict::CorrectlyIdentified
            } else {
                BankVerdict::IncorrectlyIdentified
            };
            let score = if own.is_finite() || rest.is_finite() { own - rest } else { 0.0 };
            Ok(BankDecision {
                verdict,
                group_means,
                score,
            })
        }
    }
}

pub fn classify_with_bank(record: &SequenceRecord, bank: &ModelBank, mode: BankMode) -> Result<BankDecision> {
    if bank.is_empty() {
        return Err(Error::EmptyDataset("model bank is empty".into()));
    }
    let scores = classify_scores(record.flips(), bank)?;
    decide(&scores, &bank.entry_labels(), mode, &record.id)
}

/// Counts indexed by true class (rows) and predicted class (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<String>, columns: Vec<String>) -> Self {
        let counts = vec![vec![0; columns.len()]; rows.len()];
        ConfusionMatrix { rows, columns, counts }
    }

    pub fn from_counts(rows: Vec<String>, columns: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != rows.len() || counts.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::InvalidArgument(format!(
                "count table must be {} x {}",
                rows.len(),
                columns.len()
            )));
        }
        Ok(ConfusionMatrix { rows, columns, counts })
    }

    /// Tally `(true, predicted)` pairs; classes appear in first-seen order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut m = ConfusionMatrix::new(Vec::new(), Vec::new());
        for (t, p) in pairs {
            m.record(t, p);
        }
        m
    }

    pub fn record(&mut self, truth: &str, predicted: &str) {
        let r = match self.rows.iter().position(|x| x == truth) {
            Some(r) => r,
            None => {
                self.rows.push(truth.to_string());
                self.counts.push(vec![0; self.columns.len()]);
                self.rows.len() - 1
            }
        };
        let c = match self.columns.iter().position(|x| x == predicted) {
            Some(c) => c,
            None => {
                self.columns.push(predicted.to_string());
                self.counts.iter_mut().for_each(|row| row.push(0));
                self.columns.len() - 1
            }
        };
        self.counts[r][c] += 1;
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    /// Fraction of row `i` predicted as the column with the same name, if any.
    pub fn row_accuracy(&self, i: usize) -> Option<f64> {
        let c = self.columns.iter().position(|c| *c == self.rows[i])?;
        let sum: u64 = self.counts[i].iter().sum();
        (sum > 0).then(|| self.counts[i][c] as f64 / sum as f64)
    }

    /// Matching-name diagonal over the total.
    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.rows.len())
            .filter_map(|i| {
                let c = self.columns.iter().position(|c| *c == self.rows[i])?;
                Some(self.counts[i][c])
            })
            .sum();
        diag as f64 / self.total() as f64
    }

    pub fn render(&self) -> String {
        let head = "True/predicted".to_string();
        let row_names: Vec<String> = self.rows.iter().map(|r| format!("True {r}")).collect();
        let col_names: Vec<String> = self.columns.iter().map(|c| format!("Predicted {c}")).collect();
        let w0 = row_names.iter().map(String::len).chain([head.len()]).max().unwrap_or(0);
        let widths: Vec<usize> = col_names
            .iter()
            .enumerate()
            .map(|(j, c)| {
                self.counts
                    .iter()
                    .map(|r| r[j].to_string().len())
                    .chain([c.len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!("{head:<w0$}");
        for (c, w) in col_names.iter().zip(&widths) {
            let _ = write!(out, " | {c:>w$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for (name, row) in row_names.iter().zip(&self.counts) {
            let _ = write!(out, "{name:<w0$}");
            for (v, w) in row.iter().zip(&widths) {
                let _ = write!(out, " | {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// One classified test sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: Label,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub label: Label,
    /// Mean accuracy over trials, in percent.
    pub accuracy: f64,
    /// Population standard deviation over trials, in percent.
    pub std_dev: f64,
    pub tested: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub trials: usize,
    pub per_type: Vec<TypeStats>,
    pub overall_accuracy: f64,
    pub overall_std_dev: f64,
    /// `per_trial[t][i]` is the accuracy (percent) on `per_type[i]` in trial `t`.
    pub per_trial: Vec<Vec<f64>>,
    /// Per-trial correct and tested counts, indexed like `per_trial`.
    pub per_trial_counts: Vec<Vec<(u64, u64)>>,
    pub confusion: ConfusionMatrix,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

impl EvalReport {
    /// Aggregate per-trial predictions. Types are reported in tie-break order.
    pub fn from_trials(method: impl Into<String>, trials: &[Vec<Prediction>]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidArgument("at least one trial is required".into()));
        }
        let types: Vec<Label> = Label::ALL
            .into_iter()
            .filter(|l| trials.iter().flatten().any(|p| p.truth == *l))
            .collect();
        if types.is_empty() {
            return Err(Error::EmptyDataset("no predictions to evaluate".into()));
        }
        let mut confusion = ConfusionMatrix::new(types.iter().map(|l| l.to_string()).collect(), Vec::new());
        let mut per_trial = Vec::with_capacity(trials.len());
        let mut per_trial_counts = Vec::with_capacity(trials.len());
        let mut overall = Vec::with_capacity(trials.len());
        for (t, preds) in trials.iter().enumerate() {
            let mut counts = vec![(0u64, 0u64); types.len()];
            for p in preds {
                let i = types.iter().position(|l| *l == p.truth).expect("type collected above");
                counts[i].0 += u64::from(p.correct);
                counts[i].1 += 1;
                confusion.record(p.truth.as_str(), &p.predicted);
            }
            if let Some(i) = counts.iter().position(|c| c.1 == 0) {
                return Err(Error::EmptyDataset(format!("trial {t} has no {} test sequences", types[i])));
            }
            per_trial.push(counts.iter().map(|(c, n)| 100.0 * *c as f64 / *n as f64).collect::<Vec<_>>());
            let (c, n) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            overall.push(100.0 * c as f64 / n as f64);
            per_trial_counts.push(counts);
        }
        let per_type = types
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let xs: Vec<f64> = per_trial.iter().map(|r| r[i]).collect();
                let (accuracy, std_dev) = mean_std(&xs);
                TypeStats {
                    label,
                    accuracy,
                    std_dev,
                    tested: per_trial_counts.iter().map(|r| r[i].1).sum(),
                }
            })
            .collect();
        let (overall_accuracy, overall_std_dev) = mean_std(&overall);
        Ok(EvalReport {
            method: method.into(),
            trials: trials.len(),
            per_type,
            overall_accuracy,
            overall_std_dev,
            per_trial,
            per_trial_counts,
            confusion,
        })
    }

    pub fn type_stats(&self, label: Label) -> Option<&TypeStats> {
        self.per_type.iter().find(|s| s.label == label)
    }

    /// Accuracy (percent) in trial `t` restricted to the given types.
    pub fn trial_accuracy_over(&self, t: usize, labels: &[Label]) -> Option<f64> {
        let (c, n) = self
            .per_type
            .iter()
            .zip(&self.per_trial_counts[t])
            .filter(|(s, _)| labels.contains(&s.label))
            .fold((0, 0), |a, (_, b)| (a.0 + b.0, a.1 + b.1));
        (n > 0).then(|| 100.0 * c as f64 / n as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("evaluation report", e))
    }

    /// Method row with accuracy and deviation per type plus overall.
    pub fn render_table(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.per_type.iter().map(|s| format!("{}(%)", s.label)));
        header.push("Overall(%)".into());
        let mut acc = vec!["Accuracy".to_string()];
        acc.extend(self.per_type.iter().map(|s| format!("{:.2}", s.accuracy)));
        acc.push(format!("{:.2}", self.overall_accuracy));
        let mut dev = vec!["Standard deviation".to_string()];
        dev.extend(self.per_type.iter().map(|s| format!("{:.2}", s.std_dev)));
        dev.push(format!("{:.2}", self.overall_std_dev));
        let widths: Vec<usize> = (0..header.len())
            .map(|j| [&header, &acc, &dev].iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for (c, w) in cells[1..].iter().zip(&widths[1..]) {
                let _ = write!(s, "  {c:>w$}");
            }
            s.push('\n');
            s
        };
        let mut out = format!("{} ({} trials)\n", self.method, self.trials);
        out += &line(&header);
        out += &line(&acc);
        out += &line(&dev);
        out
    }
}

/// Run `classify` on every test sequence once per trial. Trial `t` hands
/// sequence `i` child stream `i` of `rng.child(t)`.
pub fn evaluate<C>(
    test_sets: &[(Label, Vec<SequenceRecord>)],
    trials: usize,
    method: &str,
    rng: &RngStream,
    classify: C,
) -> Result<EvalReport>
where
    C: Fn(&SequenceRecord, Label, &mut RngStream) -> Result<Prediction> + Sync,
{
    if trials < 1 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    for (label, recs) in test_sets {
        if recs.is_empty() {
            return Err(Error::EmptyLabel(*label));
        }
    }
    let jobs: Vec<(Label, &SequenceRecord)> = test_sets
        .iter()
        .flat_map(|(l, recs)| recs.iter().map(move |r| (*l, r)))
        .collect();
    let results: Vec<Vec<Prediction>> = (0..trials)
        .map(|t| {
            let trial_rng = rng.child(t as u64);
            jobs.par_iter()
                .enumerate()
                .map(|(i, (label, rec))| classify(rec, *label, &mut trial_rng.child(i as u64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    EvalReport::from_trials(method, &results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fair() -> MomModel {
        MomModel::new(vec![vec![1.0]], vec![[[0.5, 0.5], [0.5, 0.5]]], vec![[0.5, 0.5]]).unwrap()
    }

    fn always_one() -> MomModel {
        MomModel::new(vec![vec![1.0]], vec![[[0.0, 1.0], [0.0, 1.0]]], vec![[0.0, 1.0]]).unwrap()
    }

    fn rec(label: Label, bits: Vec<u8>) -> SequenceRecord {
        SequenceRecord::new("s", label, bits).unwrap()
    }

    #[test]
    fn dominance_bank() {
        let mut bank = ModelBank::new();
        bank.push("fair", Label::Real, fair());
        bank.push("ones", Label::Simulator, always_one());
        let ones = rec(Label::Simulator, vec![1; 200]);
        let d = classify_with_bank(&ones, &bank, BankMode::Argmax).unwrap();
        assert_eq!(d.verdict, BankVerdict::Class(Label::Simulator));
        assert_eq!(d.group_means[1], (Label::Simulator, 0.0));
        assert!((d.group_means[0].1 - 200.0 * 0.5f64.ln()).abs() < 1e-9);

        // One zero makes the always-one model impossible.
        let mut bits = vec![1; 200];
        bits[7] = 0;
        let d = classify_with_bank(&rec(Label::Real, bits), &bank, BankMode::Argmax).unwrap();
        assert_eq!(d.verdict, BankVerdict::Class(Label::Real));
    }

    #[test]
    fn ties_follow_label_order() {
        let mut bank = ModelBank::new();
        bank.push("b", Label::Mom, fair());
        bank.push("a", Label::Simulator, fair());
        bank.push("c", Label::Real, fair());
        let d = classify_with_bank(&rec(Label::Mom, vec![0, 1, 1, 0]), &bank, BankMode::Argmax).unwrap();
        assert_eq!(d.verdict, BankVerdict::Class(Label::Real));
        let d = classify_with_bank(&rec(Label::Mom, vec![0, 1]), &bank, BankMode::CorrectVsRest(Label::Mom)).unwrap();
        assert_eq!(d.verdict, BankVerdict::IncorrectlyIdentified);
    }

    #[test]
    fn all_impossible_is_an_error() {
        let mut bank = ModelBank::new();
        bank.push("ones", Label::Simulator, always_one());
        let err = classify_with_bank(&rec(Label::Real, vec![0, 0]), &bank, BankMode::Argmax).unwrap_err();
        assert!(matches!(err, Error::AllImpossible(_)));
    }

    #[test]
    fn correct_vs_rest_pools_other_models() {
        let labels = [Label::Real, Label::Simulator, Label::Mom, Label::Mom];
        // Real mean -10; rest mean (-12 - 8 - 9) / 3 = -9.67 so Real loses.
        let d = decide(&[-10.0, -12.0, -8.0, -9.0], &labels, BankMode::CorrectVsRest(Label::Real), "x").unwrap();
        assert_eq!(d.verdict, BankVerdict::IncorrectlyIdentified);
        let d = decide(&[-9.0, -12.0, -8.0, -9.0], &labels, BankMode::CorrectVsRest(Label::Real), "x").unwrap();
        assert_eq!(d.verdict, BankVerdict::CorrectlyIdentified);
        assert!(decide(&[-1.0], &[Label::Real], BankMode::CorrectVsRest(Label::Gan), "x").is_err());
    }

    #[test]
    fn constant_shift_keeps_argmax() {
        let labels = [Label::Real, Label::Simulator, Label::Mom, Label::Real];
        let ll = [-130.0, -128.5, -140.0, -126.0];
        let shifted: Vec<f64> = ll.iter().map(|x| x + 37.25).collect();
        let a = decide(&ll, &labels, BankMode::Argmax, "x").unwrap();
        let b = decide(&shifted, &labels, BankMode::Argmax, "x").unwrap();
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn train_raises_states_and_is_deterministic() {
        let mut rng = RngStream::new(4, 0);
        let records = crate::seqdata::generate_real(2, 60, &mut rng).unwrap();
        let opts = TrainOptions {
            s_init: 2,
            fit: FitOptions { max_iters: 30, tol: 1e-6 },
            ..Default::default()
        };
        let sets = vec![(Label::Real, records)];
        let a = train_bank(&sets, &opts, &RngStream::new(9, 0)).unwrap();
        let b = train_bank(&sets, &opts, &RngStream::new(9, 0)).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.bank, b.bank);
        assert!(a.bank.entries().iter().all(|e| e.model.states() == 3 && e.label == Label::Real));
        let err = train_bank(&[(Label::Gan, vec![])], &opts, &RngStream::new(9, 0)).unwrap_err();
        assert!(matches!(err, Error::EmptyLabel(Label::Gan)));
    }

    #[test]
    fn bank_round_trip() {
        let mut bank = ModelBank::new();
        bank.push("fair", Label::Real, fair());
        bank.push("ones", Label::Simulator, always_one());
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        assert_eq!(ModelBank::load(dir.path()).unwrap(), bank);
    }

    #[test]
    fn table_two_counts() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let m = ConfusionMatrix::from_counts(
            names(&["Real", "Handwritten", "Deepfake"]),
            names(&["Real", "Handwritten", "Deepfake"]),
            vec![vec![320, 260, 250], vec![236, 333, 261], vec![310, 252, 268]],
        )
        .unwrap();
        assert_eq!(m.row_sums(), vec![830, 830, 830]);
        assert!((m.row_accuracy(1).unwrap() - 333.0 / 830.0).abs() < 1e-15);
        let text = m.render();
        assert!(text.lines().nth(2).unwrap().starts_with("True Real"));
        assert!(text.contains("320") && text.contains("Predicted Deepfake"));
    }

    #[test]
    fn from_pairs_counts() {
        let m = ConfusionMatrix::from_pairs([("Real", "Real"), ("MOM", "Real"), ("MOM", "MOM")]);
        assert_eq!(m.rows, vec!["Real", "MOM"]);
        assert_eq!(m.counts, vec![vec![1, 0], vec![1, 1]]);
        assert!((m.accuracy() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_classifier_is_perfect() {
        let mut rng = RngStream::new(2, 0);
        let sets: Vec<(Label, Vec<SequenceRecord>)> = [Label::Real, Label::Simulator]
            .into_iter()
            .map(|l| {
                let recs = (0..5).map(|_| rec(l, vec![rng.uniform().round() as u8, 1])).collect();
                (l, recs)
            })
            .collect();
        let report = evaluate(&sets, 3, "oracle", &RngStream::new(0, 0), |_, truth, _| {
            Ok(Prediction {
                truth,
                predicted: truth.to_string(),
                correct: true,
            })
        })
        .unwrap();
        assert!(report.per_type.iter().all(|s| s.accuracy == 100.0 && s.std_dev == 0.0));
        assert_eq!(report.overall_accuracy, 100.0);
        assert_eq!(report.confusion.counts, vec![vec![15, 0], vec![0, 15]]);
        assert_eq!(report.confusion.row_sums(), vec![15, 15]);
        assert!(report.render_table().contains("100.00"));
    }

    #[test]
    fn coin_toss_classifier_is_at_chance() {
        let sets = vec![
            (Label::Real, (0..50).map(|_| rec(Label::Real, vec![0, 1])).collect()),
            (Label::Simulator, (0..50).map(|_| rec(Label::Simulator, vec![1, 0])).collect()),
        ];
        let trials = 200;
        let report = evaluate(&sets, trials, "coin", &RngStream::new(5, 0), |_, truth, rng| {
            let says_real = rng.uniform() < 0.5;
            Ok(Prediction {
                truth,
                predicted: if says_real { "Real" } else { "Fake" }.into(),
                correct: says_real == (truth == Label::Real),
            })
        })
        .unwrap();
        let sigma = 100.0 * (0.25f64 / (100 * trials) as f64).sqrt();
        assert!((report.overall_accuracy - 50.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn single_trial_has_zero_deviation() {
        let preds = vec![vec![
            Prediction { truth: Label::Real, predicted: "Real".into(), correct: true },
            Prediction { truth: Label::Real, predicted: "Fake".into(), correct: false },
        ]];
        let r = EvalReport::from_trials("x", &preds).unwrap();
        assert_eq!(r.per_type[0].accuracy, 50.0);
        assert_eq!(r.per_type[0].std_dev, 0.0);
    }
}
