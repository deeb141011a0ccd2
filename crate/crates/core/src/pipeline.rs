//! End-to-end detection experiment: regenerate Real, Simulator and MOM
//! sequences, fit one model per sequence, then repeatedly split 80:20,
//! classify the test part with the bank and with the particle filter, and
//! aggregate accuracies over trials.
//!
//! Everything that does not depend on the split is computed once: the
//! fitted models, the full log-likelihood table and the filter error of
//! every sequence. A trial only selects bank columns and recalibrates the
//! filter threshold on its training part.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{self, BankMode, BankVerdict, EvalReport, Prediction, TrainOptions};
use crate::bpf::{self, FilterConfig, Verdict};
use crate::error::{Error, Result};
use crate::mom::{self, MomModel};
use crate::seqdata::{self, Label, RngStream, SeqFormat, SequenceRecord};
use crate::simulator::{SignalKind, SimulatorConfig};

/// Sequences of an externally produced type (GAN or handwritten fakes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSet {
    pub label: Label,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Sequences regenerated per fake type.
    pub count: usize,
    /// Real sequences; `None` matches the total number of fake sequences
    /// (regenerated and external) so the binary task is balanced.
    pub real_count: Option<usize>,
    pub length: usize,
    pub train_ratio: f64,
    pub trials: usize,
    pub seed: u64,
    /// Simulator settings; sequences alternate between the two faker laws.
    pub simulator: SimulatorConfig,
    /// Hidden states of the models that generate MOM fakes.
    pub generator_states: usize,
    /// How many real sequences supply generator models.
    pub generator_models: usize,
    pub train: TrainOptions,
    pub filter: FilterConfig,
    pub external: Vec<ExternalSet>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            count: 137,
            real_count: None,
            length: seqdata::DEFAULT_LENGTH,
            train_ratio: 0.8,
            trials: 100,
            seed: 0,
            simulator: SimulatorConfig::default(),
            generator_states: bank::DEFAULT_STATES,
            generator_models: 10,
            train: TrainOptions::default(),
            filter: FilterConfig::default(),
            external: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidArgument("count must be at least 2 per type".into()));
        }
        if self.length < 2 {
            return Err(Error::InvalidArgument("length must be at least 2".into()));
        }
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("train ratio {} must lie in (0, 1)", self.train_ratio)));
        }
        for n in [self.count, self.real_count.unwrap_or(self.count)] {
            let train = seqdata::train_count(n, self.train_ratio);
            if train == 0 || train == n {
                return Err(Error::InvalidArgument("split leaves an empty train or test part".into()));
            }
        }
        if self.generator_models < 1 || self.generator_states < 1 {
            return Err(Error::InvalidArgument("generator settings must be positive".into()));
        }
        Ok(())
    }
}

/// Split-independent work shared by all trials.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub records: Vec<SequenceRecord>,
    pub types: Vec<Label>,
    /// Fitted model per record; `None` where fitting failed.
    pub models: Vec<Option<MomModel>>,
    pub failures: Vec<(String, String)>,
    /// `loglik[i][j]`: record `i` under the model of record `j` (`-inf` if absent).
    pub loglik: Vec<Vec<f64>>,
    /// Filter error of each record against a fair coin.
    pub filter_err: Vec<f64>,
    /// Smallest and largest particle count seen across all filter runs.
    pub particle_range: (usize, usize),
}

fn stream(rng: &RngStream, tag: u64) -> RngStream {
    rng.child(tag)
}

/// Regenerate the Real, Simulator and MOM corpora and append external sets.
pub fn generate_corpus(cfg: &ExperimentConfig) -> Result<Vec<SequenceRecord>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let mut external = Vec::new();
    for ext in &cfg.external {
        let recs = seqdata::load_sequences(&ext.path, SeqFormat::from_path(&ext.path), ext.label)?;
        external.extend(recs.into_iter().map(|mut r| {
            r.label = ext.label;
            r
        }));
    }
    let real_count = cfg.real_count.unwrap_or(2 * cfg.count + external.len());
    let real = seqdata::generate_real(real_count, cfg.length, &mut stream(&root, 1))?;

    let sim_cfg = SimulatorConfig {
        length: cfg.length,
        ..cfg.simulator.clone()
    };
    let sim_rng = stream(&root, 2);
    let simulated = (0..cfg.count)
        .map(|i| {
            let kind = if i % 2 == 0 { SignalKind::TrivialFaker } else { SignalKind::RscFaker };
            sim_cfg
                .sample(kind, format!("sim-{i:04}"), &mut sim_rng.child(i as u64))
                .map(|s| s.record)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pick_rng = stream(&root, 3);
    let sources: Vec<usize> = {
        let mut idx: Vec<usize> = (0..real.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut pick_rng);
        idx.truncate(cfg.generator_models.min(real.len()));
        idx
    };
    let gen_opts = TrainOptions {
        s_init: cfg.generator_states,
        raise: false,
        ..cfg.train
    };
    let gen_rng = stream(&root, 4);
    let generators = sources
        .par_iter()
        .map(|&i| bank::train_model(real[i].flips(), &gen_opts, &mut gen_rng.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mom_rng = stream(&root, 5);
    let mom_fakes = (0..cfg.count)
        .map(|i| {
            let mut r = mom_rng.child(i as u64);
            let g = (r.uniform() * generators.len() as f64) as usize;
            mom::generate_sequence(&generators[g.min(generators.len() - 1)], cfg.length, format!("mom-{i:04}"), &mut r)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = real;
    records.extend(simulated);
    records.extend(mom_fakes);
    records.extend(external);
    Ok(records)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let records = generate_corpus(cfg)?;
    prepare_records(cfg, records)
}

/// Fit, score and filter a fixed corpus.
pub fn prepare_records(cfg: &ExperimentConfig, records: Vec<SequenceRecord>) -> Result<Prepared> {
    let types: Vec<Label> = Label::ALL
        .into_iter()
        .filter(|l| records.iter().any(|r| r.label == *l))
        .collect();
    let root = RngStream::new(cfg.seed, 1);
    let fit_rng = stream(&root, 1);
    let fitted: Vec<Result<MomModel>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| bank::train_model(r.flips(), &cfg.train, &mut fit_rng.child(i as u64)))
        .collect();
    let mut failures = Vec::new();
    let models: Vec<Option<MomModel>> = fitted
        .into_iter()
        .zip(&records)
        .map(|(res, r)| match res {
            Ok(m) => Some(m.with_label(r.label)),
            Err(e) => {
                failures.push((r.id.clone(), e.to_string()));
                None
            }
        })
        .collect();

    let loglik = records
        .par_iter()
        .map(|r| {
            models
                .iter()
                .map(|m| match m {
                    Some(m) => mom::log_likelihood(m, r.flips()),
                    None => Ok(f64::NEG_INFINITY),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let filter_rng = stream(&root, 2);
    let filtered = records
        .iter()
        .enumerate()
        .map(|(i, r)| bpf::filter_error(r.flips(), &cfg.filter, &filter_rng.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut particle_range = (usize::MAX, 0);
    for (_, out) in &filtered {
        for &n in &out.trace {
            particle_range.0 = particle_range.0.min(n);
            particle_range.1 = particle_range.1.max(n);
        }
    }
    Ok(Prepared {
        filter_err: filtered.into_iter().map(|(e, _)| e).collect(),
        records,
        types,
        models,
        failures,
        loglik,
        particle_range,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Bank discriminator, own-label mean against the rest.
    pub mom: EvalReport,
    /// Bank discriminator, highest group mean; binary Real-vs-fake correctness.
    pub mom_argmax: EvalReport,
    pub bpf: EvalReport,
    /// Filter threshold chosen in each trial.
    pub thresholds: Vec<f64>,
    pub fit_failures: Vec<(String, String)>,
}

struct TrialPredictions {
    mom: Vec<Prediction>,
    argmax: Vec<Prediction>,
    bpf: Vec<Prediction>,
    tau: f64,
}

fn binary(truth: Label, says_real: bool, predicted: String) -> Prediction {
    Prediction {
        truth,
        predicted,
        correct: says_real == (truth == Label::Real),
    }
}

fn run_trial(prep: &Prepared, cfg: &ExperimentConfig, trial: usize) -> Result<TrialPredictions> {
    let trial_rng = RngStream::new(cfg.seed, 2).child(trial as u64);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in &prep.types {
        let members: Vec<usize> = (0..prep.records.len()).filter(|&i| prep.records[i].label == *label).collect();
        let (tr, te) = seqdata::split_indices(members.len(), cfg.train_ratio, &mut trial_rng.child(label.code() as u64))?;
        if tr.is_empty() || te.is_empty() {
            return Err(Error::EmptyDataset(format!("split of {label} leaves an empty part")));
        }
        train.extend(tr.into_iter().map(|k| members[k]));
        test.extend(te.into_iter().map(|k| members[k]));
    }
    train.sort_unstable();
    test.sort_unstable();

    let cols: Vec<usize> = train.iter().copied().filter(|&j| prep.models[j].is_some()).collect();
    let col_labels: Vec<Label> = cols.iter().map(|&j| prep.records[j].label).collect();

    let samples: Vec<(f64, bool)> = train
        .iter()
        .map(|&i| (prep.filter_err[i], prep.records[i].label == Label::Real))
        .collect();
    let tau = bpf::calibrate_threshold(&samples)?.tau;

    let mut out = TrialPredictions {
        mom: Vec::with_capacity(test.len()),
        argmax: Vec::with_capacity(test.len()),
        bpf: Vec::with_capacity(test.len()),
        tau,
    };
    for &i in &test {
        let rec = &prep.records[i];
        let truth = rec.label;
        let ll: Vec<f64> = cols.iter().map(|&j| prep.loglik[i][j]).collect();
        out.mom.push(match bank::decide(&ll, &col_labels, BankMode::CorrectVsRest(truth), &rec.id) {
            Ok(d) => {
                let correct = d.verdict == BankVerdict::CorrectlyIdentified;
                Prediction {
                    truth,
                    predicted: d.verdict.name().to_string(),
                    correct,
                }
            }
            Err(Error::AllImpossible(_)) => Prediction {
                truth,
                predicted: "Unclassified".into(),
                correct: false,
            },
            Err(e) => return Err(e),
        });
        out.argmax.push(match bank::decide(&ll, &col_labels, BankMode::Argmax, &rec.id) {
            Ok(d) => {
                let BankVerdict::Class(l) = d.verdict else { unreachable!("argmax yields a class") };
                binary(truth, l == Label::Real, l.to_string())
            }
            Err(Error::AllImpossible(_)) => Prediction {
                truth,
                predicted: "Unclassified".into(),
                correct: false,
            },
            Err(e) => return Err(e),
        });
        let v = bpf::verdict_for_error(prep.filter_err[i], tau);
        out.bpf.push(binary(truth, v == Verdict::Real, v.as_str().to_string()));
    }
    Ok(out)
}

pub fn run_trials(prep: &Prepared, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(prep, cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let mom: Vec<Vec<Prediction>> = trials.iter().map(|t| t.mom.clone()).collect();
    let argmax: Vec<Vec<Prediction>> = trials.iter().map(|t| t.argmax.clone()).collect();
    let bpf_preds: Vec<Vec<Prediction>> = trials.iter().map(|t| t.bpf.clone()).collect();
    Ok(ExperimentResult {
        mom: EvalReport::from_trials("MOM", &mom)?,
        mom_argmax: EvalReport::from_trials("MOM (argmax)", &argmax)?,
        bpf: EvalReport::from_trials("Particle filtering", &bpf_preds)?,
        thresholds: trials.iter().map(|t| t.tau).collect(),
        fit_failures: prep.failures.clone(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prep = prepare(cfg)?;
    run_trials(&prep, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mom::FitOptions;

    fn smoke() -> ExperimentConfig {
        ExperimentConfig {
            count: 10,
            length: 50,
            trials: 2,
            seed: 3,
            generator_states: 2,
            generator_models: 2,
            train: TrainOptions {
                s_init: 2,
                fit: FitOptions { max_iters: 50, tol: 1e-6 },
                ..Default::default()
            },
            filter: FilterConfig { n0: 100, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn corpus_shape() {
        let cfg = smoke();
        let recs = generate_corpus(&cfg).unwrap();
        assert_eq!(recs.len(), 40);
        assert_eq!(recs.iter().filter(|r| r.label == Label::Real).count(), 20);
        for label in [Label::Simulator, Label::Mom] {
            assert_eq!(recs.iter().filter(|r| r.label == label).count(), 10);
        }
        assert!(recs.iter().all(|r| r.len() == 50));
        assert_eq!(recs, generate_corpus(&cfg).unwrap());
    }

    #[test]
    fn smoke_experiment_is_deterministic() {
        let cfg = smoke();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.mom, b.mom);
        assert_eq!(a.bpf, b.bpf);
        // 80:20 leaves 4 real and 2 of each fake type per trial.
        assert_eq!(a.mom.confusion.row_sums(), vec![8, 4, 4]);
        assert_eq!(a.thresholds.len(), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = ExperimentConfig { trials: 0, ..smoke() };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig { train_ratio: 1.0, ..smoke() };
        assert!(cfg.validate().is_err());
    }
}
