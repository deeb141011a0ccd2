//! Faker signal models and correlated-Bernoulli sampling.
//!
//! A signal is a trajectory of marginals `r_k` (probability of heads on
//! flip `k`) and lag covariances `beta_{k,j}`, `j = 1..l`. Three evolution
//! laws are supported:
//!
//! * trivial faker: `r` and each `beta_j` follow multiplicative random walks
//!   driven by fair `+-1` signs,
//! * random sign change faker: as above, plus rare reflections
//!   `r -> 1 - r` and sign flips `beta_j -> -beta_j` with probability `delta`,
//! * real coin: `r = 1/2`, `beta = 0`.
//!
//! Flips are drawn sequentially: the probability of heads on flip `k` is
//! `r_k` plus, for each lag, `beta_{k,j}` times the standardized innovation
//! of flip `k - j`, clamped to `[0, 1]`. To first order this reproduces
//! `cov(Y_k, Y_{k-j}) = beta_{k,j}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{Label, RngStream, SequenceRecord};

pub const DEFAULT_EPS: f64 = 0.05;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_LAGS: usize = 5;
pub const DEFAULT_R0: f64 = 0.5;

/// The signal indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
pub enum SignalKind {
    #[serde(rename = "tf")]
    #[value(name = "tf")]
    TrivialFaker,
    #[serde(rename = "rsc")]
    #[value(name = "rsc")]
    RscFaker,
    #[serde(rename = "real")]
    #[value(name = "real")]
    RealCoin,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [SignalKind::TrivialFaker, SignalKind::RscFaker, SignalKind::RealCoin];

    pub fn theta(self) -> i8 {
        match self {
            SignalKind::TrivialFaker => 1,
            SignalKind::RscFaker => 0,
            SignalKind::RealCoin => -1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::TrivialFaker => "tf",
            SignalKind::RscFaker => "rsc",
            SignalKind::RealCoin => "real",
        }
    }
}

/// A full signal trajectory. `r[k - 1]` and `beta[k - 1]` belong to flip `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    pub theta: SignalKind,
    pub r: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub eps: f64,
    pub delta: f64,
}

impl SignalState {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn lags(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }
}

fn sign(rng: &mut RngStream) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Advance `(r, beta)` by one step of `kind`'s evolution law.
pub fn advance(kind: SignalKind, r: &mut f64, beta: &mut [f64], eps: f64, delta: f64, rng: &mut RngStream) {
    match kind {
        SignalKind::RealCoin => {
            *r = 0.5;
            beta.iter_mut().for_each(|b| *b = 0.0);
        }
        SignalKind::TrivialFaker | SignalKind::RscFaker => {
            let rsc = kind == SignalKind::RscFaker;
            let xi = sign(rng);
            let reflect = rsc && rng.gen::<f64>() < delta;
            let cur = *r;
            let mut next = cur + eps * cur * (1.0 - cur) * xi;
            if reflect {
                next += 1.0 - 2.0 * cur;
            }
            *r = next.clamp(0.0, 1.0);
            for b in beta.iter_mut() {
                let xi = sign(rng);
                let rho = if rsc && rng.gen::<f64>() < delta { -1.0 } else { 1.0 };
                let cur = *b;
                let next = rho * cur + eps * cur * (cur + 1.0) * (1.0 - cur) * xi;
                *b = next.clamp(-1.0, 1.0);
            }
        }
    }
}

fn check_signal_params(length: usize, eps: f64, delta: f64, r0: f64, beta0: &[f64]) -> Result<()> {
    if length < 1 {
        return Err(Error::InvalidArgument("signal length must be at least 1".into()));
    }
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [0, 0.5]")));
    }
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside [0, 0.5]")));
    }
    if !(0.0..=1.0).contains(&r0) {
        return Err(Error::InvalidArgument(format!("r0 {r0} outside [0, 1]")));
    }
    if let Some(b) = beta0.iter().find(|b| !(**b > -1.0 && **b < 1.0)) {
        return Err(Error::InvalidArgument(format!("beta0 entry {b} outside (-1, 1)")));
    }
    Ok(())
}

/// Evolve a signal of `length` flips from the initial values `(r0, beta0)`.
/// `beta0.len()` is the lag count.
pub fn evolve_signal(
    kind: SignalKind,
    length: usize,
    eps: f64,
    delta: f64,
    r0: f64,
    beta0: &[f64],
    rng: &mut RngStream,
) -> Result<SignalState> {
    check_signal_params(length, eps, delta, r0, beta0)?;
    let mut r = r0;
    let mut beta = beta0.to_vec();
    let mut rs = Vec::with_capacity(length);
    let mut betas = Vec::with_capacity(length);
    for _ in 0..length {
        advance(kind, &mut r, &mut beta, eps, delta, rng);
        rs.push(r);
        betas.push(beta.clone());
    }
    Ok(SignalState {
        theta: kind,
        r: rs,
        beta: betas,
        eps,
        delta,
    })
}

/// Unclamped probability of heads given past marginals and flips.
///
/// `lags` yields `(j, beta_j, r_{k-j}, Y_{k-j})`. Lags whose marginal is 0
/// or 1 with nonzero `beta_j` have no defined innovation: `strict` turns
/// them into an error, otherwise they are skipped.
pub(crate) fn raw_heads_prob(
    k: usize,
    r_k: f64,
    lags: impl Iterator<Item = (usize, f64, f64, u8)>,
    strict: bool,
) -> Result<f64> {
    let mut p = r_k;
    for (j, b, r_past, y_past) in lags {
        if b == 0.0 {
            continue;
        }
        let var = r_past * (1.0 - r_past);
        if !(var > 0.0) {
            if strict {
                return Err(Error::DegenerateVariance { k, lag: j });
            }
            continue;
        }
        p += b * (y_past as f64 - r_past) / var;
    }
    Ok(p)
}

/// Probability that flip `k` (1-based) is heads, given `flips[..k - 1]`.
pub fn conditional_prob(r: &[f64], beta: &[Vec<f64>], flips: &[u8], k: usize) -> Result<f64> {
    raw_conditional_prob(r, beta, flips, k).map(|p| p.clamp(0.0, 1.0))
}

fn raw_conditional_prob(r: &[f64], beta: &[Vec<f64>], flips: &[u8], k: usize) -> Result<f64> {
    if k < 1 || k > r.len() || k > beta.len() {
        return Err(Error::InvalidArgument(format!("flip index {k} outside the signal")));
    }
    if flips.len() < k - 1 {
        return Err(Error::InvalidArgument(format!(
            "flip {k} needs {} previous flips, got {}",
            k - 1,
            flips.len()
        )));
    }
    let row = &beta[k - 1];
    let depth = row.len().min(k - 1);
    let lags = (1..=depth).map(|j| (j, row[j - 1], r[k - 1 - j], flips[k - 1 - j]));
    raw_heads_prob(k, r[k - 1], lags, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record: SequenceRecord,
    /// Flips whose raw heads probability fell outside `[0, 1]`.
    pub clamp_events: usize,
}

/// Draw `Y_k = 1{U_k < P(Y_k = 1 | past)}` for every flip of the signal.
pub fn sample_sequence(signal: &SignalState, id: impl Into<String>, rng: &mut RngStream) -> Result<Sample> {
    let mut flips = Vec::with_capacity(signal.len());
    let mut clamp_events = 0;
    for k in 1..=signal.len() {
        let raw = raw_conditional_prob(&signal.r, &signal.beta, &flips, k)?;
        if !(0.0..=1.0).contains(&raw) {
            clamp_events += 1;
        }
        let u = rng.uniform();
        flips.push((u < raw.clamp(0.0, 1.0)) as u8);
    }
    let label = match signal.theta {
        SignalKind::RealCoin => Label::Real,
        _ => Label::Simulator,
    };
    Ok(Sample {
        record: SequenceRecord::new(id, label, flips)?,
        clamp_events,
    })
}

/// Marginal and lag-covariance summary of a flip source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTargets {
    pub r_bar: f64,
    pub beta_bar: Vec<f64>,
    pub nc: usize,
    pub nf: usize,
}

impl MomentTargets {
    pub fn new(r_bar: f64, beta_bar: Vec<f64>, nf: usize) -> Result<Self> {
        if nf < 2 {
            return Err(Error::InvalidArgument(format!("flip count {nf} must be at least 2")));
        }
        Ok(MomentTargets {
            r_bar,
            nc: beta_bar.len(),
            beta_bar,
            nf,
        })
    }

    /// Moments of a fair, independent coin.
    pub fn real_coin(nc: usize, nf: usize) -> Self {
        MomentTargets {
            r_bar: 0.5,
            beta_bar: vec![0.0; nc],
            nc,
            nf,
        }
    }
}

/// Pooled marginal and lag-`j` covariances (`j = 1..nc`) over equal-length
/// records, centered at the pooled marginal.
pub fn estimate_moments(records: &[SequenceRecord], nc: usize) -> Result<MomentTargets> {
    let first = records
        .first()
        .ok_or_else(|| Error::EmptyDataset("no records to estimate moments from".into()))?;
    let n = first.len();
    if records.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("records must have equal lengths".into()));
    }
    if nc >= n {
        return Err(Error::InvalidArgument(format!(
            "lag count {nc} must be smaller than the sequence length {n}"
        )));
    }
    let total = (records.len() * n) as f64;
    let heads: usize = records
        .iter()
        .map(|r| r.flips().iter().map(|&b| b as usize).sum::<usize>())
        .sum();
    let r_bar = heads as f64 / total;
    let beta_bar = (1..=nc)
        .map(|j| {
            let mut acc = 0.0;
            for rec in records {
                let f = rec.flips();
                for k in j..n {
                    acc += (f[k] as f64 - r_bar) * (f[k - j] as f64 - r_bar);
                }
            }
            acc / (records.len() * (n - j)) as f64
        })
        .collect();
    MomentTargets::new(r_bar, beta_bar, n)
}

/// Mean squared discrepancy of marginal and covariances, divided by `Nc + 1`.
pub fn err_metric(target: &MomentTargets, estimate: &MomentTargets) -> Result<f64> {
    if target.nc != estimate.nc || target.beta_bar.len() != estimate.beta_bar.len() {
        return Err(Error::InvalidArgument(format!(
            "lag counts differ: {} vs {}",
            target.nc, estimate.nc
        )));
    }
    let mut acc = (target.r_bar - estimate.r_bar).powi(2);
    for (a, b) in target.beta_bar.iter().zip(&estimate.beta_bar) {
        acc += (a - b).powi(2);
    }
    Ok(acc / (target.nc + 1) as f64)
}

/// Simulator parameters as accepted in JSON config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub kind: SignalKind,
    #[serde(rename = "N")]
    pub length: usize,
    pub l: usize,
    pub eps: f64,
    pub delta: f64,
    pub r0: f64,
    /// Initial covariances; a single value is broadcast to all `l` lags.
    pub beta0: Vec<f64>,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SignalKind::TrivialFaker,
            length: crate::seqdata::DEFAULT_LENGTH,
            l: DEFAULT_LAGS,
            eps: DEFAULT_EPS,
            delta: DEFAULT_DELTA,
            r0: DEFAULT_R0,
            beta0: vec![0.0],
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn initial_beta(&self) -> Result<Vec<f64>> {
        match self.beta0.len() {
            0 => Ok(vec![0.0; self.l]),
            1 => Ok(vec![self.beta0[0]; self.l]),
            n if n == self.l => Ok(self.beta0.clone()),
            n => Err(Error::InvalidArgument(format!("beta0 has {n} entries but l = {}", self.l))),
        }
    }

    /// Evolve and sample one sequence.
    pub fn sample(&self, kind: SignalKind, id: impl Into<String>, rng: &mut RngStream) -> Result<Sample> {
        let beta0 = self.initial_beta()?;
        let signal = evolve_signal(kind, self.length, self.eps, self.delta, self.r0, &beta0, rng)?;
        sample_sequence(&signal, id, rng)
    }

    /// `count` sequences of `self.kind`, sequence `i` drawn from child stream `i`.
    pub fn generate(&self, count: usize, id_prefix: &str, rng: &RngStream) -> Result<Vec<Sample>> {
        (0..count)
            .map(|i| self.sample(self.kind, format!("{id_prefix}-{i:04}"), &mut rng.child(i as u64)))
            .collect()
    }
}
