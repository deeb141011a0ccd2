//! Branching particle filter over the faker signal models.
//!
//! Each particle carries a signal indicator together with its own marginal,
//! lag covariances and the marginals of the last `l` flips. Particles
//! evolve independently under their indicator's law and are reweighted by
//! the likelihood of each observed flip relative to a fair coin. Instead of
//! global resampling, particles whose weight leaves `(A/r, rA)` around the
//! average weight `A` are replaced by a random number of copies carrying
//! weight `A`, with expected count `w/A`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::RngStream;
use crate::simulator::{self, err_metric, MomentTargets, SignalKind};

pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_R_RESAMPLE: f64 = 4.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(rename = "N0")]
    pub n0: usize,
    pub r_resample: f64,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "Nc")]
    pub nc: usize,
    pub seed: u64,
    /// Prior mass for `[tf, rsc, real]`.
    pub priors: [f64; 3],
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n0: DEFAULT_PARTICLES,
            r_resample: DEFAULT_R_RESAMPLE,
            eps: simulator::DEFAULT_EPS,
            delta: simulator::DEFAULT_DELTA,
            nc: simulator::DEFAULT_LAGS,
            seed: 0,
            priors: [1.0; 3],
        }
    }
}

impl FilterConfig {
    fn validate(&self) -> Result<()> {
        if self.n0 < 1 {
            return Err(Error::InvalidArgument("N0 must be at least 1".into()));
        }
        if !(self.r_resample > 1.0) {
            return Err(Error::InvalidArgument(format!("r_resample {} must exceed 1", self.r_resample)));
        }
        if !(0.0..=0.5).contains(&self.eps) || !(0.0..=0.5).contains(&self.delta) {
            return Err(Error::InvalidArgument("eps and delta must lie in [0, 0.5]".into()));
        }
        normalized_priors(&self.priors).map(|_| ())
    }
}

fn normalized_priors(priors: &[f64; 3]) -> Result<[f64; 3]> {
    let total: f64 = priors.iter().sum();
    if priors.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || !(total > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid theta priors {priors:?}")));
    }
    Ok(priors.map(|p| p / total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub theta: SignalKind,
    pub r: f64,
    pub beta: Vec<f64>,
    /// `r_{t-1}, r_{t-2}, ...`, most recent first; only the first
    /// `min(t, l)` entries are meaningful.
    past_r: Vec<f64>,
    pub weight: f64,
}

impl Particle {
    fn new(theta: SignalKind, lags: usize) -> Self {
        Particle {
            theta,
            r: 0.5,
            beta: vec![0.0; lags],
            past_r: vec![0.5; lags],
            weight: 1.0,
        }
    }

    /// Clamped heads probability for the next flip; `recent` holds the
    /// previous observations, most recent first.
    fn heads_prob(&self, t: usize, recent: &[u8]) -> f64 {
        let depth = self.beta.len().min(recent.len());
        let lags = (1..=depth).map(|j| (j, self.beta[j - 1], self.past_r[j - 1], recent[j - 1]));
        simulator::raw_heads_prob(t, self.r, lags, false)
            .unwrap_or(self.r)
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub n0: usize,
    pub r_resample: f64,
    /// Average weight `sum(w) / N0` from the last estimate step.
    pub avg_weight: f64,
    pub t: usize,
    lags: usize,
    /// Observed flips, most recent first, at most `lags` of them.
    recent: Vec<u8>,
}

/// Normalized posterior mass per signal indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPosterior {
    pub tf: f64,
    pub rsc: f64,
    pub real: f64,
}

impl ThetaPosterior {
    pub fn get(&self, kind: SignalKind) -> f64 {
        match kind {
            SignalKind::TrivialFaker => self.tf,
            SignalKind::RscFaker => self.rsc,
            SignalKind::RealCoin => self.real,
        }
    }
}

pub fn init_particles(n0: usize, lags: usize, r_resample: f64, priors: &[f64; 3], rng: &mut RngStream) -> Result<ParticleEnsemble> {
    if n0 < 1 {
        return Err(Error::InvalidArgument("N0 must be at least 1".into()));
    }
    let priors = normalized_priors(priors)?;
    let particles = (0..n0)
        .map(|_| {
            let u = rng.uniform();
            let kind = if u < priors[0] {
                SignalKind::TrivialFaker
            } else if u < priors[0] + priors[1] || priors[2] == 0.0 {
                if priors[1] > 0.0 {
                    SignalKind::RscFaker
                } else {
                    SignalKind::TrivialFaker
                }
            } else {
                SignalKind::RealCoin
            };
            Particle::new(kind, lags)
        })
        .collect();
    Ok(ParticleEnsemble {
        particles,
        n0,
        r_resample,
        avg_weight: 1.0,
        t: 0,
        lags,
        recent: Vec::with_capacity(lags),
    })
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Build an ensemble from explicit particles (weights included).
    pub fn from_weights(weights: &[f64], n0: usize, r_resample: f64) -> Self {
        let particles = weights
            .iter()
            .map(|&w| Particle {
                weight: w,
                ..Particle::new(SignalKind::RealCoin, 0)
            })
            .collect();
        let mut ens = ParticleEnsemble {
            particles,
            n0,
            r_resample,
            avg_weight: 0.0,
            t: 0,
            lags: 0,
            recent: Vec::new(),
        };
        ens.avg_weight = ens.total_weight() / n0 as f64;
        ens
    }

    pub fn posterior(&self) -> Result<ThetaPosterior> {
        let mut mass = [0.0; 3];
        for p in &self.particles {
            mass[p.theta.index()] += p.weight;
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::WeightCollapse { step: self.t });
        }
        Ok(ThetaPosterior {
            tf: mass[0] / total,
            rsc: mass[1] / total,
            real: mass[2] / total,
        })
    }

    /// Weight-averaged marginal and covariances across all particles.
    pub fn moment_estimate(&self, nf: usize) -> Result<MomentTargets> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::WeightCollapse { step: self.t });
        }
        let mut r_bar = 0.0;
        let mut beta_bar = vec![0.0; self.lags];
        for p in &self.particles {
            r_bar += p.weight * p.r;
            for (acc, b) in beta_bar.iter_mut().zip(&p.beta) {
                *acc += p.weight * b;
            }
        }
        Ok(MomentTargets {
            r_bar: r_bar / total,
            beta_bar: beta_bar.into_iter().map(|b| b / total).collect(),
            nc: self.lags,
            nf,
        })
    }
}

/// Evolve every particle one step, weight it by `P(Y_t | particle) / (1/2)`
/// and refresh the average weight. Particle `j` draws from its own child
/// stream of `rng.child(t)`, so results do not depend on scheduling.
pub fn propagate(ens: &mut ParticleEnsemble, observation: u8, eps: f64, delta: f64, rng: &RngStream) -> Result<()> {
    if observation > 1 {
        return Err(Error::InvalidArgument("observation must be 0 or 1".into()));
    }
    ens.t += 1;
    let t = ens.t;
    let step_rng = rng.child(t as u64);
    let recent = &ens.recent;
    ens.particles.par_iter_mut().enumerate().for_each(|(j, p)| {
        let mut prng = step_rng.child(j as u64);
        if !p.past_r.is_empty() {
            p.past_r.rotate_right(1);
            p.past_r[0] = p.r;
        }
        simulator::advance(p.theta, &mut p.r, &mut p.beta, eps, delta, &mut prng);
        let heads = p.heads_prob(t, recent);
        let lik = if observation == 1 { heads } else { 1.0 - heads };
        p.weight *= 2.0 * lik;
    });
    if ens.lags > 0 {
        if ens.recent.len() == ens.lags {
            ens.recent.pop();
        }
        ens.recent.insert(0, observation);
    }
    let avg = ens.total_weight() / ens.n0 as f64;
    if !(avg > 0.0) || !avg.is_finite() {
        return Err(Error::WeightCollapse { step: t });
    }
    ens.avg_weight = avg;
    Ok(())
}

/// Offspring count `floor(w/A) + 1{u <= frac(w/A)}`.
pub fn offspring_count(weight: f64, avg: f64, u: f64) -> usize {
    let ratio = weight / avg;
    let whole = ratio.floor();
    whole as usize + usize::from(u <= ratio - whole)
}

/// Stratified uniforms, one in each of the `count` cells `[i/count, (i+1)/count]`,
/// in shuffled order.
pub fn stratified_uniforms(count: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..count).map(|i| (i as f64 + rng.uniform()) / count as f64).collect();
    v.shuffle(rng);
    v
}

/// Keep particles with weight in `(A/r, rA)`; replace every other particle
/// by `offspring_count` copies of weight `A`. Kept particles come first, in
/// their original order, followed by offspring.
pub fn branch_resample(ens: &mut ParticleEnsemble, rng: &mut RngStream) {
    let avg = ens.avg_weight;
    let (lo, hi) = (avg / ens.r_resample, avg * ens.r_resample);
    let (kept, extreme): (Vec<Particle>, Vec<Particle>) = std::mem::take(&mut ens.particles)
        .into_iter()
        .partition(|p| p.weight > lo && p.weight < hi);
    let uniforms = stratified_uniforms(extreme.len(), rng);
    let mut next = kept;
    for (parent, u) in extreme.into_iter().zip(uniforms) {
        let copies = offspring_count(parent.weight, avg, u);
        for _ in 0..copies {
            next.push(Particle {
                weight: avg,
                ..parent.clone()
            });
        }
    }
    ens.particles = next;
}

/// [`propagate`] followed by [`branch_resample`].
pub fn step(ens: &mut ParticleEnsemble, observation: u8, eps: f64, delta: f64, rng: &RngStream) -> Result<()> {
    propagate(ens, observation, eps, delta, rng)?;
    let mut branch_rng = rng.child(ens.t as u64).child(u64::MAX);
    branch_resample(ens, &mut branch_rng);
    if ens.particles.is_empty() {
        return Err(Error::WeightCollapse { step: ens.t });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub posterior: ThetaPosterior,
    pub estimate: MomentTargets,
    /// Particle count after each step.
    pub trace: Vec<usize>,
}

pub fn run_filter(y: &[u8], cfg: &FilterConfig, rng: &RngStream) -> Result<FilterOutput> {
    cfg.validate()?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("cannot filter an empty sequence".into()));
    }
    let mut init_rng = rng.child(0);
    let mut ens = init_particles(cfg.n0, cfg.nc, cfg.r_resample, &cfg.priors, &mut init_rng)?;
    let mut trace = Vec::with_capacity(y.len());
    for &obs in y {
        step(&mut ens, obs, cfg.eps, cfg.delta, rng)?;
        trace.push(ens.len());
    }
    Ok(FilterOutput {
        posterior: ens.posterior()?,
        estimate: ens.moment_estimate(y.len())?,
        trace,
    })
}

/// Distance of the filter's moment estimate from a fair, independent coin.
pub fn filter_error(y: &[u8], cfg: &FilterConfig, rng: &RngStream) -> Result<(f64, FilterOutput)> {
    let out = run_filter(y, cfg, rng)?;
    let target = MomentTargets::real_coin(cfg.nc, y.len());
    Ok((err_metric(&target, &out.estimate)?, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Real,
    Fake,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Real => "Real",
            Verdict::Fake => "Fake",
        }
    }
}

/// Real iff the error metric is at most `tau`.
pub fn verdict_for_error(err: f64, tau: f64) -> Verdict {
    if err <= tau {
        Verdict::Real
    } else {
        Verdict::Fake
    }
}

pub fn classify_sequence_bpf(y: &[u8], cfg: &FilterConfig, tau: f64, rng: &RngStream) -> Result<(Verdict, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} must be positive")));
    }
    let (err, _) = filter_error(y, cfg, rng)?;
    Ok((verdict_for_error(err, tau), err))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub accuracy: f64,
}

/// Pick the threshold maximizing accuracy over `(err, is_real)` pairs.
/// Candidates are midpoints between consecutive distinct error values;
/// ties go to the smallest midpoint. When all errors coincide the common
/// value is returned.
pub fn calibrate_threshold(samples: &[(f64, bool)]) -> Result<Calibration> {
    let n_real = samples.iter().filter(|s| s.1).count();
    if n_real == 0 || n_real == samples.len() {
        return Err(Error::InvalidArgument(
            "calibration needs both real and fake examples".into(),
        ));
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::InvalidArgument("calibration errors must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len() as f64;
    let n_fake = sorted.len() - n_real;

    // Sweep: everything at or below the cut is predicted real.
    let mut real_below = 0;
    let mut fake_below = 0;
    let mut best: Option<Calibration> = None;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                real_below += 1;
            } else {
                fake_below += 1;
            }
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let tau = 0.5 * (v + sorted[i].0);
        let accuracy = (real_below + (n_fake - fake_below)) as f64 / n;
        if best.is_none_or(|b| accuracy > b.accuracy) {
            best = Some(Calibration { tau, accuracy });
        }
    }
    Ok(best.unwrap_or_else(|| Calibration {
        tau: sorted[0].0,
        accuracy: n_real as f64 / n,
    }))
}
