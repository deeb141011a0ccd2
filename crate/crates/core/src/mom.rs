//! Markov observation model: a pairwise Markov chain `(X, Y)` with hidden
//! component `X` on `s` states and binary observations `Y`.
//!
//! One step of the chain moves `(x, y) -> (x', y')` with probability
//! `p[x][x'] * q[x'][y][y']`, so the emission kernel is indexed by the
//! *destination* hidden state and conditions on the previous observation.
//! The chain starts from `(X_0, Y_0) ~ mu`; `Y_0` is never observed.
//!
//! Forward and backward recursions are normalized per step. With `c_n` the
//! forward normalizers, the likelihood of `Y_1..Y_N` is `prod c_n`, and the
//! backward messages are the usual `beta_n` divided by `prod_{k>n} c_k`, so
//! that `sum_x pi_n(x) chi_n(x) = 1` at every step.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{Label, RngStream, SequenceRecord};

/// Tolerance for stochastic rows and tensors.
pub const STOCHASTIC_TOL: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 500;
/// Scale of the inbound mass given to a freshly raised hidden state.
pub const DEFAULT_RAISE_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Final log-likelihood on the training sequence; `None` for untrained models.
    pub loglik: Option<f64>,
    /// Rows left unchanged by the last EM step because they had no expected counts.
    #[serde(default)]
    pub degenerate_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct MomModel {
    pub label: Option<Label>,
    s: usize,
    p: Vec<Vec<f64>>,
    q: Vec<[[f64; 2]; 2]>,
    mu: Vec<[f64; 2]>,
    pub meta: FitMeta,
}

#[derive(Deserialize)]
struct RawModel {
    #[serde(default)]
    label: Option<Label>,
    s: usize,
    p: Vec<Vec<f64>>,
    q: Vec<[[f64; 2]; 2]>,
    mu: Vec<[f64; 2]>,
    #[serde(default)]
    meta: FitMeta,
}

impl TryFrom<RawModel> for MomModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        let mut m = MomModel::new(raw.p, raw.q, raw.mu)?;
        if m.s != raw.s {
            return Err(Error::InvalidModel(format!(
                "declared s = {} but p has {} rows",
                raw.s, m.s
            )));
        }
        m.label = raw.label;
        m.meta = raw.meta;
        Ok(m)
    }
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Draw from the flat Dirichlet on `n` points.
fn dirichlet(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

fn sample_index(weights: impl IntoIterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

impl MomModel {
    pub fn new(p: Vec<Vec<f64>>, q: Vec<[[f64; 2]; 2]>, mu: Vec<[f64; 2]>) -> Result<Self> {
        let s = p.len();
        if s == 0 {
            return Err(Error::InvalidModel("at least one hidden state is required".into()));
        }
        if q.len() != s || mu.len() != s {
            return Err(Error::InvalidModel(format!(
                "shape mismatch: p has {s} rows, q has {}, mu has {}",
                q.len(),
                mu.len()
            )));
        }
        for (x, row) in p.iter().enumerate() {
            if row.len() != s {
                return Err(Error::InvalidModel(format!("p row {x} has {} entries, expected {s}", row.len())));
            }
            check_distribution(&format!("p row {x}"), row)?;
        }
        for (x, qx) in q.iter().enumerate() {
            for (y, row) in qx.iter().enumerate() {
                check_distribution(&format!("q[{x}][{y}]"), row)?;
            }
        }
        let flat_mu: Vec<f64> = mu.iter().flat_map(|r| r.iter().copied()).collect();
        check_distribution("mu", &flat_mu)?;
        Ok(MomModel {
            label: None,
            s,
            p,
            q,
            mu,
            meta: FitMeta::default(),
        })
    }

    /// Perfect-coin starting point: uniform emissions, uniform `mu` and a
    /// random transition matrix. Every hidden state emits identically, so
    /// EM from here cannot separate states (see [`MomModel::jittered`]).
    pub fn canonical(s: usize, rng: &mut RngStream) -> Result<Self> {
        Self::jittered(s, 0.0, rng)
    }

    /// Canonical model with each emission row moved off `1/2` by a uniform
    /// draw in `[-amount, amount]`; `amount < 0.5`.
    pub fn jittered(s: usize, amount: f64, rng: &mut RngStream) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("s must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&amount) {
            return Err(Error::InvalidArgument(format!("jitter {amount} outside [0, 0.5)")));
        }
        let seed = rng.seed();
        let p = (0..s).map(|_| dirichlet(s, rng)).collect();
        let q = (0..s)
            .map(|_| {
                let mut qx = [[0.5; 2]; 2];
                if amount > 0.0 {
                    for row in qx.iter_mut() {
                        let h = 0.5 + amount * (2.0 * rng.uniform() - 1.0);
                        *row = [1.0 - h, h];
                    }
                }
                qx
            })
            .collect();
        let mu = vec![[0.5 / s as f64; 2]; s];
        let mut m = MomModel::new(p, q, mu)?;
        m.meta.seed = seed;
        Ok(m)
    }

    pub fn states(&self) -> usize {
        self.s
    }

    pub fn p(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn q(&self) -> &[[[f64; 2]; 2]] {
        &self.q
    }

    pub fn mu(&self) -> &[[f64; 2]] {
        &self.mu
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("model", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("model", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn describe(&self) -> String {
        match self.label {
            Some(l) => format!("{l} model (s = {})", self.s),
            None => format!("s = {} model", self.s),
        }
    }
}

/// Filtered distributions and per-step normalizers.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    s: usize,
    /// `pi_0(x, y) = mu(x, y)`.
    pub pi0: Vec<[f64; 2]>,
    pi: Vec<f64>,
    /// `log c_n` for `n = 1..=N` (truncated at an impossible step).
    pub logc: Vec<f64>,
    pub loglik: f64,
    /// First step `n` with `c_n = 0`, if the sequence is impossible.
    pub impossible_step: Option<usize>,
}

impl ForwardResult {
    /// `pi_n` for `1 <= n <= N`.
    pub fn filtered(&self, n: usize) -> &[f64] {
        &self.pi[(n - 1) * self.s..n * self.s]
    }

    pub fn steps(&self) -> usize {
        self.logc.len()
    }

    fn c(&self, n: usize) -> f64 {
        self.logc[n - 1].exp()
    }
}

/// Scaled backward messages.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    s: usize,
    /// `chi_0(x, y)`, conditioning on the latent start `(X_0, Y_0) = (x, y)`.
    pub chi0: Vec<[f64; 2]>,
    chi: Vec<f64>,
}

impl BackwardResult {
    /// `chi_n` for `1 <= n <= N - 1`; `chi_N` is identically one.
    pub fn message(&self, n: usize) -> &[f64] {
        &self.chi[(n - 1) * self.s..n * self.s]
    }
}

fn check_sequence(y: &[u8]) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence needs at least 2 flips, got {}",
            y.len()
        )));
    }
    if y.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument("flips must be 0 or 1".into()));
    }
    Ok(())
}

pub fn forward_pass(model: &MomModel, y: &[u8]) -> Result<ForwardResult> {
    check_sequence(y)?;
    let s = model.s;
    let n_obs = y.len();
    let mut pi = Vec::with_capacity(n_obs * s);
    let mut logc = Vec::with_capacity(n_obs);
    let mut a = vec![0.0; s];

    // n = 1: Y_0 is latent and marginalized through mu.
    for (x, ax) in a.iter_mut().enumerate() {
        let mut acc = 0.0;
        for x0 in 0..s {
            let px = model.p[x0][x];
            acc += px * (model.mu[x0][0] * model.q[x][0][y[0] as usize]
                + model.mu[x0][1] * model.q[x][1][y[0] as usize]);
        }
        *ax = acc;
    }

    let mut impossible_step = None;
    for n in 1..=n_obs {
        if n > 1 {
            let (prev, next) = (y[n - 2] as usize, y[n - 1] as usize);
            let prev_pi = &pi[(n - 2) * s..(n - 1) * s];
            for (x, ax) in a.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (xp, &w) in prev_pi.iter().enumerate() {
                    acc += w * model.p[xp][x];
                }
                *ax = model.q[x][prev][next] * acc;
            }
        }
        let c: f64 = a.iter().sum();
        if !(c > 0.0) {
            impossible_step = Some(n);
            break;
        }
        logc.push(c.ln());
        pi.extend(a.iter().map(|v| v / c));
    }

    let loglik = if impossible_step.is_some() {
        f64::NEG_INFINITY
    } else {
        logc.iter().sum()
    };
    Ok(ForwardResult {
        s,
        pi0: model.mu.clone(),
        pi,
        logc,
        loglik,
        impossible_step,
    })
}

pub fn backward_pass(model: &MomModel, y: &[u8], fwd: &ForwardResult) -> Result<BackwardResult> {
    check_sequence(y)?;
    if let Some(step) = fwd.impossible_step {
        return Err(Error::ImpossibleSequence { step });
    }
    let s = model.s;
    let n_obs = y.len();
    if fwd.s != s || fwd.steps() != n_obs {
        return Err(Error::InvalidArgument("forward result does not match model and sequence".into()));
    }
    let mut chi = vec![0.0; (n_obs - 1) * s];
    let mut next = vec![1.0; s];
    for n in (1..n_obs).rev() {
        let (yn, yn1) = (y[n - 1] as usize, y[n] as usize);
        let inv_c = 1.0 / fwd.c(n + 1);
        let g: Vec<f64> = (0..s).map(|xp| model.q[xp][yn][yn1] * next[xp]).collect();
        let row = &mut chi[(n - 1) * s..n * s];
        for (x, out) in row.iter_mut().enumerate() {
            let acc: f64 = model.p[x].iter().zip(&g).map(|(p, g)| p * g).sum();
            *out = acc * inv_c;
        }
        next.copy_from_slice(row);
    }
    let inv_c1 = 1.0 / fwd.c(1);
    let y1 = y[0] as usize;
    let chi0 = (0..s)
        .map(|x| {
            let mut out = [0.0; 2];
            for (yy, o) in out.iter_mut().enumerate() {
                let acc: f64 = (0..s).map(|xp| model.p[x][xp] * model.q[xp][yy][y1] * next[xp]).sum();
                *o = acc * inv_c1;
            }
            out
        })
        .collect();
    Ok(BackwardResult { s, chi0, chi })
}

pub fn log_likelihood(model: &MomModel, y: &[u8]) -> Result<f64> {
    Ok(forward_pass(model, y)?.loglik)
}

/// Expected sufficient statistics of one EM iteration.
struct Counts {
    trans: Vec<Vec<f64>>,
    emit: Vec<[[f64; 2]; 2]>,
    init: Vec<[f64; 2]>,
}

fn expected_counts(model: &MomModel, y: &[u8], fwd: &ForwardResult, bwd: &BackwardResult) -> Counts {
    let s = model.s;
    let n_obs = y.len();
    let mut trans = vec![vec![0.0; s]; s];
    let mut emit = vec![[[0.0; 2]; 2]; s];
    let mut init = vec![[0.0; 2]; s];

    // Transition 0 -> 1, with Y_0 = yy latent.
    let y1 = y[0] as usize;
    let inv_c1 = 1.0 / fwd.c(1);
    let chi1 = bwd.message(1);
    for x in 0..s {
        for yy in 0..2 {
            let w = model.mu[x][yy] * inv_c1;
            if w == 0.0 {
                continue;
            }
            for xp in 0..s {
                let xi = w * model.p[x][xp] * model.q[xp][yy][y1] * chi1[xp];
                trans[x][xp] += xi;
                emit[xp][yy][y1] += xi;
                init[x][yy] += xi;
            }
        }
    }

    let ones = vec![1.0; s];
    let mut g = vec![0.0; s];
    let mut col = vec![0.0; s];
    for n in 1..n_obs {
        let (yn, yn1) = (y[n - 1] as usize, y[n] as usize);
        let inv_c = 1.0 / fwd.c(n + 1);
        let chi_next = if n + 1 == n_obs { &ones[..] } else { bwd.message(n + 1) };
        for xp in 0..s {
            g[xp] = model.q[xp][yn][yn1] * chi_next[xp] * inv_c;
        }
        col.iter_mut().for_each(|v| *v = 0.0);
        let pi_n = fwd.filtered(n);
        for x in 0..s {
            let w = pi_n[x];
            if w == 0.0 {
                continue;
            }
            let prow = &model.p[x];
            let trow = &mut trans[x];
            for xp in 0..s {
                let xi = w * prow[xp] * g[xp];
                trow[xp] += xi;
                col[xp] += xi;
            }
        }
        for xp in 0..s {
            emit[xp][yn][yn1] += col[xp];
        }
    }
    Counts { trans, emit, init }
}

/// One EM update. Returns the new model, the log-likelihood of the input
/// model, and the number of rows with no expected counts.
fn em_update(model: &MomModel, y: &[u8]) -> Result<(MomModel, f64)> {
    let fwd = forward_pass(model, y)?;
    let bwd = backward_pass(model, y, &fwd)?;
    let counts = expected_counts(model, y, &fwd, &bwd);
    let mut next = model.clone();
    let mut degenerate = 0;

    for (x, row) in counts.trans.into_iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 && total.is_finite() {
            next.p[x] = row;
            normalize(&mut next.p[x]);
        } else {
            degenerate += 1;
        }
    }
    for (x, qx) in counts.emit.into_iter().enumerate() {
        for (yy, row) in qx.into_iter().enumerate() {
            let total = row[0] + row[1];
            if total > 0.0 && total.is_finite() {
                next.q[x][yy] = [row[0] / total, row[1] / total];
            } else {
                degenerate += 1;
            }
        }
    }
    let total: f64 = counts.init.iter().map(|r| r[0] + r[1]).sum();
    if total > 0.0 && total.is_finite() {
        next.mu = counts.init.into_iter().map(|r| [r[0] / total, r[1] / total]).collect();
    } else {
        degenerate += 1;
    }
    next.meta.degenerate_rows = degenerate;
    Ok((next, fwd.loglik))
}

/// A single EM iteration.
pub fn em_step(model: &MomModel, y: &[u8]) -> Result<MomModel> {
    em_update(model, y).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// Run EM from `init` until the log-likelihood moves by less than `tol`
/// or `max_iters` updates have been applied.
pub fn fit(y: &[u8], init: MomModel, opts: FitOptions) -> Result<MomModel> {
    fit_traced(y, init, opts).map(|(m, _)| m)
}

/// [`fit`], also returning the log-likelihood before each update and of
/// the returned model (so the trace has `iterations + 1` entries).
pub fn fit_traced(y: &[u8], init: MomModel, opts: FitOptions) -> Result<(MomModel, Vec<f64>)> {
    if opts.max_iters < 1 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    check_sequence(y)?;
    let mut model = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let (next, ll) = em_update(&model, y).map_err(|e| match e {
            Error::ImpossibleSequence { .. } if iterations == 0 => Error::NonFiniteInit(model.describe()),
            other => other,
        })?;
        if iterations == 0 && !ll.is_finite() {
            return Err(Error::NonFiniteInit(model.describe()));
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev).abs() < opts.tol {
                break;
            }
        }
        trace.push(ll);
        model = next;
        iterations += 1;
    }
    let final_ll = log_likelihood(&model, y)?;
    trace.push(final_ll);
    model.meta.iterations = iterations;
    model.meta.loglik = Some(final_ll);
    Ok((model, trace))
}

/// Add one hidden state. The new state receives inbound transition mass
/// `scale * v` (with `v` a flat Dirichlet draw over the old states) and
/// initial mass `scale * w`; affected rows are renormalized. With
/// `scale == 0` the new state is unreachable and every likelihood is
/// bit-for-bit unchanged.
pub fn raise_states_with(model: &MomModel, scale: f64, rng: &mut RngStream) -> Result<MomModel> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("raise scale {scale} must be finite and >= 0")));
    }
    let s = model.s;
    let inbound = dirichlet(s, rng);
    let new_row = dirichlet(s + 1, rng);
    let new_q = [dirichlet(2, rng), dirichlet(2, rng)];
    let new_mu = dirichlet(2, rng);

    let mut out = model.clone();
    for (row, v) in out.p.iter_mut().zip(&inbound) {
        row.push(scale * v);
        if scale > 0.0 {
            normalize(row);
        }
    }
    out.p.push(new_row);
    out.q.push([[new_q[0][0], new_q[0][1]], [new_q[1][0], new_q[1][1]]]);
    out.mu.push([scale * new_mu[0], scale * new_mu[1]]);
    if scale > 0.0 {
        let total: f64 = out.mu.iter().map(|r| r[0] + r[1]).sum();
        out.mu.iter_mut().for_each(|r| {
            r[0] /= total;
            r[1] /= total;
        });
    }
    out.s = s + 1;
    Ok(out)
}

pub fn raise_states(model: &MomModel, rng: &mut RngStream) -> Result<MomModel> {
    raise_states_with(model, DEFAULT_RAISE_SCALE, rng)
}

/// Simulate the pairwise chain for `length` steps and keep `Y_1..Y_N`.
pub fn generate_sequence(
    model: &MomModel,
    length: usize,
    id: impl Into<String>,
    rng: &mut RngStream,
) -> Result<SequenceRecord> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!("length must be at least 2, got {length}")));
    }
    let start = sample_index(model.mu.iter().flat_map(|r| r.iter().copied()), rng.gen::<f64>());
    let (mut x, mut y) = (start / 2, start % 2);
    let mut flips = Vec::with_capacity(length);
    for _ in 0..length {
        x = sample_index(model.p[x].iter().copied(), rng.gen::<f64>());
        y = (rng.gen::<f64>() < model.q[x][y][1]) as usize;
        flips.push(y as u8);
    }
    SequenceRecord::new(id, Label::Mom, flips)
}
