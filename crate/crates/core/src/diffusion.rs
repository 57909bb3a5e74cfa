//! Exact discrete-diffusion math over a token alphabet with an absorbing
//! mask state.
//!
//! Token values live in `1..=K+1` where `K+1` is the mask. The per-step
//! transition matrix is a mask-and-uniform mixture: a real token stays with
//! probability `alpha[t] + beta[t]`, moves to each other real token with
//! probability `beta[t]`, and is masked with probability `gamma[t]`; the mask
//! is absorbing. Cumulative products keep the same shape, with closed-form
//! cumulants
//!
//! ```text
//! alpha_bar[t] = prod alpha[i]
//! gamma_bar[t] = 1 - prod (1 - gamma[i])
//! beta_bar[t]  = (1 - alpha_bar[t] - gamma_bar[t]) / K
//! ```
//!
//! All distribution math here is 64-bit regardless of what precision the
//! models train in.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token alphabet: `K` real tokens plus the mask at value `K+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    k: u32,
}

impl Codebook {
    pub fn new(k: u32) -> Result<Self> {
        if k < 1 {
            return Err(Error::Token("codebook needs at least one token".into()));
        }
        Ok(Codebook { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// The mask token value, always `K + 1`.
    pub fn mask_value(&self) -> u32 {
        self.k + 1
    }

    /// Number of values a distribution ranges over (`K + 1`).
    pub fn num_values(&self) -> usize {
        self.k as usize + 1
    }

    pub fn is_real(&self, v: u32) -> bool {
        (1..=self.k).contains(&v)
    }

    pub fn is_valid(&self, v: u32) -> bool {
        (1..=self.mask_value()).contains(&v)
    }
}

/// A sequence of token values. Clean data never contains the mask;
/// corrupted sequences may.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub values: Vec<u32>,
}

impl TokenSequence {
    pub fn new(values: Vec<u32>) -> Self {
        TokenSequence { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All values in `1..=K` (no mask).
    pub fn validate_clean(&self, cb: &Codebook) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !cb.is_real(v) {
                return Err(Error::Token(format!(
                    "position {i}: value {v} outside clean range 1..={}",
                    cb.k()
                )));
            }
        }
        Ok(())
    }

    /// All values in `1..=K+1` (mask allowed).
    pub fn validate_corrupt(&self, cb: &Codebook) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !cb.is_valid(v) {
                return Err(Error::Token(format!(
                    "position {i}: value {v} outside range 1..={}",
                    cb.mask_value()
                )));
            }
        }
        Ok(())
    }

    pub fn concat(parts: &[&TokenSequence]) -> TokenSequence {
        let mut values = Vec::new();
        for p in parts {
            values.extend_from_slice(&p.values);
        }
        TokenSequence::new(values)
    }
}

/// Terminal cumulants that pin the linear corruption schedule:
/// `alpha_bar[t] = 1 - t * (1 - terminal_alpha_bar) / T` and
/// `gamma_bar[t] = t * terminal_gamma_bar / T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub terminal_alpha_bar: f64,
    pub terminal_gamma_bar: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            terminal_alpha_bar: 1e-5,
            terminal_gamma_bar: 0.9,
        }
    }
}

/// Per-step and cumulative corruption parameters for `t = 0..=T`.
///
/// Index 0 of the cumulative vectors is the identity (`alpha_bar[0] = 1`,
/// `gamma_bar[0] = 0`); index 0 of the per-step vectors is unused padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSchedule {
    steps: usize,
    codebook: Codebook,
    params: ScheduleParams,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_bar: Vec<f64>,
    gamma_bar: Vec<f64>,
}

/// Build a schedule from terminal cumulants, recovering per-step values via
/// `alpha[t] = alpha_bar[t]/alpha_bar[t-1]` and
/// `gamma[t] = 1 - (1-gamma_bar[t])/(1-gamma_bar[t-1])`.
pub fn build_schedule(steps: usize, k: u32, params: ScheduleParams) -> Result<TransitionSchedule> {
    if steps < 1 {
        return Err(Error::Schedule("need at least one step".into()));
    }
    if k < 2 {
        return Err(Error::Schedule("need at least two real tokens".into()));
    }
    let a_t = params.terminal_alpha_bar;
    let g_t = params.terminal_gamma_bar;
    if !(0.0..=1.0).contains(&a_t) || !(0.0..=1.0).contains(&g_t) {
        return Err(Error::Schedule(format!(
            "terminal cumulants must lie in [0,1], got a_T={a_t}, g_T={g_t}"
        )));
    }

    let t_f = steps as f64;
    let kf = k as f64;
    let mut alpha_bar = vec![1.0; steps + 1];
    let mut beta_bar = vec![0.0; steps + 1];
    let mut gamma_bar = vec![0.0; steps + 1];
    let mut alpha = vec![1.0; steps + 1];
    let mut beta = vec![0.0; steps + 1];
    let mut gamma = vec![0.0; steps + 1];

    for t in 1..=steps {
        let tf = t as f64;
        alpha_bar[t] = 1.0 - tf * (1.0 - a_t) / t_f;
        gamma_bar[t] = tf * g_t / t_f;
        beta_bar[t] = (1.0 - alpha_bar[t] - gamma_bar[t]) / kf;

        if alpha_bar[t - 1] <= 0.0 {
            return Err(Error::Schedule(format!(
                "alpha_bar vanished before step {t}; cannot recover alpha[{t}]"
            )));
        }
        alpha[t] = alpha_bar[t] / alpha_bar[t - 1];
        let surv_prev = 1.0 - gamma_bar[t - 1];
        if surv_prev <= 0.0 {
            return Err(Error::Schedule(format!(
                "gamma_bar saturated before step {t}; cannot recover gamma[{t}]"
            )));
        }
        gamma[t] = 1.0 - (1.0 - gamma_bar[t]) / surv_prev;
        beta[t] = (1.0 - alpha[t] - gamma[t]) / kf;

        for (name, v) in [
            ("alpha", alpha[t]),
            ("beta", beta[t]),
            ("gamma", gamma[t]),
            ("alpha_bar", alpha_bar[t]),
            ("beta_bar", beta_bar[t]),
            ("gamma_bar", gamma_bar[t]),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Schedule(format!(
                    "derived {name}[{t}] = {v} falls outside [0,1]"
                )));
            }
        }
    }

    Ok(TransitionSchedule {
        steps,
        codebook: Codebook::new(k)?,
        params,
        alpha,
        beta,
        gamma,
        alpha_bar,
        beta_bar,
        gamma_bar,
    })
}

impl TransitionSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook_ref()
    }

    fn codebook_ref(&self) -> &Codebook {
        &self.codebook
    }

    pub fn k(&self) -> u32 {
        self.codebook.k()
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn beta_bar(&self, t: usize) -> f64 {
        self.beta_bar[t]
    }
    pub fn gamma_bar(&self, t: usize) -> f64 {
        self.gamma_bar[t]
    }

    /// Entry of the per-step transition matrix: `P(x_t = to | x_{t-1} = from)`.
    pub fn q_step_entry(&self, t: usize, to: u32, from: u32) -> f64 {
        let mask = self.codebook.mask_value();
        if from == mask {
            return if to == mask { 1.0 } else { 0.0 };
        }
        if to == mask {
            self.gamma[t]
        } else if to == from {
            self.alpha[t] + self.beta[t]
        } else {
            self.beta[t]
        }
    }

    /// Entry of the cumulative matrix: `P(x_t = to | x_0 = from)`.
    pub fn q_cum_entry(&self, t: usize, to: u32, from: u32) -> f64 {
        let mask = self.codebook.mask_value();
        if from == mask {
            return if to == mask { 1.0 } else { 0.0 };
        }
        if to == mask {
            self.gamma_bar[t]
        } else if to == from {
            self.alpha_bar[t] + self.beta_bar[t]
        } else {
            self.beta_bar[t]
        }
    }

    /// Per-step matrix in row-major `(K+1) x (K+1)` layout, entry `[to][from]`.
    pub fn q_step_matrix(&self, t: usize) -> Vec<f64> {
        let n = self.codebook.num_values();
        let mut m = vec![0.0; n * n];
        for to in 1..=n as u32 {
            for from in 1..=n as u32 {
                m[(to as usize - 1) * n + (from as usize - 1)] = self.q_step_entry(t, to, from);
            }
        }
        m
    }

    /// Cumulative matrix in row-major `(K+1) x (K+1)` layout, entry `[to][from]`.
    pub fn q_cum_matrix(&self, t: usize) -> Vec<f64> {
        let n = self.codebook.num_values();
        let mut m = vec![0.0; n * n];
        for to in 1..=n as u32 {
            for from in 1..=n as u32 {
                m[(to as usize - 1) * n + (from as usize - 1)] = self.q_cum_entry(t, to, from);
            }
        }
        m
    }

    /// Marginal `q(x_t | x_0)` as a length `K+1` vector indexed by `value - 1`.
    pub fn marginal(&self, t: usize, x0_val: u32) -> Vec<f64> {
        let n = self.codebook.num_values();
        (1..=n as u32)
            .map(|v| self.q_cum_entry(t, v, x0_val))
            .collect()
    }

    /// Plain-text key-value serialization so training and inference rebuild
    /// bit-identical schedules.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "T={}", self.steps);
        let _ = writeln!(s, "K={}", self.codebook.k());
        let _ = writeln!(s, "a_T={}", self.params.terminal_alpha_bar);
        let _ = writeln!(s, "g_T={}", self.params.terminal_gamma_bar);
        s
    }

    pub fn from_kv_str(s: &str) -> Result<TransitionSchedule> {
        let mut t_steps = None;
        let mut k = None;
        let mut a_t = None;
        let mut g_t = None;
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schedule(format!("line {}: expected key=value", lineno + 1))
            })?;
            let bad = |what: &str| Error::Schedule(format!("line {}: bad {what}", lineno + 1));
            match key.trim() {
                "T" => t_steps = Some(value.trim().parse::<usize>().map_err(|_| bad("T"))?),
                "K" => k = Some(value.trim().parse::<u32>().map_err(|_| bad("K"))?),
                "a_T" => a_t = Some(value.trim().parse::<f64>().map_err(|_| bad("a_T"))?),
                "g_T" => g_t = Some(value.trim().parse::<f64>().map_err(|_| bad("g_T"))?),
                other => {
                    return Err(Error::Schedule(format!(
                        "line {}: unknown key {other}",
                        lineno + 1
                    )))
                }
            }
        }
        let t_steps = t_steps.ok_or_else(|| Error::Schedule("missing T".into()))?;
        let k = k.ok_or_else(|| Error::Schedule("missing K".into()))?;
        let a_t = a_t.ok_or_else(|| Error::Schedule("missing a_T".into()))?;
        let g_t = g_t.ok_or_else(|| Error::Schedule("missing g_T".into()))?;
        build_schedule(
            t_steps,
            k,
            ScheduleParams {
                terminal_alpha_bar: a_t,
                terminal_gamma_bar: g_t,
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TransitionSchedule> {
        let s = std::fs::read_to_string(path)?;
        TransitionSchedule::from_kv_str(&s)
    }
}

/// Sample `x_t` from the closed-form marginal `q(x_t | x_0)`, position by
/// position. `t = 0` returns `x0` unchanged.
pub fn forward_corrupt<R: Rng>(
    x0: &TokenSequence,
    t: usize,
    sched: &TransitionSchedule,
    rng: &mut R,
) -> Result<TokenSequence> {
    if t > sched.steps() {
        return Err(Error::Schedule(format!(
            "step {t} beyond schedule length {}",
            sched.steps()
        )));
    }
    let cb = sched.codebook();
    x0.validate_clean(cb)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let kb = cb.k() as f64 * sched.beta_bar(t);
    let k = cb.k();
    let mut values = Vec::with_capacity(x0.len());
    for &v in &x0.values {
        let r: f64 = rng.gen();
        let nv = if r < ab {
            v
        } else if r < ab + kb {
            rng.gen_range(1..=k)
        } else {
            cb.mask_value()
        };
        values.push(nv);
    }
    Ok(TokenSequence::new(values))
}

/// Bayes posterior `q(x_{t-1} | x_t, x_0)` as a length `K+1` probability
/// vector indexed by `value - 1`, computed elementwise from `Q_t` and
/// `Q_bar_{t-1}` and normalized by `q(x_t | x_0)`.
pub fn posterior(
    x_t_val: u32,
    x0_val: u32,
    t: usize,
    sched: &TransitionSchedule,
) -> Result<Vec<f64>> {
    if t < 1 || t > sched.steps() {
        return Err(Error::Schedule(format!(
            "posterior step {t} outside 1..={}",
            sched.steps()
        )));
    }
    let cb = sched.codebook();
    if !cb.is_real(x0_val) {
        return Err(Error::Token(format!("x0 value {x0_val} is not a real token")));
    }
    if !cb.is_valid(x_t_val) {
        return Err(Error::Token(format!("x_t value {x_t_val} out of range")));
    }
    let denom = sched.q_cum_entry(t, x_t_val, x0_val);
    if denom <= 0.0 || denom < 1e-300 {
        return Err(Error::DegeneratePosterior(format!(
            "q(x_t={x_t_val} | x_0={x0_val}) = {denom} at t={t}"
        )));
    }
    let n = cb.num_values();
    let mut dist = Vec::with_capacity(n);
    for v in 1..=n as u32 {
        let numer = sched.q_step_entry(t, x_t_val, v) * sched.q_cum_entry(t - 1, v, x0_val);
        dist.push(numer / denom);
    }
    Ok(dist)
}

/// One reverse-diffusion step. For each position this mixes the Bayes
/// posteriors over all candidate clean tokens weighted by `p_x0`, then
/// samples categorically. `p_x0` rows range over the `K` real tokens only;
/// mask probability is structurally zero.
///
/// The mixture collapses to O(K) per position because the transition matrix
/// is a rank-one perturbation of uniform; the enumeration form is kept as a
/// test oracle.
pub fn backward_step<R: Rng>(
    xt: &TokenSequence,
    p_x0: &[Vec<f64>],
    t: usize,
    sched: &TransitionSchedule,
    rng: &mut R,
) -> Result<TokenSequence> {
    if t < 1 || t > sched.steps() {
        return Err(Error::Schedule(format!(
            "backward step {t} outside 1..={}",
            sched.steps()
        )));
    }
    if xt.len() != p_x0.len() {
        return Err(Error::Shape(format!(
            "xt has {} positions but p_x0 has {} rows",
            xt.len(),
            p_x0.len()
        )));
    }
    let cb = sched.codebook();
    xt.validate_corrupt(cb)?;
    let k = cb.k() as usize;
    for (i, row) in p_x0.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Shape(format!(
                "p_x0 row {i} has {} entries, expected K={k}",
                row.len()
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("p_x0 row {i} sums to {s}, not 1")));
        }
    }

    let mask = cb.mask_value();
    let ab1 = sched.alpha_bar(t - 1);
    let bb1 = sched.beta_bar(t - 1);
    let gb1 = sched.gamma_bar(t - 1);
    let ab = sched.alpha_bar(t);
    let bb = sched.beta_bar(t);
    let gb = sched.gamma_bar(t);
    let a = sched.alpha(t);
    let b = sched.beta(t);
    let g = sched.gamma(t);

    let mut dist = vec![0.0f64; k + 1];
    let mut values = Vec::with_capacity(xt.len());
    for (pos, &xv) in xt.values.iter().enumerate() {
        if xv == mask {
            if gb <= 0.0 {
                return Err(Error::DegeneratePosterior(format!(
                    "x_t is mask at position {pos} but gamma_bar[{t}] = 0"
                )));
            }
            let p = &p_x0[pos];
            for j in 0..k {
                dist[j] = g * (bb1 + ab1 * p[j]) / gb;
            }
            dist[k] = gb1 / gb;
        } else {
            let i = (xv - 1) as usize;
            let p = &p_x0[pos];
            // w[j] = p[j] / q(x_t | x0 = j), S = sum w
            let mut s = 0.0f64;
            let mut w = vec![0.0f64; k];
            for j in 0..k {
                if p[j] == 0.0 {
                    continue;
                }
                let d = bb + if j == i { ab } else { 0.0 };
                if d <= 0.0 {
                    return Err(Error::DegeneratePosterior(format!(
                        "q(x_t={xv} | x_0={}) = 0 at t={t} with nonzero weight",
                        j + 1
                    )));
                }
                w[j] = p[j] / d;
                s += w[j];
            }
            for j in 0..k {
                let step = b + if j == i { a } else { 0.0 };
                dist[j] = step * (bb1 * s + ab1 * w[j]);
            }
            dist[k] = 0.0;
        }
        values.push(sample_categorical(&dist, rng));
    }
    Ok(TokenSequence::new(values))
}

/// Exhaustive version of the backward mixture for one position; O(K^2).
/// Kept public for verification against the fast path.
pub fn backward_dist_enumerated(
    x_t_val: u32,
    p_x0_row: &[f64],
    t: usize,
    sched: &TransitionSchedule,
) -> Result<Vec<f64>> {
    let n = sched.codebook().num_values();
    let mut out = vec![0.0f64; n];
    for (j, &p) in p_x0_row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let post = posterior(x_t_val, j as u32 + 1, t, sched)?;
        for v in 0..n {
            out[v] += p * post[v];
        }
    }
    Ok(out)
}

/// Sample an index from an unnormalized weight vector; ties and rounding
/// resolved by a single forward scan so results are reproducible.
pub fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> u32 {
    let total: f64 = weights.iter().sum();
    let r: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i as u32 + 1;
        }
    }
    // Fall through on rounding: last value with nonzero weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .map(|i| i as u32 + 1)
        .unwrap_or(1)
}
