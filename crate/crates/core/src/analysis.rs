//! Convergence constants, limit detection and an exhaustive small-instance
//! oracle.
//!
//! Once every maximal-confidence cluster is complete, every later interaction is
//! a mutual update inside one cluster, so each cluster keeps its member mean and
//! contracts onto it. The limit is therefore read off exactly at the first
//! all-complete time `tau` as the vector of cluster means.

use serde::{Deserialize, Serialize};

use crate::clusters::Partitioner;
use crate::control::completion_bound;
use crate::engine::{step_in_place, ConfidenceProfile, ModelParams, OpinionState, Trace};
use crate::error::{Error, Result};
use crate::numeric::{pair_count, pow_log_space};

/// Default equality tolerance for limit values.
pub const DEFAULT_LIMIT_TOL: f64 = 1e-9;

/// Default cap on the number of enumerated paths.
pub const DEFAULT_ORACLE_BUDGET: u128 = 1 << 24;

/// Constants of the mean-square rate bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBoundParams {
    pub n: usize,
    pub mu: f64,
    pub r1: f64,
    pub rn: f64,
    /// Length of a control sequence that completes every cluster from any state.
    #[serde(rename = "T")]
    pub big_t: u64,
    /// `1 - (2 / (n (n - 1)))^T`. Rounds to 1.0 when the power is below machine
    /// epsilon; the bound itself is evaluated from `ln_c`.
    pub c: f64,
    /// `ln c`, carried separately so `c^k` keeps its precision.
    pub ln_c: f64,
}

fn require_mu(mu: f64) -> Result<()> {
    if (0.5..1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::TheoremDomain { mu })
    }
}

impl RateBoundParams {
    pub fn new(n: usize, mu: f64, r1: f64, rn: f64) -> Result<Self> {
        require_mu(mu)?;
        if n < 3 {
            return Err(Error::Parameter(format!("need at least 3 agents, got {n}")));
        }
        if !(rn > 0.0 && rn <= r1 && r1.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 < rn <= r1, got rn = {rn}, r1 = {r1}"
            )));
        }
        let big_t = completion_bound(n, mu, rn, r1)?;
        let q = 2.0 / (n as f64 * (n as f64 - 1.0));
        let ln_c = (-pow_log_space(q, big_t as u128)).ln_1p();
        Ok(Self {
            n,
            mu,
            r1,
            rn,
            big_t,
            c: ln_c.exp(),
            ln_c,
        })
    }

    pub fn from_model(params: &ModelParams) -> Result<Self> {
        let profile = params.confidence();
        Self::new(params.n(), params.mu(), profile.largest(), profile.smallest())
    }

    /// `P(tau >= t) <= c^floor(t / (T + 1))`.
    pub fn tau_tail_bound(&self, t: u64) -> f64 {
        let k = t / (self.big_t + 1);
        if k == 0 {
            1.0
        } else {
            (self.ln_c * k as f64).exp()
        }
    }
}

/// `n c^floor(t / (2 (T + 1))) + (n / 4) (1 - 8 mu (1 - mu) / (n (n - 1)))^floor(t / 2)`.
pub fn rate_bound(params: &RateBoundParams, t: u64) -> Result<f64> {
    require_mu(params.mu)?;
    let n = params.n as f64;
    let k1 = t / (2 * (params.big_t + 1));
    let first = if k1 == 0 {
        n
    } else {
        n * (params.ln_c * k1 as f64).exp()
    };
    let rho = 1.0 - 8.0 * params.mu * (1.0 - params.mu) / (n * (n - 1.0));
    let second = n / 4.0 * pow_log_space(rho, (t / 2) as u128);
    Ok(first + second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Two limit values closer than this count as equal.
    pub equality: f64,
}

/// What a finite trajectory says about the limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    /// First recorded time at which every cluster is complete; `None` if the
    /// trajectory never got there.
    pub tau: Option<u64>,
    /// Per-agent cluster means at `tau`.
    pub x_star: Option<Vec<f64>>,
    /// Every pair of limit values is equal or farther apart than both bounds.
    pub structure_ok: bool,
    pub consensus: bool,
    pub tolerances: Tolerances,
}

impl LimitReport {
    pub fn reached(&self) -> bool {
        self.tau.is_some()
    }

    pub(crate) fn not_yet(tol: f64) -> Self {
        Self {
            tau: None,
            x_star: None,
            structure_ok: false,
            consensus: false,
            tolerances: Tolerances { equality: tol },
        }
    }

    /// Builds the report for a state whose clusters (already computed by
    /// `partitioner`) are all complete.
    pub(crate) fn from_complete(tau: u64, x: &[f64], partitioner: &Partitioner, profile: &ConfidenceProfile, tol: f64) -> Self {
        let mut x_star = vec![0.0; x.len()];
        for c in partitioner.clusters() {
            let members = partitioner.members(c);
            let mean = members.iter().map(|&m| x[m]).sum::<f64>() / members.len() as f64;
            for &m in members {
                x_star[m] = mean;
            }
        }
        Self {
            tau: Some(tau),
            structure_ok: structure_ok(&x_star, profile.bounds(), tol),
            consensus: is_consensus(&x_star, tol),
            x_star: Some(x_star),
            tolerances: Tolerances { equality: tol },
        }
    }
}

/// For all `i != j`: `|x_i - x_j| <= tol` or `|x_i - x_j| > max(r_i, r_j)`.
pub fn structure_ok(x_star: &[f64], bounds: &[f64], tol: f64) -> bool {
    for i in 0..x_star.len() {
        for j in i + 1..x_star.len() {
            let d = (x_star[i] - x_star[j]).abs();
            if d > tol && d <= bounds[i].max(bounds[j]) {
                return false;
            }
        }
    }
    true
}

fn is_consensus(x_star: &[f64], tol: f64) -> bool {
    let (lo, hi) = x_star
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= tol
}

/// Scans the recorded states for the first all-complete one.
///
/// On a thinned trace `tau` has recorded-state granularity, so it is an upper
/// bound on the true first time.
pub fn detect_limit(trace: &Trace, tol: f64) -> Result<LimitReport> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let profile = trace.params.confidence();
    let mut partitioner = Partitioner::new();
    for state in &trace.states {
        if partitioner.all_complete(state.opinions(), profile) {
            return Ok(LimitReport::from_complete(state.t, state.opinions(), &partitioner, profile, tol));
        }
    }
    Ok(LimitReport::not_yet(tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusVerdict {
    /// The largest bound spans the unit interval: every agent eventually
    /// interacts with the most confident one, so all runs from `[0, 1]^n` agree.
    AlwaysConsensus,
    /// With independent full-support initial opinions, disagreement has positive
    /// probability.
    ConsensusNotGuaranteed,
}

pub fn check_consensus_corollary(confidence: &ConfidenceProfile) -> ConsensusVerdict {
    if confidence.largest() >= 1.0 {
        ConsensusVerdict::AlwaysConsensus
    } else {
        ConsensusVerdict::ConsensusNotGuaranteed
    }
}

/// Path functionals for [`exact_expectation_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// `||x(t) - target||^2`.
    SquaredDistance(Vec<f64>),
    /// 1 if some state at or before `t` has every cluster complete.
    AllCompleteBy,
    /// 1 if some state at or before `t` is a single complete cluster.
    ConsensusClusterBy,
    /// `||x(t) - x*||^2` with `x*` the limit of the path, read at the path's
    /// first all-complete time within the horizon; `n` (the squared diameter
    /// of the unit box) when the path never completes.
    LimitDeviation,
}

/// Exact `E[f(x(t))]` for every `t` in `0..=horizon`, by enumerating all
/// `(n (n - 1) / 2)^horizon` equally likely pair sequences.
pub fn exact_expectation_curve(
    x0: &OpinionState,
    params: &ModelParams,
    horizon: u32,
    functional: &Functional,
    budget: u128,
) -> Result<Vec<f64>> {
    let n = params.n();
    if x0.len() != n {
        return Err(Error::Domain(format!("state has {} components, model has {n} agents", x0.len())));
    }
    if let Functional::SquaredDistance(target) = functional {
        if target.len() != n {
            return Err(Error::Domain(format!("target has {} components, model has {n} agents", target.len())));
        }
    }
    let m = pair_count(n);
    let required = (m as u128).checked_pow(horizon).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let h = horizon as usize;

    let mut oracle = Oracle {
        params,
        partitioner: Partitioner::new(),
        states: vec![x0.opinions().to_vec(); h + 1],
        complete: vec![false; h + 1],
        single: vec![false; h + 1],
        sums: vec![0.0; h + 1],
        functional,
    };
    oracle.classify(0);
    oracle.descend(0, h, &pairs);

    let leaves = required as f64;
    Ok(oracle.sums.into_iter().map(|s| s / leaves).collect())
}

/// Exact `E[f(x(horizon))]`; see [`exact_expectation_curve`].
pub fn exact_expectation_oracle(
    x0: &OpinionState,
    params: &ModelParams,
    horizon: u32,
    functional: &Functional,
    budget: u128,
) -> Result<f64> {
    exact_expectation_curve(x0, params, horizon, functional, budget).map(|v| v[horizon as usize])
}

struct Oracle<'a> {
    params: &'a ModelParams,
    partitioner: Partitioner,
    /// `states[d]` is the state at depth `d` along the current path.
    states: Vec<Vec<f64>>,
    complete: Vec<bool>,
    single: Vec<bool>,
    sums: Vec<f64>,
    functional: &'a Functional,
}

impl Oracle<'_> {
    fn classify(&mut self, d: usize) {
        let clusters = self.partitioner.run(&self.states[d], self.params.confidence());
        let all = clusters.iter().all(|c| c.complete());
        self.complete[d] = all;
        self.single[d] = all && clusters.len() == 1;
    }

    fn descend(&mut self, d: usize, h: usize, pairs: &[(usize, usize)]) {
        if d == h {
            self.leaf(h);
            return;
        }
        let bounds = self.params.confidence().bounds();
        for &(i, j) in pairs {
            let (head, tail) = self.states.split_at_mut(d + 1);
            tail[0].copy_from_slice(&head[d]);
            step_in_place(&mut tail[0], bounds, self.params.mu(), i, j);
            self.classify(d + 1);
            self.descend(d + 1, h, pairs);
        }
    }

    fn leaf(&mut self, h: usize) {
        match self.functional {
            Functional::SquaredDistance(target) => {
                for t in 0..=h {
                    self.sums[t] += sq_dist(&self.states[t], target);
                }
            }
            Functional::AllCompleteBy | Functional::ConsensusClusterBy => {
                let flags = if matches!(self.functional, Functional::AllCompleteBy) {
                    &self.complete
                } else {
                    &self.single
                };
                if let Some(first) = flags.iter().position(|&f| f) {
                    for s in &mut self.sums[first..] {
                        *s += 1.0;
                    }
                }
            }
            Functional::LimitDeviation => match self.complete.iter().position(|&f| f) {
                Some(tau) => {
                    self.partitioner.run(&self.states[tau], self.params.confidence());
                    let x = &self.states[tau];
                    let mut x_star = vec![0.0; x.len()];
                    for c in self.partitioner.clusters() {
                        let members = self.partitioner.members(c);
                        let mean = members.iter().map(|&m| x[m]).sum::<f64>() / members.len() as f64;
                        for &m in members {
                            x_star[m] = mean;
                        }
                    }
                    for t in 0..=h {
                        self.sums[t] += sq_dist(&self.states[t], &x_star);
                    }
                }
                None => {
                    let n = self.params.n() as f64;
                    for s in &mut self.sums {
                        *s += n;
                    }
                }
            },
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
