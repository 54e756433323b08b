//! The stochastic pairwise-update protocol.
//!
//! At each step one unordered pair `{i, j}` is drawn uniformly; agent `i` moves a
//! fraction `mu` of the way toward `j` iff `|x_j - x_i| <= r_i`, and agent `j`
//! likewise with its own bound `r_j`. Every other agent keeps its opinion.

mod trace_io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pair_count;

pub use trace_io::{read_trace, write_trace, TraceMetadata};

/// Generator used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Default upper limit on the in-memory size of a recorded trace (2 GiB).
pub const DEFAULT_TRACE_CAP: u128 = 2 << 30;

/// Dynamics stream for a 64-bit seed (ChaCha8, stream 0).
pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-agent confidence bounds together with their canonical (descending) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceProfile {
    bounds: Vec<f64>,
    canonical_order: Vec<usize>,
    rank: Vec<usize>,
}

impl ConfidenceProfile {
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Parameter("confidence profile is empty".into()));
        }
        if let Some((i, r)) = bounds
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return Err(Error::Parameter(format!(
                "confidence bound of agent {} must be finite and positive, got {r}",
                i + 1
            )));
        }
        let mut canonical_order: Vec<usize> = (0..bounds.len()).collect();
        // stable sort: equal bounds keep ascending agent index
        canonical_order.sort_by(|&a, &b| bounds[b].total_cmp(&bounds[a]));
        let mut rank = vec![0; bounds.len()];
        for (pos, &agent) in canonical_order.iter().enumerate() {
            rank[agent] = pos;
        }
        Ok(Self {
            bounds,
            canonical_order,
            rank,
        })
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn bound(&self, agent: usize) -> f64 {
        self.bounds[agent]
    }

    /// Agents sorted by descending bound, ties by ascending index.
    pub fn canonical_order(&self) -> &[usize] {
        &self.canonical_order
    }

    /// Position of `agent` in the canonical order (0 = largest bound).
    pub fn rank(&self, agent: usize) -> usize {
        self.rank[agent]
    }

    /// `r_1`, the largest bound.
    pub fn largest(&self) -> f64 {
        self.bounds[self.canonical_order[0]]
    }

    /// `r_n`, the smallest bound.
    pub fn smallest(&self) -> f64 {
        self.bounds[*self.canonical_order.last().expect("non-empty profile")]
    }
}

impl TryFrom<Vec<f64>> for ConfidenceProfile {
    type Error = Error;

    fn try_from(bounds: Vec<f64>) -> Result<Self> {
        Self::new(bounds)
    }
}

impl From<ConfidenceProfile> for Vec<f64> {
    fn from(profile: ConfidenceProfile) -> Self {
        profile.bounds
    }
}

/// Agent count, weighting factor and confidence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    mu: f64,
    confidence: ConfidenceProfile,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    mu: f64,
    bounds: Vec<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        if raw.bounds.len() != raw.n {
            return Err(Error::Parameter(format!(
                "n = {} but {} confidence bounds given",
                raw.n,
                raw.bounds.len()
            )));
        }
        ModelParams::new(raw.mu, ConfidenceProfile::new(raw.bounds)?)
    }
}

impl From<ModelParams> for RawParams {
    fn from(params: ModelParams) -> Self {
        RawParams {
            n: params.n(),
            mu: params.mu,
            bounds: params.confidence.bounds,
        }
    }
}

impl ModelParams {
    /// Accepts any `mu` in (0, 1) and at least three agents.
    pub fn new(mu: f64, confidence: ConfidenceProfile) -> Result<Self> {
        if confidence.len() < 3 {
            return Err(Error::Parameter(format!(
                "need at least 3 agents, got {}",
                confidence.len()
            )));
        }
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Parameter(format!(
                "weighting factor must lie in (0, 1), got {mu}"
            )));
        }
        Ok(Self { mu, confidence })
    }

    pub fn from_bounds(mu: f64, bounds: Vec<f64>) -> Result<Self> {
        Self::new(mu, ConfidenceProfile::new(bounds)?)
    }

    pub fn n(&self) -> usize {
        self.confidence.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn confidence(&self) -> &ConfidenceProfile {
        &self.confidence
    }

    /// Fails with [`Error::TheoremDomain`] unless `mu` lies in [1/2, 1).
    pub fn require_theorem_domain(&self) -> Result<()> {
        if self.mu >= 0.5 {
            Ok(())
        } else {
            Err(Error::TheoremDomain { mu: self.mu })
        }
    }
}

/// Opinion vector `x(t)` in `[0, 1]^n` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState")]
pub struct OpinionState {
    pub t: u64,
    x: Vec<f64>,
}

#[derive(Deserialize)]
struct RawState {
    t: u64,
    x: Vec<f64>,
}

impl TryFrom<RawState> for OpinionState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        Self::new(raw.t, raw.x)
    }
}

impl OpinionState {
    pub fn new(t: u64, x: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Domain(format!(
                "opinion of agent {} is {v}, outside [0, 1]",
                i + 1
            )));
        }
        Ok(Self { t, x })
    }

    pub fn initial(x: Vec<f64>) -> Result<Self> {
        Self::new(0, x)
    }

    pub(crate) fn from_raw(t: u64, x: Vec<f64>) -> Self {
        Self { t, x }
    }

    pub fn opinions(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn into_opinions(self) -> Vec<f64> {
        self.x
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.x.len() == n {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "state has {} components but the model has {n} agents",
                self.x.len()
            )))
        }
    }
}

/// Unordered pair of distinct agents, stored 0-based with `i < j`.
///
/// Serialized as the 1-based array `[i + 1, j + 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct AgentPair {
    i: usize,
    j: usize,
}

impl AgentPair {
    /// Builds a pair from two distinct 0-based indices in either order.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(Self { i: a, j: b }),
            std::cmp::Ordering::Greater => Ok(Self { i: b, j: a }),
            std::cmp::Ordering::Equal => Err(Error::InvalidPair {
                i: a + 1,
                j: b + 1,
                n: 0,
            }),
        }
    }

    /// Builds a pair from 1-based agent labels.
    pub fn from_labels(a: usize, b: usize) -> Result<Self> {
        if a == 0 || b == 0 {
            return Err(Error::InvalidPair { i: a, j: b, n: 0 });
        }
        Self::new(a - 1, b - 1)
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn labels(&self) -> [usize; 2] {
        [self.i + 1, self.j + 1]
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.i == agent || self.j == agent
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.j < n {
            Ok(())
        } else {
            Err(Error::InvalidPair {
                i: self.i + 1,
                j: self.j + 1,
                n,
            })
        }
    }
}

impl TryFrom<[usize; 2]> for AgentPair {
    type Error = Error;

    fn try_from(labels: [usize; 2]) -> Result<Self> {
        Self::from_labels(labels[0], labels[1])
    }
}

impl From<AgentPair> for [usize; 2] {
    fn from(pair: AgentPair) -> Self {
        pair.labels()
    }
}

impl std::fmt::Display for AgentPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{},{}}}", self.i + 1, self.j + 1)
    }
}

/// Which of the two indicators fired in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    None,
    FirstOnly,
    SecondOnly,
    Mutual,
}

impl Interaction {
    pub fn moved(self) -> bool {
        self != Interaction::None
    }
}

/// Applies one update to `x` in place. No validation.
///
/// Updated opinions are clamped into the segment between the two old opinions, so
/// rounding in `x_i + mu (x_j - x_i)` can never push an agent past its partner.
#[inline]
pub(crate) fn step_in_place(x: &mut [f64], bounds: &[f64], mu: f64, i: usize, j: usize) -> Interaction {
    let (xi, xj) = (x[i], x[j]);
    let gap = (xj - xi).abs();
    let move_i = gap <= bounds[i];
    let move_j = gap <= bounds[j];
    let (lo, hi) = if xi <= xj { (xi, xj) } else { (xj, xi) };
    if move_i {
        x[i] = (xi + mu * (xj - xi)).clamp(lo, hi);
    }
    if move_j {
        x[j] = (xj + mu * (xi - xj)).clamp(lo, hi);
    }
    match (move_i, move_j) {
        (true, true) => Interaction::Mutual,
        (true, false) => Interaction::FirstOnly,
        (false, true) => Interaction::SecondOnly,
        (false, false) => Interaction::None,
    }
}

/// One protocol step on `pair`; returns the state at `t + 1`.
pub fn dw_step(x: &OpinionState, pair: AgentPair, params: &ModelParams) -> Result<OpinionState> {
    x.check_len(params.n())?;
    pair.check(params.n())?;
    let mut next = x.x.clone();
    step_in_place(&mut next, params.confidence.bounds(), params.mu, pair.i, pair.j);
    Ok(OpinionState::from_raw(x.t + 1, next))
}

/// Maps `k` in `0..n(n-1)/2` to the `k`-th pair in row-major order over `i < j`.
pub(crate) fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    let mut row = n - 1;
    while k >= row {
        k -= row;
        i += 1;
        row -= 1;
    }
    (i, i + 1 + k)
}

#[inline]
pub(crate) fn sample_pair_unchecked<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (usize, usize) {
    unrank_pair(rng.random_range(0..pair_count(n)), n)
}

/// Draws one pair uniformly from the `n(n-1)/2` unordered pairs.
pub fn sample_pair<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<AgentPair> {
    if n < 3 {
        return Err(Error::Parameter(format!("need at least 3 agents, got {n}")));
    }
    let (i, j) = sample_pair_unchecked(rng, n);
    Ok(AgentPair { i, j })
}

/// A recorded trajectory: every chosen pair plus every `thinning`-th state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub params: ModelParams,
    pub seed: u64,
    pub thinning: u64,
    pub states: Vec<OpinionState>,
    pub pairs: Vec<AgentPair>,
}

impl Trace {
    pub fn steps(&self) -> u64 {
        self.pairs.len() as u64
    }

    pub fn initial(&self) -> &OpinionState {
        &self.states[0]
    }

    /// Replays the pair log from the initial state; true iff every recorded state
    /// is reproduced bit for bit.
    pub fn replays_exactly(&self) -> bool {
        let mut x = self.states[0].x.clone();
        let bounds = self.params.confidence.bounds();
        let mut recorded = self.states.iter();
        let mut expected = recorded.next();
        for (step, pair) in self.pairs.iter().enumerate() {
            if expected.is_some_and(|s| s.t == step as u64) {
                if expected.unwrap().x != x {
                    return false;
                }
                expected = recorded.next();
            }
            step_in_place(&mut x, bounds, self.params.mu, pair.i, pair.j);
        }
        match expected {
            Some(s) => s.t == self.steps() && s.x == x && recorded.next().is_none(),
            None => true,
        }
    }

    /// State after the last step, replaying the tail if it was thinned away.
    pub fn final_state(&self) -> OpinionState {
        let last = self.states.last().expect("trace has an initial state");
        let mut x = last.x.clone();
        let bounds = self.params.confidence.bounds();
        for pair in &self.pairs[last.t as usize..] {
            step_in_place(&mut x, bounds, self.params.mu, pair.i, pair.j);
        }
        OpinionState::from_raw(self.steps(), x)
    }
}

/// Runs `steps` protocol steps from `x0`, recording every `thinning`-th state.
pub fn simulate(
    x0: &OpinionState,
    params: &ModelParams,
    steps: u64,
    seed: u64,
    thinning: u64,
) -> Result<Trace> {
    simulate_with_cap(x0, params, steps, seed, thinning, DEFAULT_TRACE_CAP)
}

/// [`simulate`] with an explicit memory cap in bytes.
pub fn simulate_with_cap(
    x0: &OpinionState,
    params: &ModelParams,
    steps: u64,
    seed: u64,
    thinning: u64,
    cap: u128,
) -> Result<Trace> {
    let n = params.n();
    let x0 = OpinionState::new(x0.t, x0.x.clone())?;
    x0.check_len(n)?;
    if thinning == 0 {
        return Err(Error::Parameter("thinning must be at least 1".into()));
    }
    let recorded = steps / thinning + 1;
    let required = recorded as u128 * (n as u128 * 8 + 32)
        + steps as u128 * std::mem::size_of::<AgentPair>() as u128;
    if required > cap {
        return Err(Error::TraceTooLarge { required, cap });
    }

    let mut rng = rng_from_seed(seed);
    let bounds = params.confidence.bounds();
    let mut x = x0.x.clone();
    let mut states = Vec::with_capacity(recorded as usize);
    let mut pairs = Vec::with_capacity(steps as usize);
    states.push(OpinionState::from_raw(0, x.clone()));
    for t in 1..=steps {
        let (i, j) = sample_pair_unchecked(&mut rng, n);
        step_in_place(&mut x, bounds, params.mu, i, j);
        pairs.push(AgentPair { i, j });
        if t % thinning == 0 {
            states.push(OpinionState::from_raw(t, x.clone()));
        }
    }
    Ok(Trace {
        params: params.clone(),
        seed,
        thinning,
        states,
        pairs,
    })
}

/// Folds [`dw_step`] over a chosen pair sequence (the controlled system).
pub fn apply_sequence(x0: &OpinionState, seq: &[AgentPair], params: &ModelParams) -> Result<OpinionState> {
    let n = params.n();
    x0.check_len(n)?;
    for pair in seq {
        pair.check(n)?;
    }
    let mut x = x0.x.clone();
    let bounds = params.confidence.bounds();
    for pair in seq {
        step_in_place(&mut x, bounds, params.mu, pair.i, pair.j);
    }
    Ok(OpinionState::from_raw(x0.t + seq.len() as u64, x))
}
