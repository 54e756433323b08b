//! Constructive control of the pairwise protocol.
//!
//! When the pair at each step is chosen by a controller instead of at random, a
//! cluster whose diameter exceeds its smallest bound can always be made to
//! either break into several clusters or lose at least `(1 - mu)^2 r_min` of
//! diameter, within `(|C| - 1)^2 (1 + ceil(log_{1-mu}(r_min / r_max)))` steps.
//! Iterating this on incomplete clusters drives every cluster to completeness.
//!
//! The synthesizer works with the cluster's largest-bound agent `l`. If `l` sits
//! in the upper half of the cluster's range it alternates two phases:
//!
//! * **pull**: pair `l` with the lowest agent within its reach, repeating the pair
//!   until the two interact mutually, which lifts that agent out of the low band
//!   `x < x_min + (1 - mu)^2 r_min` or moves `l` below it;
//! * **push**: pair `l` with the highest agent within its reach until `l` climbs
//!   back to `x_min + r_min / 2` (or the top of the cluster has come down).
//!
//! The low band empties after finitely many rounds, which shrinks the diameter.
//! If `l` sits in the lower half the same procedure runs on the reflected state.

use serde::{Deserialize, Serialize};

use crate::clusters::{mc_partition, partition_raw, McCluster, Partitioner};
use crate::engine::{step_in_place, AgentPair, Interaction, ModelParams, OpinionState};
use crate::error::{Error, Result};
use crate::numeric::{ceil_log_clamped, one_minus_pow_then_pow};

/// Opinions closer than this are treated as coincident when looking for a
/// partner strictly below or above `l`, and when testing membership of the low
/// band.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Slack allowed when checking that a diameter dropped by `(1 - mu)^2 r_min`.
pub const SHRINK_TOL: f64 = 1e-9;

/// What replaying a control sequence is claimed to achieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// The target cluster's members end up in at least two clusters.
    Split,
    /// The target cluster's diameter dropped by at least `(1 - mu)^2 r_min`.
    Shrink,
    /// Every cluster of the final state is complete.
    Complete,
}

/// A finite pair sequence with the outcome it certifies.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub pairs: Vec<AgentPair>,
    pub start_state: OpinionState,
    pub claimed_outcome: Outcome,
    pub length_bound: u64,
    /// Members of the cluster a split/shrink claim refers to (0-based); empty for
    /// `Complete`.
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PullLeft,
    PushRight,
}

/// Bookkeeping for one run of consecutive identical pairs `{l, partner}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisStep {
    pub phase: Phase,
    /// The largest-bound member `l`.
    pub active: usize,
    /// Low-band (or, reflected, high-band) membership when the run started.
    pub target_set: Vec<usize>,
    pub partner: usize,
    pub repeats: u64,
    /// Repeat count predicted by the logarithmic formula (pull runs only).
    pub predicted_repeats: Option<u64>,
    /// True when the synthesizer worked on the reflected state.
    pub mirrored: bool,
}

/// Why a control sequence failed verification.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    TooLong { len: usize, bound: u64 },
    InvalidPair(String),
    EmptyTarget,
    NotSplit,
    NotShrunk { before: f64, after: f64, required: f64 },
    NotComplete { lyapunov: f64 },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::TooLong { len, bound } => write!(f, "length {len} exceeds bound {bound}"),
            Rejection::InvalidPair(msg) => write!(f, "invalid pair: {msg}"),
            Rejection::EmptyTarget => write!(f, "split/shrink claim without target members"),
            Rejection::NotSplit => write!(f, "target members still form one cluster"),
            Rejection::NotShrunk { before, after, required } => write!(
                f,
                "diameter went from {before} to {after}, needed a drop of {required}"
            ),
            Rejection::NotComplete { lyapunov } => {
                write!(f, "final state has incomplete clusters (F = {lyapunov})")
            }
        }
    }
}

/// `(|C| - 1)^2 (1 + ceil(log_{1-mu}(r_min / r_max)))`.
pub fn split_or_shrink_bound(size: usize, mu: f64, r_min: f64, r_max: f64) -> Result<u64> {
    let k = ceil_log_clamped(1.0 - mu, r_min, r_max);
    let s = (size.max(1) - 1) as u64;
    s.checked_mul(s)
        .and_then(|sq| sq.checked_mul(k + 1))
        .ok_or(Error::Overflow("split-or-shrink length bound"))
}

/// `(n - 1)^2 (1 + ceil(log_{1-mu}(r_n / r_1))) ceil((1 - r_n) / ((1 - mu)^2 r_n))`.
///
/// Both ceilings are evaluated by testing the defining inequality, not by
/// trusting floating-point division alone.
pub fn completion_bound(n: usize, mu: f64, r_n: f64, r_1: f64) -> Result<u64> {
    let per_round = split_or_shrink_bound(n, mu, r_n, r_1)?;
    let rounds = ceil_ratio(1.0 - r_n, (1.0 - mu) * (1.0 - mu) * r_n)?;
    per_round
        .checked_mul(rounds)
        .ok_or(Error::Overflow("completion length bound"))
}

/// `max(ceil(num / den), 0)` for `den > 0`, corrected against `k * den >= num`.
fn ceil_ratio(num: f64, den: f64) -> Result<u64> {
    if num <= 0.0 {
        return Ok(0);
    }
    let estimate = (num / den).ceil();
    if !(estimate.is_finite() && estimate < 1.8e19) {
        return Err(Error::Overflow("ceiling of ratio"));
    }
    let mut k = estimate as u64;
    while k > 0 && ((k - 1) as f64) * den >= num {
        k -= 1;
    }
    while (k as f64) * den < num {
        k += 1;
    }
    Ok(k)
}

/// Upper bound on `P(tau >= t)` for the first time a target set is reached, given
/// a control sequence of length `t_star` that reaches it from every state:
/// `a^floor(t / (t_star + 1))` with `a = 1 - (2 / (n (n - 1)))^t_star`.
pub fn hitting_tail_bound(t: u64, t_star: u64, n: usize) -> Result<f64> {
    if t == 0 || t_star == 0 {
        return Err(Error::Parameter("t and t_star must be at least 1".into()));
    }
    if n < 3 {
        return Err(Error::Parameter(format!("need at least 3 agents, got {n}")));
    }
    let q = 2.0 / (n as f64 * (n as f64 - 1.0));
    let exponent = t / (t_star + 1);
    Ok(one_minus_pow_then_pow(q, t_star as u128, exponent as u128))
}

struct Synth<'a> {
    bounds: &'a [f64],
    rank: Vec<usize>,
    mu: f64,
    members: Vec<usize>,
    y: Vec<f64>,
    mirrored: bool,
    l: usize,
    d0: f64,
    r_min: f64,
    low_band: f64,
    push_target: f64,
    pairs: Vec<AgentPair>,
    log: Vec<SynthesisStep>,
    partitioner: Partitioner,
    params: &'a ModelParams,
    step_cap: usize,
}

impl<'a> Synth<'a> {
    fn new(x: &[f64], members: &[usize], params: &'a ModelParams) -> Result<Self> {
        let profile = params.confidence();
        let bounds = profile.bounds();
        let rank: Vec<usize> = (0..params.n()).map(|a| profile.rank(a)).collect();
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut r_min, mut r_max) = (f64::INFINITY, 0.0f64);
        for &m in members {
            x_lo = x_lo.min(x[m]);
            x_hi = x_hi.max(x[m]);
            r_min = r_min.min(bounds[m]);
            r_max = r_max.max(bounds[m]);
        }
        let l = *members
            .iter()
            .min_by_key(|&&m| rank[m])
            .expect("cluster has members");
        let mirrored = x[l] < (x_lo + x_hi) / 2.0;
        let (y, lo) = if mirrored {
            (x.iter().map(|v| -v).collect(), -x_hi)
        } else {
            (x.to_vec(), x_lo)
        };
        let delta = (1.0 - params.mu()) * (1.0 - params.mu()) * r_min;
        let bound = split_or_shrink_bound(members.len(), params.mu(), r_min, r_max)?;
        Ok(Self {
            bounds,
            rank,
            mu: params.mu(),
            members: members.to_vec(),
            y,
            mirrored,
            l,
            d0: x_hi - x_lo,
            r_min,
            low_band: lo + delta,
            push_target: lo + r_min / 2.0,
            pairs: Vec::new(),
            log: Vec::new(),
            partitioner: Partitioner::new(),
            params,
            step_cap: (bound as usize).saturating_mul(4).saturating_add(64),
        })
    }

    fn delta(&self) -> f64 {
        (1.0 - self.mu) * (1.0 - self.mu) * self.r_min
    }

    fn in_low_band(&self, m: usize) -> bool {
        self.y[m] < self.low_band - COINCIDENCE_TOL
    }

    fn low_band_members(&self) -> Vec<usize> {
        self.members.iter().copied().filter(|&m| self.in_low_band(m)).collect()
    }

    fn apply(&mut self, partner: usize) -> Result<Interaction> {
        if self.pairs.len() >= self.step_cap {
            return Err(Error::SynthesisStalled(format!(
                "exceeded {} steps without reaching an outcome",
                self.step_cap
            )));
        }
        let pair = AgentPair::new(self.l, partner)?;
        self.pairs.push(pair);
        Ok(step_in_place(&mut self.y, self.bounds, self.mu, pair.i(), pair.j()))
    }

    /// Split if the members now span several clusters; shrink if the diameter
    /// dropped enough.
    fn outcome(&mut self) -> Option<Outcome> {
        let touched = {
            self.partitioner.run(&self.y, self.params.confidence());
            let mut count = 0;
            for c in self.partitioner.clusters() {
                if self.partitioner.members(c).iter().any(|a| self.members.binary_search(a).is_ok()) {
                    count += 1;
                }
            }
            count
        };
        if touched >= 2 {
            return Some(Outcome::Split);
        }
        let (lo, hi) = self.members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(self.y[m]), hi.max(self.y[m]))
        });
        if hi - lo <= self.d0 - self.delta() + SHRINK_TOL {
            return Some(Outcome::Shrink);
        }
        None
    }

    /// Lowest member strictly below `l` and within `r_l` of it.
    fn lowest_reachable(&self) -> Option<usize> {
        let (yl, rl) = (self.y[self.l], self.bounds[self.l]);
        self.members
            .iter()
            .copied()
            .filter(|&m| self.y[m] < yl - COINCIDENCE_TOL && yl - self.y[m] <= rl)
            .min_by(|&a, &b| self.y[a].total_cmp(&self.y[b]).then(self.rank[a].cmp(&self.rank[b])))
    }

    /// Highest member strictly above `l` and within `r_l` of it.
    fn highest_reachable(&self) -> Option<usize> {
        let (yl, rl) = (self.y[self.l], self.bounds[self.l]);
        self.members
            .iter()
            .copied()
            .filter(|&m| self.y[m] > yl + COINCIDENCE_TOL && self.y[m] - yl <= rl)
            .min_by(|&a, &b| self.y[b].total_cmp(&self.y[a]).then(self.rank[a].cmp(&self.rank[b])))
    }

    fn stalled(&self, what: &str) -> Error {
        Error::SynthesisStalled(format!(
            "{what} at step {} (l = agent {}, mirrored = {})",
            self.pairs.len(),
            self.l + 1,
            self.mirrored
        ))
    }

    /// Moves `l` up towards its highest reachable partner until it is back at
    /// `x_min + r_min / 2`. Returns an outcome if one is reached on the way.
    fn push(&mut self) -> Result<Option<Outcome>> {
        let band = self.low_band_members();
        let mut fresh = true;
        while self.y[self.l] < self.push_target {
            let Some(partner) = self.highest_reachable() else {
                return self.outcome().map(Some).ok_or_else(|| self.stalled("no partner above l"));
            };
            self.apply(partner)?;
            match self.log.last_mut() {
                Some(last) if !fresh && last.partner == partner => last.repeats += 1,
                _ => self.log.push(SynthesisStep {
                    phase: Phase::PushRight,
                    active: self.l,
                    target_set: band.clone(),
                    partner,
                    repeats: 1,
                    predicted_repeats: None,
                    mirrored: self.mirrored,
                }),
            }
            fresh = false;
            if let Some(outcome) = self.outcome() {
                return Ok(Some(outcome));
            }
        }
        Ok(None)
    }

    fn run(&mut self) -> Result<Outcome> {
        loop {
            // pull until one more member leaves the low band
            let band_before = self.low_band_members();
            if band_before.is_empty() {
                return self.outcome().ok_or_else(|| self.stalled("low band empty without shrink"));
            }
            loop {
                let Some(partner) = self.lowest_reachable() else {
                    return self.outcome().ok_or_else(|| self.stalled("no partner below l"));
                };
                // After a run of one-sided steps the final mutual step lands l at
                // least (1 - mu)^2 r_partner above the partner. An immediate mutual
                // step gives no such margin, and an earlier pull may have dragged l
                // low enough to land inside the band; push l back up first.
                let gap = self.y[self.l] - self.y[partner];
                let lands_in_band = gap <= self.bounds[partner]
                    && self.y[partner] + (1.0 - self.mu) * gap < self.low_band + COINCIDENCE_TOL;
                if self.in_low_band(partner) && lands_in_band && self.y[self.l] < self.push_target {
                    if let Some(outcome) = self.push()? {
                        return Ok(outcome);
                    }
                    continue;
                }
                let predicted = ceil_log_clamped(1.0 - self.mu, self.bounds[partner], gap) + 1;
                let mut step = SynthesisStep {
                    phase: Phase::PullLeft,
                    active: self.l,
                    target_set: band_before.clone(),
                    partner,
                    repeats: 0,
                    predicted_repeats: Some(predicted),
                    mirrored: self.mirrored,
                };
                loop {
                    let interaction = self.apply(partner)?;
                    step.repeats += 1;
                    if let Some(outcome) = self.outcome() {
                        self.log.push(step);
                        return Ok(outcome);
                    }
                    if interaction == Interaction::Mutual {
                        break;
                    }
                }
                self.log.push(step);
                if self.low_band_members().len() < band_before.len() {
                    break;
                }
            }

            if let Some(outcome) = self.push()? {
                return Ok(outcome);
            }
        }
    }
}

fn check_cluster(x: &OpinionState, cluster: &McCluster, params: &ModelParams) -> Result<()> {
    if x.len() != params.n() {
        return Err(Error::Domain(format!(
            "state has {} components but the model has {} agents",
            x.len(),
            params.n()
        )));
    }
    let partition = mc_partition(x, params.confidence());
    if !partition.clusters.iter().any(|c| c.members == cluster.members) {
        return Err(Error::Precondition(
            "target members are not a maximal-confidence cluster of the state".into(),
        ));
    }
    Ok(())
}

/// Synthesizes a sequence that splits `cluster` or shrinks its diameter by
/// `(1 - mu)^2 r_min`, and returns the per-run bookkeeping alongside it.
pub fn split_or_shrink_traced(
    x: &OpinionState,
    cluster: &McCluster,
    params: &ModelParams,
) -> Result<(ControlSequence, Vec<SynthesisStep>)> {
    params.require_theorem_domain()?;
    check_cluster(x, cluster, params)?;
    let bounds = params.confidence().bounds();
    let r_min = cluster.members.iter().map(|&m| bounds[m]).fold(f64::INFINITY, f64::min);
    let r_max = cluster.members.iter().map(|&m| bounds[m]).fold(0.0, f64::max);
    let xs = x.opinions();
    let (lo, hi) = cluster.members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
        (lo.min(xs[m]), hi.max(xs[m]))
    });
    if hi - lo <= r_min {
        return Err(Error::Precondition(format!(
            "cluster diameter {} does not exceed its smallest bound {r_min}",
            hi - lo
        )));
    }

    let mut synth = Synth::new(xs, &cluster.members, params)?;
    let outcome = synth.run()?;
    let length_bound = split_or_shrink_bound(cluster.len(), params.mu(), r_min, r_max)?;
    Ok((
        ControlSequence {
            pairs: synth.pairs,
            start_state: x.clone(),
            claimed_outcome: outcome,
            length_bound,
            target: cluster.members.clone(),
        },
        synth.log,
    ))
}

/// Synthesizes a sequence that splits `cluster` or shrinks its diameter by
/// `(1 - mu)^2 r_min`.
///
/// Requires `mu >= 1/2` and a cluster of `x` whose diameter exceeds its smallest
/// bound.
pub fn split_or_shrink(x: &OpinionState, cluster: &McCluster, params: &ModelParams) -> Result<ControlSequence> {
    split_or_shrink_traced(x, cluster, params).map(|(seq, _)| seq)
}

/// Synthesizes a sequence after which every cluster is complete.
///
/// Repeatedly takes the first incomplete cluster in construction order, applies
/// [`split_or_shrink`] to it and recomputes the partition.
pub fn drive_to_complete(x: &OpinionState, params: &ModelParams) -> Result<ControlSequence> {
    params.require_theorem_domain()?;
    if x.len() != params.n() {
        return Err(Error::Domain(format!(
            "state has {} components but the model has {} agents",
            x.len(),
            params.n()
        )));
    }
    let profile = params.confidence();
    let length_bound = completion_bound(params.n(), params.mu(), profile.smallest(), profile.largest())?;
    let mut y = x.opinions().to_vec();
    let mut pairs = Vec::new();
    let round_cap = ceil_ratio(1.0, (1.0 - params.mu()).powi(2) * profile.smallest())?.saturating_add(8);
    let mut rounds = 0u64;
    loop {
        let partition = partition_raw(&y, profile, 0);
        let Some(cluster) = partition.clusters.iter().find(|c| !c.complete) else {
            break;
        };
        rounds += 1;
        if rounds > round_cap {
            return Err(Error::SynthesisStalled(format!(
                "clusters still incomplete after {round_cap} split-or-shrink rounds"
            )));
        }
        let mut synth = Synth::new(&y, &cluster.members, params)?;
        synth.run()?;
        for pair in &synth.pairs {
            step_in_place(&mut y, profile.bounds(), params.mu(), pair.i(), pair.j());
        }
        pairs.extend(synth.pairs);
    }
    Ok(ControlSequence {
        pairs,
        start_state: x.clone(),
        claimed_outcome: Outcome::Complete,
        length_bound,
        target: Vec::new(),
    })
}

/// Replays `seq` and checks its length bound and claimed outcome.
pub fn verify_outcome(seq: &ControlSequence, params: &ModelParams) -> std::result::Result<(), Rejection> {
    if seq.pairs.len() as u64 > seq.length_bound {
        return Err(Rejection::TooLong {
            len: seq.pairs.len(),
            bound: seq.length_bound,
        });
    }
    let end = crate::engine::apply_sequence(&seq.start_state, &seq.pairs, params)
        .map_err(|e| Rejection::InvalidPair(e.to_string()))?;
    match seq.claimed_outcome {
        Outcome::Complete => {
            let partition = mc_partition(&end, params.confidence());
            let f = crate::clusters::lyapunov_f(&partition, &end);
            if f == 0.0 {
                Ok(())
            } else {
                Err(Rejection::NotComplete { lyapunov: f })
            }
        }
        Outcome::Split => {
            if seq.target.is_empty() {
                return Err(Rejection::EmptyTarget);
            }
            let partition = mc_partition(&end, params.confidence());
            if partition.clusters_touching(&seq.target) >= 2 {
                Ok(())
            } else {
                Err(Rejection::NotSplit)
            }
        }
        Outcome::Shrink => {
            if seq.target.is_empty() || seq.target.iter().any(|&m| m >= params.n()) {
                return Err(Rejection::EmptyTarget);
            }
            let bounds = params.confidence().bounds();
            let r_min = seq.target.iter().map(|&m| bounds[m]).fold(f64::INFINITY, f64::min);
            let diameter = |x: &[f64]| {
                let (lo, hi) = seq
                    .target
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(x[m]), hi.max(x[m])));
                hi - lo
            };
            let before = diameter(seq.start_state.opinions());
            let after = diameter(end.opinions());
            let required = (1.0 - params.mu()).powi(2) * r_min;
            if after <= before - required + SHRINK_TOL {
                Ok(())
            } else {
                Err(Rejection::NotShrunk { before, after, required })
            }
        }
    }
}

/// Serialized control sequence; agent labels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequenceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    pub start_state: OpinionState,
    pub pairs: Vec<AgentPair>,
    pub claimed_outcome: Outcome,
    pub length_bound: u64,
    #[serde(default)]
    pub target_members: Vec<usize>,
}

impl ControlSequence {
    pub fn to_file(&self, params: Option<&ModelParams>) -> ControlSequenceFile {
        ControlSequenceFile {
            params: params.cloned(),
            start_state: self.start_state.clone(),
            pairs: self.pairs.clone(),
            claimed_outcome: self.claimed_outcome,
            length_bound: self.length_bound,
            target_members: self.target.iter().map(|m| m + 1).collect(),
        }
    }
}

impl ControlSequenceFile {
    pub fn into_sequence(self) -> Result<ControlSequence> {
        if self.target_members.contains(&0) {
            return Err(Error::Format("target member labels are 1-based".into()));
        }
        let mut target: Vec<usize> = self.target_members.iter().map(|m| m - 1).collect();
        target.sort_unstable();
        target.dedup();
        Ok(ControlSequence {
            pairs: self.pairs,
            start_state: self.start_state,
            claimed_outcome: self.claimed_outcome,
            length_bound: self.length_bound,
            target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::lyapunov_f;
    use crate::engine::apply_sequence;

    fn setup(mu: f64, r: &[f64], x: &[f64]) -> (ModelParams, OpinionState) {
        (
            ModelParams::from_bounds(mu, r.to_vec()).unwrap(),
            OpinionState::initial(x.to_vec()).unwrap(),
        )
    }

    #[test]
    fn three_agent_instance_within_bound() {
        let (params, x) = setup(0.5, &[0.4, 0.3, 0.2], &[0.06, 0.14, 0.5]);
        let cluster = mc_partition(&x, params.confidence()).clusters[0].clone();
        let seq = split_or_shrink(&x, &cluster, &params).unwrap();
        assert_eq!(seq.length_bound, 8);
        assert!(seq.pairs.len() <= 8);
        assert_eq!(verify_outcome(&seq, &params), Ok(()));
        let end = apply_sequence(&x, &seq.pairs, &params).unwrap();
        let p = mc_partition(&end, params.confidence());
        let split = p.clusters_touching(&[0, 1, 2]) >= 2;
        let diameter = end.opinions().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - end.opinions().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(split || diameter <= 0.39 + SHRINK_TOL);
    }

    #[test]
    fn weighting_below_half_is_rejected() {
        let (params, x) = setup(0.4, &[0.4, 0.3, 0.2], &[0.06, 0.14, 0.5]);
        let cluster = mc_partition(&x, params.confidence()).clusters[0].clone();
        assert!(matches!(
            split_or_shrink(&x, &cluster, &params),
            Err(Error::TheoremDomain { .. })
        ));
        assert!(matches!(drive_to_complete(&x, &params), Err(Error::TheoremDomain { .. })));
    }

    #[test]
    fn complete_cluster_violates_precondition() {
        let (params, x) = setup(0.5, &[0.4, 0.3, 0.2], &[0.1, 0.2, 0.25]);
        let cluster = mc_partition(&x, params.confidence()).clusters[0].clone();
        assert!(matches!(
            split_or_shrink(&x, &cluster, &params),
            Err(Error::Precondition(_))
        ));
        let mut fake = cluster.clone();
        fake.members = vec![0, 1];
        assert!(matches!(split_or_shrink(&x, &fake, &params), Err(Error::Precondition(_))));
    }

    #[test]
    fn two_member_clusters_on_a_grid() {
        // agents 1 and 2 form a cluster with gap in (r_2, r_1]; agent 3 far away
        for gi in 1..=20 {
            for ri in 1..=10 {
                let r1 = 0.3;
                let r2 = 0.03 * ri as f64;
                let x2 = 0.1 + r2 + (r1 - r2) * gi as f64 / 20.0;
                let gap = x2 - 0.1;
                if !(gap > r2 && gap <= r1) {
                    continue;
                }
                let (params, x) = setup(0.5, &[r1, r2, 0.01], &[0.1, x2, 0.99]);
                let p = mc_partition(&x, params.confidence());
                let cluster = p.clusters[0].clone();
                assert_eq!(cluster.members, vec![0, 1]);
                let seq = split_or_shrink(&x, &cluster, &params).unwrap();
                assert_eq!(verify_outcome(&seq, &params), Ok(()), "gap {gap} r2 {r2}");
                // the first update moves only the large-bound agent
                let one = apply_sequence(&x, &seq.pairs[..1], &params).unwrap();
                assert_eq!(one.opinions()[1], x.opinions()[1]);
                assert_ne!(one.opinions()[0], x.opinions()[0]);
            }
        }
    }

    #[test]
    fn drive_examples() {
        let (params, x) = setup(0.5, &[0.5, 0.5, 0.5], &[0.1, 0.3, 0.45]);
        let seq = drive_to_complete(&x, &params).unwrap();
        assert!(seq.pairs.is_empty());

        let (params, x) = setup(0.5, &[0.5, 0.5, 0.5], &[0.0, 0.45, 0.9]);
        let seq = drive_to_complete(&x, &params).unwrap();
        assert_eq!(seq.length_bound, 16);
        assert!(seq.pairs.len() <= 16);
        let end = apply_sequence(&x, &seq.pairs, &params).unwrap();
        assert_eq!(lyapunov_f(&mc_partition(&end, params.confidence()), &end), 0.0);
        assert_eq!(verify_outcome(&seq, &params), Ok(()));
    }

    #[test]
    fn verifier_rejects_forgeries() {
        let (params, x) = setup(0.5, &[0.4, 0.3, 0.2], &[0.06, 0.14, 0.5]);
        let empty = ControlSequence {
            pairs: vec![],
            start_state: x.clone(),
            claimed_outcome: Outcome::Complete,
            length_bound: 10,
            target: vec![],
        };
        assert!(matches!(verify_outcome(&empty, &params), Err(Rejection::NotComplete { .. })));

        let cluster = mc_partition(&x, params.confidence()).clusters[0].clone();
        let mut seq = split_or_shrink(&x, &cluster, &params).unwrap();
        seq.claimed_outcome = match seq.claimed_outcome {
            Outcome::Split => Outcome::Shrink,
            _ => Outcome::Split,
        };
        let forged_ok = verify_outcome(&seq, &params).is_ok();
        let mut truncated = seq.clone();
        truncated.pairs.clear();
        assert!(verify_outcome(&truncated, &params).is_err());
        let mut too_long = seq.clone();
        too_long.length_bound = 0;
        assert!(matches!(verify_outcome(&too_long, &params), Err(Rejection::TooLong { .. })));
        // a forged claim may coincidentally hold; when it does not, it must be caught
        let end = apply_sequence(&x, &seq.pairs, &params).unwrap();
        let truly_split = mc_partition(&end, params.confidence()).clusters_touching(&[0, 1, 2]) >= 2;
        if seq.claimed_outcome == Outcome::Split {
            assert_eq!(forged_ok, truly_split);
        }
    }

    #[test]
    fn tail_bound_examples() {
        let b = hitting_tail_bound(2, 1, 3).unwrap();
        assert!((b - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hitting_tail_bound(1, 1, 3).unwrap(), 1.0);
        assert_eq!(hitting_tail_bound(5, 9, 4).unwrap(), 1.0);
        assert!(hitting_tail_bound(0, 1, 3).is_err());
        assert!(hitting_tail_bound(1, 0, 3).is_err());
        assert!(hitting_tail_bound(1, 1, 2).is_err());
        for n in 3..8 {
            for t_star in 1..6 {
                let mut prev = f64::INFINITY;
                for t in 1..200 {
                    let b = hitting_tail_bound(t, t_star, n).unwrap();
                    assert!(b <= prev && b > 0.0 && b <= 1.0);
                    prev = b;
                }
            }
        }
    }

    #[test]
    fn bound_formulas() {
        assert_eq!(split_or_shrink_bound(3, 0.5, 0.2, 0.4).unwrap(), 8);
        assert_eq!(split_or_shrink_bound(1, 0.5, 0.2, 0.4).unwrap(), 0);
        assert_eq!(completion_bound(3, 0.5, 0.5, 0.5).unwrap(), 16);
        // 49 * (1 + 4) * ceil(0.953 / 0.01175)
        assert_eq!(completion_bound(8, 0.5, 0.047, 0.5).unwrap(), 49 * 5 * 82);
        assert_eq!(ceil_ratio(0.5, 0.125).unwrap(), 4);
        assert_eq!(ceil_ratio(0.5000001, 0.125).unwrap(), 5);
    }

    #[test]
    fn file_round_trip() {
        let (params, x) = setup(0.5, &[0.4, 0.3, 0.2], &[0.06, 0.14, 0.5]);
        let cluster = mc_partition(&x, params.confidence()).clusters[0].clone();
        let seq = split_or_shrink(&x, &cluster, &params).unwrap();
        let json = serde_json::to_string(&seq.to_file(Some(&params))).unwrap();
        assert!(json.contains("\"claimed_outcome\""));
        let back: ControlSequenceFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.params.as_ref(), Some(&params));
        assert_eq!(back.into_sequence().unwrap(), seq);
    }
}
