//! Maximal-confidence cluster decomposition.
//!
//! The first cluster is every agent reachable from the largest-bound agent by a
//! chain of opinion gaps no larger than that agent's bound. The construction then
//! repeats on the remaining agents, seeding each cluster with the remaining agent
//! of largest bound (ties by index) and closing under that seed's bound.
//!
//! On the real line a chain exists iff every gap between consecutive remaining
//! agents (sorted by opinion) along the way is within the bound, so each closure
//! is a walk outward from the seed over a linked list of the remaining agents.

use serde::{Deserialize, Serialize};

use crate::engine::{ConfidenceProfile, OpinionState, Trace};

/// One maximal-confidence cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCluster {
    /// Member agents, ascending 0-based index.
    pub members: Vec<usize>,
    /// Seed agent of the construction step that produced this cluster.
    pub anchor: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub complete: bool,
}

impl McCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.members.binary_search(&agent).is_ok()
    }

    pub fn diameter(&self) -> f64 {
        self.x_max - self.x_min
    }
}

/// Ordered list of clusters `C_1, ..., C_K` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPartition {
    pub state_time: u64,
    pub clusters: Vec<McCluster>,
}

impl McPartition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn all_complete(&self) -> bool {
        self.clusters.iter().all(|c| c.complete)
    }

    /// Index of the cluster holding `agent`.
    pub fn cluster_of(&self, agent: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(agent))
    }

    /// Number of distinct clusters that contain at least one of `agents`.
    pub fn clusters_touching(&self, agents: &[usize]) -> usize {
        self.clusters
            .iter()
            .filter(|c| agents.iter().any(|&a| c.contains(a)))
            .count()
    }

    /// 1-based export document.
    pub fn export(&self) -> PartitionExport {
        PartitionExport {
            state_time: self.state_time,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterExport {
                    members: c.members.iter().map(|m| m + 1).collect(),
                    anchor: c.anchor + 1,
                    r_min: c.r_min,
                    r_max: c.r_max,
                    x_min: c.x_min,
                    x_max: c.x_max,
                    complete: c.complete,
                })
                .collect(),
        }
    }
}

/// Serialized partition; agent labels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionExport {
    pub state_time: u64,
    pub clusters: Vec<ClusterExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExport {
    pub members: Vec<usize>,
    pub anchor: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub complete: bool,
}

/// Summary of one cluster produced by [`Partitioner`]; members live in the
/// partitioner's buffer at `start..end`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RawCluster {
    pub anchor: usize,
    pub start: usize,
    pub end: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl RawCluster {
    pub fn complete(&self) -> bool {
        self.x_max - self.x_min <= self.r_min
    }
}

const NONE: usize = usize::MAX;

/// Reusable scratch space for repeated partitioning of same-size states.
///
/// Works on arbitrary finite reals, not only the unit box, so callers may run it
/// on reflected states.
#[derive(Debug, Default)]
pub(crate) struct Partitioner {
    sorted: Vec<usize>,
    pos: Vec<usize>,
    prev: Vec<usize>,
    next: Vec<usize>,
    taken: Vec<bool>,
    members: Vec<usize>,
    clusters: Vec<RawCluster>,
}

impl Partitioner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self, c: &RawCluster) -> &[usize] {
        &self.members[c.start..c.end]
    }

    pub fn clusters(&self) -> &[RawCluster] {
        &self.clusters
    }

    pub fn run(&mut self, x: &[f64], profile: &ConfidenceProfile) -> &[RawCluster] {
        let n = x.len();
        self.sorted.clear();
        self.sorted.extend(0..n);
        self.sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        self.pos.resize(n, 0);
        self.prev.resize(n, NONE);
        self.next.resize(n, NONE);
        for (k, &agent) in self.sorted.iter().enumerate() {
            self.pos[agent] = k;
            self.prev[k] = if k == 0 { NONE } else { k - 1 };
            self.next[k] = if k + 1 == n { NONE } else { k + 1 };
        }
        self.taken.clear();
        self.taken.resize(n, false);
        self.members.clear();
        self.clusters.clear();

        let bounds = profile.bounds();
        for &seed in profile.canonical_order() {
            if self.taken[seed] {
                continue;
            }
            let r = bounds[seed];
            let s = self.pos[seed];
            let mut lo = s;
            while self.prev[lo] != NONE {
                let p = self.prev[lo];
                if x[self.sorted[lo]] - x[self.sorted[p]] <= r {
                    lo = p;
                } else {
                    break;
                }
            }
            let mut hi = s;
            while self.next[hi] != NONE {
                let q = self.next[hi];
                if x[self.sorted[q]] - x[self.sorted[hi]] <= r {
                    hi = q;
                } else {
                    break;
                }
            }

            let start = self.members.len();
            let (mut r_min, mut r_max) = (f64::INFINITY, 0.0f64);
            let mut k = lo;
            loop {
                let agent = self.sorted[k];
                self.taken[agent] = true;
                self.members.push(agent);
                r_min = r_min.min(bounds[agent]);
                r_max = r_max.max(bounds[agent]);
                if k == hi {
                    break;
                }
                k = self.next[k];
            }
            let end = self.members.len();
            self.members[start..end].sort_unstable();

            // unlink lo..=hi from the remaining list
            let (before, after) = (self.prev[lo], self.next[hi]);
            if before != NONE {
                self.next[before] = after;
            }
            if after != NONE {
                self.prev[after] = before;
            }

            self.clusters.push(RawCluster {
                anchor: seed,
                start,
                end,
                r_min,
                r_max,
                x_min: x[self.sorted[lo]],
                x_max: x[self.sorted[hi]],
            });
        }
        &self.clusters
    }

    /// True iff every cluster of `x` is complete.
    pub fn all_complete(&mut self, x: &[f64], profile: &ConfidenceProfile) -> bool {
        self.run(x, profile).iter().all(RawCluster::complete)
    }

    pub fn to_partition(&self, state_time: u64) -> McPartition {
        McPartition {
            state_time,
            clusters: self
                .clusters
                .iter()
                .map(|c| McCluster {
                    members: self.members(c).to_vec(),
                    anchor: c.anchor,
                    r_min: c.r_min,
                    r_max: c.r_max,
                    x_min: c.x_min,
                    x_max: c.x_max,
                    complete: c.complete(),
                })
                .collect(),
        }
    }
}

/// Partition of raw opinions (any finite reals).
pub(crate) fn partition_raw(x: &[f64], profile: &ConfidenceProfile, state_time: u64) -> McPartition {
    let mut p = Partitioner::new();
    p.run(x, profile);
    p.to_partition(state_time)
}

/// Maximal-confidence clusters of `x`, in construction order.
pub fn mc_partition(x: &OpinionState, confidence: &ConfidenceProfile) -> McPartition {
    assert_eq!(x.len(), confidence.len(), "state and profile sizes differ");
    let partition = partition_raw(x.opinions(), confidence, x.t);
    debug_assert!(verify_gap(&partition, x, confidence));
    partition
}

fn member_extremes(members: &[usize], x: &[f64]) -> (f64, f64) {
    members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
        (lo.min(x[m]), hi.max(x[m]))
    })
}

/// Largest minus smallest member opinion.
pub fn cluster_diameter(cluster: &McCluster, x: &OpinionState) -> f64 {
    let (lo, hi) = member_extremes(&cluster.members, x.opinions());
    if cluster.members.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// True iff every member pair is within the smallest member bound.
pub fn is_complete(cluster: &McCluster, x: &OpinionState) -> bool {
    cluster_diameter(cluster, x) <= cluster.r_min
}

/// Sum of diameters over incomplete clusters; zero iff all clusters are complete.
pub fn lyapunov_f(partition: &McPartition, x: &OpinionState) -> f64 {
    partition
        .clusters
        .iter()
        .filter(|c| !is_complete(c, x))
        .map(|c| cluster_diameter(c, x))
        .sum()
}

/// Checks that every two clusters are separated by more than the largest bound
/// among their members, with one cluster entirely above the other.
pub fn verify_gap(partition: &McPartition, x: &OpinionState, confidence: &ConfidenceProfile) -> bool {
    let xs = x.opinions();
    let bounds = confidence.bounds();
    let stats: Vec<(f64, f64, f64)> = partition
        .clusters
        .iter()
        .map(|c| {
            let (lo, hi) = member_extremes(&c.members, xs);
            let r = c.members.iter().map(|&m| bounds[m]).fold(0.0, f64::max);
            (lo, hi, r)
        })
        .collect();
    for (a, &(lo_a, hi_a, r_a)) in stats.iter().enumerate() {
        for &(lo_b, hi_b, r_b) in &stats[a + 1..] {
            let r = r_a.max(r_b);
            if !(lo_a - hi_b > r || lo_b - hi_a > r) {
                return false;
            }
        }
    }
    true
}

/// Checks on recorded states that no cluster member ever leaves the opinion
/// range its cluster spanned at an earlier recorded time.
///
/// With thinning above 1 only recorded states are inspected, so this is sound
/// but partial.
pub fn verify_convexity(trace: &Trace) -> bool {
    let states = &trace.states;
    let n = trace.params.n();
    let len = states.len();
    // suffix extremes: agent a's opinion range over recorded times s >= t
    let mut suffix_min = vec![0.0; len * n];
    let mut suffix_max = vec![0.0; len * n];
    for t in (0..len).rev() {
        for a in 0..n {
            let v = states[t].opinions()[a];
            let (lo, hi) = if t + 1 < len {
                (suffix_min[(t + 1) * n + a], suffix_max[(t + 1) * n + a])
            } else {
                (v, v)
            };
            suffix_min[t * n + a] = lo.min(v);
            suffix_max[t * n + a] = hi.max(v);
        }
    }

    let mut partitioner = Partitioner::new();
    for (t, state) in states.iter().enumerate() {
        partitioner.run(state.opinions(), trace.params.confidence());
        for c in partitioner.clusters() {
            for &m in partitioner.members(c) {
                if suffix_min[t * n + m] < c.x_min || suffix_max[t * n + m] > c.x_max {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(r: &[f64]) -> ConfidenceProfile {
        ConfidenceProfile::new(r.to_vec()).unwrap()
    }

    fn state(x: &[f64]) -> OpinionState {
        OpinionState::initial(x.to_vec()).unwrap()
    }

    fn member_sets(p: &McPartition) -> Vec<Vec<usize>> {
        p.clusters.iter().map(|c| c.members.clone()).collect()
    }

    #[test]
    fn three_agents_form_one_cluster() {
        let x = state(&[0.06, 0.14, 0.5]);
        let r = profile(&[0.4, 0.3, 0.2]);
        let p = mc_partition(&x, &r);
        assert_eq!(member_sets(&p), vec![vec![0, 1, 2]]);
        let c = &p.clusters[0];
        assert_eq!(c.anchor, 0);
        assert!((cluster_diameter(c, &x) - 0.44).abs() < 1e-15);
        assert!(!is_complete(c, &x));
        assert!((lyapunov_f(&p, &x) - 0.44).abs() < 1e-15);
    }

    #[test]
    fn two_clusters_with_gap() {
        let x = state(&[0.0, 0.1, 0.9]);
        let r = profile(&[0.3, 0.2, 0.1]);
        let p = mc_partition(&x, &r);
        assert_eq!(member_sets(&p), vec![vec![0, 1], vec![2]]);
        assert!(verify_gap(&p, &x, &r));
        assert_eq!(lyapunov_f(&p, &x), 0.0);
    }

    #[test]
    fn equal_opinions_single_cluster() {
        let x = state(&[0.3; 6]);
        let r = profile(&[0.01, 0.02, 0.03, 0.04, 0.05, 0.06]);
        let p = mc_partition(&x, &r);
        assert_eq!(p.len(), 1);
        assert_eq!(p.clusters[0].members, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(p.clusters[0].anchor, 5);
    }

    /// Seven agents laid out so that, under r_1, agent 1 reaches 5 and 7, agent 7
    /// reaches 3, agent 3 does not reach 2; under r_2 agent 2 reaches 4 and 4
    /// reaches 6.
    #[test]
    fn seven_agent_schematic() {
        // sorted positions: 6(0.02) 4(0.10) 2(0.18) | 3(0.45) 7(0.55) 1(0.63) 5(0.70)
        let x = state(&[0.63, 0.18, 0.45, 0.10, 0.70, 0.02, 0.55]);
        let r = profile(&[0.12, 0.09, 0.08, 0.07, 0.06, 0.05, 0.04]);
        let p = mc_partition(&x, &r);
        assert_eq!(member_sets(&p), vec![vec![0, 2, 4, 6], vec![1, 3, 5]]);
        assert_eq!(p.clusters[1].anchor, 1);
        // agent 1 reaches 5 and 7 directly, 3 only through 7
        let d = |a: usize, b: usize| (x.opinions()[a - 1] - x.opinions()[b - 1]).abs();
        assert!(d(1, 5) <= 0.12 && d(1, 7) <= 0.12 && d(7, 3) <= 0.12);
        assert!(d(1, 3) > 0.12 && d(3, 2) > 0.12);
        assert!(d(2, 4) <= 0.09 && d(4, 6) <= 0.09 && d(2, 6) > 0.09);
        assert!(verify_gap(&p, &x, &r));
    }

    #[test]
    fn completeness_definition() {
        let r = profile(&[0.3, 0.2, 0.05]);
        let c = McCluster {
            members: vec![0, 1],
            anchor: 0,
            r_min: 0.2,
            r_max: 0.3,
            x_min: 0.0,
            x_max: 0.1,
            complete: true,
        };
        assert!(is_complete(&c, &state(&[0.0, 0.1, 0.9])));
        assert!(!is_complete(&c, &state(&[0.0, 0.25, 0.9])));
        let single = McCluster {
            members: vec![2],
            anchor: 2,
            r_min: r.bound(2),
            r_max: r.bound(2),
            x_min: 0.9,
            x_max: 0.9,
            complete: true,
        };
        assert!(is_complete(&single, &state(&[0.0, 0.25, 0.9])));
        assert_eq!(cluster_diameter(&single, &state(&[0.0, 0.25, 0.9])), 0.0);
    }

    #[test]
    fn gap_negative_control() {
        let x = state(&[0.0, 0.1, 0.35]);
        let r = profile(&[0.3, 0.2, 0.1]);
        let mut p = mc_partition(&x, &r);
        assert_eq!(p.len(), 1);
        // split by hand across a 0.25 gap, below the 0.3 bound
        let c = p.clusters.pop().unwrap();
        p.clusters.push(McCluster {
            members: vec![0, 1],
            ..c.clone()
        });
        p.clusters.push(McCluster {
            members: vec![2],
            ..c
        });
        assert!(!verify_gap(&p, &x, &r));
    }

    #[test]
    fn convexity_negative_control() {
        let params = crate::engine::ModelParams::from_bounds(0.5, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let x0 = state(&[0.1, 0.3, 0.5, 0.95]);
        let mut trace = crate::engine::simulate(&x0, &params, 200, 1, 1).unwrap();
        assert!(verify_convexity(&trace));
        // push agent 1 below the hull its cluster had at t = 0
        let last = trace.states.len() - 1;
        let mut doctored = trace.states[last].opinions().to_vec();
        doctored[0] = 0.0;
        trace.states[last] = OpinionState::new(trace.states[last].t, doctored).unwrap();
        assert!(!verify_convexity(&trace));
    }

    #[test]
    fn clusters_touching_counts() {
        let x = state(&[0.0, 0.1, 0.9]);
        let p = mc_partition(&x, &profile(&[0.3, 0.2, 0.1]));
        assert_eq!(p.clusters_touching(&[0, 1]), 1);
        assert_eq!(p.clusters_touching(&[0, 2]), 2);
        assert_eq!(p.cluster_of(2), Some(1));
    }
}
