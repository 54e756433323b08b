//! Monte Carlo ensembles over seeds and initial conditions.
//!
//! Every replica gets its own seed derived from `(master_seed, sweep index,
//! replica index)`, so adding replicas or grid points never changes the ones
//! already there, and results do not depend on how many threads ran them.
//! Within a replica, pair sampling uses stream 0 of the replica seed (the same
//! stream [`simulate`](crate::engine::simulate) uses) and initial opinions and
//! random bounds come from stream 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{rate_bound, sq_dist, LimitReport, RateBoundParams, DEFAULT_LIMIT_TOL};
use crate::clusters::Partitioner;
use crate::engine::{
    rng_from_seed, sample_pair_unchecked, step_in_place, ModelParams, OpinionState,
};
use crate::error::{Error, Result};
use crate::numeric::pair_count;

/// Default within-cluster deviation at which a completed run stops.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Default step cap per replica.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// Seed for one replica: the first 8 bytes of SHA-256 over the three indices.
pub fn replica_seed(master_seed: u64, sweep_index: u64, replica_index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(sweep_index.to_le_bytes());
    h.update(replica_index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn aux_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Opinions iid uniform on `[0, 1)`, drawn from stream 1 of `seed` exactly as an
/// ensemble replica with that seed would draw them.
pub fn uniform_initial(n: usize, seed: u64) -> OpinionState {
    let mut rng = aux_rng(seed);
    OpinionState::from_raw(0, InitialLaw::Uniform.sample(n, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundsLaw {
    Fixed { bounds: Vec<f64> },
    /// Agent 1 gets `r_max`, the others iid uniform on `(0, r_max]`.
    SweepMax { n: usize, r_max: f64 },
}

impl BoundsLaw {
    pub fn n(&self) -> usize {
        match self {
            BoundsLaw::Fixed { bounds } => bounds.len(),
            BoundsLaw::SweepMax { n, .. } => *n,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            BoundsLaw::Fixed { bounds } => bounds.clone(),
            BoundsLaw::SweepMax { n, r_max } => {
                let mut r = Vec::with_capacity(*n);
                r.push(*r_max);
                // 1 - U lies in (0, 1], which keeps every bound positive
                r.extend((1..*n).map(|_| r_max * (1.0 - rng.random::<f64>())));
                r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Fixed { x0: Vec<f64> },
    Uniform,
}

impl InitialLaw {
    fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            InitialLaw::Fixed { x0 } => x0.clone(),
            InitialLaw::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub mu: f64,
    pub bounds: BoundsLaw,
    pub initial: InitialLaw,
    pub replicas: u64,
    pub master_seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Distinguishes ensembles sharing a master seed, e.g. the points of a sweep.
    #[serde(default)]
    pub sweep_index: u64,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_tol() -> f64 {
    DEFAULT_LIMIT_TOL
}

impl EnsembleConfig {
    pub fn new(mu: f64, bounds: BoundsLaw, initial: InitialLaw, replicas: u64, master_seed: u64) -> Self {
        Self {
            mu,
            bounds,
            initial,
            replicas,
            master_seed,
            max_steps: DEFAULT_MAX_STEPS,
            epsilon: DEFAULT_EPSILON,
            tol: DEFAULT_LIMIT_TOL,
            sweep_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Parameter("replicas must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Parameter("max_steps must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Parameter(format!("tolerance must be positive, got {}", self.tol)));
        }
        let n = self.bounds.n();
        match &self.bounds {
            BoundsLaw::Fixed { bounds } => {
                ModelParams::from_bounds(self.mu, bounds.clone())?;
            }
            BoundsLaw::SweepMax { r_max, .. } => {
                if !(*r_max > 0.0 && r_max.is_finite()) {
                    return Err(Error::Parameter(format!("r_max must be positive, got {r_max}")));
                }
                ModelParams::from_bounds(self.mu, vec![*r_max; n])?;
            }
        }
        if let InitialLaw::Fixed { x0 } = &self.initial {
            if x0.len() != n {
                return Err(Error::Domain(format!("x0 has {} components, model has {n} agents", x0.len())));
            }
            OpinionState::initial(x0.clone())?;
        }
        Ok(())
    }
}

/// One replica's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    pub seed: u64,
    /// Steps simulated before the stop rule fired or the cap was hit.
    pub steps: u64,
    pub limit: LimitReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub replicas: u64,
    pub completed: u64,
    pub consensus: u64,
    pub non_consensus: u64,
    pub not_yet: u64,
    pub structure_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config: EnsembleConfig,
    pub summary: EnsembleSummary,
    pub outcomes: Vec<ReplicaOutcome>,
}

impl EnsembleSummary {
    fn from_outcomes(outcomes: &[ReplicaOutcome]) -> Self {
        let mut s = Self {
            replicas: outcomes.len() as u64,
            completed: 0,
            consensus: 0,
            non_consensus: 0,
            not_yet: 0,
            structure_violations: 0,
        };
        for o in outcomes {
            if !o.limit.reached() {
                s.not_yet += 1;
                continue;
            }
            s.completed += 1;
            if o.limit.consensus {
                s.consensus += 1;
            } else {
                s.non_consensus += 1;
            }
            if !o.limit.structure_ok {
                s.structure_violations += 1;
            }
        }
        s
    }
}

/// Simulates one replica without recording a trace.
///
/// Completeness is only re-checked after steps that moved an opinion, since the
/// partition is a function of the state. After `tau` the partition is frozen and
/// the run continues until every opinion is within `epsilon` of its cluster mean
/// and every time in `record_at` has been passed.
pub(crate) struct Replica {
    pub steps: u64,
    pub limit: LimitReport,
    pub recorded: Vec<Vec<f64>>,
}

pub(crate) fn run_replica(
    mut x: Vec<f64>,
    params: &ModelParams,
    seed: u64,
    max_steps: u64,
    epsilon: f64,
    tol: f64,
    record_at: &[u64],
) -> Replica {
    let n = params.n();
    let profile = params.confidence();
    let bounds = profile.bounds();
    let mu = params.mu();
    let mut rng = rng_from_seed(seed);
    let mut partitioner = Partitioner::new();
    let mut recorded = Vec::with_capacity(record_at.len());
    let mut next_record = 0;
    let last_record = record_at.last().copied().unwrap_or(0);

    let mut record = |t: u64, x: &[f64], next_record: &mut usize| {
        while *next_record < record_at.len() && record_at[*next_record] == t {
            recorded.push(x.to_vec());
            *next_record += 1;
        }
    };
    record(0, &x, &mut next_record);

    let mut limit = if partitioner.all_complete(&x, profile) {
        Some(LimitReport::from_complete(0, &x, &partitioner, profile, tol))
    } else {
        None
    };
    let settled = |x: &[f64], limit: &LimitReport| {
        let star = limit.x_star.as_ref().expect("completed report has a limit");
        x.iter().zip(star).all(|(a, b)| (a - b).abs() < epsilon)
    };
    let mut done = limit.as_ref().is_some_and(|l| settled(&x, l));

    let mut t = 0;
    while t < max_steps && !(done && t >= last_record) {
        t += 1;
        let (i, j) = sample_pair_unchecked(&mut rng, n);
        let moved = step_in_place(&mut x, bounds, mu, i, j).moved();
        record(t, &x, &mut next_record);
        if !moved {
            continue;
        }
        match &limit {
            None => {
                if partitioner.all_complete(&x, profile) {
                    let report = LimitReport::from_complete(t, &x, &partitioner, profile, tol);
                    done = settled(&x, &report);
                    limit = Some(report);
                }
            }
            Some(report) => {
                if !done {
                    done = settled(&x, report);
                }
            }
        }
    }
    Replica {
        steps: t,
        limit: limit.unwrap_or_else(|| LimitReport::not_yet(tol)),
        recorded,
    }
}

fn replica_inputs(config: &EnsembleConfig, replica: u64) -> Result<(u64, ModelParams, Vec<f64>)> {
    let seed = replica_seed(config.master_seed, config.sweep_index, replica);
    let mut aux = aux_rng(seed);
    let bounds = config.bounds.sample(&mut aux);
    let n = bounds.len();
    let params = ModelParams::from_bounds(config.mu, bounds)?;
    let x0 = config.initial.sample(n, &mut aux);
    Ok((seed, params, x0))
}

/// Runs every replica of `config` (in parallel on the current rayon pool).
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let outcomes = (0..config.replicas)
        .into_par_iter()
        .map(|replica| {
            let (seed, params, x0) = replica_inputs(config, replica)?;
            let run = run_replica(x0, &params, seed, config.max_steps, config.epsilon, config.tol, &[]);
            Ok(ReplicaOutcome {
                replica,
                seed,
                steps: run.steps,
                limit: run.limit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleResult {
        config: config.clone(),
        summary: EnsembleSummary::from_outcomes(&outcomes),
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r_max: f64,
    /// Fraction of completed replicas that reached consensus.
    pub p_hat: f64,
    /// `sqrt(p_hat (1 - p_hat) / completed)`.
    pub se: f64,
    pub replicas: u64,
    pub completed: u64,
    pub consensus: u64,
    pub not_yet: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub mu: f64,
    pub replicas: u64,
    pub master_seed: u64,
    pub max_steps: u64,
    pub points: Vec<SweepPoint>,
}

/// Binomial estimate with its standard error.
pub fn proportion(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = successes as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// `{i / points : i = 1..=points}`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / points as f64).collect()
}

/// Consensus probability as a function of the largest bound.
pub fn consensus_probability_sweep(
    n: usize,
    mu: f64,
    r_max_grid: &[f64],
    replicas: u64,
    master_seed: u64,
    max_steps: u64,
) -> Result<SweepResult> {
    if let Some(bad) = r_max_grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Parameter(format!("grid values must lie in (0, 1], got {bad}")));
    }
    let mut points = Vec::with_capacity(r_max_grid.len());
    for (k, &r_max) in r_max_grid.iter().enumerate() {
        let mut config = EnsembleConfig::new(mu, BoundsLaw::SweepMax { n, r_max }, InitialLaw::Uniform, replicas, master_seed);
        config.max_steps = max_steps;
        config.sweep_index = k as u64;
        let s = run_ensemble(&config)?.summary;
        let (p_hat, se) = proportion(s.consensus, s.completed);
        points.push(SweepPoint {
            r_max,
            p_hat,
            se,
            replicas: s.replicas,
            completed: s.completed,
            consensus: s.consensus,
            not_yet: s.not_yet,
        });
    }
    Ok(SweepResult {
        n,
        mu,
        replicas,
        master_seed,
        max_steps,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: u64,
    /// Mean of `||x(t) - x*||^2`; replicas without a limit contribute `n`.
    pub empirical: f64,
    pub se: f64,
    pub theoretical: f64,
    /// `empirical <= theoretical + 3 se`.
    pub dominated: bool,
}

/// Empirical mean-square distance to the limit against the rate bound.
pub fn bound_comparison_curve(
    params: &ModelParams,
    initial: &InitialLaw,
    replicas: u64,
    t_grid: &[u64],
    master_seed: u64,
    max_steps: u64,
) -> Result<Vec<BoundRow>> {
    let rb = RateBoundParams::from_model(params)?;
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let config = EnsembleConfig {
        max_steps: max_steps.max(grid.last().copied().unwrap_or(0)),
        ..EnsembleConfig::new(
            params.mu(),
            BoundsLaw::Fixed {
                bounds: params.confidence().bounds().to_vec(),
            },
            initial.clone(),
            replicas,
            master_seed,
        )
    };
    config.validate()?;
    let n = params.n() as f64;

    let deviations: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|replica| {
            let (seed, params, x0) = replica_inputs(&config, replica)?;
            let run = run_replica(x0, &params, seed, config.max_steps, config.epsilon, config.tol, &grid);
            Ok(match &run.limit.x_star {
                Some(star) => run.recorded.iter().map(|x| sq_dist(x, star)).collect(),
                None => vec![n; grid.len()],
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let (mean, se) = mean_and_se(deviations.iter().map(|d| d[k]));
        let theoretical = rate_bound(&rb, t)?;
        rows.push(BoundRow {
            t,
            empirical: mean,
            se,
            theoretical,
            dominated: mean <= theoretical + 3.0 * se,
        });
    }
    Ok(rows)
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    if count < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
    (mean, (var / count).sqrt())
}

/// Second moment of the one-step update matrix restricted to a complete
/// cluster, exact and sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WMatrixReport {
    pub n: usize,
    pub cluster_size: usize,
    pub mu: f64,
    pub samples: u64,
    pub off_diagonal_target: f64,
    pub diagonal_target: f64,
    /// `E[W^2]` by summing over all pairs.
    pub exact: Vec<Vec<f64>>,
    pub exact_max_error: f64,
    pub sampled: Vec<Vec<f64>>,
    pub sampled_se: Vec<Vec<f64>>,
    /// Largest `|sampled - target| / se` over entries with nonzero se.
    pub max_z: f64,
    /// Every sampled entry is within 5 standard errors of its target (entries
    /// with zero se must match exactly).
    pub within_5se: bool,
}

/// `W^2` for the pair `{i, j}`, restricted to agents `0..size`: identity unless
/// both agents are members, in which case the pair block is
/// `[[1 - 2a, 2a], [2a, 1 - 2a]]` with `a = mu (1 - mu)`.
fn w_squared(size: usize, mu: f64, i: usize, j: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; size]; size];
    for (k, row) in w.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    if j < size {
        let a = 2.0 * mu * (1.0 - mu);
        w[i][i] = 1.0 - a;
        w[j][j] = 1.0 - a;
        w[i][j] = a;
        w[j][i] = a;
    }
    w
}

pub fn w_matrix_spot_check(cluster_size: usize, n: usize, mu: f64, samples: u64, seed: u64) -> Result<WMatrixReport> {
    if n < 3 || !(1..=n).contains(&cluster_size) {
        return Err(Error::Parameter(format!(
            "need n >= 3 and 1 <= cluster_size <= n, got n = {n}, cluster_size = {cluster_size}"
        )));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Parameter(format!("mu must lie in (0, 1), got {mu}")));
    }
    if samples < 2 {
        return Err(Error::Parameter("need at least 2 samples".into()));
    }
    let size = cluster_size;
    let m = pair_count(n) as f64;
    let nn = (n * (n - 1)) as f64;
    let off_target = 4.0 * mu * (1.0 - mu) / nn;
    let diag_target = 1.0 - 4.0 * mu * (1.0 - mu) * (size - 1) as f64 / nn;
    let target = |a: usize, b: usize| if a == b { diag_target } else { off_target };

    // Each entry of E[W^2] is the pair-average of W^2; the entry only differs
    // from the identity on pairs inside the cluster, so sum those and add the
    // identity weight of the remaining pairs.
    let inside = pair_count(size);
    let mut exact = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in i + 1..size {
            let w = w_squared(size, mu, i, j);
            for (row, wrow) in exact.iter_mut().zip(&w) {
                for (e, v) in row.iter_mut().zip(wrow) {
                    *e += v;
                }
            }
        }
    }
    let outside = pair_count(n) - inside;
    for (k, row) in exact.iter_mut().enumerate() {
        row[k] += outside as f64;
        for e in row.iter_mut() {
            *e /= m;
        }
    }
    let mut exact_max_error: f64 = 0.0;
    for (a, row) in exact.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            exact_max_error = exact_max_error.max((v - target(a, b)).abs());
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut sum = vec![vec![0.0; size]; size];
    let mut sum_sq = vec![vec![0.0; size]; size];
    for _ in 0..samples {
        let (i, j) = sample_pair_unchecked(&mut rng, n);
        let w = w_squared(size, mu, i, j);
        for a in 0..size {
            for b in 0..size {
                sum[a][b] += w[a][b];
                sum_sq[a][b] += w[a][b] * w[a][b];
            }
        }
    }
    let s = samples as f64;
    let mut sampled = vec![vec![0.0; size]; size];
    let mut sampled_se = vec![vec![0.0; size]; size];
    let mut max_z: f64 = 0.0;
    let mut within = true;
    for a in 0..size {
        for b in 0..size {
            let mean = sum[a][b] / s;
            let var = ((sum_sq[a][b] - s * mean * mean) / (s - 1.0)).max(0.0);
            let se = (var / s).sqrt();
            sampled[a][b] = mean;
            sampled_se[a][b] = se;
            let dev = (mean - target(a, b)).abs();
            if se > 0.0 {
                max_z = max_z.max(dev / se);
                within &= dev <= 5.0 * se;
            } else {
                within &= dev <= 1e-12;
            }
        }
    }
    Ok(WMatrixReport {
        n,
        cluster_size,
        mu,
        samples,
        off_diagonal_target: off_target,
        diagonal_target: diag_target,
        exact,
        exact_max_error,
        sampled,
        sampled_se,
        max_z,
        within_5se: within,
    })
}

/// One written file and its SHA-256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes `manifest.json` into `dir`, hashing each artifact path (relative to `dir`).
pub fn write_manifest(dir: &Path, kind: &str, config: serde_json::Value, files: &[PathBuf]) -> Result<PathBuf> {
    let artifacts = files
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p
                    .strip_prefix(dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        kind: kind.to_string(),
        config,
        artifacts,
    };
    let path = dir.join("manifest.json");
    let mut out = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.flush()?;
    Ok(path)
}

/// `sweep.csv` (r_max, p_hat, se, replicas, completed, consensus, not_yet) plus
/// the manifest.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["r_max", "p_hat", "se", "replicas", "completed", "consensus", "not_yet"])?;
    for p in &result.points {
        w.write_record([
            p.r_max.to_string(),
            p.p_hat.to_string(),
            p.se.to_string(),
            p.replicas.to_string(),
            p.completed.to_string(),
            p.consensus.to_string(),
            p.not_yet.to_string(),
        ])?;
    }
    w.flush()?;
    let config = serde_json::json!({
        "n": result.n,
        "mu": result.mu,
        "replicas": result.replicas,
        "master_seed": result.master_seed,
        "max_steps": result.max_steps,
        "r_max_grid": result.points.iter().map(|p| p.r_max).collect::<Vec<_>>(),
    });
    let manifest = write_manifest(dir, "consensus_probability_sweep", config, std::slice::from_ref(&csv_path))?;
    Ok((csv_path, manifest))
}

/// `bound_curve.csv` (t, empirical, se, theoretical, dominated).
pub fn write_bound_curve(rows: &[BoundRow], dir: &Path) -> Result<PathBuf> {
    let path = dir.join("bound_curve.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(path)
}

/// `ensemble.csv` with one row per replica plus the manifest.
pub fn write_ensemble(result: &EnsembleResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let path = dir.join("ensemble.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["replica", "seed", "steps", "tau", "structure_ok", "consensus"])?;
    for o in &result.outcomes {
        w.write_record([
            o.replica.to_string(),
            o.seed.to_string(),
            o.steps.to_string(),
            o.limit.tau.map(|t| t.to_string()).unwrap_or_default(),
            o.limit.structure_ok.to_string(),
            o.limit.consensus.to_string(),
        ])?;
    }
    w.flush()?;
    let config = serde_json::json!({
        "config": result.config,
        "summary": result.summary,
    });
    let manifest = write_manifest(dir, "ensemble", config, std::slice::from_ref(&path))?;
    Ok((path, manifest))
}

/// Exposes the profile a replica of `config` would use; handy for reproducing a
/// single run outside the ensemble.
pub fn replica_setup(config: &EnsembleConfig, replica: u64) -> Result<(u64, ModelParams, OpinionState)> {
    let (seed, params, x0) = replica_inputs(config, replica)?;
    Ok((seed, params, OpinionState::initial(x0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::detect_limit;
    use crate::engine::simulate;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(replica_seed(1, 2, 3), replica_seed(1, 2, 3));
        assert_ne!(replica_seed(1, 2, 3), replica_seed(1, 2, 4));
        assert_ne!(replica_seed(1, 2, 3), replica_seed(1, 3, 3));
    }

    #[test]
    fn single_replica_matches_direct_simulation() {
        let bounds = vec![0.5, 0.41, 0.35, 0.24, 0.175, 0.165, 0.12, 0.047];
        let x0 = vec![0.05, 0.18, 0.33, 0.41, 0.57, 0.66, 0.8, 0.95];
        let config = EnsembleConfig::new(
            0.5,
            BoundsLaw::Fixed { bounds: bounds.clone() },
            InitialLaw::Fixed { x0: x0.clone() },
            1,
            99,
        );
        let result = run_ensemble(&config).unwrap();
        let outcome = &result.outcomes[0];
        let params = ModelParams::from_bounds(0.5, bounds).unwrap();
        let trace = simulate(&OpinionState::initial(x0).unwrap(), &params, outcome.steps, outcome.seed, 1).unwrap();
        let direct = detect_limit(&trace, DEFAULT_LIMIT_TOL).unwrap();
        assert!(direct.reached());
        assert_eq!(direct, outcome.limit);
    }

    #[test]
    fn ensembles_are_reproducible_and_accounted() {
        let config = EnsembleConfig {
            max_steps: 2000,
            ..EnsembleConfig::new(0.5, BoundsLaw::SweepMax { n: 6, r_max: 0.3 }, InitialLaw::Uniform, 40, 7)
        };
        let a = run_ensemble(&config).unwrap();
        let b = run_ensemble(&config).unwrap();
        assert_eq!(a, b);
        let s = a.summary;
        assert_eq!(s.consensus + s.non_consensus + s.not_yet, 40);
        assert_eq!(s.completed, s.consensus + s.non_consensus);
    }

    #[test]
    fn sweep_bounds_keep_the_maximum_first() {
        let law = BoundsLaw::SweepMax { n: 5, r_max: 0.4 };
        let mut rng = aux_rng(3);
        for _ in 0..100 {
            let r = law.sample(&mut rng);
            assert_eq!(r[0], 0.4);
            assert!(r[1..].iter().all(|&v| v > 0.0 && v <= 0.4));
        }
    }

    #[test]
    fn standard_error_of_rigged_outcomes() {
        let (p, se) = proportion(30, 120);
        assert_eq!(p, 0.25);
        assert_eq!(se, (0.25f64 * 0.75 / 120.0).sqrt());
        assert_eq!(proportion(7, 7), (1.0, 0.0));
    }

    #[test]
    fn w_matrix_exact_for_three_agents() {
        let report = w_matrix_spot_check(3, 3, 0.5, 1000, 1).unwrap();
        assert_eq!(report.off_diagonal_target, 1.0 / 6.0);
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_eq!(report.exact[a][b], report.off_diagonal_target);
                }
            }
        }
        assert!(report.exact_max_error < 1e-15);
    }

    #[test]
    fn w_matrix_single_member_is_identity() {
        let report = w_matrix_spot_check(1, 6, 0.7, 500, 2).unwrap();
        assert_eq!(report.exact, vec![vec![1.0]]);
        assert_eq!(report.sampled, vec![vec![1.0]]);
        assert!(report.within_5se);
    }

    #[test]
    fn config_validation() {
        let mut config = EnsembleConfig::new(0.5, BoundsLaw::SweepMax { n: 4, r_max: 0.5 }, InitialLaw::Uniform, 0, 1);
        assert!(config.validate().is_err());
        config.replicas = 3;
        config.initial = InitialLaw::Fixed { x0: vec![0.1, 0.2] };
        assert!(matches!(config.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_output_files() {
        let dir = tempfile::tempdir().unwrap();
        let result = consensus_probability_sweep(4, 0.5, &[0.5, 1.0], 20, 3, 100_000).unwrap();
        assert_eq!(result.points[1].p_hat, 1.0);
        let (csv_path, manifest) = write_sweep(&result, dir.path()).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("r_max,p_hat,se,replicas,completed,consensus,not_yet\n"));
        let m: Manifest = serde_json::from_reader(File::open(manifest).unwrap()).unwrap();
        assert_eq!(m.artifacts[0].path, "sweep.csv");
        assert_eq!(m.artifacts[0].sha256, sha256_file(&csv_path).unwrap());
    }
}
