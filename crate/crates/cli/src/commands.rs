use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use hdw_core::analysis::{
    detect_limit, exact_expectation_curve, rate_bound, Functional, LimitReport, RateBoundParams,
    DEFAULT_LIMIT_TOL, DEFAULT_ORACLE_BUDGET,
};
use hdw_core::clusters::{lyapunov_f, mc_partition, verify_convexity, verify_gap};
use hdw_core::control::{drive_to_complete, split_or_shrink, verify_outcome, ControlSequenceFile, Outcome};
use hdw_core::engine::{apply_sequence, read_trace, simulate as simulate_trace, write_trace, ModelParams, OpinionState};
use hdw_core::experiments::{
    bound_comparison_curve, consensus_probability_sweep, uniform_grid, uniform_initial, write_bound_curve,
    write_manifest, write_sweep, InitialLaw, DEFAULT_MAX_STEPS,
};

use crate::config::FloatList;
use crate::error::{CliError, CliResult, Kind};

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::config(format!("missing --{flag}")))
}

fn model(mu: Option<f64>, bounds: Option<FloatList>, n: Option<usize>) -> CliResult<ModelParams> {
    let bounds = require(bounds, "bounds")?.0;
    if let Some(n) = n {
        if n != bounds.len() {
            return Err(CliError::config(format!("--n is {n} but --bounds lists {} values", bounds.len())));
        }
    }
    Ok(ModelParams::from_bounds(require(mu, "mu")?, bounds)?)
}

fn state(x: Option<FloatList>, flag: &str, n: usize) -> CliResult<OpinionState> {
    let x = require(x, flag)?.0;
    if x.len() != n {
        return Err(CliError::config(format!("--{flag} lists {} values for {n} agents", x.len())));
    }
    Ok(OpinionState::initial(x)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(e.to_string()))?;
    out.flush().map_err(|e| CliError::io(e.to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn print_limit(report: &LimitReport, steps: u64) {
    match (&report.tau, &report.x_star) {
        (Some(tau), Some(x_star)) => {
            println!("all clusters complete at t = {tau}");
            println!("limit x* = {}", fmt_vec(x_star));
            println!("structure_ok = {}, consensus = {}", report.structure_ok, report.consensus);
        }
        _ => println!("limit not reached within {steps} steps"),
    }
}

#[derive(Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Number of agents (checked against --bounds).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Confidence bounds, comma-separated.
    #[arg(long)]
    bounds: Option<FloatList>,
    /// Initial opinions; uniform from the seed if omitted.
    #[arg(long)]
    x0: Option<FloatList>,
    /// Default 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Record every k-th state (default 1).
    #[arg(long)]
    thinning: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// File stem for `<stem>.csv` and `<stem>.json` (default "trace").
    #[arg(long)]
    stem: Option<String>,
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let params = model(a.mu, a.bounds, a.n)?;
    let seed = a.seed.unwrap_or(0);
    let x0 = match a.x0 {
        Some(x) => state(Some(x), "x0", params.n())?,
        None => uniform_initial(params.n(), seed),
    };
    let steps = require(a.steps, "steps")?;
    let trace = simulate_trace(&x0, &params, steps, seed, a.thinning.unwrap_or(1))?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let (csv, json) = write_trace(&trace, &dir, a.stem.as_deref().unwrap_or("trace"))?;
    println!(
        "wrote {} and {} ({} steps, {} recorded states)",
        csv.display(),
        json.display(),
        trace.steps(),
        trace.states.len()
    );
    print_limit(&detect_limit(&trace, DEFAULT_LIMIT_TOL)?, steps);
    Ok(())
}

#[derive(Args, Serialize, Deserialize)]
pub struct PartitionArgs {
    #[arg(long)]
    bounds: Option<FloatList>,
    /// Opinions to partition.
    #[arg(long)]
    x: Option<FloatList>,
    /// Trace CSV to take the state from instead of --x.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Trace metadata JSON (default: the CSV path with a .json extension).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Recorded time to partition (default: last recorded state).
    #[arg(long)]
    time: Option<u64>,
    /// Write the partition as JSON (1-based members) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn partition(a: PartitionArgs) -> CliResult<()> {
    let (x, profile) = match a.trace {
        Some(csv) => {
            let meta = a.meta.unwrap_or_else(|| csv.with_extension("json"));
            let trace = read_trace(&csv, &meta)?;
            let x = match a.time {
                Some(t) => trace
                    .states
                    .iter()
                    .find(|s| s.t == t)
                    .cloned()
                    .ok_or_else(|| CliError::config(format!("no recorded state at t = {t}")))?,
                None => trace.states.last().expect("trace has a state").clone(),
            };
            (x, trace.params.confidence().clone())
        }
        None => {
            let bounds = require(a.bounds, "bounds")?.0;
            let profile = hdw_core::ConfidenceProfile::new(bounds)?;
            (state(a.x, "x", profile.len())?, profile)
        }
    };
    let p = mc_partition(&x, &profile);
    for (k, c) in p.clusters.iter().enumerate() {
        let labels: Vec<String> = c.members.iter().map(|m| (m + 1).to_string()).collect();
        println!(
            "cluster {}: {{{}}} anchor {} diameter {:.6} r_min {} {}",
            k + 1,
            labels.join(","),
            c.anchor + 1,
            c.diameter(),
            c.r_min,
            if c.complete { "complete" } else { "incomplete" }
        );
    }
    println!("F = {}", lyapunov_f(&p, &x));
    if let Some(out) = a.out {
        write_json(&out, &p.export())?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Split or shrink one incomplete cluster.
    SplitOrShrink,
    /// Make every cluster complete.
    Complete,
}

#[derive(Args, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    bounds: Option<FloatList>,
    #[arg(long)]
    x: Option<FloatList>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// 1-based position of the target cluster in construction order (default:
    /// the first incomplete one).
    #[arg(long)]
    cluster: Option<usize>,
    /// Output file (default control.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn synthesize(a: SynthesizeArgs) -> CliResult<()> {
    let params = model(a.mu, a.bounds, None)?;
    let x = state(a.x, "x", params.n())?;
    let seq = match a.mode.unwrap_or(Mode::SplitOrShrink) {
        Mode::SplitOrShrink => {
            let p = mc_partition(&x, params.confidence());
            let cluster = match a.cluster {
                Some(k) => p.clusters.get(k.wrapping_sub(1)).ok_or_else(|| {
                    CliError::config(format!("--cluster {k} out of range (1..={})", p.clusters.len()))
                })?,
                None => p
                    .clusters
                    .iter()
                    .find(|c| !c.complete)
                    .ok_or_else(|| CliError::new(Kind::Precondition, "every cluster is already complete"))?,
            };
            split_or_shrink(&x, cluster, &params)?
        }
        Mode::Complete => drive_to_complete(&x, &params)?,
    };
    let out = a.out.unwrap_or_else(|| PathBuf::from("control.json"));
    write_json(&out, &seq.to_file(Some(&params)))?;
    println!(
        "{:?}: {} pairs (bound {}), written to {}",
        seq.claimed_outcome,
        seq.pairs.len(),
        seq.length_bound,
        out.display()
    );
    Ok(())
}

#[derive(Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Control-sequence JSON.
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Required when the file carries no parameters; overrides them otherwise.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    bounds: Option<FloatList>,
}

fn check_sequence(path: &Path, mu: Option<f64>, bounds: Option<FloatList>) -> CliResult<(Outcome, OpinionState)> {
    let file: ControlSequenceFile = read_json(path)?;
    let params = match (mu, bounds, &file.params) {
        (None, None, Some(p)) => p.clone(),
        (mu, bounds, embedded) => {
            let mu = mu.or(embedded.as_ref().map(|p| p.mu()));
            let bounds = bounds.or(embedded.as_ref().map(|p| FloatList(p.confidence().bounds().to_vec())));
            model(mu, bounds, None)?
        }
    };
    let seq = file.into_sequence()?;
    verify_outcome(&seq, &params).map_err(|r| CliError::verification(format!("{}: {r}", path.display())))?;
    let end = apply_sequence(&seq.start_state, &seq.pairs, &params)?;
    Ok((seq.claimed_outcome, end))
}

pub fn replay(a: ReplayArgs) -> CliResult<()> {
    let path = require(a.sequence, "sequence")?;
    let (outcome, end) = check_sequence(&path, a.mu, a.bounds)?;
    println!("claimed outcome {outcome:?} verified");
    println!("final state {}", fmt_vec(end.opinions()));
    Ok(())
}

#[derive(Args, Serialize, Deserialize)]
pub struct BoundArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Largest confidence bound.
    #[arg(long)]
    r1: Option<f64>,
    /// Smallest confidence bound.
    #[arg(long)]
    rn: Option<f64>,
    /// Full bound profile; replaces --n/--r1/--rn and is required with --replicas.
    #[arg(long)]
    bounds: Option<FloatList>,
    /// Time at which to evaluate the bound.
    #[arg(long)]
    t: Option<u64>,
    /// Simulate this many replicas from uniform initial opinions and compare.
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest time in the comparison grid (default 200).
    #[arg(long)]
    t_max: Option<u64>,
    /// Grid spacing (default 2).
    #[arg(long)]
    t_step: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bound(a: BoundArgs) -> CliResult<()> {
    let mu = require(a.mu, "mu")?;
    let rb = match &a.bounds {
        Some(b) => {
            let params = model(Some(mu), Some(b.clone()), a.n)?;
            RateBoundParams::from_model(&params)?
        }
        None => RateBoundParams::new(require(a.n, "n")?, mu, require(a.r1, "r1")?, require(a.rn, "rn")?)?,
    };
    println!("T = {}", rb.big_t);
    println!("c = {:.17e} (ln c = {:.6e})", rb.c, rb.ln_c);
    if let Some(t) = a.t {
        println!("bound(t = {t}) = {:.17e}", rate_bound(&rb, t)?);
    }
    let Some(replicas) = a.replicas else {
        return Ok(());
    };
    let seed = a.seed.ok_or_else(|| CliError::config("ensembles need an explicit --seed"))?;
    let params = model(Some(mu), a.bounds, a.n)?;
    let step = a.t_step.unwrap_or(2).max(1);
    let grid: Vec<u64> = (0..=a.t_max.unwrap_or(200)).step_by(step as usize).collect();
    let rows = bound_comparison_curve(&params, &InitialLaw::Uniform, replicas, &grid, seed, DEFAULT_MAX_STEPS)?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let csv = write_bound_curve(&rows, &dir)?;
    let config = serde_json::json!({
        "mu": mu,
        "bounds": params.confidence().bounds(),
        "replicas": replicas,
        "seed": seed,
        "t_grid": grid,
    });
    write_manifest(&dir, "bound_comparison_curve", config, std::slice::from_ref(&csv))?;
    let violations = rows.iter().filter(|r| !r.dominated).count();
    println!("wrote {} ({} rows, {violations} not dominated)", csv.display(), rows.len());
    Ok(())
}

#[derive(Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Use the grid {i/K : i = 1..K}.
    #[arg(long)]
    grid: Option<usize>,
    /// Explicit grid of largest bounds, comma-separated.
    #[arg(long)]
    r_max: Option<FloatList>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Required: ensembles never draw hidden entropy.
    #[arg(long)]
    seed: Option<u64>,
    /// Step cap per replica (default 1000000).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let seed = a.seed.ok_or_else(|| CliError::config("ensembles need an explicit --seed"))?;
    let grid = match (a.grid, a.r_max) {
        (_, Some(list)) => list.0,
        (Some(k), None) if k > 0 => uniform_grid(k),
        _ => return Err(CliError::config("missing --grid or --r-max")),
    };
    let result = consensus_probability_sweep(
        require(a.n, "n")?,
        require(a.mu, "mu")?,
        &grid,
        require(a.replicas, "replicas")?,
        seed,
        a.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
    )?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let (csv, _) = write_sweep(&result, &dir)?;
    println!("r_max      p_hat    se       not_yet");
    for p in &result.points {
        println!("{:<10} {:<8.4} {:<8.4} {}", p.r_max, p.p_hat, p.se, p.not_yet);
    }
    println!("wrote {}", csv.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalName {
    /// Squared distance to --target.
    SquaredDistance,
    /// Indicator that every cluster has been complete by time t.
    AllComplete,
    /// Indicator that a single complete cluster has formed by time t.
    ConsensusCluster,
    /// Squared distance to the path's own limit (n if not complete in time).
    LimitDeviation,
}

#[derive(Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    bounds: Option<FloatList>,
    #[arg(long)]
    x: Option<FloatList>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long, value_enum)]
    functional: Option<FunctionalName>,
    /// Target vector for squared-distance.
    #[arg(long)]
    target: Option<FloatList>,
    /// Largest number of enumerated paths (default 16777216).
    #[arg(long)]
    budget: Option<u64>,
}

pub fn oracle(a: OracleArgs) -> CliResult<()> {
    let params = model(a.mu, a.bounds, None)?;
    let x = state(a.x, "x", params.n())?;
    let functional = match require(a.functional, "functional")? {
        FunctionalName::SquaredDistance => Functional::SquaredDistance(require(a.target, "target")?.0),
        FunctionalName::AllComplete => Functional::AllCompleteBy,
        FunctionalName::ConsensusCluster => Functional::ConsensusClusterBy,
        FunctionalName::LimitDeviation => Functional::LimitDeviation,
    };
    let budget = a.budget.map(u128::from).unwrap_or(DEFAULT_ORACLE_BUDGET);
    let curve = exact_expectation_curve(&x, &params, require(a.horizon, "horizon")?, &functional, budget)?;
    println!("t,expectation");
    for (t, v) in curve.iter().enumerate() {
        println!("{t},{v:.17e}");
    }
    Ok(())
}

#[derive(Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Trace metadata JSON (default: the CSV path with a .json extension).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Control-sequence JSON.
    #[arg(long)]
    sequence: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    bounds: Option<FloatList>,
}

pub fn verify(a: VerifyArgs) -> CliResult<()> {
    if a.trace.is_none() && a.sequence.is_none() {
        return Err(CliError::config("nothing to verify: pass --trace and/or --sequence"));
    }
    let mut failures = Vec::new();
    if let Some(csv) = &a.trace {
        let meta = a.meta.clone().unwrap_or_else(|| csv.with_extension("json"));
        let trace = read_trace(csv, &meta)?;
        let profile = trace.params.confidence();
        let replay = trace.replays_exactly();
        let gap = trace.states.iter().all(|s| verify_gap(&mc_partition(s, profile), s, profile));
        let convex = verify_convexity(&trace);
        for (name, ok) in [("replay", replay), ("gap", gap), ("convexity", convex)] {
            println!("{} {name}", if ok { "PASS" } else { "FAIL" });
            if !ok {
                failures.push(name.to_string());
            }
        }
    }
    if let Some(path) = &a.sequence {
        match check_sequence(path, a.mu, a.bounds) {
            Ok((outcome, _)) => println!("PASS sequence ({outcome:?})"),
            Err(e) if e.kind == Kind::Verification => {
                println!("FAIL sequence");
                failures.push(e.message);
            }
            Err(e) => return Err(e),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(format!("failed: {}", failures.join("; "))))
    }
}
