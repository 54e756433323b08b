//! Trace persistence: a CSV of recorded states plus a JSON sidecar.
//!
//! The CSV header is `t,x_1,...,x_n`; opinions are written with 17 significant
//! digits so that parsing them back yields the identical `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AgentPair, ModelParams, OpinionState, Trace};
use crate::error::{Error, Result};

/// Sidecar document describing how a trace was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub params: ModelParams,
    pub seed: u64,
    pub thinning: u64,
    pub steps: u64,
    pub pairs: Vec<AgentPair>,
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
pub fn write_trace(trace: &Trace, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));

    let mut out = BufWriter::new(File::create(&csv_path)?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=trace.params.n()).map(|i| format!("x_{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for state in &trace.states {
        write!(out, "{}", state.t)?;
        for v in state.opinions() {
            write!(out, ",{}", fmt_f64(*v))?;
        }
        writeln!(out)?;
    }
    out.flush()?;

    let meta = TraceMetadata {
        params: trace.params.clone(),
        seed: trace.seed,
        thinning: trace.thinning,
        steps: trace.steps(),
        pairs: trace.pairs.clone(),
    };
    let file = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer(file, &meta)?;
    Ok((csv_path, json_path))
}

/// Reads a trace written by [`write_trace`] and checks its structural invariants.
pub fn read_trace(csv_path: &Path, json_path: &Path) -> Result<Trace> {
    let meta: TraceMetadata = serde_json::from_reader(std::io::BufReader::new(File::open(json_path)?))?;
    let n = meta.params.n();
    if meta.pairs.len() as u64 != meta.steps {
        return Err(Error::Format(format!(
            "metadata lists {} pairs for {} steps",
            meta.pairs.len(),
            meta.steps
        )));
    }
    if let Some(p) = meta.pairs.iter().find(|p| p.j() >= n) {
        return Err(Error::Format(format!("pair {p} out of range for n = {n}")));
    }
    if meta.thinning == 0 {
        return Err(Error::Format("thinning must be at least 1".into()));
    }

    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != n + 1 || &headers[0] != "t" {
        return Err(Error::Format(format!(
            "expected header t,x_1..x_{n}, got {} columns",
            headers.len()
        )));
    }
    let mut states = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let t: u64 = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {}: bad time '{}'", row + 1, &record[0])))?;
        let x = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(k, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}, column x_{}: bad number '{field}'", row + 1, k + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let expected_t = row as u64 * meta.thinning;
        if t != expected_t {
            return Err(Error::Format(format!(
                "row {}: time {t}, expected {expected_t}",
                row + 1
            )));
        }
        states.push(OpinionState::new(t, x)?);
    }
    if states.is_empty() {
        return Err(Error::Format("trace has no recorded states".into()));
    }
    if states.len() as u64 != meta.steps / meta.thinning + 1 {
        return Err(Error::Format(format!(
            "{} recorded states for {} steps at thinning {}",
            states.len(),
            meta.steps,
            meta.thinning
        )));
    }
    Ok(Trace {
        params: meta.params,
        seed: meta.seed,
        thinning: meta.thinning,
        states,
        pairs: meta.pairs,
    })
}
