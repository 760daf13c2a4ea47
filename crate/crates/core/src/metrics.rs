//! Per-round metrics, cumulative communication counters and file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "round,train_loss,train_accuracy,eval_loss,eval_accuracy,\
broadcast_bits_round,aggregate_bits_round,cumulative_broadcast_bits,cumulative_aggregate_bits";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundMetrics {
    pub round: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub broadcast_bits_round: u64,
    pub aggregate_bits_round: u64,
    pub cumulative_broadcast_bits: u64,
    pub cumulative_aggregate_bits: u64,
}

/// Ordered round records of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<RoundMetrics>,
}

impl RunLog {
    pub fn new() -> Self {
        RunLog::default()
    }

    pub fn records(&self) -> &[RoundMetrics] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.records.last()
    }

    pub fn last_mut(&mut self) -> Option<&mut RoundMetrics> {
        self.records.last_mut()
    }

    pub fn total_broadcast_bits(&self) -> u64 {
        self.last().map_or(0, |r| r.cumulative_broadcast_bits)
    }

    pub fn total_aggregate_bits(&self) -> u64 {
        self.last().map_or(0, |r| r.cumulative_aggregate_bits)
    }

    /// Appends a record after checking round order and prefix sums.
    pub fn record(&mut self, metrics: RoundMetrics) -> Result<()> {
        if let Some(prev) = self.last() {
            if metrics.round <= prev.round {
                return Err(Error::OutOfOrderRound {
                    previous: prev.round,
                    got: metrics.round,
                });
            }
        }
        let checks = [
            (
                "broadcast",
                self.total_broadcast_bits(),
                metrics.broadcast_bits_round,
                metrics.cumulative_broadcast_bits,
            ),
            (
                "aggregate",
                self.total_aggregate_bits(),
                metrics.aggregate_bits_round,
                metrics.cumulative_aggregate_bits,
            ),
        ];
        for (direction, before, this_round, found) in checks {
            let expected = before + this_round;
            if found != expected {
                return Err(Error::CumulativeMismatch {
                    round: metrics.round,
                    direction,
                    expected,
                    found,
                });
            }
        }
        self.records.push(metrics);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.round,
                format_sig6(r.train_loss),
                format_sig6(r.train_accuracy),
                opt(r.eval_loss),
                opt(r.eval_accuracy),
                r.broadcast_bits_round,
                r.aggregate_bits_round,
                r.cumulative_broadcast_bits,
                r.cumulative_aggregate_bits,
            ));
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl()?.as_bytes())
    }

    /// Reads back a file produced by [`RunLog::to_csv`], revalidating it.
    pub fn parse_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::InvalidConfig("metrics CSV header mismatch".into()));
        }
        let bad = |line: &str| Error::InvalidConfig(format!("malformed metrics row: {line}"));
        let mut log = RunLog::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(line));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            let opt = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    float(s).map(Some)
                }
            };
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad(line));
            log.record(RoundMetrics {
                round: int(f[0])?,
                train_loss: float(f[1])?,
                train_accuracy: float(f[2])?,
                eval_loss: opt(f[3])?,
                eval_accuracy: opt(f[4])?,
                broadcast_bits_round: int(f[5])?,
                aggregate_bits_round: int(f[6])?,
                cumulative_broadcast_bits: int(f[7])?,
                cumulative_aggregate_bits: int(f[8])?,
            })?;
        }
        Ok(log)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Six significant digits, `%g` style: fixed notation for decimal exponents
/// in `[-4, 6)`, scientific otherwise, trailing zeros trimmed.
pub fn format_sig6(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    let sci = format!("{value:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{value:.decimals$}"))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    /// Total broadcast bits of A over B.
    pub broadcast_bit_ratio: f64,
    pub aggregate_bit_ratio: f64,
    /// Final evaluation accuracy of A minus B.
    pub final_accuracy_delta: f64,
}

fn final_accuracy(log: &RunLog) -> Result<f64> {
    log.last()
        .and_then(|r| r.eval_accuracy)
        .ok_or(Error::MissingEvaluation)
}

pub fn compare_runs(a: &RunLog, b: &RunLog) -> Result<RunComparison> {
    if a.len() != b.len() {
        return Err(Error::LogLengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(RunComparison {
        broadcast_bit_ratio: a.total_broadcast_bits() as f64 / b.total_broadcast_bits() as f64,
        aggregate_bit_ratio: a.total_aggregate_bits() as f64 / b.total_aggregate_bits() as f64,
        final_accuracy_delta: final_accuracy(a)? - final_accuracy(b)?,
    })
}

/// End-of-run summary. Wall time is reported but not serialized, so
/// `summary.json` stays a pure function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub rounds: u64,
    pub final_eval_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub total_broadcast_bits: u64,
    pub total_aggregate_bits: u64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn from_log(config: serde_json::Value, log: &RunLog, wall_time_secs: f64) -> Self {
        RunSummary {
            config,
            rounds: log.last().map_or(0, |r| r.round),
            final_eval_loss: log.last().and_then(|r| r.eval_loss),
            final_accuracy: log.last().and_then(|r| r.eval_accuracy),
            total_broadcast_bits: log.total_broadcast_bits(),
            total_aggregate_bits: log.total_aggregate_bits(),
            wall_time_secs,
        }
    }
}
