//! Run reports and their canonical JSON form: sorted keys, two-space
//! indentation, and floats printed like C's `%.12g`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use stokolmo::assumptions::AssumptionReport;
use stokolmo::boundary::{AnalysisConfig, ErgodicMeasure, FaceRecord, InvasionRateTable};
use stokolmo::classifier::Verdict;
use stokolmo::numfmt::format_g;
use stokolmo::verify::{EnsembleReport, VerifyConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

impl Tool {
    pub fn current() -> Self {
        Tool {
            name: "stokolmo",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// Deterministic work counters. Wall-clock time is left out so that equal
/// inputs give equal reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Work {
    /// Steps budgeted for Monte Carlo face measures.
    pub boundary_path_steps: u64,
    pub verification_path_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: Tool,
    pub command: String,
    pub seed: u64,
    /// Numeric flags exactly as given on the command line.
    pub inputs: Map<String, Value>,
    pub model: Value,
    pub analysis: AnalysisConfig,
    pub assumptions: AssumptionReport,
    pub measures: Vec<ErgodicMeasure>,
    pub invasion_rates: InvasionRateTable,
    pub faces: Vec<FaceRecord>,
    pub verdict: Verdict,
    pub verification_config: Option<VerifyConfig>,
    pub verification: Option<EnsembleReport>,
    pub work: Work,
}

/// Canonical text of a JSON value.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out.push('\n');
    out
}

pub fn to_canonical<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    Ok(canonical_json(&serde_json::to_value(value)?))
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_value(v: &Value, depth: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let f = n.as_f64().expect("finite JSON number");
                out.push_str(&format_g(f, 12));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(depth + 1, out);
                write_value(item, depth + 1, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                indent(depth + 1, out);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*key], depth + 1, out);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(depth, out);
            out.push('}');
        }
    }
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(text: &str, path: Option<&Path>) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<(), crate::CliError> {
    let text = to_canonical(report).map_err(|e| crate::CliError::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| crate::CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
