//! The JSON report document and its serialization.
//!
//! Floating-point numbers are written with 17 significant digits so that
//! parsing a report back yields the exact values that were computed.

use std::collections::BTreeMap;
use std::io;

use fbst_core::evalue::EValueReport;
use fbst_core::models::PosteriorSummary;
use serde::{Deserialize, Serialize};

use crate::run::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "fbst";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEValue {
    pub parameter: String,
    pub evalue: EValueReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub bf01: f64,
    pub bf10: f64,
    pub prior: String,
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub parameters: Vec<String>,
    pub rhat: Vec<Option<f64>>,
    pub ess: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub step_sizes: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Joint-sampler cross-check of a grid posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub parameter: String,
    pub ev_against_grid: f64,
    /// From the Rao–Blackwellized marginal of the joint draws.
    pub ev_against_mcmc: f64,
    /// From a kernel density estimate of the parameter's draws alone.
    pub ev_against_kde: f64,
    /// Kolmogorov–Smirnov distance between the draws and the grid posterior.
    pub ks_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub timestamp: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub input_metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_summary: Option<serde_json::Value>,
    #[serde(default)]
    pub evalues: Vec<NamedEValue>,
    #[serde(default)]
    pub summaries: Vec<PosteriorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_factor: Option<BayesFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<CrossCheck>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl ReportDocument {
    pub fn new(config: RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config,
            input_metadata: BTreeMap::new(),
            data_summary: None,
            evalues: Vec::new(),
            summaries: Vec::new(),
            diagnostics: None,
            bayes_factor: None,
            cross_check: None,
            notes: Vec::new(),
            error: None,
        }
    }

    pub fn evalue(&self, parameter: &str) -> Option<&EValueReport> {
        self.evalues
            .iter()
            .find(|e| e.parameter == parameter)
            .map(|e| &e.evalue)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }
}

/// Pretty JSON formatter writing every `f64` with 17 significant digits.
struct FullPrecision<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

impl serde_json::ser::Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes any value as pretty JSON with full-precision floats.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let fmt = FullPrecision {
        inner: serde_json::ser::PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Paths (JSON-pointer style) where two reports differ, ignoring the
/// timestamp.
pub fn differences(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: String, out: &mut Vec<String>) {
        use serde_json::Value::{Array, Number, Object};
        match (a, b) {
            (Object(x), Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    if path.is_empty() && k == "timestamp" {
                        continue;
                    }
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, format!("{path}/{k}"), out),
                        _ => out.push(format!("{path}/{k}")),
                    }
                }
            }
            (Array(x), Array(y)) if x.len() == y.len() => {
                for (i, (u, v)) in x.iter().zip(y).enumerate() {
                    walk(u, v, format!("{path}/{i}"), out);
                }
            }
            (Number(x), Number(y)) => {
                if x.as_f64() != y.as_f64() {
                    out.push(path);
                }
            }
            _ => {
                if a != b {
                    out.push(path);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(a, b, String::new(), &mut out);
    out
}

/// Formats a probability-like value for terminal output.
pub fn display(value: f64, digits: usize) -> String {
    format!("{value:.digits$}")
}
