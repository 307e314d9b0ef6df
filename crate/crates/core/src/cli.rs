//! File formats, reports and the `locc` command line.
//!
//! Complex numbers are written as `[re, im]` pairs. Every command produces a
//! report, either as text or as JSON (schema version `v1`), and exits with
//! 0 for a positive answer, 1 for a proved negative or failed verification,
//! 2 when the answer is unknown, and 3 for bad input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::criteria::{
    certificate_check_with, classify_2x2, theorem2_check, AssignedState, Certificate, Classification2x2,
    ProductVector, Theorem2Report, Theorem2Verdict,
};
use crate::ensemble::{canned_example, random_ensemble, Ensemble, RandomKind};
use crate::error::Error;
use crate::linalg::{CMatrix, CVector, C64, DEFAULT_TOL};
use crate::protocol::{canned_protocol, verify_protocol, Leaf, Party, ProjectiveMeasurement, ProtocolTree};
use crate::search::{search_protocol, PartyOrder, SearchConfig, SearchOutcome, SearchStats, Strategy};
use crate::states::BipartiteState;

pub const SCHEMA_VERSION: &str = "v1";

pub const EXIT_POSITIVE: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "locc", version, about = "Decide local distinguishability of orthogonal bipartite pure states")]
pub struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Numerical tolerance for orthogonality, probabilities and projector checks.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Schmidt-number-sum necessary condition only.
    Necessary,
    /// Complete classification for 2x2 systems.
    #[value(name = "classify2x2")]
    Classify2x2,
    /// Necessary condition, then protocol search.
    Full,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Schmidt numbers and weights of every state.
    Schmidt { ensemble: PathBuf },
    /// Decide distinguishability.
    Check {
        ensemble: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Verify that a protocol identifies every state with certainty.
    Verify { ensemble: PathBuf, protocol: PathBuf },
    /// Search for a protocol and write it next to the ensemble file.
    Search {
        ensemble: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        /// Where to write the protocol (default: `<ensemble>.protocol.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a built-in ensemble, and its protocol when one is bundled.
    Example {
        name: String,
        /// Ensemble file to write (default: `<name>.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a seeded random orthogonal ensemble.
    Random {
        /// Local dimensions as `AxB`.
        #[arg(long, default_value = "2x2", value_parser = parse_dims)]
        dims: (usize, usize),
        /// Number of states.
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `product-basis` or `haar-orthogonal`.
        #[arg(long, default_value = "haar-orthogonal")]
        kind: RandomKind,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check a product-vector certificate of distinguishability.
    Certify { ensemble: PathBuf, certificate: PathBuf },
}

#[derive(Args, Debug, Default, Clone)]
pub struct SearchArgs {
    /// Maximum number of measurement rounds.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Candidate strategies, comma separated: standard, cross-operator,
    /// zero-diagonal, exhaustive-2d, user.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<Strategy>,
    /// Candidate measurements kept per node and party.
    #[arg(long)]
    pub beam: Option<usize>,
    /// alternate, alice-first, bob-first or free.
    #[arg(long)]
    pub party_order: Option<PartyOrder>,
    /// Search nodes visited before giving up.
    #[arg(long)]
    pub node_budget: Option<usize>,
    /// JSON list of measurements for the `user` strategy.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad dimension {t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// Bad input: unreadable or malformed files, invalid flags, shape problems.
#[derive(Clone, Debug, PartialEq)]
pub struct InputError {
    pub message: String,
    /// File and position inside it, when known.
    pub location: Option<String>,
    pub kind: String,
}

impl InputError {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            location: None,
            kind: kind.into(),
        }
    }

    fn at(mut self, location: impl Into<String>) -> Self {
        self.location = Some(match self.location.take() {
            Some(inner) => format!("{}: {inner}", location.into()),
            None => location.into(),
        });
        self
    }
}

impl From<Error> for InputError {
    fn from(e: Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.location {
            Some(loc) => write!(f, "{loc}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

type CliResult<T> = std::result::Result<T, InputError>;

// ---------------------------------------------------------------------------
// Ensemble files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub dims: [usize; 2],
    pub states: Vec<StateEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub name: String,
    /// `dims[0]` rows of `dims[1]` `[re, im]` pairs.
    pub amplitudes: Vec<Vec<[f64; 2]>>,
}

impl EnsembleFile {
    pub fn from_ensemble(e: &Ensemble) -> Self {
        let (da, db) = e.dims();
        let states = e
            .states()
            .iter()
            .zip(e.labels())
            .map(|(s, label)| StateEntry {
                name: label.clone(),
                amplitudes: (0..da)
                    .map(|x| (0..db).map(|y| pair(s.amplitudes()[(x, y)])).collect())
                    .collect(),
            })
            .collect();
        Self { dims: [da, db], states }
    }

    /// Build the ensemble. Also returns notices about renormalized states.
    pub fn to_ensemble(&self, tol: f64) -> CliResult<(Ensemble, Vec<String>)> {
        let [da, db] = self.dims;
        if da == 0 || db == 0 {
            return Err(InputError::new("ShapeMismatch", "dimensions must be positive").at("dims"));
        }
        let mut states = Vec::with_capacity(self.states.len());
        let mut notices = Vec::new();
        for (i, entry) in self.states.iter().enumerate() {
            let loc = format!("states[{i}].amplitudes");
            if entry.amplitudes.len() != da {
                return Err(InputError::new(
                    "ShapeMismatch",
                    format!("expected {da} rows, found {}", entry.amplitudes.len()),
                )
                .at(loc));
            }
            let mut m = CMatrix::zeros(da, db);
            for (x, row) in entry.amplitudes.iter().enumerate() {
                if row.len() != db {
                    return Err(InputError::new(
                        "ShapeMismatch",
                        format!("expected {db} entries, found {}", row.len()),
                    )
                    .at(format!("{loc}[{x}]")));
                }
                for (y, z) in row.iter().enumerate() {
                    m[(x, y)] = C64::new(z[0], z[1]);
                }
            }
            let s = BipartiteState::new(da, db, m, Some(entry.name.clone()))
                .map_err(|e| InputError::from(e).at(format!("states[{i}]")))?;
            if s.normalization() != 1.0 {
                notices.push(format!(
                    "state {} was normalized (scaled by {:.6})",
                    entry.name,
                    s.normalization()
                ));
            }
            states.push(s);
        }
        let e = Ensemble::with_tolerance(states, tol).map_err(|e| {
            let err = InputError::from(e.clone());
            match e {
                Error::NotOrthogonal { first, second, .. } => err.at(format!("states[{first}], states[{second}]")),
                _ => err.at("states"),
            }
        })?;
        Ok((e, notices))
    }
}

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn vector_to_json(v: &CVector) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

fn complex_from_json(v: &Value, loc: &str) -> CliResult<C64> {
    let bad = || InputError::new("Parse", "expected a [re, im] pair of numbers").at(loc.to_owned());
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.len() != 2 {
        return Err(bad());
    }
    let re = arr[0].as_f64().ok_or_else(bad)?;
    let im = arr[1].as_f64().ok_or_else(bad)?;
    Ok(C64::new(re, im))
}

fn vector_from_json(v: &Value, loc: &str) -> CliResult<CVector> {
    let arr = v
        .as_array()
        .ok_or_else(|| InputError::new("Parse", "expected a list of [re, im] pairs").at(loc.to_owned()))?;
    let entries = arr
        .iter()
        .enumerate()
        .map(|(k, z)| complex_from_json(z, &format!("{loc}[{k}]")))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(CVector::from_vec(entries))
}

// ---------------------------------------------------------------------------
// Protocol files

/// Protocol tree as JSON: measurement nodes
/// `{"party": "A"|"B", "outcomes": [{"projector_columns": [...], "child": ...}]}`
/// and leaves `{"identify": label}` or `{"fail": true}`.
pub fn protocol_to_json(t: &ProtocolTree) -> Value {
    match t {
        ProtocolTree::Leaf(Leaf::Identify(l)) => json!({ "identify": l }),
        ProtocolTree::Leaf(Leaf::Fail) => json!({ "fail": true }),
        ProtocolTree::Measure { measurement, children } => {
            let outcomes: Vec<Value> = measurement
                .outcomes()
                .iter()
                .zip(children)
                .map(|(cols, child)| {
                    json!({
                        "projector_columns": measurement_columns_json(cols),
                        "child": protocol_to_json(child),
                    })
                })
                .collect();
            json!({ "party": measurement.party().tag(), "outcomes": outcomes })
        }
    }
}

fn measurement_columns_json(cols: &CMatrix) -> Value {
    Value::Array(cols.column_iter().map(|c| vector_to_json(&c.into_owned())).collect())
}

/// Parse a protocol tree; `loc` names the node in error messages.
pub fn protocol_from_json(v: &Value, tol: f64) -> CliResult<ProtocolTree> {
    node_from_json(v, tol, "root")
}

fn node_from_json(v: &Value, tol: f64, loc: &str) -> CliResult<ProtocolTree> {
    let obj = v
        .as_object()
        .ok_or_else(|| InputError::new("Parse", "expected a protocol node object").at(loc.to_owned()))?;
    if let Some(label) = obj.get("identify") {
        let label = label
            .as_str()
            .ok_or_else(|| InputError::new("Parse", "identify must be a string").at(loc.to_owned()))?;
        return Ok(ProtocolTree::identify(label));
    }
    if let Some(fail) = obj.get("fail") {
        return match fail.as_bool() {
            Some(true) => Ok(ProtocolTree::fail()),
            _ => Err(InputError::new("Parse", "fail leaf must be {\"fail\": true}").at(loc.to_owned())),
        };
    }
    let (measurement, child_values) = measurement_from_json(obj, tol, loc)?;
    let children = child_values
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let c = c.ok_or_else(|| {
                InputError::new("Parse", "outcome has no child").at(format!("{loc}.outcomes[{k}]"))
            })?;
            node_from_json(c, tol, &format!("{loc}.outcomes[{k}].child"))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ProtocolTree::measure(measurement, children))
}

fn measurement_from_json<'a>(
    obj: &'a serde_json::Map<String, Value>,
    tol: f64,
    loc: &str,
) -> CliResult<(ProjectiveMeasurement, Vec<Option<&'a Value>>)> {
    let party = match obj.get("party").and_then(Value::as_str) {
        Some("A") => Party::Alice,
        Some("B") => Party::Bob,
        _ => {
            return Err(InputError::new(
                "Parse",
                "expected \"party\": \"A\" or \"B\", or a leaf {\"identify\": ...} / {\"fail\": true}",
            )
            .at(loc.to_owned()))
        }
    };
    let outcomes = obj
        .get("outcomes")
        .and_then(Value::as_array)
        .ok_or_else(|| InputError::new("Parse", "missing outcomes list").at(loc.to_owned()))?;
    let mut blocks = Vec::with_capacity(outcomes.len());
    let mut children = Vec::with_capacity(outcomes.len());
    for (k, o) in outcomes.iter().enumerate() {
        let oloc = format!("{loc}.outcomes[{k}].projector_columns");
        let cols = o
            .get("projector_columns")
            .and_then(Value::as_array)
            .ok_or_else(|| InputError::new("Parse", "missing projector_columns list").at(oloc.clone()))?;
        let vectors = cols
            .iter()
            .enumerate()
            .map(|(j, c)| vector_from_json(c, &format!("{oloc}[{j}]")))
            .collect::<CliResult<Vec<_>>>()?;
        let rows = vectors.first().map_or(0, |v| v.len());
        if vectors.iter().any(|v| v.len() != rows) {
            return Err(InputError::new("InvalidMeasurement", "columns have different lengths").at(oloc));
        }
        blocks.push(if vectors.is_empty() {
            CMatrix::zeros(0, 0)
        } else {
            CMatrix::from_columns(&vectors)
        });
        children.push(o.get("child"));
    }
    let measurement = ProjectiveMeasurement::new(party, blocks, tol).map_err(|e| InputError::from(e).at(loc.to_owned()))?;
    Ok((measurement, children))
}

/// Measurements for the `user` strategy: a JSON list of measurement nodes
/// without children.
pub fn measurements_from_json(v: &Value, tol: f64) -> CliResult<Vec<ProjectiveMeasurement>> {
    let arr = v
        .as_array()
        .ok_or_else(|| InputError::new("Parse", "expected a list of measurements"))?;
    arr.iter()
        .enumerate()
        .map(|(i, m)| {
            let loc = format!("[{i}]");
            let obj = m
                .as_object()
                .ok_or_else(|| InputError::new("Parse", "expected a measurement object").at(loc.clone()))?;
            Ok(measurement_from_json(obj, tol, &loc)?.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Certificate files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub dims: [usize; 2],
    pub product_vectors: Vec<ProductVectorEntry>,
    pub assignment: Vec<AssignmentEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductVectorEntry {
    pub alice: Vec<[f64; 2]>,
    pub bob: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentEntry {
    pub state: String,
    pub vectors: Vec<usize>,
    pub coefficients: Vec<[f64; 2]>,
}

fn cvec(v: &[[f64; 2]]) -> CVector {
    CVector::from_iterator(v.len(), v.iter().map(|z| C64::new(z[0], z[1])))
}

impl CertificateFile {
    pub fn from_certificate(dims: (usize, usize), c: &Certificate) -> Self {
        Self {
            dims: [dims.0, dims.1],
            product_vectors: c
                .product_vectors
                .iter()
                .map(|p| ProductVectorEntry {
                    alice: p.alice.iter().map(|z| pair(*z)).collect(),
                    bob: p.bob.iter().map(|z| pair(*z)).collect(),
                })
                .collect(),
            assignment: c
                .assignment
                .iter()
                .map(|a| AssignmentEntry {
                    state: a.state.clone(),
                    vectors: a.vectors.clone(),
                    coefficients: a.coefficients.iter().map(|z| pair(*z)).collect(),
                })
                .collect(),
        }
    }

    pub fn to_certificate(&self) -> Certificate {
        Certificate {
            product_vectors: self
                .product_vectors
                .iter()
                .map(|p| ProductVector::new(cvec(&p.alice), cvec(&p.bob)))
                .collect(),
            assignment: self
                .assignment
                .iter()
                .map(|a| AssignedState {
                    state: a.state.clone(),
                    vectors: a.vectors.clone(),
                    coefficients: a.coefficients.iter().map(|z| C64::new(z[0], z[1])).collect(),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// File IO

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| InputError::new("Io", format!("cannot read file: {e}")).at(path.display().to_string()))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        InputError::new("Parse", e.to_string())
            .at(path.display().to_string())
    })
}

pub fn read_ensemble(path: &Path, tol: f64) -> CliResult<(Ensemble, Vec<String>)> {
    let file: EnsembleFile = parse_json(path)?;
    file.to_ensemble(tol).map_err(|e| e.at(path.display().to_string()))
}

pub fn read_protocol(path: &Path, tol: f64) -> CliResult<ProtocolTree> {
    let v: Value = parse_json(path)?;
    protocol_from_json(&v, tol).map_err(|e| e.at(path.display().to_string()))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).expect("in-memory JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| InputError::new("Io", format!("cannot write file: {e}")).at(path.display().to_string()))
}

pub fn write_ensemble(path: &Path, e: &Ensemble) -> CliResult<()> {
    write_json(path, &EnsembleFile::from_ensemble(e))
}

pub fn write_protocol(path: &Path, t: &ProtocolTree) -> CliResult<()> {
    write_json(path, &protocol_to_json(t))
}

/// `dir/name.json` → `dir/name.protocol.json`.
pub fn sibling_protocol_path(ensemble: &Path) -> PathBuf {
    let stem = ensemble.file_stem().map_or_else(|| "ensemble".into(), |s| s.to_string_lossy().into_owned());
    ensemble.with_file_name(format!("{stem}.protocol.json"))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Distinguishable,
    Indistinguishable,
    Unknown,
    Verified,
    NotVerified,
    CertificateAccepted,
    CertificateRejected,
    Ok,
    InputError,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Distinguishable => "distinguishable",
            Self::Indistinguishable => "indistinguishable",
            Self::Unknown => "unknown",
            Self::Verified => "verified",
            Self::NotVerified => "not-verified",
            Self::CertificateAccepted => "certificate-accepted",
            Self::CertificateRejected => "certificate-rejected",
            Self::Ok => "ok",
            Self::InputError => "input-error",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Self::Distinguishable | Self::Verified | Self::CertificateAccepted | Self::Ok => EXIT_POSITIVE,
            Self::Indistinguishable | Self::NotVerified | Self::CertificateRejected => EXIT_NEGATIVE,
            Self::Unknown => EXIT_UNKNOWN,
            Self::InputError => EXIT_INPUT,
        }
    }
}

/// Result of one command before rendering.
#[derive(Clone, Debug)]
pub struct Report {
    pub command: String,
    pub args: Vec<String>,
    pub verdict: Verdict,
    /// One-line summary, identical in text and JSON output.
    pub verdict_line: String,
    pub diagnostics: Value,
    pub config: Value,
    pub notices: Vec<String>,
    pub elapsed_ms: f64,
    /// Human-readable body printed after the verdict line.
    pub text: String,
}

impl Report {
    fn new(verdict: Verdict, summary: impl AsRef<str>) -> Self {
        Self {
            command: String::new(),
            args: Vec::new(),
            verdict,
            verdict_line: format!("verdict: {} ({})", verdict.as_str(), summary.as_ref()),
            diagnostics: json!({}),
            config: json!({}),
            notices: Vec::new(),
            elapsed_ms: 0.0,
            text: String::new(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "schema": SCHEMA_VERSION,
            "command": { "name": self.command, "args": self.args },
            "verdict": self.verdict.as_str(),
            "verdict_line": self.verdict_line,
            "exit_code": self.exit_code(),
            "diagnostics": self.diagnostics,
            "timing": { "elapsed_ms": self.elapsed_ms },
            "config": self.config,
            "notices": self.notices,
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Text => {
                let mut s = format!("{}\n", self.verdict_line);
                s.push_str(&self.text);
                for n in &self.notices {
                    let _ = writeln!(s, "note: {n}");
                }
                let _ = writeln!(s, "time: {:.3} ms", self.elapsed_ms);
                s
            }
        }
    }
}

fn input_error_report(err: &InputError) -> Report {
    let mut r = Report::new(Verdict::InputError, err.to_string());
    r.diagnostics = json!({
        "error": { "kind": err.kind, "message": err.message, "location": err.location }
    });
    r
}

/// What a finished command hands back to `main`.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub report: Option<Report>,
}

/// Parse arguments (including the program name) and run the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    return Outcome {
                        exit_code: 0,
                        stdout: text,
                        stderr: String::new(),
                        report: None,
                    }
                }
                _ => EXIT_INPUT,
            };
            return Outcome {
                exit_code: code,
                stdout: String::new(),
                stderr: text,
                report: None,
            };
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let start = Instant::now();
    let mut report = execute(&cli).unwrap_or_else(|e| input_error_report(&e));
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    report.command = command_name(&cli.command).to_owned();
    report.args = echo;
    let rendered = report.render(cli.format);
    let (stdout, stderr) = if report.verdict == Verdict::InputError && cli.format == Format::Text {
        (String::new(), rendered)
    } else {
        (rendered, String::new())
    };
    Outcome {
        exit_code: report.exit_code(),
        stdout,
        stderr,
        report: Some(report),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Schmidt { .. } => "schmidt",
        Command::Check { .. } => "check",
        Command::Verify { .. } => "verify",
        Command::Search { .. } => "search",
        Command::Example { .. } => "example",
        Command::Random { .. } => "random",
        Command::Certify { .. } => "certify",
    }
}

fn execute(cli: &Cli) -> CliResult<Report> {
    let tol = cli.tolerance.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(InputError::new("InvalidConfig", format!("tolerance {tol} must lie in (0, 1)")).at("--tolerance"));
    }
    let mut report = match &cli.command {
        Command::Schmidt { ensemble } => cmd_schmidt(ensemble, tol)?,
        Command::Check { ensemble, mode, search } => cmd_check(ensemble, *mode, search, tol)?,
        Command::Verify { ensemble, protocol } => cmd_verify(ensemble, protocol, tol)?,
        Command::Search { ensemble, search, output } => cmd_search(ensemble, search, output.as_deref(), tol)?,
        Command::Example { name, output } => cmd_example(name, output.as_deref())?,
        Command::Random {
            dims,
            states,
            seed,
            kind,
            output,
        } => cmd_random(*dims, *states, *seed, *kind, output)?,
        Command::Certify { ensemble, certificate } => cmd_certify(ensemble, certificate, tol)?,
    };
    if let Value::Object(map) = &mut report.config {
        map.insert("tolerance".into(), json!(tol));
    }
    Ok(report)
}

fn search_config(args: &SearchArgs, tol: f64, dims: (usize, usize)) -> CliResult<SearchConfig> {
    let mut cfg = if args.strategy.contains(&Strategy::Exhaustive2d) {
        SearchConfig::exhaustive_2d()
    } else {
        SearchConfig::default()
    };
    cfg.tolerance = tol;
    if !args.strategy.is_empty() {
        cfg.strategies = args.strategy.clone();
    }
    if let Some(d) = args.max_depth {
        cfg.max_depth = d;
    }
    if let Some(b) = args.beam {
        cfg.beam_limit = b;
    }
    if let Some(p) = args.party_order {
        cfg.party_order = p;
    }
    if let Some(n) = args.node_budget {
        cfg.node_budget = n;
    }
    if let Some(path) = &args.measurements {
        let v: Value = parse_json(path)?;
        cfg.user_measurements = measurements_from_json(&v, tol).map_err(|e| e.at(path.display().to_string()))?;
        if !cfg.strategies.contains(&Strategy::UserSupplied) {
            cfg.strategies.push(Strategy::UserSupplied);
        }
    }
    cfg.validate(dims).map_err(|e| InputError::from(e).at("search flags"))?;
    Ok(cfg)
}

fn config_json(cfg: &SearchConfig) -> Value {
    json!({
        "max_depth": cfg.max_depth,
        "strategies": cfg.strategies.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "party_order": cfg.party_order.to_string(),
        "beam_limit": cfg.beam_limit,
        "grid_step": cfg.grid_step,
        "node_budget": cfg.node_budget,
        "user_measurements": cfg.user_measurements.len(),
    })
}

fn stats_json(s: &SearchStats) -> Value {
    json!({
        "nodes_explored": s.nodes_explored,
        "candidates_considered": s.candidates_considered,
        "candidates_valid": s.candidates_valid,
        "memo_hits": s.memo_hits,
        "budget_exhausted": s.budget_exhausted,
    })
}

fn theorem2_json(r: &Theorem2Report) -> Value {
    json!({
        "schmidt_numbers": r.schmidt_numbers,
        "sum": r.sum,
        "capacity": r.capacity,
        "verdict": match r.verdict {
            Theorem2Verdict::ViolatesNecessary => "violates-necessary",
            Theorem2Verdict::Inconclusive => "inconclusive",
        },
        "borderline": r.borderline,
    })
}

fn theorem2_text(r: &Theorem2Report) -> String {
    let rel = if r.sum > r.capacity { ">" } else { "<=" };
    format!(
        "Schmidt numbers {:?}, sum {} {rel} capacity {}\n",
        r.schmidt_numbers, r.sum, r.capacity
    )
}

fn borderline_notices(r: &Theorem2Report) -> Vec<String> {
    r.borderline
        .iter()
        .map(|l| format!("state {l} has a singular value within a factor of ten of the rank cutoff"))
        .collect()
}

/// Indented rendering of a protocol tree.
pub fn render_tree(t: &ProtocolTree) -> String {
    let mut out = String::new();
    render_node(t, 0, &mut out);
    out
}

fn render_node(t: &ProtocolTree, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match t {
        ProtocolTree::Leaf(l) => {
            let _ = writeln!(out, "{pad}{l}");
        }
        ProtocolTree::Measure { measurement, children } => {
            let _ = writeln!(out, "{pad}{} measures ({} outcomes)", measurement.party(), measurement.len());
            for (k, (cols, child)) in measurement.outcomes().iter().zip(children).enumerate() {
                let vectors: Vec<String> = cols.column_iter().map(|c| format_vector(&c.into_owned())).collect();
                let _ = writeln!(out, "{pad}  [{k}] span {{{}}}", vectors.join(", "));
                render_node(child, indent + 2, out);
            }
        }
    }
}

fn format_vector(v: &CVector) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|z| {
            let (re, im) = (clean(z.re), clean(z.im));
            if im == 0.0 {
                format!("{re:.4}")
            } else {
                format!("{re:.4}{im:+.4}i")
            }
        })
        .collect();
    format!("({})", parts.join(", "))
}

fn clean(x: f64) -> f64 {
    if x.abs() < 5e-13 {
        0.0
    } else {
        x
    }
}

fn cmd_schmidt(path: &Path, tol: f64) -> CliResult<Report> {
    let (e, notices) = read_ensemble(path, tol)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    let mut numbers = Vec::new();
    let mut warn = Vec::new();
    for (s, label) in e.states().iter().zip(e.labels()) {
        let d = s.schmidt().map_err(|err| InputError::from(err).at(format!("state {label}")))?;
        numbers.push(d.schmidt_number);
        if d.borderline {
            warn.push(format!("state {label} has a singular value within a factor of ten of the rank cutoff"));
        }
        let weights: Vec<String> = d.weights.iter().map(|w| format!("{w:.6}")).collect();
        let _ = writeln!(
            text,
            "{label}: Schmidt number {}, weights [{}]",
            d.schmidt_number,
            weights.join(", ")
        );
        rows.push(json!({
            "name": label,
            "schmidt_number": d.schmidt_number,
            "weights": d.weights,
            "singular_values": d.singular_values,
            "borderline": d.borderline,
        }));
    }
    let mut r = Report::new(Verdict::Ok, format!("{} states, Schmidt numbers {numbers:?}", e.len()));
    r.diagnostics = json!({ "dims": [e.dim_a(), e.dim_b()], "states": rows });
    r.text = text;
    r.notices = notices;
    r.notices.extend(warn);
    Ok(r)
}

fn cmd_check(path: &Path, mode: Mode, args: &SearchArgs, tol: f64) -> CliResult<Report> {
    let (e, notices) = read_ensemble(path, tol)?;
    let t2 = theorem2_check(&e);
    let mut r = match mode {
        Mode::Necessary => {
            let mut r = match t2.verdict {
                Theorem2Verdict::ViolatesNecessary => Report::new(
                    Verdict::Indistinguishable,
                    format!("Schmidt-number sum {} > capacity {}", t2.sum, t2.capacity),
                ),
                Theorem2Verdict::Inconclusive => Report::new(
                    Verdict::Unknown,
                    format!(
                        "Schmidt-number sum {} <= capacity {}; the necessary condition is inconclusive",
                        t2.sum, t2.capacity
                    ),
                ),
            };
            r.diagnostics = json!({ "theorem2": theorem2_json(&t2) });
            r.text = theorem2_text(&t2);
            r.config = json!({ "mode": "necessary" });
            r
        }
        Mode::Classify2x2 => {
            let c = classify_2x2(&e).map_err(|err| InputError::from(err).at(path.display().to_string()))?;
            let mut r = match &c {
                Classification2x2::Distinguishable { protocol, method } => {
                    let verification = verify_protocol(protocol, &e, tol)?;
                    let mut r = Report::new(Verdict::Distinguishable, format!("2x2 classification; protocol by {method}"));
                    r.diagnostics = json!({
                        "theorem2": theorem2_json(&t2),
                        "method": method,
                        "protocol": protocol_to_json(protocol),
                        "verification": verification_json(&verification),
                    });
                    r.text = format!("{}protocol:\n{}", theorem2_text(&t2), render_tree(protocol));
                    r
                }
                Classification2x2::Indistinguishable { reason, theorem2 } => {
                    let mut r = Report::new(Verdict::Indistinguishable, format!("2x2 classification: {reason}"));
                    r.diagnostics = json!({ "theorem2": theorem2_json(theorem2), "reason": reason });
                    r.text = theorem2_text(theorem2);
                    r
                }
            };
            r.config = json!({ "mode": "classify2x2" });
            r
        }
        Mode::Full => {
            let cfg = search_config(args, tol, e.dims())?;
            let result = search_protocol(&e, &cfg)?;
            let mut r = search_report(&e, &result.outcome, &result.stats, tol)?;
            r.config = config_json(&cfg);
            if let Value::Object(map) = &mut r.config {
                map.insert("mode".into(), json!("full"));
            }
            r
        }
    };
    r.notices = notices;
    r.notices.extend(borderline_notices(&t2));
    Ok(r)
}

fn search_report(e: &Ensemble, outcome: &SearchOutcome, stats: &SearchStats, tol: f64) -> CliResult<Report> {
    let t2 = theorem2_check(e);
    Ok(match outcome {
        SearchOutcome::Yes(tree) => {
            let verification = verify_protocol(tree, e, tol)?;
            let mut r = Report::new(
                Verdict::Distinguishable,
                format!("protocol found with {} rounds and {} leaves", tree.depth(), tree.leaf_count()),
            );
            r.diagnostics = json!({
                "theorem2": theorem2_json(&t2),
                "protocol": protocol_to_json(tree),
                "verification": verification_json(&verification),
                "search": stats_json(stats),
            });
            r.text = format!("{}protocol:\n{}", theorem2_text(&t2), render_tree(tree));
            r
        }
        SearchOutcome::ProvedNo(report) => {
            let mut r = Report::new(
                Verdict::Indistinguishable,
                format!("Schmidt-number sum {} > capacity {}", report.sum, report.capacity),
            );
            r.diagnostics = json!({ "theorem2": theorem2_json(report), "search": stats_json(stats) });
            r.text = theorem2_text(report);
            r
        }
        SearchOutcome::Unknown { depth, nodes_explored } => {
            let mut r = Report::new(
                Verdict::Unknown,
                format!("no protocol found within depth {depth} after {nodes_explored} search nodes"),
            );
            r.diagnostics = json!({ "theorem2": theorem2_json(&t2), "search": stats_json(stats) });
            r.text = format!(
                "{}search: {} nodes, {} candidates considered, {} valid{}\n",
                theorem2_text(&t2),
                stats.nodes_explored,
                stats.candidates_considered,
                stats.candidates_valid,
                if stats.budget_exhausted { ", node budget exhausted" } else { "" }
            );
            r
        }
    })
}

fn verification_json(v: &crate::protocol::VerificationReport) -> Value {
    json!({
        "success": v.success,
        "completeness_deviation": v.completeness_deviation,
        "tolerance": v.tolerance,
        "labels": v.labels,
        "identification": v.identification,
        "leaves": v.leaves.iter().map(|l| json!({
            "path": l.path,
            "leaf": match &l.leaf {
                Leaf::Identify(s) => json!({ "identify": s }),
                Leaf::Fail => json!({ "fail": true }),
            },
            "probabilities": l.probabilities,
            "issue": l.issue,
        })).collect::<Vec<_>>(),
        "issues": v.issues,
    })
}

fn verification_text(v: &crate::protocol::VerificationReport) -> String {
    let mut s = format!("completeness deviation {:.3e}\n", v.completeness_deviation);
    let width = v.leaves.iter().map(|l| l.path.len()).max().unwrap_or(4).max(4);
    let heads: Vec<String> = v.labels.iter().map(|l| format!("{:>w$}", l, w = l.len().max(8))).collect();
    let _ = writeln!(s, "{:width$}  {:14}  {}", "path", "leaf", heads.join("  "));
    for l in &v.leaves {
        let probs: Vec<String> = l
            .probabilities
            .iter()
            .zip(&v.labels)
            .map(|(p, label)| format!("{:>w$.6}", p, w = label.len().max(8)))
            .collect();
        let _ = write!(s, "{:width$}  {:14}  {}", l.path, l.leaf.to_string(), probs.join("  "));
        if let Some(issue) = &l.issue {
            let _ = write!(s, "  <- {issue}");
        }
        s.push('\n');
    }
    for (label, p) in v.labels.iter().zip(&v.identification) {
        let _ = writeln!(s, "{label} identified with probability {p:.12}");
    }
    s
}

fn cmd_verify(ensemble: &Path, protocol: &Path, tol: f64) -> CliResult<Report> {
    let (e, notices) = read_ensemble(ensemble, tol)?;
    let tree = read_protocol(protocol, tol)?;
    tree.check(e.dims()).map_err(|err| InputError::from(err).at(protocol.display().to_string()))?;
    let v = verify_protocol(&tree, &e, tol)?;
    let mut r = if v.success {
        Report::new(Verdict::Verified, "every state is identified with certainty")
    } else {
        let first = v.issues.first().cloned().unwrap_or_default();
        Report::new(Verdict::NotVerified, first)
    };
    r.diagnostics = json!({ "verification": verification_json(&v) });
    r.text = verification_text(&v);
    r.notices = notices;
    Ok(r)
}

fn cmd_search(path: &Path, args: &SearchArgs, output: Option<&Path>, tol: f64) -> CliResult<Report> {
    let (e, notices) = read_ensemble(path, tol)?;
    let cfg = search_config(args, tol, e.dims())?;
    let result = search_protocol(&e, &cfg)?;
    let mut r = search_report(&e, &result.outcome, &result.stats, tol)?;
    if let SearchOutcome::Yes(tree) = &result.outcome {
        let out = output.map_or_else(|| sibling_protocol_path(path), Path::to_path_buf);
        write_protocol(&out, tree)?;
        if let Value::Object(map) = &mut r.diagnostics {
            map.insert("protocol_file".into(), json!(out.display().to_string()));
        }
        let _ = writeln!(r.text, "protocol written to {}", out.display());
    }
    r.config = config_json(&cfg);
    r.notices = notices;
    r.notices.extend(borderline_notices(&theorem2_check(&e)));
    Ok(r)
}

/// Bundled protocol for a built-in ensemble, if any.
fn example_protocol(name: &str) -> Option<&'static str> {
    match name {
        "six4x4" => Some("six4x4"),
        "bell2" => Some("bell2-x"),
        _ => None,
    }
}

fn cmd_example(name: &str, output: Option<&Path>) -> CliResult<Report> {
    let e = canned_example(name).map_err(|err| InputError::from(err).at("example name"))?;
    let out = output.map_or_else(|| PathBuf::from(format!("{name}.json")), Path::to_path_buf);
    write_ensemble(&out, &e)?;
    let mut files = vec![out.display().to_string()];
    if let Some(p) = example_protocol(name) {
        let tree = canned_protocol(p)?;
        let pout = sibling_protocol_path(&out);
        write_protocol(&pout, &tree)?;
        files.push(pout.display().to_string());
    }
    let mut r = Report::new(Verdict::Ok, format!("wrote example {name} with {} states", e.len()));
    r.text = files.iter().map(|f| format!("wrote {f}\n")).collect();
    r.diagnostics = json!({ "example": name, "states": e.len(), "dims": [e.dim_a(), e.dim_b()], "files": files });
    Ok(r)
}

fn cmd_random(dims: (usize, usize), m: usize, seed: u64, kind: RandomKind, output: &Path) -> CliResult<Report> {
    let e = random_ensemble(dims.0, dims.1, m, seed, kind).map_err(|err| InputError::from(err).at("random flags"))?;
    write_ensemble(output, &e)?;
    let mut r = Report::new(
        Verdict::Ok,
        format!("wrote {m} {kind} states on {}x{} with seed {seed}", dims.0, dims.1),
    );
    r.text = format!("wrote {}\n", output.display());
    r.diagnostics = json!({ "file": output.display().to_string(), "states": m, "dims": [dims.0, dims.1] });
    r.config = json!({ "seed": seed, "kind": kind.to_string() });
    Ok(r)
}

fn cmd_certify(ensemble: &Path, certificate: &Path, tol: f64) -> CliResult<Report> {
    let (e, notices) = read_ensemble(ensemble, tol)?;
    let file: CertificateFile = parse_json(certificate)?;
    if file.dims != [e.dim_a(), e.dim_b()] {
        return Err(InputError::new(
            "DimensionMismatch",
            format!("certificate is for {:?}, ensemble is {}x{}", file.dims, e.dim_a(), e.dim_b()),
        )
        .at(format!("{}: dims", certificate.display())));
    }
    let cfg = SearchConfig {
        tolerance: tol,
        ..SearchConfig::default()
    };
    let mut r = match certificate_check_with(&e, &file.to_certificate(), &cfg) {
        Ok(report) => {
            let mut r = Report::new(
                Verdict::CertificateAccepted,
                format!(
                    "{} product vectors form a locally distinguishable set covering every state",
                    file.product_vectors.len()
                ),
            );
            r.diagnostics = json!({
                "reconstruction_errors": report.reconstruction_errors,
                "max_vector_overlap": report.max_vector_overlap,
                "protocol": protocol_to_json(&report.protocol),
                "verification": verification_json(&report.verification),
            });
            r.text = format!("protocol:\n{}", render_tree(&report.protocol));
            r
        }
        Err(err @ Error::DimensionMismatch { .. }) => return Err(InputError::from(err).at(certificate.display().to_string())),
        Err(err) => {
            let mut r = Report::new(Verdict::CertificateRejected, err.to_string());
            r.diagnostics = json!({ "error": { "kind": err.kind(), "message": err.to_string() } });
            r
        }
    };
    r.notices = notices;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EXAMPLE_NAMES;

    #[test]
    fn ensemble_file_round_trips_exactly() {
        for name in EXAMPLE_NAMES {
            let e = canned_example(name).unwrap();
            let file = EnsembleFile::from_ensemble(&e);
            let text = serde_json::to_string(&file).unwrap();
            let back: EnsembleFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back, file);
            let (e2, notices) = back.to_ensemble(DEFAULT_TOL).unwrap();
            assert!(notices.is_empty());
            for (a, b) in e.states().iter().zip(e2.states()) {
                assert_eq!(a.amplitudes(), b.amplitudes());
            }
        }
    }

    #[test]
    fn protocol_json_round_trips_exactly() {
        for name in ["six4x4", "bell2-x"] {
            let t = canned_protocol(name).unwrap();
            let text = serde_json::to_string(&protocol_to_json(&t)).unwrap();
            let back = protocol_from_json(&serde_json::from_str(&text).unwrap(), DEFAULT_TOL).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn ragged_amplitudes_report_location() {
        let file = EnsembleFile {
            dims: [2, 2],
            states: vec![StateEntry {
                name: "s".into(),
                amplitudes: vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0]]],
            }],
        };
        let err = file.to_ensemble(DEFAULT_TOL).unwrap_err();
        assert_eq!(err.location.as_deref(), Some("states[0].amplitudes[1]"));
    }

    #[test]
    fn unnormalized_input_gives_notice() {
        let file = EnsembleFile {
            dims: [1, 2],
            states: vec![StateEntry {
                name: "s".into(),
                amplitudes: vec![vec![[1.0, 0.0], [1.0, 0.0]]],
            }],
        };
        let (_, notices) = file.to_ensemble(DEFAULT_TOL).unwrap();
        assert_eq!(notices.len(), 1);
    }

    #[test]
    fn non_orthonormal_projector_is_rejected() {
        let v = json!({
            "party": "A",
            "outcomes": [
                { "projector_columns": [[[1.0, 0.0], [0.0, 0.0]]], "child": { "fail": true } },
                { "projector_columns": [[[0.6, 0.0], [0.8, 0.0]]], "child": { "fail": true } },
            ]
        });
        let err = protocol_from_json(&v, DEFAULT_TOL).unwrap_err();
        assert_eq!(err.kind, "InvalidMeasurement");
        assert_eq!(err.location.as_deref(), Some("root"));
    }

    #[test]
    fn nested_parse_error_names_the_node() {
        let v = json!({
            "party": "B",
            "outcomes": [
                { "projector_columns": [[[1.0, 0.0], [0.0, 0.0]]], "child": { "identify": "x" } },
                { "projector_columns": [[[0.0, 0.0], [1.0, 0.0]]], "child": { "party": "C" } },
            ]
        });
        let err = protocol_from_json(&v, DEFAULT_TOL).unwrap_err();
        assert_eq!(err.location.as_deref(), Some("root.outcomes[1].child"));
    }

    #[test]
    fn dims_flag_parses() {
        assert_eq!(parse_dims("3x4"), Ok((3, 4)));
        assert!(parse_dims("3").is_err());
    }

    #[test]
    fn verdict_exit_codes() {
        assert_eq!(Verdict::Distinguishable.exit_code(), 0);
        assert_eq!(Verdict::Indistinguishable.exit_code(), 1);
        assert_eq!(Verdict::NotVerified.exit_code(), 1);
        assert_eq!(Verdict::Unknown.exit_code(), 2);
        assert_eq!(Verdict::InputError.exit_code(), 3);
    }

    #[test]
    fn bad_flags_exit_3() {
        let out = run(["locc", "check", "x.json", "--mode", "sideways"]);
        assert_eq!(out.exit_code, 3);
        let out = run(["locc", "--help"]);
        assert_eq!(out.exit_code, 0);
    }
}
