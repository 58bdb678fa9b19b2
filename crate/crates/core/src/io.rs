//! Reading compositional data sets and writing reproducible reports.
//!
//! Every artifact written here starts with the library version and the run
//! configuration: `# ndd <version>` and `# config: <json>` lines in CSV and
//! text files, `version` and `config` fields in JSON. Floats are written in
//! shortest round-trip form, so reading an artifact back yields the same
//! bits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionMatrix, ROW_SUM_TOL};
use crate::error::{Error, Result};
use crate::ndd::{Criterion, FitResult};
use crate::tree::serialize_tree;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestOptions {
    /// Divide every row by its sum.
    pub close: bool,
    /// Replace zero cells by this value and shrink the others to keep the
    /// row closed.
    pub zero_replace: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Where the data came from.
    pub source: String,
    pub data: CompositionMatrix,
    /// Human-readable record of every change made to the raw values.
    pub actions: Vec<String>,
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    ingest_reader(file, &path.display().to_string(), opts)
}

/// Parses CSV with a mandatory header row. Lines starting with `#` are
/// skipped.
pub fn ingest_reader<R: Read>(reader: R, source: &str, opts: &IngestOptions) -> Result<Dataset> {
    if let Some(eps) = opts.zero_replace {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "zero replacement value must lie in (0, 1), got {eps}"
            )));
        }
    }
    let parse_error = |line: usize, column: usize, message: String| Error::DataParse {
        path: source.to_string(),
        line,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.len() < 2 {
        return Err(parse_error(1, 1, "at least two columns are required".into()));
    }
    if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
        return Err(Error::DuplicateLabel(dup.1.clone()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != names.len() {
            return Err(parse_error(
                line,
                record.len().min(names.len()) + 1,
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_error(line, j + 1, format!("`{field}` is not a number")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(parse_error(
                        line,
                        j + 1,
                        format!("`{field}` is not a finite non-negative number"),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(parse_error(2, 1, "no data rows".into()));
    }

    let mut actions = Vec::new();
    let zeros: Vec<String> = rows
        .iter()
        .zip(&lines)
        .flat_map(|(row, &line)| {
            row.iter()
                .zip(&names)
                .filter(|(v, _)| **v == 0.0)
                .map(move |(_, name)| format!("line {line} column {name}"))
        })
        .collect();
    if !zeros.is_empty() && opts.zero_replace.is_none() {
        return Err(Error::ZeroComponent(zeros));
    }

    for (i, row) in rows.iter_mut().enumerate() {
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::RowSum { row: i + 1, sum });
        }
        if opts.close {
            row.iter_mut().for_each(|v| *v /= sum);
        } else if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowSum { row: i + 1, sum });
        }
    }
    if opts.close {
        actions.push("closed every row to sum 1".to_string());
    }

    if let Some(eps) = opts.zero_replace {
        let mut replaced = 0;
        for row in &mut rows {
            let k = row.iter().filter(|&&v| v == 0.0).count();
            if k == 0 {
                continue;
            }
            let total: f64 = row.iter().sum();
            let shrink = (1.0 - k as f64 * eps) / total;
            if !(shrink > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "zero replacement {eps} leaves no mass for the non-zero cells"
                )));
            }
            for v in row.iter_mut() {
                *v = if *v == 0.0 { eps } else { *v * shrink };
            }
            replaced += k;
        }
        if replaced > 0 {
            actions.push(format!(
                "replaced {replaced} zero cells by {eps} and rescaled the other cells of those rows"
            ));
        }
    }

    let n = rows.len();
    let p = names.len();
    let values = Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).expect("rectangular rows");
    let data = CompositionMatrix::new(names, values).map_err(|e| match e {
        Error::Boundary { row, component, value } => Error::Boundary {
            row: lines[row],
            component,
            value,
        },
        e => e,
    })?;
    Ok(Dataset {
        source: source.to_string(),
        data,
        actions,
    })
}

/// Settings of one run, echoed into every artifact it writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<String>,
    pub tree: Option<String>,
    pub criterion: Criterion,
    pub seed: u64,
    pub n: Option<usize>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub close: bool,
    pub zero_replace: Option<f64>,
    pub threads: usize,
    pub out: Option<String>,
    /// Changes applied to the data on ingestion.
    pub actions: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mle = crate::dirichlet::MleOptions::default();
        Self {
            command: String::new(),
            data: None,
            tree: None,
            criterion: Criterion::Loglik,
            seed: 1,
            n: None,
            grad_tol: mle.grad_tol,
            max_iter: mle.max_iter,
            close: false,
            zero_replace: None,
            threads: 1,
            out: None,
            actions: Vec::new(),
        }
    }
}

impl RunConfig {
    /// `# ndd <version>` and `# config: <json>` lines.
    pub fn header(&self) -> String {
        format!(
            "# ndd {VERSION}\n# config: {}\n",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}

/// Shortest decimal form that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e16 {
        format!("{v:.1}")
    } else {
        format!("{v:?}")
    }
}

/// A table with a header row, written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// The data matrix as a table with its column names.
    pub fn from_matrix(x: &CompositionMatrix) -> Self {
        let mut t = Table::new(x.names().iter().cloned());
        for row in x.values().rows() {
            t.push(row.iter().map(|&v| Cell::Num(v)).collect());
        }
        t
    }

    pub fn write_csv<W: Write>(&self, out: W, config: &RunConfig) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(config.header().as_bytes())?;
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, config: &RunConfig) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, config).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Plain text artifact (tree text, search trace) with the header lines.
pub fn text_artifact(body: &str, config: &RunConfig) -> String {
    let mut s = config.header();
    s.push_str(body);
    if !body.ends_with('\n') {
        s.push('\n');
    }
    s
}

struct OrderedMap<'a>(&'a [(String, f64)]);

impl Serialize for OrderedMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

/// JSON summary of a fit: tree text, α by node name in tree order,
/// likelihood and information criteria, convergence, plus version and
/// configuration.
pub fn fit_report(fit: &FitResult, criterion: Criterion, config: &RunConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Report<'a> {
        version: &'static str,
        config: &'a RunConfig,
        tree: String,
        alpha: OrderedMap<'a>,
        standard_errors: OrderedMap<'a>,
        loglik: f64,
        aic: f64,
        bic: f64,
        q: usize,
        n: usize,
        criterion: Criterion,
        criterion_value: f64,
        converged: bool,
        iterations: usize,
    }
    let tree = fit.model.tree();
    let alpha: Vec<(String, f64)> = fit
        .model
        .params()
        .iter()
        .map(|(id, a)| (tree.name(id).to_string(), a))
        .collect();
    let se: Vec<(String, f64)> = fit
        .standard_errors()
        .into_iter()
        .map(|(id, s)| (tree.name(id).to_string(), s))
        .collect();
    let report = Report {
        version: VERSION,
        config,
        tree: serialize_tree(tree, Some(fit.model.params())),
        alpha: OrderedMap(&alpha),
        standard_errors: OrderedMap(&se),
        loglik: fit.loglik,
        aic: fit.aic,
        bic: fit.bic,
        q: fit.q,
        n: fit.n,
        criterion,
        criterion_value: fit.criterion(criterion),
        converged: fit.converged,
        iterations: fit.iterations,
    };
    let mut s = serde_json::to_string_pretty(&report)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// One line per event of a search trace, with header lines.
pub fn trace_artifact(trace: &crate::search::SearchTrace, config: &RunConfig) -> String {
    let mut body = String::new();
    for e in &trace.events {
        let _ = writeln!(body, "{e}");
    }
    text_artifact(&body, config)
}
