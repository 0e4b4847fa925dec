//! Run reports and their text rendering.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub tool_version: String,
    /// Everything needed to rerun the command.
    pub inputs: Value,
    /// SHA-256 of the canonical JSON of `inputs`.
    pub inputs_digest: String,
    pub outputs: Value,
    pub metrics: Value,
}

impl RunReport {
    pub fn new(command: &str, inputs: Value, outputs: Value, metrics: Value) -> Self {
        RunReport {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            inputs_digest: sha256_hex(inputs.to_string().as_bytes()),
            inputs,
            outputs,
            metrics,
        }
    }

    pub fn render(&self, format: OutputFormat) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        match format {
            OutputFormat::Json => serde_json::to_string_pretty(&v).expect("report serializes") + "\n",
            OutputFormat::Table => render_table(&v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("-".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(a) if a.iter().all(|x| !x.is_array() && !x.is_object()) => {
            Some(format!("[{}]", a.iter().map(|x| scalar(x).unwrap()).collect::<Vec<_>>().join(", ")))
        }
        _ => None,
    }
}

/// Rows of objects whose fields all render as scalars, with a shared key set.
fn as_rows(a: &[Value]) -> Option<(Vec<String>, Vec<&Map<String, Value>>)> {
    let first = a.first()?.as_object()?;
    let cols: Vec<String> = first.keys().cloned().collect();
    let mut rows = Vec::new();
    for v in a {
        let o = v.as_object()?;
        if o.keys().ne(first.keys()) || o.values().any(|x| scalar(x).is_none()) {
            return None;
        }
        rows.push(o);
    }
    Some((cols, rows))
}

fn walk(path: &str, v: &Value, lines: &mut Vec<(String, String)>, blocks: &mut Vec<String>) {
    if let Some(s) = scalar(v) {
        lines.push((path.to_string(), s));
        return;
    }
    match v {
        Value::Object(o) => {
            for (k, x) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                walk(&p, x, lines, blocks);
            }
        }
        Value::Array(a) => {
            if let Some((cols, rows)) = as_rows(a) {
                blocks.push(column_table(path, &cols, &rows));
            } else {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{path}.{i}"), x, lines, blocks);
                }
            }
        }
        _ => unreachable!("scalars handled above"),
    }
}

fn column_table(path: &str, cols: &[String], rows: &[&Map<String, Value>]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| scalar(&r[c]).unwrap()).collect())
        .collect();
    let width: Vec<usize> = (0..cols.len())
        .map(|i| cells.iter().map(|r| r[i].len()).chain([cols[i].len()]).max().unwrap())
        .collect();
    let line = |row: &[String]| {
        row.iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = format!("[{path}]\n{}\n", line(cols));
    for r in &cells {
        out += &line(r);
        out.push('\n');
    }
    out
}

/// Key/value lines for every scalar leaf, then one aligned table per array
/// of uniform flat records.
pub fn render_table(v: &Value) -> String {
    let mut lines = Vec::new();
    let mut blocks = Vec::new();
    walk("", v, &mut lines, &mut blocks);
    let w = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, val) in &lines {
        out += &format!("{k:<w$}  {val}\n");
    }
    for b in blocks {
        out.push('\n');
        out += &b;
    }
    out
}
