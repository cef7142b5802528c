//! Deterministic JSON and CSV emission.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use serde_json::{Number, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Float formatting shared by JSON and CSV: 17 significant digits, with the
/// exponent sign always written (the form serde_json keeps verbatim).
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.16e}");
    match s.split_once('e') {
        Some((m, e)) if !e.starts_with('-') => format!("{m}e+{e}"),
        _ => s,
    }
}

/// Rewrite every non-integer number with [`fmt_f64`].
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            Value::Number(fmt_f64(f).parse::<Number>().expect("formatted float parses"))
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// `{"schema_version", "command", "problem", "result"}` as pretty JSON.
pub fn envelope(command: &str, problem: &str, result: Value) -> String {
    let v = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "problem": problem,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&canonicalize(v)).expect("JSON values serialize");
    s.push('\n');
    s
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        let mut text = header.join(",");
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell<'a> {
    F(f64),
    I(usize),
    S(&'a str),
}

impl Cell<'_> {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_f64(*v),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.to_string(),
        }
    }
}

/// Write to `<dir>/<name>` or to stdout.
pub fn emit(out: Option<&PathBuf>, name: &str, text: &str) -> io::Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)
        }
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}
