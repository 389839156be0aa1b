use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub command: Vec<String>,
    /// SHA-256 over the argument list and every input file read.
    pub inputs_digest: String,
    pub sections: BTreeMap<String, Value>,
}

#[derive(Debug, Default)]
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn new(args: &[String]) -> Self {
        let mut h = Sha256::new();
        for a in args {
            h.update(a.as_bytes());
            h.update([0u8]);
        }
        Self(h)
    }

    pub fn add(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    pub fn finish(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Aligned-column rendering: arrays of flat objects become tables,
    /// everything else is listed as `key: value`.
    pub fn to_text(&self) -> String {
        let mut out = format!("command: {}\ninputs: {}\n", self.command.join(" "), self.inputs_digest);
        for (name, value) in &self.sections {
            out.push_str(&format!("\n[{name}]\n"));
            render(value, "", &mut out);
        }
        out
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn is_flat(v: &Value) -> bool {
    matches!(v, Value::Object(m) if m.values().all(|x| !x.is_object() && !x.is_array()))
}

fn render(value: &Value, indent: &str, out: &mut String) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::Object(_) => {
                        out.push_str(&format!("{indent}{k}:\n"));
                        render(v, &format!("{indent}  "), out);
                    }
                    Value::Array(items) if !items.is_empty() && items.iter().all(is_flat) => {
                        out.push_str(&format!("{indent}{k}:\n"));
                        table(items, &format!("{indent}  "), out);
                    }
                    _ => out.push_str(&format!("{indent}{k}: {}\n", scalar(v))),
                }
            }
        }
        Value::Array(items) if items.iter().all(is_flat) => table(items, indent, out),
        other => out.push_str(&format!("{indent}{}\n", scalar(other))),
    }
}

fn table(rows: &[Value], indent: &str, out: &mut String) {
    let mut columns: Vec<String> = Vec::new();
    for r in rows {
        if let Value::Object(m) = r {
            for k in m.keys() {
                if !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| columns.iter().map(|c| r.get(c).map_or("-".into(), scalar)).collect())
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| cells.iter().map(|r| r[i].len()).max().unwrap_or(0).max(c.len()))
        .collect();
    let line = |vals: &[String]| {
        let parts: Vec<String> = vals
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}"))
            .collect();
        format!("{indent}{}\n", parts.join("  "))
    };
    out.push_str(&line(&columns));
    for r in &cells {
        out.push_str(&line(r));
    }
}
