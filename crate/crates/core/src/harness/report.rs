//! Self-describing CSV and JSON artifacts.
//!
//! Every artifact carries the command name, the master seed and the fully
//! resolved configuration: JSON reports as top-level fields, CSV files as
//! leading `#` comment lines.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};

/// Pretty JSON document `{command, seed, config, result}` with a trailing
/// newline.
pub fn json_artifact(command: &str, seed: u64, config: &impl Serialize, result: &impl Serialize) -> Result<String> {
    let doc = json!({
        "command": command,
        "seed": seed,
        "config": config,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Accumulates CSV rows under a provenance preamble.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, header: &[&str]) -> Result<Self> {
        let config = serde_json::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
        let text = format!("# command: {command}\n# seed: {seed}\n# config: {config}\n{}\n", header.join(","));
        Ok(Csv {
            text,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "CSV row width");
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Shortest round-trip rendering of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_preamble_and_rows() {
        let mut c = Csv::new("demo", 7, &json!({"a": 1}), &["x", "y"]).unwrap();
        c.row(&[num(0.5), num(2.0)]);
        assert_eq!(c.finish(), "# command: demo\n# seed: 7\n# config: {\"a\":1}\nx,y\n0.5,2\n");
    }

    #[test]
    fn json_has_provenance() {
        let s = json_artifact("cost", 3, &json!({"k": 1}), &json!([1, 2])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["seed"], 3);
        assert_eq!(v["config"]["k"], 1);
        assert_eq!(v["command"], "cost");
        assert!(s.ends_with('\n'));
    }
}
