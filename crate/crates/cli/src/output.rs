//! Self-describing output files: CSV with a hash comment and header row,
//! JSON-lines snapshots with a header record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lieflow::liecore::CMat;
use serde_json::{json, Value};

use crate::CliError;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub struct OutDir {
    pub dir: PathBuf,
    pub hash: String,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path, hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(OutDir { dir: dir.to_path_buf(), hash: hash.to_string(), written: Vec::new() })
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| io(&path, e))?;
        self.written.push(name.to_string());
        Ok((path, BufWriter::new(f)))
    }

    /// `# config_hash=...`, then the header, then one row per record.
    pub fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let (path, mut w) = self.open(name)?;
        let mut body = format!("# config_hash={}\n{}\n", self.hash, columns.join(","));
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
            body.push_str(&cells.join(","));
            body.push('\n');
        }
        w.write_all(body.as_bytes()).map_err(|e| io(&path, e))?;
        w.flush().map_err(|e| io(&path, e))
    }

    /// Header record, then `{"t", "x", "m"}` per sample with `m` the row-major
    /// list of `[re, im]` pairs.
    pub fn field_jsonl(
        &mut self,
        name: &str,
        kind: &str,
        size: usize,
        snapshots: &[(f64, &[f64], &[CMat])],
    ) -> Result<(), CliError> {
        let (path, mut w) = self.open(name)?;
        let header = json!({
            "config_hash": self.hash,
            "kind": kind,
            "columns": ["t", "x", "m"],
            "matrix_size": size,
            "layout": "row-major [re, im] pairs",
        });
        writeln!(w, "{header}").map_err(|e| io(&path, e))?;
        for (t, xs, values) in snapshots {
            for (x, m) in xs.iter().zip(values.iter()) {
                let rec = json!({ "t": t, "x": x, "m": matrix_json(m) });
                writeln!(w, "{rec}").map_err(|e| io(&path, e))?;
            }
        }
        w.flush().map_err(|e| io(&path, e))
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let (path, mut w) = self.open(name)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(text.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| io(&path, e))?;
        w.flush().map_err(|e| io(&path, e))
    }

    /// A matplotlib script that plots every column of `csv` against the first.
    pub fn plot_script(&mut self, csv: &str) -> Result<(), CliError> {
        let stem = csv.trim_end_matches(".csv");
        let script = format!(
            r##"# Plots every scalar series in {csv} against its first column.
import csv
import matplotlib.pyplot as plt

with open("{csv}") as f:
    rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
header, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
t = [r[0] for r in data]
for k, name in enumerate(header[1:], start=1):
    plt.plot(t, [r[k] for r in data], label=name)
plt.xlabel(header[0])
plt.legend()
plt.savefig("{stem}.png", dpi=120)
"##
        );
        let name = format!("plot_{stem}.py");
        let (path, mut w) = self.open(&name)?;
        w.write_all(script.as_bytes()).map_err(|e| io(&path, e))?;
        w.flush().map_err(|e| io(&path, e))
    }
}

pub fn matrix_json(m: &CMat) -> Value {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(json!([m[(r, c)].re, m[(r, c)].im]));
        }
    }
    Value::Array(out)
}

/// Matrix samples from a JSON-lines file in the format written by
/// [`OutDir::field_jsonl`]; records of the first time are used.
pub fn read_field_jsonl(path: &Path, size: usize) -> Result<Vec<CMat>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut first_t: Option<f64> = None;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let Some(m) = v.get("m") else { continue };
        let t = v.get("t").and_then(Value::as_f64).unwrap_or(0.0);
        if *first_t.get_or_insert(t) != t {
            break;
        }
        let entries = m.as_array().ok_or_else(|| bad("'m' is not an array".into()))?;
        if entries.len() != size * size {
            return Err(bad(format!("expected {} entries, got {}", size * size, entries.len())));
        }
        let mut mat = CMat::zeros(size, size);
        for (k, e) in entries.iter().enumerate() {
            let pair = e.as_array().filter(|p| p.len() == 2).ok_or_else(|| bad("entries must be [re, im]".into()))?;
            let re = pair[0].as_f64().ok_or_else(|| bad("non-numeric entry".into()))?;
            let im = pair[1].as_f64().ok_or_else(|| bad("non-numeric entry".into()))?;
            mat[(k / size, k % size)] = lieflow::liecore::C64::new(re, im);
        }
        out.push(mat);
    }
    Ok(out)
}
