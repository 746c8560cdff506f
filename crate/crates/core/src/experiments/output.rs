//! Provenance-stamped CSV, JSON and SVG writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex characters of the config digest kept in output files.
const HASH_CHARS: usize = 16;

/// Tool version, config digest and root seed carried by every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Self {
            tool: "posym".into(),
            version: TOOL_VERSION.into(),
            config_hash: config_hash(config)?,
            seed,
        })
    }

    /// `posym <version> config=<hash> seed=<seed>`
    pub fn line(&self) -> String {
        format!(
            "{} {} config={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// SHA-256 of the config's JSON form, truncated.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(hex[..HASH_CHARS].to_string())
}

/// Plain CSV table: header plus string cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV bytes, LF line endings, preceded by a `# <provenance>` line.
    pub fn to_csv(&self, prov: &Provenance) -> Result<Vec<u8>> {
        let mut out = format!("# {}\n", prov.line()).into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(out)
    }
}

/// Float cell: shortest round-trip form, `nan` for NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Reads a CSV written by [`Table::to_csv`], skipping `#` lines.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| [l, "\n"])
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}

/// Output directory that remembers what it wrote.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    prov: Provenance,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, prov: Provenance) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            prov,
            written: Vec::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::File::create(&path)?.write_all(bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let bytes = table.to_csv(&self.prov)?;
        self.put(name, &bytes)
    }

    /// `{"meta": <provenance>, "data": <value>}`
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            meta: &'a Provenance,
            data: &'a T,
        }
        let mut bytes = serde_json::to_vec_pretty(&Doc {
            meta: &self.prov,
            data: value,
        })?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    /// Raw JSON document without the provenance envelope (checkpoints).
    pub fn raw_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    pub fn svg(&mut self, name: &str, chart: &super::svg::Chart) -> Result<PathBuf> {
        let text = chart.render(&self.prov.line());
        self.put(name, text.as_bytes())
    }
}

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pass,
    Violation,
    ConfigError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Pass => 0,
            Self::Violation => 1,
            Self::ConfigError => 2,
        }
    }

    /// Configuration-type errors map to 2, everything else to 1.
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::AngleOutOfRange { .. }
            | Error::Infeasible(_)
            | Error::TokenOutOfRange { .. }
            | Error::MalformedInstance(_) => Self::ConfigError,
            _ => Self::Violation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"x": 1})).unwrap();
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2})).unwrap());
        assert_eq!(a.len(), HASH_CHARS);
        // Known digest of `{"x":1}`.
        let full = Sha256::digest(br#"{"x":1}"#);
        assert_eq!(a, full.iter().take(8).map(|b| format!("{b:02x}")).collect::<String>());
    }

    #[test]
    fn csv_has_provenance_line_and_lf() {
        let prov = Provenance::new(&1u8, 42).unwrap();
        let mut t = Table::new(["a", "b"]);
        t.push(vec![num(0.1), num(f64::NAN)]);
        let bytes = t.to_csv(&prov).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(&format!("# posym {TOOL_VERSION} config=")));
        assert!(text.contains("seed=42\n"));
        assert!(!text.contains('\r'));
        assert!(text.ends_with("a,b\n0.1,nan\n"));
    }

    #[test]
    fn table_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new(&"cfg", 1).unwrap();
        let mut out = OutputDir::create(dir.path(), prov).unwrap();
        let mut t = Table::new(["x"]);
        t.push(vec!["3".into()]);
        let p = out.csv("t.csv", &t).unwrap();
        assert_eq!(read_table(&p).unwrap(), t);
        let j = out.json("j.json", &vec![1, 2]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(j).unwrap()).unwrap();
        assert_eq!(v["meta"]["seed"], 1);
        assert_eq!(v["data"][1], 2);
        assert_eq!(out.written().len(), 2);
    }
}
