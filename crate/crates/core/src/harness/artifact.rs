//! Artifact files: every one starts with a metadata header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    /// SHA-256 of the compact JSON of the effective config.
    pub config_hash: String,
    pub seed: u64,
    pub artifact: String,
}

impl Meta {
    /// One-line JSON, used as the `# ...` header of CSV files.
    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("meta serializes")
    }

    pub fn named(&self, artifact: &str) -> Meta {
        Meta {
            artifact: artifact.to_string(),
            ..self.clone()
        }
    }
}

pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Metadata for artifacts produced from `cfg` with `seed`.
pub fn meta_for<T: Serialize>(cfg: &T, seed: u64, artifact: &str) -> Result<Meta> {
    Ok(Meta {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash(cfg)?,
        seed,
        artifact: artifact.to_string(),
    })
}

/// A JSON artifact: `{"meta": ..., "data": ...}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub meta: Meta,
    pub data: T,
}

/// Collects the paths written by one run.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
    pub meta: Meta,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path, meta: Meta) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn json<T: Serialize>(&mut self, name: &str, artifact: &str, data: &T) -> Result<PathBuf> {
        let p = self.path(name);
        write_json(&p, &self.meta.named(artifact), data)?;
        Ok(p)
    }

    /// Open a CSV writer whose first line is the metadata header.
    pub fn csv(&mut self, name: &str, artifact: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let p = self.path(name);
        let mut w = BufWriter::new(File::create(&p)?);
        writeln!(w, "# {}", self.meta.named(artifact).line())?;
        Ok((p, w))
    }

    /// Write a header row and numeric rows.
    pub fn table(&mut self, name: &str, artifact: &str, header: &[String], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let (p, w) = self.csv(name, artifact)?;
        write_rows(w, header, rows)?;
        Ok(p)
    }

    pub fn header_line(&self, artifact: &str) -> String {
        self.meta.named(artifact).line()
    }
}

pub fn write_rows<W: Write>(w: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
    if !header.is_empty() {
        wr.write_record(header)?;
    }
    for r in rows {
        wr.write_record(r.iter().map(|v| format!("{v:?}")))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, data: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut w,
        &Artifact {
            meta: meta.clone(),
            data,
        },
    )?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Parse the `# {...}` first line of a CSV artifact.
pub fn read_csv_meta(path: &Path) -> Result<Meta> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    let body = line
        .strip_prefix("# ")
        .ok_or_else(|| Error::config(format!("{} has no metadata header", path.display())))?;
    Ok(serde_json::from_str(body.trim())?)
}

/// Numeric rows of a CSV with a header row, skipping `#` lines.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(File::open(path)?));
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad number '{f}' in {}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
