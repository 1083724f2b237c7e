//! Output files. Every CSV starts with a provenance comment line and a
//! header; files are written to a temporary name and renamed into place.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Provenance { tool: "analyze".into(), version: TOOL_VERSION.into(), config_hash, seed }
    }

    pub fn comment(&self) -> String {
        format!("# {} {} config={} seed={}", self.tool, self.version, self.config_hash, self.seed)
    }
}

pub struct OutputDir {
    pub root: PathBuf,
    pub provenance: Provenance,
}

impl OutputDir {
    pub fn create(root: PathBuf, provenance: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(&root)?;
        Ok(OutputDir { root, provenance })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a whole CSV: provenance line, header, rows.
    pub fn write_csv<R, S>(&self, name: &str, header: &[&str], rows: R) -> Result<(), CliError>
    where
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.provenance.comment())?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(|s| s.as_ref()))?;
            }
            w.flush()?;
        }
        write_atomic(&self.path(name), &buf)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write_atomic(&self.path(name), text.as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV cell for a float; shortest text that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

pub fn ints(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Append-only CSV used as a checkpoint: each batch of rows lands in one
/// write followed by a sync.
pub struct Checkpoint {
    file: File,
}

impl Checkpoint {
    /// Opens `path` for appending. An existing file is kept only when its
    /// provenance line and header match; a torn final line is cut off.
    /// Returns the checkpoint and the data rows already present.
    pub fn open(path: &Path, provenance: &Provenance, header: &[&str], resume: bool) -> Result<(Self, Vec<csv::StringRecord>), CliError> {
        let header_line = header.join(",");
        let mut rows = Vec::new();
        if resume && path.exists() {
            let text = fs::read_to_string(path)?;
            let complete = match text.rfind('\n') {
                Some(i) => &text[..=i],
                None => "",
            };
            let mut lines = complete.lines();
            let (first, second) = (lines.next(), lines.next());
            if first != Some(provenance.comment().as_str()) || second != Some(header_line.as_str()) {
                return Err(CliError::Usage(format!(
                    "cannot resume: {} was written by a different configuration",
                    path.display()
                )));
            }
            let mut r = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(complete.as_bytes());
            for rec in r.records() {
                rows.push(rec?);
            }
            let mut file = OpenOptions::new().write(true).open(path)?;
            file.set_len(complete.len() as u64)?;
            file.seek(SeekFrom::End(0))?;
            return Ok((Checkpoint { file }, rows));
        }
        let mut file = File::create(path)?;
        writeln!(file, "{}", provenance.comment())?;
        writeln!(file, "{header_line}")?;
        file.sync_all()?;
        Ok((Checkpoint { file }, rows))
    }

    pub fn append<S: AsRef<str>>(&mut self, rows: &[Vec<S>]) -> Result<(), CliError> {
        if rows.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
            for row in rows {
                w.write_record(row.iter().map(|s| s.as_ref()))?;
            }
            w.flush()?;
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Reads the data rows of a CSV written by [`OutputDir::write_csv`].
pub fn read_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(f));
    let header = r.headers()?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}
