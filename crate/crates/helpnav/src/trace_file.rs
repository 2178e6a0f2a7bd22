//! Trace files: one JSONL file per episode with a header line, one line per step and a
//! footer line. Each line carries a `record` tag.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use helpnav_core::trace::{EpisodeTrace, StepRecord, TraceFooter, TraceHeader, TRACE_FORMAT_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
    Footer(TraceFooter),
}

/// `{map_id}_{seed}_{timestamp}.jsonl`
pub fn trace_file_name(header: &TraceHeader) -> String {
    format!("{}_{}_{}.jsonl", header.episode.map_id, header.episode.seed, header.timestamp)
}

fn line(record: &TraceLine) -> Result<String> {
    let mut s = serde_json::to_string(record)?;
    s.push('\n');
    Ok(s)
}

/// Append-only writer. Every step is flushed before `append` returns.
pub struct TraceWriter {
    file: File,
    path: PathBuf,
    trace: EpisodeTrace,
}

impl TraceWriter {
    /// Creates a new trace file in `dir`. An existing file is never overwritten; a
    /// numeric suffix is added instead.
    pub fn create(dir: &Path, header: TraceHeader) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let name = trace_file_name(&header);
        let stem = name.trim_end_matches(".jsonl").to_string();
        let mut n = 0;
        let (file, path) = loop {
            let path = if n == 0 {
                dir.join(&name)
            } else {
                dir.join(format!("{stem}-{n}.jsonl"))
            };
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(f) => break (f, path),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        };
        let mut w = Self {
            file,
            path,
            trace: EpisodeTrace::new(header.clone()),
        };
        w.write(&TraceLine::Header(header))?;
        Ok(w)
    }

    fn write(&mut self, record: &TraceLine) -> Result<()> {
        self.file
            .write_all(line(record)?.as_bytes())
            .and_then(|_| self.file.flush())
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn steps_written(&self) -> usize {
        self.trace.steps.len()
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<()> {
        self.trace.check_next(record)?;
        self.write(&TraceLine::Step(record.clone()))?;
        self.trace.steps.push(record.clone());
        Ok(())
    }

    /// Writes the footer and syncs the file.
    pub fn finish(mut self, footer: &TraceFooter) -> Result<PathBuf> {
        self.trace.close(footer.clone())?;
        self.write(&TraceLine::Footer(footer.clone()))?;
        self.file.sync_all()?;
        Ok(self.path)
    }
}

/// Writes a complete trace into `dir` and returns its path.
pub fn write_trace(dir: &Path, trace: &EpisodeTrace) -> Result<PathBuf> {
    let mut w = TraceWriter::create(dir, trace.header.clone())?;
    for s in &trace.steps {
        w.append(s)?;
    }
    match &trace.footer {
        Some(f) => w.finish(f),
        None => Ok(w.path.clone()),
    }
}

/// Parses a trace file. A missing footer (an interrupted recording) is allowed.
pub fn read_trace(path: &Path) -> Result<EpisodeTrace> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut trace: Option<EpisodeTrace> = None;
    for (i, text) in BufReader::new(f).lines().enumerate() {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let record: TraceLine = serde_json::from_str(&text).with_context(at)?;
        match (record, trace.as_mut()) {
            (TraceLine::Header(h), None) => {
                if h.format_version != TRACE_FORMAT_VERSION {
                    bail!("{}: unsupported format_version {}", at(), h.format_version);
                }
                trace = Some(EpisodeTrace::new(h));
            }
            (TraceLine::Header(_), Some(_)) => bail!("{}: second header", at()),
            (_, None) => bail!("{}: the first line must be the header", at()),
            (TraceLine::Step(s), Some(t)) => t.append_step(s).with_context(at)?,
            (TraceLine::Footer(f), Some(t)) => t.close(f).with_context(at)?,
        }
    }
    trace.ok_or_else(|| anyhow!("{} is empty", path.display()))
}

/// Every `*.jsonl` trace in `dir`, sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<(PathBuf, EpisodeTrace)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_trace(&p).map(|t| (p, t)))
        .collect()
}

/// SHA-256 over the serialized trace with the timestamp blanked, as lowercase hex.
/// Two runs with identical inputs and seeds give identical hashes.
pub fn trace_hash(trace: &EpisodeTrace) -> Result<String> {
    let mut header = trace.header.clone();
    header.timestamp.clear();
    let mut h = Sha256::new();
    h.update(line(&TraceLine::Header(header))?);
    for s in &trace.steps {
        h.update(line(&TraceLine::Step(s.clone()))?);
    }
    if let Some(f) = &trace.footer {
        h.update(line(&TraceLine::Footer(f.clone()))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
