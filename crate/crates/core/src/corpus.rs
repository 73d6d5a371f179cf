//! Corpus ingestion from CSV files, newline-delimited JSON persistence, and
//! size statistics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minhash::Domain;
use crate::partition::{stats, StatsReport};

/// How the first CSV row is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderMode {
    /// Header when every cell of the first row is non-numeric.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub min_size: u64,
    pub header: HeaderMode,
    pub delimiter: u8,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_size: 10,
            header: HeaderMode::Auto,
            delimiter: b',',
        }
    }
}

/// Outcome of ingesting one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: String,
    /// Set when the file could not be read; the other files are still ingested.
    pub error: Option<String>,
    pub rows: u64,
    pub malformed_rows: u64,
    pub columns: u64,
    pub has_header: bool,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub domains: Vec<Domain>,
    pub files: Vec<FileReport>,
    /// Columns with fewer than `min_size` distinct non-empty values.
    pub skipped_small: u64,
}

impl IngestReport {
    pub fn malformed_rows(&self) -> u64 {
        self.files.iter().map(|f| f.malformed_rows).sum()
    }

    pub fn failed_files(&self) -> impl Iterator<Item = &FileReport> {
        self.files.iter().filter(|f| f.error.is_some())
    }
}

fn looks_numeric(cell: &[u8]) -> bool {
    std::str::from_utf8(cell)
        .ok()
        .map(|s| s.trim().parse::<f64>().is_ok())
        .unwrap_or(false)
}

fn is_header(row: &csv::ByteRecord) -> bool {
    row.iter().any(|c| !c.trim_ascii().is_empty()) && row.iter().all(|c| !looks_numeric(c))
}

fn normalize(cell: &[u8]) -> Option<Vec<u8>> {
    let trimmed = cell.trim_ascii();
    if trimmed.is_empty() {
        return None;
    }
    Some(String::from_utf8_lossy(trimmed).into_owned().into_bytes())
}

/// Columns of one CSV file as domains, plus the number of columns below `min_size`.
fn ingest_file(path: &Path, opts: &IngestOptions) -> (FileReport, Vec<Domain>, u64) {
    let name = path.display().to_string();
    let mut report = FileReport {
        path: name.clone(),
        error: None,
        rows: 0,
        malformed_rows: 0,
        columns: 0,
        has_header: false,
    };
    let mut reader = match csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(opts.delimiter)
        .from_path(path)
    {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            return (report, Vec::new(), 0);
        }
    };

    let mut headers: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => {
                    report.malformed_rows += 1;
                    continue;
                }
                _ if e.is_io_error() => {
                    report.error = Some(e.to_string());
                    return (report, Vec::new(), 0);
                }
                _ => {
                    report.malformed_rows += 1;
                    continue;
                }
            },
        }
        match width {
            None => {
                width = Some(record.len());
                columns = vec![Vec::new(); record.len()];
                let header = match opts.header {
                    HeaderMode::Auto => is_header(&record),
                    HeaderMode::Present => true,
                    HeaderMode::Absent => false,
                };
                if header {
                    report.has_header = true;
                    headers = record
                        .iter()
                        .map(|c| String::from_utf8_lossy(c.trim_ascii()).into_owned())
                        .collect();
                    continue;
                }
            }
            Some(w) if w != record.len() => {
                report.malformed_rows += 1;
                continue;
            }
            Some(_) => {}
        }
        report.rows += 1;
        for (col, cell) in columns.iter_mut().zip(record.iter()) {
            if let Some(v) = normalize(cell) {
                col.push(v);
            }
        }
    }

    report.columns = columns.len() as u64;
    let mut domains = Vec::new();
    let mut small = 0;
    for (i, values) in columns.into_iter().enumerate() {
        let header = headers.get(i).map(String::as_str).unwrap_or("");
        let id = format!("{name}#{i}:{header}");
        match Domain::new(id, values) {
            Ok(d) if d.len() as u64 >= opts.min_size => domains.push(d),
            _ => small += 1,
        }
    }
    (report, domains, small)
}

/// One domain per CSV column: distinct, trimmed, non-empty cell values, with
/// id `<file>#<column-index>:<header-or-blank>`. Files are read in parallel;
/// the output order follows `paths`. Cells that are not valid UTF-8 are
/// decoded lossily so every value can be stored as JSON text.
pub fn ingest_csv<P: AsRef<Path> + Sync>(paths: &[P], opts: &IngestOptions) -> IngestReport {
    let per_file: Vec<_> = paths
        .par_iter()
        .map(|p| ingest_file(p.as_ref(), opts))
        .collect();
    let mut out = IngestReport::default();
    for (report, domains, small) in per_file {
        out.files.push(report);
        out.domains.extend(domains);
        out.skipped_small += small;
    }
    out
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    values: Vec<&'a str>,
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    values: Vec<String>,
}

/// Writes one `{"id": ..., "values": [...]}` line per domain.
pub fn write_corpus<'a>(domains: impl IntoIterator<Item = &'a Domain>, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut count = 0;
    for d in domains {
        let values = d
            .values()
            .iter()
            .map(|v| {
                std::str::from_utf8(v).map_err(|_| {
                    Error::invalid(format!("domain `{}` has a value that is not UTF-8", d.id()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        serde_json::to_writer(&mut w, &RecordOut { id: d.id(), values })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        count += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// Streaming reader over a corpus file. Blank lines are ignored.
pub struct CorpusReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line: usize,
}

impl CorpusReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(CorpusReader {
            lines: BufReader::new(file).lines(),
            path,
            line: 0,
        })
    }

    fn record_error(&self, message: impl Into<String>) -> Error {
        Error::Record {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }
}

impl Iterator for CorpusReader {
    type Item = Result<Domain>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => {
                    self.line += 1;
                    return Some(Err(self.record_error(e.to_string())));
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RecordIn>(&text)
                .map_err(|e| self.record_error(e.to_string()))
                .and_then(|r| {
                    Domain::new(r.id, r.values).map_err(|e| self.record_error(e.to_string()))
                });
            return Some(parsed);
        }
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Domain>> {
    CorpusReader::open(path)?.collect()
}

/// Count of domains with size in `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: u64,
    pub upper: u64,
    pub count: u64,
}

/// Power-of-two bins `[2^k, 2^(k+1))` from the bin of the smallest size to
/// the bin of the largest, empty bins included.
pub fn size_histogram(sizes: &[u64]) -> Vec<HistogramBin> {
    let bin = |s: u64| 63 - s.max(1).leading_zeros() as usize;
    let (Some(&lo), Some(&hi)) = (sizes.iter().min(), sizes.iter().max()) else {
        return Vec::new();
    };
    let (first, last) = (bin(lo), bin(hi));
    let mut counts = vec![0u64; last - first + 1];
    for &s in sizes {
        counts[bin(s) - first] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lower: 1 << (first + k),
            upper: (1u64 << (first + k)).saturating_mul(2),
            count,
        })
        .collect()
}

/// Description stored next to a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub sources: Vec<String>,
    pub domain_count: u64,
    pub histogram: Vec<HistogramBin>,
    pub min_size: u64,
    pub skipped_small: u64,
    pub seed: Option<u64>,
    pub created_unix: Option<u64>,
}

impl CorpusManifest {
    pub fn describe(domains: &[Domain], sources: Vec<String>, min_size: u64) -> Self {
        let sizes: Vec<u64> = domains.iter().map(|d| d.len() as u64).collect();
        CorpusManifest {
            sources,
            domain_count: domains.len() as u64,
            histogram: size_histogram(&sizes),
            min_size,
            skipped_small: 0,
            seed: None,
            created_unix: None,
        }
    }

    /// Conventional manifest path for a corpus file.
    pub fn path_for(corpus: impl AsRef<Path>) -> PathBuf {
        let mut os = corpus.as_ref().as_os_str().to_owned();
        os.push(".manifest.json");
        PathBuf::from(os)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub stats: StatsReport,
    pub histogram: Vec<HistogramBin>,
}

pub fn domain_stats(domains: &[Domain]) -> Result<CorpusStats> {
    let sizes: Vec<u64> = domains.iter().map(|d| d.len() as u64).collect();
    Ok(CorpusStats {
        stats: stats(&sizes).map_err(|_| Error::invalid("corpus is empty"))?,
        histogram: size_histogram(&sizes),
    })
}

/// Statistics of a stored corpus, streamed from disk.
pub fn corpus_stats(path: impl AsRef<Path>) -> Result<CorpusStats> {
    let mut sizes = Vec::new();
    for d in CorpusReader::open(path)? {
        sizes.push(d?.len() as u64);
    }
    Ok(CorpusStats {
        stats: stats(&sizes).map_err(|_| Error::invalid("corpus is empty"))?,
        histogram: size_histogram(&sizes),
    })
}
