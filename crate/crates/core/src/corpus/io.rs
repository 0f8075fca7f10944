use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::parse::is_request_line;
use super::{parse_http_request, Corpus, CorpusError, HttpRequestDoc, Label, ParseMode, Split};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON record per line: `{id, label, lines, source, split}`.
    Jsonl,
    /// A directory of raw request dumps, requests separated by blank lines.
    RawDir {
        /// Label for every request; inferred from the file path when `None`.
        label: Option<Label>,
        split: Split,
        mode: ParseMode,
    },
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    label: Label,
    lines: &'a [String],
    source: &'a str,
    split: Split,
}

#[derive(Deserialize)]
struct RecordIn {
    id: Option<String>,
    label: Option<String>,
    lines: Option<Vec<String>>,
    #[serde(default)]
    source: String,
    split: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in corpus.docs() {
        let record = RecordOut {
            id: &doc.id,
            label: doc.label,
            lines: &doc.lines,
            source: &doc.source,
            split: corpus.split(),
        };
        let line = serde_json::to_string(&record).expect("corpus record serializes");
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn load_corpus(path: &Path, format: &CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
        CorpusFormat::RawDir { label, split, mode } => load_rawdir(path, *label, *split, *mode),
    }
}

fn load_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut docs = Vec::new();
    let mut split: Option<Split> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), n + 1);
        let schema = |message: String| CorpusError::Schema {
            location: location.clone(),
            message,
        };
        let record: RecordIn = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let id = record.id.ok_or_else(|| schema("missing field `id`".into()))?;
        let label = record
            .label
            .ok_or_else(|| schema("missing field `label`".into()))?
            .parse::<Label>()
            .map_err(schema)?;
        let lines = record.lines.ok_or_else(|| schema("missing field `lines`".into()))?;
        if lines.is_empty() {
            return Err(schema("`lines` is empty".into()));
        }
        let record_split = match record.split {
            Some(s) => s.parse::<Split>().map_err(schema)?,
            None => Split::Inference,
        };
        match split {
            None => split = Some(record_split),
            Some(s) if s != record_split => {
                return Err(schema("records disagree on `split`".into()));
            }
            _ => {}
        }
        docs.push(HttpRequestDoc::new(id, label, lines, record.source));
    }
    Corpus::new(docs, split.unwrap_or_default()).map_err(|e| CorpusError::Schema {
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

fn infer_label(path: &Path) -> Label {
    let lower = path.to_string_lossy().to_ascii_lowercase();
    if lower.contains("anomal") || lower.contains("attack") {
        Label::Anomaly
    } else if lower.contains("normal") {
        Label::Normal
    } else {
        Label::Unlabeled
    }
}

fn load_rawdir(dir: &Path, label: Option<Label>, split: Split, mode: ParseMode) -> Result<Corpus, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut docs = Vec::new();
    for file in files {
        let bytes = fs::read(&file).map_err(|e| io_err(&file, e))?;
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let file_label = label.unwrap_or_else(|| infer_label(&file));
        for (i, segment) in segments(&bytes, mode).into_iter().enumerate() {
            let doc = parse_http_request(&segment, mode, format!("{stem}-{i}"), file_label, format!("rawdir:{stem}"))
                .map_err(|e| CorpusError::Schema {
                    location: format!("{} segment {i}", file.display()),
                    message: e.to_string(),
                })?;
            docs.push(doc);
        }
    }
    Corpus::new(docs, split)
}

/// Groups a dump into per-request byte blocks.
///
/// Blank lines separate blocks. In full-request mode a block that does not
/// open with a request line is the body of the preceding request.
fn segments(bytes: &[u8], mode: ParseMode) -> Vec<Vec<u8>> {
    let mut blocks: Vec<Vec<&[u8]>> = Vec::new();
    let mut current: Vec<&[u8]> = Vec::new();
    for line in bytes.split(|&b| b == b'\n') {
        let is_blank = line.is_empty() || line == b"\r";
        if is_blank {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let mut requests: Vec<Vec<u8>> = Vec::new();
    for block in blocks {
        let first = String::from_utf8_lossy(block[0]);
        let starts_request = is_request_line(first.trim_end_matches('\r'));
        let crlf = block[0].ends_with(b"\r");
        let joined = block.join(&b'\n');
        match requests.last_mut() {
            Some(prev) if mode == ParseMode::FullRequest && !starts_request => {
                // header/body separator, then the body itself
                prev.extend_from_slice(if crlf { b"\n\r\n" } else { b"\n\n" });
                prev.extend_from_slice(&joined);
            }
            _ => requests.push(joined),
        }
    }
    // Restore the final terminator of each CRLF-framed line.
    for req in &mut requests {
        if req.ends_with(b"\r") {
            req.push(b'\n');
        }
    }
    requests
}
