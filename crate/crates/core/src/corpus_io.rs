//! Document ingestion and byte-budgeted chunk output.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One filterable unit of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: u64,
    pub text: String,
    pub source: String,
    pub byte_len: usize,
}

impl Document {
    pub fn new(id: u64, text: impl Into<String>, source: impl Into<String>) -> Self {
        let text = text.into();
        let byte_len = text.len();
        Document {
            id,
            text,
            source: source.into(),
            byte_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One JSON object per line with a string `text` field.
    Jsonl,
    /// One document per line of plain text.
    Txt,
    /// A directory whose regular files are one document each.
    TxtDir,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(InputFormat::Jsonl),
            "txt" => Ok(InputFormat::Txt),
            "txt-dir" => Ok(InputFormat::TxtDir),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|ext| ext == "gz")
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if is_gzip(path) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

enum Source {
    Lines {
        path: PathBuf,
        reader: Box<dyn BufRead + Send>,
        line_no: usize,
        json: bool,
    },
    Files(std::vec::IntoIter<PathBuf>),
}

/// Streams documents from a list of inputs, assigning ids `0, 1, 2, ...`
/// across the whole stream.
///
/// Paths are visited in the given order. Within a file, line order is kept;
/// within a `txt-dir`, files are visited in lexicographic name order.
/// Documents with empty text are yielded like any other. Blank lines in a
/// jsonl file are skipped since they carry no record.
pub struct DocumentReader {
    pending: std::vec::IntoIter<PathBuf>,
    format: InputFormat,
    current: Option<Source>,
    next_id: u64,
    source_label: Option<String>,
    failed: bool,
}

impl DocumentReader {
    pub fn new<P: AsRef<Path>>(paths: &[P], format: InputFormat) -> Self {
        let pending: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
        DocumentReader {
            pending: pending.into_iter(),
            format,
            current: None,
            next_id: 0,
            source_label: None,
            failed: false,
        }
    }

    /// Tags every document with `label` instead of its file path.
    pub fn with_source_label(mut self, label: impl Into<String>) -> Self {
        self.source_label = Some(label.into());
        self
    }

    fn label_for(&self, path: &Path) -> String {
        match &self.source_label {
            Some(label) => label.clone(),
            None => path.display().to_string(),
        }
    }

    fn open_next(&mut self) -> Result<bool> {
        let Some(path) = self.pending.next() else {
            return Ok(false);
        };
        self.current = Some(match self.format {
            InputFormat::Jsonl | InputFormat::Txt => Source::Lines {
                reader: open_maybe_gz(&path)?,
                path,
                line_no: 0,
                json: self.format == InputFormat::Jsonl,
            },
            InputFormat::TxtDir => {
                let entries = fs::read_dir(&path).map_err(|e| Error::io(&path, e))?;
                let mut files = Vec::new();
                for entry in entries {
                    let entry = entry.map_err(|e| Error::io(&path, e))?;
                    let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
                    if ty.is_file() || (ty.is_symlink() && entry.path().is_file()) {
                        files.push(entry.path());
                    }
                }
                files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
                Source::Files(files.into_iter())
            }
        });
        Ok(true)
    }

    fn emit(&mut self, text: String, path: &Path) -> Document {
        let doc = Document::new(self.next_id, text, self.label_for(path));
        self.next_id += 1;
        doc
    }

    fn next_doc(&mut self) -> Result<Option<Document>> {
        loop {
            if self.current.is_none() && !self.open_next()? {
                return Ok(None);
            }
            match self.current.as_mut().expect("source opened above") {
                Source::Lines {
                    path,
                    reader,
                    line_no,
                    json,
                } => {
                    let mut buf = String::new();
                    let read = reader.read_line(&mut buf).map_err(|e| {
                        if e.kind() == io::ErrorKind::InvalidData {
                            Error::Record {
                                path: path.clone(),
                                line: *line_no + 1,
                                reason: "invalid UTF-8".into(),
                            }
                        } else {
                            Error::io(path.clone(), e)
                        }
                    })?;
                    if read == 0 {
                        self.current = None;
                        continue;
                    }
                    *line_no += 1;
                    let line = buf.strip_suffix('\n').unwrap_or(&buf);
                    let line = line.strip_suffix('\r').unwrap_or(line);
                    let text = if *json {
                        if line.trim().is_empty() {
                            continue;
                        }
                        parse_jsonl_text(line).map_err(|reason| Error::Record {
                            path: path.clone(),
                            line: *line_no,
                            reason,
                        })?
                    } else {
                        line.to_string()
                    };
                    let path = path.clone();
                    return Ok(Some(self.emit(text, &path)));
                }
                Source::Files(files) => {
                    let Some(file) = files.next() else {
                        self.current = None;
                        continue;
                    };
                    let mut bytes = Vec::new();
                    open_maybe_gz(&file)?
                        .read_to_end(&mut bytes)
                        .map_err(|e| Error::io(&file, e))?;
                    let text = String::from_utf8(bytes).map_err(|_| Error::Record {
                        path: file.clone(),
                        line: 1,
                        reason: "invalid UTF-8".into(),
                    })?;
                    return Ok(Some(self.emit(text, &file)));
                }
            }
        }
    }
}

impl Iterator for DocumentReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_doc() {
            Ok(Some(doc)) => Some(Ok(doc)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

fn parse_jsonl_text(line: &str) -> std::result::Result<String, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("malformed json: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "expected a JSON object".to_string())?;
    match obj.get("text") {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err("field \"text\" is not a string".into()),
        None => Err("missing \"text\" field".into()),
    }
}

/// Streams documents from `paths`; see [`DocumentReader`].
pub fn read_documents<P: AsRef<Path>>(paths: &[P], format: InputFormat) -> DocumentReader {
    DocumentReader::new(paths, format)
}

/// Reads every document into memory, stopping at the first error.
pub fn read_all<P: AsRef<Path>>(paths: &[P], format: InputFormat) -> Result<Vec<Document>> {
    read_documents(paths, format).collect()
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: u64,
    text: &'a str,
}

/// Serialized jsonl form of a document, including the trailing newline.
pub fn serialize_document(doc: &Document) -> Vec<u8> {
    let mut line = serde_json::to_vec(&OutRecord {
        id: doc.id,
        text: &doc.text,
    })
    .expect("serializing a string record cannot fail");
    line.push(b'\n');
    line
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub chunk_paths: Vec<PathBuf>,
    pub per_chunk_bytes: Vec<u64>,
    pub per_chunk_doc_counts: Vec<u64>,
    pub total_docs: u64,
    pub total_bytes: u64,
}

pub fn chunk_file_name(index: usize) -> String {
    format!("chunk-{index:05}.jsonl")
}

/// Incremental chunk writer.
///
/// A chunk is closed when appending the next serialized document would push
/// it past `target_bytes`, unless the chunk is still empty; an oversized
/// document therefore gets a chunk of its own. Sizes are serialized jsonl
/// bytes, newline included.
pub struct ChunkWriter {
    out_dir: PathBuf,
    target_bytes: u64,
    current: Option<BufWriter<File>>,
    current_bytes: u64,
    current_docs: u64,
    manifest: ChunkManifest,
}

impl ChunkWriter {
    pub fn new(out_dir: impl AsRef<Path>, target_bytes: u64) -> Result<Self> {
        if target_bytes == 0 {
            return Err(Error::invalid("target_bytes must be at least 1"));
        }
        let out_dir = out_dir.as_ref().to_path_buf();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(ChunkWriter {
            out_dir,
            target_bytes,
            current: None,
            current_bytes: 0,
            current_docs: 0,
            manifest: ChunkManifest::default(),
        })
    }

    pub fn push(&mut self, doc: &Document) -> Result<()> {
        let line = serialize_document(doc);
        let len = line.len() as u64;
        if self.current.is_some() && self.current_bytes + len > self.target_bytes {
            self.close_current()?;
        }
        if self.current.is_none() {
            let path = self
                .out_dir
                .join(chunk_file_name(self.manifest.chunk_paths.len()));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.current = Some(BufWriter::new(file));
            self.manifest.chunk_paths.push(path);
        }
        let path = self.manifest.chunk_paths.last().expect("chunk opened");
        self.current
            .as_mut()
            .expect("chunk opened")
            .write_all(&line)
            .map_err(|e| Error::io(path, e))?;
        self.current_bytes += len;
        self.current_docs += 1;
        Ok(())
    }

    fn close_current(&mut self) -> Result<()> {
        if let Some(mut w) = self.current.take() {
            let path = self.manifest.chunk_paths.last().expect("chunk opened");
            w.flush().map_err(|e| Error::io(path, e))?;
            self.manifest.per_chunk_bytes.push(self.current_bytes);
            self.manifest.per_chunk_doc_counts.push(self.current_docs);
            self.manifest.total_bytes += self.current_bytes;
            self.manifest.total_docs += self.current_docs;
            self.current_bytes = 0;
            self.current_docs = 0;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<ChunkManifest> {
        self.close_current()?;
        Ok(self.manifest)
    }
}

/// Writes `docs` in order as jsonl chunks of at most `target_bytes` each.
pub fn write_chunks<'a, I>(docs: I, target_bytes: u64, out_dir: impl AsRef<Path>) -> Result<ChunkManifest>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut writer = ChunkWriter::new(out_dir, target_bytes)?;
    for doc in docs {
        writer.push(doc)?;
    }
    writer.finish()
}
