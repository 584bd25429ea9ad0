//! Document ingestion, overlapping chunking and priority-ordered corpus selection.
//!
//! All offsets are measured in Unicode scalar values (`char`s), not bytes, so a
//! chunk span `[start, end)` can be mapped back onto the normalized document text
//! regardless of encoding width.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document `{0}` is empty")]
    EmptyDocument(String),
    #[error("unsupported format {0}: no PDF extraction adapter configured")]
    UnsupportedFormat(SourceFormat),
    #[error("invalid chunking policy: {0}")]
    InvalidPolicy(String),
    #[error("corpus manifest contains no documents")]
    EmptyManifest,
    #[error("invalid corpus manifest: {0}")]
    InvalidManifest(String),
    #[error("text extraction failed for {path}: {reason}")]
    Extraction { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    PlainText,
    Markdown,
    PdfExtracted,
    /// Raw PDF bytes; only accepted when a [`PdfExtractor`] is available.
    Pdf,
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceFormat::PlainText => "plain_text",
            SourceFormat::Markdown => "markdown",
            SourceFormat::PdfExtracted => "pdf_extracted",
            SourceFormat::Pdf => "pdf",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    /// 1 is the most important document of the corpus.
    pub priority_rank: u32,
    pub text: String,
    pub source_format: SourceFormat,
    pub char_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    HardCut,
    SentenceSnap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkingPolicy {
    pub target_size: usize,
    pub overlap: usize,
    #[serde(default)]
    pub boundary_mode: BoundaryMode,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        Self {
            target_size: 1000,
            overlap: 200,
            boundary_mode: BoundaryMode::HardCut,
        }
    }
}

impl ChunkingPolicy {
    pub fn new(target_size: usize, overlap: usize) -> Result<Self, CorpusError> {
        let policy = Self {
            target_size,
            overlap,
            boundary_mode: BoundaryMode::HardCut,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn with_boundary_mode(mut self, mode: BoundaryMode) -> Self {
        self.boundary_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.target_size == 0 {
            return Err(CorpusError::InvalidPolicy(
                "target_size must be positive".into(),
            ));
        }
        if self.overlap >= self.target_size {
            return Err(CorpusError::InvalidPolicy(format!(
                "overlap ({}) must be smaller than target_size ({})",
                self.overlap, self.target_size
            )));
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.target_size - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub span_start: usize,
    pub span_end: usize,
    pub text: String,
}

impl Chunk {
    pub fn key(&self) -> (&str, usize) {
        (&self.doc_id, self.chunk_index)
    }

    pub fn char_len(&self) -> usize {
        self.span_end - self.span_start
    }
}

/// Turns raw PDF bytes into plain text.
pub trait PdfExtractor: Send + Sync {
    fn extract(&self, pdf: &[u8]) -> Result<String, String>;
}

/// Shells out to an external extractor such as `pdftotext`, which must accept
/// `<input.pdf> -` and write the text to stdout.
#[derive(Debug, Clone)]
pub struct CommandExtractor {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandExtractor {
    pub fn pdftotext() -> Self {
        Self {
            program: "pdftotext".into(),
            args: vec!["-enc".into(), "UTF-8".into()],
        }
    }
}

impl PdfExtractor for CommandExtractor {
    fn extract(&self, pdf: &[u8]) -> Result<String, String> {
        let dir = std::env::temp_dir();
        let input = dir.join(format!(
            "cqwb-{}-{}.pdf",
            std::process::id(),
            fingerprint(pdf)
        ));
        std::fs::write(&input, pdf).map_err(|e| e.to_string())?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg("-")
            .output();
        let _ = std::fs::remove_file(&input);
        let output = output.map_err(|e| format!("failed to launch {}: {e}", self.program))?;
        if !output.status.success() {
            return Err(String::from_utf8_lossy(&output.stderr).trim().to_string());
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }
}

fn fingerprint(bytes: &[u8]) -> u64 {
    // FNV-1a; only used for temp file naming.
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x100000001b3)
    })
}

/// Raw input accepted by [`ingest_document`].
#[derive(Debug, Clone, Copy)]
pub enum RawInput<'a> {
    Text(&'a str),
    Bytes(&'a [u8]),
}

impl<'a> From<&'a str> for RawInput<'a> {
    fn from(s: &'a str) -> Self {
        RawInput::Text(s)
    }
}

impl<'a> From<&'a [u8]> for RawInput<'a> {
    fn from(b: &'a [u8]) -> Self {
        RawInput::Bytes(b)
    }
}

/// Unifies line endings to LF and strips every control character other than LF.
/// Tabs become a single space so that adjacent words stay separated.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push('\n');
            }
            '\n' => out.push('\n'),
            '\t' => out.push(' '),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

pub fn ingest_document<'a>(
    raw: impl Into<RawInput<'a>>,
    format: SourceFormat,
    doc_id: &str,
    priority_rank: u32,
) -> Result<SourceDocument, CorpusError> {
    ingest_document_with(raw, format, doc_id, priority_rank, None)
}

pub fn ingest_document_with<'a>(
    raw: impl Into<RawInput<'a>>,
    format: SourceFormat,
    doc_id: &str,
    priority_rank: u32,
    extractor: Option<&dyn PdfExtractor>,
) -> Result<SourceDocument, CorpusError> {
    let raw = raw.into();
    let is_empty = match raw {
        RawInput::Text(t) => t.is_empty(),
        RawInput::Bytes(b) => b.is_empty(),
    };
    if is_empty {
        return Err(CorpusError::EmptyDocument(doc_id.to_string()));
    }

    let (decoded, stored_format) = match format {
        SourceFormat::Pdf => {
            let extractor = extractor.ok_or(CorpusError::UnsupportedFormat(SourceFormat::Pdf))?;
            let bytes = match raw {
                RawInput::Bytes(b) => b,
                RawInput::Text(t) => t.as_bytes(),
            };
            let text = extractor
                .extract(bytes)
                .map_err(|reason| CorpusError::Extraction {
                    path: PathBuf::from(doc_id),
                    reason,
                })?;
            (text, SourceFormat::PdfExtracted)
        }
        other => {
            let text = match raw {
                RawInput::Text(t) => t.to_string(),
                RawInput::Bytes(b) => String::from_utf8_lossy(b).into_owned(),
            };
            (text, other)
        }
    };

    let text = normalize_text(&decoded);
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument(doc_id.to_string()));
    }
    let char_count = text.chars().count();
    Ok(SourceDocument {
        doc_id: doc_id.to_string(),
        title: doc_id.to_string(),
        priority_rank,
        text,
        source_format: stored_format,
        char_count,
    })
}

fn is_sentence_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Splits a document into overlapping character windows.
///
/// In `hard_cut` mode chunk `i` starts at `i * (target_size - overlap)` and a
/// chunk is emitted for every such start that lies inside the text. In
/// `sentence_snap` mode each chunk end is pushed forward to just past the next
/// sentence terminator if one occurs within 20% of `target_size`; the following
/// chunk then starts `overlap` characters before that end.
pub fn chunk_document(
    doc: &SourceDocument,
    policy: &ChunkingPolicy,
) -> Result<Vec<Chunk>, CorpusError> {
    policy.validate()?;
    let chars: Vec<char> = doc.text.chars().collect();
    let len = chars.len();
    let spans = match policy.boundary_mode {
        BoundaryMode::HardCut => hard_cut_spans(len, policy),
        BoundaryMode::SentenceSnap => sentence_snap_spans(&chars, policy),
    };
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(chunk_index, (span_start, span_end))| Chunk {
            doc_id: doc.doc_id.clone(),
            chunk_index,
            span_start,
            span_end,
            text: chars[span_start..span_end].iter().collect(),
        })
        .collect())
}

fn hard_cut_spans(len: usize, policy: &ChunkingPolicy) -> Vec<(usize, usize)> {
    let stride = policy.stride();
    (0..len)
        .step_by(stride)
        .map(|start| (start, (start + policy.target_size).min(len)))
        .collect()
}

fn sentence_snap_spans(chars: &[char], policy: &ChunkingPolicy) -> Vec<(usize, usize)> {
    let len = chars.len();
    let window = policy.target_size / 5;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let mut end = (start + policy.target_size).min(len);
        if end < len {
            let limit = (end + window).min(len);
            if let Some(pos) = (end..limit).find(|&i| is_sentence_terminator(chars[i])) {
                end = pos + 1;
            }
        }
        spans.push((start, end));
        if end == len {
            break;
        }
        start = end - policy.overlap;
    }
    spans
}

/// Rebuilds the source text from chunks, dropping the overlapping prefix of
/// every chunk after the first.
pub fn reassemble(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    let mut covered = 0usize;
    for chunk in chunks {
        if chunk.span_end <= covered {
            continue;
        }
        let skip = covered.saturating_sub(chunk.span_start);
        out.extend(chunk.text.chars().skip(skip));
        covered = chunk.span_end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSelection {
    pub documents: Vec<SourceDocument>,
    /// Set when more documents were requested than the manifest holds.
    pub truncated: bool,
}

/// Returns the `n_paper` highest-priority documents in rank order.
pub fn select_corpus(
    manifest: &[SourceDocument],
    n_paper: usize,
) -> Result<CorpusSelection, CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    if n_paper == 0 {
        return Err(CorpusError::InvalidManifest(
            "n_paper must be at least 1".into(),
        ));
    }
    let mut ranked: Vec<&SourceDocument> = manifest.iter().collect();
    ranked.sort_by(|a, b| {
        a.priority_rank
            .cmp(&b.priority_rank)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    let truncated = n_paper > ranked.len();
    if truncated {
        log::warn!(
            "requested {n_paper} documents but the corpus only has {}",
            ranked.len()
        );
    }
    Ok(CorpusSelection {
        documents: ranked.into_iter().take(n_paper).cloned().collect(),
        truncated,
    })
}

/// Checks the manifest-level invariants: unique ids and ranks forming `1..=M`.
pub fn validate_manifest(docs: &[SourceDocument]) -> Result<(), CorpusError> {
    let mut ids = HashSet::new();
    for doc in docs {
        if !ids.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::InvalidManifest(format!(
                "duplicate doc_id `{}`",
                doc.doc_id
            )));
        }
    }
    let mut ranks: Vec<u32> = docs.iter().map(|d| d.priority_rank).collect();
    ranks.sort_unstable();
    for (expected, rank) in (1u32..).zip(&ranks) {
        if *rank != expected {
            return Err(CorpusError::InvalidManifest(format!(
                "priority ranks must be distinct and form 1..={}, got {ranks:?}",
                docs.len()
            )));
        }
    }
    Ok(())
}

/// One `[[document]]` entry of a corpus manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub doc_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub priority_rank: u32,
    pub path: PathBuf,
    pub format: SourceFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(default, rename = "document")]
    pub documents: Vec<ManifestRecord>,
}

impl CorpusManifest {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::InvalidManifest(e.to_string()))
    }

    /// Reads every referenced file (paths relative to `base_dir`) and ingests it.
    pub fn load_documents(
        &self,
        base_dir: &Path,
        extractor: Option<&dyn PdfExtractor>,
    ) -> Result<Vec<SourceDocument>, CorpusError> {
        if self.documents.is_empty() {
            return Err(CorpusError::EmptyManifest);
        }
        let mut docs = Vec::with_capacity(self.documents.len());
        for record in &self.documents {
            let path = base_dir.join(&record.path);
            let bytes = std::fs::read(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let mut doc = ingest_document_with(
                bytes.as_slice(),
                record.format,
                &record.doc_id,
                record.priority_rank,
                extractor,
            )
            .map_err(|e| match e {
                CorpusError::Extraction { reason, .. } => CorpusError::Extraction {
                    path: path.clone(),
                    reason,
                },
                other => other,
            })?;
            doc.title = record
                .title
                .clone()
                .unwrap_or_else(|| record.doc_id.clone());
            docs.push(doc);
        }
        validate_manifest(&docs)?;
        Ok(docs)
    }
}

/// Loads a manifest file and all documents it references.
pub fn load_corpus(
    manifest_path: &Path,
    extractor: Option<&dyn PdfExtractor>,
) -> Result<Vec<SourceDocument>, CorpusError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest = CorpusManifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest.load_documents(base, extractor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> SourceDocument {
        ingest_document(text, SourceFormat::PlainText, "d", 1).unwrap()
    }

    fn ranked(id: &str, rank: u32) -> SourceDocument {
        let mut d = ingest_document("some text", SourceFormat::PlainText, id, rank).unwrap();
        d.title = id.to_uppercase();
        d
    }

    #[test]
    fn crlf_normalized() {
        let d = ingest_document("Hello\r\nWorld", SourceFormat::PlainText, "d1", 1).unwrap();
        assert_eq!(d.text, "Hello\nWorld");
        assert_eq!(d.char_count, 11);
    }

    #[test]
    fn control_chars_stripped() {
        assert_eq!(normalize_text("a\u{0}b\rc\u{7}\n"), "ab\nc\n");
        assert_eq!(normalize_text("x\ty"), "x y");
    }

    #[test]
    fn empty_document_rejected() {
        let err = ingest_document("", SourceFormat::PlainText, "d1", 1).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyDocument(_)));
    }

    #[test]
    fn pdf_without_adapter_unsupported() {
        let err = ingest_document(&b"%PDF-1.4"[..], SourceFormat::Pdf, "p", 1).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::UnsupportedFormat(SourceFormat::Pdf)
        ));
    }

    struct FakeExtractor;
    impl PdfExtractor for FakeExtractor {
        fn extract(&self, _: &[u8]) -> Result<String, String> {
            Ok("Extracted\r\ntext".into())
        }
    }

    #[test]
    fn pdf_with_adapter_is_extracted() {
        let d = ingest_document_with(
            &b"%PDF"[..],
            SourceFormat::Pdf,
            "p",
            1,
            Some(&FakeExtractor),
        )
        .unwrap();
        assert_eq!(d.text, "Extracted\ntext");
        assert_eq!(d.source_format, SourceFormat::PdfExtracted);
    }

    #[test]
    fn hard_cut_offsets_for_100_chars() {
        let text: String = (0..100)
            .map(|i| char::from(b'a' + (i % 26) as u8))
            .collect();
        let chunks = chunk_document(&doc(&text), &ChunkingPolicy::new(40, 10).unwrap()).unwrap();
        let starts: Vec<usize> = chunks.iter().map(|c| c.span_start).collect();
        assert_eq!(starts, vec![0, 30, 60, 90]);
        assert_eq!(chunks.last().unwrap().char_len(), 10);
        assert_eq!(chunks.last().unwrap().span_end, 100);
        for pair in chunks.windows(2) {
            assert_eq!(pair[0].span_end - pair[1].span_start, 10);
        }
    }

    #[test]
    fn short_text_single_chunk() {
        let text = "x".repeat(30);
        let chunks = chunk_document(&doc(&text), &ChunkingPolicy::new(40, 10).unwrap()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].span_start, chunks[0].span_end), (0, 30));
    }

    #[test]
    fn overlap_equal_to_size_is_invalid() {
        let policy = ChunkingPolicy {
            target_size: 40,
            overlap: 40,
            boundary_mode: BoundaryMode::HardCut,
        };
        let err = chunk_document(&doc("anything"), &policy).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidPolicy(_)));
        assert!(ChunkingPolicy::new(40, 40).is_err());
    }

    #[test]
    fn multibyte_offsets_are_chars() {
        let text = "äöü€".repeat(10);
        let chunks = chunk_document(&doc(&text), &ChunkingPolicy::new(7, 2).unwrap()).unwrap();
        for c in &chunks {
            let slice: String = text.chars().skip(c.span_start).take(c.char_len()).collect();
            assert_eq!(slice, c.text);
        }
        assert_eq!(reassemble(&chunks), text);
    }

    #[test]
    fn sentence_snap_extends_to_terminator() {
        let text = "Aaaaaaaaa bbbbbbb. Cccccccc ddddddd eeeee. Fff.";
        let policy = ChunkingPolicy::new(15, 3)
            .unwrap()
            .with_boundary_mode(BoundaryMode::SentenceSnap);
        let chunks = chunk_document(&doc(text), &policy).unwrap();
        // window is 3 chars; position 17 is the first '.', reachable from 15
        assert_eq!(chunks[0].text, "Aaaaaaaaa bbbbbbb.");
        assert_eq!(reassemble(&chunks), text);
        assert_eq!(chunks.last().unwrap().span_end, text.chars().count());
    }

    #[test]
    fn select_top_ranked() {
        let manifest: Vec<_> = (1..=10)
            .rev()
            .map(|r| ranked(&format!("p{r}"), r))
            .collect();
        let one = select_corpus(&manifest, 1).unwrap();
        assert_eq!(one.documents.len(), 1);
        assert_eq!(one.documents[0].priority_rank, 1);
        assert!(!one.truncated);

        let all = select_corpus(&manifest, 10).unwrap();
        let ranks: Vec<u32> = all.documents.iter().map(|d| d.priority_rank).collect();
        assert_eq!(ranks, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn select_more_than_available_warns() {
        let manifest = vec![ranked("a", 2), ranked("b", 1), ranked("c", 3)];
        let sel = select_corpus(&manifest, 5).unwrap();
        assert_eq!(sel.documents.len(), 3);
        assert!(sel.truncated);
        assert_eq!(sel.documents[0].doc_id, "b");
    }

    #[test]
    fn select_empty_manifest() {
        assert!(matches!(
            select_corpus(&[], 1),
            Err(CorpusError::EmptyManifest)
        ));
    }

    #[test]
    fn manifest_validation() {
        assert!(validate_manifest(&[ranked("a", 1), ranked("b", 2)]).is_ok());
        assert!(validate_manifest(&[ranked("a", 1), ranked("a", 2)]).is_err());
        assert!(validate_manifest(&[ranked("a", 1), ranked("b", 3)]).is_err());
        assert!(validate_manifest(&[ranked("a", 2), ranked("b", 2)]).is_err());
    }

    #[test]
    fn manifest_file_loads_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("docs")).unwrap();
        std::fs::write(dir.path().join("docs/v.txt"), "Vision text.\r\n").unwrap();
        std::fs::write(dir.path().join("docs/o.md"), "# Other").unwrap();
        let manifest = r#"
[[document]]
doc_id = "visionary"
title = "The vision"
priority_rank = 1
path = "docs/v.txt"
format = "plain_text"

[[document]]
doc_id = "other"
priority_rank = 2
path = "docs/o.md"
format = "markdown"
"#;
        let path = dir.path().join("corpus.toml");
        std::fs::write(&path, manifest).unwrap();
        let docs = load_corpus(&path, None).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].title, "The vision");
        assert_eq!(docs[0].text, "Vision text.\n");
        assert_eq!(docs[1].title, "other");
        assert_eq!(docs[1].source_format, SourceFormat::Markdown);
    }
}
