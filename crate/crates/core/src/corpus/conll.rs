//! CoNLL-style `<token>\t<tag>` files.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{CorpusError, Document, LabelSet, Sentence, Tag, Token};

/// Document separator line.
pub const DOCSTART: &str = "-DOCSTART-";

struct Builder {
    source: String,
    docs: Vec<Document>,
    sentences: Vec<Sentence>,
    tokens: Vec<Token>,
    saw_docstart: bool,
}

impl Builder {
    fn new(source: &str) -> Self {
        Self {
            source: source.to_string(),
            docs: Vec::new(),
            sentences: Vec::new(),
            tokens: Vec::new(),
            saw_docstart: false,
        }
    }

    fn end_sentence(&mut self) {
        if !self.tokens.is_empty() {
            // tokens were validated as they were pushed
            self.sentences.push(Sentence { tokens: std::mem::take(&mut self.tokens) });
        }
    }

    fn end_document(&mut self) {
        self.end_sentence();
        if !self.sentences.is_empty() {
            let sentences = std::mem::take(&mut self.sentences);
            self.docs.push(Document::new(String::new(), sentences));
        }
    }

    fn finish(mut self) -> Vec<Document> {
        self.end_document();
        let numbered = self.saw_docstart;
        for (i, d) in self.docs.iter_mut().enumerate() {
            d.id = if numbered { format!("{}#{}", self.source, i + 1) } else { self.source.clone() };
        }
        self.docs
    }
}

fn lines(input: impl Read) -> impl Iterator<Item = (usize, io::Result<String>)> {
    BufReader::new(input).lines().enumerate().map(|(i, l)| {
        (
            i + 1,
            l.map(|mut s| {
                if s.ends_with('\r') {
                    s.pop();
                }
                s
            }),
        )
    })
}

fn io_err(source: &str, e: io::Error) -> CorpusError {
    CorpusError::Io { path: source.to_string(), message: e.to_string() }
}

/// Parses a tagged corpus. `source` names the input; it becomes the document
/// id (suffixed `#n` when the file contains `-DOCSTART-` separators).
pub fn parse_conll(input: impl Read, labels: &LabelSet, source: &str) -> Result<Vec<Document>, CorpusError> {
    let mut b = Builder::new(source);
    for (line_no, line) in lines(input) {
        let line = line.map_err(|e| io_err(source, e))?;
        if line.trim().is_empty() {
            b.end_sentence();
            continue;
        }
        if line == DOCSTART {
            b.saw_docstart = true;
            b.end_document();
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected `<token>\\t<tag>`, found {} field(s)", fields.len()),
            });
        }
        let (text, tag_str) = (fields[0], fields[1]);
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::Parse { line: line_no, message: format!("invalid token `{text}`") });
        }
        let tag: Tag = tag_str.parse().map_err(|message| CorpusError::Parse { line: line_no, message })?;
        if let Some(l) = tag.label() {
            if !labels.contains(l) {
                return Err(CorpusError::Schema { line: line_no, label: l.to_string() });
            }
        }
        let previous = b.tokens.last().map(|t| &t.tag);
        if !tag.can_follow(previous) {
            return Err(CorpusError::Tagging {
                line: line_no,
                tag: tag.to_string(),
                previous: previous.map_or("<sentence start>".to_string(), Tag::to_string),
            });
        }
        b.tokens.push(Token::new(text, tag));
    }
    Ok(b.finish())
}

/// Parses token columns only; any tag column is ignored and every token is
/// tagged `O`.
pub fn parse_conll_untagged(input: impl Read, source: &str) -> Result<Vec<Document>, CorpusError> {
    let mut b = Builder::new(source);
    for (line_no, line) in lines(input) {
        let line = line.map_err(|e| io_err(source, e))?;
        if line.trim().is_empty() {
            b.end_sentence();
            continue;
        }
        if line == DOCSTART {
            b.saw_docstart = true;
            b.end_document();
            continue;
        }
        let text = line.split('\t').next().unwrap_or_default();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::Parse { line: line_no, message: format!("invalid token `{text}`") });
        }
        b.tokens.push(Token::untagged(text));
    }
    Ok(b.finish())
}

/// Reads and parses a tagged corpus file; the file name becomes the document id.
pub fn read_conll_file(path: &Path, labels: &LabelSet) -> Result<Vec<Document>, CorpusError> {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let file = std::fs::File::open(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    parse_conll(file, labels, &name)
}

/// Serializes documents. A `-DOCSTART-` line precedes each document when
/// there is more than one.
pub fn write_conll(docs: &[Document], mut out: impl Write) -> io::Result<()> {
    let separate = docs.len() > 1;
    for d in docs {
        if separate {
            writeln!(out, "{DOCSTART}\n")?;
        }
        for s in &d.sentences {
            for t in s.tokens() {
                writeln!(out, "{}\t{}", t.text, t.tag)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
