//! Minimal BibTeX reader for exporter output.
//!
//! Supports `@article`, `@inproceedings`, `@incollection`, `@misc` and `@book`
//! entries with brace- or quote-delimited values and bare numbers. `@comment`
//! blocks and text between entries are skipped. String macros, `#`
//! concatenation and cross-references are rejected as syntax errors.

use std::collections::BTreeMap;

pub const SUPPORTED_TYPES: [&str; 5] = ["article", "inproceedings", "incollection", "misc", "book"];

/// One syntactically parsed entry. Field names are lowercased; values have
/// their grouping braces removed and whitespace collapsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    pub entry_type: String,
    pub key: String,
    pub fields: BTreeMap<String, String>,
    /// Byte offset of the entry's `@`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub position: usize,
    /// Citation key, when the parser got far enough to read it.
    pub key: Option<String>,
    pub message: String,
}

/// Result of scanning a whole document: every entry is either parsed or
/// reported as a syntax error; the scanner resynchronizes at the next `@`.
#[derive(Debug, Default)]
pub struct ScanResult {
    pub entries: Vec<RawEntry>,
    pub errors: Vec<SyntaxError>,
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':' | b'.' | b'/' | b'+')) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn expect(&mut self, b: u8) -> Result<(), String> {
        self.skip_ws();
        match self.peek() {
            Some(got) if got == b => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => Err(format!("expected '{}', found '{}'", b as char, got as char)),
            None => Err(format!("expected '{}', found end of input", b as char)),
        }
    }
}

fn clean_value(raw: &str) -> String {
    raw.chars()
        .filter(|&c| c != '{' && c != '}')
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reads a balanced `{...}` group; the cursor sits on the opening brace.
fn braced(cur: &mut Cursor<'_>) -> Result<String, String> {
    let start = cur.pos + 1;
    let mut depth = 0usize;
    while let Some(b) = cur.peek() {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    let s = &cur.src[start..cur.pos];
                    cur.pos += 1;
                    return String::from_utf8(s.to_vec()).map_err(|_| "invalid utf-8 in value".to_string());
                }
            }
            b'@' if depth == 1 && at_line_start(cur.src, cur.pos) => {
                return Err("unterminated braced value".into());
            }
            _ => {}
        }
        cur.pos += 1;
    }
    Err("unterminated braced value".into())
}

fn quoted(cur: &mut Cursor<'_>) -> Result<String, String> {
    let start = cur.pos + 1;
    cur.pos += 1;
    let mut depth = 0usize;
    while let Some(b) = cur.peek() {
        match b {
            b'{' => depth += 1,
            b'}' => depth = depth.saturating_sub(1),
            b'"' if depth == 0 && cur.src[cur.pos - 1] != b'\\' => {
                let s = &cur.src[start..cur.pos];
                cur.pos += 1;
                return String::from_utf8(s.to_vec()).map_err(|_| "invalid utf-8 in value".to_string());
            }
            _ => {}
        }
        cur.pos += 1;
    }
    Err("unterminated quoted value".into())
}

fn at_line_start(src: &[u8], pos: usize) -> bool {
    src[..pos].iter().rev().take_while(|&&b| b != b'\n').all(|b| b.is_ascii_whitespace())
}

fn value(cur: &mut Cursor<'_>) -> Result<String, String> {
    cur.skip_ws();
    let raw = match cur.peek() {
        Some(b'{') => braced(cur)?,
        Some(b'"') => quoted(cur)?,
        Some(b) if b.is_ascii_digit() => {
            let start = cur.pos;
            while matches!(cur.peek(), Some(b) if b.is_ascii_digit()) {
                cur.pos += 1;
            }
            String::from_utf8_lossy(&cur.src[start..cur.pos]).into_owned()
        }
        Some(b) if b.is_ascii_alphabetic() => return Err("string macros are not supported".into()),
        Some(b) => return Err(format!("unexpected '{}' at start of value", b as char)),
        None => return Err("unexpected end of input in value".into()),
    };
    cur.skip_ws();
    if cur.peek() == Some(b'#') {
        return Err("value concatenation is not supported".into());
    }
    Ok(clean_value(&raw))
}

fn entry(cur: &mut Cursor<'_>, key_out: &mut Option<String>) -> Result<Option<RawEntry>, String> {
    let offset = cur.pos;
    cur.pos += 1; // '@'
    cur.skip_ws();
    let entry_type = cur.ident().to_ascii_lowercase();
    if entry_type == "comment" {
        cur.skip_ws();
        if cur.peek() == Some(b'{') {
            braced(cur)?;
        }
        return Ok(None);
    }
    if entry_type.is_empty() {
        return Err("missing entry type after '@'".into());
    }
    if !SUPPORTED_TYPES.contains(&entry_type.as_str()) {
        return Err(format!("unsupported entry type @{entry_type}"));
    }
    cur.expect(b'{')?;
    cur.skip_ws();
    let key = cur.ident().to_string();
    if key.is_empty() {
        return Err("missing citation key".into());
    }
    *key_out = Some(key.clone());
    let mut fields = BTreeMap::new();
    loop {
        cur.skip_ws();
        match cur.peek() {
            Some(b'}') => {
                cur.pos += 1;
                break;
            }
            Some(b',') => {
                cur.pos += 1;
                cur.skip_ws();
                if cur.peek() == Some(b'}') {
                    cur.pos += 1;
                    break;
                }
                let name = cur.ident().to_ascii_lowercase();
                if name.is_empty() {
                    return Err("expected field name".into());
                }
                cur.expect(b'=')?;
                let v = value(cur)?;
                if fields.insert(name.clone(), v).is_some() {
                    return Err(format!("field {name} given twice"));
                }
            }
            Some(b) => return Err(format!("expected ',' or '}}', found '{}'", b as char)),
            None => return Err("unexpected end of input inside entry".into()),
        }
    }
    Ok(Some(RawEntry { entry_type, key, fields, offset }))
}

fn resync(cur: &mut Cursor<'_>) {
    cur.pos += 1;
    while let Some(b) = cur.peek() {
        if b == b'@' && at_line_start(cur.src, cur.pos) {
            return;
        }
        cur.pos += 1;
    }
}

pub fn scan(src: &[u8]) -> ScanResult {
    let mut out = ScanResult::default();
    let mut cur = Cursor { src, pos: 0 };
    while cur.pos < src.len() {
        if cur.peek() != Some(b'@') {
            cur.pos += 1;
            continue;
        }
        let start = cur.pos;
        let mut key = None;
        match entry(&mut cur, &mut key) {
            Ok(Some(e)) => out.entries.push(e),
            Ok(None) => {}
            Err(message) => {
                let position = cur.pos.min(src.len());
                out.errors.push(SyntaxError { position, key, message });
                cur.pos = start;
                resync(&mut cur);
            }
        }
    }
    out
}

/// Splits an author field on top-level ` and ` separators.
pub fn split_authors(field: &str) -> Vec<String> {
    let words: Vec<&str> = field.split_whitespace().collect();
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for w in words {
        if w.eq_ignore_ascii_case("and") {
            if !current.is_empty() {
                out.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(w);
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}
