//! Test-suite ground-truth metadata: manifest flaw records, GOOD/BAD
//! function spans and per-file CWE/variant identity.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::normalize_path;

static CWE_IN_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"CWE-?(\d+)").unwrap());
static CWE_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CWE(\d+)_").unwrap());
static VARIANT_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"_(\d+[A-Za-z]*)(?:_[A-Za-z][A-Za-z0-9]*)?$").unwrap());

/// A known flaw location from the manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlawRecord {
    #[serde(rename = "file")]
    pub filepath: String,
    pub line: u32,
    pub cwe: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarity {
    Good,
    Bad,
    Neutral,
}

impl Polarity {
    /// Case-insensitive "good"/"bad" substring rule. A name carrying both
    /// markers is ambiguous and returns `None`.
    pub fn from_function_name(name: &str) -> Option<Polarity> {
        let lower = name.to_ascii_lowercase();
        match (lower.contains("good"), lower.contains("bad")) {
            (true, true) => None,
            (true, false) => Some(Polarity::Good),
            (false, true) => Some(Polarity::Bad),
            (false, false) => Some(Polarity::Neutral),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    #[serde(rename = "file")]
    pub filepath: String,
    #[serde(rename = "function")]
    pub function_name: String,
    #[serde(rename = "start")]
    pub start_line: u32,
    #[serde(rename = "end")]
    pub end_line: u32,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwe: Option<u32>,
}

impl FunctionSpan {
    pub fn contains(&self, line: u32) -> bool {
        self.start_line <= line && line <= self.end_line
    }

    pub fn len(&self) -> u32 {
        self.end_line - self.start_line + 1
    }
}

/// What a test-case filename says about the CWE and flow variant it exercises.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCaseIdentity {
    #[serde(rename = "file")]
    pub filepath: String,
    #[serde(default)]
    pub cwe: Option<u32>,
    #[serde(default)]
    pub variant_id: Option<String>,
}

/// `CWE121_Stack_Based_Buffer_Overflow__char_alloca_memcpy_01.c` yields
/// CWE 121 and variant `01`.
pub fn parse_identity(filepath: &str) -> TestCaseIdentity {
    let basename = filepath.rsplit(['/', '\\']).next().unwrap_or(filepath);
    let stem = match basename.rfind('.') {
        Some(dot) if dot > 0 => &basename[..dot],
        _ => basename,
    };
    let cwe = CWE_PREFIX
        .captures(stem)
        .and_then(|c| c[1].parse().ok())
        .filter(|&c: &u32| c >= 1);
    let variant_id = VARIANT_SUFFIX.captures(stem).map(|c| c[1].to_string());
    TestCaseIdentity {
        filepath: normalize_path(filepath).unwrap_or_else(|_| filepath.to_string()),
        cwe,
        variant_id,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestParse {
    /// Sorted by (filepath, line, cwe), de-duplicated.
    pub flaws: Vec<FlawRecord>,
    pub skipped_missing_line: usize,
    pub skipped_no_cwe: usize,
}

/// Parses the SARD manifest subset:
/// `<container><testcase><file path=".."><flaw line="N" name="CWE-###: .."/></file></testcase></container>`.
/// `<mixed>` elements count as flaws.
pub fn parse_manifest(document: &str) -> Result<ManifestParse> {
    let doc = roxmltree::Document::parse(document).map_err(|e| Error::Xml {
        position: e.pos().to_string(),
        message: e.to_string(),
    })?;

    let mut out = ManifestParse::default();
    let mut flaws = BTreeSet::new();
    for file in doc
        .descendants()
        .filter(|n| n.has_tag_name("file"))
    {
        let Some(path) = file.attribute("path") else {
            continue;
        };
        let filepath = normalize_path(path)?;
        for flaw in file
            .children()
            .filter(|n| n.has_tag_name("flaw") || n.has_tag_name("mixed"))
        {
            let cwe = flaw
                .attribute("name")
                .and_then(|n| CWE_IN_NAME.captures(n))
                .and_then(|c| c[1].parse::<u32>().ok())
                .filter(|&c| c >= 1);
            let Some(cwe) = cwe else {
                out.skipped_no_cwe += 1;
                continue;
            };
            let line = flaw
                .attribute("line")
                .and_then(|l| l.trim().parse::<u32>().ok())
                .filter(|&l| l >= 1);
            let Some(line) = line else {
                out.skipped_missing_line += 1;
                continue;
            };
            flaws.insert(FlawRecord {
                filepath: filepath.clone(),
                line,
                cwe,
            });
        }
    }
    out.flaws = flaws.into_iter().collect();
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpanScan {
    pub spans: Vec<FunctionSpan>,
    pub warnings: Vec<String>,
}

/// Heuristic function-boundary scanner for C and C++ sources.
///
/// A definition is an `identifier(...)` header followed by `{` at file
/// level; `namespace`, `extern` and class/struct bodies are transparent so
/// their members count as file level. The span runs from the line holding
/// the identifier to the line of the matching `}`. Braces inside comments,
/// string and character literals, and preprocessor lines are ignored.
pub fn scan_function_spans(source: &str, filepath: &str) -> SpanScan {
    let code = blank_non_code(source.as_bytes());
    let lines = LineIndex::new(&code);
    let cwe = parse_identity(filepath).cwe;
    let filepath = normalize_path(filepath).unwrap_or_else(|_| filepath.to_string());

    #[derive(PartialEq)]
    enum Frame {
        Transparent,
        Function(usize),
        Other,
    }

    let mut out = SpanScan::default();
    let mut stack: Vec<Frame> = Vec::new();
    let mut open: Vec<(String, u32)> = Vec::new();
    let mut header_start = 0usize;

    for (pos, &b) in code.iter().enumerate() {
        match b {
            b'{' => {
                let at_file_level = stack.iter().all(|f| *f == Frame::Transparent);
                let header = &code[header_start..pos];
                let frame = if !at_file_level {
                    Frame::Other
                } else if let Some((name, name_pos)) = function_header(header) {
                    open.push((name, lines.line_of(header_start + name_pos)));
                    Frame::Function(open.len() - 1)
                } else if is_transparent_header(header) {
                    Frame::Transparent
                } else {
                    Frame::Other
                };
                stack.push(frame);
                header_start = pos + 1;
            }
            b'}' => {
                match stack.pop() {
                    Some(Frame::Function(idx)) => {
                        let (name, start) = open[idx].clone();
                        push_span(&mut out, &filepath, name, start, lines.line_of(pos), cwe);
                    }
                    Some(_) => {}
                    None => out
                        .warnings
                        .push(format!("{filepath}:{}: unmatched `}}`", lines.line_of(pos))),
                }
                header_start = pos + 1;
            }
            b';' => header_start = pos + 1,
            _ => {}
        }
    }

    let last_line = lines.line_of(code.len().saturating_sub(1)).max(1);
    let unclosed: Vec<usize> = stack
        .iter()
        .filter_map(|f| match f {
            Frame::Function(idx) => Some(*idx),
            _ => None,
        })
        .collect();
    for idx in unclosed {
        let (name, start) = open[idx].clone();
        out.warnings.push(format!(
            "{filepath}: unbalanced braces, `{name}` extended to end of file"
        ));
        push_span(&mut out, &filepath, name, start, last_line, cwe);
    }
    out.spans.sort_by_key(|s| (s.start_line, s.end_line));
    out
}

fn push_span(
    out: &mut SpanScan,
    filepath: &str,
    name: String,
    start_line: u32,
    end_line: u32,
    cwe: Option<u32>,
) {
    let polarity = Polarity::from_function_name(&name).unwrap_or_else(|| {
        out.warnings.push(format!(
            "{filepath}:{start_line}: `{name}` carries both good and bad markers"
        ));
        Polarity::Neutral
    });
    out.spans.push(FunctionSpan {
        filepath: filepath.to_string(),
        function_name: name,
        start_line,
        end_line,
        polarity,
        cwe,
    });
}

const NOT_FUNCTIONS: &[&str] = &[
    "if", "for", "while", "switch", "return", "sizeof", "catch", "do", "else", "case",
];

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Returns the function name and its byte offset within `header` when the
/// header text looks like a definition: `... name(args) [qualifiers] `.
fn function_header(header: &[u8]) -> Option<(String, usize)> {
    let paren = header.iter().position(|&b| b == b'(')?;
    let before = &header[..paren];
    let mut end = before.len();
    while end > 0 && before[end - 1].is_ascii_whitespace() {
        end -= 1;
    }
    let mut start = end;
    while start > 0 && (is_ident_byte(before[start - 1]) || matches!(before[start - 1], b':' | b'~'))
    {
        start -= 1;
    }
    let raw = std::str::from_utf8(&before[start..end]).ok()?;
    let name = raw.trim_start_matches(':');
    let name_start = start + (raw.len() - name.len());
    let first = *name.as_bytes().first()?;
    if first.is_ascii_digit() || NOT_FUNCTIONS.contains(&name) {
        return None;
    }
    let text = std::str::from_utf8(header).ok()?;
    if !text.contains("operator") && has_top_level_eq(header) {
        return None;
    }
    // The argument list must close.
    let mut depth = 0i32;
    for &b in &header[paren..] {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    Some((name.to_string(), name_start))
}

fn has_top_level_eq(header: &[u8]) -> bool {
    let mut depth = 0i32;
    for &b in header {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'=' if depth == 0 => return true,
            _ => {}
        }
    }
    false
}

fn is_transparent_header(header: &[u8]) -> bool {
    let text = String::from_utf8_lossy(header);
    if text.contains('=') {
        return false;
    }
    matches!(
        text.split_whitespace().next(),
        Some("namespace" | "extern" | "class" | "struct" | "union")
    )
}

/// Replaces comments, string/char literals and preprocessor lines with
/// spaces, keeping newlines so byte offsets and line numbers are preserved.
fn blank_non_code(src: &[u8]) -> Vec<u8> {
    let mut out = src.to_vec();
    let n = src.len();
    let mut i = 0;
    let mut line_start = true;
    let blank = |out: &mut Vec<u8>, i: usize| {
        if out[i] != b'\n' {
            out[i] = b' ';
        }
    };
    while i < n {
        let b = src[i];
        if line_start && b == b'#' {
            while i < n && src[i] != b'\n' {
                if src[i] == b'\\' && i + 1 < n && src[i + 1] == b'\n' {
                    blank(&mut out, i);
                    i += 2;
                    continue;
                }
                blank(&mut out, i);
                i += 1;
            }
            continue;
        }
        match b {
            b'\n' => {
                line_start = true;
                i += 1;
                continue;
            }
            b'/' if i + 1 < n && src[i + 1] == b'/' => {
                while i < n && src[i] != b'\n' {
                    blank(&mut out, i);
                    i += 1;
                }
                continue;
            }
            b'/' if i + 1 < n && src[i + 1] == b'*' => {
                blank(&mut out, i);
                blank(&mut out, i + 1);
                i += 2;
                while i < n && !(src[i] == b'*' && i + 1 < n && src[i + 1] == b'/') {
                    blank(&mut out, i);
                    i += 1;
                }
                if i < n {
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 2;
                }
                line_start = false;
                continue;
            }
            b'"' | b'\'' => {
                let quote = b;
                blank(&mut out, i);
                i += 1;
                while i < n && src[i] != quote && src[i] != b'\n' {
                    if src[i] == b'\\' && i + 1 < n {
                        blank(&mut out, i);
                        blank(&mut out, i + 1);
                        i += 2;
                        continue;
                    }
                    blank(&mut out, i);
                    i += 1;
                }
                if i < n && src[i] == quote {
                    blank(&mut out, i);
                    i += 1;
                }
                line_start = false;
                continue;
            }
            _ => {}
        }
        if !b.is_ascii_whitespace() {
            line_start = false;
        }
        i += 1;
    }
    out
}

struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    fn new(text: &[u8]) -> Self {
        let mut starts = vec![0];
        starts.extend(
            text.iter()
                .enumerate()
                .filter(|(_, &b)| b == b'\n')
                .map(|(i, _)| i + 1),
        );
        LineIndex { starts }
    }

    /// 1-based line of a byte offset.
    fn line_of(&self, offset: usize) -> u32 {
        self.starts.partition_point(|&s| s <= offset) as u32
    }
}

#[derive(Deserialize)]
struct SpanRecord {
    file: String,
    function: String,
    start: i64,
    end: i64,
}

/// Reads externally supplied spans (`{"file","function","start","end"}`).
/// Polarity and CWE are derived the same way as for scanned spans.
pub fn parse_spans_jsonl(document: &str) -> Result<Vec<FunctionSpan>> {
    let mut spans = Vec::new();
    for (idx, line) in document.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.start < 1 || rec.end < rec.start || rec.end > i64::from(u32::MAX) {
            return Err(Error::Record {
                line: lineno,
                message: format!("invalid span {}..{}", rec.start, rec.end),
            });
        }
        let filepath = normalize_path(&rec.file).map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        spans.push(FunctionSpan {
            cwe: parse_identity(&filepath).cwe,
            polarity: Polarity::from_function_name(&rec.function).unwrap_or(Polarity::Neutral),
            filepath,
            function_name: rec.function,
            start_line: rec.start as u32,
            end_line: rec.end as u32,
        });
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_single_flaw() {
        let xml = r#"<?xml version="1.0"?>
<container>
  <testcase>
    <file path="x/CWE121_a_01.c"><flaw line="42" name="CWE-121: Stack-based Buffer Overflow"/></file>
  </testcase>
</container>"#;
        let m = parse_manifest(xml).unwrap();
        assert_eq!(
            m.flaws,
            vec![FlawRecord {
                filepath: "x/CWE121_a_01.c".into(),
                line: 42,
                cwe: 121
            }]
        );
    }

    #[test]
    fn manifest_empty_and_dedup() {
        assert!(parse_manifest("<container></container>").unwrap().flaws.is_empty());
        let xml = r#"<container><testcase><file path="f.c">
            <flaw line="3" name="CWE-78: OS"/>
            <mixed line="3" name="CWE78 OS"/>
            <flaw name="CWE-78: no line"/>
        </file></testcase></container>"#;
        let m = parse_manifest(xml).unwrap();
        assert_eq!(m.flaws.len(), 1);
        assert_eq!(m.skipped_missing_line, 1);
    }

    #[test]
    fn manifest_malformed_has_location() {
        match parse_manifest("<container><file></container>") {
            Err(Error::Xml { position, .. }) => assert!(position.contains(':')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_distinct_triples_stay_distinct() {
        let xml = r#"<container><testcase><file path="f.c">
            <flaw line="3" name="CWE-78: a"/>
            <flaw line="3" name="CWE-79: a"/>
            <flaw line="4" name="CWE-78: a"/>
        </file><file path="g.c"><flaw line="3" name="CWE-78: a"/></file></testcase></container>"#;
        assert_eq!(parse_manifest(xml).unwrap().flaws.len(), 4);
    }

    #[test]
    fn identity_examples() {
        let id = parse_identity("CWE121_Stack_Based_Buffer_Overflow__char_alloca_memcpy_01.c");
        assert_eq!((id.cwe, id.variant_id.as_deref()), (Some(121), Some("01")));
        let id = parse_identity("helper.c");
        assert_eq!((id.cwe, id.variant_id), (None, None));
        let id = parse_identity("dir/CWE78_OS_Command_Injection__char_console_system_54b.c");
        assert_eq!((id.cwe, id.variant_id.as_deref()), (Some(78), Some("54b")));
        assert_eq!(id.filepath, "dir/CWE78_OS_Command_Injection__char_console_system_54b.c");
    }

    #[test]
    fn scan_single_bad_function() {
        let src = "#include <stdio.h>\n\nvoid CWE121_bad() {\n    int a;\n    a = 1;\n    if (a) {\n        a++;\n    }\n}\n";
        let scan = scan_function_spans(src, "CWE121_a_01.c");
        assert_eq!(
            scan.spans,
            vec![FunctionSpan {
                filepath: "CWE121_a_01.c".into(),
                function_name: "CWE121_bad".into(),
                start_line: 3,
                end_line: 9,
                polarity: Polarity::Bad,
                cwe: Some(121),
            }]
        );
        assert!(scan.warnings.is_empty());
    }

    #[test]
    fn scan_good_marker_with_header_on_two_lines() {
        let mut src = String::new();
        for _ in 0..11 {
            src.push('\n');
        }
        src.push_str("static int goodG2B(int x,\n    char *y)\n{\n  return x;\n}\n");
        let scan = scan_function_spans(&src, "CWE121_a_01.c");
        assert_eq!(scan.spans.len(), 1);
        assert_eq!(scan.spans[0].polarity, Polarity::Good);
        assert_eq!((scan.spans[0].start_line, scan.spans[0].end_line), (12, 16));
    }

    // Hand-counted fixture: bad() spans 3..12, goodB2G() spans 14..20.
    const TRICKY: &str = r#"/* header { comment */
#define BRACE {
void bad()
{
    char *s = "}";
    char c = '}';
    /* { stray open */
    if (s) {
        while (c) { c = 0; }
    }
    // }
}

static void goodB2G(void) {
    struct { int a; } v = { 1 };
    const char *t = "\"{";
    {
        v.a = 2;
    }
}
"#;

    #[test]
    fn scan_ignores_literals_and_comments() {
        let scan = scan_function_spans(TRICKY, "CWE476_x_02.c");
        let got: Vec<_> = scan
            .spans
            .iter()
            .map(|s| (s.function_name.as_str(), s.start_line, s.end_line, s.polarity))
            .collect();
        assert_eq!(
            got,
            vec![
                ("bad", 3, 12, Polarity::Bad),
                ("goodB2G", 14, 20, Polarity::Good)
            ]
        );
        assert!(scan.warnings.is_empty(), "{:?}", scan.warnings);
    }

    #[test]
    fn scan_namespaces_are_transparent() {
        let src = "namespace CWE690_a_01\n{\nvoid bad()\n{\n}\n\nstatic void goodG2B()\n{\n}\n} // namespace\n";
        let scan = scan_function_spans(src, "CWE690_a_01.cpp");
        let names: Vec<_> = scan.spans.iter().map(|s| s.function_name.as_str()).collect();
        assert_eq!(names, vec!["bad", "goodG2B"]);
        assert_eq!(scan.spans[1].start_line, 7);
    }

    #[test]
    fn scan_skips_initializers_and_structs() {
        let src = "int table[] = { 1, 2 };\nstruct s { int a; };\nint f(int x) { return x; }\n";
        let scan = scan_function_spans(src, "f.c");
        assert_eq!(scan.spans.len(), 1);
        assert_eq!(scan.spans[0].function_name, "f");
        assert_eq!(scan.spans[0].cwe, None);
        assert_eq!(scan.spans[0].polarity, Polarity::Neutral);
    }

    #[test]
    fn scan_unbalanced_extends_to_eof() {
        let src = "void bad() {\n  if (1) {\n}\n";
        let scan = scan_function_spans(src, "f.c");
        assert_eq!(scan.spans.len(), 1);
        assert_eq!(scan.spans[0].end_line, 3);
        assert_eq!(scan.warnings.len(), 1);
    }

    #[test]
    fn scan_both_markers_is_neutral_with_warning() {
        let scan = scan_function_spans("void goodbad() {}\n", "f.c");
        assert_eq!(scan.spans[0].polarity, Polarity::Neutral);
        assert_eq!(scan.warnings.len(), 1);
    }

    #[test]
    fn scan_empty_source() {
        let scan = scan_function_spans("", "f.c");
        assert!(scan.spans.is_empty());
        assert!(scan.warnings.is_empty());
    }

    #[test]
    fn scan_is_deterministic() {
        assert_eq!(
            scan_function_spans(TRICKY, "CWE1_a_01.c"),
            scan_function_spans(TRICKY, "CWE1_a_01.c")
        );
    }

    #[test]
    fn span_cwe_matches_file_identity() {
        let scan = scan_function_spans(TRICKY, "dir/CWE476_x_02.c");
        let id = parse_identity("dir/CWE476_x_02.c");
        assert!(scan.spans.iter().all(|s| s.cwe == id.cwe));
    }

    #[test]
    fn spans_jsonl_override() {
        let doc = r#"{"file":"CWE121_a_01.c","function":"goodG2B","start":12,"end":20}"#;
        let spans = parse_spans_jsonl(doc).unwrap();
        assert_eq!(spans[0].polarity, Polarity::Good);
        assert_eq!(spans[0].cwe, Some(121));
        assert!(parse_spans_jsonl(r#"{"file":"f.c","function":"f","start":5,"end":2}"#).is_err());
    }
}
