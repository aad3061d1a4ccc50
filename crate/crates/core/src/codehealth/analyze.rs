//! Lexer-level sub-factor extraction.
//!
//! No parser is involved: functions are found with header patterns plus brace
//! matching (brace dialect) or indentation (indent dialect), and cyclomatic
//! complexity is 1 + the number of decision tokens inside each function.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;

use super::strip::strip;
use super::{Dialect, SubFactorVector};

/// Number of consecutive code lines hashed as one duplication window.
pub const DEFAULT_DUPLICATION_WINDOW: usize = 6;

/// Identifiers strictly shorter than this count as "short".
const SHORT_IDENTIFIER_LEN: usize = 3;

static DECISION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:if|elif|for|while|case|catch|except|and|or)\b|&&|\|\|").expect("valid regex")
});

static MATCH_KW: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bmatch\b").expect("valid regex"));

static IDENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Za-z_][A-Za-z0-9_]*\b").expect("valid regex"));

static RUST_FN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bfn\s+[A-Za-z_]\w*[^(;{]*\(").expect("valid regex"));

static GO_FUNC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bfunc\s*(?:\([^)]*\)\s*)?[A-Za-z_]\w*\s*(?:\[[^\]]*\])?\s*\(")
        .expect("valid regex")
});

static JS_FUNCTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bfunction\b\s*\*?\s*(?:[A-Za-z_$][\w$]*)?\s*\(").expect("valid regex")
});

static C_LIKE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*((?:[A-Za-z_@][\w:<>,\*&\[\]\.?@]*\s+)*)[\*&]*([A-Za-z_$][\w$]*)\s*\(")
        .expect("valid regex")
});

static C_LIKE_TAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:(?:const|noexcept|override|final|async|throws\s+[\w.,\s]+|:\s*[\w<>\[\]., |?]+)\s*)*$")
        .expect("valid regex")
});

static PY_DEF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[ \t]*(?:async[ \t]+)?def[ \t]+[A-Za-z_]\w*[ \t]*(?:\[[^\]]*\])?[ \t]*\(")
        .expect("valid regex")
});

static SELF_PARAM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:&(?:'\w+\s+)?)?(?:mut\s+)?self\b").expect("valid regex"));

/// Words that can precede `(` without opening a function definition.
const NOT_A_FUNCTION: &[&str] = &[
    "if",
    "else",
    "for",
    "foreach",
    "while",
    "do",
    "switch",
    "case",
    "match",
    "catch",
    "try",
    "return",
    "new",
    "throw",
    "throws",
    "typeof",
    "sizeof",
    "await",
    "yield",
    "delete",
    "using",
    "lock",
    "synchronized",
    "fixed",
    "unsafe",
    "loop",
    "when",
    "with",
    "assert",
    "elif",
    "except",
    "print",
    "echo",
    "go",
    "defer",
    "not",
    "and",
    "or",
    "in",
    "is",
    "let",
    "const",
    "var",
];

const KEYWORDS: &[&str] = &[
    "abstract",
    "and",
    "as",
    "assert",
    "async",
    "auto",
    "await",
    "bool",
    "break",
    "byte",
    "case",
    "catch",
    "chan",
    "char",
    "class",
    "const",
    "continue",
    "crate",
    "def",
    "default",
    "defer",
    "del",
    "do",
    "double",
    "dyn",
    "elif",
    "else",
    "enum",
    "except",
    "export",
    "extends",
    "extern",
    "false",
    "False",
    "final",
    "finally",
    "float",
    "fn",
    "for",
    "from",
    "func",
    "function",
    "get",
    "global",
    "go",
    "if",
    "impl",
    "implements",
    "import",
    "in",
    "instanceof",
    "int",
    "interface",
    "is",
    "lambda",
    "let",
    "long",
    "loop",
    "map",
    "match",
    "mod",
    "move",
    "mut",
    "namespace",
    "new",
    "nil",
    "None",
    "nonlocal",
    "not",
    "null",
    "of",
    "or",
    "override",
    "package",
    "pass",
    "private",
    "protected",
    "pub",
    "public",
    "raise",
    "ref",
    "return",
    "self",
    "Self",
    "set",
    "short",
    "signed",
    "static",
    "str",
    "struct",
    "super",
    "switch",
    "template",
    "this",
    "throw",
    "throws",
    "trait",
    "true",
    "True",
    "try",
    "type",
    "typename",
    "typeof",
    "undefined",
    "unsafe",
    "unsigned",
    "use",
    "using",
    "var",
    "virtual",
    "void",
    "where",
    "while",
    "with",
    "yield",
    "u8",
    "u16",
    "u32",
    "u64",
    "i8",
    "i16",
    "i32",
    "i64",
    "f32",
    "f64",
    "usize",
    "isize",
];

#[derive(Debug, Clone)]
struct FunctionSpan {
    /// Byte range [start, end] in the stripped text covered by the function.
    start: usize,
    end: usize,
    start_line: usize,
    end_line: usize,
    args: usize,
    nesting: usize,
}

struct Text<'a> {
    src: &'a str,
    bytes: &'a [u8],
    line_starts: Vec<usize>,
}

impl<'a> Text<'a> {
    fn new(src: &'a str) -> Self {
        let mut line_starts = vec![0];
        for (i, b) in src.bytes().enumerate() {
            if b == b'\n' {
                line_starts.push(i + 1);
            }
        }
        Self {
            src,
            bytes: src.as_bytes(),
            line_starts,
        }
    }

    fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    fn line_of(&self, offset: usize) -> usize {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    fn line(&self, i: usize) -> &'a str {
        let start = self.line_starts[i];
        let end = self
            .line_starts
            .get(i + 1)
            .map(|e| e - 1)
            .unwrap_or(self.src.len());
        &self.src[start..end]
    }

    fn line_end(&self, i: usize) -> usize {
        self.line_starts
            .get(i + 1)
            .map(|e| e - 1)
            .unwrap_or(self.src.len())
    }

    /// Offset of the byte closing the bracket opened at `open`.
    fn matching(&self, open: usize, left: u8, right: u8) -> Option<usize> {
        let mut depth = 0usize;
        for (i, &b) in self.bytes.iter().enumerate().skip(open) {
            if b == left {
                depth += 1;
            } else if b == right {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(i);
                }
            }
        }
        None
    }

    fn is_blank(&self, i: usize) -> bool {
        self.line(i).trim().is_empty()
    }
}

/// Extract the sub-factor vector of one source file.
///
/// Pure and deterministic. An empty (or comment-only) file yields the
/// all-zero vector.
pub fn analyze_file(source: &str, dialect: Dialect) -> SubFactorVector {
    analyze_file_with_window(source, dialect, DEFAULT_DUPLICATION_WINDOW)
}

pub fn analyze_file_with_window(source: &str, dialect: Dialect, window: usize) -> SubFactorVector {
    let stripped = strip(source, dialect);
    let text = Text::new(&stripped);

    let code_lines: Vec<usize> = (0..text.line_count())
        .filter(|&i| !text.is_blank(i))
        .collect();
    let file_loc = code_lines.len();
    if file_loc == 0 {
        return SubFactorVector::default();
    }

    let depth = brace_depths(text.bytes);
    let functions = match dialect {
        Dialect::Brace => brace_functions(&text, &depth),
        Dialect::Indent => indent_functions(&text),
    };

    // Decision tokens, each attributed to the innermost enclosing function.
    let mut per_function = vec![0usize; functions.len()];
    let mut top_level = 0usize;
    for offset in decision_offsets(&text, dialect, &depth) {
        match innermost(&functions, offset) {
            Some(idx) => per_function[idx] += 1,
            None => top_level += 1,
        }
    }

    let mut complexities: Vec<usize> = per_function.iter().map(|d| d + 1).collect();
    let mut nesting_max = functions.iter().map(|f| f.nesting).max().unwrap_or(0);
    if functions.is_empty() || top_level > 0 {
        complexities.push(top_level + 1);
        nesting_max = nesting_max.max(top_level_nesting(&text, dialect, &depth, &functions));
    }

    let cyclomatic_max = complexities.iter().copied().max().unwrap_or(0);
    let cyclomatic_mean = if complexities.is_empty() {
        0.0
    } else {
        complexities.iter().sum::<usize>() as f64 / complexities.len() as f64
    };

    let function_length_max = functions
        .iter()
        .map(|f| {
            (f.start_line..=f.end_line)
                .filter(|&l| !text.is_blank(l))
                .count()
        })
        .max()
        .unwrap_or(0);
    let arg_count_max = functions.iter().map(|f| f.args).max().unwrap_or(0);

    SubFactorVector {
        cyclomatic_max: cyclomatic_max as u32,
        cyclomatic_mean,
        file_loc: file_loc as u32,
        function_length_max: function_length_max as u32,
        nesting_depth_max: nesting_max as u32,
        arg_count_max: arg_count_max as u32,
        duplication_ratio: duplication_ratio(&text, &code_lines, window),
        identifier_shortness: identifier_shortness(&stripped),
    }
}

/// depth[i] = number of `{` opened and not yet closed before byte i.
fn brace_depths(bytes: &[u8]) -> Vec<u32> {
    let mut depth = Vec::with_capacity(bytes.len() + 1);
    let mut d = 0u32;
    for &b in bytes {
        depth.push(d);
        match b {
            b'{' => d += 1,
            b'}' => d = d.saturating_sub(1),
            _ => {}
        }
    }
    depth.push(d);
    depth
}

fn innermost(functions: &[FunctionSpan], offset: usize) -> Option<usize> {
    functions
        .iter()
        .enumerate()
        .filter(|(_, f)| f.start <= offset && offset <= f.end)
        .max_by_key(|(_, f)| f.start)
        .map(|(i, _)| i)
}

fn count_params(inner: &str) -> usize {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    let mut prev = ' ';
    for c in inner.chars() {
        match c {
            '(' | '[' | '{' | '<' => depth += 1,
            '>' if prev == '-' || prev == '=' => {}
            ')' | ']' | '}' | '>' => depth = (depth - 1).max(0),
            ',' if depth == 0 => {
                items.push(std::mem::take(&mut current));
                prev = c;
                continue;
            }
            _ => {}
        }
        current.push(c);
        prev = c;
    }
    items.push(current);
    items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .filter(|s| !matches!(*s, "void" | "cls" | "this" | "*" | "/"))
        .filter(|s| !SELF_PARAM.is_match(s))
        .count()
}

fn brace_functions(text: &Text<'_>, depth: &[u32]) -> Vec<FunctionSpan> {
    let mut spans: Vec<FunctionSpan> = Vec::new();
    let mut seen_bodies = HashSet::new();
    for li in 0..text.line_count() {
        let line = text.line(li);
        let base = text.line_starts[li];
        let Some((paren, generic)) = function_header(line) else {
            continue;
        };
        let open_paren = base + paren;
        let Some(close_paren) = text.matching(open_paren, b'(', b')') else {
            continue;
        };
        // The body must open before any statement terminator.
        let mut body_open = None;
        for (i, &b) in text.bytes.iter().enumerate().skip(close_paren + 1) {
            match b {
                b'{' => {
                    body_open = Some(i);
                    break;
                }
                b';' | b'}' => break,
                _ => {}
            }
        }
        let Some(open) = body_open else { continue };
        if generic && !C_LIKE_TAIL.is_match(&text.src[close_paren + 1..open]) {
            continue;
        }
        if !seen_bodies.insert(open) {
            continue;
        }
        let Some(close) = text.matching(open, b'{', b'}') else {
            continue;
        };
        let inner_base = depth[open] + 1;
        let deepest = depth[open + 1..=close]
            .iter()
            .copied()
            .max()
            .unwrap_or(inner_base);
        spans.push(FunctionSpan {
            start: base,
            end: close,
            start_line: li,
            end_line: text.line_of(close),
            args: count_params(&text.src[open_paren + 1..close_paren]),
            nesting: deepest.saturating_sub(inner_base) as usize,
        });
    }
    spans
}

/// Offset of the parameter list's `(` within `line`, and whether the match came
/// from the generic C-like pattern (which needs a stricter tail check).
fn function_header(line: &str) -> Option<(usize, bool)> {
    for re in [&*RUST_FN, &*GO_FUNC, &*JS_FUNCTION] {
        if let Some(m) = re.find(line) {
            return Some((m.end() - 1, false));
        }
    }
    let caps = C_LIKE.captures(line)?;
    let name = caps.get(2)?.as_str();
    if NOT_A_FUNCTION.contains(&name) {
        return None;
    }
    let prefix = caps.get(1).map(|m| m.as_str()).unwrap_or("");
    if prefix
        .split_whitespace()
        .any(|w| NOT_A_FUNCTION.contains(&w) || w.ends_with('='))
    {
        return None;
    }
    Some((caps.get(0)?.end() - 1, true))
}

fn indent_width(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 4 } else { 1 })
        .sum()
}

/// Indentation level of each line; `None` for blank lines. Lines that start
/// inside an open bracket continue the previous logical line's level.
fn indent_levels(text: &Text<'_>) -> Vec<Option<usize>> {
    let mut levels = Vec::with_capacity(text.line_count());
    let mut stack: Vec<usize> = vec![0];
    let mut bracket_depth = 0i32;
    let mut last_level = 0usize;
    for li in 0..text.line_count() {
        let line = text.line(li);
        if line.trim().is_empty() {
            levels.push(None);
            continue;
        }
        if bracket_depth > 0 {
            levels.push(Some(last_level));
        } else {
            let w = indent_width(line);
            while stack.len() > 1 && *stack.last().unwrap() > w {
                stack.pop();
            }
            if w > *stack.last().unwrap() {
                stack.push(w);
            }
            last_level = stack.len() - 1;
            levels.push(Some(last_level));
        }
        for b in line.bytes() {
            match b {
                b'(' | b'[' | b'{' => bracket_depth += 1,
                b')' | b']' | b'}' => bracket_depth = (bracket_depth - 1).max(0),
                _ => {}
            }
        }
    }
    levels
}

fn indent_functions(text: &Text<'_>) -> Vec<FunctionSpan> {
    let levels = indent_levels(text);
    let mut spans = Vec::new();
    for li in 0..text.line_count() {
        let line = text.line(li);
        let Some(m) = PY_DEF.find(line) else { continue };
        let base = text.line_starts[li];
        let open_paren = base + m.end() - 1;
        let Some(close_paren) = text.matching(open_paren, b'(', b')') else {
            continue;
        };
        let sig_end = text.line_of(close_paren);
        let header_indent = indent_width(line);
        let mut end_line = sig_end;
        for l in sig_end + 1..text.line_count() {
            if text.is_blank(l) {
                continue;
            }
            if indent_width(text.line(l)) <= header_indent {
                break;
            }
            end_line = l;
        }
        let header_level = levels[li].unwrap_or(0);
        let nesting = (sig_end + 1..=end_line)
            .filter_map(|l| levels.get(l).copied().flatten())
            .map(|lv| lv.saturating_sub(header_level + 1))
            .max()
            .unwrap_or(0);
        spans.push(FunctionSpan {
            start: base,
            end: text.line_end(end_line),
            start_line: li,
            end_line,
            args: count_params(&text.src[open_paren + 1..close_paren]),
            nesting,
        });
    }
    spans
}

fn top_level_nesting(
    text: &Text<'_>,
    dialect: Dialect,
    depth: &[u32],
    functions: &[FunctionSpan],
) -> usize {
    let outside = |offset: usize| {
        !functions
            .iter()
            .any(|f| f.start <= offset && offset <= f.end)
    };
    match dialect {
        Dialect::Brace => text
            .bytes
            .iter()
            .enumerate()
            .filter(|(i, b)| !b.is_ascii_whitespace() && **b != b'}' && outside(*i))
            .map(|(i, _)| depth[i] as usize)
            .max()
            .unwrap_or(0),
        Dialect::Indent => {
            let levels = indent_levels(text);
            (0..text.line_count())
                .filter(|&l| outside(text.line_starts[l]))
                .filter_map(|l| levels[l])
                .max()
                .unwrap_or(0)
        }
    }
}

fn decision_offsets(text: &Text<'_>, dialect: Dialect, depth: &[u32]) -> Vec<usize> {
    let mut offsets: Vec<usize> = DECISION.find_iter(text.src).map(|m| m.start()).collect();
    if dialect == Dialect::Brace {
        let bytes = text.bytes;
        for (i, &b) in bytes.iter().enumerate() {
            if b != b'?' {
                continue;
            }
            let next = bytes.get(i + 1).copied().unwrap_or(b' ');
            let prev = if i > 0 { bytes[i - 1] } else { b' ' };
            if matches!(next, b'.' | b'?' | b':' | b'=') || matches!(prev, b'?' | b'<') {
                continue;
            }
            offsets.push(i);
        }
        // Each arm of a `match { pat => ... }` block is one decision.
        for m in MATCH_KW.find_iter(text.src) {
            let mut open = None;
            for (i, &b) in bytes.iter().enumerate().skip(m.end()) {
                match b {
                    b'{' => {
                        open = Some(i);
                        break;
                    }
                    b';' | b'}' => break,
                    _ => {}
                }
            }
            let Some(open) = open else { continue };
            let Some(close) = text.matching(open, b'{', b'}') else {
                continue;
            };
            let arm_depth = depth[open] + 1;
            for i in open + 1..close {
                if bytes[i] == b'=' && bytes.get(i + 1) == Some(&b'>') && depth[i] == arm_depth {
                    offsets.push(i);
                }
            }
        }
    }
    offsets.sort_unstable();
    offsets
}

fn duplication_ratio(text: &Text<'_>, code_lines: &[usize], window: usize) -> f64 {
    if window == 0 || code_lines.len() < window {
        return 0.0;
    }
    let normalized: Vec<String> = code_lines
        .iter()
        .map(|&l| {
            text.line(l)
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let meaningful = |w: &[String]| w.iter().any(|l| l.chars().any(char::is_alphanumeric));

    let mut counts: HashMap<&[String], usize> = HashMap::new();
    for w in normalized.windows(window) {
        if meaningful(w) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut duplicated = vec![false; normalized.len()];
    for (start, w) in normalized.windows(window).enumerate() {
        if counts.get(w).copied().unwrap_or(0) >= 2 {
            duplicated[start..start + window]
                .iter_mut()
                .for_each(|d| *d = true);
        }
    }
    duplicated.iter().filter(|&&d| d).count() as f64 / code_lines.len() as f64
}

fn identifier_shortness(stripped: &str) -> f64 {
    let bytes = stripped.as_bytes();
    let mut distinct: HashSet<&str> = HashSet::new();
    for m in IDENT.find_iter(stripped) {
        let word = m.as_str();
        // String prefixes such as f"..." or b'...'
        if matches!(bytes.get(m.end()), Some(b'"') | Some(b'\'')) {
            continue;
        }
        if word.bytes().all(|b| b == b'_') || KEYWORDS.contains(&word) {
            continue;
        }
        distinct.insert(word);
    }
    if distinct.is_empty() {
        return 0.0;
    }
    let short = distinct
        .iter()
        .filter(|w| w.chars().count() < SHORT_IDENTIFIER_LEN)
        .count();
    short as f64 / distinct.len() as f64
}
