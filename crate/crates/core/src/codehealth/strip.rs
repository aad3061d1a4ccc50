//! Comment and string-literal stripping.
//!
//! Produces text with the same line structure as the input where comments are
//! deleted and string literal bodies are emptied (the delimiters stay, so
//! `call("a, b")` still reads as one argument). Everything downstream counts
//! tokens on this output, which keeps keywords inside strings and comments
//! from inflating the metrics.

use super::Dialect;

pub(crate) fn strip(source: &str, dialect: Dialect) -> String {
    match dialect {
        Dialect::Brace => strip_brace(source),
        Dialect::Indent => strip_indent(source),
    }
}

fn is_ident(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Emit newlines contained in `chars[from..to]`, dropping everything else.
fn keep_newlines(out: &mut String, chars: &[char], from: usize, to: usize) {
    for &c in &chars[from..to.min(chars.len())] {
        if c == '\n' {
            out.push('\n');
        }
    }
}

fn strip_brace(source: &str) -> String {
    let chars: Vec<char> = source.chars().collect();
    let n = chars.len();
    let mut out = String::with_capacity(source.len());
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            '/' if next == Some('/') => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if next == Some('*') => {
                let mut j = i + 2;
                while j < n && !(chars[j] == '*' && chars.get(j + 1) == Some(&'/')) {
                    j += 1;
                }
                let end = (j + 2).min(n);
                keep_newlines(&mut out, &chars, i, end);
                i = end;
            }
            'r' if (i == 0 || !is_ident(chars[i - 1])) && matches!(next, Some('"') | Some('#')) => {
                // Rust raw string r"..." / r#"..."#
                let mut j = i + 1;
                let mut hashes = 0;
                while j < n && chars[j] == '#' {
                    hashes += 1;
                    j += 1;
                }
                if j < n && chars[j] == '"' {
                    let body_start = j + 1;
                    let mut k = body_start;
                    let end = loop {
                        if k >= n {
                            break n;
                        }
                        if chars[k] == '"'
                            && (0..hashes).all(|h| chars.get(k + 1 + h) == Some(&'#'))
                        {
                            break k + 1 + hashes;
                        }
                        k += 1;
                    };
                    out.push_str("\"\"");
                    keep_newlines(&mut out, &chars, body_start, end);
                    i = end;
                } else {
                    out.push(c);
                    i += 1;
                }
            }
            '"' => {
                let end = scan_quoted(&chars, i + 1, '"', false);
                out.push_str("\"\"");
                keep_newlines(&mut out, &chars, i + 1, end);
                i = end;
            }
            '`' => {
                let end = scan_quoted(&chars, i + 1, '`', true);
                out.push_str("``");
                keep_newlines(&mut out, &chars, i + 1, end);
                i = end;
            }
            '\'' => {
                // Char literal only when it closes within a short span; otherwise
                // treat it as a lifetime / label tick.
                if let Some(end) = char_literal_end(&chars, i) {
                    out.push_str("''");
                    i = end;
                } else {
                    out.push(c);
                    i += 1;
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

/// Index one past the closing delimiter. Unterminated single-line strings end
/// at the newline so one bad quote cannot swallow the rest of the file.
fn scan_quoted(chars: &[char], mut i: usize, delim: char, multiline: bool) -> usize {
    let n = chars.len();
    while i < n {
        match chars[i] {
            '\\' => i += 2,
            c if c == delim => return i + 1,
            '\n' if !multiline => return i,
            _ => i += 1,
        }
    }
    n
}

fn char_literal_end(chars: &[char], start: usize) -> Option<usize> {
    let n = chars.len();
    let mut j = start + 1;
    if j >= n || chars[j] == '\n' || chars[j] == '\'' {
        return None;
    }
    if chars[j] == '\\' {
        j += 2;
        let limit = (start + 12).min(n);
        while j < limit {
            if chars[j] == '\'' {
                return Some(j + 1);
            }
            if chars[j] == '\n' {
                return None;
            }
            j += 1;
        }
        None
    } else if chars.get(j + 1) == Some(&'\'') {
        Some(j + 2)
    } else {
        None
    }
}

fn strip_indent(source: &str) -> String {
    let chars: Vec<char> = source.chars().collect();
    let n = chars.len();
    let mut out = String::with_capacity(source.len());
    let mut i = 0;
    while i < n {
        let c = chars[i];
        match c {
            '#' => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' | '\'' => {
                let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                if triple {
                    let mut j = i + 3;
                    while j < n {
                        if chars[j] == '\\' {
                            j += 2;
                            continue;
                        }
                        if chars[j] == c
                            && chars.get(j + 1) == Some(&c)
                            && chars.get(j + 2) == Some(&c)
                        {
                            break;
                        }
                        j += 1;
                    }
                    let end = (j + 3).min(n);
                    out.push(c);
                    out.push(c);
                    keep_newlines(&mut out, &chars, i, end);
                    i = end;
                } else {
                    let end = scan_quoted(&chars, i + 1, c, false);
                    out.push(c);
                    out.push(c);
                    i = end;
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}
