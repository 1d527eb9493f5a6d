//! Order-preserving YAML-subset documents.
//!
//! Supported: block mappings, block sequences, flow sequences (`[a, b]`),
//! plain/single-quoted/double-quoted scalars and `#` comments. Anchors,
//! aliases, tags, flow mappings, block scalars and multi-document streams
//! are rejected. Duplicate mapping keys are an error. Scalars stay strings;
//! typing happens in the schema layer.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mark {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {}, column {}: {message}", mark.line, mark.column)]
pub struct SyntaxError {
    pub mark: Mark,
    pub message: String,
}

fn syntax(mark: Mark, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        mark,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Scalar(String),
    Seq(Vec<Node>),
    Map(Vec<(String, Mark, Node)>),
}

/// A parsed node with its source position.
#[derive(Debug, Clone)]
pub struct Node {
    pub mark: Mark,
    pub kind: NodeKind,
}

impl Node {
    fn scalar(mark: Mark, s: impl Into<String>) -> Self {
        Node {
            mark,
            kind: NodeKind::Scalar(s.into()),
        }
    }

    pub fn as_scalar(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Node]> {
        match &self.kind {
            NodeKind::Seq(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(String, Mark, Node)]> {
        match &self.kind {
            NodeKind::Map(entries) => Some(entries),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Node> {
        self.as_map()?
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, _, n)| n)
    }

    /// An empty scalar stands for a missing value (`key:` with nothing below).
    pub fn is_null(&self) -> bool {
        matches!(&self.kind, NodeKind::Scalar(s) if s.is_empty() || s == "~" || s == "null")
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            NodeKind::Scalar(_) => "scalar",
            NodeKind::Seq(_) => "sequence",
            NodeKind::Map(_) => "mapping",
        }
    }

    pub fn to_value(&self) -> Value {
        match &self.kind {
            NodeKind::Scalar(s) => Value::Scalar(s.clone()),
            NodeKind::Seq(items) => Value::Seq(items.iter().map(Node::to_value).collect()),
            NodeKind::Map(entries) => Value::Map(
                entries
                    .iter()
                    .map(|(k, _, n)| (k.clone(), n.to_value()))
                    .collect(),
            ),
        }
    }
}

/// A position-free document tree, used for emitting and for preserving
/// opaque content.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(String),
    Seq(Vec<Value>),
    Map(Vec<(String, Value)>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Scalar(s.into())
    }

    /// Node view of this value; positions are zeroed.
    pub fn to_node(&self) -> Node {
        let kind = match self {
            Value::Scalar(s) => NodeKind::Scalar(s.clone()),
            Value::Seq(items) => NodeKind::Seq(items.iter().map(Value::to_node).collect()),
            Value::Map(entries) => NodeKind::Map(
                entries
                    .iter()
                    .map(|(k, v)| (k.clone(), Mark::default(), v.to_node()))
                    .collect(),
            ),
        };
        Node {
            mark: Mark::default(),
            kind,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Scalar(s) => serde_json::Value::String(s.clone()),
            Value::Seq(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(entries) => serde_json::Value::Object(
                entries
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_json()))
                    .collect(),
            ),
        }
    }
}

struct Line<'a> {
    number: usize,
    indent: usize,
    text: &'a str,
}

/// Parses a document. An empty document yields an empty mapping.
pub fn parse(input: &str) -> Result<Node, SyntaxError> {
    let lines = split_lines(input)?;
    if lines.is_empty() {
        return Ok(Node {
            mark: Mark { line: 1, column: 1 },
            kind: NodeKind::Map(Vec::new()),
        });
    }
    let mut parser = Parser { lines, pos: 0 };
    let indent = parser.lines[0].indent;
    let node = parser.block(indent)?;
    if let Some(line) = parser.lines.get(parser.pos) {
        return Err(syntax(
            Mark {
                line: line.number,
                column: line.indent + 1,
            },
            "unexpected indentation",
        ));
    }
    Ok(node)
}

fn split_lines(input: &str) -> Result<Vec<Line<'_>>, SyntaxError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut out = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let number = idx + 1;
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        let rest = &raw[indent..];
        if rest.starts_with('\t') {
            return Err(syntax(
                Mark {
                    line: number,
                    column: indent + 1,
                },
                "tabs are not allowed in indentation",
            ));
        }
        let text = strip_comment(rest).trim_end();
        if text.is_empty() {
            continue;
        }
        if indent == 0 && (text == "---" || text == "...") {
            if out.is_empty() && text == "---" {
                continue;
            }
            return Err(syntax(
                Mark {
                    line: number,
                    column: 1,
                },
                "multi-document streams are not supported",
            ));
        }
        out.push(Line {
            number,
            indent,
            text,
        });
    }
    Ok(out)
}

/// Drops a trailing `# comment` that is outside quotes and preceded by
/// whitespace (or starts the line).
fn strip_comment(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut in_single = false;
    let mut in_double = false;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if in_double => i += 1,
            b'\'' if !in_double => in_single = !in_single,
            b'"' if !in_single => in_double = !in_double,
            b'#' if !in_single && !in_double && (i == 0 || bytes[i - 1] == b' ') => {
                return &s[..i];
            }
            _ => {}
        }
        i += 1;
    }
    s
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
}

fn is_seq_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

impl<'a> Parser<'a> {
    fn block(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let line = &self.lines[self.pos];
        if is_seq_item(line.text) {
            self.sequence(indent)
        } else {
            self.mapping(indent)
        }
    }

    fn mapping(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let first = &self.lines[self.pos];
        let mark = Mark {
            line: first.number,
            column: indent + 1,
        };
        let mut entries: Vec<(String, Mark, Node)> = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent {
                break;
            }
            let key_mark = Mark {
                line: line.number,
                column: line.indent + 1,
            };
            if line.indent > indent {
                return Err(syntax(key_mark, "unexpected indentation"));
            }
            if is_seq_item(line.text) {
                return Err(syntax(key_mark, "sequence item where a mapping key was expected"));
            }
            let (key, rest, rest_col) = split_key(line.text, key_mark)?;
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(syntax(key_mark, format!("duplicate key `{key}`")));
            }
            let number = line.number;
            self.pos += 1;
            let value = if rest.is_empty() {
                self.nested_value(indent, Mark {
                    line: number,
                    column: rest_col,
                })?
            } else {
                inline_value(
                    rest,
                    Mark {
                        line: number,
                        column: indent + rest_col,
                    },
                )?
            };
            entries.push((key, key_mark, value));
        }
        Ok(Node {
            mark,
            kind: NodeKind::Map(entries),
        })
    }

    /// Value of `key:` with nothing after the colon: a deeper block, a
    /// sequence at the same indentation, or null.
    fn nested_value(&mut self, indent: usize, mark: Mark) -> Result<Node, SyntaxError> {
        match self.lines.get(self.pos) {
            Some(next) if next.indent > indent => {
                let child = next.indent;
                self.block(child)
            }
            Some(next) if next.indent == indent && is_seq_item(next.text) => self.sequence(indent),
            _ => Ok(Node::scalar(mark, "")),
        }
    }

    fn sequence(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let first = &self.lines[self.pos];
        let mark = Mark {
            line: first.number,
            column: indent + 1,
        };
        let mut items = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent || (line.indent == indent && !is_seq_item(line.text)) {
                break;
            }
            let item_mark = Mark {
                line: line.number,
                column: line.indent + 1,
            };
            if line.indent > indent {
                return Err(syntax(item_mark, "unexpected indentation"));
            }
            let after_dash = &line.text[1..];
            let content = after_dash.trim_start_matches(' ');
            if content.is_empty() {
                self.pos += 1;
                let value = match self.lines.get(self.pos) {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        self.block(child)?
                    }
                    _ => Node::scalar(item_mark, ""),
                };
                items.push(value);
                continue;
            }
            let content_indent = indent + 1 + (after_dash.len() - content.len());
            if is_seq_item(content) || looks_like_mapping(content) {
                // Re-read this line as the first line of a nested block that
                // starts at the item's content column.
                let number = line.number;
                self.lines[self.pos] = Line {
                    number,
                    indent: content_indent,
                    text: content,
                };
                items.push(self.block(content_indent)?);
            } else {
                let value = inline_value(
                    content,
                    Mark {
                        line: line.number,
                        column: content_indent + 1,
                    },
                )?;
                self.pos += 1;
                items.push(value);
            }
        }
        Ok(Node {
            mark,
            kind: NodeKind::Seq(items),
        })
    }
}

fn looks_like_mapping(text: &str) -> bool {
    if text.starts_with(['"', '\'', '[']) {
        // a quoted key is still a mapping
        if let Some(end) = quoted_end(text) {
            let rest = &text[end..];
            return rest.starts_with(':') && (rest.len() == 1 || rest[1..].starts_with(' '));
        }
        return false;
    }
    find_key_colon(text).is_some()
}

fn quoted_end(text: &str) -> Option<usize> {
    let quote = text.chars().next()?;
    if quote != '"' && quote != '\'' {
        return None;
    }
    let bytes = text.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if quote == '"' => i += 1,
            b'\'' if quote == '\'' && bytes.get(i + 1) == Some(&b'\'') => i += 1,
            b if b as char == quote => return Some(i + 1),
            _ => {}
        }
        i += 1;
    }
    None
}

fn find_key_colon(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    (0..bytes.len()).find(|&i| bytes[i] == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' '))
}

/// Splits `key: rest`. Returns the key, the trimmed rest and the 1-based
/// column where the rest starts relative to the line content.
fn split_key(text: &str, mark: Mark) -> Result<(String, &str, usize), SyntaxError> {
    let (key, after) = if let Some(end) = quoted_end(text) {
        let key = parse_scalar(&text[..end], mark)?;
        let after = &text[end..];
        if !after.starts_with(':') || !(after.len() == 1 || after[1..].starts_with(' ')) {
            return Err(syntax(mark, "expected `:` after quoted key"));
        }
        (key, &after[1..])
    } else {
        let colon = find_key_colon(text)
            .ok_or_else(|| syntax(mark, format!("expected `key: value`, found `{text}`")))?;
        let key = text[..colon].trim_end();
        check_plain(key, mark)?;
        (key.to_string(), &text[colon + 1..])
    };
    if key.is_empty() {
        return Err(syntax(mark, "empty key"));
    }
    let rest = after.trim_start_matches(' ');
    let col = text.len() - rest.len() + 1;
    Ok((key, rest, col))
}

fn check_plain(s: &str, mark: Mark) -> Result<(), SyntaxError> {
    match s.chars().next() {
        Some('&') => Err(syntax(mark, "anchors are not supported")),
        Some('*') if s.len() > 1 => Err(syntax(mark, "aliases are not supported")),
        Some('!') => Err(syntax(mark, "tags are not supported")),
        Some('{') => Err(syntax(mark, "flow mappings are not supported")),
        Some('|') | Some('>') => Err(syntax(mark, "block scalars are not supported")),
        Some('@') | Some('`') => Err(syntax(mark, "reserved indicator")),
        _ => Ok(()),
    }
}

fn inline_value(text: &str, mark: Mark) -> Result<Node, SyntaxError> {
    if text.starts_with('[') {
        let (node, consumed) = flow_seq(text, mark)?;
        if !text[consumed..].trim().is_empty() {
            return Err(syntax(mark, "trailing characters after flow sequence"));
        }
        return Ok(node);
    }
    Ok(Node::scalar(mark, parse_scalar(text, mark)?))
}

fn flow_seq(text: &str, mark: Mark) -> Result<(Node, usize), SyntaxError> {
    debug_assert!(text.starts_with('['));
    let mut items = Vec::new();
    let mut i = 1;
    let bytes = text.as_bytes();
    let mut expect_item = true;
    loop {
        while i < bytes.len() && bytes[i] == b' ' {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(syntax(mark, "unterminated flow sequence"));
        }
        match bytes[i] {
            b']' => {
                if expect_item && !items.is_empty() {
                    return Err(syntax(mark, "trailing comma in flow sequence"));
                }
                return Ok((
                    Node {
                        mark,
                        kind: NodeKind::Seq(items),
                    },
                    i + 1,
                ));
            }
            b',' if !expect_item => {
                expect_item = true;
                i += 1;
            }
            b',' => return Err(syntax(mark, "empty flow sequence entry")),
            _ if !expect_item => return Err(syntax(mark, "expected `,` or `]`")),
            b'[' => {
                let (node, used) = flow_seq(&text[i..], mark)?;
                items.push(node);
                i += used;
                expect_item = false;
            }
            b'"' | b'\'' => {
                let end = quoted_end(&text[i..])
                    .ok_or_else(|| syntax(mark, "unterminated quoted scalar"))?;
                items.push(Node::scalar(mark, parse_scalar(&text[i..i + end], mark)?));
                i += end;
                expect_item = false;
            }
            _ => {
                let start = i;
                while i < bytes.len() && bytes[i] != b',' && bytes[i] != b']' {
                    if bytes[i] == b'[' || bytes[i] == b'{' {
                        return Err(syntax(mark, "unexpected bracket in flow scalar"));
                    }
                    i += 1;
                }
                let raw = text[start..i].trim_end();
                items.push(Node::scalar(mark, parse_scalar(raw, mark)?));
                expect_item = false;
            }
        }
    }
}

fn parse_scalar(text: &str, mark: Mark) -> Result<String, SyntaxError> {
    if text.starts_with('"') {
        let end = quoted_end(text).ok_or_else(|| syntax(mark, "unterminated double-quoted scalar"))?;
        if end != text.len() {
            return Err(syntax(mark, "trailing characters after quoted scalar"));
        }
        return unescape_double(&text[1..end - 1], mark);
    }
    if text.starts_with('\'') {
        let end = quoted_end(text).ok_or_else(|| syntax(mark, "unterminated single-quoted scalar"))?;
        if end != text.len() {
            return Err(syntax(mark, "trailing characters after quoted scalar"));
        }
        return Ok(text[1..end - 1].replace("''", "'"));
    }
    check_plain(text, mark)?;
    if text == "-" || text.starts_with("- ") {
        return Err(syntax(mark, "unexpected sequence indicator"));
    }
    if find_key_colon(text).is_some() {
        return Err(syntax(mark, "nested mappings must start on a new line"));
    }
    Ok(text.trim().to_string())
}

fn unescape_double(s: &str, mark: Mark) -> Result<String, SyntaxError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some('"') => out.push('"'),
            Some('\\') => out.push('\\'),
            Some('/') => out.push('/'),
            Some('u') => {
                let hex: String = chars.by_ref().take(4).collect();
                let code = u32::from_str_radix(&hex, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| syntax(mark, format!("bad unicode escape `\\u{hex}`")))?;
                out.push(code);
            }
            other => {
                return Err(syntax(
                    mark,
                    format!("unknown escape `\\{}`", other.map(String::from).unwrap_or_default()),
                ))
            }
        }
    }
    Ok(out)
}

/// Emits a document in block style with two-space indentation. Short
/// sequences of plain scalars are written in flow style.
pub fn emit(value: &Value) -> String {
    let mut out = String::new();
    match value {
        Value::Map(entries) => emit_map(&mut out, entries, 0),
        Value::Seq(items) => emit_seq(&mut out, items, 0),
        Value::Scalar(s) => {
            out.push_str(&quote_if_needed(s));
            out.push('\n');
        }
    }
    out
}

fn emit_map(out: &mut String, entries: &[(String, Value)], indent: usize) {
    for (key, value) in entries {
        pad(out, indent);
        out.push_str(&quote_if_needed(key));
        out.push(':');
        emit_after_key(out, value, indent);
    }
}

fn emit_after_key(out: &mut String, value: &Value, indent: usize) {
    match value {
        Value::Scalar(s) if s.is_empty() => out.push('\n'),
        Value::Scalar(s) => {
            let _ = writeln!(out, " {}", quote_if_needed(s));
        }
        Value::Seq(items) if is_flow_friendly(items) => {
            let _ = writeln!(out, " {}", flow(items));
        }
        Value::Seq(items) => {
            out.push('\n');
            emit_seq(out, items, indent + 2);
        }
        Value::Map(entries) if entries.is_empty() => out.push_str(" \n"),
        Value::Map(entries) => {
            out.push('\n');
            emit_map(out, entries, indent + 2);
        }
    }
}

fn emit_seq(out: &mut String, items: &[Value], indent: usize) {
    for item in items {
        pad(out, indent);
        match item {
            Value::Scalar(s) if s.is_empty() => out.push_str("-\n"),
            Value::Scalar(s) => {
                let _ = writeln!(out, "- {}", quote_if_needed(s));
            }
            Value::Seq(inner) if is_flow_friendly(inner) => {
                let _ = writeln!(out, "- {}", flow(inner));
            }
            Value::Seq(inner) => {
                out.push_str("-\n");
                emit_seq(out, inner, indent + 2);
            }
            Value::Map(entries) if entries.is_empty() => out.push_str("-\n"),
            Value::Map(entries) => {
                out.push_str("- ");
                let (first_key, first_value) = &entries[0];
                out.push_str(&quote_if_needed(first_key));
                out.push(':');
                emit_after_key(out, first_value, indent + 2);
                emit_map(out, &entries[1..], indent + 2);
            }
        }
    }
}

fn is_flow_friendly(items: &[Value]) -> bool {
    items.iter().all(|v| matches!(v, Value::Scalar(s) if !s.is_empty())) && items.len() <= 8
}

fn flow(items: &[Value]) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|v| match v {
            Value::Scalar(s) if s.contains([',', '[', ']']) => quote_double(s),
            Value::Scalar(s) => quote_if_needed(s),
            _ => unreachable!("flow sequences only hold scalars"),
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn pad(out: &mut String, indent: usize) {
    out.extend(std::iter::repeat_n(' ', indent));
}

fn quote_if_needed(s: &str) -> String {
    let needs = s.is_empty()
        || s != s.trim()
        || s.starts_with([
            '&', '*', '!', '{', '[', '|', '>', '@', '`', '"', '\'', '#', '%', '-', '?', ',', ']', '}',
        ])
        || s.contains(": ")
        || s.ends_with(':')
        || s.contains(" #")
        || s.chars().any(|c| c.is_control());
    // `-1` and `-0.5` are fine as plain scalars
    let numeric_dash = s.starts_with('-') && s[1..].starts_with(|c: char| c.is_ascii_digit());
    if needs && !(numeric_dash && !s.contains(": ") && !s.contains(" #") && s == s.trim()) {
        quote_double(s)
    } else {
        s.to_string()
    }
}

fn quote_double(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_value(s: &str) -> Value {
        parse(s).unwrap().to_value()
    }

    #[test]
    fn nested_mappings_keep_order() {
        let v = parse_value("b: 1\na:\n  z: 2\n  y: 3\n");
        assert_eq!(
            v,
            Value::Map(vec![
                ("b".into(), Value::str("1")),
                (
                    "a".into(),
                    Value::Map(vec![("z".into(), Value::str("2")), ("y".into(), Value::str("3"))])
                ),
            ])
        );
    }

    #[test]
    fn sequences_of_mappings() {
        let v = parse_value("items:\n  - type: image # first\n    layer: data\n  - type: box\n");
        let Value::Map(top) = v else { panic!() };
        let Value::Seq(items) = &top[0].1 else { panic!() };
        assert_eq!(items.len(), 2);
        assert_eq!(
            items[0],
            Value::Map(vec![("type".into(), Value::str("image")), ("layer".into(), Value::str("data"))])
        );
    }

    #[test]
    fn sequence_at_parent_indentation() {
        let v = parse_value("envvars:\n- A: 0\n- B: 1\nnext: x\n");
        let Value::Map(top) = v else { panic!() };
        assert_eq!(top.len(), 2);
        assert!(matches!(&top[0].1, Value::Seq(items) if items.len() == 2));
    }

    #[test]
    fn flow_sequences_and_quotes() {
        let v = parse_value("dims: [3, 299, 299]\nq: \"a: b # c\"\ns: 'it''s'\nurl: https://x/y.txt # tail\n");
        let Value::Map(top) = v else { panic!() };
        assert_eq!(top[0].1, Value::Seq(vec![Value::str("3"), Value::str("299"), Value::str("299")]));
        assert_eq!(top[1].1, Value::str("a: b # c"));
        assert_eq!(top[2].1, Value::str("it's"));
        assert_eq!(top[3].1, Value::str("https://x/y.txt"));
    }

    #[test]
    fn duplicate_keys_are_errors() {
        let err = parse("a: 1\nb: 2\na: 3\n").unwrap_err();
        assert_eq!(err.mark, Mark { line: 3, column: 1 });
        assert!(err.message.contains("duplicate"));
    }

    #[test]
    fn unsupported_features_are_rejected() {
        for (doc, line) in [
            ("a: &x 1\n", 1),
            ("a: *x\n", 1),
            ("a: !tag 1\n", 1),
            ("a: {b: 1}\n", 1),
            ("a: |\n  text\n", 1),
            ("a: 1\n---\nb: 2\n", 2),
            ("a:\n\tb: 1\n", 2),
            ("a: [1, 2\n", 1),
            ("a: 1\n  b: 2\n", 2),
            ("just a scalar line\nb: 1\n", 1),
        ] {
            let err = parse(doc).unwrap_err();
            assert_eq!(err.mark.line, line, "{doc:?}: {err}");
        }
    }

    #[test]
    fn empty_values_are_null() {
        let node = parse("a:\nb: 1\n").unwrap();
        assert!(node.get("a").unwrap().is_null());
    }

    #[test]
    fn emit_round_trips() {
        let text = "name: x\nlist:\n  - a: 1\n    b: [1, 2]\n  - plain\nnested:\n  k: \"v: w\"\nempty:\n";
        let v = parse_value(text);
        let emitted = emit(&v);
        assert_eq!(parse_value(&emitted), v);
    }
}
