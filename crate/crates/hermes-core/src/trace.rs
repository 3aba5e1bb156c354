//! Line-delimited observation records.
//!
//! Every record renders as `t=<ms> node=<id> kind=<...> detail=<...>` where
//! detail is a space-separated list of `key=value` pairs. The monitor and the
//! `report` subcommand parse this format back, so it is part of the tool's
//! stable surface.

use std::fmt;

pub const ENV_NODE: &str = "env";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: u64,
    pub node: String,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} node={} kind={} detail={}",
            self.t, self.node, self.kind, self.detail
        )
    }
}

/// A parsed trace line, with the detail broken into key-value pairs.
#[derive(Debug, Clone)]
pub struct ParsedRecord {
    pub t: u64,
    pub node: String,
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl ParsedRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Parse one trace line. Returns `None` for lines that do not follow the
/// record format (the caller decides whether that counts as malformed).
pub fn parse_line(line: &str) -> Option<ParsedRecord> {
    let rest = line.strip_prefix("t=")?;
    let (t_str, rest) = rest.split_once(' ')?;
    let t = t_str.parse().ok()?;
    let rest = rest.strip_prefix("node=")?;
    let (node, rest) = rest.split_once(' ')?;
    let rest = rest.strip_prefix("kind=")?;
    let (kind, rest) = rest.split_once(' ')?;
    let detail = rest.strip_prefix("detail=")?;
    let fields = detail
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|pair| match pair.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (pair.to_string(), String::new()),
        })
        .collect();
    Some(ParsedRecord {
        t,
        node: node.to_string(),
        kind: kind.to_string(),
        fields,
    })
}

#[derive(Debug, Default)]
pub struct Trace {
    records: Vec<Record>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, t: u64, node: impl Into<String>, kind: &'static str, detail: String) {
        self.records.push(Record {
            t,
            node: node.into(),
            kind,
            detail,
        });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse_roundtrip() {
        let mut trace = Trace::new();
        trace.push(42, "n1", "frame-rx", "cat=data type=ping bytes=26".to_string());
        let text = trace.render();
        assert_eq!(text, "t=42 node=n1 kind=frame-rx detail=cat=data type=ping bytes=26\n");
        let parsed = parse_line(text.trim_end()).unwrap();
        assert_eq!(parsed.t, 42);
        assert_eq!(parsed.node, "n1");
        assert_eq!(parsed.kind, "frame-rx");
        assert_eq!(parsed.get("bytes"), Some("26"));
    }

    #[test]
    fn junk_line_is_none() {
        assert!(parse_line("not a record").is_none());
        assert!(parse_line("t=x node=a kind=b detail=").is_none());
    }
}
