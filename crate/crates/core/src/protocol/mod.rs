//! Tag-structured model I/O.
//!
//! Action responses carry `<think>...</think><answer>NAME</answer>`; meta
//! responses carry `<meta>...</meta>` followed by any number of `<add>`,
//! `<delete>` and `<keep/>` operations. The grammar is flat: tags are
//! case-sensitive, never nested, and only the first occurrence of a
//! single-use tag is read.

mod corpus;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ActionId;

pub use corpus::{check_corpus, CaseKind, CaseOutcome, CorpusReport, ExpectedParse};
pub use prompt::{
    render_action_prompt, render_meta_ops_prompt, render_meta_prompt, Prompt, ACTION_SYSTEM_PROMPT,
    META_SYSTEM_PROMPT, VALID_ACTION_SET,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum ParseError {
    #[error("missing <answer> segment")]
    MissingAnswer,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("missing <meta> segment")]
    MissingMeta,
    #[error("delete id `{0}` is not a non-negative base-10 integer")]
    BadDeleteId(String),
    #[error("unterminated <{0}> tag")]
    Unterminated(String),
    #[error("empty <add> body")]
    EmptyAdd,
    #[error("no memory operations found")]
    NoOps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Any malformation is an error.
    #[default]
    Strict,
    /// Malformed operations are skipped, a missing `<meta>` is tolerated and
    /// an empty operation list becomes `[Keep]`.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedActionResponse {
    pub think: String,
    pub action: ActionId,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryOp {
    Add(String),
    Delete(usize),
    Keep,
}

impl MemoryOp {
    pub fn to_tag(&self) -> String {
        match self {
            MemoryOp::Add(text) => format!("<add>{text}</add>"),
            MemoryOp::Delete(i) => format!("<delete>{i}</delete>"),
            MemoryOp::Keep => "<keep/>".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedMetaResponse {
    pub meta: String,
    pub ops: Vec<MemoryOp>,
    pub raw: String,
    /// Malformations skipped in lenient mode, in textual order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<ParseError>,
}

enum Segment<'a> {
    Absent,
    Unterminated,
    Body { body: &'a str, end: usize },
}

/// First `open ... close` segment at or after `from`.
fn segment<'a>(text: &'a str, from: usize, open: &str, close: &str) -> Segment<'a> {
    let Some(start) = text[from..].find(open).map(|i| from + i + open.len()) else {
        return Segment::Absent;
    };
    match text[start..].find(close) {
        Some(len) => Segment::Body {
            body: &text[start..start + len],
            end: start + len + close.len(),
        },
        None => Segment::Unterminated,
    }
}

/// Extracts the first `<think>` body and the first `<answer>` body; the
/// answer is trimmed and matched case-insensitively against the 18 names.
pub fn parse_action_response(text: &str) -> Result<ParsedActionResponse, ParseError> {
    let think = match segment(text, 0, "<think>", "</think>") {
        Segment::Body { body, .. } => body.trim().to_string(),
        _ => String::new(),
    };
    let answer = match segment(text, 0, "<answer>", "</answer>") {
        Segment::Body { body, .. } => body,
        _ => return Err(ParseError::MissingAnswer),
    };
    let action = ActionId::from_name(answer)
        .ok_or_else(|| ParseError::UnknownAction(answer.trim().to_string()))?;
    Ok(ParsedActionResponse {
        think,
        action,
        raw: text.to_string(),
    })
}

/// Strict meta parse.
pub fn parse_meta_response(text: &str) -> Result<ParsedMetaResponse, ParseError> {
    parse_meta_response_with(text, ParseMode::Strict)
}

pub fn parse_meta_response_with(
    text: &str,
    mode: ParseMode,
) -> Result<ParsedMetaResponse, ParseError> {
    let strict = mode == ParseMode::Strict;
    let mut skipped = Vec::new();
    let (meta, scan_from, meta_error) = match segment(text, 0, "<meta>", "</meta>") {
        Segment::Body { body, end } => (Some(body.trim().to_string()), end, None),
        Segment::Absent => (None, 0, Some(ParseError::MissingMeta)),
        Segment::Unterminated => (None, 0, Some(ParseError::Unterminated("meta".into()))),
    };

    let mut ops = Vec::new();
    let mut pos = scan_from;
    const OPENERS: [&str; 4] = ["<add>", "<delete>", "<keep/>", "<keep>"];
    loop {
        let next = OPENERS
            .iter()
            .filter_map(|tag| text[pos..].find(tag).map(|i| (pos + i, *tag)))
            .min_by_key(|&(i, tag)| (i, std::cmp::Reverse(tag.len())));
        let Some((at, tag)) = next else { break };
        let body_start = at + tag.len();
        let result = match tag {
            "<keep/>" => {
                pos = body_start;
                Ok(MemoryOp::Keep)
            }
            "<keep>" => {
                let rest = &text[body_start..];
                let ws = rest.len() - rest.trim_start().len();
                if rest[ws..].starts_with("</keep>") {
                    pos = body_start + ws + "</keep>".len();
                    Ok(MemoryOp::Keep)
                } else {
                    pos = body_start;
                    Err(ParseError::Unterminated("keep".into()))
                }
            }
            "<add>" => match text[body_start..].find("</add>") {
                Some(len) => {
                    pos = body_start + len + "</add>".len();
                    let body = text[body_start..body_start + len].trim();
                    if body.is_empty() {
                        Err(ParseError::EmptyAdd)
                    } else {
                        Ok(MemoryOp::Add(body.to_string()))
                    }
                }
                None => {
                    pos = text.len();
                    Err(ParseError::Unterminated("add".into()))
                }
            },
            "<delete>" => match text[body_start..].find("</delete>") {
                Some(len) => {
                    pos = body_start + len + "</delete>".len();
                    let body = text[body_start..body_start + len].trim();
                    parse_index(body).map(MemoryOp::Delete)
                }
                None => {
                    pos = text.len();
                    Err(ParseError::Unterminated("delete".into()))
                }
            },
            _ => unreachable!("opener list is fixed"),
        };
        match result {
            Ok(op) => ops.push(op),
            Err(e) if strict => return Err(e),
            Err(e) => skipped.push(e),
        }
    }

    if let Some(e) = meta_error {
        if strict {
            return Err(e);
        }
        skipped.insert(0, e);
    }
    if ops.is_empty() {
        if strict {
            return Err(ParseError::NoOps);
        }
        ops.push(MemoryOp::Keep);
    }
    Ok(ParsedMetaResponse {
        meta: meta.unwrap_or_default(),
        ops,
        raw: text.to_string(),
        skipped,
    })
}

fn parse_index(body: &str) -> Result<usize, ParseError> {
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseError::BadDeleteId(body.to_string()));
    }
    body.parse()
        .map_err(|_| ParseError::BadDeleteId(body.to_string()))
}

/// Inverse of [`parse_meta_response`] for well-formed inputs.
pub fn serialize_meta_response(meta: &str, ops: &[MemoryOp]) -> String {
    let mut out = format!("<meta>{meta}</meta>");
    for op in ops {
        out.push_str(&op.to_tag());
    }
    out
}

pub fn serialize_action_response(think: &str, action: ActionId) -> String {
    format!("<think>{think}</think><answer>{}</answer>", action.name())
}
