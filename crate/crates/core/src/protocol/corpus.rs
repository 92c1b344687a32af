//! Conformance corpus: `<name>.input.txt` holds the raw model output and
//! `<name>.expected.json` the expected parse.
//!
//! ```json
//! {"kind": "meta", "mode": "strict",
//!  "result": {"ok": {"meta": "m", "ops": [{"delete": 2}, {"add": "new rule"}]}}}
//! {"kind": "action", "result": {"error": {"kind": "UnknownAction", "detail": "JUMP"}}}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_action_response, parse_meta_response_with, MemoryOp, ParseError, ParseMode};
use crate::env::ActionId;
use crate::error::{usage_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Action,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedParse {
    Ok(serde_json::Value),
    Error(ParseError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseSpec {
    kind: CaseKind,
    #[serde(default)]
    mode: ParseMode,
    result: ExpectedParse,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ActionView {
    #[serde(default)]
    think: String,
    action: ActionId,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct MetaView {
    meta: String,
    ops: Vec<MemoryOp>,
    #[serde(default)]
    skipped: Vec<ParseError>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub name: String,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusReport {
    pub cases: Vec<CaseOutcome>,
}

impl CorpusReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.cases.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }
}

/// Runs every case in `dir`, sorted by name.
pub fn check_corpus(dir: &Path) -> Result<CorpusReport> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".input.txt"))
                .map(str::to_string)
        })
        .collect();
    if names.is_empty() {
        return Err(usage_err(format!(
            "no `*.input.txt` cases in {}",
            dir.display()
        )));
    }
    names.sort();

    let mut report = CorpusReport::default();
    for name in names {
        let input = fs::read_to_string(dir.join(format!("{name}.input.txt")))?;
        let spec: CaseSpec = serde_json::from_str(&fs::read_to_string(
            dir.join(format!("{name}.expected.json")),
        )?)?;
        let (passed, message) = run_case(&input, &spec);
        report.cases.push(CaseOutcome {
            name,
            passed,
            message,
        });
    }
    Ok(report)
}

fn run_case(input: &str, spec: &CaseSpec) -> (bool, String) {
    let actual: std::result::Result<serde_json::Value, ParseError> = match spec.kind {
        CaseKind::Action => parse_action_response(input).map(|r| {
            serde_json::to_value(ActionView {
                think: r.think,
                action: r.action,
            })
            .expect("view serializes")
        }),
        CaseKind::Meta => parse_meta_response_with(input, spec.mode).map(|r| {
            serde_json::to_value(MetaView {
                meta: r.meta,
                ops: r.ops,
                skipped: r.skipped,
            })
            .expect("view serializes")
        }),
    };
    match (&spec.result, actual) {
        (ExpectedParse::Error(want), Err(got)) if *want == got => (true, "ok".into()),
        (ExpectedParse::Ok(want), Ok(got)) => {
            let equal = match spec.kind {
                CaseKind::Action => {
                    serde_json::from_value::<ActionView>(want.clone()).ok()
                        == serde_json::from_value::<ActionView>(got.clone()).ok()
                }
                CaseKind::Meta => {
                    serde_json::from_value::<MetaView>(want.clone()).ok()
                        == serde_json::from_value::<MetaView>(got.clone()).ok()
                }
            };
            if equal {
                (true, "ok".into())
            } else {
                (false, format!("expected {want}, got {got}"))
            }
        }
        (want, got) => (false, format!("expected {want:?}, got {got:?}")),
    }
}
