use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionStatus {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for MentionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MentionStatus::Yes => "yes",
            MentionStatus::No => "no",
            MentionStatus::Unknown => "unknown",
        })
    }
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\[\s*MENTIONED\s*:\s*(YES|NO)\s*\]").expect("static regex")
    })
}

/// Split a response into its mention status and body.
///
/// The first marker in the text decides the status and the whole line
/// holding it is dropped from the body. Without a marker the status is
/// `Unknown` and the text is returned unchanged.
pub fn parse_mentioned(response: &str) -> (MentionStatus, String) {
    let Some(caps) = marker_re().captures(response) else {
        return (MentionStatus::Unknown, response.to_string());
    };
    let status = if caps[1].eq_ignore_ascii_case("yes") {
        MentionStatus::Yes
    } else {
        MentionStatus::No
    };
    let m = caps.get(0).expect("group 0 always present");
    let line_start = response[..m.start()].rfind('\n').map_or(0, |i| i + 1);
    let line_end = response[m.end()..]
        .find('\n')
        .map_or(response.len(), |i| m.end() + i + 1);
    let mut body = String::with_capacity(response.len());
    body.push_str(&response[..line_start]);
    body.push_str(&response[line_end..]);
    (status, body.trim().to_string())
}
