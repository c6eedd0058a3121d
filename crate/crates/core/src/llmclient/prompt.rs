//! Summarization prompt templates.
//!
//! Template bodies ship as UTF-8 files under `prompts/` and are compiled in.
//! Placeholders are `{NAME_IDS}` and `{SOURCE_TYPE}`; any other
//! `{UPPER_CASE}` token is rejected at render time.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::LlmError;

pub const NAME_IDS: &str = "{NAME_IDS}";
pub const SOURCE_TYPE: &str = "{SOURCE_TYPE}";

const ORIGINAL_BODY: &str = include_str!("../../prompts/original.txt");
const UPDATED_BODY: &str = include_str!("../../prompts/updated.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Free-form baseline prompt, no mention protocol.
    Original,
    /// Structured prompt with the `[MENTIONED: YES|NO]` protocol.
    Updated,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Original => "original",
            TemplateId::Updated => "updated",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "original" => Ok(TemplateId::Original),
            "updated" => Ok(TemplateId::Updated),
            other => Err(format!("unknown template `{other}` (expected original or updated)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(id: TemplateId) -> Self {
        let body = match id {
            TemplateId::Original => ORIGINAL_BODY,
            TemplateId::Updated => UPDATED_BODY,
        };
        PromptTemplate {
            template_id: id,
            body: body.to_string(),
        }
    }

    /// Whether responses to this template are expected to carry a mention marker.
    pub fn has_mention_protocol(&self) -> bool {
        self.body.contains("[MENTIONED: YES]") && self.body.contains("[MENTIONED: NO]")
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{[A-Z][A-Z0-9_]*\}").expect("static regex"))
}

/// Python `repr()` of a `str`: single quotes unless the text contains a
/// single quote and no double quote, with backslash escapes.
pub fn python_str_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if c.is_control() => {
                let cp = c as u32;
                if cp < 0x100 {
                    out.push_str(&format!("\\x{cp:02x}"));
                } else if cp < 0x10000 {
                    out.push_str(&format!("\\u{cp:04x}"));
                } else {
                    out.push_str(&format!("\\U{cp:08x}"));
                }
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// Aliases rendered the way the prompts were originally produced:
/// `', '.join(repr(item) for item in name_ids)`.
pub fn render_name_ids(name_ids: &[String]) -> String {
    name_ids
        .iter()
        .map(|n| python_str_repr(n))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_prompt(
    template: &PromptTemplate,
    name_ids: &[String],
    source_type: &str,
) -> Result<String, LlmError> {
    if name_ids.is_empty() {
        return Err(LlmError::EmptyNameIds);
    }
    // Validate the template itself so substituted values can never be
    // mistaken for placeholders.
    if let Some(m) = placeholder_re()
        .find_iter(&template.body)
        .find(|m| m.as_str() != NAME_IDS && m.as_str() != SOURCE_TYPE)
    {
        return Err(LlmError::UnknownPlaceholder(m.as_str().to_string()));
    }
    let names = render_name_ids(name_ids);
    let mut out = String::with_capacity(template.body.len() + names.len());
    let mut rest = template.body.as_str();
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with(NAME_IDS) {
            out.push_str(&names);
            rest = &tail[NAME_IDS.len()..];
        } else if tail.starts_with(SOURCE_TYPE) {
            out.push_str(source_type);
            rest = &tail[SOURCE_TYPE.len()..];
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}
