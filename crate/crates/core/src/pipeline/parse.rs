//! Response parsers for the structured answer lines requested by prompts.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no `{marker}: <yes|no>` line found in response")]
pub struct ParseError {
    pub marker: &'static str,
}

fn answer_regex(marker: &str) -> Regex {
    // tolerate markdown emphasis, quotes or brackets around the verdict
    Regex::new(&format!(
        r#"(?i)\b{marker}\s*\**\s*[:：]\s*[*_"'`\[(<]*\s*(yes|no)\b"#
    ))
    .expect("answer regex compiles")
}

fn last_verdict(re: &Regex, text: &str, marker: &'static str) -> Result<Label, ParseError> {
    re.captures_iter(text)
        .last()
        .map(|c| Label::from(c[1].eq_ignore_ascii_case("yes")))
        .ok_or(ParseError { marker })
}

/// The verdict of the last `Label: <yes|no>` occurrence, case-insensitive.
/// A response without one is an error, never a default.
pub fn parse_label(text: &str) -> Result<Label, ParseError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    last_verdict(RE.get_or_init(|| answer_regex("label")), text, "Label")
}

/// Parses the `Hyperbole:` and `Metaphor:` lines of a joint answer.
pub fn parse_device_labels(text: &str) -> Result<(Label, Label), ParseError> {
    static HYP: OnceLock<Regex> = OnceLock::new();
    static MET: OnceLock<Regex> = OnceLock::new();
    let h = last_verdict(HYP.get_or_init(|| answer_regex("hyperbole")), text, "Hyperbole")?;
    let m = last_verdict(MET.get_or_init(|| answer_regex("metaphor")), text, "Metaphor")?;
    Ok((h, m))
}

/// Domain-mapping output. `raw` is always kept; the structured fields are
/// filled only when the corresponding line is present and non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainMapping {
    pub raw: String,
    pub source_domain: Option<String>,
    pub target_domain: Option<String>,
    pub connection: Option<String>,
}

pub fn parse_domain_mapping(raw: &str) -> DomainMapping {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?im)^[\s>*#\-]*(source domain|target domain|connection)\s*\**\s*[:：]\s*(.*)$")
            .expect("domain regex compiles")
    });
    let mut out = DomainMapping {
        raw: raw.to_string(),
        source_domain: None,
        target_domain: None,
        connection: None,
    };
    for cap in re.captures_iter(raw) {
        let value = cap[2].trim().trim_matches('*').trim();
        if value.is_empty() {
            continue;
        }
        let slot = match cap[1].to_ascii_lowercase().as_str() {
            "source domain" => &mut out.source_domain,
            "target domain" => &mut out.target_domain,
            _ => &mut out.connection,
        };
        if slot.is_none() {
            *slot = Some(value.to_string());
        }
    }
    out
}
