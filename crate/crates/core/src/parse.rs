//! Extraction of a star label from a raw model continuation.
//!
//! Rules: leading whitespace is skipped, only the first line is inspected,
//! an optional `Output:` prefix is dropped, and the line must contain
//! exactly one numeric token. That token must be an unsigned ASCII integer
//! in `1..=5`. Everything else is invalid with a reason.

use serde::{Deserialize, Serialize};

use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseReason {
    Ok,
    OutOfRange,
    NonInteger,
    NoDigit,
    MultiValueAmbiguous,
}

impl ParseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseReason::Ok => "ok",
            ParseReason::OutOfRange => "out_of_range",
            ParseReason::NonInteger => "non_integer",
            ParseReason::NoDigit => "no_digit",
            ParseReason::MultiValueAmbiguous => "multi_value_ambiguous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOutcome {
    pub parsed: Option<Label>,
    pub reason: ParseReason,
}

impl ParseOutcome {
    fn ok(label: Label) -> Self {
        ParseOutcome { parsed: Some(label), reason: ParseReason::Ok }
    }

    fn invalid(reason: ParseReason) -> Self {
        ParseOutcome { parsed: None, reason }
    }
}

const OUTPUT_PREFIX: &str = "Output:";

#[derive(Debug, PartialEq, Eq)]
struct NumericToken<'a> {
    sign: Option<char>,
    integer: &'a str,
    has_fraction: bool,
}

/// Scans `line` for maximal tokens of the form `[+-]?digits(.digits)?` or
/// `[+-]?.digits`, ASCII digits only.
fn numeric_tokens(line: &str) -> Vec<NumericToken<'_>> {
    let bytes = line.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let starts_fraction = bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        if !bytes[i].is_ascii_digit() && !starts_fraction {
            i += 1;
            continue;
        }
        let sign = match i.checked_sub(1).map(|j| bytes[j]) {
            Some(b'-') => Some('-'),
            Some(b'+') => Some('+'),
            _ => None,
        };
        let int_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let integer = &line[int_start..i];
        let mut has_fraction = false;
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            has_fraction = true;
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        tokens.push(NumericToken { sign, integer, has_fraction });
    }
    tokens
}

/// Classifies a raw continuation. Total: never panics.
pub fn parse_label(raw_output: &str) -> ParseOutcome {
    let trimmed = raw_output.trim_start();
    let line = trimmed.split('\n').next().unwrap_or("").trim();
    let line = line.strip_prefix(OUTPUT_PREFIX).map_or(line, str::trim);

    let tokens = numeric_tokens(line);
    let token = match tokens.as_slice() {
        [] => return ParseOutcome::invalid(ParseReason::NoDigit),
        [token] => token,
        _ => return ParseOutcome::invalid(ParseReason::MultiValueAmbiguous),
    };
    if token.has_fraction {
        return ParseOutcome::invalid(ParseReason::NonInteger);
    }
    if token.sign.is_some() {
        return ParseOutcome::invalid(ParseReason::OutOfRange);
    }
    // Overlong digit strings cannot be in range.
    match token.integer.parse::<i64>().ok().and_then(|v| Label::new(v).ok()) {
        Some(label) => ParseOutcome::ok(label),
        None => ParseOutcome::invalid(ParseReason::OutOfRange),
    }
}
