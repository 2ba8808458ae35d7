//! Machine-readable offer blocks embedded in chat messages.
//!
//! ````text
//! I can live with these terms.
//! ```offer
//! utilities_included = 5
//! monthly_rent = 3
//! ```
//! ````
//!
//! Each line inside the fence is `issue_id = option_label` with a 1-based
//! label. Text outside the block is kept as the offer's note.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::domain::{IssueId, Offer, OptionIndex, Role, OPTIONS_PER_ISSUE};

pub const OPEN_FENCE: &str = "```offer";
pub const CLOSE_FENCE: &str = "```";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OfferParseError {
    #[error("message contains no offer block")]
    MissingBlock,
    #[error("ambiguous offer: more than one offer block")]
    Ambiguous,
    #[error("offer block opened on line {0} is never closed")]
    Unterminated(usize),
    #[error("line {line}: expected `issue_id = option`, found {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: unknown issue {issue:?}")]
    UnknownIssue { line: usize, issue: String },
    #[error("line {line}: option {value:?} outside 1..=7")]
    OutOfRange { line: usize, value: String },
    #[error("line {line}: issue {issue:?} selected twice")]
    Duplicate { line: usize, issue: String },
}

/// Extracts the single offer block from `text`. Selections must name issues
/// from `issues`; completeness is left to the caller.
pub fn parse_offer(text: &str, proposer: Role, issues: &[IssueId]) -> Result<Offer, OfferParseError> {
    let known: BTreeSet<&str> = issues.iter().map(IssueId::as_str).collect();
    let mut selections = BTreeMap::new();
    let mut note_lines = Vec::new();
    let mut open_at: Option<usize> = None;
    let mut blocks = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim();
        match open_at {
            None if trimmed == OPEN_FENCE => {
                blocks += 1;
                if blocks > 1 {
                    return Err(OfferParseError::Ambiguous);
                }
                open_at = Some(line_no);
            }
            None => note_lines.push(raw),
            Some(_) if trimmed == CLOSE_FENCE => open_at = None,
            Some(_) if trimmed.is_empty() => {}
            Some(_) => {
                let Some((issue, value)) = trimmed.split_once('=') else {
                    return Err(OfferParseError::MalformedLine {
                        line: line_no,
                        text: trimmed.to_owned(),
                    });
                };
                let (issue, value) = (issue.trim(), value.trim());
                if issue.is_empty() {
                    return Err(OfferParseError::MalformedLine {
                        line: line_no,
                        text: trimmed.to_owned(),
                    });
                }
                if !known.contains(issue) {
                    return Err(OfferParseError::UnknownIssue {
                        line: line_no,
                        issue: issue.to_owned(),
                    });
                }
                let option = value
                    .parse::<usize>()
                    .ok()
                    .filter(|l| (1..=OPTIONS_PER_ISSUE).contains(l))
                    .and_then(OptionIndex::from_label)
                    .ok_or_else(|| OfferParseError::OutOfRange {
                        line: line_no,
                        value: value.to_owned(),
                    })?;
                if selections.insert(IssueId::new(issue), option).is_some() {
                    return Err(OfferParseError::Duplicate {
                        line: line_no,
                        issue: issue.to_owned(),
                    });
                }
            }
        }
    }
    if let Some(line) = open_at {
        return Err(OfferParseError::Unterminated(line));
    }
    if blocks == 0 {
        return Err(OfferParseError::MissingBlock);
    }
    let note = note_lines.join("\n").trim().to_owned();
    Ok(Offer {
        proposer,
        selections,
        note: (!note.is_empty()).then_some(note),
    })
}

/// Renders an offer as note text followed by its offer block.
pub fn format_offer(offer: &Offer) -> String {
    let mut out = String::new();
    if let Some(note) = &offer.note {
        out.push_str(note);
        out.push('\n');
    }
    out.push_str(OPEN_FENCE);
    out.push('\n');
    for (issue, option) in &offer.selections {
        out.push_str(&format!("{issue} = {}\n", option.label()));
    }
    out.push_str(CLOSE_FENCE);
    out
}
