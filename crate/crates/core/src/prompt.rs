//! One-shot prompt rendering.
//!
//! The template ships as `assets/prompt_v1.txt`. It contains the slots
//! `{example_review}`, `{example_label}` and `{user_review}` and ends with
//! `Output: ` (trailing space, no newline) so the model's continuation is
//! the label.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::ReviewSample;

pub const TEMPLATE_VERSION: &str = "v1";
const BUILTIN_TEMPLATE: &str = include_str!("../assets/prompt_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    ExampleReview,
    ExampleLabel,
    UserReview,
}

impl Slot {
    const ALL: [(Slot, &'static str); 3] = [
        (Slot::ExampleReview, "{example_review}"),
        (Slot::ExampleLabel, "{example_label}"),
        (Slot::UserReview, "{user_review}"),
    ];
}

#[derive(Debug, Clone)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

/// A parsed template. Slots are resolved once at parse time, so review
/// texts that happen to contain slot markers are inserted verbatim.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("bundled prompt template is well formed")
    }

    /// Parses a template; each slot must appear exactly once.
    pub fn parse(source: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rest = source;
        let mut seen = Vec::new();
        loop {
            let next = Slot::ALL
                .iter()
                .filter_map(|(slot, marker)| rest.find(marker).map(|pos| (pos, *slot, *marker)))
                .min_by_key(|(pos, _, _)| *pos);
            let Some((pos, slot, marker)) = next else {
                if !rest.is_empty() {
                    segments.push(Segment::Literal(rest.to_string()));
                }
                break;
            };
            if seen.contains(&slot) {
                return Err(Error::validation(format!("template repeats {marker}")));
            }
            seen.push(slot);
            if pos > 0 {
                segments.push(Segment::Literal(rest[..pos].to_string()));
            }
            segments.push(Segment::Slot(slot));
            rest = &rest[pos + marker.len()..];
        }
        if let Some((_, marker)) = Slot::ALL.iter().find(|(slot, _)| !seen.contains(slot)) {
            return Err(Error::validation(format!("template lacks {marker}")));
        }
        Ok(PromptTemplate { source: source.to_string(), segments })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Hex SHA-256 of the template text, recorded in run manifests.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    pub fn render(&self, example: &ReviewSample, target: &ReviewSample) -> Result<String> {
        if example.sample_id == target.sample_id {
            return Err(Error::validation(format!("one-shot example '{}' is also the target", example.sample_id)));
        }
        if example.text.is_empty() || target.text.is_empty() {
            return Err(Error::validation("cannot render a prompt with an empty review"));
        }
        let label = example.stars.to_string();
        let mut out = String::with_capacity(self.source.len() + example.text.len() + target.text.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(Slot::ExampleReview) => out.push_str(&example.text),
                Segment::Slot(Slot::ExampleLabel) => out.push_str(&label),
                Segment::Slot(Slot::UserReview) => out.push_str(&target.text),
            }
        }
        Ok(out)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Label;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn sample(id: &str, text: &str, stars: i64) -> ReviewSample {
        ReviewSample {
            sample_id: id.into(),
            user_id: format!("u-{id}"),
            business_id: "b".into(),
            text: text.into(),
            stars: Label::new(stars).unwrap(),
            posted_at: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn renders_example_and_completion_point() {
        let t = PromptTemplate::builtin();
        let p = t.render(&sample("a", "Great pasta!", 5), &sample("b", "Cold soup.", 2)).unwrap();
        assert!(p.contains("User review: Great pasta!\nOutput: 5\n"));
        assert!(p.ends_with("User review: Cold soup.\nOutput: "));
        assert!(!p.contains('\r'));
        assert_eq!(p, t.render(&sample("a", "Great pasta!", 5), &sample("b", "Cold soup.", 2)).unwrap());
    }

    #[test]
    fn rejects_leakage_and_empty_text() {
        let t = PromptTemplate::builtin();
        assert!(t.render(&sample("a", "x", 5), &sample("a", "y", 3)).is_err());
        assert!(t.render(&sample("a", "", 5), &sample("b", "y", 3)).is_err());
        assert!(t.render(&sample("a", "x", 5), &sample("b", "", 3)).is_err());
    }

    #[test]
    fn slot_markers_in_text_are_literal() {
        let t = PromptTemplate::builtin();
        let p = t.render(&sample("a", "{user_review}", 4), &sample("b", "{example_label}", 1)).unwrap();
        assert!(p.contains("User review: {user_review}\nOutput: 4"));
        assert!(p.ends_with("User review: {example_label}\nOutput: "));
    }

    #[test]
    fn parse_requires_each_slot_once() {
        assert!(PromptTemplate::parse("{example_review}{example_label}").is_err());
        assert!(PromptTemplate::parse("{example_review}{example_label}{user_review}{user_review}").is_err());
        assert!(PromptTemplate::parse("{user_review}|{example_label}|{example_review}").is_ok());
    }

    proptest! {
        #[test]
        fn two_reviews_two_outputs(target in "[a-zA-Z .,!?]{1,80}") {
            let t = PromptTemplate::builtin();
            let p = t.render(&sample("a", "Nice place.", 4), &sample("b", &target, 3)).unwrap();
            prop_assert_eq!(p.lines().filter(|l| l.starts_with("User review:")).count(), 2);
            prop_assert_eq!(p.matches("Output:").count(), 2);
        }

        #[test]
        fn injective_in_target(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            let t = PromptTemplate::builtin();
            let ex = sample("x", "Fine.", 3);
            let pa = t.render(&ex, &sample("a", &a, 1)).unwrap();
            let pb = t.render(&ex, &sample("b", &b, 1)).unwrap();
            prop_assert_eq!(a == b, pa == pb);
        }
    }
}
