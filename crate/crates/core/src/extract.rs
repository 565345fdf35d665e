//! Rule-based extraction of an option label from free-form model output.
//!
//! Candidates come from three rules: explicit index tokens (`a1`, `(b)`,
//! `option 2`), option display text, and unknown-style keywords that map to
//! the Unknown-role option. Candidates that are negated ("not a0"), that sit
//! inside a restated option listing, or that are part of a disjunction
//! ("a0 or a1") never decide the answer. The decisive candidate is the first
//! one after the last answer cue ("the answer is", "I choose", ...), or the
//! last candidate in the text when no cue precedes any candidate.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{AnswerOption, AnswerRole, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    ExplicitIndex,
    OptionText,
    Keyword,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub label: Prediction,
    pub matched_by: MatchRule,
    /// Character offsets `[start, end)` of the deciding match.
    pub matched_span: Option<(usize, usize)>,
}

impl ExtractionResult {
    fn invalid() -> Self {
        Self {
            label: Prediction::Invalid,
            matched_by: MatchRule::None,
            matched_span: None,
        }
    }
}

/// Unknown-answer phrasings recognised out of the box.
pub const DEFAULT_UNKNOWN_KEYWORDS: &[&str] = &[
    "can't be determined",
    "cannot be determined",
    "can not be determined",
    "cannot determine",
    "can't determine",
    "not possible to determine",
    "impossible to determine",
    "undetermined",
    "cannot answer",
    "can't answer",
    "not answerable",
    "unanswerable",
    "not enough information",
    "not enough info",
    "insufficient information",
    "not enough context",
    "cannot be inferred",
    "can't be inferred",
    "can't tell",
    "cannot tell",
    "not known",
    "unknown",
];

static INDEX_TOKEN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\ba([0-2])\b|\(([a-c])\)|\b(?:option|choice)\s*#?\s*([1-3])\b").unwrap()
});

static ANSWER_CUE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"(?ix)
        \b(?:final|correct|best|updated|revised|most\ appropriate|right|my)\s+(?:answer|option|choice|response)\s*(?:is|would\ be|will\ be|remains|:)
        | \bthe\ answer\s+(?:is|would\ be|will\ be|remains)
        | \banswer\s*:
        | \bi\s+(?:would\ |will\ |'ll\ |'d\ )?(?:choose|select|pick|go\ with|stick\ with)
        | \bi\s+(?:would\ |will\ |'ll\ |'d\ )?(?:update|change|revise)\s+my\ (?:answer|response)\ to
        | \bso\ the\ answer\b
        ",
    )
    .unwrap()
});

static NEGATION_BEFORE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r#"(?i)\b(?:not|never|neither|nor|isn't|wasn't|aren't|rather\s+than|instead\s+of|rule\s+out|ruled\s+out|ruling\s+out|eliminate|eliminating|excluding|except|against)\s+(?:(?:the|a|an|option|answer|choice)\s+)?["'(\[]?$"#,
    )
    .unwrap()
});

static NEGATION_AFTER: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"(?i)^[)\]:]?\s*(?:[^.!?;\n]{0,30}?\s)?(?:is|are|was|would\s+be|seems|looks)\s+(?:also\s+|clearly\s+|simply\s+)?(?:incorrect|wrong|not\s+(?:correct|right|supported|the\s+(?:correct\s+|right\s+)?answer)|unsupported|ruled\s+out|eliminated)\b",
    )
    .unwrap()
});

static DISJUNCTION_GAP: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)^[\s,]*(?:or|and/or|/)\s*(?:(?:the|option|choice)\s+)?$").unwrap()
});

static LISTING_SEPARATOR: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[\s:.)\-]*").unwrap());

#[derive(Debug, Clone, Copy)]
struct Candidate {
    start: usize,
    end: usize,
    label: usize,
    rule: MatchRule,
}

impl Candidate {
    fn len(&self) -> usize {
        self.end - self.start
    }

    fn overlaps(&self, other: &Candidate) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Answer parser configured with an unknown-keyword list.
#[derive(Debug, Clone)]
pub struct Extractor {
    keywords: Regex,
}

impl Default for Extractor {
    fn default() -> Self {
        Self::new(DEFAULT_UNKNOWN_KEYWORDS.iter().copied())
    }
}

impl Extractor {
    pub fn new<'a>(keywords: impl IntoIterator<Item = &'a str>) -> Self {
        let mut alternatives: Vec<String> = keywords
            .into_iter()
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(bounded_pattern)
            .collect();
        // Longer phrasings first so alternation prefers them at the same offset.
        alternatives.sort_by_key(|a| std::cmp::Reverse(a.len()));
        let pattern = if alternatives.is_empty() {
            // Matches nothing.
            r"[^\s\S]".to_owned()
        } else {
            format!("(?i){}", alternatives.join("|"))
        };
        Self {
            keywords: Regex::new(&pattern).expect("escaped keyword pattern"),
        }
    }

    pub fn extract(&self, text: &str, options: &[AnswerOption]) -> ExtractionResult {
        let mut candidates = index_candidates(text);
        candidates.extend(option_text_candidates(text, options));
        if let Some(unknown) = options.iter().position(|o| o.role == AnswerRole::Unknown) {
            candidates.extend(self.keywords.find_iter(text).map(|m| Candidate {
                start: m.start(),
                end: m.end(),
                label: unknown,
                rule: MatchRule::Keyword,
            }));
        }

        let mut candidates = resolve_overlaps(candidates);
        drop_listings(text, options, &mut candidates);
        candidates.retain(|c| !is_negated(text, c));
        if candidates.is_empty() {
            return ExtractionResult::invalid();
        }

        let cue_end = ANSWER_CUE.find_iter(text).map(|m| m.end()).last();
        let chosen = cue_end
            .and_then(|cue| candidates.iter().position(|c| c.start >= cue))
            .unwrap_or(candidates.len() - 1);

        if in_disjunction(text, &candidates, chosen) {
            return ExtractionResult::invalid();
        }

        let winner = candidates[chosen];
        ExtractionResult {
            label: Prediction::Choice(winner.label),
            matched_by: winner.rule,
            matched_span: Some((char_offset(text, winner.start), char_offset(text, winner.end))),
        }
    }
}

/// Extracts with the default keyword list.
pub fn extract_answer(text: &str, options: &[AnswerOption]) -> ExtractionResult {
    static DEFAULT: Lazy<Extractor> = Lazy::new(Extractor::default);
    DEFAULT.extract(text, options)
}

fn bounded_pattern(literal: &str) -> String {
    let escaped = regex::escape(literal);
    let starts_word = literal.chars().next().is_some_and(is_word_char);
    let ends_word = literal.chars().last().is_some_and(is_word_char);
    format!(
        "{}{}{}",
        if starts_word { r"\b" } else { "" },
        escaped,
        if ends_word { r"\b" } else { "" }
    )
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn index_candidates(text: &str) -> Vec<Candidate> {
    INDEX_TOKEN
        .captures_iter(text)
        .filter_map(|caps| {
            let whole = caps.get(0)?;
            let label = if let Some(d) = caps.get(1) {
                d.as_str().parse::<usize>().ok()?
            } else if let Some(letter) = caps.get(2) {
                (letter.as_str().to_ascii_lowercase().as_bytes()[0] - b'a') as usize
            } else {
                caps.get(3)?.as_str().parse::<usize>().ok()? - 1
            };
            Some(Candidate {
                start: whole.start(),
                end: whole.end(),
                label,
                rule: MatchRule::ExplicitIndex,
            })
        })
        .collect()
}

/// Surface forms an option may be referred to by: its text without trailing
/// punctuation, and without a leading article.
fn option_surface_forms(text: &str) -> Vec<String> {
    let base = text
        .trim()
        .trim_end_matches(['.', '!', '?', ','])
        .trim();
    if base.is_empty() {
        return Vec::new();
    }
    let mut forms = vec![base.to_owned()];
    let lower = base.to_lowercase();
    for article in ["the ", "a ", "an "] {
        if lower.starts_with(article) {
            let rest = base[article.len()..].trim();
            if rest.chars().count() >= 3 {
                forms.push(rest.to_owned());
            }
        }
    }
    forms
}

fn chars_equal_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Non-overlapping case-insensitive matches of `needle` as byte ranges.
/// Ends that are word characters must sit on word boundaries.
fn find_bounded(text: &str, needle: &str) -> Vec<(usize, usize)> {
    let needle: Vec<char> = needle.chars().collect();
    let (Some(&first), Some(&last)) = (needle.first(), needle.last()) else {
        return Vec::new();
    };
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + needle.len() <= chars.len() {
        let matched = needle
            .iter()
            .zip(&chars[i..])
            .all(|(n, (_, c))| chars_equal_ci(*n, *c));
        let end = i + needle.len();
        let left_ok = !is_word_char(first) || i == 0 || !is_word_char(chars[i - 1].1);
        let right_ok = !is_word_char(last) || end == chars.len() || !is_word_char(chars[end].1);
        if matched && left_ok && right_ok {
            let end_byte = chars.get(end).map_or(text.len(), |(b, _)| *b);
            out.push((chars[i].0, end_byte));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn option_text_candidates(text: &str, options: &[AnswerOption]) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (label, option) in options.iter().enumerate() {
        for form in option_surface_forms(&option.text) {
            out.extend(find_bounded(text, &form).into_iter().map(|(start, end)| Candidate {
                start,
                end,
                label,
                rule: MatchRule::OptionText,
            }));
        }
    }
    out
}

/// Keeps the longest candidate among overlapping ones (rule priority breaks
/// length ties) and returns the survivors in text order.
fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.rule.cmp(&b.rule))
            .then(a.start.cmp(&b.start))
    });
    let mut kept: Vec<Candidate> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !kept.iter().any(|k| k.overlaps(&c)) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| (c.start, c.end));
    kept
}

/// Removes restated option lists such as `a0: X a1: Y a2: Z` or
/// `(a) X (b) Y (c) Z`, together with the option texts inside them.
fn drop_listings(text: &str, options: &[AnswerOption], candidates: &mut Vec<Candidate>) {
    let followed_by_own_text = |c: &Candidate| -> Option<usize> {
        let rest = &text[c.end..];
        let skip = LISTING_SEPARATOR.find(rest).map_or(0, |m| m.end());
        let rest = &rest[skip..];
        let lowered = rest.to_lowercase();
        option_surface_forms(&options.get(c.label)?.text)
            .into_iter()
            .find(|form| lowered.starts_with(&form.to_lowercase()))
            .map(|form| c.end + skip + form.len())
    };

    let index_positions: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.rule == MatchRule::ExplicitIndex)
        .map(|(i, _)| i)
        .collect();

    let mut spans: Vec<(usize, usize)> = Vec::new();
    for window in index_positions.windows(3) {
        let trio = [candidates[window[0]], candidates[window[1]], candidates[window[2]]];
        if trio.iter().map(|c| c.label).ne([0, 1, 2]) {
            continue;
        }
        let ends: Option<Vec<usize>> = trio.iter().map(followed_by_own_text).collect();
        if let Some(ends) = ends {
            spans.push((trio[0].start, ends[2]));
        }
    }
    if spans.is_empty() {
        return;
    }
    candidates.retain(|c| !spans.iter().any(|&(s, e)| c.start >= s && c.end <= e));
}

fn is_negated(text: &str, c: &Candidate) -> bool {
    let before_start = text[..c.start]
        .char_indices()
        .rev()
        .nth(39)
        .map_or(0, |(i, _)| i);
    let before = &text[before_start..c.start];
    if NEGATION_BEFORE.is_match(before) {
        return true;
    }
    let after_end = text[c.end..]
        .char_indices()
        .nth(80)
        .map_or(text.len(), |(i, _)| c.end + i);
    NEGATION_AFTER.is_match(&text[c.end..after_end])
}

fn in_disjunction(text: &str, candidates: &[Candidate], chosen: usize) -> bool {
    let c = candidates[chosen];
    let joined = |a: &Candidate, b: &Candidate| {
        a.label != b.label && DISJUNCTION_GAP.is_match(&text[a.end..b.start])
    };
    let before = chosen
        .checked_sub(1)
        .is_some_and(|p| joined(&candidates[p], &c));
    let after = candidates
        .get(chosen + 1)
        .is_some_and(|n| joined(&c, n));
    before || after
}
