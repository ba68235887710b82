//! Final-answer extraction and format-insensitive comparison.
//!
//! Answers are canonicalized to exact rationals whenever the text is numeric
//! (`42`, `42.0`, `1,000`, `\frac{3}{4}`, `-2.5`), so `42.0` and `42` compare
//! equal. Non-numeric answers fall back to a whitespace- and markup-stripped
//! string comparison.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Exact rational value of a numeric answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational(Ratio<i128>);

impl Rational {
    pub fn new(numer: i128, denom: i128) -> Option<Self> {
        if denom == 0 {
            return None;
        }
        Some(Rational(Ratio::new(numer, denom)))
    }

    pub fn from_integer(v: i128) -> Self {
        Rational(Ratio::from_integer(v))
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Number,
    LatexBoxed,
    Text,
}

/// A final answer as written, plus its canonical numeric value when it has one.
///
/// Serialized as the raw string; `numeric` and `kind` are re-derived on load.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub struct Answer {
    pub raw: String,
    pub numeric: Option<Rational>,
    pub kind: AnswerKind,
}

impl Answer {
    pub fn parse(raw: &str) -> Answer {
        let raw = raw.trim();
        let (kind, body) = match unwrap_boxed(raw) {
            Some(inner) => (AnswerKind::LatexBoxed, inner),
            None => (AnswerKind::Text, raw),
        };
        let numeric = parse_rational(body);
        let kind = match (kind, numeric) {
            (AnswerKind::LatexBoxed, _) => AnswerKind::LatexBoxed,
            (_, Some(_)) => AnswerKind::Number,
            _ => AnswerKind::Text,
        };
        Answer {
            raw: raw.to_string(),
            numeric,
            kind,
        }
    }

    pub fn number(v: i128) -> Answer {
        Answer::parse(&v.to_string())
    }

    /// Canonical comparison key for non-numeric answers.
    pub fn canonical_text(&self) -> String {
        let body = unwrap_boxed(&self.raw).unwrap_or(&self.raw);
        normalize_text(body)
    }
}

impl From<String> for Answer {
    fn from(s: String) -> Self {
        Answer::parse(&s)
    }
}

impl From<Answer> for String {
    fn from(a: Answer) -> Self {
        a.raw
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Which answer convention the world model is prompted to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSpec {
    /// GSM8K style: `The answer is 42.`
    #[default]
    TheAnswerIs,
    /// MATH style: `\boxed{1000}`
    Boxed,
}

const ANSWER_CUE: &str = "the answer is";
const BOXED_CUE: &str = "\\boxed{";

/// Extract the last answer token from `expression` under `spec`.
///
/// Never fails: text without a recognisable answer yields `None`.
pub fn extract_answer(expression: &str, spec: AnswerSpec) -> Option<Answer> {
    match spec {
        AnswerSpec::TheAnswerIs => extract_answer_is(expression),
        AnswerSpec::Boxed => extract_boxed(expression),
    }
}

/// True iff the canonical forms of the two answers agree.
pub fn verify_answer(found: &Answer, gold: &Answer) -> bool {
    match (found.numeric, gold.numeric) {
        (Some(a), Some(b)) => a == b,
        (None, None) => {
            let a = found.canonical_text();
            !a.is_empty() && a == gold.canonical_text()
        }
        _ => false,
    }
}

fn extract_answer_is(text: &str) -> Option<Answer> {
    let lower = text.to_ascii_lowercase();
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let starts: Vec<usize> = lower.match_indices(ANSWER_CUE).map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let rest = &text[start + ANSWER_CUE.len()..];
        if let Some(token) = answer_token(rest) {
            return Some(Answer::parse(token));
        }
    }
    None
}

/// Answer token following the cue: up to a sentence-ending period or newline.
fn answer_token(rest: &str) -> Option<&str> {
    let rest = rest.trim_start_matches([' ', '\t', ':']);
    if rest.starts_with(BOXED_CUE) {
        let end = matching_brace(rest, BOXED_CUE.len() - 1)?;
        return Some(&rest[..=end]);
    }
    let bytes = rest.as_bytes();
    let mut end = rest.len();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            end = i;
            break;
        }
        if b == b'.' {
            let next = bytes.get(i + 1).copied();
            let ends_sentence = match next {
                None => true,
                Some(n) => n.is_ascii_whitespace() || n == b'"' || n == b')',
            };
            if ends_sentence {
                end = i;
                break;
            }
        }
    }
    let token = rest[..end].trim().trim_matches('$').trim();
    let token = token.trim_end_matches(['.', '!']).trim();
    if token.is_empty() {
        None
    } else {
        Some(token)
    }
}

fn extract_boxed(text: &str) -> Option<Answer> {
    let starts: Vec<usize> = text.match_indices(BOXED_CUE).map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let open = start + BOXED_CUE.len() - 1;
        if let Some(close) = matching_brace(text, open) {
            let inner = text[open + 1..close].trim();
            if !inner.is_empty() {
                return Some(Answer::parse(&text[start..=close]));
            }
        }
    }
    None
}

/// Index of the `}` matching the `{` at byte offset `open`.
fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in text[open..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

fn unwrap_boxed(raw: &str) -> Option<&str> {
    let raw = raw.trim().trim_matches('$').trim();
    if !raw.starts_with(BOXED_CUE) {
        return None;
    }
    let close = matching_brace(raw, BOXED_CUE.len() - 1)?;
    if close + 1 != raw.len() {
        return None;
    }
    Some(&raw[BOXED_CUE.len()..close])
}

fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let cleaned = s
        .replace("\\left", "")
        .replace("\\right", "")
        .replace("\\!", "")
        .replace("\\,", "")
        .replace("\\dfrac", "\\frac")
        .replace("\\tfrac", "\\frac");
    for c in cleaned.chars() {
        if c.is_whitespace() || c == '$' {
            continue;
        }
        out.extend(c.to_lowercase());
    }
    while out.ends_with('.') {
        out.pop();
    }
    out
}

/// Parse canonicalized numeric text to an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let mut s = normalize_text(text);
    if let Some(stripped) = s.strip_prefix("\\text{") {
        s = stripped.trim_end_matches('}').into();
    }
    for suffix in ["\\%", "%", "^\\circ", "^{\\circ}"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            s = stripped.into();
        }
    }
    let s = s.trim_start_matches('+');
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let value = if let Some(frac) = body.strip_prefix("\\frac") {
        parse_latex_frac(frac)?
    } else if let Some((n, d)) = body.split_once('/') {
        let n = parse_decimal(n)?;
        let d = parse_decimal(d)?;
        if d.numer() == 0 {
            return None;
        }
        Rational(n.0 / d.0)
    } else {
        parse_decimal(body)?
    };
    Some(if negative { Rational(-value.0) } else { value })
}

fn parse_latex_frac(s: &str) -> Option<Rational> {
    if !s.starts_with('{') {
        return None;
    }
    let close = matching_brace(s, 0)?;
    let numer = parse_rational(&s[1..close])?;
    let rest = &s[close + 1..];
    if !rest.starts_with('{') {
        return None;
    }
    let close2 = matching_brace(rest, 0)?;
    if close2 + 1 != rest.len() {
        return None;
    }
    let denom = parse_rational(&rest[1..close2])?;
    if denom.numer() == 0 {
        return None;
    }
    Some(Rational(numer.0 / denom.0))
}

/// Decimal number with optional thousands separators (`1,234.50`).
fn parse_decimal(s: &str) -> Option<Rational> {
    let (negative, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    if s.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if !valid_grouping(int_part) {
        return None;
    }
    if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let mut numer: i128 = 0;
    for b in int_part.bytes().filter(|b| *b != b',') {
        numer = numer.checked_mul(10)?.checked_add((b - b'0') as i128)?;
    }
    let mut denom: i128 = 1;
    for b in frac_part.bytes() {
        numer = numer.checked_mul(10)?.checked_add((b - b'0') as i128)?;
        denom = denom.checked_mul(10)?;
    }
    if negative {
        numer = -numer;
    }
    Rational::new(numer, denom)
}

/// Digits, optionally grouped in threes by commas.
fn valid_grouping(s: &str) -> bool {
    if s.is_empty() {
        return true;
    }
    if !s.bytes().all(|b| b.is_ascii_digit() || b == b',') {
        return false;
    }
    if !s.contains(',') {
        return true;
    }
    let groups: Vec<&str> = s.split(',').collect();
    let first = groups[0];
    !first.is_empty()
        && first.len() <= 3
        && groups[1..].iter().all(|g| g.len() == 3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(s: &str) -> Option<String> {
        extract_answer(s, AnswerSpec::TheAnswerIs).map(|a| a.numeric.unwrap().to_string())
    }

    #[test]
    fn answer_is_prompt_example() {
        assert_eq!(num("5 * 8 = 40 + 2 = 42. The answer is 42."), Some("42".into()));
    }

    #[test]
    fn boxed_prompt_example() {
        let a = extract_answer("$(9+1)^3 = 10^3 = \\boxed{1000}$", AnswerSpec::Boxed).unwrap();
        assert_eq!(a.kind, AnswerKind::LatexBoxed);
        assert_eq!(a.numeric, Some(Rational::from_integer(1000)));
    }

    #[test]
    fn absent_answer() {
        assert!(extract_answer("no answer here", AnswerSpec::TheAnswerIs).is_none());
        assert!(extract_answer("no answer here", AnswerSpec::Boxed).is_none());
        assert!(extract_answer("The answer is .", AnswerSpec::TheAnswerIs).is_none());
        assert!(extract_answer("\\boxed{", AnswerSpec::Boxed).is_none());
    }

    #[test]
    fn last_answer_wins() {
        assert_eq!(
            num("The answer is 3. Then 3 + 4 = 7. The answer is 7."),
            Some("7".into())
        );
    }

    #[test]
    fn decimals_and_commas() {
        assert_eq!(num("The answer is 1,000."), Some("1000".into()));
        assert_eq!(num("The answer is 2.50."), Some("5/2".into()));
        assert_eq!(num("The answer is -3.5"), Some("-7/2".into()));
    }

    #[test]
    fn verify_canonicalizes() {
        let gold = Answer::number(42);
        assert!(verify_answer(&Answer::parse("42"), &gold));
        assert!(verify_answer(&Answer::parse("42.0"), &gold));
        assert!(!verify_answer(&Answer::parse("41"), &gold));
        assert!(verify_answer(&Answer::parse("\\boxed{42}"), &gold));
    }

    #[test]
    fn bad_grouping_is_not_numeric() {
        assert!(parse_rational("1,00").is_none());
        assert!(parse_rational("(1,2)").is_none());
        assert!(parse_rational("1/0").is_none());
    }

    #[test]
    fn text_answers_compare_normalized() {
        let a = Answer::parse("\\boxed{x^2 + 1}");
        let b = Answer::parse("x^2+1");
        assert_eq!(a.kind, AnswerKind::LatexBoxed);
        assert!(a.numeric.is_none());
        assert!(verify_answer(&a, &b));
    }

    #[test]
    fn serde_as_raw_string() {
        let a = Answer::parse("\\frac{3}{4}");
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "\"\\\\frac{3}{4}\"");
        let back: Answer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.numeric, Rational::new(3, 4));
    }

    proptest::proptest! {
        #[test]
        fn extraction_is_total(s in "\\PC*") {
            let _ = extract_answer(&s, AnswerSpec::TheAnswerIs);
            let _ = extract_answer(&s, AnswerSpec::Boxed);
        }

        #[test]
        fn integers_round_trip(v in -1_000_000_000i64..1_000_000_000) {
            let text = alloc::format!("The answer is {v}.");
            let a = extract_answer(&text, AnswerSpec::TheAnswerIs).unwrap();
            proptest::prop_assert_eq!(a.numeric, Some(Rational::from_integer(v as i128)));
        }
    }
}
