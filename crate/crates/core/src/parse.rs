//! The numerical parser shared by candidate generation, reference consistency
//! checks, self calibration and suspect audits.
//!
//! Batched answers are expected as numbered `(N)` lines. When numbering is
//! present the parser maps answers by label, tolerating skipped, reordered or
//! refused items; otherwise it falls back to sequential line mapping. Each
//! slot takes the final numeric token of its answer text.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::DomainSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("ambiguous slot alignment: {0}")]
    AmbiguousAlignment(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumberError {
    #[error("no numeric token in `{0}`")]
    NoNumber(String),
    #[error("`{0}` is a range, not a single value")]
    Range(String),
    #[error("`{0}` is not a finite number")]
    NotFinite(String),
}

/// One `name | value` record proposed during generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Normalized name used for de-duplication.
    pub name: String,
    /// Cleaned display name substituted into the audit template.
    pub subject: String,
    pub value: f64,
    pub raw_line: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Valid,
    Invalid,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    /// 1-based slot number.
    pub slot_index: usize,
    pub status: SlotStatus,
    /// Present iff `status` is valid.
    pub value: Option<f64>,
}

impl SlotResult {
    fn missing(slot_index: usize) -> Self {
        Self {
            slot_index,
            status: SlotStatus::Missing,
            value: None,
        }
    }
}

/// Default delimiters of hidden reasoning regions.
pub const DEFAULT_REASONING_TAGS: &[(&str, &str)] = &[
    ("<think>", "</think>"),
    ("<thinking>", "</thinking>"),
    ("<reasoning>", "</reasoning>"),
    ("<reflection>", "</reflection>"),
    ("<|begin_of_thought|>", "<|end_of_thought|>"),
    ("◁think▷", "◁/think▷"),
];

/// Approximate-value markers removed before extraction.
pub const APPROXIMATE_MARKERS: &[&str] = &[
    "approximately",
    "approx.",
    "approx",
    "roughly",
    "around",
    "about",
    "circa",
    "ca.",
    "nearly",
    "almost",
    "estimated",
    "est.",
    "~",
    "≈",
    "∼",
    "±",
];

/// Unit spellings that carry a digit and would otherwise be read as a value.
const DIGIT_UNITS: &str = r"(?:km|cm|mm|nm|m|ft|mi|in|au|AU|pc|ly)(?:\^?[23]|²|³)";

static DIGIT_UNIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b{DIGIT_UNITS}(?:[^0-9A-Za-z]|$)")).unwrap());
static TIMES_TEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([0-9]+(?:\.[0-9]+)?)\s*(?:×|x|X|\*|·)\s*10\s*\^\s*\(?\s*([-+]?[0-9]+)\s*\)?").unwrap()
});
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[-+]?(?:[0-9]+(?:\.[0-9]+)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?").unwrap()
});
static RANGE_TAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9]\s*(?:-|–|—|~|to)\s*$").unwrap());
static PAREN_LABEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\(\[]\s*([0-9]{1,3})\s*[\)\]]\s*[.:]?\s*(.*)$").unwrap());
static BARE_LABEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:Q|#)?([0-9]{1,3})\s*[.):]\s+(.+)$").unwrap());
static DANGLING_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:is|are|was|were|equals|of|at)$").unwrap());
static PLUS_MINUS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:±|\+/-|\+-)\s*[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?%?").unwrap());
static LIST_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*+•·]\s+|\(?[0-9]{1,3}[.)]\s+|\([0-9]{1,3}\)\s*)").unwrap());

/// Tunable parser behaviour.
#[derive(Debug, Clone)]
pub struct ParserOptions {
    pub reasoning_tags: Vec<(String, String)>,
    /// Per-slot prompt text preceding the value slot. When an answer echoes
    /// this text, only the text after it is searched for the value.
    pub slot_prefixes: Option<Vec<String>>,
}

impl Default for ParserOptions {
    fn default() -> Self {
        Self {
            reasoning_tags: DEFAULT_REASONING_TAGS
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            slot_prefixes: None,
        }
    }
}

fn map_char(c: char) -> Option<char> {
    Some(match c {
        '\u{2212}' | '\u{2012}' | '\u{FE63}' | '\u{FF0D}' | '\u{2011}' => '-',
        '\u{FF10}'..='\u{FF19}' => char::from(b'0' + (c as u32 - 0xFF10) as u8),
        '\u{FF0E}' => '.',
        '\u{FF0C}' => ',',
        '\u{00A0}' | '\u{2007}' | '\u{2009}' | '\u{202F}' => '\u{2009}',
        _ => return None,
    })
}

fn superscript_digit(c: char) -> Option<char> {
    Some(match c {
        '⁰' => '0',
        '¹' => '1',
        '²' => '2',
        '³' => '3',
        '⁴' => '4',
        '⁵' => '5',
        '⁶' => '6',
        '⁷' => '7',
        '⁸' => '8',
        '⁹' => '9',
        '⁻' => '-',
        _ => return None,
    })
}

/// Canonicalize signs, full-width digits, digit-group separators and
/// `a × 10^b` notation so that plain regex extraction suffices.
fn canonicalize(text: &str) -> String {
    let mapped: Vec<char> = text.chars().map(|c| map_char(c).unwrap_or(c)).collect();

    // `10⁻¹¹` -> `10^-11`.
    let mut out = String::with_capacity(mapped.len());
    let mut i = 0;
    while i < mapped.len() {
        let c = mapped[i];
        if superscript_digit(c).is_some() && out.ends_with("10") {
            out.push('^');
            while i < mapped.len() {
                match superscript_digit(mapped[i]) {
                    Some(d) => out.push(d),
                    None => break,
                }
                i += 1;
            }
            continue;
        }
        out.push(c);
        i += 1;
    }

    // Thousands separators: `,` or thin space between a digit and a group of
    // exactly three digits.
    let chars: Vec<char> = out.chars().collect();
    let mut grouped = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ',' || c == '\u{2009}' {
            let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
            let next3 = chars.len() > i + 3 && chars[i + 1..=i + 3].iter().all(|c| c.is_ascii_digit());
            let next3_end = chars.len() == i + 4;
            let terminated = next3_end || (next3 && !chars[i + 4].is_ascii_digit());
            if prev_digit && (next3 || next3_end) && terminated {
                continue;
            }
            if c == '\u{2009}' {
                grouped.push(' ');
                continue;
            }
        }
        grouped.push(c);
    }

    let stripped = DIGIT_UNIT_RE.replace_all(&grouped, " ");
    TIMES_TEN_RE.replace_all(&stripped, "${1}e${2}").into_owned()
}

static WORD_MARKER_RE: LazyLock<Regex> = LazyLock::new(|| {
    let words: Vec<String> = APPROXIMATE_MARKERS
        .iter()
        .filter(|m| m.starts_with(char::is_alphabetic))
        .map(|m| {
            let tail = if m.ends_with(char::is_alphabetic) { r"\b" } else { "" };
            format!(r"\b{}{tail}", regex::escape(m))
        })
        .collect();
    Regex::new(&format!("(?i){}", words.join("|"))).unwrap()
});

fn strip_approximate_markers(text: &str) -> String {
    let out = PLUS_MINUS_RE.replace_all(text, " ");
    let mut out = WORD_MARKER_RE.replace_all(&out, " ").into_owned();
    for m in APPROXIMATE_MARKERS {
        if !m.starts_with(char::is_alphabetic) {
            out = out.replace(m, " ");
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct NumToken {
    value: f64,
    start: usize,
}

/// All numeric tokens of an already canonicalized text, in order.
fn numeric_tokens(text: &str) -> Vec<NumToken> {
    let mut out = Vec::new();
    for m in NUMBER_RE.find_iter(text) {
        let mut s = m.as_str();
        let mut start = m.start();
        let before = text[..start].chars().next_back();
        if s.starts_with(['-', '+']) && before.is_some_and(|c| c.is_alphanumeric() || c == '.') {
            // A hyphen glued to a word (`Threefish-1024`) is not a sign.
            s = &s[1..];
            start += 1;
        }
        if s.starts_with('.') && before.is_some_and(|c| c.is_ascii_digit()) {
            continue;
        }
        if let Ok(value) = s.parse::<f64>() {
            out.push(NumToken { value, start });
        }
    }
    out
}

fn final_value(canonical: &str) -> Result<f64, NumberError> {
    let tokens = numeric_tokens(canonical);
    let last = tokens
        .last()
        .ok_or_else(|| NumberError::NoNumber(canonical.trim().to_string()))?;
    if RANGE_TAIL_RE.is_match(&canonical[..last.start]) {
        return Err(NumberError::Range(canonical.trim().to_string()));
    }
    if !last.value.is_finite() {
        return Err(NumberError::NotFinite(canonical.trim().to_string()));
    }
    Ok(last.value)
}

/// Numeric value of a candidate fragment: unit symbols, digit-group
/// separators and approximate markers are removed, Unicode minus signs become
/// ASCII, and the final numeric token is returned.
pub fn normalize_number(token: &str) -> Result<f64, NumberError> {
    final_value(&canonicalize(&strip_approximate_markers(token)))
}

fn first_number(fragment: &str) -> Option<f64> {
    let canonical = canonicalize(&strip_approximate_markers(fragment));
    numeric_tokens(&canonical)
        .first()
        .map(|t| t.value)
        .filter(|v| v.is_finite())
}

/// Lowercase, strip formatting punctuation and collapse whitespace.
pub fn normalize_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| match c {
            '*' | '_' | '`' | '"' | '“' | '”' | '‘' | '’' | '\'' | '!' | '?' | ';' => ' ',
            c => c,
        })
        .collect();
    let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| matches!(c, '.' | ',' | ':' | '-' | ' '))
        .to_lowercase()
}

fn clean_subject(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .filter(|c| !matches!(c, '*' | '`'))
        .collect();
    cleaned
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| matches!(c, '.' | ',' | ':' | ' ' | '"'))
        .to_string()
}

/// Parse `name | value` records from a generation response.
///
/// List markers and table borders are removed, duplicate normalized names
/// keep their first occurrence, and values outside the domain range are
/// dropped.
pub fn parse_candidate_records(text: &str, spec: &DomainSpec) -> Vec<CandidateRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let cleaned = strip_reasoning(text, &ParserOptions::default().reasoning_tags);
    for raw in cleaned.lines() {
        let mut line = raw.trim();
        if line.is_empty() || is_separator(line) {
            continue;
        }
        line = line.trim_matches('|').trim();
        let line = LIST_MARKER_RE.replace(line, "");
        let Some((name, value)) = line.rsplit_once('|') else {
            continue;
        };
        let subject = clean_subject(name.trim().trim_matches('|'));
        let key = normalize_name(&subject);
        if key.is_empty() {
            continue;
        }
        let Some(value) = first_number(value) else {
            continue;
        };
        if !spec.validate_range(value) {
            continue;
        }
        if !seen.insert(key.clone()) {
            continue;
        }
        out.push(CandidateRecord {
            name: key,
            subject,
            value,
            raw_line: raw.to_string(),
        });
    }
    out
}

/// Remove hidden reasoning regions. An unmatched closing tag drops everything
/// before it; an unmatched opening tag drops everything after it.
fn strip_reasoning(text: &str, tags: &[(String, String)]) -> String {
    let mut out = text.to_string();
    for (open, close) in tags {
        loop {
            let lower = out.to_ascii_lowercase();
            let o = lower.find(&open.to_ascii_lowercase());
            let c = lower.find(&close.to_ascii_lowercase());
            match (o, c) {
                (Some(o), Some(c)) if o < c => {
                    let end = c + close.len();
                    out.replace_range(o..end, "\n");
                }
                (_, Some(c)) => {
                    out.replace_range(..c + close.len(), "");
                }
                (Some(o), None) => {
                    out.truncate(o);
                }
                (None, None) => break,
            }
        }
    }
    out
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 3
        && t.chars().all(|c| matches!(c, '-' | '=' | '*' | '_' | '|' | ':' | '+' | ' ' | '`' | '~'))
        && t.chars().any(|c| matches!(c, '-' | '=' | '*' | '_' | '`' | '~'))
}

fn strip_emphasis(line: &str) -> String {
    let s: String = line.chars().filter(|c| !matches!(c, '*' | '`')).collect();
    s.trim_start_matches('#').trim().to_string()
}

/// Clean response text into answer lines: reasoning regions, empty lines,
/// separators and code fences removed; table rows unwrapped into plain
/// text with their header rows dropped.
fn answer_lines(text: &str, opts: &ParserOptions) -> Vec<String> {
    let stripped = strip_reasoning(text, &opts.reasoning_tags);
    let raw: Vec<&str> = stripped
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let mut out = Vec::new();
    for (i, line) in raw.iter().enumerate() {
        if is_separator(line) {
            continue;
        }
        if line.starts_with('|') {
            let next_is_sep = raw.get(i + 1).is_some_and(|n| is_separator(n));
            if next_is_sep {
                continue;
            }
            let cells: Vec<&str> = line
                .split('|')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .collect();
            let joined = strip_emphasis(&cells.join(" "));
            if !joined.is_empty() {
                out.push(joined);
            }
            continue;
        }
        let l = strip_emphasis(line);
        if !l.is_empty() {
            out.push(l);
        }
    }
    out
}

fn label_of(line: &str, n_slots: usize) -> Option<(usize, String)> {
    let caps = PAREN_LABEL_RE
        .captures(line)
        .or_else(|| BARE_LABEL_RE.captures(line))?;
    let n: usize = caps[1].parse().ok()?;
    (1..=n_slots)
        .contains(&n)
        .then(|| (n, caps[2].trim().to_string()))
}

/// A line that stops where its value should follow, e.g. `... is` or `x =`.
fn dangles(line: &str) -> bool {
    let t = line.trim_end();
    t.ends_with([':', '=']) || DANGLING_RE.is_match(t)
}

fn has_number(line: &str) -> bool {
    !numeric_tokens(&canonicalize(line)).is_empty()
}

fn slot_from_text(
    slot_index: usize,
    text: &str,
    spec: &DomainSpec,
    prefix: Option<&str>,
) -> SlotResult {
    let mut body = text.to_string();
    if let Some(prefix) = prefix.map(str::trim).filter(|p| !p.is_empty()) {
        // ASCII folding keeps byte offsets valid in the original text.
        let lower = body.to_ascii_lowercase();
        if let Some(at) = lower.find(&prefix.to_ascii_lowercase()) {
            body = body[at + prefix.len()..].to_string();
        }
    }
    match normalize_number(&body) {
        Ok(v) if spec.validate_range(v) => SlotResult {
            slot_index,
            status: SlotStatus::Valid,
            value: Some(v),
        },
        Ok(_) | Err(NumberError::Range(_)) | Err(NumberError::NotFinite(_)) => SlotResult {
            slot_index,
            status: SlotStatus::Invalid,
            value: None,
        },
        Err(NumberError::NoNumber(_)) => SlotResult::missing(slot_index),
    }
}

/// Parse a batched numbered response into exactly `n_slots` slot results.
pub fn parse_batch(
    text: &str,
    n_slots: usize,
    spec: &DomainSpec,
) -> Result<Vec<SlotResult>, ParseError> {
    parse_batch_with(text, n_slots, spec, &ParserOptions::default())
}

pub fn parse_batch_with(
    text: &str,
    n_slots: usize,
    spec: &DomainSpec,
    opts: &ParserOptions,
) -> Result<Vec<SlotResult>, ParseError> {
    assert!(n_slots >= 1, "a batch has at least one slot");
    let prefix = |slot: usize| {
        opts.slot_prefixes
            .as_ref()
            .and_then(|p| p.get(slot - 1))
            .map(String::as_str)
    };
    let lines = answer_lines(text, opts);
    let labels: Vec<Option<(usize, String)>> = lines.iter().map(|l| label_of(l, n_slots)).collect();

    if labels.iter().any(Option::is_some) {
        let mut slot_text: Vec<Option<String>> = vec![None; n_slots];
        let mut orphans = 0usize;
        let mut i = labels.iter().position(Option::is_some).unwrap_or(0);
        while i < lines.len() {
            match &labels[i] {
                Some((n, rest)) => {
                    if slot_text[n - 1].is_some() {
                        return Err(ParseError::AmbiguousAlignment(format!(
                            "slot ({n}) answered more than once"
                        )));
                    }
                    let mut answer = rest.clone();
                    if !has_number(&answer) || dangles(&answer) {
                        if let Some(None) = labels.get(i + 1) {
                            answer = format!("{answer} {}", lines[i + 1]);
                            i += 1;
                        }
                    }
                    slot_text[n - 1] = Some(answer);
                }
                None => {
                    if has_number(&lines[i]) {
                        orphans += 1;
                    }
                }
            }
            i += 1;
        }
        let missing = slot_text.iter().filter(|s| s.is_none()).count();
        if missing > 0 && orphans > 0 {
            return Err(ParseError::AmbiguousAlignment(format!(
                "{missing} unlabelled slot(s) and {orphans} unlabelled numeric line(s)"
            )));
        }
        return Ok(slot_text
            .into_iter()
            .enumerate()
            .map(|(i, t)| match t {
                Some(t) => slot_from_text(i + 1, &t, spec, prefix(i + 1)),
                None => SlotResult::missing(i + 1),
            })
            .collect());
    }

    // Sequential fallback. A leading `...:` line without numbers is preamble.
    let mut body: Vec<&String> = lines.iter().collect();
    while body.len() > n_slots
        && body
            .first()
            .is_some_and(|l| l.trim_end().ends_with(':') && !has_number(l))
    {
        body.remove(0);
    }
    let numeric: Vec<&String> = body.iter().copied().filter(|l| has_number(l)).collect();
    let mapped: Vec<&String> = if body.len() == n_slots {
        body
    } else if numeric.len() == n_slots {
        numeric
    } else if numeric.is_empty() {
        return Ok((1..=n_slots).map(SlotResult::missing).collect());
    } else {
        return Err(ParseError::AmbiguousAlignment(format!(
            "{} unnumbered line(s) ({} numeric) for {n_slots} slot(s)",
            body.len(),
            numeric.len()
        )));
    };
    Ok(mapped
        .into_iter()
        .enumerate()
        .map(|(i, t)| slot_from_text(i + 1, t, spec, prefix(i + 1)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{render_audit_prompt, DomainRegistry, VALUE_SLOT};
    use proptest::prelude::*;

    fn spec(id: &str) -> DomainSpec {
        DomainRegistry::builtin().get(id).unwrap().clone()
    }

    fn valid(i: usize, v: f64) -> SlotResult {
        SlotResult {
            slot_index: i,
            status: SlotStatus::Valid,
            value: Some(v),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_number("2,450 km").unwrap(), 2450.0);
        assert_eq!(normalize_number("\u{2212}300").unwrap(), -300.0);
        assert!(matches!(
            normalize_number("approximately forty"),
            Err(NumberError::NoNumber(_))
        ));
        assert_eq!(normalize_number("~1,234,567 people").unwrap(), 1_234_567.0);
        assert_eq!(normalize_number("6.674×10^-11").unwrap(), 6.674e-11);
        assert_eq!(normalize_number("3.0 × 10⁸ m/s").unwrap(), 3.0e8);
        assert_eq!(normalize_number("1e15").unwrap(), 1e15);
        assert_eq!(normalize_number("９６").unwrap(), 96.0);
        assert_eq!(normalize_number("9,596,961 km²").unwrap(), 9_596_961.0);
        assert!(matches!(normalize_number("80–90"), Err(NumberError::Range(_))));
        assert_eq!(normalize_number("Threefish-1024").unwrap(), 1024.0);
        assert_eq!(normalize_number("s(11,5) = 269325").unwrap(), 269325.0);
    }

    #[test]
    fn candidate_records() {
        let crypto = spec("crypto-parameters");
        let recs = parse_candidate_records("1. Threefish-1024 rounds | 80", &crypto);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].name, "threefish-1024 rounds");
        assert_eq!(recs[0].subject, "Threefish-1024 rounds");
        assert_eq!(recs[0].value, 80.0);

        let dup = "Threefish-1024 rounds | 80\n- **threefish-1024  Rounds** | 72";
        let recs = parse_candidate_records(dup, &crypto);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].value, 80.0);

        let bp = spec("boiling-point");
        let text = "| name | value |\n|---|---|\n| phosphorus oxychloride | 106 °C |\n| tungsten | 700 |\nosmium tetroxide | ~130\nnot a record";
        let recs = parse_candidate_records(text, &bp);
        let names: Vec<_> = recs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["phosphorus oxychloride", "osmium tetroxide"]);
        assert!(parse_candidate_records("nothing useful here", &bp).is_empty());
    }

    #[test]
    fn batch_examples() {
        let bp = spec("boiling-point");
        assert_eq!(
            parse_batch("(1) 106\n(2) 80", 2, &bp).unwrap(),
            vec![valid(1, 106.0), valid(2, 80.0)]
        );
        assert_eq!(
            parse_batch("<think>(1) maybe 99?</think>\n(1) 106", 1, &bp).unwrap(),
            vec![valid(1, 106.0)]
        );
        assert_eq!(
            parse_batch("(1) 106\n(3) 80", 3, &bp).unwrap(),
            vec![valid(1, 106.0), SlotResult::missing(2), valid(3, 80.0)]
        );
    }

    #[test]
    fn partial_numbering_is_ambiguous() {
        let bp = spec("boiling-point");
        assert!(matches!(
            parse_batch("(1) 106\n80\n(3) 12", 3, &bp),
            Err(ParseError::AmbiguousAlignment(_))
        ));
        assert!(matches!(
            parse_batch("(1) 106\n(1) 107", 2, &bp),
            Err(ParseError::AmbiguousAlignment(_))
        ));
        assert!(matches!(
            parse_batch("106\n80\n12", 2, &bp),
            Err(ParseError::AmbiguousAlignment(_))
        ));
    }

    #[test]
    fn out_of_range_and_refusal() {
        let bp = spec("boiling-point");
        let got = parse_batch("(1) 9000\n(2) I cannot help with that.", 2, &bp).unwrap();
        assert_eq!(got[0].status, SlotStatus::Invalid);
        assert_eq!(got[0].value, None);
        assert_eq!(got[1].status, SlotStatus::Missing);
    }

    #[test]
    fn echoed_prefix_is_skipped() {
        let crypto = spec("crypto-parameters");
        let prompt = render_audit_prompt(&crypto, "Threefish-1024 rounds").unwrap();
        let prefix = DomainSpec::prompt_prefix(&prompt).to_string();
        let opts = ParserOptions {
            slot_prefixes: Some(vec![prefix]),
            ..ParserOptions::default()
        };
        let answer = format!("(1) {} unknown.", DomainSpec::prompt_prefix(&prompt));
        let got = parse_batch_with(&answer, 1, &crypto, &opts).unwrap();
        assert_eq!(got[0].status, SlotStatus::Missing);
        // Without the prefix the digits in the subject would be taken.
        let got = parse_batch(&answer, 1, &crypto).unwrap();
        assert_eq!(got[0], valid(1, 1024.0));
    }

    #[test]
    fn completed_template_round_trip_per_domain() {
        for d in DomainRegistry::builtin().domains() {
            let prompt = render_audit_prompt(d, "Example subject 42-B").unwrap();
            for v in [d.valid_range.lo, d.valid_range.hi, (d.valid_range.lo + d.valid_range.hi) / 2.0] {
                let v = if matches!(d.match_rule, crate::domains::MatchRule::ExactInteger) {
                    v.round()
                } else {
                    v
                };
                let answer = format!("(1) {}", prompt.replacen(VALUE_SLOT, &v.to_string(), 1));
                let got = parse_batch(&answer, 1, d).unwrap();
                assert_eq!(got[0], valid(1, v), "{}: {answer}", d.id);
            }
        }
    }

    proptest! {
        #[test]
        fn numbered_round_trip(idx in 0usize..15, frac in 0.0f64..=1.0, k in 1usize..=10) {
            let reg = DomainRegistry::builtin();
            let d = &reg.domains()[idx];
            let v = d.valid_range.lo + frac * (d.valid_range.hi - d.valid_range.lo);
            prop_assume!(d.validate_range(v));
            let text = format!("({k}) {v}");
            let got = parse_batch(&text, 10, d).unwrap();
            prop_assert_eq!(got.len(), 10);
            prop_assert_eq!(got[k - 1], valid(k, v));
        }

        #[test]
        fn always_n_slots_and_valid_in_range(text in "[ -~\n]{0,200}", n in 1usize..12) {
            let d = spec("boiling-point");
            if let Ok(slots) = parse_batch(&text, n, &d) {
                prop_assert_eq!(slots.len(), n);
                for (i, s) in slots.iter().enumerate() {
                    prop_assert_eq!(s.slot_index, i + 1);
                    match s.status {
                        SlotStatus::Valid => prop_assert!(d.validate_range(s.value.unwrap())),
                        _ => prop_assert!(s.value.is_none()),
                    }
                }
            }
            prop_assert_eq!(parse_batch(&text, n, &d), parse_batch(&text, n, &d));
        }
    }
}
