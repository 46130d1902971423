//! Structural parsing of reasoning trajectories: step segmentation, discourse
//! markers, and the anchor fingerprints the rewrite validator compares.
//!
//! Offsets are byte offsets into the trajectory, always on `char` boundaries.
//! Step spans tile the trajectory: every byte outside a span is whitespace, so
//! concatenating the inter-span gaps and the spans reproduces the input
//! exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Discourse-marker categories tracked during segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Transition,
    Verification,
    Conclusion,
}

/// Marker and enumerator word lists. Matching is case-insensitive on word
/// boundaries: a phrase that starts or ends with an alphanumeric character
/// must not be flanked by another alphanumeric character on that side.
///
/// Numbered step headings ("Step 3", case-insensitive, any digit count) are a
/// built-in enumerator pattern in addition to the literal `enumerators` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLexicons {
    pub transition: Vec<String>,
    pub verification: Vec<String>,
    pub conclusion: Vec<String>,
    pub enumerators: Vec<String>,
}

impl Default for MarkerLexicons {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        MarkerLexicons {
            transition: list(&["wait", "alternatively", "hmm"]),
            verification: list(&["let me check", "verify", "double-check"]),
            conclusion: list(&["therefore", "so the answer", "final answer"]),
            enumerators: list(&["first,", "next,"]),
        }
    }
}

impl MarkerLexicons {
    /// The three marker lists must not share a phrase (case-insensitive).
    pub fn validate(&self) -> Result<(), String> {
        let mut seen: BTreeMap<String, MarkerKind> = BTreeMap::new();
        for (kind, phrases) in self.marker_lists() {
            for p in phrases {
                if p.trim().is_empty() {
                    return Err(format!("{kind:?} lexicon contains an empty phrase"));
                }
                if let Some(prev) = seen.insert(p.to_lowercase(), kind) {
                    if prev != kind {
                        return Err(format!(
                            "marker \"{p}\" appears in both {prev:?} and {kind:?} lexicons"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn marker_lists(&self) -> [(MarkerKind, &[String]); 3] {
        [
            (MarkerKind::Transition, &self.transition),
            (MarkerKind::Verification, &self.verification),
            (MarkerKind::Conclusion, &self.conclusion),
        ]
    }
}

/// Step spans plus every marker occurrence, both in trajectory order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSegmentation {
    /// Half-open byte spans `(start, end)`, non-overlapping, increasing, each
    /// beginning and ending on non-whitespace.
    pub steps: Vec<(usize, usize)>,
    /// `(byte_offset, kind)` of every marker hit, sorted by offset.
    pub marker_hits: Vec<(usize, MarkerKind)>,
}

/// Structure summary used to compare a trajectory against its rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFingerprint {
    pub step_count: usize,
    /// Counts for all three kinds, zeros included.
    pub marker_counts: BTreeMap<MarkerKind, u64>,
    /// Normalized anchors (numbers, equation fragments, variable names),
    /// deduplicated in first-occurrence order.
    pub anchors: Vec<String>,
}

/// Segment with the default lexicons.
pub fn segment(trajectory: &str) -> StepSegmentation {
    segment_with(trajectory, &MarkerLexicons::default())
}

/// Split a trajectory into steps.
///
/// Boundaries fall at blank lines and at sentence starts that begin with a
/// transition-marker word or an enumerator. A sentence start is the first
/// non-whitespace position after `.`/`!`/`?` followed by whitespace, or after
/// a newline. Whitespace-only input yields zero steps.
pub fn segment_with(trajectory: &str, lexicons: &MarkerLexicons) -> StepSegmentation {
    let marker_hits = collect_marker_hits(trajectory, lexicons);
    let mut steps = Vec::new();
    for (block_start, block_end) in paragraph_blocks(trajectory) {
        let Some((start, end)) = trim_span(trajectory, block_start, block_end) else {
            continue;
        };
        let mut cuts = vec![start];
        for s in sentence_starts(trajectory, start, end) {
            if s > start && begins_step(trajectory, s, lexicons) {
                cuts.push(s);
            }
        }
        for (k, &cut) in cuts.iter().enumerate() {
            let lim = if k + 1 < cuts.len() { cuts[k + 1] } else { end };
            if let Some(span) = trim_span(trajectory, cut, lim) {
                steps.push(span);
            }
        }
    }
    StepSegmentation { steps, marker_hits }
}

/// Fingerprint with the default lexicons.
pub fn fingerprint(trajectory: &str) -> StructuralFingerprint {
    fingerprint_with(trajectory, &MarkerLexicons::default())
}

pub fn fingerprint_with(trajectory: &str, lexicons: &MarkerLexicons) -> StructuralFingerprint {
    let seg = segment_with(trajectory, lexicons);
    let mut marker_counts: BTreeMap<MarkerKind, u64> = BTreeMap::new();
    for kind in [MarkerKind::Transition, MarkerKind::Verification, MarkerKind::Conclusion] {
        marker_counts.insert(kind, 0);
    }
    for (_, kind) in &seg.marker_hits {
        *marker_counts.get_mut(kind).expect("all kinds present") += 1;
    }
    StructuralFingerprint {
        step_count: seg.steps.len(),
        marker_counts,
        anchors: anchor_sequence(trajectory),
    }
}

/// Deduplicated anchors in first-occurrence order (what a fingerprint holds).
pub fn anchor_sequence(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    anchor_occurrences(text)
        .into_iter()
        .filter_map(|(_, v)| seen.insert(v.clone()).then_some(v))
        .collect()
}

/// Every anchor occurrence as `(byte_offset, normalized_value)`, in order,
/// duplicates included.
///
/// Extraction works on whitespace tokens, edge-trimmed of characters that are
/// neither alphanumeric nor `=`:
/// - a token containing `=` (and at least one alphanumeric) is one anchor,
///   lowercased with digit-group commas stripped; if everything after its last
///   `=` is a bare number, that number is a second anchor ("x=4" carries "4");
/// - any other token contributes each maximal ASCII digit run, with `.`/`,`
///   kept when flanked by digits (commas then stripped: "1,024" → "1024");
/// - a single letter flanked by an operator (`+-*/^=<>`), either inside the
///   token or via an adjacent token, is an anchor, lowercased.
pub fn anchor_occurrences(text: &str) -> Vec<(usize, String)> {
    const OPS: &[char] = &['+', '-', '*', '/', '^', '=', '<', '>'];
    let tokens = whitespace_tokens(text);
    // rank orders same-position anchors: equation, then its rhs, then runs/vars
    let mut found: Vec<(usize, u8, String)> = Vec::new();

    for (t, &(tok_start, tok)) in tokens.iter().enumerate() {
        let Some((core_off, core)) = trim_token(tok) else { continue };
        let abs = tok_start + core_off;

        if core.contains('=') && core.chars().any(|c| c.is_alphanumeric()) {
            found.push((abs, 0, normalize_math(core)));
            let eq = core.rfind('=').expect("checked above");
            let rhs = &core[eq + 1..];
            if is_numeric_literal(rhs) {
                found.push((abs + eq + 1, 1, strip_number_commas(rhs)));
            }
            continue;
        }

        for (off, run) in digit_runs(core) {
            found.push((abs + off, 2, strip_number_commas(run)));
        }

        let single = {
            let mut chars = core.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_alphabetic() => Some(c),
                _ => None,
            }
        };
        if let Some(c) = single {
            let near_op = tok.contains(OPS)
                || t.checked_sub(1)
                    .and_then(|j| tokens.get(j))
                    .is_some_and(|(_, p)| p.ends_with(OPS))
                || tokens.get(t + 1).is_some_and(|(_, n)| n.starts_with(OPS));
            if near_op {
                found.push((abs, 3, c.to_lowercase().to_string()));
            }
        } else {
            // Single letters inside an operator expression, e.g. "x" in "x+1".
            let chars: Vec<(usize, char)> = core.char_indices().collect();
            for (i, &(off, c)) in chars.iter().enumerate() {
                if !c.is_alphabetic() {
                    continue;
                }
                let prev = i.checked_sub(1).map(|j| chars[j].1);
                let next = chars.get(i + 1).map(|x| x.1);
                let lone = !prev.is_some_and(|p| p.is_alphanumeric())
                    && !next.is_some_and(|n| n.is_alphanumeric());
                let beside_op =
                    prev.is_some_and(|p| OPS.contains(&p)) || next.is_some_and(|n| OPS.contains(&n));
                if lone && beside_op {
                    found.push((abs + off, 3, c.to_lowercase().to_string()));
                }
            }
        }
    }

    found.sort_by_key(|a| (a.0, a.1));
    found.into_iter().map(|(pos, _, v)| (pos, v)).collect()
}

/// Result of pulling a `<think>…</think>` block off a model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkSplit {
    pub thinking: String,
    pub answer: String,
    /// Set when an opening tag has no matching close; `answer` is then empty
    /// and `thinking` holds everything after the open tag.
    pub degenerate: bool,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Split a response at its first `<think>…</think>` pair.
///
/// No tags: thinking is empty and the whole text is the answer. A later pair
/// after the first stays inside the answer verbatim.
pub fn split_think_answer(response: &str) -> ThinkSplit {
    let Some(open) = response.find(THINK_OPEN) else {
        return ThinkSplit {
            thinking: String::new(),
            answer: response.to_string(),
            degenerate: false,
        };
    };
    let body = open + THINK_OPEN.len();
    match response[body..].find(THINK_CLOSE) {
        Some(rel) => ThinkSplit {
            thinking: response[body..body + rel].to_string(),
            answer: response[body + rel + THINK_CLOSE.len()..].to_string(),
            degenerate: false,
        },
        None => ThinkSplit {
            thinking: response[body..].to_string(),
            answer: String::new(),
            degenerate: true,
        },
    }
}

// ---- internals -------------------------------------------------------------

/// Maximal groups of non-blank lines as raw byte ranges.
fn paragraph_blocks(text: &str) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    let mut open: Option<usize> = None;
    for line in text.split_inclusive('\n') {
        let start = pos;
        pos += line.len();
        if line.trim().is_empty() {
            if let Some(s) = open.take() {
                blocks.push((s, start));
            }
        } else if open.is_none() {
            open = Some(start);
        }
    }
    if let Some(s) = open {
        blocks.push((s, text.len()));
    }
    blocks
}

/// Shrink `[a, b)` to its non-whitespace content, if any.
fn trim_span(text: &str, a: usize, b: usize) -> Option<(usize, usize)> {
    let slice = &text[a..b];
    let start = slice.char_indices().find(|(_, c)| !c.is_whitespace())?.0;
    let (last, c) = slice.char_indices().rev().find(|(_, c)| !c.is_whitespace())?;
    Some((a + start, a + last + c.len_utf8()))
}

/// First non-whitespace positions after sentence punctuation or a newline,
/// strictly inside `(start, end)`.
fn sentence_starts(text: &str, start: usize, end: usize) -> Vec<usize> {
    let slice = &text[start..end];
    let chars: Vec<(usize, char)> = slice.char_indices().collect();
    let mut out = Vec::new();
    for (i, &(_, c)) in chars.iter().enumerate() {
        let is_punct = matches!(c, '.' | '!' | '?');
        if !is_punct && c != '\n' {
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        // Punctuation needs at least one whitespace to close the sentence
        // ("3.14" is not a boundary); a newline is a boundary on its own.
        if is_punct && j == i + 1 {
            continue;
        }
        if j < chars.len() {
            out.push(start + chars[j].0);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Does a new step begin at `pos` (a transition word or an enumerator)?
fn begins_step(text: &str, pos: usize, lexicons: &MarkerLexicons) -> bool {
    for w in &lexicons.transition {
        if phrase_at(text, pos, w) {
            return true;
        }
    }
    for e in &lexicons.enumerators {
        if phrase_at(text, pos, e) {
            return true;
        }
    }
    step_heading_at(text, pos)
}

/// "Step" + whitespace + digit, case-insensitive, at `pos`.
fn step_heading_at(text: &str, pos: usize) -> bool {
    if !phrase_at(text, pos, "step") {
        return false;
    }
    let rest = &text[pos + 4..];
    let after_ws = rest.trim_start_matches(|c: char| c.is_whitespace() && c != '\n');
    after_ws.len() < rest.len() && after_ws.starts_with(|c: char| c.is_ascii_digit())
}

/// Case-insensitive phrase match at an exact position, word-bounded.
fn phrase_at(text: &str, pos: usize, phrase: &str) -> bool {
    let Some(window) = text.get(pos..pos + phrase.len()) else {
        return false;
    };
    if !window.eq_ignore_ascii_case(phrase) {
        return false;
    }
    boundary_ok(text, pos, phrase)
}

fn boundary_ok(text: &str, pos: usize, phrase: &str) -> bool {
    let starts_alnum = phrase.chars().next().is_some_and(|c| c.is_alphanumeric());
    let ends_alnum = phrase.chars().next_back().is_some_and(|c| c.is_alphanumeric());
    if starts_alnum {
        if let Some(prev) = text[..pos].chars().next_back() {
            if prev.is_alphanumeric() {
                return false;
            }
        }
    }
    if ends_alnum {
        if let Some(next) = text[pos + phrase.len()..].chars().next() {
            if next.is_alphanumeric() {
                return false;
            }
        }
    }
    true
}

/// All word-bounded, case-insensitive occurrences of `phrase`.
fn phrase_hits(text: &str, phrase: &str) -> Vec<usize> {
    let mut out = Vec::new();
    if phrase.is_empty() || phrase.len() > text.len() {
        return out;
    }
    for i in 0..=text.len() - phrase.len() {
        if text.is_char_boundary(i) && phrase_at(text, i, phrase) {
            out.push(i);
        }
    }
    out
}

fn collect_marker_hits(text: &str, lexicons: &MarkerLexicons) -> Vec<(usize, MarkerKind)> {
    let mut hits = Vec::new();
    for (kind, phrases) in lexicons.marker_lists() {
        for phrase in phrases {
            for pos in phrase_hits(text, phrase) {
                hits.push((pos, kind));
            }
        }
    }
    hits.sort_by_key(|a| (a.0, a.1));
    hits
}

fn whitespace_tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

/// Strip edge characters that are neither alphanumeric nor `=`.
fn trim_token(token: &str) -> Option<(usize, &str)> {
    let keep = |c: char| c.is_alphanumeric() || c == '=';
    let start = token.char_indices().find(|&(_, c)| keep(c))?.0;
    let (last, c) = token.char_indices().rev().find(|&(_, c)| keep(c))?;
    Some((start, &token[start..last + c.len_utf8()]))
}

fn normalize_math(s: &str) -> String {
    strip_number_commas(&s.to_lowercase())
}

/// Drop commas that sit between two ASCII digits ("1,024" → "1024").
pub(crate) fn strip_number_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        let grouped = c == ','
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit();
        if !grouped {
            out.push(c);
        }
    }
    out
}

/// Digits only, with `.`/`,` allowed strictly between digits.
fn is_numeric_literal(s: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    let chars: Vec<char> = s.chars().collect();
    let mut any_digit = false;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_digit() {
            any_digit = true;
        } else if c == '.' || c == ',' {
            let flanked = i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_ascii_digit()
                && chars[i + 1].is_ascii_digit();
            if !flanked {
                return false;
            }
        } else {
            return false;
        }
    }
    any_digit
}

/// Maximal ASCII digit runs within `s`, separators included when flanked.
fn digit_runs(s: &str) -> Vec<(usize, &str)> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].1.is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() {
            let c = chars[i].1;
            if c.is_ascii_digit() {
                i += 1;
            } else if (c == '.' || c == ',')
                && i + 1 < chars.len()
                && chars[i + 1].1.is_ascii_digit()
            {
                i += 2;
            } else {
                break;
            }
        }
        let a = chars[start].0;
        let b = chars
            .get(i)
            .map(|&(off, _)| off)
            .unwrap_or(s.len());
        out.push((a, &s[a..b]));
    }
    out
}
