//! Language-aware token counting used for length caps and token budgets.
//!
//! Text is split on Unicode whitespace. Inside each whitespace-delimited chunk,
//! every Han, Hiragana, Katakana, Hangul, Thai or Khmer character is its own
//! token; maximal runs of any other characters form one token each.

use std::ops::Range;

/// Scripts written without spaces between words.
pub fn is_char_token_script(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0E7F      // Thai
        | 0x1780..=0x17FF    // Khmer
        | 0x19E0..=0x19FF    // Khmer symbols
        | 0x1100..=0x11FF    // Hangul Jamo
        | 0x2E80..=0x2FDF    // CJK radicals, Kangxi
        | 0x3040..=0x309F    // Hiragana
        | 0x30A0..=0x30FF    // Katakana
        | 0x3130..=0x318F    // Hangul compatibility Jamo
        | 0x31F0..=0x31FF    // Katakana phonetic extensions
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xA960..=0xA97F    // Hangul Jamo ext A
        | 0xAC00..=0xD7AF    // Hangul syllables
        | 0xD7B0..=0xD7FF    // Hangul Jamo ext B
        | 0xF900..=0xFAFF    // CJK compatibility
        | 0xFF66..=0xFF9F    // halfwidth Katakana
        | 0xFFA0..=0xFFDC    // halfwidth Hangul
        | 0x20000..=0x3134F  // CJK ext B..G
    )
}

/// Byte ranges of the tokens of `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = run_start.take() {
                spans.push(s..i);
            }
        } else if is_char_token_script(c) {
            if let Some(s) = run_start.take() {
                spans.push(s..i);
            }
            spans.push(i..i + c.len_utf8());
        } else if run_start.is_none() {
            run_start = Some(i);
        }
    }
    if let Some(s) = run_start {
        spans.push(s..text.len());
    }
    spans
}

pub fn tokens(text: &str) -> Vec<&str> {
    token_spans(text).into_iter().map(|r| &text[r]).collect()
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

/// The shortest prefix of `text` holding its first `n` tokens.
pub fn token_prefix(text: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    let spans = token_spans(text);
    match spans.get(n - 1) {
        Some(last) if n < spans.len() => &text[..last.end],
        _ => text,
    }
}

/// Truncate to at most `max_tokens` tokens. Returns the text unchanged when it
/// already fits.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    token_prefix(text, max_tokens)
}
