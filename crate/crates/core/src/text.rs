//! Character-offset helpers.
//!
//! Every span in this crate counts Unicode scalar values, not bytes, so the
//! helpers here translate between the two.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offsets of every char boundary in a string, including the end.
///
/// `offsets[i]` is the byte index of the `i`-th char; `offsets[char_len]`
/// is `s.len()`.
#[derive(Debug, Clone)]
pub struct CharIndex {
    offsets: Vec<usize>,
}

impl CharIndex {
    pub fn new(s: &str) -> Self {
        let mut offsets: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
        offsets.push(s.len());
        Self { offsets }
    }

    pub fn char_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn byte_offset(&self, char_idx: usize) -> usize {
        self.offsets[char_idx]
    }

    /// Slice `s` by char range. `s` must be the string this index was built from.
    pub fn slice<'a>(&self, s: &'a str, start: usize, end: usize) -> &'a str {
        &s[self.offsets[start]..self.offsets[end]]
    }
}

/// Substring by char range; panics if the range is out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    CharIndex::new(s).slice(s, start, end)
}

/// Truncate to at most `max_chars` chars.
pub fn truncate_chars(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((b, _)) => &s[..b],
        None => s,
    }
}

/// Lowercase a single char when that does not change the char count.
///
/// Keeps matching positions aligned with the original text.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Collapse every whitespace run to a single space and trim.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
