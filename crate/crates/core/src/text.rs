//! Whitespace tokenization with character offsets.

/// A whitespace-delimited token. Offsets are in characters (not bytes)
/// into the source string; `byte_*` fields allow cheap slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub char_start: usize,
    pub char_end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some((cs, bs)) = current.take() {
                tokens.push(Token {
                    char_start: cs,
                    char_end: char_idx,
                    byte_start: bs,
                    byte_end: byte_idx,
                });
            }
        } else if current.is_none() {
            current = Some((char_idx, byte_idx));
        }
        char_idx += 1;
    }
    if let Some((cs, bs)) = current {
        tokens.push(Token {
            char_start: cs,
            char_end: char_idx,
            byte_start: bs,
            byte_end: text.len(),
        });
    }
    tokens
}

/// Lowercased token with surrounding punctuation stripped. Interior
/// hyphens are kept so that `non-thermal,` normalizes to `non-thermal`.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .iter()
        .map(|t| normalize_token(&text[t.byte_start..t.byte_end]))
        .filter(|t| !t.is_empty())
        .collect()
}
