//! Name normalization shared by utterance classification and reply parsing.

/// Lowercases, maps `_` to a space, drops punctuation (keeping `.`, `-` and
/// `,` only between digits) and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let mapped = if c.is_alphanumeric() {
            Some(c)
        } else if c == '_' || c.is_whitespace() {
            Some(' ')
        } else if c == '\'' {
            None
        } else {
            let digit_before = i > 0 && chars[i - 1].is_ascii_digit();
            let digit_after = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if (c == '.' && digit_before && digit_after) || (c == '-' && digit_after) {
                Some(c)
            } else {
                Some(' ')
            }
        };
        if let Some(m) = mapped {
            for l in m.to_lowercase() {
                out.push(l);
            }
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn same_name(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

/// Byte offset of the first whole-word occurrence of `needle` in `haystack`.
/// Both arguments must already be normalized.
pub fn find_phrase(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let bytes = haystack.as_bytes();
    let mut start = 0;
    while let Some(rel) = haystack[start..].find(needle) {
        let at = start + rel;
        let end = at + needle.len();
        let left_ok = at == 0 || bytes[at - 1] == b' ';
        let right_ok = end == haystack.len() || bytes[end] == b' ';
        if left_ok && right_ok {
            return Some(at);
        }
        start = at + 1;
        while !haystack.is_char_boundary(start) {
            start += 1;
        }
    }
    None
}
