use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

fn strip_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut close: Option<char> = None;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match close {
            Some(end) if c == end => close = None,
            Some(_) => {}
            None if c == '<' => close = Some('>'),
            None if c == '{' && chars.peek() == Some(&'\\') => close = Some('}'),
            None => out.push(c),
        }
    }
    out
}

/// Removes every `[...]` and `(...)` span; `None` if brackets are unbalanced.
fn without_bracketed(text: &str) -> Option<String> {
    let mut out = String::new();
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth = depth.checked_sub(1)?,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    (depth == 0).then_some(out)
}

fn is_music(text: &str) -> bool {
    const NOTES: [char; 2] = ['♪', '♫'];
    text.starts_with(NOTES) || text.ends_with(NOTES)
}

/// `JOHN:` or `OLD MAN:` with nothing after the colon.
fn is_speaker_label(text: &str) -> bool {
    match text.strip_suffix(':') {
        Some(name) => {
            name.chars().any(|c| c.is_alphabetic())
                && name
                    .chars()
                    .all(|c| c.is_uppercase() || c.is_ascii_digit() || " .'-".contains(c))
        }
        None => false,
    }
}

/// Cleans a subtitle utterance, or returns `None` for cues that carry no
/// speech: bracketed sound descriptions, music lines and bare speaker labels.
pub fn normalize_utterance(text: &str) -> Option<String> {
    let stripped: String = strip_tags(text).nfd().filter(|c| !is_combining_mark(*c)).collect();
    let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() || is_music(&collapsed) || is_speaker_label(&collapsed) {
        return None;
    }
    let speech = without_bracketed(&collapsed).unwrap_or_else(|| collapsed.clone());
    if !speech.chars().any(|c| c.is_alphanumeric()) {
        return None;
    }
    Some(collapsed)
}
