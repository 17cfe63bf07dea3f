/// Lowercases, splits on whitespace, and splits ASCII punctuation into
/// single-character tokens. Apostrophes and hyphens inside a word are kept
/// (`don't`, `guest-house`) so common contractions stay one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let inner = i > 0
                && i + 1 < chars.len()
                && (c == '\'' || c == '-')
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_ascii_punctuation() && !inner {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Canonical text of a value or utterance: tokens joined by one space.
pub fn canonical(text: &str) -> String {
    tokenize(text).join(" ")
}
