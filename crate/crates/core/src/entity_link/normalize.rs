use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Matching key for a title: NFKD with combining marks removed, lowercase,
/// punctuation turned into spaces, whitespace collapsed, and a trailing
/// `(YYYY)` dropped. The map is idempotent.
pub fn normalize_title(title: &str) -> String {
    let stripped = strip_trailing_year(title.trim());
    let mut out = String::with_capacity(stripped.len());
    let mut pending_space = false;
    for c in stripped.nfkd().filter(|c| !is_combining_mark(*c)) {
        for c in c.to_lowercase() {
            if c.is_alphanumeric() {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(c);
            } else {
                pending_space = true;
            }
        }
    }
    out
}

/// Whitespace tokens of the normalized title.
pub fn tokenize(title: &str) -> Vec<String> {
    normalize_title(title).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

fn strip_trailing_year(s: &str) -> &str {
    let b = s.as_bytes();
    let n = b.len();
    if n >= 6
        && b[n - 1] == b')'
        && b[n - 6] == b'('
        && b[n - 5..n - 1].iter().all(u8::is_ascii_digit)
    {
        s[..n - 6].trim_end()
    } else {
        s
    }
}
