//! Text normalization shared by uniqueness checks and answer matching.

/// Trims, collapses internal whitespace runs to a single space and
/// case-folds. Only used for comparisons; displayed text keeps its
/// original form.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Case-insensitive, whitespace-normalized equality.
pub fn same_text(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

/// Joins concept texts the way prompts and prior strings list them.
pub fn join_list<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Whether `phrase` occurs in `text` as whole words. Both sides are
/// expected to be normalized already.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let boundary = |c: Option<char>| c.map_or(true, |c| !c.is_alphanumeric());
    text.match_indices(phrase).any(|(i, _)| {
        boundary(text[..i].chars().next_back()) && boundary(text[i + phrase.len()..].chars().next())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_needs_word_boundaries() {
        assert!(contains_phrase("answer is b", "b"));
        assert!(!contains_phrase("answer is b", "a"));
        assert!(contains_phrase("it is a crested auklet.", "crested auklet"));
        assert!(!contains_phrase("auklets", "auklet"));
        assert!(!contains_phrase("x", ""));
    }

    #[test]
    fn collapses_and_folds() {
        assert_eq!(normalize("  Black \t Footed\nAlbatross "), "black footed albatross");
        assert_eq!(normalize(""), "");
        assert!(same_text("Yellowthroat", " yellowTHROAT"));
    }
}
