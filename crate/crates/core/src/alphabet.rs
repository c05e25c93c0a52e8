//! The 62-character alphabet and its fixed index mapping.
//!
//! Indexing is total and fixed: `'A'..='Z'` map to `0..=25`, `'a'..='z'` to
//! `26..=51` and `'0'..='9'` to `52..=61`. Everything downstream (overlap
//! labels, attribute layouts) relies on this ordering.

use crate::error::{Error, Result};

/// Number of characters in the alphabet.
pub const ALPHABET_SIZE: usize = 62;

/// Index of a character in the alphabet, if it belongs to it.
pub fn char_index(c: char) -> Option<usize> {
    match c {
        'A'..='Z' => Some(c as usize - 'A' as usize),
        'a'..='z' => Some(26 + c as usize - 'a' as usize),
        '0'..='9' => Some(52 + c as usize - '0' as usize),
        _ => None,
    }
}

/// Like [`char_index`] but fails with [`Error::OutOfAlphabet`].
pub fn char_index_checked(c: char) -> Result<usize> {
    char_index(c).ok_or(Error::OutOfAlphabet(c))
}

/// Inverse of [`char_index`].
pub fn index_char(i: usize) -> Option<char> {
    match i {
        0..=25 => Some((b'A' + i as u8) as char),
        26..=51 => Some((b'a' + (i - 26) as u8) as char),
        52..=61 => Some((b'0' + (i - 52) as u8) as char),
        _ => None,
    }
}

/// True if every character of `text` is in the alphabet.
pub fn is_valid_word(text: &str) -> bool {
    !text.is_empty() && text.chars().all(|c| char_index(c).is_some())
}

/// Validate a word, reporting the first offending character.
pub fn validate_word(text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::InvalidInput("empty word".into()));
    }
    for c in text.chars() {
        char_index_checked(c)?;
    }
    Ok(())
}

/// Case folding used for transcription matching and attribute targets:
/// uppercase letters map onto their lowercase slots, digits are unchanged.
pub fn fold_case(text: &str) -> String {
    text.chars().map(|c| c.to_ascii_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_total_and_fixed() {
        assert_eq!(char_index('A'), Some(0));
        assert_eq!(char_index('Z'), Some(25));
        assert_eq!(char_index('a'), Some(26));
        assert_eq!(char_index('z'), Some(51));
        assert_eq!(char_index('0'), Some(52));
        assert_eq!(char_index('9'), Some(61));
        assert_eq!(char_index('€'), None);
        assert_eq!(char_index(' '), None);
    }

    #[test]
    fn index_roundtrip() {
        for i in 0..ALPHABET_SIZE {
            let c = index_char(i).unwrap();
            assert_eq!(char_index(c), Some(i));
        }
        assert_eq!(index_char(ALPHABET_SIZE), None);
    }

    #[test]
    fn word_validation() {
        assert!(is_valid_word("Sun42"));
        assert!(!is_valid_word(""));
        assert!(!is_valid_word("na-ive"));
        assert!(matches!(
            validate_word("a€b").unwrap_err(),
            Error::OutOfAlphabet('€')
        ));
    }

    #[test]
    fn case_folding() {
        assert_eq!(fold_case("SuN07"), "sun07");
    }
}
