//! Flesch–Kincaid grade level with a fixed, documented tokenizer.
//!
//! Sentences end at a run of `.`, `!` or `?` followed by whitespace or the
//! end of the text; trailing text without a terminator counts as one more
//! sentence. Words are whitespace-separated with leading and trailing
//! punctuation stripped. Syllables are maximal vowel groups (`aeiouy`), minus
//! one for a final silent `e` unless the word ends in `le`, at least one per
//! word.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReadabilityError {
    #[error("text has no words")]
    InvalidText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextCounts {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
}

/// Splits text into sentences, keeping each sentence's terminator.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1].1, '.' | '!' | '?') {
                j += 1;
            }
            let at_boundary = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
            if at_boundary {
                let end = chars.get(j + 1).map_or(text.len(), |c| c.0);
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let vowel = |c: char| "aeiouy".contains(c);
    let mut groups: usize = 0;
    let mut prev = false;
    for &c in &w {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let ends_le = w.len() >= 2 && w[w.len() - 2] == 'l' && w[w.len() - 1] == 'e';
    if w.last() == Some(&'e') && !ends_le {
        groups = groups.saturating_sub(1);
    }
    groups.max(1)
}

pub fn counts(text: &str) -> TextCounts {
    let ws = words(text);
    TextCounts {
        sentences: sentences(text).iter().filter(|s| !words(s).is_empty()).count(),
        syllables: ws.iter().map(|w| syllables(w)).sum(),
        words: ws.len(),
    }
}

pub fn grade_from_counts(c: TextCounts) -> f64 {
    0.39 * (c.words as f64 / c.sentences as f64) + 11.8 * (c.syllables as f64 / c.words as f64) - 15.59
}

pub fn readability_grade(text: &str) -> Result<f64, ReadabilityError> {
    let c = counts(text);
    if c.words == 0 || c.sentences == 0 {
        return Err(ReadabilityError::InvalidText);
    }
    Ok(grade_from_counts(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn cat_on_the_mat() {
        let c = counts("The cat sat on the mat.");
        assert_eq!(c, TextCounts { sentences: 1, words: 6, syllables: 6 });
        assert!(close(readability_grade("The cat sat on the mat.").unwrap(), -1.45));
    }

    #[test]
    fn single_word_sentence() {
        // 0.39 * 1 + 11.8 * 1 - 15.59
        let g = readability_grade("Go.").unwrap();
        assert!(close(g, 0.39 + 11.8 - 15.59), "{g}");
        assert!(close(g, -3.40));
    }

    #[test]
    fn duplicated_text_has_same_grade() {
        let one = "Mary sends a note to Sita. The attacker reads it!";
        let two = format!("{one} {one}");
        assert!(close(readability_grade(one).unwrap(), readability_grade(&two).unwrap()));
    }

    #[test]
    fn syllable_heuristic() {
        for (w, n) in [
            ("the", 1),
            ("cat", 1),
            ("table", 2),
            ("make", 1),
            ("encryption", 3),
            ("rhythm", 1),
            ("queue", 1),
            ("anymore", 3),
            ("2024", 1),
            ("Hashing,", 2),
        ] {
            assert_eq!(syllables(w), n, "{w}");
        }
    }

    #[test]
    fn tokenizer_edges() {
        assert_eq!(sentences("Wait... what?! Yes"), vec!["Wait...", "what?!", "Yes"]);
        assert_eq!(sentences("Pi is 3.14 today."), vec!["Pi is 3.14 today."]);
        assert_eq!(words("  \"Hi,\" she said -- ok. "), vec!["Hi", "she", "said", "ok"]);
        assert_eq!(readability_grade("   "), Err(ReadabilityError::InvalidText));
        assert_eq!(readability_grade("?!"), Err(ReadabilityError::InvalidText));
    }

    proptest! {
        #[test]
        fn duplication_invariance(ws in proptest::collection::vec("[a-z]{1,9}", 1..12), n in 1usize..4) {
            let sentence = format!("{}.", ws.join(" "));
            let text = vec![sentence.clone(); n].join(" ");
            prop_assert!(close(readability_grade(&sentence).unwrap(), readability_grade(&text).unwrap()));
        }

        #[test]
        fn longer_sentences_score_higher(ws in proptest::collection::vec("[a-z]{1,9}", 1..12)) {
            // Doubling each sentence's words keeps syllables per word fixed.
            let short = format!("{}.", ws.join(" "));
            let long = format!("{} {}.", ws.join(" "), ws.join(" "));
            prop_assert!(readability_grade(&long).unwrap() > readability_grade(&short).unwrap());
        }
    }
}
