//! Character classes shared by the preprocessing steps and the
//! localization rules: emoji sequences, Arabic letters and marks.

use std::sync::LazyLock;

use regex::Regex;

/// Zero width joiner.
pub const ZWJ: char = '\u{200D}';
/// Emoji presentation selector.
pub const VS16: char = '\u{FE0F}';
const VS15: char = '\u{FE0E}';
const KEYCAP: char = '\u{20E3}';

// Extended_Pictographic, condensed to contiguous blocks. Good enough for
// social-media text; a handful of non-emoji dingbats in U+2600..U+27BF are
// included.
const PICTOGRAPHIC: &[(u32, u32)] = &[
    (0x00A9, 0x00A9),
    (0x00AE, 0x00AE),
    (0x203C, 0x203C),
    (0x2049, 0x2049),
    (0x2122, 0x2122),
    (0x2139, 0x2139),
    (0x2194, 0x2199),
    (0x21A9, 0x21AA),
    (0x231A, 0x231B),
    (0x2328, 0x2328),
    (0x2388, 0x2388),
    (0x23CF, 0x23CF),
    (0x23E9, 0x23F3),
    (0x23F8, 0x23FA),
    (0x24C2, 0x24C2),
    (0x25AA, 0x25AB),
    (0x25B6, 0x25B6),
    (0x25C0, 0x25C0),
    (0x25FB, 0x25FE),
    (0x2600, 0x27BF),
    (0x2934, 0x2935),
    (0x2B05, 0x2B07),
    (0x2B1B, 0x2B1C),
    (0x2B50, 0x2B50),
    (0x2B55, 0x2B55),
    (0x3030, 0x3030),
    (0x303D, 0x303D),
    (0x3297, 0x3297),
    (0x3299, 0x3299),
    (0x1F000, 0x1F0FF),
    (0x1F10D, 0x1F10F),
    (0x1F12F, 0x1F12F),
    (0x1F16C, 0x1F171),
    (0x1F17E, 0x1F17F),
    (0x1F18E, 0x1F18E),
    (0x1F191, 0x1F19A),
    (0x1F1AD, 0x1F1E5),
    (0x1F201, 0x1F20F),
    (0x1F21A, 0x1F21A),
    (0x1F22F, 0x1F22F),
    (0x1F232, 0x1F23A),
    (0x1F23C, 0x1F23F),
    (0x1F249, 0x1F3FA),
    (0x1F400, 0x1F53D),
    (0x1F546, 0x1F64F),
    (0x1F680, 0x1F6FF),
    (0x1F774, 0x1F77F),
    (0x1F7D5, 0x1F7FF),
    (0x1F80C, 0x1F80F),
    (0x1F848, 0x1F84F),
    (0x1F85A, 0x1F85F),
    (0x1F888, 0x1F88F),
    (0x1F8AE, 0x1F8FF),
    (0x1F90C, 0x1F93A),
    (0x1F93C, 0x1F945),
    (0x1F947, 0x1FAFF),
    (0x1FC00, 0x1FFFD),
];

fn in_ranges(c: char, ranges: &[(u32, u32)]) -> bool {
    let cp = c as u32;
    ranges
        .binary_search_by(|&(lo, hi)| {
            if hi < cp {
                std::cmp::Ordering::Less
            } else if lo > cp {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
        .is_ok()
}

pub fn is_pictographic(c: char) -> bool {
    in_ranges(c, PICTOGRAPHIC)
}

pub fn is_skin_tone(c: char) -> bool {
    ('\u{1F3FB}'..='\u{1F3FF}').contains(&c)
}

pub fn is_regional_indicator(c: char) -> bool {
    ('\u{1F1E6}'..='\u{1F1FF}').contains(&c)
}

fn is_tag(c: char) -> bool {
    ('\u{E0020}'..='\u{E007F}').contains(&c)
}

fn is_keycap_base(c: char) -> bool {
    c.is_ascii_digit() || c == '#' || c == '*'
}

/// Length in chars of the emoji sequence starting at `chars[i]`, if any.
///
/// Recognizes keycaps, flag pairs, modifier and tag sequences, and ZWJ
/// chains of those.
pub fn emoji_len(chars: &[char], i: usize) -> Option<usize> {
    let c = *chars.get(i)?;

    if is_keycap_base(c) {
        let mut j = i + 1;
        if chars.get(j) == Some(&VS16) {
            j += 1;
        }
        return (chars.get(j) == Some(&KEYCAP)).then_some(j + 1 - i);
    }

    if is_regional_indicator(c) {
        let n = if chars.get(i + 1).copied().is_some_and(is_regional_indicator) {
            2
        } else {
            1
        };
        return Some(n);
    }

    let mut j = element_end(chars, i)?;
    while chars.get(j) == Some(&ZWJ) {
        match element_end(chars, j + 1) {
            Some(end) => j = end,
            None => break,
        }
    }
    Some(j - i)
}

// One pictograph (or bare modifier) plus its trailing selectors.
fn element_end(chars: &[char], i: usize) -> Option<usize> {
    let c = *chars.get(i)?;
    if !(is_pictographic(c) || is_skin_tone(c)) {
        return None;
    }
    let mut j = i + 1;
    if matches!(chars.get(j), Some(&VS16) | Some(&VS15)) {
        j += 1;
    }
    if chars.get(j).copied().is_some_and(is_skin_tone) {
        j += 1;
    }
    while chars.get(j).copied().is_some_and(is_tag) {
        j += 1;
    }
    Some(j)
}

/// Splits `text` into emoji sequences, returned as owned strings in order.
pub fn emoji_sequences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match emoji_len(&chars, i) {
            Some(n) => {
                out.push(chars[i..i + n].iter().collect());
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Code points that belong to some emoji sequence in `text`.
pub fn emoji_mask(chars: &[char]) -> Vec<bool> {
    let mut mask = vec![false; chars.len()];
    let mut i = 0;
    while i < chars.len() {
        match emoji_len(chars, i) {
            Some(n) => {
                mask[i..i + n].iter_mut().for_each(|m| *m = true);
                i += n;
            }
            None => i += 1,
        }
    }
    mask
}

/// Arabic tashkeel/harakat and Quranic annotation marks removed by default.
pub const DEFAULT_DIACRITICS: &[(u32, u32)] = &[
    (0x0610, 0x061A),
    (0x064B, 0x065F),
    (0x0670, 0x0670),
    (0x06D6, 0x06ED),
];

pub fn is_default_diacritic(c: char) -> bool {
    in_ranges(c, DEFAULT_DIACRITICS)
}

const ARABIC_LETTERS: &[(u32, u32)] = &[
    (0x0620, 0x064A),
    (0x066E, 0x066F),
    (0x0671, 0x06D3),
    (0x06D5, 0x06D5),
    (0x06EE, 0x06EF),
    (0x06FA, 0x06FF),
    (0x0750, 0x077F),
    (0x08A0, 0x08C9),
    (0xFB50, 0xFDFF),
    (0xFE70, 0xFEFC),
];

/// Arabic-script base letters (not marks, not digits).
pub fn is_arabic_letter(c: char) -> bool {
    in_ranges(c, ARABIC_LETTERS)
}

static MARK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{M}$").unwrap());

/// Combining mark (general category M).
pub fn is_mark(c: char) -> bool {
    let mut buf = [0u8; 4];
    MARK.is_match(c.encode_utf8(&mut buf))
}

/// Characters that make up a "word" for whole-token matching.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || is_default_diacritic(c) || is_mark(c)
}
