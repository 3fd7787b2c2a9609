//! Suffix-stripping stemmer driven by the shipped Porter rule table.
//!
//! The table-driven steps (1a, 1b, 2, 3, 4) come from `data/porter_rules_v1.txt`.
//! The step-1b cleanup, 1c, 5a and 5b are procedural and live here.

use std::sync::OnceLock;

pub(crate) const RULES_SOURCE: &str = include_str!("../../data/porter_rules_v1.txt");

/// Upper bound on re-stemming passes; the stemmer never lengthens a word
/// beyond its input, so a fixpoint is reached well before this.
const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Condition {
    Always,
    MeasureAbove0,
    MeasureAbove1,
    ContainsVowel,
    ContainsVowelThenCleanup,
    MeasureAbove1EndsST,
}

#[derive(Debug, Clone)]
struct Rule {
    suffix: String,
    replacement: String,
    condition: Condition,
}

#[derive(Debug, Default)]
struct RuleTable {
    step1a: Vec<Rule>,
    step1b: Vec<Rule>,
    step2: Vec<Rule>,
    step3: Vec<Rule>,
    step4: Vec<Rule>,
}

fn parse_rules(source: &str) -> RuleTable {
    let mut table = RuleTable::default();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(parts.len(), 4, "malformed stemmer rule on line {}", lineno + 1);
        let condition = match parts[3] {
            "always" => Condition::Always,
            "m>0" => Condition::MeasureAbove0,
            "m>1" => Condition::MeasureAbove1,
            "*v*" => Condition::ContainsVowel,
            "*v*+" => Condition::ContainsVowelThenCleanup,
            "m>1&st" => Condition::MeasureAbove1EndsST,
            other => panic!("unknown stemmer condition {other:?} on line {}", lineno + 1),
        };
        let rule = Rule {
            suffix: parts[1].to_string(),
            replacement: if parts[2] == "-" { String::new() } else { parts[2].to_string() },
            condition,
        };
        let step = match parts[0] {
            "1a" => &mut table.step1a,
            "1b" => &mut table.step1b,
            "2" => &mut table.step2,
            "3" => &mut table.step3,
            "4" => &mut table.step4,
            other => panic!("unknown stemmer step {other:?} on line {}", lineno + 1),
        };
        step.push(rule);
    }
    for step in [
        &mut table.step1a,
        &mut table.step1b,
        &mut table.step2,
        &mut table.step3,
        &mut table.step4,
    ] {
        // Longest suffix first; stable so file order breaks equal lengths.
        step.sort_by_key(|r| std::cmp::Reverse(r.suffix.len()));
    }
    table
}

fn rules() -> &'static RuleTable {
    static TABLE: OnceLock<RuleTable> = OnceLock::new();
    TABLE.get_or_init(|| parse_rules(RULES_SOURCE))
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of VC sequences in `w`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut i = 0;
    let n = w.len();
    while i < n && is_consonant(w, i) {
        i += 1;
    }
    loop {
        while i < n && !is_consonant(w, i) {
            i += 1;
        }
        if i >= n {
            return m;
        }
        while i < n && is_consonant(w, i) {
            i += 1;
        }
        m += 1;
        if i >= n {
            return m;
        }
    }
}

fn contains_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// consonant-vowel-consonant ending where the final consonant is not w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn holds(condition: Condition, stem: &[u8]) -> bool {
    match condition {
        Condition::Always => true,
        Condition::MeasureAbove0 => measure(stem) > 0,
        Condition::MeasureAbove1 => measure(stem) > 1,
        Condition::ContainsVowel | Condition::ContainsVowelThenCleanup => contains_vowel(stem),
        Condition::MeasureAbove1EndsST => {
            measure(stem) > 1 && matches!(stem.last(), Some(b's') | Some(b't'))
        }
    }
}

/// Applies the longest matching rule of one step. Returns the condition of
/// the rule that fired, if any.
fn apply_step(word: &mut Vec<u8>, step: &[Rule]) -> Option<Condition> {
    let rule = step.iter().find(|r| word.ends_with(r.suffix.as_bytes()))?;
    let stem_len = word.len() - rule.suffix.len();
    if !holds(rule.condition, &word[..stem_len]) {
        return None;
    }
    word.truncate(stem_len);
    word.extend_from_slice(rule.replacement.as_bytes());
    Some(rule.condition)
}

fn step1b_cleanup(word: &mut Vec<u8>) {
    if word.ends_with(b"at") || word.ends_with(b"bl") || word.ends_with(b"iz") {
        word.push(b'e');
    } else if ends_double_consonant(word) && !matches!(word.last(), Some(b'l' | b's' | b'z')) {
        word.pop();
    } else if measure(word) == 1 && ends_cvc(word) {
        word.push(b'e');
    }
}

fn stem_once(input: &[u8]) -> Vec<u8> {
    let mut w = input.to_vec();
    if w.len() <= 2 {
        return w;
    }
    let table = rules();
    apply_step(&mut w, &table.step1a);
    if apply_step(&mut w, &table.step1b) == Some(Condition::ContainsVowelThenCleanup) {
        step1b_cleanup(&mut w);
    }
    // 1c
    if w.last() == Some(&b'y') && contains_vowel(&w[..w.len() - 1]) {
        *w.last_mut().unwrap() = b'i';
    }
    apply_step(&mut w, &table.step2);
    apply_step(&mut w, &table.step3);
    apply_step(&mut w, &table.step4);
    // 5a
    if w.last() == Some(&b'e') {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
    // 5b
    if measure(&w) > 1 && ends_double_consonant(&w) && w.last() == Some(&b'l') {
        w.pop();
    }
    w
}

/// Stems a lowercase `[a-z0-9]` token, re-applying the rules until the
/// result no longer changes so that stemming a stem is a no-op.
pub fn stem(word: &str) -> String {
    debug_assert!(word.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()));
    let mut current = word.as_bytes().to_vec();
    for _ in 0..MAX_PASSES {
        let next = stem_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    String::from_utf8(current).expect("stemmer only emits ascii")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_table_loads_every_step() {
        let t = rules();
        assert_eq!(t.step1a.len(), 4);
        assert_eq!(t.step1b.len(), 3);
        assert_eq!(t.step2.len(), 21);
        assert_eq!(t.step3.len(), 7);
        assert_eq!(t.step4.len(), 19);
    }

    #[test]
    fn measure_matches_textbook_examples() {
        for (w, m) in [
            ("tr", 0),
            ("ee", 0),
            ("tree", 0),
            ("y", 0),
            ("by", 0),
            ("trouble", 1),
            ("oats", 1),
            ("trees", 1),
            ("ivy", 1),
            ("troubles", 2),
            ("private", 2),
            ("oaten", 2),
            ("orrery", 2),
        ] {
            assert_eq!(measure(w.as_bytes()), m, "{w}");
        }
    }

    #[test]
    fn single_pass_matches_reference_outputs() {
        for (input, expected) in [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("agreed", "agre"),
            ("plastered", "plaster"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("conflated", "conflat"),
            ("troubled", "troubl"),
            ("sized", "size"),
            ("hopping", "hop"),
            ("falling", "fall"),
            ("filing", "file"),
            ("happy", "happi"),
            ("relational", "relat"),
            ("generalization", "gener"),
            ("electrical", "electr"),
            ("adjustment", "adjust"),
            ("controll", "control"),
            ("probate", "probat"),
            ("rate", "rate"),
        ] {
            let got = String::from_utf8(stem_once(input.as_bytes())).unwrap();
            assert_eq!(got, expected, "{input}");
        }
    }

    #[test]
    fn fixpoint_reaches_a_stable_stem() {
        // agreed -> agre -> agr under repeated application
        assert_eq!(stem("agreed"), "agr");
        for w in ["testing", "software", "systems", "update", "ml4se", "slr"] {
            let s = stem(w);
            assert_eq!(stem(&s), s);
        }
        assert_eq!(stem("testing"), "test");
        assert_eq!(stem("software"), "softwar");
        assert_eq!(stem("systems"), "system");
        assert_eq!(stem("update"), "updat");
        assert_eq!(stem("ml4se"), "ml4se");
    }
}
