//! Porter stemmer, the 1980 formulation.
//!
//! Operates on lowercase ASCII alphabetic tokens; anything else is returned
//! unchanged. Words of length <= 2 are returned unchanged, matching the
//! reference implementation.

/// Stem a single token.
pub fn stem(token: &str) -> String {
    if token.len() <= 2 || !token.bytes().all(|b| b.is_ascii_lowercase()) {
        return token.to_string();
    }
    let mut w = Word { b: token.as_bytes().to_vec() };
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5a();
    w.step5b();
    String::from_utf8(w.b).expect("ascii")
}

struct Word {
    b: Vec<u8>,
}

/// Consonant test: not a/e/i/o/u, and 'y' only when not preceded by a consonant.
fn is_cons(b: &[u8], i: usize) -> bool {
    match b[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => {
            if i == 0 {
                true
            } else {
                !is_cons(b, i - 1)
            }
        }
        _ => true,
    }
}

/// Measure m of [C](VC)^m[V]: the number of vowel-to-consonant transitions.
fn measure(b: &[u8]) -> usize {
    let mut m = 0;
    for i in 1..b.len() {
        if is_cons(b, i) && !is_cons(b, i - 1) {
            m += 1;
        }
    }
    m
}

fn has_vowel(b: &[u8]) -> bool {
    (0..b.len()).any(|i| !is_cons(b, i))
}

fn ends_double_cons(b: &[u8]) -> bool {
    let n = b.len();
    n >= 2 && b[n - 1] == b[n - 2] && is_cons(b, n - 1)
}

/// *o condition: stem ends consonant-vowel-consonant where the final
/// consonant is not w, x or y.
fn ends_cvc(b: &[u8]) -> bool {
    let n = b.len();
    n >= 3
        && is_cons(b, n - 3)
        && !is_cons(b, n - 2)
        && is_cons(b, n - 1)
        && !matches!(b[n - 1], b'w' | b'x' | b'y')
}

impl Word {
    fn ends(&self, suffix: &str) -> bool {
        self.b.len() > suffix.len() && self.b.ends_with(suffix.as_bytes())
    }

    fn stem_len_for(&self, suffix: &str) -> usize {
        self.b.len() - suffix.len()
    }

    fn stem_bytes(&self, suffix: &str) -> &[u8] {
        &self.b[..self.stem_len_for(suffix)]
    }

    fn replace(&mut self, suffix: &str, with: &str) {
        let keep = self.stem_len_for(suffix);
        self.b.truncate(keep);
        self.b.extend_from_slice(with.as_bytes());
    }

    fn step1a(&mut self) {
        if self.ends("sses") {
            self.replace("sses", "ss");
        } else if self.ends("ies") {
            self.replace("ies", "i");
        } else if self.ends("ss") {
            // unchanged
        } else if self.ends("s") {
            self.replace("s", "");
        }
    }

    fn step1b(&mut self) {
        if self.ends("eed") {
            if measure(self.stem_bytes("eed")) > 0 {
                self.replace("eed", "ee");
            }
            return;
        }
        let removed = if self.ends("ed") && has_vowel(self.stem_bytes("ed")) {
            self.replace("ed", "");
            true
        } else if self.ends("ing") && has_vowel(self.stem_bytes("ing")) {
            self.replace("ing", "");
            true
        } else {
            false
        };
        if !removed {
            return;
        }
        if self.ends("at") {
            self.replace("at", "ate");
        } else if self.ends("bl") {
            self.replace("bl", "ble");
        } else if self.ends("iz") {
            self.replace("iz", "ize");
        } else if ends_double_cons(&self.b) && !matches!(self.b[self.b.len() - 1], b'l' | b's' | b'z') {
            self.b.pop();
        } else if measure(&self.b) == 1 && ends_cvc(&self.b) {
            self.b.push(b'e');
        }
    }

    fn step1c(&mut self) {
        if self.ends("y") && has_vowel(self.stem_bytes("y")) {
            self.replace("y", "i");
        }
    }

    fn apply_table(&mut self, rules: &[(&str, &str)], min_measure: usize) {
        // Longest matching suffix wins; its condition gates the rewrite.
        let mut best: Option<&(&str, &str)> = None;
        for rule in rules {
            if self.ends(rule.0) && best.is_none_or(|b| rule.0.len() > b.0.len()) {
                best = Some(rule);
            }
        }
        if let Some((suffix, with)) = best {
            if measure(self.stem_bytes(suffix)) > min_measure - 1 {
                self.replace(suffix, with);
            }
        }
    }

    fn step2(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("abli", "able"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
        ];
        self.apply_table(RULES, 1);
    }

    fn step3(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.apply_table(RULES, 1);
    }

    fn step4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent",
            "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
        ];
        let mut best: Option<&str> = None;
        for s in SUFFIXES {
            if self.ends(s) && best.is_none_or(|b| s.len() > b.len()) {
                best = Some(s);
            }
        }
        if let Some(suffix) = best {
            let stem = self.stem_bytes(suffix);
            let ok = if suffix == "ion" {
                measure(stem) > 1 && matches!(stem.last(), Some(b's') | Some(b't'))
            } else {
                measure(stem) > 1
            };
            if ok {
                self.replace(suffix, "");
            }
        }
    }

    fn step5a(&mut self) {
        if self.ends("e") {
            let stem = self.stem_bytes("e");
            let m = measure(stem);
            if m > 1 || (m == 1 && !ends_cvc(stem)) {
                self.replace("e", "");
            }
        }
    }

    fn step5b(&mut self) {
        if measure(&self.b) > 1 && ends_double_cons(&self.b) && self.b.last() == Some(&b'l') {
            self.b.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::stem;

    fn check(pairs: &[(&str, &str)]) {
        for (input, expected) in pairs {
            assert_eq!(stem(input), *expected, "stem({input:?})");
        }
    }

    #[test]
    fn stemmer_hand_traces() {
        check(&[("spilling", "spill"), ("a", "a"), ("happy", "happi")]);
    }

    #[test]
    fn step1_cases() {
        check(&[
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("ties", "ti"),
            ("caress", "caress"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("agreed", "agre"),
            ("plastered", "plaster"),
            ("bled", "bled"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("conflated", "conflat"),
            ("troubled", "troubl"),
            ("sized", "size"),
            ("hopping", "hop"),
            ("tanned", "tan"),
            ("falling", "fall"),
            ("hissing", "hiss"),
            ("fizzed", "fizz"),
            ("failing", "fail"),
            ("filing", "file"),
            ("sky", "sky"),
        ]);
    }

    #[test]
    fn step2_to_5_cases() {
        check(&[
            ("relational", "relat"),
            ("conditional", "condit"),
            ("rational", "ration"),
            ("valenci", "valenc"),
            ("hesitanci", "hesit"),
            ("digitizer", "digit"),
            ("radicalli", "radic"),
            ("differentli", "differ"),
            ("vileli", "vile"),
            ("analogousli", "analog"),
            ("vietnamization", "vietnam"),
            ("predication", "predic"),
            ("operator", "oper"),
            ("feudalism", "feudal"),
            ("decisiveness", "decis"),
            ("hopefulness", "hope"),
            ("callousness", "callous"),
            ("formaliti", "formal"),
            ("sensitiviti", "sensit"),
            ("sensibiliti", "sensibl"),
            ("triplicate", "triplic"),
            ("formative", "form"),
            ("formalize", "formal"),
            ("electriciti", "electr"),
            ("electrical", "electr"),
            ("hopeful", "hope"),
            ("goodness", "good"),
            ("revival", "reviv"),
            ("allowance", "allow"),
            ("inference", "infer"),
            ("airliner", "airlin"),
            ("gyroscopic", "gyroscop"),
            ("adjustable", "adjust"),
            ("defensible", "defens"),
            ("irritant", "irrit"),
            ("replacement", "replac"),
            ("adjustment", "adjust"),
            ("dependent", "depend"),
            ("adoption", "adopt"),
            ("communism", "commun"),
            ("activate", "activ"),
            ("angulariti", "angular"),
            ("effective", "effect"),
            ("bowdlerize", "bowdler"),
            ("probate", "probat"),
            ("rate", "rate"),
            ("cease", "ceas"),
            ("controll", "control"),
            ("roll", "roll"),
        ]);
    }

    #[test]
    fn non_alphabetic_and_short_tokens_are_unchanged() {
        check(&[("don't", "don't"), ("3rd", "3rd"), ("!", "!"), ("it", "it"), ("", "")]);
    }
}
