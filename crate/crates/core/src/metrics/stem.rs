//! Porter stemmer (the original 1980 algorithm).
//!
//! Within each step the candidate suffixes are tried longest first and the
//! first textual match consumes the attempt: when its measure condition
//! fails the word passes to the next step unchanged (so "rational" keeps
//! its ATIONAL suffix rather than falling through to TIONAL).

/// Stems one lowercase word. Words shorter than 3 letters or containing
/// anything outside a-z are returned unchanged.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer {
        b: word.as_bytes().to_vec(),
    };
    s.step1a();
    s.step1b();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    String::from_utf8(s.b).expect("ascii in, ascii out")
}

struct Stemmer {
    b: Vec<u8>,
}

impl Stemmer {
    /// Consonant test with the y rule: y after a consonant acts as a vowel.
    fn is_cons(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_cons(i - 1),
            _ => true,
        }
    }

    /// Measure m of b[..len]: the VC repetition count in [C](VC)^m[V].
    fn measure(&self, len: usize) -> usize {
        let mut m = 0;
        let mut prev_vowel = false;
        for i in 0..len {
            let v = !self.is_cons(i);
            if !v && prev_vowel {
                m += 1;
            }
            prev_vowel = v;
        }
        m
    }

    fn has_vowel(&self, len: usize) -> bool {
        (0..len).any(|i| !self.is_cons(i))
    }

    fn ends_double_cons(&self, len: usize) -> bool {
        len >= 2 && self.b[len - 1] == self.b[len - 2] && self.is_cons(len - 1)
    }

    /// cvc at the end of b[..len], final consonant not w, x, or y.
    fn ends_cvc(&self, len: usize) -> bool {
        if len < 3 {
            return false;
        }
        self.is_cons(len - 3)
            && !self.is_cons(len - 2)
            && self.is_cons(len - 1)
            && !matches!(self.b[len - 1], b'w' | b'x' | b'y')
    }

    fn ends(&self, suffix: &str) -> bool {
        self.b.ends_with(suffix.as_bytes())
    }

    fn stem_len(&self, suffix: &str) -> usize {
        self.b.len() - suffix.len()
    }

    fn set_suffix(&mut self, suffix: &str, replacement: &str) {
        let keep = self.stem_len(suffix);
        self.b.truncate(keep);
        self.b.extend_from_slice(replacement.as_bytes());
    }

    /// Longest-first rule table; the first suffix that textually matches
    /// ends the step, replacing only when m(stem) > min_measure.
    fn rule_table(&mut self, rules: &[(&str, &str)], min_measure: usize) {
        for &(suffix, replacement) in rules {
            if self.ends(suffix) {
                if self.measure(self.stem_len(suffix)) > min_measure {
                    self.set_suffix(suffix, replacement);
                }
                return;
            }
        }
    }

    fn step1a(&mut self) {
        if self.ends("sses") {
            self.set_suffix("sses", "ss");
        } else if self.ends("ies") {
            self.set_suffix("ies", "i");
        } else if self.ends("ss") {
            // keep
        } else if self.ends("s") {
            self.set_suffix("s", "");
        }
    }

    fn step1b(&mut self) {
        if self.ends("eed") {
            if self.measure(self.stem_len("eed")) > 0 {
                self.set_suffix("eed", "ee");
            }
            return;
        }
        let removed = if self.ends("ed") && self.has_vowel(self.stem_len("ed")) {
            self.set_suffix("ed", "");
            true
        } else if self.ends("ing") && self.has_vowel(self.stem_len("ing")) {
            self.set_suffix("ing", "");
            true
        } else {
            false
        };
        if !removed {
            return;
        }
        if self.ends("at") {
            self.set_suffix("at", "ate");
        } else if self.ends("bl") {
            self.set_suffix("bl", "ble");
        } else if self.ends("iz") {
            self.set_suffix("iz", "ize");
        } else if self.ends_double_cons(self.b.len())
            && !matches!(self.b[self.b.len() - 1], b'l' | b's' | b'z')
        {
            self.b.pop();
        } else if self.measure(self.b.len()) == 1 && self.ends_cvc(self.b.len()) {
            self.b.push(b'e');
        }
    }

    fn step1c(&mut self) {
        if self.ends("y") && self.has_vowel(self.stem_len("y")) {
            self.set_suffix("y", "i");
        }
    }

    fn step2(&mut self) {
        self.rule_table(
            &[
                ("ational", "ate"),
                ("ization", "ize"),
                ("iveness", "ive"),
                ("fulness", "ful"),
                ("ousness", "ous"),
                ("tional", "tion"),
                ("biliti", "ble"),
                ("entli", "ent"),
                ("ousli", "ous"),
                ("ation", "ate"),
                ("alism", "al"),
                ("aliti", "al"),
                ("iviti", "ive"),
                ("enci", "ence"),
                ("anci", "ance"),
                ("izer", "ize"),
                ("abli", "able"),
                ("alli", "al"),
                ("ator", "ate"),
                ("eli", "e"),
            ],
            0,
        );
    }

    fn step3(&mut self) {
        self.rule_table(
            &[
                ("icate", "ic"),
                ("ative", ""),
                ("alize", "al"),
                ("iciti", "ic"),
                ("ical", "ic"),
                ("ness", ""),
                ("ful", ""),
            ],
            0,
        );
    }

    fn step4(&mut self) {
        // ION carries the extra stem-ends-in-s-or-t condition.
        for suffix in [
            "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ion", "ism", "ate",
            "iti", "ous", "ive", "ize", "al", "er", "ic", "ou",
        ] {
            if self.ends(suffix) {
                let stem = self.stem_len(suffix);
                let ok = self.measure(stem) > 1
                    && (suffix != "ion" || (stem > 0 && matches!(self.b[stem - 1], b's' | b't')));
                if ok {
                    self.set_suffix(suffix, "");
                }
                return;
            }
        }
    }

    fn step5(&mut self) {
        if self.ends("e") {
            let stem = self.stem_len("e");
            let m = self.measure(stem);
            if m > 1 || (m == 1 && !self.ends_cvc(stem)) {
                self.b.pop();
            }
        }
        let len = self.b.len();
        if self.measure(len) > 1 && self.ends_double_cons(len) && self.b[len - 1] == b'l' {
            self.b.pop();
        }
    }
}
