//! Caption quality metrics: BLEU@4, ROUGE-L, METEOR-lite, CIDEr, their
//! average, and question-answering consistency (RMC).
//!
//! All metrics tokenize with [`crate::text::normalize`] (lowercase,
//! punctuation stripped) so scores do not depend on surface formatting.

pub mod answerer;
pub mod stem;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;
use answerer::Answerer;
use stem::porter_stem;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("candidate/reference count mismatch: {candidates} vs {references}")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("metric needs at least one sample")]
    EmptyCorpus,
    #[error("sample {index} has an empty QA set")]
    EmptyQa { index: usize },
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("answerer failed: {0}")]
    Answerer(String),
}

/// One question/answer pair attached to a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub q: String,
    pub a: String,
}

fn check_pairs(candidates: &[String], references: &[String]) -> Result<(), MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

/// Counts of n-grams keyed by the tokens joined with an unprintable
/// separator (tokens are alphanumeric, so the key is unambiguous).
fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.join("\u{1f}")).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU@4 with clipped counts, add-one smoothing on both the
/// numerator and denominator for n >= 2, and the standard brevity penalty.
/// Zero matched unigrams (or an empty candidate corpus) scores 0.
pub fn bleu4(candidates: &[String], references: &[String]) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    let cands: Vec<Vec<String>> = candidates.iter().map(|s| normalize(s)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|s| normalize(s)).collect();
    let tot_c: usize = cands.iter().map(Vec::len).sum();
    let tot_r: usize = refs.iter().map(Vec::len).sum();

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, r) in cands.iter().zip(&refs) {
            let cg = ngram_counts(c, n);
            let rg = ngram_counts(r, n);
            for (g, &k) in &cg {
                matched += k.min(rg.get(g).copied().unwrap_or(0));
            }
            total += cg.values().sum::<usize>();
        }
        if n >= 2 {
            matched += 1;
            total += 1;
        }
        if total == 0 || matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }

    let bp = if tot_c >= tot_r {
        1.0
    } else {
        (1.0 - tot_r as f64 / tot_c as f64).exp()
    };
    Ok(bp * (log_sum / 4.0).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-pair ROUGE-L F1 (harmonic mean of LCS precision and recall).
pub fn rouge_l(candidates: &[String], references: &[String]) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    let mut sum = 0.0;
    for (cand, rf) in candidates.iter().zip(references) {
        let c = normalize(cand);
        let r = normalize(rf);
        let l = lcs_len(&c, &r);
        if l > 0 {
            let p = l as f64 / c.len() as f64;
            let rc = l as f64 / r.len() as f64;
            sum += 2.0 * p * rc / (p + rc);
        }
    }
    Ok(sum / candidates.len() as f64)
}

fn meteor_pair(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut ref_used = vec![false; r.len()];
    let mut align: Vec<(usize, usize)> = Vec::new();
    let mut cand_matched = vec![false; c.len()];
    // exact matches first, greedy leftmost
    for (i, ci) in c.iter().enumerate() {
        if let Some(j) = (0..r.len()).find(|&j| !ref_used[j] && &r[j] == ci) {
            ref_used[j] = true;
            cand_matched[i] = true;
            align.push((i, j));
        }
    }
    // then stem matches on what remains
    let cs: Vec<String> = c.iter().map(|w| porter_stem(w)).collect();
    let rs: Vec<String> = r.iter().map(|w| porter_stem(w)).collect();
    for (i, si) in cs.iter().enumerate() {
        if cand_matched[i] {
            continue;
        }
        if let Some(j) = (0..r.len()).find(|&j| !ref_used[j] && &rs[j] == si) {
            ref_used[j] = true;
            align.push((i, j));
        }
    }
    let m = align.len() as f64;
    if align.is_empty() {
        return 0.0;
    }
    align.sort_unstable();
    let mut chunks = 1usize;
    for w in align.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    let p = m / c.len() as f64;
    let rc = m / r.len() as f64;
    let f = p * rc / (0.9 * p + 0.1 * rc);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f * (1.0 - penalty)
}

/// Mean per-pair METEOR-lite: unigram alignment (exact first, then Porter
/// stems), recall-weighted F-score, and a fragmentation penalty.
pub fn meteor_lite(candidates: &[String], references: &[String]) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_pair(&normalize(c), &normalize(r)))
        .sum();
    Ok(sum / candidates.len() as f64)
}

fn tfidf(
    tokens: &[String],
    n: usize,
    df: &HashMap<String, usize>,
    ndoc: f64,
) -> HashMap<String, f64> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return HashMap::new();
    }
    counts
        .into_iter()
        .map(|(g, k)| {
            let idf = (ndoc / (1.0 + df.get(&g).copied().unwrap_or(0) as f64)).ln();
            (g, (k as f64 / total as f64) * idf)
        })
        .collect()
}

fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .map(|(g, &v)| v * b.get(g).copied().unwrap_or(0.0))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// CIDEr without the conventional x10 rescale so the score stays in [0, 1].
///
/// TF is the n-gram count over the sentence total, IDF is ln(N / (1 + DF))
/// with DF counted once per corpus document, and each pair scores the mean
/// over n = 1..4 of the TF-IDF cosine (a missing n-gram order contributes
/// 0), clipped to [0, 1]. `corpus` supplies the document-frequency
/// statistics; evaluation passes the reference set.
pub fn cider(
    candidates: &[String],
    references: &[String],
    corpus: &[String],
) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let docs: Vec<Vec<String>> = corpus.iter().map(|s| normalize(s)).collect();
    let ndoc = docs.len() as f64;
    let mut df: Vec<HashMap<String, usize>> = vec![HashMap::new(); 4];
    for doc in &docs {
        for n in 1..=4 {
            for g in ngram_counts(doc, n).into_keys() {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }

    let mut sum = 0.0;
    for (cand, rf) in candidates.iter().zip(references) {
        let c = normalize(cand);
        let r = normalize(rf);
        let mut per = 0.0;
        for n in 1..=4 {
            let vc = tfidf(&c, n, &df[n - 1], ndoc);
            let vr = tfidf(&r, n, &df[n - 1], ndoc);
            per += cosine(&vc, &vr);
        }
        sum += (per / 4.0).clamp(0.0, 1.0);
    }
    Ok(sum / candidates.len() as f64)
}

/// Mean of the four caption metrics; every input must lie in [0, 1].
pub fn s_avg(bleu4: f64, rouge_l: f64, meteor: f64, cider: f64) -> Result<f64, MetricError> {
    for (name, v) in [
        ("bleu4", bleu4),
        ("rouge_l", rouge_l),
        ("meteor", meteor),
        ("cider", cider),
    ] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(MetricError::OutOfRange { name, value: v });
        }
    }
    Ok((bleu4 + rouge_l + meteor + cider) / 4.0)
}

/// Canonical answer form: lowercase, punctuation stripped, articles
/// (a, an, the) removed, single-spaced.
pub fn normalize_answer(s: &str) -> String {
    normalize(s)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Caption-question consistency: each caption is scored by the fraction of
/// its questions the answerer gets right (exact match on normalized
/// answers), then averaged over the corpus.
pub fn rmc(
    captions: &[String],
    qa_sets: &[Vec<QaItem>],
    answerer: &mut dyn Answerer,
) -> Result<f64, MetricError> {
    if captions.len() != qa_sets.len() {
        return Err(MetricError::LengthMismatch {
            candidates: captions.len(),
            references: qa_sets.len(),
        });
    }
    if captions.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (index, (caption, set)) in captions.iter().zip(qa_sets).enumerate() {
        if set.is_empty() {
            return Err(MetricError::EmptyQa { index });
        }
        let mut hits = 0usize;
        for item in set {
            let answer = answerer.answer(caption, &item.q)?;
            if normalize_answer(&answer) == normalize_answer(&item.a) {
                hits += 1;
            }
        }
        sum += hits as f64 / set.len() as f64;
    }
    Ok(sum / captions.len() as f64)
}

/// All metrics over one evaluation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub s_avg: f64,
    pub rmc: f64,
    pub n_samples: usize,
}

impl MetricReport {
    /// Column order follows the report table: B@4, M, R, C, S-Avg, RMC.
    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in [
            ("bleu4", self.bleu4),
            ("meteor", self.meteor),
            ("rouge_l", self.rouge_l),
            ("cider", self.cider),
            ("s_avg", self.s_avg),
            ("rmc", self.rmc),
        ] {
            out.push_str(&format!("{name},{v:?}\n"));
        }
        out.push_str(&format!("n_samples,{}\n", self.n_samples));
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "B@4", "M", "R", "C", "S-Avg", "RMC"
        ));
        out.push_str(&format!(
            "{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            self.bleu4, self.meteor, self.rouge_l, self.cider, self.s_avg, self.rmc
        ));
        out
    }
}

/// Computes every metric for decoded captions against references, using the
/// reference set as the CIDEr corpus.
pub fn evaluate(
    candidates: &[String],
    references: &[String],
    qa_sets: &[Vec<QaItem>],
    answerer: &mut dyn Answerer,
) -> Result<MetricReport, MetricError> {
    let b = bleu4(candidates, references)?;
    let r = rouge_l(candidates, references)?;
    let m = meteor_lite(candidates, references)?;
    let c = cider(candidates, references, references)?;
    let s = s_avg(b, r, m, c)?;
    let q = rmc(candidates, qa_sets, answerer)?;
    Ok(MetricReport {
        bleu4: b,
        rouge_l: r,
        meteor: m,
        cider: c,
        s_avg: s,
        rmc: q,
        n_samples: candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identical_corpus_scores_one_on_overlap_metrics() {
        let caps = s(&["The user walks and then sits."]);
        assert_eq!(bleu4(&caps, &caps).unwrap(), 1.0);
        assert_eq!(rouge_l(&caps, &caps).unwrap(), 1.0);
        let c = cider(&caps, &caps, &caps).unwrap();
        assert!((c - 1.0).abs() < 1e-12, "cider identity = {c}");
    }

    #[test]
    fn cider_identity_on_three_tokens_lacks_fourgrams() {
        // only n = 1..3 exist; n = 4 contributes 0, so the mean is 3/4
        let caps = s(&["the user walks"]);
        let c = cider(&caps, &caps, &caps).unwrap();
        assert!((c - 0.75).abs() < 1e-12, "got {c}");
    }

    #[test]
    fn bleu_matches_frozen_value() {
        let cand = s(&["the cat sat on the mat"]);
        let rf = s(&["the cat is on the mat"]);
        let b = bleu4(&cand, &rf).unwrap();
        assert!((b - 0.48549177170732344).abs() < 1e-12, "got {b:?}");
        let analytic = (1.0f64 / 18.0).powf(0.25);
        assert!((b - analytic).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty_on_short_candidate() {
        // clipped precisions are all 1 (smoothed above bigrams); c=2, r=3
        let b = bleu4(&s(&["the cat"]), &s(&["the cat sat"])).unwrap();
        assert!((b - (-0.5f64).exp()).abs() < 1e-12, "got {b:?}");
    }

    #[test]
    fn disjoint_pair_scores_zero_everywhere() {
        let cand = s(&["red green blue"]);
        let rf = s(&["walks sits jumping"]);
        assert_eq!(bleu4(&cand, &rf).unwrap(), 0.0);
        assert_eq!(rouge_l(&cand, &rf).unwrap(), 0.0);
        assert_eq!(meteor_lite(&cand, &rf).unwrap(), 0.0);
        assert_eq!(cider(&cand, &rf, &rf).unwrap(), 0.0);
    }

    #[test]
    fn rouge_counts_longest_common_subsequence() {
        let r = rouge_l(&s(&["a b c d"]), &s(&["a c b d"])).unwrap();
        assert!((r - 0.75).abs() < 1e-12, "got {r}");
    }

    #[test]
    fn meteor_identical_four_words_matches_frozen_value() {
        let m = meteor_lite(&s(&["the user walks quickly"]), &s(&["the user walks quickly"]))
            .unwrap();
        assert!((m - 0.9921875).abs() < 1e-15, "got {m:?}");
    }

    #[test]
    fn meteor_aligns_inflections_through_stems() {
        // one stem match: P = R = 1, F = 1, one chunk of one match
        let m = meteor_lite(&s(&["walking"]), &s(&["walks"])).unwrap();
        assert!((m - 0.5).abs() < 1e-12, "got {m}");
        // stem matches extend chunks exactly like exact matches do
        let m2 = meteor_lite(&s(&["the user walking"]), &s(&["the user walks"])).unwrap();
        let want = 1.0 - 0.5 * (1.0f64 / 3.0).powi(3);
        assert!((m2 - want).abs() < 1e-12, "got {m2} want {want}");
        // reordering splits the alignment into two chunks
        let m3 = meteor_lite(&s(&["walks the user"]), &s(&["the user walks"])).unwrap();
        let want3 = 1.0 - 0.5 * (2.0f64 / 3.0).powi(3);
        assert!((m3 - want3).abs() < 1e-12, "got {m3} want {want3}");
    }

    #[test]
    fn cider_matches_frozen_three_sample_value() {
        let cands = s(&["the user walks", "the user sits down", "a user runs"]);
        let refs = s(&["the user walks", "the user sits", "the user runs quickly"]);
        let c = cider(&cands, &refs, &refs).unwrap();
        assert!((c - 0.3943507509452142).abs() < 1e-12, "got {c:?}");
    }

    #[test]
    fn tokenization_ignores_case_and_punctuation() {
        let a = s(&["The user walks, then sits."]);
        let b = s(&["the user walks then sits"]);
        assert_eq!(bleu4(&a, &b).unwrap(), 1.0);
        assert_eq!(rouge_l(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_lengths_and_empty_corpus_are_rejected() {
        let one = s(&["a"]);
        let two = s(&["a", "b"]);
        assert!(matches!(
            bleu4(&one, &two),
            Err(MetricError::LengthMismatch { candidates: 1, references: 2 })
        ));
        let empty: Vec<String> = Vec::new();
        assert!(matches!(bleu4(&empty, &empty), Err(MetricError::EmptyCorpus)));
        assert!(matches!(
            cider(&one, &one, &empty),
            Err(MetricError::EmptyCorpus)
        ));
    }

    #[test]
    fn s_avg_is_the_mean_and_rejects_out_of_range() {
        let v = s_avg(0.2, 0.4, 0.6, 0.8).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(matches!(
            s_avg(1.2, 0.0, 0.0, 0.0),
            Err(MetricError::OutOfRange { name: "bleu4", .. })
        ));
        assert!(matches!(
            s_avg(0.0, -0.1, 0.0, 0.0),
            Err(MetricError::OutOfRange { name: "rouge_l", .. })
        ));
    }

    #[test]
    fn answer_normalization_drops_articles_and_punctuation() {
        assert_eq!(normalize_answer("The Walk."), "walk");
        assert_eq!(normalize_answer("  a  run  "), "run");
        assert_eq!(normalize_answer("3"), "3");
    }

    struct Fixed(&'static str);
    impl Answerer for Fixed {
        fn answer(&mut self, _caption: &str, _question: &str) -> Result<String, MetricError> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn rmc_scores_fraction_of_consistent_answers() {
        let caps = s(&["anything"]);
        let qa = vec![vec![
            QaItem { q: "q1".into(), a: "walk".into() },
            QaItem { q: "q2".into(), a: "walk".into() },
            QaItem { q: "q3".into(), a: "sit".into() },
            QaItem { q: "q4".into(), a: "run".into() },
        ]];
        let mut ans = Fixed("the walk");
        let v = rmc(&caps, &qa, &mut ans).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        let mut wrong = Fixed("nothing");
        assert_eq!(rmc(&caps, &qa, &mut wrong).unwrap(), 0.0);
    }

    #[test]
    fn rmc_rejects_empty_qa_sets() {
        let caps = s(&["a", "b"]);
        let qa = vec![vec![QaItem { q: "x".into(), a: "y".into() }], vec![]];
        let mut ans = Fixed("y");
        assert!(matches!(
            rmc(&caps, &qa, &mut ans),
            Err(MetricError::EmptyQa { index: 1 })
        ));
    }

    #[test]
    fn report_csv_lists_metrics_in_table_order() {
        let rep = MetricReport {
            bleu4: 0.5,
            rouge_l: 0.25,
            meteor: 1.0,
            cider: 0.125,
            s_avg: 0.46875,
            rmc: 0.75,
            n_samples: 3,
        };
        let csv = rep.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines,
            vec![
                "metric,value",
                "bleu4,0.5",
                "meteor,1.0",
                "rouge_l,0.25",
                "cider,0.125",
                "s_avg,0.46875",
                "rmc,0.75",
                "n_samples,3",
            ]
        );
        let table = rep.table();
        assert!(table.contains("S-Avg"));
    }

    fn word_pool() -> Vec<&'static str> {
        vec!["the", "user", "walks", "sits", "runs", "then", "and", "stops"]
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(
            picks in proptest::collection::vec((0usize..8, 0usize..8), 1..6),
            lens in (1usize..8, 1usize..8),
        ) {
            let pool = word_pool();
            let mk = |n: usize, seed: usize| -> String {
                (0..n).map(|i| pool[(seed + i * 3) % pool.len()]).collect::<Vec<_>>().join(" ")
            };
            let cands: Vec<String> = picks.iter().map(|&(a, _)| mk(lens.0, a)).collect();
            let refs: Vec<String> = picks.iter().map(|&(_, b)| mk(lens.1, b)).collect();
            for v in [
                bleu4(&cands, &refs).unwrap(),
                rouge_l(&cands, &refs).unwrap(),
                meteor_lite(&cands, &refs).unwrap(),
                cider(&cands, &refs, &refs).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&v), "score {v} out of range");
            }
        }

        #[test]
        fn bleu_never_exceeds_identity_score(
            idx in 0usize..8, n in 1usize..6,
        ) {
            let pool = word_pool();
            let sent = (0..n).map(|i| pool[(idx + i) % pool.len()]).collect::<Vec<_>>().join(" ");
            let cand = vec![sent.clone()];
            let refs = vec![sent];
            let ident = bleu4(&cand, &refs).unwrap();
            // removing a word can only lower the clipped precisions
            if n > 1 {
                let shorter = cand[0].rsplit_once(' ').unwrap().0.to_string();
                let b = bleu4(&[shorter].to_vec(), &refs).unwrap();
                prop_assert!(b <= ident + 1e-12);
            }
        }
    }
}
