//! Corpus-level BLEU-n, Distinct-n and ROUGE-L.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::text::normalize;
use crate::{Error, Result};

/// A hypothesis with one or more references, already tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(hypothesis: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Contract(
                "an evaluation pair needs at least one reference".into(),
            ));
        }
        Ok(EvalPair {
            hypothesis,
            references,
        })
    }

    /// Tokenizes raw strings the same way the vocabulary does.
    pub fn from_text<S: AsRef<str>>(hypothesis: &str, references: &[S]) -> Result<Self> {
        Self::new(
            normalize(hypothesis),
            references.iter().map(|r| normalize(r.as_ref())).collect(),
        )
    }
}

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Contract("n-gram order must be at least 1".into()));
    }
    Ok(())
}

/// Modified n-gram precision over the corpus times the brevity penalty.
///
/// Each hypothesis n-gram count is clipped by its largest count in any
/// reference. The brevity penalty compares total hypothesis length with the
/// summed closest reference lengths (shorter reference on ties).
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64> {
    check_n(n)?;
    if pairs.is_empty() {
        return Err(Error::Contract("BLEU over an empty corpus".into()));
    }
    let (mut clipped, mut total, mut hyp_len, mut ref_len) = (0usize, 0usize, 0usize, 0usize);
    for p in pairs {
        let hyp = counts(&p.hypothesis, n);
        let refs: Vec<_> = p.references.iter().map(|r| counts(r, n)).collect();
        for (g, c) in hyp {
            let max_ref = refs
                .iter()
                .map(|r| r.get(g).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += c.min(max_ref);
            total += c;
        }
        let h = p.hypothesis.len();
        hyp_len += h;
        ref_len += p
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(h), r))
            .unwrap_or(0);
    }
    if total == 0 {
        return Ok(0.0);
    }
    let precision = clipped as f64 / total as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(precision * bp)
}

/// Distinct n-grams over total n-grams across all hypotheses.
pub fn distinct_n<T: AsRef<[String]>>(hypotheses: &[T], n: usize) -> Result<f64> {
    check_n(n)?;
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        for g in ngrams(h.as_ref(), n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Contract(format!(
            "distinct-{n} over a corpus with no {n}-grams"
        )));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS F-measure `2PR / (P + R)` of one hypothesis against one reference.
pub fn rouge_l_single(hyp: &[String], reference: &[String]) -> f64 {
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let l = lcs(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean over pairs of the best ROUGE-L F-measure among the references.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("ROUGE-L over an empty corpus".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| rouge_l_single(&p.hypothesis, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub num_pairs: usize,
}

/// All metrics at once. Distinct-n of a corpus without n-grams reports 0.
pub fn evaluate(pairs: &[EvalPair]) -> Result<EvaluationReport> {
    let hyps: Vec<&[String]> = pairs.iter().map(|p| p.hypothesis.as_slice()).collect();
    let distinct =
        |n| distinct_n(&hyps, n).or_else(|e| if pairs.is_empty() { Err(e) } else { Ok(0.0) });
    Ok(EvaluationReport {
        bleu1: bleu_n(pairs, 1)?,
        bleu2: bleu_n(pairs, 2)?,
        distinct1: distinct(1)?,
        distinct2: distinct(2)?,
        rouge_l: rouge_l(pairs)?,
        num_pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        normalize(s)
    }

    fn pair(h: &str, refs: &[&str]) -> EvalPair {
        EvalPair::from_text(h, refs).unwrap()
    }

    #[test]
    fn bleu_examples() {
        let perfect = [pair("a b c", &["a b c"]), pair("d e", &["d e"])];
        assert_eq!(bleu_n(&perfect, 1).unwrap(), 1.0);
        assert_eq!(bleu_n(&perfect, 2).unwrap(), 1.0);

        // Hypothesis longer than reference: no brevity penalty.
        assert!(
            (bleu_n(&[pair("the the the", &["the cat"])], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(bleu_n(&[pair("a c", &["a b", "a c"])], 2).unwrap(), 1.0);

        let short = bleu_n(&[pair("a", &["a b"])], 1).unwrap();
        assert!((short - (1.0f64 - 2.0).exp()).abs() < 1e-15);
        assert!(bleu_n(&[], 1).is_err());
        assert!(EvalPair::new(toks("a"), vec![]).is_err());
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&[toks("a a a")], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(distinct_n(&[toks("a b"), toks("c d")], 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&[toks("a b"), toks("a b")], 2).unwrap(), 0.5);
        assert!(distinct_n(&[toks("a")], 2).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_l(&[pair("the cat sat", &["the cat"])]).unwrap() - 0.8).abs() < 1e-9);
        assert_eq!(rouge_l(&[pair("a b", &["a b"])]).unwrap(), 1.0);
        assert_eq!(rouge_l(&[pair("a b", &["c d"])]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[pair("", &[""])]).unwrap(), 1.0);
        assert_eq!(rouge_l(&[pair("", &["a"])]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[pair("a x", &["c d", "a b"])]).unwrap(), 0.5);
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let r = evaluate(&[pair("a b", &["a b"])]).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "bleu1",
            "bleu2",
            "distinct1",
            "distinct2",
            "rougeL",
            "num_pairs",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    fn corpus() -> impl Strategy<Value = Vec<EvalPair>> {
        let sent = proptest::collection::vec(0u8..4, 0..6).prop_map(|v| {
            v.into_iter()
                .map(|t| ["a", "b", "c", "d"][t as usize].to_string())
                .collect::<Vec<_>>()
        });
        let p = (sent.clone(), proptest::collection::vec(sent, 1..3))
            .prop_map(|(h, r)| EvalPair::new(h, r).unwrap());
        proptest::collection::vec(p, 1..6)
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval_and_order_free(c in corpus()) {
            let mut rev = c.clone();
            rev.reverse();
            for n in 1..=2 {
                let b = bleu_n(&c, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&b));
                prop_assert!((b - bleu_n(&rev, n).unwrap()).abs() < 1e-12);
            }
            let r = rouge_l(&c).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - rouge_l(&rev).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn distinct_does_not_grow_with_duplicates(c in corpus()) {
            let hyps: Vec<Vec<String>> = c.iter().map(|p| p.hypothesis.clone()).collect();
            if let Ok(d) = distinct_n(&hyps, 1) {
                let mut more = hyps.clone();
                more.push(hyps.iter().find(|h| !h.is_empty()).unwrap().clone());
                prop_assert!(distinct_n(&more, 1).unwrap() <= d + 1e-15);
            }
        }
    }
}
