//! Pooled corpus WER and entity-restricted (Bias) WER.

use super::align::{word_align, AlignOp};
use super::EvalError;
use serde::{Deserialize, Serialize};

/// One scored utterance: reference words, hypothesis words, and the
/// reference's annotated entity spans.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub entity_spans: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub split: String,
    pub context_kind: String,
    pub n_decode: usize,
    pub utterances: usize,
    pub ref_words: usize,
    pub entity_ref_words: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub entity_substitutions: usize,
    pub entity_deletions: usize,
    pub entity_insertions: usize,
    pub wer: f64,
    pub bias_wer: f64,
}

fn inside_span(spans: &[(usize, usize)], ref_idx: usize) -> bool {
    spans.iter().any(|&(s, e)| ref_idx >= s && ref_idx < e)
}

/// Insertions count against a span only when the gap falls strictly inside
/// it, i.e. between two reference words of the same span. Boundary
/// insertions are unattributed.
fn gap_strictly_inside(spans: &[(usize, usize)], gap: usize) -> bool {
    spans.iter().any(|&(s, e)| gap > s && gap < e)
}

/// Scores a batch and assembles the full report. Pooled counts: the corpus
/// WER is total errors over total reference words, not a mean of rates.
pub fn metric_report(
    utterances: &[Utterance],
    label: &str,
    split: &str,
    context_kind: &str,
    n_decode: usize,
) -> Result<MetricReport, EvalError> {
    let mut r = MetricReport {
        label: label.to_string(),
        split: split.to_string(),
        context_kind: context_kind.to_string(),
        n_decode,
        utterances: utterances.len(),
        ref_words: 0,
        entity_ref_words: 0,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        entity_substitutions: 0,
        entity_deletions: 0,
        entity_insertions: 0,
        wer: 0.0,
        bias_wer: 0.0,
    };
    for u in utterances {
        r.ref_words += u.reference.len();
        r.entity_ref_words += u.entity_spans.iter().map(|(s, e)| e - s).sum::<usize>();
        let alignment = word_align(&u.reference, &u.hypothesis);
        for op in &alignment.ops {
            match *op {
                AlignOp::Match { .. } => {}
                AlignOp::Substitute { ref_idx, .. } => {
                    r.substitutions += 1;
                    if inside_span(&u.entity_spans, ref_idx) {
                        r.entity_substitutions += 1;
                    }
                }
                AlignOp::Delete { ref_idx } => {
                    r.deletions += 1;
                    if inside_span(&u.entity_spans, ref_idx) {
                        r.entity_deletions += 1;
                    }
                }
                AlignOp::Insert { ref_gap, .. } => {
                    r.insertions += 1;
                    if gap_strictly_inside(&u.entity_spans, ref_gap) {
                        r.entity_insertions += 1;
                    }
                }
            }
        }
    }
    if r.ref_words == 0 {
        return Err(EvalError::ZeroReferenceWords);
    }
    if r.entity_ref_words == 0 {
        return Err(EvalError::ZeroEntityWords);
    }
    r.wer = (r.substitutions + r.deletions + r.insertions) as f64 / r.ref_words as f64;
    r.bias_wer = (r.entity_substitutions + r.entity_deletions + r.entity_insertions) as f64
        / r.entity_ref_words as f64;
    Ok(r)
}

/// Pooled WER over (reference, hypothesis) pairs.
pub fn wer(pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64, EvalError> {
    let mut errors = 0usize;
    let mut ref_words = 0usize;
    for (r, h) in pairs {
        ref_words += r.len();
        errors += word_align(r, h).cost;
    }
    if ref_words == 0 {
        return Err(EvalError::ZeroReferenceWords);
    }
    Ok(errors as f64 / ref_words as f64)
}

/// Pooled entity-restricted WER.
pub fn bias_wer(utterances: &[Utterance]) -> Result<f64, EvalError> {
    // reuse the full report path; the non-entity fields are free
    let mut has_refs = false;
    for u in utterances {
        if !u.reference.is_empty() {
            has_refs = true;
        }
    }
    if !has_refs {
        return Err(EvalError::ZeroReferenceWords);
    }
    Ok(metric_report(utterances, "", "", "", 0)?.bias_wer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&[(w("a b c"), w("a b c"))]).unwrap(), 0.0);
        let v = wer(&[(w("the cat sat"), w("the cat sat down"))]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer(&[(w("a"), w(""))]).unwrap(), 1.0);
        assert!(matches!(
            wer(&[(w(""), w("x"))]),
            Err(EvalError::ZeroReferenceWords)
        ));
    }

    #[test]
    fn bias_wer_span_substitution() {
        // "call john smith now" with span [1,3), one substitution inside
        let utts = [Utterance {
            reference: w("call john smith now"),
            hypothesis: w("call jon smith now"),
            entity_spans: vec![(1, 3)],
        }];
        let v = bias_wer(&utts).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bias_wer_perfect_and_nonentity_errors() {
        let perfect = [Utterance {
            reference: w("a bb c"),
            hypothesis: w("a bb c"),
            entity_spans: vec![(1, 2)],
        }];
        assert_eq!(bias_wer(&perfect).unwrap(), 0.0);

        // error entirely outside the span: wer > 0, bias-wer = 0
        let outside = [Utterance {
            reference: w("a bb c"),
            hypothesis: w("x bb c"),
            entity_spans: vec![(1, 2)],
        }];
        let report = metric_report(&outside, "t", "test", "none", 0).unwrap();
        assert!(report.wer > 0.0);
        assert_eq!(report.bias_wer, 0.0);
    }

    #[test]
    fn insertion_attribution_strictly_inside() {
        // insertion between the two words of a 2-word span counts
        let inside = [Utterance {
            reference: w("call john smith now"),
            hypothesis: w("call john x smith now"),
            entity_spans: vec![(1, 3)],
        }];
        let r = metric_report(&inside, "t", "test", "none", 0).unwrap();
        assert_eq!(r.entity_insertions, 1);

        // insertion at the span boundary does not
        let boundary = [Utterance {
            reference: w("call john smith now"),
            hypothesis: w("call x john smith now"),
            entity_spans: vec![(1, 3)],
        }];
        let r = metric_report(&boundary, "t", "test", "none", 0).unwrap();
        assert_eq!(r.entity_insertions, 0);
        assert_eq!(r.insertions, 1);
    }

    #[test]
    fn zero_entity_words_is_an_error() {
        let utts = [Utterance {
            reference: w("a b"),
            hypothesis: w("a b"),
            entity_spans: vec![],
        }];
        assert!(matches!(bias_wer(&utts), Err(EvalError::ZeroEntityWords)));
    }

    #[test]
    fn report_identity_holds() {
        let utts = [
            Utterance {
                reference: w("aa bb cc dd"),
                hypothesis: w("aa xx dd ee"),
                entity_spans: vec![(1, 2)],
            },
            Utterance {
                reference: w("ff gg"),
                hypothesis: w("ff"),
                entity_spans: vec![(0, 1)],
            },
        ];
        let r = metric_report(&utts, "t", "test", "none", 0).unwrap();
        let total = r.substitutions + r.deletions + r.insertions;
        assert!((r.wer - total as f64 / r.ref_words as f64).abs() < 1e-15);
        let etotal = r.entity_substitutions + r.entity_deletions + r.entity_insertions;
        assert!(etotal <= total);
        assert!((r.bias_wer - etotal as f64 / r.entity_ref_words as f64).abs() < 1e-15);
    }
}
