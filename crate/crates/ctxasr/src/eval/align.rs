//! Word-level minimum-edit alignment with a deterministic backtrace.

/// One edit operation. `ref_gap` on insertions is the reference boundary the
/// inserted hypothesis word falls into: an insertion at gap g sits between
/// reference words g-1 and g.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Match { ref_idx: usize, hyp_idx: usize },
    Substitute { ref_idx: usize, hyp_idx: usize },
    Delete { ref_idx: usize },
    Insert { hyp_idx: usize, ref_gap: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
    pub cost: usize,
}

/// Unit-cost Levenshtein alignment over words. Ties during backtrace break
/// substitute, then delete, then insert.
pub fn word_align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Alignment {
    let m = reference.len();
    let n = hypothesis.len();
    let mut dp = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        dp[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            dp[i][j] = (dp[i - 1][j - 1] + sub_cost)
                .min(dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1);
        }
    }

    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dp[i][j];
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if here == dp[i - 1][j - 1] + sub_cost {
                ops.push(if sub_cost == 0 {
                    AlignOp::Match {
                        ref_idx: i - 1,
                        hyp_idx: j - 1,
                    }
                } else {
                    AlignOp::Substitute {
                        ref_idx: i - 1,
                        hyp_idx: j - 1,
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[i - 1][j] + 1 {
            ops.push(AlignOp::Delete { ref_idx: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(AlignOp::Insert {
            hyp_idx: j - 1,
            ref_gap: i,
        });
        j -= 1;
    }
    ops.reverse();
    Alignment {
        ops,
        cost: dp[m][n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_all_matches() {
        let a = word_align(&words("a b c"), &words("a b c"));
        assert_eq!(a.cost, 0);
        assert_eq!(a.ops.len(), 3);
        assert!(a.ops.iter().all(|op| matches!(op, AlignOp::Match { .. })));
    }

    #[test]
    fn single_insertion() {
        let a = word_align(&words("the cat sat"), &words("the cat sat down"));
        assert_eq!(a.cost, 1);
        assert_eq!(
            a.ops.last(),
            Some(&AlignOp::Insert {
                hyp_idx: 3,
                ref_gap: 3
            })
        );
    }

    #[test]
    fn substitute_then_delete() {
        let a = word_align(&words("a b"), &words("x"));
        assert_eq!(a.cost, 2);
        // tie-break keeps this deterministic: one substitute, one delete
        let subs = a
            .ops
            .iter()
            .filter(|o| matches!(o, AlignOp::Substitute { .. }))
            .count();
        let dels = a
            .ops
            .iter()
            .filter(|o| matches!(o, AlignOp::Delete { .. }))
            .count();
        assert_eq!((subs, dels, a.ops.len()), (1, 1, 2));
        let again = word_align(&words("a b"), &words("x"));
        assert_eq!(a.ops, again.ops);
    }

    #[test]
    fn empty_sides() {
        let a = word_align(&words("a b"), &words(""));
        assert_eq!(a.cost, 2);
        let b = word_align(&words(""), &words("a b"));
        assert_eq!(b.cost, 2);
        assert!(b.ops.iter().all(|op| matches!(op, AlignOp::Insert { .. })));
    }

    #[test]
    fn ops_traverse_both_sequences_completely() {
        let r = words("one two three four");
        let h = words("one three four five");
        let a = word_align(&r, &h);
        let mut ri = 0usize;
        let mut hi = 0usize;
        for op in &a.ops {
            match *op {
                AlignOp::Match { ref_idx, hyp_idx } | AlignOp::Substitute { ref_idx, hyp_idx } => {
                    assert_eq!((ref_idx, hyp_idx), (ri, hi));
                    ri += 1;
                    hi += 1;
                }
                AlignOp::Delete { ref_idx } => {
                    assert_eq!(ref_idx, ri);
                    ri += 1;
                }
                AlignOp::Insert { hyp_idx, ref_gap } => {
                    assert_eq!((hyp_idx, ref_gap), (hi, ri));
                    hi += 1;
                }
            }
        }
        assert_eq!((ri, hi), (r.len(), h.len()));
    }
}
