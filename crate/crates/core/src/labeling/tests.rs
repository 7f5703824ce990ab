use proptest::prelude::*;

use super::*;

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn is_subsequence<T: PartialEq>(needle: &[T], hay: &[T]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// Longest subsequence of `a` that is also one of `b`, by enumerating masks.
fn brute_length<T: PartialEq + Clone>(a: &[T], b: &[T]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<T> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i].clone()).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

/// Every (mt positions, pe positions) matching of maximal length.
fn all_alignments(mt: &[&str], pe: &[&str]) -> Vec<Vec<usize>> {
    fn walk(mt: &[&str], pe: &[&str], i: usize, j: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        for a in i..mt.len() {
            for b in j..pe.len() {
                if mt[a] == pe[b] {
                    cur.push(a);
                    walk(mt, pe, a + 1, b + 1, cur, out);
                    cur.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(mt, pe, 0, 0, &mut Vec::new(), &mut out);
    let best = out.iter().map(Vec::len).max().unwrap_or(0);
    out.retain(|a| a.len() == best);
    out.sort();
    out.dedup();
    out
}

#[test]
fn identical_and_disjoint_lengths() {
    assert_eq!(lcs_length(&toks("a b c"), &toks("a b c")), 3);
    assert_eq!(lcs_length(&toks("a b c"), &toks("x y z")), 0);
    assert_eq!(lcs_length::<&str>(&[], &toks("x")), 0);
}

#[test]
fn classic_pair_matches_enumeration() {
    let a: Vec<char> = "ABCBDAB".chars().collect();
    let b: Vec<char> = "BDCABA".chars().collect();
    assert_eq!(brute_length(&a, &b), 4);
    assert_eq!(lcs_length(&a, &b), 4);
}

#[test]
fn table_one_labels() {
    let mt = toks("Ich esse einen Hamburger");
    let pe = toks("Ich hatte gestern einen Kuchen gegessen");
    assert_eq!(lcs_labels(&mt, &pe).labels, vec![1, 0, 1, 0]);
}

#[test]
fn identical_pair_is_all_ones() {
    let mt = toks("x y x z");
    assert_eq!(lcs_labels(&mt, &mt).labels, vec![1; 4]);
}

#[test]
fn ambiguous_pair_follows_the_backtrace_rule() {
    let mt = toks("a b a");
    let pe = toks("a a");
    let labels = lcs_labels(&mt, &pe);
    assert_eq!(labels.labels, vec![1, 0, 1]);
    let chosen: Vec<usize> = (0..3).filter(|&i| labels.labels[i] == 1).collect();
    assert_eq!(all_alignments(&mt, &pe), vec![chosen]);
}

#[test]
fn union_covers_every_maximal_alignment() {
    let mt = toks("a b a b");
    let pe = toks("a b");
    let single = lcs_labels(&mt, &pe);
    let union = lcs_labels_union(&mt, &pe);
    let mut want = vec![0u8; mt.len()];
    for a in all_alignments(&mt, &pe) {
        for i in a {
            want[i] = 1;
        }
    }
    assert_eq!(union.labels, want);
    assert_eq!(single.ones(), 2);
    assert!(union.ones() > single.ones());
}

#[test]
fn copy_rate_extremes() {
    let same = [toks("a b"), toks("c")];
    let pairs = same.iter().map(|s| (s.as_slice(), s.as_slice()));
    assert_eq!(corpus_copy_rate(pairs).unwrap(), 1.0);
    let mt = [toks("a b")];
    let pe = [toks("c d")];
    let pairs = mt.iter().zip(&pe).map(|(m, p)| (m.as_slice(), p.as_slice()));
    assert_eq!(corpus_copy_rate(pairs).unwrap(), 0.0);
    let none: Vec<(&[&str], &[&str])> = Vec::new();
    assert!(matches!(corpus_copy_rate(none), Err(Error::Contract(_))));
}

#[test]
fn label_mode_parses() {
    assert_eq!("union".parse::<LabelMode>().unwrap(), LabelMode::Union);
    assert!("other".parse::<LabelMode>().is_err());
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..4, 0..9)
}

proptest! {
    #[test]
    fn label_sum_is_the_lcs_length(mt in seq(), pe in seq()) {
        let labels = lcs_labels(&mt, &pe);
        prop_assert_eq!(labels.len(), mt.len());
        prop_assert_eq!(labels.ones(), lcs_length(&mt, &pe));
        prop_assert_eq!(lcs_length(&mt, &pe), brute_length(&mt, &pe));
    }

    #[test]
    fn labelled_tokens_form_a_common_subsequence(mt in seq(), pe in seq()) {
        let labels = lcs_labels(&mt, &pe);
        let picked: Vec<u8> = mt.iter().zip(&labels.labels).filter(|(_, &l)| l == 1).map(|(&t, _)| t).collect();
        prop_assert!(is_subsequence(&picked, &pe));
        for t in &picked {
            prop_assert!(pe.contains(t));
        }
    }

    #[test]
    fn union_contains_the_backtrace(mt in seq(), pe in seq()) {
        let single = lcs_labels(&mt, &pe);
        let union = lcs_labels_union(&mt, &pe);
        for (s, u) in single.labels.iter().zip(&union.labels) {
            prop_assert!(s <= u);
        }
    }

    #[test]
    fn reused_table_agrees_with_fresh_calls(pairs in proptest::collection::vec((seq(), seq()), 1..6)) {
        let mut table = LcsTable::new();
        let mut out = Vec::new();
        for (a, b) in &pairs {
            table.labels_into(a, b, &mut out);
            prop_assert_eq!(&out, &lcs_labels(a, b).labels);
        }
    }
}
