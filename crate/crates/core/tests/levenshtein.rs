use g2p_core::evaluation::{char_accuracy_with, levenshtein, Denominator};

fn oracle(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => (oracle(ra, rb) + usize::from(x != y))
            .min(oracle(ra, b) + 1)
            .min(oracle(a, rb) + 1),
    }
}

fn all_words(max_len: usize, symbols: u8) -> Vec<Vec<u8>> {
    let mut words = vec![Vec::new()];
    let mut last = words.clone();
    for _ in 0..max_len {
        last = last
            .iter()
            .flat_map(|w| (0..symbols).map(move |c| [w.as_slice(), &[c]].concat()))
            .collect();
        words.extend(last.iter().cloned());
    }
    words
}

#[test]
fn matches_recursive_definition_exhaustively() {
    let words = all_words(4, 3);
    assert_eq!(words.len(), 121);
    for a in &words {
        for b in &words {
            assert_eq!(levenshtein(a, b), oracle(a, b), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn metric_properties_hold_exhaustively() {
    let words = all_words(3, 3);
    for a in &words {
        for b in &words {
            let d = levenshtein(a, b);
            assert_eq!(d, levenshtein(b, a));
            assert_eq!(d == 0, a == b);
            assert!(d >= a.len().abs_diff(b.len()) && d <= a.len().max(b.len()));
            for c in &words {
                assert!(levenshtein(a, c) <= d + levenshtein(b, c));
            }
        }
    }
}

#[test]
fn positional_accuracy_is_bounded() {
    let words = all_words(3, 2);
    let s = |w: &[u8]| w.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    for a in &words {
        for b in &words {
            let (pa, pb) = (s(a), s(b));
            let max = char_accuracy_with(&pa, &pb, Denominator::Max);
            let gold = char_accuracy_with(&pa, &pb, Denominator::Gold);
            assert!((0.0..=1.0).contains(&max));
            assert!(max <= gold || b.is_empty());
            assert_eq!(max == 1.0, a == b);
        }
    }
}
