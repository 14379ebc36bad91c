use itertools::Itertools;

use crate::error::{Error, Result};

/// Largest component count for which exhaustive alignment is attempted.
pub const MAX_ALIGN: usize = 6;

/// Permutation `π` (learned index → true index) maximizing
/// `Σ_j scores[j][π(j)]`, lexicographically smallest on ties.
pub fn align(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let m = scores.len();
    if m == 0 || m > MAX_ALIGN {
        return Err(Error::Input(format!("alignment supports 1..={MAX_ALIGN} components, got {m}")));
    }
    if scores.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("alignment needs a square score matrix".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    // permutations of a sorted range come out in lexicographic order
    for perm in (0..m).permutations(m) {
        let s: f64 = perm.iter().enumerate().map(|(j, &k)| scores[j][k]).sum();
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, perm));
        }
    }
    Ok(best.expect("m >= 1").1)
}

/// `counts[learned][true]` pooled over all `(assignments, origins)` pairs.
pub fn confusion(pairs: &[(&[usize], &[usize])], m: usize) -> Result<Vec<Vec<f64>>> {
    let mut c = vec![vec![0.0; m]; m];
    for (a, o) in pairs {
        if a.len() != o.len() {
            return Err(Error::Shape(format!("{} assignments for {} origins", a.len(), o.len())));
        }
        for (&s, &t) in a.iter().zip(o.iter()) {
            if s >= m || t >= m {
                return Err(Error::Input(format!("index out of range for {m} components")));
            }
            c[s][t] += 1.0;
        }
    }
    Ok(c)
}

/// Reorders a learned-index vector into true-index order.
pub fn apply_alignment(values: &[f64], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (j, &k) in perm.iter().enumerate() {
        out[k] = values[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_swap() {
        assert_eq!(align(&[vec![9.0, 1.0], vec![2.0, 8.0]]).unwrap(), vec![0, 1]);
        assert_eq!(align(&[vec![1.0, 9.0], vec![8.0, 2.0]]).unwrap(), vec![1, 0]);
        assert_eq!(align(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), vec![0, 1]);
        assert!(align(&vec![vec![0.0; 7]; 7]).is_err());
    }

    #[test]
    fn aligned_vector_lands_in_true_slots() {
        assert_eq!(apply_alignment(&[0.2, 0.8], &[1, 0]), vec![0.8, 0.2]);
    }

    fn all_perms(m: usize) -> Vec<Vec<usize>> {
        // Heap-free recursive enumeration, then sorted
        fn go(prefix: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == m {
                out.push(prefix.clone());
                return;
            }
            for k in 0..m {
                if !prefix.contains(&k) {
                    prefix.push(k);
                    go(prefix, m, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::new(), m, &mut out);
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(m in 1usize..=4, cells in proptest::collection::vec(0u8..4, 16)) {
            let scores: Vec<Vec<f64>> = (0..m).map(|j| (0..m).map(|k| cells[j * 4 + k] as f64).collect()).collect();
            let perms = all_perms(m);
            let value = |p: &Vec<usize>| p.iter().enumerate().map(|(j, &k)| scores[j][k]).sum::<f64>();
            let top = perms.iter().map(value).fold(f64::NEG_INFINITY, f64::max);
            let want = perms.iter().find(|p| value(p) == top).unwrap().clone();
            prop_assert_eq!(align(&scores).unwrap(), want);
        }
    }
}
