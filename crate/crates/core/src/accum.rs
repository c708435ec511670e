//! Exact roots of backlog accumulation curves `A(t) = Σ rate·max(0, t − d)`.
//!
//! These curves are continuous, nondecreasing and piecewise linear with
//! breakpoints at the deadlines, so the first crossing of a level is found by
//! walking the sorted deadlines and interpolating inside one segment.

use crate::ratio::Ratio;

/// `A(t)` for the given `(deadline, rate)` terms.
pub fn accumulation_at(terms: &[(Ratio, Ratio)], t: &Ratio) -> Ratio {
    terms
        .iter()
        .filter(|(d, _)| d < t)
        .map(|(d, rate)| rate * &(t - d))
        .sum()
}

/// Smallest `t` with `A(t) = level`, for `level > 0`. `None` when the curve
/// levels off below `level` (every rate zero, or no terms).
pub fn first_reach(terms: &[(Ratio, Ratio)], level: &Ratio) -> Option<Ratio> {
    assert!(level.is_positive(), "first_reach needs a positive level");
    let mut sorted: Vec<&(Ratio, Ratio)> = terms.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut value = Ratio::zero();
    let mut slope = Ratio::zero();
    let mut i = 0;
    while i < sorted.len() {
        let at = &sorted[i].0;
        while i < sorted.len() && &sorted[i].0 == at {
            slope += &sorted[i].1;
            i += 1;
        }
        let next = sorted.get(i).map(|p| &p.0);
        if slope.is_positive() {
            let root = at + &((level - &value) / &slope);
            if next.is_none_or(|n| &root <= n) {
                return Some(root);
            }
        }
        if let Some(n) = next {
            value += &slope * &(n - at);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::r;
    use proptest::prelude::*;

    fn unit(ds: &[i64]) -> Vec<(Ratio, Ratio)> {
        ds.iter().map(|d| (r(*d, 1), r(1, 1))).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(first_reach(&unit(&[0]), &r(1, 1)), Some(r(1, 1)));
        assert_eq!(first_reach(&unit(&[0, 0]), &r(1, 1)), Some(r(1, 2)));
        assert_eq!(first_reach(&unit(&[0, 2]), &r(3, 1)), Some(r(5, 2)));
        assert_eq!(first_reach(&unit(&[0, 1]), &r(3, 1)), Some(r(2, 1)));
        assert_eq!(first_reach(&unit(&[5]), &r(2, 1)), Some(r(7, 1)));
        assert_eq!(first_reach(&[(r(0, 1), r(0, 1))], &r(1, 1)), None);
        assert_eq!(first_reach(&[], &r(1, 1)), None);
    }

    proptest! {
        #[test]
        fn root_hits_level_and_is_first(
            ds in proptest::collection::vec((0i64..20, 0i64..4), 1..6),
            level in 1i64..30,
        ) {
            let terms: Vec<_> = ds.iter().map(|(d, b)| (r(*d, 2), r(*b, 1))).collect();
            let level = r(level, 3);
            match first_reach(&terms, &level) {
                Some(t) => {
                    prop_assert_eq!(accumulation_at(&terms, &t), level.clone());
                    let earlier = &t - &r(1, 1000);
                    prop_assert!(accumulation_at(&terms, &earlier) < level);
                }
                None => prop_assert!(terms.iter().all(|(_, b)| b.is_zero())),
            }
        }
    }
}
