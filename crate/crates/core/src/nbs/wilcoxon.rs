use crate::error::{Error, Result};

/// Scaled Wilcoxon rank-sum statistic `U / (N₀N₁)`: the fraction of
/// (treated, control) pairs with `B₁ > B₀`, ties counting ½.
///
/// Midranks are accumulated as doubled integers so the result is exactly
/// `2·concordant_pairs / (2·N₀N₁)` without rounding in between.
pub fn wilcoxon_nbs(treated: &[f64], control: &[f64]) -> Result<f64> {
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Config("wilcoxon_nbs needs both arms non-empty".into()));
    }
    if treated.iter().chain(control).any(|v| v.is_nan()) {
        return Err(Error::Config("wilcoxon_nbs: NaN net benefit".into()));
    }
    let n1 = treated.len() as u128;
    let n0 = control.len() as u128;
    let mut pooled: Vec<(f64, bool)> = treated
        .iter()
        .map(|&v| (v, true))
        .chain(control.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Σ over treated of 2·midrank; a tie block at 1-based positions
    // first..=last has doubled midrank first + last.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let treated_in_block = pooled[i..=j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += treated_in_block * (i as u128 + 1 + j as u128 + 1);
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(twice_u as f64 / (2 * n0 * n1) as f64)
}

/// Pairwise concordance fraction by enumeration.
pub fn brute_force_nbs(treated: &[f64], control: &[f64]) -> f64 {
    let mut twice = 0u128;
    for &b1 in treated {
        for &b0 in control {
            twice += if b1 > b0 {
                2
            } else if b1 == b0 {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * treated.len() as u128 * control.len() as u128) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(wilcoxon_nbs(&[3.0, 5.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(wilcoxon_nbs(&[1.0, 4.0], &[2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(wilcoxon_nbs(&[7.0], &[7.0]).unwrap(), 0.5);
        assert!(wilcoxon_nbs(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn equals_pairwise_count(t in proptest::collection::vec(0i32..8, 1..50), c in proptest::collection::vec(0i32..8, 1..50)) {
            let t: Vec<f64> = t.into_iter().map(f64::from).collect();
            let c: Vec<f64> = c.into_iter().map(f64::from).collect();
            prop_assert_eq!(wilcoxon_nbs(&t, &c).unwrap(), brute_force_nbs(&t, &c));
            let sum = wilcoxon_nbs(&t, &c).unwrap() + wilcoxon_nbs(&c, &t).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-15);
        }

        #[test]
        fn invariant_under_monotone_transform(t in proptest::collection::vec(-5.0f64..5.0, 1..40), c in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let a = wilcoxon_nbs(&t, &c).unwrap();
            let b = wilcoxon_nbs(&t.iter().map(f).collect::<Vec<_>>(), &c.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
