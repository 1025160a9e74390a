use std::collections::HashMap;

use crate::{Error, Result};

fn counts(ids: &[usize]) -> HashMap<usize, usize> {
    let mut m = HashMap::new();
    for &i in ids {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

// Summing sorted terms makes the result independent of argument order.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Plug-in entropy in nats.
pub fn entropy(ids: &[usize]) -> f64 {
    let n = ids.len() as f64;
    let h = stable_sum(
        counts(ids)
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .collect(),
    );
    h.max(0.0)
}

/// Plug-in mutual information in nats of two aligned id sequences.
///
/// Clamped to `[0, min(H(a), H(b))]` against rounding.
pub fn discrete_mi(ids_a: &[usize], ids_b: &[usize]) -> Result<f64> {
    if ids_a.len() != ids_b.len() {
        return Err(Error::ShapeMismatch {
            context: "mutual information id sequences",
            expected: ids_a.len().to_string(),
            got: ids_b.len().to_string(),
        });
    }
    if ids_a.is_empty() {
        return Err(Error::EmptyInput("mutual information id sequences"));
    }
    let n = ids_a.len() as f64;
    let (ca, cb) = (counts(ids_a), counts(ids_b));
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&a, &b) in ids_a.iter().zip(ids_b) {
        *joint.entry((a, b)).or_insert(0) += 1;
    }
    let terms = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let c = c as f64;
            let (pa, pb) = (ca[&a] as f64, cb[&b] as f64);
            c / n * (c * n / (pa * pb)).ln()
        })
        .collect();
    let mi = stable_sum(terms);
    Ok(mi.clamp(0.0, entropy(ids_a).min(entropy(ids_b))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Expands a joint count table into aligned id sequences.
    fn from_table(table: &[&[usize]]) -> (Vec<usize>, Vec<usize>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, row) in table.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    a.push(i);
                    b.push(j);
                }
            }
        }
        (a, b)
    }

    #[test]
    fn closed_form_tables() {
        let ln = f64::ln;
        let cases: Vec<(Vec<&[usize]>, f64)> = vec![
            (vec![&[1, 0], &[0, 1]], ln(2.0)),
            (vec![&[1, 0, 0, 0], &[0, 1, 0, 0], &[0, 0, 1, 0], &[0, 0, 0, 1]], ln(4.0)),
            (vec![&[1, 1], &[1, 1]], 0.0),
            (vec![&[5], &[3], &[2]], 0.0),
            (vec![&[2, 0], &[0, 1]], ln(3.0) - 2.0 / 3.0 * ln(2.0)),
            (vec![&[1, 1], &[0, 2]], 1.5 * ln(2.0) - 0.75 * ln(3.0)),
            (vec![&[0, 0, 4], &[4, 0, 0], &[0, 4, 0]], ln(3.0)),
            (vec![&[1, 0], &[0, 1], &[1, 0], &[0, 1]], ln(2.0)),
            (vec![&[3, 1], &[1, 3]], 0.75 * ln(3.0) - ln(2.0)),
            (vec![&[2, 2, 0], &[0, 0, 4]], ln(2.0)),
        ];
        for (table, expected) in cases {
            let (a, b) = from_table(&table);
            let got = discrete_mi(&a, &b).unwrap();
            assert!((got - expected).abs() < 1e-9, "{table:?}: {got} vs {expected}");
        }
    }

    #[test]
    fn constant_and_errors() {
        assert_eq!(discrete_mi(&[0, 1, 2, 3], &[7, 7, 7, 7]).unwrap(), 0.0);
        assert!(discrete_mi(&[0, 1], &[0]).is_err());
        assert!(discrete_mi(&[], &[]).is_err());
    }

    #[test]
    fn independent_uniform_ids_are_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let mi = discrete_mi(&a, &b).unwrap();
        // Plug-in bias is about (k-1)^2 / (2n) = 4e-4.
        assert!(mi < 0.01, "{mi}");
    }

    #[test]
    fn permuted_partner_averages_to_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<usize> = (0..5000).map(|_| rng.random_range(0..5)).collect();
        let mut total = 0.0;
        for _ in 0..20 {
            let mut b = a.clone();
            for i in (1..b.len()).rev() {
                b.swap(i, rng.random_range(0..=i));
            }
            total += discrete_mi(&a, &b).unwrap();
        }
        assert!(total / 20.0 < 16.0 / 10_000.0 * 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn symmetric_and_bounded(
            pairs in proptest::collection::vec((0usize..10, 0usize..10), 1..300)
        ) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let ab = discrete_mi(&a, &b).unwrap();
            let ba = discrete_mi(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= 10f64.ln() + 1e-12);
        }
    }
}
