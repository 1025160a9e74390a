use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Factor, FactorSet};
use crate::{Error, Result};

/// Result of one random factor substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct RFSOutcome {
    pub substituted_factor: Factor,
    pub z_prime: FactorSet,
}

/// Factor chosen uniformly by `seed`.
pub fn rfs_choice(seed: u64) -> Factor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Factor::ALL[rng.random_range(0..Factor::ALL.len())]
}

/// Replaces one uniformly chosen factor of `z1` with the matching factor of `z2`.
pub fn rfs(z1: &FactorSet, z2: &FactorSet, seed: u64) -> Result<RFSOutcome> {
    if !z1.same_shape(z2) {
        return Err(Error::ConfigMismatch(
            "factor sets differ in shape; reconcile lengths before substitution".into(),
        ));
    }
    let f = rfs_choice(seed);
    Ok(RFSOutcome {
        substituted_factor: f,
        z_prime: z1.with_factor(f, z2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mat;
    use proptest::prelude::*;

    fn set(v: f64) -> FactorSet {
        FactorSet {
            rhythm: Mat::from_elem((3, 2), v),
            pitch: Mat::from_elem((3, 4), v + 1.0),
            content: Mat::from_elem((3, 8), v + 2.0),
            timbre: Mat::from_elem((1, 16), v + 3.0),
            frames: 24,
        }
    }

    #[test]
    fn pitch_substitution_keeps_the_others() {
        let (a, b) = (set(0.0), set(10.0));
        let seed = (0..).find(|&s| rfs_choice(s) == Factor::Pitch).unwrap();
        let out = rfs(&a, &b, seed).unwrap();
        assert_eq!(out.substituted_factor, Factor::Pitch);
        assert_eq!(out.z_prime.rhythm, a.rhythm);
        assert_eq!(out.z_prime.pitch, b.pitch);
        assert_eq!(out.z_prime.content, a.content);
        assert_eq!(out.z_prime.timbre, a.timbre);
    }

    #[test]
    fn uniform_choice_within_binomial_bounds() {
        let mut counts = [0usize; 4];
        for s in 0..4000 {
            counts[rfs_choice(s) as usize] += 1;
        }
        for c in counts {
            assert!((900..=1100).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut b = set(1.0);
        b.content = Mat::zeros((4, 8));
        assert!(matches!(rfs(&set(0.0), &b, 0), Err(Error::ConfigMismatch(_))));
    }

    proptest! {
        #[test]
        fn exactly_one_factor_changes(seed in any::<u64>()) {
            let (a, b) = (set(0.0), set(10.0));
            let out = rfs(&a, &b, seed).unwrap();
            prop_assert_eq!(out.clone(), rfs(&a, &b, seed).unwrap());
            for f in Factor::ALL {
                let want = if f == out.substituted_factor { &b } else { &a };
                prop_assert_eq!(out.z_prime.get(f), want.get(f));
            }
            prop_assert_eq!(rfs(&a, &a, seed).unwrap().z_prime, a);
        }
    }
}
