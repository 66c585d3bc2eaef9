//! Signal augmentations used for pseudo-label voting and class rebalancing:
//! flipping (time reversal), random zeroing of one contiguous segment, and
//! cyclic shifting.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concrete augmentation with its drawn parameters, recorded so a ballot
/// or duplicate can be audited later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AugmentationKind {
    Flip,
    RandomZero { start: usize, len: usize },
    CyclicShift { offset: usize },
}

impl AugmentationKind {
    pub fn tag(&self) -> &'static str {
        match self {
            AugmentationKind::Flip => "flip",
            AugmentationKind::RandomZero { .. } => "random_zero",
            AugmentationKind::CyclicShift { .. } => "cyclic_shift",
        }
    }
}

/// Settings shared by every augmentation call site.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    /// Fraction of the window zeroed by `random_zero`.
    pub zero_fraction: f64,
    /// Interpret "flip" as amplitude negation rather than time reversal.
    pub flip_negate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            zero_fraction: 0.1,
            flip_negate: false,
        }
    }
}

/// One sample together with its augmented variants, in the fixed order
/// flip, random_zero, cyclic_shift.
#[derive(Debug, Clone)]
pub struct AugmentedSet {
    pub original: Array1<f64>,
    pub variants: Vec<(AugmentationKind, Array1<f64>)>,
}

impl AugmentedSet {
    /// Number of ballots this set contributes: original + variants.
    pub fn ballot_count(&self) -> usize {
        1 + self.variants.len()
    }
}

/// Time reversal.
pub fn flip(x: &Array1<f64>) -> Array1<f64> {
    let mut y = x.clone();
    y.as_slice_mut().expect("contiguous").reverse();
    y
}

/// Amplitude negation, the alternative flip interpretation.
pub fn negate(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| -v)
}

fn flip_variant(x: &Array1<f64>, cfg: &AugmentConfig) -> Array1<f64> {
    if cfg.flip_negate {
        negate(x)
    } else {
        flip(x)
    }
}

/// Zeroes one contiguous segment of length `round(fraction * len)` at an
/// RNG-chosen start. Returns the variant and the start index.
pub fn random_zero(
    x: &Array1<f64>,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Array1<f64>, usize, usize)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "zero fraction {fraction} outside (0,1)"
        )));
    }
    let len = x.len();
    let seg = (fraction * len as f64).round() as usize;
    let start = if seg >= len {
        0
    } else {
        rng.random_range(0..=(len - seg))
    };
    let mut y = x.clone();
    for i in start..(start + seg).min(len) {
        y[i] = 0.0;
    }
    Ok((y, start, seg))
}

/// `out[i] = x[(i - offset) mod len]`.
pub fn cyclic_shift(x: &Array1<f64>, offset: usize) -> Result<Array1<f64>> {
    let len = x.len();
    if offset >= len {
        return Err(Error::Config(format!(
            "shift offset {offset} out of range [0,{len})"
        )));
    }
    let mut y = Array1::zeros(len);
    for i in 0..len {
        y[i] = x[(i + len - offset) % len];
    }
    Ok(y)
}

/// Original plus the three voting variants.
pub fn build_augmented_set(
    x: &Array1<f64>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AugmentedSet> {
    let len = x.len();
    let flipped = flip_variant(x, cfg);
    let (zeroed, start, seg) = random_zero(x, cfg.zero_fraction, rng)?;
    let offset = rng.random_range(1..len);
    let shifted = cyclic_shift(x, offset)?;
    Ok(AugmentedSet {
        original: x.clone(),
        variants: vec![
            (AugmentationKind::Flip, flipped),
            (AugmentationKind::RandomZero { start, len: seg }, zeroed),
            (AugmentationKind::CyclicShift { offset }, shifted),
        ],
    })
}

/// One uniformly chosen augmentation, for rebalancing duplicates.
pub fn random_augment(
    x: &Array1<f64>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(AugmentationKind, Array1<f64>)> {
    match rng.random_range(0..3u8) {
        0 => Ok((AugmentationKind::Flip, flip_variant(x, cfg))),
        1 => {
            let (y, start, seg) = random_zero(x, cfg.zero_fraction, rng)?;
            Ok((AugmentationKind::RandomZero { start, len: seg }, y))
        }
        _ => {
            let offset = rng.random_range(1..x.len());
            Ok((AugmentationKind::CyclicShift { offset }, cyclic_shift(x, offset)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_reverses() {
        assert_eq!(
            flip(&arr1(&[1.0, 2.0, 3.0])).to_vec(),
            vec![3.0, 2.0, 1.0]
        );
    }

    #[test]
    fn flip_palindrome_unchanged() {
        let x = arr1(&[1.0, 2.0, 1.0]);
        assert_eq!(flip(&x), x);
    }

    #[test]
    fn random_zero_known_segment() {
        // L=4, fraction 0.5: segment of 2 zeros
        let x = arr1(&[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, start, seg) = random_zero(&x, 0.5, &mut rng).unwrap();
        assert_eq!(seg, 2);
        for i in 0..4 {
            if i >= start && i < start + 2 {
                assert_eq!(y[i], 0.0);
            } else {
                assert_eq!(y[i], x[i]);
            }
        }
    }

    #[test]
    fn random_zero_rejects_bad_fraction() {
        let x = arr1(&[1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_zero(&x, 0.0, &mut rng).is_err());
        assert!(random_zero(&x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn random_zero_is_seeded() {
        let x = Array1::linspace(1.0, 64.0, 64);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            random_zero(&x, 0.1, &mut r1).unwrap().0,
            random_zero(&x, 0.1, &mut r2).unwrap().0
        );
    }

    #[test]
    fn cyclic_shift_by_one() {
        let x = arr1(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            cyclic_shift(&x, 1).unwrap().to_vec(),
            vec![4.0, 1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn cyclic_shift_zero_is_identity() {
        let x = arr1(&[1.0, 2.0, 3.0]);
        assert_eq!(cyclic_shift(&x, 0).unwrap(), x);
    }

    #[test]
    fn cyclic_shift_rejects_out_of_range() {
        let x = arr1(&[1.0, 2.0]);
        assert!(cyclic_shift(&x, 2).is_err());
    }

    #[test]
    fn augmented_set_has_four_ballots_in_fixed_order() {
        let x = Array1::linspace(-1.0, 1.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = build_augmented_set(&x, &AugmentConfig::default(), &mut rng).unwrap();
        assert_eq!(set.ballot_count(), 4);
        assert_eq!(set.variants[0].0.tag(), "flip");
        assert_eq!(set.variants[1].0.tag(), "random_zero");
        assert_eq!(set.variants[2].0.tag(), "cyclic_shift");
    }

    #[test]
    fn constant_zero_waveform_is_degenerate() {
        let x = Array1::zeros(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = build_augmented_set(&x, &AugmentConfig::default(), &mut rng).unwrap();
        for (_, v) in &set.variants {
            assert_eq!(v, &x);
        }
    }

    proptest! {
        #[test]
        fn flip_is_involution(v in proptest::collection::vec(-1e3f64..1e3, 1..128)) {
            let x = Array1::from_vec(v);
            prop_assert_eq!(flip(&flip(&x)), x);
        }

        #[test]
        fn shift_then_complement_is_identity(
            v in proptest::collection::vec(-1e3f64..1e3, 2..128),
            a in 1usize..64,
        ) {
            let x = Array1::from_vec(v);
            let a = a % x.len();
            let y = cyclic_shift(&cyclic_shift(&x, a).unwrap(), (x.len() - a) % x.len()).unwrap();
            prop_assert_eq!(y, x);
        }

        #[test]
        fn flip_and_shift_preserve_value_multiset(
            v in proptest::collection::vec(-1e3f64..1e3, 2..64),
            a in 0usize..32,
        ) {
            let x = Array1::from_vec(v);
            let a = a % x.len();
            let mut base: Vec<u64> = x.iter().map(|f| f.to_bits()).collect();
            base.sort_unstable();
            for y in [flip(&x), cyclic_shift(&x, a).unwrap()] {
                let mut got: Vec<u64> = y.iter().map(|f| f.to_bits()).collect();
                got.sort_unstable();
                prop_assert_eq!(&got, &base);
            }
        }

        #[test]
        fn random_zero_touches_expected_count(
            v in proptest::collection::vec(0.5f64..2.0, 8..96),
            frac in 0.05f64..0.9,
            seed in 0u64..1000,
        ) {
            // inputs are strictly positive so introduced zeros are countable
            let x = Array1::from_vec(v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, _, seg) = random_zero(&x, frac, &mut rng).unwrap();
            let expect = (frac * x.len() as f64).round() as usize;
            prop_assert_eq!(seg, expect.min(x.len()));
            let zeros = y.iter().filter(|&&e| e == 0.0).count();
            prop_assert_eq!(zeros, seg.min(x.len()));
            // changes at most ceil(frac*L) positions
            let changed = y.iter().zip(x.iter()).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= (frac * x.len() as f64).ceil() as usize);
        }
    }
}
