use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Where a target came from. Features are always real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Pseudo,
}

/// Epoch-level ordering of real and pseudo items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoiMode {
    #[serde(rename = "rf")]
    RealFirst,
    #[serde(rename = "pf")]
    PseudoFirst,
    #[default]
    #[serde(rename = "random")]
    Random,
}

impl VoiMode {
    pub const ALL: [VoiMode; 3] = [VoiMode::RealFirst, VoiMode::PseudoFirst, VoiMode::Random];

    pub fn name(self) -> &'static str {
        match self {
            VoiMode::RealFirst => "RF",
            VoiMode::PseudoFirst => "PF",
            VoiMode::Random => "random",
        }
    }
}

/// Orders item indices `0..provenance.len()` for one epoch and chunks the
/// stream into batches. Batches at the real/pseudo boundary may mix.
pub fn compose_epoch(
    provenance: &[Provenance],
    mode: VoiMode,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch_size must be at least 1".into()));
    }
    if provenance.is_empty() {
        return Err(DataError::Invalid("no items to compose".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match mode {
        VoiMode::Random => {
            let mut all: Vec<usize> = (0..provenance.len()).collect();
            all.shuffle(&mut rng);
            all
        }
        VoiMode::RealFirst | VoiMode::PseudoFirst => {
            let pick = |p: Provenance| -> Vec<usize> {
                (0..provenance.len()).filter(|&i| provenance[i] == p).collect()
            };
            let (mut first, mut second) = if mode == VoiMode::RealFirst {
                (pick(Provenance::Real), pick(Provenance::Pseudo))
            } else {
                (pick(Provenance::Pseudo), pick(Provenance::Real))
            };
            first.shuffle(&mut rng);
            second.shuffle(&mut rng);
            first.extend(second);
            first
        }
    };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Item pools for the mixed-batch baseline path, with per-batch shares.
#[derive(Clone, Debug, Default)]
pub struct StratifiedPools {
    pub strong: Vec<usize>,
    pub weak: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Builds `n_batches` batches, each drawing `shares[k]` items from pool `k`.
/// Each pool is cycled through seeded reshuffles on its own RNG stream, so a
/// pool's draw sequence does not depend on the other pools. Empty pools
/// contribute nothing.
pub fn compose_stratified(
    pools: &StratifiedPools,
    shares: [usize; 3],
    n_batches: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let lists = [&pools.strong, &pools.weak, &pools.unlabeled];
    if lists.iter().zip(shares).all(|(l, s)| l.is_empty() || s == 0) {
        return Err(DataError::Invalid("no items to compose".into()));
    }
    let mut batches = vec![Vec::new(); n_batches];
    for (k, (pool, share)) in lists.into_iter().zip(shares).enumerate() {
        if pool.is_empty() || share == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let mut deck: Vec<usize> = Vec::new();
        for batch in batches.iter_mut() {
            for _ in 0..share {
                if deck.is_empty() {
                    deck = pool.clone();
                    deck.shuffle(&mut rng);
                    deck.reverse();
                }
                batch.push(deck.pop().expect("refilled"));
            }
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prov(bits: &[bool]) -> Vec<Provenance> {
        bits.iter().map(|&p| if p { Provenance::Pseudo } else { Provenance::Real }).collect()
    }

    #[test]
    fn real_first_small_example() {
        let p = prov(&[true, false, true, false]);
        let flat: Vec<usize> = compose_epoch(&p, VoiMode::RealFirst, 3, 5).unwrap().concat();
        assert!(flat[..2].iter().all(|&i| p[i] == Provenance::Real));
        assert!(flat[2..].iter().all(|&i| p[i] == Provenance::Pseudo));
    }

    #[test]
    fn errors() {
        assert!(compose_epoch(&[], VoiMode::Random, 2, 0).is_err());
        assert!(compose_epoch(&prov(&[true]), VoiMode::Random, 0, 0).is_err());
    }

    #[test]
    fn random_is_deterministic() {
        let p = prov(&[true, false, true, false, false, true, true]);
        assert_eq!(
            compose_epoch(&p, VoiMode::Random, 2, 42).unwrap(),
            compose_epoch(&p, VoiMode::Random, 2, 42).unwrap()
        );
    }

    #[test]
    fn stratified_pools_are_independent_streams() {
        let full = StratifiedPools { strong: (0..5).collect(), weak: (5..12).collect(), unlabeled: (12..40).collect() };
        let no_u = StratifiedPools { unlabeled: vec![], ..full.clone() };
        let a = compose_stratified(&full, [2, 2, 4], 9, 3).unwrap();
        let b = compose_stratified(&no_u, [2, 2, 4], 9, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.len(), 8);
            assert_eq!(&x[..4], &y[..]);
        }
        // Every strong item appears before any repeats.
        let strong_seq: Vec<usize> = a.iter().flat_map(|b| b[..2].to_vec()).collect();
        let mut first5 = strong_seq[..5].to_vec();
        first5.sort();
        assert_eq!(first5, vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn compose_is_an_ordered_permutation(
            bits in proptest::collection::vec(any::<bool>(), 1..40),
            batch in 1usize..9,
            seed in any::<u64>(),
        ) {
            let p = prov(&bits);
            for mode in VoiMode::ALL {
                let batches = compose_epoch(&p, mode, batch, seed).unwrap();
                prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
                let flat: Vec<usize> = batches.concat();
                let mut sorted = flat.clone();
                sorted.sort();
                prop_assert_eq!(sorted, (0..p.len()).collect::<Vec<_>>());
                let first_pseudo = flat.iter().position(|&i| p[i] == Provenance::Pseudo);
                let last_real = flat.iter().rposition(|&i| p[i] == Provenance::Real);
                let first_real = flat.iter().position(|&i| p[i] == Provenance::Real);
                let last_pseudo = flat.iter().rposition(|&i| p[i] == Provenance::Pseudo);
                match mode {
                    VoiMode::RealFirst => if let (Some(a), Some(b)) = (last_real, first_pseudo) { prop_assert!(a < b) },
                    VoiMode::PseudoFirst => if let (Some(a), Some(b)) = (last_pseudo, first_real) { prop_assert!(a < b) },
                    VoiMode::Random => {}
                }
            }
        }
    }
}
