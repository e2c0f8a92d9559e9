use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::{Gender, Identity, Manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Manifest,
    pub valid: Manifest,
    pub test: Manifest,
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: [usize; 3] = [raw[0].floor() as usize, raw[1].floor() as usize, raw[2].floor() as usize];
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Identity-disjoint train/valid/test split.
///
/// Identities are shuffled within each gender and interleaved, so the small
/// evaluation splits receive both genders whenever they hold two or more
/// identities.
pub fn split_dataset(manifest: &Manifest, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let identities = manifest.identities();
    let counts = apportion(identities.len(), f);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Insufficient(format!(
            "{} split would receive zero identities ({} identities, fractions {fractions:?})",
            ["train", "valid", "test"][i],
            identities.len()
        )));
    }

    let mut rng = substream(seed, &["split"]);
    let mut by_gender: [Vec<&Identity>; 2] = [
        identities.iter().filter(|i| i.gender == Gender::A).collect(),
        identities.iter().filter(|i| i.gender == Gender::B).collect(),
    ];
    by_gender[0].shuffle(&mut rng);
    by_gender[1].shuffle(&mut rng);
    let first = usize::from(rng.gen::<bool>());
    let mut interleaved = Vec::with_capacity(identities.len());
    let (mut a, mut b) = (by_gender[first].iter(), by_gender[1 - first].iter());
    loop {
        let x = a.next();
        let y = b.next();
        if x.is_none() && y.is_none() {
            break;
        }
        interleaved.extend(x.map(|i| i.id.clone()));
        interleaved.extend(y.map(|i| i.id.clone()));
    }

    // Evaluation splits draw first so they get the gender-balanced prefix.
    let test: HashSet<String> = interleaved[..counts[2]].iter().cloned().collect();
    let valid: HashSet<String> = interleaved[counts[2]..counts[2] + counts[1]].iter().cloned().collect();
    let train: HashSet<String> = interleaved[counts[2] + counts[1]..].iter().cloned().collect();
    Ok(Splits {
        train: manifest.filter_identities(&train),
        valid: manifest.filter_identities(&valid),
        test: manifest.filter_identities(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_manifest, ManifestEntry};
    use proptest::prelude::*;

    fn manifest(n_ids: usize, per: usize) -> Manifest {
        let mut entries = Vec::new();
        for i in 0..n_ids {
            let g = if i % 2 == 0 { Gender::A } else { Gender::B };
            for j in 0..per {
                let id = format!("p{i:02}_{j}");
                entries.push(ManifestEntry {
                    sample_id: id.clone(),
                    identity: Identity::new(format!("p{i:02}"), g).unwrap(),
                    session: "s".into(),
                    audio_path: format!("{id}.wav").into(),
                    visual_path: format!("{id}.ppm").into(),
                    thermal_path: format!("{id}.pgm").into(),
                });
            }
        }
        validate_manifest(entries, None).unwrap()
    }

    fn ids(m: &Manifest) -> HashSet<String> {
        m.identities().into_iter().map(|i| i.id).collect()
    }

    #[test]
    fn ten_identities_eight_one_one() {
        let s = split_dataset(&manifest(10, 3), (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(ids(&s.train).len(), 8);
        assert_eq!(ids(&s.valid).len(), 1);
        assert_eq!(ids(&s.test).len(), 1);
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 30);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = manifest(12, 2);
        assert_eq!(
            split_dataset(&m, (0.6, 0.2, 0.2), 4).unwrap(),
            split_dataset(&m, (0.6, 0.2, 0.2), 4).unwrap()
        );
    }

    #[test]
    fn eval_splits_get_both_genders() {
        let m = manifest(20, 2);
        for seed in 0..20 {
            let s = split_dataset(&m, (0.6, 0.2, 0.2), seed).unwrap();
            for part in [&s.valid, &s.test] {
                let a = part.identities().iter().filter(|i| i.gender == Gender::A).count();
                assert_eq!(a, 2);
            }
        }
    }

    #[test]
    fn empty_split_rejected() {
        assert!(split_dataset(&manifest(3, 2), (0.9, 0.05, 0.05), 0).is_err());
        assert!(split_dataset(&manifest(10, 2), (0.5, 0.2, 0.2), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn splits_partition_identities(seed in any::<u64>(), n in 3usize..30) {
            let m = manifest(n, 2);
            let s = split_dataset(&m, (0.6, 0.2, 0.2), seed);
            if let Ok(s) = s {
                let (a, b, c) = (ids(&s.train), ids(&s.valid), ids(&s.test));
                prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
                let union: HashSet<String> = a.union(&b).cloned().collect::<HashSet<_>>().union(&c).cloned().collect();
                prop_assert_eq!(union, ids(&m));
            }
        }
    }
}
