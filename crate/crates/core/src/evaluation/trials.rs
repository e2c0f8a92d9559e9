//! Easy / hard trial-list construction.
//!
//! Target pairs join two samples of one identity, preferring pairs recorded
//! in different sessions. Nontarget pairs join two identities: any two in
//! easy mode, two of the same gender in hard mode. Pairs are unordered for
//! duplicate detection; which side enrolls is drawn at random.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::{Gender, Manifest, ManifestEntry, TrialLabel, TrialList, TrialPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialMode {
    Easy,
    Hard,
}

impl std::str::FromStr for TrialMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(TrialMode::Easy),
            "hard" => Ok(TrialMode::Hard),
            other => Err(Error::invalid(format!("unknown trial mode `{other}` (expected easy or hard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialProtocol {
    pub mode: TrialMode,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub seed: u64,
}

impl Default for TrialProtocol {
    fn default() -> Self {
        Self {
            mode: TrialMode::Easy,
            n_target: 500,
            n_nontarget: 500,
            seed: 0,
        }
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Draw `n` distinct unordered pairs with `draw`, or enumerate via `all`
/// when the request is a large share of the `available` pairs.
fn sample_pairs(
    rng: &mut ChaCha8Rng,
    n: usize,
    available: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (usize, usize),
    all: impl FnOnce() -> Vec<(usize, usize)>,
) -> Vec<(usize, usize)> {
    if 2 * n >= available {
        let mut pairs = all();
        pairs.shuffle(rng);
        pairs.truncate(n);
        return pairs;
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, b) = draw(rng);
        if a != b && seen.insert(key(a, b)) {
            out.push(key(a, b));
        }
    }
    out
}

/// Build a trial list with exactly `n_target` targets and `n_nontarget`
/// nontargets, deterministic in `protocol.seed`.
pub fn generate_trials(manifest: &Manifest, protocol: &TrialProtocol) -> Result<TrialList> {
    let entries = manifest.entries();
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_identity.entry(e.identity.id.as_str()).or_default().push(i);
    }
    if by_identity.len() < 2 {
        return Err(Error::Insufficient("trial generation needs at least two identities".into()));
    }
    let mut rng = substream(protocol.seed, &["trials"]);

    // Targets: cross-session pairs first, then same-session to fill.
    let mut cross = Vec::new();
    let mut same = Vec::new();
    for idx in by_identity.values() {
        for (k, &a) in idx.iter().enumerate() {
            for &b in &idx[k + 1..] {
                if entries[a].session != entries[b].session {
                    cross.push((a, b));
                } else {
                    same.push((a, b));
                }
            }
        }
    }
    if protocol.n_target > cross.len() + same.len() {
        return Err(Error::Insufficient(format!(
            "requested {} target pairs but only {} exist",
            protocol.n_target,
            cross.len() + same.len()
        )));
    }
    cross.shuffle(&mut rng);
    same.shuffle(&mut rng);
    let targets: Vec<(usize, usize)> = cross.into_iter().chain(same).take(protocol.n_target).collect();

    // Nontargets.
    let pools: Vec<Vec<usize>> = match protocol.mode {
        TrialMode::Easy => vec![(0..entries.len()).collect()],
        TrialMode::Hard => {
            let mut by_gender: BTreeMap<Gender, Vec<usize>> = BTreeMap::new();
            for (i, e) in entries.iter().enumerate() {
                by_gender.entry(e.identity.gender).or_default().push(i);
            }
            for (g, idx) in &by_gender {
                let ids: HashSet<&str> = idx.iter().map(|&i| entries[i].identity.id.as_str()).collect();
                if ids.len() < 2 {
                    return Err(Error::Insufficient(format!(
                        "hard trials need at least two identities of gender {g}"
                    )));
                }
            }
            by_gender.into_values().collect()
        }
    };
    let cross_identity_pairs = |pool: &[usize]| -> usize {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in pool {
            *counts.entry(entries[i].identity.id.as_str()).or_default() += 1;
        }
        let n = pool.len();
        (n * n - counts.values().map(|c| c * c).sum::<usize>()) / 2
    };
    let available: usize = pools.iter().map(|p| cross_identity_pairs(p)).sum();
    if protocol.n_nontarget > available {
        return Err(Error::Insufficient(format!(
            "requested {} nontarget pairs but only {available} exist",
            protocol.n_nontarget
        )));
    }
    let weights: Vec<usize> = pools.iter().map(|p| cross_identity_pairs(p)).collect();
    let total_weight: usize = weights.iter().sum();
    let nontargets = sample_pairs(
        &mut rng,
        protocol.n_nontarget,
        available,
        |rng| {
            // Pick a pool in proportion to its pair count, then a uniform
            // cross-identity pair inside it by rejection.
            let mut r = rng.gen_range(0..total_weight);
            let mut p = 0;
            while r >= weights[p] {
                r -= weights[p];
                p += 1;
            }
            let pool = &pools[p];
            loop {
                let a = pool[rng.gen_range(0..pool.len())];
                let b = pool[rng.gen_range(0..pool.len())];
                if entries[a].identity.id != entries[b].identity.id {
                    return (a, b);
                }
            }
        },
        || {
            let mut all = Vec::new();
            for pool in &pools {
                for (k, &a) in pool.iter().enumerate() {
                    for &b in &pool[k + 1..] {
                        if entries[a].identity.id != entries[b].identity.id {
                            all.push(key(a, b));
                        }
                    }
                }
            }
            all
        },
    );

    let orient = |rng: &mut ChaCha8Rng, (a, b): (usize, usize)| -> (&ManifestEntry, &ManifestEntry) {
        if rng.gen_bool(0.5) {
            (&entries[a], &entries[b])
        } else {
            (&entries[b], &entries[a])
        }
    };
    let mut trials = Vec::with_capacity(targets.len() + nontargets.len());
    for p in targets {
        let (e, t) = orient(&mut rng, p);
        trials.push(TrialPair::new(TrialLabel::Target, e, t)?);
    }
    for p in nontargets {
        let (e, t) = orient(&mut rng, p);
        trials.push(TrialPair::new(TrialLabel::Nontarget, e, t)?);
    }
    trials.shuffle(&mut rng);
    Ok(TrialList { trials })
}
