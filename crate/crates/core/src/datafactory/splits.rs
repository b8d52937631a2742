//! Soundfont-grouped cross-validation splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Fold};
use crate::error::{Error, Result};

/// Sets every record's split to the index of its soundfont group (solos
/// follow their mix) and builds one fold per split. In fold `k` the mixes of
/// split `k` are the test set; `val_fraction` of the remaining mixes (at
/// least one) is held out for validation and the rest, plus the solos of
/// training mixes, is the training set.
pub fn make_splits(
    mut manifest: DatasetManifest,
    groups: &[Vec<u32>],
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if groups.len() < 2 {
        return Err(Error::Config("at least two soundfont groups are needed".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} not in (0, 1)")));
    }
    let mut group_of = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        for &sf in g {
            if group_of.insert(sf, gi).is_some() {
                return Err(Error::Config(format!("soundfont {sf} appears in more than one group")));
            }
        }
    }
    let mut split_of_mix = BTreeMap::new();
    for t in manifest.tracks.iter_mut().filter(|t| !t.is_solo) {
        let g = *group_of
            .get(&t.soundfont_id)
            .ok_or_else(|| Error::Config(format!("soundfont {} of track {} is not in any group", t.soundfont_id, t.id)))?;
        t.split_index = Some(g);
        split_of_mix.insert(t.id.clone(), g);
    }
    for t in manifest.tracks.iter_mut().filter(|t| t.is_solo) {
        let mix = t.pair_id.as_deref().unwrap_or("");
        let g = *split_of_mix
            .get(mix)
            .ok_or_else(|| Error::Config(format!("solo track {} has no mix counterpart", t.id)))?;
        t.split_index = Some(g);
    }
    let k = groups.len();
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<String> = ids(&manifest, |t| !t.is_solo && t.split_index == Some(f));
        if test.is_empty() {
            return Err(Error::Config(format!("split {f} has no mix tracks")));
        }
        let mut pool: Vec<String> = ids(&manifest, |t| !t.is_solo && t.split_index != Some(f));
        if pool.len() < 2 {
            return Err(Error::Config(format!("fold {f} needs at least two training mixes")));
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(f as u64 + 1))));
        let n_val = ((val_fraction * pool.len() as f64).round() as usize).clamp(1, pool.len() - 1);
        let validation: BTreeSet<String> = pool[..n_val].iter().cloned().collect();
        let train = ids(&manifest, |t| {
            t.split_index != Some(f) && !validation.contains(t.song_id())
        });
        folds.push(Fold {
            test_split: f,
            train,
            validation: validation.into_iter().collect(),
            test,
        });
    }
    manifest.soundfont_groups = groups.to_vec();
    manifest.val_fraction = val_fraction;
    manifest.folds = folds;
    Ok(manifest)
}

fn ids(m: &DatasetManifest, pred: impl Fn(&super::manifest::TrackRecord) -> bool) -> Vec<String> {
    let mut v: Vec<String> = m.tracks.iter().filter(|t| pred(t)).map(|t| t.id.clone()).collect();
    v.sort();
    v
}

/// Default toy layout: six soundfonts in three groups.
pub fn default_soundfont_groups() -> Vec<Vec<u32>> {
    vec![vec![0, 3], vec![1, 4], vec![2, 5]]
}
