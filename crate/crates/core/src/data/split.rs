//! Deterministic k-fold train/val/test assignment with disjoint test folds.
//!
//! The shuffled id list is cut into `folds` contiguous test chunks (so test
//! membership across folds partitions the dataset); the remainder of each
//! fold is divided train:val by largest-remainder rounding on the configured
//! ratio.

use crate::error::{CoreError, Result};
use crate::rng;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Train => write!(f, "train"),
            Partition::Val => write!(f, "val"),
            Partition::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(CoreError::Other(format!("unknown partition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub fold_count: usize,
    pub ratio: (u32, u32, u32),
    /// one id -> partition map per fold
    pub assignments: Vec<BTreeMap<String, Partition>>,
}

impl DatasetSplit {
    pub fn ids_in(&self, fold: usize, part: Partition) -> Vec<String> {
        self.assignments[fold]
            .iter()
            .filter(|(_, &p)| p == part)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Largest-remainder apportionment of `total` across `weights`.
/// Ties go to the earlier entry.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

pub fn split_dataset(
    ids: &[String],
    ratio: (u32, u32, u32),
    folds: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if ids.len() < folds {
        return Err(CoreError::InvalidConfig(format!(
            "{} samples cannot fill {folds} folds",
            ids.len()
        )));
    }
    if ratio.0 == 0 || ratio.2 == 0 {
        return Err(CoreError::InvalidConfig("train and test ratio parts must be nonzero".into()));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    shuffled.sort(); // make the outcome independent of caller ordering
    let mut r = rng::stream(seed, "split");
    shuffled.shuffle(&mut r);

    // contiguous disjoint test chunks
    let chunk_sizes = largest_remainder(shuffled.len(), &vec![1.0; folds]);
    let mut chunk_bounds = Vec::with_capacity(folds);
    let mut at = 0usize;
    for sz in &chunk_sizes {
        chunk_bounds.push((at, at + sz));
        at += sz;
    }

    let mut assignments = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (t0, t1) = chunk_bounds[fold];
        let rest: Vec<&String> = shuffled[..t0].iter().chain(shuffled[t1..].iter()).collect();
        let tv = largest_remainder(rest.len(), &[ratio.0 as f64, ratio.1 as f64]);
        let mut map = BTreeMap::new();
        for id in &shuffled[t0..t1] {
            map.insert(id.clone(), Partition::Test);
        }
        for (i, id) in rest.iter().enumerate() {
            let part = if i < tv[0] { Partition::Train } else { Partition::Val };
            map.insert((*id).clone(), part);
        }
        assignments.push(map);
    }
    Ok(DatasetSplit { fold_count: folds, ratio, assignments })
}

/// Plain-text manifest, one `fold,id,partition` record per line.
pub fn write_manifest(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (fold, map) in split.assignments.iter().enumerate() {
        for (id, part) in map {
            out.push_str(&format!("{fold},{id},{part}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })
}

pub fn read_manifest(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    let mut assignments: Vec<BTreeMap<String, Partition>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let fold: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CoreError::Other(format!("bad manifest line {}", ln + 1)))?;
        let id = parts
            .next()
            .ok_or_else(|| CoreError::Other(format!("bad manifest line {}", ln + 1)))?;
        let part: Partition = parts
            .next()
            .ok_or_else(|| CoreError::Other(format!("bad manifest line {}", ln + 1)))?
            .parse()?;
        while assignments.len() <= fold {
            assignments.push(BTreeMap::new());
        }
        assignments[fold].insert(id.to_string(), part);
    }
    if assignments.is_empty() {
        return Err(CoreError::Other("empty split manifest".into()));
    }
    Ok(DatasetSplit { fold_count: assignments.len(), ratio: (6, 2, 2), assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:04}")).collect()
    }

    #[test]
    fn ten_samples_five_folds_cover_once() {
        let split = split_dataset(&ids(10), (6, 2, 2), 5, 1).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for fold in 0..5 {
            let test = split.ids_in(fold, Partition::Test);
            assert_eq!(test.len(), 2);
            for id in test {
                assert!(seen.insert(id), "test sets overlap across folds");
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn ratio_sizes_within_one_of_exact() {
        let split = split_dataset(&ids(168), (6, 2, 2), 5, 9).unwrap();
        for fold in 0..5 {
            let tr = split.ids_in(fold, Partition::Train).len() as f64;
            let va = split.ids_in(fold, Partition::Val).len() as f64;
            let te = split.ids_in(fold, Partition::Test).len() as f64;
            assert_eq!(tr + va + te, 168.0);
            assert!((tr - 100.8).abs() <= 1.0, "train {tr}");
            assert!((va - 33.6).abs() <= 1.0, "val {va}");
            assert!((te - 33.6).abs() <= 1.0, "test {te}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = split_dataset(&ids(37), (6, 2, 2), 5, 7).unwrap();
        let b = split_dataset(&ids(37), (6, 2, 2), 5, 7).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = split_dataset(&ids(37), (6, 2, 2), 5, 8).unwrap();
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn each_sample_in_exactly_one_partition_per_fold() {
        let split = split_dataset(&ids(23), (6, 2, 2), 5, 3).unwrap();
        for fold in 0..5 {
            assert_eq!(split.assignments[fold].len(), 23);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(split_dataset(&ids(3), (6, 2, 2), 5, 1).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let split = split_dataset(&ids(12), (6, 2, 2), 3, 5).unwrap();
        let td = tempfile::tempdir().unwrap();
        let path = td.path().join("splits.txt");
        write_manifest(&split, &path).unwrap();
        let loaded = read_manifest(&path).unwrap();
        assert_eq!(loaded.fold_count, 3);
        assert_eq!(loaded.assignments, split.assignments);
    }
}
