//! Movie-aware train / val / in-domain test / out-domain test splitting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::types::{write_clips_jsonl, ClipPuzzle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test_in: f64,
    pub test_out: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.06,
            test_in: 0.12,
            test_out: 0.12,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test_in, self.test_out];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("split ratios must be finite and non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<ClipPuzzle>,
    pub val: Vec<ClipPuzzle>,
    pub test_in: Vec<ClipPuzzle>,
    pub test_out: Vec<ClipPuzzle>,
}

impl Splits {
    pub const NAMES: [&'static str; 4] = ["train", "val", "test_in", "test_out"];

    pub fn named(&self) -> [(&'static str, &Vec<ClipPuzzle>); 4] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test_in", &self.test_in),
            ("test_out", &self.test_out),
        ]
    }

    pub fn total(&self) -> usize {
        self.named().iter().map(|(_, c)| c.len()).sum()
    }
}

/// Writes `<name>.jsonl` for every split into `dir`, creating it if needed.
pub fn write_splits(dir: &Path, splits: &Splits) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, clips) in splits.named() {
        let path = dir.join(format!("{name}.jsonl"));
        write_clips_jsonl(&path, clips)?;
        written.push(path);
    }
    Ok(written)
}

/// Splits `total` into integer parts proportional to `weights`, assigning
/// leftover units to the largest fractional remainders (earliest on ties).
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let missing = total - out.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// `k` positions spread evenly over `0..n`.
fn equally_spaced(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| (2 * i + 1) * n / (2 * k)).collect()
}

/// Partitions clips into the four splits. Out-domain movies are chosen by a
/// seeded greedy closest fit to the out-domain share; the remaining movies'
/// clips are divided per movie by equally spaced selection over clip order.
pub fn split_dataset(clips: Vec<ClipPuzzle>, ratios: &SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let total = clips.len();
    let mut movies: BTreeMap<String, Vec<ClipPuzzle>> = BTreeMap::new();
    for c in clips {
        movies.entry(c.movie_id.clone()).or_default().push(c);
    }
    for v in movies.values_mut() {
        v.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    }
    let mut names: Vec<String> = movies.keys().cloned().collect();

    let mut out_movies = Vec::new();
    if ratios.test_out > 0.0 && total > 0 {
        if names.len() < 2 {
            return Err(Error::invalid("an out-domain split needs at least two movies"));
        }
        let target = (ratios.test_out * total as f64).round() as i64;
        names.shuffle(&mut rng_for(seed, "out-domain", 0));
        let mut taken = 0i64;
        for name in &names {
            if out_movies.len() + 1 == names.len() {
                break;
            }
            let size = movies[name].len() as i64;
            if (taken + size - target).abs() < (taken - target).abs() {
                taken += size;
                out_movies.push(name.clone());
            }
        }
    }

    let mut splits = Splits::default();
    for name in &out_movies {
        splits.test_out.extend(movies.remove(name).unwrap());
    }

    let in_total: usize = movies.values().map(Vec::len).sum();
    let in_ratios = [ratios.train, ratios.val, ratios.test_in];
    let counts = largest_remainder(in_total, &in_ratios);
    let sizes: Vec<f64> = movies.values().map(|v| v.len() as f64).collect();
    let test_per_movie = largest_remainder(counts[2], &sizes);
    let val_per_movie = largest_remainder(counts[1], &sizes);

    for ((clips, n_test), n_val) in movies.into_values().zip(test_per_movie).zip(val_per_movie) {
        let n = clips.len();
        let n_test = n_test.min(n);
        let n_val = n_val.min(n - n_test);
        let test_pos = equally_spaced(n, n_test);
        let rest: Vec<usize> = (0..n).filter(|p| !test_pos.contains(p)).collect();
        let val_pos: Vec<usize> = equally_spaced(rest.len(), n_val).into_iter().map(|i| rest[i]).collect();
        for (p, clip) in clips.into_iter().enumerate() {
            if test_pos.contains(&p) {
                splits.test_in.push(clip);
            } else if val_pos.contains(&p) {
                splits.val.push(clip);
            } else {
                splits.train.push(clip);
            }
        }
    }
    for part in [&mut splits.train, &mut splits.val, &mut splits.test_in, &mut splits.test_out] {
        part.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    }
    Ok(splits)
}
