//! Seeded synthetic clips with scene/shot structure and a linear temporal
//! drift, the substrate for training and end-to-end checks.
//!
//! Each generated world fixes a drift direction and a vision→text linear
//! map. Within a clip, scene and shot offsets are drawn as mutually
//! orthogonal vectors that are also orthogonal to the drift direction, so
//! with zero noise:
//!
//! * shot centres in one scene are `shot_sep·√2` apart,
//! * scene centres are `scene_sep` apart,
//! * projecting a frame onto the drift direction recovers `drift · gt_index`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::split::{split_dataset, write_splits, SplitRatios, Splits};
use crate::seed::{derive_seed, rng_for, Rng as SeededRng};
use crate::types::{
    hierarchy_from_labels, ClipPuzzle, FeatureVector, FrameRecord, Hierarchy, Permutation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_scenes: usize,
    pub shots_per_scene: usize,
    pub frames_per_shot: usize,
    pub d_v: usize,
    pub d_u: usize,
    pub scene_sep: f64,
    pub shot_sep: f64,
    /// Feature displacement per temporal index along the drift direction.
    pub drift: f64,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub noise: f64,
    /// Fraction of frames given a non-zero text feature.
    pub pair_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_scenes: 2,
            shots_per_scene: 3,
            frames_per_shot: 3,
            d_v: 32,
            d_u: 16,
            scene_sep: 6.0,
            shot_sep: 3.0,
            drift: 0.5,
            noise: 0.25,
            pair_rate: 0.85,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn n_frames(&self) -> usize {
        self.n_scenes * self.shots_per_scene * self.frames_per_shot
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("generator config: {m}")));
        if self.n_scenes == 0 || self.shots_per_scene == 0 || self.frames_per_shot == 0 {
            return bad("counts must be >= 1".into());
        }
        if self.d_v == 0 || self.d_u == 0 {
            return bad("feature dimensions must be >= 1".into());
        }
        if !(self.scene_sep > 0.0) || !(self.shot_sep > 0.0) {
            return bad("separations must be > 0".into());
        }
        if !(self.drift >= 0.0) || !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.pair_rate) {
            return bad("drift, noise must be >= 0 and pair_rate in [0, 1]".into());
        }
        let needed = 1 + self.n_scenes + self.n_scenes * self.shots_per_scene;
        if needed > self.d_v {
            return bad(format!(
                "{} scenes x {} shots need {needed} orthogonal directions but d_v = {}",
                self.n_scenes, self.shots_per_scene, self.d_v
            ));
        }
        Ok(())
    }

    /// Shapes spanning 10-20 frames with one or two scenes.
    pub fn benchmark_mix(base: &GenConfig) -> Vec<GenConfig> {
        [
            (1, 5, 2),
            (1, 4, 3),
            (1, 7, 2),
            (1, 5, 3),
            (1, 6, 3),
            (2, 3, 2),
            (2, 2, 3),
            (2, 4, 2),
            (2, 3, 3),
            (2, 5, 2),
        ]
        .into_iter()
        .map(|(n_scenes, shots_per_scene, frames_per_shot)| GenConfig {
            n_scenes,
            shots_per_scene,
            frames_per_shot,
            ..base.clone()
        })
        .collect()
    }
}

/// Directions shared by every clip generated from one seed.
#[derive(Debug, Clone)]
pub struct World {
    pub drift_dir: Vec<f64>,
    /// `d_u × d_v`, scaled by `1/√d_v`.
    pub text_map: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl World {
    pub fn new(seed: u64, d_v: usize, d_u: usize) -> Self {
        let mut rng = rng_for(seed, "world", 0);
        let mut drift_dir = gaussian_vec(&mut rng, d_v);
        let n = dot(&drift_dir, &drift_dir).sqrt();
        drift_dir.iter_mut().for_each(|x| *x /= n);
        let scale = 1.0 / (d_v as f64).sqrt();
        let text_map = (0..d_u)
            .map(|_| gaussian_vec(&mut rng, d_v).into_iter().map(|x| x * scale).collect())
            .collect();
        World { drift_dir, text_map }
    }

    /// `count` orthonormal vectors orthogonal to the drift direction.
    fn orthonormal(&self, count: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        let dim = self.drift_dir.len();
        let mut basis: Vec<Vec<f64>> = vec![self.drift_dir.clone()];
        while basis.len() < count + 1 {
            let mut v = gaussian_vec(rng, dim);
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        basis.remove(0);
        basis
    }

    /// Generates one clip in ground-truth order.
    pub fn clip(&self, cfg: &GenConfig, clip_seed: u64, clip_id: &str, movie_id: &str) -> Result<(ClipPuzzle, Hierarchy)> {
        cfg.validate()?;
        if cfg.d_v != self.drift_dir.len() || cfg.d_u != self.text_map.len() {
            return Err(Error::invalid("generator config dims differ from the world"));
        }
        let mut rng = rng_for(clip_seed, "clip", 0);
        let dirs = self.orthonormal(cfg.n_scenes + cfg.n_scenes * cfg.shots_per_scene, &mut rng);
        let (scene_dirs, shot_dirs) = dirs.split_at(cfg.n_scenes);
        let scene_scale = cfg.scene_sep / std::f64::consts::SQRT_2;

        let mut frames = Vec::with_capacity(cfg.n_frames());
        let mut t_ms = rng.gen_range(0..60_000u64);
        for s in 0..cfg.n_scenes {
            for k in 0..cfg.shots_per_scene {
                let shot = s * cfg.shots_per_scene + k;
                let center: Vec<f64> = scene_dirs[s]
                    .iter()
                    .zip(&shot_dirs[shot])
                    .map(|(a, b)| scene_scale * a + cfg.shot_sep * b)
                    .collect();
                for _ in 0..cfg.frames_per_shot {
                    let gt_index = frames.len() + 1;
                    let vision: Vec<f64> = center
                        .iter()
                        .zip(&self.drift_dir)
                        .map(|(c, d)| {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            c + cfg.drift * gt_index as f64 * d + cfg.noise * eps
                        })
                        .collect();
                    let paired = rng.gen_bool(cfg.pair_rate);
                    let text: Vec<f64> = self
                        .text_map
                        .iter()
                        .map(|row| {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            dot(row, &vision) + cfg.noise * eps
                        })
                        .map(|v| if paired { v } else { 0.0 })
                        .collect();
                    let duration = rng.gen_range(800..4000u64);
                    frames.push(FrameRecord {
                        frame_id: gt_index as u64 - 1,
                        vision_feat: FeatureVector::new(vision)?,
                        text_feat: FeatureVector::new(text)?,
                        start_ms: t_ms,
                        end_ms: t_ms + duration,
                        shot_id: shot as u64,
                        scene_id: s as u64,
                        gt_index,
                    });
                    t_ms += duration + rng.gen_range(0..3000u64);
                }
            }
        }
        let clip = ClipPuzzle {
            clip_id: clip_id.to_string(),
            movie_id: movie_id.to_string(),
            frames,
        };
        let hierarchy = hierarchy_from_labels(&clip);
        Ok((clip, hierarchy))
    }
}

/// One ordered clip and its true hierarchy; world and clip are both keyed by
/// `cfg.seed`.
pub fn generate_clip(cfg: &GenConfig) -> Result<(ClipPuzzle, Hierarchy)> {
    cfg.validate()?;
    World::new(cfg.seed, cfg.d_v, cfg.d_u).clip(cfg, cfg.seed, &format!("clip-{}", cfg.seed), "movie-0")
}

/// Presents the frames in a uniformly random order.
pub fn shuffle_clip(clip: &ClipPuzzle, seed: u64) -> ClipPuzzle {
    let mut order: Vec<usize> = (0..clip.frames.len()).collect();
    order.shuffle(&mut rng_for(seed, "shuffle", 0));
    clip.permuted(&Permutation::new(order).expect("shuffled identity"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub configs: Vec<GenConfig>,
    pub n_clips: usize,
    pub clips_per_movie: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn benchmark_mix(n_clips: usize, seed: u64) -> Self {
        DatasetSpec {
            configs: GenConfig::benchmark_mix(&GenConfig::default()),
            n_clips,
            clips_per_movie: 20,
            ratios: SplitRatios::default(),
            seed,
        }
    }
}

/// Shuffled clips `0..n_clips` of a dataset, independent of any splitting.
pub fn generate_clips(spec: &DatasetSpec) -> Result<Vec<ClipPuzzle>> {
    let first = spec
        .configs
        .first()
        .ok_or_else(|| Error::invalid("dataset needs at least one generator config"))?;
    if spec.configs.iter().any(|c| c.d_v != first.d_v || c.d_u != first.d_u) {
        return Err(Error::invalid("all generator configs must share d_v and d_u"));
    }
    if spec.clips_per_movie == 0 {
        return Err(Error::invalid("clips_per_movie must be >= 1"));
    }
    let world = World::new(spec.seed, first.d_v, first.d_u);
    (0..spec.n_clips)
        .map(|i| {
            let clip_seed = derive_seed(spec.seed, "clip", i as u64);
            let mut pick = rng_for(clip_seed, "shape", 0);
            let cfg = &spec.configs[pick.gen_range(0..spec.configs.len())];
            let movie = i / spec.clips_per_movie;
            let (clip, _) = world.clip(
                cfg,
                clip_seed,
                &format!("movie{movie:04}-clip{:03}", i % spec.clips_per_movie),
                &format!("movie{movie:04}"),
            )?;
            Ok(shuffle_clip(&clip, derive_seed(spec.seed, "shuffle", i as u64)))
        })
        .collect()
}

/// Generates and splits a dataset, with out-domain clips drawn from movies
/// absent from every other split.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Splits> {
    spec.ratios.validate()?;
    let clips = generate_clips(spec)?;
    split_dataset(clips, &spec.ratios, derive_seed(spec.seed, "split", 0))
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    spec: &'a DatasetSpec,
    counts: [(&'static str, usize); 4],
}

/// Writes `train.jsonl`, `val.jsonl`, `test_in.jsonl`, `test_out.jsonl` and
/// `dataset.json` into `dir`. Returns the written paths.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, splits: &Splits) -> Result<Vec<std::path::PathBuf>> {
    let mut written = write_splits(dir, splits)?;
    let manifest = DatasetManifest {
        spec,
        counts: splits.named().map(|(n, c)| (n, c.len())),
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        context: "dataset manifest".into(),
        source,
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
