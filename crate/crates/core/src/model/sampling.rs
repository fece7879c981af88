//! Training pair construction at frame, shot and scene level.

use rand::Rng;

use super::{encode_frame, pool_group, Level, ModelConfig};
use crate::error::Result;
use crate::seed::{rng_for, Rng as SeededRng};
use crate::types::{hierarchy_from_labels, ClipPuzzle, FeatureVector};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub level: Level,
    pub a: FeatureVector,
    pub b: FeatureVector,
    /// 1 when `a` precedes `b`.
    pub order_label: u8,
    pub negatives: Vec<FeatureVector>,
    /// `a` and `b` share a group (shot for frames, scene for shots, clip for
    /// scenes), so the contrastive term treats `b` as a positive.
    pub contrastive: bool,
}

/// Level representations of one clip with their ground-truth structure.
#[derive(Debug, Clone)]
pub struct ClipReps {
    pub frames: Vec<FeatureVector>,
    pub frame_shot: Vec<usize>,
    pub frame_key: Vec<f64>,
    pub shots: Vec<FeatureVector>,
    pub shot_scene: Vec<usize>,
    pub shot_key: Vec<f64>,
    pub scenes: Vec<FeatureVector>,
    pub scene_key: Vec<f64>,
}

impl ClipReps {
    pub fn from_clip(clip: &ClipPuzzle, config: &ModelConfig) -> Result<Self> {
        clip.validate()?;
        let frames = clip
            .frames
            .iter()
            .map(|f| encode_frame(&f.vision_feat, &f.text_feat, config))
            .collect::<Result<Vec<_>>>()?;
        let frame_key: Vec<f64> = clip.frames.iter().map(|f| f.gt_index as f64).collect();
        let hierarchy = hierarchy_from_labels(clip);
        let mut frame_shot = vec![0; frames.len()];
        let mut shots = Vec::new();
        let mut shot_scene = Vec::new();
        let mut shot_key = Vec::new();
        let mut scenes = Vec::new();
        let mut scene_key = Vec::new();
        for (si, scene) in hierarchy.scenes.iter().enumerate() {
            let first_shot = shots.len();
            let mut scene_frames = Vec::new();
            for shot in &scene.shots {
                for &p in &shot.frame_positions {
                    frame_shot[p] = shots.len();
                }
                let members: Vec<&FeatureVector> = shot.frame_positions.iter().map(|&p| &frames[p]).collect();
                shots.push(pool_group(&members)?);
                shot_scene.push(si);
                shot_key.push(mean_key(&shot.frame_positions, &frame_key));
                scene_frames.extend_from_slice(&shot.frame_positions);
            }
            let members: Vec<&FeatureVector> = shots[first_shot..].iter().collect();
            scenes.push(pool_group(&members)?);
            scene_key.push(mean_key(&scene_frames, &frame_key));
        }
        Ok(ClipReps {
            frames,
            frame_shot,
            frame_key,
            shots,
            shot_scene,
            shot_key,
            scenes,
            scene_key,
        })
    }

    pub fn items(&self, level: Level) -> &[FeatureVector] {
        match level {
            Level::Frame => &self.frames,
            Level::Shot => &self.shots,
            Level::Scene => &self.scenes,
        }
    }

    /// Temporal sort key of an item.
    fn key(&self, level: Level, i: usize) -> f64 {
        match level {
            Level::Frame => self.frame_key[i],
            Level::Shot => self.shot_key[i],
            Level::Scene => self.scene_key[i],
        }
    }

    /// Group used for positives and negatives; `None` at scene level, where
    /// the whole clip is one group.
    fn group(&self, level: Level, i: usize) -> Option<usize> {
        match level {
            Level::Frame => Some(self.frame_shot[i]),
            Level::Shot => Some(self.shot_scene[i]),
            Level::Scene => None,
        }
    }
}

fn mean_key(positions: &[usize], keys: &[f64]) -> f64 {
    positions.iter().map(|&p| keys[p]).sum::<f64>() / positions.len() as f64
}

#[derive(Debug, Clone, Default)]
pub struct PairSample {
    pub pairs: Vec<TrainingPair>,
    /// Clips with fewer than two items at the requested level.
    pub skipped: usize,
}

/// Samples pairs from every clip at `level`, each emitted in both input
/// orders with complementary labels.
pub fn sample_pairs(clips: &[ClipPuzzle], config: &ModelConfig, level: Level, rng_seed: u64) -> Result<PairSample> {
    let reps = clips
        .iter()
        .map(|c| ClipReps::from_clip(c, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_pairs_from_reps(&reps, config, level, rng_seed))
}

pub fn sample_pairs_from_reps(reps: &[ClipReps], config: &ModelConfig, level: Level, rng_seed: u64) -> PairSample {
    let mut rng = rng_for(rng_seed, level.name(), 0);
    let per_clip = match level {
        Level::Frame => config.frame_pairs_per_clip,
        Level::Shot => config.shot_pairs_per_clip,
        Level::Scene => config.scene_pairs_per_clip,
    };
    let mut out = PairSample::default();
    for (ci, clip) in reps.iter().enumerate() {
        let n = clip.items(level).len();
        if n < 2 {
            out.skipped += 1;
            continue;
        }
        let mut same = Vec::new();
        let mut cross = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let shared = match level {
                    Level::Scene => true,
                    _ => clip.group(level, i) == clip.group(level, j),
                };
                if shared {
                    same.push((i, j));
                } else {
                    cross.push((i, j));
                }
            }
        }
        let draws = per_clip.min(same.len() + cross.len());
        for _ in 0..draws {
            let from_same = if same.is_empty() {
                false
            } else if cross.is_empty() {
                true
            } else if level == Level::Frame {
                rng.gen_bool(config.same_shot_rate)
            } else {
                rng.gen_range(0..same.len() + cross.len()) < same.len()
            };
            let pool = if from_same { &mut same } else { &mut cross };
            let (i, j) = pool.swap_remove(rng.gen_range(0..pool.len()));
            let (early, late) = if clip.key(level, i) <= clip.key(level, j) { (i, j) } else { (j, i) };
            for (a, b, label) in [(early, late, 1u8), (late, early, 0u8)] {
                let negatives = sample_negatives(reps, ci, level, a, config.n_negatives, &mut rng);
                out.pairs.push(TrainingPair {
                    level,
                    a: clip.items(level)[a].clone(),
                    b: clip.items(level)[b].clone(),
                    order_label: label,
                    contrastive: from_same && !negatives.is_empty(),
                    negatives,
                });
            }
        }
    }
    out
}

/// Negatives for `anchor`: items of the same clip outside the anchor's group,
/// or items of other clips when the clip has no other group.
fn sample_negatives(
    reps: &[ClipReps],
    clip: usize,
    level: Level,
    anchor: usize,
    count: usize,
    rng: &mut SeededRng,
) -> Vec<FeatureVector> {
    let own = &reps[clip];
    let local: Vec<usize> = match own.group(level, anchor) {
        Some(g) => (0..own.items(level).len())
            .filter(|&i| own.group(level, i) != Some(g))
            .collect(),
        None => Vec::new(),
    };
    if !local.is_empty() {
        return (0..count)
            .map(|_| own.items(level)[local[rng.gen_range(0..local.len())]].clone())
            .collect();
    }
    if reps.len() < 2 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let mut other = rng.gen_range(0..reps.len() - 1);
            if other >= clip {
                other += 1;
            }
            let items = reps[other].items(level);
            items[rng.gen_range(0..items.len())].clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::labelled_clip;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_v: 2,
            d_u: 1,
            n_negatives: 4,
            ..Default::default()
        }
    }

    #[test]
    fn two_frame_clip_gives_one_pair_both_ways() {
        let clip = labelled_clip(&[(1, 1), (1, 1)]);
        let s = sample_pairs(&[clip.clone(), clip], &cfg(), Level::Frame, 3).unwrap();
        assert_eq!(s.pairs.len(), 4);
        let (p, q) = (&s.pairs[0], &s.pairs[1]);
        assert_eq!((p.a.clone(), p.b.clone()), (q.b.clone(), q.a.clone()));
        assert_eq!(p.order_label + q.order_label, 1);
        // Frame with gt 1 placed first carries label 1.
        assert_eq!(p.a.as_slice()[0], 0.0);
        assert_eq!(p.order_label, 1);
    }

    #[test]
    fn frame_negatives_avoid_anchor_shot() {
        let clip = labelled_clip(&[(1, 1), (1, 1), (1, 2), (1, 2), (2, 3), (2, 3)]);
        let c = cfg();
        let reps = ClipReps::from_clip(&clip, &c).unwrap();
        let s = sample_pairs_from_reps(&[reps.clone()], &c, Level::Frame, 1);
        assert!(!s.pairs.is_empty());
        for p in &s.pairs {
            let anchor = reps.frames.iter().position(|f| *f == p.a).unwrap();
            for q in &p.negatives {
                let neg = reps.frames.iter().position(|f| f == q).unwrap();
                assert_ne!(reps.frame_shot[neg], reps.frame_shot[anchor]);
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let clip = labelled_clip(&[(1, 1), (1, 1), (1, 2), (1, 2), (2, 3), (2, 3), (2, 3)]);
        let clips = vec![clip.clone(), clip];
        for level in Level::ALL {
            let a = sample_pairs(&clips, &cfg(), level, 42).unwrap().pairs;
            let b = sample_pairs(&clips, &cfg(), level, 42).unwrap().pairs;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn labels_are_balanced() {
        let clip = labelled_clip(&(0..12u64).map(|i| (i / 6, i / 3)).collect::<Vec<_>>());
        let s = sample_pairs(&[clip.clone(), clip], &cfg(), Level::Frame, 0).unwrap();
        let ones = s.pairs.iter().filter(|p| p.order_label == 1).count();
        assert_eq!(2 * ones, s.pairs.len());
    }

    #[test]
    fn single_scene_clips_are_skipped_at_scene_level() {
        let clip = labelled_clip(&[(1, 1), (1, 2)]);
        let s = sample_pairs(&[clip], &cfg(), Level::Scene, 0).unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn scene_negatives_come_from_other_clips() {
        let a = labelled_clip(&[(1, 1), (2, 2)]);
        let mut b = labelled_clip(&[(1, 1), (2, 2)]);
        for f in &mut b.frames {
            f.vision_feat = FeatureVector::new(vec![100.0, 100.0]).unwrap();
        }
        let c = cfg();
        let s = sample_pairs(&[a, b], &c, Level::Scene, 5).unwrap();
        assert_eq!(s.pairs.len(), 4);
        for p in &s.pairs {
            assert!(p.contrastive);
            assert_eq!(p.negatives.len(), 4);
            for q in &p.negatives {
                // Negatives are scenes of the other clip.
                assert_ne!(q.as_slice()[0] >= 100.0, p.a.as_slice()[0] >= 100.0);
            }
        }
    }
}
