//! Shared domain types: feature vectors, frames, clips, permutations and the
//! scene → shot → frame hierarchy.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real-valued feature vector. Non-empty, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Feature("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Feature(format!("entry {i} is not finite")));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "feature dim must be positive");
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub vision_feat: FeatureVector,
    /// All zeros when the frame has no matched utterance.
    pub text_feat: FeatureVector,
    pub start_ms: u64,
    pub end_ms: u64,
    pub shot_id: u64,
    pub scene_id: u64,
    /// 1-based temporal index within the clip.
    pub gt_index: usize,
}

impl FrameRecord {
    pub fn paired(&self) -> bool {
        !self.text_feat.is_zero()
    }
}

/// A clip whose `frames` are listed in presentation (possibly shuffled) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPuzzle {
    pub clip_id: String,
    pub movie_id: String,
    pub frames: Vec<FrameRecord>,
}

impl ClipPuzzle {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_scenes(&self) -> usize {
        let mut ids: Vec<u64> = self.frames.iter().map(|f| f.scene_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn n_shots(&self) -> usize {
        let mut ids: Vec<(u64, u64)> = self
            .frames
            .iter()
            .map(|f| (f.scene_id, f.shot_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Returns a copy with frames rearranged so that position `p` holds
    /// `self.frames[perm[p]]`.
    pub fn permuted(&self, perm: &Permutation) -> ClipPuzzle {
        ClipPuzzle {
            clip_id: self.clip_id.clone(),
            movie_id: self.movie_id.clone(),
            frames: perm.apply(&self.frames),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_clip(self).map_err(|violation| Error::InvalidClip {
            clip_id: self.clip_id.clone(),
            violation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipViolation {
    Empty,
    TimeReversed { frame_id: u64 },
    GtIndexNotBijection,
    DuplicateFrameId { frame_id: u64 },
    ShotCrossesScenes { shot_id: u64 },
    DimMismatch { frame_id: u64, field: &'static str },
}

impl fmt::Display for ClipViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipViolation::Empty => write!(f, "clip has no frames"),
            ClipViolation::TimeReversed { frame_id } => {
                write!(f, "frame {frame_id}: start_ms > end_ms")
            }
            ClipViolation::GtIndexNotBijection => write!(f, "gt_index not a bijection"),
            ClipViolation::DuplicateFrameId { frame_id } => {
                write!(f, "duplicate frame_id {frame_id}")
            }
            ClipViolation::ShotCrossesScenes { shot_id } => {
                write!(f, "shot crosses scenes (shot_id {shot_id})")
            }
            ClipViolation::DimMismatch { frame_id, field } => {
                write!(f, "frame {frame_id}: {field} dimension differs from first frame")
            }
        }
    }
}

/// Checks every clip and frame invariant, reporting the first one violated.
pub fn validate_clip(clip: &ClipPuzzle) -> Result<(), ClipViolation> {
    let n = clip.frames.len();
    if n == 0 {
        return Err(ClipViolation::Empty);
    }
    let (dv, du) = (clip.frames[0].vision_feat.dim(), clip.frames[0].text_feat.dim());
    let mut seen_gt = vec![false; n];
    let mut seen_ids = HashMap::with_capacity(n);
    let mut shot_scene: HashMap<u64, u64> = HashMap::new();
    for f in &clip.frames {
        if f.start_ms > f.end_ms {
            return Err(ClipViolation::TimeReversed {
                frame_id: f.frame_id,
            });
        }
        if f.vision_feat.dim() != dv {
            return Err(ClipViolation::DimMismatch {
                frame_id: f.frame_id,
                field: "vision_feat",
            });
        }
        if f.text_feat.dim() != du {
            return Err(ClipViolation::DimMismatch {
                frame_id: f.frame_id,
                field: "text_feat",
            });
        }
        if seen_ids.insert(f.frame_id, ()).is_some() {
            return Err(ClipViolation::DuplicateFrameId {
                frame_id: f.frame_id,
            });
        }
        if f.gt_index == 0 || f.gt_index > n || seen_gt[f.gt_index - 1] {
            return Err(ClipViolation::GtIndexNotBijection);
        }
        seen_gt[f.gt_index - 1] = true;
        match shot_scene.get(&f.shot_id) {
            Some(&scene) if scene != f.scene_id => {
                return Err(ClipViolation::ShotCrossesScenes { shot_id: f.shot_id })
            }
            Some(_) => {}
            None => {
                shot_scene.insert(f.shot_id, f.scene_id);
            }
        }
    }
    Ok(())
}

/// `mapping[p]` is the index of the item placed at position `p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::Permutation(format!(
                    "{mapping:?} is not a bijection on 0..{n}"
                )));
            }
            seen[m] = true;
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn reversed(&self) -> Self {
        Permutation(self.0.iter().rev().copied().collect())
    }

    /// `inverse()[item]` is the position at which `item` is placed.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (p, &item) in self.0.iter().enumerate() {
            inv[item] = p;
        }
        Permutation(inv)
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.0.len(), "permutation length mismatch");
        self.0.iter().map(|&i| items[i].clone()).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// The permutation that lists presentation positions by ascending `gt_index`.
pub fn ground_truth_permutation(clip: &ClipPuzzle) -> Result<Permutation> {
    clip.validate()?;
    let mut mapping = vec![0; clip.frames.len()];
    for (pos, f) in clip.frames.iter().enumerate() {
        mapping[f.gt_index - 1] = pos;
    }
    Ok(Permutation(mapping))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub shot_key: u64,
    pub frame_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_key: u64,
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hierarchy {
    pub scenes: Vec<Scene>,
}

impl Hierarchy {
    pub fn n_scenes(&self) -> usize {
        self.scenes.len()
    }

    pub fn n_shots(&self) -> usize {
        self.scenes.iter().map(|s| s.shots.len()).sum()
    }

    /// Scene-level partition of positions.
    pub fn scene_partition(&self) -> Vec<Vec<usize>> {
        self.scenes
            .iter()
            .map(|s| {
                let mut p: Vec<usize> = s
                    .shots
                    .iter()
                    .flat_map(|sh| sh.frame_positions.iter().copied())
                    .collect();
                p.sort_unstable();
                p
            })
            .collect()
    }

    /// Shot-level partition of positions, all scenes flattened.
    pub fn shot_partition(&self) -> Vec<Vec<usize>> {
        self.scenes
            .iter()
            .flat_map(|s| s.shots.iter().map(|sh| sh.frame_positions.clone()))
            .collect()
    }
}

/// Groups presentation positions by `(scene_id, shot_id)`, ordering scenes and
/// shots by first occurrence.
pub fn hierarchy_from_labels(clip: &ClipPuzzle) -> Hierarchy {
    let mut scenes: Vec<Scene> = Vec::new();
    for (pos, f) in clip.frames.iter().enumerate() {
        let scene = match scenes.iter_mut().position(|s| s.scene_key == f.scene_id) {
            Some(i) => &mut scenes[i],
            None => {
                scenes.push(Scene {
                    scene_key: f.scene_id,
                    shots: Vec::new(),
                });
                scenes.last_mut().unwrap()
            }
        };
        match scene.shots.iter_mut().find(|s| s.shot_key == f.shot_id) {
            Some(shot) => shot.frame_positions.push(pos),
            None => scene.shots.push(Shot {
                shot_key: f.shot_id,
                frame_positions: vec![pos],
            }),
        }
    }
    Hierarchy { scenes }
}

pub fn read_clips_jsonl(path: &Path) -> Result<Vec<ClipPuzzle>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clips = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let clip: ClipPuzzle = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?;
        clips.push(clip);
    }
    Ok(clips)
}

pub fn write_clips_jsonl(path: &Path, clips: &[ClipPuzzle]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for clip in clips {
        serde_json::to_writer(&mut w, clip).map_err(|source| Error::Json {
            context: format!("writing {}", path.display()),
            source,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Clip in gt order with the given per-frame (scene_id, shot_id) labels.
    pub fn labelled_clip(labels: &[(u64, u64)]) -> ClipPuzzle {
        let frames = labels
            .iter()
            .enumerate()
            .map(|(i, &(scene, shot))| FrameRecord {
                frame_id: i as u64,
                vision_feat: FeatureVector::new(vec![i as f64, 1.0]).unwrap(),
                text_feat: FeatureVector::new(vec![1.0]).unwrap(),
                start_ms: 1000 * i as u64,
                end_ms: 1000 * i as u64 + 500,
                shot_id: shot,
                scene_id: scene,
                gt_index: i + 1,
            })
            .collect();
        ClipPuzzle {
            clip_id: "c0".into(),
            movie_id: "m0".into(),
            frames,
        }
    }

    pub fn with_gt(mut clip: ClipPuzzle, gt: &[usize]) -> ClipPuzzle {
        for (f, &g) in clip.frames.iter_mut().zip(gt) {
            f.gt_index = g;
        }
        clip
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_clip_validates() {
        let clip = labelled_clip(&[(1, 1), (1, 1), (1, 2), (1, 2)]);
        assert_eq!(validate_clip(&clip), Ok(()));
    }

    #[test]
    fn duplicate_gt_index_is_reported() {
        let clip = with_gt(labelled_clip(&[(1, 1); 4]), &[1, 1, 2, 3]);
        let err = validate_clip(&clip).unwrap_err();
        assert_eq!(err, ClipViolation::GtIndexNotBijection);
        assert_eq!(err.to_string(), "gt_index not a bijection");
    }

    #[test]
    fn shot_spanning_two_scenes_is_reported() {
        let clip = labelled_clip(&[(1, 7), (2, 7)]);
        let err = validate_clip(&clip).unwrap_err();
        assert!(err.to_string().starts_with("shot crosses scenes"));
    }

    #[test]
    fn reversed_timestamps_are_reported() {
        let mut clip = labelled_clip(&[(1, 1); 2]);
        clip.frames[1].start_ms = clip.frames[1].end_ms + 1;
        assert_eq!(
            validate_clip(&clip),
            Err(ClipViolation::TimeReversed { frame_id: 1 })
        );
    }

    #[test]
    fn ground_truth_permutation_sorts_by_index() {
        let clip = labelled_clip(&[(1, 1); 4]);
        assert_eq!(
            ground_truth_permutation(&clip).unwrap(),
            Permutation::identity(4)
        );

        let clip = with_gt(labelled_clip(&[(1, 1); 3]), &[3, 1, 2]);
        assert_eq!(
            ground_truth_permutation(&clip).unwrap().as_slice(),
            &[1, 2, 0]
        );

        let clip = with_gt(labelled_clip(&[(1, 1); 5]), &[5, 4, 3, 2, 1]);
        assert_eq!(
            ground_truth_permutation(&clip).unwrap().as_slice(),
            &[4, 3, 2, 1, 0]
        );
    }

    #[test]
    fn ground_truth_permutation_rejects_invalid_clip() {
        let clip = with_gt(labelled_clip(&[(1, 1); 3]), &[1, 1, 2]);
        assert!(ground_truth_permutation(&clip).is_err());
    }

    #[test]
    fn hierarchy_groups_by_scene_and_shot() {
        let h = hierarchy_from_labels(&labelled_clip(&[(1, 10), (1, 10), (2, 20)]));
        assert_eq!(h.n_scenes(), 2);
        assert_eq!(h.n_shots(), 2);
        assert_eq!(h.scenes[0].shots[0].shot_key, 10);
        assert_eq!(h.scenes[0].shots[0].frame_positions, vec![0, 1]);

        let h = hierarchy_from_labels(&labelled_clip(&[(3, 3); 5]));
        assert_eq!((h.n_scenes(), h.n_shots()), (1, 1));
    }

    #[test]
    fn hierarchy_of_two_by_three_by_three() {
        let labels: Vec<(u64, u64)> = (0..18u64).map(|i| (i / 9, i / 3)).collect();
        let h = hierarchy_from_labels(&labelled_clip(&labels));
        assert_eq!(h.n_scenes(), 2);
        assert_eq!(h.n_shots(), 6);
        assert!(h
            .scenes
            .iter()
            .flat_map(|s| &s.shots)
            .all(|s| s.frame_positions.len() == 3));
    }

    #[test]
    fn feature_vector_rejects_bad_input() {
        assert!(FeatureVector::new(vec![]).is_err());
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        let parsed: std::result::Result<FeatureVector, _> = serde_json::from_str("[1.0, 2.5]");
        assert_eq!(parsed.unwrap().as_slice(), &[1.0, 2.5]);
        let parsed: std::result::Result<FeatureVector, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clips.jsonl");
        let clips = vec![labelled_clip(&[(1, 1), (1, 2), (2, 3)])];
        write_clips_jsonl(&path, &clips).unwrap();
        assert_eq!(read_clips_jsonl(&path).unwrap(), clips);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"clip_id\":\"c0\",\"movie_id\":\"m0\",\"frames\":[{\"frame_id\":0"));
    }
}
