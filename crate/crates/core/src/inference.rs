//! Hierarchical reordering of one clip: scenes and shots are found top-down by
//! clustering, then frames, shots and scenes are ordered bottom-up by beam
//! search, and the nested orders are flattened into one permutation.

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, ClusterConfig, DistanceKind};
use crate::error::{Error, Result};
use crate::metrics::{cluster_iou_from_features, ordering_score};
use crate::model::{encode_frame, pool_group, Level, ModelParams};
use crate::reorder::{beam_search, ScoreMatrix, DEFAULT_BEAM_WIDTH};
use crate::seed::{derive_seed, rng_for};
use crate::types::{ground_truth_permutation, hierarchy_from_labels, ClipPuzzle, FeatureVector, Permutation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    /// One search over all frames.
    FrameOnly,
    /// Shots clustered over the whole clip, no scene stage.
    #[default]
    FrameShot,
    /// Scenes clustered, frames ordered directly inside each scene.
    FrameScene,
    FrameShotScene,
}

impl LevelMode {
    pub fn uses_scenes(self) -> bool {
        matches!(self, LevelMode::FrameScene | LevelMode::FrameShotScene)
    }

    pub fn uses_shots(self) -> bool {
        matches!(self, LevelMode::FrameShot | LevelMode::FrameShotScene)
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelMode::FrameOnly => "frame_only",
            LevelMode::FrameShot => "frame_shot",
            LevelMode::FrameScene => "frame_scene",
            LevelMode::FrameShotScene => "frame_shot_scene",
        }
    }
}

impl FromStr for LevelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(['-', '+'], "_").as_str() {
            "frame_only" | "frame" => Ok(LevelMode::FrameOnly),
            "frame_shot" => Ok(LevelMode::FrameShot),
            "frame_scene" => Ok(LevelMode::FrameScene),
            "frame_shot_scene" => Ok(LevelMode::FrameShotScene),
            other => Err(Error::invalid(format!("unknown level mode '{other}'"))),
        }
    }
}

/// Where cluster counts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CountSource {
    /// Scene and shot counts of the clip's own labels; shots are shared out
    /// over predicted scenes in proportion to their sizes.
    #[default]
    Metadata,
    Fixed { n_scenes: usize, n_shots_per_scene: usize },
}

/// How the scene/shot partition is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchySource {
    #[default]
    Cluster,
    /// The labelled scenes and shots.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub counts: CountSource,
    pub bsize: usize,
    /// `m` is set per call; `seed` is mixed with the clip id.
    pub cluster: ClusterConfig,
    pub level_mode: LevelMode,
    pub hierarchy: HierarchySource,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            counts: CountSource::Metadata,
            bsize: DEFAULT_BEAM_WIDTH,
            cluster: ClusterConfig::default(),
            level_mode: LevelMode::FrameShot,
            hierarchy: HierarchySource::Cluster,
        }
    }
}

/// Source of pairwise order matrices and clustering embeddings.
pub trait PairScorer: Sync {
    /// Matrix over `reps`, where item `k` covers the clip frames `members[k]`.
    fn score_matrix(
        &self,
        level: Level,
        clip: &ClipPuzzle,
        reps: &[FeatureVector],
        members: &[Vec<usize>],
    ) -> Result<ScoreMatrix>;

    /// Features clustered into groups at `level` (scenes or shots).
    fn embed(&self, level: Level, reps: &[FeatureVector]) -> Result<Vec<FeatureVector>>;
}

impl PairScorer for ModelParams {
    fn score_matrix(&self, level: Level, _: &ClipPuzzle, reps: &[FeatureVector], _: &[Vec<usize>]) -> Result<ScoreMatrix> {
        let rows: Vec<&[f64]> = reps.iter().map(|r| r.as_slice()).collect();
        let mut logits = self.phi_logit_matrix(level, &rows)?.into_iter();
        ScoreMatrix::from_logits(reps.len(), |_, _| Ok(logits.next().expect("one logit pair per ordered pair")))
    }

    /// Shot groups use the frame-level projection, scene groups the
    /// shot-level one.
    fn embed(&self, level: Level, reps: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
        let head = match level {
            Level::Shot => Level::Frame,
            _ => Level::Shot,
        };
        let rows: Vec<&[f64]> = reps.iter().map(|r| r.as_slice()).collect();
        self.psi_embed_batch(head, &rows)
    }
}

/// Test comparator reading ground-truth indices: item `i` before `j` scores
/// `tanh(sharpness / (2·gap))` where `gap` is the signed rank distance of
/// their mean indices within the item set, so the true order is the unique
/// best path and every beam width finds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparator {
    pub sharpness: f64,
}

impl Default for OracleComparator {
    fn default() -> Self {
        OracleComparator { sharpness: 4.0 }
    }
}

impl PairScorer for OracleComparator {
    fn score_matrix(&self, _: Level, clip: &ClipPuzzle, _: &[FeatureVector], members: &[Vec<usize>]) -> Result<ScoreMatrix> {
        let n = members.len();
        let keys: Vec<f64> = members
            .iter()
            .map(|m| m.iter().map(|&p| clip.frames[p].gt_index as f64).sum::<f64>() / m.len() as f64)
            .collect();
        let mut by_key: Vec<usize> = (0..n).collect();
        by_key.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
        let mut rank = vec![0i64; n];
        for (r, &i) in by_key.iter().enumerate() {
            rank[i] = r as i64;
        }
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let gap = rank[j] - rank[i];
                if gap != 0 {
                    w[i * n + j] = gap.signum() as f64 * (self.sharpness / (2.0 * gap.abs() as f64)).tanh();
                }
            }
        }
        ScoreMatrix::new(n, w)
    }

    fn embed(&self, _: Level, reps: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
        Ok(reps.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePath {
    /// Positions into the stage's item list, in predicted order.
    pub order: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    /// Frame positions per scene, in predicted scene order.
    pub scene_partition: Vec<Vec<usize>>,
    /// Per scene, frame positions per shot, each in predicted order.
    pub shot_partitions: Vec<Vec<Vec<usize>>>,
    /// Per scene, one path per shot (as clustered).
    pub frame_paths: Vec<Vec<StagePath>>,
    /// One path per scene over its shots (as clustered).
    pub shot_paths: Vec<StagePath>,
    /// Path over the scenes (as clustered).
    pub scene_path: StagePath,
}

impl InferenceTrace {
    pub fn path_weights(&self) -> PathWeights {
        PathWeights {
            frame: self.frame_paths.iter().flatten().map(|p| p.weight).collect(),
            shot: self.shot_paths.iter().map(|p| p.weight).collect(),
            scene: self.scene_path.weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    pub frame: Vec<f64>,
    pub shot: Vec<f64>,
    pub scene: f64,
}

/// One line of the prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub predicted_order: Permutation,
    pub path_weights: PathWeights,
    pub scene_partition: Vec<Vec<usize>>,
    pub shot_partitions: Vec<Vec<Vec<usize>>>,
}

impl Prediction {
    pub fn new(clip: &ClipPuzzle, order: Permutation, trace: &InferenceTrace) -> Self {
        Prediction {
            clip_id: clip.clip_id.clone(),
            predicted_order: order,
            path_weights: trace.path_weights(),
            scene_partition: trace.scene_partition.clone(),
            shot_partitions: trace.shot_partitions.clone(),
        }
    }
}

fn order_items<S: PairScorer + ?Sized>(
    scorer: &S,
    level: Level,
    clip: &ClipPuzzle,
    reps: &[FeatureVector],
    members: &[Vec<usize>],
    bsize: usize,
) -> Result<StagePath> {
    if reps.len() == 1 {
        return Ok(StagePath { order: vec![0], weight: 0.0 });
    }
    let s = scorer.score_matrix(level, clip, reps, members)?;
    let best = beam_search(&s, bsize)?;
    Ok(StagePath {
        order: best.order.as_slice().to_vec(),
        weight: best.weight,
    })
}

/// Splits `total` over groups in proportion to `sizes`, each share in
/// `1..=size`; leftovers go to the largest remainders, then larger groups.
pub fn allocate_counts(total: usize, sizes: &[usize]) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    if sizes.is_empty() || sizes.contains(&0) || total < sizes.len() || total > n {
        return Err(Error::invalid(format!(
            "cannot share {total} shots over scenes of sizes {sizes:?}"
        )));
    }
    let quota: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut out: Vec<usize> = quota
        .iter()
        .zip(sizes)
        .map(|(q, &s)| (q.floor() as usize).clamp(1, s))
        .collect();
    let key = |i: usize, out: &[usize]| (quota[i] - out[i] as f64, sizes[i]);
    while out.iter().sum::<usize>() < total {
        let i = (0..sizes.len())
            .filter(|&i| out[i] < sizes[i])
            .max_by(|&a, &b| {
                let (ka, kb) = (key(a, &out), key(b, &out));
                ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(b.cmp(&a))
            })
            .expect("capacity checked");
        out[i] += 1;
    }
    while out.iter().sum::<usize>() > total {
        let i = (0..sizes.len())
            .filter(|&i| out[i] > 1)
            .min_by(|&a, &b| {
                let (ka, kb) = (key(a, &out), key(b, &out));
                ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(a.cmp(&b))
            })
            .expect("lower bound checked");
        out[i] -= 1;
    }
    Ok(out)
}

fn cluster_positions<S: PairScorer + ?Sized>(
    scorer: &S,
    level: Level,
    reps: &[FeatureVector],
    positions: &[usize],
    m: usize,
    cfg: &InferenceConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if m <= 1 || positions.len() <= 1 {
        return Ok(vec![positions.to_vec()]);
    }
    if m >= positions.len() {
        return Ok(positions.iter().map(|&p| vec![p]).collect());
    }
    let subset: Vec<FeatureVector> = positions.iter().map(|&p| reps[p].clone()).collect();
    let feats = scorer.embed(level, &subset)?;
    let mut kc = ClusterConfig {
        m,
        seed,
        ..cfg.cluster.clone()
    };
    if kc.distance == DistanceKind::Cosine && feats.iter().any(|f| f.is_zero()) {
        kc.distance = DistanceKind::Euclidean;
    }
    let result = kmeans(&feats, &kc)?;
    Ok(result
        .partition
        .into_iter()
        .map(|g| g.into_iter().map(|i| positions[i]).collect())
        .collect())
}

/// Top-down partition as frame positions per scene per shot.
fn partition<S: PairScorer + ?Sized>(
    scorer: &S,
    clip: &ClipPuzzle,
    reps: &[FeatureVector],
    cfg: &InferenceConfig,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let n = clip.n_frames();
    let mode = cfg.level_mode;
    if cfg.hierarchy == HierarchySource::Oracle {
        let h = hierarchy_from_labels(clip);
        let shots: Vec<Vec<Vec<usize>>> = h
            .scenes
            .iter()
            .map(|s| s.shots.iter().map(|t| t.frame_positions.clone()).collect())
            .collect();
        return Ok(match (mode.uses_scenes(), mode.uses_shots()) {
            (true, true) => shots,
            (true, false) => shots.into_iter().map(|s| vec![s.concat()]).collect(),
            (false, true) => vec![shots.concat()],
            (false, false) => vec![vec![(0..n).collect()]],
        });
    }

    let (n_scenes, fixed_shots) = match cfg.counts {
        CountSource::Metadata => (clip.n_scenes(), None),
        CountSource::Fixed { n_scenes, n_shots_per_scene } => (n_scenes, Some(n_shots_per_scene)),
    };
    if n_scenes == 0 || fixed_shots == Some(0) {
        return Err(Error::invalid("cluster counts must be at least 1"));
    }
    let all: Vec<usize> = (0..n).collect();
    let seed = |stage: u64| derive_seed(cfg.cluster.seed, &clip.clip_id, stage);

    let scenes = if mode.uses_scenes() {
        if n_scenes > n {
            return Err(Error::invalid(format!("{n_scenes} scenes requested for {n} frames")));
        }
        cluster_positions(scorer, Level::Scene, reps, &all, n_scenes, cfg, seed(0))?
    } else {
        vec![all]
    };
    if !mode.uses_shots() {
        return Ok(scenes.into_iter().map(|s| vec![s]).collect());
    }

    let sizes: Vec<usize> = scenes.iter().map(Vec::len).collect();
    let shot_counts = match fixed_shots {
        Some(k) => sizes.iter().map(|&s| k.min(s)).collect(),
        None => {
            let total = clip.n_shots().max(scenes.len()).min(n);
            allocate_counts(total, &sizes)?
        }
    };
    scenes
        .iter()
        .zip(shot_counts)
        .enumerate()
        .map(|(k, (scene, m))| cluster_positions(scorer, Level::Shot, reps, scene, m, cfg, seed(1 + k as u64)))
        .collect()
}

/// Frame representations (vision ⊕ text) of a clip.
pub fn frame_reps(clip: &ClipPuzzle, params: &ModelParams) -> Result<Vec<FeatureVector>> {
    clip.frames
        .iter()
        .map(|f| encode_frame(&f.vision_feat, &f.text_feat, &params.config))
        .collect()
}

/// Predicts the temporal order of `clip`'s frames from their representations.
pub fn infer_order_with<S: PairScorer + ?Sized>(
    clip: &ClipPuzzle,
    reps: &[FeatureVector],
    scorer: &S,
    cfg: &InferenceConfig,
) -> Result<(Permutation, InferenceTrace)> {
    clip.validate()?;
    if reps.len() != clip.n_frames() {
        return Err(Error::invalid("one representation per frame required"));
    }
    let tree = partition(scorer, clip, reps, cfg)?;
    let bsize = cfg.bsize;

    let mut frame_paths = Vec::with_capacity(tree.len());
    let mut shot_paths = Vec::with_capacity(tree.len());
    let mut scene_reps = Vec::with_capacity(tree.len());
    let mut ordered_scenes: Vec<Vec<Vec<usize>>> = Vec::with_capacity(tree.len());
    for shots in &tree {
        let mut paths = Vec::with_capacity(shots.len());
        let mut ordered_shots = Vec::with_capacity(shots.len());
        let mut shot_reps = Vec::with_capacity(shots.len());
        for shot in shots {
            let items: Vec<FeatureVector> = shot.iter().map(|&p| reps[p].clone()).collect();
            let members: Vec<Vec<usize>> = shot.iter().map(|&p| vec![p]).collect();
            let path = order_items(scorer, Level::Frame, clip, &items, &members, bsize)?;
            let ordered: Vec<usize> = path.order.iter().map(|&k| shot[k]).collect();
            shot_reps.push(pool_group(&ordered.iter().map(|&p| &reps[p]).collect::<Vec<_>>())?);
            ordered_shots.push(ordered);
            paths.push(path);
        }
        let path = order_items(scorer, Level::Shot, clip, &shot_reps, &ordered_shots, bsize)?;
        scene_reps.push(pool_group(&shot_reps.iter().collect::<Vec<_>>())?);
        ordered_scenes.push(path.order.iter().map(|&k| ordered_shots[k].clone()).collect());
        shot_paths.push(path);
        frame_paths.push(paths);
    }
    let scene_members: Vec<Vec<usize>> = ordered_scenes.iter().map(|s| s.concat()).collect();
    let scene_path = order_items(scorer, Level::Scene, clip, &scene_reps, &scene_members, bsize)?;

    let shot_partitions: Vec<Vec<Vec<usize>>> = scene_path.order.iter().map(|&k| ordered_scenes[k].clone()).collect();
    let scene_partition: Vec<Vec<usize>> = shot_partitions.iter().map(|s| s.concat()).collect();
    let order = Permutation::new(scene_partition.concat())?;
    Ok((
        order,
        InferenceTrace {
            scene_partition,
            shot_partitions,
            frame_paths,
            shot_paths,
            scene_path,
        },
    ))
}

/// Model-driven inference on a clip.
pub fn infer_order(clip: &ClipPuzzle, params: &ModelParams, cfg: &InferenceConfig) -> Result<(Permutation, InferenceTrace)> {
    let reps = frame_reps(clip, params)?;
    infer_order_with(clip, &reps, params, cfg)
}

pub enum Predictor<'a> {
    /// The ground-truth order; its composition with the truth is the identity.
    Identity,
    /// Uniformly random orders keyed by `(seed, clip_id)`.
    Random { seed: u64 },
    /// Orders read from a prediction file.
    Fixed(&'a HashMap<String, Permutation>),
    Model { params: &'a ModelParams, cfg: &'a InferenceConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub split: String,
    pub clip_id: String,
    pub n_frames: usize,
    /// Percentages, one per requested β.
    pub scores: Vec<f64>,
    pub scene_iou: Option<f64>,
    pub shot_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: String,
    pub n_clips: usize,
    pub betas: Vec<usize>,
    /// Mean percentage per β.
    pub means: Vec<f64>,
    pub scene_iou: Option<f64>,
    pub shot_iou: Option<f64>,
    pub rows: Vec<ClipScore>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn score_clip(split: &str, clip: &ClipPuzzle, predictor: &Predictor, betas: &[usize]) -> Result<ClipScore> {
    clip.validate()?;
    let gt = ground_truth_permutation(clip)?;
    let n = clip.n_frames();
    let (pred, ious) = match predictor {
        Predictor::Identity => (gt.clone(), None),
        Predictor::Random { seed } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_for(*seed, &clip.clip_id, 0));
            (Permutation::new(order)?, None)
        }
        Predictor::Fixed(map) => {
            let p = map
                .get(&clip.clip_id)
                .ok_or_else(|| Error::invalid(format!("no prediction for clip {}", clip.clip_id)))?;
            (p.clone(), None)
        }
        Predictor::Model { params, cfg } => {
            let reps = frame_reps(clip, params)?;
            let (order, trace) = infer_order_with(clip, &reps, *params, cfg)?;
            (order, Some(hierarchy_ious(clip, &reps, &trace, cfg.level_mode)?))
        }
    };
    if pred.len() != n {
        return Err(Error::invalid(format!(
            "prediction for {} has {} entries, clip has {n} frames",
            clip.clip_id,
            pred.len()
        )));
    }
    let scores = betas
        .iter()
        .map(|&b| Ok(ordering_score(&gt, &pred, b)?.score() * 100.0))
        .collect::<Result<Vec<_>>>()?;
    let (scene_iou, shot_iou) = ious.unwrap_or((None, None));
    Ok(ClipScore {
        split: split.to_string(),
        clip_id: clip.clip_id.clone(),
        n_frames: n,
        scores,
        scene_iou,
        shot_iou,
    })
}

fn hierarchy_ious(
    clip: &ClipPuzzle,
    reps: &[FeatureVector],
    trace: &InferenceTrace,
    mode: LevelMode,
) -> Result<(Option<f64>, Option<f64>)> {
    let h = hierarchy_from_labels(clip);
    let scene = if mode.uses_scenes() {
        Some(cluster_iou_from_features(&trace.scene_partition, &h.scene_partition(), reps)?.mean_iou)
    } else {
        None
    };
    let shot = if mode.uses_shots() {
        let pred: Vec<Vec<usize>> = trace.shot_partitions.iter().flatten().cloned().collect();
        Some(cluster_iou_from_features(&pred, &h.shot_partition(), reps)?.mean_iou)
    } else {
        None
    };
    Ok((scene, shot))
}

/// Scores every clip of a split in parallel; rows come back sorted by clip id.
pub fn evaluate_split(split: &str, clips: &[ClipPuzzle], predictor: &Predictor, betas: &[usize]) -> Result<SplitScore> {
    if clips.is_empty() {
        return Err(Error::invalid(format!("split '{split}' is empty")));
    }
    if betas.is_empty() || betas.contains(&0) {
        return Err(Error::invalid("betas must be non-empty and >= 1"));
    }
    let mut rows = clips
        .par_iter()
        .map(|c| score_clip(split, c, predictor, betas))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let means = (0..betas.len())
        .map(|k| rows.iter().map(|r| r.scores[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    let scene: Vec<f64> = rows.iter().filter_map(|r| r.scene_iou).collect();
    let shot: Vec<f64> = rows.iter().filter_map(|r| r.shot_iou).collect();
    Ok(SplitScore {
        split: split.to_string(),
        n_clips: rows.len(),
        betas: betas.to_vec(),
        means,
        scene_iou: mean(&scene),
        shot_iou: mean(&shot),
        rows,
    })
}
