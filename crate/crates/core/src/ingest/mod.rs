//! Curation of subtitle-aligned movie frames into clip puzzles.

pub mod align;
pub mod normalize;
pub mod segment;
pub mod split;
pub mod srt;
pub mod text;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use align::{align_frames, read_frame_manifest, AlignStatus, AlignedFrame, RawFrame, DEFAULT_KEEP_GAP_MS};
pub use normalize::normalize_utterance;
pub use segment::{segment_clips, SegmentConfig};
pub use split::{split_dataset, write_splits, SplitRatios, Splits};
pub use srt::{parse_srt, serialize_srt, SrtCue};

use crate::error::{Error, Result};
use crate::types::ClipPuzzle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub keep_gap_ms: Option<u64>,
    pub segment: SegmentConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            keep_gap_ms: Some(DEFAULT_KEEP_GAP_MS),
            segment: SegmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub n_cues: usize,
    pub n_cues_dropped: usize,
    pub n_frames: usize,
    pub n_paired: usize,
    pub n_kept_gap: usize,
    pub n_clips: usize,
    /// Paired share of frames that ended up inside clips.
    pub clip_paired_fraction: f64,
    /// Clip count keyed by number of scenes.
    pub scene_histogram: BTreeMap<usize, usize>,
    /// Clip count keyed by number of shots.
    pub shot_histogram: BTreeMap<usize, usize>,
}

impl IngestStats {
    /// Adds counts and histograms; `clip_paired_fraction` is left for the
    /// caller to recompute.
    pub fn merge(&mut self, other: &IngestStats) {
        self.n_cues += other.n_cues;
        self.n_cues_dropped += other.n_cues_dropped;
        self.n_frames += other.n_frames;
        self.n_paired += other.n_paired;
        self.n_kept_gap += other.n_kept_gap;
        self.n_clips += other.n_clips;
        for (k, v) in &other.scene_histogram {
            *self.scene_histogram.entry(*k).or_default() += v;
        }
        for (k, v) in &other.shot_histogram {
            *self.shot_histogram.entry(*k).or_default() += v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct MovieIngest {
    /// Cues that survived normalisation, with normalised text.
    pub cues: Vec<SrtCue>,
    pub aligned: Vec<AlignedFrame>,
    pub clips: Vec<ClipPuzzle>,
    pub stats: IngestStats,
}

/// Normalises cues, drops the ones without speech, aligns frames and cuts
/// clips for one movie.
pub fn ingest_movie(movie_id: &str, srt_text: &str, frames: &[RawFrame], cfg: &IngestConfig) -> Result<MovieIngest> {
    let parsed = parse_srt(srt_text)?;
    let cues: Vec<SrtCue> = parsed
        .iter()
        .filter_map(|c| normalize_utterance(&c.text).map(|text| SrtCue { text, ..c.clone() }))
        .collect();
    let aligned = align_frames(frames, &cues, cfg.keep_gap_ms)?;
    let clips = segment_clips(&aligned, &cues, movie_id, &cfg.segment)?;

    let in_clips: usize = clips.iter().map(|c| c.n_frames()).sum();
    let paired_in_clips: usize = clips.iter().flat_map(|c| &c.frames).filter(|f| f.paired()).count();
    let mut stats = IngestStats {
        n_cues: parsed.len(),
        n_cues_dropped: parsed.len() - cues.len(),
        n_frames: frames.len(),
        n_paired: aligned.iter().filter(|a| a.paired()).count(),
        n_kept_gap: aligned.iter().filter(|a| a.status == AlignStatus::KeptGap).count(),
        n_clips: clips.len(),
        clip_paired_fraction: if in_clips == 0 { 0.0 } else { paired_in_clips as f64 / in_clips as f64 },
        ..Default::default()
    };
    for c in &clips {
        *stats.scene_histogram.entry(c.n_scenes()).or_default() += 1;
        *stats.shot_histogram.entry(c.n_shots()).or_default() += 1;
    }
    Ok(MovieIngest {
        cues,
        aligned,
        clips,
        stats,
    })
}

/// Ingests every `<movie>.srt` in `dir` that has a matching `<movie>.csv`
/// frame manifest, in movie-name order.
pub fn ingest_dir(dir: &Path, cfg: &IngestConfig) -> Result<(Vec<ClipPuzzle>, IngestStats)> {
    let mut movies = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "srt") {
            movies.push(path);
        }
    }
    movies.sort();
    if movies.is_empty() {
        return Err(Error::invalid(format!("no .srt files in {}", dir.display())));
    }
    let mut clips = Vec::new();
    let mut stats = IngestStats::default();
    for srt_path in movies {
        let movie_id = srt_path.file_stem().unwrap().to_string_lossy().into_owned();
        let manifest = srt_path.with_extension("csv");
        let text = std::fs::read_to_string(&srt_path).map_err(|e| Error::io(&srt_path, e))?;
        let frames = read_frame_manifest(&manifest)?;
        let movie = ingest_movie(&movie_id, &text, &frames, cfg)?;
        stats.merge(&movie.stats);
        clips.extend(movie.clips);
    }
    let in_clips: usize = clips.iter().map(|c| c.n_frames()).sum();
    let paired: usize = clips.iter().flat_map(|c| &c.frames).filter(|f| f.paired()).count();
    stats.clip_paired_fraction = if in_clips == 0 { 0.0 } else { paired as f64 / in_clips as f64 };
    Ok((clips, stats))
}
