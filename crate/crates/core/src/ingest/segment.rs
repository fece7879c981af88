use serde::{Deserialize, Serialize};

use super::align::AlignedFrame;
use super::srt::SrtCue;
use super::text::hash_text;
use crate::error::{Error, Result};
use crate::types::{ClipPuzzle, FeatureVector, FrameRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub min_frames: usize,
    pub max_frames: usize,
    /// A window needs strictly more than this fraction of paired frames.
    pub min_paired_fraction: f64,
    pub text_dim: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            min_frames: 10,
            max_frames: 20,
            min_paired_fraction: 0.8,
            text_dim: 16,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::invalid("need 1 <= min_frames <= max_frames"));
        }
        if !(0.0..1.0).contains(&self.min_paired_fraction) || self.text_dim == 0 {
            return Err(Error::invalid("min_paired_fraction must lie in [0, 1) and text_dim >= 1"));
        }
        Ok(())
    }

    fn accepts(&self, window: &[&AlignedFrame]) -> bool {
        let paired = window.iter().filter(|f| f.paired()).count();
        window.len() >= self.min_frames && paired as f64 > self.min_paired_fraction * window.len() as f64
    }
}

/// Greedy left-to-right scan over kept frames: at each start the longest
/// acceptable window becomes a clip and the scan jumps past it; with no
/// acceptable window the scan advances by one frame.
pub fn segment_clips(
    aligned: &[AlignedFrame],
    cues: &[SrtCue],
    movie_id: &str,
    cfg: &SegmentConfig,
) -> Result<Vec<ClipPuzzle>> {
    cfg.validate()?;
    let kept: Vec<&AlignedFrame> = aligned.iter().filter(|f| f.kept()).collect();
    let mut clips = Vec::new();
    let mut start = 0;
    while start + cfg.min_frames <= kept.len() {
        let longest = (cfg.min_frames..=cfg.max_frames.min(kept.len() - start))
            .rev()
            .find(|&len| cfg.accepts(&kept[start..start + len]));
        match longest {
            Some(len) => {
                clips.push(build_clip(&kept[start..start + len], cues, movie_id, clips.len(), cfg.text_dim)?);
                start += len;
            }
            None => start += 1,
        }
    }
    Ok(clips)
}

fn build_clip(
    window: &[&AlignedFrame],
    cues: &[SrtCue],
    movie_id: &str,
    ordinal: usize,
    text_dim: usize,
) -> Result<ClipPuzzle> {
    let frames = window
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let cue = a.cue.map(|c| &cues[c]);
            let text = match cue {
                Some(c) => hash_text(&c.text, text_dim),
                None => vec![0.0; text_dim],
            };
            let t = a.frame.timestamp_ms;
            Ok(FrameRecord {
                frame_id: a.frame.frame_id,
                vision_feat: a.frame.vision_feat.clone(),
                text_feat: FeatureVector::new(text)?,
                start_ms: cue.map_or(t, |c| c.start_ms),
                end_ms: cue.map_or(t, |c| c.end_ms),
                shot_id: a.frame.shot_id,
                scene_id: a.frame.scene_id,
                gt_index: i + 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clip = ClipPuzzle {
        clip_id: format!("{movie_id}-clip{ordinal:03}"),
        movie_id: movie_id.to_string(),
        frames,
    };
    clip.validate()?;
    Ok(clip)
}
