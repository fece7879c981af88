use std::path::Path;

use serde::{Deserialize, Serialize};

use super::srt::SrtCue;
use crate::error::{Error, Result};
use crate::types::FeatureVector;

pub const DEFAULT_KEEP_GAP_MS: u64 = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub vision_feat: FeatureVector,
    pub shot_id: u64,
    pub scene_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignStatus {
    /// Representative frame of its cue.
    Paired,
    /// Covered by a cue whose middle frame is another frame.
    DroppedDuplicate,
    /// Covered by no cue.
    DroppedUncovered,
    /// Covered by no cue but retained to avoid a long gap.
    KeptGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub frame: RawFrame,
    /// Position of the matched cue in the cue list.
    pub cue: Option<usize>,
    pub status: AlignStatus,
}

impl AlignedFrame {
    pub fn paired(&self) -> bool {
        self.status == AlignStatus::Paired
    }

    pub fn kept(&self) -> bool {
        matches!(self.status, AlignStatus::Paired | AlignStatus::KeptGap)
    }
}

/// Matches time-sorted frames to the first cue covering them.
///
/// Each cue keeps its middle frame (the earlier one for an even count).
/// An uncovered frame is kept only when skipping it would leave more than
/// `keep_gap_ms` between the last kept frame and the next candidate, and a
/// paired frame follows it; `None` drops every uncovered frame.
pub fn align_frames(frames: &[RawFrame], cues: &[SrtCue], keep_gap_ms: Option<u64>) -> Result<Vec<AlignedFrame>> {
    if let Some(w) = frames.windows(2).find(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
        return Err(Error::invalid(format!(
            "frames must be time-sorted (frame {} precedes {})",
            w[0].frame_id, w[1].frame_id
        )));
    }
    let cover: Vec<Option<usize>> = frames
        .iter()
        .map(|f| cues.iter().position(|c| c.covers(f.timestamp_ms)))
        .collect();

    let mut status = vec![AlignStatus::DroppedUncovered; frames.len()];
    for c in 0..cues.len() {
        let members: Vec<usize> = (0..frames.len()).filter(|&i| cover[i] == Some(c)).collect();
        if members.is_empty() {
            continue;
        }
        let middle = members[(members.len() - 1) / 2];
        for &i in &members {
            status[i] = if i == middle {
                AlignStatus::Paired
            } else {
                AlignStatus::DroppedDuplicate
            };
        }
    }

    if let Some(gap) = keep_gap_ms {
        let candidates: Vec<usize> = (0..frames.len())
            .filter(|&i| status[i] != AlignStatus::DroppedDuplicate)
            .collect();
        let mut last_kept: Option<u64> = None;
        for (k, &i) in candidates.iter().enumerate() {
            match status[i] {
                AlignStatus::Paired => last_kept = Some(frames[i].timestamp_ms),
                _ => {
                    let Some(prev) = last_kept else { continue };
                    let paired_after = candidates[k + 1..].iter().any(|&j| status[j] == AlignStatus::Paired);
                    let next = candidates.get(k + 1).map(|&j| frames[j].timestamp_ms);
                    if paired_after && next.is_some_and(|t| t - prev > gap) {
                        status[i] = AlignStatus::KeptGap;
                        last_kept = Some(frames[i].timestamp_ms);
                    }
                }
            }
        }
    }

    Ok(frames
        .iter()
        .zip(status)
        .enumerate()
        .map(|(i, (f, status))| AlignedFrame {
            frame: f.clone(),
            cue: if status == AlignStatus::Paired { cover[i] } else { None },
            status,
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    frame_id: u64,
    timestamp_ms: u64,
    feature_path: String,
    shot_id: u64,
    scene_id: u64,
}

/// Reads a frame manifest CSV (`frame_id,timestamp_ms,feature_path,shot_id,scene_id`).
/// `feature_path` is either an inline JSON array or a path, relative to the
/// manifest, of a file holding one.
pub fn read_frame_manifest(path: &Path) -> Result<Vec<RawFrame>> {
    let csv_err = |source| Error::Csv {
        context: path.display().to_string(),
        source,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut frames = Vec::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row.map_err(csv_err)?;
        let text = if row.feature_path.trim_start().starts_with('[') {
            row.feature_path.clone()
        } else {
            let p = base.join(&row.feature_path);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?
        };
        let values: Vec<f64> = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("{} frame {}", path.display(), row.frame_id),
            source,
        })?;
        frames.push(RawFrame {
            frame_id: row.frame_id,
            timestamp_ms: row.timestamp_ms,
            vision_feat: FeatureVector::new(values)?,
            shot_id: row.shot_id,
            scene_id: row.scene_id,
        });
    }
    frames.sort_by_key(|f| (f.timestamp_ms, f.frame_id));
    Ok(frames)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn raw(frame_id: u64, timestamp_ms: u64) -> RawFrame {
        RawFrame {
            frame_id,
            timestamp_ms,
            vision_feat: FeatureVector::new(vec![frame_id as f64]).unwrap(),
            shot_id: 0,
            scene_id: 0,
        }
    }

    fn cue(index: usize, start_ms: u64, end_ms: u64) -> SrtCue {
        SrtCue {
            index,
            start_ms,
            end_ms,
            text: format!("line {index}"),
        }
    }

    fn statuses(a: &[AlignedFrame]) -> Vec<AlignStatus> {
        a.iter().map(|f| f.status).collect()
    }

    #[test]
    fn containment_pairs() {
        let a = align_frames(&[raw(0, 5000)], &[cue(1, 4000, 6000)], None).unwrap();
        assert_eq!(a[0].status, AlignStatus::Paired);
        assert_eq!(a[0].cue, Some(0));
        let edge = align_frames(&[raw(0, 4000), raw(1, 6001)], &[cue(1, 4000, 6000)], None).unwrap();
        assert_eq!(statuses(&edge), [AlignStatus::Paired, AlignStatus::DroppedUncovered]);
    }

    #[test]
    fn middle_frame_represents_cue() {
        let frames = [raw(0, 4200), raw(1, 4800), raw(2, 5400)];
        let a = align_frames(&frames, &[cue(1, 4000, 6000)], None).unwrap();
        use AlignStatus::*;
        assert_eq!(statuses(&a), [DroppedDuplicate, Paired, DroppedDuplicate]);
        let even = align_frames(&frames[..2], &[cue(1, 4000, 6000)], None).unwrap();
        assert_eq!(statuses(&even), [Paired, DroppedDuplicate]);
    }

    #[test]
    fn uncovered_frame_is_dropped() {
        let a = align_frames(&[raw(0, 7000)], &[cue(1, 4000, 6000)], Some(DEFAULT_KEEP_GAP_MS)).unwrap();
        assert_eq!(a[0].status, AlignStatus::DroppedUncovered);
        assert_eq!(a[0].cue, None);
    }

    #[test]
    fn long_gaps_keep_bridging_frames() {
        use AlignStatus::*;
        // Paired at 1000 and 13000; uncovered candidates in between.
        let frames = [raw(0, 1000), raw(1, 3000), raw(2, 5500), raw(3, 9000), raw(4, 13000)];
        let cues = [cue(1, 500, 1500), cue(2, 12500, 13500)];
        let a = align_frames(&frames, &cues, Some(5000)).unwrap();
        assert_eq!(statuses(&a), [Paired, DroppedUncovered, KeptGap, KeptGap, Paired]);
        let strict = align_frames(&frames, &cues, None).unwrap();
        assert_eq!(statuses(&strict), [Paired, DroppedUncovered, DroppedUncovered, DroppedUncovered, Paired]);
    }

    #[test]
    fn paired_frames_always_lie_inside_their_cue() {
        let frames: Vec<RawFrame> = (0..40).map(|i| raw(i, 700 * i)).collect();
        let cues = [cue(1, 0, 2000), cue(2, 1500, 6000), cue(3, 9000, 9100), cue(4, 15000, 27000)];
        for a in align_frames(&frames, &cues, Some(5000)).unwrap() {
            if let Some(c) = a.cue {
                assert!(cues[c].covers(a.frame.timestamp_ms));
            }
        }
    }

    #[test]
    fn unsorted_frames_are_rejected() {
        assert!(align_frames(&[raw(0, 10), raw(1, 5)], &[], None).is_err());
    }

    #[test]
    fn manifest_with_inline_and_file_features() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f1.json"), "[0.5, 1.5]").unwrap();
        let csv = "frame_id,timestamp_ms,feature_path,shot_id,scene_id\n2,900,f1.json,1,0\n1,100,\"[1.0, 2.0]\",0,0\n";
        let path = dir.path().join("frames.csv");
        std::fs::write(&path, csv).unwrap();
        let frames = read_frame_manifest(&path).unwrap();
        assert_eq!(frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(frames[1].vision_feat.as_slice(), &[0.5, 1.5]);
    }
}
