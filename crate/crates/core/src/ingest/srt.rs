//! SubRip (.srt) reading and writing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrtCue {
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Text lines joined by single spaces.
    pub text: String,
}

impl SrtCue {
    pub fn covers(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms <= self.end_ms
    }
}

fn parse_timestamp(s: &str) -> Option<u64> {
    let (hms, ms) = s.trim().split_once([',', '.'])?;
    let mut parts = hms.split(':');
    let (h, m, sec) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || ms.len() != 3 || m.len() != 2 || sec.len() != 2 || h.is_empty() {
        return None;
    }
    let num = |x: &str| -> Option<u64> {
        if x.bytes().all(|b| b.is_ascii_digit()) {
            x.parse().ok()
        } else {
            None
        }
    };
    let (h, m, sec, ms) = (num(h)?, num(m)?, num(sec)?, num(ms)?);
    if m >= 60 || sec >= 60 {
        return None;
    }
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

pub fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    format!("{:02}:{:02}:{:02},{:03}", h, rem / 60_000, rem % 60_000 / 1000, rem % 1000)
}

/// Parses SubRip text. Blocks are separated by blank lines; a leading BOM,
/// CRLF line endings and trailing blank lines are accepted. Overlapping cues
/// are kept and logged.
pub fn parse_srt(text: &str) -> Result<Vec<SrtCue>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut cues: Vec<SrtCue> = Vec::new();
    let mut i = 0;
    let mut block = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        block += 1;
        let err = |msg: String| Error::Srt { block, msg };
        let index: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| err(format!("expected a cue number, found {:?}", lines[i])))?;
        if index == 0 {
            return Err(err("cue numbers start at 1".into()));
        }
        let timing = lines.get(i + 1).ok_or_else(|| err("missing timing line".into()))?;
        let (a, b) = timing
            .split_once("-->")
            .ok_or_else(|| err(format!("malformed timing line {timing:?}")))?;
        let start_ms = parse_timestamp(a).ok_or_else(|| err(format!("malformed timestamp {:?}", a.trim())))?;
        let end_ms = parse_timestamp(b).ok_or_else(|| err(format!("malformed timestamp {:?}", b.trim())))?;
        if end_ms < start_ms {
            return Err(err("end before start".into()));
        }
        if end_ms == start_ms {
            return Err(err("cue has zero duration".into()));
        }
        i += 2;
        let mut text_lines = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            text_lines.push(lines[i].trim());
            i += 1;
        }
        if text_lines.is_empty() {
            return Err(err("cue has no text".into()));
        }
        if let Some(prev) = cues.last() {
            if start_ms < prev.end_ms {
                log::warn!("srt block {block}: cue {index} overlaps cue {}", prev.index);
            }
        }
        cues.push(SrtCue {
            index,
            start_ms,
            end_ms,
            text: text_lines.join(" "),
        });
    }
    Ok(cues)
}

/// Writes cues in canonical form: LF endings, one text line, one blank line
/// after every block.
pub fn serialize_srt(cues: &[SrtCue]) -> String {
    let mut out = String::new();
    for c in cues {
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}\n\n",
            c.index,
            format_timestamp(c.start_ms),
            format_timestamp(c.end_ms),
            c.text
        );
    }
    out
}
