use serde::{Deserialize, Serialize};

use super::{classes_to_midi, FramePredictions, OctaveRange, PITCH_SILENCE};
use crate::corpus::NoteEvent;
use crate::error::{Error, Result};
use crate::frontend::FrameGrid;
use crate::tensornet::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostProcConfig {
    pub onset_threshold: f64,
    pub silence_threshold: f64,
    pub min_note_frames: usize,
    /// Half-width of the local-maximum window for onset peaks.
    pub onset_merge_frames: usize,
}

impl Default for PostProcConfig {
    fn default() -> Self {
        Self {
            onset_threshold: 0.5,
            silence_threshold: 0.5,
            min_note_frames: 3,
            onset_merge_frames: 2,
        }
    }
}

impl PostProcConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| p > 0.0 && p < 1.0;
        if !unit(self.onset_threshold) || !unit(self.silence_threshold) || self.min_note_frames == 0 {
            return Err(Error::Config(format!("post-processing {self:?}")));
        }
        Ok(())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Onset peaks: above threshold and a local maximum within the merge window.
/// Equal neighbours resolve to the earliest frame.
fn onset_candidates(p: &[f64], cfg: &PostProcConfig) -> Vec<usize> {
    let w = cfg.onset_merge_frames;
    (0..p.len())
        .filter(|&t| {
            if p[t] <= cfg.onset_threshold {
                return false;
            }
            let before = t.saturating_sub(w)..t;
            let after = t + 1..(t + w + 1).min(p.len());
            before.into_iter().all(|j| p[j] < p[t]) && after.into_iter().all(|j| p[j] <= p[t])
        })
        .collect()
}

/// Decodes frame logits into notes. Each onset peak opens a note that runs
/// until the next peak or the first silent frame after it; the note's pitch
/// is the most frequent voiced class over its frames.
pub fn frames_to_notes(
    pred: &FramePredictions,
    grid: &FrameGrid,
    cfg: &PostProcConfig,
    range: &OctaveRange,
) -> Result<Vec<NoteEvent>> {
    pred.validate()?;
    cfg.validate()?;
    if pred.n_octave_classes != range.n_classes() {
        return Err(Error::Shape(format!(
            "{} octave classes against a range with {}",
            pred.n_octave_classes,
            range.n_classes()
        )));
    }
    let n = pred.len();
    let p_on: Vec<f64> = pred.onset.iter().map(|&x| sigmoid(x)).collect();
    let silent: Vec<bool> = pred
        .silence
        .iter()
        .map(|&x| sigmoid(x) > cfg.silence_threshold)
        .collect();
    let candidates = onset_candidates(&p_on, cfg);
    let mut notes = Vec::new();
    for (ci, &start) in candidates.iter().enumerate() {
        let next = candidates.get(ci + 1).copied().unwrap_or(n);
        let end = (start + 1..next).find(|&t| silent[t]).unwrap_or(next);
        if end - start < cfg.min_note_frames {
            continue;
        }
        // (pitch, count, first frame seen)
        let mut votes: Vec<(i32, usize, usize)> = Vec::new();
        for t in start..end {
            let v = argmax(pred.octave_row(t));
            let pc = argmax(pred.pitch_row(t));
            if v == range.silence() || pc == PITCH_SILENCE {
                continue;
            }
            let m = classes_to_midi(v, pc, range);
            match votes.iter_mut().find(|e| e.0 == m) {
                Some(e) => e.1 += 1,
                None => votes.push((m, 1, t)),
            }
        }
        let best = votes
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)));
        if let Some(&(pitch, _, _)) = best {
            notes.push(NoteEvent::new(grid.time(start), grid.time(end), pitch));
        }
    }
    Ok(notes)
}
