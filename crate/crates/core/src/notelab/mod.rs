//! Note events to frame targets and frame predictions back to notes.
//!
//! Every frame carries four targets: an onset flag `O`, a silence flag `S`,
//! an octave class `V` and a pitch class `P`. Octave and pitch class each
//! reserve their last index for silence.

mod postproc;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::NoteEvent;
use crate::error::{Error, Result};
use crate::frontend::FrameGrid;

pub use postproc::{frames_to_notes, PostProcConfig};

/// Pitch classes C..B plus the silence class.
pub const N_PITCH_CLASSES: usize = 13;
pub const PITCH_SILENCE: usize = 12;

/// Octave classes cover octaves `base_octave .. base_octave + n_octaves`;
/// index `n_octaves` is the silence class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctaveRange {
    pub base_octave: i32,
    pub n_octaves: usize,
}

impl Default for OctaveRange {
    fn default() -> Self {
        Self {
            base_octave: 2,
            n_octaves: 5,
        }
    }
}

impl OctaveRange {
    /// Width of the octave head including the silence class.
    pub fn n_classes(&self) -> usize {
        self.n_octaves + 1
    }

    pub fn silence(&self) -> usize {
        self.n_octaves
    }

    /// Lowest and highest representable MIDI pitch.
    pub fn midi_bounds(&self) -> (i32, i32) {
        let lo = (self.base_octave + 1) * 12;
        (lo, lo + 12 * self.n_octaves as i32 - 1)
    }
}

/// Scientific octave number of a MIDI pitch (C4 = 60 is in octave 4).
pub fn octave_of(pitch_midi: i32) -> i32 {
    pitch_midi.div_euclid(12) - 1
}

/// `(octave_class, pitch_class)` of a MIDI pitch; the octave class is the
/// octave number shifted down by `range.base_octave`.
pub fn midi_to_classes(pitch_midi: i32, range: &OctaveRange) -> Result<(usize, usize)> {
    let shifted = octave_of(pitch_midi) - range.base_octave;
    if shifted < 0 || shifted as usize >= range.n_octaves {
        let (lo, hi) = range.midi_bounds();
        return Err(Error::Invalid(format!(
            "pitch {pitch_midi} outside the octave range [{lo}, {hi}]"
        )));
    }
    Ok((shifted as usize, pitch_midi.rem_euclid(12) as usize))
}

pub fn classes_to_midi(octave_class: usize, pitch_class: usize, range: &OctaveRange) -> i32 {
    (range.base_octave + octave_class as i32 + 1) * 12 + pitch_class as i32
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLabels {
    pub onset: Vec<bool>,
    pub silence: Vec<bool>,
    pub octave: Vec<usize>,
    pub pitch: Vec<usize>,
}

impl FrameLabels {
    pub fn silent(n_frames: usize, range: &OctaveRange) -> Self {
        Self {
            onset: vec![false; n_frames],
            silence: vec![true; n_frames],
            octave: vec![range.silence(); n_frames],
            pitch: vec![PITCH_SILENCE; n_frames],
        }
    }

    pub fn len(&self) -> usize {
        self.onset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onset.is_empty()
    }

    /// Silence flag, silence octave and silence pitch class agree on every
    /// frame, and onsets only fall on voiced frames.
    pub fn validate(&self, range: &OctaveRange) -> Result<()> {
        let n = self.len();
        if self.silence.len() != n || self.octave.len() != n || self.pitch.len() != n {
            return Err(Error::Shape("frame label lengths differ".into()));
        }
        for t in 0..n {
            let (s, v, p) = (self.silence[t], self.octave[t], self.pitch[t]);
            if v >= range.n_classes() || p >= N_PITCH_CLASSES {
                return Err(Error::Invalid(format!("frame {t}: class out of range")));
            }
            if s != (v == range.silence()) || s != (p == PITCH_SILENCE) {
                return Err(Error::Invalid(format!("frame {t}: inconsistent silence labels")));
            }
            if self.onset[t] && s {
                return Err(Error::Invalid(format!("frame {t}: onset on a silent frame")));
            }
        }
        Ok(())
    }

    /// Frames `start .. start + len`.
    pub fn slice(&self, start: usize, len: usize) -> FrameLabels {
        let r = start..start + len;
        FrameLabels {
            onset: self.onset[r.clone()].to_vec(),
            silence: self.silence[r.clone()].to_vec(),
            octave: self.octave[r.clone()].to_vec(),
            pitch: self.pitch[r].to_vec(),
        }
    }

    pub fn extend(&mut self, other: &FrameLabels) {
        self.onset.extend_from_slice(&other.onset);
        self.silence.extend_from_slice(&other.silence);
        self.octave.extend_from_slice(&other.octave);
        self.pitch.extend_from_slice(&other.pitch);
    }

    /// Per-frame `[O, S, one-hot V, one-hot P]` rows, row-major.
    pub fn one_hot(&self, range: &OctaveRange) -> Vec<f64> {
        let w = 2 + range.n_classes() + N_PITCH_CLASSES;
        let mut out = vec![0.0; self.len() * w];
        for t in 0..self.len() {
            let row = &mut out[t * w..(t + 1) * w];
            row[0] = f64::from(u8::from(self.onset[t]));
            row[1] = f64::from(u8::from(self.silence[t]));
            row[2 + self.octave[t]] = 1.0;
            row[2 + range.n_classes() + self.pitch[t]] = 1.0;
        }
        out
    }

    /// Predictions whose logits are `±scale` toward these labels.
    pub fn to_predictions(&self, range: &OctaveRange, scale: f64) -> FramePredictions {
        let sign = |b: bool| if b { scale } else { -scale };
        let nv = range.n_classes();
        let mut octave = vec![-scale; self.len() * nv];
        let mut pitch = vec![-scale; self.len() * N_PITCH_CLASSES];
        for t in 0..self.len() {
            octave[t * nv + self.octave[t]] = scale;
            pitch[t * N_PITCH_CLASSES + self.pitch[t]] = scale;
        }
        FramePredictions {
            onset: self.onset.iter().map(|&b| sign(b)).collect(),
            silence: self.silence.iter().map(|&b| sign(b)).collect(),
            octave,
            pitch,
            n_octave_classes: nv,
        }
    }
}

/// Per-frame logits of the four heads.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePredictions {
    pub onset: Vec<f64>,
    pub silence: Vec<f64>,
    /// `T × n_octave_classes`, row-major.
    pub octave: Vec<f64>,
    /// `T × 13`, row-major.
    pub pitch: Vec<f64>,
    pub n_octave_classes: usize,
}

impl FramePredictions {
    pub fn len(&self) -> usize {
        self.onset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onset.is_empty()
    }

    /// Splits `T × (2 + V + 13)` logit rows into heads.
    pub fn from_rows(rows: &[f64], n_octave_classes: usize) -> Result<Self> {
        let w = 2 + n_octave_classes + N_PITCH_CLASSES;
        if !rows.len().is_multiple_of(w) {
            return Err(Error::Shape(format!("{} logits are not rows of width {w}", rows.len())));
        }
        let t = rows.len() / w;
        let mut p = FramePredictions {
            onset: Vec::with_capacity(t),
            silence: Vec::with_capacity(t),
            octave: Vec::with_capacity(t * n_octave_classes),
            pitch: Vec::with_capacity(t * N_PITCH_CLASSES),
            n_octave_classes,
        };
        for row in rows.chunks_exact(w) {
            p.onset.push(row[0]);
            p.silence.push(row[1]);
            p.octave.extend_from_slice(&row[2..2 + n_octave_classes]);
            p.pitch.extend_from_slice(&row[2 + n_octave_classes..]);
        }
        Ok(p)
    }

    pub fn octave_row(&self, t: usize) -> &[f64] {
        &self.octave[t * self.n_octave_classes..(t + 1) * self.n_octave_classes]
    }

    pub fn pitch_row(&self, t: usize) -> &[f64] {
        &self.pitch[t * N_PITCH_CLASSES..(t + 1) * N_PITCH_CLASSES]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.silence.len() != t
            || self.octave.len() != t * self.n_octave_classes
            || self.pitch.len() != t * N_PITCH_CLASSES
        {
            return Err(Error::Shape("frame prediction head lengths differ".into()));
        }
        Ok(())
    }
}

/// Frame targets for `notes` on `n_frames` frames of `grid`.
///
/// The frame nearest each onset is the onset frame. Frames whose centre lies
/// in `[onset, offset)` are voiced with the note's classes; the onset frame
/// is voiced as well even when its centre falls just before the onset.
pub fn notes_to_frames(
    notes: &[NoteEvent],
    n_frames: usize,
    grid: &FrameGrid,
    range: &OctaveRange,
) -> Result<FrameLabels> {
    crate::corpus::validate_notes(notes)?;
    if let Some(last) = notes.last() {
        if last.offset_s > grid.time(n_frames) + grid.hop_s {
            return Err(Error::Invalid(format!(
                "{n_frames} frames end before the last offset {} s",
                last.offset_s
            )));
        }
    }
    let mut labels = FrameLabels::silent(n_frames, range);
    for n in notes {
        let onset = grid.nearest(n.onset_s).max(0);
        if onset as usize >= n_frames {
            return Err(Error::Invalid(format!(
                "note at {} s lies beyond the {n_frames} frames",
                n.onset_s
            )));
        }
        let (v, p) = midi_to_classes(n.pitch_midi, range)?;
        let onset = onset as usize;
        let start = (grid.first_at_or_after(n.onset_s).max(0) as usize).min(onset);
        let end = (grid.first_at_or_after(n.offset_s).max(0) as usize)
            .min(n_frames)
            .max(onset + 1);
        for t in start..end {
            labels.silence[t] = false;
            labels.octave[t] = v;
            labels.pitch[t] = p;
        }
        labels.onset[onset] = true;
    }
    Ok(labels)
}

/// Reads a JSON array of `[onset_s, offset_s, pitch_midi]` triples.
pub fn read_notes_json(path: &Path) -> Result<Vec<NoteEvent>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let notes: Vec<NoteEvent> = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::format("note list", e.to_string()))?;
    crate::corpus::validate_notes(&notes)?;
    Ok(notes)
}

pub fn write_notes_json(path: &Path, notes: &[NoteEvent]) -> Result<()> {
    fs::write(path, serde_json::to_string(notes)?)?;
    Ok(())
}
