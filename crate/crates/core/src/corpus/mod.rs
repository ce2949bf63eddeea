//! Synthetic two-group singing corpus.
//!
//! Each group sings from its own pitch distribution with its own harmonic
//! timbre, so the group attribute can be read both from what is sung and from
//! how it sounds. Train and test songs are generated in group pairs sharing a
//! rhythm, which keeps per-group durations equal in every split.

mod io;
mod synth;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_corpus, read_wav, write_corpus, write_wav, MANIFEST_FILE};
pub use synth::{plan_rhythm, render_song, sample_song, RhythmPlan};

/// Binary group code: 0 is group F, 1 is group M.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    F,
    M,
}

impl Attribute {
    pub const ALL: [Attribute; 2] = [Attribute::F, Attribute::M];

    pub fn code(self) -> u8 {
        match self {
            Attribute::F => 0,
            Attribute::M => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Attribute::F),
            1 => Ok(Attribute::M),
            other => Err(Error::Invalid(format!("attribute code {other}, expected 0 or 1"))),
        }
    }

    /// BCE target for the attribute predictor.
    pub fn target(self) -> f64 {
        f64::from(self.code())
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::F => "F",
            Attribute::M => "M",
        })
    }
}

impl Serialize for Attribute {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Attribute::from_code(code).map_err(serde::de::Error::custom)
    }
}

/// One note: onset and offset in seconds, integer MIDI pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, i32)", into = "(f64, f64, i32)")]
pub struct NoteEvent {
    pub onset_s: f64,
    pub offset_s: f64,
    pub pitch_midi: i32,
}

impl NoteEvent {
    pub fn new(onset_s: f64, offset_s: f64, pitch_midi: i32) -> Self {
        Self {
            onset_s,
            offset_s,
            pitch_midi,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

impl From<(f64, f64, i32)> for NoteEvent {
    fn from((on, off, p): (f64, f64, i32)) -> Self {
        NoteEvent::new(on, off, p)
    }
}

impl From<NoteEvent> for (f64, f64, i32) {
    fn from(n: NoteEvent) -> Self {
        (n.onset_s, n.offset_s, n.pitch_midi)
    }
}

/// Checks that notes are finite, positive-length, sorted and non-overlapping.
pub fn validate_notes(notes: &[NoteEvent]) -> Result<()> {
    let mut prev_off = 0.0;
    for (i, n) in notes.iter().enumerate() {
        if !(n.onset_s.is_finite() && n.offset_s.is_finite()) || n.onset_s < 0.0 {
            return Err(Error::Invalid(format!("note {i}: bad times {n:?}")));
        }
        if n.offset_s <= n.onset_s {
            return Err(Error::Invalid(format!(
                "note {i}: offset {} not after onset {}",
                n.offset_s, n.onset_s
            )));
        }
        if n.onset_s < prev_off {
            return Err(Error::Invalid(format!("note {i} overlaps or is out of order")));
        }
        prev_off = n.offset_s;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub id: String,
    pub attribute: Attribute,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
    pub notes: Vec<NoteEvent>,
}

impl Song {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Invalid(format!("song {}: zero sample rate", self.id)));
        }
        if self.samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Invalid(format!("song {}: samples outside [-1, 1]", self.id)));
        }
        validate_notes(&self.notes)?;
        if let Some(last) = self.notes.last() {
            if last.offset_s > self.duration_s() + 1e-6 {
                return Err(Error::Invalid(format!(
                    "song {}: note ends at {} past duration {}",
                    self.id,
                    last.offset_s,
                    self.duration_s()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Song>,
    pub test: Vec<Song>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Song] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Total audio seconds of `attribute` in `split`.
    pub fn group_duration_s(&self, split: Split, attribute: Attribute) -> f64 {
        self.split(split)
            .iter()
            .filter(|s| s.attribute == attribute)
            .map(Song::duration_s)
            .sum()
    }
}

pub const CORPUS_CONFIG_VERSION: u32 = 1;

/// Voice of one group: pitch distribution and harmonic amplitude profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupVoice {
    pub pitch_center_midi: f64,
    pub pitch_spread_midi: f64,
    /// Relative amplitudes of harmonics 1, 2, ...
    pub harmonics: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Must equal [`CORPUS_CONFIG_VERSION`].
    pub version: u32,
    /// Train songs per group.
    pub songs_per_group: usize,
    pub test_songs_per_group: usize,
    /// Inclusive `[min, max]` notes per song.
    pub notes_per_song: [usize; 2],
    /// Inclusive `[min, max]` note rate in notes per second.
    pub tempo_notes_per_s: [f64; 2],
    /// Inclusive `[P_min, P_max]` MIDI pitch support.
    pub pitch_range_midi: [i32; 2],
    pub group_f: GroupVoice,
    pub group_m: GroupVoice,
    pub vibrato_cents: f64,
    pub vibrato_hz: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_floor: f64,
    /// Fraction of song time spent in silence, `[min, max]`.
    pub silence_fraction: [f64; 2],
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            version: CORPUS_CONFIG_VERSION,
            songs_per_group: 48,
            test_songs_per_group: 32,
            notes_per_song: [10, 16],
            tempo_notes_per_s: [2.0, 4.0],
            pitch_range_midi: [45, 79],
            group_f: GroupVoice {
                pitch_center_midi: 67.0,
                pitch_spread_midi: 3.0,
                harmonics: vec![1.0, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15],
            },
            group_m: GroupVoice {
                pitch_center_midi: 55.0,
                pitch_spread_midi: 3.0,
                harmonics: vec![1.0, 0.5, 0.2],
            },
            vibrato_cents: 100.0,
            vibrato_hz: 5.5,
            noise_floor: 0.02,
            silence_fraction: [0.2, 0.4],
            sample_rate_hz: 16_000,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn voice(&self, attribute: Attribute) -> &GroupVoice {
        match attribute {
            Attribute::F => &self.group_f,
            Attribute::M => &self.group_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CORPUS_CONFIG_VERSION {
            return bad(format!(
                "corpus config version {}, expected {CORPUS_CONFIG_VERSION}",
                self.version
            ));
        }
        let [pmin, pmax] = self.pitch_range_midi;
        if pmin > pmax {
            return bad(format!("empty pitch support [{pmin}, {pmax}]"));
        }
        if !(0..=127).contains(&pmin) || !(0..=127).contains(&pmax) {
            return bad("pitch range outside MIDI 0..=127".into());
        }
        let [nmin, nmax] = self.notes_per_song;
        if nmin == 0 || nmin > nmax {
            return bad(format!("notes_per_song [{nmin}, {nmax}]"));
        }
        let [tmin, tmax] = self.tempo_notes_per_s;
        if !(tmin > 0.0 && tmin <= tmax && tmax.is_finite()) {
            return bad(format!("tempo range [{tmin}, {tmax}]"));
        }
        let [smin, smax] = self.silence_fraction;
        if !(0.0..1.0).contains(&smin) || !(smin..1.0).contains(&smax) {
            return bad(format!("silence fraction [{smin}, {smax}]"));
        }
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive".into());
        }
        for (name, v) in [("group_f", &self.group_f), ("group_m", &self.group_m)] {
            if v.harmonics.is_empty()
                || v.harmonics.iter().any(|a| !(a.is_finite() && *a >= 0.0))
                || v.harmonics.iter().all(|a| *a == 0.0)
            {
                return bad(format!("{name}: harmonic amplitudes must be non-negative, not all zero"));
            }
            if !(v.pitch_spread_midi >= 0.0 && v.pitch_center_midi.is_finite()) {
                return bad(format!("{name}: bad pitch distribution"));
            }
        }
        if self.group_f.pitch_center_midi == self.group_m.pitch_center_midi {
            return bad("group pitch distributions must have different means".into());
        }
        if !(self.vibrato_cents >= 0.0 && self.vibrato_hz >= 0.0 && self.noise_floor >= 0.0) {
            return bad("vibrato and noise parameters must be non-negative".into());
        }
        Ok(())
    }
}

/// Equal-temperament frequency of a (possibly fractional) MIDI pitch.
pub fn midi_to_hz(pitch_midi: f64) -> f64 {
    440.0 * 2f64.powf((pitch_midi - 69.0) / 12.0)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn split_songs(config: &CorpusConfig, split: Split, pairs: usize) -> Result<Vec<Song>> {
    let split_code: u64 = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut songs: Vec<Song> = (0..pairs)
        .into_par_iter()
        .map(|pair| -> Result<[Song; 2]> {
            let base = (split_code << 40) | ((pair as u64) << 4);
            let plan = plan_rhythm(config, &mut stream_rng(config.seed, base))?;
            let mut out = Vec::with_capacity(2);
            for (k, attr) in Attribute::ALL.into_iter().enumerate() {
                let mut rng = stream_rng(config.seed, base | (k as u64 + 1));
                let id = format!("{}-{}-{pair:04}", split.as_str(), attr.to_string().to_lowercase());
                out.push(render_song(id, config, attr, &plan, &mut rng)?);
            }
            let m = out.pop().expect("two songs");
            let f = out.pop().expect("two songs");
            Ok([f, m])
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    songs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(songs)
}

/// Generates train and test splits. Deterministic in `config`.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    if config.songs_per_group < 2 || config.test_songs_per_group < 2 {
        return Err(Error::Config(
            "need at least 2 songs per group in each split".into(),
        ));
    }
    Ok(Corpus {
        train: split_songs(config, Split::Train, config.songs_per_group)?,
        test: split_songs(config, Split::Test, config.test_songs_per_group)?,
    })
}

#[cfg(test)]
mod tests;
