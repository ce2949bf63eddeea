use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{midi_to_hz, Attribute, CorpusConfig, NoteEvent, Song};
use crate::error::{Error, Result};

const MIN_GAP_S: f64 = 0.12;
const LEAD_MIN_S: f64 = 0.1;
const TRAIL_MIN_S: f64 = 0.15;
const ATTACK_S: f64 = 0.015;
const RELEASE_S: f64 = 0.025;

/// Note timing of a song without pitches. `gaps[i]` is the silence before
/// note `i`; `gaps[n]` is the trailing silence.
#[derive(Clone, Debug, PartialEq)]
pub struct RhythmPlan {
    pub durations: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl RhythmPlan {
    pub fn duration_s(&self) -> f64 {
        self.durations.iter().sum::<f64>() + self.gaps.iter().sum::<f64>()
    }

    /// `(onset, offset)` of every note.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.durations.len());
        for (d, g) in self.durations.iter().zip(&self.gaps) {
            t += g;
            out.push((t, t + d));
            t += d;
        }
        out
    }
}

pub fn plan_rhythm<R: Rng + ?Sized>(config: &CorpusConfig, rng: &mut R) -> Result<RhythmPlan> {
    let [nmin, nmax] = config.notes_per_song;
    let n = rng.random_range(nmin..=nmax);
    let [tmin, tmax] = config.tempo_notes_per_s;
    let durations: Vec<f64> = (0..n)
        .map(|_| {
            let rate = if tmax > tmin { rng.random_range(tmin..=tmax) } else { tmin };
            round_ms(1.0 / rate)
        })
        .collect();
    let sung: f64 = durations.iter().sum();
    let [smin, smax] = config.silence_fraction;
    let frac = if smax > smin { rng.random_range(smin..=smax) } else { smin };
    let silence = sung * frac / (1.0 - frac);

    // lead, trail and a random subset of the inner boundaries carry silence
    let mut inner: Vec<bool> = (1..n).map(|_| rng.random_bool(0.5)).collect();
    let fixed = LEAD_MIN_S + TRAIL_MIN_S;
    while fixed + MIN_GAP_S * inner.iter().filter(|b| **b).count() as f64 > silence {
        match inner.iter().rposition(|b| *b) {
            Some(i) => inner[i] = false,
            None => break,
        }
    }
    let mut mins = vec![LEAD_MIN_S];
    mins.extend(inner.iter().map(|&b| if b { MIN_GAP_S } else { 0.0 }));
    mins.push(TRAIL_MIN_S);
    let weights: Vec<f64> = mins
        .iter()
        .map(|&m| if m > 0.0 { rng.random_range(0.5..1.5) } else { 0.0 })
        .collect();
    let spare = (silence - mins.iter().sum::<f64>()).max(0.0);
    let wsum: f64 = weights.iter().sum();
    let gaps = mins
        .iter()
        .zip(&weights)
        .map(|(m, w)| round_ms(m + spare * w / wsum))
        .collect();
    Ok(RhythmPlan { durations, gaps })
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Pitch drawn from the group's rounded normal, clipped to the corpus range.
fn draw_pitch<R: Rng + ?Sized>(config: &CorpusConfig, attribute: Attribute, rng: &mut R) -> Result<i32> {
    let v = config.voice(attribute);
    let normal = Normal::new(v.pitch_center_midi, v.pitch_spread_midi)
        .map_err(|e| Error::Config(format!("pitch distribution: {e}")))?;
    let [lo, hi] = config.pitch_range_midi;
    Ok((normal.sample(rng).round() as i32).clamp(lo, hi))
}

/// Assigns pitches to `plan` and synthesizes the waveform.
pub fn render_song<R: Rng + ?Sized>(
    id: String,
    config: &CorpusConfig,
    attribute: Attribute,
    plan: &RhythmPlan,
    rng: &mut R,
) -> Result<Song> {
    config.validate()?;
    let spans = plan.spans();
    let mut notes = Vec::with_capacity(spans.len());
    for (i, &(on, off)) in spans.iter().enumerate() {
        let mut p = draw_pitch(config, attribute, rng)?;
        // abutting notes need a pitch change to be separable
        let abuts = i > 0 && plan.gaps[i] == 0.0;
        if abuts {
            let prev = notes.last().map(|n: &NoteEvent| n.pitch_midi).unwrap_or(p);
            for _ in 0..16 {
                if p != prev {
                    break;
                }
                p = draw_pitch(config, attribute, rng)?;
            }
            if p == prev {
                let [lo, hi] = config.pitch_range_midi;
                p = if prev < hi { prev + 1 } else if prev > lo { prev - 1 } else { prev };
            }
        }
        notes.push(NoteEvent::new(on, off, p));
    }
    synthesize(id, config, attribute, &notes, plan.duration_s(), rng)
}

/// Draws a rhythm and renders a song for `attribute`.
pub fn sample_song<R: Rng + ?Sized>(
    id: String,
    config: &CorpusConfig,
    attribute: Attribute,
    rng: &mut R,
) -> Result<Song> {
    let plan = plan_rhythm(config, rng)?;
    render_song(id, config, attribute, &plan, rng)
}

/// Additive harmonic synthesis of `notes` with vibrato, note envelopes and
/// Gaussian noise. Samples are quantized to the 16-bit PCM grid.
pub(crate) fn synthesize<R: Rng + ?Sized>(
    id: String,
    config: &CorpusConfig,
    attribute: Attribute,
    notes: &[NoteEvent],
    duration_s: f64,
    rng: &mut R,
) -> Result<Song> {
    super::validate_notes(notes)?;
    let sr = f64::from(config.sample_rate_hz);
    let n_samples = (duration_s * sr).round() as usize;
    let mut out = vec![0.0; n_samples];
    let voice = config.voice(attribute);
    // small per-song timbre jitter keeps voices within a group from being identical
    let harmonics: Vec<f64> = voice
        .harmonics
        .iter()
        .map(|a| a * rng.random_range(0.9..1.1))
        .collect();
    let norm: f64 = harmonics.iter().sum();
    let nyquist_guard = 0.45 * sr;
    let vib_depth = config.vibrato_cents / 1200.0;

    for note in notes {
        let start = (note.onset_s * sr).round() as usize;
        let end = ((note.offset_s * sr).round() as usize).min(n_samples);
        if end <= start {
            continue;
        }
        let f0 = midi_to_hz(f64::from(note.pitch_midi));
        let gain = rng.random_range(0.5..0.8) / norm;
        let vib_phase = rng.random_range(0.0..2.0 * PI);
        let len = end - start;
        let attack = ((ATTACK_S * sr) as usize).min(len / 3).max(1);
        let release = ((RELEASE_S * sr) as usize).min(len / 3).max(1);
        let mut phase = 0.0f64;
        for (k, s) in out[start..end].iter_mut().enumerate() {
            let t = k as f64 / sr;
            let f = f0 * 2f64.powf(vib_depth * (2.0 * PI * config.vibrato_hz * t + vib_phase).sin());
            let env = if k < attack {
                k as f64 / attack as f64
            } else if k >= len - release {
                (len - k) as f64 / release as f64
            } else {
                1.0
            };
            let mut v = 0.0;
            for (h, a) in harmonics.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                if fh >= nyquist_guard {
                    break;
                }
                v += a * (phase * (h + 1) as f64).sin();
            }
            *s += gain * env * v;
            phase += 2.0 * PI * f / sr;
            if phase > 2.0 * PI * 64.0 {
                phase -= 2.0 * PI * 64.0;
            }
        }
    }

    if config.noise_floor > 0.0 {
        let noise = Normal::new(0.0, config.noise_floor)
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        for s in out.iter_mut() {
            *s += noise.sample(rng);
        }
    }
    for s in out.iter_mut() {
        *s = quantize_pcm16(*s);
    }
    let song = Song {
        id,
        attribute,
        sample_rate_hz: config.sample_rate_hz,
        samples: out,
        notes: notes.to_vec(),
    };
    song.validate()?;
    Ok(song)
}

pub(crate) const PCM_SCALE: f64 = 32767.0;

pub(crate) fn quantize_pcm16(x: f64) -> f64 {
    let q = (x.clamp(-1.0, 1.0) * PCM_SCALE).round();
    q / PCM_SCALE
}
