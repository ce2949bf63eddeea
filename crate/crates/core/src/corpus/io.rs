//! Corpus directory layout: `manifest.jsonl` with one record per song plus
//! `audio/<id>.wav` as mono 16-bit PCM.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::PCM_SCALE;
use super::{Attribute, Corpus, NoteEvent, Song, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    split: Split,
    attribute: Attribute,
    audio: String,
    notes: Vec<NoteEvent>,
}

pub fn write_wav(path: &Path, sample_rate_hz: u32, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads mono 16-bit PCM; returns `(sample_rate_hz, samples)`.
pub fn read_wav(path: &Path) -> Result<(u32, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            "wav",
            format!("{}: expected mono 16-bit PCM, got {spec:?}", path.display()),
        ));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((spec.sample_rate, samples))
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir)?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    for (split, songs) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        for song in songs {
            song.validate()?;
            let rel = format!("audio/{}.wav", song.id);
            write_wav(&dir.join(&rel), song.sample_rate_hz, &song.samples)?;
            let rec = ManifestRecord {
                id: song.id.clone(),
                split,
                attribute: song.attribute,
                audio: rel,
                notes: song.notes.clone(),
            };
            serde_json::to_writer(&mut manifest, &rec)?;
            manifest.write_all(b"\n")?;
        }
    }
    manifest.flush()?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let reader = BufReader::new(fs::File::open(&path)?);
    let mut corpus = Corpus {
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::format("manifest", format!("duplicate id {}", rec.id)));
        }
        let (sr, samples) = read_wav(&dir.join(&rec.audio))?;
        let song = Song {
            id: rec.id,
            attribute: rec.attribute,
            sample_rate_hz: sr,
            samples,
            notes: rec.notes,
        };
        song.validate()
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", lineno + 1)))?;
        match rec.split {
            Split::Train => corpus.train.push(song),
            Split::Test => corpus.test.push(song),
        }
    }
    Ok(corpus)
}
