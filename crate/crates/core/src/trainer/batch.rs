use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Attribute, Song};
use crate::error::{Error, Result};
use crate::frontend::{FeatureSequence, FrontendConfig};
use crate::notelab::{notes_to_frames, FrameLabels, OctaveRange};
use crate::svtmodel::FeatureNorm;
use crate::tensornet::Tensor;

/// A song with its features and frame labels on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSong {
    pub id: String,
    pub attribute: Attribute,
    pub features: FeatureSequence,
    pub labels: FrameLabels,
    pub notes: Vec<crate::corpus::NoteEvent>,
}

pub fn prepare_songs(songs: &[Song], frontend: &FrontendConfig, octaves: &OctaveRange) -> Result<Vec<PreparedSong>> {
    frontend.validate()?;
    songs
        .par_iter()
        .map(|s| {
            let features = frontend.extract(&s.samples, s.sample_rate_hz)?;
            let labels = notes_to_frames(&s.notes, features.n_frames, &features.grid(), octaves)?;
            Ok(PreparedSong {
                id: s.id.clone(),
                attribute: s.attribute,
                features,
                labels,
                notes: s.notes.clone(),
            })
        })
        .collect()
}

/// Fixed-length excerpts from several songs, stacked for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Normalised features `[B, T, D]`.
    pub x: Tensor,
    /// Labels of all `B·T` frames, chunk after chunk.
    pub labels: FrameLabels,
    pub attributes: Vec<Attribute>,
    pub songs: Vec<usize>,
    pub starts: Vec<usize>,
    pub chunk_frames: usize,
}

impl Batch {
    pub fn n_frames(&self) -> usize {
        self.attributes.len() * self.chunk_frames
    }

    /// Attribute target of every frame.
    pub fn frame_targets(&self) -> Vec<f64> {
        self.attributes
            .iter()
            .flat_map(|a| std::iter::repeat_n(a.target(), self.chunk_frames))
            .collect()
    }

    /// The chunks of one group as a batch of their own, if any.
    pub fn subset(&self, attribute: Attribute) -> Option<Batch> {
        let keep: Vec<usize> = (0..self.attributes.len())
            .filter(|&i| self.attributes[i] == attribute)
            .collect();
        if keep.is_empty() {
            return None;
        }
        let d = self.x.last_dim();
        let t = self.chunk_frames;
        let mut x = Vec::with_capacity(keep.len() * t * d);
        let mut labels = FrameLabels {
            onset: vec![],
            silence: vec![],
            octave: vec![],
            pitch: vec![],
        };
        for &i in &keep {
            x.extend_from_slice(&self.x.data()[i * t * d..(i + 1) * t * d]);
            labels.extend(&self.labels.slice(i * t, t));
        }
        Some(Batch {
            x: Tensor::new(vec![keep.len(), t, d], x).expect("sizes agree"),
            labels,
            attributes: keep.iter().map(|&i| self.attributes[i]).collect(),
            songs: keep.iter().map(|&i| self.songs[i]).collect(),
            starts: keep.iter().map(|&i| self.starts[i]).collect(),
            chunk_frames: t,
        })
    }
}

/// Draws songs uniformly with replacement, then a uniform excerpt per song.
pub struct BatchSampler<'a> {
    songs: &'a [PreparedSong],
    norm: &'a FeatureNorm,
    batch_songs: usize,
    chunk_frames: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        songs: &'a [PreparedSong],
        norm: &'a FeatureNorm,
        batch_songs: usize,
        chunk_s: f64,
        hop_s: f64,
        seed: u64,
    ) -> Result<Self> {
        if songs.is_empty() || batch_songs == 0 {
            return Err(Error::Invalid("no songs or empty batches".into()));
        }
        let chunk_frames = (chunk_s / hop_s).round() as usize;
        if chunk_frames < 4 {
            return Err(Error::Config(format!("chunk of {chunk_s} s is under four frames")));
        }
        let shortest = songs.iter().map(|s| s.features.n_frames).min().unwrap_or(0);
        if chunk_frames > shortest {
            return Err(Error::Config(format!(
                "chunk of {chunk_frames} frames exceeds the shortest song ({shortest} frames)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        Ok(Self {
            songs,
            norm,
            batch_songs,
            chunk_frames,
            rng,
        })
    }

    pub fn chunk_frames(&self) -> usize {
        self.chunk_frames
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let (t, b) = (self.chunk_frames, self.batch_songs);
        let d = self.songs[0].features.dim;
        let mut x = Vec::with_capacity(b * t * d);
        let mut labels = FrameLabels {
            onset: Vec::with_capacity(b * t),
            silence: Vec::with_capacity(b * t),
            octave: Vec::with_capacity(b * t),
            pitch: Vec::with_capacity(b * t),
        };
        let (mut attributes, mut songs, mut starts) = (vec![], vec![], vec![]);
        for _ in 0..b {
            let i = self.rng.random_range(0..self.songs.len());
            let s = &self.songs[i];
            let start = self.rng.random_range(0..=s.features.n_frames - t);
            for r in start..start + t {
                let row = s.features.frame(r);
                x.extend(row.iter().zip(&self.norm.mean).zip(&self.norm.std).map(|((v, m), sd)| (v - m) / sd));
            }
            labels.extend(&s.labels.slice(start, t));
            attributes.push(s.attribute);
            songs.push(i);
            starts.push(start);
        }
        Ok(Batch {
            x: Tensor::new(vec![b, t, d], x)?,
            labels,
            attributes,
            songs,
            starts,
            chunk_frames: t,
        })
    }
}
