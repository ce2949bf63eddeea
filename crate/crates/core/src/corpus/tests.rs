use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use super::synth::synthesize;
use super::*;

fn small_config() -> CorpusConfig {
    CorpusConfig {
        songs_per_group: 3,
        test_songs_per_group: 2,
        notes_per_song: [4, 6],
        ..CorpusConfig::default()
    }
}

/// Frequency of the largest Hann-windowed, zero-padded FFT magnitude.
fn dominant_hz(samples: &[f64], sr: f64) -> f64 {
    let n = 1 << 16;
    let len = samples.len();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            if i < len {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos();
                Complex::new(samples[i] * w, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (k, _) = buf[..n / 2]
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
        .unwrap();
    k as f64 * sr / n as f64
}

#[test]
fn midi_to_hz_reference_points() {
    assert_eq!(midi_to_hz(69.0), 440.0);
    assert_eq!(midi_to_hz(81.0), 880.0);
    let expected = 440.0 * 2f64.powf(-9.0 / 12.0);
    assert!((midi_to_hz(60.0) - 261.6256).abs() < 1e-3);
    assert!((midi_to_hz(60.0) - expected).abs() < 1e-12);
}

#[test]
fn group_m_pitch_mean_tracks_center() {
    let cfg = CorpusConfig {
        noise_floor: 0.0,
        ..CorpusConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pitches = Vec::new();
    let mut i = 0;
    while pitches.len() < 120 {
        let s = sample_song(format!("m{i}"), &cfg, Attribute::M, &mut rng).unwrap();
        pitches.extend(s.notes.iter().map(|n| f64::from(n.pitch_midi)));
        i += 1;
    }
    let mean = pitches.iter().sum::<f64>() / pitches.len() as f64;
    assert!((mean - 55.0).abs() <= 2.0, "mean {mean}");
}

#[test]
fn single_a4_note_peaks_at_440() {
    let cfg = CorpusConfig {
        noise_floor: 0.0,
        vibrato_cents: 0.0,
        ..CorpusConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let song = synthesize(
        "a4".into(),
        &cfg,
        Attribute::F,
        &[NoteEvent::new(0.0, 0.5, 69)],
        0.5,
        &mut rng,
    )
    .unwrap();
    let f = dominant_hz(&song.samples, 16_000.0);
    assert!((f - 440.0).abs() <= 2.0, "{f}");
}

#[test]
fn every_note_sustain_peaks_at_its_pitch() {
    let cfg = CorpusConfig {
        noise_floor: 0.0,
        vibrato_cents: 0.0,
        ..CorpusConfig::default()
    };
    for attr in Attribute::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(11 + u64::from(attr.code()));
        let song = sample_song("x".into(), &cfg, attr, &mut rng).unwrap();
        for n in &song.notes {
            let a = ((n.onset_s + 0.03) * 16_000.0) as usize;
            let b = ((n.offset_s - 0.03) * 16_000.0) as usize;
            let f = dominant_hz(&song.samples[a..b], 16_000.0);
            let cents = 1200.0 * (f / midi_to_hz(f64::from(n.pitch_midi))).log2();
            assert!(cents.abs() <= 50.0, "{attr} pitch {} peak {f} Hz", n.pitch_midi);
        }
    }
}

#[test]
fn same_seed_same_song() {
    let cfg = CorpusConfig::default();
    let a = sample_song("s".into(), &cfg, Attribute::F, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_song("s".into(), &cfg, Attribute::F, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn silence_share_is_in_configured_band() {
    let cfg = CorpusConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let plan = plan_rhythm(&cfg, &mut rng).unwrap();
        let silent: f64 = plan.gaps.iter().sum();
        let frac = silent / plan.duration_s();
        assert!((0.19..=0.41).contains(&frac), "{frac}");
        for g in &plan.gaps[1..plan.gaps.len() - 1] {
            assert!(*g == 0.0 || *g >= 0.1);
        }
    }
}

#[test]
fn empty_pitch_support_is_rejected() {
    let cfg = CorpusConfig {
        pitch_range_midi: [70, 60],
        ..CorpusConfig::default()
    };
    let r = sample_song("x".into(), &cfg, Attribute::F, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn negative_harmonic_is_rejected() {
    let mut cfg = CorpusConfig::default();
    cfg.group_m.harmonics[1] = -0.1;
    assert!(cfg.validate().is_err());
}

#[test]
fn corpus_counts_and_groups() {
    let cfg = CorpusConfig {
        songs_per_group: 10,
        test_songs_per_group: 3,
        notes_per_song: [3, 5],
        ..CorpusConfig::default()
    };
    let c = build_corpus(&cfg).unwrap();
    assert_eq!(c.train.len(), 20);
    assert_eq!(c.test.len(), 6);
    for split in [Split::Train, Split::Test] {
        for a in Attribute::ALL {
            assert!(c.split(split).iter().any(|s| s.attribute == a));
        }
    }
    let train_ids: std::collections::HashSet<_> = c.train.iter().map(|s| &s.id).collect();
    assert!(c.test.iter().all(|s| !train_ids.contains(&s.id)));
}

#[test]
fn test_split_is_duration_balanced() {
    let c = build_corpus(&small_config()).unwrap();
    let f = c.group_duration_s(Split::Test, Attribute::F);
    let m = c.group_duration_s(Split::Test, Attribute::M);
    assert!((f - m).abs() / (f + m) <= 0.1, "{f} vs {m}");
}

#[test]
fn build_is_deterministic() {
    let cfg = small_config();
    assert_eq!(build_corpus(&cfg).unwrap(), build_corpus(&cfg).unwrap());
    let other = CorpusConfig { seed: 1, ..cfg.clone() };
    assert_ne!(build_corpus(&cfg).unwrap(), build_corpus(&other).unwrap());
}

#[test]
fn group_f_sings_higher() {
    let cfg = CorpusConfig {
        songs_per_group: 20,
        test_songs_per_group: 2,
        ..CorpusConfig::default()
    };
    let c = build_corpus(&cfg).unwrap();
    let mean = |a: Attribute| {
        let p: Vec<f64> = c
            .train
            .iter()
            .filter(|s| s.attribute == a)
            .flat_map(|s| s.notes.iter().map(|n| f64::from(n.pitch_midi)))
            .collect();
        assert!(p.len() >= 200);
        p.iter().sum::<f64>() / p.len() as f64
    };
    let gap = cfg.group_f.pitch_center_midi - cfg.group_m.pitch_center_midi;
    assert!(mean(Attribute::F) - mean(Attribute::M) >= gap / 2.0);
}

#[test]
fn degenerate_split_sizes_are_rejected() {
    let cfg = CorpusConfig {
        test_songs_per_group: 1,
        ..small_config()
    };
    assert!(build_corpus(&cfg).is_err());
}

#[test]
fn write_then_read_is_identity() {
    let c = build_corpus(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&c, dir.path()).unwrap();
    assert_eq!(read_corpus(dir.path()).unwrap(), c);
}

fn one_note_fixture(dir: &std::path::Path, record: &str) {
    fs::create_dir_all(dir.join("audio")).unwrap();
    write_wav(&dir.join("audio/a.wav"), 16_000, &vec![0.0; 16_000]).unwrap();
    fs::write(dir.join(MANIFEST_FILE), record).unwrap();
}

#[test]
fn hand_written_manifest_parses() {
    let dir = tempfile::tempdir().unwrap();
    one_note_fixture(
        dir.path(),
        r#"{"id":"a","split":"test","attribute":1,"audio":"audio/a.wav","notes":[[0.1234,0.5678,62]]}"#,
    );
    let c = read_corpus(dir.path()).unwrap();
    assert!(c.train.is_empty());
    let s = &c.test[0];
    assert_eq!(s.attribute, Attribute::M);
    assert_eq!(s.sample_rate_hz, 16_000);
    assert_eq!(s.notes, vec![NoteEvent::new(0.1234, 0.5678, 62)]);
}

#[test]
fn unknown_attribute_code_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_note_fixture(
        dir.path(),
        r#"{"id":"a","split":"test","attribute":2,"audio":"audio/a.wav","notes":[]}"#,
    );
    assert!(matches!(read_corpus(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn inverted_note_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_note_fixture(
        dir.path(),
        r#"{"id":"a","split":"train","attribute":0,"audio":"audio/a.wav","notes":[[0.5,0.5,60]]}"#,
    );
    assert!(read_corpus(dir.path()).is_err());
}

#[test]
fn missing_audio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_note_fixture(
        dir.path(),
        r#"{"id":"b","split":"train","attribute":0,"audio":"audio/b.wav","notes":[]}"#,
    );
    assert!(matches!(read_corpus(dir.path()), Err(Error::MissingFile(_))));
}

#[test]
fn malformed_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_note_fixture(dir.path(), "{not json}\n");
    assert!(matches!(read_corpus(dir.path()), Err(Error::Format { .. })));
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn read_write_identity(seed in 0u64..1000, n in 1usize..4, attr in 0u8..2) {
            let cfg = CorpusConfig { notes_per_song: [n, n + 1], ..CorpusConfig::default() };
            let attr = Attribute::from_code(attr).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let song = sample_song(format!("p{seed}"), &cfg, attr, &mut rng).unwrap();
            let corpus = Corpus { train: vec![song], test: vec![] };
            let dir = tempfile::tempdir().unwrap();
            write_corpus(&corpus, dir.path()).unwrap();
            prop_assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
        }
    }
}
