use super::*;

fn tone(freq: f64, amp: f64, n: usize, sr: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect()
}

/// Mel energies of one frame via a direct O(N²) DFT.
fn direct_mel_energies(seg: &[f64], n_fft: usize, bank: &[Vec<f64>]) -> Vec<f64> {
    let win = hann(seg.len());
    let power: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, (s, w)) in seg.iter().zip(&win).enumerate() {
                let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += s * w * ang.cos();
                im += s * w * ang.sin();
            }
            re * re + im * im
        })
        .collect();
    bank.iter()
        .map(|f| f.iter().zip(&power).map(|(a, b)| a * b).sum())
        .collect()
}

#[test]
fn silence_is_log_eps() {
    let f = logmel(&vec![0.0; 4000], 16_000, 0.04, 0.02, 40).unwrap();
    assert!(f.frames.iter().all(|&v| v == LOG_EPS.ln()));
}

#[test]
fn frame_count_formula() {
    let cfg = FrontendConfig::default();
    for n in [640usize, 641, 959, 960, 16_000, 16_321] {
        let f = cfg.extract(&vec![0.0; n], 16_000).unwrap();
        let dur = n as f64 / 16_000.0;
        let expected = ((dur - 0.04) / 0.02 + 1e-9).floor() as usize + 1;
        assert_eq!(f.n_frames, expected, "n = {n}");
        assert_eq!(cfg.n_frames(dur), expected);
        assert_eq!(f.dim, 40);
    }
    assert!((cfg.extract(&[0.0; 640], 16_000).unwrap().t0_s - 0.02).abs() < 1e-15);
}

#[test]
fn tone_matches_direct_dft_and_argmax_is_stable() {
    let sr = 16_000.0;
    let x = tone(440.0, 0.5, 8000, sr);
    let f = logmel(&x, 16_000, 0.04, 0.02, 40).unwrap();
    let bank = mel_filterbank(40, 1024, 16_000);
    for i in [0usize, 3, 11] {
        let want = direct_mel_energies(&x[i * 320..i * 320 + 640], 1024, &bank);
        for (got, w) in f.frame(i).iter().zip(&want) {
            let e = got.exp() - LOG_EPS;
            assert!((e - w).abs() <= 1e-8 * w.max(1.0), "frame {i}: {e} vs {w}");
        }
    }
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    let first = argmax(f.frame(0));
    assert!((0..f.n_frames).all(|i| argmax(f.frame(i)) == first));
    // the winning filter is one of the two whose centres bracket 440 Hz
    let centers = mel_centers_hz(40, 16_000);
    let below = centers.iter().rposition(|&c| c <= 440.0).unwrap();
    assert!(first == below || first == below + 1);
}

#[test]
fn doubling_amplitude_adds_log4() {
    let sr = 16_000.0;
    let a = logmel(&tone(523.25, 0.2, 4000, sr), 16_000, 0.04, 0.02, 40).unwrap();
    let b = logmel(&tone(523.25, 0.4, 4000, sr), 16_000, 0.04, 0.02, 40).unwrap();
    let mut checked = 0;
    for (x, y) in a.frames.iter().zip(&b.frames) {
        if x.exp() > 1.0 {
            assert!((y - x - 4f64.ln()).abs() <= 1e-6);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn noise_features_are_finite() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = logmel(&x, 16_000, 0.04, 0.02, 40).unwrap();
    assert!(f.frames.iter().all(|v| v.is_finite()));
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(logmel(&[], 16_000, 0.04, 0.02, 40).is_err());
    assert!(logmel(&[0.0; 100], 16_000, 0.04, 0.02, 40).is_err());
    assert!(logmel(&[0.0; 1000], 16_000, 0.04, 0.0, 40).is_err());
}

#[test]
fn frame_time_examples() {
    assert_eq!(frame_time(0, 0.02, 0.0), 0.0);
    assert!((frame_time(5, 0.02, 0.0) - 0.10).abs() < 1e-15);
    assert!((frame_time(3, 0.025, 0.0125) - 0.0875).abs() < 1e-15);
}

#[test]
fn grid_lookup() {
    let g = FrameGrid { hop_s: 0.02, t0_s: 0.0 };
    assert_eq!(g.nearest(0.109), 5);
    assert_eq!(g.nearest(0.111), 6);
    assert_eq!(g.first_at_or_after(0.10), 5);
    assert_eq!(g.first_at_or_after(0.1001), 6);
    assert_eq!(g.first_at_or_after(0.20), 10);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..1000 {
        let t = g.time(i);
        assert!(t > prev);
        assert_eq!(g.first_at_or_after(t), i as i64);
        prev = t;
    }
}

#[test]
fn cache_round_trip() {
    let x = tone(300.0, 0.3, 3000, 16_000.0);
    let f = logmel(&x, 16_000, 0.04, 0.02, 40).unwrap();
    let mut buf = Vec::new();
    write_features(&mut buf, &f).unwrap();
    assert_eq!(buf.len(), 40 + 4 * f.frames.len());
    let g = read_features(buf.as_slice()).unwrap();
    assert_eq!((g.n_frames, g.dim, g.hop_s, g.t0_s), (f.n_frames, f.dim, f.hop_s, f.t0_s));
    for (a, b) in f.frames.iter().zip(&g.frames) {
        assert_eq!(*b, f64::from(*a as f32));
    }
    buf[0] = b'X';
    assert!(read_features(buf.as_slice()).is_err());
}
