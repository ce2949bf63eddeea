use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn n(on: f64, off: f64, p: i32) -> NoteEvent {
    NoteEvent::new(on, off, p)
}

/// Largest matching by exhaustive search over injections.
fn brute_force(adm: &dyn Fn(usize, usize) -> bool, nr: usize, ne: usize) -> usize {
    fn go(i: usize, used: &mut Vec<bool>, adm: &dyn Fn(usize, usize) -> bool, nr: usize) -> usize {
        if i == nr {
            return 0;
        }
        let mut best = go(i + 1, used, adm, nr);
        for j in 0..used.len() {
            if !used[j] && adm(i, j) {
                used[j] = true;
                best = best.max(1 + go(i + 1, used, adm, nr));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; ne], adm, nr)
}

fn admissible_oracle(r: &NoteEvent, e: &NoteEvent, mode: MatchMode) -> bool {
    let on = (r.onset_s - e.onset_s).abs() <= 0.05 + 1e-9;
    let pitch = (r.pitch_midi - e.pitch_midi).abs() == 0;
    let off = (r.offset_s - e.offset_s).abs() <= (0.2 * (r.offset_s - r.onset_s)).max(0.05) + 1e-9;
    match mode {
        MatchMode::COn => on,
        MatchMode::COnP => on && pitch,
        MatchMode::COnPOff => on && pitch && off,
    }
}

fn random_notes(rng: &mut ChaCha8Rng, k: usize) -> Vec<NoteEvent> {
    let mut t = 0.0;
    (0..k)
        .map(|_| {
            t += rng.random_range(0.0..0.06);
            let on = (t * 1000.0f64).round() / 1000.0;
            let dur = rng.random_range(0.05..0.4);
            let p = 60 + rng.random_range(0..3);
            t += 0.001;
            n(on, on + dur, p)
        })
        .collect()
}

#[test]
fn identical_lists_score_one() {
    let notes = vec![n(0.0, 0.5, 60), n(0.6, 1.0, 62), n(1.0, 1.4, 64)];
    for mode in MatchMode::ALL {
        let prf = transcription_prf(&notes, &notes, mode, &Tolerances::default());
        assert_eq!(prf.f1, 1.0);
    }
}

#[test]
fn second_onset_too_late() {
    let r = vec![n(0.0, 0.5, 60), n(1.0, 1.5, 62)];
    let e = vec![n(0.03, 0.52, 60), n(1.2, 1.7, 62)];
    for mode in MatchMode::ALL {
        let m = match_notes(&r, &e, mode, &Tolerances::default());
        assert_eq!(m, vec![(0, 0)]);
        let adm = |i: usize, j: usize| admissible_oracle(&r[i], &e[j], mode);
        assert_eq!(brute_force(&adm, 2, 2), 1);
        let prf = transcription_prf(&r, &e, mode, &Tolerances::default());
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
    }
}

#[test]
fn maximum_matching_beats_greedy() {
    let r = vec![n(0.0, 0.3, 60), n(0.04, 0.3, 60)];
    let e = vec![n(0.04, 0.3, 60), n(0.08, 0.3, 60)];
    // greedy: closest pair first
    let mut pairs: Vec<(f64, usize, usize)> = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| ((r[i].onset_s - e[j].onset_s).abs(), i, j))
        .filter(|p| p.0 <= 0.05 + 1e-9)
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (mut ur, mut ue, mut greedy) = ([false; 2], [false; 2], 0);
    for (_, i, j) in pairs {
        if !ur[i] && !ue[j] {
            ur[i] = true;
            ue[j] = true;
            greedy += 1;
        }
    }
    assert_eq!(greedy, 1);
    let m = match_notes(&r, &e, MatchMode::COn, &Tolerances::default());
    assert_eq!(m, vec![(0, 0), (1, 1)]);
}

#[test]
fn matching_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mode in MatchMode::ALL {
        for _ in 0..150 {
            let (kr, ke) = (rng.random_range(0..=8), rng.random_range(0..=8));
            let r = random_notes(&mut rng, kr);
            let e = random_notes(&mut rng, ke);
            let adm = |i: usize, j: usize| admissible_oracle(&r[i], &e[j], mode);
            let want = brute_force(&adm, r.len(), e.len());
            let got = match_notes(&r, &e, mode, &Tolerances::default());
            assert_eq!(got.len(), want);
            let mut seen = std::collections::HashSet::new();
            for &(i, j) in &got {
                assert!(adm(i, j));
                assert!(seen.insert(j));
            }
        }
    }
}

#[test]
fn modes_are_nested() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tol = Tolerances::default();
    for _ in 0..200 {
        let r = random_notes(&mut rng, 6);
        let e = random_notes(&mut rng, 6);
        let a = match_notes(&r, &e, MatchMode::COnPOff, &tol).len();
        let b = match_notes(&r, &e, MatchMode::COnP, &tol).len();
        let c = match_notes(&r, &e, MatchMode::COn, &tol).len();
        assert!(a <= b && b <= c);
    }
}

#[test]
fn prf_conventions() {
    let empty = transcription_prf(&[], &[], MatchMode::COn, &Tolerances::default());
    assert_eq!(empty.f1, 1.0);
    let miss = transcription_prf(&[n(0.0, 1.0, 60)], &[], MatchMode::COn, &Tolerances::default());
    assert_eq!((miss.recall, miss.f1), (0.0, 0.0));
    let p = Prf::from_counts(1, 2, 1);
    assert_eq!((p.precision, p.recall), (1.0, 0.5));
    assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn gap_sign_convention() {
    assert!((fairness_gap(0.5727, 0.4993) - (-7.34)).abs() < 1e-9);
}

#[test]
fn evaluation_pools_per_group() {
    let good = vec![n(0.0, 0.5, 60), n(1.0, 1.5, 62)];
    let half = vec![n(0.0, 0.5, 60), n(1.3, 1.5, 62)];
    let songs = vec![
        Transcription {
            attribute: Attribute::F,
            reference: good.clone(),
            estimate: good.clone(),
        },
        Transcription {
            attribute: Attribute::M,
            reference: good.clone(),
            estimate: half.clone(),
        },
        Transcription {
            attribute: Attribute::M,
            reference: good.clone(),
            estimate: good.clone(),
        },
    ];
    let rep = evaluate(&songs, &Tolerances::default(), &MatchMode::ALL).unwrap();
    let m = rep.mode(MatchMode::COn).unwrap();
    assert_eq!(m.groups.f.unwrap().f1, 1.0);
    assert!((m.groups.m.unwrap().f1 - 0.75).abs() < 1e-12);
    assert!((m.fairness_gap.unwrap() + 25.0).abs() < 1e-9);
    assert!((m.utility - 100.0 * 5.0 / 6.0).abs() < 1e-9);
    assert!((m.macro_groups.m.unwrap() - 0.75).abs() < 1e-12);
    let json = serde_json::to_string(&rep).unwrap();
    assert_eq!(serde_json::from_str::<FairnessReport>(&json).unwrap(), rep);

    let equal = evaluate(&songs[..1], &Tolerances::default(), &MatchMode::ALL).unwrap();
    assert!(equal.modes.iter().all(|m| m.fairness_gap.is_none() && m.utility == 100.0));

    let sym = vec![songs[0].clone(), Transcription { attribute: Attribute::M, ..songs[0].clone() }];
    let rep = evaluate(&sym, &Tolerances::default(), &MatchMode::ALL).unwrap();
    assert!(rep.modes.iter().all(|m| m.fairness_gap == Some(0.0)));
}

#[test]
fn tradeoff_examples() {
    let runs = [(52.48, -3.61), (42.56, 4.65)];
    assert_eq!(tradeoff_select(&runs, 53.66, 2.0).unwrap(), Selection::Selected(0));
    let ties = [(50.0, 1.0), (51.0, 4.0)];
    assert_eq!(tradeoff_select(&ties, 50.0, 2.0).unwrap(), Selection::Selected(1));
    let low = [(10.0, 0.0), (20.0, -1.0)];
    assert_eq!(tradeoff_select(&low, 50.0, 2.0).unwrap(), Selection::NoneQualified);
    // strict inequality at the boundary
    assert_eq!(tradeoff_select(&[(48.0, 0.0)], 50.0, 2.0).unwrap(), Selection::NoneQualified);
    assert!(tradeoff_select(&runs, 53.66, -1.0).is_err());
    assert!(tradeoff_select(&[], 53.66, 1.0).is_err());
}

#[test]
fn mode_names() {
    assert_eq!(MatchMode::parse("CoNp").unwrap(), MatchMode::COnP);
    assert!(MatchMode::parse("x").is_err());
    assert_eq!(serde_json::to_string(&MatchMode::COnPOff).unwrap(), "\"conpoff\"");
}
