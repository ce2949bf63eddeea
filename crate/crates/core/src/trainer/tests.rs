use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{build_corpus, CorpusConfig};
use crate::notelab::OctaveRange;
use crate::svtmodel::{attr_loss, svt_loss, Encoder, NoteHeads, NotePredictor};
use crate::tensornet::{Graph, ParamSet, Tensor};

fn small_corpus() -> Vec<PreparedSong> {
    let cfg = CorpusConfig {
        songs_per_group: 3,
        test_songs_per_group: 2,
        notes_per_song: [5, 6],
        ..CorpusConfig::default()
    };
    let c = build_corpus(&cfg).unwrap();
    prepare_songs(&c.train, &small_config(Method::Erm).frontend, &OctaveRange::default()).unwrap()
}

fn small_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        k1: 2,
        k2: 3,
        batch_songs: 2,
        chunk_s: 0.2,
        frontend: FrontendConfig {
            n_mels: 8,
            ..FrontendConfig::default()
        },
        model: ModelConfig {
            input_dim: 8,
            conv_channels: [6, 5],
            kernel: 3,
            ff_hidden: 6,
            latent_dim: 4,
            attr_hidden: 5,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn trainer_and_batches(cfg: &TrainConfig, songs: &[PreparedSong], n: usize) -> (Trainer, Vec<Batch>) {
    let norm = FeatureNorm::fit(songs.iter().map(|s| &s.features)).unwrap();
    let mut sampler = BatchSampler::new(songs, &norm, cfg.batch_songs, cfg.chunk_s, 0.02, cfg.seed).unwrap();
    let batches = (0..n).map(|_| sampler.next_batch().unwrap()).collect();
    (Trainer::new(cfg, norm.clone()).unwrap(), batches)
}

fn mixed_batch(songs: &[PreparedSong], cfg: &TrainConfig, trainer: &Trainer) -> Batch {
    let mut sampler = BatchSampler::new(songs, &trainer.model.norm, 4, cfg.chunk_s, 0.02, 99).unwrap();
    loop {
        let b = sampler.next_batch().unwrap();
        if b.attributes.contains(&Attribute::F) && b.attributes.contains(&Attribute::M) {
            return b;
        }
    }
}

#[test]
fn probing_phase_freezes_the_encoder() {
    let songs = small_corpus();
    for method in [Method::Erm, Method::NcalV2, Method::Dind] {
        let cfg = small_config(method);
        let (mut t, batches) = trainer_and_batches(&cfg, &songs, 5);
        let theta0 = t.model.encoder.params.clone();
        let heads0 = t.model.heads.clone();
        for b in &batches[..2] {
            t.step(b).unwrap();
        }
        assert_eq!(t.model.encoder.params, theta0);
        assert_ne!(t.model.heads, heads0);
        t.step(&batches[2]).unwrap();
        assert_ne!(t.model.encoder.params, theta0);
    }
}

#[test]
fn zero_lambda_adversary_follows_erm() {
    let songs = small_corpus();
    let erm = TrainConfig {
        k1: 0,
        k2: 4,
        ..small_config(Method::Erm)
    };
    let al = TrainConfig {
        method: Method::Al,
        lambda: 0.0,
        ..erm.clone()
    };
    let a = train(&songs, &erm).unwrap();
    let b = train(&songs, &al).unwrap();
    assert_eq!(a.model.encoder, b.model.encoder);
    assert_eq!(a.model.heads, b.model.heads);
    assert!(b.history.iter().all(|r| r.l_a.is_some()));
    assert_eq!(
        a.history.iter().map(|r| r.l_y).collect::<Vec<_>>(),
        b.history.iter().map(|r| r.l_y).collect::<Vec<_>>()
    );
}

#[test]
fn attribute_update_leaves_encoder_and_heads_alone() {
    let songs = small_corpus();
    for method in [Method::Al, Method::NcalV1, Method::NcalV2] {
        let cfg = small_config(method);
        let (mut t, batches) = trainer_and_batches(&cfg, &songs, 1);
        let (enc, heads, attr) = (t.model.encoder.clone(), t.model.heads.clone(), t.model.attr.clone());
        t.attr_only_step(&batches[0]).unwrap();
        assert_eq!(t.model.encoder, enc);
        assert_eq!(t.model.heads, heads);
        assert_ne!(t.model.attr, attr);
    }
}

#[test]
fn note_head_gradient_ignores_the_adversary() {
    let songs = small_corpus();
    for method in [Method::Al, Method::NcalV1, Method::NcalV2] {
        let cfg = TrainConfig {
            k1: 0,
            lambda: 2.0,
            ..small_config(method)
        };
        let (t, _) = trainer_and_batches(&cfg, &songs, 0);
        let batch = mixed_batch(&songs, &cfg, &t);
        let mut plain = t.model.clone();
        plain.attr = None;
        let erm = Trainer::from_model(&TrainConfig { method: Method::Erm, ..cfg.clone() }, plain);
        for route in [GradRoute::Grl, GradRoute::Explicit] {
            let adv = t.joint_gradients(&batch, route).unwrap();
            let reference = erm.joint_gradients(&batch, route).unwrap();
            assert_eq!(adv.note, reference.note, "{method:?} {route:?}");
            assert_eq!(adv.l_y, reference.l_y);
            assert_ne!(adv.encoder, reference.encoder);
        }
    }
}

fn max_rel_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    let scale = a
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(u, v)| (u - v).abs() / u.abs().max(v.abs()).max(1e-9 * scale))
        .fold(0.0, f64::max)
}

#[test]
fn reversal_matches_explicit_combination() {
    let songs = small_corpus();
    for method in [Method::Al, Method::NcalV1, Method::NcalV2] {
        for lambda in [0.2, 0.5, 1.0, 2.0] {
            let cfg = TrainConfig {
                k1: 0,
                lambda,
                ..small_config(method)
            };
            let (t, _) = trainer_and_batches(&cfg, &songs, 0);
            let batch = mixed_batch(&songs, &cfg, &t);
            let grl = t.joint_gradients(&batch, GradRoute::Grl).unwrap();
            let exp = t.joint_gradients(&batch, GradRoute::Explicit).unwrap();
            let d = max_rel_diff(grl.encoder.as_ref().unwrap(), exp.encoder.as_ref().unwrap());
            assert!(d <= 1e-10, "{method:?} λ={lambda}: {d}");
            assert_eq!(grl.note, exp.note);
        }
    }
}

fn sgd_apply(p: &mut ParamSet, grads: &[Tensor], lr: f64) {
    for (i, g) in grads.iter().enumerate() {
        for (w, d) in p.get_mut(i).data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

#[test]
fn ncal_v2_step_matches_hand_unrolled_update() {
    let cfg = TrainConfig {
        method: Method::NcalV2,
        k1: 0,
        k2: 1,
        lambda: 0.7,
        lr_encoder: 0.05,
        lr_note: 0.02,
        lr_attr: 0.1,
        optimizer: crate::tensornet::OptimizerKind::Sgd,
        model: ModelConfig {
            input_dim: 3,
            conv_channels: [2, 2],
            kernel: 3,
            ff_hidden: 3,
            latent_dim: 2,
            attr_hidden: 2,
            octaves: OctaveRange::default(),
        },
        frontend: FrontendConfig {
            n_mels: 3,
            ..FrontendConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&cfg, FeatureNorm::identity(3)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new(vec![1, 2, 3], (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = crate::notelab::notes_to_frames(
        &[crate::corpus::NoteEvent::new(0.0, 0.03, 57)],
        2,
        &crate::frontend::FrameGrid { hop_s: 0.02, t0_s: 0.0 },
        &cfg.model.octaves,
    )
    .unwrap();
    let batch = Batch {
        x: x.clone(),
        labels: labels.clone(),
        attributes: vec![Attribute::M],
        songs: vec![0],
        starts: vec![0],
        chunk_frames: 2,
    };

    let mut theta = t.model.encoder.params.clone();
    let NoteHeads::Single(head) = &t.model.heads else { unreachable!() };
    let mut phi = head.params.clone();
    let layout = head.layout;
    let mut psi = t.model.attr.clone().unwrap();
    let targets = [1.0, 1.0];

    // (a) forward θ, φ
    let (z, logits) = {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let te = theta.bind(&mut g, false);
        let z = Encoder::forward(&mut g, &te, xi).unwrap();
        let pe = phi.bind(&mut g, false);
        let y = NotePredictor::forward(&mut g, &pe, z).unwrap();
        (g.value(z).clone(), g.value(y).clone())
    };
    // (b) ψ step on detached z and ŷ
    {
        let mut g = Graph::new();
        let zi = g.input(z);
        let yi = g.input(logits);
        let ids = psi.params.bind(&mut g, true);
        let a = psi.forward(&mut g, &ids, zi, Some(yi)).unwrap();
        let la = attr_loss(&mut g, a, &targets).unwrap();
        let gr = g.backward(la).unwrap();
        let gr = psi.params.collect_grads(&ids, &gr);
        sgd_apply(&mut psi.params, &gr, cfg.lr_attr);
    }
    // (c)-(e) with separate gradients of L_y and L_A
    let (g_theta_y, g_theta_a, g_phi_y) = {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let te = theta.bind(&mut g, true);
        let z = Encoder::forward(&mut g, &te, xi).unwrap();
        let pe = phi.bind(&mut g, true);
        let y = NotePredictor::forward(&mut g, &pe, z).unwrap();
        let ly = svt_loss(&mut g, y, &labels, &layout).unwrap();
        let ps = psi.params.bind(&mut g, false);
        let a = psi.forward(&mut g, &ps, z, Some(y)).unwrap();
        let la = attr_loss(&mut g, a, &targets).unwrap();
        let gy = g.backward(ly).unwrap();
        let ga = g.backward(la).unwrap();
        (
            theta.collect_grads(&te, &gy),
            theta.collect_grads(&te, &ga),
            phi.collect_grads(&pe, &gy),
        )
    };
    sgd_apply(&mut phi, &g_phi_y, cfg.lr_note);
    let combined: Vec<Tensor> = g_theta_y
        .iter()
        .zip(&g_theta_a)
        .map(|(a, b)| {
            let d = a.data().iter().zip(b.data()).map(|(u, v)| u - cfg.lambda * v).collect();
            Tensor::new(a.shape().to_vec(), d).unwrap()
        })
        .collect();
    sgd_apply(&mut theta, &combined, cfg.lr_encoder);

    t.step(&batch).unwrap();
    let NoteHeads::Single(head) = &t.model.heads else { unreachable!() };
    let close = |a: &ParamSet, b: &ParamSet| max_rel_diff(a.values(), b.values());
    assert!(close(&t.model.encoder.params, &theta) <= 1e-10);
    assert!(close(&head.params, &phi) <= 1e-10);
    assert!(close(&t.model.attr.as_ref().unwrap().params, &psi.params) <= 1e-10);
}

#[test]
fn training_is_deterministic() {
    let songs = small_corpus();
    let cfg = small_config(Method::NcalV1);
    let a = train(&songs, &cfg).unwrap();
    let b = train(&songs, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(a.history.len(), cfg.total_steps());
    let c = train(&songs, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn adversarial_methods_need_both_groups() {
    let songs: Vec<PreparedSong> = small_corpus()
        .into_iter()
        .filter(|s| s.attribute == Attribute::F)
        .collect();
    for m in [Method::Al, Method::NcalV1, Method::NcalV2, Method::Dind] {
        assert!(train(&songs, &small_config(m)).is_err());
    }
    assert!(train(&songs, &small_config(Method::Erm)).is_ok());
}

#[test]
fn divergence_is_reported_with_its_step() {
    let songs = small_corpus();
    let cfg = TrainConfig {
        lr_note: 1e308,
        lr_encoder: 1e308,
        ..small_config(Method::Erm)
    };
    match train(&songs, &cfg) {
        Err(Error::Diverged { step, .. }) => assert!(step >= 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    c.validate().unwrap();
    c.lambda = -1.0;
    assert!(c.validate().is_err());
    let c = TrainConfig {
        lr_attr: 0.0,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    let c = TrainConfig {
        version: 2,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    let json = r#"{"version":1,"method":"ncal_v2","lambda":1.0,"bogus":3}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
    let json = r#"{"version":1,"method":"ncal_v2","lambda":1.0}"#;
    let c: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!((c.method, c.lambda, c.k1, c.k2), (Method::NcalV2, 1.0, 300, 1500));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"method":"erm"}"#).is_err());
}

#[test]
fn batches_have_fixed_shape_and_are_reproducible() {
    let songs = small_corpus();
    let norm = FeatureNorm::fit(songs.iter().map(|s| &s.features)).unwrap();
    let mut a = BatchSampler::new(&songs, &norm, 3, 0.5, 0.02, 4).unwrap();
    let mut b = BatchSampler::new(&songs, &norm, 3, 0.5, 0.02, 4).unwrap();
    for _ in 0..5 {
        let (x, y) = (a.next_batch().unwrap(), b.next_batch().unwrap());
        assert_eq!(x, y);
        assert_eq!(x.x.shape(), &[3, 25, 8]);
        assert_eq!(x.labels.len(), 75);
        x.labels.validate(&OctaveRange::default()).unwrap();
    }
    let longest = songs.iter().map(|s| s.features.n_frames).min().unwrap();
    let too_long = (longest + 1) as f64 * 0.02;
    assert!(BatchSampler::new(&songs, &norm, 3, too_long, 0.02, 4).is_err());
}

#[test]
fn batches_sample_groups_in_proportion() {
    let songs = small_corpus();
    let norm = FeatureNorm::fit(songs.iter().map(|s| &s.features)).unwrap();
    let mut s = BatchSampler::new(&songs, &norm, 8, 0.2, 0.02, 11).unwrap();
    let mut m = 0usize;
    let mut total = 0usize;
    for _ in 0..1000 {
        let b = s.next_batch().unwrap();
        m += b.attributes.iter().filter(|&&a| a == Attribute::M).count();
        total += b.attributes.len();
    }
    let share = songs.iter().filter(|s| s.attribute == Attribute::M).count() as f64 / songs.len() as f64;
    assert!((m as f64 / total as f64 - share).abs() <= 0.05);
}

#[test]
fn probe_on_attribute_features_is_perfect() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let make = |a: Attribute, r: &mut ChaCha8Rng| {
        let t = r.random_range(20..40);
        let v = a.target();
        (Tensor::new(vec![t, 2], (0..2 * t).map(|i| if i % 2 == 0 { v } else { 0.5 }).collect()).unwrap(), a)
    };
    let fit: Vec<_> = (0..10).map(|i| make(Attribute::from_code(i % 2).unwrap(), &mut r)).collect();
    let held: Vec<_> = (0..10).map(|i| make(Attribute::from_code(i % 2).unwrap(), &mut r)).collect();
    let acc = probe_accuracy(&fit, &held, &ProbeConfig { steps: 100, ..ProbeConfig::default() }).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn probe_on_random_features_is_at_chance() {
    let mut accs = Vec::new();
    for seed in 0..6 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut make = |i: u8| {
            let d: Vec<f64> = (0..30 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
            (Tensor::new(vec![30, 4], d).unwrap(), Attribute::from_code(i % 2).unwrap())
        };
        let fit: Vec<_> = (0..20).map(&mut make).collect();
        let held: Vec<_> = (0..40).map(&mut make).collect();
        let cfg = ProbeConfig {
            steps: 100,
            seed,
            ..ProbeConfig::default()
        };
        accs.push(probe_accuracy(&fit, &held, &cfg).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "{accs:?}");
}

#[test]
fn evaluation_runs_on_a_trained_model() {
    let songs = small_corpus();
    let cfg = small_config(Method::Dind);
    let run = train(&songs, &cfg).unwrap();
    for mode in [crate::svtmodel::DindMode::Calibrated, crate::svtmodel::DindMode::Miscalibrated] {
        let rep = evaluate_model(&run.model, &songs, &cfg.postproc, mode, &Tolerances::default(), &MatchMode::ALL).unwrap();
        let f1 = |m| rep.mode(m).unwrap().total.f1;
        assert!(f1(MatchMode::COnPOff) <= f1(MatchMode::COnP));
        assert!(f1(MatchMode::COnP) <= f1(MatchMode::COn));
    }
}
