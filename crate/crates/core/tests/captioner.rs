use std::path::Path;
use std::sync::Arc;

use sedcap::captioner::{
    batch_pass, build_model, decode_step, encode_audio, encode_partial_caption, greedy_caption,
    load_model, parameter_count, save_model, teacher_forced_loss, train, Architecture, Captioner,
    CaptionerModel, ClipInput, Example, ModelConfig, TrainConfig,
};
use sedcap::data::{synth_clip, synth_label_table, FeatureMatrix};
use sedcap::events::{build_event_corpus, EventEncoder, EventMultiHot};
use sedcap::nn::{batchnorm_forward, gru_cell_forward, Matrix, Mode, ParamSet};
use sedcap::text::{build_vocab, normalize_caption, Vocabulary, EOS_ID, SOS_ID};
use sedcap::{Error, SeededRng};

fn tiny_arch() -> Architecture {
    Architecture {
        bigru1_cells: 4,
        bigru2_cells: 8,
        caption_gru_cells: 16,
        decoder_gru_cells: 16,
        embed_dim: 8,
        leaky_dense_units: 16,
        ..Default::default()
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig::new(6, 5, 12, tiny_arch())
}

fn random_model(cfg: &ModelConfig, seed: u64) -> CaptionerModel {
    let mut rng = SeededRng::new(seed);
    let mut m = build_model(cfg, None, &mut rng).unwrap();
    // Glorot leaves biases at zero; give them values so every path is live.
    for t in m.tensors_mut() {
        if t.iter().all(|&v| v == 0.0) {
            t.iter_mut().for_each(|v| *v = rng.uniform(-0.3, 0.3));
        }
    }
    m
}

fn feats(t: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = SeededRng::new(seed);
    FeatureMatrix::new(t, d, (0..t * d).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

fn events(on: &[usize], len: usize) -> EventMultiHot {
    let mut bits = vec![0u8; len];
    for &i in on {
        bits[i] = 1;
    }
    EventMultiHot::from_bits(bits).unwrap()
}

fn tiny_vocab() -> Vocabulary {
    build_vocab(&[normalize_caption("a b c d e f g h")]).unwrap()
}

#[test]
fn full_scale_parameter_budget() {
    let arch = Architecture {
        train_embeddings: true,
        ..Default::default()
    };
    let cfg = ModelConfig::new(2048, 600, 4300, arch);
    let n = parameter_count(&cfg);
    assert!((2_000_000..=3_000_000).contains(&n), "{n}");
    let model = CaptionerModel::zeros(&cfg).unwrap();
    assert_eq!(model.parameter_count(), n);
}

#[test]
fn closed_form_count_matches_enumeration() {
    // Per-layer formulas written out independently of the library helpers.
    let gru = |i: usize, h: usize| 3 * (i * h + h * h + h);
    for (leaky, emb) in [(true, false), (false, true), (true, true)] {
        let arch = Architecture {
            use_leaky_dense: leaky,
            train_embeddings: emb,
            ..tiny_arch()
        };
        let cfg = ModelConfig::new(6, 5, 12, arch);
        let mut want = 2 * 11 + 2 * gru(11, 4) + 2 * gru(8, 8) + gru(8, 16) + gru(32, 16);
        want += if leaky { 16 * 16 + 16 + 16 * 12 + 12 } else { 16 * 12 + 12 };
        if emb {
            want += 12 * 8;
        }
        assert_eq!(parameter_count(&cfg), want);
        assert_eq!(CaptionerModel::zeros(&cfg).unwrap().parameter_count(), want);
    }
}

#[test]
fn wider_first_bigru_costs_more() {
    let base = ModelConfig::new(2048, 600, 4300, Architecture::default());
    let mut wide = base.clone();
    wide.arch.bigru1_cells *= 2;
    assert!(parameter_count(&wide) > parameter_count(&base));
}

#[test]
fn invalid_config_rejected() {
    let mut cfg = tiny_config();
    cfg.arch.bigru2_cells = 0;
    assert!(matches!(CaptionerModel::zeros(&cfg), Err(Error::InvalidArgument(_))));
    let mut cfg = tiny_config();
    cfg.arch.dropout = 1.0;
    assert!(build_model(&cfg, None, &mut SeededRng::new(1)).is_err());
}

#[test]
fn zero_model_encodes_zero_and_decodes_uniform() {
    let cfg = tiny_config();
    let m = CaptionerModel::zeros(&cfg).unwrap();
    let mut rng = SeededRng::new(0);
    let zero_feats = FeatureMatrix::new(3, 6, vec![0.0; 18]).unwrap();
    let ctx = encode_audio(&m, &zero_feats, &EventMultiHot::zeros(5), Mode::Infer, &mut rng).unwrap();
    assert_eq!(ctx, vec![0.0; 16]);
    let cap = encode_partial_caption(&m, &[SOS_ID, 5, 6]).unwrap();
    assert_eq!(cap, vec![0.0; 16]);
    let p = decode_step(&m, &ctx, &cap, Mode::Infer, &mut rng).unwrap();
    for v in &p {
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }
}

#[test]
fn single_frame_clip_is_fine() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 1);
    let ctx = encode_audio(&m, &feats(1, 6, 2), &events(&[1], 5), Mode::Infer, &mut SeededRng::new(0)).unwrap();
    assert_eq!(ctx.len(), 16);
    assert!(ctx.iter().all(|v| v.is_finite()) && ctx.iter().any(|&v| v != 0.0));
}

/// Step-by-step recomputation of the encoder with explicit cell loops.
fn unrolled_encoder(m: &CaptionerModel, f: &FeatureMatrix, ev: &[f64]) -> Vec<f64> {
    let x = f.to_matrix();
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|t| {
            let mut r = x.row(t).to_vec();
            r.extend_from_slice(ev);
            r
        })
        .collect();
    let input = Matrix::from_rows(&rows).unwrap();
    let mut bn = m.bn.clone();
    let xn = batchnorm_forward(&mut bn, &input, Mode::Infer).unwrap();
    let run = |p: &sedcap::nn::GruCellParams, seq: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut h = vec![0.0; p.hidden_dim];
        let mut out = Vec::new();
        for x in seq {
            h = gru_cell_forward(p, x, &h).unwrap().0;
            out.push(h.clone());
        }
        out
    };
    let bi = |layer: &sedcap::nn::BiGru, seq: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let f = run(&layer.fwd, &seq);
        let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let mut b = run(&layer.bwd, &rev);
        b.reverse();
        f.into_iter()
            .zip(b)
            .map(|(mut a, b)| {
                a.extend(b);
                a
            })
            .collect()
    };
    let seq: Vec<Vec<f64>> = xn.iter_rows().map(<[f64]>::to_vec).collect();
    let h1 = bi(&m.bigru1, seq);
    let h2 = bi(&m.bigru2, h1);
    let b = m.bigru2.hidden_dim();
    let mut ctx = h2[h2.len() - 1][..b].to_vec();
    ctx.extend_from_slice(&h2[0][b..]);
    ctx
}

#[test]
fn encoder_matches_unrolled_recomputation() {
    let cfg = tiny_config();
    let mut m = random_model(&cfg, 3);
    let mut rng = SeededRng::new(4);
    for j in 0..m.bn.dim() {
        m.bn.running_mean[j] = rng.uniform(-0.2, 0.2);
        m.bn.running_var[j] = rng.uniform(0.5, 2.0);
    }
    let f = feats(7, 6, 5);
    let ev = events(&[0, 3], 5);
    let got = encode_audio(&m, &f, &ev, Mode::Infer, &mut rng).unwrap();
    let want = unrolled_encoder(&m, &f, &ev.to_f64());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn events_change_the_encoding() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 8);
    let f = feats(5, 6, 9);
    let mut rng = SeededRng::new(0);
    let a = encode_audio(&m, &f, &events(&[0], 5), Mode::Infer, &mut rng).unwrap();
    let b = encode_audio(&m, &f, &events(&[0, 4], 5), Mode::Infer, &mut rng).unwrap();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn inference_is_repeatable_and_train_mode_is_not() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 10);
    let f = feats(4, 6, 11);
    let ev = events(&[2], 5);
    let a = encode_audio(&m, &f, &ev, Mode::Infer, &mut SeededRng::new(1)).unwrap();
    let b = encode_audio(&m, &f, &ev, Mode::Infer, &mut SeededRng::new(2)).unwrap();
    assert_eq!(a, b);
    let c = encode_audio(&m, &f, &ev, Mode::Train, &mut SeededRng::new(1)).unwrap();
    let d = encode_audio(&m, &f, &ev, Mode::Train, &mut SeededRng::new(2)).unwrap();
    assert_ne!(c, d);
}

#[test]
fn partial_caption_encoding() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 12);
    let one = encode_partial_caption(&m, &[SOS_ID]).unwrap();
    let step = gru_cell_forward(&m.caption_gru, m.embeddings.row(SOS_ID), &vec![0.0; 16]).unwrap().0;
    assert_eq!(one, step);
    let longer = encode_partial_caption(&m, &[SOS_ID, 5]).unwrap();
    assert_ne!(one, longer);
    assert!(encode_partial_caption(&m, &[]).is_err());
    assert!(encode_partial_caption(&m, &[5, 6]).is_err());
}

#[test]
fn decode_step_is_a_distribution() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 13);
    let mut rng = SeededRng::new(14);
    let a: Vec<f64> = (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let c: Vec<f64> = (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let p = decode_step(&m, &a, &c, Mode::Infer, &mut rng).unwrap();
    assert_eq!(p.len(), 12);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&v| v > 0.0));
    assert!(decode_step(&m, &a[..15], &c, Mode::Infer, &mut rng).is_err());
}

#[test]
fn rigged_output_emits_eos_immediately() {
    let cfg = tiny_config();
    let mut m = random_model(&cfg, 15);
    m.output.b[EOS_ID] = 1e3;
    let vocab = tiny_vocab();
    let cap = greedy_caption(&m, &feats(3, 6, 1), &events(&[], 5), &vocab, 30).unwrap();
    assert_eq!(cap.tokens(), ["<sos>", "<eos>"]);
}

#[test]
fn max_len_caps_generation() {
    let cfg = tiny_config();
    let mut m = random_model(&cfg, 16);
    m.output.b[7] = 1e3;
    let vocab = tiny_vocab();
    let cap = greedy_caption(&m, &feats(3, 6, 1), &events(&[], 5), &vocab, 3).unwrap();
    assert_eq!(cap.tokens().len(), 4);
    assert!(cap.tokens()[1..].iter().all(|t| t == vocab.token(7).unwrap()));
}

#[test]
fn greedy_ties_pick_lowest_id() {
    let cfg = tiny_config();
    let mut m = random_model(&cfg, 17);
    m.output.w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    m.output.b.iter_mut().for_each(|v| *v = 0.0);
    m.output.b[EOS_ID] = 5.0;
    m.output.b[9] = 5.0;
    let cap = greedy_caption(&m, &feats(2, 6, 1), &events(&[], 5), &tiny_vocab(), 30).unwrap();
    assert_eq!(cap.tokens(), ["<sos>", "<eos>"]);
}

fn example(cfg: &ModelConfig, seed: u64, tokens: Vec<usize>) -> Example {
    let clip = ClipInput::new(&feats(4, cfg.feature_dim, seed), &events(&[1, 2], cfg.event_dim));
    Example::new(Arc::new(clip), tokens).unwrap()
}

#[test]
fn uniform_model_loss_is_log_vocab() {
    let cfg = tiny_config();
    let mut m = CaptionerModel::zeros(&cfg).unwrap();
    m.bn.running_var.iter_mut().for_each(|v| *v = 1.0);
    let ex = vec![
        example(&cfg, 1, vec![SOS_ID, 4, 5, EOS_ID]),
        example(&cfg, 2, vec![SOS_ID, 6, EOS_ID]),
    ];
    let loss = teacher_forced_loss(&m, &ex, 8).unwrap();
    assert!((loss - (12f64).ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn batch_gradients_do_not_depend_on_thread_count() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 18);
    let ex: Vec<Example> = (0..9)
        .map(|i| example(&cfg, 100 + i, vec![SOS_ID, 4 + (i as usize % 5), 5, EOS_ID]))
        .collect();
    let refs: Vec<&Example> = ex.iter().collect();
    let seeds: Vec<u64> = (0..9).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_pass(&m, &refs, Mode::Train, &seeds, true).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.grads, b.grads);
}

#[test]
fn nan_weights_abort_training_with_diagnostic() {
    let cfg = tiny_config();
    let mut m = random_model(&cfg, 19);
    m.output.w.data_mut()[0] = f64::NAN;
    let ex: Vec<Example> = (0..4).map(|i| example(&cfg, i, vec![SOS_ID, 4, EOS_ID])).collect();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..Default::default()
    };
    let err = train(m, &ex, &ex, &tc).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numeric(_)));
    assert!(msg.contains("epoch 1") && msg.contains("batch 1") && msg.contains("max |grad|"), "{msg}");
}

#[test]
fn training_rejects_bad_inputs() {
    let cfg = tiny_config();
    let m = random_model(&cfg, 20);
    let ex: Vec<Example> = (0..4).map(|i| example(&cfg, i, vec![SOS_ID, 4, EOS_ID])).collect();
    let tc = TrainConfig::default();
    assert!(train(m.clone(), &ex, &[], &tc).is_err());
    assert!(train(m.clone(), &ex[..1], &ex, &tc).is_err());
    let bad = TrainConfig {
        batch_size: 1,
        ..Default::default()
    };
    assert!(train(m, &ex, &ex, &bad).is_err());
}

fn synth_captioner(seed: u64) -> (Captioner, Vec<sedcap::data::SynthClip>) {
    let table = synth_label_table();
    let corpus = build_event_corpus(&table).unwrap();
    let enc = EventEncoder::new(table, corpus, 0.1).unwrap();
    let clips: Vec<_> = (0..50).map(|i| synth_clip(seed + i, 5, 6, 6).unwrap()).collect();
    let caps: Vec<_> = clips.iter().map(|c| normalize_caption(&c.captions[0])).collect();
    let vocab = build_vocab(&caps).unwrap();
    let cfg = ModelConfig::new(6, enc.dim(), vocab.len(), tiny_arch());
    let mut model = random_model(&cfg, seed);
    model.quantize_f32();
    (Captioner::new(model, vocab, enc).unwrap(), clips)
}

#[test]
fn model_file_round_trip() {
    let (cap, clips) = synth_captioner(500);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.acm");
    save_model(&cap, &p).unwrap();
    let back = load_model(&p).unwrap();
    assert_eq!(back, cap);
    let again = dir.path().join("m2.acm");
    save_model(&back, &again).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&again).unwrap());
    for c in &clips {
        assert_eq!(
            cap.caption(&c.features, &c.probs).unwrap(),
            back.caption(&c.features, &c.probs).unwrap()
        );
    }
}

#[test]
fn corrupted_model_files_are_format_errors() {
    let (cap, _) = synth_captioner(600);
    let bytes = cap.to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Captioner::from_bytes(Path::new("m"), &bad_magic), Err(Error::Format { .. })));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let err = Captioner::from_bytes(Path::new("m"), &bad_version).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
    assert!(matches!(
        Captioner::from_bytes(Path::new("m"), &bytes[..bytes.len() - 1]),
        Err(Error::Format { .. })
    ));
}
