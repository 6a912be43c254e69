use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::model::ModelConfig;
use crate::numerics::{seeded_rng, SeededRng};

fn tiny(variant: Variant, seed: u64) -> Model<f64> {
    Model::new(ModelConfig::tiny(variant), seed).unwrap()
}

fn features(l: usize, f: usize, rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(&[l, f], |_| rng.gen_range(-1.0..1.0))
}

fn set_output_bias(model: &mut Model<f64>, token: usize, value: f64) {
    let id = model.store.id("output.b").expect("untied output head");
    model.store.get_mut(id).value.data_mut()[token] = value;
}

const VARIANTS: [Variant; 3] = [Variant::Baseline, Variant::Adast, Variant::StaticAblation];

#[test]
fn track_equals_teacher_forced_acoustic_rows() {
    let mut rng = seeded_rng(11);
    for seed in 0..10 {
        let model = tiny(Variant::Adast, seed);
        let l = rng.gen_range(8..24);
        let feats = features(l, 8, &mut rng);
        let DecodeContext::Adast(track) = prepare(&model, &feats).unwrap() else {
            panic!("adast context expected");
        };
        for _ in 0..3 {
            let t = rng.gen_range(1..6);
            let tgt: Vec<usize> = (0..t).map(|_| rng.gen_range(0..12)).collect();
            let mut tape = Tape::inference(&model.store);
            let x = feats.clone().reshape(&[1, l, 8]).unwrap();
            let enc = model.encode(&mut tape, &x, &[vec![false; l]], &mut Dropout::off()).unwrap();
            let s = enc.pad[0].len();
            let (_, per_layer) = model
                .adast_hidden_states(&mut tape, &enc, &[tgt.clone()], &[vec![false; t]], &mut Dropout::off())
                .unwrap();
            for (lyr, h) in per_layer.iter().enumerate() {
                let full = &tape.value(*h).data()[..s * 16];
                assert_eq!(full, track.rows[lyr].data(), "layer {lyr}");
            }
        }
    }
}

#[test]
fn track_size_is_layers_by_frames_by_width() {
    let model = tiny(Variant::Adast, 3);
    let feats = features(20, 8, &mut seeded_rng(0));
    let DecodeContext::Adast(track) = prepare(&model, &feats).unwrap() else {
        unreachable!()
    };
    let s = track.s_len();
    assert_eq!(track.rows.len(), 2);
    assert!(track.rows.iter().all(|r| r.shape() == [s, 16]));
    assert_eq!(track.num_elements(), 3 * 2 * s * 16);
}

#[test]
fn incremental_and_full_greedy_agree() {
    let mut rng = seeded_rng(5);
    for variant in VARIANTS {
        for seed in 0..4 {
            let model = tiny(variant, seed);
            let feats = features(rng.gen_range(6..20), 8, &mut rng);
            let inc = greedy_decode(&model, &feats, 7).unwrap();
            let full = greedy_decode_full(&model, &feats, 7).unwrap();
            assert_eq!(inc.tokens, full.tokens, "{variant}");
            assert_eq!(inc.step_logits.len(), full.step_logits.len());
            for (a, b) in inc.step_logits.iter().zip(&full.step_logits) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0), "{variant}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn each_step_reads_layers_times_visible_keys() {
    for variant in VARIANTS {
        let model = tiny(variant, 1);
        let ctx = prepare(&model, &features(16, 8, &mut seeded_rng(2))).unwrap();
        let s = ctx.s_len();
        let mut cache = TargetCache::new(2);
        let mut prev = 0;
        for t in 0..6 {
            incremental_step(&model, &ctx, &mut cache, [BOS, 4, 5, 6, 7, 8][t]).unwrap();
            assert_eq!(cache.attention_reads - prev, 2 * (s + t + 1), "{variant} step {t}");
            prev = cache.attention_reads;
        }
    }
}

#[test]
fn greedy_stops_at_eos_and_respects_max_len() {
    let mut model = tiny(Variant::Adast, 4);
    let feats = features(12, 8, &mut seeded_rng(1));
    let out = greedy_decode(&model, &feats, 5).unwrap();
    assert!(out.tokens.len() <= 5);
    assert!(!out.tokens.contains(&EOS) && !out.tokens.contains(&PAD) && !out.tokens.contains(&BOS));

    set_output_bias(&mut model, EOS, 50.0);
    let out = greedy_decode(&model, &feats, 5).unwrap();
    assert!(out.tokens.is_empty() && out.finished);
    assert_eq!(out.step_logits.len(), 1);
}

#[test]
fn zero_max_len_is_a_config_error() {
    let model = tiny(Variant::Adast, 0);
    let feats = features(8, 8, &mut seeded_rng(0));
    assert!(matches!(greedy_decode(&model, &feats, 0), Err(Error::Config(_))));
    assert!(matches!(beam_search(&model, &feats, 0, 4, 1.0), Err(Error::Config(_))));
}

#[test]
fn mismatched_context_or_cache_is_a_contract_error() {
    let adast = tiny(Variant::Adast, 0);
    let base = tiny(Variant::Baseline, 0);
    let feats = features(10, 8, &mut seeded_rng(0));
    let ctx = prepare(&base, &feats).unwrap();
    let r = incremental_step(&adast, &ctx, &mut TargetCache::new(2), BOS);
    assert!(matches!(r, Err(Error::Contract(_))));

    let ctx = prepare(&adast, &feats).unwrap();
    let r = incremental_step(&adast, &ctx, &mut TargetCache::new(3), BOS);
    assert!(matches!(r, Err(Error::Contract(_))));
    let mut cache = TargetCache::new(2);
    cache.len = 1;
    assert!(matches!(incremental_step(&adast, &ctx, &mut cache, BOS), Err(Error::Contract(_))));
}

#[test]
fn beam_of_one_is_greedy() {
    let mut rng = seeded_rng(8);
    for variant in VARIANTS {
        for seed in 0..3 {
            let model = tiny(variant, seed);
            let feats = features(rng.gen_range(6..16), 8, &mut rng);
            let g = greedy_decode(&model, &feats, 6).unwrap();
            for penalty in [0.0, 1.0] {
                let b = beam_search(&model, &feats, 1, 6, penalty).unwrap();
                assert_eq!(b.len(), 1);
                assert_eq!(b[0].output(), &g.tokens[..]);
                assert!((b[0].log_prob - g.log_prob).abs() < 1e-9);
            }
        }
    }
}

/// Every candidate sequence of a depth-limited search, scored through the
/// full forward pass.
fn enumerate(model: &Model<f64>, feats: &Tensor<f64>, max_len: usize, penalty: f64) -> Vec<(f64, Vec<usize>)> {
    let v = model.config.vocab_size;
    let allowed: Vec<usize> = (0..v).filter(|&t| t != PAD && t != BOS).collect();
    let mut out = Vec::new();
    let mut frontier = vec![(0.0, Vec::<usize>::new())];
    for depth in 0..max_len {
        let mut next = Vec::new();
        for (lp, toks) in frontier {
            let mut prefix = vec![BOS];
            prefix.extend(&toks);
            let logits = model.forward_single(feats, &prefix).unwrap();
            let row = &logits.data()[(prefix.len() - 1) * v..];
            let mx = allowed.iter().map(|&t| row[t]).fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + allowed.iter().map(|&t| (row[t] - mx).exp()).sum::<f64>().ln();
            for &t in &allowed {
                let mut seq = toks.clone();
                seq.push(t);
                let l = lp + row[t] - lse;
                if t == EOS || depth + 1 == max_len {
                    out.push((score(l, seq.len(), penalty), seq));
                } else {
                    next.push((l, seq));
                }
            }
        }
        frontier = next;
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

#[test]
fn wide_beam_matches_exhaustive_enumeration() {
    let cfg = ModelConfig {
        vocab_size: 6,
        ..ModelConfig::tiny(Variant::Adast)
    };
    let mut rng = seeded_rng(21);
    for seed in 0..4 {
        let mut model = Model::<f64>::new(cfg.clone(), seed).unwrap();
        // make EOS competitive so both finished and unfinished paths occur
        set_output_bias(&mut model, EOS, rng.gen_range(-0.5..1.5));
        let feats = features(10, 8, &mut rng);
        for penalty in [0.0, 1.0] {
            let want = enumerate(&model, &feats, 2, penalty);
            assert_eq!(want.len(), 1 + 3 + 3 * 3);
            let got = beam_search(&model, &feats, 64, 2, penalty).unwrap();
            assert_eq!(got.len(), want.len());
            for (h, (s, toks)) in got.iter().zip(&want) {
                assert_eq!(&h.tokens, toks);
                assert!((h.score(penalty) - s).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn wider_beams_never_score_below_greedy() {
    let mut rng = seeded_rng(30);
    for variant in VARIANTS {
        for seed in 0..3 {
            let model = tiny(variant, seed);
            let feats = features(rng.gen_range(6..16), 8, &mut rng);
            let g = greedy_decode(&model, &feats, 5).unwrap();
            let mut prev = g.log_prob;
            for k in [2, 4] {
                let b = beam_search(&model, &feats, k, 5, 0.0).unwrap();
                assert!(b[0].log_prob >= prev - 1e-9, "{variant} beam {k}");
                prev = b[0].log_prob;
            }
        }
    }
}

#[test]
fn decode_utterance_modes_agree() {
    let model = tiny(Variant::Adast, 9);
    let feats = features(14, 8, &mut seeded_rng(3));
    let a = decode_utterance(&model, &feats, 1, Some(6), 1.0, DecodeMode::Incremental).unwrap();
    let b = decode_utterance(&model, &feats, 1, Some(6), 1.0, DecodeMode::Full).unwrap();
    assert_eq!(a, b);
    assert!(decode_utterance(&model, &features(3, 8, &mut seeded_rng(0)), 1, None, 1.0, DecodeMode::Incremental).is_err());
}

#[test]
fn default_max_len_formula() {
    assert_eq!(default_max_len(0), 16);
    assert_eq!(default_max_len(5), 26);
}

#[test]
fn malformed_hypothesis_line_reports_offset() {
    let p = std::path::Path::new("hyp.txt");
    match parse_hypotheses("a\t3 4\nb 5\n", p) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
        other => panic!("{other:?}"),
    }
    assert!(parse_hypotheses("a\t3 x\n", p).is_err());
}

proptest! {
    #[test]
    fn hypotheses_round_trip(rows in prop::collection::vec(("[a-z0-9-]{1,8}", prop::collection::vec(0usize..100, 0..6)), 0..5)) {
        let text = format_hypotheses(&rows);
        prop_assert_eq!(parse_hypotheses(&text, std::path::Path::new("h")).unwrap(), rows);
    }
}
