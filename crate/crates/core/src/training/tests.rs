use super::*;
use crate::model::{ModelConfig, Variant};
use crate::synthdata::{generate, SyntheticSpec, TaskMode};

fn tiny_corpus(n_train: usize) -> crate::synthdata::Corpus {
    generate(&SyntheticSpec {
        vocab_size: 12,
        min_len: 2,
        max_len: 4,
        min_frames_per_token: 2,
        max_frames_per_token: 3,
        feature_dim: 8,
        mode: TaskMode::StLike,
        n_train,
        n_dev: 6,
        n_test: 0,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn ce_oracle(logits: &[f64], v: usize, targets: &[usize], pad: &[bool], s: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, row) in logits.chunks(v).enumerate() {
        if pad[i] {
            continue;
        }
        n += 1;
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        for (j, x) in row.iter().enumerate() {
            let q = if j == targets[i] { 1.0 - s + s / v as f64 } else { s / v as f64 };
            total -= q * (x - lse);
        }
    }
    total / n as f64
}

fn ce_value(logits: &Tensor<f64>, tgt: &[Vec<usize>], pad: &[Vec<bool>], s: f64) -> Result<f64> {
    let mut tape = Tape::<f64>::detached();
    let l = tape.constant(logits.clone());
    let loss = cross_entropy(&mut tape, l, tgt, pad, s)?;
    Ok(tape.value(loss).item()?)
}

#[test]
fn cross_entropy_limits() {
    let v = 5;
    let tgt = vec![vec![1, 3, 0]];
    let pad = vec![vec![false, false, true]];
    let onehot = Tensor::from_fn(&[1, 3, v], |i| if i % v == tgt[0][i / v] { 60.0 } else { 0.0 });
    assert!(ce_value(&onehot, &tgt, &pad, 0.0).unwrap() < 1e-12);
    let uniform = Tensor::zeros(&[1, 3, v]);
    let l = ce_value(&uniform, &tgt, &pad, 0.0).unwrap();
    assert!((l - (v as f64).ln()).abs() < 1e-12);
    // smoothing does not change the uniform case
    let l = ce_value(&uniform, &tgt, &pad, 0.1).unwrap();
    assert!((l - (v as f64).ln()).abs() < 1e-12);
    assert!(matches!(ce_value(&uniform, &tgt, &pad, 0.5), Err(Error::Config(_))));
    assert!(matches!(
        ce_value(&uniform, &[vec![1, 7, 0]], &pad, 0.0),
        Err(Error::Validation(_))
    ));
}

#[test]
fn cross_entropy_matches_direct_oracle() {
    let mut rng = seeded_rng(4);
    let (b, t, v) = (3, 4, 7);
    let logits = Tensor::from_fn(&[b, t, v], |_| rng.gen_range(-3.0..3.0));
    let tgt: Vec<Vec<usize>> = (0..b).map(|_| (0..t).map(|_| rng.gen_range(0..v)).collect()).collect();
    let pad: Vec<Vec<bool>> = vec![vec![false; 4], vec![false, false, true, true], vec![false, true, true, true]];
    for s in [0.0, 0.1, 0.3] {
        let got = ce_value(&logits, &tgt, &pad, s).unwrap();
        let want = ce_oracle(
            logits.data(),
            v,
            &tgt.concat(),
            &pad.concat(),
            s,
        );
        assert!((got - want).abs() < 1e-6, "{s}: {got} vs {want}");
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_target() {
    let mut rng = seeded_rng(5);
    let (t, v, s) = (3, 6, 0.1);
    let logits = Tensor::from_fn(&[1, t, v], |_| rng.gen_range(-2.0..2.0));
    let tgt = vec![vec![2, 0, 5]];
    let pad = vec![vec![false, false, true]];
    let mut tape = Tape::<f64>::detached();
    let l = tape.input(logits.clone());
    let loss = cross_entropy(&mut tape, l, &tgt, &pad, s).unwrap();
    let g = tape.backward(loss).unwrap();
    let g = g.wrt(l).unwrap();
    let probs = logits.softmax_lastdim().unwrap();
    for i in 0..t {
        for j in 0..v {
            let want = if pad[0][i] {
                0.0
            } else {
                let q = if j == tgt[0][i] { 1.0 - s + s / v as f64 } else { s / v as f64 };
                (probs.data()[i * v + j] - q) / 2.0
            };
            assert!((g.data()[i * v + j] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn batch_alignment_and_padding() {
    let corpus = tiny_corpus(4);
    let refs: Vec<&Utterance> = corpus.train.iter().collect();
    let b = Batch::<f64>::new(&refs).unwrap();
    for (i, u) in refs.iter().enumerate() {
        let n = u.tgt.len();
        assert_eq!(b.tgt_in[i][0], BOS);
        assert_eq!(&b.tgt_in[i][1..=n], &u.tgt[..]);
        assert_eq!(&b.tgt_out[i][..n], &u.tgt[..]);
        assert_eq!(b.tgt_out[i][n], EOS);
        assert_eq!(b.tgt_pad[i].iter().filter(|p| !**p).count(), n + 1);
        assert_eq!(b.feature_pad[i].iter().filter(|p| !**p).count(), u.frames);
        assert!(b.tgt_out[i][n + 1..].iter().all(|&x| x == PAD));
    }
}

#[test]
fn loss_is_invariant_to_extra_padding() {
    let corpus = tiny_corpus(3);
    let refs: Vec<&Utterance> = corpus.train.iter().collect();
    let loss_of = |model: &Model<f64>, b: &Batch<f64>| {
        let mut tape = Tape::inference(&model.store);
        let mut d = Dropout::off();
        let enc = model.encode(&mut tape, &b.features, &b.feature_pad, &mut d).unwrap();
        let lg = model.decode_train(&mut tape, &enc, &b.tgt_in, &b.tgt_pad, &mut d).unwrap();
        let l = cross_entropy(&mut tape, lg, &b.tgt_out, &b.tgt_pad, 0.1).unwrap();
        tape.value(l).item().unwrap()
    };
    for variant in Variant::ALL {
        let model = Model::<f64>::new(ModelConfig::tiny(variant), 2).unwrap();
        let tight = loss_of(&model, &Batch::new(&refs).unwrap());
        let loose = loss_of(&model, &Batch::padded_to(&refs, 40, 9).unwrap());
        assert!((tight - loose).abs() < 1e-5, "{variant}: {tight} vs {loose}");
    }
}

#[test]
fn batcher_covers_each_epoch_once() {
    let lengths: Vec<usize> = (0..23).map(|i| (i * 7) % 11).collect();
    let mut b = Batcher::new(&lengths, 4, 3).unwrap();
    assert_eq!(b.batches_per_epoch(), 6);
    for epoch in 0..3u64 {
        let mut seen: Vec<usize> = (0..6).flat_map(|k| b.batch(epoch * 6 + k).to_vec()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }
    // batches hold similar lengths
    for k in 0..6 {
        let ls: Vec<usize> = b.batch(k).iter().map(|&i| lengths[i]).collect();
        assert!(ls.iter().max().unwrap() - ls.iter().min().unwrap() <= 3);
    }
    let mut c = Batcher::new(&lengths, 4, 3).unwrap();
    assert_eq!(b.batch(8).to_vec(), c.batch(8).to_vec());
    assert!(Batcher::new(&[], 4, 0).is_err());
}

fn quick_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        peak_lr: 3e-3,
        warmup_steps: 20,
        log_every: 5,
        eval_every: 10,
        time_masks: 1,
        max_time_mask: 2,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn tiny_model(variant: Variant) -> Model<f64> {
    let mut c = ModelConfig::tiny(variant);
    c.dropout = 0.1;
    Model::new(c, 3).unwrap()
}

#[test]
fn single_utterance_is_memorized() {
    let corpus = tiny_corpus(1);
    let mut model = Model::<f32>::new(ModelConfig::tiny(Variant::Adast), 1).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 1,
        peak_lr: 1e-2,
        warmup_steps: 30,
        label_smoothing: 0.0,
        log_every: 25,
        eval_every: 300,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&model, &cfg);
    let report = train(&mut model, &mut state, &corpus.train, &corpus.train, &cfg, None).unwrap();
    let last_train = report.rows.iter().rfind(|r| r.split == "train").unwrap();
    assert!(last_train.loss < 0.01, "{report:?}");
    assert_eq!(report.best_dev_acc, 1.0);
}

#[test]
fn training_is_reproducible() {
    let corpus = tiny_corpus(12);
    let run = || {
        let mut model = tiny_model(Variant::Adast);
        let cfg = quick_cfg(20);
        let mut state = TrainState::new(&model, &cfg);
        let r = train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg, None).unwrap();
        (r.rows, model.store.checksum(|_| true))
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_continues_exactly() {
    let corpus = tiny_corpus(12);
    let tmp = tempfile::tempdir().unwrap();
    let straight = {
        let mut model = tiny_model(Variant::Baseline);
        let cfg = quick_cfg(30);
        let mut state = TrainState::new(&model, &cfg);
        let dir = tmp.path().join("straight");
        train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg, Some(&dir)).unwrap();
        (fs::read_to_string(dir.join("train_log.csv")).unwrap(), model.store.checksum(|_| true))
    };
    let dir = tmp.path().join("resumed");
    {
        let mut model = tiny_model(Variant::Baseline);
        let cfg = quick_cfg(20);
        let mut state = TrainState::new(&model, &cfg);
        train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg, Some(&dir)).unwrap();
    }
    let cfg = quick_cfg(30);
    let (mut model, mut state) = load_training_checkpoint::<f64>(&dir.join("last"), &cfg).unwrap();
    assert_eq!(state.step(), 20);
    let report = train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg, Some(&dir)).unwrap();
    assert_eq!(report.rows.first().unwrap().step, 25);
    let log = fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert_eq!(log, straight.0);
    assert_eq!(model.store.checksum(|_| true), straight.1);
}

#[test]
fn divergence_aborts_and_keeps_best_checkpoint() {
    let corpus = tiny_corpus(8);
    let tmp = tempfile::tempdir().unwrap();
    let mut model = tiny_model(Variant::Adast);
    let cfg = quick_cfg(10);
    let mut state = TrainState::new(&model, &cfg);
    train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg, Some(tmp.path())).unwrap();
    let before = fs::read(tmp.path().join("best/tensors.bin")).unwrap();

    let id = model.store.id("output.b").unwrap();
    let shape = model.store.value(id).shape().to_vec();
    model.store.set_value(id, Tensor::full(&shape, f64::NAN)).unwrap();
    let err = train(&mut model, &mut state, &corpus.train, &corpus.dev, &quick_cfg(20), Some(tmp.path()));
    assert!(matches!(err, Err(Error::Divergence { step: 11, .. })), "{err:?}");
    assert_eq!(fs::read(tmp.path().join("best/tensors.bin")).unwrap(), before);
    crate::model::load_checkpoint::<f64>(&tmp.path().join("best")).unwrap();
}

#[test]
fn feature_dim_mismatch_is_a_config_error() {
    let corpus = tiny_corpus(2);
    let mut c = ModelConfig::tiny(Variant::Adast);
    c.feature_dim = 10;
    let mut model = Model::<f64>::new(c, 0).unwrap();
    let cfg = quick_cfg(1);
    let mut state = TrainState::new(&model, &cfg);
    assert!(matches!(
        train(&mut model, &mut state, &corpus.train, &[], &cfg, None),
        Err(Error::Config(_))
    ));
}
