use proptest::prelude::*;

use super::*;

fn small(mode: TaskMode) -> SyntheticSpec {
    SyntheticSpec {
        mode,
        n_train: 40,
        n_dev: 10,
        n_test: 10,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_identity_features_are_prototypes() {
    let spec = SyntheticSpec {
        mode: TaskMode::AsrLike,
        noise_std: 0.0,
        min_frames_per_token: 1,
        max_frames_per_token: 1,
        n_classes: 0,
        n_train: 50,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let world = TokenWorld::new(&spec);
    for u in &corpus.train {
        assert_eq!(u.frames, u.src.len());
        assert_eq!(u.src, u.tgt);
        for (t, &tok) in u.src.iter().enumerate() {
            let want: Vec<f32> = world.prototypes[tok].iter().map(|&v| v as f32).collect();
            assert_eq!(u.frame(t), &want[..]);
            // nearest prototype by dot product recovers the token
            let best = (FIRST_CONTENT..spec.vocab_size)
                .max_by(|&a, &b| {
                    let dot = |id: usize| {
                        world.prototypes[id].iter().zip(u.frame(t)).map(|(p, &x)| p * x as f64).sum::<f64>()
                    };
                    dot(a).total_cmp(&dot(b))
                })
                .unwrap();
            assert_eq!(best, tok);
        }
    }
}

#[test]
fn translation_modes_invert_exactly() {
    for mode in [TaskMode::MtLike, TaskMode::StLike] {
        let spec = small(mode);
        let corpus = generate(&spec).unwrap();
        let world = TokenWorld::new(&spec);
        for u in corpus.train.iter().chain(&corpus.dev) {
            assert_eq!(world.source(&u.tgt), u.src);
        }
        let mut sorted = world.remap.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..spec.vocab_size).collect::<Vec<_>>());
    }
}

#[test]
fn reorder_actually_happens() {
    let corpus = generate(&small(TaskMode::MtLike)).unwrap();
    let world = TokenWorld::new(&small(TaskMode::MtLike));
    let swapped = corpus
        .train
        .iter()
        .filter(|u| u.src.iter().map(|&s| world.remap[s]).collect::<Vec<_>>() != u.tgt)
        .count();
    assert!(swapped > corpus.train.len() / 2);
}

#[test]
fn frame_accounting() {
    let spec = SyntheticSpec {
        n_train: 1000,
        n_dev: 0,
        n_test: 0,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let (frames, tokens) = corpus
        .train
        .iter()
        .fold((0usize, 0usize), |(f, t), u| (f + u.frames, t + u.src.len()));
    for u in &corpus.train {
        assert!(u.frames >= 4 * u.src.len() && u.frames <= 5 * u.src.len());
        assert_eq!(u.features.len(), u.frames * spec.feature_dim);
    }
    // uniform on 4..=5: mean 4.5, sd 0.5; about 7000 tokens
    let mean = frames as f64 / tokens as f64;
    assert!((mean - 4.5).abs() < 0.1, "{mean}");

    let mt = generate(&small(TaskMode::MtLike)).unwrap();
    assert!(mt.train.iter().all(|u| u.frames == MT_FRAMES_PER_TOKEN * u.src.len()));
}

#[test]
fn generation_is_reproducible_and_splits_differ() {
    let spec = small(TaskMode::StLike);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.train[0].features, a.dev[0].features);
    let other = generate(&SyntheticSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(a.train[0].features, other.train[0].features);
}

#[test]
fn class_bias_is_linearly_recoverable() {
    let spec = SyntheticSpec {
        n_train: 400,
        n_test: 200,
        noise_std: 0.1,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let f = spec.feature_dim;
    let pooled = |u: &Utterance| -> Vec<f64> {
        (0..f)
            .map(|j| (0..u.frames).map(|t| u.frame(t)[j] as f64).sum::<f64>() / u.frames as f64)
            .collect()
    };
    // nearest class mean, a linear decision rule
    let mut means = vec![vec![0.0; f]; spec.n_classes];
    let mut counts = vec![0usize; spec.n_classes];
    for u in &corpus.train {
        let c = u.class_id.unwrap();
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(pooled(u)) {
            *m += v;
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = corpus
        .test
        .iter()
        .filter(|u| {
            let p = pooled(u);
            let dist = |m: &Vec<f64>| m.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..spec.n_classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])));
            best == u.class_id
        })
        .count();
    assert!(correct as f64 / corpus.test.len() as f64 >= 0.99, "{correct}");
}

#[test]
fn invalid_specs_are_rejected() {
    let cases = [
        SyntheticSpec { vocab_size: 3, ..SyntheticSpec::default() },
        SyntheticSpec { min_len: 5, max_len: 4, ..SyntheticSpec::default() },
        SyntheticSpec { min_frames_per_token: 0, ..SyntheticSpec::default() },
        SyntheticSpec { noise_std: -1.0, ..SyntheticSpec::default() },
        SyntheticSpec { n_classes: 1, ..SyntheticSpec::default() },
        SyntheticSpec { min_len: 1, min_frames_per_token: 1, ..SyntheticSpec::default() },
    ];
    for spec in cases {
        assert!(matches!(generate(&spec), Err(Error::Validation(_))), "{spec:?}");
    }
    assert!("speech".parse::<TaskMode>().unwrap_err().to_string().contains("st_like"));
}

mod files {
    use super::*;
    use std::fs;

    fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for split in ["train", "dev", "test"] {
            for f in ["manifest.txt", "features.bin"] {
                out.push((format!("{split}/{f}"), fs::read(dir.join(split).join(f)).unwrap()));
            }
        }
        out.push(("corpus".into(), fs::read(dir.join(CORPUS_FILE)).unwrap()));
        out
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = generate(&small(TaskMode::StLike)).unwrap();
        write_corpus(&corpus, &tmp.path().join("a")).unwrap();
        let back = read_corpus(&tmp.path().join("a")).unwrap();
        assert_eq!(back, corpus);
        write_corpus(&back, &tmp.path().join("b")).unwrap();
        assert_eq!(snapshot(&tmp.path().join("a")), snapshot(&tmp.path().join("b")));
    }

    #[test]
    fn empty_corpus_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_train: 0, n_dev: 0, n_test: 0, ..small(TaskMode::AsrLike) };
        let corpus = generate(&spec).unwrap();
        write_corpus(&corpus, tmp.path()).unwrap();
        assert_eq!(fs::read(tmp.path().join("train/manifest.txt")).unwrap(), b"");
        assert_eq!(read_corpus(tmp.path()).unwrap(), corpus);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = generate(&small(TaskMode::AsrLike)).unwrap();
        write_split(&corpus.dev, tmp.path()).unwrap();
        let f = corpus.info.feature_dim;

        // header dimension disagrees with the corpus
        assert!(matches!(read_split(tmp.path(), f + 1), Err(Error::Parse { .. })));

        // truncated blob
        let blob = tmp.path().join("features.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        match read_split(tmp.path(), f) {
            Err(Error::Parse { offset, msg, .. }) => {
                assert!(offset > 0 && msg.contains("truncated"), "{offset} {msg}");
            }
            other => panic!("{other:?}"),
        }

        // trailing garbage
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0, 1]);
        fs::write(&blob, &longer).unwrap();
        match read_split(tmp.path(), f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len()),
            other => panic!("{other:?}"),
        }

        // bad magic in the first record
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&blob, &bad).unwrap();
        assert!(matches!(read_split(tmp.path(), f), Err(Error::Parse { offset: 0, .. })));

        // malformed manifest line
        fs::write(&blob, &bytes).unwrap();
        let manifest = tmp.path().join("manifest.txt");
        let text = fs::read_to_string(&manifest).unwrap();
        let first_len = text.find('\n').unwrap() + 1;
        let broken = format!("{}oops\n{}", &text[..first_len], &text[first_len..]);
        fs::write(&manifest, broken).unwrap();
        match read_split(tmp.path(), f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, first_len),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn swap_rule_by_hand() {
    let mut x = vec![3, 5, 3, 4, 4, 5, 4, 6, 7, 9, 11];
    swap_pairs(&mut x);
    assert_eq!(x, vec![5, 3, 3, 4, 4, 5, 4, 6, 9, 7, 11]);
}

proptest! {
    #[test]
    fn swap_rule_is_an_involution(mut ids in proptest::collection::vec(0usize..50, 0..20)) {
        let orig = ids.clone();
        swap_pairs(&mut ids);
        swap_pairs(&mut ids);
        prop_assert_eq!(ids, orig);
    }

    #[test]
    fn target_rule_is_invertible(seed in 0u64..1000, src in proptest::collection::vec(3usize..32, 1..15)) {
        for mode in TaskMode::ALL {
            let world = TokenWorld::new(&SyntheticSpec { seed, mode, ..SyntheticSpec::default() });
            let tgt = world.target(&src);
            prop_assert_eq!(tgt.len(), src.len());
            prop_assert_eq!(world.source(&tgt), src.clone());
            prop_assert_eq!(world.target(&src), tgt);
        }
    }
}
