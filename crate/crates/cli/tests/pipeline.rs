mod common;

use std::fs;

use common::Workspace;
use g2p_cli::manifest::{Manifest, ManifestFile, Sampling};
use g2p_cli::pipeline;
use g2p_core::evaluation::greedy_decode;
use g2p_core::lexicon::{tokenize, Side};
use g2p_core::training::ModelCheckpoint;

#[test]
fn prepare_is_deterministic_and_skips_small_corpora() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["prepare"]), 0);
    let splits = fs::read(ws.lang_dir("aa").join("splits.tsv")).unwrap();
    let vocab = fs::read(ws.lang_dir("aa").join("vocab.src")).unwrap();
    assert_eq!(String::from_utf8_lossy(&splits).lines().count(), 200);
    assert!(!ws.lang_dir("small").join("splits.tsv").exists());
    assert!(ws.lang_dir("small").join("skipped.txt").exists());
    // unchanged inputs, forced rerun: identical bytes
    assert_eq!(ws.run(&["prepare", "--force"]), 0);
    assert_eq!(fs::read(ws.lang_dir("aa").join("splits.tsv")).unwrap(), splits);
    assert_eq!(fs::read(ws.lang_dir("aa").join("vocab.src")).unwrap(), vocab);
    // a different global seed draws a different sample
    assert_eq!(ws.run(&["prepare", "--force", "--seed", "8", "--lang", "aa"]), 0);
    assert_ne!(fs::read(ws.lang_dir("aa").join("splits.tsv")).unwrap(), splits);
}

#[test]
fn invalid_invocations_exit_with_2() {
    let ws = Workspace::new();
    fs::remove_file(ws.path().join("bb.txt")).unwrap();
    assert_eq!(ws.run(&["prepare"]), 2);
    let err = Manifest::load(&ws.manifest(), None).unwrap_err().to_string();
    assert!(err.contains("bb.txt"), "{err}");

    let ws = Workspace::new();
    assert_eq!(ws.run(&["prepare", "--lang", "zz"]), 2);
    assert_eq!(ws.run(&["prepare", "--parallel", "0"]), 2);
    assert_eq!(ws.run(&["no-such-command"]), 2);
    ws.write_manifest("[languages.cc]\npath = \"aa.txt\"\nsampling = \"proportional\"\n");
    assert_eq!(ws.run(&["prepare"]), 2);
}

#[test]
fn later_stages_need_earlier_artifacts() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["train", "--lang", "aa"]), 1);
    let m = Manifest::load(&ws.manifest(), None).unwrap();
    let langs = m.select(&[]).unwrap();
    assert!(matches!(pipeline::train(&m, langs[0], false), Err(pipeline::PipelineError::MissingSplit(_))));
    assert_eq!(ws.run(&["prepare", "--lang", "aa"]), 0);
    assert!(matches!(
        pipeline::evaluate_language(&m, langs[0], Default::default(), false),
        Err(pipeline::PipelineError::MissingCheckpoint(_))
    ));
    assert!(matches!(pipeline::report(&m, &langs), Err(pipeline::PipelineError::IncompleteResults(_))));
    assert_eq!(ws.run(&["report"]), 1);
}

#[test]
fn single_language_train_and_evaluate() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["prepare", "--lang", "aa"]), 0);
    assert_eq!(ws.run(&["train", "--lang", "aa"]), 0);
    let dir = ws.lang_dir("aa");
    assert!(dir.join("model.g2pc").exists());
    assert!(!ws.lang_dir("bb").join("model.g2pc").exists());
    let log = fs::read_to_string(dir.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch\ttrain_loss\tdev_loss\tseconds\n1\t"));

    assert_eq!(ws.run(&["evaluate", "--lang", "aa"]), 0);
    let predictions = fs::read_to_string(dir.join("predictions.tsv")).unwrap();
    assert_eq!(predictions.lines().count(), 20);
    // spot-check: rows agree with decoding the saved checkpoint by hand
    let ckpt = ModelCheckpoint::load(&dir.join("model.g2pc")).unwrap();
    for row in predictions.lines().take(3) {
        let fields: Vec<&str> = row.split('\t').collect();
        let src = tokenize(fields[0], Side::Grapheme);
        let max_len = g2p_core::evaluation::default_max_len(src.len(), ckpt.model_config.max_seq_len);
        assert_eq!(greedy_decode(&ckpt, &src, max_len).unwrap().concat(), fields[2]);
    }
    let text = fs::read_to_string(dir.join("eval.tsv")).unwrap();
    assert!(text.contains("n_items\t20\n") && text.contains("train_size\t160\n"));
    let summary = pipeline::EvalSummary::parse(&text, &dir).unwrap();
    assert_eq!(summary.render(), text);
    let tf = summary.teacher_forced_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&tf));
    // older summaries without the diagnostic still parse
    let trimmed: String = text.lines().filter(|l| !l.starts_with("teacher_forced")).map(|l| format!("{l}\n")).collect();
    assert_eq!(pipeline::EvalSummary::parse(&trimmed, &dir).unwrap().teacher_forced_accuracy, None);
}

#[test]
fn parallel_runs_match_sequential_runs() {
    let a = Workspace::new();
    let b = Workspace::new();
    assert_eq!(a.run(&["run-all", "--parallel", "1"]), 0);
    assert_eq!(b.run(&["run-all", "--parallel", "2"]), 0);
    for tag in ["aa", "bb"] {
        for file in ["splits.tsv", "vocab.src", "vocab.tgt", "eval.tsv", "predictions.tsv"] {
            assert_eq!(
                fs::read(a.lang_dir(tag).join(file)).unwrap(),
                fs::read(b.lang_dir(tag).join(file)).unwrap(),
                "{tag}/{file}"
            );
        }
        let load = |ws: &Workspace| ModelCheckpoint::load(&ws.lang_dir(tag).join("model.g2pc")).unwrap();
        let (ca, cb) = (load(&a), load(&b));
        assert_eq!(ca.params, cb.params);
        let losses = |c: &ModelCheckpoint| c.log.iter().map(|r| (r.train_loss, r.dev_loss)).collect::<Vec<_>>();
        assert_eq!(losses(&ca), losses(&cb));
    }
    for file in ["table2.tsv", "table3.tsv", "figure1.svg"] {
        let path = |ws: &Workspace| ws.path().join("out/t/report").join(file);
        assert_eq!(fs::read(path(&a)).unwrap(), fs::read(path(&b)).unwrap(), "{file}");
    }
    let table2 = fs::read_to_string(a.path().join("out/t/report/table2.tsv")).unwrap();
    assert_eq!(table2.lines().count(), 3);
}

#[test]
fn existing_artifacts_are_kept_without_force() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["prepare", "--lang", "aa"]), 0);
    let path = ws.lang_dir("aa").join("splits.tsv");
    fs::write(&path, "edited").unwrap();
    assert_eq!(ws.run(&["prepare", "--lang", "aa"]), 0);
    assert_eq!(fs::read_to_string(&path).unwrap(), "edited");
    assert_eq!(ws.run(&["prepare", "--lang", "aa", "--force"]), 0);
    assert_ne!(fs::read_to_string(&path).unwrap(), "edited");
}

#[test]
fn manifest_defaults_seeds_and_output_root() {
    let ws = Workspace::new();
    let text = fs::read_to_string(ws.manifest()).unwrap();
    let file: ManifestFile = toml::from_str(&text).unwrap();
    let m = Manifest::from_file(file.clone(), ws.path(), None, None).unwrap();
    assert_eq!(m.output_root, ws.path().join("out"));
    assert_eq!(m.languages[0].seed, g2p_core::rng::derive_seed(7, "aa"));
    assert_eq!(m.train.epochs, 2);
    assert_eq!(m.train.learning_rate, 0.005);
    assert!(matches!(m.languages[0].sampling, Sampling::Fixed { sample_size: 200, .. }));
    let moved = Manifest::from_file(file, ws.path(), Some(99), Some("/elsewhere".into())).unwrap();
    assert_eq!(moved.experiment_dir(), std::path::Path::new("/elsewhere/t"));
    assert_eq!(moved.languages[0].seed, g2p_core::rng::derive_seed(99, "aa"));
}

#[test]
fn manifest_init_lists_corpora() {
    let ws = Workspace::new();
    let out = ws.path().join("generated.toml");
    let dir = ws.path().display().to_string();
    let out_s = out.display().to_string();
    assert_eq!(ws.run(&["manifest", "init", "--from-dir", &dir, "--output", &out_s]), 0);
    let file: ManifestFile = toml::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(file.languages.keys().collect::<Vec<_>>(), ["aa", "bb", "small"]);
    // refuses to overwrite without --force
    assert_eq!(ws.run(&["manifest", "init", "--from-dir", &dir, "--output", &out_s]), 2);
    assert_eq!(
        ws.run(&["manifest", "init", "--from-dir", &dir, "--output", &out_s, "--published-only", "--force"]),
        2
    );
}
