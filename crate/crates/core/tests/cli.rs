use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_aste::autodiff::{AdamW, AdamWConfig};
use span_aste::cli::{run, RunConfig, CONFIG_ECHO};
use span_aste::data::{make_fixture, parse_corpus, read_corpus, write_corpus, VocabSpec};
use span_aste::encoder::enumerate_spans;
use span_aste::eval::{evaluate_predictions, triplet_prf, EvalMode, EvalReport, SweepRow};
use span_aste::mention::pool_size;
use span_aste::model::{build_vocabulary, ModelConfig, SpanAste, CHECKPOINT_FILE, CONFIG_FILE};
use span_aste::training::train_epoch;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(
        std::iter::once("span-aste").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn splits(dir: &Path) -> [PathBuf; 3] {
    let spec = VocabSpec::default();
    [("train", 12, 1), ("dev", 4, 2), ("test", 4, 3)].map(|(name, size, seed)| {
        let path = dir.join(format!("{name}.txt"));
        let fixture = make_fixture(&mut ChaCha8Rng::seed_from_u64(seed), size, &spec).unwrap();
        write_corpus(&path, &fixture.sentences).unwrap();
        path
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, data: &[PathBuf; 3], out: &str, extra: &[&str]) -> Outcome {
    let out = dir.join(out);
    let mut args = vec![
        "train",
        "--train",
        s(&data[0]),
        "--dev",
        s(&data[1]),
        "--test",
        s(&data[2]),
        "--preset",
        "test-scale",
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn train_eval_predict_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = splits(dir);
    let t = train(dir, &data, "run", &[]);
    assert_eq!(t.code, 0, "{}", t.stderr);
    assert!(t.stdout.contains("seed 3"));
    let run_dir = dir.join("run");
    for f in [CONFIG_ECHO, "report.txt", "report.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let echoed: RunConfig = serde_json::from_str(&std::fs::read_to_string(run_dir.join(CONFIG_ECHO)).unwrap()).unwrap();
    assert_eq!(echoed.training.epochs, 2);
    assert_eq!(echoed.training.seeds, vec![3]);

    let ckpt = run_dir.join("seed-3");
    let pred_path = dir.join("pred.txt");
    let p = cli(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&data[2]),
        "--out",
        s(&pred_path),
    ]);
    assert_eq!(p.code, 0, "{}", p.stderr);
    let gold = read_corpus(&data[2]).unwrap();
    let pred = read_corpus(&pred_path).unwrap();
    assert_eq!(pred.len(), gold.len());
    for (g, q) in gold.iter().zip(&pred) {
        assert_eq!(g.tokens, q.tokens);
    }

    let eval_dir = dir.join("eval");
    let e = cli(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&data[2]),
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(e.code, 0, "{}", e.stderr);
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap()).unwrap();
    let offline = evaluate_predictions(&gold, &pred, &EvalMode::ALL).unwrap();
    assert_eq!(report.triplets, offline.triplets);
    assert!(report.ate.is_some() && report.ote.is_some());

    let again = cli(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&data[2])]);
    assert_eq!(again.stdout, e.stdout);
    let echoed = RunConfig::load(&eval_dir.join(CONFIG_ECHO)).unwrap();
    assert_eq!(echoed.checkpoint.as_deref(), Some(ckpt.as_path()));
    assert_eq!(echoed.test.as_deref(), Some(data[2].as_path()));
    let pred_echo = RunConfig::load(&dir.join("pred.txt.config.json")).unwrap();
    assert_eq!(pred_echo.model.encoder.embedding_dim, 32);
}

#[test]
fn eval_after_memorizing_scores_one_on_every_present_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_fixture(&mut ChaCha8Rng::seed_from_u64(7), 20, &VocabSpec::default())
        .unwrap()
        .sentences;
    let mut model = SpanAste::new(ModelConfig::test_scale(), build_vocabulary(&data, &[], None), 7, None).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let memorized = (0..300).any(|_| {
        train_epoch(&mut model, &data, &mut opt, &mut rng).unwrap();
        triplet_prf(&data, &model.predict_corpus(&data).unwrap(), EvalMode::All)
            .unwrap()
            .f1
            == 1.0
    });
    assert!(memorized);
    let ckpt = tmp.path().join("model");
    model.save(&ckpt).unwrap();
    let corpus = tmp.path().join("fixture.txt");
    write_corpus(&corpus, &data).unwrap();
    let out = tmp.path().join("eval");
    let e = cli(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
    ]);
    assert_eq!(e.code, 0, "{}", e.stderr);
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    for row in &report.triplets {
        if row.both.tp + row.both.fn_ > 0 {
            assert_eq!(row.both.f1, 1.0, "{}", row.mode);
        }
    }
    assert_eq!(report.ate_from_triplets.f1, 1.0);
    assert_eq!(report.ote_from_triplets.f1, 1.0);
}

#[test]
fn checkpoint_shape_mismatch_names_parameter() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    assert_eq!(train(tmp.path(), &data, "run", &[]).code, 0);
    let ckpt = tmp.path().join("run/seed-3");
    let mut cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(ckpt.join(CONFIG_FILE)).unwrap()).unwrap();
    cfg.ffnn_hidden += 1;
    std::fs::write(ckpt.join(CONFIG_FILE), serde_json::to_string(&cfg).unwrap()).unwrap();
    let e = cli(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&data[2])]);
    assert_eq!(e.code, 2);
    assert!(e.stderr.contains("mention.hidden0"), "{}", e.stderr);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    assert_eq!(train(tmp.path(), &data, "a", &[]).code, 0);
    assert_eq!(train(tmp.path(), &data, "b", &[]).code, 0);
    let report = |run: &str| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join(run).join("report.json")).unwrap()).unwrap();
        v["seeds"][0]["checkpoint"] = serde_json::Value::Null;
        v
    };
    assert_eq!(report("a"), report("b"));
    for f in ["seed-3/model.ckpt", "seed-3/vocab.txt", "seed-3/model_config.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn corrupted_checkpoint_fails_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    assert_eq!(train(tmp.path(), &data, "run", &[]).code, 0);
    let ckpt = tmp.path().join("run/seed-3");
    let file = ckpt.join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&file).unwrap();
    std::fs::write(&file, &bytes[..bytes.len() / 2]).unwrap();
    let e = cli(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&data[2])]);
    assert_eq!(e.code, 2);
    assert!(e.stderr.contains("seed-3"), "{}", e.stderr);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    let mut cfg = RunConfig::default();
    cfg.training.epochs = 7;
    cfg.model.prune.z = 0.3;
    cfg.modes = vec![EvalMode::All];
    let cfg_path = tmp.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let t = train(tmp.path(), &data, "run", &["--config", s(&cfg_path), "--z", "0.4"]);
    assert_eq!(t.code, 0, "{}", t.stderr);
    let echoed = RunConfig::load(&tmp.path().join("run").join(CONFIG_ECHO)).unwrap();
    assert_eq!(echoed.training.epochs, 2);
    assert_eq!(echoed.model.prune.z, 0.4);
    assert_eq!(echoed.modes, vec![EvalMode::All]);
    assert_eq!(echoed.model.encoder.embedding_dim, 32);
}

#[test]
fn configuration_problems_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    assert_eq!(train(tmp.path(), &data, "r1", &["--z", "0.1,0.2"]).code, 1);
    assert_eq!(train(tmp.path(), &data, "r2", &["--z", "0"]).code, 1);
    assert_eq!(train(tmp.path(), &data, "r3", &["--z", "1.5"]).code, 1);
    assert_eq!(train(tmp.path(), &data, "r4", &["--span-mode", "average"]).code, 1);
    assert_eq!(cli(&["train", "--dev", "x"]).code, 1);
    assert_eq!(cli(&["no-such-command"]).code, 1);
    assert_eq!(cli(&["stats"]).code, 1);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cli(&["stats", s(&data[0]), "--config", s(&bad)]).code, 1);
}

#[test]
fn help_exits_zero() {
    let h = cli(&["--help"]);
    assert_eq!(h.code, 0);
    for sub in ["train", "eval", "predict", "stats", "prune-sweep"] {
        assert!(h.stderr.contains(sub), "{sub}");
    }
}

#[test]
fn malformed_corpus_reports_location() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.txt");
    std::fs::write(&path, "a b####[([0], [1], 'POS')]\nc d####[([0], [1], 'GOOD')]\n").unwrap();
    let o = cli(&["stats", s(&path)]);
    assert_eq!(o.code, 2);
    assert!(
        o.stderr.contains("bad.txt") && o.stderr.contains("line 2"),
        "{}",
        o.stderr
    );
}

#[test]
fn predict_on_empty_corpus_writes_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    assert_eq!(train(tmp.path(), &data, "run", &[]).code, 0);
    let empty = tmp.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = tmp.path().join("nested/pred.txt");
    let p = cli(&[
        "predict",
        "--checkpoint",
        s(&tmp.path().join("run/seed-3")),
        "--corpus",
        s(&empty),
        "--out",
        s(&out),
    ]);
    assert_eq!(p.code, 0, "{}", p.stderr);
    assert!(parse_corpus(&std::fs::read_to_string(out).unwrap()).unwrap().is_empty());
}

#[test]
fn stats_and_sweep_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    let st = tmp.path().join("st");
    let o = cli(&["stats", "--train", s(&data[0]), "--dev", s(&data[1]), "--out", s(&st)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 3);
    assert!(st.join("stats.json").is_file());

    let sw = tmp.path().join("sw");
    let o = cli(&[
        "prune-sweep",
        "--train",
        s(&data[0]),
        "--dev",
        s(&data[1]),
        "--preset",
        "test-scale",
        "--epochs",
        "1",
        "--seed",
        "5",
        "--z",
        "0.2,0.5",
        "--settings",
        "dual,single",
        "--out",
        s(&sw),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(sw.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
}

#[test]
fn single_setting_sweep_gives_one_row_with_k_squared_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = splits(tmp.path());
    let sw = tmp.path().join("sw");
    let o = cli(&[
        "prune-sweep",
        "--train",
        s(&data[0]),
        "--dev",
        s(&data[1]),
        "--preset",
        "test-scale",
        "--epochs",
        "1",
        "--z",
        "0.5",
        "--settings",
        "dual",
        "--out",
        s(&sw),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let rows: Vec<SweepRow> = serde_json::from_str(&std::fs::read_to_string(sw.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let dev = read_corpus(&data[1]).unwrap();
    let want: usize = dev
        .iter()
        .map(|d| pool_size(d.len(), 0.5, enumerate_spans(d.len(), 8).len()).pow(2))
        .sum();
    assert_eq!(rows[0].pools.pairs, want);
}
