use std::fs;
use std::path::Path;
use std::process::Command as Process;

use adat_cli::{run, CliError, Command, ExitCode, Precision, RunConfig};
use adat_core::models::{Mode, Variant};

const TINY: &[&str] = &[
    "synth.n_samples=30",
    "synth.gloss_len_max=4",
    "synth.height=8",
    "synth.width=8",
    "d_model=16",
    "heads=2",
    "ff_size=32",
    "dropout=0.1",
    "max_epochs=2",
    "batch_size=8",
    "precision=f64",
];

fn tiny(extra: &[&str]) -> RunConfig {
    let sets: Vec<String> = TINY.iter().chain(extra).map(|s| s.to_string()).collect();
    RunConfig::resolve(None, None, &sets, Some(7)).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

fn adat(args: &[&str], out: &Path) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_adat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn table3_s2t_preset_values() {
    let cfg = RunConfig::resolve(Some("table3-s2t"), None, &[], None).unwrap();
    assert_eq!(
        (cfg.model.num_encoders, cfg.model.d_model, cfg.model.heads, cfg.model.dropout),
        (1, 512, 8, 0.1)
    );
    assert_eq!(cfg.model.mode, Mode::S2T);
}

#[test]
fn empty_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.cfg");
    fs::write(&path, "").unwrap();
    let cfg = RunConfig::resolve(None, Some(&path), &[], None).unwrap();
    let defaults = RunConfig::defaults(None).unwrap();
    assert_eq!(cfg, defaults);
    assert!(cfg.explicit.is_empty());
}

#[test]
fn heads_not_dividing_d_model_is_rejected() {
    let err = RunConfig::resolve(Some("table3-s2t"), None, &["heads=5".into()], None).unwrap_err();
    assert_eq!(err.exit_code(), ExitCode::Usage);
    assert!(err.to_string().contains("divisible"), "{err}");
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "# comment\nd_model=64\n\nnot_a_key=3\n").unwrap();
    match RunConfig::resolve(None, Some(&path), &[], None).unwrap_err() {
        CliError::Config { line, msg, .. } => {
            assert_eq!(line, 4);
            assert!(msg.contains("not_a_key"));
        }
        other => panic!("unexpected {other}"),
    }
    fs::write(&path, "d_model=wide\n").unwrap();
    assert!(matches!(
        RunConfig::resolve(None, Some(&path), &[], None),
        Err(CliError::Config { line: 1, .. })
    ));
}

#[test]
fn overrides_beat_file_and_seed_beats_both() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "heads=2\nseed=3\nprecision=f64\n").unwrap();
    let cfg = RunConfig::resolve(None, Some(&path), &["heads=8".into(), "seed=4".into()], Some(9)).unwrap();
    assert_eq!((cfg.model.heads, cfg.seed, cfg.schedule.seed), (8, 9, 9));
    assert_eq!(cfg.precision, Precision::F64);
}

#[test]
fn echo_reloads_to_the_same_config() {
    let cfg = tiny(&["dataset=/tmp/x.adsl"]);
    let mut again = RunConfig::defaults(None).unwrap();
    again.apply_text(&cfg.echo(), "echo").unwrap();
    again.explicit = cfg.explicit.clone();
    assert_eq!(again, cfg);
}

#[test]
fn flops_emits_table_rows() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::resolve(Some("table5"), None, &[], None).unwrap();
    let dir = run(Command::Flops, &cfg, out.path()).unwrap();
    let csv = String::from_utf8(read(&dir, "flops.csv")).unwrap();
    let cols: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.splitn(3, ',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(cols, ["s2g2t,encoder_decoder", "s2g2t,adat", "s2t,encoder_decoder", "s2t,adat"]);
    let text = String::from_utf8(read(&dir, "flops.txt")).unwrap();
    for row in ["Encoding GFLOPs", "Decoding GFLOPs", "Total GFLOPs"] {
        assert!(text.contains(row), "{text}");
    }
    let fits = String::from_utf8(read(&dir, "scaling_fit.csv")).unwrap();
    assert_eq!(fits.lines().count(), 3);
    assert!(read(&dir, "components.csv").starts_with(b"mode,variant,kind,stage"));
}

#[test]
fn train_is_bit_reproducible_in_f64() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(&[]);
    let a = run(Command::Train, &cfg, out.path()).unwrap();
    let b = run(Command::Train, &cfg, out.path()).unwrap();
    assert_ne!(a, b);
    for name in ["history.csv", "train_summary.csv", "model.ckpt", "config.txt"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let history = String::from_utf8(read(&a, "history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let echoed = a.join("config.txt");
    let reloaded = RunConfig::resolve(None, Some(&echoed), &[], None).unwrap();
    let c = run(Command::Train, &reloaded, out.path()).unwrap();
    assert_eq!(read(&a, "model.ckpt"), read(&c, "model.ckpt"));
    assert_eq!(read(&a, "history.csv"), read(&c, "history.csv"));
}

#[test]
fn eval_scores_a_trained_checkpoint() {
    let out = tempfile::tempdir().unwrap();
    let trained = run(Command::Train, &tiny(&[]), out.path()).unwrap();
    let ckpt = format!("checkpoint={}", trained.join("model.ckpt").display());
    let dir = run(Command::Eval, &tiny(&[&ckpt]), out.path()).unwrap();
    let bleu = String::from_utf8(read(&dir, "bleu.csv")).unwrap();
    assert!(bleu.starts_with("bleu1,bleu2,bleu3,bleu4,"));
    let translations = String::from_utf8(read(&dir, "translations.csv")).unwrap();
    assert_eq!(translations.lines().count(), 1 + 5);

    let err = run(Command::Eval, &tiny(&[&ckpt, "mode=s2g2t"]), out.path()).unwrap_err();
    assert_eq!(err.exit_code(), ExitCode::Mismatch);
    let err = run(Command::Eval, &tiny(&[&ckpt, "variant=encoder_only"]), out.path()).unwrap_err();
    assert_eq!(err.exit_code(), ExitCode::Mismatch);
}

#[test]
fn compare_has_one_row_per_variant() {
    let out = tempfile::tempdir().unwrap();
    let dir = run(Command::Compare, &tiny(&["max_epochs=1"]), out.path()).unwrap();
    let table = String::from_utf8(read(&dir, "compare.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let mut expected: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    assert_eq!(names, expected);
    expected.sort();
    for v in expected {
        assert!(dir.join(v).join("model.ckpt").exists());
    }
    let err = run(Command::Compare, &tiny(&["mode=s2g2t"]), out.path()).unwrap_err();
    assert_eq!(err.exit_code(), ExitCode::Mismatch);
}

#[test]
fn preprocess_writes_vocabularies() {
    let out = tempfile::tempdir().unwrap();
    let gloss = out.path().join("gloss.txt");
    let text = out.path().join("text.txt");
    fs::write(&gloss, "A B\nB C B\n").unwrap();
    fs::write(&text, "a b\nb c\n").unwrap();
    let cfg = RunConfig::resolve(
        None,
        None,
        &[format!("gloss_tokens={}", gloss.display()), format!("text_tokens={}", text.display())],
        None,
    )
    .unwrap();
    let dir = run(Command::Preprocess, &cfg, out.path()).unwrap();
    let vocab = String::from_utf8(read(&dir, "gloss_vocab.csv")).unwrap();
    assert!(vocab.lines().any(|l| l.ends_with(",B,3")), "{vocab}");
    let stats = String::from_utf8(read(&dir, "stats.csv")).unwrap();
    assert_eq!(stats.lines().nth(1).unwrap().split(',').next(), Some("2"));

    fs::write(&text, "a b\n").unwrap();
    assert_eq!(run(Command::Preprocess, &cfg, out.path()).unwrap_err().exit_code(), ExitCode::DataFormat);
}

#[test]
fn binary_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path();
    assert_eq!(adat(&["flops", "--preset", "table5"], o), 0);
    assert_eq!(adat(&["train", "--set", "no_such_key=1"], o), 2);
    assert_eq!(adat(&["launch"], o), 2);
    assert_eq!(adat(&["preprocess"], o), 2);

    let missing = o.join("missing.txt");
    let present = o.join("present.txt");
    fs::write(&present, "a\n").unwrap();
    let io = [
        "preprocess",
        "--set",
        &format!("gloss_tokens={}", missing.display()),
        "--set",
        &format!("text_tokens={}", present.display()),
    ];
    assert_eq!(adat(&io, o), 3);

    let junk = o.join("junk.adsl");
    fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(adat(&["train", "--set", &format!("dataset={}", junk.display())], o), 4);

    let mut diverge: Vec<String> = TINY.iter().flat_map(|s| ["--set".to_string(), s.to_string()]).collect();
    diverge.extend(["--set", "learning_rate=1e30", "--set", "precision=f32"].map(String::from));
    let args: Vec<&str> = std::iter::once("train").chain(diverge.iter().map(String::as_str)).collect();
    assert_eq!(adat(&args, o), 5);

    let mut mismatch = vec!["train".to_string(), "--set".into(), "text_vocab=999".into()];
    mismatch.extend(TINY.iter().flat_map(|s| ["--set".to_string(), s.to_string()]));
    let args: Vec<&str> = mismatch.iter().map(String::as_str).collect();
    assert_eq!(adat(&args, o), 6);
}
