//! End-to-end tests of the `userlm` binary: every subcommand, flag
//! overrides, and the documented exit codes (0 success, 2 config error,
//! 3 data error, 4 numeric failure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use userlm::config::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_userlm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary launches")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32, what: &str) {
    let got = out.status.code().expect("no signal");
    assert_eq!(
        got,
        want,
        "{what}: expected exit {want}, got {got}\nstdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// Fresh scratch root per test so runs never collide.
fn tmp_root(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Tiny-but-complete config: trains in well under a second.
fn micro_cfg(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.output_dir = root.join("runs");
    cfg.run.name = "cli".into();
    cfg.data.dir = root.join("data");
    cfg.synth.n_users = 12;
    cfg.synth.n_movies = 60;
    cfg.embedder.s = 8;
    cfg.embedder.buckets = 64;
    cfg.uem.layers = 1;
    cfg.uem.heads = 2;
    cfg.uem.d_model = 8;
    cfg.uem.d_mlp = 16;
    cfg.uem.s = 8;
    cfg.uem.e = 16;
    cfg.uem.max_p = 8;
    cfg.lm.enc_layers = 1;
    cfg.lm.dec_layers = 1;
    cfg.lm.heads = 2;
    cfg.lm.e = 16;
    cfg.lm.d_mlp = 32;
    cfg.lm.k = 2;
    cfg.lm.max_input = 48;
    cfg.lm.max_output = 40;
    cfg.lm.max_history_rows = 8;
    cfg.train.steps = 8;
    cfg.train.batch_size = 3;
    cfg.train.p = 8;
    cfg.split.fractions = [0.6, 0.2, 0.2];
    cfg.eval.threads = 1;
    cfg.validate().unwrap();
    cfg
}

/// Write the config to disk and return its path.
fn write_cfg(root: &Path, cfg: &RunConfig) -> PathBuf {
    let path = root.join("run.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    path
}

#[test]
fn pipeline_synth_train_evaluate_baseline_succeeds() {
    let root = tmp_root("pipeline");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    let synth = run(&["--config", cfg_arg, "synth-data"]);
    assert_code(&synth, 0, "synth-data");
    let synth_out = stdout_of(&synth);
    assert!(synth_out.contains("wrote 12 users"), "unexpected synth output: {synth_out}");
    assert!(synth_out.contains("60 movies"), "unexpected synth output: {synth_out}");

    let train = run(&["--config", cfg_arg, "train"]);
    assert_code(&train, 0, "train");
    let train_out = stdout_of(&train);
    assert!(train_out.contains("trained 8 steps"), "unexpected train output: {train_out}");
    assert!(train_out.contains("prompt-shape violations 0"), "unexpected train output: {train_out}");
    assert!(train_out.contains("checkpoint:"), "no checkpoint line: {train_out}");

    // Default evaluate output is a JSON report with the weighted metrics.
    let eval = run(&["--config", cfg_arg, "evaluate", "--split", "dev"]);
    assert_code(&eval, 0, "evaluate");
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&eval)).expect("JSON report");
    assert!(report["weighted_f1"].is_f64() || report["weighted_f1"].is_u64(), "missing weighted_f1");
    assert!(report["n_examples"].as_u64().unwrap() > 0, "evaluated nothing");

    // --table switches to the aligned text table.
    let table = run(&["--config", cfg_arg, "evaluate", "--split", "dev", "--table"]);
    assert_code(&table, 0, "evaluate --table");
    let table_out = stdout_of(&table);
    assert!(table_out.contains("parse-fail"), "missing table header: {table_out}");
    assert!(table_out.contains("embedding"), "missing mode row: {table_out}");

    // The counting baseline needs shards but no checkpoint.
    let baseline = run(&["--config", cfg_arg, "baseline", "--split", "dev", "--table"]);
    assert_code(&baseline, 0, "baseline");
    let baseline_out = stdout_of(&baseline);
    assert!(baseline_out.contains("baseline"), "missing baseline row: {baseline_out}");
}

#[test]
fn flag_overrides_beat_the_config_file() {
    let root = tmp_root("overrides");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    assert_code(&run(&["--config", cfg_arg, "synth-data"]), 0, "synth-data");

    // --steps wins over the file's 8; --name keeps runs separate.
    let train = run(&["--config", cfg_arg, "--steps", "3", "--name", "short", "train"]);
    assert_code(&train, 0, "train --steps 3");
    assert!(stdout_of(&train).contains("trained 3 steps"), "override ignored: {}", stdout_of(&train));

    // Text mode trains the same model without the embedding module.
    let text = run(&["--config", cfg_arg, "--mode", "text", "--steps", "3", "--name", "text", "train"]);
    assert_code(&text, 0, "train --mode text");
    assert!(stdout_of(&text).contains("trained 3 steps"), "text mode failed: {}", stdout_of(&text));

    // An override that breaks cross-field consistency is a config error.
    let bad = run(&["--config", cfg_arg, "--p", "4096", "train"]);
    assert_code(&bad, 2, "train --p 4096");
    assert!(stderr_of(&bad).contains("error:"), "silent failure: {}", stderr_of(&bad));
}

#[test]
fn config_errors_exit_2() {
    let root = tmp_root("cfg-errors");

    // Unknown key in the file.
    let bad_key = root.join("bad-key.toml");
    std::fs::write(&bad_key, "[train]\noops = 1\n").unwrap();
    let out = run(&["--config", bad_key.to_str().unwrap(), "train"]);
    assert_code(&out, 2, "unknown key");

    // Cross-field inconsistency in the file (module output width != model width).
    let mut cfg = micro_cfg(&root);
    cfg.uem.e = 32;
    let text = cfg.to_toml_string(); // serialization is shape-agnostic
    let bad_field = root.join("bad-field.toml");
    std::fs::write(&bad_field, text).unwrap();
    let out = run(&["--config", bad_field.to_str().unwrap(), "train"]);
    assert_code(&out, 2, "inconsistent config");
    assert!(stderr_of(&out).contains("uem.e"), "error should name the field: {}", stderr_of(&out));

    // A run directory already owned by another process.
    let cfg = micro_cfg(&root);
    let cfg_path = write_cfg(&root, &cfg);
    assert_code(&run(&["--config", cfg_path.to_str().unwrap(), "synth-data"]), 0, "synth-data");
    let run_dir = cfg.run.output_dir.join(&cfg.run.name);
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join("lock"), "held\n").unwrap();
    let locked = run(&["--config", cfg_path.to_str().unwrap(), "train"]);
    assert_code(&locked, 2, "locked run dir");
    assert!(stderr_of(&locked).contains("lock"), "should mention the lock: {}", stderr_of(&locked));
}

#[test]
fn missing_data_and_missing_checkpoint_exit_3() {
    let root = tmp_root("data-errors");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    // No shards on disk yet.
    let train = run(&["--config", cfg_arg, "train"]);
    assert_code(&train, 3, "train without data");

    // Shards exist but no checkpoint was ever written.
    assert_code(&run(&["--config", cfg_arg, "synth-data"]), 0, "synth-data");
    let eval = run(&["--config", cfg_arg, "evaluate", "--split", "dev"]);
    assert_code(&eval, 3, "evaluate without checkpoint");
}

#[test]
fn divergent_training_exits_4() {
    let root = tmp_root("diverge");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    assert_code(&run(&["--config", cfg_arg, "synth-data"]), 0, "synth-data");
    // An absurd learning rate overflows the parameters on the first update;
    // the run must abort with the numeric-failure code, not log garbage.
    let out = run(&["--config", cfg_arg, "--lr", "1e200", "--steps", "20", "train"]);
    assert_code(&out, 4, "divergent train");
    assert!(stderr_of(&out).contains("error:"), "silent failure: {}", stderr_of(&out));
}

#[test]
fn ablate_sweeps_one_axis_and_rejects_ambiguity() {
    let root = tmp_root("ablate");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    assert_code(&run(&["--config", cfg_arg, "synth-data"]), 0, "synth-data");

    let sweep = run(&["--config", cfg_arg, "--steps", "3", "ablate", "--p-values", "2,4"]);
    assert_code(&sweep, 0, "ablate --p-values");
    let table = stdout_of(&sweep);
    assert!(table.contains("dev_f1"), "missing header: {table}");
    let p_rows: Vec<&str> = table.lines().filter(|l| l.starts_with("p ")).collect();
    assert_eq!(p_rows.len(), 2, "expected one row per sweep point:\n{table}");

    // No axis at all is a config error.
    let none = run(&["--config", cfg_arg, "ablate"]);
    assert_code(&none, 2, "ablate without axis");

    // Both axes at once is rejected at argument parsing.
    let both = run(&["--config", cfg_arg, "ablate", "--p-values", "2", "--uem-layers", "1"]);
    assert_code(&both, 2, "ablate with two axes");
}

#[test]
fn cost_report_prints_comparison_and_writes_data_file() {
    let root = tmp_root("cost");
    let cfg_path = write_cfg(&root, &micro_cfg(&root));
    let cfg_arg = cfg_path.to_str().unwrap();

    assert_code(&run(&["--config", cfg_arg, "synth-data"]), 0, "synth-data");

    let data_file = root.join("scaling.dat");
    let out = run(&[
        "--config",
        cfg_arg,
        "cost-report",
        "--data-file",
        data_file.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "cost-report");
    let text = stdout_of(&out);
    assert!(text.contains("attention cost comparison"), "missing report: {text}");
    assert!(text.contains("text / embedding ratio:"), "missing ratio: {text}");

    let body = std::fs::read_to_string(&data_file).expect("data file written");
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("n attn_flops"), "missing data header");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 2, "expected several (n, flops) rows, got {}", rows.len());
    for row in rows {
        let mut cols = row.split_whitespace();
        cols.next().unwrap().parse::<usize>().expect("n column");
        cols.next().unwrap().parse::<u128>().expect("flops column");
        assert!(cols.next().is_none(), "extra column in {row:?}");
    }
}
