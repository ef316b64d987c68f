use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msae_core::io::read_bouts;
use msae_core::training::{read_checkpoint, read_metrics};

fn msae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msae")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates `n` bouts and trains the tiny preset on them for `steps` steps.
fn trained(dir: &Path, n: &str, steps: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("bouts.jsonl");
    assert_eq!(code(&msae(&["gen", "--n", n, "--out", s(&data)])), 0);
    let run = dir.join("run");
    let out = msae(&[
        "train", "--preset", "tiny", "--data", s(&data), "--out_dir", s(&run), "--total_steps", steps,
        "--batch_size", "2", "--checkpoint_every", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (data, run)
}

#[test]
fn gen_is_reproducible_and_allows_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for p in [&a, &b] {
        assert_eq!(code(&msae(&["gen", "--n", "8", "--seed", "4", "--out", s(p)])), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let bouts = read_bouts(&a).unwrap();
    assert_eq!(bouts.len(), 8);
    assert!(bouts.iter().all(|b| b.frames() == 24 && b.joints() == 19));
    assert_eq!(code(&msae(&["gen", "--n", "0", "--out", s(&c)])), 0);
    assert_eq!(fs::read_to_string(&c).unwrap(), "");
}

#[test]
fn bad_usage_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&msae(&["train", "--bogus"])), 2);
    let missing = dir.path().join("absent.jsonl");
    assert_eq!(code(&msae(&["train", "--data", s(&missing), "--out_dir", s(dir.path())])), 2);
    assert_eq!(code(&msae(&["train", "--data", s(&missing), "--r_t", "1.5"])), 2);
}

#[test]
fn train_writes_loadable_checkpoints_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path(), "2", "4");
    let last = read_checkpoint(&run.join("last.msae")).unwrap();
    assert_eq!(last.step, 4);
    assert_eq!(last.run.model.d_enc, 16);
    assert!(run.join("step_00000002.msae").is_file());
    assert!(run.join("config.json").is_file());

    let out = msae(&["train", "--resume", s(&run.join("step_00000002.msae")), "--total_steps", "6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let steps: Vec<u64> = read_metrics(run.join("metrics.jsonl")).unwrap().iter().map(|r| r.step).collect();
    assert_eq!(steps, (0..6).collect::<Vec<_>>());
    assert_eq!(read_checkpoint(&run.join("last.msae")).unwrap().step, 6);
    assert!(run.join("step_00000006.msae").is_file());
}

#[test]
fn unmasked_reconstruction_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path(), "2", "1");
    let ckpt = run.join("last.msae");
    let out = dir.path().join("out.jsonl");
    let o = msae(&["reconstruct", "--ckpt", s(&ckpt), "--data", s(&data), "--r_t", "0", "--r_s", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    assert_eq!(fs::read_to_string(&out).unwrap().trim_end(), first);
}

#[test]
fn dumped_plan_reproduces_the_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path(), "2", "1");
    let ckpt = run.join("last.msae");
    let p = |n: &str| dir.path().join(n);
    let base = ["reconstruct", "--ckpt", s(&ckpt), "--data", s(&data)];
    let with = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        code(&msae(&a))
    };
    assert_eq!(with(&["--seed", "9", "--out", s(&p("a.jsonl")), "--dump-plan", s(&p("plan.json"))]), 0);
    assert_eq!(with(&["--plan", s(&p("plan.json")), "--out", s(&p("b.jsonl"))]), 0);
    assert_eq!(fs::read(p("a.jsonl")).unwrap(), fs::read(p("b.jsonl")).unwrap());
    assert_eq!(with(&["--bout-id", "nope", "--out", s(&p("c.jsonl"))]), 2);
}

#[test]
fn embed_writes_one_row_per_bout() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path(), "3", "1");
    let text = fs::read_to_string(&data).unwrap();
    let dup = dir.path().join("dup.jsonl");
    let first = text.lines().next().unwrap();
    fs::write(&dup, format!("{text}{first}\n")).unwrap();
    let csv = dir.path().join("emb.csv");
    assert_eq!(code(&msae(&["embed", "--ckpt", s(&run.join("last.msae")), "--data", s(&dup), "--out", s(&csv)])), 0);
    let lines: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.split(',').count() == 17));
    assert_eq!(lines[1], lines[4]);
}

#[test]
fn eval_is_reproducible_and_rejects_empty_data() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path(), "2", "1");
    let ckpt = run.join("last.msae");
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let o = msae(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--seeds", "3"]);
            assert_eq!(code(&o), 0);
            o.stdout
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    let report: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(report["per_bout"].as_array().unwrap().len(), 2);
    assert!(report["mean_masked_mse"].as_f64().unwrap() > 0.0);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&msae(&["eval", "--ckpt", s(&ckpt), "--data", s(&empty)])), 2);
}

#[test]
fn validate_reports_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bouts.jsonl");
    assert_eq!(code(&msae(&["gen", "--n", "2", "--out", s(&data)])), 0);
    assert_eq!(code(&msae(&["validate", "--data", s(&data), "--expect-joints", "19"])), 0);
    assert_eq!(code(&msae(&["validate", "--data", s(&data), "--expect-joints", "12"])), 3);
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, format!("{}not json\n", fs::read_to_string(&data).unwrap())).unwrap();
    let o = msae(&["validate", "--data", s(&broken)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn diverging_training_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bouts.jsonl");
    assert_eq!(code(&msae(&["gen", "--n", "2", "--out", s(&data)])), 0);
    let o = msae(&[
        "train", "--preset", "tiny", "--data", s(&data), "--out_dir", s(&dir.path().join("run")), "--lr", "1e30",
        "--warmup_steps", "0", "--grad_clip", "1e30", "--total_steps", "20", "--batch_size", "2",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
