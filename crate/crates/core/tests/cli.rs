//! End-to-end runs of the `wfm` binary on tiny phantoms.

use std::path::Path;
use std::process::{Command, Output};

use wfm::cli::{parse_manifest, MANIFEST};
use wfm::flow::parse_log_losses;
use wfm::model::load_checkpoint;
use wfm::nifti::read_volume;
use wfm::phantom::make_split;

fn wfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfm"))
        .args(args)
        .env("WFM_THREADS", "1")
        .output()
        .expect("spawn wfm")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, data: &Path, out: &str, iterations: u64) -> std::path::PathBuf {
    let cfg = dir.join(format!("{out}.toml"));
    let text = format!(
        "seed = 1\nout_dir = \"{out}\"\ncheckpoint_every = 2\n\n[data]\ndir = \"{}\"\n\n[train]\nlr = 1e-3\niterations = {iterations}\nbatch = 2\n",
        p(data)
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&wfm(&["gen-phantom", "--seed", "7", "--count", "5", "--dims", "16", "--out", p(&data)]));

    // 5 cases × (4 modalities + mask) + manifest.
    let entries = parse_manifest(&std::fs::read_to_string(data.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(entries.len(), 5);
    let files: usize = entries.iter().map(|e| std::fs::read_dir(data.join(&e.case)).unwrap().count()).sum();
    assert_eq!(files, 25);
    let split = make_split(4, 1, 7).unwrap();
    let seeds: Vec<u64> = entries.iter().map(|e| e.seed).collect();
    assert_eq!(seeds, [split.train, split.val].concat());

    // Regeneration is byte-identical.
    let again = tmp.path().join("again");
    ok(&wfm(&["gen-phantom", "--seed", "7", "--count", "5", "--dims", "16", "--out", p(&again)]));
    for e in &entries {
        for f in ["t1.nii", "flair.nii", "mask.nii"] {
            assert_eq!(
                std::fs::read(data.join(&e.case).join(f)).unwrap(),
                std::fs::read(again.join(&e.case).join(f)).unwrap()
            );
        }
    }

    let cfg = write_config(tmp.path(), &data, "run", 4);
    ok(&wfm(&["train", "--config", p(&cfg)]));
    let run = tmp.path().join("run");
    for f in ["config.resolved.toml", "train_log.tsv", "step_000002.wfmc", "step_000004.wfmc", "final.wfmc"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.tsv")).unwrap();
    assert_eq!(parse_log_losses(&log).unwrap().len(), 4);
    // Rerunning the same config reproduces the log bit for bit.
    let cfg2 = write_config(tmp.path(), &data, "run2", 4);
    ok(&wfm(&["train", "--config", p(&cfg2)]));
    assert_eq!(log, std::fs::read_to_string(tmp.path().join("run2/train_log.tsv")).unwrap());
    assert_eq!(
        std::fs::read(run.join("final.wfmc")).unwrap(),
        std::fs::read(tmp.path().join("run2/final.wfmc")).unwrap()
    );
    let ckpt = run.join("final.wfmc");
    let ckpt_model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(ckpt_model.optimizer.unwrap().step, 4);

    // Synthesize FLAIR from T1, T1c, T2 of the validation case.
    let case = data.join(&entries[4].case);
    let out = tmp.path().join("syn/flair.nii");
    let inputs = ["t1.nii", "t1c.nii", "t2.nii"].map(|f| case.join(f));
    let mut args = vec!["synthesize", "--ckpt", p(&ckpt), "--target", "flair", "--method", "heun", "--steps", "2"];
    args.push("--inputs");
    args.extend(inputs.iter().map(|x| p(x)));
    args.extend(["--out", p(&out)]);
    let report = ok(&wfm(&args));
    assert!(report.contains("nfe\t4\n"), "{report}");
    assert_eq!(read_volume(&out).unwrap().dims(), [16, 16, 16]);
    assert!(Path::new(&format!("{}.report.tsv", p(&out))).exists());

    let euler = tmp.path().join("syn/euler.nii");
    let mut args = vec!["synthesize", "--ckpt", p(&ckpt), "--target", "flair", "--method", "euler", "--steps", "1"];
    args.push("--inputs");
    args.extend(inputs.iter().map(|x| p(x)));
    args.extend(["--out", p(&euler)]);
    assert!(ok(&wfm(&args)).contains("nfe\t1\n"));

    let table_path = tmp.path().join("eval.tsv");
    let table = ok(&wfm(&[
        "evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--methods", "euler:1,heun:1", "--out", p(&table_path),
    ]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert_eq!(lines[0].split('\t').count(), 3 + 4 * 4);
    assert!(lines[1].starts_with("baseline\t0\t0\t"));
    assert!(lines[2].starts_with("euler\t1\t1\t"));
    assert!(lines[3].starts_with("heun\t1\t2\t"));
    assert_eq!(std::fs::read_to_string(&table_path).unwrap(), table);

    let bench = ok(&wfm(&["benchmark", "--ckpt", p(&ckpt), "--nfe-list", "1,3", "--trials", "1", "--warmup", "1", "--dims", "16"]));
    assert!(bench.starts_with("nfe\ttotal_ms\tper_call_ms\n1\t"), "{bench}");
    assert!(bench.contains("ratio time(3)/time(1)"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Unknown key → config error.
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "out_dir = \"o\"\nbogus = 3\n[data]\ndir = \"d\"\n").unwrap();
    assert_eq!(wfm(&["train", "--config", p(&bad)]).status.code(), Some(2));
    // Valid config, no data → data error.
    let cfg = write_config(tmp.path(), &tmp.path().join("nothing"), "r", 1);
    assert_eq!(wfm(&["train", "--config", p(&cfg)]).status.code(), Some(3));
    // Truncated checkpoint → data error.
    let ck = tmp.path().join("x.wfmc");
    std::fs::write(&ck, b"WFMC\x01\x00").unwrap();
    assert_eq!(wfm(&["benchmark", "--ckpt", p(&ck)]).status.code(), Some(3));
    // Bad flag value → config error.
    assert_eq!(wfm(&["gen-phantom", "--dims", "3x3", "--out", "x"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_wfm"))
        .args(["gen-phantom", "--out", p(&tmp.path().join("g")), "--count", "2"])
        .env("WFM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&wfm(&["gen-phantom", "--count", "2", "--dims", "16", "--out", p(&data)]));
    let cfg = tmp.path().join("boom.toml");
    // An absurd learning rate drives the weights to overflow within a few steps.
    std::fs::write(
        &cfg,
        format!(
            "out_dir = \"boom\"\n[data]\ndir = \"{}\"\n[train]\nlr = 1e30\niterations = 50\nbatch = 1\nclip = 1e30\n",
            p(&data)
        ),
    )
    .unwrap();
    let out = wfm(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
