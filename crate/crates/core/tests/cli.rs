use std::path::Path;
use std::process::Command;

fn binloc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_binloc"));
    c.env_remove("BINLOC_SEED");
    c
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_one() {
    let out = binloc().args(["train", "--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--data"));
    let out = binloc().args(["train", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_check_passes() {
    let out = binloc().args(["oracle-check", "--trials", "50", "--seed", "7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max mean error") && text.contains("max weight error"));
}

#[test]
fn simulate_train_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(binloc().args(["simulate", "--out"]).arg(&sim));
    let model = tmp.path().join("model.json");
    ok(binloc()
        .args(["train", "-k", "32", "--data"])
        .arg(sim.join("train.bnts"))
        .arg("--out")
        .arg(&model));
    let res = tmp.path().join("res");
    ok(binloc()
        .arg("evaluate")
        .arg("--model")
        .arg(&model)
        .arg("--test")
        .arg(sim.join("test"))
        .arg("--out")
        .arg(&res));
    let summary: serde_json::Value = serde_json::from_slice(&read(&res.join("results.summary.json"))).unwrap();
    assert_eq!(summary["items"], 108);
    let mean_az = summary["summary"]["azimuth"]["mean"].as_f64().unwrap();
    assert!(mean_az < 2.0, "mean azimuth error {mean_az}");
    assert!(res.join("results.timing.json").exists());

    let report = tmp.path().join("report.json");
    ok(binloc()
        .arg("localize")
        .arg("--model")
        .arg(&model)
        .arg("--input")
        .arg(sim.join("test/spec/000.bnsp"))
        .arg("--out")
        .arg(&report));
    let r: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(r["num_sources"], 1);
    assert!(r.get("elapsed_ms").is_none());

    let sweep = tmp.path().join("sweep.csv");
    ok(binloc()
        .args(["sweep", "--axis", "K", "--values", "32", "--data"])
        .arg(sim.join("train.bnts"))
        .arg("--test")
        .arg(sim.join("test"))
        .arg("--out")
        .arg(&sweep));
    let text = String::from_utf8(read(&sweep)).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4].parse::<f64>().unwrap(), mean_az);

    let packed = tmp.path().join("packed");
    ok(binloc()
        .args(["dataset", "pack", "--manifest"])
        .arg(sim.join("test/manifest.json"))
        .arg("--out")
        .arg(&packed));
    assert_eq!(read(&packed.join("spec/107.bnsp")), read(&sim.join("test/spec/107.bnsp")));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_seed_env_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        "--window", "64", "--hop", "16", "--grid-el", "6", "--grid-az", "8", "--train-frames", "20",
        "--test-el", "3", "--test-az", "4", "--durations", "0.2",
    ];
    let run = |name: &str, seed_flag: &str, env: Option<&str>| {
        let dir = tmp.path().join(name);
        let cmd = || {
            let mut c = binloc();
            if let Some(v) = env {
                c.env("BINLOC_SEED", v);
            }
            c
        };
        ok(cmd().args(["simulate", "--seed", seed_flag]).args(small).arg("--out").arg(&dir));
        let model = dir.join("model.json");
        ok(cmd().args(["train", "-k", "4", "--seed", seed_flag]).arg("--data").arg(dir.join("train.bnts")).arg("--out").arg(&model));
        ok(cmd().arg("evaluate").arg("--model").arg(&model).arg("--test").arg(dir.join("test")).arg("--out").arg(dir.join("res")));
        dir
    };
    let a = run("a", "3", None);
    let b = run("b", "3", None);
    let c = run("c", "99", Some("3"));
    for f in ["train.bnts", "simulate.json", "test/manifest.json", "test/spec/005.bnsp", "model.json", "model.json.trace.json", "res/results.csv", "res/results.summary.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
        assert_eq!(read(&a.join(f)), read(&c.join(f)), "{f}");
    }
    let d = run("d", "4", None);
    assert_ne!(read(&a.join("train.bnts")), read(&d.join("train.bnts")));
}

#[test]
fn features_from_wav() {
    let tmp = tempfile::tempdir().unwrap();
    let wav = tmp.path().join("in.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&wav, spec).unwrap();
    for i in 0..4000 {
        let x = (i as f32 * 0.3).sin();
        w.write_sample(x).unwrap();
        w.write_sample(0.5 * x).unwrap();
    }
    w.finalize().unwrap();
    let out = tmp.path().join("f.bnsp");
    ok(binloc().args(["features", "--window", "256", "--hop", "64", "--epsilon", "1e-3", "--input"]).arg(&wav).arg("--out").arg(&out));
    let s = binloc::spectro::BinauralSpectrogram::load(&out).unwrap();
    assert_eq!(s.dim(), 3 * 128);
    assert!(s.active_fraction() > 0.0 && s.active_fraction() < 1.0);
}
