use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cseg")).args(args).output().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "expected one line, got {text:?}");
    text.trim_end().to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn bad_config_value_reports_category() {
    let out = cseg(&["synth", "--set", "loss=hinge", "--out", "unused"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[config]: "));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = cseg(&["rf", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]: "));
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.pgm");
    let m = missing.to_str().unwrap();
    let out = cseg(&[
        "pipeline",
        "--full",
        m,
        "--teacher",
        m,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[io]: "));
}

#[test]
fn mismatched_masks_are_a_dimension_error() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.pgm");
    let b = tmp.path().join("b.pgm");
    fs::write(
        &a,
        b"P5\n4 4\n255\n\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00",
    )
    .unwrap();
    fs::write(&b, b"P5\n2 2\n255\n\x00\x00\x00\x00").unwrap();
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let out = cseg(&[
        "pipeline",
        "--full",
        &p(&a),
        "--teacher",
        &p(&b),
        "--out",
        &p(tmp.path()),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[dimension]: "));
}

#[test]
fn appendix_shapes_and_field() {
    let out = cseg(&["shapes", "--appendix"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("total params 4524323"));
    let out = cseg(&["rf", "--appendix"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("final rf 97"));
    assert!(text.contains("claimed rf 121 delta -24"));
}

#[test]
fn gradcheck_passes_and_can_fail() {
    let out = cseg(&["gradcheck", "--loss", "consensus", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).trim_end().ends_with("PASS"));
    // a tolerance nothing can meet
    let out = cseg(&["gradcheck", "--loss", "pixelwise", "--tol", "1e-30"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[invalid]: "));
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    let sets = [
        "n_train=6",
        "n_val=2",
        "n_test=3",
        "epochs=2",
        "batch_size=3",
        "image_size=32",
    ];
    let mut args = vec!["synth", "--out", data.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s]);
    }
    assert!(cseg(&args).status.success());

    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ];
    for s in &sets {
        args.extend(["--set", s]);
    }
    let out = cseg(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("best epoch "));
    let log = fs::read_to_string(model.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let csv = tmp.path().join("m.csv");
    let ckpt = model.join("best.ckpt");
    let out = cseg(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--merged",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("method,split,accuracy,iou_0,iou_1,mean_iou"));
    assert!(text.lines().nth(1).unwrap().starts_with("model,test,"));
}
