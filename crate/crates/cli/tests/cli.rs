use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn natnet(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_natnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str]) -> String {
    let out = natnet(args);
    assert!(
        out.status.success(),
        "natnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn dataset_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("demo.csv");
    ok(&["synth", "dataset", "--seed", "42", "--out", p(&data)]);
    let text = fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("id,label,f1,f2\n"));
    assert_eq!(text.lines().count(), 126);

    let again = dir.path().join("again.csv");
    ok(&["synth", "dataset", "--seed", "42", "--out", p(&again)]);
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());

    let report = ok(&[
        "loo", "--dataset", p(&data), "--weights", "3100,1500", "--delta", "0.003", "--eps-backward", "-0.001",
    ]);
    assert!(report.contains("correct="), "{report}");

    let model = dir.path().join("demo.model");
    let progress = dir.path().join("progress.log");
    let train = ok(&[
        "--threads", "2", "train", "--dataset", p(&data), "--out", p(&model), "--k-range", "1500:3100:1600",
        "--delta-range", "0.003", "--progress", p(&progress),
    ]);
    assert!(train.contains("best weights="), "{train}");
    assert_eq!(fs::read_to_string(&progress).unwrap().lines().count(), 4);

    // a rerun with the full log evaluates nothing new
    ok(&[
        "train", "--dataset", p(&data), "--out", p(&model), "--k-range", "1500:3100:1600", "--delta-range", "0.003",
        "--progress", p(&progress),
    ]);
    assert_eq!(fs::read_to_string(&progress).unwrap().lines().count(), 4);

    let model_text = fs::read_to_string(&model).unwrap();
    assert!(model_text.starts_with("nnmodel 1\n"));
    let result = ok(&["classify", "--model", p(&model), "--features", "0.25,0.3"]);
    assert!(result.starts_with("cluster="), "{result}");
}

#[test]
fn raster_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let raster = dir.path().join("scene.nnr");
    let areas = dir.path().join("areas.csv");
    ok(&[
        "synth", "raster", "--seed", "9", "--width", "32", "--height", "32", "--out", p(&raster), "--areas",
        p(&areas), "--block", "8",
    ]);
    assert!(fs::read_to_string(&raster).unwrap().starts_with("nnraster 1\n"));

    let model = dir.path().join("scene.model");
    ok(&[
        "train", "--raster", p(&raster), "--areas", p(&areas), "--out", p(&model), "--k-range", "1300",
        "--delta-range", "0.025",
    ]);
    assert!(fs::read_to_string(&model).unwrap().contains("ndvi(B04,B08)"));

    let pixel = ok(&["classify", "--model", p(&model), "--raster", p(&raster), "--pixel", "10,5", "--radius", "3"]);
    assert!(pixel.starts_with("cluster=1 "), "{pixel}");

    let maps = dir.path().join("maps");
    let report = ok(&[
        "relmap", "--model", p(&model), "--raster", p(&raster), "--out-dir", p(&maps), "--radii", "3,4", "--frozen-base",
        "--areas", p(&areas),
    ]);
    assert!(report.contains("wrote 6 maps"), "{report}");
    let pgm = fs::read(maps.join("c1-final.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n65535\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n65535\n".len() + 32 * 32 * 2);

    let rendered = dir.path().join("again.pgm");
    ok(&["render", "--map", p(&maps.join("c1-final.nnr")), "--out", p(&rendered)]);
    assert_eq!(fs::read(&rendered).unwrap(), pgm);

    let adjusted = dir.path().join("adjusted.csv");
    let moved = ok(&[
        "adjust", "--model", p(&model), "--raster", p(&raster), "--areas", p(&areas), "--out", p(&adjusted),
        "--radii", "3", "--frozen-base",
    ]);
    assert!(moved.starts_with("moved "), "{moved}");
    let pruned = dir.path().join("pruned.csv");
    let removed = ok(&[
        "prune", "--model", p(&model), "--raster", p(&raster), "--areas", p(&adjusted), "--out", p(&pruned),
        "--radii", "3", "--frozen-base",
    ]);
    assert!(removed.starts_with("removed "), "{removed}");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one.csv");
    fs::write(&data, "id,label,f1\na,1,0.1\nb,1,0.2\n").unwrap();
    let out = natnet(&["loo", "--dataset", p(&data), "--weights", "100", "--delta", "0.01"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("two clusters"));

    let model = dir.path().join("m.model");
    fs::write(&model, "nnmodel 9\n").unwrap();
    let out = natnet(&["classify", "--model", p(&model), "--features", "0.1,0.2"]);
    assert!(!out.status.success());
}
