use std::path::Path;
use std::process::{Command, Output};

fn geogress(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geogress"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn synth_then_fit_recovers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = geogress(
        p,
        &[
            "synth",
            "--d",
            "12",
            "--k",
            "2",
            "--T",
            "16",
            "--sigma",
            "1e-4",
            "--seed",
            "5",
            "--out",
            "data/x.txt",
            "--truth-out",
            "data/truth.txt",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let o = geogress(
        p,
        &[
            "fit",
            "--data",
            "data/x.txt",
            "--k",
            "2",
            "--refine-iters",
            "30",
            "--out",
            "fit/model.txt",
            "--trace",
            "fit/trace.csv",
            "--truth",
            "data/truth.txt",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(field(&text, "final_loss") <= field(&text, "initial_loss"));
    assert!(field(&text, "geodesic_error") < 1e-2, "{text}");
    assert!(p.join("fit/model.txt").exists());

    let trace = std::fs::read_to_string(p.join("fit/trace.csv")).unwrap();
    let losses: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(trace.lines().next(), Some("iteration,loss"));
    assert!(losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
}

#[test]
fn seeds_make_synth_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for name in ["a.txt", "b.txt"] {
        let o = geogress(
            p,
            &[
                "synth", "--d", "6", "--T", "5", "--seed", "9", "--out", name,
            ],
        );
        assert!(o.status.success());
    }
    let o = geogress(
        p,
        &[
            "synth", "--d", "6", "--T", "5", "--seed", "10", "--out", "c.txt",
        ],
    );
    assert!(o.status.success());
    let read = |n: &str| std::fs::read(p.join(n)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_ne!(read("a.txt"), read("c.txt"));
}

#[test]
fn exit_codes_separate_bad_input_from_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let missing = geogress(
        p,
        &["fit", "--data", "absent.txt", "--k", "1", "--out", "m.txt"],
    );
    assert_eq!(missing.status.code(), Some(2));

    std::fs::write(p.join("junk.txt"), "not a dataset\n").unwrap();
    let junk = geogress(
        p,
        &["fit", "--data", "junk.txt", "--k", "1", "--out", "m.txt"],
    );
    assert_eq!(junk.status.code(), Some(1));

    let o = geogress(p, &["synth", "--d", "6", "--T", "5", "--out", "x.txt"]);
    assert!(o.status.success());
    let rank = geogress(p, &["fit", "--data", "x.txt", "--k", "4", "--out", "m.txt"]);
    assert_eq!(rank.status.code(), Some(1));

    let usage = geogress(p, &["fit", "--data", "x.txt"]);
    assert_eq!(usage.status.code(), Some(1));
    let unknown = geogress(p, &["experiment", "--experiment", "NoSuchThing"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert_eq!(geogress(p, &["--help"]).status.code(), Some(0));
}

#[test]
fn experiment_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = geogress(
        p,
        &["experiment", "--experiment", "ErrorVsEll", "--print-config"],
    );
    assert!(o.status.success());
    std::fs::write(p.join("spec.json"), stdout(&o)).unwrap();

    let o = geogress(
        p,
        &[
            "experiment",
            "--config",
            "spec.json",
            "--d",
            "10",
            "--ell",
            "1,3",
            "--trials",
            "2",
            "--seed",
            "4",
            "--outer-iters",
            "50",
            "--print-config",
        ],
    );
    assert!(o.status.success());
    let resolved = stdout(&o);
    let compact: String = resolved.split_whitespace().collect();
    assert!(compact.contains("\"d\":[10]"), "{resolved}");
    assert!(compact.contains("\"ell\":[1,3]"));
    assert!(compact.contains("\"trials\":2"));
    assert!(compact.contains("\"base_seed\":4"));
    assert!(compact.contains("\"outer_iters\":50"));

    let o = geogress(
        p,
        &[
            "experiment",
            "--config",
            "spec.json",
            "--d",
            "10",
            "--ell",
            "1,3",
            "--trials",
            "2",
            "--outer-iters",
            "50",
            "--out",
            "runs/ell.csv",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let main = std::fs::read_to_string(p.join("runs/ell.csv")).unwrap();
    let rows = main.lines().count() - 1;
    assert!(rows > 0 && rows.is_multiple_of(2 * 2), "{rows} rows");
    assert!(p.join("runs/ell_summary.csv").exists());
    assert!(stdout(&o).starts_with("experiment,"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = geogress(
        p,
        &[
            "experiment",
            "--experiment",
            "Convergence",
            "--print-config",
        ],
    );
    let text = stdout(&o).replacen("\"trials\"", "\"n_trials\"", 1);
    std::fs::write(p.join("bad.json"), text).unwrap();
    let o = geogress(p, &["experiment", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn landscape_writes_surface_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = geogress(
        p,
        &[
            "landscape",
            "--T",
            "11",
            "--grid-points",
            "9",
            "--out",
            "surf.csv",
            "--iterates",
            "path.csv",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let surf = std::fs::read_to_string(p.join("surf.csv")).unwrap();
    assert_eq!(surf.lines().count(), 1 + 81);
    let path = std::fs::read_to_string(p.join("path.csv")).unwrap();
    assert!(path.lines().any(|l| l.starts_with("plain,")));
    assert!(path.lines().any(|l| l.starts_with("centered,")));
}

#[test]
fn piecewise_penalty_closes_the_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = geogress(
        p,
        &[
            "piecewise",
            "--d",
            "10",
            "--T",
            "12",
            "--lambdas",
            "0,1,1000",
            "--out",
            "pw.csv",
            "--models-dir",
            "segments",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(p.join("pw.csv")).unwrap();
    let gaps: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps[2] <= gaps[0], "{gaps:?}");
    assert!(p.join("segments/segment_0.txt").exists());
    assert!(p.join("segments/segment_1.txt").exists());
}
