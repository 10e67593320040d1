use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdebias")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_lines(path: &Path, rows: &[Value]) {
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, body).unwrap();
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("cfg.json");
    let body = json!({
        "num_predicates": 4,
        "class_prior": [0.3, 0.3, 0.2, 0.12, 0.08],
        "propensities": [0.9, 0.5, 0.3, 0.1],
        "num_contexts": 40,
        "label_mode": "stochastic",
        "num_examples": 5,
        "scenes": {"num_images": 60, "min_objects": 2, "max_objects": 4,
                   "num_object_classes": 5, "width": 160, "height": 120},
        "seed": 11
    });
    fs::write(&cfg, body.to_string()).unwrap();
    cfg
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));

    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("out");
    assert_eq!(
        bin(&["eval-sgg", "--gt", p(&missing), "--preds", p(&missing), "--out", p(&out)]).status.code(),
        Some(2)
    );

    let cfg = small_config(dir.path());
    assert_eq!(bin(&["--threads", "0", "simulate", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"num_predicates": 2, "class_prior": [1.0], "propensities": [0.5, 0.5], "num_contexts": 1}"#)
        .unwrap();
    assert_eq!(bin(&["simulate", "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));

    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let gt = sim.join("gt.jsonl");
    let preds = sim.join("preds.jsonl");
    let f = dir.path().join("f.json");
    let code = bin(&["estimate", "--method", "em", "--gt", p(&gt), "--preds", p(&preds), "--out", p(&f)]).status.code();
    assert_eq!(code, Some(1));
    let code = bin(&["estimate", "--alpha", "1.5", "--gt", p(&gt), "--preds", p(&preds), "--out", p(&f)]).status.code();
    assert_eq!(code, Some(1));
    let code = bin(&["eval-sgg", "--gt", p(&gt), "--preds", p(&preds), "--mode", "xx", "--out", p(&out)]).status.code();
    assert_eq!(code, Some(1));
}

#[test]
fn mismatched_ids_are_a_usage_error_and_bad_records_can_be_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let obj = json!({"box": [0, 0, 10, 10], "label": 1});
    let obj2 = json!({"box": [20, 0, 30, 10], "label": 2});
    let gt = |id: &str| {
        json!({"image_id": id, "width": 40, "height": 20, "objects": [obj, obj2],
                                "relations": [{"subj": 0, "pred": 1, "obj": 1}]})
    };
    let pred = |id: &str, probs: Value| {
        json!({"image_id": id, "batch_id": 0,
        "pairs": [{"subj": obj, "obj": obj2, "pred_probs": probs}]})
    };
    write_lines(&d.join("gt.jsonl"), &[gt("a"), gt("b")]);
    write_lines(&d.join("swapped.jsonl"), &[pred("b", json!([0.5, 0.5])), pred("a", json!([0.5, 0.5]))]);
    write_lines(&d.join("broken.jsonl"), &[pred("a", json!([0.4, 0.6])), pred("b", json!([0.9, 0.9]))]);
    let out = d.join("f.json");

    let code =
        bin(&["estimate", "--gt", p(&d.join("gt.jsonl")), "--preds", p(&d.join("swapped.jsonl")), "--out", p(&out)])
            .status
            .code();
    assert_eq!(code, Some(1));

    let (gt_path, broken) = (d.join("gt.jsonl"), d.join("broken.jsonl"));
    let args = ["estimate", "--gt", p(&gt_path), "--preds", p(&broken), "--out", p(&out)];
    assert_eq!(bin(&args).status.code(), Some(2));
    let mut lenient = args.to_vec();
    lenient.push("--lenient");
    ok(&lenient);
    let est: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(est["c"][0], json!(0.4));
    assert_eq!(est["valid_counts"], json!([1, 0]));
}

fn run_pipeline(root: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let cfg = small_config(root);
    let sim = root.join(format!("sim{threads}"));
    let t = ["--threads", threads];
    ok(&[&t[..], &["simulate", "--config", p(&cfg), "--out", p(&sim)]].concat());
    let freq = sim.join("freq.json");
    ok(&[
        &t[..],
        &[
            "estimate",
            "--gt",
            p(&sim.join("gt.jsonl")),
            "--preds",
            p(&sim.join("preds.jsonl")),
            "--out",
            p(&freq),
            "--fill-missing",
        ],
    ]
    .concat());
    let deb = sim.join("debiased.jsonl");
    ok(&[&t[..], &["debias", "--preds", p(&sim.join("preds.jsonl")), "--freq", p(&freq), "--out", p(&deb)]].concat());
    let eval = sim.join("eval");
    ok(&[
        &t[..],
        &[
            "eval-sgg",
            "--gt",
            p(&sim.join("gt_full.jsonl")),
            "--preds",
            p(&deb),
            "--vocab",
            p(&sim.join("vocab.json")),
            "--freq",
            p(&freq),
            "--out",
            p(&eval),
        ],
    ]
    .concat());

    let mut files = Vec::new();
    for dir in [&sim, &eval] {
        let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for n in names {
            files.push((n.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&n).unwrap()));
        }
    }
    files
}

#[test]
fn pipeline_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_pipeline(dir.path(), "1");
    let many = run_pipeline(dir.path(), "8");
    assert_eq!(one.len(), many.len());
    assert!(one.len() >= 10);
    for ((na, a), (nb, b)) in one.iter().zip(&many) {
        assert_eq!(na, nb);
        assert!(a == b, "{na} differs between thread counts");
    }
    let report = &one.iter().find(|(n, _)| n == "report.json").unwrap().1;
    let report: Value = serde_json::from_slice(report).unwrap();
    assert_eq!(report["metadata"]["command"], "eval-sgg");
    assert_eq!(report["results"]["images_read"], 60);
}

#[test]
fn simulate_seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["simulate", "--config", p(&cfg), "--out", p(&b), "--seed", "12"]);
    assert_ne!(fs::read(a.join("preds.jsonl")).unwrap(), fs::read(b.join("preds.jsonl")).unwrap());
    let meta: Value = serde_json::from_slice(&fs::read(b.join("sim_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 12);
}

#[test]
fn eval_hoi_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let h = json!([0, 0, 10, 10]);
    let o = json!([20, 0, 30, 10]);
    write_lines(
        &d.join("gt.jsonl"),
        &[json!({"video_id": "v", "keyframe": 0,
                 "pairs": [{"human": h, "object": o, "object_label": 1, "interactions": [0, 1]}]})],
    );
    write_lines(
        &d.join("preds.jsonl"),
        &[json!({"video_id": "v", "keyframe": 0,
                 "pairs": [{"human": h, "object": o, "object_label": 1, "scores": [0.9, 0.2]},
                           {"human": h, "object": [60, 0, 70, 10], "object_label": 1, "scores": [0.1, 0.8]}]})],
    );
    fs::write(d.join("tags.csv"), "interaction,temporal\n0,1\n1,0\n").unwrap();
    fs::write(d.join("counts.csv"), "predicate,object_class,count\n0,1,100\n1,1,3\n").unwrap();
    let out = d.join("out");
    ok(&[
        "eval-hoi",
        "--gt",
        p(&d.join("gt.jsonl")),
        "--preds",
        p(&d.join("preds.jsonl")),
        "--temporal-tags",
        p(&d.join("tags.csv")),
        "--category-counts",
        p(&d.join("counts.csv")),
        "--out",
        p(&out),
    ]);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let maps = &report["results"]["maps"];
    assert_eq!(maps["full"]["map"], json!(0.75));
    assert_eq!(maps["rare"]["map"], json!(0.5));
    assert_eq!(maps["nonrare"]["map"], json!(1.0));
    assert_eq!(report["results"]["temporal_spatial"]["temporal"], json!(1.0));
    let csv = fs::read_to_string(out.join("ap_per_category.csv")).unwrap();
    assert_eq!(
        csv,
        "predicate,object_class,gt_count,train_count,split,kind,ap\n0,1,1,100,non-rare,temporal,1\n1,1,1,3,rare,spatial,0.5\n"
    );

    fs::write(d.join("short.csv"), "interaction,temporal\n0,1\n").unwrap();
    let code = bin(&[
        "eval-hoi",
        "--gt",
        p(&d.join("gt.jsonl")),
        "--preds",
        p(&d.join("preds.jsonl")),
        "--temporal-tags",
        p(&d.join("short.csv")),
        "--out",
        p(&out),
    ])
    .status
    .code();
    assert_eq!(code, Some(1));
}

#[test]
fn eval_vidvrd_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let traj = |x: f64| json!({"start_frame": 0, "boxes": [[x, 0.0, x + 10.0, 10.0], [x, 0.0, x + 10.0, 10.0]]});
    let rel = |pred: usize, score: f64| {
        json!({"triplet": {"subject": 1, "predicate": pred, "object": 2},
        "subject": traj(0.0), "object": traj(20.0), "score": score})
    };
    write_lines(&d.join("gt.jsonl"), &[json!({"video_id": "v", "relations": [rel(3, 1.0)]})]);
    write_lines(&d.join("preds.jsonl"), &[json!({"video_id": "v", "relations": [rel(4, 0.9), rel(3, 0.5)]})]);
    let out = d.join("out");
    ok(&[
        "eval-vidvrd",
        "--gt",
        p(&d.join("gt.jsonl")),
        "--preds",
        p(&d.join("preds.jsonl")),
        "--k",
        "1,2",
        "--tag-k",
        "1,2",
        "--out",
        p(&out),
    ]);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let res = &report["results"];
    assert_eq!(res["detection"]["recall"], json!([{"k": 1, "value": 0.0}, {"k": 2, "value": 1.0}]));
    // The wrong predicate only competes within its own triplet.
    assert_eq!(res["detection"]["map"], json!(1.0));
    assert_eq!(res["tagging"], json!([{"k": 1, "value": 0.0}, {"k": 2, "value": 0.5}]));
}
