use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use combipart::hash::sha256_hex;
use combipart::{CellId, CentroidClassifier, GeoclassSet};
use serde_json::{json, Value};
use tempfile::TempDir;

#[path = "../../core/tests/common/mod.rs"]
mod common;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_combipart"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_value(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn read_lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Synthetic world plus a level-4 dataset built from it.
struct World {
    dir: TempDir,
}

impl World {
    fn new(seed: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let synth = dir.path().join("synth");
        ok(&[
            "synth",
            "--seed",
            seed,
            "--out",
            s(&synth),
            "--clusters",
            "8",
            "--train",
            "1500",
            "--test",
            "40",
            "--dim",
            "8",
        ]);
        let data = dir.path().join("data");
        ok(&[
            "build",
            "--seed",
            seed,
            "--input",
            s(&synth.join("train.jsonl")),
            "--level",
            "4",
            "--out",
            s(&data),
        ]);
        World { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn test_queries(&self) -> PathBuf {
        self.path("synth").join("test.jsonl")
    }

    fn graph_nodes(&self) -> usize {
        read_value(&self.data().join("graph.json"))["graph"]["nodes"]
            .as_array()
            .unwrap()
            .len()
    }
}

fn params_file(dir: &Path, sections: &[(&str, usize)]) -> PathBuf {
    let sets: Vec<Value> = sections
        .iter()
        .enumerate()
        .map(|(i, &(id, k))| {
            json!({ "set_id": id, "target_classes": k, "alpha": [1.0, 0.5, 0.0], "beta": [1.0, 0.1],
                    "feature_dims": 4, "seed": i })
        })
        .collect();
    let path = dir.join("params.json");
    fs::write(&path, serde_json::to_vec(&json!({ "sets": sets })).unwrap()).unwrap();
    path
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn empty_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    assert_eq!(
        code(&[
            "build",
            "--input",
            s(&input),
            "--out",
            s(&dir.path().join("d"))
        ]),
        2
    );
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"id\":\"a\",\"lat\":95,\"lng\":0,\"feat\":[1]}\nnot json\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "build",
            "--input",
            s(&bad),
            "--out",
            s(&dir.path().join("e"))
        ]),
        2
    );
}

#[test]
fn build_writes_manifest_and_is_reproducible() {
    let a = World::new("7");
    let b = World::new("7");
    for name in ["manifest.json", "graph.json", "records.jsonl"] {
        let pa = a.data().join(name);
        if pa.exists() {
            assert_eq!(
                fs::read(&pa).unwrap(),
                fs::read(b.data().join(name)).unwrap(),
                "{name}"
            );
        }
    }
    let m = read_value(&a.data().join("manifest.json"));
    assert_eq!(m["level"], 4);
    assert_eq!(m["seed"], 7);
    assert!(m["content_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn gen_sets_from_params_file() {
    let w = World::new("3");
    let nodes = w.graph_nodes();
    let params = params_file(
        w.dir.path(),
        &[("a", 4), ("b", 8), ("c", 12), ("d", 16), ("e", nodes)],
    );
    let out1 = w.path("sets1");
    let out2 = w.path("sets2");
    for out in [&out1, &out2] {
        ok(&[
            "gen-sets",
            "--seed",
            "5",
            "--dataset",
            s(&w.data()),
            "--params",
            s(&params),
            "--out",
            s(out),
        ]);
    }
    let set_files: Vec<_> = dir_files(&out1)
        .into_iter()
        .filter(|(n, _)| n.starts_with("set_"))
        .collect();
    assert_eq!(set_files.len(), 5);
    for (name, bytes) in &set_files {
        let set: GeoclassSet = serde_json::from_slice(bytes).unwrap();
        let want = match name.as_str() {
            "set_a.json" => 4,
            "set_b.json" => 8,
            "set_c.json" => 12,
            "set_d.json" => 16,
            _ => nodes,
        };
        assert_eq!(set.class_count(), want, "{name}");
    }
    assert_eq!(dir_files(&out1), dir_files(&out2));

    let too_many = params_file(w.dir.path(), &[("x", nodes + 1)]);
    assert_eq!(
        code(&[
            "gen-sets",
            "--dataset",
            s(&w.data()),
            "--params",
            s(&too_many),
            "--out",
            s(&w.path("bad"))
        ]),
        2
    );
}

#[test]
fn single_set_prediction_is_the_classifier_argmax_centroid() {
    let w = World::new("11");
    let params = params_file(w.dir.path(), &[("only", 10)]);
    let sets = w.path("sets");
    let models = w.path("models");
    let pred = w.path("pred");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--params",
        s(&params),
        "--out",
        s(&sets),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&models),
    ]);
    let all = fs::read_to_string(w.test_queries()).unwrap();
    let first = all.lines().next().unwrap();
    let query = w.path("one.jsonl");
    fs::write(&query, format!("{first}\n")).unwrap();
    ok(&[
        "predict",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--models",
        s(&models),
        "--queries",
        s(&query),
        "--out",
        s(&pred),
    ]);

    let set: GeoclassSet =
        serde_json::from_slice(&fs::read(sets.join("set_only.json")).unwrap()).unwrap();
    let clf: CentroidClassifier =
        serde_json::from_slice(&fs::read(models.join("model_only.json")).unwrap()).unwrap();
    let feat: Vec<f64> = serde_json::from_str::<Value>(first).unwrap()["feat"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let scores = clf.predict_scores(&feat).unwrap();
    let cell_scores: Vec<(CellId, f64)> = combipart::cells::all_cells(set.level())
        .map(|c| (c, scores.scores()[set.class_of(c)]))
        .collect();
    let records = read_lines(&w.path("synth").join("train.jsonl"))
        .into_iter()
        .map(|v| combipart::GeoRecord {
            id: v["id"].as_str().unwrap().into(),
            location: combipart::GeoPoint::new(
                v["lat"].as_f64().unwrap(),
                v["lng"].as_f64().unwrap(),
            )
            .unwrap(),
            feature: vec![],
        })
        .collect::<Vec<_>>();
    let (want, _) =
        common::brute_predict(&cell_scores, &records).expect("argmax class holds records");

    let lines = read_lines(&pred.join("predictions.jsonl"));
    assert_eq!(lines.len(), 1);
    assert!((lines[0]["lat"].as_f64().unwrap() - want.lat()).abs() < 1e-9);
    assert!((lines[0]["lng"].as_f64().unwrap() - want.lng()).abs() < 1e-9);
    assert_eq!(lines[0]["expanded"], false);
}

/// gen-sets directory written by hand, tied to the dataset in `data`.
fn handmade_sets(dir: &Path, data: &Path, sets: &[GeoclassSet]) {
    fs::create_dir_all(dir).unwrap();
    let mut files = Vec::new();
    for set in sets {
        let name = format!("set_{}.json", set.set_id());
        let bytes = serde_json::to_vec_pretty(set).unwrap();
        fs::write(dir.join(&name), &bytes).unwrap();
        files.push(json!({ "name": name, "sha256": sha256_hex(&[&bytes]) }));
    }
    let data_hash = read_value(&data.join("manifest.json"))["content_hash"].clone();
    let manifest = json!({
        "stage": "gen-sets", "seed": 0, "inputs": { "dataset": data_hash }, "files": files, "details": null,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).unwrap(),
    )
    .unwrap();
}

/// One record at every level-1 cell center.
fn level1_dataset(dir: &Path) -> PathBuf {
    let input = dir.join("records.jsonl");
    let text: String = combipart::cells::all_cells(1)
        .enumerate()
        .map(|(i, c)| {
            let p = c.center();
            format!(
                "{{\"id\":\"r{i}\",\"lat\":{},\"lng\":{},\"feat\":[{i}]}}\n",
                p.lat(),
                p.lng()
            )
        })
        .collect();
    fs::write(&input, text).unwrap();
    let data = dir.join("data");
    ok(&[
        "build",
        "--input",
        s(&input),
        "--level",
        "1",
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn normalized_and_simple_disagree_on_constructed_scores() {
    let dir = TempDir::new().unwrap();
    let data = level1_dataset(dir.path());
    // A splits the rows; B keeps row 0 whole and cuts one cell out of row 1
    let row = |c: &CellId| c.row();
    let a_labels: Vec<usize> = combipart::cells::all_cells(1)
        .map(|c| row(&c) as usize)
        .collect();
    let b_labels: Vec<usize> = combipart::cells::all_cells(1)
        .map(|c| match (c.row(), c.col()) {
            (0, _) => 0,
            (1, 0) => 1,
            _ => 2,
        })
        .collect();
    let set_a = common::set_from_labels("A", 1, &a_labels);
    let set_b = common::set_from_labels("B", 1, &b_labels);
    let sets = dir.path().join("sets");
    handmade_sets(&sets, &data, &[set_a, set_b]);
    let scores = dir.path().join("scores.jsonl");
    fs::write(
        &scores,
        "{\"query_id\":\"q\",\"set_id\":\"A\",\"scores\":[1.0,0.001]}\n\
         {\"query_id\":\"q\",\"set_id\":\"B\",\"scores\":[0.0,0.5,0.0]}\n",
    )
    .unwrap();
    let mut argmax = Vec::new();
    for mode in ["simple", "normalized"] {
        let out = dir.path().join(mode);
        ok(&[
            "predict",
            "--dataset",
            s(&data),
            "--sets",
            s(&sets),
            "--scores",
            s(&scores),
            "--mode",
            mode,
            "--out",
            s(&out),
        ]);
        let line = read_lines(&out.join("predictions.jsonl")).remove(0);
        argmax.push(line["argmax_cells"].clone());
    }
    assert_eq!(argmax[0], json!(["L1/0/0", "L1/0/1", "L1/0/2", "L1/0/3"]));
    assert_eq!(argmax[1], json!(["L1/1/0"]));
}

#[test]
fn cached_index_gives_identical_predictions() {
    let w = World::new("13");
    let sets = w.path("sets");
    let models = w.path("models");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--classes",
        "12",
        "--out",
        s(&sets),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&models),
    ]);
    let index = w.path("idx.json");
    let (data, queries) = (w.data(), w.test_queries());
    let mut outputs = Vec::new();
    for (i, extra) in [Some(&index), Some(&index), None].into_iter().enumerate() {
        let out = w.path(&format!("pred{i}"));
        let mut args = vec![
            "predict",
            "--dataset",
            s(&data),
            "--sets",
            s(&sets),
            "--models",
            s(&models),
            "--queries",
            s(&queries),
            "--out",
            s(&out),
        ];
        if let Some(p) = extra {
            args.extend(["--index", s(p)]);
        }
        let res = ok(&args);
        let stderr = String::from_utf8_lossy(&res.stderr).into_owned();
        if i == 1 {
            assert!(stderr.contains("reusing"), "{stderr}");
        } else {
            assert!(stderr.contains("built"), "{stderr}");
        }
        outputs.push(fs::read(out.join("predictions.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

fn shoelace(ring: &[Value]) -> f64 {
    let pts: Vec<(f64, f64)> = ring
        .iter()
        .map(|p| (p[0].as_f64().unwrap(), p[1].as_f64().unwrap()))
        .collect();
    pts.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

fn multipolygon_area(geom: &Value) -> f64 {
    assert_eq!(geom["type"], "MultiPolygon");
    geom["coordinates"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|poly| poly.as_array().unwrap().iter())
        .map(|ring| shoelace(ring.as_array().unwrap()))
        .sum()
}

#[test]
fn export_sets_geojson() {
    let w = World::new("17");
    let cell_area = (180.0 / 16.0f64).powi(2);
    let params = params_file(w.dir.path(), &[("one", 1), ("many", 20)]);
    let sets = w.path("sets");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--params",
        s(&params),
        "--out",
        s(&sets),
    ]);

    let one = w.path("one.geojson");
    ok(&[
        "export",
        "sets",
        "--sets",
        s(&sets),
        "--set",
        "one",
        "--out",
        s(&one),
    ]);
    let fc = read_value(&one);
    let features = fc["features"].as_array().unwrap();
    assert_eq!(features.len(), 1);
    let coords = features[0]["geometry"]["coordinates"].as_array().unwrap();
    assert_eq!(coords.len(), 1);
    assert_eq!(coords[0].as_array().unwrap().len(), 1);
    assert_eq!(coords[0][0].as_array().unwrap().len(), 5);
    assert!((multipolygon_area(&features[0]["geometry"]) - 360.0 * 180.0).abs() < 1e-6);

    let many = w.path("many.geojson");
    ok(&[
        "export",
        "sets",
        "--sets",
        s(&sets),
        "--set",
        "many",
        "--dataset",
        s(&w.data()),
        "--out",
        s(&many),
    ]);
    let fc = read_value(&many);
    let features = fc["features"].as_array().unwrap();
    assert_eq!(features.len(), 20);
    let mut total_images = 0;
    for f in features {
        let cells = f["properties"]["cells"].as_f64().unwrap();
        assert!((multipolygon_area(&f["geometry"]) / cell_area - cells).abs() < 1e-6);
        total_images += f["properties"]["images"].as_u64().unwrap();
    }
    assert_eq!(total_images, 1500);
    assert_eq!(
        code(&[
            "export",
            "sets",
            "--sets",
            s(&sets),
            "--set",
            "nope",
            "--out",
            s(&many)
        ]),
        2
    );
}

#[test]
fn export_equator_split() {
    let dir = TempDir::new().unwrap();
    let data = level1_dataset(dir.path());
    let labels: Vec<usize> = combipart::cells::all_cells(1)
        .map(|c| c.row() as usize)
        .collect();
    let sets = dir.path().join("sets");
    handmade_sets(&sets, &data, &[common::set_from_labels("eq", 1, &labels)]);
    let out = dir.path().join("eq.geojson");
    ok(&["export", "sets", "--sets", s(&sets), "--out", s(&out)]);
    let fc = read_value(&out);
    let features = fc["features"].as_array().unwrap();
    assert_eq!(features.len(), 2);
    for f in features {
        let ring = f["geometry"]["coordinates"][0][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        let lats: Vec<f64> = ring.iter().map(|p| p[1].as_f64().unwrap()).collect();
        assert!(lats.contains(&0.0));
        assert!((multipolygon_area(&f["geometry"]) - 360.0 * 90.0).abs() < 1e-9);
    }
}

#[test]
fn export_predictions_links_truth() {
    let w = World::new("19");
    let sets = w.path("sets");
    let models = w.path("models");
    let pred = w.path("pred");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--classes",
        "8",
        "--out",
        s(&sets),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&models),
    ]);
    ok(&[
        "predict",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--models",
        s(&models),
        "--queries",
        s(&w.test_queries()),
        "--out",
        s(&pred),
    ]);
    let out = w.path("pred.geojson");
    ok(&[
        "export",
        "predictions",
        "--predictions",
        s(&pred),
        "--truth",
        s(&w.test_queries()),
        "--out",
        s(&out),
    ]);
    let fc = read_value(&out);
    let features = fc["features"].as_array().unwrap();
    let points = features
        .iter()
        .filter(|f| f["geometry"]["type"] == "Point")
        .count();
    assert_eq!(points, 40);
    assert!(features
        .iter()
        .filter(|f| f["geometry"]["type"] == "Point")
        .all(|f| f["properties"]["error_km"].is_f64()));
    assert!(features.len() > points);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("r.jsonl");
    fs::write(&input, "{\"id\":\"a\",\"lat\":10,\"lng\":20,\"feat\":[1]}\n{\"id\":\"b\",\"lat\":-40,\"lng\":-70,\"feat\":[2]}\n")
        .unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "level = 3\nseed = 42\n").unwrap();
    let d1 = dir.path().join("d1");
    let d2 = dir.path().join("d2");
    ok(&[
        "--config",
        s(&cfg),
        "build",
        "--input",
        s(&input),
        "--out",
        s(&d1),
    ]);
    ok(&[
        "build",
        "--config",
        s(&cfg),
        "--seed",
        "9",
        "--level",
        "2",
        "--input",
        s(&input),
        "--out",
        s(&d2),
    ]);
    let m1 = read_value(&d1.join("manifest.json"));
    let m2 = read_value(&d2.join("manifest.json"));
    assert_eq!(
        (m1["level"].as_u64(), m1["seed"].as_u64()),
        (Some(3), Some(42))
    );
    assert_eq!(
        (m2["level"].as_u64(), m2["seed"].as_u64()),
        (Some(2), Some(9))
    );

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "colour = 1\n").unwrap();
    assert_eq!(
        code(&[
            "--config",
            s(&bad),
            "build",
            "--input",
            s(&input),
            "--out",
            s(&d1)
        ]),
        2
    );
}

#[test]
fn tampered_artifact_is_rejected() {
    let w = World::new("23");
    let sets = w.path("sets");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--classes",
        "6",
        "--out",
        s(&sets),
    ]);
    let victim = fs::read_dir(&sets)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("set_"))
        .unwrap();
    let mut bytes = fs::read(&victim).unwrap();
    bytes.push(b' ');
    fs::write(&victim, bytes).unwrap();
    let out = run(&[
        "train",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&w.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));

    // a stale downstream reference is caught too
    let other = World::new("24");
    let out = run(&[
        "train",
        "--dataset",
        s(&other.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&w.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&["build", "--bogus"]), 2);
    assert_eq!(
        code(&[
            "predict",
            "--mode",
            "fancy",
            "--dataset",
            "x",
            "--sets",
            "y",
            "--scores",
            "z",
            "--out",
            "o"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "eval",
            "--predictions",
            "/nonexistent/p",
            "--truth",
            "/nonexistent/t",
            "--out",
            "/tmp/o"
        ]),
        2
    );
    assert_eq!(code(&[]), 2);
}

#[test]
fn eval_and_sweep_write_tables() {
    let w = World::new("29");
    let sets = w.path("sets");
    let models = w.path("models");
    let pred = w.path("pred");
    ok(&[
        "gen-sets",
        "--dataset",
        s(&w.data()),
        "--classes",
        "10",
        "--out",
        s(&sets),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--out",
        s(&models),
    ]);
    ok(&[
        "predict",
        "--dataset",
        s(&w.data()),
        "--sets",
        s(&sets),
        "--models",
        s(&models),
        "--queries",
        s(&w.test_queries()),
        "--out",
        s(&pred),
    ]);
    let ev = w.path("eval");
    ok(&[
        "eval",
        "--predictions",
        s(&pred),
        "--truth",
        s(&w.test_queries()),
        "--radii",
        "1,25,2500",
        "--label",
        "fused",
        "--out",
        s(&ev),
    ]);
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next().unwrap(), "model,1km,25km,2500km");
    let row: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(row[0], "fused");
    let acc: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
    assert!(acc.windows(2).all(|p| p[0] <= p[1]));

    let sw = w.path("sweep");
    ok(&[
        "sweep",
        "--dataset",
        s(&w.data()),
        "--queries",
        s(&w.test_queries()),
        "--counts",
        "1,4,16",
        "--radii",
        "25,2500",
        "--parallel",
        "--out",
        s(&sw),
    ]);
    let csv = fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
