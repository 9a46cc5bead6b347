use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use combipart::classify::{load_scores, read_queries, write_queries};
use combipart::dataset::{ingest_csv, ingest_jsonl, write_jsonl};
use combipart::eval::{reports_to_csv, sweep_class_count, SweepConfig};
use combipart::fusion::{predict_batch, PredictionLine};
use combipart::partition::{reference_set_specs, ParamsFile, SetSpec};
use combipart::synth::{generate_world, WorldConfig};
use combipart::{
    accuracy_at, build_base_graph, build_fine_index, generate_geoclass_set,
    train_centroid_classifier, CentroidClassifier, FinePartitionIndex, GeoPoint,
    PartitionAggregates, Query, ScoreVector,
};
use serde_json::json;

use crate::artifacts::{
    file_hash, open_dataset, open_sets, open_stage, read_json, require_input, set_file_name,
    write_json, GraphArtifact, StageWriter, GRAPH_FILE,
};
use crate::config::Settings;
use crate::geojson;
use crate::{
    BuildArgs, EvalArgs, ExportCommand, GenSetsArgs, InputFormat, PredictArgs, SweepArgs,
    SynthArgs, TrainArgs, Usage,
};

const PREDICTIONS_FILE: &str = "predictions.jsonl";

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn check_id(set_id: &str) -> Result<()> {
    let ok = !set_id.is_empty()
        && set_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Usage(format!(
            "set_id {set_id:?} must use only letters, digits, '_' and '-'"
        ))
        .into())
    }
}

pub fn synth(settings: &Settings, a: SynthArgs) -> Result<()> {
    let cfg = WorldConfig {
        clusters: a.clusters,
        train: a.train,
        test: a.test,
        dim: a.dim,
        cluster_sigma_km: a.sigma_km,
        background_fraction: a.background,
        feature_noise: a.noise,
        seed: settings.seed(),
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg)?;
    let mut out = StageWriter::new(&a.out, "synth", cfg.seed)?;
    let mut train = Vec::new();
    write_jsonl(&mut train, &world.train)?;
    out.write_bytes("train.jsonl", &train)?;
    let mut test = Vec::new();
    write_queries(&mut test, &world.test)?;
    out.write_bytes("test.jsonl", &test)?;
    out.details(serde_json::to_value(&cfg)?);
    out.finish()?;
    println!(
        "wrote {} train records and {} test queries to {}",
        cfg.train,
        cfg.test,
        a.out.display()
    );
    Ok(())
}

pub fn build(settings: &Settings, a: BuildArgs) -> Result<()> {
    let level = settings.level(a.level);
    let strict = settings.strict(a.strict);
    let seed = settings.seed();
    let format = a
        .format
        .unwrap_or_else(|| match a.input.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        });
    let ingested = match format {
        InputFormat::Jsonl => ingest_jsonl(open(&a.input)?, level, strict)?,
        InputFormat::Csv => ingest_csv(open(&a.input)?, level, strict)?,
    };
    let report = &ingested.report;
    for r in report.rejected.iter().take(10) {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    if report.rejected.len() > 10 {
        eprintln!("... {} more rejections", report.rejected.len() - 10);
    }
    if ingested.dataset.records().is_empty() {
        return Err(Usage(format!("{} holds no valid records", a.input.display())).into());
    }
    let manifest = ingested
        .dataset
        .save(&a.out, Some(seed), report.rejected.len())?;
    let graph = build_base_graph(&ingested.dataset, seed)?;
    let artifact = GraphArtifact {
        seed,
        dataset_hash: manifest.content_hash.clone(),
        graph_hash: graph.content_hash()?,
        graph,
    };
    write_json(&a.out.join(GRAPH_FILE), &artifact)?;
    write_json(&a.out.join("rejections.json"), &report.rejected)?;
    println!(
        "accepted {} records, rejected {}; {} non-empty cells at level {}, {} graph nodes",
        report.accepted,
        report.rejected.len(),
        manifest.nonempty_cells,
        manifest.level,
        artifact.graph.nodes().len()
    );
    Ok(())
}

pub fn gen_sets(settings: &Settings, a: GenSetsArgs) -> Result<()> {
    let seed = settings.seed();
    let data = open_dataset(&a.dataset)?;
    let dim = data.dataset.dim();
    let mut out = StageWriter::new(&a.out, "gen-sets", seed)?;
    out.input("dataset", &data.manifest.content_hash);
    out.input("graph", &data.graph.graph_hash);
    let specs: Vec<SetSpec> = match &a.params {
        Some(path) => {
            out.input("params", &file_hash(path)?);
            ParamsFile::load(path)?.sets
        }
        None => reference_set_specs(settings.classes(a.classes), dim, seed),
    };
    let mut summary = Vec::new();
    for spec in &specs {
        check_id(&spec.set_id)?;
        let params = spec.resolve(dim)?;
        let set = generate_geoclass_set(&data.graph.graph, &params, spec.set_id.clone())?;
        let sizes: Vec<usize> = set.classes().iter().map(Vec::len).collect();
        let hash = set.content_hash()?;
        out.write_json(&set_file_name(&spec.set_id), &set)?;
        println!("{}: {} classes", spec.set_id, set.class_count());
        summary.push(json!({
            "set_id": spec.set_id,
            "classes": set.class_count(),
            "min_class_cells": sizes.iter().min(),
            "max_class_cells": sizes.iter().max(),
            "feature_dims": params.feature_dims.len(),
            "content_hash": hash,
        }));
    }
    out.write_json("summary.json", &summary)?;
    out.details(json!({ "specs": specs }));
    out.finish()?;
    Ok(())
}

fn model_file_name(set_id: &str) -> String {
    format!("model_{set_id}.json")
}

pub fn train(settings: &Settings, a: TrainArgs) -> Result<()> {
    let temperature = settings.temperature(a.temperature);
    let data = open_dataset(&a.dataset)?;
    let sets = open_sets(&a.sets)?;
    require_input(&sets.stage, "dataset", &data.manifest.content_hash)?;
    let mut out = StageWriter::new(&a.out, "train", settings.seed())?;
    out.input("dataset", &data.manifest.content_hash);
    out.input("sets", &sets.stage.hash);
    for set in &sets.sets {
        let clf = train_centroid_classifier(&data.dataset, set, temperature)?;
        let empty = clf.empty_classes();
        if !empty.is_empty() {
            eprintln!(
                "{}: {} classes without training records score 0",
                set.set_id(),
                empty.len()
            );
        }
        out.write_json(&model_file_name(set.set_id()), &clf)?;
    }
    out.details(json!({ "temperature": temperature }));
    out.finish()?;
    println!(
        "trained {} classifiers at temperature {temperature}",
        sets.sets.len()
    );
    Ok(())
}

/// Reuse the cached index when it was built from exactly these sets.
fn load_or_build_index(path: &Path, sets: &[combipart::GeoclassSet]) -> Result<FinePartitionIndex> {
    let hashes = sets
        .iter()
        .map(|s| s.content_hash())
        .collect::<combipart::Result<Vec<_>>>()?;
    if path.exists() {
        match FinePartitionIndex::load(path) {
            Ok(idx) if idx.matches(&hashes) => {
                eprintln!("reusing fine partition index {}", path.display());
                return Ok(idx);
            }
            Ok(_) => eprintln!("index {} is stale; rebuilding", path.display()),
            Err(e) => eprintln!("index {} unreadable ({e}); rebuilding", path.display()),
        }
    }
    let idx = build_fine_index(sets)?;
    idx.save(path)?;
    eprintln!(
        "built fine partition index with {} partitions",
        idx.partitions().len()
    );
    Ok(idx)
}

pub fn predict(settings: &Settings, a: PredictArgs) -> Result<()> {
    let mode = settings.mode(a.mode);
    let data = open_dataset(&a.dataset)?;
    let sets = open_sets(&a.sets)?;
    require_input(&sets.stage, "dataset", &data.manifest.content_hash)?;
    let mut out = StageWriter::new(&a.out, "predict", settings.seed())?;
    out.input("dataset", &data.manifest.content_hash);
    out.input("sets", &sets.stage.hash);

    let queries = match &a.queries {
        Some(path) => {
            out.input("queries", &file_hash(path)?);
            Some(read_queries(open(path)?)?)
        }
        None => None,
    };
    let scored: Vec<(String, Vec<ScoreVector>)> = if let Some(path) = &a.scores {
        out.input("scores", &file_hash(path)?);
        let expected: Vec<(String, usize)> = sets
            .sets
            .iter()
            .map(|s| (s.set_id().to_string(), s.class_count()))
            .collect();
        let mut by_query = load_scores(open(path)?, &expected)?;
        match &queries {
            Some(qs) => qs
                .iter()
                .map(|q| {
                    by_query
                        .remove(&q.id)
                        .map(|v| (q.id.clone(), v))
                        .ok_or_else(|| Usage(format!("no scores for query {:?}", q.id)).into())
                })
                .collect::<Result<_>>()?,
            None => by_query.into_iter().collect(),
        }
    } else {
        let models_dir = a
            .models
            .as_ref()
            .expect("clap requires --models or --scores");
        let models = open_stage(models_dir, "train")?;
        require_input(&models, "sets", &sets.stage.hash)?;
        out.input("models", &models.hash);
        let classifiers = sets
            .sets
            .iter()
            .map(|s| read_json::<CentroidClassifier>(&models.path(&model_file_name(s.set_id()))))
            .collect::<Result<Vec<_>>>()?;
        let qs = queries
            .as_ref()
            .expect("clap requires --queries with --models");
        qs.iter()
            .map(|q| {
                let f = q
                    .feature
                    .as_deref()
                    .ok_or_else(|| Usage(format!("query {:?} has no feature vector", q.id)))?;
                let vectors = classifiers
                    .iter()
                    .map(|c| c.predict_scores(f))
                    .collect::<combipart::Result<_>>()?;
                Ok((q.id.clone(), vectors))
            })
            .collect::<Result<_>>()?
    };
    if scored.is_empty() {
        return Err(Usage("no queries to predict".into()).into());
    }

    let index_path = a.index.clone().unwrap_or_else(|| a.sets.join("index.json"));
    let idx = load_or_build_index(&index_path, &sets.sets)?;
    let aggs = PartitionAggregates::new(&idx, &data.dataset)?;
    let lines = predict_batch(&idx, &aggs, &scored, mode)?;
    let mut buf = Vec::new();
    for line in &lines {
        serde_json::to_writer(&mut buf, line)?;
        buf.push(b'\n');
    }
    out.write_bytes(PREDICTIONS_FILE, &buf)?;
    let expanded = lines.iter().filter(|l| l.expanded).count();
    out.details(json!({ "mode": mode, "queries": lines.len(), "expanded": expanded }));
    out.finish()?;
    println!(
        "predicted {} queries ({mode} fusion, {expanded} needed fallback)",
        lines.len()
    );
    Ok(())
}

fn read_predictions(dir: &Path) -> Result<(crate::artifacts::Stage, Vec<PredictionLine>)> {
    let stage = open_stage(dir, "predict")?;
    let text = fs::read_to_string(stage.path(PREDICTIONS_FILE))?;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Usage(format!("predictions: {e}")).into()))
        .collect::<Result<Vec<PredictionLine>>>()?;
    Ok((stage, lines))
}

fn truth_map(queries: &[Query]) -> BTreeMap<String, GeoPoint> {
    queries
        .iter()
        .filter_map(|q| q.truth.map(|t| (q.id.clone(), t)))
        .collect()
}

pub fn eval(settings: &Settings, a: EvalArgs) -> Result<()> {
    let radii = settings.radii(a.radii);
    let (stage, lines) = read_predictions(&a.predictions)?;
    let queries = read_queries(open(&a.truth)?)?;
    let truth = truth_map(&queries);
    let predictions = lines
        .iter()
        .map(|l| Ok((l.query_id.clone(), l.location()?)))
        .collect::<combipart::Result<BTreeMap<_, _>>>()?;
    let report = accuracy_at(&predictions, &truth, &radii)?;
    let mut out = StageWriter::new(&a.out, "eval", settings.seed())?;
    out.input("predictions", &stage.hash);
    out.input("truth", &file_hash(&a.truth)?);
    let csv = reports_to_csv(&[(a.label.clone(), &report)])?;
    out.write_bytes("report.csv", csv.as_bytes())?;
    out.write_json("report.json", &report)?;
    out.finish()?;
    print!("{csv}");
    Ok(())
}

pub fn sweep(settings: &Settings, a: SweepArgs) -> Result<()> {
    let seed = settings.seed();
    let radii = settings.radii(a.radii);
    let temperature = settings.temperature(a.temperature);
    let data = open_dataset(&a.dataset)?;
    let queries = read_queries(open(&a.queries)?)?;
    let mut out = StageWriter::new(&a.out, "sweep", seed)?;
    out.input("dataset", &data.manifest.content_hash);
    out.input("queries", &file_hash(&a.queries)?);
    let spec = match &a.params {
        Some(path) => {
            out.input("params", &file_hash(path)?);
            ParamsFile::load(path)?.sets.swap_remove(0)
        }
        None => reference_set_specs(1, data.dataset.dim(), seed).swap_remove(0),
    };
    // the class count is swept; any positive placeholder resolves
    let base = SetSpec {
        target_classes: 1,
        ..spec
    }
    .resolve(data.dataset.dim())?;
    let cfg = SweepConfig {
        base: &base,
        counts: &a.counts,
        radii: &radii,
        temperature,
        parallel: settings.parallel(a.parallel),
    };
    let table = sweep_class_count(&data.dataset, &data.graph.graph, &queries, &cfg)?;
    let csv = table.to_csv()?;
    out.write_bytes("sweep.csv", csv.as_bytes())?;
    out.write_json("sweep.json", &table)?;
    out.details(json!({ "base": base, "temperature": temperature }));
    out.finish()?;
    print!("{csv}");
    Ok(())
}

fn write_geojson(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn export(c: ExportCommand) -> Result<()> {
    match c {
        ExportCommand::Sets {
            sets,
            set,
            dataset,
            out,
        } => {
            let loaded = open_sets(&sets)?;
            let data = dataset.as_deref().map(open_dataset).transpose()?;
            if let Some(d) = &data {
                require_input(&loaded.stage, "dataset", &d.manifest.content_hash)?;
            }
            let chosen: Vec<_> = match &set {
                Some(id) => {
                    let s = loaded
                        .sets
                        .iter()
                        .find(|s| s.set_id() == id)
                        .ok_or_else(|| Usage(format!("no set {id:?} in {}", sets.display())))?;
                    vec![s]
                }
                None => loaded.sets.iter().collect(),
            };
            let mut features = Vec::new();
            for s in chosen {
                let images = data.as_ref().map(|d| {
                    let mut counts = vec![0u64; s.class_count()];
                    for agg in d.dataset.aggregates() {
                        counts[s.class_of(agg.cell)] += agg.image_count;
                    }
                    counts
                });
                features.extend(geojson::set_features(s, images.as_deref()));
            }
            let n = features.len();
            write_geojson(&out, &geojson::feature_collection(features))?;
            println!("wrote {n} class features to {}", out.display());
        }
        ExportCommand::Predictions {
            predictions,
            truth,
            out,
        } => {
            let (_, lines) = read_predictions(&predictions)?;
            let truth = match &truth {
                Some(path) => truth_map(&read_queries(open(path)?)?),
                None => BTreeMap::new(),
            };
            let features = geojson::prediction_features(&lines, &truth)?;
            write_geojson(&out, &geojson::feature_collection(features))?;
            println!("wrote {} predictions to {}", lines.len(), out.display());
        }
    }
    Ok(())
}
