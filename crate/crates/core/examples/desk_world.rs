//! Fused versus single-set accuracy on the seeded synthetic world.
//!
//! Run: `cargo run --release -p combipart --example desk_world`

use std::collections::BTreeMap;

use combipart::eval::reports_to_csv;
use combipart::fusion::{predict_batch, PartitionAggregates};
use combipart::partition::reference_set_specs;
use combipart::synth::{generate_world, WorldConfig};
use combipart::{
    accuracy_at, build_base_graph, build_fine_index, generate_geoclass_set,
    train_centroid_classifier, Dataset, FusionMode, GeoPoint, DEFAULT_RADII_KM,
};

fn main() -> combipart::Result<()> {
    let cfg = WorldConfig::default();
    let world = generate_world(&cfg)?;
    let d = Dataset::from_records(6, world.train)?;
    let graph = build_base_graph(&d, cfg.seed)?;
    println!(
        "nonempty cells {}, graph nodes {}",
        d.nonempty_cells(),
        graph.nodes().len()
    );

    let sets = reference_set_specs(64, cfg.dim, cfg.seed)
        .iter()
        .map(|s| generate_geoclass_set(&graph, &s.resolve(cfg.dim)?, s.set_id.clone()))
        .collect::<combipart::Result<Vec<_>>>()?;
    let classifiers = sets
        .iter()
        .map(|s| train_centroid_classifier(&d, s, 1.0))
        .collect::<combipart::Result<Vec<_>>>()?;
    let scored = world
        .test
        .iter()
        .map(|q| {
            let f = q
                .feature
                .as_deref()
                .expect("synthetic queries carry features");
            Ok((
                q.id.clone(),
                classifiers
                    .iter()
                    .map(|c| c.predict_scores(f))
                    .collect::<combipart::Result<Vec<_>>>()?,
            ))
        })
        .collect::<combipart::Result<Vec<_>>>()?;
    let truth: BTreeMap<String, GeoPoint> = world
        .test
        .iter()
        .map(|q| (q.id.clone(), q.truth.expect("truth")))
        .collect();

    let evaluate = |idx: &combipart::FinePartitionIndex,
                    scored: &[(String, Vec<combipart::ScoreVector>)],
                    mode| {
        let aggs = PartitionAggregates::new(idx, &d)?;
        let preds = predict_batch(idx, &aggs, scored, mode)?
            .into_iter()
            .map(|p| Ok((p.query_id.clone(), p.location()?)))
            .collect::<combipart::Result<BTreeMap<_, _>>>()?;
        accuracy_at(&preds, &truth, &DEFAULT_RADII_KM)
    };

    let mut rows = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let idx = build_fine_index(std::slice::from_ref(set))?;
        let single: Vec<_> = scored
            .iter()
            .map(|(id, v)| (id.clone(), vec![v[i].clone()]))
            .collect();
        rows.push((
            format!("{} ({} classes)", set.set_id(), set.class_count()),
            evaluate(&idx, &single, FusionMode::Normalized)?,
        ));
    }
    let idx = build_fine_index(&sets)?;
    println!("fine partitions {}", idx.partitions().len());
    rows.push((
        "simple sum".into(),
        evaluate(&idx, &scored, FusionMode::Simple)?,
    ));
    let aggs = PartitionAggregates::new(&idx, &d)?;
    let simple = predict_batch(&idx, &aggs, &scored, FusionMode::Simple)?;
    let normalized = predict_batch(&idx, &aggs, &scored, FusionMode::Normalized)?;
    let differ = simple
        .iter()
        .zip(&normalized)
        .filter(|(a, b)| a.argmax_cells != b.argmax_cells)
        .count();
    println!("queries where simple and normalized argmax cells differ: {differ}");
    rows.push((
        "normalized sum".into(),
        evaluate(&idx, &scored, FusionMode::Normalized)?,
    ));
    let labeled: Vec<_> = rows.iter().map(|(l, r)| (l.clone(), r)).collect();
    print!("{}", reports_to_csv(&labeled)?);
    Ok(())
}
