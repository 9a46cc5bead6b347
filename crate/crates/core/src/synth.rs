//! Seeded synthetic worlds of geotagged feature vectors.
//!
//! Images come from Gaussian clusters (a geographic center with a small
//! spread and a feature mean with isotropic noise) plus a uniform background
//! whose features carry no location signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::Query;
use crate::dataset::GeoRecord;
use crate::error::{Error, Result};
use crate::geo::{from_cartesian, GeoPoint, Vec3, EARTH_RADIUS_KM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub clusters: usize,
    pub train: usize,
    pub test: usize,
    pub dim: usize,
    /// Standard deviation of each cluster's locations along each tangent axis.
    pub cluster_sigma_km: f64,
    /// Share of images drawn uniformly over the sphere.
    pub background_fraction: f64,
    /// Per-dimension noise around a cluster's feature mean (means are N(0, 1)).
    pub feature_noise: f64,
    /// Cluster centers stay within this absolute latitude.
    pub max_abs_lat: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            clusters: 50,
            train: 20_000,
            test: 2_000,
            dim: 16,
            cluster_sigma_km: 2.0,
            background_fraction: 0.2,
            feature_noise: 0.6,
            max_abs_lat: 70.0,
            seed: 2018,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub center: GeoPoint,
    pub feature_mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub clusters: Vec<Cluster>,
    pub train: Vec<GeoRecord>,
    pub test: Vec<Query>,
}

fn uniform_on_sphere(rng: &mut ChaCha8Rng, max_abs_lat: f64) -> GeoPoint {
    let zmax = max_abs_lat.to_radians().sin();
    let z: f64 = rng.random_range(-zmax..=zmax);
    let lng: f64 = rng.random_range(-180.0..180.0);
    GeoPoint::new(z.asin().to_degrees(), lng).expect("sampled in range")
}

/// Gaussian offset in the tangent plane at `center`, projected back onto the sphere.
fn jitter(rng: &mut ChaCha8Rng, center: GeoPoint, sigma_km: f64) -> GeoPoint {
    let (lat, lng) = (center.lat().to_radians(), center.lng().to_radians());
    let east = Vec3::new(-lng.sin(), lng.cos(), 0.0);
    let north = Vec3::new(-lat.sin() * lng.cos(), -lat.sin() * lng.sin(), lat.cos());
    let scale = sigma_km / EARTH_RADIUS_KM;
    let de: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
    let dn: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
    from_cartesian(center.to_cartesian().as_vec() + east * de + north * dn).expect("nonzero")
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    if cfg.clusters == 0 || cfg.dim == 0 || !(0.0..=1.0).contains(&cfg.background_fraction) {
        return Err(Error::InvalidParams(
            "world needs clusters, features and a valid background share".into(),
        ));
    }
    let noise = Normal::new(0.0, cfg.feature_noise)
        .map_err(|e| Error::InvalidParams(format!("feature noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters: Vec<Cluster> = (0..cfg.clusters)
        .map(|_| Cluster {
            center: uniform_on_sphere(&mut rng, cfg.max_abs_lat),
            feature_mean: (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect();

    let draw = |rng: &mut ChaCha8Rng| -> (GeoPoint, Vec<f64>) {
        if rng.random_bool(cfg.background_fraction) {
            let loc = uniform_on_sphere(rng, 90.0);
            let feat = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
            (loc, feat)
        } else {
            let c = &clusters[rng.random_range(0..clusters.len())];
            let loc = jitter(rng, c.center, cfg.cluster_sigma_km);
            let feat = c
                .feature_mean
                .iter()
                .map(|m| m + noise.sample(rng))
                .collect();
            (loc, feat)
        }
    };
    let train = (0..cfg.train)
        .map(|i| {
            let (location, feature) = draw(&mut rng);
            GeoRecord {
                id: format!("r{i:06}"),
                location,
                feature,
            }
        })
        .collect();
    let test = (0..cfg.test)
        .map(|i| {
            let (location, feature) = draw(&mut rng);
            Query {
                id: format!("q{i:05}"),
                feature: Some(feature),
                truth: Some(location),
            }
        })
        .collect();
    Ok(World {
        clusters,
        train,
        test,
    })
}
