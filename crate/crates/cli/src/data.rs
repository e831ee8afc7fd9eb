use mend_core::recon::{Observation, OFF_SURFACE_OFFSET};
use mend_core::rng::derive_seed;
use mend_core::shapes::{
    make_vehicle, sample_surface, scan_viewpoints, symmetrize, virtual_scan, Dataset, PointCloud, RecordSpec,
    SamplingConfig, ScanConfig, ShapeRecord,
};
use mend_core::Point;

use crate::config::{shape_seed, DataConfig, Split};
use crate::error::{usage, CliResult};
use crate::parallel::try_par_map;

pub fn record_spec(cfg: &DataConfig) -> RecordSpec {
    RecordSpec {
        sampling: SamplingConfig {
            count: cfg.samples_per_shape,
            ..Default::default()
        },
        scans_per_shape: cfg.scans_per_shape,
        viewpoint_distance: cfg.viewpoint_distance,
        rays_per_axis: cfg.rays_per_axis,
        max_scan_points: cfg.max_scan_points,
    }
}

fn split_count(cfg: &DataConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.train_shapes,
        Split::Eval => cfg.eval_shapes,
    }
}

/// Labeled samples and scans for every shape of a split.
pub fn generate_split(cfg: &DataConfig, root: u64, split: Split, threads: usize) -> CliResult<Dataset> {
    let spec = record_spec(cfg);
    let seeds: Vec<u64> = (0..split_count(cfg, split)).map(|i| shape_seed(root, split, i)).collect();
    let records = try_par_map(threads, &seeds, |_, &s| ShapeRecord::generate(s, &spec))?;
    Ok(Dataset {
        meta: serde_json::json!({"split": split, "root_seed": root, "spec": spec, "kind": "dense"}),
        records,
    })
}

/// One sparse scan per shape from a fresh viewpoint, with no SDF samples.
pub fn sparse_split(cfg: &DataConfig, root: u64, split: Split, threads: usize) -> CliResult<Dataset> {
    let seeds: Vec<u64> = (0..split_count(cfg, split)).map(|i| shape_seed(root, split, i)).collect();
    let records = try_par_map(threads, &seeds, |_, &s| {
        Ok::<_, crate::error::CliError>(ShapeRecord {
            seed: s,
            samples: Vec::new(),
            scans: vec![sparse_scan(cfg, s)?],
        })
    })?;
    Ok(Dataset {
        meta: serde_json::json!({"split": split, "root_seed": root, "kind": "sparse",
            "rays_per_axis": cfg.sparse_rays, "max_points": cfg.sparse_points}),
        records,
    })
}

/// Coarse scan of the vehicle of `seed`; tries further viewpoints if one
/// misses the shape entirely.
pub fn sparse_scan(cfg: &DataConfig, seed: u64) -> CliResult<PointCloud> {
    let shape = make_vehicle(seed);
    for attempt in 0..8u64 {
        let vs = derive_seed(seed, "sparse-view", attempt);
        let vp = scan_viewpoints(1, cfg.viewpoint_distance, vs)[0];
        let mut sc = ScanConfig::looking_at_origin(vp, vs);
        sc.azimuth_count = cfg.sparse_rays;
        sc.elevation_count = cfg.sparse_rays;
        sc.max_points = cfg.sparse_points;
        let cloud = virtual_scan(&shape, &sc)?;
        if cloud.len() >= 2 {
            return Ok(cloud);
        }
    }
    Err(usage(format!("no sparse viewpoint of shape {seed} hits it")))
}

/// Inference observation for a record: its first usable scan, subsampled.
pub fn observation(record: &ShapeRecord, points: usize, seed: u64) -> CliResult<Observation> {
    let cloud = record
        .scans
        .iter()
        .find(|c| c.len() >= 2)
        .ok_or_else(|| usage(format!("shape {} has no usable scan", record.seed)))?;
    let sub = if points > 0 && cloud.len() > points {
        cloud.subsample(points, seed)
    } else {
        cloud.clone()
    };
    Ok(Observation::from_cloud(&sub, OFF_SURFACE_OFFSET)?.with_shape_id(record.seed))
}

/// Mirrored oracle surface samples of the vehicle of `seed`.
pub fn ground_truth(seed: u64, count: usize) -> Vec<Point> {
    let shape = make_vehicle(seed);
    symmetrize(&PointCloud::new(sample_surface(&shape, count, derive_seed(seed, "gt-points", 0)))).points
}

pub fn object_id(i: usize) -> String {
    format!("{i:06}")
}
