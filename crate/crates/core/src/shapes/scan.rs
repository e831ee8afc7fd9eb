use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::csg::{norm, CsgShape};
use super::mesh::cross;
use crate::error::{arg_err, Result};
use crate::rng::rng_for;
use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Sensor position per point, when known.
    pub origins: Option<Vec<Point>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            origins: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps `count` points chosen uniformly without replacement; order of
    /// the kept points follows the original order.
    pub fn subsample(&self, count: usize, seed: u64) -> PointCloud {
        if count >= self.len() {
            return self.clone();
        }
        let mut idx = sample_indices(&mut rng_for(seed, "subsample", 0), self.len(), count).into_vec();
        idx.sort_unstable();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            origins: self
                .origins
                .as_ref()
                .map(|o| idx.iter().map(|&i| o[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub viewpoint: Point,
    pub azimuth_count: usize,
    pub elevation_count: usize,
    pub max_range: f64,
    pub hit_tolerance: f64,
    /// Full angular span of the ray grid, radians, per axis.
    pub azimuth_span: f64,
    pub elevation_span: f64,
    pub max_steps: usize,
    /// Hits are subsampled to at most this many points.
    pub max_points: usize,
    pub seed: u64,
}

impl ScanConfig {
    /// 64×64 grid aimed at the origin, wide enough to cover the unit ball.
    pub fn looking_at_origin(viewpoint: Point, seed: u64) -> Self {
        let d = norm(viewpoint);
        let half = if d > 1.0 { (1.0 / d).asin() * 1.05 } else { 1.2 };
        Self {
            viewpoint,
            azimuth_count: 64,
            elevation_count: 64,
            max_range: d + 2.0,
            hit_tolerance: 1e-3,
            azimuth_span: 2.0 * half,
            elevation_span: 2.0 * half,
            max_steps: 128,
            max_points: 1024,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.azimuth_count == 0 || self.elevation_count == 0 {
            return Err(arg_err!("scan ray counts must be positive"));
        }
        if !(self.hit_tolerance > 0.0) || !(self.max_range > 0.0) {
            return Err(arg_err!("scan tolerance and range must be positive"));
        }
        Ok(())
    }
}

/// Sphere-traces one ray per grid cell from the viewpoint toward the
/// origin and keeps the hits, subsampled to `max_points`.
pub fn virtual_scan(shape: &CsgShape, cfg: &ScanConfig) -> Result<PointCloud> {
    cfg.validate()?;
    let o = cfg.viewpoint;
    if shape.sdf(o) <= 0.0 {
        return Err(arg_err!("viewpoint {o:?} is inside the shape"));
    }
    let dist = norm(o);
    let forward = if dist > 0.0 { o.map(|c| -c / dist) } else { [1.0, 0.0, 0.0] };
    let helper = if forward[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let right = normalize(cross(forward, helper));
    let up = cross(right, forward);

    let mut hits = Vec::new();
    for e in 0..cfg.elevation_count {
        let el = cfg.elevation_span * ((e as f64 + 0.5) / cfg.elevation_count as f64 - 0.5);
        for a in 0..cfg.azimuth_count {
            let az = cfg.azimuth_span * ((a as f64 + 0.5) / cfg.azimuth_count as f64 - 0.5);
            let d = normalize([0, 1, 2].map(|i| forward[i] + az.tan() * right[i] + el.tan() * up[i]));
            if let Some(p) = trace(shape, o, d, cfg) {
                hits.push(p);
            }
        }
    }
    let n = hits.len();
    let cloud = PointCloud {
        points: hits,
        origins: Some(vec![o; n]),
    };
    Ok(cloud.subsample(cfg.max_points, cfg.seed))
}

fn trace(shape: &CsgShape, o: Point, d: Point, cfg: &ScanConfig) -> Option<Point> {
    let mut t = 0.0;
    for _ in 0..cfg.max_steps {
        let p = [0, 1, 2].map(|i| o[i] + t * d[i]);
        let s = shape.sdf(p);
        if s.abs() < cfg.hit_tolerance {
            return Some(p);
        }
        t += s;
        if t > cfg.max_range || t < 0.0 {
            return None;
        }
    }
    None
}

fn normalize(v: Point) -> Point {
    let n = norm(v);
    v.map(|c| c / n)
}

/// Mirrors every point across the y = 0 plane; output is the originals
/// followed by the mirrors.
pub fn symmetrize(cloud: &PointCloud) -> PointCloud {
    let mirror = |p: &Point| [p[0], -p[1], p[2]];
    let mut points = cloud.points.clone();
    points.extend(cloud.points.iter().map(mirror));
    PointCloud {
        points,
        origins: cloud.origins.as_ref().map(|o| {
            let mut all = o.clone();
            all.extend(o.iter().map(mirror));
            all
        }),
    }
}

/// `count` sensor positions on a ring of radius `distance` around the
/// z axis, with jittered azimuth and elevation between 5° and 30°.
pub fn scan_viewpoints(count: usize, distance: f64, seed: u64) -> Vec<Point> {
    let mut rng = rng_for(seed, "viewpoints", 0);
    let step = std::f64::consts::TAU / count.max(1) as f64;
    (0..count)
        .map(|k| {
            let az = step * (k as f64 + rng.random_range(-0.3..0.3));
            let el = rng.random_range(5f64..30.0).to_radians();
            [
                distance * el.cos() * az.cos(),
                distance * el.cos() * az.sin(),
                distance * el.sin(),
            ]
        })
        .collect()
}
