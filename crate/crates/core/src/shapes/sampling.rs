use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitBall};
use serde::{Deserialize, Serialize};

use super::csg::CsgShape;
use super::grid::VoxelGrid;
use super::marching_cubes::marching_cubes;
use super::mesh::TriangleMesh;
use crate::error::{arg_err, Result};
use crate::rng::{rng_for, StreamRng};
use crate::Point;

/// A point paired with its signed distance (negative inside).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfSample {
    pub x: Point,
    pub s: f64,
}

pub const DEFAULT_SAMPLE_COUNT: usize = 16384;
pub const DEFAULT_NEAR_FRACTION: f64 = 0.875;
pub const DEFAULT_NEAR_SIGMAS: [f64; 2] = [0.0025, 0.025];

/// Grid used to build the oracle surface mesh that seeds surface samples.
const ORACLE_GRID: usize = 64;
const PROJECTION_STEPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub count: usize,
    pub near_fraction: f64,
    /// Near-surface points are split evenly across these noise scales.
    pub near_sigmas: Vec<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            count: DEFAULT_SAMPLE_COUNT,
            near_fraction: DEFAULT_NEAR_FRACTION,
            near_sigmas: DEFAULT_NEAR_SIGMAS.to_vec(),
        }
    }
}

pub fn uniform_in_sphere(rng: &mut StreamRng) -> Point {
    UnitBall.sample(rng)
}

pub fn uniform_points(count: usize, seed: u64, label: &str) -> Vec<Point> {
    let mut rng = rng_for(seed, label, 0);
    (0..count).map(|_| uniform_in_sphere(&mut rng)).collect()
}

/// Marching-cubes mesh of the analytic field on a 64³ grid over [−1,1]³.
pub fn oracle_mesh(shape: &CsgShape) -> TriangleMesh {
    let grid = VoxelGrid::sample(ORACLE_GRID, -1.0, 1.0, |p| shape.sdf(p))
        .expect("fixed grid resolution is valid");
    marching_cubes(&grid, 0.0)
}

/// Points on the zero level set: area-uniform samples of the oracle mesh,
/// each pulled onto the exact surface by Newton steps.
pub fn sample_surface(shape: &CsgShape, count: usize, seed: u64) -> Vec<Point> {
    sample_surface_on(shape, &oracle_mesh(shape), count, seed)
}

pub fn sample_surface_on(shape: &CsgShape, mesh: &TriangleMesh, count: usize, seed: u64) -> Vec<Point> {
    mesh.sample_surface(count, seed)
        .into_iter()
        .map(|p| shape.project(p, PROJECTION_STEPS))
        .collect()
}

/// Labeled training samples: near-surface Gaussian perturbations plus
/// uniform points in the unit ball, all labeled with the exact field.
pub fn sample_training_points(shape: &CsgShape, cfg: &SamplingConfig, seed: u64) -> Result<Vec<SdfSample>> {
    if cfg.count == 0 {
        return Err(arg_err!("sample count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.near_fraction) {
        return Err(arg_err!("near fraction {} outside [0, 1]", cfg.near_fraction));
    }
    let near = (cfg.count as f64 * cfg.near_fraction).round() as usize;
    if near > 0 && (cfg.near_sigmas.is_empty() || cfg.near_sigmas.iter().any(|s| !(*s >= 0.0))) {
        return Err(arg_err!("near-surface sampling needs non-negative sigmas"));
    }
    let mut out = Vec::with_capacity(cfg.count);
    if near > 0 {
        let surface = sample_surface(shape, near, seed);
        let mut rng = rng_for(seed, "near-noise", 0);
        for (i, p) in surface.into_iter().enumerate() {
            let sigma = cfg.near_sigmas[i % cfg.near_sigmas.len()];
            let x = p.map(|c| {
                let n: f64 = StandardNormal.sample(&mut rng);
                c + sigma * n
            });
            out.push(SdfSample { x, s: shape.sdf(x) });
        }
    }
    let mut rng = rng_for(seed, "uniform-samples", 0);
    while out.len() < cfg.count {
        let x = uniform_in_sphere(&mut rng);
        out.push(SdfSample { x, s: shape.sdf(x) });
    }
    Ok(out)
}

/// Random unit vector.
pub fn random_direction(rng: &mut StreamRng) -> Point {
    loop {
        let v: Point = [0, 1, 2].map(|_| rng.sample::<f64, _>(StandardNormal));
        let n = super::csg::norm(v);
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}
