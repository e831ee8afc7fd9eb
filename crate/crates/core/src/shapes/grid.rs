use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::Point;

/// Scalar field sampled at the nodes of a regular lattice. `x` varies
/// fastest in `values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub resolution: [usize; 3],
    pub min: Point,
    pub max: Point,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(resolution: [usize; 3], min: Point, max: Point, values: Vec<f64>) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(arg_err!("grid resolution {resolution:?} must be at least 2 per axis"));
        }
        if values.len() != resolution.iter().product::<usize>() {
            return Err(arg_err!(
                "grid {resolution:?} needs {} values, got {}",
                resolution.iter().product::<usize>(),
                values.len()
            ));
        }
        if (0..3).any(|i| max[i] <= min[i]) {
            return Err(arg_err!("grid bounds {min:?}..{max:?} are empty"));
        }
        Ok(Self {
            resolution,
            min,
            max,
            values,
        })
    }

    /// Node positions in storage order.
    pub fn node_positions(resolution: [usize; 3], min: Point, max: Point) -> Vec<Point> {
        let [nx, ny, nz] = resolution;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.push(node_at(resolution, min, max, [i, j, k]));
                }
            }
        }
        out
    }

    /// Samples `field` at every node of a cube grid over `[lo, hi]³`.
    pub fn sample(resolution: usize, lo: f64, hi: f64, field: impl Fn(Point) -> f64) -> Result<Self> {
        let res = [resolution; 3];
        let (min, max) = ([lo; 3], [hi; 3]);
        if resolution < 2 {
            return Err(arg_err!("grid resolution {resolution} must be at least 2"));
        }
        let values = Self::node_positions(res, min, max).into_iter().map(field).collect();
        Self::new(res, min, max, values)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.resolution[0] * (ijk[1] + self.resolution[1] * ijk[2])
    }

    pub fn value(&self, ijk: [usize; 3]) -> f64 {
        self.values[self.index(ijk)]
    }

    pub fn position(&self, ijk: [usize; 3]) -> Point {
        node_at(self.resolution, self.min, self.max, ijk)
    }

    pub fn spacing(&self) -> Point {
        [0, 1, 2].map(|a| (self.max[a] - self.min[a]) / (self.resolution[a] - 1) as f64)
    }
}

fn node_at(resolution: [usize; 3], min: Point, max: Point, ijk: [usize; 3]) -> Point {
    [0, 1, 2].map(|a| {
        let t = ijk[a] as f64 / (resolution[a] - 1) as f64;
        min[a] + t * (max[a] - min[a])
    })
}
