use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::shapes::csg::norm;
use crate::shapes::PointCloud;
use crate::Point;

/// Distance of the off-surface points from the observed surface.
pub const OFF_SURFACE_OFFSET: f64 = 0.02;

/// What a reconstruction is fitted to: on-surface points (target 0) and
/// off-surface points with small signed targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub surface: Vec<Point>,
    pub off_surface: Vec<Point>,
    pub off_targets: Vec<f64>,
    /// Source shape, for evaluation only.
    pub shape_id: Option<u64>,
}

impl Observation {
    /// Builds an observation from scanned points. Each point also yields
    /// one off-surface point `offset` along its ray: toward the sensor
    /// (target `+offset`) for even indices and behind the surface (target
    /// `−offset`) for odd ones. Without ray origins the ray is taken to run
    /// from the point toward the origin of the frame.
    pub fn from_cloud(cloud: &PointCloud, offset: f64) -> Result<Self> {
        if cloud.is_empty() {
            return Err(arg_err!("observation needs at least one surface point"));
        }
        let mut off_surface = Vec::with_capacity(cloud.len());
        let mut off_targets = Vec::with_capacity(cloud.len());
        for (i, &p) in cloud.points.iter().enumerate() {
            let toward = match &cloud.origins {
                Some(o) => [0, 1, 2].map(|a| o[i][a] - p[a]),
                None => p,
            };
            let n = norm(toward);
            let dir = if n > 0.0 { toward.map(|c| c / n) } else { [0.0, 0.0, 1.0] };
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            off_surface.push([0, 1, 2].map(|a| p[a] + sign * offset * dir[a]));
            off_targets.push(sign * offset);
        }
        Ok(Self {
            surface: cloud.points.clone(),
            off_surface,
            off_targets,
            shape_id: None,
        })
    }

    pub fn with_shape_id(mut self, id: u64) -> Self {
        self.shape_id = Some(id);
        self
    }

    /// Surface points followed by off-surface points.
    pub fn points(&self) -> Vec<Point> {
        let mut all = self.surface.clone();
        all.extend_from_slice(&self.off_surface);
        all
    }

    /// Targets aligned with [`Observation::points`].
    pub fn targets(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.surface.len()];
        t.extend_from_slice(&self.off_targets);
        t
    }

    pub fn len(&self) -> usize {
        self.surface.len() + self.off_surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface.is_empty()
    }
}
