use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nets::Decoder;
use crate::Point;

/// Stage 1 code of one shape and the decoder's field at a fixed layout of
/// query points: `uniform` points first, then each scan's points in turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoGroundTruth {
    pub z: Vec<f64>,
    pub points: Vec<Point>,
    pub s: Vec<f64>,
    pub uniform: usize,
    /// (offset, length) of each scan inside `points`.
    pub scans: Vec<(usize, usize)>,
}

impl PseudoGroundTruth {
    /// Points and pseudo field of the sample set for scan `k`: the uniform
    /// block followed by that scan's points.
    pub fn sample_set(&self, k: usize) -> (Vec<Point>, Vec<f64>) {
        let (off, len) = self.scans[k];
        let mut x = self.points[..self.uniform].to_vec();
        x.extend_from_slice(&self.points[off..off + len]);
        let mut s = self.s[..self.uniform].to_vec();
        s.extend_from_slice(&self.s[off..off + len]);
        (x, s)
    }
}

/// Evaluates the frozen decoder with the Stage 1 code of a shape at the
/// layout `uniform ∪ scans`.
pub fn build_pseudo_gt(decoder: &Decoder, z: &[f64], uniform: &[Point], scans: &[Vec<Point>]) -> Result<PseudoGroundTruth> {
    let mut points = uniform.to_vec();
    let mut ranges = Vec::with_capacity(scans.len());
    for sc in scans {
        ranges.push((points.len(), sc.len()));
        points.extend_from_slice(sc);
    }
    let s = decoder.eval(z, &points)?;
    Ok(PseudoGroundTruth {
        z: z.to_vec(),
        points,
        s,
        uniform: uniform.len(),
        scans: ranges,
    })
}
