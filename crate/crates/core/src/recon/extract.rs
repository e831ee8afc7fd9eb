use crate::error::{arg_err, Result};
use crate::nets::Decoder;
use crate::shapes::{marching_cubes, TriangleMesh, VoxelGrid};

/// Samples the (possibly fused) field on a `resolution³` grid over
/// [−1, 1]³ and extracts its zero level set. A field without a sign change
/// gives an empty mesh.
pub fn extract_mesh(decoder: &Decoder, codes: &[Vec<f64>], split: Option<usize>, resolution: usize) -> Result<TriangleMesh> {
    Ok(marching_cubes(&field_grid(decoder, codes, split, resolution)?, 0.0))
}

pub fn field_grid(decoder: &Decoder, codes: &[Vec<f64>], split: Option<usize>, resolution: usize) -> Result<VoxelGrid> {
    if resolution < 2 {
        return Err(arg_err!("grid resolution {resolution} must be at least 2"));
    }
    let res = [resolution; 3];
    let nodes = VoxelGrid::node_positions(res, [-1.0; 3], [1.0; 3]);
    let values = decoder.eval_fused(codes, &nodes, split)?;
    VoxelGrid::new(res, [-1.0; 3], [1.0; 3], values)
}
