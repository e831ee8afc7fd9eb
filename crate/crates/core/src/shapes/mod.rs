//! Procedural shapes with exact signed-distance oracles, sampling,
//! virtual scanning and surface extraction.

pub mod csg;
pub mod dataset;
pub mod grid;
pub mod marching_cubes;
mod mc_table;
pub mod mesh;
pub mod sampling;
pub mod scan;
pub mod vehicle;

pub use csg::{eval_sdf, CsgNode, CsgShape, Primitive};
pub use dataset::{Dataset, RecordSpec, ShapeRecord};
pub use grid::VoxelGrid;
pub use marching_cubes::{marching_cubes, marching_cubes_with_edges};
pub use mesh::TriangleMesh;
pub use sampling::{
    oracle_mesh, sample_surface, sample_training_points, uniform_points, SamplingConfig, SdfSample,
};
pub use scan::{scan_viewpoints, symmetrize, virtual_scan, PointCloud, ScanConfig};
pub use vehicle::{make_vehicle, NORMALIZED_RADIUS};
