//! Asymmetric Chamfer distance and recall against reconstructed meshes.

mod bvh;
mod distance;
mod report;


pub use bvh::{mesh_index, Bounded, Bvh, Triangle};
pub use distance::{point_segment_distance_sq, point_triangle_distance, point_triangle_distance_sq};
pub use report::{
    acd, acd_point_sampled, acd_squared, cumulative_curves, evaluate_object, recall, surface_distances, Curves,
    MetricReport, ObjectMetrics, Summary, DEFAULT_RECALL_THRESHOLD,
};
