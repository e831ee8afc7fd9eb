use std::collections::HashMap;

use super::grid::VoxelGrid;
use super::mc_table::{CORNERS, EDGES, TRIANGLES};
use super::mesh::TriangleMesh;

/// Extracts the `iso` level set of `grid`.
///
/// A node counts as inside when its value is strictly below `iso`.
/// Crossing vertices are interpolated linearly along cell edges and shared
/// between neighbouring cells, so a closed level set strictly inside the
/// grid yields a closed mesh. Triangles face toward increasing field.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriangleMesh {
    marching_cubes_with_edges(grid, iso).0
}

/// As [`marching_cubes`], also returning the pair of grid node indices
/// whose edge produced each vertex.
pub fn marching_cubes_with_edges(grid: &VoxelGrid, iso: f64) -> (TriangleMesh, Vec<[usize; 2]>) {
    let [nx, ny, nz] = grid.resolution;
    let mut mesh = TriangleMesh::default();
    let mut sources: Vec<[usize; 2]> = Vec::new();
    let mut by_edge: HashMap<(usize, usize), usize> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let nodes = CORNERS.map(|c| [i + c[0], j + c[1], k + c[2]]);
                let values = nodes.map(|n| grid.value(n));
                let mut case = 0usize;
                for (bit, v) in values.iter().enumerate() {
                    if *v < iso {
                        case |= 1 << bit;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLES[case];
                let mut t = 0;
                while t < 15 && row[t] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let [c0, c1] = EDGES[e as usize];
                        let (g0, g1) = (grid.index(nodes[c0]), grid.index(nodes[c1]));
                        let key = (g0.min(g1), g0.max(g1));
                        *slot = *by_edge.entry(key).or_insert_with(|| {
                            let (p0, p1) = (grid.position(nodes[c0]), grid.position(nodes[c1]));
                            let (v0, v1) = (values[c0], values[c1]);
                            let s = (iso - v0) / (v1 - v0);
                            mesh.vertices.push([0, 1, 2].map(|a| p0[a] + s * (p1[a] - p0[a])));
                            sources.push([key.0, key.1]);
                            mesh.vertices.len() - 1
                        });
                    }
                    t += 3;
                    // the table winds triangles toward the inside
                    let tri = [tri[0], tri[2], tri[1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        continue;
                    }
                    mesh.triangles.push(tri);
                    if mesh.area(mesh.triangles.len() - 1) == 0.0 {
                        mesh.triangles.pop();
                    }
                }
            }
        }
    }
    (mesh, sources)
}
