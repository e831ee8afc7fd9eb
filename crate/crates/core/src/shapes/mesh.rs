use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::csg::{dot, norm, sub};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::Point;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Unnormalized normal `(b − a) × (c − a)`.
    pub fn face_normal(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * norm(self.face_normal(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Indices in range and no zero-area triangles.
    pub fn validate(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::Format(format!("triangle {t} indexes past the vertex list")));
            }
            if self.area(t) == 0.0 {
                return Err(Error::Format(format!("triangle {t} is degenerate")));
            }
        }
        Ok(())
    }

    /// Applies `p ↦ R·p + t` to every vertex.
    pub fn transformed(&self, rotation: [[f64; 3]; 3], translation: Point) -> TriangleMesh {
        TriangleMesh {
            vertices: self
                .vertices
                .iter()
                .map(|&p| apply_rigid(rotation, translation, p))
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Vec<Point> {
        if self.is_empty() || count == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in 0..self.triangles.len() {
            acc += self.area(t);
            cdf.push(acc);
        }
        let mut rng = rng_for(seed, "mesh-surface", 0);
        (0..count)
            .map(|_| {
                let r = rng.random_range(0.0..acc);
                let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                [0, 1, 2].map(|i| a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]))
            })
            .collect()
    }

    /// Edges used by a number of triangles other than two, as (edge, uses).
    pub fn non_manifold_edges(&self) -> Vec<([usize; 2], usize)> {
        let mut uses = std::collections::BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *uses.entry([a.min(b), a.max(b)]).or_insert(0usize) += 1;
            }
        }
        uses.into_iter().filter(|(_, n)| *n != 2).collect()
    }

    /// Every directed edge appears once and its reverse once; true for a
    /// closed, consistently oriented surface.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut directed = std::collections::BTreeSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                if !directed.insert((tri[k], tri[(k + 1) % 3])) {
                    return false;
                }
            }
        }
        directed.iter().all(|&(a, b)| directed.contains(&(b, a)))
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 20);
        for v in &self.vertices {
            // `{:?}` prints the shortest string that parses back to the same bits
            let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn from_obj(text: &str) -> Result<Self> {
        let mut mesh = TriangleMesh::default();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = || Error::Format(format!("obj line {}: {line}", ln + 1));
            match it.next() {
                Some("v") => {
                    let mut p = [0.0; 3];
                    for c in &mut p {
                        *c = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                    }
                    mesh.vertices.push(p);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|tok| {
                            tok.split('/')
                                .next()
                                .and_then(|v| v.parse::<usize>().ok())
                                .filter(|&v| v >= 1)
                                .map(|v| v - 1)
                                .ok_or_else(bad)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad());
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_obj())?;
        Ok(())
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        Self::from_obj(&fs::read_to_string(path)?)
    }
}

pub fn apply_rigid(rotation: [[f64; 3]; 3], translation: Point, p: Point) -> Point {
    [0, 1, 2].map(|r| dot(rotation[r], p) + translation[r])
}
