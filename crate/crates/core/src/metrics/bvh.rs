use crate::shapes::TriangleMesh;
use crate::Point;

use super::distance::point_triangle_distance_sq;

const LEAF_SIZE: usize = 4;

/// A primitive the index can bound and measure against.
pub trait Bounded {
    fn bounds(&self) -> ([f64; 3], [f64; 3]);
    fn distance_sq(&self, p: Point) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct Triangle(pub [Point; 3]);

impl Bounded for Triangle {
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let [a, b, c] = self.0;
        let lo = std::array::from_fn(|k| a[k].min(b[k]).min(c[k]));
        let hi = std::array::from_fn(|k| a[k].max(b[k]).max(c[k]));
        (lo, hi)
    }

    fn distance_sq(&self, p: Point) -> f64 {
        let [a, b, c] = self.0;
        point_triangle_distance_sq(p, a, b, c)
    }
}

impl Bounded for Point {
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (*self, *self)
    }

    fn distance_sq(&self, p: Point) -> f64 {
        (0..3).map(|k| (self[k] - p[k]) * (self[k] - p[k])).sum()
    }
}

#[derive(Clone, Debug)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    /// Leaf: primitive range; inner: children at `start` and `start + 1`
    /// in `nodes` when `count == 0`.
    start: usize,
    count: usize,
}

/// Bounding-volume hierarchy returning the exact minimum over its
/// primitives of [`Bounded::distance_sq`]: pruning only ever skips boxes
/// clearly farther than the best candidate, so the answer equals a linear
/// scan bit for bit.
#[derive(Clone, Debug)]
pub struct Bvh<P> {
    prims: Vec<P>,
    nodes: Vec<Node>,
}

fn box_distance_sq(lo: &[f64; 3], hi: &[f64; 3], p: Point) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let g = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d += g * g;
    }
    d
}

impl<P: Bounded + Clone> Bvh<P> {
    pub fn new(mut prims: Vec<P>) -> Self {
        let mut nodes = Vec::new();
        if !prims.is_empty() {
            let bounds: Vec<_> = prims.iter().map(Bounded::bounds).collect();
            let mut order: Vec<usize> = (0..prims.len()).collect();
            nodes.push(Node {
                lo: [0.0; 3],
                hi: [0.0; 3],
                start: 0,
                count: 0,
            });
            build(&bounds, &mut order, 0, prims.len(), 0, &mut nodes);
            prims = order.iter().map(|&i| prims[i].clone()).collect();
        }
        Self { prims, nodes }
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    /// Minimum squared distance, `+∞` when empty.
    pub fn nearest_sq(&self, p: Point) -> f64 {
        let mut best = f64::INFINITY;
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if box_distance_sq(&n.lo, &n.hi, p) > best * (1.0 + 1e-9) + 1e-30 {
                continue;
            }
            if n.count > 0 {
                for q in &self.prims[n.start..n.start + n.count] {
                    best = best.min(q.distance_sq(p));
                }
            } else {
                let (a, b) = (n.start, n.start + 1);
                let da = box_distance_sq(&self.nodes[a].lo, &self.nodes[a].hi, p);
                let db = box_distance_sq(&self.nodes[b].lo, &self.nodes[b].hi, p);
                if da <= db {
                    stack.push(b);
                    stack.push(a);
                } else {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        best
    }

    /// Linear scan over every primitive.
    pub fn nearest_sq_brute(&self, p: Point) -> f64 {
        self.prims.iter().fold(f64::INFINITY, |b, q| b.min(q.distance_sq(p)))
    }
}

fn build(
    bounds: &[([f64; 3], [f64; 3])],
    order: &mut [usize],
    start: usize,
    end: usize,
    node: usize,
    nodes: &mut Vec<Node>,
) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        for k in 0..3 {
            lo[k] = lo[k].min(bounds[i].0[k]);
            hi[k] = hi[k].max(bounds[i].1[k]);
        }
    }
    if end - start <= LEAF_SIZE {
        nodes[node] = Node {
            lo,
            hi,
            start,
            count: end - start,
        };
        return;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let centroid = |i: usize| bounds[i].0[axis] + bounds[i].1[axis];
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| centroid(a).total_cmp(&centroid(b)));
    let left = nodes.len();
    let blank = Node {
        lo: [0.0; 3],
        hi: [0.0; 3],
        start: 0,
        count: 0,
    };
    nodes.push(blank.clone());
    nodes.push(blank);
    nodes[node] = Node {
        lo,
        hi,
        start: left,
        count: 0,
    };
    build(bounds, order, start, mid, left, nodes);
    build(bounds, order, mid, end, left + 1, nodes);
}

/// Distance index over the triangles of a mesh.
pub fn mesh_index(mesh: &TriangleMesh) -> Bvh<Triangle> {
    Bvh::new((0..mesh.triangles.len()).map(|t| Triangle(mesh.corners(t))).collect())
}
