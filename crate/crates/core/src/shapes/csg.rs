use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::Point;

pub const MAX_DEPTH: usize = 8;

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Point, radius: f64 },
    Box { center: Point, half_extents: Point },
    /// Solid cylinder between the two axis endpoints, flat caps.
    Cylinder { a: Point, b: Point, radius: f64 },
}

impl Primitive {
    /// Exact signed distance.
    pub fn sdf(&self, p: Point) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => norm(sub(p, center)) - radius,
            Primitive::Box {
                center,
                half_extents,
            } => {
                let d = sub(p, center);
                let q = [
                    d[0].abs() - half_extents[0],
                    d[1].abs() - half_extents[1],
                    d[2].abs() - half_extents[2],
                ];
                let outside = norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Cylinder { a, b, radius } => {
                let ba = sub(b, a);
                let pa = sub(p, a);
                let baba = dot(ba, ba);
                let paba = dot(pa, ba);
                let x = norm([
                    pa[0] * baba - ba[0] * paba,
                    pa[1] * baba - ba[1] * paba,
                    pa[2] * baba - ba[2] * paba,
                ]) - radius * baba;
                let y = (paba - baba * 0.5).abs() - baba * 0.5;
                let x2 = x * x;
                let y2 = y * y * baba;
                let d = if x.max(y) < 0.0 {
                    -x2.min(y2)
                } else {
                    (if x > 0.0 { x2 } else { 0.0 }) + (if y > 0.0 { y2 } else { 0.0 })
                };
                d.signum() * d.abs().sqrt() / baba
            }
        }
    }

    /// Strict interior test, computed without any distance arithmetic.
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Primitive::Sphere { center, radius } => {
                let d = sub(p, center);
                dot(d, d) < radius * radius
            }
            Primitive::Box {
                center,
                half_extents,
            } => (0..3).all(|i| (p[i] - center[i]).abs() < half_extents[i]),
            Primitive::Cylinder { a, b, radius } => {
                let ba = sub(b, a);
                let t = dot(sub(p, a), ba) / dot(ba, ba);
                if t <= 0.0 || t >= 1.0 {
                    return false;
                }
                let c = [a[0] + t * ba[0], a[1] + t * ba[1], a[2] + t * ba[2]];
                let r = sub(p, c);
                dot(r, r) < radius * radius
            }
        }
    }

    /// Largest distance from the origin of any point of the solid.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => norm(center) + radius,
            Primitive::Box {
                center,
                half_extents,
            } => {
                let far = [
                    center[0].abs() + half_extents[0],
                    center[1].abs() + half_extents[1],
                    center[2].abs() + half_extents[2],
                ];
                norm(far)
            }
            Primitive::Cylinder { a, b, radius } => norm(a).max(norm(b)) + radius,
        }
    }

    /// Axis-aligned bounds (min, max).
    pub fn aabb(&self) -> (Point, Point) {
        match *self {
            Primitive::Sphere { center, radius } => (
                center.map(|c| c - radius),
                center.map(|c| c + radius),
            ),
            Primitive::Box {
                center,
                half_extents,
            } => (
                [0, 1, 2].map(|i| center[i] - half_extents[i]),
                [0, 1, 2].map(|i| center[i] + half_extents[i]),
            ),
            Primitive::Cylinder { a, b, radius } => (
                [0, 1, 2].map(|i| a[i].min(b[i]) - radius),
                [0, 1, 2].map(|i| a[i].max(b[i]) + radius),
            ),
        }
    }

    fn transformed(&self, shift: Point, scale: f64) -> Primitive {
        let tp = |p: Point| [0, 1, 2].map(|i| (p[i] + shift[i]) * scale);
        match *self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: tp(center),
                radius: radius * scale,
            },
            Primitive::Box {
                center,
                half_extents,
            } => Primitive::Box {
                center: tp(center),
                half_extents: half_extents.map(|h| h * scale),
            },
            Primitive::Cylinder { a, b, radius } => Primitive::Cylinder {
                a: tp(a),
                b: tp(b),
                radius: radius * scale,
            },
        }
    }

    fn flat_params(&self, out: &mut Vec<f64>) {
        match *self {
            Primitive::Sphere { center, radius } => {
                out.push(0.0);
                out.extend(center);
                out.push(radius);
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                out.push(1.0);
                out.extend(center);
                out.extend(half_extents);
            }
            Primitive::Cylinder { a, b, radius } => {
                out.push(2.0);
                out.extend(a);
                out.extend(b);
                out.push(radius);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CsgNode {
    Leaf { primitive: Primitive },
    Union { children: Vec<CsgNode> },
    Intersection { children: Vec<CsgNode> },
    Difference { keep: Box<CsgNode>, remove: Box<CsgNode> },
}

impl CsgNode {
    pub fn leaf(primitive: Primitive) -> Self {
        CsgNode::Leaf { primitive }
    }

    /// Union = min, intersection = max, difference = max(a, −b).
    pub fn sdf(&self, p: Point) -> f64 {
        match self {
            CsgNode::Leaf { primitive } => primitive.sdf(p),
            CsgNode::Union { children } => children
                .iter()
                .map(|c| c.sdf(p))
                .fold(f64::INFINITY, f64::min),
            CsgNode::Intersection { children } => children
                .iter()
                .map(|c| c.sdf(p))
                .fold(f64::NEG_INFINITY, f64::max),
            CsgNode::Difference { keep, remove } => keep.sdf(p).max(-remove.sdf(p)),
        }
    }

    /// Boolean membership built from the primitives' containment tests.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            CsgNode::Leaf { primitive } => primitive.contains(p),
            CsgNode::Union { children } => children.iter().any(|c| c.contains(p)),
            CsgNode::Intersection { children } => children.iter().all(|c| c.contains(p)),
            CsgNode::Difference { keep, remove } => keep.contains(p) && !remove.contains(p),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            CsgNode::Leaf { .. } => 1,
            CsgNode::Union { children } | CsgNode::Intersection { children } => {
                1 + children.iter().map(CsgNode::depth).max().unwrap_or(0)
            }
            CsgNode::Difference { keep, remove } => 1 + keep.depth().max(remove.depth()),
        }
    }

    pub fn primitives(&self) -> Vec<&Primitive> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Primitive>) {
        match self {
            CsgNode::Leaf { primitive } => out.push(primitive),
            CsgNode::Union { children } | CsgNode::Intersection { children } => {
                children.iter().for_each(|c| c.collect(out))
            }
            CsgNode::Difference { keep, remove } => {
                keep.collect(out);
                remove.collect(out);
            }
        }
    }

    fn map_primitives(&self, f: &impl Fn(&Primitive) -> Primitive) -> CsgNode {
        match self {
            CsgNode::Leaf { primitive } => CsgNode::Leaf {
                primitive: f(primitive),
            },
            CsgNode::Union { children } => CsgNode::Union {
                children: children.iter().map(|c| c.map_primitives(f)).collect(),
            },
            CsgNode::Intersection { children } => CsgNode::Intersection {
                children: children.iter().map(|c| c.map_primitives(f)).collect(),
            },
            CsgNode::Difference { keep, remove } => CsgNode::Difference {
                keep: Box::new(keep.map_primitives(f)),
                remove: Box::new(remove.map_primitives(f)),
            },
        }
    }
}

/// Primitive composition with an analytic signed distance.
///
/// Signs are exact. Magnitudes are exact for single primitives and a lower
/// bound on the true distance after min/max composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsgShape {
    pub root: CsgNode,
    /// Uniform scale already folded into the primitives by [`CsgShape::normalized`].
    pub scale: f64,
}

impl CsgShape {
    pub fn new(root: CsgNode) -> Result<Self> {
        let depth = root.depth();
        if depth > MAX_DEPTH {
            return Err(arg_err!("csg tree depth {depth} exceeds {MAX_DEPTH}"));
        }
        Ok(Self { root, scale: 1.0 })
    }

    /// Recentres the bounding box on the origin and scales the solid so
    /// every point of it lies within `radius` of the origin.
    pub fn normalized(self, radius: f64) -> Self {
        let prims = self.root.primitives();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &prims {
            let (a, b) = p.aabb();
            for i in 0..3 {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(b[i]);
            }
        }
        let shift = [0, 1, 2].map(|i| -(lo[i] + hi[i]) * 0.5);
        let centred = self.root.map_primitives(&|p| p.transformed(shift, 1.0));
        let bound = centred
            .primitives()
            .iter()
            .map(|p| p.bounding_radius())
            .fold(0.0, f64::max);
        let s = radius / bound;
        Self {
            root: centred.map_primitives(&|p| p.transformed([0.0; 3], s)),
            scale: self.scale * s,
        }
    }

    pub fn sdf(&self, p: Point) -> f64 {
        self.root.sdf(p)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.root.contains(p)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.root
            .primitives()
            .iter()
            .map(|p| p.bounding_radius())
            .fold(0.0, f64::max)
    }

    /// Every primitive parameter in tree order, for identity comparisons.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = vec![self.scale];
        for p in self.root.primitives() {
            p.flat_params(&mut out);
        }
        out
    }

    /// Central-difference gradient of the field.
    pub fn gradient(&self, p: Point) -> Point {
        let h = 1e-6;
        [0, 1, 2].map(|i| {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            (self.sdf(a) - self.sdf(b)) / (2.0 * h)
        })
    }

    /// Moves `p` onto the zero level set by Newton steps along the gradient.
    pub fn project(&self, mut p: Point, iterations: usize) -> Point {
        for _ in 0..iterations {
            let s = self.sdf(p);
            if s == 0.0 {
                break;
            }
            let g = self.gradient(p);
            let gg = dot(g, g);
            if gg < 1e-12 {
                break;
            }
            for i in 0..3 {
                p[i] -= s * g[i] / gg;
            }
        }
        p
    }
}

/// Field value of `shape` at `x`.
pub fn eval_sdf(shape: &CsgShape, x: Point) -> f64 {
    shape.sdf(x)
}
