use crate::Point;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist_sq(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Squared distance from `p` to the segment `ab`.
pub fn point_segment_distance_sq(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len = dot(ab, ab);
    if len == 0.0 {
        return dist_sq(p, a);
    }
    let t = (dot(sub(p, a), ab) / len).clamp(0.0, 1.0);
    dist_sq(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

/// Squared Euclidean distance from `p` to the closed triangle `abc`, by
/// Voronoi-region classification of the closest point. Degenerate
/// triangles fall back to their edges.
pub fn point_triangle_distance_sq(p: Point, a: Point, b: Point, c: Point) -> f64 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let n = crate::shapes::mesh::cross(ab, ac);
    if dot(n, n) == 0.0 {
        return point_segment_distance_sq(p, a, b)
            .min(point_segment_distance_sq(p, b, c))
            .min(point_segment_distance_sq(p, c, a));
    }
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return dist_sq(p, a);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return dist_sq(p, b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return dist_sq(p, [a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return dist_sq(p, c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return dist_sq(p, [a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let bc = sub(c, b);
        return dist_sq(p, [b[0] + w * bc[0], b[1] + w * bc[1], b[2] + w * bc[2]]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = [
        a[0] + ab[0] * v + ac[0] * w,
        a[1] + ab[1] * v + ac[1] * w,
        a[2] + ab[2] * v + ac[2] * w,
    ];
    dist_sq(p, q)
}

pub fn point_triangle_distance(p: Point, a: Point, b: Point, c: Point) -> f64 {
    point_triangle_distance_sq(p, a, b, c).sqrt()
}
