use rand::Rng;

use super::csg::{CsgNode, CsgShape, Primitive};
use crate::rng::rng_for;

/// Radius of the ball every normalized vehicle fits in. Kept below 1 so the
/// marching-cubes box [−1, 1]³ has a positive margin on every face.
pub const NORMALIZED_RADIUS: f64 = 0.9;

/// Vehicle-like solid: body box ∪ cabin box ∪ four wheel cylinders.
///
/// The lateral axis is `y`; every part is either centred on `y = 0` or
/// comes in a mirrored pair, so the field is symmetric about the x–z plane.
/// `z` is up. Dimensions are drawn from fixed ranges with a stream derived
/// from `seed`.
pub fn make_vehicle(seed: u64) -> CsgShape {
    let mut rng = rng_for(seed, "vehicle", 0);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let half_len = u(1.8, 2.5);
    let half_width = u(0.75, 1.0);
    let body_half_h = u(0.28, 0.45);
    let wheel_r = u(0.3, 0.45);
    let wheel_half_t = u(0.1, 0.16);
    let clearance = wheel_r * u(0.45, 0.8);
    let cabin_half_len = half_len * u(0.35, 0.65);
    let cabin_half_w = half_width * u(0.8, 0.95);
    let cabin_half_h = u(0.22, 0.45);
    let cabin_shift = half_len * u(-0.35, 0.2);
    let front_axle = half_len * u(0.55, 0.75);
    let rear_axle = -half_len * u(0.55, 0.75);

    let body_z = clearance + body_half_h;
    let body = Primitive::Box {
        center: [0.0, 0.0, body_z],
        half_extents: [half_len, half_width, body_half_h],
    };
    let cabin = Primitive::Box {
        center: [cabin_shift, 0.0, body_z + body_half_h + cabin_half_h],
        half_extents: [cabin_half_len, cabin_half_w, cabin_half_h],
    };
    let wheel_y = half_width - wheel_half_t * 0.5;
    let mut parts = vec![CsgNode::leaf(body), CsgNode::leaf(cabin)];
    for x in [front_axle, rear_axle] {
        // the mirrored wheel negates the endpoints exactly, which keeps the
        // field bitwise symmetric
        for side in [1.0, -1.0] {
            parts.push(CsgNode::leaf(Primitive::Cylinder {
                a: [x, side * (wheel_y - wheel_half_t), wheel_r],
                b: [x, side * (wheel_y + wheel_half_t), wheel_r],
                radius: wheel_r,
            }));
        }
    }
    CsgShape::new(CsgNode::Union { children: parts })
        .expect("vehicle tree depth is 2")
        .normalized(NORMALIZED_RADIUS)
}
