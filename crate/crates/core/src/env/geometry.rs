//! Small planar geometry helpers shared by the map, lidar and guardian.

use std::f64::consts::PI;

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Distance along a unit ray to the segment `a–b`, if the ray hits it.
pub fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let e = sub(b, a);
    let denom = cross(dir, e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = sub(a, origin);
    let t = cross(w, e) / denom;
    let u = cross(w, dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Distance along a unit ray to a circle. An origin inside the circle
/// yields 0.
pub fn ray_circle(origin: Point, dir: Point, center: Point, radius: f64) -> Option<f64> {
    let oc = sub(origin, center);
    let c = dot(oc, oc) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = dot(oc, dir);
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Squared distance from `p` to segment `a–b` and the clamped parameter.
pub fn segment_projection(p: Point, a: Point, b: Point) -> (f64, f64) {
    let e = sub(b, a);
    let len2 = dot(e, e);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), e) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * e[0], a[1] + t * e[1]];
    let d = sub(p, q);
    (dot(d, d), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_hits() {
        let t = ray_segment([0.0, 0.0], [1.0, 0.0], [5.0, -1.0], [5.0, 1.0]).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert!(ray_segment([0.0, 0.0], [-1.0, 0.0], [5.0, -1.0], [5.0, 1.0]).is_none());
        let t = ray_circle([0.0, 0.0], [1.0, 0.0], [10.0, 0.0], 2.0).unwrap();
        assert!((t - 8.0).abs() < 1e-12);
        assert_eq!(ray_circle([10.0, 0.5], [1.0, 0.0], [10.0, 0.0], 2.0), Some(0.0));
        assert!(ray_circle([0.0, 0.0], [0.0, 1.0], [10.0, 0.0], 2.0).is_none());
    }
}
