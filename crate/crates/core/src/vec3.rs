//! Small fixed-size vector helpers for values in R^3.

pub type Vec3 = [f64; 3];

/// Sum of three terms that does not depend on their order, so that results are
/// bit-identical under permutations of vector components.
#[inline]
pub fn sym_sum3(a: f64, b: f64, c: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (lo, mid, hi) = if c <= lo {
        (c, lo, hi)
    } else if c <= hi {
        (lo, c, hi)
    } else {
        (lo, hi, c)
    };
    (lo + mid) + hi
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    sym_sum3(a[0] * b[0], a[1] * b[1], a[2] * b[2])
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn axpy(s: f64, x: Vec3, y: Vec3) -> Vec3 {
    [y[0] + s * x[0], y[1] + s * x[1], y[2] + s * x[2]]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Normalizes `a`; returns `None` for the zero vector or non-finite input.
#[inline]
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(scale(1.0 / n, a))
    } else {
        None
    }
}

/// Geodesic distance on the unit sphere.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Spherical interpolation between unit vectors, `t` in [0, 1].
pub fn slerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    let theta = angle_between(a, b);
    if theta < 1e-12 {
        return normalize(axpy(t, sub(b, a), a)).unwrap_or(a);
    }
    if (std::f64::consts::PI - theta) < 1e-9 {
        // antipodal: any great circle works, pick one through a fixed helper axis
        let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let perp = normalize(sub(helper, scale(dot(helper, a), a))).unwrap();
        let phi = t * theta;
        return add(scale(phi.cos(), a), scale(phi.sin(), perp));
    }
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    normalize(add(scale(wa, a), scale(wb, b))).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_sum_is_order_free() {
        let v = [0.1, 1e-17, -0.3];
        let s = sym_sum3(v[0], v[1], v[2]);
        assert_eq!(s.to_bits(), sym_sum3(v[2], v[0], v[1]).to_bits());
        assert_eq!(s.to_bits(), sym_sum3(v[1], v[2], v[0]).to_bits());
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let m = slerp(a, b, 0.5);
        assert!((m[0] - m[1]).abs() < 1e-15);
        assert!((norm(m) - 1.0).abs() < 1e-15);
        assert!(angle_between(slerp(a, b, 0.0), a) < 1e-15);
        assert!(angle_between(slerp(a, b, 1.0), b) < 1e-15);
        let c = slerp([0.0, 0.0, 1.0], [0.0, 0.0, -1.0], 0.5);
        assert!(c[2].abs() < 1e-12);
    }

    #[test]
    fn angle_small() {
        let e = 1e-9;
        let a = [1.0, 0.0, 0.0];
        let b = normalize([1.0, e, 0.0]).unwrap();
        assert!((angle_between(a, b) - e).abs() < 1e-20);
    }
}
