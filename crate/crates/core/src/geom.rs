//! Small fixed-size vector helpers. Positions and directions are `[f32; 3]`.

pub type Vec3 = [f32; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f32) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `a + s * b`
#[inline]
pub fn madd(a: Vec3, b: Vec3, s: f32) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f32 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f32 {
    norm(sub(a, b))
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f32 {
    let d = sub(a, b);
    dot(d, d)
}

/// Returns `a` scaled to unit length, or `+x` for a (near) zero vector.
#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 1e-20 {
        scale(a, 1.0 / n)
    } else {
        [1.0, 0.0, 0.0]
    }
}

#[inline]
pub fn inside_unit_cube(p: Vec3) -> bool {
    p.iter().all(|&c| (0.0..=1.0).contains(&c))
}

/// Two unit vectors completing `axis` (assumed unit) to an orthonormal basis.
pub fn orthonormal_basis(axis: Vec3) -> (Vec3, Vec3) {
    // Cross with the coordinate axis least aligned with `axis`.
    let a = axis.map(f32::abs);
    let helper = if a[0] <= a[1] && a[0] <= a[2] {
        [1.0, 0.0, 0.0]
    } else if a[1] <= a[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u = normalize(cross(axis, helper));
    let v = cross(axis, u);
    (u, v)
}

/// Direction at polar angle `theta` from `axis` and azimuth `phi` around it.
pub fn direction_in_cone(axis: Vec3, theta: f32, phi: f32) -> Vec3 {
    let (u, v) = orthonormal_basis(axis);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    normalize([
        ct * axis[0] + st * (cp * u[0] + sp * v[0]),
        ct * axis[1] + st * (cp * u[1] + sp * v[1]),
        ct * axis[2] + st * (cp * u[2] + sp * v[2]),
    ])
}

/// Angle between two unit vectors, in radians.
#[inline]
pub fn angle_between(a: Vec3, b: Vec3) -> f32 {
    // atan2 form stays accurate for nearly parallel vectors.
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Rotates unit vector `from` toward unit vector `to` by `angle` radians within
/// the plane they span. `angle` is expected to be at most the angle between them.
pub fn rotate_toward(from: Vec3, to: Vec3, angle: f32) -> Vec3 {
    let total = angle_between(from, to);
    if total < 1e-7 {
        return to;
    }
    let s = total.sin();
    let wa = (total - angle).sin() / s;
    let wb = angle.sin() / s;
    normalize([
        wa * from[0] + wb * to[0],
        wa * from[1] + wb * to[1],
        wa * from[2] + wb * to[2],
    ])
}
