//! Small fixed-size vector helpers for 3-D points.

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    libm::sqrt(dist2(a, b))
}

/// Signed volume of the tetrahedron (p0, p1, p2, p3).
pub fn signed_volume(p: &[Point3; 4]) -> f64 {
    let a = sub(&p[1], &p[0]);
    let b = sub(&p[2], &p[0]);
    let c = sub(&p[3], &p[0]);
    dot(&a, &cross(&b, &c)) / 6.0
}

/// Local vertex pairs of the six tet edges, each with its opposite edge.
pub const EDGE_PAIRS: [((usize, usize), (usize, usize)); 6] = [
    ((0, 1), (2, 3)),
    ((0, 2), (1, 3)),
    ((0, 3), (1, 2)),
    ((1, 2), (0, 3)),
    ((1, 3), (0, 2)),
    ((2, 3), (0, 1)),
];

/// Interior dihedral angle along edge (k, l), between the faces holding i and j,
/// returned as (cos, sin).
pub fn dihedral_cos_sin(pk: &Point3, pl: &Point3, pi: &Point3, pj: &Point3) -> (f64, f64) {
    let e = sub(pl, pk);
    let e2 = dot(&e, &e);
    let project = |p: &Point3| {
        let v = sub(p, pk);
        sub(&v, &scale(&e, dot(&v, &e) / e2))
    };
    let u = project(pi);
    let w = project(pj);
    let nu = norm(&u);
    let nw = norm(&w);
    let c = dot(&u, &w) / (nu * nw);
    let s = norm(&cross(&u, &w)) / (nu * nw);
    (c, s)
}

/// The six interior dihedral angles of a tet, in radians.
pub fn dihedral_angles(p: &[Point3; 4]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (slot, &((i, j), (k, l))) in out.iter_mut().zip(EDGE_PAIRS.iter()) {
        let (c, s) = dihedral_cos_sin(&p[k], &p[l], &p[i], &p[j]);
        *slot = libm::atan2(s, c);
    }
    out
}
