//! Oriented-box contact generation.
//!
//! Box/box pairs use the separating-axis test over the 15 candidate axes
//! (3 face normals per box plus 9 edge cross products). Face contacts are
//! built by clipping the incident face against the side planes of the
//! reference face; edge contacts produce a single closest-point contact.
//! Boxes against the ground plane `z = 0` use the submerged vertices.

use alloc::vec::Vec;

use crate::math::{Mat3, Quat, Vec3};

/// A box with world pose. Local axes are the columns of `rot`.
#[derive(Clone, Copy, Debug)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rot: Mat3,
    pub half: Vec3,
}

impl OrientedBox {
    pub fn new(center: Vec3, orientation: Quat, half: Vec3) -> Self {
        OrientedBox {
            center,
            rot: orientation.to_mat3(),
            half,
        }
    }

    #[inline]
    pub fn axis(&self, i: usize) -> Vec3 {
        self.rot.col(i)
    }

    /// Half-length of the projection onto unit direction `n`.
    #[inline]
    pub fn projected_radius(&self, n: Vec3) -> f64 {
        self.half.x * self.axis(0).dot(n).abs()
            + self.half.y * self.axis(1).dot(n).abs()
            + self.half.z * self.axis(2).dot(n).abs()
    }

    /// The 8 corners; bit `k` of the index selects the sign along local axis `k`.
    pub fn vertices(&self) -> [Vec3; 8] {
        let mut out = [Vec3::ZERO; 8];
        for (i, v) in out.iter_mut().enumerate() {
            let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            let local = Vec3::new(s(0) * self.half.x, s(1) * self.half.y, s(2) * self.half.z);
            *v = self.center + self.rot.mul_vec(local);
        }
        out
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let r = Vec3::new(
            self.projected_radius(Vec3::X),
            self.projected_radius(Vec3::Y),
            self.projected_radius(Vec3::Z),
        );
        (self.center - r, self.center + r)
    }

    /// Corners of the face with outward normal `sign * axis(i)`, counter-clockwise
    /// seen from outside.
    pub fn face(&self, i: usize, sign: f64) -> [Vec3; 4] {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let n = self.axis(i) * (sign * self.half[i]);
        let u = self.axis(j) * self.half[j];
        let v = self.axis(k) * (sign * self.half[k]);
        let c = self.center + n;
        [c - u - v, c + u - v, c + u + v, c - u + v]
    }
}

/// A contact point between body A and body B.
///
/// `normal` points from A towards B; `penetration` is positive for
/// overlapping surfaces and negative for speculative (separated) points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub point: Vec3,
    pub normal: Vec3,
    pub penetration: f64,
}

/// Largest signed separation over the 15 candidate axes: positive means the
/// boxes are disjoint by at least that distance, negative is the smallest
/// overlap depth.
pub fn separation(a: &OrientedBox, b: &OrientedBox) -> f64 {
    sat(a, b).map_or(f64::INFINITY, |q| q.sep)
}

#[derive(Clone, Copy, Debug)]
enum Feature {
    FaceA(usize),
    FaceB(usize),
    Edges(usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct Query {
    sep: f64,
    /// Unit axis oriented from A to B.
    axis: Vec3,
    feature: Feature,
}

/// Relative preference of face contacts over edge contacts.
const EDGE_TOLERANCE: f64 = 1e-4;
const FACE_B_TOLERANCE: f64 = 1e-9;

/// Separating-axis query. Returns `None` only for degenerate (non-finite) input.
fn sat(a: &OrientedBox, b: &OrientedBox) -> Option<Query> {
    let d = b.center - a.center;
    let test = |axis: Vec3| -> (f64, Vec3) {
        let dist = d.dot(axis);
        let oriented = if dist < 0.0 { -axis } else { axis };
        (
            dist.abs() - a.projected_radius(axis) - b.projected_radius(axis),
            oriented,
        )
    };

    let mut best_a: Option<Query> = None;
    for i in 0..3 {
        let (sep, axis) = test(a.axis(i));
        if best_a.is_none_or(|q| sep > q.sep) {
            best_a = Some(Query {
                sep,
                axis,
                feature: Feature::FaceA(i),
            });
        }
    }
    let mut best_b: Option<Query> = None;
    for i in 0..3 {
        let (sep, axis) = test(b.axis(i));
        if best_b.is_none_or(|q| sep > q.sep) {
            best_b = Some(Query {
                sep,
                axis,
                feature: Feature::FaceB(i),
            });
        }
    }
    let mut best = best_a?;
    let qb = best_b?;
    if qb.sep > best.sep + FACE_B_TOLERANCE {
        best = qb;
    }
    if !best.sep.is_finite() {
        return None;
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = a.axis(i).cross(b.axis(j));
            let len = c.length();
            if len < 1e-6 {
                continue;
            }
            let (sep, axis) = test(c / len);
            if sep > best.sep + EDGE_TOLERANCE {
                best = Query {
                    sep,
                    axis,
                    feature: Feature::Edges(i, j),
                };
            }
        }
    }
    Some(best)
}

/// Clip a convex polygon to the half-space `n . p <= c`.
fn clip(poly: &[Vec3], n: Vec3, c: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    if poly.is_empty() {
        return out;
    }
    let mut prev = poly[poly.len() - 1];
    let mut prev_d = n.dot(prev) - c;
    for &cur in poly {
        let cur_d = n.dot(cur) - c;
        if cur_d <= 0.0 {
            if prev_d > 0.0 {
                out.push(prev + (cur - prev) * (prev_d / (prev_d - cur_d)));
            }
            out.push(cur);
        } else if prev_d <= 0.0 {
            out.push(prev + (cur - prev) * (prev_d / (prev_d - cur_d)));
        }
        prev = cur;
        prev_d = cur_d;
    }
    out
}

fn face_contacts(
    reference: &OrientedBox,
    incident: &OrientedBox,
    ref_axis: usize,
    n: Vec3,
    margin: f64,
    flip: bool,
) -> Vec<Contact> {
    // Incident face: the one most anti-parallel to n.
    let mut inc_axis = 0;
    let mut inc_dot = 0.0f64;
    for i in 0..3 {
        let d = incident.axis(i).dot(n);
        if d.abs() > inc_dot.abs() {
            inc_axis = i;
            inc_dot = d;
        }
    }
    let inc_sign = if inc_dot > 0.0 { -1.0 } else { 1.0 };
    let mut poly: Vec<Vec3> = incident.face(inc_axis, inc_sign).to_vec();

    for k in [(ref_axis + 1) % 3, (ref_axis + 2) % 3] {
        let u = reference.axis(k);
        let cu = u.dot(reference.center);
        let h = reference.half[k];
        poly = clip(&poly, u, cu + h);
        poly = clip(&poly, -u, -cu + h);
    }

    let face_offset = n.dot(reference.center) + reference.projected_radius(n);
    let normal = if flip { -n } else { n };
    let mut out: Vec<Contact> = Vec::with_capacity(poly.len());
    for p in poly {
        let s = n.dot(p) - face_offset;
        if s > margin {
            continue;
        }
        let point = p - n * (0.5 * s);
        if out
            .iter()
            .any(|c| (c.point - point).length_squared() < 1e-18)
        {
            continue;
        }
        out.push(Contact {
            point,
            normal,
            penetration: -s,
        });
    }
    out
}

/// Support edge of `b` along `dir`: midpoint of the edge parallel to axis `k`.
fn support_edge(b: &OrientedBox, k: usize, dir: Vec3) -> Vec3 {
    let mut p = b.center;
    for i in 0..3 {
        if i == k {
            continue;
        }
        let s = if b.axis(i).dot(dir) >= 0.0 { 1.0 } else { -1.0 };
        p += b.axis(i) * (s * b.half[i]);
    }
    p
}

/// Closest points of two infinite lines `p + s u`, `q + t v` (clamped to the edges).
fn edge_contact(
    a: &OrientedBox,
    b: &OrientedBox,
    i: usize,
    j: usize,
    n: Vec3,
    sep: f64,
) -> Contact {
    let pa = support_edge(a, i, n);
    let pb = support_edge(b, j, -n);
    let (u, v) = (a.axis(i), b.axis(j));
    let w = pa - pb;
    let (uu, uv, vv) = (u.dot(u), u.dot(v), v.dot(v));
    let (uw, vw) = (u.dot(w), v.dot(w));
    let den = uu * vv - uv * uv;
    let (mut s, mut t) = if den.abs() > 1e-12 {
        ((uv * vw - vv * uw) / den, (uu * vw - uv * uw) / den)
    } else {
        (0.0, 0.0)
    };
    s = s.clamp(-a.half[i], a.half[i]);
    t = t.clamp(-b.half[j], b.half[j]);
    let ca = pa + u * s;
    let cb = pb + v * t;
    Contact {
        point: (ca + cb) * 0.5,
        normal: n,
        penetration: -sep,
    }
}

/// Keep at most four points: the deepest, the farthest from it, then the two
/// that maximise the spanned area.
pub fn reduce_manifold(points: &mut Vec<Contact>) {
    if points.len() <= 4 {
        return;
    }
    let pick = |pts: &[Contact], score: &dyn Fn(&Contact) -> f64| -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in pts.iter().enumerate() {
            let s = score(c);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    };
    let mut kept = Vec::with_capacity(4);
    let i0 = pick(points, &|c| c.penetration);
    kept.push(points.swap_remove(i0));
    let p0 = kept[0].point;
    let i1 = pick(points, &|c| (c.point - p0).length_squared());
    kept.push(points.swap_remove(i1));
    let p1 = kept[1].point;
    let n = kept[0].normal;
    let i2 = pick(points, &|c| (p1 - p0).cross(c.point - p0).dot(n).abs());
    kept.push(points.swap_remove(i2));
    let p2 = kept[2].point;
    // Fourth point: largest triangle added against the current triangle's edges.
    let i3 = pick(points, &|c| {
        let q = c.point;
        let a1 = (p1 - p0).cross(q - p0).dot(n);
        let a2 = (p2 - p1).cross(q - p1).dot(n);
        let a3 = (p0 - p2).cross(q - p2).dot(n);
        let orient = (p1 - p0).cross(p2 - p0).dot(n).signum();
        -(a1 * orient).min(a2 * orient).min(a3 * orient)
    });
    kept.push(points.swap_remove(i3));
    *points = kept;
}

/// Full contact manifold (unreduced) between two boxes, including
/// speculative points whose separation is at most `margin`.
pub fn box_box_manifold(a: &OrientedBox, b: &OrientedBox, margin: f64) -> Vec<Contact> {
    let Some(q) = sat(a, b) else {
        return Vec::new();
    };
    if q.sep > margin {
        return Vec::new();
    }
    match q.feature {
        Feature::FaceA(i) => face_contacts(a, b, i, q.axis, margin, false),
        Feature::FaceB(i) => face_contacts(b, a, i, -q.axis, margin, true),
        Feature::Edges(i, j) => alloc::vec![edge_contact(a, b, i, j, q.axis, q.sep)],
    }
}

/// Contacts between two boxes: empty if separated, otherwise 1-4 points with
/// a common normal pointing from `a` to `b`. Touching faces count as contact.
pub fn detect_contacts(a: &OrientedBox, b: &OrientedBox) -> Vec<Contact> {
    let mut m = box_box_manifold(a, b, 0.0);
    reduce_manifold(&mut m);
    m
}

/// Contacts between the ground half-space `z <= 0` (body A) and a box (body B).
pub fn ground_manifold(b: &OrientedBox, margin: f64) -> Vec<Contact> {
    if b.center.z - b.projected_radius(Vec3::Z) > margin {
        return Vec::new();
    }
    b.vertices()
        .iter()
        .filter(|v| v.z <= margin)
        .map(|v| Contact {
            point: Vec3::new(v.x, v.y, 0.5 * v.z),
            normal: Vec3::Z,
            penetration: -v.z,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(center: Vec3) -> OrientedBox {
        OrientedBox::new(center, Quat::IDENTITY, Vec3::new(0.5, 0.5, 0.5))
    }

    #[test]
    fn separated_cubes_have_no_contacts() {
        assert!(detect_contacts(&cube(Vec3::ZERO), &cube(Vec3::new(3.0, 0.0, 0.0))).is_empty());
        assert!(
            (separation(&cube(Vec3::ZERO), &cube(Vec3::new(3.0, 0.0, 0.0))) - 2.0).abs() < 1e-12
        );
    }

    #[test]
    fn resting_cube_gives_four_kissing_contacts() {
        let c = detect_contacts(&cube(Vec3::ZERO), &cube(Vec3::new(0.0, 0.0, 1.0)));
        assert_eq!(c.len(), 4);
        for p in &c {
            assert_eq!(p.normal, Vec3::Z);
            assert_eq!(p.penetration, 0.0);
        }
    }

    #[test]
    fn overlapping_cubes_report_analytic_depth() {
        let c = detect_contacts(&cube(Vec3::ZERO), &cube(Vec3::new(0.0, 0.0, 0.99)));
        assert_eq!(c.len(), 4);
        for p in &c {
            assert!((p.penetration - 0.01).abs() < 1e-9, "{}", p.penetration);
            assert!((p.normal - Vec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn normal_points_from_a_to_b() {
        let c = detect_contacts(
            &cube(Vec3::new(0.0, 0.0, 1.0)),
            &cube(Vec3::new(0.0, 0.0, 0.02)),
        );
        assert!(!c.is_empty());
        assert!((c[0].normal + Vec3::Z).length() < 1e-12);
    }

    #[test]
    fn offset_stack_clips_to_overlap_region() {
        let c = detect_contacts(&cube(Vec3::ZERO), &cube(Vec3::new(0.7, 0.0, 1.0)));
        assert_eq!(c.len(), 4);
        for p in &c {
            assert!(p.point.x >= 0.2 - 1e-12 && p.point.x <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn rotated_cube_edge_contact() {
        let q = Quat::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.6);
        let b = OrientedBox::new(Vec3::new(0.0, 0.0, 1.2), q, Vec3::new(0.5, 0.5, 0.5));
        let sep = separation(&cube(Vec3::ZERO), &b);
        let c = detect_contacts(&cube(Vec3::ZERO), &b);
        if sep > 0.0 {
            assert!(c.is_empty());
        } else {
            assert!(!c.is_empty() && c.len() <= 4);
        }
    }

    #[test]
    fn ground_contacts_for_resting_box() {
        let c = ground_manifold(&cube(Vec3::new(0.0, 0.0, 0.5)), 0.0);
        assert_eq!(c.len(), 4);
        assert!(ground_manifold(&cube(Vec3::new(0.0, 0.0, 0.6)), 0.05).is_empty());
    }

    #[test]
    fn manifold_reduction_keeps_four() {
        let q = Quat::from_axis_angle(Vec3::Z, 0.5);
        let b = OrientedBox::new(Vec3::new(0.0, 0.0, 0.999), q, Vec3::new(0.5, 0.5, 0.5));
        let full = box_box_manifold(&cube(Vec3::ZERO), &b, 0.0);
        assert_eq!(full.len(), 8);
        assert_eq!(detect_contacts(&cube(Vec3::ZERO), &b).len(), 4);
    }
}
