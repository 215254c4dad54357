//! Small geometric helpers shared across the pipeline.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Guard used in every epsilon-protected division.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in iter {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extents().norm()
    }

    pub fn max_extent(&self) -> f64 {
        self.extents().max()
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Closest point on segment `[a, b]` to `p`, returned as the clamped
/// parameter and the distance.
pub fn project_to_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = a + ab * t;
    (t, (p - q).norm())
}

pub fn lerp(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    a + (b - a) * t
}

/// Even-odd point-in-polygon test on a closed 2D polygon.
pub fn point_in_polygon(point: (f64, f64), polygon: &[(f64, f64)]) -> bool {
    let (x, y) = point;
    let n = polygon.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > y) != (yj > y) {
            let x_cross = xi + (y - yi) / (yj - yi) * (xj - xi);
            if x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Any unit vector orthogonal to `v` (which must be non-zero).
pub fn any_orthogonal(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&helper).normalize()
}

/// Rotate `v` by the minimal rotation that takes unit vector `from` onto
/// unit vector `to` (Rodrigues, with the antiparallel case handled).
pub fn transport(v: &Vec3, from: &Vec3, to: &Vec3) -> Vec3 {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-15 {
        if c > 0.0 {
            return *v;
        }
        // half turn about any axis orthogonal to `from`
        let k = any_orthogonal(from);
        return k * (2.0 * k.dot(v)) - v;
    }
    let k = axis / s;
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

pub fn to_vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn to_array(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}
