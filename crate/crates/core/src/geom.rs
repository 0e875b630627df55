//! Minimal 3-vector helpers.

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn around(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            min: sub(center, half_extents),
            max: add(center, half_extents),
        }
    }

    /// True when `inner` lies within `self`, allowing `slack` on every face.
    pub fn contains(&self, inner: &Aabb, slack: f64) -> bool {
        (0..3).all(|i| inner.min[i] >= self.min[i] - slack && inner.max[i] <= self.max[i] + slack)
    }

    /// True when the x/y footprints intersect with positive area.
    pub fn overlaps_xy(&self, other: &Aabb) -> bool {
        (0..2).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }
}
