//! Axis-aligned boxes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        (self.max - self.min) * 0.5
    }

    pub fn top(&self) -> f64 {
        self.max.z
    }

    /// Interiors intersect by more than `eps` on every axis. Touching faces
    /// do not count.
    pub fn overlaps(&self, other: &Aabb, eps: f64) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] - eps && other.min[i] < self.max[i] - eps)
    }

    /// Footprints (x and y only) intersect by more than `eps`.
    pub fn overlaps_xy(&self, other: &Aabb, eps: f64) -> bool {
        (0..2).all(|i| self.min[i] < other.max[i] - eps && other.min[i] < self.max[i] - eps)
    }

    /// Point strictly inside, by more than `eps` from every face.
    pub fn contains_strict(&self, p: &Vector3<f64>, eps: f64) -> bool {
        (0..3).all(|i| p[i] > self.min[i] + eps && p[i] < self.max[i] - eps)
    }

    /// Point inside or on the boundary, with `eps` slack.
    pub fn contains(&self, p: &Vector3<f64>, eps: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - eps && p[i] <= self.max[i] + eps)
    }

    pub fn contains_xy(&self, p: &Vector3<f64>, eps: f64) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] - eps && p[i] <= self.max[i] + eps)
    }

    /// Euclidean distance from a point to the box (0 inside).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let d = Vector3::from_fn(|i, _| (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]));
        d.norm()
    }

    pub fn translated(&self, by: &Vector3<f64>) -> Aabb {
        Aabb::new(self.min + by, self.max + by)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Aabb {
        Aabb::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn touching_is_not_overlapping() {
        let b = unit().translated(&Vector3::new(1.0, 0.0, 0.0));
        assert!(!unit().overlaps(&b, 1e-9));
        let c = unit().translated(&Vector3::new(0.5, 0.5, 0.5));
        assert!(unit().overlaps(&c, 1e-9));
    }

    #[test]
    fn point_distance() {
        assert_eq!(unit().distance_to(&Vector3::new(0.5, 0.5, 0.5)), 0.0);
        assert!((unit().distance_to(&Vector3::new(0.5, 0.5, 1.03)) - 0.03).abs() < 1e-12);
        assert!((unit().distance_to(&Vector3::new(2.0, 2.0, 0.5)) - 2f64.sqrt()).abs() < 1e-12);
    }
}
