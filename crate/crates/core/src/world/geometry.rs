use std::fmt;

use serde::{Deserialize, Serialize};

/// A point on the integer block lattice. Serializes as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct Pos {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// Euclidean distance in blocks.
    pub fn dist(&self, other: &Pos) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        let dz = f64::from(self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// One movement step of at most `speed` blocks toward `target`.
    pub fn step_toward(&self, target: &Pos, speed: u32) -> Pos {
        let d = self.dist(target);
        if d <= f64::from(speed) {
            return *target;
        }
        let scale = f64::from(speed) / d;
        let mv = |from: i32, to: i32| from + (f64::from(to - from) * scale).round() as i32;
        Pos::new(mv(self.x, target.x), mv(self.y, target.y), mv(self.z, target.z))
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Pos {
        Pos::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

impl From<[i32; 3]> for Pos {
    fn from(v: [i32; 3]) -> Self {
        Pos::new(v[0], v[1], v[2])
    }
}

impl From<Pos> for [i32; 3] {
    fn from(p: Pos) -> Self {
        [p.x, p.y, p.z]
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.x, self.y, self.z)
    }
}

/// Steps needed to come within `reach` of a point `dist` blocks away.
pub fn travel_steps(dist: f64, reach: f64, speed: u32) -> u32 {
    let remaining = (dist - reach).max(0.0);
    (remaining / f64::from(speed)).ceil() as u32
}

/// Axis-aligned box of lattice points, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub min: Pos,
    pub max: Pos,
}

impl Region {
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a Pos>) -> Option<Region> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = Pos::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
            max = Pos::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        }
        Some(Region { min, max })
    }

    pub fn point(p: Pos) -> Region {
        Region { min: p, max: p }
    }

    pub fn contains(&self, p: &Pos) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_toward_arrives_within_speed() {
        let a = Pos::new(0, 0, 0);
        assert_eq!(a.step_toward(&Pos::new(3, 4, 0), 5), Pos::new(3, 4, 0));
    }

    #[test]
    fn step_toward_advances_at_most_speed() {
        let a = Pos::new(0, 0, 0);
        let t = Pos::new(20, 0, 0);
        let b = a.step_toward(&t, 5);
        assert_eq!(b, Pos::new(5, 0, 0));
        assert!(b.dist(&t) < a.dist(&t));
    }

    #[test]
    fn travel_matches_furnace_example() {
        // furnace 10 blocks away, speed 5
        assert_eq!(travel_steps(10.0, 3.0, 5), 2);
        assert_eq!(travel_steps(2.0, 3.0, 5), 0);
    }

    #[test]
    fn pos_serializes_as_array() {
        let s = serde_json::to_string(&Pos::new(-9, -60, 0)).unwrap();
        assert_eq!(s, "[-9,-60,0]");
    }
}
