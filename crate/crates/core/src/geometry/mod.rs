//! B-spline and NURBS patches, their element mesh and basis evaluation.

mod knots;
mod patch;

pub use knots::KnotVector;
pub use patch::{
    BasisEval, EdgeSample, Element, ElementSize, Face, GeomSample, HConvention, NurbsPatch2D,
};

/// One of the four sides of the parametric square (or of an element).
///
/// West is `u = min`, East `u = max`, South `v = min`, North `v = max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    West,
    East,
    South,
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

    /// Point on this face of [-1, 1]^2 with edge parameter `t` in [-1, 1].
    pub fn reference_point(self, t: f64) -> [f64; 2] {
        match self {
            Side::West => [-1.0, t],
            Side::East => [1.0, t],
            Side::South => [t, -1.0],
            Side::North => [t, 1.0],
        }
    }

    pub fn reference_normal(self) -> [f64; 2] {
        match self {
            Side::West => [-1.0, 0.0],
            Side::East => [1.0, 0.0],
            Side::South => [0.0, -1.0],
            Side::North => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::West => 0,
            Side::East => 1,
            Side::South => 2,
            Side::North => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::West => "west",
            Side::East => "east",
            Side::South => "south",
            Side::North => "north",
        }
    }

    /// True when the face runs along `v` (u held fixed).
    pub fn is_u_face(self) -> bool {
        matches!(self, Side::West | Side::East)
    }
}
