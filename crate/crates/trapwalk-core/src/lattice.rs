//! Lattice geometry: points of Z^d, signed directions, and canonical
//! nearest-neighbour edges.
//!
//! Points are fixed-width `[i64; MAX_DIM]` so trajectories stay `Copy`;
//! coordinates beyond the active dimension are always zero.

use serde::{Deserialize, Serialize};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// A vertex of Z^d. Coordinates at indices >= d must be zero.
pub type Point = [i64; MAX_DIM];

/// The origin.
pub const ORIGIN: Point = [0; MAX_DIM];

/// Signed unit direction: `0..d` are +e_1..+e_d, `d..2d` are -e_1..-e_d.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dir(pub u8);

impl Dir {
    /// Coordinate axis this direction moves along.
    #[inline]
    pub fn axis(self, dim: usize) -> usize {
        let j = self.0 as usize;
        if j < dim {
            j
        } else {
            j - dim
        }
    }

    /// +1 or -1 sign of the move.
    #[inline]
    pub fn sign(self, dim: usize) -> i64 {
        if (self.0 as usize) < dim {
            1
        } else {
            -1
        }
    }

    /// The opposite direction.
    #[inline]
    pub fn flip(self, dim: usize) -> Dir {
        let j = self.0 as usize;
        if j < dim {
            Dir((j + dim) as u8)
        } else {
            Dir((j - dim) as u8)
        }
    }
}

/// `x + e` for a signed direction.
#[inline]
pub fn step(x: Point, dir: Dir, dim: usize) -> Point {
    let mut y = x;
    y[dir.axis(dim)] += dir.sign(dim);
    y
}

/// All 2d signed directions for dimension `dim`.
#[inline]
pub fn directions(dim: usize) -> impl Iterator<Item = Dir> {
    (0..2 * dim as u8).map(Dir)
}

/// Dot product of a lattice point with a real vector.
#[inline]
pub fn dot(x: Point, v: &[f64; MAX_DIM]) -> f64 {
    let mut s = 0.0;
    for i in 0..MAX_DIM {
        s += x[i] as f64 * v[i];
    }
    s
}

/// Uniform-norm distance between two points.
pub fn linf(x: Point, y: Point) -> i64 {
    (0..MAX_DIM).map(|i| (x[i] - y[i]).abs()).max().unwrap()
}

/// A nearest-neighbour edge of Z^d in canonical form: stored as its lower
/// endpoint (the one with the smaller coordinate on `axis`) plus the axis.
/// For unit edges this coincides with "lexicographically smaller endpoint
/// first", so `canonical([x,y]) == canonical([y,x])` by construction.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticeEdge {
    /// Endpoint with the smaller coordinate along `axis`.
    pub lower: Point,
    /// Coordinate axis the edge spans.
    pub axis: u8,
}

/// Error for endpoint pairs that are not nearest neighbours.
#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
#[error("not a nearest-neighbour edge: {0:?} -- {1:?}")]
pub struct NotAnEdge(pub Point, pub Point);

impl LatticeEdge {
    /// Canonical edge between two adjacent vertices, in either order.
    pub fn between(x: Point, y: Point) -> Result<Self, NotAnEdge> {
        let mut axis = None;
        for i in 0..MAX_DIM {
            match (y[i] - x[i]).abs() {
                0 => {}
                1 if axis.is_none() => axis = Some(i),
                _ => return Err(NotAnEdge(x, y)),
            }
        }
        let axis = axis.ok_or(NotAnEdge(x, y))?;
        let lower = if x[axis] < y[axis] { x } else { y };
        Ok(LatticeEdge {
            lower,
            axis: axis as u8,
        })
    }

    /// Edge from a vertex along a signed direction.
    #[inline]
    pub fn from_step(x: Point, dir: Dir, dim: usize) -> Self {
        let axis = dir.axis(dim);
        let lower = if dir.sign(dim) > 0 {
            x
        } else {
            let mut l = x;
            l[axis] -= 1;
            l
        };
        LatticeEdge {
            lower,
            axis: axis as u8,
        }
    }

    /// Both endpoints, lower first.
    #[inline]
    pub fn endpoints(&self) -> (Point, Point) {
        let mut upper = self.lower;
        upper[self.axis as usize] += 1;
        (self.lower, upper)
    }

    /// True if `x` is one of the two endpoints.
    #[inline]
    pub fn touches(&self, x: Point) -> bool {
        let (a, b) = self.endpoints();
        x == a || x == b
    }

    /// The 2(2d-1) edges sharing exactly one endpoint with `self`.
    pub fn adjacent_edges(&self, dim: usize) -> Vec<LatticeEdge> {
        let (a, b) = self.endpoints();
        let mut out = Vec::with_capacity(2 * (2 * dim - 1));
        for &v in &[a, b] {
            for d in directions(dim) {
                let e = LatticeEdge::from_step(v, d, dim);
                if e != *self {
                    out.push(e);
                }
            }
        }
        out
    }
}

/// Width of a vertex set: max over axes of (max coordinate - min coordinate).
pub fn width<'a>(members: impl IntoIterator<Item = &'a Point>) -> i64 {
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    let mut any = false;
    for p in members {
        any = true;
        for i in 0..MAX_DIM {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    if !any {
        return 0;
    }
    (0..MAX_DIM).map(|i| hi[i] - lo[i]).max().unwrap()
}
