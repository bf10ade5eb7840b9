//! Integer lattice `Z^D` for `2 <= D <= 5`.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

pub const MAX_DIMS: usize = 5;

/// Checks `2 <= dims <= MAX_DIMS`.
pub fn check_dims(dims: usize) -> Result<()> {
    if dims < 2 {
        return invalid(format!("dims must be at least 2, got {dims}"));
    }
    if dims > MAX_DIMS {
        return Err(crate::Error::Capacity {
            what: "dims",
            requested: dims,
            limit: MAX_DIMS,
        });
    }
    Ok(())
}

/// A lattice point. Coordinates beyond the active dimension are zero, so the
/// derived ordering is lexicographic in `x1, x2, ...`.
#[derive(
    Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Site(pub [i32; MAX_DIMS]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIMS]);

    pub fn new(coords: &[i32]) -> Site {
        assert!(coords.len() <= MAX_DIMS, "too many coordinates");
        let mut c = [0; MAX_DIMS];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    /// Unit vector `e_axis` (0-based axis).
    pub fn unit(axis: usize) -> Site {
        let mut c = [0; MAX_DIMS];
        c[axis] = 1;
        Site(c)
    }

    #[inline]
    pub fn coords(&self, dims: usize) -> &[i32] {
        &self.0[..dims]
    }

    #[inline]
    pub fn step(self, dir: Direction) -> Site {
        let mut c = self.0;
        c[dir.axis as usize] += if dir.positive { 1 } else { -1 };
        Site(c)
    }

    #[inline]
    pub fn l1(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    #[inline]
    pub fn linf(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    #[inline]
    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    #[inline]
    pub fn norm<T: Real>(&self) -> T {
        T::from_i64(self.norm_sq()).unwrap().sqrt()
    }

    /// `self . h` for a real vector of length `dims`.
    #[inline]
    pub fn dot<T: Real>(&self, h: &[T]) -> T {
        let mut acc = T::zero();
        for (c, &hv) in self.0.iter().zip(h) {
            if *c != 0 {
                acc += T::from_i32(*c).unwrap() * hv;
            }
        }
        acc
    }

    pub fn parity(&self) -> i32 {
        self.l1() & 1
    }
}

impl Add for Site {
    type Output = Site;
    #[inline]
    fn add(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a += b;
        }
        Site(c)
    }
}

impl Sub for Site {
    type Output = Site;
    #[inline]
    fn sub(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a -= b;
        }
        Site(c)
    }
}

impl Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.map(|c| -c))
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // trailing zeros are dropped; dims are not known here
        let last = self.0.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1).max(2);
        write!(f, "(")?;
        for (i, c) in self.0[..last].iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One of the `2D` unit steps `+e_i` / `-e_i`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Direction {
    pub axis: u8,
    pub positive: bool,
}

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Direction {
        Direction {
            axis: axis as u8,
            positive,
        }
    }

    /// Index in `0..2D`, ordered `+e1, -e1, +e2, -e2, ...`.
    #[inline]
    pub fn index(self) -> usize {
        2 * self.axis as usize + usize::from(!self.positive)
    }

    pub fn from_index(i: usize) -> Direction {
        Direction::new(i / 2, i.is_multiple_of(2))
    }

    pub fn reverse(self) -> Direction {
        Direction {
            axis: self.axis,
            positive: !self.positive,
        }
    }

    pub fn as_site(self) -> Site {
        Site::ORIGIN.step(self)
    }

    /// `e . h` for this step.
    #[inline]
    pub fn dot<T: Real>(self, h: &[T]) -> T {
        let v = h[self.axis as usize];
        if self.positive {
            v
        } else {
            -v
        }
    }
}

/// The `2D` nearest-neighbour steps in canonical order.
pub fn directions(dims: usize) -> impl Iterator<Item = Direction> + Clone {
    (0..2 * dims).map(Direction::from_index)
}

/// All sites with `|x|_inf <= radius` in lexicographic order.
pub fn box_sites(dims: usize, radius: i32) -> impl Iterator<Item = Site> {
    let side = (2 * radius + 1) as usize;
    let total = side.pow(dims as u32);
    (0..total).map(move |mut k| {
        let mut c = [0i32; MAX_DIMS];
        for i in (0..dims).rev() {
            c[i] = (k % side) as i32 - radius;
            k /= side;
        }
        Site(c)
    })
}

/// All sites with `|x|_1 <= radius`, in lexicographic order.
pub fn l1_ball(dims: usize, radius: i32) -> Vec<Site> {
    let mut out = Vec::new();
    let mut cur = [0i32; MAX_DIMS];
    fn rec(dims: usize, axis: usize, budget: i32, cur: &mut [i32; MAX_DIMS], out: &mut Vec<Site>) {
        if axis == dims {
            out.push(Site(*cur));
            return;
        }
        for c in -budget..=budget {
            cur[axis] = c;
            rec(dims, axis + 1, budget - c.abs(), cur, out);
        }
        cur[axis] = 0;
    }
    rec(dims, 0, radius, &mut cur, &mut out);
    out
}

/// Euclidean norm of a real vector.
pub fn vec_norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}
