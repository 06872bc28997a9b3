use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 16;

/// Uniform square grid on [-L, L]^2 with N nodes per side.
///
/// Node (i, j) sits at (-L + i h, -L + j h) with h = 2L/(N-1); storage is
/// row-major with `i` running fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    half_width: f64,
    n: usize,
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width must be positive and finite, got {half_width}")));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!("need at least {MIN_NODES} nodes per side, got {n}")));
        }
        Ok(Grid { half_width, n })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(i), self.coord(j)]
    }

    /// Distance (in nodes) to the nearest edge; 0 on the outermost ring.
    #[inline]
    pub fn ring(&self, i: usize, j: usize) -> usize {
        let m = self.n - 1;
        i.min(j).min(m - i).min(m - j)
    }

    /// Grid with the same extent and twice the resolution (h halves).
    pub fn refined(&self) -> Grid {
        Grid { half_width: self.half_width, n: 2 * self.n - 1 }
    }

    /// Fractional node coordinates of a physical point.
    pub fn locate(&self, x: [f64; 2]) -> [f64; 2] {
        let h = self.spacing();
        [(x[0] + self.half_width) / h, (x[1] + self.half_width) / h]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0].abs() <= self.half_width && x[1].abs() <= self.half_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_bad() {
        assert!(Grid::new(1.0, 15).is_err());
        assert!(Grid::new(0.0, 32).is_err());
        assert!(Grid::new(f64::NAN, 32).is_err());
        assert!(Grid::new(1.0, 16).is_ok());
    }

    #[test]
    fn geometry() {
        let g = Grid::new(8.0, 17).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.coord(0), -8.0);
        assert_eq!(g.coord(16), 8.0);
        assert_eq!(g.index(3, 2), 2 * 17 + 3);
        assert_eq!(g.ring(0, 5), 0);
        assert_eq!(g.ring(8, 8), 8);
        assert_eq!(g.ring(15, 8), 1);
        assert_eq!(g.refined().spacing(), 0.5);
    }
}
