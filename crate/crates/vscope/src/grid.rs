use crate::error::{Result, VscopeError};
use serde::{Deserialize, Serialize};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Uniform periodic grid on [0, L)^3, n nodes per axis, x-fastest storage:
/// linear index = i + n*(j + n*k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    box_length: f64,
}

impl Grid {
    pub fn new(n: usize, box_length: f64) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(VscopeError::InvalidGrid(format!(
                "n must be even and >= 8, got {n}"
            )));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(VscopeError::InvalidGrid(format!(
                "box_length must be finite and positive, got {box_length}"
            )));
        }
        Ok(Grid { n, box_length })
    }

    /// 2*pi box, the default domain.
    pub fn unit_torus(n: usize) -> Result<Self> {
        Grid::new(n, TWO_PI)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.n;
        let j = (idx / self.n) % self.n;
        let k = idx / (self.n * self.n);
        (i, j, k)
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing();
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }

    /// Minimum-image representative of d in [-L/2, L/2).
    #[inline]
    pub fn wrap(&self, d: f64) -> f64 {
        let l = self.box_length;
        let mut r = d.rem_euclid(l);
        if r >= 0.5 * l {
            r -= l;
        }
        r
    }

    /// Minimum-image displacement a - b.
    #[inline]
    pub fn displacement(&self, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            self.wrap(a[0] - b[0]),
            self.wrap(a[1] - b[1]),
            self.wrap(a[2] - b[2]),
        ]
    }

    #[inline]
    pub fn distance2(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let d = self.displacement(a, b);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(VscopeError::GridMismatch(format!(
                "expected n = {}, L = {}, got n = {}, L = {}",
                self.n, self.box_length, other.n, other.box_length
            )));
        }
        Ok(())
    }

    /// Integer wavenumber for storage index j: 0..n/2, then negative.
    /// The Nyquist index n/2 reports +n/2 (its sign is ambiguous).
    #[inline]
    pub fn k_index(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Wavenumber used for odd-order derivatives: the Nyquist mode maps to 0
    /// so d/dx of a real field stays real.
    #[inline]
    pub fn k_deriv(&self, j: usize) -> i64 {
        if j == self.n / 2 {
            0
        } else {
            self.k_index(j)
        }
    }

    /// Physical wavenumber unit 2*pi/L.
    pub fn k_unit(&self) -> f64 {
        TWO_PI / self.box_length
    }
}
