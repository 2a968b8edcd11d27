use crate::error::{Result, VscopeError};
use crate::grid::Grid;
use crate::numeric::pairwise_sum;

/// Scalar samples on a periodic grid, x-fastest.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Vector samples, component-planar: three scalar arrays sharing one grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Symmetric rate-of-strain tensor samples (6 independent components).
#[derive(Debug, Clone)]
pub struct StrainField {
    pub grid: Grid,
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub zz: Vec<f64>,
    pub xy: Vec<f64>,
    pub xz: Vec<f64>,
    pub yz: Vec<f64>,
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = grid.position(i, j, k);
                    values.push(f(p[0], p[1], p[2]));
                }
            }
        }
        ScalarField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(VscopeError::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if !all_finite(&values) {
            return Err(VscopeError::NonFinite("scalar field samples".into()));
        }
        Ok(ScalarField { grid, values })
    }

    /// Node-quadrature integral: sum * h^3. Exact for band-limited fields.
    pub fn integral(&self) -> f64 {
        let h = self.grid.spacing();
        pairwise_sum(&self.values) * h * h * h
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.grid.spacing();
        let n = self.values.len();
        crate::numeric::pairwise_sum_fn(n, &|i| self.values[i] * self.values[i]) * h * h * h
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Periodic trilinear interpolation.
    pub fn interp(&self, p: [f64; 3]) -> f64 {
        let n = self.grid.n();
        let h = self.grid.spacing();
        let mut c = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let s = (p[a] / h).rem_euclid(n as f64);
            let i0 = s.floor() as usize % n;
            c[a] = i0;
            f[a] = s - s.floor();
        }
        let (i0, j0, k0) = (c[0], c[1], c[2]);
        let (i1, j1, k1) = ((i0 + 1) % n, (j0 + 1) % n, (k0 + 1) % n);
        let v = |i: usize, j: usize, k: usize| self.values[self.grid.idx(i, j, k)];
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(v(i0, j0, k0), v(i1, j0, k0), f[0]);
        let c10 = lerp(v(i0, j1, k0), v(i1, j1, k0), f[0]);
        let c01 = lerp(v(i0, j0, k1), v(i1, j0, k1), f[0]);
        let c11 = lerp(v(i0, j1, k1), v(i1, j1, k1), f[0]);
        let c0 = lerp(c00, c10, f[1]);
        let c1 = lerp(c01, c11, f[1]);
        lerp(c0, c1, f[2])
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let z = vec![0.0; grid.len()];
        VectorField {
            grid,
            x: z.clone(),
            y: z.clone(),
            z,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> [f64; 3]) -> Self {
        let n = grid.n();
        let len = grid.len();
        let (mut x, mut y, mut z) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = grid.position(i, j, k);
                    let v = f(p[0], p[1], p[2]);
                    x.push(v[0]);
                    y.push(v[1]);
                    z.push(v[2]);
                }
            }
        }
        VectorField { grid, x, y, z }
    }

    pub fn from_components(grid: Grid, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        for (name, c) in [("x", &x), ("y", &y), ("z", &z)] {
            if c.len() != grid.len() {
                return Err(VscopeError::GridMismatch(format!(
                    "component {name}: expected {} samples, got {}",
                    grid.len(),
                    c.len()
                )));
            }
            if !all_finite(c) {
                return Err(VscopeError::NonFinite(format!("vector component {name}")));
            }
        }
        Ok(VectorField { grid, x, y, z })
    }

    pub fn component(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("component index {a} out of range"),
        }
    }

    /// |v|^2 at every node.
    pub fn magnitude_sq(&self) -> ScalarField {
        let values = (0..self.x.len())
            .map(|i| self.x[i] * self.x[i] + self.y[i] * self.y[i] + self.z[i] * self.z[i])
            .collect();
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn magnitude(&self) -> ScalarField {
        let mut m = self.magnitude_sq();
        for v in &mut m.values {
            *v = v.sqrt();
        }
        m
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.x.len()).fold(0.0f64, |m, i| {
            m.max(self.x[i] * self.x[i] + self.y[i] * self.y[i] + self.z[i] * self.z[i])
        })
        .sqrt()
    }

    /// Kinetic energy (1/2) integral of |v|^2.
    pub fn energy(&self) -> f64 {
        0.5 * self.magnitude_sq().integral()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.x) && all_finite(&self.y) && all_finite(&self.z)
    }
}

impl StrainField {
    /// S omega . omega, the vortex-stretching density through the strain route.
    pub fn stretch_against(&self, w: &VectorField) -> Result<ScalarField> {
        self.grid.same_as(&w.grid)?;
        let values = (0..self.xx.len())
            .map(|i| {
                let (wx, wy, wz) = (w.x[i], w.y[i], w.z[i]);
                self.xx[i] * wx * wx
                    + self.yy[i] * wy * wy
                    + self.zz[i] * wz * wz
                    + 2.0 * (self.xy[i] * wx * wy + self.xz[i] * wx * wz + self.yz[i] * wy * wz)
            })
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }
}
