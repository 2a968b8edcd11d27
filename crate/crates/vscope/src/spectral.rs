//! Full complex 3D FFT and the spectral calculus on top of it.
//!
//! Conventions (pinned by the oracle tests below):
//!   forward:  F[k] = sum_x f(x) exp(-i k . x)   (raw sum, no scaling)
//!   inverse:  f(x) = (1/n^3) sum_k F[k] exp(+i k . x)
//! Integer wavenumbers follow `Grid::k_index`; odd-order derivatives use
//! `Grid::k_deriv`, which sends the Nyquist mode to zero so derivatives of
//! real fields stay real.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::field::{ScalarField, StrainField, VectorField};
use crate::grid::Grid;
use crate::numeric::pairwise_sum_fn;

/// Cached FFT plans plus scratch for one grid size. Not `Sync` (interior
/// scratch); build one per thread of control.
pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: RefCell<Vec<Complex64>>,
    plane: RefCell<Vec<Complex64>>,
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Fft3 {
            n,
            fwd,
            inv,
            scratch: RefCell::new(vec![Complex64::default(); scratch_len]),
            plane: RefCell::new(vec![Complex64::default(); n * n]),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place 3D transform, axis by axis. The x pass works on contiguous
    /// lines; y and z go through an n x n transpose buffer to keep the 1D
    /// kernels on unit stride.
    pub fn transform3(&self, buf: &mut [Complex64], inverse: bool) {
        self.transform3_noscale(buf, inverse);
        if inverse {
            let s = 1.0 / (self.n * self.n * self.n) as f64;
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Same passes without the inverse 1/n^3 sweep; callers fold the factor
    /// into whatever touches the buffer next.
    pub(crate) fn transform3_noscale(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n * n * n, "buffer size mismatch");
        let fft = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = self.scratch.borrow_mut();
        let mut plane = self.plane.borrow_mut();

        fft.process_with_scratch(buf, &mut scratch);

        for k in 0..n {
            let slab = &mut buf[k * n * n..(k + 1) * n * n];
            transpose_tiled(slab, &mut plane, n, n, n);
            fft.process_with_scratch(&mut plane, &mut scratch);
            transpose_tiled(&plane, slab, n, n, n);
        }

        // z rows live at stride n^2 in the volume; the same tiled transpose
        // lands them on unit stride, one (x, z) sheet per fixed y
        for j in 0..n {
            let sheet = &mut buf[n * j..];
            transpose_tiled(sheet, &mut plane, n, n * n, n);
            fft.process_with_scratch(&mut plane, &mut scratch);
            transpose_tiled(&plane, sheet, n, n, n * n);
        }
    }

    pub fn forward_scalar(&self, f: &ScalarField) -> SpectralScalar {
        let mut modes: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform3(&mut modes, false);
        SpectralScalar {
            grid: f.grid,
            modes,
        }
    }

    /// Real part of the inverse transform. For Hermitian mode sets the
    /// imaginary part is roundoff; it is dropped, not checked.
    pub fn inverse_scalar(&self, s: &SpectralScalar) -> ScalarField {
        let mut buf = s.modes.clone();
        self.transform3(&mut buf, true);
        ScalarField {
            grid: s.grid,
            values: buf.iter().map(|c| c.re).collect(),
        }
    }

    pub fn forward_vector(&self, u: &VectorField) -> SpectralVector {
        SpectralVector {
            grid: u.grid,
            x: self.forward_component(&u.x),
            y: self.forward_component(&u.y),
            z: self.forward_component(&u.z),
        }
    }

    pub fn inverse_vector(&self, v: &SpectralVector) -> VectorField {
        let run = |m: &Vec<Complex64>| {
            let mut buf = m.clone();
            self.transform3(&mut buf, true);
            buf.iter().map(|c| c.re).collect::<Vec<f64>>()
        };
        VectorField {
            grid: v.grid,
            x: run(&v.x),
            y: run(&v.y),
            z: run(&v.z),
        }
    }

    fn forward_component(&self, vals: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform3(&mut buf, false);
        buf
    }
}

#[derive(Debug, Clone)]
pub struct SpectralScalar {
    pub grid: Grid,
    pub modes: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct SpectralVector {
    pub grid: Grid,
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub z: Vec<Complex64>,
}

const TILE: usize = 8;

/// dst[c * ds + r] = src[r * ss + c] for r, c in 0..n, walked in TILE-wide
/// column panels so the source reads stay contiguous per row.
fn transpose_tiled(src: &[Complex64], dst: &mut [Complex64], n: usize, ss: usize, ds: usize) {
    // every unchecked index below is bounded by (n-1)*stride + n - 1
    assert!(
        n >= 1 && src.len() >= (n - 1) * ss + n && dst.len() >= (n - 1) * ds + n,
        "transpose bounds"
    );
    let mut cb = 0;
    while cb < n {
        let cw = TILE.min(n - cb);
        for r in 0..n {
            let base = r * ss + cb;
            for dc in 0..cw {
                unsafe {
                    *dst.get_unchecked_mut((cb + dc) * ds + r) = *src.get_unchecked(base + dc);
                }
            }
        }
        cb += TILE;
    }
}

/// d/d(axis) in mode space: multiply by i * k0 * k_deriv.
fn mode_deriv(grid: &Grid, modes: &[Complex64], axis: usize) -> Vec<Complex64> {
    let n = grid.n();
    let k0 = grid.k_unit();
    let mut out = vec![Complex64::default(); modes.len()];
    let mut idx = 0;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let kk = match axis {
                    0 => grid.k_deriv(i),
                    1 => grid.k_deriv(j),
                    _ => grid.k_deriv(k),
                } as f64
                    * k0;
                let c = modes[idx];
                out[idx] = Complex64::new(-kk * c.im, kk * c.re);
                idx += 1;
            }
        }
    }
    out
}

impl SpectralScalar {
    pub fn gradient(&self) -> SpectralVector {
        SpectralVector {
            grid: self.grid,
            x: mode_deriv(&self.grid, &self.modes, 0),
            y: mode_deriv(&self.grid, &self.modes, 1),
            z: mode_deriv(&self.grid, &self.modes, 2),
        }
    }

    /// -|k|^2 multiplier with the full (Nyquist-inclusive) wavenumber.
    pub fn laplacian(&self) -> SpectralScalar {
        let n = self.grid.n();
        let k0sq = self.grid.k_unit() * self.grid.k_unit();
        let mut modes = self.modes.clone();
        let mut idx = 0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (kx, ky, kz) = (
                        self.grid.k_index(i) as f64,
                        self.grid.k_index(j) as f64,
                        self.grid.k_index(k) as f64,
                    );
                    modes[idx] *= -(kx * kx + ky * ky + kz * kz) * k0sq;
                    idx += 1;
                }
            }
        }
        SpectralScalar {
            grid: self.grid,
            modes,
        }
    }

    pub fn dealias(&mut self) {
        dealias_modes(&self.grid, &mut self.modes);
    }

    /// Parseval form of the L2 norm squared (integral of |f|^2).
    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.grid.spacing();
        let scale = h * h * h / self.grid.len() as f64;
        pairwise_sum_fn(self.modes.len(), &|i| self.modes[i].norm_sqr()) * scale
    }
}

/// 2/3-rule mask: zero every mode with |k_index| > floor(n/3) on any axis.
pub fn dealias_modes(grid: &Grid, modes: &mut [Complex64]) {
    let n = grid.n();
    let cut = (n / 3) as i64;
    let mut idx = 0;
    for k in 0..n {
        let gz = grid.k_index(k).abs() > cut;
        for j in 0..n {
            let gy = gz || grid.k_index(j).abs() > cut;
            for i in 0..n {
                if gy || grid.k_index(i).abs() > cut {
                    modes[idx] = Complex64::default();
                }
                idx += 1;
            }
        }
    }
}

impl SpectralVector {
    pub fn zeros(grid: Grid) -> Self {
        let z = vec![Complex64::default(); grid.len()];
        SpectralVector {
            grid,
            x: z.clone(),
            y: z.clone(),
            z,
        }
    }

    pub fn component(&self, a: usize) -> &[Complex64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("component index {a} out of range"),
        }
    }

    pub fn divergence(&self) -> SpectralScalar {
        let dx = mode_deriv(&self.grid, &self.x, 0);
        let dy = mode_deriv(&self.grid, &self.y, 1);
        let dz = mode_deriv(&self.grid, &self.z, 2);
        let modes = (0..dx.len()).map(|i| dx[i] + dy[i] + dz[i]).collect();
        SpectralScalar {
            grid: self.grid,
            modes,
        }
    }

    pub fn curl(&self) -> SpectralVector {
        let n = self.grid.n();
        let k0 = self.grid.k_unit();
        let len = self.x.len();
        let mut out = SpectralVector {
            grid: self.grid,
            x: Vec::with_capacity(len),
            y: Vec::with_capacity(len),
            z: Vec::with_capacity(len),
        };
        let mul_ik = |k: f64, c: Complex64| Complex64::new(-k * c.im, k * c.re);
        let mut idx = 0;
        for k in 0..n {
            let kz = self.grid.k_deriv(k) as f64 * k0;
            for j in 0..n {
                let ky = self.grid.k_deriv(j) as f64 * k0;
                for i in 0..n {
                    let kx = self.grid.k_deriv(i) as f64 * k0;
                    out.x.push(mul_ik(ky, self.z[idx]) - mul_ik(kz, self.y[idx]));
                    out.y.push(mul_ik(kz, self.x[idx]) - mul_ik(kx, self.z[idx]));
                    out.z.push(mul_ik(kx, self.y[idx]) - mul_ik(ky, self.x[idx]));
                    idx += 1;
                }
            }
        }
        out
    }

    /// Leray projection onto divergence-free fields: u - k (k.u)/|k|^2,
    /// with the derivative wavenumber so that divergence() of the result
    /// vanishes identically. Modes with k_deriv = 0 on all axes pass through.
    pub fn project_div_free(&mut self) {
        let n = self.grid.n();
        let mut idx = 0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (kx, ky, kz) = (
                        self.grid.k_deriv(i) as f64,
                        self.grid.k_deriv(j) as f64,
                        self.grid.k_deriv(k) as f64,
                    );
                    let k2 = kx * kx + ky * ky + kz * kz;
                    if k2 > 0.0 {
                        let dot = kx * self.x[idx] + ky * self.y[idx] + kz * self.z[idx];
                        let f = dot / k2;
                        self.x[idx] -= kx * f;
                        self.y[idx] -= ky * f;
                        self.z[idx] -= kz * f;
                    }
                    idx += 1;
                }
            }
        }
    }

    pub fn dealias(&mut self) {
        dealias_modes(&self.grid, &mut self.x);
        dealias_modes(&self.grid, &mut self.y);
        dealias_modes(&self.grid, &mut self.z);
    }

    /// Single pass equal to dealias() followed by project_div_free();
    /// both act mode by mode, so the fusion changes nothing.
    pub fn dealias_project(&mut self) {
        let n = self.grid.n();
        let cut = (n / 3) as i64;
        let mut idx = 0;
        for k in 0..n {
            let gz = self.grid.k_index(k).abs() > cut;
            let kz = self.grid.k_deriv(k) as f64;
            for j in 0..n {
                let gy = gz || self.grid.k_index(j).abs() > cut;
                let ky = self.grid.k_deriv(j) as f64;
                for i in 0..n {
                    if gy || self.grid.k_index(i).abs() > cut {
                        self.x[idx] = Complex64::default();
                        self.y[idx] = Complex64::default();
                        self.z[idx] = Complex64::default();
                        idx += 1;
                        continue;
                    }
                    let kx = self.grid.k_deriv(i) as f64;
                    let k2 = kx * kx + ky * ky + kz * kz;
                    if k2 > 0.0 {
                        let dot = kx * self.x[idx] + ky * self.y[idx] + kz * self.z[idx];
                        let f = dot / k2;
                        self.x[idx] -= kx * f;
                        self.y[idx] -= ky * f;
                        self.z[idx] -= kz * f;
                    }
                    idx += 1;
                }
            }
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.grid.spacing();
        let scale = h * h * h / self.grid.len() as f64;
        let f = |m: &Vec<Complex64>| pairwise_sum_fn(m.len(), &|i| m[i].norm_sqr());
        (f(&self.x) + f(&self.y) + f(&self.z)) * scale
    }
}

/// Vorticity omega = curl u, computed spectrally.
pub fn curl_field(fft: &Fft3, u: &VectorField) -> VectorField {
    fft.inverse_vector(&fft.forward_vector(u).curl())
}

pub fn gradient_field(fft: &Fft3, s: &ScalarField) -> VectorField {
    fft.inverse_vector(&fft.forward_scalar(s).gradient())
}

pub fn laplacian_field(fft: &Fft3, s: &ScalarField) -> ScalarField {
    fft.inverse_scalar(&fft.forward_scalar(s).laplacian())
}

fn strain_from_modes(fft: &Fft3, uh: &SpectralVector) -> StrainField {
    let g = uh.grid;
    let d = |m: &[Complex64], axis: usize| mode_deriv(&g, m, axis);
    let inv = |m: Vec<Complex64>| {
        let mut buf = m;
        fft.transform3(&mut buf, true);
        buf.iter().map(|c| c.re).collect::<Vec<f64>>()
    };
    let half = |a: Vec<Complex64>, b: Vec<Complex64>| {
        (0..a.len())
            .map(|i| 0.5 * (a[i] + b[i]))
            .collect::<Vec<Complex64>>()
    };
    StrainField {
        grid: g,
        xx: inv(d(&uh.x, 0)),
        yy: inv(d(&uh.y, 1)),
        zz: inv(d(&uh.z, 2)),
        xy: inv(half(d(&uh.y, 0), d(&uh.x, 1))),
        xz: inv(half(d(&uh.z, 0), d(&uh.x, 2))),
        yz: inv(half(d(&uh.z, 1), d(&uh.y, 2))),
    }
}

/// Rate-of-strain tensor of u.
pub fn strain_field(fft: &Fft3, u: &VectorField) -> StrainField {
    strain_from_modes(fft, &fft.forward_vector(u))
}

/// Vortex-stretching density (omega . grad) u . omega via the velocity
/// gradient, term by term.
pub fn vst_direct(fft: &Fft3, u: &VectorField) -> Result<ScalarField> {
    let uh = fft.forward_vector(u);
    let w = fft.inverse_vector(&uh.curl());
    let len = u.grid.len();
    let mut acc = vec![0.0; len];
    for jc in 0..3 {
        let uj = uh.component(jc);
        let wj = w.component(jc);
        for ic in 0..3 {
            let mut buf = mode_deriv(&u.grid, uj, ic);
            fft.transform3(&mut buf, true);
            let wi = w.component(ic);
            for p in 0..len {
                acc[p] += wi[p] * buf[p].re * wj[p];
            }
        }
    }
    ScalarField::from_values(u.grid, acc)
}

/// Same density through the symmetric strain route: S omega . omega.
/// Kept algebraically separate from `vst_direct` on purpose.
pub fn vst_strain(fft: &Fft3, u: &VectorField) -> Result<ScalarField> {
    let uh = fft.forward_vector(u);
    let w = fft.inverse_vector(&uh.curl());
    let s = strain_from_modes(fft, &uh);
    s.stretch_against(&w)
}

/// Pointwise sum of squares of all nine first derivatives of v.
pub fn grad_sq_density(fft: &Fft3, v: &VectorField) -> ScalarField {
    let vh = fft.forward_vector(v);
    let len = v.grid.len();
    let mut acc = vec![0.0; len];
    for comp in 0..3 {
        for axis in 0..3 {
            let mut buf = mode_deriv(&v.grid, vh.component(comp), axis);
            fft.transform3(&mut buf, true);
            for p in 0..len {
                acc[p] += buf[p].re * buf[p].re;
            }
        }
    }
    ScalarField {
        grid: v.grid,
        values: acc,
    }
}

/// ||div u||_2 relative to ||grad u||_2 (both via Parseval). Zero fields
/// report zero.
pub fn divergence_rel(fft: &Fft3, u: &VectorField) -> f64 {
    let uh = fft.forward_vector(u);
    let div = uh.divergence().l2_norm_sq().sqrt();
    let mut grad_sq = 0.0;
    for comp in 0..3 {
        for axis in 0..3 {
            let d = SpectralScalar {
                grid: u.grid,
                modes: mode_deriv(&u.grid, uh.component(comp), axis),
            };
            grad_sq += d.l2_norm_sq();
        }
    }
    let denom = grad_sq.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        div / denom
    }
}
