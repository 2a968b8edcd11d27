//! Incompressible Navier-Stokes on the periodic box, velocity formulation.
//!
//! Time stepping is classical RK4 in integrating-factor (Lawson) form: the
//! diffusion semigroup exp(-nu |k|^2 t) is applied exactly in mode space,
//! RK4 handles only the projected, dealiased rotational nonlinearity
//! P dealias(u x omega). With the rotational form the nonlinear term is
//! pointwise orthogonal to u, so on the dealiased grid it contributes
//! exactly zero to the energy balance and the discrete energy can only
//! decay.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VscopeError};
use crate::field::VectorField;
use crate::grid::Grid;
use crate::spectral::{Fft3, SpectralVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialCondition {
    /// u = (sin x cos y, -cos x sin y, 0); exact solution decays as
    /// exp(-2 nu t) on the 2*pi box.
    TaylorGreen,
    /// Beltrami flow, curl u = u for unit coefficients.
    Abc { a: f64, b: f64, c: f64 },
    /// Random solenoidal field with shell spectrum E(k) ~ k^slope *
    /// exp(-(slope/2) (k/peak)^2), Hermitian-symmetrized, zero mean,
    /// normalized to the requested rms velocity.
    Random {
        seed: u64,
        #[serde(default = "default_slope")]
        slope: f64,
        #[serde(default = "default_peak")]
        peak: f64,
        #[serde(default = "default_rms")]
        u_rms: f64,
    },
}

fn default_slope() -> f64 {
    4.0
}
fn default_peak() -> f64 {
    4.0
}
fn default_rms() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn build(&self, grid: Grid, fft: &Fft3) -> Result<VectorField> {
        match *self {
            InitialCondition::TaylorGreen => Ok(taylor_green(grid, 0.0, 0.0)),
            InitialCondition::Abc { a, b, c } => Ok(VectorField::from_fn(grid, |x, y, z| {
                [
                    a * z.sin() + c * y.cos(),
                    b * x.sin() + a * z.cos(),
                    c * y.sin() + b * x.cos(),
                ]
            })),
            InitialCondition::Random {
                seed,
                slope,
                peak,
                u_rms,
            } => random_solenoidal(grid, fft, seed, slope, peak, u_rms),
        }
    }
}

/// Taylor-Green vortex at time t. The velocity amplitude decays as
/// exp(-2 nu t), hence kinetic energy as exp(-4 nu t).
pub fn taylor_green(grid: Grid, nu: f64, t: f64) -> VectorField {
    let a = (-2.0 * nu * t).exp();
    VectorField::from_fn(grid, |x, y, _| {
        [a * x.sin() * y.cos(), -a * x.cos() * y.sin(), 0.0]
    })
}

fn random_solenoidal(
    grid: Grid,
    fft: &Fft3,
    seed: u64,
    slope: f64,
    peak: f64,
    u_rms: f64,
) -> Result<VectorField> {
    if !(slope > 0.0 && peak > 0.0 && u_rms > 0.0) {
        return Err(VscopeError::InvalidParam(format!(
            "random initial condition needs positive slope/peak/u_rms, got {slope}/{peak}/{u_rms}"
        )));
    }
    let n = grid.n();
    let kmax = (n / 3) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uh = SpectralVector::zeros(grid);
    // fill modes in storage order so the draw sequence is reproducible
    let mut idx = 0;
    for kz in 0..n {
        for ky in 0..n {
            for kx in 0..n {
                let (a, b, c) = (grid.k_index(kx), grid.k_index(ky), grid.k_index(kz));
                let kmag = ((a * a + b * b + c * c) as f64).sqrt();
                let nyq = kx == n / 2 || ky == n / 2 || kz == n / 2;
                if kmag > 0.0 && kmag <= kmax && !nyq {
                    // shell energy ~ 4 pi k^2 amp^2 = k^slope exp(-...)
                    let amp = kmag.powf(0.5 * (slope - 2.0))
                        * (-(slope / 4.0) * (kmag / peak) * (kmag / peak)).exp();
                    for comp in [&mut uh.x, &mut uh.y, &mut uh.z] {
                        let re: f64 = rng.gen_range(-1.0..1.0);
                        let im: f64 = rng.gen_range(-1.0..1.0);
                        comp[idx] = Complex64::new(re, im) * amp;
                    }
                }
                idx += 1;
            }
        }
    }
    hermitian_symmetrize(&mut uh);
    uh.project_div_free();
    let u = fft.inverse_vector(&uh);
    let vol = grid.box_length().powi(3);
    let rms = (2.0 * u.energy() / vol).sqrt();
    if rms == 0.0 {
        return Err(VscopeError::InvalidParam(
            "random initial condition produced an empty spectrum".into(),
        ));
    }
    let s = u_rms / rms;
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * s).collect::<Vec<f64>>();
    VectorField::from_components(grid, scale(u.x), scale(u.y), scale(u.z))
}

/// u_hat(k) <- (u_hat(k) + conj(u_hat(-k))) / 2 so the physical field is
/// exactly real.
fn hermitian_symmetrize(uh: &mut SpectralVector) {
    let n = uh.grid.n();
    let grid = uh.grid;
    for comp in [&mut uh.x, &mut uh.y, &mut uh.z] {
        for kz in 0..n {
            for ky in 0..n {
                for kx in 0..n {
                    let i = grid.idx(kx, ky, kz);
                    let j = grid.idx((n - kx) % n, (n - ky) % n, (n - kz) % n);
                    if i <= j {
                        let a = comp[i];
                        let b = comp[j];
                        comp[i] = 0.5 * (a + b.conj());
                        comp[j] = comp[i].conj();
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: usize,
    #[serde(default = "default_box")]
    pub box_length: f64,
    pub viscosity: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_cfl")]
    pub cfl_limit: f64,
    pub initial: InitialCondition,
}

fn default_box() -> f64 {
    crate::grid::TWO_PI
}
fn default_stride() -> usize {
    1
}
fn default_cfl() -> f64 {
    0.5
}

impl SolverConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.box_length)
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(VscopeError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(VscopeError::InvalidConfig(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        let steps = self.t_end / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 * steps.max(1.0) || rounded < 1.0 {
            return Err(VscopeError::InvalidConfig(format!(
                "t_end = {} is not an integer number of steps of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.steps()?;
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return Err(VscopeError::InvalidConfig(format!(
                "viscosity must be nonnegative, got {}",
                self.viscosity
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(VscopeError::InvalidConfig(
                "snapshot_stride must be at least 1".into(),
            ));
        }
        if !(self.cfl_limit > 0.0) {
            return Err(VscopeError::InvalidConfig(format!(
                "cfl_limit must be positive, got {}",
                self.cfl_limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub max_u: f64,
    pub max_vorticity: f64,
    pub cfl: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub u: Arc<VectorField>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub viscosity: f64,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.snapshots.last().map(|s| s.time).unwrap_or(0.0)
    }

    /// Vorticity of snapshot i, derived spectrally on demand.
    pub fn vorticity(&self, fft: &Fft3, i: usize) -> VectorField {
        crate::spectral::curl_field(fft, &self.snapshots[i].u)
    }

    /// Every stride-th snapshot, always keeping the first and last.
    /// Snapshot storage is shared, not copied.
    pub fn thinned(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let mut snapshots: Vec<Snapshot> = self
            .snapshots
            .iter()
            .step_by(stride)
            .cloned()
            .collect();
        if let (Some(last_kept), Some(last)) = (snapshots.last(), self.snapshots.last()) {
            if last_kept.step != last.step {
                snapshots.push(last.clone());
            }
        }
        Trajectory {
            grid: self.grid,
            viscosity: self.viscosity,
            dt: self.dt,
            snapshots,
            records: self.records.clone(),
        }
    }

    pub fn nearest_snapshot(&self, t: f64) -> usize {
        let mut best = 0;
        let mut gap = f64::INFINITY;
        for (i, s) in self.snapshots.iter().enumerate() {
            let d = (s.time - t).abs();
            if d < gap {
                gap = d;
                best = i;
            }
        }
        best
    }
}

/// Error carrying whatever was computed before the failure, so callers can
/// dump state for post-mortems.
#[derive(Debug)]
pub struct SimulationFailure {
    pub error: VscopeError,
    pub partial: Trajectory,
}

impl From<SimulationFailure> for VscopeError {
    fn from(f: SimulationFailure) -> Self {
        f.error
    }
}

pub struct Stepper {
    grid: Grid,
    pub fft: Fft3,
    nu: f64,
    dt: f64,
    cfl_limit: f64,
    ehalf: Vec<f64>,
    // recycled mode-space buffers; steady-state stepping allocates nothing
    pool: RefCell<Vec<Vec<Complex64>>>,
}

struct StageDiag {
    max_u: f64,
    max_w: f64,
}

impl Stepper {
    pub fn new(grid: Grid, nu: f64, dt: f64, cfl_limit: f64) -> Self {
        let n = grid.n();
        let k0sq = grid.k_unit() * grid.k_unit();
        let mut ehalf = Vec::with_capacity(grid.len());
        for kz in 0..n {
            for ky in 0..n {
                for kx in 0..n {
                    let (a, b, c) = (
                        grid.k_index(kx) as f64,
                        grid.k_index(ky) as f64,
                        grid.k_index(kz) as f64,
                    );
                    let k2 = (a * a + b * b + c * c) * k0sq;
                    ehalf.push((-nu * k2 * dt * 0.5).exp());
                }
            }
        }
        Stepper {
            grid,
            fft: Fft3::new(n),
            nu,
            dt,
            cfl_limit,
            ehalf,
            pool: RefCell::new(Vec::new()),
        }
    }

    fn take_buf(&self) -> Vec<Complex64> {
        self.pool
            .borrow_mut()
            .pop()
            .unwrap_or_else(|| vec![Complex64::default(); self.grid.len()])
    }

    fn recycle(&self, v: SpectralVector) {
        let mut pool = self.pool.borrow_mut();
        pool.push(v.x);
        pool.push(v.y);
        pool.push(v.z);
    }

    pub fn viscosity(&self) -> f64 {
        self.nu
    }

    /// P dealias(u x omega) in mode space, plus stage diagnostics.
    /// Runs entirely in recycled complex buffers: 9 transforms per call,
    /// no intermediate real fields, sup norms folded into the product sweep.
    fn nonlinear(&self, uh: &SpectralVector) -> (SpectralVector, StageDiag) {
        let n = self.grid.n();
        let k0 = self.grid.k_unit();
        let len = self.grid.len();

        let mut ux = self.take_buf();
        let mut uy = self.take_buf();
        let mut uz = self.take_buf();
        ux.copy_from_slice(&uh.x);
        uy.copy_from_slice(&uh.y);
        uz.copy_from_slice(&uh.z);

        // vorticity modes: curl in k space
        let mut wx = self.take_buf();
        let mut wy = self.take_buf();
        let mut wz = self.take_buf();
        let mul_ik = |k: f64, c: Complex64| Complex64::new(-k * c.im, k * c.re);
        let mut idx = 0;
        for k in 0..n {
            let kz = self.grid.k_deriv(k) as f64 * k0;
            for j in 0..n {
                let ky = self.grid.k_deriv(j) as f64 * k0;
                for i in 0..n {
                    let kx = self.grid.k_deriv(i) as f64 * k0;
                    wx[idx] = mul_ik(ky, uh.z[idx]) - mul_ik(kz, uh.y[idx]);
                    wy[idx] = mul_ik(kz, uh.x[idx]) - mul_ik(kx, uh.z[idx]);
                    wz[idx] = mul_ik(kx, uh.y[idx]) - mul_ik(ky, uh.x[idx]);
                    idx += 1;
                }
            }
        }

        for b in [&mut ux, &mut uy, &mut uz, &mut wx, &mut wy, &mut wz] {
            self.fft.transform3_noscale(b, true);
        }

        // the skipped inverse normalization, folded into the one sweep that
        // reads the transforms
        let s = 1.0 / (len as f64);
        let mut mu2 = 0.0f64;
        let mut mw2 = 0.0f64;
        for idx in 0..len {
            let (ax, ay, az) = (ux[idx].re * s, uy[idx].re * s, uz[idx].re * s);
            let (bx, by, bz) = (wx[idx].re * s, wy[idx].re * s, wz[idx].re * s);
            mu2 = mu2.max(ax * ax + ay * ay + az * az);
            mw2 = mw2.max(bx * bx + by * by + bz * bz);
            ux[idx] = Complex64::new(ay * bz - az * by, 0.0);
            uy[idx] = Complex64::new(az * bx - ax * bz, 0.0);
            uz[idx] = Complex64::new(ax * by - ay * bx, 0.0);
        }
        self.recycle(SpectralVector {
            grid: self.grid,
            x: wx,
            y: wy,
            z: wz,
        });

        for b in [&mut ux, &mut uy, &mut uz] {
            self.fft.transform3(b, false);
        }
        let mut nh = SpectralVector {
            grid: self.grid,
            x: ux,
            y: uy,
            z: uz,
        };
        nh.dealias_project();
        (
            nh,
            StageDiag {
                max_u: mu2.sqrt(),
                max_w: mw2.sqrt(),
            },
        )
    }

    /// One Lawson-RK4 step. On CFL violation the state is left untouched.
    pub fn step(&self, uh: &mut SpectralVector, step: usize, time: f64) -> Result<StepRecord> {
        let dt = self.dt;
        let hdt = 0.5 * dt;
        let (k1, diag) = self.nonlinear(uh);
        let cfl = diag.max_u * dt / self.grid.spacing();
        if !cfl.is_finite() || !diag.max_w.is_finite() {
            return Err(VscopeError::NonFiniteState { step, time });
        }
        if cfl > self.cfl_limit {
            self.recycle(k1);
            return Err(VscopeError::CflViolation {
                step,
                time,
                cfl,
                limit: self.cfl_limit,
            });
        }

        let len = self.grid.len();
        let e = &self.ehalf;
        let mut a = SpectralVector {
            grid: self.grid,
            x: self.take_buf(),
            y: self.take_buf(),
            z: self.take_buf(),
        };

        // stage 2: e (u + dt/2 k1)
        for (dst, u, k) in [
            (&mut a.x, &uh.x, &k1.x),
            (&mut a.y, &uh.y, &k1.y),
            (&mut a.z, &uh.z, &k1.z),
        ] {
            for i in 0..len {
                dst[i] = (u[i] + hdt * k[i]) * e[i];
            }
        }
        let (k2, _) = self.nonlinear(&a);

        // stage 3: e u + dt/2 k2
        for (dst, u, k) in [
            (&mut a.x, &uh.x, &k2.x),
            (&mut a.y, &uh.y, &k2.y),
            (&mut a.z, &uh.z, &k2.z),
        ] {
            for i in 0..len {
                dst[i] = u[i] * e[i] + hdt * k[i];
            }
        }
        let (k3, _) = self.nonlinear(&a);

        // stage 4: e^2 u + dt e k3
        for (dst, u, k) in [
            (&mut a.x, &uh.x, &k3.x),
            (&mut a.y, &uh.y, &k3.y),
            (&mut a.z, &uh.z, &k3.z),
        ] {
            for i in 0..len {
                dst[i] = u[i] * e[i] * e[i] + dt * (k[i] * e[i]);
            }
        }
        let (k4, _) = self.nonlinear(&a);

        // combine: u <- e^2 u + dt/6 (e^2 k1 + 2 e k2 + 2 e k3 + k4)
        for (u, c1, c2, c3, c4) in [
            (&mut uh.x, &k1.x, &k2.x, &k3.x, &k4.x),
            (&mut uh.y, &k1.y, &k2.y, &k3.y, &k4.y),
            (&mut uh.z, &k1.z, &k2.z, &k3.z, &k4.z),
        ] {
            for i in 0..len {
                let mut r = u[i] * e[i] * e[i];
                r += dt / 6.0 * (c1[i] * e[i] * e[i]);
                r += dt / 3.0 * (c2[i] * e[i]);
                r += dt / 3.0 * (c3[i] * e[i]);
                r += dt / 6.0 * c4[i];
                u[i] = r;
            }
        }
        self.recycle(a);
        self.recycle(k1);
        self.recycle(k2);
        self.recycle(k3);
        self.recycle(k4);

        let energy = 0.5 * uh_energy(uh);
        if !energy.is_finite() {
            return Err(VscopeError::NonFiniteState { step, time });
        }
        Ok(StepRecord {
            step,
            time,
            energy,
            max_u: diag.max_u,
            max_vorticity: diag.max_w,
            cfl,
        })
    }
}

fn uh_energy(uh: &SpectralVector) -> f64 {
    uh.l2_norm_sq()
}

pub fn simulate(cfg: &SolverConfig) -> std::result::Result<Trajectory, SimulationFailure> {
    let empty = |grid| Trajectory {
        grid,
        viscosity: cfg.viscosity,
        dt: cfg.dt,
        snapshots: Vec::new(),
        records: Vec::new(),
    };
    let fail = |error, partial| SimulationFailure { error, partial };

    let grid = match cfg.grid() {
        Ok(g) => g,
        Err(e) => {
            let g = Grid::unit_torus(8).expect("fallback grid");
            return Err(fail(e, empty(g)));
        }
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, empty(grid)));
    }
    let steps = cfg.steps().expect("validated above");

    let stepper = Stepper::new(grid, cfg.viscosity, cfg.dt, cfg.cfl_limit);
    let u0 = match cfg.initial.build(grid, &stepper.fft) {
        Ok(u) => u,
        Err(e) => return Err(fail(e, empty(grid))),
    };
    let mut uh = stepper.fft.forward_vector(&u0);
    uh.dealias();
    uh.project_div_free();

    let mut traj = empty(grid);
    let snap = |stepper: &Stepper, uh: &SpectralVector, step: usize, time: f64| Snapshot {
        step,
        time,
        u: Arc::new(stepper.fft.inverse_vector(uh)),
    };
    traj.snapshots.push(snap(&stepper, &uh, 0, 0.0));

    for s in 0..steps {
        let time = s as f64 * cfg.dt;
        match stepper.step(&mut uh, s, time) {
            Ok(rec) => traj.records.push(rec),
            Err(e) => return Err(fail(e, traj)),
        }
        let done = s + 1;
        let t_now = done as f64 * cfg.dt;
        if done % cfg.snapshot_stride == 0 || done == steps {
            if traj.snapshots.last().map(|s| s.step) != Some(done) {
                let shot = snap(&stepper, &uh, done, t_now);
                if !shot.u.is_finite() {
                    return Err(fail(
                        VscopeError::NonFiniteState {
                            step: done,
                            time: t_now,
                        },
                        traj,
                    ));
                }
                traj.snapshots.push(shot);
            }
        }
    }
    Ok(traj)
}
