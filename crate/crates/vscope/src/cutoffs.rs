//! Space-time cutoff functions.
//!
//! Everything is built from one smooth bridge B(s) = s^m / (s^m + (1-s)^m),
//! which climbs 0 -> 1 on [0, 1] with C^{m-1} flat contact at both ends.
//! The order m is tied to the comparison exponent rho by m = ceil(1/(1-rho)),
//! which is exactly what keeps |B'| / B^rho bounded down to the support edge.
//!
//! Spatial cutoffs are radial bumps: psi = 1 on the ball B(c, R), bridged to
//! 0 on B(c, 2R). Elements near the macro sphere S(0, R0) are adjusted
//! smoothly (never by clamping: the budget integrates |omega|^2 Laplacian(psi),
//! and a kinked clamp plants a distributional sheet there).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VscopeError};
use crate::field::ScalarField;
use crate::grid::Grid;

/// Smooth step: 0 at s <= 0, 1 at s >= 1, C^{m-1} contact at both ends.
pub fn bridge(m: u32, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = s.powi(m as i32);
    let b = (1.0 - s).powi(m as i32);
    a / (a + b)
}

/// Analytic derivative of `bridge`.
pub fn bridge_d1(m: u32, s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let mf = m as f64;
    let a = s.powi(m as i32);
    let b = (1.0 - s).powi(m as i32);
    let d = a + b;
    mf * s.powi(m as i32 - 1) * (1.0 - s).powi(m as i32 - 1) / (d * d)
}

/// Analytic second derivative of `bridge`.
pub fn bridge_d2(m: u32, s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let mf = m as f64;
    let mi = m as i32;
    let w = s.powi(mi) + (1.0 - s).powi(mi);
    let n = mf * s.powi(mi - 1) * (1.0 - s).powi(mi - 1);
    let np = mf * (mf - 1.0) * s.powi(mi - 2) * (1.0 - s).powi(mi - 2) * (1.0 - 2.0 * s);
    let wp = mf * (s.powi(mi - 1) - (1.0 - s).powi(mi - 1));
    (np * w - 2.0 * n * wp) / (w * w * w)
}

/// Bridge order for a comparison exponent rho in (1/2, 1): the smallest m
/// with m (1 - rho) >= 1. rho = 3/4 gives 4, rho = 7/8 gives 8.
pub fn order_for_exponent(rho: f64) -> Result<u32> {
    if !(rho > 0.5 && rho < 1.0) {
        return Err(VscopeError::InvalidParam(format!(
            "comparison exponent must lie in (1/2, 1), got {rho}"
        )));
    }
    Ok((1.0 / (1.0 - rho)).ceil() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalProfile {
    /// 0 on (0, T/3], bridge on (T/3, 2T/3), 1 on [2T/3, T).
    Smooth,
    /// Constant 1. Degenerate control for exactly-solvable budgets.
    One,
    /// Jump at T/2. Control whose finite-difference ratios must diverge.
    Indicator,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemporalCutoff {
    pub t_end: f64,
    pub rho: f64,
    pub m: u32,
    pub profile: TemporalProfile,
}

impl TemporalCutoff {
    pub fn new(t_end: f64, rho: f64, profile: TemporalProfile) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(VscopeError::InvalidParam(format!(
                "temporal cutoff needs a positive horizon, got {t_end}"
            )));
        }
        let m = order_for_exponent(rho)?;
        Ok(TemporalCutoff {
            t_end,
            rho,
            m,
            profile,
        })
    }

    pub fn eta(&self, t: f64) -> f64 {
        let tt = self.t_end;
        match self.profile {
            TemporalProfile::One => 1.0,
            TemporalProfile::Indicator => {
                if t > 0.5 * tt {
                    1.0
                } else {
                    0.0
                }
            }
            TemporalProfile::Smooth => {
                if t <= tt / 3.0 {
                    0.0
                } else if t >= 2.0 * tt / 3.0 {
                    1.0
                } else {
                    bridge(self.m, 3.0 * t / tt - 1.0)
                }
            }
        }
    }

    /// Analytic d eta / dt. The indicator's distributional derivative is not
    /// representable; it reports 0 away from the jump.
    pub fn eta_prime(&self, t: f64) -> f64 {
        match self.profile {
            TemporalProfile::One | TemporalProfile::Indicator => 0.0,
            TemporalProfile::Smooth => {
                let tt = self.t_end;
                if t <= tt / 3.0 || t >= 2.0 * tt / 3.0 {
                    0.0
                } else {
                    bridge_d1(self.m, 3.0 * t / tt - 1.0) * 3.0 / tt
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialProfile {
    /// 1 on B(c, R), bridge on the shell, 0 outside B(c, 2R).
    Smooth,
    /// 1 on B(c, R), 0 outside. Control for bound divergence.
    Indicator,
}

/// How the element sits relative to the macro ball B(0, R0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Extent {
    /// Doubled ball inside the macro ball; plain radial bump.
    Interior,
    /// Ball inside, doubled ball escapes the macro ball: multiply by the
    /// macro bump so the leak is damped and dies inside B(0, 2 R0).
    Product { r0: f64 },
    /// Ball pokes through S(0, R0): radial bump up to a thin band under the
    /// sphere, then a smooth cone continuation outside.
    Cone {
        r0: f64,
        a: f64,
        axis: [f64; 3],
        band: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialCutoff {
    pub center: [f64; 3],
    pub radius: f64,
    pub rho: f64,
    pub m: u32,
    pub box_length: f64,
    pub profile: SpatialProfile,
    pub extent: Extent,
}

/// Fraction of R used for the blend band under the macro sphere.
const CONE_BAND_FRACTION: f64 = 0.15;

impl SpatialCutoff {
    pub fn new(center: [f64; 3], radius: f64, rho: f64, box_length: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(VscopeError::InvalidParam(format!(
                "cutoff radius must be positive, got {radius}"
            )));
        }
        if !(2.0 * radius <= 0.5 * box_length) {
            return Err(VscopeError::InvalidParam(format!(
                "support diameter 4R = {} exceeds half the box {}",
                4.0 * radius,
                box_length
            )));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(VscopeError::NonFinite("cutoff center".into()));
        }
        let m = order_for_exponent(rho)?;
        Ok(SpatialCutoff {
            center,
            radius,
            rho,
            m,
            box_length,
            profile: SpatialProfile::Smooth,
            extent: Extent::Interior,
        })
    }

    pub fn indicator(center: [f64; 3], radius: f64, box_length: f64) -> Result<Self> {
        let mut c = SpatialCutoff::new(center, radius, 0.75, box_length)?;
        c.profile = SpatialProfile::Indicator;
        Ok(c)
    }

    /// The macro cutoff psi_0: radial bump of radius R0 at the origin.
    pub fn macro_cutoff(r0: f64, rho: f64, box_length: f64) -> Result<Self> {
        SpatialCutoff::new([0.0, 0.0, 0.0], r0, rho, box_length)
    }

    /// Adjust an element for the macro ball B(0, R0): elements whose support
    /// would leak outside the doubled macro ball are corrected smoothly.
    pub fn boundary_adjust(&self, r0: f64) -> Result<SpatialCutoff> {
        if self.profile == SpatialProfile::Indicator {
            return Err(VscopeError::InvalidParam(
                "boundary adjustment is only defined for smooth profiles".into(),
            ));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(VscopeError::InvalidParam(format!(
                "macro radius must be positive, got {r0}"
            )));
        }
        if self.radius > r0 * (1.0 + 1e-12) {
            return Err(VscopeError::InvalidParam(format!(
                "element radius {} exceeds macro radius {r0}",
                self.radius
            )));
        }
        let g = Grid::new(8, self.box_length).expect("box validated at construction");
        let d = g.displacement(self.center, [0.0, 0.0, 0.0]);
        let a = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let r = self.radius;
        let mut out = self.clone();
        if a + r > r0 {
            if a < 1e-9 * r0.max(1.0) {
                // a poking ball with no direction: the cone axis is undefined
                return Err(VscopeError::DegenerateCone(format!(
                    "center sits at the origin (|c| = {a:.3e}) but pokes R0 = {r0}"
                )));
            }
            let axis = [d[0] / a, d[1] / a, d[2] / a];
            out.extent = Extent::Cone {
                r0,
                a,
                axis,
                band: CONE_BAND_FRACTION * r,
            };
        } else if a <= 1e-12 * r0 && r >= r0 * (1.0 - 1e-12) {
            // the element IS the macro bump; multiplying by psi_0 would
            // square it for no reason
            out.extent = Extent::Interior;
        } else if a + 2.0 * r > r0 {
            out.extent = Extent::Product { r0 };
        } else {
            out.extent = Extent::Interior;
        }
        Ok(out)
    }

    fn chi(&self, q: f64) -> f64 {
        match self.profile {
            SpatialProfile::Indicator => {
                if q <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpatialProfile::Smooth => {
                if q <= 1.0 {
                    1.0
                } else if q >= 2.0 {
                    0.0
                } else {
                    bridge(self.m, 2.0 - q)
                }
            }
        }
    }

    /// d chi / dq on the bridge (smooth profile only).
    fn chi_d1(&self, q: f64) -> f64 {
        if q <= 1.0 || q >= 2.0 {
            0.0
        } else {
            -bridge_d1(self.m, 2.0 - q)
        }
    }

    fn chi_d2(&self, q: f64) -> f64 {
        if q <= 1.0 || q >= 2.0 {
            0.0
        } else {
            bridge_d2(self.m, 2.0 - q)
        }
    }

    fn chi0(&self, r: f64, r0: f64) -> f64 {
        let q = r / r0;
        if q <= 1.0 {
            1.0
        } else if q >= 2.0 {
            0.0
        } else {
            bridge(self.m, 2.0 - q)
        }
    }

    /// Evaluate the cutoff at a point (periodic).
    pub fn psi(&self, x: [f64; 3]) -> f64 {
        let g = Grid::new(8, self.box_length).expect("box validated at construction");
        let dc = g.displacement(x, self.center);
        let q_in = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt() / self.radius;
        match &self.extent {
            Extent::Interior => self.chi(q_in),
            Extent::Product { r0 } => {
                let dr = g.displacement(x, [0.0, 0.0, 0.0]);
                let r = (dr[0] * dr[0] + dr[1] * dr[1] + dr[2] * dr[2]).sqrt();
                self.chi(q_in) * self.chi0(r, *r0)
            }
            Extent::Cone { r0, a, axis, band } => {
                let dr = g.displacement(x, [0.0, 0.0, 0.0]);
                let r = (dr[0] * dr[0] + dr[1] * dr[1] + dr[2] * dr[2]).sqrt();
                if r < *r0 - *band {
                    return self.chi(q_in);
                }
                // distance (scaled by R) from the radial projection of x onto
                // S(0, r0) to the element center, by the law of cosines
                let cosg = if r > 1e-300 {
                    ((dr[0] * axis[0] + dr[1] * axis[1] + dr[2] * axis[2]) / r).clamp(-1.0, 1.0)
                } else {
                    1.0
                };
                let q_cone =
                    (r0 * r0 + a * a - 2.0 * r0 * a * cosg).max(0.0).sqrt() / self.radius;
                if r >= *r0 {
                    self.chi0(r, *r0) * self.chi(q_cone)
                } else {
                    let w = bridge(self.m, (r - (*r0 - *band)) / *band);
                    (1.0 - w) * self.chi(q_in) + w * self.chi(q_cone)
                }
            }
        }
    }

    /// Radius around `anchor()` that certainly contains the support.
    pub fn support_radius(&self) -> f64 {
        match &self.extent {
            Extent::Interior | Extent::Product { .. } => 2.0 * self.radius,
            Extent::Cone { r0, .. } => 2.0 * r0,
        }
    }

    /// Center the support bbox here: the element center for plain bumps, the
    /// origin once the cone continuation is in play.
    pub fn anchor(&self) -> [f64; 3] {
        match &self.extent {
            Extent::Interior | Extent::Product { .. } => self.center,
            Extent::Cone { .. } => [0.0, 0.0, 0.0],
        }
    }

    /// Per-axis node-index ranges bounding the support, in unwrapped
    /// coordinates around the anchor; callers wrap with rem_euclid. Plain
    /// bumps get the cube around their center. The cone continuation gets
    /// the hull of the element ball and the angular sector it cuts from
    /// B(0, 2 R0), which stays thin for small elements instead of
    /// swallowing the whole grid.
    pub(crate) fn support_index_ranges(&self, grid: Grid) -> [[i64; 2]; 3] {
        let h = grid.spacing();
        match &self.extent {
            Extent::Interior | Extent::Product { .. } => {
                // one node of slack so boundary nodes are never lost to rounding
                let span = ((self.support_radius() + h) / h).ceil() as i64;
                let mut out = [[0i64; 2]; 3];
                for d in 0..3 {
                    let a = (self.center[d] / h).round() as i64;
                    out[d] = [a - span, a + span];
                }
                out
            }
            Extent::Cone { r0, a, axis, band } => {
                let g = Grid::new(8, self.box_length).expect("box validated at construction");
                let c = g.displacement(self.center, [0.0, 0.0, 0.0]);
                let r = self.radius;
                // chi(q_cone) needs r0^2 + a^2 - 2 r0 a cos(g) < (2R)^2, and
                // that distance is at least 2 sqrt(r0 a) sin(g/2)
                let gamma = 2.0 * (r / (r0 * a).sqrt()).min(1.0).asin();
                let rmin = (r0 - band).max(0.0);
                let rmax = 2.0 * r0;
                let mut out = [[0i64; 2]; 3];
                for d in 0..3 {
                    let mut lo = c[d] - 2.0 * r;
                    let mut hi = c[d] + 2.0 * r;
                    let theta = axis[d].clamp(-1.0, 1.0).acos();
                    let u_hi = (theta - gamma).max(0.0).cos();
                    let u_lo = (theta + gamma).min(PI).cos();
                    for p in [rmin * u_lo, rmin * u_hi, rmax * u_lo, rmax * u_hi] {
                        lo = lo.min(p);
                        hi = hi.max(p);
                    }
                    out[d] = [((lo - h) / h).floor() as i64, ((hi + h) / h).ceil() as i64];
                }
                out
            }
        }
    }

    /// Sample psi on every node of a grid.
    pub fn sample(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x, y, z| self.psi([x, y, z]))
    }
}

/// psi(x) * eta(t), the space-time cutoff.
#[derive(Debug, Clone)]
pub struct CutoffPair {
    pub spatial: SpatialCutoff,
    pub temporal: TemporalCutoff,
}

impl CutoffPair {
    pub fn phi(&self, x: [f64; 3], t: f64) -> f64 {
        self.spatial.psi(x) * self.temporal.eta(t)
    }
}

/// How the derivative in a ratio measurement was obtained. Profiles with a
/// derivative get it exactly; non-differentiable controls can only be probed
/// by finite differences, whose growth under refinement is the diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeEstimator {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialBoundReport {
    pub resolution: usize,
    /// sup of R |grad psi| / psi^rho over admitted nodes.
    pub sup_grad: f64,
    /// sup of R^2 |Laplacian psi| / psi^(2 rho - 1).
    pub sup_lap: f64,
    pub nodes_used: usize,
    pub estimator: DerivativeEstimator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalBoundReport {
    pub samples: usize,
    /// sup of T |eta'| / eta^rho over admitted samples.
    pub sup: f64,
    pub estimator: DerivativeEstimator,
}

/// Denominators at or below this are treated as unmeasurable and skipped.
const DENOMINATOR_FLOOR: f64 = 1e-14;

/// Smallest cutoff value a finite-difference probe can rate at mesh width
/// `h` over a bridge of width `width`: below (4h/width)^m the tail is not
/// representable on the mesh and differences there measure only the mesh.
/// The floor vanishes under refinement, so divergent profiles still diverge.
fn fd_floor(m: u32, h: f64, width: f64) -> f64 {
    (4.0 * h / width).powi(m as i32).max(DENOMINATOR_FLOOR)
}

/// Measure the comparison-bound ratios of a spatial cutoff at the nodes of a
/// grid. Smooth radial profiles are differentiated exactly; anything else
/// (indicator controls, boundary-adjusted extents) is probed with centered
/// differences at the grid spacing.
pub fn verify_spatial(cutoff: &SpatialCutoff, grid: Grid) -> SpatialBoundReport {
    match (cutoff.profile, &cutoff.extent) {
        (SpatialProfile::Smooth, Extent::Interior) => verify_spatial_analytic(cutoff, grid),
        _ => verify_spatial_fd(cutoff, grid),
    }
}

fn verify_spatial_analytic(cutoff: &SpatialCutoff, grid: Grid) -> SpatialBoundReport {
    let n = grid.n();
    let mut sup_grad = 0.0f64;
    let mut sup_lap = 0.0f64;
    let mut used = 0usize;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = grid.position(i, j, k);
                let d = grid.displacement(p, cutoff.center);
                let q = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / cutoff.radius;
                if q <= 1.0 || q >= 2.0 {
                    continue;
                }
                let c = cutoff.chi(q);
                let c1 = cutoff.chi_d1(q);
                let c2 = cutoff.chi_d2(q);
                let den_g = c.powf(cutoff.rho);
                let den_l = c.powf(2.0 * cutoff.rho - 1.0);
                // R |grad psi| = |chi'(q)|; R^2 Lap psi = chi'' + 2 chi'/q
                if den_g > DENOMINATOR_FLOOR {
                    sup_grad = sup_grad.max(c1.abs() / den_g);
                    used += 1;
                }
                if den_l > DENOMINATOR_FLOOR {
                    sup_lap = sup_lap.max((c2 + 2.0 * c1 / q).abs() / den_l);
                }
            }
        }
    }
    SpatialBoundReport {
        resolution: n,
        sup_grad,
        sup_lap,
        nodes_used: used,
        estimator: DerivativeEstimator::Analytic,
    }
}

/// Finite-difference probe at the grid spacing, for profiles without a
/// derivative. Nodes below the mesh-representable floor are excluded.
pub fn verify_spatial_fd(cutoff: &SpatialCutoff, grid: Grid) -> SpatialBoundReport {
    let f = cutoff.sample(grid);
    let n = grid.n();
    let h = grid.spacing();
    let floor = fd_floor(cutoff.m, h, cutoff.radius);
    let mut sup_grad = 0.0f64;
    let mut sup_lap = 0.0f64;
    let mut used = 0usize;
    let r = cutoff.radius;
    let idx = |i: usize, j: usize, k: usize| grid.idx(i % n, j % n, k % n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let c = f.values[grid.idx(i, j, k)];
                if c < floor {
                    continue;
                }
                let xp = f.values[idx(i + 1, j, k)];
                let xm = f.values[idx(i + n - 1, j, k)];
                let yp = f.values[idx(i, j + 1, k)];
                let ym = f.values[idx(i, j + n - 1, k)];
                let zp = f.values[idx(i, j, k + 1)];
                let zm = f.values[idx(i, j, k + n - 1)];
                let gx = (xp - xm) / (2.0 * h);
                let gy = (yp - ym) / (2.0 * h);
                let gz = (zp - zm) / (2.0 * h);
                let grad = (gx * gx + gy * gy + gz * gz).sqrt();
                let lap = (xp + xm + yp + ym + zp + zm - 6.0 * c) / (h * h);
                sup_grad = sup_grad.max(r * grad / c.powf(cutoff.rho));
                sup_lap = sup_lap.max(r * r * lap.abs() / c.powf(2.0 * cutoff.rho - 1.0));
                used += 1;
            }
        }
    }
    SpatialBoundReport {
        resolution: n,
        sup_grad,
        sup_lap,
        nodes_used: used,
        estimator: DerivativeEstimator::FiniteDifference,
    }
}

/// Same measurement for the temporal cutoff, sampled densely in 1D.
pub fn verify_temporal(cutoff: &TemporalCutoff, samples: usize) -> TemporalBoundReport {
    let tt = cutoff.t_end;
    let dt = tt / samples as f64;
    let fd = cutoff.profile == TemporalProfile::Indicator;
    let floor = fd_floor(cutoff.m, dt, tt / 3.0);
    let mut sup = 0.0f64;
    for i in 1..samples {
        let t = i as f64 * dt;
        let c = cutoff.eta(t);
        if fd && c < floor {
            continue;
        }
        if c.powf(cutoff.rho) <= DENOMINATOR_FLOOR {
            continue;
        }
        let d = if fd {
            (cutoff.eta(t + dt) - cutoff.eta(t - dt)) / (2.0 * dt)
        } else {
            cutoff.eta_prime(t)
        };
        sup = sup.max(tt * d.abs() / c.powf(cutoff.rho));
    }
    TemporalBoundReport {
        samples,
        sup,
        estimator: if fd {
            DerivativeEstimator::FiniteDifference
        } else {
            DerivativeEstimator::Analytic
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub levels: Vec<usize>,
    pub sups: Vec<f64>,
    /// Largest sup growth factor per refinement step, divided by the
    /// resolution ratio of that step. A sharp profile's sup scales with the
    /// resolution (value ~1 here); a resolved profile's sup settles (~1/ratio).
    pub growth_vs_resolution: f64,
    /// Largest relative spread of the sup across all levels.
    pub max_spread: f64,
    pub diverging: bool,
}

fn refinement_verdict(levels: &[usize], sups: &[f64]) -> RefinementReport {
    let mut gvr = 0.0f64;
    for i in 1..sups.len() {
        if sups[i - 1] > 0.0 {
            let ratio = levels[i] as f64 / levels[i - 1] as f64;
            gvr = gvr.max(sups[i] / sups[i - 1] / ratio);
        }
    }
    let lo = sups.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sups.iter().cloned().fold(0.0f64, f64::max);
    let mid = 0.5 * (lo + hi);
    let max_spread = if mid > 0.0 { (hi - lo) / mid } else { 0.0 };
    RefinementReport {
        levels: levels.to_vec(),
        sups: sups.to_vec(),
        growth_vs_resolution: gvr,
        diverging: gvr >= 0.85,
        max_spread,
    }
}

/// Gradient-ratio sups across a ladder of grid resolutions.
pub fn refinement_study_spatial(
    cutoff: &SpatialCutoff,
    resolutions: &[usize],
) -> Result<RefinementReport> {
    let mut sups = Vec::new();
    for &n in resolutions {
        let g = Grid::new(n, cutoff.box_length)?;
        sups.push(verify_spatial(cutoff, g).sup_grad);
    }
    Ok(refinement_verdict(resolutions, &sups))
}

pub fn refinement_study_temporal(
    cutoff: &TemporalCutoff,
    sample_counts: &[usize],
) -> RefinementReport {
    let sups: Vec<f64> = sample_counts
        .iter()
        .map(|&s| verify_temporal(cutoff, s).sup)
        .collect();
    refinement_verdict(sample_counts, &sups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TWO_PI;

    #[test]
    fn bridge_endpoints_and_monotonicity() {
        for m in [4u32, 8] {
            assert_eq!(bridge(m, 0.0), 0.0);
            assert_eq!(bridge(m, 1.0), 1.0);
            assert!((bridge(m, 0.5) - 0.5).abs() < 1e-15, "symmetry at 1/2");
            let mut prev = 0.0;
            for i in 0..=100 {
                let v = bridge(m, i as f64 / 100.0);
                assert!(v >= prev - 1e-15, "bridge must be nondecreasing");
                prev = v;
            }
        }
    }

    #[test]
    fn bridge_flat_contact() {
        // near the ends the bridge is m-th order flat
        let eps = 0.05f64;
        for m in [4u32, 8] {
            // B(eps) = eps^m / (eps^m + (1-eps)^m) <= (eps/(1-eps))^m
            let cap = (eps / (1.0 - eps)).powi(m as i32) * 1.0001;
            let lo = bridge(m, eps);
            assert!(lo <= cap, "left tail must be O(eps^m), got {lo} vs {cap}");
            let hi = 1.0 - bridge(m, 1.0 - eps);
            assert!(hi <= cap, "right tail must be O(eps^m), got {hi} vs {cap}");
        }
    }

    #[test]
    fn bridge_derivative_matches_finite_differences() {
        let d = 1e-6;
        for m in [4u32, 8] {
            for i in 1..20 {
                let s = i as f64 / 20.0;
                let fd = (bridge(m, s + d) - bridge(m, s - d)) / (2.0 * d);
                let an = bridge_d1(m, s);
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "bridge_d1({m}, {s}): analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn bridge_second_derivative_matches_finite_differences() {
        let d = 1e-5;
        for m in [4u32, 8] {
            for i in 1..20 {
                let s = i as f64 / 20.0;
                let fd = (bridge_d1(m, s + d) - bridge_d1(m, s - d)) / (2.0 * d);
                let an = bridge_d2(m, s);
                assert!(
                    (fd - an).abs() <= 1e-4 * (1.0 + an.abs()),
                    "bridge_d2({m}, {s}): analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn order_for_exponent_pins_known_values() {
        assert_eq!(order_for_exponent(0.75).unwrap(), 4);
        assert_eq!(order_for_exponent(0.875).unwrap(), 8);
        assert!(order_for_exponent(0.5).is_err(), "1/2 is out of range");
        assert!(order_for_exponent(1.0).is_err(), "1 is out of range");
    }

    #[test]
    fn eta_regions_and_derivative() {
        let c = TemporalCutoff::new(0.9, 0.75, TemporalProfile::Smooth).unwrap();
        assert_eq!(c.eta(0.1), 0.0);
        assert_eq!(c.eta(0.3), 0.0, "exactly T/3 still vanishes");
        assert_eq!(c.eta(0.6), 1.0, "exactly 2T/3 is already 1");
        assert_eq!(c.eta(0.85), 1.0);
        assert!((c.eta(0.45) - 0.5).abs() < 1e-15, "midpoint is 1/2");
        let d = 1e-7;
        for &t in &[0.35, 0.42, 0.5, 0.58] {
            let fd = (c.eta(t + d) - c.eta(t - d)) / (2.0 * d);
            let an = c.eta_prime(t);
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                "eta'({t}): analytic {an} vs fd {fd}"
            );
        }
        let one = TemporalCutoff::new(0.9, 0.75, TemporalProfile::One).unwrap();
        assert_eq!(one.eta(0.0), 1.0);
        assert_eq!(one.eta_prime(0.45), 0.0);
    }

    #[test]
    fn psi_plateau_support_and_wrap() {
        let c = SpatialCutoff::new([1.0, 2.0, 3.0], 0.7, 0.75, TWO_PI).unwrap();
        assert_eq!(c.psi([1.0, 2.0, 3.0]), 1.0, "center value");
        assert_eq!(c.psi([1.0 + 0.699, 2.0, 3.0]), 1.0, "plateau is exactly 1");
        assert_eq!(c.psi([1.0 + 1.401, 2.0, 3.0]), 0.0, "support ends at 2R");
        let mid = c.psi([1.0 + 1.05, 2.0, 3.0]);
        assert!((mid - 0.5).abs() < 1e-14, "radius 1.5R sits mid-bridge");
        // periodic wrap: center near the seam
        let c2 = SpatialCutoff::new([0.1, 0.0, 0.0], 0.5, 0.75, TWO_PI).unwrap();
        let wrapped = c2.psi([TWO_PI - 0.2, 0.0, 0.0]);
        assert_eq!(wrapped, 1.0, "0.3 away through the seam is inside R");
    }

    #[test]
    fn boundary_adjust_picks_extents() {
        let l = TWO_PI;
        let r0 = 1.5;
        let deep = SpatialCutoff::new([0.2, 0.0, 0.0], 0.4, 0.75, l)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        assert!(matches!(deep.extent, Extent::Interior), "0.2 + 0.8 < 3.0");
        let escaping = SpatialCutoff::new([1.0, 0.0, 0.0], 0.45, 0.75, l)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        assert!(
            matches!(escaping.extent, Extent::Product { .. }),
            "ball inside (1.0 + 0.45 < 1.5), doubled ball escapes (1.0 + 0.9 > 1.5)"
        );
        let poking = SpatialCutoff::new([1.2, 0.0, 0.0], 0.5, 0.75, l)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        assert!(matches!(poking.extent, Extent::Cone { .. }), "1.2 + 0.5 > 1.5");
        let central = SpatialCutoff::new([0.0, 0.0, 0.0], 1.5, 0.75, l)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        assert!(
            matches!(central.extent, Extent::Interior),
            "the full macro ball is not poking"
        );
        let degenerate = SpatialCutoff::new([1e-12, 0.0, 0.0], 1.45, 0.75, l).unwrap();
        // force a poke with a directionless center
        let err = SpatialCutoff {
            radius: 1.55,
            ..degenerate
        }
        .boundary_adjust(1.5);
        assert!(err.is_err(), "poking ball centered at the origin is rejected");
    }

    #[test]
    fn cone_is_macro_cutoff_on_the_inner_cone() {
        // outside the sphere, along the center direction, the adjusted
        // element must agree exactly with psi_0
        let r0 = 1.5;
        let c = SpatialCutoff::new([1.3, 0.0, 0.0], 0.5, 0.75, TWO_PI)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        let psi0 = SpatialCutoff::macro_cutoff(r0, 0.75, TWO_PI).unwrap();
        for s in [1.55, 1.8, 2.2, 2.6] {
            let x = [s, 0.0, 0.0];
            let a = c.psi(x);
            let b = psi0.psi(x);
            assert!(
                (a - b).abs() <= 1e-14,
                "on-axis outside value {a} must equal macro cutoff {b} at r = {s}"
            );
        }
        // far off-axis outside the cone the element vanishes
        assert_eq!(c.psi([-1.6, 0.0, 0.0]), 0.0, "opposite side is outside");
    }

    #[test]
    fn cone_plateau_holds_to_band_tolerance() {
        let r0 = 1.5;
        let c = SpatialCutoff::new([1.25, 0.0, 0.0], 0.45, 0.75, TWO_PI)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        // sample points inside the element ball and inside the macro ball
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let t = i as f64 / 199.0;
            let x = [1.25 - 0.44 + 0.88 * t, 0.02, 0.0];
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r < r0 {
                worst = worst.max((1.0 - c.psi(x)).abs());
            }
        }
        assert!(
            worst <= 2e-3,
            "plateau inside the ball and the sphere must hold to 2e-3, worst {worst}"
        );
    }

    #[test]
    fn cone_support_is_contained() {
        let r0 = 1.5;
        let c = SpatialCutoff::new([1.25, 0.3, -0.2], 0.45, 0.75, TWO_PI)
            .unwrap()
            .boundary_adjust(r0)
            .unwrap();
        let g = Grid::unit_torus(32).unwrap();
        let f = c.sample(g);
        let n = g.n();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let v = f.values[g.idx(i, j, k)];
                    if v == 0.0 {
                        continue;
                    }
                    let p = g.position(i, j, k);
                    let d2c = g.distance2(p, [1.25, 0.3, -0.2]).sqrt();
                    let d2o = g.distance2(p, [0.0, 0.0, 0.0]).sqrt();
                    assert!(
                        d2c <= 2.0 * 0.45 + 0.15 * 0.45 + 1e-12 || d2o >= r0 - 0.15 * 0.45 - 1e-12,
                        "support point at {d2c:.3} from center, {d2o:.3} from origin, psi = {v}"
                    );
                    assert!(
                        d2o <= 2.0 * r0 + 1e-12,
                        "support must stay inside the doubled macro ball"
                    );
                }
            }
        }
    }

    #[test]
    fn measured_grad_sup_matches_dense_1d_scan() {
        // independent oracle: the radial profile's ratio sup from a dense
        // 1d scan with the analytic derivative
        let rho = 0.75;
        let m = 4;
        let mut oracle = 0.0f64;
        for i in 1..200000 {
            let s = i as f64 / 200000.0;
            let b = bridge(m, s);
            if b < 1e-14 {
                continue;
            }
            oracle = oracle.max(bridge_d1(m, s) / b.powf(rho));
        }
        assert!(
            (8.5..9.3).contains(&oracle),
            "dense-scan sup for m = 4, rho = 3/4 should be near 8.87, got {oracle}"
        );
        let c = SpatialCutoff::new([3.1, 3.1, 3.1], 1.2, rho, TWO_PI).unwrap();
        let rep = verify_spatial(&c, Grid::unit_torus(64).unwrap());
        assert_eq!(rep.estimator, DerivativeEstimator::Analytic);
        assert!(
            (rep.sup_grad - oracle).abs() <= 0.01 * oracle,
            "node-sampled sup {} should match the 1d oracle {} within 1%",
            rep.sup_grad,
            oracle
        );
        assert!(rep.sup_lap > 0.0 && rep.sup_lap.is_finite());
        // the difference probe agrees where the bridge is resolved
        let fd = verify_spatial_fd(&c, Grid::unit_torus(64).unwrap());
        assert!(
            (fd.sup_grad - oracle).abs() <= 0.12 * oracle,
            "difference probe {} should match the 1d oracle {} within 12%",
            fd.sup_grad,
            oracle
        );
    }

    #[test]
    fn tighter_exponent_sups_are_stable_too() {
        let c = SpatialCutoff::new([2.9, 3.2, 3.0], 1.3, 0.875, TWO_PI).unwrap();
        assert_eq!(c.m, 8);
        let a = verify_spatial(&c, Grid::unit_torus(32).unwrap());
        let b = verify_spatial(&c, Grid::unit_torus(64).unwrap());
        for rep in [&a, &b] {
            assert!(
                (21.0..23.0).contains(&rep.sup_grad),
                "m = 8 gradient sup should be near 22.0, got {} at {}^3",
                rep.sup_grad,
                rep.resolution
            );
            assert!(rep.sup_lap.is_finite() && rep.sup_lap > 0.0);
        }
        assert!(
            (a.sup_lap - b.sup_lap).abs() <= 0.05 * b.sup_lap,
            "laplacian sups should agree across resolutions: {} vs {}",
            a.sup_lap,
            b.sup_lap
        );
    }

    #[test]
    fn refinement_stable_for_smooth_diverging_for_indicator() {
        let c = SpatialCutoff::new([3.1, 3.1, 3.1], 1.2, 0.75, TWO_PI).unwrap();
        let rep = refinement_study_spatial(&c, &[32, 48, 64]).unwrap();
        assert!(
            !rep.diverging,
            "smooth profile must not be flagged: sups {:?}",
            rep.sups
        );
        assert!(
            rep.max_spread <= 0.05,
            "smooth sups should be stable, spread {}",
            rep.max_spread
        );
        let ind = SpatialCutoff::indicator([3.1, 3.1, 3.1], 1.2, TWO_PI).unwrap();
        let rep = refinement_study_spatial(&ind, &[32, 48, 64]).unwrap();
        assert!(
            rep.diverging,
            "indicator must be flagged divergent: sups {:?}",
            rep.sups
        );
        assert!(
            rep.sups.windows(2).all(|w| w[1] > w[0] * 1.2),
            "indicator sups must keep growing: {:?}",
            rep.sups
        );
    }

    #[test]
    fn temporal_bounds_stable_and_indicator_diverges() {
        let c = TemporalCutoff::new(1.0, 0.75, TemporalProfile::Smooth).unwrap();
        let rep = refinement_study_temporal(&c, &[512, 1024, 2048]);
        assert!(!rep.diverging, "smooth eta flagged: {:?}", rep.sups);
        // sup T|eta'|/eta^rho = 3 sup B'/B^rho ~ 26.6
        let v = rep.sups[2];
        assert!(
            (25.0..28.0).contains(&v),
            "temporal sup should be near 3 * 8.87, got {v}"
        );
        let ind = TemporalCutoff::new(1.0, 0.75, TemporalProfile::Indicator).unwrap();
        let rep = refinement_study_temporal(&ind, &[512, 1024, 2048]);
        assert!(rep.diverging, "indicator eta must diverge: {:?}", rep.sups);
    }

    #[test]
    fn rejection_of_bad_parameters() {
        assert!(
            SpatialCutoff::new([0.0; 3], 2.0, 0.75, TWO_PI).is_err(),
            "4R > L/2 must be rejected"
        );
        assert!(
            SpatialCutoff::new([0.0; 3], 0.5, 0.4, TWO_PI).is_err(),
            "rho below 1/2 must be rejected"
        );
        assert!(
            TemporalCutoff::new(-1.0, 0.75, TemporalProfile::Smooth).is_err(),
            "negative horizon must be rejected"
        );
        let c = SpatialCutoff::new([2.0, 0.0, 0.0], 0.5, 0.75, TWO_PI).unwrap();
        assert!(
            c.boundary_adjust(0.4).is_err(),
            "element radius above the macro radius is rejected"
        );
    }
}
