//! Space-time averages of densities over cover elements, their ensemble
//! means, and the macro quantities they are measured against.
//!
//! Every local average is normalized by 1/(t R^3) with the plain cube of the
//! scale, not the ball volume; comparability constants absorb the 4 pi / 3.
//! Spatial quadrature is the node sum restricted to the support box of the
//! element cutoff, time quadrature is the trapezoid rule over the snapshot
//! times that fall in (0, t].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covers::{self, Cover, CoverStrategy};
use crate::cutoffs::{CutoffPair, SpatialCutoff, TemporalCutoff, TemporalProfile};
use crate::error::{Result, VscopeError};
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::numeric::{pairwise_sum, pairwise_sum_fn, trapezoid_weights};
use crate::solver::Trajectory;
use crate::spectral::{grad_sq_density, gradient_field, laplacian_field, vst_direct, Fft3};

/// Cutoff parameters shared by every element of a run: the decay exponent and
/// the temporal profile with its horizon. The horizon doubles as the
/// evaluation time t of every average built from this config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub rho: f64,
    pub temporal: TemporalCutoff,
}

impl CutoffConfig {
    pub fn new(rho: f64, t: f64) -> Result<Self> {
        Ok(CutoffConfig {
            rho,
            temporal: TemporalCutoff::new(t, rho, TemporalProfile::Smooth)?,
        })
    }

    pub fn with_profile(rho: f64, t: f64, profile: TemporalProfile) -> Result<Self> {
        Ok(CutoffConfig {
            rho,
            temporal: TemporalCutoff::new(t, rho, profile)?,
        })
    }

    pub fn t(&self) -> f64 {
        self.temporal.t_end
    }

    /// Space-time cutoff for one cover element, corrected for the macro ball.
    pub fn element(&self, center: [f64; 3], r: f64, r0: f64, box_length: f64) -> Result<CutoffPair> {
        let spatial = SpatialCutoff::new(center, r, self.rho, box_length)?.boundary_adjust(r0)?;
        Ok(CutoffPair {
            spatial,
            temporal: self.temporal,
        })
    }

    pub fn macro_element(&self, r0: f64, box_length: f64) -> Result<CutoffPair> {
        Ok(CutoffPair {
            spatial: SpatialCutoff::macro_cutoff(r0, self.rho, box_length)?,
            temporal: self.temporal,
        })
    }
}

/// psi^delta sampled on the nodes inside the support box of one element.
/// Node indices refer to the full grid; zero weights are dropped.
struct WeightTable {
    nodes: Vec<u32>,
    weights: Vec<f64>,
}

fn weight_table(psi: &SpatialCutoff, grid: Grid, delta_exp: f64) -> WeightTable {
    let n = grid.n() as i64;
    let ranges = psi.support_index_ranges(grid);
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for d in 0..3 {
        if ranges[d][1] - ranges[d][0] + 1 >= n {
            lo[d] = 0;
            hi[d] = n - 1;
        } else {
            lo[d] = ranges[d][0];
            hi[d] = ranges[d][1];
        }
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in lo[2]..=hi[2] {
        let kk = k.rem_euclid(n) as usize;
        for j in lo[1]..=hi[1] {
            let jj = j.rem_euclid(n) as usize;
            for i in lo[0]..=hi[0] {
                let ii = i.rem_euclid(n) as usize;
                let p = grid.position(ii, jj, kk);
                let w = psi.psi(p);
                if w > 0.0 {
                    let wd = if delta_exp == 1.0 { w } else { w.powf(delta_exp) };
                    nodes.push(grid.idx(ii, jj, kk) as u32);
                    weights.push(wd);
                }
            }
        }
    }
    WeightTable { nodes, weights }
}

impl WeightTable {
    fn dot(&self, values: &[f64]) -> f64 {
        pairwise_sum_fn(self.nodes.len(), &|i| {
            self.weights[i] * values[self.nodes[i] as usize]
        })
    }
}

fn check_snapshot_series(fields: &[&ScalarField], times: &[f64], t: f64) -> Result<()> {
    if fields.len() != times.len() {
        return Err(VscopeError::InvalidParam(format!(
            "{} density snapshots against {} times",
            fields.len(),
            times.len()
        )));
    }
    if times.len() < 2 {
        return Err(VscopeError::InvalidParam(format!(
            "time averaging needs at least 2 snapshots, got {}",
            times.len()
        )));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(VscopeError::InvalidParam(format!(
                "snapshot times must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let last = *times.last().expect("nonempty");
    if !(last <= t + 1e-9 * t.max(1.0)) {
        return Err(VscopeError::InvalidParam(format!(
            "snapshot at {last} lies beyond the averaging window (0, {t}]"
        )));
    }
    let g = fields[0].grid;
    for f in fields {
        f.grid.same_as(&g)?;
    }
    Ok(())
}

/// (1/t) integral over (0,t) of (1/R^3) integral of f phi^delta, with
/// phi = psi(x) eta(s). The missing piece of (0, times[0]) contributes
/// nothing when eta vanishes there; the caller owns that choice of profile.
pub fn local_average(
    fields: &[&ScalarField],
    times: &[f64],
    pair: &CutoffPair,
    delta_exp: f64,
) -> Result<f64> {
    let t = pair.temporal.t_end;
    check_snapshot_series(fields, times, t)?;
    if !(delta_exp > 0.0 && delta_exp.is_finite()) {
        return Err(VscopeError::InvalidParam(format!(
            "cutoff exponent must be positive, got {delta_exp}"
        )));
    }
    let grid = fields[0].grid;
    if (pair.spatial.box_length - grid.box_length()).abs() > 1e-12 * grid.box_length() {
        return Err(VscopeError::GridMismatch(format!(
            "cutoff box {} vs field box {}",
            pair.spatial.box_length,
            grid.box_length()
        )));
    }
    let table = weight_table(&pair.spatial, grid, delta_exp);
    let tw = trapezoid_weights(times);
    let mut total = 0.0;
    for (i, f) in fields.iter().enumerate() {
        let eta = pair.temporal.eta(times[i]);
        if tw[i] == 0.0 || eta == 0.0 {
            continue;
        }
        let etad = if delta_exp == 1.0 { eta } else { eta.powf(delta_exp) };
        total += tw[i] * etad * table.dot(&f.values);
    }
    let h = grid.spacing();
    let r = pair.spatial.radius;
    Ok(total * h * h * h / (t * r * r * r))
}

/// Per-element local averages over a cover, their mean, and the macro-scale
/// average of the same density for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub scale: f64,
    pub t: f64,
    pub delta_exp: f64,
    pub per_element: Vec<f64>,
    pub mean: f64,
    pub macro_value: f64,
    /// mean / macro_value; None when the macro average vanishes.
    pub ratio_to_macro: Option<f64>,
}

pub fn ensemble_average(
    fields: &[&ScalarField],
    times: &[f64],
    cover: &Cover,
    cutoffs: &CutoffConfig,
    delta_exp: f64,
) -> Result<EnsembleReport> {
    check_snapshot_series(fields, times, cutoffs.t())?;
    let grid = fields[0].grid;
    if (cover.box_length - grid.box_length()).abs() > 1e-12 * cover.box_length {
        return Err(VscopeError::GridMismatch(format!(
            "cover box {} vs field box {}",
            cover.box_length,
            grid.box_length()
        )));
    }
    let pairs: Vec<CutoffPair> = cover
        .centers
        .iter()
        .map(|&c| cutoffs.element(c, cover.r, cover.r0, cover.box_length))
        .collect::<Result<_>>()?;
    let per_element: Vec<f64> = pairs
        .par_iter()
        .map(|p| local_average(fields, times, p, delta_exp))
        .collect::<Result<_>>()?;
    let macro_pair = cutoffs.macro_element(cover.r0, cover.box_length)?;
    let macro_value = local_average(fields, times, &macro_pair, delta_exp)?;
    let mean = pairwise_sum(&per_element) / per_element.len() as f64;
    let ratio_to_macro = if macro_value != 0.0 {
        Some(mean / macro_value)
    } else {
        None
    };
    Ok(EnsembleReport {
        scale: cover.r,
        t: cutoffs.t(),
        delta_exp,
        per_element,
        mean,
        macro_value,
        ratio_to_macro,
    })
}

/// Pointwise vortex-stretching density (omega . grad u) . omega for every
/// snapshot up to t, with the matching times. Shared by the ensemble ops so
/// a family of covers pays for the spectral work once.
pub fn vst_density_series(
    fft: &Fft3,
    traj: &Trajectory,
    t: f64,
) -> Result<(Vec<ScalarField>, Vec<f64>)> {
    let mut fields = Vec::new();
    let mut times = Vec::new();
    for (i, s) in traj.snapshots.iter().enumerate() {
        if s.time <= t + 1e-9 * t.max(1.0) {
            fields.push(vst_direct(fft, &traj.snapshots[i].u)?);
            times.push(s.time);
        }
    }
    if times.len() < 2 {
        return Err(VscopeError::InvalidParam(format!(
            "only {} snapshots at or before t = {t}; averaging needs at least 2",
            times.len()
        )));
    }
    Ok((fields, times))
}

pub fn vst_local(fft: &Fft3, traj: &Trajectory, pair: &CutoffPair) -> Result<f64> {
    let (fields, times) = vst_density_series(fft, traj, pair.temporal.t_end)?;
    let refs: Vec<&ScalarField> = fields.iter().collect();
    local_average(&refs, &times, pair, 1.0)
}

/// Ensemble average of the vortex-stretching density in convective form.
/// Must agree with `ensemble_average` fed the strain-form density to within
/// quadrature roundoff; the two routes share no spectral code.
pub fn vst_ensemble(
    fft: &Fft3,
    traj: &Trajectory,
    cover: &Cover,
    cutoffs: &CutoffConfig,
) -> Result<EnsembleReport> {
    let (fields, times) = vst_density_series(fft, traj, cutoffs.t())?;
    let refs: Vec<&ScalarField> = fields.iter().collect();
    ensemble_average(&refs, &times, cover, cutoffs, 1.0)
}

/// Macro-scale state of a window (0, t): enstrophy and dissipation averages
/// at the macro ball, their timescale, and the peak doubled-ball energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroStats {
    pub r0: f64,
    pub t: f64,
    /// (1/t) time integral of (1/R0^3) integral of |omega|^2 phi0^(1/2).
    pub e0t: f64,
    /// (1/t) time integral of (1/R0^3) integral of |grad omega|^2 phi0, plus
    /// the final-time tail (1/t)(1/R0^3) integral of (1/2)|omega(t)|^2 psi0.
    /// No viscosity factor on either piece.
    pub p0t: f64,
    /// sqrt(e0t / p0t); None when p0t vanishes.
    pub sigma0t: Option<f64>,
    /// sup over snapshot times of the energy inside B(0, 2 R0).
    pub m0: f64,
}

fn snapshots_through(traj: &Trajectory, t: f64) -> Result<Vec<usize>> {
    let idx: Vec<usize> = traj
        .snapshots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.time <= t + 1e-9 * t.max(1.0))
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 2 {
        return Err(VscopeError::InvalidParam(format!(
            "only {} snapshots at or before t = {t}; averaging needs at least 2",
            idx.len()
        )));
    }
    let last_t = traj.snapshots[*idx.last().expect("nonempty")].time;
    if (last_t - t).abs() > 1e-9 * t.max(1.0) {
        return Err(VscopeError::InvalidParam(format!(
            "final-time terms need a snapshot at t = {t}; nearest is {last_t}"
        )));
    }
    Ok(idx)
}

pub fn macro_stats(
    fft: &Fft3,
    traj: &Trajectory,
    cutoffs: &CutoffConfig,
    r0: f64,
) -> Result<MacroStats> {
    let t = cutoffs.t();
    let idx = snapshots_through(traj, t)?;
    let grid = traj.grid;
    let psi0 = SpatialCutoff::macro_cutoff(r0, cutoffs.rho, grid.box_length())?.sample(grid);
    let psi0_sqrt: Vec<f64> = psi0.values.iter().map(|v| v.sqrt()).collect();

    // nodes of the doubled macro ball, for the sup-energy scan
    let ball: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let (a, b, c) = grid.coords(i);
            let p = grid.position(a, b, c);
            let d = grid.displacement(p, [0.0, 0.0, 0.0]);
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 4.0 * r0 * r0
        })
        .collect();

    let h = grid.spacing();
    let h3 = h * h * h;
    let mut times = Vec::with_capacity(idx.len());
    let mut e_s = Vec::with_capacity(idx.len());
    let mut p_s = Vec::with_capacity(idx.len());
    let mut tail_int = 0.0;
    let mut m0 = 0.0f64;
    for (pos, &i) in idx.iter().enumerate() {
        let omega = traj.vorticity(fft, i);
        let enst = omega.magnitude_sq();
        let pal = grad_sq_density(fft, &omega);
        e_s.push(pairwise_sum_fn(enst.values.len(), &|n| {
            enst.values[n] * psi0_sqrt[n]
        }));
        p_s.push(pairwise_sum_fn(pal.values.len(), &|n| {
            pal.values[n] * psi0.values[n]
        }));
        if pos + 1 == idx.len() {
            tail_int = pairwise_sum_fn(enst.values.len(), &|n| {
                0.5 * enst.values[n] * psi0.values[n]
            });
        }
        let u = &traj.snapshots[i].u;
        let (ux, uy, uz) = (u.component(0), u.component(1), u.component(2));
        let energy = pairwise_sum_fn(ball.len(), &|j| {
            let n = ball[j];
            ux[n] * ux[n] + uy[n] * uy[n] + uz[n] * uz[n]
        }) * h3;
        m0 = m0.max(energy);
        times.push(traj.snapshots[i].time);
    }

    let tw = trapezoid_weights(&times);
    let norm = 1.0 / (t * r0 * r0 * r0);
    let mut e0t = 0.0;
    let mut flux = 0.0;
    for i in 0..times.len() {
        let eta = cutoffs.temporal.eta(times[i]);
        e0t += tw[i] * eta.sqrt() * e_s[i];
        flux += tw[i] * eta * p_s[i];
    }
    let e0t = e0t * h3 * norm;
    let p0t = flux * h3 * norm + tail_int * h3 * norm;
    let sigma0t = if p0t > 0.0 { Some((e0t / p0t).sqrt()) } else { None };
    Ok(MacroStats {
        r0,
        t,
        e0t,
        p0t,
        sigma0t,
        m0,
    })
}

/// One element's enstrophy budget over (0, t), every term normalized by
/// 1/(t R^3). The identity being checked is
///   vst = final_enstrophy + palinstrophy - cutoff_term - transport_term,
/// so `residual` is the left side minus the right and vanishes for an exact
/// trajectory under exact quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalBudget {
    /// integral of the stretching density against phi
    pub vst: f64,
    /// (1/2)|omega|^2 against phi at the window ends (final minus initial)
    pub final_enstrophy: f64,
    /// nu |grad omega|^2 against phi
    pub palinstrophy: f64,
    /// (1/2)|omega|^2 against phi_s + nu Laplacian(phi)
    pub cutoff_term: f64,
    /// (1/2)|omega|^2 against u . grad phi
    pub transport_term: f64,
    pub residual: f64,
    /// |residual| over the largest term magnitude; 0 for an all-zero budget
    pub relative_residual: f64,
}

/// Budgets for several elements sharing one trajectory; the per-snapshot
/// spectral densities are computed once. Element cutoff fields are sampled
/// on the full grid, so this path is meant for covers of modest size.
pub fn budget_many(fft: &Fft3, traj: &Trajectory, pairs: &[CutoffPair]) -> Result<Vec<LocalBudget>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let t = pairs[0].temporal.t_end;
    for p in pairs {
        if (p.temporal.t_end - t).abs() > 1e-12 * t.max(1.0) {
            return Err(VscopeError::InvalidParam(
                "budget elements must share one time horizon".into(),
            ));
        }
    }
    let idx = snapshots_through(traj, t)?;
    let grid = traj.grid;
    let nu = traj.viscosity;

    struct ElementFields {
        psi: ScalarField,
        grad: crate::field::VectorField,
        lap: ScalarField,
    }
    let elems: Vec<ElementFields> = pairs
        .iter()
        .map(|p| {
            let psi = p.spatial.sample(grid);
            let grad = gradient_field(fft, &psi);
            let lap = laplacian_field(fft, &psi);
            ElementFields { psi, grad, lap }
        })
        .collect();

    let ns = idx.len();
    let ne = pairs.len();
    let mut times = Vec::with_capacity(ns);
    // per element, per snapshot: spatial integrals before time weighting
    let mut vst_s = vec![vec![0.0; ns]; ne];
    let mut pal_s = vec![vec![0.0; ns]; ne];
    let mut enst_psi_s = vec![vec![0.0; ns]; ne];
    let mut enst_lap_s = vec![vec![0.0; ns]; ne];
    let mut transport_s = vec![vec![0.0; ns]; ne];

    for (pos, &i) in idx.iter().enumerate() {
        let u = &traj.snapshots[i].u;
        let omega = traj.vorticity(fft, i);
        let pal = grad_sq_density(fft, &omega);
        let vstd = vst_direct(fft, u)?;
        let enst_half = {
            let mut m = omega.magnitude_sq();
            for v in &mut m.values {
                *v *= 0.5;
            }
            m
        };
        let (ux, uy, uz) = (u.component(0), u.component(1), u.component(2));
        let rows: Vec<[f64; 5]> = elems
            .par_iter()
            .map(|e| {
                let len = e.psi.values.len();
                let (gx, gy, gz) = (e.grad.component(0), e.grad.component(1), e.grad.component(2));
                [
                    pairwise_sum_fn(len, &|n| vstd.values[n] * e.psi.values[n]),
                    pairwise_sum_fn(len, &|n| pal.values[n] * e.psi.values[n]),
                    pairwise_sum_fn(len, &|n| enst_half.values[n] * e.psi.values[n]),
                    pairwise_sum_fn(len, &|n| enst_half.values[n] * e.lap.values[n]),
                    pairwise_sum_fn(len, &|n| {
                        enst_half.values[n] * (ux[n] * gx[n] + uy[n] * gy[n] + uz[n] * gz[n])
                    }),
                ]
            })
            .collect();
        for (e, row) in rows.iter().enumerate() {
            vst_s[e][pos] = row[0];
            pal_s[e][pos] = row[1];
            enst_psi_s[e][pos] = row[2];
            enst_lap_s[e][pos] = row[3];
            transport_s[e][pos] = row[4];
        }
        times.push(traj.snapshots[i].time);
    }

    let tw = trapezoid_weights(&times);
    let h = grid.spacing();
    let h3 = h * h * h;
    let mut out = Vec::with_capacity(ne);
    for e in 0..ne {
        let temporal = &pairs[e].temporal;
        let r = pairs[e].spatial.radius;
        let norm = h3 / (t * r * r * r);
        let mut vst = 0.0;
        let mut palin = 0.0;
        let mut cutoff = 0.0;
        let mut transport = 0.0;
        for i in 0..ns {
            let eta = temporal.eta(times[i]);
            let etap = temporal.eta_prime(times[i]);
            vst += tw[i] * eta * vst_s[e][i];
            palin += tw[i] * eta * pal_s[e][i];
            cutoff += tw[i] * (etap * enst_psi_s[e][i] + nu * eta * enst_lap_s[e][i]);
            transport += tw[i] * eta * transport_s[e][i];
        }
        let vst = vst * norm;
        let palinstrophy = nu * palin * norm;
        let cutoff_term = cutoff * norm;
        let transport_term = transport * norm;
        let final_enstrophy = (enst_psi_s[e][ns - 1] * temporal.eta(times[ns - 1])
            - enst_psi_s[e][0] * temporal.eta(times[0]))
            * norm;
        let residual = vst - final_enstrophy - palinstrophy + cutoff_term + transport_term;
        let denom = vst
            .abs()
            .max(final_enstrophy.abs())
            .max(palinstrophy.abs())
            .max(cutoff_term.abs())
            .max(transport_term.abs());
        let relative_residual = if denom > 0.0 { residual.abs() / denom } else { 0.0 };
        out.push(LocalBudget {
            vst,
            final_enstrophy,
            palinstrophy,
            cutoff_term,
            transport_term,
            residual,
            relative_residual,
        });
    }
    Ok(out)
}

pub fn budget_check(fft: &Fft3, traj: &Trajectory, pair: &CutoffPair) -> Result<LocalBudget> {
    Ok(budget_many(fft, traj, std::slice::from_ref(pair))?
        .pop()
        .expect("one element in, one budget out"))
}

/// Budget of every element of a cover.
pub fn budget_cover(
    fft: &Fft3,
    traj: &Trajectory,
    cover: &Cover,
    cutoffs: &CutoffConfig,
) -> Result<Vec<LocalBudget>> {
    let pairs: Vec<CutoffPair> = cover
        .centers
        .iter()
        .map(|&c| cutoffs.element(c, cover.r, cover.r0, cover.box_length))
        .collect::<Result<_>>()?;
    budget_many(fft, traj, &pairs)
}

/// Gate for snapshot-stride adequacy: the budget of `pair` must close to
/// within `tol`, otherwise downstream averages would inherit quadrature error
/// of the same size.
pub fn budget_preflight(
    fft: &Fft3,
    traj: &Trajectory,
    pair: &CutoffPair,
    tol: f64,
) -> Result<LocalBudget> {
    let b = budget_check(fft, traj, pair)?;
    if b.relative_residual > tol {
        return Err(VscopeError::PreflightBudget {
            residual: b.relative_residual,
            tolerance: tol,
        });
    }
    Ok(b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremConfig {
    /// evaluation time; also the temporal cutoff horizon
    pub t: f64,
    pub r0: f64,
    /// element scales to test; those outside the admissible range are skipped
    pub scales: Vec<f64>,
    /// jittered covers per scale
    pub family: usize,
    pub seed: u64,
    pub k1: u32,
    pub k2: u32,
    pub rho: f64,
    /// reporting constant in the admissibility condition; never fitted
    pub c_report: f64,
    pub preflight_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRatios {
    pub scale: f64,
    /// mean stretching average over p0t, one entry per cover of the family
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub all_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub c_report: f64,
    pub r0: f64,
    pub t: f64,
    pub stats: MacroStats,
    /// c_report * max(sqrt(m0), 1) * sqrt(sigma0t); None when sigma0t is
    pub condition_lhs: Option<f64>,
    /// [condition_lhs, r0] when nonempty
    pub admissible_range: Option<[f64; 2]>,
    /// requested scales that fell outside the admissible range
    pub skipped_scales: Vec<f64>,
    pub per_scale: Vec<ScaleRatios>,
    /// max(max ratio, 1 / min ratio) over every admissible scale and cover;
    /// None unless every ratio is positive
    pub c_emp: Option<f64>,
    pub all_positive: bool,
    pub applicable: bool,
    pub reason: Option<String>,
}

fn not_applicable(
    cfg: &TheoremConfig,
    stats: MacroStats,
    lhs: Option<f64>,
    range: Option<[f64; 2]>,
    skipped: Vec<f64>,
    reason: &str,
) -> TheoremReport {
    TheoremReport {
        c_report: cfg.c_report,
        r0: cfg.r0,
        t: cfg.t,
        stats,
        condition_lhs: lhs,
        admissible_range: range,
        skipped_scales: skipped,
        per_scale: Vec::new(),
        c_emp: None,
        all_positive: false,
        applicable: false,
        reason: Some(reason.into()),
    }
}

/// Two-sided comparability of ensemble stretching averages with the macro
/// dissipation rate, over families of jittered covers at every admissible
/// scale. Positivity of every ratio is the verdict; the comparability
/// constant is only ever measured, not asserted.
pub fn theorem_check(fft: &Fft3, traj: &Trajectory, cfg: &TheoremConfig) -> Result<TheoremReport> {
    if !(cfg.r0 > 0.0 && cfg.r0 * cfg.r0 <= cfg.t * (1.0 + 1e-9)) {
        return Err(VscopeError::InvalidParam(format!(
            "macro radius {} must satisfy r0^2 <= t = {}",
            cfg.r0, cfg.t
        )));
    }
    if !(cfg.c_report > 0.0 && cfg.c_report.is_finite()) {
        return Err(VscopeError::InvalidParam(format!(
            "reporting constant must be positive, got {}",
            cfg.c_report
        )));
    }
    if cfg.family == 0 || cfg.scales.is_empty() {
        return Err(VscopeError::InvalidParam(
            "comparability check needs at least one scale and one cover per scale".into(),
        ));
    }
    let cutoffs = CutoffConfig::new(cfg.rho, cfg.t)?;
    let stats = macro_stats(fft, traj, &cutoffs, cfg.r0)?;
    let macro_pair = cutoffs.macro_element(cfg.r0, traj.grid.box_length())?;
    budget_preflight(fft, traj, &macro_pair, cfg.preflight_tol)?;

    let sigma = match stats.sigma0t {
        Some(s) => s,
        None => {
            return Ok(not_applicable(
                cfg,
                stats,
                None,
                None,
                cfg.scales.clone(),
                "sigma0t undefined: the macro dissipation rate vanishes",
            ))
        }
    };
    let lhs = cfg.c_report * stats.m0.sqrt().max(1.0) * sigma.sqrt();
    if lhs > cfg.r0 {
        return Ok(not_applicable(
            cfg,
            stats,
            Some(lhs),
            None,
            cfg.scales.clone(),
            "empty admissible range: the condition lower bound exceeds r0",
        ));
    }
    let range = Some([lhs, cfg.r0]);

    let (fields, times) = vst_density_series(fft, traj, cfg.t)?;
    let refs: Vec<&ScalarField> = fields.iter().collect();
    let mut skipped = Vec::new();
    let mut per_scale = Vec::new();
    let mut global_min = f64::INFINITY;
    let mut global_max = f64::NEG_INFINITY;
    for (si, &scale) in cfg.scales.iter().enumerate() {
        if scale < lhs * (1.0 - 1e-12) || scale > cfg.r0 * (1.0 + 1e-12) {
            skipped.push(scale);
            continue;
        }
        let mut ratios = Vec::with_capacity(cfg.family);
        for j in 0..cfg.family {
            let member = (si * cfg.family + j) as u64;
            let seed = cfg
                .seed
                .wrapping_add(member.wrapping_mul(0x9e37_79b9_7f4a_7c15))
                .wrapping_add(1);
            let cover = covers::generate(
                cfg.r0,
                scale,
                cfg.k1,
                cfg.k2,
                CoverStrategy::Jittered { seed },
                traj.grid.box_length(),
            )?;
            let rep = ensemble_average(&refs, &times, &cover, &cutoffs, 1.0)?;
            ratios.push(rep.mean / stats.p0t);
        }
        let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        global_min = global_min.min(min_ratio);
        global_max = global_max.max(max_ratio);
        per_scale.push(ScaleRatios {
            scale,
            ratios,
            min_ratio,
            max_ratio,
            all_positive: min_ratio > 0.0,
        });
    }
    if per_scale.is_empty() {
        return Ok(not_applicable(
            cfg,
            stats,
            Some(lhs),
            range,
            skipped,
            "no requested scale falls inside the admissible range",
        ));
    }
    let all_positive = global_min > 0.0;
    let c_emp = if all_positive {
        Some(global_max.max(1.0 / global_min))
    } else {
        None
    };
    Ok(TheoremReport {
        c_report: cfg.c_report,
        r0: cfg.r0,
        t: cfg.t,
        stats,
        condition_lhs: Some(lhs),
        admissible_range: range,
        skipped_scales: skipped,
        per_scale,
        c_emp,
        all_positive,
        applicable: true,
    reason: None,
    })
}
