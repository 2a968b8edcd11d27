//! Super-level set geometry: linear sparseness along segments, the
//! threshold quantities h and alpha, the node-exact volume bound, and the
//! criticality-scale report.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covers::fibonacci_sphere;
use crate::error::{Result, VscopeError};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::solver::Trajectory;
use crate::spectral::Fft3;

/// Where a super-level set sits: node indicator, threshold, and the snapshot
/// time it was taken from. The mask stores 0/1 as f64 so sub-grid queries can
/// interpolate it directly.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub grid: Grid,
    pub mask: ScalarField,
    pub threshold: f64,
    pub time: f64,
}

/// Nodes where |omega| exceeds m, strictly.
pub fn level_set(omega: &VectorField, m: f64, time: f64) -> Result<LevelSet> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(VscopeError::InvalidParam(format!(
            "level-set threshold must be nonnegative, got {m}"
        )));
    }
    let mag = omega.magnitude_sq();
    let values = mag.values.iter().map(|&v| if v > m * m { 1.0 } else { 0.0 }).collect();
    Ok(LevelSet {
        grid: omega.grid,
        mask: ScalarField::from_values(omega.grid, values)?,
        threshold: m,
        time,
    })
}

impl LevelSet {
    /// Build from a point predicate; for analytic control sets.
    pub fn from_fn(grid: Grid, threshold: f64, time: f64, f: impl Fn([f64; 3]) -> bool) -> LevelSet {
        LevelSet {
            grid,
            mask: ScalarField::from_fn(grid, |x, y, z| if f([x, y, z]) { 1.0 } else { 0.0 }),
            threshold,
            time,
        }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask.values[idx] > 0.5
    }

    pub fn count(&self) -> usize {
        self.mask.values.iter().filter(|&&v| v > 0.5).count()
    }

    /// Node-counting volume: count * spacing^3.
    pub fn volume(&self) -> f64 {
        let h = self.grid.spacing();
        self.count() as f64 * h * h * h
    }

    /// One byte per node (0 or 1), x-fastest, for external visualization.
    pub fn mask_bytes(&self) -> Vec<u8> {
        self.mask.values.iter().map(|&v| u8::from(v > 0.5)).collect()
    }
}

/// h(delta) = (2/pi) asin((1 - delta^2)/(1 + delta^2)) and the matching
/// exponent floor alpha_min = (1 - h)/h. Rejects the degenerate endpoints.
pub fn h_alpha(delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VscopeError::InvalidParam(format!(
            "sparseness fraction must lie strictly between 0 and 1, got {delta}"
        )));
    }
    let h = 2.0 / std::f64::consts::PI
        * ((1.0 - delta * delta) / (1.0 + delta * delta)).asin();
    Ok((h, (1.0 - h) / h))
}

/// Direction and sub-grid sampling densities for segment measurements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sampling {
    pub directions: usize,
    pub per_spacing: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            directions: 256,
            per_spacing: 4,
        }
    }
}

impl Sampling {
    pub fn doubled(self) -> Sampling {
        Sampling {
            directions: self.directions * 2,
            per_spacing: self.per_spacing * 2,
        }
    }
}

/// Occupied fraction of the segment (x0 - r d, x0 + r d). The indicator is
/// interpolated trilinearly and thresholded at 1/2; each threshold crossing
/// between consecutive samples is then located by bisection, so the result
/// converges with sub-grid sampling instead of carrying O(1/samples)
/// quantization.
pub fn segment_occupancy(s: &LevelSet, x0: [f64; 3], r: f64, d: [f64; 3], per_spacing: usize) -> f64 {
    let h = s.grid.spacing();
    let n = ((2.0 * r / h) * per_spacing as f64).ceil() as usize;
    let n = n.max(8);
    let step = 2.0 * r / n as f64;
    let at = |t: f64| {
        s.mask
            .interp([x0[0] + t * d[0], x0[1] + t * d[1], x0[2] + t * d[2]])
    };
    let mut prev_t = -r;
    let mut prev_v = at(prev_t);
    let mut occupied = 0.0;
    for j in 1..=n {
        let t = -r + j as f64 * step;
        let v = at(t);
        match (prev_v >= 0.5, v >= 0.5) {
            (true, true) => occupied += t - prev_t,
            (false, false) => {}
            (inside, _) => {
                let mut a = prev_t;
                let mut b = t;
                let mut fa = prev_v - 0.5;
                for _ in 0..40 {
                    let m = 0.5 * (a + b);
                    let fm = at(m) - 0.5;
                    if (fm >= 0.0) == (fa >= 0.0) {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                let cross = 0.5 * (a + b);
                occupied += if inside { cross - prev_t } else { t - cross };
            }
        }
        prev_t = t;
        prev_v = v;
    }
    (occupied / (2.0 * r)).clamp(0.0, 1.0)
}

/// One point's sparseness verdict: the sampled direction minimizing the
/// segment occupancy, refined locally; the continuum infimum over directions
/// may be smaller than the reported ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsenessResult {
    pub point: [f64; 3],
    pub scale: f64,
    pub delta: f64,
    pub direction: [f64; 3],
    pub ratio: f64,
    pub sparse: bool,
}

fn tangent_basis(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut t1 = [
        pick[1] * d[2] - pick[2] * d[1],
        pick[2] * d[0] - pick[0] * d[2],
        pick[0] * d[1] - pick[1] * d[0],
    ];
    let norm = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
    for v in &mut t1 {
        *v /= norm;
    }
    let t2 = [
        d[1] * t1[2] - d[2] * t1[1],
        d[2] * t1[0] - d[0] * t1[2],
        d[0] * t1[1] - d[1] * t1[0],
    ];
    (t1, t2)
}

fn check_scale(grid: Grid, r: f64) -> Result<()> {
    if !(r > 0.0 && r < 0.25 * grid.box_length()) {
        return Err(VscopeError::InvalidParam(format!(
            "segment half-length must lie in (0, box/4) = (0, {}), got {r}",
            0.25 * grid.box_length()
        )));
    }
    Ok(())
}

pub fn linear_sparseness(
    s: &LevelSet,
    x0: [f64; 3],
    r: f64,
    delta: f64,
    sampling: Sampling,
) -> Result<SparsenessResult> {
    check_scale(s.grid, r)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VscopeError::InvalidParam(format!(
            "sparseness fraction must lie strictly between 0 and 1, got {delta}"
        )));
    }
    if sampling.directions == 0 || sampling.per_spacing == 0 {
        return Err(VscopeError::InvalidParam(
            "sampling densities must be positive".into(),
        ));
    }
    let mut best_d = [0.0, 0.0, 1.0];
    let mut best = f64::INFINITY;
    for d in fibonacci_sphere(sampling.directions) {
        let occ = segment_occupancy(s, x0, r, d, sampling.per_spacing);
        if occ < best {
            best = occ;
            best_d = d;
        }
    }
    // the direction optimum is a continuum infimum; polish the sampled
    // winner with a shrinking tangent-step descent
    let mut step = (4.0 * std::f64::consts::PI / sampling.directions as f64).sqrt();
    let mut rounds = 0;
    while step > 1e-3 && rounds < 200 {
        let (t1, t2) = tangent_basis(best_d);
        let mut moved = false;
        for cand in [
            [best_d[0] + step * t1[0], best_d[1] + step * t1[1], best_d[2] + step * t1[2]],
            [best_d[0] - step * t1[0], best_d[1] - step * t1[1], best_d[2] - step * t1[2]],
            [best_d[0] + step * t2[0], best_d[1] + step * t2[1], best_d[2] + step * t2[2]],
            [best_d[0] - step * t2[0], best_d[1] - step * t2[1], best_d[2] - step * t2[2]],
        ] {
            let norm = (cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2]).sqrt();
            let cand = [cand[0] / norm, cand[1] / norm, cand[2] / norm];
            let occ = segment_occupancy(s, x0, r, cand, sampling.per_spacing);
            if occ < best {
                best = occ;
                best_d = cand;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
        rounds += 1;
    }
    Ok(SparsenessResult {
        point: x0,
        scale: r,
        delta,
        direction: best_d,
        ratio: best,
        sparse: best <= delta,
    })
}

/// Which nodes a scan queries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueryPoints {
    AllNodes,
    Sample { seed: u64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scale: f64,
    pub delta: f64,
    pub directions: usize,
    pub n_points: usize,
    pub worst_point: [f64; 3],
    pub worst_ratio: f64,
    pub worst_direction: [f64; 3],
    /// the worst point re-measured at doubled sampling
    pub worst_ratio_doubled: f64,
    /// doubling the sampling moved the worst ratio by less than 1e-2
    pub converged: bool,
    pub fraction_sparse: f64,
    pub all_sparse: bool,
    pub note: String,
}

fn scan_note(sampling: Sampling) -> String {
    format!(
        "ratios are minima over {} sampled directions with local refinement; the continuum infimum may be smaller",
        sampling.directions
    )
}

fn scan_nodes(
    s: &LevelSet,
    r: f64,
    delta: f64,
    nodes: &[usize],
    sampling: Sampling,
) -> Result<ScanReport> {
    check_scale(s.grid, r)?;
    if nodes.is_empty() {
        // nothing to query: vacuously sparse
        return Ok(ScanReport {
            scale: r,
            delta,
            directions: sampling.directions,
            n_points: 0,
            worst_point: [0.0; 3],
            worst_ratio: 0.0,
            worst_direction: [0.0, 0.0, 1.0],
            worst_ratio_doubled: 0.0,
            converged: true,
            fraction_sparse: 1.0,
            all_sparse: true,
            note: scan_note(sampling),
        });
    }
    let results: Vec<SparsenessResult> = nodes
        .par_iter()
        .map(|&i| {
            let (a, b, c) = s.grid.coords(i);
            linear_sparseness(s, s.grid.position(a, b, c), r, delta, sampling)
        })
        .collect::<Result<_>>()?;
    let worst = results
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.ratio.total_cmp(&b.ratio))
        .map(|(i, _)| i)
        .expect("nonempty scan");
    let pass = results.iter().filter(|r| r.sparse).count();
    let doubled = linear_sparseness(s, results[worst].point, r, delta, sampling.doubled())?;
    Ok(ScanReport {
        scale: r,
        delta,
        directions: sampling.directions,
        n_points: results.len(),
        worst_point: results[worst].point,
        worst_ratio: results[worst].ratio,
        worst_direction: results[worst].direction,
        worst_ratio_doubled: doubled.ratio,
        converged: (results[worst].ratio - doubled.ratio).abs() < 1e-2,
        fraction_sparse: pass as f64 / results.len() as f64,
        all_sparse: pass == results.len(),
        note: scan_note(sampling),
    })
}

pub fn sparseness_scan(
    s: &LevelSet,
    r: f64,
    delta: f64,
    points: QueryPoints,
    sampling: Sampling,
) -> Result<ScanReport> {
    let nodes: Vec<usize> = match points {
        QueryPoints::AllNodes => (0..s.grid.len()).collect(),
        QueryPoints::Sample { seed, count } => {
            if count == 0 {
                return Err(VscopeError::InvalidParam(
                    "scan sample count must be positive".into(),
                ));
            }
            if count >= s.grid.len() {
                (0..s.grid.len()).collect()
            } else {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut idx = rand::seq::index::sample(&mut rng, s.grid.len(), count).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    };
    scan_nodes(s, r, delta, &nodes, sampling)
}

/// Intense-vorticity geometry of one snapshot: the thresholded region, its
/// node-exact volume bound, the derived scale quantities, and a sparseness
/// scan of the region at the capped scale near the predicted time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub t: f64,
    pub c1: f64,
    pub delta: f64,
    pub d0: f64,
    pub omega_max: f64,
    pub omega_l1: f64,
    /// ||omega||_inf / c1
    pub threshold: f64,
    pub volume: f64,
    /// ||omega||_L1 / threshold; volume can never exceed it on the nodes
    pub tchebyshev_bound: f64,
    pub bound_ok: bool,
    /// c1 * ||omega||_L1, so the bound reads c2 / ||omega||_inf
    pub c2: f64,
    /// 1 / (2 d0^2): the cross-section scale reads c3 / sqrt(||omega||_inf)
    pub c3: f64,
    pub h: f64,
    pub alpha_min: f64,
    /// scan threshold ||omega||_inf / d0^alpha_min
    pub m_delta: f64,
    /// 1 / (2 d0^2 sqrt(||omega||_inf)); None at rest
    pub scale_cap: Option<f64>,
    /// [t + 1/(4 d0^2 ||omega||_inf), t + 1/(d0^2 ||omega||_inf)]; None at rest
    pub window: Option<[f64; 2]>,
    /// snapshot time the scan ran at
    pub scan_time: f64,
    /// scan scale exceeded box/4 and was clipped
    pub scale_clipped: bool,
    /// no snapshot falls inside the window (trajectory too short)
    pub partial: bool,
    pub scan: ScanReport,
}

const SCAN_POINT_BUDGET: usize = 256;
const SCAN_SEED: u64 = 2718;

pub fn criticality_report(
    fft: &Fft3,
    traj: &Trajectory,
    t: f64,
    c1: f64,
    delta: f64,
    d0: f64,
) -> Result<CriticalityReport> {
    if !(c1 > 1.0 && c1.is_finite()) {
        return Err(VscopeError::InvalidParam(format!(
            "intensity factor c1 must exceed 1, got {c1}"
        )));
    }
    if !(d0 > 0.0 && d0.is_finite()) {
        return Err(VscopeError::InvalidParam(format!(
            "sparseness constant d0 must be positive, got {d0}"
        )));
    }
    let (h, alpha_min) = h_alpha(delta)?;
    let at = traj.nearest_snapshot(t);
    let t_at = traj.snapshots[at].time;
    if (t_at - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(VscopeError::InvalidParam(format!(
            "no snapshot at t = {t}; nearest is {t_at}"
        )));
    }
    let omega = traj.vorticity(fft, at);
    let mag = omega.magnitude();
    let omega_max = mag.max_abs();
    let omega_l1 = mag.integral();
    let threshold = omega_max / c1;
    let region = level_set(&omega, threshold, t_at)?;
    let volume = region.volume();
    let tchebyshev_bound = if threshold > 0.0 { omega_l1 / threshold } else { 0.0 };
    let bound_ok = volume <= tchebyshev_bound * (1.0 + 1e-12);
    let m_delta = omega_max / d0.powf(alpha_min);
    let box_len = traj.grid.box_length();
    let max_scale = 0.2499 * box_len;

    let (scale_cap, window) = if omega_max > 0.0 {
        let cap = 1.0 / (2.0 * d0 * d0 * omega_max.sqrt());
        let w = [
            t_at + 1.0 / (4.0 * d0 * d0 * omega_max),
            t_at + 1.0 / (d0 * d0 * omega_max),
        ];
        (Some(cap), Some(w))
    } else {
        (None, None)
    };

    // snapshot nearest the predicted window, flagged when none reaches it
    let (scan_at, partial) = match window {
        None => (at, false),
        Some([lo, hi]) => {
            let mut best = at;
            let mut dist = f64::INFINITY;
            for (i, s) in traj.snapshots.iter().enumerate() {
                let d = if s.time < lo {
                    lo - s.time
                } else if s.time > hi {
                    s.time - hi
                } else {
                    0.0
                };
                if d < dist {
                    dist = d;
                    best = i;
                }
            }
            (best, dist > 1e-9 * hi.max(1.0))
        }
    };
    let scan_scale = scale_cap.map_or(box_len / 8.0, |c| c.min(max_scale));
    let scale_clipped = scale_cap.is_some_and(|c| c > max_scale);
    let scan_omega = traj.vorticity(fft, scan_at);
    let scan_set = level_set(&scan_omega, m_delta, traj.snapshots[scan_at].time)?;
    let mut intense: Vec<usize> = (0..scan_set.grid.len())
        .filter(|&i| scan_set.contains(i))
        .collect();
    if intense.len() > SCAN_POINT_BUDGET {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SCAN_SEED);
        let picked = rand::seq::index::sample(&mut rng, intense.len(), SCAN_POINT_BUDGET);
        let mut subset: Vec<usize> = picked.iter().map(|k| intense[k]).collect();
        subset.sort_unstable();
        intense = subset;
    }
    let scan = scan_nodes(&scan_set, scan_scale, delta, &intense, Sampling::default())?;

    Ok(CriticalityReport {
        t: t_at,
        c1,
        delta,
        d0,
        omega_max,
        omega_l1,
        threshold,
        volume,
        tchebyshev_bound,
        bound_ok,
        c2: c1 * omega_l1,
        c3: 1.0 / (2.0 * d0 * d0),
        h,
        alpha_min,
        m_delta,
        scale_cap,
        window,
        scan_time: traj.snapshots[scan_at].time,
        scale_clipped,
        partial,
        scan,
    })
}
