//! (K1, K2)-covers of the macro ball B(0, R0) at scale R.
//!
//! Two constructions, picked by theta = R / R0:
//!   theta < 1/2   body-centered lattice, pitch tuned so the covering radius
//!                 stays below R with a 1/32 margin (jitter eats into it).
//!   theta >= 1/2  one ball at the origin plus a shell of balls at
//!                 c* = sqrt(R0^2 - R^2), the radius at which a ball of
//!                 radius R carves the widest cap out of S(0, R0). The shell
//!                 directions come from a fixed menu of spherical nets.
//!
//! Every shell ball contains the origin (c* <= 2R exactly when theta >= 1/2
//! holds with slack), so the net size is capped at K2 - 1 by the local
//! multiplicity bound; this is what forces the shell regime to stop at 1/2.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VscopeError};
use crate::field::ScalarField;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CoverStrategy {
    Lattice,
    Jittered { seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cover {
    pub r0: f64,
    pub r: f64,
    pub k1: u32,
    pub k2: u32,
    pub box_length: f64,
    pub strategy: CoverStrategy,
    pub centers: Vec<[f64; 3]>,
}

impl Cover {
    pub fn n(&self) -> usize {
        self.centers.len()
    }
}

/// Evenly distributed unit directions (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    fibonacci_sphere_phased(n, 0.0)
}

fn fibonacci_sphere_phased(n: usize, phase: f64) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64 + phase;
            [rho * a.cos(), rho * a.sin(), z]
        })
        .collect()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Covering radius of a direction set in radians, measured against probes,
/// together with the deepest hole found.
fn covering_radius(dirs: &[[f64; 3]], probes: &[[f64; 3]]) -> (f64, [f64; 3]) {
    let mut worst = -1.0f64;
    let mut hole = [0.0, 0.0, 1.0];
    for &p in probes {
        let mut best = -1.0f64;
        for &d in dirs {
            let c = dot(p, d);
            if c > best {
                best = c;
            }
        }
        let ang = best.clamp(-1.0, 1.0).acos();
        if ang > worst {
            worst = ang;
            hole = p;
        }
    }
    (worst, hole)
}

const OCTAHEDRON: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

fn icosahedron() -> Vec<[f64; 3]> {
    let p = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut v = Vec::with_capacity(12);
    for &(a, b) in &[(1.0, p), (1.0, -p), (-1.0, p), (-1.0, -p)] {
        v.push(normalize([0.0, a, b]));
        v.push(normalize([a, b, 0.0]));
        v.push(normalize([b, 0.0, a]));
    }
    v
}

/// One sweep of cell statistics: for every direction, the farthest probe
/// assigned to it and the angle to that probe. Returns per-cell data plus
/// the global covering radius and its hole.
fn cell_extremes(
    pts: &[[f64; 3]],
    probes: &[[f64; 3]],
) -> (Vec<([f64; 3], f64)>, f64, [f64; 3]) {
    let mut far: Vec<([f64; 3], f64)> = pts.iter().map(|&p| (p, 0.0)).collect();
    let mut cov = 0.0f64;
    let mut hole = [0.0, 0.0, 1.0];
    for &q in probes {
        let mut bi = 0;
        let mut bc = -2.0f64;
        for (i, &p) in pts.iter().enumerate() {
            let c = dot(p, q);
            if c > bc {
                bc = c;
                bi = i;
            }
        }
        let ang = bc.clamp(-1.0, 1.0).acos();
        if ang > far[bi].1 {
            far[bi] = (q, ang);
        }
        if ang > cov {
            cov = ang;
            hole = q;
        }
    }
    (far, cov, hole)
}

fn pull(p: [f64; 3], q: [f64; 3], t: f64) -> [f64; 3] {
    normalize([
        p[0] * (1.0 - t) + q[0] * t,
        p[1] * (1.0 - t) + q[1] * t,
        p[2] * (1.0 - t) + q[2] * t,
    ])
}

/// Shrink the deepest hole of a direction set: a Lloyd-like phase moving
/// every direction toward its own cell's farthest probe (step scaled by how
/// much the cell exceeds the smallest one), then single deepest-hole pulls
/// with a decaying step. Deterministic; keeps the best configuration seen
/// over a few spiral-phase restarts.
fn optimized_net(n: usize) -> Vec<[f64; 3]> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Vec<[f64; 3]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&n) {
        return v.clone();
    }
    let probes = fibonacci_sphere(20_000);
    let mut best: Vec<[f64; 3]> = Vec::new();
    let mut best_cov = f64::INFINITY;
    for restart in 0..4 {
        let mut pts = fibonacci_sphere_phased(n, restart as f64 * 0.71);
        for _ in 0..350 {
            let (far, cov, _) = cell_extremes(&pts, &probes);
            if cov < best_cov {
                best_cov = cov;
                best = pts.clone();
            }
            let r_min = far
                .iter()
                .map(|f| f.1)
                .fold(f64::INFINITY, f64::min)
                .min(cov);
            let spread = (cov - r_min).max(1e-9);
            for (i, &(fq, ri)) in far.iter().enumerate() {
                let t = 0.35 * (ri - r_min) / spread;
                if t > 0.0 {
                    pts[i] = pull(pts[i], fq, t);
                }
            }
        }
        for it in 0..300 {
            let (_, cov, hole) = cell_extremes(&pts, &probes);
            if cov < best_cov {
                best_cov = cov;
                best = pts.clone();
            }
            let mut ni = 0;
            let mut nc = -2.0;
            for (i, &p) in pts.iter().enumerate() {
                let c = dot(p, hole);
                if c > nc {
                    nc = c;
                    ni = i;
                }
            }
            let t = 0.22 * (-(it as f64) / 120.0).exp();
            pts[ni] = pull(pts[ni], hole, t);
        }
    }
    cache.lock().unwrap().insert(n, best.clone());
    best
}

fn net_directions(size: usize) -> Vec<[f64; 3]> {
    match size {
        6 => OCTAHEDRON.to_vec(),
        12 => icosahedron(),
        _ => optimized_net(size),
    }
}

/// Selection measures covering radii against 80k probes (~0.7 degree mesh);
/// treat a measured radius as reliable only with this allowance added.
const PROBE_SAFETY: f64 = 0.013;
const SELECTION_PROBES: usize = 80_000;

const NET_MENU: [usize; 9] = [6, 12, 16, 18, 20, 22, 23, 24, 26];

/// Worst-case coverage check for the shell construction: a point at radius
/// rr whose angular distance to every shell direction is beta must fall in
/// the origin ball or in the shell ball of its nearest direction.
fn shell_covers(r0: f64, r: f64, cstar: f64, beta: f64) -> bool {
    let cb = beta.cos();
    let steps = 4000;
    for i in 1..=steps {
        let rr = r0 * i as f64 / steps as f64;
        if rr <= r * (1.0 - 1e-12) {
            continue;
        }
        let d2 = rr * rr + cstar * cstar - 2.0 * rr * cstar * cb;
        if d2 > r * r * (1.0 - 1e-12) {
            return false;
        }
    }
    true
}

/// Uniform random rotation (Shoemake quaternion method).
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let tau = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (tau * u2).sin(), a * (tau * u2).cos());
    let (z, w) = (b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn rotate(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn wrap_point(x: [f64; 3], l: f64) -> [f64; 3] {
    [x[0].rem_euclid(l), x[1].rem_euclid(l), x[2].rem_euclid(l)]
}

/// Per-point jitter radius for the lattice regime, as a fraction of R.
const BCC_JITTER_FRACTION: f64 = 0.08;
/// Covering-radius margin kept by the lattice pitch.
const BCC_MARGIN: f64 = 1.0 / 32.0;

/// Worst local multiplicities of the doubled balls over the lattice
/// geometry, with slack for grid-node alignment and (in the jittered case)
/// the per-point displacement.
const BCC_LATTICE_MULT: u32 = 18;
const BCC_JITTER_MULT: u32 = 24;

fn bcc_centers(r0: f64, r: f64, l: f64, seed: Option<u64>) -> Vec<[f64; 3]> {
    let delta = if seed.is_some() {
        BCC_JITTER_FRACTION * r
    } else {
        0.0
    };
    // sqrt(5)/4 * pitch + jitter = R (1 - margin) covers every kept point
    let pitch = (4.0 / 5.0f64.sqrt()) * (r * (1.0 - BCC_MARGIN) - delta);
    let r_cov = r * (1.0 - BCC_MARGIN);
    let keep = r0 + r_cov;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let m = (keep / (0.5 * pitch)).ceil() as i64;
    let mut centers = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                // corner sublattice has all-even indices, body centers all-odd
                let same_parity =
                    i.rem_euclid(2) == j.rem_euclid(2) && j.rem_euclid(2) == k.rem_euclid(2);
                if !same_parity {
                    continue;
                }
                let p = [
                    0.5 * pitch * i as f64,
                    0.5 * pitch * j as f64,
                    0.5 * pitch * k as f64,
                ];
                if dot(p, p).sqrt() > keep {
                    continue;
                }
                let p = if let Some(ref mut rng) = rng {
                    loop {
                        let v = [
                            rng.gen::<f64>() * 2.0 - 1.0,
                            rng.gen::<f64>() * 2.0 - 1.0,
                            rng.gen::<f64>() * 2.0 - 1.0,
                        ];
                        if dot(v, v) <= 1.0 {
                            break [
                                p[0] + delta * v[0],
                                p[1] + delta * v[1],
                                p[2] + delta * v[2],
                            ];
                        }
                    }
                } else {
                    p
                };
                centers.push(wrap_point(p, l));
            }
        }
    }
    centers
}

fn shell_centers(r0: f64, r: f64, l: f64, k2: u32, seed: Option<u64>) -> Result<Vec<[f64; 3]>> {
    let cstar = (r0 * r0 - r * r).max(0.0).sqrt();
    let probes = fibonacci_sphere(SELECTION_PROBES);
    for &size in &NET_MENU {
        // every shell ball contains the origin here, so the shell size is
        // capped by the local multiplicity budget
        if size as u32 + 1 > k2 {
            break;
        }
        let dirs = net_directions(size);
        let (measured, _) = covering_radius(&dirs, &probes);
        if !shell_covers(r0, r, cstar, measured + PROBE_SAFETY) {
            continue;
        }
        let rot = seed.map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            random_rotation(&mut rng)
        });
        let mut centers = vec![[0.0, 0.0, 0.0]];
        for d in dirs {
            let d = match &rot {
                Some(m) => rotate(m, d),
                None => d,
            };
            centers.push(wrap_point([cstar * d[0], cstar * d[1], cstar * d[2]], l));
        }
        return Ok(centers);
    }
    Err(VscopeError::Infeasible(format!(
        "no spherical net of size < K2 = {k2} covers the shell at R = {r}, R0 = {r0}"
    )))
}

/// Build a certified-by-construction cover of B(0, R0) at scale R.
pub fn generate(
    r0: f64,
    r: f64,
    k1: u32,
    k2: u32,
    strategy: CoverStrategy,
    box_length: f64,
) -> Result<Cover> {
    if !(r > 0.0 && r <= r0 * (1.0 + 1e-12)) {
        return Err(VscopeError::InvalidParam(format!(
            "cover scale must satisfy 0 < R <= R0, got R = {r}, R0 = {r0}"
        )));
    }
    if !(4.0 * r0 <= box_length * (1.0 + 1e-12)) {
        return Err(VscopeError::InvalidParam(format!(
            "doubled macro ball must fit the box: 4 R0 = {} > {box_length}",
            4.0 * r0
        )));
    }
    let seed = match strategy {
        CoverStrategy::Lattice => None,
        CoverStrategy::Jittered { seed } => Some(seed),
    };
    let theta = r / r0;
    let centers = if theta >= 1.0 - 1e-9 {
        vec![[0.0, 0.0, 0.0]]
    } else if theta >= 0.5 - 1e-12 {
        shell_centers(r0, r, box_length, k2, seed)?
    } else {
        let worst = if seed.is_some() {
            BCC_JITTER_MULT
        } else {
            BCC_LATTICE_MULT
        };
        if worst > k2 {
            return Err(VscopeError::Infeasible(format!(
                "lattice cover multiplicity {worst} exceeds K2 = {k2}"
            )));
        }
        bcc_centers(r0, r, box_length, seed)
    };
    let n = centers.len() as f64;
    let vol_ratio = (r0 / r).powi(3);
    if n > k1 as f64 * vol_ratio + 1e-9 {
        return Err(VscopeError::Infeasible(format!(
            "cover needs {n} balls, above the count bound K1 (R0/R)^3 = {:.3}",
            k1 as f64 * vol_ratio
        )));
    }
    if n < vol_ratio - 1e-9 {
        return Err(VscopeError::Infeasible(format!(
            "cover has {n} balls, below the volume bound (R0/R)^3 = {vol_ratio:.3}"
        )));
    }
    Ok(Cover {
        r0,
        r,
        k1,
        k2,
        box_length,
        strategy,
        centers,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertReport {
    pub n_centers: usize,
    pub resolution: usize,
    pub nodes_inside: usize,
    pub uncovered_nodes: usize,
    pub max_multiplicity: u32,
    /// R >= 8 h, the resolution needed for node counting to see the balls.
    pub scale_resolved: bool,
    pub coverage_ok: bool,
    pub multiplicity_ok: bool,
    pub count_ok: bool,
    pub pass: bool,
}

/// Exhaustive node-count certification: every grid node inside B(0, R0)
/// must lie in some ball B(c_i, R), and in at most K2 doubled balls.
pub fn certify(cover: &Cover, grid: Grid) -> Result<CertReport> {
    if (grid.box_length() - cover.box_length).abs() > 1e-12 * cover.box_length {
        return Err(VscopeError::GridMismatch(format!(
            "cover box {} vs grid box {}",
            cover.box_length,
            grid.box_length()
        )));
    }
    let n = grid.n();
    let h = grid.spacing();
    let total = n * n * n;
    let mut counts = vec![0u8; total];
    let mut covered = vec![false; total];
    let span = ((2.0 * cover.r) / h).ceil() as i64 + 1;
    let full = 2 * span + 1 >= n as i64;
    let r2 = cover.r * cover.r;
    let d2r2 = 4.0 * r2;
    for c in &cover.centers {
        let ci = [
            (c[0] / h).round() as i64,
            (c[1] / h).round() as i64,
            (c[2] / h).round() as i64,
        ];
        let range = |o: i64| -> Vec<usize> {
            if full {
                (0..n).collect()
            } else {
                ((o - span)..=(o + span))
                    .map(|v| v.rem_euclid(n as i64) as usize)
                    .collect()
            }
        };
        let (xi, yi, zi) = (range(ci[0]), range(ci[1]), range(ci[2]));
        for &k in &zi {
            for &j in &yi {
                for &i in &xi {
                    let p = grid.position(i, j, k);
                    let d2 = grid.distance2(p, *c);
                    if d2 <= d2r2 {
                        let id = grid.idx(i, j, k);
                        counts[id] = counts[id].saturating_add(1);
                        if d2 <= r2 {
                            covered[id] = true;
                        }
                    }
                }
            }
        }
    }
    let mut nodes_inside = 0usize;
    let mut uncovered = 0usize;
    let mut max_mult = 0u32;
    let r02 = cover.r0 * cover.r0;
    let m = (cover.r0 / h).ceil() as i64 + 1;
    let full0 = 2 * m + 1 >= n as i64;
    let scan: Vec<usize> = if full0 {
        (0..n).collect()
    } else {
        (-m..=m).map(|v| v.rem_euclid(n as i64) as usize).collect()
    };
    for &k in &scan {
        for &j in &scan {
            for &i in &scan {
                let p = grid.position(i, j, k);
                if grid.distance2(p, [0.0, 0.0, 0.0]) > r02 {
                    continue;
                }
                nodes_inside += 1;
                let id = grid.idx(i, j, k);
                if !covered[id] {
                    uncovered += 1;
                }
                max_mult = max_mult.max(counts[id] as u32);
            }
        }
    }
    let vol_ratio = (cover.r0 / cover.r).powi(3);
    let nc = cover.centers.len();
    let count_ok =
        nc as f64 >= vol_ratio - 1e-9 && nc as f64 <= cover.k1 as f64 * vol_ratio + 1e-9;
    let scale_resolved = cover.r >= 8.0 * h * (1.0 - 1e-12);
    let coverage_ok = uncovered == 0;
    let multiplicity_ok = max_mult <= cover.k2;
    Ok(CertReport {
        n_centers: nc,
        resolution: n,
        nodes_inside,
        uncovered_nodes: uncovered,
        max_multiplicity: max_mult,
        scale_resolved,
        coverage_ok,
        multiplicity_ok,
        count_ok,
        pass: coverage_ok && multiplicity_ok && count_ok && scale_resolved,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyMember {
    pub cover: Cover,
    pub bias: Bias,
    /// Set when the biased construction failed certification and the member
    /// was replaced by the plain lattice cover.
    pub fallback: bool,
}

/// Node multiplicity of the doubled balls over the whole grid.
fn raster_counts(centers: &[[f64; 3]], r: f64, grid: Grid) -> Vec<u8> {
    let n = grid.n();
    let h = grid.spacing();
    let mut counts = vec![0u8; n * n * n];
    let span = ((2.0 * r) / h).ceil() as i64 + 1;
    let full = 2 * span + 1 >= n as i64;
    let d2r2 = 4.0 * r * r;
    for c in centers {
        let ci = [
            (c[0] / h).round() as i64,
            (c[1] / h).round() as i64,
            (c[2] / h).round() as i64,
        ];
        let range = |o: i64| -> Vec<usize> {
            if full {
                (0..n).collect()
            } else {
                ((o - span)..=(o + span))
                    .map(|v| v.rem_euclid(n as i64) as usize)
                    .collect()
            }
        };
        let (xi, yi, zi) = (range(ci[0]), range(ci[1]), range(ci[2]));
        for &k in &zi {
            for &j in &yi {
                for &i in &xi {
                    let p = grid.position(i, j, k);
                    if grid.distance2(p, *c) <= d2r2 {
                        let id = grid.idx(i, j, k);
                        counts[id] = counts[id].saturating_add(1);
                    }
                }
            }
        }
    }
    counts
}

/// Mean of a field over grid nodes within `radius` of `center`.
fn ball_mean(density: &ScalarField, center: [f64; 3], radius: f64) -> f64 {
    let grid = density.grid;
    let n = grid.n();
    let h = grid.spacing();
    let span = (radius / h).ceil() as i64 + 1;
    let full = 2 * span + 1 >= n as i64;
    let ci = [
        (center[0] / h).round() as i64,
        (center[1] / h).round() as i64,
        (center[2] / h).round() as i64,
    ];
    let range = |o: i64| -> Vec<usize> {
        if full {
            (0..n).collect()
        } else {
            ((o - span)..=(o + span))
                .map(|v| v.rem_euclid(n as i64) as usize)
                .collect()
        }
    };
    let (xi, yi, zi) = (range(ci[0]), range(ci[1]), range(ci[2]));
    let mut sum = 0.0;
    let mut cnt = 0usize;
    let r2 = radius * radius;
    for &k in &zi {
        for &j in &yi {
            for &i in &xi {
                let p = grid.position(i, j, k);
                if grid.distance2(p, center) <= r2 {
                    sum += density.values[grid.idx(i, j, k)];
                    cnt += 1;
                }
            }
        }
    }
    if cnt == 0 {
        0.0
    } else {
        sum / cnt as f64
    }
}

/// Grid fine enough that node certification resolves the scale (R >= 8 h).
fn certification_grid(box_length: f64, r: f64) -> Result<Grid> {
    let mut n = ((8.0 * box_length / r).ceil() as usize).max(8);
    if n % 2 == 1 {
        n += 1;
    }
    Grid::new(n, box_length)
}

/// Covers biased toward positive-mass and negative-mass regions of a density
/// plus unbiased jittered covers: the family whose ensemble-average spread
/// demonstrates the sign-fluctuation detector.
pub fn adversarial_family(
    density: &ScalarField,
    r0: f64,
    r: f64,
    k1: u32,
    k2: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<FamilyMember>> {
    if count == 0 {
        return Err(VscopeError::InvalidParam("family count must be > 0".into()));
    }
    let l = density.grid.box_length();
    let cert_grid = certification_grid(l, r)?;
    // score candidate positions by the local mass of the density
    let pitch = r;
    let m = (r0 / pitch).ceil() as i64;
    let mut scored: Vec<([f64; 3], f64)> = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let p = [
                    pitch * i as f64,
                    pitch * j as f64,
                    pitch * k as f64,
                ];
                if dot(p, p).sqrt() > r0 {
                    continue;
                }
                scored.push((p, ball_mean(density, wrap_point(p, l), r)));
            }
        }
    }
    let mut family = Vec::with_capacity(count);
    for idx in 0..count {
        let bias = match idx % 3 {
            0 => Bias::Positive,
            1 => Bias::Negative,
            _ => Bias::Neutral,
        };
        let member_seed = seed
            .wrapping_add((idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(1);
        let base = generate(
            r0,
            r,
            k1,
            k2,
            CoverStrategy::Jittered { seed: member_seed },
            l,
        )?;
        let member = match bias {
            Bias::Neutral => FamilyMember {
                cover: base,
                bias,
                fallback: false,
            },
            _ => {
                let sign = if bias == Bias::Positive { 1.0 } else { -1.0 };
                let mut order: Vec<usize> = (0..scored.len()).collect();
                order.sort_by(|&a, &b| {
                    (sign * scored[b].1)
                        .partial_cmp(&(sign * scored[a].1))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let headroom = ((k1 as f64 * (r0 / r).powi(3) + 1e-9) as usize)
                    .saturating_sub(base.centers.len());
                let budget = headroom.min((base.centers.len() / 8).max(2));
                let cutoff = scored.iter().map(|s| s.1.abs()).fold(0.0f64, f64::max) * 0.02;
                // track the exact node multiplicity an extra would create on
                // the certification grid; accept only while it stays within K2
                let mut counts = raster_counts(&base.centers, r, cert_grid);
                let nn = cert_grid.n();
                let h = cert_grid.spacing();
                let span = ((2.0 * r) / h).ceil() as i64 + 1;
                let full = 2 * span + 1 >= nn as i64;
                let d2r2 = 4.0 * r * r;
                let mut cover = base.clone();
                let mut extras = 0usize;
                for &oi in &order {
                    if extras >= budget {
                        break;
                    }
                    let (p, s) = scored[oi];
                    if sign * s <= cutoff {
                        break;
                    }
                    let wp = wrap_point(p, l);
                    let ci = [
                        (wp[0] / h).round() as i64,
                        (wp[1] / h).round() as i64,
                        (wp[2] / h).round() as i64,
                    ];
                    let range = |o: i64| -> Vec<usize> {
                        if full {
                            (0..nn).collect()
                        } else {
                            ((o - span)..=(o + span))
                                .map(|v| v.rem_euclid(nn as i64) as usize)
                                .collect()
                        }
                    };
                    let (xi, yi, zi) = (range(ci[0]), range(ci[1]), range(ci[2]));
                    let mut ball: Vec<usize> = Vec::new();
                    let mut worst = 0u8;
                    for &k in &zi {
                        for &j in &yi {
                            for &i in &xi {
                                let q = cert_grid.position(i, j, k);
                                if cert_grid.distance2(q, wp) <= d2r2 {
                                    let id = cert_grid.idx(i, j, k);
                                    ball.push(id);
                                    worst = worst.max(counts[id]);
                                }
                            }
                        }
                    }
                    if worst as u32 + 1 > k2 {
                        continue;
                    }
                    for id in ball {
                        counts[id] = counts[id].saturating_add(1);
                    }
                    cover.centers.push(wp);
                    extras += 1;
                }
                let report = certify(&cover, cert_grid)?;
                if report.pass {
                    FamilyMember {
                        cover,
                        bias,
                        fallback: false,
                    }
                } else {
                    FamilyMember {
                        cover: generate(r0, r, k1, k2, CoverStrategy::Lattice, l)?,
                        bias,
                        fallback: true,
                    }
                }
            }
        };
        family.push(member);
    }
    Ok(family)
}
