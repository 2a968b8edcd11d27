//! End-to-end acceptance gates. Each criterion prints exactly one PASS or
//! FAIL line with its measured numbers; the test fails if any line fails.
//! Tolerances are pinned here, next to the criterion they gate.

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe, UnwindSafe};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vscope::covers::{self, Bias, Cover, CoverStrategy};
use vscope::cutoffs::{
    refinement_study_spatial, refinement_study_temporal, SpatialCutoff, TemporalCutoff,
    TemporalProfile,
};
use vscope::ensemble::{self, CutoffConfig, TheoremConfig};
use vscope::field::ScalarField;
use vscope::grid::Grid;
use vscope::solver::{simulate, taylor_green, InitialCondition, SolverConfig, Trajectory};
use vscope::sparseness::{h_alpha, level_set, LevelSet, linear_sparseness, Sampling};
use vscope::spectral::{curl_field, Fft3};

/// relative energy error against the closed-form decay
const DECAY_RTOL: f64 = 1e-5;
/// wall-clock budget for the decay run, seconds
const DECAY_WALL_LIMIT: f64 = 120.0;
/// per-element budget residual, relative to the largest term
const BUDGET_RESIDUAL_LIMIT: f64 = 0.02;
/// residual contraction required when the step (and snapshot spacing) halves;
/// 2 is first order in the time quadrature
const BUDGET_HALVING_MIN: f64 = 2.0;
/// two-sided comparability constant ceiling for the enstrophy density
const COMPARABILITY_LIMIT: f64 = 50.0;
/// large-scale detector bound, as a fraction of the density amplitude
const DETECTOR_FLOOR: f64 = 0.1;
/// wall-clock budget for the positivity scan including its run, seconds
const POSITIVITY_WALL_LIMIT: f64 = 900.0;
const CHEBYSHEV_PAIRS: usize = 100;
/// direction-density identities are closed-form; they get equality precision
const H_EXACT_TOL: f64 = 1e-12;
/// occupancy against closed forms, default and doubled sampling
const SPARSENESS_RTOL: f64 = 0.02;
const SPARSENESS_RTOL_DOUBLED: f64 = 5e-3;
/// sup-ratio endpoints must stay within 20 percent of their midpoint
const REFINEMENT_SPREAD_LIMIT: f64 = 0.4;

type Outcome = Result<String, String>;

fn guard<T>(f: impl FnOnce() -> T + UnwindSafe) -> Result<T, String> {
    catch_unwind(f).map_err(|p| {
        p.downcast_ref::<&str>()
            .map(|s| (*s).to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .map(|m| format!("panicked: {m}"))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn run(f: impl FnOnce() -> Outcome + UnwindSafe) -> Outcome {
    guard(f).unwrap_or_else(Err)
}

#[test]
fn acceptance() {
    let mut failed: Vec<usize> = Vec::new();
    let mut record = |no: usize, name: &str, out: Outcome| {
        match out {
            Ok(d) => println!("criterion {no} {name}: PASS ({d})"),
            Err(d) => {
                println!("criterion {no} {name}: FAIL ({d})");
                failed.push(no);
            }
        };
    };

    record(1, "closed-form decay", run(exact_decay));
    record(2, "budget closure", run(budget_closure));

    let (o3, o5) = match guard(AssertUnwindSafe(turbulent_run)) {
        Ok((traj, fft, sim_wall)) => (
            run(AssertUnwindSafe(|| comparability(&traj, &fft))),
            run(AssertUnwindSafe(|| positivity_window(&traj, &fft, sim_wall))),
        ),
        Err(m) => (
            Err(format!("shared run failed: {m}")),
            Err(format!("shared run failed: {m}")),
        ),
    };
    record(3, "ensemble comparability", o3);
    record(4, "sign detector", run(sign_detector));
    record(5, "stretching positivity", o5);
    record(6, "level-set mass bound", run(level_set_bound));
    record(7, "direction-density law", run(direction_density));
    record(8, "occupancy closed forms", run(occupancy_closed_forms));
    record(9, "cutoff refinement", run(cutoff_refinement));

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// 64^3 decay run against the analytic solution: the nonlinear term of this
/// flow is a pure gradient, so the projected dynamics are exactly diffusive
/// and the energy follows exp(-4 nu t) to roundoff.
fn exact_decay() -> Outcome {
    let cfg = SolverConfig {
        n: 64,
        box_length: TAU,
        viscosity: 1.0,
        dt: 1e-3,
        t_end: 0.5,
        snapshot_stride: 500,
        cfl_limit: 0.5,
        initial: InitialCondition::TaylorGreen,
    };
    let started = Instant::now();
    let traj = simulate(&cfg).map_err(|f| format!("run failed: {}", f.error))?;
    let wall = started.elapsed().as_secs_f64();
    let rec = traj.records.last().ok_or("no step records")?;
    if (rec.time - cfg.t_end).abs() > 1e-9 {
        return Err(format!("final record at t = {}, wanted {}", rec.time, cfg.t_end));
    }
    let reference = taylor_green(traj.grid, cfg.viscosity, rec.time).energy();
    let closed = 2.0 * PI.powi(3) * (-4.0 * cfg.viscosity * rec.time).exp();
    if (reference / closed - 1.0).abs() > 1e-12 {
        return Err(format!(
            "analytic references disagree: nodes {reference}, closed form {closed}"
        ));
    }
    let rel = (rec.energy / reference - 1.0).abs();
    if rel > DECAY_RTOL {
        return Err(format!("relative energy error {rel:.3e} over {DECAY_RTOL:.0e}"));
    }
    if wall > DECAY_WALL_LIMIT {
        return Err(format!("took {wall:.1} s, budget {DECAY_WALL_LIMIT} s"));
    }
    Ok(format!("relative energy error {rel:.2e}, {wall:.1} s"))
}

fn corner_cover() -> Cover {
    let mut centers = Vec::new();
    for &x in &[-0.4, 0.4] {
        for &y in &[-0.4, 0.4] {
            for &z in &[-0.4, 0.4] {
                centers.push([x, y, z]);
            }
        }
    }
    Cover {
        r0: 1.2,
        r: 1.0,
        k1: 8,
        k2: 27,
        box_length: TAU,
        strategy: CoverStrategy::Lattice,
        centers,
    }
}

/// Every element of an 8-ball cover closes its enstrophy budget on a decay
/// run, and the residual contracts at least first order when the step and
/// the snapshot spacing halve together.
fn budget_closure() -> Outcome {
    let run = |dt: f64| -> Result<Trajectory, String> {
        let cfg = SolverConfig {
            n: 32,
            box_length: TAU,
            viscosity: 1.0,
            dt,
            t_end: 0.3,
            snapshot_stride: 3,
            cfl_limit: 0.8,
            initial: InitialCondition::TaylorGreen,
        };
        simulate(&cfg).map_err(|f| format!("run failed: {}", f.error))
    };
    let cover = corner_cover();
    let cert = covers::certify(&cover, Grid::new(128, TAU).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    if !cert.pass {
        return Err(format!("cover certification failed: {cert:?}"));
    }
    let cutoffs = CutoffConfig::new(0.75, 0.3).map_err(|e| e.to_string())?;
    let fft = Fft3::new(32);
    let coarse = ensemble::budget_cover(&fft, &run(2e-3)?, &cover, &cutoffs)
        .map_err(|e| e.to_string())?;
    let fine = ensemble::budget_cover(&fft, &run(1e-3)?, &cover, &cutoffs)
        .map_err(|e| e.to_string())?;
    let max_of = |b: &[ensemble::LocalBudget]| {
        b.iter().map(|e| e.relative_residual).fold(0.0f64, f64::max)
    };
    let (max_coarse, max_fine) = (max_of(&coarse), max_of(&fine));
    if max_coarse > BUDGET_RESIDUAL_LIMIT || max_fine > BUDGET_RESIDUAL_LIMIT {
        return Err(format!(
            "residuals {max_coarse:.3e} / {max_fine:.3e} over {BUDGET_RESIDUAL_LIMIT}"
        ));
    }
    let mean = |b: &[ensemble::LocalBudget]| {
        b.iter().map(|e| e.relative_residual).sum::<f64>() / b.len() as f64
    };
    let ratio = mean(&coarse) / mean(&fine);
    if !(ratio >= BUDGET_HALVING_MIN) {
        return Err(format!("halving ratio {ratio:.2} under {BUDGET_HALVING_MIN}"));
    }
    Ok(format!(
        "8 elements, max residual {max_coarse:.1e} -> {max_fine:.1e}, halving ratio {ratio:.1}"
    ))
}

/// Decaying run shared by the comparability and positivity criteria. The
/// final stored time is 2.25; both criteria evaluate at 2.025, which lands
/// exactly on a snapshot (stride 6 at dt 7.5e-3).
fn turbulent_run() -> (Trajectory, Fft3, f64) {
    let cfg = SolverConfig {
        n: 64,
        box_length: TAU,
        viscosity: 5e-3,
        dt: 7.5e-3,
        t_end: 2.25,
        snapshot_stride: 6,
        cfl_limit: 0.5,
        initial: InitialCondition::Random {
            seed: 7,
            slope: 4.0,
            peak: 4.0,
            u_rms: 0.15,
        },
    };
    let started = Instant::now();
    let traj = simulate(&cfg).expect("decaying run");
    let wall = started.elapsed().as_secs_f64();
    (traj, Fft3::new(cfg.n), wall)
}

const EVAL_TIME: f64 = 2.025;
const MACRO_RADIUS: f64 = 1.4;
const ELEMENT_SCALES: [f64; 4] = [0.8, 0.95, 1.1, 1.3];

/// Enstrophy-density ensemble averages over 20 jittered covers at each of 4
/// scales all land in one two-sided band around the macro average.
fn comparability(traj: &Trajectory, fft: &Fft3) -> Outcome {
    let mut fields = Vec::new();
    let mut times = Vec::new();
    for (i, s) in traj.snapshots.iter().enumerate() {
        if s.time <= EVAL_TIME + 1e-9 * EVAL_TIME {
            fields.push(traj.vorticity(fft, i).magnitude_sq());
            times.push(s.time);
        }
    }
    let refs: Vec<&ScalarField> = fields.iter().collect();
    let cutoffs = CutoffConfig::new(0.75, EVAL_TIME).map_err(|e| e.to_string())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (si, &r) in ELEMENT_SCALES.iter().enumerate() {
        for j in 0..20u64 {
            let seed = 100 + si as u64 * 20 + j;
            let cover = covers::generate(
                MACRO_RADIUS,
                r,
                8,
                27,
                CoverStrategy::Jittered { seed },
                TAU,
            )
            .map_err(|e| e.to_string())?;
            let cert = covers::certify(&cover, traj.grid).map_err(|e| e.to_string())?;
            if !cert.pass {
                return Err(format!("cover at scale {r}, seed {seed} failed: {cert:?}"));
            }
            let rep = ensemble::ensemble_average(&refs, &times, &cover, &cutoffs, 1.0)
                .map_err(|e| e.to_string())?;
            let ratio = rep
                .ratio_to_macro
                .ok_or_else(|| "macro average vanished".to_string())?;
            if !(ratio > 0.0) {
                return Err(format!("nonpositive ratio {ratio} at scale {r}, seed {seed}"));
            }
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    let k_emp = hi.max(1.0 / lo);
    if !(k_emp <= COMPARABILITY_LIMIT) {
        return Err(format!("K {k_emp:.1} over {COMPARABILITY_LIMIT}"));
    }
    Ok(format!(
        "80 certified covers, ratios in [{lo:.3}, {hi:.3}], K {k_emp:.2}"
    ))
}

/// An adversarial cover family around an oscillatory density finds averages
/// of both signs at the oscillation scale, while at the macro scale every
/// member's average collapses below a tenth of the amplitude.
fn sign_detector() -> Outcome {
    let grid = Grid::new(128, TAU).map_err(|e| e.to_string())?;
    let density = ScalarField::from_fn(grid, |x, _, _| (8.0 * x).sin());
    let cutoffs = CutoffConfig::new(0.75, 1.0).map_err(|e| e.to_string())?;
    let times = [0.0, 0.25, 0.5, 0.75, 1.0];
    let refs = [&density; 5];
    let means = |r: f64| -> Result<Vec<(Bias, f64)>, String> {
        let family =
            covers::adversarial_family(&density, PI / 2.0, r, 8, 27, 12, 42).map_err(|e| e.to_string())?;
        family
            .iter()
            .map(|m| {
                ensemble::ensemble_average(&refs, &times, &m.cover, &cutoffs, 1.0)
                    .map(|rep| (m.bias, rep.mean))
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let small = means(TAU / 64.0)?;
    let most_negative = small.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let most_positive = small.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    if !(most_negative < 0.0 && most_positive > 0.0) {
        return Err(format!(
            "fine-scale means one-sided: [{most_negative:.2e}, {most_positive:.2e}]"
        ));
    }
    let large = means(TAU / 4.0)?;
    let worst = large.iter().map(|m| m.1.abs()).fold(0.0f64, f64::max);
    if !(worst <= DETECTOR_FLOOR) {
        return Err(format!("macro-scale |mean| {worst:.3} over {DETECTOR_FLOOR}"));
    }
    Ok(format!(
        "fine means span [{most_negative:+.2}, {most_positive:+.2}], macro |mean| <= {worst:.3}"
    ))
}

/// Ensemble vortex-stretching averages are positive for every certified
/// cover at every admissible scale of the shared decaying run, with a
/// finite measured comparability constant.
fn positivity_window(traj: &Trajectory, fft: &Fft3, sim_wall: f64) -> Outcome {
    let started = Instant::now();
    let cfg = TheoremConfig {
        t: EVAL_TIME,
        r0: MACRO_RADIUS,
        scales: ELEMENT_SCALES.to_vec(),
        family: 4,
        seed: 1,
        k1: 8,
        k2: 27,
        rho: 0.75,
        c_report: 1.0,
        preflight_tol: 0.05,
    };
    let rep = ensemble::theorem_check(fft, traj, &cfg).map_err(|e| e.to_string())?;
    if !rep.applicable {
        return Err(format!("scan not applicable: {:?}", rep.reason));
    }
    if !rep.skipped_scales.is_empty() {
        return Err(format!("scales fell out of range: {:?}", rep.skipped_scales));
    }
    for s in &rep.per_scale {
        if !s.all_positive {
            return Err(format!("nonpositive average at scale {}", s.scale));
        }
    }
    let c_emp = rep.c_emp.ok_or("no measured constant")?;
    if !c_emp.is_finite() {
        return Err(format!("measured constant {c_emp}"));
    }
    // the scan derives one seed per cover; rebuild the same covers and
    // certify them node-exactly on the run grid
    for (si, &scale) in cfg.scales.iter().enumerate() {
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
                TAU,
            )
            .map_err(|e| e.to_string())?;
            let cert = covers::certify(&cover, traj.grid).map_err(|e| e.to_string())?;
            if !cert.pass {
                return Err(format!("cover at scale {scale}, member {j} failed: {cert:?}"));
            }
        }
    }
    let wall = sim_wall + started.elapsed().as_secs_f64();
    if wall > POSITIVITY_WALL_LIMIT {
        return Err(format!("took {wall:.0} s, budget {POSITIVITY_WALL_LIMIT} s"));
    }
    let range = rep.admissible_range.ok_or("no admissible range")?;
    Ok(format!(
        "16 certified covers positive, range [{:.2}, {:.2}], C {c_emp:.0}, {wall:.0} s",
        range[0], range[1]
    ))
}

/// Node-exact Chebyshev bound: the level-set volume times its threshold
/// never exceeds the vorticity L1 mass, over seeded random fields.
fn level_set_bound() -> Outcome {
    let grid = Grid::new(32, TAU).map_err(|e| e.to_string())?;
    let fft = Fft3::new(32);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for k in 0..CHEBYSHEV_PAIRS {
        let ic = InitialCondition::Random {
            seed: 1000 + k as u64,
            slope: 4.0,
            peak: 4.0,
            u_rms: 1.0,
        };
        let u = ic.build(grid, &fft).map_err(|e| e.to_string())?;
        let omega = curl_field(&fft, &u);
        let mag_sq = omega.magnitude_sq();
        let sup = mag_sq.values.iter().cloned().fold(0.0f64, f64::max).sqrt();
        let m = rng.gen::<f64>() * 1.2 * sup;
        let s = level_set(&omega, m, 0.0).map_err(|e| e.to_string())?;
        let l1 = ScalarField::from_values(grid, mag_sq.values.iter().map(|v| v.sqrt()).collect())
            .map_err(|e| e.to_string())?
            .integral();
        let bound = s.volume() * m;
        // equality is unreachable (strict threshold), tiny slack for the sum
        if bound > l1 * (1.0 + 1e-12) {
            return Err(format!("pair {k}: Vol*M = {bound} over L1 = {l1}"));
        }
        worst = worst.max(bound / l1);
    }
    Ok(format!("{CHEBYSHEV_PAIRS} pairs, max (Vol M)/L1 = {worst:.3}"))
}

/// The occupancy-fraction law h(delta): unit limit at vanishing delta, exact
/// value 1/2 at tan(pi/8), and agreement of the two closed-form routes.
fn direction_density() -> Outcome {
    let via_asin = |d: f64| 2.0 / PI * ((1.0 - d * d) / (1.0 + d * d)).asin();
    let via_atan = |d: f64| 1.0 - 4.0 / PI * d.atan();
    for d in [1e-4, 1e-6, 1e-8] {
        let (h, _) = h_alpha(d).map_err(|e| e.to_string())?;
        // h(d) = 1 - (4/pi) d + O(d^3)
        if !(h < 1.0 && (1.0 - h) <= 2.0 * (4.0 / PI) * d) {
            return Err(format!("h({d}) = {h} off the unit limit"));
        }
    }
    let mut d = 0.05;
    while d < 0.96 {
        let (h, comp) = h_alpha(d).map_err(|e| e.to_string())?;
        if (h - via_asin(d)).abs() > H_EXACT_TOL || (h - via_atan(d)).abs() > H_EXACT_TOL {
            return Err(format!(
                "routes disagree at {d}: {h} vs {} vs {}",
                via_asin(d),
                via_atan(d)
            ));
        }
        if (comp - (1.0 - h) / h).abs() > H_EXACT_TOL {
            return Err(format!("companion ratio off at {d}"));
        }
        d += 0.05;
    }
    let half = (PI / 8.0).tan();
    let (h, _) = h_alpha(half).map_err(|e| e.to_string())?;
    let err = (h - 0.5).abs();
    if err > H_EXACT_TOL || (h - via_asin(half)).abs() > H_EXACT_TOL {
        return Err(format!("h(tan(pi/8)) = {h}"));
    }
    Ok(format!("h(tan(pi/8)) - 1/2 = {:+.1e}", h - 0.5))
}

/// Measured minimal segment occupancy against closed forms for an aligned
/// slab (exact) and a wide cylinder (staircase bias under half a grid cell).
fn occupancy_closed_forms() -> Outcome {
    let mut details = Vec::new();
    {
        let grid = Grid::new(128, TAU).map_err(|e| e.to_string())?;
        let half_width = 5.5 * grid.spacing();
        let slab = LevelSet::from_fn(grid, 1.0, 0.0, |p| (p[2] - PI).abs() <= half_width);
        let r = 1.2;
        let expected = half_width / r;
        for (sampling, tol) in [
            (Sampling::default(), SPARSENESS_RTOL),
            (Sampling::default().doubled(), SPARSENESS_RTOL_DOUBLED),
        ] {
            let res = linear_sparseness(&slab, [PI, PI, PI], r, 0.5, sampling)
                .map_err(|e| e.to_string())?;
            let rel = (res.ratio / expected - 1.0).abs();
            if rel > tol {
                return Err(format!("slab occupancy off by {rel:.2e}, budget {tol:.1e}"));
            }
            details.push(format!("slab {rel:.1e}"));
        }
    }
    {
        let grid = Grid::new(512, TAU).map_err(|e| e.to_string())?;
        let radius = 109.5 * grid.spacing();
        let cylinder = LevelSet::from_fn(grid, 1.0, 0.0, |p| {
            let dx = p[0] - PI;
            let dy = p[1] - PI;
            dx * dx + dy * dy <= radius * radius
        });
        let r = 1.45;
        let expected = radius / r;
        for (sampling, tol) in [
            (Sampling::default(), SPARSENESS_RTOL),
            (Sampling::default().doubled(), SPARSENESS_RTOL_DOUBLED),
        ] {
            let res = linear_sparseness(&cylinder, [PI, PI, PI], r, 0.5, sampling)
                .map_err(|e| e.to_string())?;
            let rel = (res.ratio / expected - 1.0).abs();
            if rel > tol {
                return Err(format!("cylinder occupancy off by {rel:.2e}, budget {tol:.1e}"));
            }
            details.push(format!("cylinder {rel:.1e}"));
        }
    }
    Ok(details.join(", "))
}

/// Cutoff derivative-ratio suprema stay put under grid refinement for the
/// smooth profiles at both shipped exponents, and the sharp-interface
/// control is flagged as divergent.
fn cutoff_refinement() -> Outcome {
    let resolutions = [32, 48, 64, 96, 128];
    let mut details = Vec::new();
    for rho in [0.75, 0.875] {
        let smooth = SpatialCutoff::new([PI, PI, PI], 1.0, rho, TAU).map_err(|e| e.to_string())?;
        let rep = refinement_study_spatial(&smooth, &resolutions).map_err(|e| e.to_string())?;
        if rep.diverging || rep.max_spread > REFINEMENT_SPREAD_LIMIT {
            return Err(format!(
                "spatial sups unstable at rho {rho}: spread {:.2}, sups {:?}",
                rep.max_spread, rep.sups
            ));
        }
        let eta = TemporalCutoff::new(1.0, rho, TemporalProfile::Smooth).map_err(|e| e.to_string())?;
        let rep_t = refinement_study_temporal(&eta, &[512, 1024, 2048]);
        if rep_t.diverging || rep_t.max_spread > REFINEMENT_SPREAD_LIMIT {
            return Err(format!(
                "temporal sups unstable at rho {rho}: spread {:.2}",
                rep_t.max_spread
            ));
        }
        details.push(format!("rho {rho}: spreads {:.2}/{:.2}", rep.max_spread, rep_t.max_spread));
    }
    let indicator = SpatialCutoff::indicator([PI, PI, PI], 1.0, TAU).map_err(|e| e.to_string())?;
    let rep = refinement_study_spatial(&indicator, &resolutions).map_err(|e| e.to_string())?;
    if !rep.diverging {
        return Err(format!("sharp control not flagged: sups {:?}", rep.sups));
    }
    details.push("sharp control flagged".into());
    Ok(details.join(", "))
}
