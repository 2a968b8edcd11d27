//! Command-line front end: simulate writes snapshots, the diagnostic
//! subcommands read them back and emit JSON/CSV reports. Exit codes: 0 ok,
//! 1 validation or usage error, 2 numerical failure (CFL, NaN, preflight).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use vscope::covers::{self, CoverStrategy};
use vscope::ensemble::{
    budget_cover, macro_stats, theorem_check, vst_ensemble, CutoffConfig, TheoremConfig,
};
use vscope::error::VscopeError;
use vscope::io::{self, RunConfig};
use vscope::solver::{simulate, InitialCondition, Trajectory};
use vscope::sparseness::{
    criticality_report, h_alpha, level_set, sparseness_scan, QueryPoints, Sampling,
};
use vscope::spectral::Fft3;
use vscope::Result;

/// Constants the theorem report is conditioned on; both are echoed in the
/// output so reruns are self-describing.
const C_REPORT: f64 = 1.0;
const PREFLIGHT_TOL: f64 = 0.05;

#[derive(Parser)]
#[command(
    name = "vscope",
    about = "Pseudo-spectral Navier-Stokes runs with local vortex-stretching diagnostics",
    version
)]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where snapshots and reports go
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (falls back to VSCOPE_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the cover seed and any random initial-condition seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the solver and write snapshots plus a run summary
    Simulate,
    /// Macro statistics, budget checks, VST ensembles, theorem report
    Diagnose {
        /// Only the budget table
        #[arg(long)]
        budget: bool,
        /// Only the ensemble averages
        #[arg(long)]
        ensemble: bool,
        /// Only the theorem range check
        #[arg(long)]
        theorem: bool,
    },
    /// Generate and certify covers, write them as JSON
    Covers {
        /// Single scale instead of the configured list
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        k1: Option<u32>,
        #[arg(long)]
        k2: Option<u32>,
    },
    /// Sparseness scan and criticality report at the last diagnostic time
    Sparseness {
        /// Overrides the configured sparseness fraction
        #[arg(long)]
        delta: Option<f64>,
        /// Also export the intense-region mask
        #[arg(long)]
        mask: bool,
    },
    /// Merge the reports in out-dir into one summary
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2 on bad flags; usage problems are class 1 here
            let _ = e.print();
            return ExitCode::from(u8::from(!matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            )));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let count = flag.or_else(|| {
        std::env::var("VSCOPE_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(count) = count.filter(|&c| c > 0) {
        // a second init in one process is fine; keep the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global();
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        VscopeError::InvalidConfig("--config is required for this subcommand".into())
    })?;
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.covers.seed = seed;
        if let InitialCondition::Random { seed: s, .. } = &mut cfg.solver.initial {
            *s = seed;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads);
    match cli.cmd {
        Cmd::Simulate => cmd_simulate(&cli),
        Cmd::Diagnose {
            budget,
            ensemble,
            theorem,
        } => cmd_diagnose(&cli, budget, ensemble, theorem),
        Cmd::Covers { r, k1, k2 } => cmd_covers(&cli, r, k1, k2),
        Cmd::Sparseness { delta, mask } => cmd_sparseness(&cli, delta, mask),
        Cmd::Report => cmd_report(&cli),
    }
}

fn snapshot_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("snap-{idx:05}.vscp"))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a RunConfig,
    n_snapshots: usize,
    times: Vec<f64>,
    final_energy: Option<f64>,
    max_cfl: Option<f64>,
}

fn write_trajectory(dir: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    for (i, s) in traj.snapshots.iter().enumerate() {
        io::write_snapshot(snapshot_path(dir, i), &s.u, s.time, traj.viscosity)?;
    }
    io::write_json(
        dir.join("run.json"),
        &RunSummary {
            config: cfg,
            n_snapshots: traj.snapshots.len(),
            times: traj.times(),
            final_energy: traj.records.last().map(|r| r.energy),
            max_cfl: traj
                .records
                .iter()
                .map(|r| r.cfl)
                .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c)))),
        },
    )?;
    io::write_csv(
        dir.join("steps.csv"),
        &["step", "time", "energy", "max_u", "max_vorticity", "cfl"],
        traj.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.time.to_string(),
                r.energy.to_string(),
                r.max_u.to_string(),
                r.max_vorticity.to_string(),
                r.cfl.to_string(),
            ]
        }),
    )
}

fn cmd_simulate(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    match simulate(&cfg.solver) {
        Ok(traj) => {
            write_trajectory(&cli.out_dir, &cfg, &traj)?;
            println!(
                "wrote {} snapshots to {}",
                traj.snapshots.len(),
                cli.out_dir.display()
            );
            Ok(())
        }
        Err(failure) => {
            // keep whatever was computed so the blow-up can be inspected
            write_trajectory(&cli.out_dir, &cfg, &failure.partial)?;
            io::write_json(
                cli.out_dir.join("failure.json"),
                &serde_json::json!({
                    "config": cfg,
                    "error": failure.error.to_string(),
                    "exit_class": failure.error.exit_class(),
                    "snapshots_kept": failure.partial.snapshots.len(),
                    "last_time": failure.partial.snapshots.last().map(|s| s.time),
                }),
            )?;
            Err(failure.error)
        }
    }
}

fn load_trajectory(dir: &Path, cfg: &RunConfig) -> Result<Trajectory> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with("snap-") && s.ends_with(".vscp"))
        })
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(VscopeError::InvalidConfig(format!(
            "need at least 2 snapshots in {}; run `simulate` first",
            dir.display()
        )));
    }
    let mut snapshots = Vec::with_capacity(paths.len());
    let mut viscosity = cfg.solver.viscosity;
    let mut grid = None;
    for (i, p) in paths.iter().enumerate() {
        let (u, meta) = io::read_snapshot(p)?;
        if meta.n != cfg.solver.n || meta.box_length != cfg.solver.box_length {
            return Err(VscopeError::InvalidConfig(format!(
                "snapshot {} is {}^3 on box {}, config says {}^3 on {}",
                p.display(),
                meta.n,
                meta.box_length,
                cfg.solver.n,
                cfg.solver.box_length
            )));
        }
        grid = Some(u.grid);
        viscosity = meta.scalar;
        snapshots.push(vscope::solver::Snapshot {
            step: i,
            time: meta.time,
            u: std::sync::Arc::new(u),
        });
    }
    Ok(Trajectory {
        grid: grid.expect("at least two snapshots"),
        viscosity,
        dt: cfg.solver.dt,
        snapshots,
        records: Vec::new(),
    })
}

#[derive(Serialize)]
struct ScaleDiagnostics {
    scale: f64,
    certification: covers::CertReport,
    budgets: Option<Vec<vscope::ensemble::LocalBudget>>,
    vst: Option<vscope::ensemble::EnsembleReport>,
}

#[derive(Serialize)]
struct TimeDiagnostics {
    t: f64,
    macro_stats: vscope::ensemble::MacroStats,
    scales: Vec<ScaleDiagnostics>,
    theorem: Option<vscope::ensemble::TheoremReport>,
}

fn cmd_diagnose(cli: &Cli, budget: bool, ensemble: bool, theorem: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let all = !(budget || ensemble || theorem);
    let traj = load_trajectory(&cli.out_dir, &cfg)?;
    let fft = Fft3::new(cfg.solver.n);
    let grid = traj.grid;
    let mut per_time = Vec::new();
    let mut budget_rows: Vec<Vec<String>> = Vec::new();
    for &t in &cfg.diagnostic_times {
        let cut = CutoffConfig::new(cfg.cutoffs.rho1, t)?;
        let stats = macro_stats(&fft, &traj, &cut, cfg.macro_domain.r0)?;
        let mut scales = Vec::new();
        for &scale in &cfg.covers.scales {
            let cover = covers::generate(
                cfg.macro_domain.r0,
                scale,
                cfg.covers.k1,
                cfg.covers.k2,
                CoverStrategy::Jittered {
                    seed: cfg.covers.seed,
                },
                cfg.solver.box_length,
            )?;
            let certification = covers::certify(&cover, grid)?;
            let budgets = if all || budget {
                let b = budget_cover(&fft, &traj, &cover, &cut)?;
                for (e, lb) in b.iter().enumerate() {
                    budget_rows.push(vec![
                        t.to_string(),
                        scale.to_string(),
                        e.to_string(),
                        lb.vst.to_string(),
                        lb.final_enstrophy.to_string(),
                        lb.palinstrophy.to_string(),
                        lb.cutoff_term.to_string(),
                        lb.transport_term.to_string(),
                        lb.residual.to_string(),
                        lb.relative_residual.to_string(),
                    ]);
                }
                Some(b)
            } else {
                None
            };
            let vst = if all || ensemble {
                Some(vst_ensemble(&fft, &traj, &cover, &cut)?)
            } else {
                None
            };
            scales.push(ScaleDiagnostics {
                scale,
                certification,
                budgets,
                vst,
            });
        }
        let theorem_report = if cfg.theorem && (all || theorem) {
            Some(theorem_check(
                &fft,
                &traj,
                &TheoremConfig {
                    t,
                    r0: cfg.macro_domain.r0,
                    scales: cfg.covers.scales.clone(),
                    family: cfg.covers.family,
                    seed: cfg.covers.seed,
                    k1: cfg.covers.k1,
                    k2: cfg.covers.k2,
                    rho: cfg.cutoffs.rho1,
                    c_report: C_REPORT,
                    preflight_tol: PREFLIGHT_TOL,
                },
            )?)
        } else {
            None
        };
        per_time.push(TimeDiagnostics {
            t,
            macro_stats: stats,
            scales,
            theorem: theorem_report,
        });
    }
    io::write_json(
        cli.out_dir.join("diagnose.json"),
        &serde_json::json!({ "config": cfg, "times": per_time }),
    )?;
    if all || budget {
        io::write_csv(
            cli.out_dir.join("budget.csv"),
            &[
                "t",
                "scale",
                "element",
                "vst",
                "final_enstrophy",
                "palinstrophy",
                "cutoff_term",
                "transport_term",
                "residual",
                "relative_residual",
            ],
            budget_rows,
        )?;
    }
    println!("diagnostics written to {}", cli.out_dir.display());
    Ok(())
}

fn cmd_covers(cli: &Cli, r: Option<f64>, k1: Option<u32>, k2: Option<u32>) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let scales = r.map_or_else(|| cfg.covers.scales.clone(), |r| vec![r]);
    let k1 = k1.unwrap_or(cfg.covers.k1);
    let k2 = k2.unwrap_or(cfg.covers.k2);
    let grid = vscope::Grid::new(cfg.solver.n, cfg.solver.box_length)?;
    let mut entries = Vec::new();
    for scale in scales {
        let cover = covers::generate(
            cfg.macro_domain.r0,
            scale,
            k1,
            k2,
            CoverStrategy::Jittered {
                seed: cfg.covers.seed,
            },
            cfg.solver.box_length,
        )?;
        let certification = covers::certify(&cover, grid)?;
        entries.push(serde_json::json!({
            "scale": scale,
            "cover": cover,
            "certification": certification,
        }));
    }
    io::write_json(
        cli.out_dir.join("covers.json"),
        &serde_json::json!({ "config": cfg, "covers": entries }),
    )?;
    println!("covers written to {}", cli.out_dir.display());
    Ok(())
}

fn cmd_sparseness(cli: &Cli, delta: Option<f64>, mask: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let delta = delta.unwrap_or(cfg.sparseness.delta);
    let traj = load_trajectory(&cli.out_dir, &cfg)?;
    let fft = Fft3::new(cfg.solver.n);
    let t = cfg
        .diagnostic_times
        .last()
        .copied()
        .unwrap_or_else(|| traj.snapshots.last().expect("nonempty").time);
    let (h, alpha_min) = h_alpha(delta)?;
    let report = criticality_report(&fft, &traj, t, cfg.sparseness.c1, delta, cfg.sparseness.d0)?;
    let sampling = Sampling {
        directions: cfg.sparseness.directions,
        ..Sampling::default()
    };
    let at = traj.nearest_snapshot(t);
    let omega = traj.vorticity(&fft, at);
    let set = level_set(&omega, report.threshold, traj.snapshots[at].time)?;
    let scan_scale = cfg
        .covers
        .scales
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(0.2499 * cfg.solver.box_length);
    let scan = sparseness_scan(
        &set,
        scan_scale,
        delta,
        QueryPoints::Sample {
            seed: cfg.covers.seed,
            count: 256,
        },
        sampling,
    )?;
    if mask {
        io::write_mask(cli.out_dir.join("levelset.vscp"), &set)?;
    }
    io::write_json(
        cli.out_dir.join("sparseness.json"),
        &serde_json::json!({
            "config": cfg,
            "delta": delta,
            "h": h,
            "alpha_min": alpha_min,
            "scan": scan,
            "criticality": report,
        }),
    )?;
    println!("sparseness report written to {}", cli.out_dir.display());
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut summary = serde_json::Map::new();
    summary.insert("config".into(), serde_json::to_value(&cfg)?);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for name in ["run", "diagnose", "covers", "sparseness"] {
        let path = cli.out_dir.join(format!("{name}.json"));
        let present = path.exists();
        rows.push(vec![name.to_string(), present.to_string()]);
        if present {
            let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            summary.insert(name.into(), value);
        }
    }
    io::write_json(cli.out_dir.join("summary.json"), &summary)?;
    io::write_csv(cli.out_dir.join("summary.csv"), &["section", "present"], rows)?;
    println!("summary written to {}", cli.out_dir.display());
    Ok(())
}
