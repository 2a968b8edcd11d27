//! Snapshot persistence, run configuration, and report emission. Configs and
//! reports are JSON; field data is raw little-endian binary behind a fixed
//! 64-byte header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VscopeError};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::solver::SolverConfig;
use crate::sparseness::LevelSet;

const MAGIC: [u8; 4] = *b"VSCP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

/// Payload layout tag in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    /// 3 n^3 f64, component-major, each component x-fastest
    Vector,
    /// n^3 f64, x-fastest
    Scalar,
    /// n^3 u8 (0/1), x-fastest; the scalar header slot carries the threshold
    Mask,
}

impl FieldKind {
    fn code(self) -> u32 {
        match self {
            FieldKind::Vector => 0,
            FieldKind::Scalar => 1,
            FieldKind::Mask => 2,
        }
    }

    fn from_code(code: u32) -> Result<FieldKind> {
        match code {
            0 => Ok(FieldKind::Vector),
            1 => Ok(FieldKind::Scalar),
            2 => Ok(FieldKind::Mask),
            other => Err(VscopeError::MalformedSnapshot(format!(
                "unknown field kind {other}"
            ))),
        }
    }
}

/// Everything the header records about a stored field. `scalar` holds the
/// viscosity for velocity snapshots and the threshold for level-set masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub kind: FieldKind,
    pub n: usize,
    pub box_length: f64,
    pub time: f64,
    pub scalar: f64,
}

fn write_header(w: &mut impl Write, meta: &SnapshotMeta) -> Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&meta.kind.code().to_le_bytes());
    header[16..24].copy_from_slice(&(meta.n as u64).to_le_bytes());
    header[24..32].copy_from_slice(&meta.box_length.to_le_bytes());
    header[32..40].copy_from_slice(&meta.time.to_le_bytes());
    header[40..48].copy_from_slice(&meta.scalar.to_le_bytes());
    w.write_all(&header)?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<SnapshotMeta> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| {
        VscopeError::MalformedSnapshot("file shorter than the 64-byte header".into())
    })?;
    if header[0..4] != MAGIC {
        return Err(VscopeError::MalformedSnapshot(format!(
            "bad magic {:?}, expected \"VSCP\"",
            &header[0..4]
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(VscopeError::MalformedSnapshot(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let kind = FieldKind::from_code(u32::from_le_bytes(header[8..12].try_into().unwrap()))?;
    let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    Ok(SnapshotMeta {
        kind,
        n,
        box_length: f64::from_le_bytes(header[24..32].try_into().unwrap()),
        time: f64::from_le_bytes(header[32..40].try_into().unwrap()),
        scalar: f64::from_le_bytes(header[40..48].try_into().unwrap()),
    })
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len().min(1 << 16) * 8);
    for chunk in values.chunks(1 << 13) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|_| {
        VscopeError::MalformedSnapshot(format!(
            "truncated payload, expected {count} little-endian f64 values"
        ))
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Velocity snapshot: header + three component arrays.
pub fn write_snapshot(
    path: impl AsRef<Path>,
    u: &VectorField,
    time: f64,
    viscosity: f64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        &SnapshotMeta {
            kind: FieldKind::Vector,
            n: u.grid.n(),
            box_length: u.grid.box_length(),
            time,
            scalar: viscosity,
        },
    )?;
    write_f64s(&mut w, &u.x)?;
    write_f64s(&mut w, &u.y)?;
    write_f64s(&mut w, &u.z)?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(VectorField, SnapshotMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r)?;
    if meta.kind != FieldKind::Vector {
        return Err(VscopeError::MalformedSnapshot(format!(
            "expected a vector snapshot, found {:?}",
            meta.kind
        )));
    }
    let grid = Grid::new(meta.n, meta.box_length)?;
    let len = grid.len();
    let x = read_f64s(&mut r, len)?;
    let y = read_f64s(&mut r, len)?;
    let z = read_f64s(&mut r, len)?;
    Ok((VectorField::from_components(grid, x, y, z)?, meta))
}

/// Scalar diagnostic field (densities, weights) in the same container.
pub fn write_scalar_field(
    path: impl AsRef<Path>,
    f: &ScalarField,
    time: f64,
    scalar: f64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        &SnapshotMeta {
            kind: FieldKind::Scalar,
            n: f.grid.n(),
            box_length: f.grid.box_length(),
            time,
            scalar,
        },
    )?;
    write_f64s(&mut w, &f.values)?;
    w.flush()?;
    Ok(())
}

pub fn read_scalar_field(path: impl AsRef<Path>) -> Result<(ScalarField, SnapshotMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r)?;
    if meta.kind != FieldKind::Scalar {
        return Err(VscopeError::MalformedSnapshot(format!(
            "expected a scalar snapshot, found {:?}",
            meta.kind
        )));
    }
    let grid = Grid::new(meta.n, meta.box_length)?;
    let values = read_f64s(&mut r, grid.len())?;
    Ok((ScalarField::from_values(grid, values)?, meta))
}

/// Level-set mask as one byte per node; the scalar slot keeps the threshold.
pub fn write_mask(path: impl AsRef<Path>, set: &LevelSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        &SnapshotMeta {
            kind: FieldKind::Mask,
            n: set.grid.n(),
            box_length: set.grid.box_length(),
            time: set.time,
            scalar: set.threshold,
        },
    )?;
    w.write_all(&set.mask_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<(LevelSet, SnapshotMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r)?;
    if meta.kind != FieldKind::Mask {
        return Err(VscopeError::MalformedSnapshot(format!(
            "expected a mask, found {:?}",
            meta.kind
        )));
    }
    let grid = Grid::new(meta.n, meta.box_length)?;
    let mut bytes = vec![0u8; grid.len()];
    r.read_exact(&mut bytes).map_err(|_| {
        VscopeError::MalformedSnapshot(format!("truncated mask, expected {} bytes", grid.len()))
    })?;
    let values = bytes.iter().map(|&b| f64::from(b.min(1))).collect();
    Ok((
        LevelSet {
            grid,
            mask: ScalarField::from_values(grid, values)?,
            threshold: meta.scalar,
            time: meta.time,
        },
        meta,
    ))
}

/// The macro ball: radius and center of the reference domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroDomain {
    pub r0: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSettings {
    pub scales: Vec<f64>,
    pub k1: u32,
    pub k2: u32,
    /// jittered covers per scale
    pub family: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSettings {
    /// working spatial/temporal exponent
    pub rho1: f64,
    /// second exponent for refinement studies
    pub rho2: f64,
    /// ensemble weight exponent on psi
    pub delta_exp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsenessSettings {
    pub delta: f64,
    pub d0: f64,
    pub c1: f64,
    pub directions: usize,
}

/// One file driving the whole pipeline. Validation covers the cross-module
/// constraints; each module still checks its own preconditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub macro_domain: MacroDomain,
    pub covers: CoverSettings,
    pub cutoffs: CutoffSettings,
    pub diagnostic_times: Vec<f64>,
    pub sparseness: SparsenessSettings,
    /// enables the theorem range check, which needs r0 <= sqrt(t_end)
    #[serde(default)]
    pub theorem: bool,
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = Grid::new(self.solver.n, self.solver.box_length)?;
        let h = grid.spacing();
        let r0 = self.macro_domain.r0;
        if !(r0 > 0.0) || 4.0 * r0 > self.solver.box_length {
            return Err(VscopeError::InvalidConfig(format!(
                "macro radius must satisfy 0 < 4 r0 <= box_length, got r0 = {r0}"
            )));
        }
        if self.covers.scales.is_empty() {
            return Err(VscopeError::InvalidConfig(
                "at least one cover scale is required".into(),
            ));
        }
        for &s in &self.covers.scales {
            if !(s >= 8.0 * h && s <= r0) {
                return Err(VscopeError::InvalidConfig(format!(
                    "cover scale {s} outside [8 spacing, r0] = [{}, {r0}]",
                    8.0 * h
                )));
            }
        }
        if self.covers.k1 == 0 || self.covers.k2 <= self.covers.k1 {
            return Err(VscopeError::InvalidConfig(format!(
                "multiplicity band needs 0 < K1 < K2, got ({}, {})",
                self.covers.k1, self.covers.k2
            )));
        }
        if self.covers.family == 0 {
            return Err(VscopeError::InvalidConfig(
                "cover family size must be positive".into(),
            ));
        }
        if self.theorem && r0 * r0 > self.solver.t_end * (1.0 + 1e-9) {
            return Err(VscopeError::InvalidConfig(format!(
                "theorem check needs r0 <= sqrt(t_end), got r0 = {r0}, t_end = {}",
                self.solver.t_end
            )));
        }
        for rho in [self.cutoffs.rho1, self.cutoffs.rho2] {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(VscopeError::InvalidConfig(format!(
                    "cutoff exponents must lie in (0, 1), got {rho}"
                )));
            }
        }
        if !(self.cutoffs.delta_exp > 0.0) {
            return Err(VscopeError::InvalidConfig(format!(
                "ensemble weight exponent must be positive, got {}",
                self.cutoffs.delta_exp
            )));
        }
        for &t in &self.diagnostic_times {
            if !(t >= 0.0 && t <= self.solver.t_end) {
                return Err(VscopeError::InvalidConfig(format!(
                    "diagnostic time {t} outside the run [0, {}]",
                    self.solver.t_end
                )));
            }
        }
        let sp = &self.sparseness;
        if !(sp.delta > 0.0 && sp.delta < 1.0) {
            return Err(VscopeError::InvalidConfig(format!(
                "sparseness fraction must lie in (0, 1), got {}",
                sp.delta
            )));
        }
        if !(sp.c1 > 1.0) {
            return Err(VscopeError::InvalidConfig(format!(
                "intensity factor c1 must exceed 1, got {}",
                sp.c1
            )));
        }
        if !(sp.d0 > 0.0) {
            return Err(VscopeError::InvalidConfig(format!(
                "sparseness constant d0 must be positive, got {}",
                sp.d0
            )));
        }
        if sp.directions == 0 {
            return Err(VscopeError::InvalidConfig(
                "direction sample count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// A small Taylor-Green run that passes validation; the `config template`
    /// starting point. The scales band [8 spacing, r0] is nonempty only from
    /// 64^3 up once 4 r0 <= box_length holds.
    pub fn example() -> RunConfig {
        RunConfig {
            solver: SolverConfig {
                n: 64,
                box_length: crate::grid::TWO_PI,
                viscosity: 0.05,
                dt: 2e-3,
                t_end: 1.5,
                snapshot_stride: 25,
                cfl_limit: 0.8,
                initial: crate::solver::InitialCondition::TaylorGreen,
            },
            macro_domain: MacroDomain {
                r0: 1.2,
                center: [0.0; 3],
            },
            covers: CoverSettings {
                scales: vec![0.9, 1.2],
                k1: 8,
                k2: 27,
                family: 4,
                seed: 7,
            },
            cutoffs: CutoffSettings {
                rho1: 0.75,
                rho2: 0.875,
                delta_exp: 1.0,
            },
            diagnostic_times: vec![1.5],
            sparseness: SparsenessSettings {
                delta: 0.41421356237309503,
                d0: 1.0,
                c1: 2.0,
                directions: 256,
            },
            theorem: true,
        }
    }
}

/// Pretty JSON with a trailing newline; the standard report sink.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Plain comma-joined CSV. Cells must not contain commas; numeric cells
/// should be formatted with `{}` so reruns emit identical bytes.
pub fn write_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert!(row.iter().all(|c| !c.contains(',')), "cell with a comma");
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TWO_PI;
    use rand::{Rng, SeedableRng};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("vscope-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{}-{name}", std::process::id()))
    }

    fn random_field(grid: Grid, seed: u64) -> VectorField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let mut take = || (0..n).map(|_| rng.gen::<f64>() - 0.5).collect::<Vec<f64>>();
        VectorField::from_components(grid, take(), take(), take()).unwrap()
    }

    #[test]
    fn vector_snapshots_roundtrip_bit_exact() {
        let grid = Grid::new(12, TWO_PI).unwrap();
        let u = random_field(grid, 5);
        let path = tmp("roundtrip.vscp");
        write_snapshot(&path, &u, 0.625, 1e-3).unwrap();
        let (v, meta) = read_snapshot(&path).unwrap();
        assert_eq!(meta.n, 12);
        assert_eq!(meta.time.to_bits(), 0.625f64.to_bits());
        assert_eq!(meta.scalar.to_bits(), 1e-3f64.to_bits());
        for (a, b) in u.x.iter().zip(&v.x) {
            assert_eq!(a.to_bits(), b.to_bits(), "x component drifted");
        }
        for (a, b) in u.y.iter().zip(&v.y) {
            assert_eq!(a.to_bits(), b.to_bits(), "y component drifted");
        }
        for (a, b) in u.z.iter().zip(&v.z) {
            assert_eq!(a.to_bits(), b.to_bits(), "z component drifted");
        }
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn malformed_headers_are_rejected_with_reasons() {
        let grid = Grid::new(8, TWO_PI).unwrap();
        let u = random_field(grid, 6);
        let path = tmp("malformed.vscp");
        write_snapshot(&path, &u, 0.0, 1.0).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let err = read_snapshot(&path).unwrap_err();
        assert!(
            err.to_string().contains("magic"),
            "magic corruption should name the magic, got: {err}"
        );

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        let err = read_snapshot(&path).unwrap_err();
        assert!(
            err.to_string().contains("version 99"),
            "version bump should be explicit, got: {err}"
        );

        std::fs::write(&path, &good[..good.len() - 9]).unwrap();
        let err = read_snapshot(&path).unwrap_err();
        assert!(
            err.to_string().contains("truncated"),
            "short payload should be reported, got: {err}"
        );

        std::fs::write(&path, &good[..40]).unwrap();
        let err = read_snapshot(&path).unwrap_err();
        assert!(
            err.to_string().contains("header"),
            "short header should be reported, got: {err}"
        );
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn scalar_and_mask_files_roundtrip() {
        let grid = Grid::new(10, TWO_PI).unwrap();
        let f = ScalarField::from_fn(grid, |x, y, z| (x + 2.0 * y).sin() * z.cos());
        let path = tmp("scalar.vscp");
        write_scalar_field(&path, &f, 1.5, 0.25).unwrap();
        let (g, meta) = read_scalar_field(&path).unwrap();
        assert_eq!(meta.kind, FieldKind::Scalar);
        for (a, b) in f.values.iter().zip(&g.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(
            read_snapshot(&path).unwrap_err().to_string().contains("vector"),
            "kind mismatch must be loud"
        );
        std::fs::remove_file(&path).unwrap();

        let set = LevelSet::from_fn(grid, 0.75, 2.0, |p| p[0] < 3.0 && p[1] > 1.0);
        let path = tmp("mask.vscp");
        write_mask(&path, &set).unwrap();
        let (back, meta) = read_mask(&path).unwrap();
        assert_eq!(meta.kind, FieldKind::Mask);
        assert_eq!(back.threshold, 0.75);
        assert_eq!(back.time, 2.0);
        assert_eq!(back.count(), set.count());
        for i in 0..grid.len() {
            assert_eq!(back.contains(i), set.contains(i), "node {i} flipped");
        }
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn the_example_config_roundtrips_and_validates() {
        let cfg = RunConfig::example();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back, "config must roundtrip through JSON");
    }

    #[test]
    fn config_validation_rejects_each_broken_invariant() {
        let mut cfg = RunConfig::example();
        cfg.macro_domain.r0 = 2.0;
        assert!(
            cfg.validate().unwrap_err().to_string().contains("4 r0"),
            "oversized macro ball must fail"
        );

        let mut cfg = RunConfig::example();
        cfg.covers.scales = vec![0.01];
        assert!(
            cfg.validate().unwrap_err().to_string().contains("8 spacing"),
            "under-resolved scale must fail"
        );

        let mut cfg = RunConfig::example();
        cfg.covers.scales = vec![1.5];
        assert!(cfg.validate().is_err(), "scale above r0 must fail");

        let mut cfg = RunConfig::example();
        cfg.solver.t_end = 0.3;
        cfg.diagnostic_times = vec![0.3];
        assert!(
            cfg.validate().unwrap_err().to_string().contains("sqrt(t_end)"),
            "theorem window needs r0 <= sqrt(t_end)"
        );
        cfg.theorem = false;
        cfg.validate().unwrap();

        let mut cfg = RunConfig::example();
        cfg.cutoffs.rho1 = 1.0;
        assert!(cfg.validate().is_err(), "rho = 1 is outside (0, 1)");

        let mut cfg = RunConfig::example();
        cfg.sparseness.c1 = 1.0;
        assert!(cfg.validate().is_err(), "c1 must exceed 1");

        let mut cfg = RunConfig::example();
        cfg.diagnostic_times = vec![2.0];
        assert!(cfg.validate().is_err(), "diagnostic time beyond t_end");

        let bad = "{\"solver\": {}, \"unknown_field\": 1}";
        assert!(
            serde_json::from_str::<RunConfig>(bad).is_err(),
            "unknown fields must be rejected"
        );
    }

    #[test]
    fn csv_reruns_emit_identical_bytes() {
        let rows = || {
            (0..8).map(|i| {
                let x = (i as f64 * 0.37).sin() / 3.0;
                vec![format!("{i}"), format!("{x}"), format!("{}", x * 1e-17)]
            })
        };
        let p1 = tmp("rerun1.csv");
        let p2 = tmp("rerun2.csv");
        write_csv(&p1, &["i", "value", "tiny"], rows()).unwrap();
        write_csv(&p2, &["i", "value", "tiny"], rows()).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "identical inputs must serialize identically");
        assert!(b1.starts_with(b"i,value,tiny\n"));
        std::fs::remove_file(p1).unwrap();
        std::fs::remove_file(p2).unwrap();
    }
}
