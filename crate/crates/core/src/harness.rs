//! Experiment configuration, reference caching and the experiment drivers
//! behind the command-line front end.
//!
//! Every driver returns a [`CommandOutput`]: named files plus a JSON summary.
//! Nothing is written to disk here except the reference cache.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coeffs::CoeffTable;
use crate::diagnostics::{
    h1_error, l2_error, ErrorCell, ErrorEnergy, ErrorTable, SweepAxis, TableMetadata,
    NORM_CONVENTION,
};
use crate::error::{Result, SolverError};
use crate::grid::SpectralGrid;
use crate::initial::InitialData;
use crate::limits::{limit_study, GammaChoice, LimitParams, LimitSample};
use crate::mti::{interpolate_at, run, FieldState, Record, RunOptions, SolverParams, Trajectory};
use crate::parallel::Execution;

/// Bumped whenever the stepper's output for a given configuration changes.
pub const SCHEME_VERSION: u32 = 1;
const CACHE_MAGIC: &[u8; 8] = b"MTIFPREF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    TableSpatial,
    TableTemporal,
    InterpError,
    Limits,
    Dynamics2d,
    CoeffDump,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::TableSpatial => "table-spatial",
            Command::TableTemporal => "table-temporal",
            Command::InterpError => "interp-error",
            Command::Limits => "limits",
            Command::Dynamics2d => "dynamics2d",
            Command::CoeffDump => "coeff-dump",
        }
    }

    fn needs_reference(&self) -> bool {
        matches!(
            self,
            Command::TableSpatial | Command::TableTemporal | Command::InterpError
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub dim: usize,
    pub data: InitialData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub h: Vec<f64>,
    pub tau: Vec<f64>,
    pub t_end: f64,
    /// Spacing of time samples for time-series outputs.
    pub sample_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub h: f64,
    pub tau: f64,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub sweep: SweepConfig,
    pub reference: ReferenceConfig,
    pub output: OutputConfig,
    /// Worker count: 0 uses every core, 1 runs sequentially.
    pub jobs: usize,
    /// Recorded in metadata; the experiments themselves are deterministic.
    pub seed: Option<u64>,
}

fn geometric(first: f64, ratio: f64, ks: impl IntoIterator<Item = i32>) -> Vec<f64> {
    ks.into_iter().map(|k| first / ratio.powi(k)).collect()
}

impl ExperimentConfig {
    /// Defaults for one command, set to the standard experiment setups.
    pub fn defaults(cmd: Command) -> Self {
        let base = ExperimentConfig {
            problem: ProblemConfig {
                a: -16.0,
                b: 16.0,
                lambda: 1.0,
                dim: 1,
                data: InitialData::SechGauss,
            },
            sweep: SweepConfig {
                eps: vec![1.0],
                h: vec![1.0 / 32.0],
                tau: vec![1e-4],
                t_end: 1.0,
                sample_dt: 0.25,
            },
            reference: ReferenceConfig {
                h: 1.0 / 32.0,
                tau: 1e-5,
                cache_dir: None,
            },
            output: OutputConfig {
                dir: None,
                formats: vec![Format::Csv],
            },
            jobs: 0,
            seed: None,
        };
        match cmd {
            Command::Solve => base,
            Command::TableSpatial => Self {
                sweep: SweepConfig {
                    eps: geometric(0.5, 2.0, [0, 1, 2, 3, 4, 5, 7, 9, 11, 13]),
                    h: geometric(1.0, 2.0, 0..4),
                    tau: vec![1e-5],
                    ..base.sweep
                },
                ..base
            },
            Command::TableTemporal => Self {
                sweep: SweepConfig {
                    eps: geometric(0.5, 2.0, 0..14),
                    h: vec![1.0 / 32.0],
                    tau: geometric(0.2, 4.0, 0..7),
                    ..base.sweep
                },
                ..base
            },
            Command::InterpError => Self {
                sweep: SweepConfig {
                    eps: vec![0.5, 0.05, 0.005],
                    tau: vec![0.05],
                    ..base.sweep
                },
                ..base
            },
            Command::Limits => Self {
                sweep: SweepConfig {
                    eps: vec![0.1, 0.05, 0.025],
                    h: vec![1.0 / 8.0],
                    tau: vec![1e-6],
                    t_end: 2.0,
                    sample_dt: 0.125,
                },
                ..base
            },
            Command::Dynamics2d => Self {
                problem: ProblemConfig {
                    a: -20.0,
                    b: 20.0,
                    lambda: 1.0,
                    dim: 2,
                    data: InitialData::TwoGaussian,
                },
                sweep: SweepConfig {
                    eps: vec![1.0, 0.01],
                    h: vec![40.0 / 128.0],
                    tau: vec![1e-3],
                    t_end: 2.0,
                    sample_dt: 0.5,
                },
                ..base
            },
            Command::CoeffDump => Self {
                sweep: SweepConfig {
                    eps: vec![0.5],
                    h: vec![1.0],
                    tau: vec![0.1],
                    ..base.sweep
                },
                ..base
            },
        }
    }

    /// Deep-merge a partial JSON document over the command defaults.
    pub fn from_json_over(cmd: Command, overlay: &str) -> Result<Self> {
        let mut base = serde_json::to_value(Self::defaults(cmd))?;
        merge_json(&mut base, serde_json::from_str(overlay)?);
        Ok(serde_json::from_value(base)?)
    }

    pub fn load(cmd: Command, path: &Path) -> Result<Self> {
        Self::from_json_over(cmd, &fs::read_to_string(path)?)
    }

    /// All problems with the configuration at once.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        let mut p = Vec::new();
        let pr = &self.problem;
        if !(pr.a.is_finite() && pr.b.is_finite() && pr.b > pr.a) {
            p.push(format!("domain ({}, {}) must satisfy a < b", pr.a, pr.b));
        }
        if !pr.lambda.is_finite() {
            p.push(format!("lambda must be finite, got {}", pr.lambda));
        }
        if pr.dim != 1 && pr.dim != 2 {
            p.push(format!("dim must be 1 or 2, got {}", pr.dim));
        } else if let Some(d) = pr.data.dim() {
            if d != pr.dim {
                p.push(format!("{:?} initial data needs dim {d}", pr.data));
            }
        }
        let sw = &self.sweep;
        for (name, list) in [("eps", &sw.eps), ("h", &sw.h), ("tau", &sw.tau)] {
            if list.is_empty() {
                p.push(format!("sweep.{name} is empty"));
            }
            for &v in list.iter() {
                if !(v > 0.0 && v.is_finite()) {
                    p.push(format!("sweep.{name} value {v} is not positive"));
                }
            }
        }
        for &e in &sw.eps {
            if e > 1.0 {
                p.push(format!("sweep.eps value {e} exceeds 1"));
            }
        }
        if !(sw.t_end >= 0.0 && sw.t_end.is_finite()) {
            p.push(format!(
                "sweep.t_end must be non-negative, got {}",
                sw.t_end
            ));
        }
        if !(sw.sample_dt > 0.0) {
            p.push(format!(
                "sweep.sample_dt must be positive, got {}",
                sw.sample_dt
            ));
        }
        let mut hs = sw.h.clone();
        if cmd.needs_reference() {
            hs.push(self.reference.h);
        }
        for h in hs.into_iter().filter(|h| *h > 0.0) {
            if let Err(e) = SpectralGrid::with_mesh_size(pr.a, pr.b, h, 1) {
                p.push(format!("mesh size {h}: {e}"));
            }
        }
        match cmd {
            Command::TableSpatial if sw.tau.len() != 1 => {
                p.push("table-spatial takes exactly one tau".into())
            }
            Command::TableTemporal if sw.h.len() != 1 => {
                p.push("table-temporal takes exactly one h".into())
            }
            _ => {}
        }
        if cmd.needs_reference() {
            let r = &self.reference;
            if !(r.h > 0.0 && r.tau > 0.0) {
                p.push(format!(
                    "reference resolution (h={}, tau={}) must be positive",
                    r.h, r.tau
                ));
            }
            let min_h = sw.h.iter().copied().fold(f64::INFINITY, f64::min);
            let min_tau = sw.tau.iter().copied().fold(f64::INFINITY, f64::min);
            if r.h > min_h || r.tau > min_tau || (r.h == min_h && r.tau == min_tau) {
                p.push(format!(
                    "reference (h={}, tau={}) must be at least as fine as every sweep value and strictly finer in one (min h={min_h}, min tau={min_tau})",
                    r.h, r.tau
                ));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(SolverError::Config(p))
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn grid(&self, h: f64) -> Result<SpectralGrid> {
        SpectralGrid::with_mesh_size(self.problem.a, self.problem.b, h, self.problem.dim)
    }

    fn execution(&self) -> Execution {
        Execution::from_jobs(self.jobs)
    }

    fn solver(&self, eps: f64, tau: f64, grid: &SpectralGrid) -> SolverParams {
        SolverParams {
            eps,
            lambda: self.problem.lambda,
            tau,
            grid: grid.clone(),
            t_end: self.sweep.t_end,
        }
    }
}

fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// On-disk cache of reference solutions keyed by everything that determines them.
#[derive(Debug, Clone, Default)]
pub struct ReferenceCache {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct ReferenceKey<'a> {
    version: u32,
    problem: &'a ProblemConfig,
    eps: f64,
    h: f64,
    tau: f64,
    t_end: f64,
}

impl ReferenceCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &ReferenceKey) -> Option<PathBuf> {
        let hash = short_hash(&serde_json::to_vec(key).ok()?);
        self.dir.as_ref().map(|d| d.join(format!("ref-{hash}.bin")))
    }

    /// Final state of a reference run, computed on a miss. A corrupt or
    /// truncated entry counts as a miss.
    pub fn final_state(
        &self,
        cfg: &ExperimentConfig,
        eps: f64,
    ) -> Result<(SpectralGrid, FieldState)> {
        let grid = cfg.grid(cfg.reference.h)?;
        let key = ReferenceKey {
            version: SCHEME_VERSION,
            problem: &cfg.problem,
            eps,
            h: cfg.reference.h,
            tau: cfg.reference.tau,
            t_end: cfg.sweep.t_end,
        };
        let path = self.path(&key);
        if let Some(p) = &path {
            if let Ok(state) = read_state(p, grid.len()) {
                return Ok((grid, state));
            }
        }
        let init = cfg.problem.data.state(&grid, eps)?;
        let traj = run(
            &cfg.solver(eps, cfg.reference.tau, &grid),
            &init,
            &RunOptions::default(),
        )?;
        let state = traj.final_state().clone();
        if let Some(p) = &path {
            write_state_atomic(p, &state)?;
        }
        Ok((grid, state))
    }
}

fn read_state(path: &Path, len: usize) -> io::Result<FieldState> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let want = 8 + 8 + 8 + 16 * len;
    if bytes.len() != want || &bytes[..8] != CACHE_MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "bad cache entry",
        ));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if word(8) as usize != len {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "length mismatch",
        ));
    }
    let t = f64::from_bits(word(16));
    let field = |start: usize| {
        (0..len)
            .map(|j| f64::from_bits(word(start + 8 * j)))
            .collect::<Vec<_>>()
    };
    Ok(FieldState {
        u: field(24),
        udot: field(24 + 8 * len),
        t,
    })
}

fn write_state_atomic(path: &Path, state: &FieldState) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = Vec::with_capacity(24 + 16 * state.u.len());
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&(state.u.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&state.t.to_le_bytes());
    for x in state.u.iter().chain(&state.udot) {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)
}

/// Files produced by a command plus a machine-readable summary.
#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    /// Human-readable report for the terminal.
    pub text: String,
}

impl CommandOutput {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let p = dir.join(name);
                fs::write(&p, bytes)?;
                Ok(p)
            })
            .collect()
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }
}

fn header(cfg: &ExperimentConfig, reference: &str, extra: &[(&str, String)]) -> String {
    let mut s = format!(
        "# config_hash={}\n# norm={NORM_CONVENTION}\n# reference={reference}\n# scheme=mtifp v{SCHEME_VERSION}\n",
        cfg.hash()
    );
    for (k, v) in extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

fn reference_description(cfg: &ExperimentConfig) -> String {
    format!(
        "same stepper at h={}, tau={}",
        cfg.reference.h, cfg.reference.tau
    )
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Dispatch a command.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate(cmd)?;
    match cmd {
        Command::Solve => solve(cfg),
        Command::TableSpatial => Ok(table_output(
            cfg,
            &error_table(cfg, SweepAxis::H)?,
            "table_spatial",
        )?),
        Command::TableTemporal => Ok(table_output(
            cfg,
            &error_table(cfg, SweepAxis::Tau)?,
            "table_temporal",
        )?),
        Command::InterpError => interp_output(cfg, &interp_error(cfg)?),
        Command::Limits => limits_output(cfg, &limits(cfg)?),
        Command::Dynamics2d => dynamics2d(cfg),
        Command::CoeffDump => coeff_dump(cfg),
    }
}

/// Final-time error table over `eps` x (`h` or `tau`) with timing.
#[derive(Debug, Clone)]
pub struct TableRun {
    pub table: ErrorTable,
    pub wall_time_s: f64,
    pub cell_times_s: Vec<f64>,
}

pub fn error_table(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<TableRun> {
    let cmd = match axis {
        SweepAxis::H => Command::TableSpatial,
        SweepAxis::Tau => Command::TableTemporal,
    };
    cfg.validate(cmd)?;
    let start = Instant::now();
    let exec = cfg.execution();
    let cache = ReferenceCache::new(cfg.reference.cache_dir.clone());
    let sw = &cfg.sweep;
    let refs = collect(exec.map_slice(&sw.eps, |&eps| cache.final_state(cfg, eps)))?;

    let (cols, refinement) = match axis {
        SweepAxis::H => (sw.h.len(), 2.0),
        SweepAxis::Tau => (sw.tau.len(), 4.0),
    };
    let jobs: Vec<(usize, usize)> = (0..sw.eps.len())
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    let cells = collect(
        exec.map_slice(&jobs, |&(i, j)| -> Result<(ErrorCell, f64)> {
            let t0 = Instant::now();
            let eps = sw.eps[i];
            let (h, tau) = match axis {
                SweepAxis::H => (sw.h[j], sw.tau[0]),
                SweepAxis::Tau => (sw.h[0], sw.tau[j]),
            };
            let grid = cfg.grid(h)?;
            let init = cfg.problem.data.state(&grid, eps)?;
            let traj = run(&cfg.solver(eps, tau, &grid), &init, &RunOptions::default())?;
            let (rg, rs) = &refs[i];
            let num = traj.final_state();
            let e = h1_error(&grid, num, rg, rs)?;
            let cell = ErrorCell {
                eps,
                h,
                tau,
                e_h1: e.e,
                edot_h1: e.edot,
                l2: l2_error(&grid, num, rg, rs)?,
                energy_err: ErrorEnergy::between(&grid, num, rg, rs, eps)?.value,
                rate: None,
            };
            Ok((cell, t0.elapsed().as_secs_f64()))
        }),
    )?;
    let (cells, cell_times_s): (Vec<_>, Vec<_>) = cells.into_iter().unzip();

    let mut extra = BTreeMap::new();
    extra.insert("t_end".into(), sw.t_end.to_string());
    extra.insert("lambda".into(), cfg.problem.lambda.to_string());
    extra.insert(
        "domain".into(),
        format!("({}, {})", cfg.problem.a, cfg.problem.b),
    );
    if let Some(seed) = cfg.seed {
        extra.insert("seed".into(), seed.to_string());
    }
    let meta = TableMetadata {
        config_hash: cfg.hash(),
        norm: NORM_CONVENTION.into(),
        reference: reference_description(cfg),
        extra,
    };
    let table = ErrorTable::assemble(
        axis,
        refinement,
        sw.eps.clone(),
        sw.h.clone(),
        sw.tau.clone(),
        cells,
        meta,
    )?;
    Ok(TableRun {
        table,
        wall_time_s: start.elapsed().as_secs_f64(),
        cell_times_s,
    })
}

fn table_output(cfg: &ExperimentConfig, run: &TableRun, stem: &str) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    for f in &cfg.output.formats {
        let mut buf = Vec::new();
        match f {
            Format::Csv => {
                run.table.write_csv(&mut buf)?;
                out.files.push((format!("{stem}.csv"), buf));
            }
            Format::Json => {
                run.table.write_json(&mut buf)?;
                out.files.push((format!("{stem}.json"), buf));
            }
        }
    }
    out.summary = json!({
        "status": "ok",
        "command": stem,
        "config_hash": cfg.hash(),
        "wall_time_s": run.wall_time_s,
        "cell_times_s": run.cell_times_s,
        "uniform": run.table.uniform,
    });
    out.text = run.table.to_text();
    Ok(out)
}

/// `|u(x0, t) - U(x0, t)|` on the reference time levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpSeries {
    pub eps: f64,
    pub tau: f64,
    pub x0: f64,
    pub max_error: f64,
    /// Largest `|U(t_n) - u^n|` over the step endpoints (zero by construction).
    pub endpoint_mismatch: f64,
    /// `(t, u_ref, U, |u_ref - U|)`, thinned for output.
    pub rows: Vec<(f64, f64, f64, f64)>,
}

const INTERP_MAX_ROWS: usize = 4000;

fn probe_node(grid: &SpectralGrid, x0: f64) -> Result<usize> {
    (0..grid.len())
        .find(|&k| (grid.node(k).0 - x0).abs() < 1e-9 * grid.h())
        .ok_or_else(|| SolverError::Parameter(format!("probe x0={x0} is not a grid node")))
}

pub fn interp_error(cfg: &ExperimentConfig) -> Result<Vec<InterpSeries>> {
    cfg.validate(Command::InterpError)?;
    if cfg.problem.dim != 1 {
        return Err(SolverError::Parameter(
            "interp-error runs in one dimension".into(),
        ));
    }
    let exec = cfg.execution();
    let sw = &cfg.sweep;
    let grid = cfg.grid(sw.h[0])?;
    let node = probe_node(&grid, 0.0)?;
    let refs = collect(exec.map_slice(&sw.eps, |&eps| -> Result<Trajectory> {
        let init = cfg.problem.data.state(&grid, eps)?;
        let opts = RunOptions {
            probe: Some(node),
            ..Default::default()
        };
        run(&cfg.solver(eps, cfg.reference.tau, &grid), &init, &opts)
    }))?;
    let jobs: Vec<(usize, f64)> = (0..sw.eps.len())
        .flat_map(|i| sw.tau.iter().map(move |&t| (i, t)))
        .collect();
    collect(exec.map_slice(&jobs, |&(i, tau)| -> Result<InterpSeries> {
        let eps = sw.eps[i];
        let init = cfg.problem.data.state(&grid, eps)?;
        let opts = RunOptions {
            keep_micro: true,
            probe: Some(node),
            ..Default::default()
        };
        let num = run(&cfg.solver(eps, tau, &grid), &init, &opts)?;
        let mut endpoint_mismatch = 0.0f64;
        for &(t, u) in &num.probe[1..] {
            endpoint_mismatch =
                endpoint_mismatch.max((interpolate_at(&num.micro, node, t, eps)? - u).abs());
        }
        let series = &refs[i].probe;
        let stride = series.len().div_ceil(INTERP_MAX_ROWS).max(1);
        let mut max_error = 0.0f64;
        let mut rows = Vec::new();
        for (k, &(t, u_ref)) in series.iter().enumerate() {
            let big_u = if t == 0.0 {
                init.u[node]
            } else {
                interpolate_at(&num.micro, node, t, eps)?
            };
            let err = (u_ref - big_u).abs();
            max_error = max_error.max(err);
            if k % stride == 0 || k + 1 == series.len() {
                rows.push((t, u_ref, big_u, err));
            }
        }
        Ok(InterpSeries {
            eps,
            tau,
            x0: 0.0,
            max_error,
            endpoint_mismatch,
            rows,
        })
    }))
}

fn interp_output(cfg: &ExperimentConfig, series: &[InterpSeries]) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    let mut csv = header(
        cfg,
        &format!(
            "same stepper at h={}, tau={}",
            cfg.sweep.h[0], cfg.reference.tau
        ),
        &[("x0", "0".into())],
    );
    csv.push_str("eps,tau,t,u_ref,u_interp,error\n");
    for s in series {
        for &(t, r, u, e) in &s.rows {
            let _ = writeln!(
                csv,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                s.eps, s.tau, t, r, u, e
            );
        }
        let _ = writeln!(
            out.text,
            "eps={:<10} tau={:<8} max |u(0,t)-U(0,t)| = {:.3e}",
            s.eps, s.tau, s.max_error
        );
    }
    push_formats(cfg, &mut out, "interp_error", csv, series)?;
    out.summary = json!({
        "status": "ok",
        "command": "interp-error",
        "config_hash": cfg.hash(),
        "series": series.iter().map(|s| json!({
            "eps": s.eps, "tau": s.tau, "max_error": s.max_error, "endpoint_mismatch": s.endpoint_mismatch,
        })).collect::<Vec<_>>(),
    });
    Ok(out)
}

fn push_formats<T: Serialize + ?Sized>(
    cfg: &ExperimentConfig,
    out: &mut CommandOutput,
    stem: &str,
    csv: String,
    data: &T,
) -> Result<()> {
    for f in &cfg.output.formats {
        match f {
            Format::Csv => out
                .files
                .push((format!("{stem}.csv"), csv.clone().into_bytes())),
            Format::Json => out.files.push((
                format!("{stem}.json"),
                serde_json::to_vec_pretty(&json!({ "config_hash": cfg.hash(), "data": data }))?,
            )),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitSeries {
    pub eps: f64,
    pub gamma: GammaChoice,
    pub samples: Vec<LimitSample>,
}

/// `e_WE(t) / eps^2 ~ c1 + c2 t` for one `eps`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    /// `max |y - fit| / max |y|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitsReport {
    pub tau: f64,
    pub h: f64,
    pub series: Vec<LimitSeries>,
    /// Least-squares `C` in `e_SW(t) = C eps^2` over all samples with `t > 0`.
    pub c_gamma: Vec<(GammaChoice, f64)>,
    /// `max_t e_SW(t) / eps^2` over all runs.
    pub c_gamma_bound: Vec<(GammaChoice, f64)>,
    pub we_fits: Vec<LinearFit>,
}

impl LimitsReport {
    pub fn series_for(&self, eps: f64, gamma: GammaChoice) -> Option<&LimitSeries> {
        self.series
            .iter()
            .find(|s| s.eps == eps && s.gamma == gamma)
    }

    /// `e_SW` at the sample nearest `t`.
    pub fn e_sw_at(&self, eps: f64, gamma: GammaChoice, t: f64) -> Option<f64> {
        let s = self.series_for(eps, gamma)?;
        s.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(|x| x.e_sw)
    }
}

/// Least-squares line through `(x, y)`: `(intercept, slope, max residual / max |y|)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SolverError::Empty(
            "need at least two points for a linear fit".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let c = my - slope * mx;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let res = x
        .iter()
        .zip(y)
        .fold(0.0f64, |m, (a, b)| m.max((b - c - slope * a).abs()));
    Ok((c, slope, if scale > 0.0 { res / scale } else { res }))
}

pub fn limits(cfg: &ExperimentConfig) -> Result<LimitsReport> {
    cfg.validate(Command::Limits)?;
    let sw = &cfg.sweep;
    let grid = cfg.grid(sw.h[0])?;
    let tau = sw.tau[0];
    let per_eps = collect(cfg.execution().map_slice(&sw.eps, |&eps| {
        let p = LimitParams {
            eps,
            lambda: cfg.problem.lambda,
            grid: grid.clone(),
            tau,
            t_end: sw.t_end,
            sample_dt: sw.sample_dt,
            data: cfg.problem.data,
        };
        limit_study(&p, &GammaChoice::ALL)
    }))?;
    let mut series = Vec::new();
    for (&eps, runs) in sw.eps.iter().zip(per_eps) {
        for (gamma, samples) in runs {
            series.push(LimitSeries {
                eps,
                gamma,
                samples,
            });
        }
    }
    let mut c_gamma = Vec::new();
    let mut c_gamma_bound = Vec::new();
    for g in GammaChoice::ALL {
        let (mut num, mut den, mut bound) = (0.0, 0.0, 0.0f64);
        for s in series.iter().filter(|s| s.gamma == g) {
            let e2 = s.eps * s.eps;
            for x in s.samples.iter().filter(|x| x.t > 0.0) {
                num += x.e_sw * e2;
                den += e2 * e2;
                bound = bound.max(x.e_sw / e2);
            }
        }
        c_gamma.push((g, if den > 0.0 { num / den } else { 0.0 }));
        c_gamma_bound.push((g, bound));
    }
    let mut we_fits = Vec::new();
    for s in series.iter().filter(|s| s.gamma == GammaChoice::Zero) {
        let e2 = s.eps * s.eps;
        let t: Vec<f64> = s.samples.iter().map(|x| x.t).collect();
        let y: Vec<f64> = s.samples.iter().map(|x| x.e_we / e2).collect();
        if t.len() >= 2 {
            let (c1, c2, residual) = linear_fit(&t, &y)?;
            we_fits.push(LinearFit {
                eps: s.eps,
                c1,
                c2,
                residual,
            });
        }
    }
    Ok(LimitsReport {
        tau,
        h: sw.h[0],
        series,
        c_gamma,
        c_gamma_bound,
        we_fits,
    })
}

fn limits_output(cfg: &ExperimentConfig, rep: &LimitsReport) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    let mut csv = header(
        cfg,
        "NKGE: mti stepper; NLSW: exponential integrator; NLSE: Strang splitting",
        &[("tau", rep.tau.to_string()), ("h", rep.h.to_string())],
    );
    csv.push_str("eps,gamma,t,e_sw,e_we\n");
    for s in &rep.series {
        for x in &s.samples {
            let _ = writeln!(
                csv,
                "{:e},{},{:e},{:e},{:e}",
                s.eps,
                s.gamma.name(),
                x.t,
                x.e_sw,
                x.e_we
            );
        }
    }
    push_formats(cfg, &mut out, "limits", csv, rep)?;
    for (g, c) in &rep.c_gamma {
        let _ = writeln!(out.text, "C_gamma[{}] = {c:.4e}", g.name());
    }
    for f in &rep.we_fits {
        let _ = writeln!(
            out.text,
            "eps={}: e_WE/eps^2 ~ {:.4} + {:.4} t (residual {:.1}%)",
            f.eps,
            f.c1,
            f.c2,
            100.0 * f.residual
        );
    }
    out.summary = json!({
        "status": "ok",
        "command": "limits",
        "config_hash": cfg.hash(),
        "tau": rep.tau,
        "h": rep.h,
        "c_gamma": rep.c_gamma.iter().map(|(g, c)| (g.name(), c)).collect::<BTreeMap<_, _>>(),
        "c_gamma_bound": rep.c_gamma_bound.iter().map(|(g, c)| (g.name(), c)).collect::<BTreeMap<_, _>>(),
        "we_fits": rep.we_fits,
    });
    Ok(out)
}

/// One 2D snapshot on the tensor grid, row-major with `x` slow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub eps: f64,
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
}

impl Snapshot {
    /// `# shape=nx,ny` line, metadata, then one CSV line per `x` index.
    pub fn write_csv(&self, preamble: &str) -> String {
        let mut s = format!(
            "# shape={},{}\n{preamble}# eps={}\n# t={}\n",
            self.nx, self.ny, self.eps, self.t
        );
        for row in self.u.chunks(self.ny) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// `max |u(x,y) - u(-x,y)|`.
    pub fn x_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.nx {
            // node i sits at a + i h; its mirror is at index (nx - i) mod nx
            let mi = (self.nx - i) % self.nx;
            for j in 0..self.ny {
                m = m.max((self.u[i * self.ny + j] - self.u[mi * self.ny + j]).abs());
            }
        }
        m
    }
}

pub fn dynamics_snapshots(cfg: &ExperimentConfig) -> Result<(Vec<Snapshot>, Vec<Value>)> {
    cfg.validate(Command::Dynamics2d)?;
    let sw = &cfg.sweep;
    let grid = cfg.grid(sw.h[0])?;
    let tau = sw.tau[0];
    let every = (sw.sample_dt / tau).round().max(1.0) as usize;
    let runs = collect(cfg.execution().map_slice(
        &sw.eps,
        |&eps| -> Result<(Vec<Snapshot>, Value)> {
            let init = cfg.problem.data.state(&grid, eps)?;
            let traj = run(
                &cfg.solver(eps, tau, &grid),
                &init,
                &RunOptions {
                    record: Record::Every(every),
                    ..Default::default()
                },
            )?;
            let lambda = cfg.problem.lambda;
            let e0 = grid.energy(&init.u, &init.udot, eps, lambda)?;
            let fin = traj.final_state();
            let e1 = grid.energy(&fin.u, &fin.udot, eps, lambda)?;
            let snaps: Vec<Snapshot> = traj
                .states
                .iter()
                .map(|s| Snapshot {
                    eps,
                    t: s.t,
                    nx: grid.n(),
                    ny: grid.n(),
                    u: s.u.clone(),
                })
                .collect();
            let asym = snaps.iter().fold(0.0f64, |m, s| m.max(s.x_asymmetry()));
            let info = json!({
                "eps": eps,
                "steps": traj.steps,
                "wall_time_s": traj.wall_time,
                "energy_initial": e0,
                "energy_final": e1,
                "energy_drift": ((e1 - e0) / e0).abs(),
                "x_asymmetry": asym,
            });
            Ok((snaps, info))
        },
    ))?;
    let mut snaps = Vec::new();
    let mut infos = Vec::new();
    for (s, i) in runs {
        snaps.extend(s);
        infos.push(i);
    }
    Ok((snaps, infos))
}

fn dynamics2d(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    if cfg.problem.dim != 2 {
        return Err(SolverError::Parameter(
            "dynamics2d needs a two-dimensional problem".into(),
        ));
    }
    let (snaps, infos) = dynamics_snapshots(cfg)?;
    let mut out = CommandOutput::default();
    let pre = header(
        cfg,
        "none",
        &[("domain", format!("({},{})^2", cfg.problem.a, cfg.problem.b))],
    );
    for s in &snaps {
        let stem = format!("dynamics2d_eps{:e}_t{:.4}", s.eps, s.t);
        for f in &cfg.output.formats {
            match f {
                Format::Csv => out
                    .files
                    .push((format!("{stem}.csv"), s.write_csv(&pre).into_bytes())),
                Format::Json => out
                    .files
                    .push((format!("{stem}.json"), serde_json::to_vec(s)?)),
            }
        }
    }
    for i in &infos {
        let _ = writeln!(
            out.text,
            "eps={}: {} steps, relative energy drift {:.3e}, x-asymmetry {:.1e}",
            i["eps"],
            i["steps"],
            i["energy_drift"].as_f64().unwrap_or(f64::NAN),
            i["x_asymmetry"].as_f64().unwrap_or(f64::NAN)
        );
    }
    out.summary = json!({ "status": "ok", "command": "dynamics2d", "config_hash": cfg.hash(), "runs": infos });
    Ok(out)
}

fn solve(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let sw = &cfg.sweep;
    let grid = cfg.grid(sw.h[0])?;
    let tau = sw.tau[0];
    let lambda = cfg.problem.lambda;
    let results = collect(cfg.execution().map_slice(
        &sw.eps,
        |&eps| -> Result<(f64, FieldState, Value)> {
            let init = cfg.problem.data.state(&grid, eps)?;
            let traj = run(&cfg.solver(eps, tau, &grid), &init, &RunOptions::default())?;
            let fin = traj.final_state().clone();
            let e0 = grid.energy(&init.u, &init.udot, eps, lambda)?;
            let e1 = grid.energy(&fin.u, &fin.udot, eps, lambda)?;
            let drift = if e0 != 0.0 {
                ((e1 - e0) / e0).abs()
            } else {
                (e1 - e0).abs()
            };
            let info = json!({
                "eps": eps,
                "tau": tau,
                "h": sw.h[0],
                "t_end": fin.t,
                "steps": traj.steps,
                "wall_time_s": traj.wall_time,
                "energy_initial": e0,
                "energy_final": e1,
                "energy_drift": drift,
                "max_imag_residue": traj.max_imag_residue,
            });
            Ok((eps, fin, info))
        },
    ))?;
    let mut out = CommandOutput::default();
    let pre = header(
        cfg,
        "none",
        &[("tau", tau.to_string()), ("h", sw.h[0].to_string())],
    );
    let mut infos = Vec::new();
    for (eps, state, info) in results {
        let stem = format!("solve_eps{eps:e}");
        let mut csv = pre.clone();
        let _ = writeln!(csv, "# eps={eps}\n# t={}", state.t);
        csv.push_str(if grid.dim() == 1 {
            "x,u,udot\n"
        } else {
            "x,y,u,udot\n"
        });
        for k in 0..grid.len() {
            let (x, y) = grid.node(k);
            if grid.dim() == 1 {
                let _ = writeln!(csv, "{x:e},{:e},{:e}", state.u[k], state.udot[k]);
            } else {
                let _ = writeln!(csv, "{x:e},{y:e},{:e},{:e}", state.u[k], state.udot[k]);
            }
        }
        let _ = writeln!(
            out.text,
            "eps={eps}: t={} after {} steps, energy drift {:.3e}",
            state.t,
            info["steps"],
            info["energy_drift"].as_f64().unwrap_or(f64::NAN)
        );
        push_formats(cfg, &mut out, &stem, csv, &state)?;
        infos.push(info);
    }
    out.summary = json!({ "status": "ok", "command": "solve", "scheme": format!("mtifp v{SCHEME_VERSION}"), "config_hash": cfg.hash(), "runs": infos });
    Ok(out)
}

fn coeff_dump(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let grid = cfg.grid(cfg.sweep.h[0])?;
    let mut out = CommandOutput::default();
    for &eps in &cfg.sweep.eps {
        for &tau in &cfg.sweep.tau {
            let table = CoeffTable::build_with(tau, eps, &grid, cfg.execution())?;
            let stem = format!("coeffs_eps{eps:e}_tau{tau:e}");
            let mut csv = header(
                cfg,
                "none",
                &[("eps", eps.to_string()), ("tau", tau.to_string())],
            )
            .into_bytes();
            table.write_csv(&grid, &mut csv)?;
            for f in &cfg.output.formats {
                match f {
                    Format::Csv => out.files.push((format!("{stem}.csv"), csv.clone())),
                    Format::Json => out
                        .files
                        .push((format!("{stem}.json"), serde_json::to_vec_pretty(&table)?)),
                }
            }
        }
    }
    out.summary = json!({ "status": "ok", "command": "coeff-dump", "config_hash": cfg.hash(), "files": out.files.len() });
    Ok(out)
}
