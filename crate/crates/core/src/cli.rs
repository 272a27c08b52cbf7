//! Config parsing, run orchestration and artifact output.
//!
//! Config files are flat TOML: every key is a scalar or a flat array, there
//! are no tables. Unknown keys are rejected.
//!
//! ```toml
//! name = "demo"
//! n_modes = 64          # default 64
//! horizon = 0.05
//! dt_max = 1e-3         # default 1e-3
//! epsilon = 0.0
//! delta = 0.1           # default 0.1
//! record_every = 10     # default 10
//! atoms = [[0.3, 1.0], [-0.3, 1.0]]   # (z, rate) pairs
//! init = "single_mode"
//! init_k = 1
//! init_amplitude = 1e-3
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Table, Value};

use crate::diagnostics::{
    energy_residual, fit_decay, h_decay_bound, k0_rate, k1_rate, w21_budget, BoundVerdict,
    DiagnosticsSeries, DEFAULT_C1, DEFAULT_TAIL_FRACTION,
};
use crate::integrator::{run, InitialCondition, IntegratorError, RunOutput, SimConfig};
use crate::levy::{Atom, DensitySide, LevyError, LevyMeasureSpec, PowerLawDensity};
use crate::spectral::{default_grid_size, write_snapshot};

pub const CSV_HEADER: &str = "t,H2,V2,cum_diss,cum_trunc,n_jumps";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// V-monotonicity slack relative to `V2(0)`.
pub const V_MONOTONE_SLACK: f64 = 1e-8;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {key}: {constraint}")]
    Config { key: String, constraint: String },
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::BlowUp(_) => EXIT_BLOW_UP,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn config(key: &str, constraint: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn measure_key(e: &LevyError) -> &'static str {
    match e {
        LevyError::AtomAtZero { .. }
        | LevyError::NonPositiveRate { .. }
        | LevyError::NonFiniteAtom { .. } => "atoms",
        LevyError::AlphaOutOfRange { .. } => "density_alpha",
        LevyError::NonPositiveScale { .. } => "density_c",
        LevyError::NonPositiveCutoff { .. } => "density_z_max",
        LevyError::InvalidThreshold { .. } | LevyError::InfiniteRate => "delta",
        LevyError::InvalidHorizon { .. } => "horizon",
    }
}

impl From<IntegratorError> for CliError {
    fn from(e: IntegratorError) -> Self {
        match e {
            IntegratorError::Config { key, constraint } => CliError::Config { key, constraint },
            IntegratorError::Measure(m) => CliError::config(measure_key(&m), m.to_string()),
            other => CliError::BlowUp(other.to_string()),
        }
    }
}

/// A parsed config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub sim: SimConfig,
    pub c1: f64,
    pub tail_fraction: f64,
}

const KEYS: &[&str] = &[
    "name",
    "n_modes",
    "horizon",
    "dt_max",
    "epsilon",
    "delta",
    "seed",
    "record_every",
    "c_stab",
    "drift",
    "record_l1",
    "snapshot_every",
    "c1",
    "tail_fraction",
    "atoms",
    "density_c",
    "density_alpha",
    "density_z_max",
    "density_side",
    "init",
    "init_k",
    "init_amplitude",
    "init_k2",
    "init_amplitude2",
    "init_decay",
    "init_seed",
];

struct Fields {
    table: Table,
}

impl Fields {
    fn float(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(CliError::config(key, "must be a number")),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(CliError::config(key, "must be a nonnegative integer")),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.uint(key)?
            .map(|v| usize::try_from(v).map_err(|_| CliError::config(key, "too large")))
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Boolean(v)) => Ok(Some(*v)),
            Some(_) => Err(CliError::config(key, "must be true or false")),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(v)) => Ok(Some(v.clone())),
            Some(_) => Err(CliError::config(key, "must be a string")),
        }
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T, CliError> {
        v.ok_or_else(|| CliError::config(key, "is required by the chosen init preset"))
    }

    fn atoms(&self) -> Result<Vec<Atom>, CliError> {
        let Some(v) = self.table.get("atoms") else {
            return Ok(Vec::new());
        };
        let err = || CliError::config("atoms", "must be an array of [z, rate] pairs");
        let Value::Array(items) = v else {
            return Err(err());
        };
        items
            .iter()
            .map(|item| match item {
                Value::Array(pair) if pair.len() == 2 => {
                    let num = |x: &Value| match x {
                        Value::Float(f) => Ok(*f),
                        Value::Integer(i) => Ok(*i as f64),
                        _ => Err(err()),
                    };
                    Ok(Atom {
                        z: num(&pair[0])?,
                        rate: num(&pair[1])?,
                    })
                }
                _ => Err(err()),
            })
            .collect()
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::config("<file>", e.message().to_string()))?;
    if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(CliError::config(key, "unknown key"));
    }
    let f = Fields { table };

    let mut measure = LevyMeasureSpec {
        atoms: f.atoms()?,
        density: None,
    };
    let density_keys = [
        "density_c",
        "density_alpha",
        "density_z_max",
        "density_side",
    ];
    if density_keys.iter().any(|k| f.table.contains_key(*k)) {
        let side = match f.string("density_side")?.as_deref() {
            None | Some("both") => DensitySide::Both,
            Some("positive") => DensitySide::Positive,
            Some("negative") => DensitySide::Negative,
            Some(_) => {
                return Err(CliError::config(
                    "density_side",
                    "must be one of both, positive, negative",
                ))
            }
        };
        measure.density = Some(PowerLawDensity {
            c: f.float("density_c")?.unwrap_or(1.0),
            alpha: f.require("density_alpha", f.float("density_alpha")?)?,
            z_max: f.float("density_z_max")?.unwrap_or(1.0),
            side,
        });
    }

    let amplitude = f.float("init_amplitude")?;
    let init = match f.string("init")?.as_deref() {
        None => return Err(CliError::config("init", "is required")),
        Some("single_mode") => InitialCondition::SingleMode {
            k: f.usize("init_k")?.unwrap_or(1),
            amplitude: f.require("init_amplitude", amplitude)?,
        },
        Some("two_mode") => InitialCondition::TwoMode {
            k1: f.usize("init_k")?.unwrap_or(1),
            a1: f.require("init_amplitude", amplitude)?,
            k2: f.require("init_k2", f.usize("init_k2")?)?,
            a2: f.require("init_amplitude2", f.float("init_amplitude2")?)?,
        },
        Some("random_smooth") => InitialCondition::RandomSmooth {
            decay: f.require("init_decay", f.float("init_decay")?)?,
            amplitude: f.require("init_amplitude", amplitude)?,
            seed: f.uint("init_seed")?.unwrap_or(0),
        },
        Some(_) => {
            return Err(CliError::config(
                "init",
                "must be one of single_mode, two_mode, random_smooth",
            ))
        }
    };

    let mut sim = SimConfig::new(measure, init);
    if let Some(v) = f.usize("n_modes")? {
        sim.n_modes = v;
    }
    if let Some(v) = f.float("horizon")? {
        sim.horizon = v;
    }
    if let Some(v) = f.float("dt_max")? {
        sim.dt_max = v;
    }
    if let Some(v) = f.float("epsilon")? {
        sim.epsilon = v;
    }
    if let Some(v) = f.float("delta")? {
        sim.delta = v;
    }
    if let Some(v) = f.uint("seed")? {
        sim.seed = v;
    }
    if let Some(v) = f.usize("record_every")? {
        sim.record_every = v;
    }
    if let Some(v) = f.float("c_stab")? {
        sim.c_stab = v;
    }
    if let Some(v) = f.bool("drift")? {
        sim.drift = v;
    }
    if let Some(v) = f.bool("record_l1")? {
        sim.record_l1 = v;
    }
    if let Some(v) = f.usize("snapshot_every")? {
        sim.snapshot_every = v;
    }
    sim.validate()?;

    let c1 = f.float("c1")?.unwrap_or(DEFAULT_C1);
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(CliError::config("c1", "must be positive"));
    }
    let tail_fraction = f.float("tail_fraction")?.unwrap_or(DEFAULT_TAIL_FRACTION);
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(CliError::config("tail_fraction", "must lie in (0, 1]"));
    }
    let name = f.string("name")?.unwrap_or_else(|| "run".to_string());
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(CliError::config("name", "must be a plain file stem"));
    }
    Ok(RunConfig {
        name,
        sim,
        c1,
        tail_fraction,
    })
}

/// Flags that shape a run but are not part of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub check: bool,
    pub emit_svg: bool,
    /// Worker threads for ensembles; 0 means one per core.
    pub workers: usize,
}

/// Shortest representation that parses back to the same value.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Verdicts computed under `--check`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdicts {
    pub energy_residual: f64,
    pub v_monotone: bool,
    pub max_v2_increase: f64,
    pub h_decay: BoundVerdict,
    pub w21: Option<(f64, f64, bool)>,
    pub k0_positive: Option<bool>,
}

/// Key-value lines shared by reports and manifests.
#[derive(Debug, Clone, Default)]
struct KeyValues(Vec<(String, String)>);

impl KeyValues {
    fn put(&mut self, k: impl Into<String>, v: impl ToString) {
        self.0.push((k.into(), v.to_string()));
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Outcome of one trajectory.
#[derive(Debug, Clone)]
pub struct PathSummary {
    pub seed: u64,
    pub files: Vec<PathBuf>,
    pub verdicts: Option<Verdicts>,
    pub k0_hat: Option<f64>,
    pub s2: f64,
}

pub fn write_csv<W: Write>(w: &mut W, s: &DiagnosticsSeries) -> io::Result<()> {
    let with_l1 = s.rows.iter().any(|r| r.l1_dx.is_some());
    write!(w, "{CSV_HEADER}")?;
    if with_l1 {
        write!(w, ",L1dx,L1dxx")?;
    }
    writeln!(w)?;
    for r in &s.rows {
        write!(
            w,
            "{},{},{},{},{},{}",
            fmt_float(r.t),
            fmt_float(r.h2),
            fmt_float(r.v2),
            fmt_float(r.cum_diss),
            fmt_float(r.cum_trunc),
            r.n_jumps
        )?;
        if with_l1 {
            let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_float);
            write!(w, ",{},{}", opt(r.l1_dx), opt(r.l1_dxx))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn config_echo(kv: &mut KeyValues, cfg: &RunConfig) {
    let s = &cfg.sim;
    kv.put("config.name", &cfg.name);
    kv.put("config.n_modes", s.n_modes);
    kv.put("config.horizon", fmt_float(s.horizon));
    kv.put("config.dt_max", fmt_float(s.dt_max));
    kv.put("config.epsilon", fmt_float(s.epsilon));
    kv.put("config.delta", fmt_float(s.delta));
    kv.put("config.record_every", s.record_every);
    kv.put("config.c_stab", fmt_float(s.c_stab));
    kv.put("config.drift", s.drift);
    kv.put("config.record_l1", s.record_l1);
    kv.put("config.snapshot_every", s.snapshot_every);
    kv.put("config.c1", fmt_float(cfg.c1));
    kv.put("config.tail_fraction", fmt_float(cfg.tail_fraction));
    let atoms: Vec<String> = s
        .measure
        .atoms
        .iter()
        .map(|a| format!("[{}, {}]", fmt_float(a.z), fmt_float(a.rate)))
        .collect();
    kv.put("config.atoms", format!("[{}]", atoms.join(", ")));
    if let Some(d) = &s.measure.density {
        kv.put("config.density_c", fmt_float(d.c));
        kv.put("config.density_alpha", fmt_float(d.alpha));
        kv.put("config.density_z_max", fmt_float(d.z_max));
        let side = match d.side {
            DensitySide::Both => "both",
            DensitySide::Positive => "positive",
            DensitySide::Negative => "negative",
        };
        kv.put("config.density_side", side);
    }
    match s.init {
        InitialCondition::SingleMode { k, amplitude } => {
            kv.put("config.init", "single_mode");
            kv.put("config.init_k", k);
            kv.put("config.init_amplitude", fmt_float(amplitude));
        }
        InitialCondition::TwoMode { k1, a1, k2, a2 } => {
            kv.put("config.init", "two_mode");
            kv.put("config.init_k", k1);
            kv.put("config.init_amplitude", fmt_float(a1));
            kv.put("config.init_k2", k2);
            kv.put("config.init_amplitude2", fmt_float(a2));
        }
        InitialCondition::RandomSmooth {
            decay,
            amplitude,
            seed,
        } => {
            kv.put("config.init", "random_smooth");
            kv.put("config.init_decay", fmt_float(decay));
            kv.put("config.init_amplitude", fmt_float(amplitude));
            kv.put("config.init_seed", seed);
        }
    }
}

fn verdict_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn compute_verdicts(cfg: &RunConfig, out: &RunOutput, k0_hat: Option<f64>) -> Verdicts {
    let s = &out.series;
    let max_inc = s.max_v2_increase();
    Verdicts {
        energy_residual: energy_residual(s).unwrap_or(0.0),
        v_monotone: max_inc <= V_MONOTONE_SLACK * out.v0sq,
        max_v2_increase: max_inc,
        h_decay: h_decay_bound(s, out.v0sq, cfg.c1),
        w21: w21_budget(s, out.v0sq)
            .ok()
            .map(|b| (b.integral, b.bound, b.passed)),
        k0_positive: k0_hat.map(|k| k > 0.0),
    }
}

fn report(
    cfg: &RunConfig,
    seed: u64,
    out: &RunOutput,
    verdicts: Option<&Verdicts>,
) -> (KeyValues, Option<f64>) {
    let mut kv = KeyValues::default();
    let first = out.series.first().expect("series has the initial row");
    let last = out.series.last().expect("series has the final row");
    kv.put("name", &cfg.name);
    kv.put("seed", seed);
    kv.put("steps", out.steps);
    kv.put("dt", fmt_float(out.dt));
    kv.put("grid_points", default_grid_size(cfg.sim.n_modes));
    kv.put("n_jumps", last.n_jumps);
    kv.put("H2_initial", fmt_float(first.h2));
    kv.put("V2_initial", fmt_float(out.v0sq));
    kv.put("H2_final", fmt_float(last.h2));
    kv.put("V2_final", fmt_float(last.v2));
    kv.put("k1", fmt_float(k1_rate(out.v0sq, cfg.c1)));
    kv.put("k0", fmt_float(k0_rate(out.v0sq, cfg.c1)));
    kv.put("s2_delta", fmt_float(out.small_moments.s2));
    kv.put("b_delta", fmt_float(out.small_moments.b));
    let mut k0_hat = None;
    match fit_decay(&out.series, cfg.tail_fraction, cfg.c1) {
        Ok(fit) => {
            k0_hat = Some(fit.k0_hat);
            kv.put("k0_hat", fmt_float(fit.k0_hat));
            kv.put("fit_r2", fmt_float(fit.r2));
            kv.put(
                "fit_window",
                format!("[{}, {}]", fmt_float(fit.window.0), fmt_float(fit.window.1)),
            );
            kv.put("k0_hat_over_k0", fmt_float(fit.k0_hat / fit.k0_bound()));
        }
        Err(e) => kv.put("k0_hat", format!("unavailable ({e})")),
    }
    if let Some(v) = verdicts {
        kv.put("energy_residual", fmt_float(v.energy_residual));
        kv.put("max_v2_increase", fmt_float(v.max_v2_increase));
        kv.put("verdict.v_monotone", verdict_word(v.v_monotone));
        match v.h_decay {
            BoundVerdict::Pass => kv.put("verdict.h_decay_bound", "pass"),
            BoundVerdict::Fail { t } => kv.put(
                "verdict.h_decay_bound",
                format!("fail at t = {}", fmt_float(t)),
            ),
        }
        match v.w21 {
            Some((integral, bound, ok)) => {
                kv.put("w21_integral", fmt_float(integral));
                kv.put("w21_bound", fmt_float(bound));
                kv.put("verdict.w21_budget", verdict_word(ok));
            }
            None => kv.put("verdict.w21_budget", "unavailable"),
        }
        match v.k0_positive {
            Some(ok) => kv.put("verdict.k0_hat_positive", verdict_word(ok)),
            None => kv.put("verdict.k0_hat_positive", "unavailable"),
        }
    }
    (kv, k0_hat)
}

fn write_manifest(path: &Path, mut kv: KeyValues, files: &[PathBuf]) -> Result<(), CliError> {
    for f in files {
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        kv.put(format!("sha256.{name}"), sha256_file(f)?);
    }
    let text = kv.render();
    write_file(path, |w| w.write_all(text.as_bytes()))
}

fn run_path(
    cfg: &RunConfig,
    stem: &str,
    seed: u64,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<PathSummary, CliError> {
    let mut sim = cfg.sim.clone();
    sim.seed = seed;
    if opts.check {
        sim.record_l1 = true;
    }
    let out = run(&sim)?;
    let mut files = Vec::new();

    let csv = out_dir.join(format!("{stem}.csv"));
    write_file(&csv, |w| write_csv(w, &out.series))?;
    files.push(csv);

    let jumps = out_dir.join(format!("{stem}.jumps"));
    write_file(&jumps, |w| {
        for e in &out.jumps {
            writeln!(w, "{} {}", fmt_float(e.t), fmt_float(e.z))?;
        }
        Ok(())
    })?;
    files.push(jumps);

    if !out.snapshots.is_empty() {
        let snap = out_dir.join(format!("{stem}.snap"));
        let m = default_grid_size(sim.n_modes);
        write_file(&snap, |w| {
            for (t, u) in &out.snapshots {
                write_snapshot(&mut *w, *t, u, m)?;
            }
            Ok(())
        })?;
        files.push(snap);
    }

    if opts.emit_svg {
        let svg = out_dir.join(format!("{stem}.svg"));
        let text = decay_svg(&out.series, k1_rate(out.v0sq, cfg.c1));
        write_file(&svg, |w| w.write_all(text.as_bytes()))?;
        files.push(svg);
    }

    let k0_hat = fit_decay(&out.series, cfg.tail_fraction, cfg.c1)
        .ok()
        .map(|f| f.k0_hat);
    let verdicts = opts.check.then(|| compute_verdicts(cfg, &out, k0_hat));
    let (kv, _) = report(cfg, seed, &out, verdicts.as_ref());
    let report_path = out_dir.join(format!("{stem}.report"));
    let text = kv.render();
    write_file(&report_path, |w| w.write_all(text.as_bytes()))?;
    files.push(report_path);

    Ok(PathSummary {
        seed,
        files,
        verdicts,
        k0_hat,
        s2: out.small_moments.s2,
    })
}

fn manifest_header(cfg: &RunConfig) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.put("code_version", CODE_VERSION);
    config_echo(&mut kv, cfg);
    kv
}

fn put_verdicts(kv: &mut KeyValues, v: &Verdicts) {
    kv.put("verdict.energy_residual", fmt_float(v.energy_residual));
    kv.put("verdict.v_monotone", verdict_word(v.v_monotone));
    kv.put("verdict.h_decay_bound", verdict_word(v.h_decay.passed()));
    if let Some((_, _, ok)) = v.w21 {
        kv.put("verdict.w21_budget", verdict_word(ok));
    }
    if let Some(ok) = v.k0_positive {
        kv.put("verdict.k0_hat_positive", verdict_word(ok));
    }
}

fn create_out_dir(out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))
}

/// Runs one trajectory and writes its artifacts into `out_dir`.
pub fn run_single(
    cfg: &RunConfig,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<PathSummary, CliError> {
    create_out_dir(out_dir)?;
    let summary = run_path(cfg, &cfg.name, cfg.sim.seed, out_dir, opts)?;
    let mut kv = manifest_header(cfg);
    kv.put("seed", summary.seed);
    kv.put("s2_delta", fmt_float(summary.s2));
    if let Some(k) = summary.k0_hat {
        kv.put("k0_hat", fmt_float(k));
    }
    if let Some(v) = &summary.verdicts {
        put_verdicts(&mut kv, v);
    }
    write_manifest(
        &out_dir.join(format!("{}.manifest", cfg.name)),
        kv,
        &summary.files,
    )?;
    Ok(summary)
}

/// Aggregate of an ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub paths: Vec<PathSummary>,
    /// Verdict name to number of passing paths.
    pub passes: BTreeMap<String, usize>,
}

impl EnsembleSummary {
    pub fn all_passed(&self) -> bool {
        self.passes.values().all(|&n| n == self.paths.len())
    }
}

/// Runs `n_paths` trajectories with seeds `seed, seed + 1, ...` on a pool of
/// `opts.workers` threads, then writes the aggregate report and manifest.
pub fn run_ensemble(
    cfg: &RunConfig,
    n_paths: usize,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<EnsembleSummary, CliError> {
    if n_paths == 0 {
        return Err(CliError::config("--paths", "must be at least 1"));
    }
    create_out_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| CliError::config("--workers", e.to_string()))?;
    let base = cfg.sim.seed;
    let results: Vec<Result<PathSummary, CliError>> = pool.install(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let stem = format!("{}_p{i:04}", cfg.name);
                run_path(cfg, &stem, base.wrapping_add(i as u64), out_dir, opts)
            })
            .collect()
    });
    let paths = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut passes = BTreeMap::new();
    let mut report = KeyValues::default();
    report.put("name", &cfg.name);
    report.put("paths", n_paths);
    report.put("seed_first", base);
    report.put("seed_last", base.wrapping_add(n_paths as u64 - 1));
    let fitted: Vec<f64> = paths.iter().filter_map(|p| p.k0_hat).collect();
    report.put("k0_hat_fitted", format!("{}/{}", fitted.len(), n_paths));
    if !fitted.is_empty() {
        let mean = fitted.iter().sum::<f64>() / fitted.len() as f64;
        report.put(
            "k0_hat_min",
            fmt_float(fitted.iter().copied().fold(f64::INFINITY, f64::min)),
        );
        report.put("k0_hat_mean", fmt_float(mean));
        report.put(
            "k0_hat_max",
            fmt_float(fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        );
    }
    if opts.check {
        let count = |f: &dyn Fn(&Verdicts) -> bool| {
            paths
                .iter()
                .filter(|p| p.verdicts.as_ref().is_some_and(f))
                .count()
        };
        passes.insert("v_monotone".to_string(), count(&|v| v.v_monotone));
        passes.insert("h_decay_bound".to_string(), count(&|v| v.h_decay.passed()));
        passes.insert(
            "w21_budget".to_string(),
            count(&|v| v.w21.is_some_and(|w| w.2)),
        );
        passes.insert(
            "k0_hat_positive".to_string(),
            count(&|v| v.k0_positive == Some(true)),
        );
        let worst = paths
            .iter()
            .filter_map(|p| p.verdicts.as_ref().map(|v| v.energy_residual))
            .fold(0.0, f64::max);
        report.put("energy_residual_max", fmt_float(worst));
        for (k, n) in &passes {
            report.put(format!("verdict.{k}"), format!("passes {n}/{n_paths}"));
        }
    }
    let report_path = out_dir.join(format!("{}.report", cfg.name));
    let text = report.render();
    write_file(&report_path, |w| w.write_all(text.as_bytes()))?;

    let mut kv = manifest_header(cfg);
    kv.put("paths", n_paths);
    let seeds: Vec<String> = paths.iter().map(|p| p.seed.to_string()).collect();
    kv.put("seeds", seeds.join(","));
    kv.put("s2_delta", fmt_float(paths[0].s2));
    for (k, n) in &passes {
        kv.put(format!("verdict.{k}"), format!("{k} passes {n}/{n_paths}"));
    }
    let mut files: Vec<PathBuf> = paths.iter().flat_map(|p| p.files.iter().cloned()).collect();
    files.push(report_path);
    write_manifest(&out_dir.join(format!("{}.manifest", cfg.name)), kv, &files)?;
    Ok(EnsembleSummary { paths, passes })
}

/// Log-scale plot of `H2`, `V2` and the bound `H2(0) e^{-k1 t}`.
pub fn decay_svg(s: &DiagnosticsSeries, k1: f64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let rows = &s.rows;
    let t_end = rows.last().map_or(1.0, |r| r.t).max(f64::MIN_POSITIVE);
    let h0 = rows.first().map_or(0.0, |r| r.h2);
    let bound: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, h0 * (-k1 * r.t).exp())).collect();
    let h2: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.h2)).collect();
    let v2: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.v2)).collect();

    let logs = || {
        [&h2, &v2, &bound]
            .into_iter()
            .flatten()
            .filter(|p| p.1 > 0.0)
            .map(|p| p.1.log10())
    };
    let lo = logs().fold(f64::INFINITY, f64::min);
    let hi = logs().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
    } else {
        (-1.0, 0.0)
    };
    let px = |t: f64| PAD + (W - 2.0 * PAD) * t / t_end;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (v.log10() - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let decades = (hi - lo) as i64;
    let step = (decades / 8).max(1);
    let mut d = lo as i64;
    while d <= hi as i64 {
        let y = py(10f64.powi(d as i32));
        let _ = writeln!(
            svg,
            r##"<line x1="{PAD}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            W - PAD
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
            PAD - 4.0,
            y + 4.0
        );
        d += step;
    }
    for i in 0..=4 {
        let t = t_end * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(t),
            H - PAD + 16.0,
            fmt_float((t * 1e6).round() / 1e6)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#,
        W / 2.0,
        H - 12.0
    );

    let series = [
        (&h2, "#1f77b4", "", "H2"),
        (&v2, "#d62728", "", "V2"),
        (
            &bound,
            "#555",
            r#" stroke-dasharray="6 4""#,
            "H2(0) exp(-k1 t)",
        ),
    ];
    for (k, (pts, color, dash, label)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        if !coords.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                coords.join(" ")
            );
        }
        let y = PAD + 16.0 + 16.0 * k as f64;
        let x = W - PAD - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}"{dash}/>"#,
            x + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{label}</text>"#,
            x + 30.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
