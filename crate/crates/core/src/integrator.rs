//! Jump-adapted time stepping of the Galerkin system.
//!
//! Between jumps the field follows the curve-shortening drift plus the
//! compensator multiplier, combined by Strang splitting: an exact multiplier
//! half-step, one SSP-RK3 step of the drift, another exact half-step. Steps
//! are shortened to land exactly on jump times, where the field is shifted by
//! `eps * z`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::{DiagnosticsSeries, SeriesRow};
use crate::dynamics::{
    apply_multiplier_in_place, compensator, CompensatorMultiplier, DriftEvaluator, DynamicsError,
};
use crate::levy::{JumpEvent, LevyError, LevyMeasureSpec, SmallMoments};
use crate::spectral::{L1Evaluator, SpectralField};

// Coefficients below this are set to zero so decayed modes never go subnormal.
const FLUSH_BELOW: f64 = 1e-250;

/// Default `c_stab` in `dt <= c_stab / (2 pi N)^2`.
pub const STABILITY_CONSTANT: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("{key}: {constraint}")]
    Config { key: String, constraint: String },
    #[error("numerical blow-up at t = {t}")]
    BlowUp { t: f64 },
    #[error("jump at t = {event} applied to state at t = {state}")]
    JumpTime { state: f64, event: f64 },
    #[error("step {dt:e} exceeds the stability limit {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error(transparent)]
    Measure(#[from] LevyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl IntegratorError {
    fn config(key: &str, constraint: impl Into<String>) -> Self {
        IntegratorError::Config {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }
}

/// Mean-free initial data.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `amplitude * sin(2 pi k x)`
    SingleMode { k: usize, amplitude: f64 },
    /// `a1 sin(2 pi k1 x) + a2 sin(2 pi k2 x)`
    TwoMode {
        k1: usize,
        a1: f64,
        k2: usize,
        a2: f64,
    },
    /// `c_k = amplitude * k^{-decay} * e^{i phi_k}` with seeded phases.
    RandomSmooth {
        decay: f64,
        amplitude: f64,
        seed: u64,
    },
}

impl InitialCondition {
    pub fn validate(&self, n_modes: usize) -> Result<(), IntegratorError> {
        let in_range = |k: usize| (1..=n_modes).contains(&k);
        match *self {
            InitialCondition::SingleMode { k, amplitude } => {
                if !in_range(k) {
                    return Err(IntegratorError::config(
                        "init_k",
                        format!("must lie in 1..={n_modes}"),
                    ));
                }
                if !amplitude.is_finite() {
                    return Err(IntegratorError::config("init_amplitude", "must be finite"));
                }
            }
            InitialCondition::TwoMode { k1, a1, k2, a2 } => {
                if !in_range(k1) {
                    return Err(IntegratorError::config(
                        "init_k",
                        format!("must lie in 1..={n_modes}"),
                    ));
                }
                if !in_range(k2) {
                    return Err(IntegratorError::config(
                        "init_k2",
                        format!("must lie in 1..={n_modes}"),
                    ));
                }
                if !(a1.is_finite() && a2.is_finite()) {
                    return Err(IntegratorError::config("init_amplitude", "must be finite"));
                }
            }
            InitialCondition::RandomSmooth {
                decay, amplitude, ..
            } => {
                if !(decay > 0.0 && decay.is_finite()) {
                    return Err(IntegratorError::config("init_decay", "must be positive"));
                }
                if !amplitude.is_finite() {
                    return Err(IntegratorError::config("init_amplitude", "must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, n_modes: usize) -> SpectralField {
        match *self {
            InitialCondition::SingleMode { k, amplitude } => {
                SpectralField::sine_mode(n_modes, k, amplitude)
            }
            InitialCondition::TwoMode { k1, a1, k2, a2 } => {
                SpectralField::sine_mode(n_modes, k1, a1)
                    .add(&SpectralField::sine_mode(n_modes, k2, a2))
            }
            InitialCondition::RandomSmooth {
                decay,
                amplitude,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let coeffs = (1..=n_modes)
                    .map(|k| {
                        let phase: f64 = rng.random();
                        Complex64::cis(TAU * phase) * (amplitude * (k as f64).powf(-decay))
                    })
                    .collect();
                SpectralField::from_coeffs(coeffs).expect("finite amplitudes")
            }
        }
    }
}

/// Full description of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_modes: usize,
    pub horizon: f64,
    pub dt_max: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub measure: LevyMeasureSpec,
    pub init: InitialCondition,
    pub seed: u64,
    pub record_every: usize,
    pub c_stab: f64,
    /// Turning the drift off leaves the pure noise dynamics.
    pub drift: bool,
    /// Record `||u_x||_{L^1}` and `||u_xx||_{L^1}` on every row.
    pub record_l1: bool,
    /// Keep a field snapshot every this many steps; 0 disables.
    pub snapshot_every: usize,
}

impl SimConfig {
    pub const DEFAULT_N_MODES: usize = 64;
    pub const DEFAULT_DT_MAX: f64 = 1e-3;
    pub const DEFAULT_DELTA: f64 = 0.1;
    pub const DEFAULT_RECORD_EVERY: usize = 10;
    pub const DEFAULT_HORIZON: f64 = 1.0;
    pub const DEFAULT_EPSILON: f64 = 1.0;

    pub fn new(measure: LevyMeasureSpec, init: InitialCondition) -> Self {
        Self {
            n_modes: Self::DEFAULT_N_MODES,
            horizon: Self::DEFAULT_HORIZON,
            dt_max: Self::DEFAULT_DT_MAX,
            epsilon: Self::DEFAULT_EPSILON,
            delta: Self::DEFAULT_DELTA,
            measure,
            init,
            seed: 0,
            record_every: Self::DEFAULT_RECORD_EVERY,
            c_stab: STABILITY_CONSTANT,
            drift: true,
            record_l1: false,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        if self.n_modes < 1 {
            return Err(IntegratorError::config("n_modes", "must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(IntegratorError::config(
                "horizon",
                "must be positive and finite",
            ));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(IntegratorError::config(
                "dt_max",
                "must be positive and finite",
            ));
        }
        // zero is the deterministic flow
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(IntegratorError::config(
                "epsilon",
                "epsilon must be positive",
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(IntegratorError::config("delta", "must lie in (0, 1]"));
        }
        if self.record_every < 1 {
            return Err(IntegratorError::config(
                "record_every",
                "must be at least 1",
            ));
        }
        if !(self.c_stab > 0.0 && self.c_stab.is_finite()) {
            return Err(IntegratorError::config("c_stab", "must be positive"));
        }
        self.measure.validate()?;
        self.init.validate(self.n_modes)
    }

    /// Step size used between jumps.
    pub fn step_size(&self) -> f64 {
        if self.drift {
            stable_dt(self.n_modes, self.dt_max, self.c_stab)
        } else {
            self.dt_max
        }
    }
}

/// `min(dt_max, c_stab / (2 pi N)^2)`.
pub fn stable_dt(n_modes: usize, dt_max: f64, c_stab: f64) -> f64 {
    let w = TAU * n_modes as f64;
    dt_max.min(c_stab / (w * w))
}

/// Running state of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub u: SpectralField,
    /// `2 int_0^t int u_xx^2 / (1 + u_x^2) dx ds`
    pub cum_diss: f64,
    /// `||u||_V^2` removed by the damping part of the compensator.
    pub cum_trunc: f64,
    pub n_jumps: u64,
}

impl TrajectoryState {
    pub fn new(u: SpectralField) -> Self {
        Self {
            t: 0.0,
            u,
            cum_diss: 0.0,
            cum_trunc: 0.0,
            n_jumps: 0,
        }
    }
}

/// Flow stepper with preallocated stage buffers.
pub struct Stepper {
    evaluator: DriftEvaluator,
    compensator: CompensatorMultiplier,
    drift: bool,
    dt_limit: f64,
    base: Vec<Complex64>,
    stage: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

impl Stepper {
    pub fn new(compensator: CompensatorMultiplier, drift: bool, c_stab: f64) -> Self {
        let n = compensator.n_modes();
        let zeros = vec![Complex64::new(0.0, 0.0); n];
        Self {
            evaluator: DriftEvaluator::new(n),
            dt_limit: stable_dt(n, f64::INFINITY, c_stab),
            compensator,
            drift,
            base: zeros.clone(),
            stage: zeros.clone(),
            rhs: zeros,
        }
    }

    pub fn compensator(&self) -> &CompensatorMultiplier {
        &self.compensator
    }

    fn multiplier_half_step(&mut self, s: &mut TrajectoryState, dt: f64) {
        if self.compensator.is_zero() {
            return;
        }
        if self.compensator.has_damping() {
            let before = s.u.norm_v2();
            apply_multiplier_in_place(&mut s.u, &self.compensator, 0.5 * dt);
            s.cum_trunc += (before - s.u.norm_v2()).max(0.0);
        } else {
            apply_multiplier_in_place(&mut s.u, &self.compensator, 0.5 * dt);
        }
    }

    fn rk3(&mut self, u: &mut [Complex64], dt: f64) {
        self.base.copy_from_slice(u);
        self.evaluator.drift_into(&self.base, &mut self.rhs);
        for ((s, b), f) in self.stage.iter_mut().zip(&self.base).zip(&self.rhs) {
            *s = b + f * dt;
        }
        self.evaluator.drift_into(&self.stage, &mut self.rhs);
        for ((s, b), f) in self.stage.iter_mut().zip(&self.base).zip(&self.rhs) {
            *s = b * 0.75 + (*s + f * dt) * 0.25;
        }
        self.evaluator.drift_into(&self.stage, &mut self.rhs);
        for (((o, s), b), f) in u.iter_mut().zip(&self.stage).zip(&self.base).zip(&self.rhs) {
            *o = b * (1.0 / 3.0) + (s + f * dt) * (2.0 / 3.0);
        }
    }

    /// Advances `s` by `dt` without jumps.
    pub fn step_flow(&mut self, s: &mut TrajectoryState, dt: f64) -> Result<(), IntegratorError> {
        if self.drift && dt > self.dt_limit * (1.0 + 1e-12) {
            return Err(IntegratorError::StepTooLarge {
                dt,
                limit: self.dt_limit,
            });
        }
        self.multiplier_half_step(s, dt);
        if self.drift {
            let d0 = self.evaluator.drift_power(s.u.coeffs());
            self.rk3(s.u.coeffs_mut(), dt);
            let d1 = self.evaluator.drift_power(s.u.coeffs());
            s.cum_diss += dt * (d0 + d1);
        }
        self.multiplier_half_step(s, dt);
        flush_tiny(s.u.coeffs_mut());
        s.t += dt;
        if !s.u.is_finite() || !s.cum_diss.is_finite() {
            return Err(IntegratorError::BlowUp { t: s.t });
        }
        Ok(())
    }
}

fn flush_tiny(coeffs: &mut [Complex64]) {
    for c in coeffs {
        if c.re.abs() < FLUSH_BELOW {
            c.re = 0.0;
        }
        if c.im.abs() < FLUSH_BELOW {
            c.im = 0.0;
        }
    }
}

/// One flow step with the drift enabled.
pub fn step_flow(
    s: &TrajectoryState,
    dt: f64,
    d: &CompensatorMultiplier,
) -> Result<TrajectoryState, IntegratorError> {
    let mut out = s.clone();
    Stepper::new(d.clone(), true, STABILITY_CONSTANT).step_flow(&mut out, dt)?;
    Ok(out)
}

/// Marcus jump action: shift by `eps * z`. Norms and accumulators are kept.
pub fn apply_jump(s: &mut TrajectoryState, e: &JumpEvent, eps: f64) -> Result<(), IntegratorError> {
    if s.t != e.t {
        return Err(IntegratorError::JumpTime {
            state: s.t,
            event: e.t,
        });
    }
    s.u.shift_in_place(eps * e.z);
    s.n_jumps += 1;
    Ok(())
}

/// Everything produced by [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: DiagnosticsSeries,
    pub final_state: TrajectoryState,
    pub jumps: Vec<JumpEvent>,
    pub snapshots: Vec<(f64, SpectralField)>,
    pub small_moments: SmallMoments,
    pub compensator: CompensatorMultiplier,
    pub v0sq: f64,
    pub dt: f64,
    pub steps: u64,
}

fn record(series: &mut DiagnosticsSeries, s: &TrajectoryState, l1: Option<&mut L1Evaluator>) {
    let norms = l1.map(|e| e.norms(&s.u));
    series.push(SeriesRow {
        t: s.t,
        h2: s.u.norm_h2(),
        v2: s.u.norm_v2(),
        cum_diss: s.cum_diss,
        cum_trunc: s.cum_trunc,
        n_jumps: s.n_jumps,
        l1_dx: norms.map(|n| n.0),
        l1_dxx: norms.map(|n| n.1),
    });
}

/// Simulates one trajectory on `[0, horizon]`.
pub fn run(config: &SimConfig) -> Result<RunOutput, IntegratorError> {
    config.validate()?;
    let u0 = config.init.build(config.n_modes);
    let jumps = config
        .measure
        .sample_jumps(config.delta, config.horizon, config.seed)?;
    let comp = compensator(
        &config.measure,
        config.epsilon,
        config.delta,
        config.n_modes,
    )?;
    let small_moments = config.measure.small_moments(config.delta)?;
    run_with_jumps(config, u0, jumps, comp, small_moments)
}

/// Like [`run`] but with a prescribed initial field and jump list.
pub fn run_with_jumps(
    config: &SimConfig,
    u0: SpectralField,
    jumps: Vec<JumpEvent>,
    comp: CompensatorMultiplier,
    small_moments: SmallMoments,
) -> Result<RunOutput, IntegratorError> {
    let dt = config.step_size();
    let mut stepper = Stepper::new(comp.clone(), config.drift, config.c_stab);
    let mut state = TrajectoryState::new(u0);
    let v0sq = state.u.norm_v2();
    let mut series = DiagnosticsSeries::new();
    let mut l1 = config.record_l1.then(|| L1Evaluator::new(config.n_modes));
    let mut snapshots = Vec::new();
    record(&mut series, &state, l1.as_mut());
    if config.snapshot_every > 0 {
        snapshots.push((0.0, state.u.clone()));
    }

    let mut steps: u64 = 0;
    let targets = jumps.iter().map(Some).chain(std::iter::once(None));
    for event in targets {
        let target = event.map_or(config.horizon, |e| e.t);
        while state.t < target {
            let remaining = target - state.t;
            let last = remaining <= dt * (1.0 + 1e-9);
            let h = if last { remaining } else { dt };
            stepper.step_flow(&mut state, h)?;
            if last {
                state.t = target;
            }
            steps += 1;
            if steps.is_multiple_of(config.record_every as u64) {
                record(&mut series, &state, l1.as_mut());
            }
            if config.snapshot_every > 0 && steps.is_multiple_of(config.snapshot_every as u64) {
                snapshots.push((state.t, state.u.clone()));
            }
        }
        if let Some(e) = event {
            apply_jump(&mut state, e, config.epsilon)?;
            record(&mut series, &state, l1.as_mut());
        }
    }
    record(&mut series, &state, l1.as_mut());
    if config.snapshot_every > 0 && snapshots.last().map(|s| s.0) != Some(state.t) {
        snapshots.push((state.t, state.u.clone()));
    }

    Ok(RunOutput {
        series,
        final_state: state,
        jumps,
        snapshots,
        small_moments,
        compensator: comp,
        v0sq,
        dt,
        steps,
    })
}
