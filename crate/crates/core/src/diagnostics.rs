//! Post-processing of recorded trajectories: energy residuals, the explicit
//! H-norm decay bound, the W^{2,1} budget and decay-rate fits.
//!
//! The H-norm bound uses `k1 = 1 / (C1^2 (1 + ||u0||_V^2))`. With `C1 = 1/2`:
//! a mean-free periodic `v` vanishes somewhere, and integrating `v'` along the
//! shorter arc from that zero gives `|v(x)| <= ||v'||_{L^1} / 2`, hence
//! `||v||_{L^2} <= ||v||_{L^inf} <= ||v'||_{L^1} / 2`.

use thiserror::Error;

/// Embedding constant in `||v||_H <= C1 ||v_x||_{L^1}`.
pub const DEFAULT_C1: f64 = 0.5;
/// Relative slack applied to the decay bound.
pub const H_BOUND_SLACK: f64 = 1e-6;
/// Relative slack applied to the W^{2,1} budget.
pub const W21_SLACK: f64 = 1e-3;
/// Share of the horizon used for rate fitting.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
/// Minimum rows required in the fitting window.
pub const MIN_FIT_ROWS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("series is empty")]
    Empty,
    #[error("fit not possible: {0}")]
    Fit(String),
    #[error("rows lack L1 norms; enable L1 recording")]
    MissingL1,
}

/// One recorded time of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub h2: f64,
    pub v2: f64,
    pub cum_diss: f64,
    pub cum_trunc: f64,
    pub n_jumps: u64,
    pub l1_dx: Option<f64>,
    pub l1_dxx: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub rows: Vec<SeriesRow>,
}

impl DiagnosticsSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; a row at the same time as the last one replaces it.
    pub fn push(&mut self, row: SeriesRow) {
        match self.rows.last_mut() {
            Some(last) if last.t == row.t => *last = row,
            _ => self.rows.push(row),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first(&self) -> Option<&SeriesRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&SeriesRow> {
        self.rows.last()
    }

    /// Keeps every `stride`-th row (plus the last one).
    pub fn decimate(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut rows: Vec<_> = self.rows.iter().step_by(stride).copied().collect();
        if let Some(last) = self.rows.last() {
            if rows.last().map(|r| r.t) != Some(last.t) {
                rows.push(*last);
            }
        }
        Self { rows }
    }

    /// Largest increase of `V^2` between consecutive rows.
    pub fn max_v2_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].v2 - w[0].v2)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `k1 = (C1^2 (1 + V0^2))^{-1}`.
pub fn k1_rate(v0sq: f64, c1: f64) -> f64 {
    1.0 / (c1 * c1 * (1.0 + v0sq))
}

/// Sufficient V-norm rate `k0 = k1 / 4`.
pub fn k0_rate(v0sq: f64, c1: f64) -> f64 {
    k1_rate(v0sq, c1) / 4.0
}

/// `max_t |V^2(t) + cum_diss(t) + cum_trunc(t) - V^2(0)|`.
pub fn energy_residual(s: &DiagnosticsSeries) -> Result<f64, DiagnosticsError> {
    let v0 = s.first().ok_or(DiagnosticsError::Empty)?.v2;
    Ok(s.rows
        .iter()
        .map(|r| (r.v2 + r.cum_diss + r.cum_trunc - v0).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundVerdict {
    Pass,
    /// First row time at which the bound is violated.
    Fail {
        t: f64,
    },
}

impl BoundVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, BoundVerdict::Pass)
    }
}

/// Checks `H^2(t) <= H^2(0) e^{-k1 t} (1 + slack)` on every row.
pub fn h_decay_bound(s: &DiagnosticsSeries, v0sq: f64, c1: f64) -> BoundVerdict {
    let Some(first) = s.first() else {
        return BoundVerdict::Pass;
    };
    let k1 = k1_rate(v0sq, c1);
    for r in &s.rows {
        let bound = first.h2 * (-k1 * (r.t - first.t)).exp() * (1.0 + H_BOUND_SLACK);
        if r.h2 > bound {
            return BoundVerdict::Fail { t: r.t };
        }
    }
    BoundVerdict::Pass
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub k0_hat: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub k1_bound: f64,
}

impl DecayFit {
    pub fn k0_bound(&self) -> f64 {
        self.k1_bound / 4.0
    }
}

/// Least-squares slope of `ln V^2` against `t` over the last `fraction` of
/// the horizon.
pub fn fit_decay(
    s: &DiagnosticsSeries,
    fraction: f64,
    c1: f64,
) -> Result<DecayFit, DiagnosticsError> {
    let first = s.first().ok_or(DiagnosticsError::Empty)?;
    let last = s.last().expect("nonempty");
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DiagnosticsError::Fit(format!(
            "tail fraction {fraction} outside (0, 1]"
        )));
    }
    let t_lo = last.t - fraction * (last.t - first.t);
    let window: Vec<_> = s.rows.iter().filter(|r| r.t >= t_lo).collect();
    if window.len() < MIN_FIT_ROWS {
        return Err(DiagnosticsError::Fit(format!(
            "{} rows in the window, need {MIN_FIT_ROWS}",
            window.len()
        )));
    }
    if window.iter().any(|r| !(r.v2 > 0.0 && r.v2.is_finite())) {
        return Err(DiagnosticsError::Fit(
            "V^2 vanishes or underflows in the window".into(),
        ));
    }
    let n = window.len() as f64;
    let mean_t = window.iter().map(|r| r.t).sum::<f64>() / n;
    let mean_y = window.iter().map(|r| r.v2.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for r in &window {
        let dx = r.t - mean_t;
        let dy = r.v2.ln() - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(DiagnosticsError::Fit("window has zero time extent".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(DecayFit {
        k0_hat: -slope,
        window: (window[0].t, last.t),
        r2,
        k1_bound: k1_rate(first.v2, c1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetVerdict {
    /// Trapezoid of `||u_xx||_{L^1}^2` over the recorded rows.
    pub integral: f64,
    /// `(1 + V0^2) V0^2`.
    pub bound: f64,
    pub passed: bool,
}

/// `int_0^T ||u_xx||_{L^1}^2 dt <= (1 + V0^2) V0^2 (1 + slack)`.
pub fn w21_budget(s: &DiagnosticsSeries, v0sq: f64) -> Result<BudgetVerdict, DiagnosticsError> {
    let mut integral = 0.0;
    for w in s.rows.windows(2) {
        let a = w[0].l1_dxx.ok_or(DiagnosticsError::MissingL1)?;
        let b = w[1].l1_dxx.ok_or(DiagnosticsError::MissingL1)?;
        integral += 0.5 * (w[1].t - w[0].t) * (a * a + b * b);
    }
    if let Some(r) = s.first() {
        r.l1_dxx.ok_or(DiagnosticsError::MissingL1)?;
    }
    let bound = (1.0 + v0sq) * v0sq;
    Ok(BudgetVerdict {
        integral,
        bound,
        passed: integral <= bound * (1.0 + W21_SLACK),
    })
}
