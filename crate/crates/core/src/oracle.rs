//! Slow reference implementations for cross-checking the spectral solver.
//!
//! Nothing here touches the FFT path: the flow is integrated with explicit
//! finite differences, the shift with an upwind scheme, and the compensator
//! with nested Gauss-Legendre quadrature in the transport parameter.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use thiserror::Error;

use crate::levy::{LevyMeasureSpec, PowerLawDensity};

const CFL_DIFFUSION: f64 = 0.4;
const GL_ORDER: usize = 20;
// geometric panels (ratio 1/2) before the series tail takes over
const GEOMETRIC_PANELS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("time step {dt} exceeds the explicit limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("grid needs at least 3 points, got {0}")]
    Grid(usize),
    #[error("quadrature did not converge")]
    Quadrature,
}

/// Uniform samples `u(j / M)`, kept at mean zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    samples: Vec<f64>,
}

impl GridField {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, OracleError> {
        if samples.len() < 3 {
            return Err(OracleError::Grid(samples.len()));
        }
        remove_mean(&mut samples);
        Ok(Self { samples })
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self, OracleError> {
        Self::new((0..m).map(|j| f(j as f64 / m as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.samples
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rectangle-rule `L^2` distance to `other`.
    pub fn l2_diff(&self, other: &[f64]) -> f64 {
        let s: f64 = self
            .samples
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s / self.samples.len() as f64).sqrt()
    }

    /// Amplitude of `sin 2 pi k x` by direct summation.
    pub fn sine_amplitude(&self, k: usize) -> f64 {
        let m = self.samples.len() as f64;
        2.0 / m
            * self
                .samples
                .iter()
                .enumerate()
                .map(|(j, u)| u * (TAU * k as f64 * j as f64 / m).sin())
                .sum::<f64>()
    }
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Largest step accepted by [`fd_csf_step`] on `g`.
pub fn fd_dt_limit(g: &GridField) -> f64 {
    let h = g.spacing();
    CFL_DIFFUSION * h * h
}

/// One explicit Euler step of `u_t = u_xx / (1 + u_x^2)` with central differences.
pub fn fd_csf_step(g: &GridField, dt: f64) -> Result<GridField, OracleError> {
    let limit = fd_dt_limit(g);
    if dt > limit * (1.0 + 1e-12) {
        return Err(OracleError::Cfl { dt, limit });
    }
    let u = &g.samples;
    let m = u.len();
    let h = g.spacing();
    let mut next = Vec::with_capacity(m);
    for j in 0..m {
        let l = u[(j + m - 1) % m];
        let r = u[(j + 1) % m];
        let uxx = (r - 2.0 * u[j] + l) / (h * h);
        let ux = (r - l) / (2.0 * h);
        next.push(u[j] + dt * uxx / (1.0 + ux * ux));
    }
    remove_mean(&mut next);
    Ok(GridField { samples: next })
}

/// Integrates to `horizon` with the largest admissible uniform step.
pub fn fd_csf_evolve(g: &GridField, horizon: f64) -> Result<GridField, OracleError> {
    let n_steps = (horizon / fd_dt_limit(g)).ceil().max(1.0) as usize;
    let dt = horizon / n_steps as f64;
    let mut cur = g.clone();
    for _ in 0..n_steps {
        cur = fd_csf_step(&cur, dt)?;
    }
    Ok(cur)
}

/// First-order upwind solve of `d_theta phi = a d_x phi` on `theta in [0, 1]`.
///
/// The exact answer is `u(x + a)`.
pub fn transport_upwind(g: &GridField, a: f64, n_steps: usize) -> Result<GridField, OracleError> {
    let h = g.spacing();
    let dtheta = 1.0 / n_steps.max(1) as f64;
    if a.abs() * dtheta > h * (1.0 + 1e-12) {
        return Err(OracleError::Cfl {
            dt: dtheta,
            limit: h / a.abs(),
        });
    }
    let m = g.len();
    let nu = a * dtheta / h;
    let mut cur = g.samples.clone();
    let mut next = vec![0.0; m];
    for _ in 0..n_steps.max(1) {
        for j in 0..m {
            next[j] = if a >= 0.0 {
                cur[j] + nu * (cur[(j + 1) % m] - cur[j])
            } else {
                cur[j] + nu * (cur[j] - cur[(j + m - 1) % m])
            };
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(GridField { samples: cur })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

struct Rule {
    nodes: Vec<(f64, f64)>,
}

impl Rule {
    fn new() -> Self {
        Self {
            nodes: gauss_legendre(GL_ORDER),
        }
    }

    /// Composite rule with `panels` equal pieces of `[lo, hi]`.
    fn integrate(
        &self,
        lo: f64,
        hi: f64,
        panels: usize,
        f: impl Fn(f64) -> Complex64,
    ) -> Complex64 {
        let w = (hi - lo) / panels as f64;
        let mut total = Complex64::new(0.0, 0.0);
        for p in 0..panels {
            let a = lo + p as f64 * w;
            let mut s = Complex64::new(0.0, 0.0);
            for &(x, wt) in &self.nodes {
                s += f(a + 0.5 * w * (x + 1.0)) * wt;
            }
            total += s * (0.5 * w);
        }
        total
    }

    /// `G(z)` for mode `k`: `eps^2 z^2 (2 pi i k)^2 int_0^1 (1 - eta) e^{i theta eta} d eta`.
    fn correction(&self, kappa: f64, z: f64) -> Complex64 {
        let theta = kappa * z;
        let panels = (theta.abs() / 2.0).ceil().max(1.0) as usize;
        let inner = self.integrate(0.0, 1.0, panels, |eta| {
            Complex64::cis(theta * eta) * (1.0 - eta)
        });
        inner * (-theta * theta)
    }
}

fn oscillation_panels(kappa: f64, lo: f64, hi: f64) -> usize {
    ((kappa * (hi - lo)).abs() / 2.0).ceil().max(1.0) as usize
}

/// One side of the density: small jumps through `G`, the rest of `|z| <= 1` through `-i kappa z`.
fn density_side(rule: &Rule, d: &PowerLawDensity, kappa: f64, delta: f64) -> Complex64 {
    let weight = |z: f64| d.c * z.powf(-1.0 - d.alpha);
    let mut total = Complex64::new(0.0, 0.0);
    let top = delta.min(d.z_max);
    if top > 0.0 {
        let mut hi = top;
        for _ in 0..GEOMETRIC_PANELS {
            let lo = 0.5 * hi;
            let panels = oscillation_panels(kappa, lo, hi);
            total += rule.integrate(lo, hi, panels, |z| rule.correction(kappa, z) * weight(z));
            hi = lo;
        }
        // series of G below the last panel
        let s = |p: f64| d.c * hi.powf(p - d.alpha) / (p - d.alpha);
        total += Complex64::new(
            -kappa.powi(2) / 2.0 * s(2.0) + kappa.powi(4) / 24.0 * s(4.0),
            -kappa.powi(3) / 6.0 * s(3.0),
        );
    }
    let (lo, hi) = (delta, d.z_max.min(1.0));
    if hi > lo {
        let mut b = 0.0;
        let mut a = lo;
        // geometric split keeps the z^{-alpha} weight smooth per panel
        while a < hi {
            let e = (2.0 * a).min(hi);
            b += rule
                .integrate(a, e, 1, |z| Complex64::new(z * weight(z), 0.0))
                .re;
            a = e;
        }
        total += Complex64::new(0.0, -kappa * b);
    }
    total
}

/// Mode-`k` compensator of `m` from the transport-parameter integral form.
///
/// Jumps with `|z| <= delta` contribute `G(z)`, those with `delta < |z| <= 1`
/// their uncompensated first-order part `-2 pi i k eps z`, larger ones nothing.
pub fn compensator_quadrature_check(
    m: &LevyMeasureSpec,
    eps: f64,
    delta: f64,
    k: usize,
) -> Result<Complex64, OracleError> {
    if k == 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let kappa = TAU * k as f64 * eps;
    let rule = Rule::new();
    let mut total = Complex64::new(0.0, 0.0);
    for a in &m.atoms {
        let z = a.z;
        if z.abs() <= delta {
            total += rule.correction(kappa, z) * a.rate;
        } else if z.abs() <= 1.0 {
            total += Complex64::new(0.0, -kappa * z * a.rate);
        }
    }
    if let Some(d) = &m.density {
        for &sign in d.side.signs() {
            total += density_side(&rule, d, sign * kappa, delta);
        }
    }
    if !(total.re.is_finite() && total.im.is_finite()) {
        return Err(OracleError::Quadrature);
    }
    Ok(total)
}
