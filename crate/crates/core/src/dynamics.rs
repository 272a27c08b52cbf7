//! Right-hand side of the simulated equation.
//!
//! The curve-shortening drift `A u = d/dx arctan(u_x) = u_xx / (1 + u_x^2)` is
//! evaluated pseudo-spectrally on a `4N` grid. Jumps below the simulation
//! threshold are replaced by their mean effect, which for transport noise is a
//! diagonal Fourier multiplier
//!
//! ```text
//! D_k = -2 pi i k eps b(delta) + int_{|z|<=delta} (e^{2 pi i k eps z} - 1 - 2 pi i k eps z) nu(dz)
//! ```
//!
//! with `b(delta) = int_{delta<|z|<=1} z nu(dz)`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use thiserror::Error;

use crate::levy::{LevyError, LevyMeasureSpec, PowerLawDensity};
use crate::spectral::{default_grid_size, Grid, SpectralField};

/// Absolute tolerance for the density part of the compensator.
pub const COMPENSATOR_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite value in the drift evaluation")]
    BlowUp,
    #[error("compensator quadrature did not converge at mode {k} (error estimate {estimate:e})")]
    Quadrature { k: usize, estimate: f64 },
    #[error("invalid measure: {0}")]
    Measure(#[from] LevyError),
    #[error("noise intensity must be nonnegative and finite, got {0}")]
    Epsilon(f64),
}

/// Scratch buffers for repeated nonlinear evaluations at a fixed mode count.
pub struct DriftEvaluator {
    n_modes: usize,
    grid: Grid,
    ux: Vec<f64>,
    uxx: Vec<f64>,
    dx: Vec<Complex64>,
    dxx: Vec<Complex64>,
    wavenumbers: Vec<f64>,
}

impl DriftEvaluator {
    pub fn new(n_modes: usize) -> Self {
        let m = default_grid_size(n_modes);
        let grid = Grid::new(m, n_modes).expect("default grid resolves its mode count");
        Self {
            n_modes,
            grid,
            ux: vec![0.0; m],
            uxx: vec![0.0; m],
            dx: vec![Complex64::new(0.0, 0.0); n_modes],
            dxx: vec![Complex64::new(0.0, 0.0); n_modes],
            wavenumbers: (1..=n_modes).map(|k| TAU * k as f64).collect(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid_size(&self) -> usize {
        self.grid.size()
    }

    fn load_dx(&mut self, u: &[Complex64]) {
        for ((d, c), w) in self.dx.iter_mut().zip(u).zip(&self.wavenumbers) {
            *d = c * Complex64::new(0.0, *w);
        }
    }

    fn load_dx_dxx(&mut self, u: &[Complex64]) {
        for (((d1, d2), c), w) in self
            .dx
            .iter_mut()
            .zip(self.dxx.iter_mut())
            .zip(u)
            .zip(&self.wavenumbers)
        {
            *d1 = c * Complex64::new(0.0, *w);
            *d2 = -c * (w * w);
        }
        self.grid
            .synthesize_pair(&self.dx, &self.dxx, &mut self.ux, &mut self.uxx);
    }

    /// `out = P_N d/dx arctan(u_x)`.
    pub fn drift_into(&mut self, u: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(u.len(), self.n_modes);
        self.load_dx(u);
        self.grid.synthesize(&self.dx, &mut self.ux);
        for v in &mut self.ux {
            *v = v.atan();
        }
        self.grid.analyze(&self.ux, out);
        for (c, w) in out.iter_mut().zip(&self.wavenumbers) {
            *c *= Complex64::new(0.0, *w);
        }
    }

    /// `int u_xx^2 / (1 + u_x^2) dx`.
    pub fn dissipation(&mut self, u: &[Complex64]) -> f64 {
        self.load_dx_dxx(u);
        let m = self.ux.len() as f64;
        self.ux
            .iter()
            .zip(&self.uxx)
            .map(|(a, b)| b * b / (1.0 + a * a))
            .sum::<f64>()
            / m
    }

    /// `-<P_N A u, u>_V`: the dissipation seen by the truncated drift. Agrees with
    /// [`Self::dissipation`] up to aliasing.
    pub fn drift_power(&mut self, u: &[Complex64]) -> f64 {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_modes];
        self.drift_into(u, &mut out);
        -2.0 * out
            .iter()
            .zip(u)
            .zip(&self.wavenumbers)
            .map(|((a, b), w)| w * w * (a * b.conj()).re)
            .sum::<f64>()
    }

    /// `int arctan(u_x) u_x dx`, the rate at which `||u||_H^2` decreases (halved).
    pub fn arctan_work(&mut self, u: &[Complex64]) -> f64 {
        self.load_dx(u);
        self.grid.synthesize(&self.dx, &mut self.ux);
        let m = self.ux.len() as f64;
        self.ux.iter().map(|a| a.atan() * a).sum::<f64>() / m
    }
}

/// Curve-shortening drift of `f`, truncated to `f`'s modes.
pub fn csf_drift(f: &SpectralField) -> Result<SpectralField, DynamicsError> {
    if !f.is_finite() {
        return Err(DynamicsError::BlowUp);
    }
    let mut ev = DriftEvaluator::new(f.n_modes());
    let mut out = vec![Complex64::new(0.0, 0.0); f.n_modes()];
    ev.drift_into(f.coeffs(), &mut out);
    SpectralField::from_coeffs(out).map_err(|_| DynamicsError::BlowUp)
}

/// `int_T u_xx^2 / (1 + u_x^2) dx`; always nonnegative.
pub fn dissipation(f: &SpectralField) -> f64 {
    DriftEvaluator::new(f.n_modes()).dissipation(f.coeffs())
}

/// `int_T arctan(u_x) u_x dx`.
pub fn arctan_work(f: &SpectralField) -> f64 {
    DriftEvaluator::new(f.n_modes()).arctan_work(f.coeffs())
}

/// `e^{i theta} - 1 - i theta`, accurate for small `theta`.
pub fn transport_correction(theta: f64) -> Complex64 {
    if theta.abs() < 0.1 {
        let t2 = theta * theta;
        let re = -t2 / 2.0 * (1.0 - t2 / 12.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0)));
        let im = -t2 * theta / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)));
        Complex64::new(re, im)
    } else {
        let s = (0.5 * theta).sin();
        Complex64::new(-2.0 * s * s, theta.sin() - theta)
    }
}

/// Per-mode linear drift generated by the unsimulated small jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorMultiplier {
    d: Vec<Complex64>,
}

impl CompensatorMultiplier {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            d: vec![Complex64::new(0.0, 0.0); n_modes],
        }
    }

    pub fn from_values(d: Vec<Complex64>) -> Self {
        Self { d }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.d
    }

    pub fn n_modes(&self) -> usize {
        self.d.len()
    }

    /// `D_k` for `k >= 1`.
    pub fn get(&self, k: usize) -> Complex64 {
        self.d[k - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.d.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// True when some mode is damped, i.e. the multiplier changes norms.
    pub fn has_damping(&self) -> bool {
        self.d.iter().any(|c| c.re != 0.0)
    }
}

/// Builds `D_1..D_N` for measure `m`, intensity `eps` and threshold `delta`.
pub fn compensator(
    m: &LevyMeasureSpec,
    eps: f64,
    delta: f64,
    n_modes: usize,
) -> Result<CompensatorMultiplier, DynamicsError> {
    m.validate()?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(DynamicsError::Epsilon(eps));
    }
    let b = m.small_moments(delta)?.b;
    let mut d = Vec::with_capacity(n_modes);
    for k in 1..=n_modes {
        let kappa = TAU * k as f64 * eps;
        let mut dk = Complex64::new(0.0, -kappa * b);
        for a in m.atoms.iter().filter(|a| a.z.abs() <= delta) {
            dk += transport_correction(kappa * a.z) * a.rate;
        }
        if let Some(dens) = &m.density {
            dk += density_correction(dens, kappa, delta)
                .map_err(|estimate| DynamicsError::Quadrature { k, estimate })?;
        }
        d.push(dk);
    }
    Ok(CompensatorMultiplier { d })
}

/// `int_{|z|<=delta} (e^{i kappa z} - 1 - i kappa z) nu(dz)` for the density.
///
/// With `z = top * w^{1/(2-alpha)}` the weight `z^{1-alpha} dz` becomes a
/// constant times `dw`, which removes the endpoint singularity.
fn density_correction(d: &PowerLawDensity, kappa: f64, delta: f64) -> Result<Complex64, f64> {
    let top = delta.min(d.z_max);
    if top <= 0.0 || kappa == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let q = 1.0 / (2.0 - d.alpha);
    let prefactor = d.c * top.powf(2.0 - d.alpha) * q * kappa * kappa;
    let mut total = Complex64::new(0.0, 0.0);
    for &sign in d.side.signs() {
        let integrand = |w: f64| {
            let theta = sign * kappa * top * w.powf(q);
            if theta == 0.0 {
                Complex64::new(-0.5, 0.0)
            } else {
                transport_correction(theta) / (theta * theta)
            }
        };
        total += quadrature::adaptive_gk15(integrand, 0.0, 1.0, COMPENSATOR_QUAD_TOL / prefactor)?;
    }
    Ok(total * prefactor)
}

/// `c_k <- e^{D_k dt} c_k`.
pub fn apply_multiplier_exact(
    f: &SpectralField,
    d: &CompensatorMultiplier,
    dt: f64,
) -> SpectralField {
    let mut out = f.clone();
    apply_multiplier_in_place(&mut out, d, dt);
    out
}

pub fn apply_multiplier_in_place(f: &mut SpectralField, d: &CompensatorMultiplier, dt: f64) {
    assert_eq!(f.n_modes(), d.n_modes(), "multiplier mode count mismatch");
    for (c, dk) in f.coeffs_mut().iter_mut().zip(&d.d) {
        if dk.re != 0.0 || dk.im != 0.0 {
            *c *= (dk * dt).exp();
        }
    }
}

mod quadrature {
    use num_complex::Complex64;

    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    // Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    const MAX_INTERVALS: usize = 20_000;

    struct Interval {
        a: f64,
        b: f64,
        value: Complex64,
        error: f64,
    }

    fn gk15(f: &impl Fn(f64) -> Complex64, a: f64, b: f64) -> Interval {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut kronrod = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for i in 0..7 {
            let dx = h * XGK[i];
            let s = f(c - dx) + f(c + dx);
            kronrod += s * WGK[i];
            if i % 2 == 1 {
                gauss += s * WG[i / 2];
            }
        }
        Interval {
            a,
            b,
            value: kronrod * h,
            error: ((kronrod - gauss) * h).norm(),
        }
    }

    /// Globally adaptive Gauss-Kronrod (7/15). Returns the error estimate on
    /// failure.
    pub fn adaptive_gk15(
        f: impl Fn(f64) -> Complex64,
        a: f64,
        b: f64,
        tol: f64,
    ) -> Result<Complex64, f64> {
        let mut intervals = vec![gk15(&f, a, b)];
        loop {
            let error: f64 = intervals.iter().map(|i| i.error).sum();
            if error <= tol {
                return Ok(intervals.iter().map(|i| i.value).sum());
            }
            if intervals.len() >= MAX_INTERVALS {
                return Err(error);
            }
            let worst = intervals
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
                .map(|(i, _)| i)
                .expect("nonempty");
            let iv = intervals.swap_remove(worst);
            let mid = 0.5 * (iv.a + iv.b);
            intervals.push(gk15(&f, iv.a, mid));
            intervals.push(gk15(&f, mid, iv.b));
        }
    }

}
