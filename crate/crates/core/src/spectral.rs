//! Zero-mean periodic fields on the unit torus.
//!
//! A [`SpectralField`] stores the Fourier amplitudes `c_k` for `k = 1..=N` of
//! a real function `u(x) = sum_{0<|k|<=N} c_k e^{2 pi i k x}`. Negative
//! wavenumbers are implied by `c_{-k} = conj(c_k)` and the zero mode is never
//! stored, so every field is real and mean-free by construction.
//!
//! Physical samples live on the uniform grid `x_j = j / M`. Grids are powers
//! of two and must resolve the retained modes (`M >= 2N + 1`).

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Minimum number of grid points used for the L1 quadratures. The integrands
/// `|u_x|` and `|u_xx|` have kinks, so the trapezoid rule is only second order
/// there and a fine grid is needed regardless of `N`.
pub const L1_QUADRATURE_MIN_POINTS: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid of {m} points cannot resolve {n_modes} modes (need a power of two >= {})", 2 * n_modes + 1)]
    Resolution { m: usize, n_modes: usize },
    #[error("field has no modes")]
    Empty,
    #[error("non-finite amplitude at mode {k}")]
    NonFinite { k: usize },
    #[error("projection level {n} outside 1..={n_modes}")]
    Projection { n: usize, n_modes: usize },
}

/// Real, mean-free trigonometric polynomial of degree `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); n_modes],
        }
    }

    /// Builds a field from `c_1..c_N`.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self, SpectralError> {
        if coeffs.is_empty() {
            return Err(SpectralError::Empty);
        }
        if let Some(i) = coeffs
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(SpectralError::NonFinite { k: i + 1 });
        }
        Ok(Self { coeffs })
    }

    /// `amplitude * sin(2 pi k x)`, i.e. `c_k = -i amplitude / 2`.
    pub fn sine_mode(n_modes: usize, k: usize, amplitude: f64) -> Self {
        let mut f = Self::zeros(n_modes);
        if (1..=n_modes).contains(&k) {
            f.coeffs[k - 1] = Complex64::new(0.0, -0.5 * amplitude);
        }
        f
    }

    /// `amplitude * cos(2 pi k x)`, i.e. `c_k = amplitude / 2`.
    pub fn cosine_mode(n_modes: usize, k: usize, amplitude: f64) -> Self {
        let mut f = Self::zeros(n_modes);
        if (1..=n_modes).contains(&k) {
            f.coeffs[k - 1] = Complex64::new(0.5 * amplitude, 0.0);
        }
        f
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Amplitude of wavenumber `k`; zero for `k = 0` and for `k > N`.
    pub fn coeff(&self, k: usize) -> Complex64 {
        if k == 0 || k > self.coeffs.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[k - 1]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// `c_k <- 2 pi i k c_k`.
    pub fn derivative(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * Complex64::new(0.0, TAU * (i + 1) as f64))
            .collect();
        Self { coeffs }
    }

    /// Translation `u(x) -> u(x + a)`, exact in the Fourier basis.
    pub fn shift(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.shift_in_place(a);
        out
    }

    pub fn shift_in_place(&mut self, a: f64) {
        let a = a.rem_euclid(1.0);
        if a == 0.0 {
            return;
        }
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            let phase = ((i + 1) as f64 * a).rem_euclid(1.0);
            *c *= Complex64::cis(TAU * phase);
        }
    }

    /// Orthogonal projection onto modes `1..=n`; the mode count is kept.
    pub fn project(&self, n: usize) -> Result<Self, SpectralError> {
        if n == 0 || n > self.n_modes() {
            return Err(SpectralError::Projection {
                n,
                n_modes: self.n_modes(),
            });
        }
        let mut out = self.clone();
        for c in &mut out.coeffs[n..] {
            *c = Complex64::new(0.0, 0.0);
        }
        Ok(out)
    }

    /// Same function represented with a different mode cap. Growing pads with
    /// zeros; shrinking is the Galerkin projection.
    pub fn with_modes(&self, n_modes: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n_modes, Complex64::new(0.0, 0.0));
        Self { coeffs }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n_modes(), other.n_modes(), "mode count mismatch");
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n_modes(), other.n_modes(), "mode count mismatch");
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// `<u, v>_H = int u v dx`.
    pub fn inner_h(&self, other: &Self) -> f64 {
        2.0 * self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum::<f64>()
    }

    /// `<u, v>_V = int u_x v_x dx`.
    pub fn inner_v(&self, other: &Self) -> f64 {
        2.0 * self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| {
                let w = TAU * (i + 1) as f64;
                w * w * (a * b.conj()).re
            })
            .sum::<f64>()
    }

    /// `||u||_H^2 = 2 sum |c_k|^2`.
    pub fn norm_h2(&self) -> f64 {
        2.0 * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `||u||_V^2 = 2 sum (2 pi k)^2 |c_k|^2`.
    pub fn norm_v2(&self) -> f64 {
        2.0 * self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = TAU * (i + 1) as f64;
                w * w * c.norm_sqr()
            })
            .sum::<f64>()
    }

    /// `||u_x||_{L^1}` by the trapezoid rule on a fine grid.
    pub fn norm_l1_dx(&self) -> f64 {
        l1_norm(&self.derivative())
    }

    /// `||u_xx||_{L^1}` by the trapezoid rule on a fine grid.
    pub fn norm_l1_dxx(&self) -> f64 {
        l1_norm(&self.derivative().derivative())
    }

    /// Samples `u(j / m)` for `j = 0..m`.
    pub fn to_physical(&self, m: usize) -> Result<PhysicalField, SpectralError> {
        let mut grid = Grid::new(m, self.n_modes())?;
        let mut samples = vec![0.0; m];
        grid.synthesize(&self.coeffs, &mut samples);
        Ok(PhysicalField { samples })
    }
}

fn l1_norm(f: &SpectralField) -> f64 {
    let m = default_grid_size(f.n_modes()).max(L1_QUADRATURE_MIN_POINTS);
    let p = f
        .to_physical(m)
        .expect("quadrature grid resolves the field");
    p.samples.iter().map(|v| v.abs()).sum::<f64>() / m as f64
}

/// Reusable evaluator of `(||u_x||_{L^1}, ||u_xx||_{L^1})` for a fixed mode count.
pub struct L1Evaluator {
    grid: Grid,
    dx: Vec<Complex64>,
    dxx: Vec<Complex64>,
    ux: Vec<f64>,
    uxx: Vec<f64>,
}

impl L1Evaluator {
    pub fn new(n_modes: usize) -> Self {
        let m = default_grid_size(n_modes).max(L1_QUADRATURE_MIN_POINTS);
        Self {
            grid: Grid::new(m, n_modes).expect("quadrature grid resolves the field"),
            dx: vec![Complex64::new(0.0, 0.0); n_modes],
            dxx: vec![Complex64::new(0.0, 0.0); n_modes],
            ux: vec![0.0; m],
            uxx: vec![0.0; m],
        }
    }

    pub fn norms(&mut self, f: &SpectralField) -> (f64, f64) {
        debug_assert_eq!(f.n_modes(), self.dx.len());
        for (i, ((d1, d2), c)) in self
            .dx
            .iter_mut()
            .zip(self.dxx.iter_mut())
            .zip(&f.coeffs)
            .enumerate()
        {
            let w = TAU * (i + 1) as f64;
            *d1 = c * Complex64::new(0.0, w);
            *d2 = -c * (w * w);
        }
        self.grid
            .synthesize_pair(&self.dx, &self.dxx, &mut self.ux, &mut self.uxx);
        let m = self.ux.len() as f64;
        let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / m;
        (l1(&self.ux), l1(&self.uxx))
    }
}

/// Smallest grid used for nonlinear evaluations.
pub const MIN_GRID_POINTS: usize = 64;

/// Grid used for nonlinear evaluations: `4N` rounded up to a power of two,
/// and at least [`MIN_GRID_POINTS`].
pub fn default_grid_size(n_modes: usize) -> usize {
    (4 * n_modes).max(MIN_GRID_POINTS).next_power_of_two()
}

/// Real samples of a periodic function on `x_j = j / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    samples: Vec<f64>,
}

impl PhysicalField {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: (0..m).map(|j| f(j as f64 / m as f64)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Discrete Fourier analysis keeping modes `1..=n_modes`. The mean and
    /// everything above the cap are discarded.
    pub fn to_spectral(&self, n_modes: usize) -> Result<SpectralField, SpectralError> {
        let mut grid = Grid::new(self.samples.len(), n_modes)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_modes];
        grid.analyze(&self.samples, &mut coeffs);
        SpectralField::from_coeffs(coeffs)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Transform pair and scratch space for one grid size.
pub struct Grid {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Grid {
    pub fn new(m: usize, n_modes: usize) -> Result<Self, SpectralError> {
        if !m.is_power_of_two() || m < 2 * n_modes + 1 {
            return Err(SpectralError::Resolution { m, n_modes });
        }
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(m), p.plan_fft_inverse(m))
        });
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            m,
            forward,
            inverse,
            buf: vec![Complex64::new(0.0, 0.0); m],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// Largest mode count this grid resolves.
    pub fn max_modes(&self) -> usize {
        (self.m - 1) / 2
    }

    /// `out_j = sum_{0<|k|<=N} c_k e^{2 pi i k j / M}`.
    pub fn synthesize(&mut self, coeffs: &[Complex64], out: &mut [f64]) {
        debug_assert!(coeffs.len() <= self.max_modes() && out.len() == self.m);
        self.buf.fill(Complex64::new(0.0, 0.0));
        for (i, &c) in coeffs.iter().enumerate() {
            self.buf[i + 1] = c;
            self.buf[self.m - i - 1] = c.conj();
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }

    /// Synthesizes two real fields with one complex transform.
    pub fn synthesize_pair(
        &mut self,
        a: &[Complex64],
        b: &[Complex64],
        out_a: &mut [f64],
        out_b: &mut [f64],
    ) {
        debug_assert_eq!(a.len(), b.len());
        debug_assert!(a.len() <= self.max_modes());
        let i_unit = Complex64::new(0.0, 1.0);
        self.buf.fill(Complex64::new(0.0, 0.0));
        for (i, (&ca, &cb)) in a.iter().zip(b).enumerate() {
            self.buf[i + 1] = ca + i_unit * cb;
            self.buf[self.m - i - 1] = ca.conj() + i_unit * cb.conj();
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for ((oa, ob), v) in out_a.iter_mut().zip(out_b.iter_mut()).zip(&self.buf) {
            *oa = v.re;
            *ob = v.im;
        }
    }

    /// `coeffs_k = (1/M) sum_j samples_j e^{-2 pi i k j / M}` for `k = 1..=len`.
    pub fn analyze(&mut self, samples: &[f64], coeffs: &mut [Complex64]) {
        debug_assert!(coeffs.len() <= self.max_modes() && samples.len() == self.m);
        for (b, &s) in self.buf.iter_mut().zip(samples) {
            *b = Complex64::new(s, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.m as f64;
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = self.buf[i + 1] * scale;
        }
    }
}

/// Writes a field snapshot: a `# t=<time>` header, then `x u` rows.
pub fn write_snapshot<W: Write>(
    mut w: W,
    t: f64,
    field: &SpectralField,
    m: usize,
) -> io::Result<()> {
    let p = field
        .to_physical(m)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    writeln!(w, "# t={t}")?;
    for (j, u) in p.samples().iter().enumerate() {
        writeln!(w, "{} {}", j as f64 / m as f64, u)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_field_close(a: &SpectralField, b: &SpectralField, tol: f64) {
        let scale = a.norm_h2().sqrt().max(1e-14);
        let diff = a.sub(b).norm_h2().sqrt();
        assert!(
            diff <= tol * scale,
            "fields differ by {diff:e} (scale {scale:e})"
        );
    }

    #[test]
    fn single_mode_synthesis() {
        let f = SpectralField::sine_mode(1, 1, 1.0);
        assert_eq!(f.coeff(1), c(0.0, -0.5));
        let p = f.to_physical(8).unwrap();
        for (j, s) in p.samples().iter().enumerate() {
            assert!((s - (TAU * j as f64 / 8.0).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_field_synthesis() {
        let p = SpectralField::zeros(4).to_physical(16).unwrap();
        assert!(p.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn resolution_errors() {
        let f = SpectralField::zeros(4);
        assert!(matches!(
            f.to_physical(8),
            Err(SpectralError::Resolution { .. })
        ));
        assert!(matches!(
            f.to_physical(12),
            Err(SpectralError::Resolution { .. })
        ));
        assert!(f.to_physical(16).is_ok());
    }

    #[test]
    fn cosine_analysis() {
        let p = PhysicalField::from_fn(16, |x| (TAU * x).cos());
        let f = p.to_spectral(7).unwrap();
        assert!((f.coeff(1) - c(0.5, 0.0)).norm() < 1e-14);
        for k in 2..=7 {
            assert!(f.coeff(k).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_analysis_is_zero() {
        let p = PhysicalField::new(vec![3.25; 32]);
        let f = p.to_spectral(8).unwrap();
        assert!(f.coeffs().iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn analysis_truncates() {
        let p = PhysicalField::from_fn(16, |x| (TAU * x).sin() + 0.3 * (3.0 * TAU * x).sin());
        let f = p.to_spectral(2).unwrap();
        assert_eq!(f.n_modes(), 2);
        assert!((f.coeff(1) - c(0.0, -0.5)).norm() < 1e-14);
        assert!(f.coeff(2).norm() < 1e-14);
    }

    #[test]
    fn derivative_examples() {
        let u = SpectralField::sine_mode(3, 1, 1.0);
        let du = u.derivative();
        assert!((du.coeff(1) - c(PI, 0.0)).norm() < 1e-15);
        let ddu = du.derivative();
        assert_field_close(&ddu, &u.scaled(-4.0 * PI * PI), 1e-15);
        assert!(SpectralField::zeros(3).derivative().is_zero());
    }

    #[test]
    fn shift_examples() {
        let u = SpectralField::sine_mode(2, 1, 1.0);
        let s = u.shift(0.25);
        assert_field_close(&s, &SpectralField::cosine_mode(2, 1, 1.0), 1e-15);
        assert_eq!(u.shift(0.0), u);
        assert_eq!(u.shift(1.0), u);
        assert_eq!(u.shift(-3.0), u);
    }

    #[test]
    fn norm_examples() {
        let u = SpectralField::sine_mode(2, 1, 1.0);
        assert!((u.norm_h2() - 0.5).abs() < 1e-15);
        assert!((u.norm_v2() - 2.0 * PI * PI).abs() < 1e-12);
        let z = SpectralField::zeros(5);
        assert_eq!((z.norm_h2(), z.norm_v2()), (0.0, 0.0));
        let w = u.add(&SpectralField::sine_mode(2, 2, 1.0));
        assert!((w.norm_h2() - 1.0).abs() < 1e-15);
        assert!((w.norm_v2() - 10.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn l1_examples() {
        let u = SpectralField::sine_mode(1, 1, 1.0);
        assert!((u.norm_l1_dx() - 4.0).abs() < 1e-6);
        assert_eq!(SpectralField::zeros(3).norm_l1_dx(), 0.0);
        let small = SpectralField::sine_mode(1, 1, 1e-3);
        assert!((small.norm_l1_dx() - 4e-3).abs() < 1e-9);
        // |u_xx| = 4 pi^2 |sin|, integral 8 pi
        assert!((u.norm_l1_dxx() - 8.0 * PI).abs() < 1e-5);
    }

    #[test]
    fn project_examples() {
        let u = SpectralField::sine_mode(3, 1, 1.0).add(&SpectralField::sine_mode(3, 3, 1.0));
        let p = u.project(1).unwrap();
        assert_eq!(p, SpectralField::sine_mode(3, 1, 1.0));
        assert_eq!(u.project(3).unwrap(), u);
        assert!(u.project(0).is_err());
        assert!(u.project(4).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let e = SpectralField::from_coeffs(vec![c(1.0, 0.0), c(f64::NAN, 0.0)]);
        assert_eq!(e, Err(SpectralError::NonFinite { k: 2 }));
        assert_eq!(
            SpectralField::from_coeffs(vec![]),
            Err(SpectralError::Empty)
        );
    }

    #[test]
    fn snapshot_format() {
        let mut out = Vec::new();
        write_snapshot(&mut out, 0.5, &SpectralField::cosine_mode(1, 1, 2.0), 4).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# t=0.5");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0 2"));
    }

    fn field_strategy(max_modes: usize) -> impl Strategy<Value = SpectralField> {
        (1..=max_modes).prop_flat_map(|n| {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n).prop_map(|v| {
                SpectralField::from_coeffs(v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn shift_is_isometric(f in field_strategy(64), a in -5.0f64..5.0) {
            let s = f.shift(a);
            prop_assert!((s.norm_h2() - f.norm_h2()).abs() <= 1e-12 * f.norm_h2().max(1e-300));
            prop_assert!((s.norm_v2() - f.norm_v2()).abs() <= 1e-12 * f.norm_v2().max(1e-300));
        }

        #[test]
        fn shift_group_law(f in field_strategy(32), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let lhs = f.shift(a).shift(b);
            let rhs = f.shift(a + b);
            let scale = f.norm_h2().sqrt().max(1e-14);
            prop_assert!(lhs.sub(&rhs).norm_h2().sqrt() <= 1e-12 * scale);
        }

        #[test]
        fn physical_round_trip(f in field_strategy(32)) {
            let m = (2 * f.n_modes() + 2).next_power_of_two();
            let back = f.to_physical(m).unwrap().to_spectral(f.n_modes()).unwrap();
            let scale = f.norm_h2().sqrt().max(1e-14);
            prop_assert!(back.sub(&f).norm_h2().sqrt() <= 1e-12 * scale);
        }

        #[test]
        fn projection_contracts(f in field_strategy(16), n in 1usize..16) {
            let n = n.min(f.n_modes());
            prop_assert!(f.project(n).unwrap().norm_v2() <= f.norm_v2());
        }

        #[test]
        fn zero_mean_embedding(f in field_strategy(12)) {
            // ||f||_H <= ||f||_inf <= 1/2 ||f'||_L1 for mean-free periodic f
            let lhs = f.norm_h2().sqrt();
            let rhs = 0.5 * f.norm_l1_dx();
            prop_assert!(lhs <= rhs + 1e-6 * (1.0 + rhs));
        }

        #[test]
        fn samples_have_zero_mean(f in field_strategy(16)) {
            let p = f.to_physical(default_grid_size(f.n_modes())).unwrap();
            let max = p.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mean = p.samples().iter().sum::<f64>() / p.len() as f64;
            prop_assert!(mean.abs() <= 1e-12 * max.max(1e-300));
        }
    }
}
