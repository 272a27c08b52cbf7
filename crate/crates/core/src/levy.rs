//! Lévy intensity measures and sampling of their super-threshold jumps.
//!
//! A measure is a finite list of atoms plus an optional truncated power-law
//! density `c |z|^{-1-alpha}` on `0 < |z| <= z_max`. Jumps with `|z| > delta`
//! are simulated as a compound Poisson stream; the rest is handled by the
//! compensator in [`crate::dynamics`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

const ARRIVAL_STREAM: u64 = 0;
const SIZE_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("atom {index} sits at zero (the measure must not charge the origin)")]
    AtomAtZero { index: usize },
    #[error("atom {index} has nonpositive rate {rate}")]
    NonPositiveRate { index: usize, rate: f64 },
    #[error("atom {index} is not finite")]
    NonFiniteAtom { index: usize },
    #[error("density exponent alpha = {alpha} outside (0, 2): second-moment condition fails")]
    AlphaOutOfRange { alpha: f64 },
    #[error("density scale c = {c} must be positive")]
    NonPositiveScale { c: f64 },
    #[error("density cutoff z_max = {z_max} must be positive")]
    NonPositiveCutoff { z_max: f64 },
    #[error("threshold delta = {delta} is invalid here")]
    InvalidThreshold { delta: f64 },
    #[error("infinite jump rate: delta = 0 with an active density")]
    InfiniteRate,
    #[error("horizon {horizon} must be positive and finite")]
    InvalidHorizon { horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub z: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensitySide {
    Both,
    Positive,
    Negative,
}

impl DensitySide {
    /// Signs of `z` charged by the density.
    pub fn signs(self) -> &'static [f64] {
        match self {
            DensitySide::Both => &[1.0, -1.0],
            DensitySide::Positive => &[1.0],
            DensitySide::Negative => &[-1.0],
        }
    }
}

/// `c |z|^{-1-alpha} dz` on `0 < |z| <= z_max`, restricted to `side`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawDensity {
    pub c: f64,
    pub alpha: f64,
    pub z_max: f64,
    pub side: DensitySide,
}

impl PowerLawDensity {
    /// One-sided mass of `(lo, hi]`.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        let hi = hi.min(self.z_max);
        if hi <= lo {
            return 0.0;
        }
        self.c * (lo.powf(-self.alpha) - hi.powf(-self.alpha)) / self.alpha
    }

    /// One-sided `int_lo^hi z nu(dz)`.
    fn first_moment(&self, lo: f64, hi: f64) -> f64 {
        let hi = hi.min(self.z_max);
        if hi <= lo {
            return 0.0;
        }
        let p = 1.0 - self.alpha;
        if p.abs() < 1e-12 {
            self.c * (hi / lo).ln()
        } else {
            self.c * (hi.powf(p) - lo.powf(p)) / p
        }
    }

    /// One-sided `int_0^hi z^2 nu(dz)`.
    fn second_moment(&self, hi: f64) -> f64 {
        let hi = hi.min(self.z_max);
        if hi <= 0.0 {
            return 0.0;
        }
        self.c * hi.powf(2.0 - self.alpha) / (2.0 - self.alpha)
    }

    /// Inverse CDF of the law restricted to `(lo, z_max]`, `u` in `(0, 1]`.
    fn sample_magnitude(&self, lo: f64, u: f64) -> f64 {
        let a = lo.powf(-self.alpha);
        let b = self.z_max.powf(-self.alpha);
        let z = (a - u * (a - b)).powf(-1.0 / self.alpha);
        // rounding can land a hair outside the support
        z.clamp(f64::from_bits(lo.to_bits() + 1), self.z_max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevyMeasureSpec {
    pub atoms: Vec<Atom>,
    pub density: Option<PowerLawDensity>,
}

/// A realized jump of the driving path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub z: f64,
}

/// Drift and dropped-fluctuation scale of the jumps below threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMoments {
    /// `int_{delta < |z| <= 1} z nu(dz)`
    pub b: f64,
    /// `int_{|z| <= delta} z^2 nu(dz)`
    pub s2: f64,
}

impl LevyMeasureSpec {
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Self {
        Self {
            atoms: atoms.iter().map(|&(z, rate)| Atom { z, rate }).collect(),
            density: None,
        }
    }

    pub fn with_density(mut self, density: PowerLawDensity) -> Self {
        self.density = Some(density);
        self
    }

    /// Checks `nu({0}) = 0`, positive rates and `int (z^2 ^ 1) nu(dz) < inf`.
    pub fn validate(&self) -> Result<(), LevyError> {
        for (index, a) in self.atoms.iter().enumerate() {
            if !(a.z.is_finite() && a.rate.is_finite()) {
                return Err(LevyError::NonFiniteAtom { index });
            }
            if a.z == 0.0 {
                return Err(LevyError::AtomAtZero { index });
            }
            if a.rate <= 0.0 {
                return Err(LevyError::NonPositiveRate {
                    index,
                    rate: a.rate,
                });
            }
        }
        if let Some(d) = &self.density {
            if !(d.alpha > 0.0 && d.alpha < 2.0) {
                return Err(LevyError::AlphaOutOfRange { alpha: d.alpha });
            }
            if !(d.c > 0.0 && d.c.is_finite()) {
                return Err(LevyError::NonPositiveScale { c: d.c });
            }
            if !(d.z_max > 0.0 && d.z_max.is_finite()) {
                return Err(LevyError::NonPositiveCutoff { z_max: d.z_max });
            }
        }
        Ok(())
    }

    /// Intensity `Lambda(delta)` of the jumps with `|z| > delta`.
    pub fn total_rate(&self, delta: f64) -> Result<f64, LevyError> {
        if delta.is_nan() || delta < 0.0 {
            return Err(LevyError::InvalidThreshold { delta });
        }
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.z.abs() > delta)
            .map(|a| a.rate)
            .sum();
        let density = match &self.density {
            None => 0.0,
            Some(_) if delta == 0.0 => return Err(LevyError::InfiniteRate),
            Some(d) => d.side.signs().len() as f64 * d.mass(delta, d.z_max),
        };
        Ok(atoms + density)
    }

    pub fn small_moments(&self, delta: f64) -> Result<SmallMoments, LevyError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(LevyError::InvalidThreshold { delta });
        }
        let mut b = 0.0;
        let mut s2 = 0.0;
        for a in &self.atoms {
            let m = a.z.abs();
            if m > delta && m <= 1.0 {
                b += a.z * a.rate;
            } else if m <= delta {
                s2 += a.z * a.z * a.rate;
            }
        }
        if let Some(d) = &self.density {
            for &sign in d.side.signs() {
                if delta > 0.0 {
                    b += sign * d.first_moment(delta, 1.0);
                }
                s2 += d.second_moment(delta);
            }
        }
        Ok(SmallMoments { b, s2 })
    }

    /// Time-sorted jumps with `|z| > delta` on `[0, horizon]`.
    ///
    /// Arrival times and sizes use separate ChaCha streams keyed by `seed`, so a
    /// longer horizon extends the same path rather than redrawing it.
    pub fn sample_jumps(
        &self,
        delta: f64,
        horizon: f64,
        seed: u64,
    ) -> Result<Vec<JumpEvent>, LevyError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(LevyError::InvalidHorizon { horizon });
        }
        let rate = self.total_rate(delta)?;
        if rate == 0.0 {
            return Ok(Vec::new());
        }
        let sizes = SizeSampler::new(self, delta, rate);

        let mut arrivals = ChaCha8Rng::seed_from_u64(seed);
        arrivals.set_stream(ARRIVAL_STREAM);
        let mut size_rng = ChaCha8Rng::seed_from_u64(seed);
        size_rng.set_stream(SIZE_STREAM);
        let gap = Exp::new(rate).expect("positive finite rate");

        let mut events = Vec::new();
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut arrivals);
            if t > horizon {
                break;
            }
            events.push(JumpEvent {
                t,
                z: sizes.sample(&mut size_rng),
            });
        }
        Ok(events)
    }
}

enum Component {
    Atom(f64),
    Density { sign: f64 },
}

struct SizeSampler<'a> {
    density: Option<&'a PowerLawDensity>,
    delta: f64,
    // cumulative weights normalized to 1
    cumulative: Vec<(f64, Component)>,
}

impl<'a> SizeSampler<'a> {
    fn new(m: &'a LevyMeasureSpec, delta: f64, rate: f64) -> Self {
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for a in m.atoms.iter().filter(|a| a.z.abs() > delta) {
            acc += a.rate / rate;
            cumulative.push((acc, Component::Atom(a.z)));
        }
        if let Some(d) = &m.density {
            let w = d.mass(delta, d.z_max) / rate;
            if w > 0.0 {
                for &sign in d.side.signs() {
                    acc += w;
                    cumulative.push((acc, Component::Density { sign }));
                }
            }
        }
        Self {
            density: m.density.as_ref(),
            delta,
            cumulative,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let pick = self
            .cumulative
            .iter()
            .find(|(c, _)| u < *c)
            .unwrap_or_else(|| self.cumulative.last().expect("nonempty component list"));
        match pick.1 {
            Component::Atom(z) => z,
            Component::Density { sign } => {
                let d = self.density.expect("density component requires a density");
                let v = 1.0 - rng.random::<f64>();
                sign * d.sample_magnitude(self.delta, v)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn density(c: f64, alpha: f64, z_max: f64, side: DensitySide) -> PowerLawDensity {
        PowerLawDensity {
            c,
            alpha,
            z_max,
            side,
        }
    }

    // composite Simpson, independent of the closed forms
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn validate_examples() {
        assert!(LevyMeasureSpec::from_atoms(&[(0.5, 1.0)])
            .validate()
            .is_ok());
        assert_eq!(
            LevyMeasureSpec::from_atoms(&[(0.0, 1.0)]).validate(),
            Err(LevyError::AtomAtZero { index: 0 })
        );
        let err = LevyMeasureSpec::default()
            .with_density(density(1.0, 2.5, 1.0, DensitySide::Both))
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("second-moment condition fails"));
        assert!(matches!(
            LevyMeasureSpec::from_atoms(&[(0.5, -1.0)]).validate(),
            Err(LevyError::NonPositiveRate { .. })
        ));
        assert!(LevyMeasureSpec::default().validate().is_ok());
    }

    #[test]
    fn total_rate_examples() {
        let m = LevyMeasureSpec::from_atoms(&[(0.5, 1.0), (-0.5, 1.0)]);
        assert_eq!(m.total_rate(0.1).unwrap(), 2.0);
        assert_eq!(m.total_rate(0.6).unwrap(), 0.0);

        let d = density(1.0, 1.0, 1.0, DensitySide::Both);
        let m = LevyMeasureSpec::default().with_density(d);
        let oracle = 2.0 * simpson(|z| z.powi(-2), 0.1, 1.0, 20_000);
        assert!((oracle - 18.0).abs() < 1e-9);
        assert!((m.total_rate(0.1).unwrap() - 18.0).abs() < 1e-12);
        assert_eq!(m.total_rate(0.0), Err(LevyError::InfiniteRate));
    }

    #[test]
    fn total_rate_is_monotone() {
        let m = LevyMeasureSpec::from_atoms(&[(0.3, 1.0), (-0.7, 2.0)]).with_density(density(
            0.5,
            1.3,
            2.0,
            DensitySide::Both,
        ));
        let mut prev = f64::INFINITY;
        for i in 1..400 {
            let r = m.total_rate(i as f64 * 0.006).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn small_moment_examples() {
        let sym = LevyMeasureSpec::from_atoms(&[(0.5, 1.0), (-0.5, 1.0)]);
        assert_eq!(
            sym.small_moments(0.1).unwrap(),
            SmallMoments { b: 0.0, s2: 0.0 }
        );

        let one = LevyMeasureSpec::from_atoms(&[(0.5, 2.0)]);
        assert_eq!(
            one.small_moments(0.1).unwrap(),
            SmallMoments { b: 1.0, s2: 0.0 }
        );
        assert_eq!(
            one.small_moments(0.6).unwrap(),
            SmallMoments { b: 0.0, s2: 0.5 }
        );

        let d = density(1.0, 0.5, 1.0, DensitySide::Positive);
        let m = LevyMeasureSpec::default().with_density(d);
        let oracle = simpson(|z| z * z.powf(-1.5), 0.2, 1.0, 20_000);
        let expected = 2.0 * (1.0 - 0.2f64.sqrt());
        assert!((oracle - expected).abs() < 1e-10);
        let got = m.small_moments(0.2).unwrap();
        assert!((got.b - 1.105_572_809).abs() < 1e-9);
        // s2 = int_0^0.2 z^{0.5} dz
        assert!((got.s2 - 0.2f64.powf(1.5) / 1.5).abs() < 1e-14);
    }

    #[test]
    fn small_moments_log_case() {
        let d = density(2.0, 1.0, 0.5, DensitySide::Positive);
        let m = LevyMeasureSpec::default().with_density(d);
        let oracle = simpson(|z| 2.0 * z.powi(-1), 0.1, 0.5, 20_000);
        assert!((m.small_moments(0.1).unwrap().b - oracle).abs() < 1e-10);
    }

    #[test]
    fn sampling_above_all_atoms_is_empty() {
        let m = LevyMeasureSpec::from_atoms(&[(0.5, 1.0), (-0.3, 4.0)]);
        assert!(m.sample_jumps(0.6, 100.0, 9).unwrap().is_empty());
    }

    #[test]
    fn poisson_count_matches_rate() {
        let m = LevyMeasureSpec::from_atoms(&[(0.5, 2.0)]);
        let paths = 200;
        let total: usize = (0..paths)
            .map(|s| m.sample_jumps(0.1, 100.0, s).unwrap().len())
            .sum();
        let mean = total as f64 / paths as f64;
        // per-path sd sqrt(200), ensemble sd 1
        assert!((mean - 200.0).abs() < 3.0, "mean count {mean}");
    }

    #[test]
    fn sampling_is_deterministic_and_extends_prefix() {
        let m = LevyMeasureSpec::from_atoms(&[(0.4, 1.5), (-0.9, 0.5)]).with_density(density(
            0.3,
            0.8,
            1.5,
            DensitySide::Both,
        ));
        let a = m.sample_jumps(0.1, 20.0, 1234).unwrap();
        let b = m.sample_jumps(0.1, 20.0, 1234).unwrap();
        assert_eq!(a, b);
        let longer = m.sample_jumps(0.1, 40.0, 1234).unwrap();
        assert_eq!(&longer[..a.len()], &a[..]);
        assert!(a.windows(2).all(|w| w[0].t < w[1].t));
        assert!(a
            .iter()
            .all(|e| e.t >= 0.0 && e.t <= 20.0 && e.z.abs() > 0.1));
    }

    #[test]
    fn sizes_avoid_threshold_band() {
        let m = LevyMeasureSpec::default().with_density(density(1.0, 1.7, 1.0, DensitySide::Both));
        let ev = m.sample_jumps(0.05, 200.0, 3).unwrap();
        assert!(!ev.is_empty());
        assert!(ev.iter().all(|e| e.z.abs() > 0.05 && e.z.abs() <= 1.0));
    }

    #[test]
    fn size_histogram_matches_measure() {
        let delta = 0.1;
        let d = density(1.0, 0.7, 1.0, DensitySide::Both);
        let m = LevyMeasureSpec::from_atoms(&[(0.5, 3.0), (-0.25, 2.0)]).with_density(d);
        let rate = m.total_rate(delta).unwrap();
        let ev = m.sample_jumps(delta, 150_000.0 / rate, 77).unwrap();
        assert!(ev.len() > 100_000);

        // bins: the two atoms, and 10 density bins per side
        let n_bins = 10;
        let edges: Vec<f64> = (0..=n_bins)
            .map(|i| delta * (1.0 / delta).powf(i as f64 / n_bins as f64))
            .collect();
        let mut expected = vec![3.0 / rate, 2.0 / rate];
        for _ in 0..2 {
            for w in edges.windows(2) {
                expected.push(d.mass(w[0], w[1]) / rate);
            }
        }
        let mut counts = vec![0.0; expected.len()];
        for e in &ev {
            if e.z == 0.5 {
                counts[0] += 1.0;
            } else if e.z == -0.25 {
                counts[1] += 1.0;
            } else {
                let bin = edges
                    .windows(2)
                    .position(|w| e.z.abs() > w[0] && e.z.abs() <= w[1]);
                let offset = if e.z > 0.0 { 2 } else { 2 + n_bins };
                counts[offset + bin.expect("size inside support")] += 1.0;
            }
        }
        let n = ev.len() as f64;
        let stat: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(o, p)| (o - n * p).powi(2) / (n * p))
            .sum();
        let crit = ChiSquared::new((expected.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "chi-square {stat} >= {crit}");
    }
}
