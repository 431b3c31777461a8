//! Finite-dimensional noise `sigma(v) dW = sum_k g(v) alpha_k e_k dW_k`.
//!
//! Shapes are `p cos(2 pi n . x) cos(pi m z)` normalized in `L^2`, so they
//! are Laplacian eigenfunctions, even in `z`, and (for barotropic modes with
//! perpendicular polarization, or any `m != 0`) have divergence-free
//! vertical mean.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::functionals;
use crate::grid::{self, wavevector, Grid, SpectralField, CONSTRAINT_TOL};
use crate::rng::StreamRng;
use crate::spectral_ops::dz;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarization {
    X,
    Y,
    /// `(-n2, n1) / |n|`, divergence free in the horizontal.
    Perp,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::X => "x",
            Polarization::Y => "y",
            Polarization::Perp => "perp",
        })
    }
}

impl FromStr for Polarization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "x" | "0" => Ok(Polarization::X),
            "y" | "1" => Ok(Polarization::Y),
            "perp" | "2" => Ok(Polarization::Perp),
            other => Err(format!("unknown polarization {other:?} (x, y or perp)")),
        }
    }
}

/// Mode numbers and polarization of a cosine shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSpec {
    pub n1: i64,
    pub n2: i64,
    pub m: i64,
    pub pol: Polarization,
    pub alpha: f64,
}

impl ModeSpec {
    /// `|k|^2` of the shape.
    pub fn k2(&self) -> f64 {
        let k = wavevector([self.n1, self.n2, self.m]);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMode {
    /// Unit `L^2` norm spatial profile.
    pub shape: SpectralField,
    pub amplitude: f64,
    pub spec: Option<ModeSpec>,
    /// Flat indices of the nonzero coefficients of `shape`.
    support: Vec<usize>,
}

impl NoiseMode {
    pub fn cosine(grid: Grid, spec: ModeSpec) -> Result<Self> {
        let ModeSpec { n1, n2, m, pol, alpha } = spec;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::DomainError(format!("amplitude {alpha} must be >= 0")));
        }
        if n1 == 0 && n2 == 0 && m == 0 {
            return Err(Error::DomainError("noise mode (0, 0, 0) has nonzero mean".into()));
        }
        if !grid.represents([n1, n2, m]) {
            return Err(Error::DomainError(format!(
                "noise mode ({n1}, {n2}, {m}) not representable on {:?}",
                grid.dims()
            )));
        }
        let polarization = match pol {
            Polarization::X => [1.0, 0.0],
            Polarization::Y => [0.0, 1.0],
            Polarization::Perp => {
                if n1 == 0 && n2 == 0 {
                    return Err(Error::DomainError(
                        "perpendicular polarization needs a horizontal wavevector".into(),
                    ));
                }
                let r = ((n1 * n1 + n2 * n2) as f64).sqrt();
                [-(n2 as f64) / r, n1 as f64 / r]
            }
        };
        let mut shape = SpectralField::zeros(grid);
        let len = grid.len();
        for s1 in [1, -1] {
            for s2 in [1, -1] {
                let idx = grid.index([s1 * n1, s1 * n2, s2 * m]);
                for c in 0..2 {
                    shape.coeffs[c * len + idx] += Complex64::new(0.25 * polarization[c], 0.0);
                }
            }
        }
        let norm = shape.norm();
        shape.scale(1.0 / norm);
        Ok(NoiseMode {
            support: support_of(&shape),
            shape,
            amplitude: alpha,
            spec: Some(spec),
        })
    }

    /// Any spatial profile, normalized to unit `L^2` norm.
    pub fn from_shape(mut shape: SpectralField, amplitude: f64) -> Result<Self> {
        let norm = shape.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DomainError("noise shape must have finite nonzero norm".into()));
        }
        shape.scale(1.0 / norm);
        Ok(NoiseMode {
            support: support_of(&shape),
            shape,
            amplitude,
            spec: None,
        })
    }
}

fn support_of(shape: &SpectralField) -> Vec<usize> {
    let zero = Complex64::default();
    (0..shape.coeffs.len()).filter(|&i| shape.coeffs[i] != zero).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gain {
    Additive,
    /// `g(v) = (1 + ||v||_2^2)^(-1/2)`.
    Bounded,
}

impl Gain {
    pub fn eval(&self, v: &SpectralField) -> f64 {
        match self {
            Gain::Additive => 1.0,
            Gain::Bounded => 1.0 / (1.0 + v.norm_sq()).sqrt(),
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gain::Additive => "additive",
            Gain::Bounded => "bounded",
        })
    }
}

impl FromStr for Gain {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "additive" => Ok(Gain::Additive),
            "bounded" => Ok(Gain::Bounded),
            other => Err(format!("unknown gain law {other:?} (additive or bounded)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub modes: Vec<NoiseMode>,
    pub gain: Gain,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            modes: Vec::new(),
            gain: Gain::Additive,
        }
    }

    pub fn from_specs(grid: Grid, specs: &[ModeSpec], gain: Gain) -> Result<Self> {
        let modes = specs
            .iter()
            .map(|s| NoiseMode::cosine(grid, *s))
            .collect::<Result<_>>()?;
        Ok(NoiseModel { modes, gain })
    }

    /// The lowest `count` admissible cosine modes ordered by `|k|`, with
    /// `alpha_k = amplitude * lambda_1 / |k|^2`.
    pub fn default_spectrum(grid: Grid, count: usize, amplitude: f64, gain: Gain) -> Result<Self> {
        let band = grid.band(2.0 / 3.0);
        let mut specs = Vec::new();
        let km = band.kmax.map(|k| k as i64);
        for n1 in 0..=km[0] {
            for n2 in -km[1]..=km[1] {
                if n1 == 0 && n2 < 0 {
                    continue;
                }
                for m in 0..=km[2] {
                    let pols: &[Polarization] = if n1 == 0 && n2 == 0 {
                        if m == 0 {
                            continue;
                        }
                        &[Polarization::X, Polarization::Y]
                    } else if m == 0 {
                        &[Polarization::Perp]
                    } else {
                        &[Polarization::X, Polarization::Y]
                    };
                    for &pol in pols {
                        specs.push(ModeSpec { n1, n2, m, pol, alpha: 0.0 });
                    }
                }
            }
        }
        specs.sort_by(|a, b| a.k2().total_cmp(&b.k2()));
        specs.truncate(count);
        let lambda1 = grid.lambda1();
        for s in &mut specs {
            s.alpha = amplitude * lambda1 / s.k2();
        }
        Self::from_specs(grid, &specs, gain)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `sum_k alpha_k^2 ||e_k||^2`.
    pub fn hs_budget(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.amplitude * m.amplitude * m.shape.norm_sq())
            .sum()
    }

    fn check_grid(&self, v: &SpectralField) -> Result<()> {
        for m in &self.modes {
            m.shape.check_grid(v)?;
        }
        Ok(())
    }
}

/// Independent scalar Brownian increments, one per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement {
    pub dw: Vec<f64>,
}

impl WienerIncrement {
    pub fn zeros(n: usize) -> Self {
        WienerIncrement { dw: vec![0.0; n] }
    }
}

/// Draws `dW_k ~ N(0, dt)` for every mode.
pub fn sample_increment(model: &NoiseModel, dt: f64, rng: &mut StreamRng) -> Result<WienerIncrement> {
    if !(dt > 0.0) {
        return Err(Error::DomainError(format!("increment needs dt > 0, got {dt}")));
    }
    let s = dt.sqrt();
    let dw = (0..model.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect();
    Ok(WienerIncrement { dw })
}

/// `sum_k g(v) alpha_k e_k dW_k`.
pub fn apply_sigma(model: &NoiseModel, v: &SpectralField, inc: &WienerIncrement) -> Result<SpectralField> {
    model.check_grid(v)?;
    if inc.dw.len() != model.len() {
        return Err(Error::DomainError(format!(
            "{} increments for {} modes",
            inc.dw.len(),
            model.len()
        )));
    }
    let gain = model.gain.eval(v);
    let mut out = SpectralField::zeros(v.grid);
    for (mode, &dw) in model.modes.iter().zip(&inc.dw) {
        let a = gain * mode.amplitude * dw;
        if a != 0.0 {
            for &i in &mode.support {
                out.coeffs[i] += mode.shape.coeffs[i] * a;
            }
        }
    }
    Ok(out)
}

/// Ito correction `sum_k ||sigma_k(v)||^2 = g(v)^2 sum_k alpha_k^2 ||e_k||^2`.
pub fn hs_norm_sq(model: &NoiseModel, v: &SpectralField) -> f64 {
    let g = model.gain.eval(v);
    g * g * model.hs_budget()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    /// Shapes violating zero mean or `grad_h . M e_k = 0`, by index.
    pub constraint_failures: Vec<usize>,
    pub worst_constraint_residual: f64,
    /// Smallest `C` with `sum ||sigma_k(v)||_14^2 <= C (1 + ||v||_14^2)` over the sample.
    pub c_l14: f64,
    /// Smallest `C` with `sum ||d_z sigma_k(v)||_6^2 <= C (1 + ||d_z v||_6^2)` over the sample.
    pub c_w1z6: f64,
    /// `C_sigma` with `eps_sigma = 0`.
    pub c_sigma: f64,
    pub eps_sigma: f64,
    /// Largest sampled `||sigma(v)||_HS^2`.
    pub max_hs_sampled: f64,
    /// Largest sampled `||sigma(v1) - sigma(v2)||^2 / ||v1 - v2||^2` in
    /// `D(A^{j/2})`, `j = 0, 1, 2`.
    pub lipschitz: [f64; 3],
    pub constraint_ok: bool,
    pub bounds_ok: bool,
    pub small_ok: bool,
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.constraint_ok && self.bounds_ok && self.small_ok
    }
}

/// Evaluates the noise conditions on `samples` random fields in `H`.
pub fn check_admissibility(model: &NoiseModel, samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    let mut constraint_failures = Vec::new();
    let mut worst = 0.0f64;
    for (i, m) in model.modes.iter().enumerate() {
        let residual = grid::constraint_residual(&m.shape);
        let mean = m.shape.mean_magnitude();
        worst = worst.max(residual);
        if residual > CONSTRAINT_TOL || mean > CONSTRAINT_TOL {
            constraint_failures.push(i);
        }
    }
    let c_sigma = model.hs_budget();
    let mut report = AdmissibilityReport {
        constraint_ok: constraint_failures.is_empty(),
        constraint_failures,
        worst_constraint_residual: worst,
        c_l14: 0.0,
        c_w1z6: 0.0,
        c_sigma,
        eps_sigma: 0.0,
        max_hs_sampled: 0.0,
        lipschitz: [0.0; 3],
        bounds_ok: true,
        small_ok: true,
    };
    let Some(first) = model.modes.first() else {
        return Ok(report);
    };
    let g = first.shape.grid;
    let mut previous: Option<SpectralField> = None;
    for s in 0..samples {
        let mut v = grid::random_field_in_h(g, seed.wrapping_add(s as u64), 1.0)?;
        // sweep amplitudes so the gain law is exercised away from v = 0
        v.scale(10f64.powf(s as f64 % 5.0 - 2.0));
        let gain = model.gain.eval(&v);
        let (mut l14, mut w16) = (0.0, 0.0);
        for m in &model.modes {
            let a = gain * m.amplitude;
            l14 += a * a * functionals::lp_norm(&m.shape, 14.0, 2).powi(2);
            w16 += a * a * functionals::lp_norm(&dz(&m.shape), 6.0, 2).powi(2);
        }
        let v14 = functionals::lp_norm(&v, 14.0, 2);
        let vz6 = functionals::lp_norm(&dz(&v), 6.0, 2);
        report.c_l14 = report.c_l14.max(l14 / (1.0 + v14 * v14));
        report.c_w1z6 = report.c_w1z6.max(w16 / (1.0 + vz6 * vz6));
        let hs = hs_norm_sq(model, &v);
        report.max_hs_sampled = report.max_hs_sampled.max(hs);
        if hs > c_sigma * (1.0 + 1e-12) {
            report.small_ok = false;
        }
        if let Some(prev) = &previous {
            let dg = model.gain.eval(&v) - model.gain.eval(prev);
            let diff = &v - prev;
            for (j, lip) in report.lipschitz.iter_mut().enumerate() {
                let weight = |k2: f64| k2.powi(j as i32);
                let num: f64 = model
                    .modes
                    .iter()
                    .map(|m| dg * dg * m.amplitude * m.amplitude * weighted_norm_sq(&m.shape, weight))
                    .sum();
                let den = weighted_norm_sq(&diff, weight);
                if den > 0.0 {
                    *lip = lip.max(num / den);
                }
            }
        }
        previous = Some(v);
    }
    report.bounds_ok = report.c_l14.is_finite() && report.c_w1z6.is_finite();
    Ok(report)
}

fn weighted_norm_sq(v: &SpectralField, weight: impl Fn(f64) -> f64) -> f64 {
    let g = v.grid;
    let len = g.len();
    let modes = g.modes();
    let mut s = 0.0;
    for idx in 0..len {
        let k2 = modes.k2[idx];
        s += weight(k2) * (v.coeffs[idx].norm_sqr() + v.coeffs[len + idx].norm_sqr());
    }
    grid::VOLUME * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::leray_project;

    fn g16() -> Grid {
        Grid::cube(16).unwrap()
    }

    fn spec(n1: i64, n2: i64, m: i64, pol: Polarization, alpha: f64) -> ModeSpec {
        ModeSpec { n1, n2, m, pol, alpha }
    }

    #[test]
    fn increments_have_the_right_moments() {
        let model = NoiseModel::from_specs(g16(), &[spec(0, 0, 1, Polarization::X, 1.0)], Gain::Additive)
            .unwrap();
        let dt = 1e-3;
        let mut rng = StreamRng::new(5);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_increment(&model, dt, &mut rng).unwrap().dw[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt());
        assert!((var - dt).abs() <= 0.05 * dt);
        assert!(sample_increment(&model, 0.0, &mut rng).is_err());
    }

    #[test]
    fn increments_are_deterministic() {
        let model = NoiseModel::default_spectrum(g16(), 8, 0.1, Gain::Additive).unwrap();
        let mut a = StreamRng::new(3);
        let mut b = StreamRng::new(3);
        for _ in 0..10 {
            assert_eq!(
                sample_increment(&model, 0.01, &mut a).unwrap(),
                sample_increment(&model, 0.01, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn shapes_are_unit_even_and_in_h() {
        let model = NoiseModel::default_spectrum(g16(), 32, 1.0, Gain::Additive).unwrap();
        assert_eq!(model.len(), 32);
        for m in &model.modes {
            assert!((m.shape.norm() - 1.0).abs() < 1e-14);
            assert!(m.shape.even_defect() < 1e-15);
            assert!(grid::check_in_h(&m.shape).is_ok());
            assert!(m.shape.hermitian_defect() < 1e-15);
        }
        let first = model.modes[0].spec.unwrap();
        assert_eq!((first.n1, first.n2, first.m), (0, 0, 1));
        assert!((first.alpha - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_increment_gives_zero_forcing() {
        let g = g16();
        let model = NoiseModel::default_spectrum(g, 8, 0.5, Gain::Bounded).unwrap();
        let v = grid::random_field_in_h(g, 1, 1.0).unwrap();
        let f = apply_sigma(&model, &v, &WienerIncrement::zeros(8)).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn additive_single_mode_is_linear() {
        let g = g16();
        let model = NoiseModel::from_specs(g, &[spec(1, 0, 1, Polarization::Y, 0.3)], Gain::Additive)
            .unwrap();
        let v = grid::random_field_in_h(g, 1, 1.0).unwrap();
        let f = apply_sigma(&model, &v, &WienerIncrement { dw: vec![1.0] }).unwrap();
        assert_eq!(f, &model.modes[0].shape * 0.3);
    }

    #[test]
    fn bounded_gain_shrinks_for_large_states() {
        let g = g16();
        let add = NoiseModel::default_spectrum(g, 4, 1.0, Gain::Additive).unwrap();
        let bnd = NoiseModel { gain: Gain::Bounded, ..add.clone() };
        let mut v = grid::random_field_in_h(g, 4, 1.0).unwrap();
        v.scale(1e6 / v.norm());
        let inc = WienerIncrement { dw: vec![0.1, -0.2, 0.3, 0.05] };
        let a = apply_sigma(&add, &v, &inc).unwrap().norm();
        let b = apply_sigma(&bnd, &v, &inc).unwrap().norm();
        assert!(b <= 1e-5 * a);
    }

    #[test]
    fn hs_norm() {
        let g = g16();
        let add = NoiseModel::default_spectrum(g, 6, 0.4, Gain::Additive).unwrap();
        let budget: f64 = add.modes.iter().map(|m| m.amplitude.powi(2)).sum();
        let v = grid::random_field_in_h(g, 2, 1.0).unwrap();
        assert!((hs_norm_sq(&add, &v) - budget).abs() < 1e-14);
        assert_eq!(hs_norm_sq(&add, &v), hs_norm_sq(&add, &SpectralField::zeros(g)));

        let bnd = NoiseModel { gain: Gain::Bounded, ..add };
        assert!((hs_norm_sq(&bnd, &SpectralField::zeros(g)) - budget).abs() < 1e-14);
        let mut w = v.clone();
        w.scale(3f64.sqrt() / w.norm());
        assert!((hs_norm_sq(&bnd, &w) - budget / 4.0).abs() < 1e-14);
    }

    #[test]
    fn forcing_stays_in_h() {
        let g = g16();
        let model = NoiseModel::default_spectrum(g, 16, 1.0, Gain::Bounded).unwrap();
        let v = grid::random_field_in_h(g, 3, 1.0).unwrap();
        let mut rng = StreamRng::new(1);
        let inc = sample_increment(&model, 0.1, &mut rng).unwrap();
        let f = apply_sigma(&model, &v, &inc).unwrap();
        assert!((&leray_project(&f) - &f).norm() <= 1e-12 * f.norm());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let model = NoiseModel::default_spectrum(g16(), 2, 1.0, Gain::Additive).unwrap();
        let v = SpectralField::zeros(Grid::cube(8).unwrap());
        assert!(matches!(
            apply_sigma(&model, &v, &WienerIncrement::zeros(2)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn admissibility_reports() {
        let g = Grid::cube(8).unwrap();
        let empty = check_admissibility(&NoiseModel::none(), 3, 0).unwrap();
        assert!(empty.pass());
        assert_eq!(empty.c_sigma, 0.0);

        let single = NoiseModel::from_specs(g, &[spec(0, 0, 1, Polarization::X, 1.0)], Gain::Additive)
            .unwrap();
        let r = check_admissibility(&single, 4, 0).unwrap();
        assert!(r.pass());
        assert!((r.c_sigma - 1.0).abs() < 1e-14);
        assert_eq!(r.lipschitz, [0.0; 3]);

        let bounded = NoiseModel::default_spectrum(g, 6, 1.0, Gain::Bounded).unwrap();
        let r = check_admissibility(&bounded, 6, 1).unwrap();
        assert!(r.pass());
        assert!(r.lipschitz.iter().all(|l| l.is_finite()));

        // a barotropic gradient q = cos(2 pi x) gives u = grad_h q with grad_h . M u != 0
        let mut u = SpectralField::zeros(g);
        u.set_real_mode(0, [1, 0, 0], Complex64::new(0.0, 0.5));
        assert!(grid::mean_divergence_norm(&u) > 1.0);
        let broken = NoiseModel {
            modes: vec![NoiseMode::from_shape(u, 1.0).unwrap()],
            gain: Gain::Additive,
        };
        let r = check_admissibility(&broken, 2, 0).unwrap();
        assert!(!r.pass());
        assert_eq!(r.constraint_failures, vec![0]);
    }

    #[test]
    fn invalid_modes_are_rejected() {
        let g = Grid::cube(8).unwrap();
        assert!(NoiseMode::cosine(g, spec(0, 0, 0, Polarization::X, 1.0)).is_err());
        assert!(NoiseMode::cosine(g, spec(0, 0, 1, Polarization::Perp, 1.0)).is_err());
        assert!(NoiseMode::cosine(g, spec(4, 0, 1, Polarization::X, 1.0)).is_err());
        assert!(NoiseMode::cosine(g, spec(1, 0, 1, Polarization::X, -1.0)).is_err());
    }
}
