//! Fourier multipliers and the dealiased quadratic terms of the system:
//! advection `v . grad_h v + w d_z v`, the explicit barotropic pressure
//! gradient, and the drift of the vertical vorticity `d_z v`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{self, wavevector, Grid, SpectralField, SpectralScalar};
use crate::transform::{self, Band};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Mode-wise Fourier multipliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MultiplierSpec {
    /// Componentwise partial derivative.
    Partial(Axis),
    Laplacian,
    /// `(-Delta_h)^{-1}`, pinned to zero on modes with `kx = ky = 0`.
    InvLaplacianH,
    /// `exp(dt Delta)`.
    HeatSemigroup { dt: f64 },
    /// `D^s = (-Delta)^{s/2}`.
    Fractional { s: f64 },
}

impl MultiplierSpec {
    /// The multiplier symbol at a wavevector.
    pub fn symbol(&self, k: [f64; 3]) -> Complex64 {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        match *self {
            MultiplierSpec::Partial(Axis::X) => I * k[0],
            MultiplierSpec::Partial(Axis::Y) => I * k[1],
            MultiplierSpec::Partial(Axis::Z) => I * k[2],
            MultiplierSpec::Laplacian => Complex64::new(-k2, 0.0),
            MultiplierSpec::InvLaplacianH => {
                let kh2 = k[0] * k[0] + k[1] * k[1];
                if kh2 == 0.0 {
                    Complex64::default()
                } else {
                    Complex64::new(1.0 / kh2, 0.0)
                }
            }
            MultiplierSpec::HeatSemigroup { dt } => Complex64::new((-k2 * dt).exp(), 0.0),
            MultiplierSpec::Fractional { s } => {
                if k2 == 0.0 {
                    Complex64::new(if s == 0.0 { 1.0 } else { 0.0 }, 0.0)
                } else {
                    Complex64::new(k2.powf(s / 2.0), 0.0)
                }
            }
        }
    }
}

/// Two-thirds style truncation: modes with `|n| >= fraction * N/2` on any
/// axis are zeroed around every product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DealiasRule {
    pub fraction: f64,
}

impl Default for DealiasRule {
    fn default() -> Self {
        DealiasRule {
            fraction: 2.0 / 3.0,
        }
    }
}

impl DealiasRule {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::DomainError(format!(
                "dealias fraction {fraction} outside (0, 1]"
            )));
        }
        Ok(DealiasRule { fraction })
    }

    pub fn band(&self, grid: Grid) -> Band {
        grid.band(self.fraction)
    }
}

/// Applies a multiplier to both components.
pub fn apply_multiplier(spec: MultiplierSpec, u: &SpectralField) -> Result<SpectralField> {
    let g = u.grid;
    let len = g.len();
    let scale = u.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let pinned = |idx: usize| u.coeffs[idx].norm().max(u.coeffs[len + idx].norm());
    match spec {
        MultiplierSpec::Fractional { s } if s < 0.0 => {
            let i0 = g.index([0, 0, 0]);
            if pinned(i0) > 1e-14 * scale {
                return Err(Error::DomainError(format!(
                    "D^{s} needs a zero-mean input"
                )));
            }
        }
        MultiplierSpec::InvLaplacianH => {
            for idx in 0..len {
                let n = g.mode_at(idx);
                if n[0] == 0 && n[1] == 0 && pinned(idx) > 1e-14 * scale {
                    return Err(Error::DomainError(
                        "inverse horizontal Laplacian needs zero horizontal mean on every level"
                            .into(),
                    ));
                }
            }
        }
        MultiplierSpec::HeatSemigroup { dt } if !(dt >= 0.0) => {
            return Err(Error::DomainError(format!("heat semigroup needs dt >= 0, got {dt}")));
        }
        _ => {}
    }
    let mut out = u.clone();
    let modes = g.modes();
    for idx in 0..len {
        let m = spec.symbol(modes.k[idx]);
        out.coeffs[idx] *= m;
        out.coeffs[len + idx] *= m;
    }
    Ok(out)
}

fn derivative(grid: Grid, coeffs: &[Complex64], axis: Axis) -> Vec<Complex64> {
    let a = match axis {
        Axis::X => 0,
        Axis::Y => 1,
        Axis::Z => 2,
    };
    coeffs
        .iter()
        .zip(&grid.modes().k)
        .map(|(c, k)| Complex64::new(-c.im * k[a], c.re * k[a]))
        .collect()
}

fn laplacian(grid: Grid, coeffs: &[Complex64]) -> Vec<Complex64> {
    coeffs
        .iter()
        .zip(&grid.modes().k2)
        .map(|(c, k2)| -c * k2)
        .collect()
}

/// Native-grid samples of two real fields via one packed transform.
fn sample_pair(grid: Grid, band: Band, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let packed = transform::pack_pair(a, b);
    let values = transform::to_physical(&packed, grid.dims(), grid.dims(), band);
    values.into_iter().map(|c| (c.re, c.im)).unzip()
}

/// Forward transform of two real native-grid fields, truncated to `band`.
fn analyse_pair(grid: Grid, band: Band, a: &[f64], b: &[f64]) -> SpectralField {
    let data = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
    let packed = transform::to_spectral(data, grid.dims(), grid.dims(), band);
    let (a, b) = transform::unpack_pair(&packed, grid.dims(), band);
    SpectralField::from_components(grid, a, b)
}

/// Velocity, its horizontal gradient and the diagnostic `w`, sampled on the
/// native grid from the band-limited part of a field.
struct Samples {
    grid: Grid,
    band: Band,
    v: [Vec<f64>; 2],
    /// `grad[i][j] = d_j v_i` with `j` over `x, y`.
    grad: [[Vec<f64>; 2]; 2],
    truncated: SpectralField,
}

impl Samples {
    fn new(v: &SpectralField, rule: DealiasRule) -> Result<Self> {
        let g = v.grid;
        let band = rule.band(g);
        let mut t = v.clone();
        t.truncate(band);
        let (v1, v2) = sample_pair(g, band, t.component(0), t.component(1));
        let d = |c: usize, a: Axis| derivative(g, t.component(c), a);
        let (d1x, d1y) = sample_pair(g, band, &d(0, Axis::X), &d(0, Axis::Y));
        let (d2x, d2y) = sample_pair(g, band, &d(1, Axis::X), &d(1, Axis::Y));
        Ok(Samples {
            grid: g,
            band,
            v: [v1, v2],
            grad: [[d1x, d1y], [d2x, d2y]],
            truncated: t,
        })
    }

    fn w(&self) -> Result<Vec<f64>> {
        let w = grid::compute_w(&self.truncated)?;
        let zero = vec![Complex64::default(); self.grid.len()];
        Ok(sample_pair(self.grid, self.band, &w.coeffs, &zero).0)
    }

    fn dz(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        sample_pair(
            g,
            self.band,
            &derivative(g, self.truncated.component(0), Axis::Z),
            &derivative(g, self.truncated.component(1), Axis::Z),
        )
    }
}

/// `N(v) = v . grad_h v + w d_z v`, with products formed on the native grid
/// from the dealiased field and the result truncated by the same rule.
/// The result is not projected.
pub fn nonlinear_term(v: &SpectralField, rule: DealiasRule) -> Result<SpectralField> {
    let s = Samples::new(v, rule)?;
    let w = s.w()?;
    let (dz1, dz2) = s.dz();
    let dz = [dz1, dz2];
    let npts = s.grid.len();
    let mut out = [vec![0.0; npts], vec![0.0; npts]];
    for c in 0..2 {
        let (gx, gy) = (&s.grad[c][0], &s.grad[c][1]);
        for p in 0..npts {
            out[c][p] = s.v[0][p] * gx[p] + s.v[1][p] * gy[p] + w[p] * dz[c][p];
        }
    }
    Ok(analyse_pair(s.grid, s.band, &out[0], &out[1]))
}

/// Which barotropic source drives the pressure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PressureSource {
    /// `v . grad_h v + v (grad_h . v)`, the flux-divergence form.
    FluxDivergence,
    /// `v . grad_h v + w d_z v`, equal after vertical averaging for `v` in `H`.
    Advective,
}

/// `grad_h p` with `-Delta_h p = grad_h . <s>` and zero-mean `p`, where
/// `<s>` is the vertical average of the source.
pub fn pressure_gradient(v: &SpectralField, rule: DealiasRule) -> Result<SpectralField> {
    pressure_gradient_from(v, rule, PressureSource::FluxDivergence)
}

pub fn pressure_gradient_from(
    v: &SpectralField,
    rule: DealiasRule,
    source: PressureSource,
) -> Result<SpectralField> {
    grid::check_in_h(v)?;
    let bracket = match source {
        PressureSource::Advective => nonlinear_term(v, rule)?,
        PressureSource::FluxDivergence => {
            let s = Samples::new(v, rule)?;
            let npts = s.grid.len();
            let mut out = [vec![0.0; npts], vec![0.0; npts]];
            for c in 0..2 {
                for p in 0..npts {
                    let div = s.grad[0][0][p] + s.grad[1][1][p];
                    out[c][p] =
                        s.v[0][p] * s.grad[c][0][p] + s.v[1][p] * s.grad[c][1][p] + s.v[c][p] * div;
                }
            }
            analyse_pair(s.grid, s.band, &out[0], &out[1])
        }
    };
    Ok(barotropic_gradient(&bracket))
}

/// `grad_h p` solving `-Delta_h p = grad_h . (m = 0 slice of f)`.
fn barotropic_gradient(f: &SpectralField) -> SpectralField {
    let g = f.grid;
    let len = g.len();
    let mut out = SpectralField::zeros(g);
    for idx in 0..len {
        let n = g.mode_at(idx);
        if n[2] != 0 || (n[0] == 0 && n[1] == 0) {
            continue;
        }
        let k = wavevector(n);
        let kh2 = k[0] * k[0] + k[1] * k[1];
        let along = (f.coeffs[idx] * k[0] + f.coeffs[len + idx] * k[1]) / kh2;
        out.coeffs[idx] = -along * k[0];
        out.coeffs[len + idx] = -along * k[1];
    }
    out
}

/// The pressure itself (zero horizontal mean), for diagnostics.
pub fn pressure(v: &SpectralField, rule: DealiasRule) -> Result<SpectralScalar> {
    let grad = pressure_gradient(v, rule)?;
    let g = v.grid;
    let len = g.len();
    let mut p = SpectralScalar::zeros(g);
    for idx in 0..len {
        let n = g.mode_at(idx);
        if n[2] != 0 || (n[0] == 0 && n[1] == 0) {
            continue;
        }
        let k = wavevector(n);
        let kh2 = k[0] * k[0] + k[1] * k[1];
        // grad p = i k p  =>  p = -i k . grad p / |k|^2
        p.coeffs[idx] = -I * (grad.coeffs[idx] * k[0] + grad.coeffs[len + idx] * k[1]) / kh2;
    }
    Ok(p)
}

/// Transport part of the vorticity equation,
/// `v . grad_h q + w d_z q + q . grad_h v - (grad_h . v) q` with `q = d_z v`.
pub fn vorticity_transport(v: &SpectralField, rule: DealiasRule) -> Result<SpectralField> {
    let s = Samples::new(v, rule)?;
    let g = s.grid;
    let w = s.w()?;
    let t = &s.truncated;
    let q = [
        derivative(g, t.component(0), Axis::Z),
        derivative(g, t.component(1), Axis::Z),
    ];
    let (q1, q2) = sample_pair(g, s.band, &q[0], &q[1]);
    let (q1x, q1y) = sample_pair(g, s.band, &derivative(g, &q[0], Axis::X), &derivative(g, &q[0], Axis::Y));
    let (q2x, q2y) = sample_pair(g, s.band, &derivative(g, &q[1], Axis::X), &derivative(g, &q[1], Axis::Y));
    let (q1z, q2z) = sample_pair(g, s.band, &derivative(g, &q[0], Axis::Z), &derivative(g, &q[1], Axis::Z));
    let qs = [q1, q2];
    let qgrad = [[q1x, q1y], [q2x, q2y]];
    let qz = [q1z, q2z];
    let npts = g.len();
    let mut out = [vec![0.0; npts], vec![0.0; npts]];
    for c in 0..2 {
        for p in 0..npts {
            let div = s.grad[0][0][p] + s.grad[1][1][p];
            out[c][p] = s.v[0][p] * qgrad[c][0][p]
                + s.v[1][p] * qgrad[c][1][p]
                + w[p] * qz[c][p]
                + qs[0][p] * s.grad[c][0][p]
                + qs[1][p] * s.grad[c][1][p]
                - div * qs[c][p];
        }
    }
    Ok(analyse_pair(g, s.band, &out[0], &out[1]))
}

/// Drift of `d_z v`:
/// `-[v . grad_h q + w d_z q + q . grad_h v - (grad_h . v) q - Delta q]`.
pub fn vorticity_rhs(v: &SpectralField, rule: DealiasRule) -> Result<SpectralField> {
    let mut out = vorticity_transport(v, rule)?;
    out.scale(-1.0);
    let g = v.grid;
    let mut t = v.clone();
    t.truncate(rule.band(g));
    for c in 0..2 {
        let lap = laplacian(g, &derivative(g, t.component(c), Axis::Z));
        for (o, l) in out.component_mut(c).iter_mut().zip(lap) {
            *o += l;
        }
    }
    Ok(out)
}

/// `d_z` of a field (componentwise), as a convenience for diagnostics.
pub fn dz(v: &SpectralField) -> SpectralField {
    let g = v.grid;
    SpectralField::from_components(
        g,
        derivative(g, v.component(0), Axis::Z),
        derivative(g, v.component(1), Axis::Z),
    )
}
