//! Scalar observables of a single state: energy-type norms, the `L^6`,
//! `L^14` and vorticity functionals with their dissipative counterparts,
//! the aggregate `X`, `Y` quantities and their logarithms.
//!
//! Quadratic quantities use Parseval. `L^p` integrals and the gradients of
//! `|v|^7`, `|v|^3` and `|d_z v|^3` are evaluated pointwise on a uniformly
//! oversampled grid; the gradients use the chain rule, e.g.
//! `d_a |v|^7 = 7 |v|^5 (v . d_a v)`, so only band-limited fields are ever
//! transformed.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, SpectralField, VOLUME};
use crate::transform::{self, Band};

/// Oversampling factor per axis used for `L^p` quadrature.
pub const DEFAULT_OVERSAMPLE: usize = 2;

/// Largest admissible fractional exponent.
pub const EPSILON_MAX: f64 = 1.0 / 42.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateFunctionals {
    pub eps: f64,
    /// `||v||_2`
    pub e: f64,
    /// `||grad v||_2`
    pub ebar: f64,
    /// `||v||_14`
    pub j: f64,
    /// `||grad(|v|^7)||_2^(1/7)`
    pub jbar: f64,
    /// `||d_z v||_6`
    pub k: f64,
    /// `||grad(|d_z v|^3)||_2^(1/3)`
    pub kbar: f64,
    /// `||grad v||_2`, same as `ebar`
    pub l: f64,
    /// `||Delta v||_2`
    pub lbar: f64,
    /// `||D^eps grad v||_2`
    pub l_eps: f64,
    /// `||D^(1+eps) grad v||_2`
    pub lbar_eps: f64,
    /// `||v||_6^6 + ||d_z v||_2^2`
    pub y: f64,
    /// `||grad(|v|^3)||_2^2 + ||grad d_z v||_2^2`
    pub ybar: f64,
    pub x: f64,
    pub xbar: f64,
    pub x_eps: f64,
    pub xbar_eps: f64,
    /// `log(1 + X)`
    pub phi_x: f64,
    /// `log(1 + X_eps)`
    pub phi_x_eps: f64,
}

impl StateFunctionals {
    pub const FIELDS: usize = 19;

    /// All fields in declaration order.
    pub fn to_array(&self) -> [f64; Self::FIELDS] {
        [
            self.eps, self.e, self.ebar, self.j, self.jbar, self.k, self.kbar, self.l, self.lbar,
            self.l_eps, self.lbar_eps, self.y, self.ybar, self.x, self.xbar, self.x_eps,
            self.xbar_eps, self.phi_x, self.phi_x_eps,
        ]
    }

    pub fn from_array(a: [f64; Self::FIELDS]) -> Self {
        let [eps, e, ebar, j, jbar, k, kbar, l, lbar, l_eps, lbar_eps, y, ybar, x, xbar, x_eps, xbar_eps, phi_x, phi_x_eps] =
            a;
        StateFunctionals {
            eps, e, ebar, j, jbar, k, kbar, l, lbar, l_eps, lbar_eps, y, ybar, x, xbar, x_eps,
            xbar_eps, phi_x, phi_x_eps,
        }
    }

    /// `||v||_{H^2}^2` taken as `E^2 + Ebar^2 + Lbar^2`.
    pub fn h2_sq(&self) -> f64 {
        self.e * self.e + self.ebar * self.ebar + self.lbar * self.lbar
    }
}

/// Weighted sums of `|k|^(2 s) |v_k|^2` over both components.
pub(crate) fn parseval(v: &SpectralField, power: impl Fn(f64) -> f64) -> f64 {
    let g = v.grid;
    let len = g.len();
    let modes = g.modes();
    let mut s = 0.0;
    for idx in 0..len {
        let a = v.coeffs[idx].norm_sqr() + v.coeffs[len + idx].norm_sqr();
        if a != 0.0 {
            s += power(modes.k2[idx]) * a;
        }
    }
    VOLUME * s
}

fn derivative(grid: Grid, c: &[Complex64], axis: usize) -> Vec<Complex64> {
    c.iter()
        .zip(&grid.modes().k)
        .map(|(x, k)| Complex64::new(-x.im * k[axis], x.re * k[axis]))
        .collect()
}

/// Smallest band holding every nonzero coefficient, so transforms can skip
/// empty lines.
fn occupied_band(grid: Grid, c: &[Complex64]) -> Band {
    let mut kmax = [0usize; 3];
    let modes = grid.modes();
    for (idx, x) in c.iter().enumerate() {
        if *x != Complex64::default() {
            let n = modes.n[idx];
            for a in 0..3 {
                kmax[a] = kmax[a].max(n[a].unsigned_abs() as usize);
            }
        }
    }
    Band { kmax }
}

/// Fields sampled on a uniformly oversampled grid.
struct Fine {
    dims: [usize; 3],
    points: usize,
}

impl Fine {
    fn new(grid: Grid, oversample: usize) -> Self {
        let dims = grid.dims().map(|n| n * oversample.max(1));
        Fine {
            dims,
            points: dims[0] * dims[1] * dims[2],
        }
    }

    fn weight(&self) -> f64 {
        VOLUME / self.points as f64
    }

    fn pair(&self, grid: Grid, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let band = occupied_band(grid, a).union(occupied_band(grid, b));
        let packed = transform::pack_pair(a, b);
        transform::to_physical(&packed, grid.dims(), self.dims, band)
            .into_iter()
            .map(|c| (c.re, c.im))
            .unzip()
    }
}

/// `||v||_p` of the velocity magnitude on a grid oversampled by `oversample`.
pub fn lp_norm(v: &SpectralField, p: f64, oversample: usize) -> f64 {
    let fine = Fine::new(v.grid, oversample);
    let (a, b) = fine.pair(v.grid, v.component(0), v.component(1));
    let s: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x * x + y * y).powf(p / 2.0))
        .sum();
    (s * fine.weight()).powf(1.0 / p)
}

/// `||v||_6^6`; exact for fields inside the two-thirds band at the default
/// oversampling, since `|v|^6` then has no content at the fine-grid alias
/// frequencies.
pub fn l6_pow6(v: &SpectralField, oversample: usize) -> f64 {
    let fine = Fine::new(v.grid, oversample);
    let (a, b) = fine.pair(v.grid, v.component(0), v.component(1));
    let s: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let r2 = x * x + y * y;
            r2 * r2 * r2
        })
        .sum();
    s * fine.weight()
}

/// The cheap per-step quantities behind the energy law and the stopping
/// times.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepNorms {
    /// `||v||_2^2`
    pub e2: f64,
    /// `||grad v||_2^2`
    pub ebar2: f64,
    /// `||Delta v||_2^2`
    pub lbar2: f64,
    /// `||d_z v||_2^2`
    pub vz2: f64,
    /// `||grad d_z v||_2^2`
    pub grad_vz2: f64,
    /// `||v||_6^4`
    pub l6_4: f64,
}

impl StepNorms {
    pub fn of(v: &SpectralField) -> Self {
        let mut n = Self::quadratic(v);
        n.l6_4 = l6_pow6(v, DEFAULT_OVERSAMPLE).powf(2.0 / 3.0);
        n
    }

    /// Everything except `l6_4`, which is left at zero.
    pub fn quadratic(v: &SpectralField) -> Self {
        let g = v.grid;
        let len = g.len();
        let mut n = StepNorms::default();
        let modes = g.modes();
        for idx in 0..len {
            let a = v.coeffs[idx].norm_sqr() + v.coeffs[len + idx].norm_sqr();
            if a == 0.0 {
                continue;
            }
            let k = modes.k[idx];
            let kz2 = k[2] * k[2];
            let k2 = k[0] * k[0] + k[1] * k[1] + kz2;
            n.e2 += a;
            n.ebar2 += k2 * a;
            n.lbar2 += k2 * k2 * a;
            n.vz2 += kz2 * a;
            n.grad_vz2 += kz2 * k2 * a;
        }
        for q in [&mut n.e2, &mut n.ebar2, &mut n.lbar2, &mut n.vz2, &mut n.grad_vz2] {
            *q *= VOLUME;
        }
        n
    }

    /// `||v||_{H^2}^2 = E^2 + Ebar^2 + Lbar^2`.
    pub fn h2_sq(&self) -> f64 {
        self.e2 + self.ebar2 + self.lbar2
    }
}

pub fn compute_functionals(v: &SpectralField, eps: f64) -> Result<StateFunctionals> {
    compute_functionals_with(v, eps, DEFAULT_OVERSAMPLE)
}

pub fn compute_functionals_with(
    v: &SpectralField,
    eps: f64,
    oversample: usize,
) -> Result<StateFunctionals> {
    if !(0.0..=EPSILON_MAX).contains(&eps) {
        return Err(Error::DomainError(format!(
            "fractional exponent {eps} outside [0, 1/42]"
        )));
    }
    let g = v.grid;
    let e2 = parseval(v, |_| 1.0);
    let ebar2 = parseval(v, |k2| k2);
    let lbar2 = parseval(v, |k2| k2 * k2);
    let l_eps2 = parseval(v, |k2| k2.powf(1.0 + eps));
    let lbar_eps2 = parseval(v, |k2| k2.powf(2.0 + eps));
    let vz2 = parseval_dz(v, |_| 1.0);
    let grad_vz2 = parseval_dz(v, |k2| k2);

    let fine = Fine::new(g, oversample);
    let (v1, v2) = fine.pair(g, v.component(0), v.component(1));
    let dv: Vec<[Vec<f64>; 2]> = (0..3)
        .map(|a| {
            let (x, y) = fine.pair(
                g,
                &derivative(g, v.component(0), a),
                &derivative(g, v.component(1), a),
            );
            [x, y]
        })
        .collect();
    let q = [derivative(g, v.component(0), 2), derivative(g, v.component(1), 2)];
    let dq: Vec<[Vec<f64>; 2]> = (0..3)
        .map(|a| {
            let (x, y) = fine.pair(g, &derivative(g, &q[0], a), &derivative(g, &q[1], a));
            [x, y]
        })
        .collect();

    let (mut s14, mut s6, mut q6) = (0.0, 0.0, 0.0);
    let (mut grad_v7, mut grad_v3, mut grad_q3) = (0.0, 0.0, 0.0);
    for p in 0..fine.points {
        let (a, b) = (v1[p], v2[p]);
        let r2 = a * a + b * b;
        let r = r2.sqrt();
        let r6 = r2 * r2 * r2;
        s6 += r6;
        s14 += r6 * r6 * r2;
        let (qa, qb) = (dv[2][0][p], dv[2][1][p]);
        let s2 = qa * qa + qb * qb;
        let s = s2.sqrt();
        q6 += s2 * s2 * s2;
        for ax in 0..3 {
            // v . d_a v and q . d_a q
            let vd = a * dv[ax][0][p] + b * dv[ax][1][p];
            let qd = qa * dq[ax][0][p] + qb * dq[ax][1][p];
            let g7 = 7.0 * r2 * r2 * r * vd;
            let g3 = 3.0 * r * vd;
            let h3 = 3.0 * s * qd;
            grad_v7 += g7 * g7;
            grad_v3 += g3 * g3;
            grad_q3 += h3 * h3;
        }
    }
    let w = fine.weight();
    let (s14, s6, q6) = (s14 * w, s6 * w, q6 * w);
    let (grad_v7, grad_v3, grad_q3) = (grad_v7 * w, grad_v3 * w, grad_q3 * w);

    let j14 = s14;
    let k6 = q6;
    let x = j14 + k6 + ebar2;
    let xbar = grad_v7 + grad_q3 + lbar2;
    let x_eps = j14 + k6 + l_eps2;
    let xbar_eps = grad_v7 + grad_q3 + lbar_eps2;
    Ok(StateFunctionals {
        eps,
        e: e2.sqrt(),
        ebar: ebar2.sqrt(),
        j: j14.powf(1.0 / 14.0),
        jbar: grad_v7.sqrt().powf(1.0 / 7.0),
        k: k6.powf(1.0 / 6.0),
        kbar: grad_q3.sqrt().powf(1.0 / 3.0),
        l: ebar2.sqrt(),
        lbar: lbar2.sqrt(),
        l_eps: l_eps2.sqrt(),
        lbar_eps: lbar_eps2.sqrt(),
        y: s6 + vz2,
        ybar: grad_v3 + grad_vz2,
        x,
        xbar,
        x_eps,
        xbar_eps,
        phi_x: x.ln_1p(),
        phi_x_eps: x_eps.ln_1p(),
    })
}

/// Parseval sums for `d_z v`.
fn parseval_dz(v: &SpectralField, power: impl Fn(f64) -> f64) -> f64 {
    let g = v.grid;
    let len = g.len();
    let modes = g.modes();
    let mut s = 0.0;
    for idx in 0..len {
        let k = modes.k[idx];
        let a = v.coeffs[idx].norm_sqr() + v.coeffs[len + idx].norm_sqr();
        if a != 0.0 {
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            s += k[2] * k[2] * power(k2) * a;
        }
    }
    VOLUME * s
}

/// Outcome of the vertical-vorticity interpolation check for one exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationCheck {
    pub p: f64,
    /// `||d_z v_i||_p` for the worst component.
    pub lhs: f64,
    /// `((p-1)/3)^(1/4) ||v_i||_q^(1/4) ||d_z(|d_z v_i|^3)||_2^(1/4)`,
    /// `q = 2p/(8-p)`.
    pub rhs: f64,
    pub ratio: f64,
    pub component: usize,
}

/// Checks `||d_z v||_p <= C ||v||_{2p/(8-p)}^(1/4) ||d_z(|d_z v|^3)||_2^(1/4)`
/// with `C = ((p-1)/3)^(1/4)`, applied to each velocity component.
pub fn check_vorticity_interpolation(v: &SpectralField, p: f64) -> Result<InterpolationCheck> {
    Ok(check_vorticity_interpolation_with(v, &[p], DEFAULT_OVERSAMPLE)?[0])
}

pub fn check_vorticity_interpolation_with(
    v: &SpectralField,
    ps: &[f64],
    oversample: usize,
) -> Result<Vec<InterpolationCheck>> {
    if let Some(p) = ps.iter().find(|p| !(4.0..=8.0).contains(*p)) {
        return Err(Error::DomainError(format!("exponent {p} outside [4, 8]")));
    }
    let g = v.grid;
    let fine = Fine::new(g, oversample);
    let (v1, v2) = fine.pair(g, v.component(0), v.component(1));
    let q = [derivative(g, v.component(0), 2), derivative(g, v.component(1), 2)];
    let (q1, q2) = fine.pair(g, &q[0], &q[1]);
    let (qz1, qz2) = fine.pair(g, &derivative(g, &q[0], 2), &derivative(g, &q[1], 2));
    let comps = [(&v1, &q1, &qz1), (&v2, &q2, &qz2)];
    let w = fine.weight();

    let vz_norm = parseval_dz(v, |_| 1.0).sqrt();
    let scale = v.norm();
    if vz_norm == 0.0 || vz_norm <= 1e-14 * scale {
        return Err(Error::DegenerateInput("d_z v vanishes".into()));
    }

    let mut out = Vec::with_capacity(ps.len());
    for &p in ps {
        let c = ((p - 1.0) / 3.0).powf(0.25);
        let mut worst: Option<InterpolationCheck> = None;
        for (i, (vi, qi, qzi)) in comps.iter().enumerate() {
            let lhs_p: f64 = qi.iter().map(|x| x.abs().powf(p)).sum::<f64>() * w;
            if lhs_p == 0.0 {
                continue;
            }
            let lhs = lhs_p.powf(1.0 / p);
            let vq = if p >= 8.0 {
                vi.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            } else {
                let qexp = 2.0 * p / (8.0 - p);
                (vi.iter().map(|x| x.abs().powf(qexp)).sum::<f64>() * w).powf(1.0 / qexp)
            };
            let dz_cube: f64 = qi
                .iter()
                .zip(qzi.iter())
                .map(|(s, sz)| {
                    let d = 3.0 * s * s.abs() * sz;
                    d * d
                })
                .sum::<f64>()
                * w;
            let rhs = c * vq.powf(0.25) * dz_cube.sqrt().powf(0.25);
            let check = InterpolationCheck {
                p,
                lhs,
                rhs,
                ratio: lhs / rhs,
                component: i,
            };
            if worst.map_or(true, |w| check.ratio > w.ratio) {
                worst = Some(check);
            }
        }
        out.push(worst.ok_or_else(|| Error::DegenerateInput("d_z v vanishes".into()))?);
    }
    Ok(out)
}

/// Empirical constant in `J^14 <= C (Ebar^(14/3) Jbar^(28/3) + Ebar^14)`.
pub fn j_interpolation_ratio(f: &StateFunctionals) -> f64 {
    let j14 = f.j.powi(14);
    let denom = f.ebar.powf(14.0 / 3.0) * f.jbar.powf(28.0 / 3.0) + f.ebar.powi(14);
    j14 / denom
}

/// Empirical constant in `K^6 <= C (Ebar^(3/2) Kbar^(9/2) + Ebar^6)`.
pub fn k_interpolation_ratio(f: &StateFunctionals) -> f64 {
    let k6 = f.k.powi(6);
    let denom = f.ebar.powf(1.5) * f.kbar.powf(4.5) + f.ebar.powi(6);
    k6 / denom
}

/// Logged quantities entering the moment bounds at one time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogMoments {
    pub t: f64,
    pub phi_x: f64,
    pub phi_x_eps: f64,
    pub log1p_y: f64,
    pub log1p_xbar: f64,
}

impl LogMoments {
    pub fn from_functionals(t: f64, f: &StateFunctionals) -> Self {
        LogMoments {
            t,
            phi_x: f.phi_x,
            phi_x_eps: f.phi_x_eps,
            log1p_y: f.y.ln_1p(),
            log1p_xbar: f.xbar.ln_1p(),
        }
    }
}

/// Log-moment series from precomputed functionals.
pub fn log_moment_series(times: &[f64], functionals: &[StateFunctionals]) -> Vec<LogMoments> {
    times
        .iter()
        .zip(functionals)
        .map(|(&t, f)| LogMoments::from_functionals(t, f))
        .collect()
}

/// Log-moment series recomputed from stored snapshots.
pub fn log_moment_series_from_snapshots(
    times: &[f64],
    snapshots: &[SpectralField],
    eps: f64,
) -> Result<Vec<LogMoments>> {
    times
        .iter()
        .zip(snapshots)
        .map(|(&t, v)| Ok(LogMoments::from_functionals(t, &compute_functionals(v, eps)?)))
        .collect()
}
