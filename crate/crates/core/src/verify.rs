//! Invariant suites run by `stochpe verify` at a configured grid.

use std::fmt;
use std::str::FromStr;

use crate::ensemble::{self, EnsembleConfig};
use crate::error::Result;
use crate::functionals::{self, StepNorms};
use crate::grid::{self, Grid, SpectralField};
use crate::integrator::{self, SolverConfig, Stepper};
use crate::noise::{self, Gain, NoiseModel};
use crate::rng::StreamRng;
use crate::spectral_ops::{self, DealiasRule};
use crate::stats::MeanSe;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Structure,
    Noise,
    Inequalities,
    Balance,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["structure", "noise", "inequalities", "balance", "all"];
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "structure" => Ok(Suite::Structure),
            "noise" => Ok(Suite::Noise),
            "inequalities" => Ok(Suite::Inequalities),
            "balance" => Ok(Suite::Balance),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite {s:?}, expected one of {:?}", Suite::NAMES)),
        }
    }
}

/// One line of a verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `None` for purely informational values.
    pub pass: Option<bool>,
}

impl Check {
    fn bound(name: &str, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            pass: Some(value <= limit),
        }
    }

    fn flag(name: &str, value: f64, ok: bool) -> Self {
        Check {
            name: name.into(),
            value,
            pass: Some(ok),
        }
    }

    fn info(name: &str, value: f64) -> Self {
        Check {
            name: name.into(),
            value,
            pass: None,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pass {
            Some(p) => write!(
                f,
                "{}={}\n{}.value={:e}",
                self.name,
                if p { "pass" } else { "fail" },
                self.name,
                self.value
            ),
            None => write!(f, "{}={:e}", self.name, self.value),
        }
    }
}

/// Everything a suite needs from the run configuration.
#[derive(Clone, Debug)]
pub struct VerifyContext {
    pub grid: Grid,
    pub rule: DealiasRule,
    pub dt: f64,
    pub model: NoiseModel,
    pub seed: u64,
}

const FIELDS: u64 = 5;

fn fields(ctx: &VerifyContext) -> Result<Vec<SpectralField>> {
    (0..FIELDS)
        .map(|s| grid::random_field_in_h(ctx.grid, ctx.seed.wrapping_add(s), 1.0))
        .collect()
}

pub fn run(suite: Suite, ctx: &VerifyContext) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Structure => structure(ctx)?,
        Suite::Noise => noise_suite(ctx)?,
        Suite::Inequalities => inequalities(ctx)?,
        Suite::Balance => balance(ctx)?,
        Suite::All => {
            let mut all = structure(ctx)?;
            all.extend(noise_suite(ctx)?);
            all.extend(inequalities(ctx)?);
            all.extend(balance(ctx)?);
            all
        }
    })
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass != Some(false))
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        a.abs() / b
    }
}

pub fn structure(ctx: &VerifyContext) -> Result<Vec<Check>> {
    let (mut adv, mut press, mut idem, mut constraint, mut mean, mut roundtrip) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for v in fields(ctx)? {
        let n = spectral_ops::nonlinear_term(&v, ctx.rule)?;
        adv = adv.max(rel(n.inner(&v), n.norm() * v.norm()));
        let gp = spectral_ops::pressure_gradient(&v, ctx.rule)?;
        press = press.max(rel(gp.inner(&v), gp.norm() * v.norm()));

        let pn = grid::leray_project(&n);
        let ppn = grid::leray_project(&pn);
        idem = idem.max(rel((&ppn - &pn).norm(), pn.norm()));
        constraint = constraint.max(rel(grid::constraint_residual(&pn), n.norm()));
        mean = mean.max(pn.mean_magnitude());

        let back = grid::from_physical(&grid::to_physical(&v, ctx.grid.dims()))?;
        roundtrip = roundtrip.max(rel((&back - &v).norm(), v.norm()));
    }

    let mut v = grid::random_field_in_h(ctx.grid, ctx.seed, 1.0)?;
    let cfg = SolverConfig {
        dealias: ctx.rule,
        ..SolverConfig::new(ctx.dt, ctx.dt * 10.0)
    };
    let stepper = Stepper::new(ctx.grid, cfg, &ctx.model)?;
    let mut rng = StreamRng::new(ctx.seed);
    let mut step_constraint = 0.0f64;
    for i in 0..10 {
        let inc = noise::sample_increment(&ctx.model, ctx.dt, &mut rng)?;
        stepper.step(&mut v, &inc, i as f64 * ctx.dt)?;
        step_constraint = step_constraint.max(rel(grid::constraint_residual(&v), v.norm()));
    }

    Ok(vec![
        Check::bound("structure.advection_cancellation", adv, 1e-10),
        Check::bound("structure.pressure_cancellation", press, 1e-10),
        Check::bound("structure.projection_idempotent", idem, 1e-12),
        Check::bound("structure.projected_constraint", constraint, 1e-10),
        Check::bound("structure.projected_mean", mean, 1e-12),
        Check::bound("structure.transform_roundtrip", roundtrip, 1e-12),
        Check::bound("structure.step_constraint", step_constraint, 1e-10),
    ])
}

pub fn noise_suite(ctx: &VerifyContext) -> Result<Vec<Check>> {
    let report = noise::check_admissibility(&ctx.model, 20, ctx.seed)?;
    let mut out = vec![
        Check::info("noise.modes", ctx.model.len() as f64),
        Check::flag(
            "noise.shape_constraint",
            report.worst_constraint_residual,
            report.constraint_ok,
        ),
        Check::flag("noise.growth_l14", report.c_l14, report.bounds_ok),
        Check::flag("noise.growth_w1z6", report.c_w1z6, report.bounds_ok),
        Check::flag("noise.hs_bound", report.max_hs_sampled, report.small_ok),
        Check::info("noise.c_sigma", report.c_sigma),
        Check::info("noise.lipschitz_l2", report.lipschitz[0]),
    ];
    if !ctx.model.is_empty() {
        // dW_k / sqrt(dt) should be standard normal
        let draws = 4000;
        let mut rng = StreamRng::new(ctx.seed);
        let mut z = Vec::with_capacity(draws * ctx.model.len());
        for _ in 0..draws {
            let inc = noise::sample_increment(&ctx.model, ctx.dt, &mut rng)?;
            z.extend(inc.dw.iter().map(|w| w * w / ctx.dt));
        }
        let m = MeanSe::of(&z);
        let dev = (m.mean - 1.0).abs() / m.se_or_zero().max(f64::MIN_POSITIVE);
        out.push(Check::bound("noise.increment_variance_z", dev, 4.0));
    }
    Ok(out)
}

pub fn inequalities(ctx: &VerifyContext) -> Result<Vec<Check>> {
    let mut worst = [0.0f64; 3];
    let (mut j_ratio, mut k_ratio, mut poincare) = (0.0f64, 0.0f64, 0.0f64);
    let lambda1 = ctx.grid.lambda1();
    for v in fields(ctx)? {
        for c in functionals::check_vorticity_interpolation_with(&v, &[4.0, 6.0, 8.0], 2)? {
            let slot = ((c.p - 4.0) / 2.0) as usize;
            worst[slot] = worst[slot].max(c.ratio);
        }
        let f = functionals::compute_functionals(&v, 0.0)?;
        j_ratio = j_ratio.max(functionals::j_interpolation_ratio(&f));
        k_ratio = k_ratio.max(functionals::k_interpolation_ratio(&f));
        let n = StepNorms::quadratic(&v);
        poincare = poincare.max(lambda1 * n.e2 / n.ebar2);
    }
    Ok(vec![
        Check::bound("inequalities.vorticity_p4", worst[0], 1.0 + 1e-8),
        Check::bound("inequalities.vorticity_p6", worst[1], 1.0 + 1e-8),
        Check::bound("inequalities.vorticity_p8", worst[2], 1.0 + 1e-8),
        Check::bound("inequalities.poincare", poincare, 1.0 + 1e-12),
        Check::flag("inequalities.j_constant", j_ratio, j_ratio.is_finite()),
        Check::flag("inequalities.k_constant", k_ratio, k_ratio.is_finite()),
    ])
}

/// Energy bookkeeping: noise-free dissipation and a small ensemble check of
/// the expected energy balance after dt extrapolation.
pub fn balance(ctx: &VerifyContext) -> Result<Vec<Check>> {
    let mut v0 = grid::random_field_in_h(ctx.grid, ctx.seed, 2.0)?;
    v0.scale(1.0 / v0.norm());
    let none = NoiseModel::none();
    let steps = 20;
    let mut residuals = [0.0; 2];
    let mut monotone = true;
    for (i, dt) in [ctx.dt, ctx.dt / 2.0].into_iter().enumerate() {
        let cfg = SolverConfig {
            dealias: ctx.rule,
            ..SolverConfig::new(dt, ctx.dt * steps as f64)
        };
        let tr = integrator::integrate(&v0, &cfg, &none, None, &mut [])?;
        monotone &= tr.samples.windows(2).all(|w| w[1].e2 <= w[0].e2);
        residuals[i] = tr.samples.last().unwrap().energy_residual(tr.initial_energy());
    }
    // the scheme dissipates with first order error in dt
    let order = residuals[0] / residuals[1];

    let mut additive = ctx.model.clone();
    additive.gain = Gain::Additive;
    let members = 32;
    let t_end = ctx.dt * 40.0;
    let mut resid = Vec::new();
    let mut z_mart = 0.0f64;
    for dt in [ctx.dt, ctx.dt / 2.0] {
        let solver = SolverConfig {
            dealias: ctx.rule,
            observer_stride: usize::MAX,
            ..SolverConfig::new(dt, t_end)
        };
        let cfg = EnsembleConfig::new(members, ctx.seed, solver, additive.clone());
        let e = ensemble::run_ensemble(&cfg, &SpectralField::zeros(ctx.grid))?;
        resid.push(*e.stats.energy_residual.last().unwrap());
        z_mart = z_mart.max(e.stats.martingale_z());
    }
    let extrapolated = 2.0 * resid[1].mean - resid[0].mean;
    let se = (4.0 * resid[1].se_or_zero().powi(2) + resid[0].se_or_zero().powi(2)).sqrt();
    let z = if se > 0.0 { extrapolated.abs() / se } else { extrapolated.abs() };

    Ok(vec![
        Check::flag("balance.energy_monotone", residuals[0], monotone),
        Check::flag(
            "balance.residual_order",
            order,
            residuals[1] == 0.0 || (1.5..=2.5).contains(&order),
        ),
        Check::bound("balance.martingale_z", z_mart, 4.0),
        Check::bound("balance.expected_energy_z", z, 3.0),
    ])
}
