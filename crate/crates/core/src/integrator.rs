//! Exponential Euler-Maruyama time stepping:
//!
//! `v+ = P_H T_K exp(dt Delta) [v - dt P_H N(v) + sigma(v) dW]`
//!
//! where `T_K` is the dealiasing truncation. Diffusion is exact, the drift
//! and the noise are explicit.

use crate::error::{Error, Result};
use crate::functionals::{self, StateFunctionals, StepNorms};
use crate::grid::{self, Grid, SpectralField};
use crate::noise::{self, NoiseModel, WienerIncrement};
use crate::rng::StreamRng;
use crate::spectral_ops::{self, DealiasRule};
use crate::stopping::{PathPoint, StoppingConfig, StoppingRecord};
use crate::transform::Band;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub dealias: DealiasRule,
    /// Fractional exponent of the `L_eps` observables.
    pub epsilon: f64,
    /// Observers and recorded samples fire every this many steps.
    pub observer_stride: usize,
    pub seed: u64,
    /// `false` drops the advection term, leaving the Stokes/OU dynamics.
    pub nonlinear: bool,
    /// Evaluate the full [`StateFunctionals`] at every recorded sample.
    pub record_functionals: bool,
    /// Keep a copy of the state at every recorded sample.
    pub record_snapshots: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        SolverConfig {
            dt,
            t_end,
            dealias: DealiasRule::default(),
            epsilon: 0.0,
            observer_stride: 1,
            seed: 0,
            nonlinear: true,
            record_functionals: false,
            record_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("solver.dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "solver.t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if !(0.0..=functionals::EPSILON_MAX).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "solver.epsilon must lie in [0, 1/42], got {}",
                self.epsilon
            )));
        }
        if self.observer_stride == 0 {
            return Err(Error::InvalidConfig("solver.observer_stride must be positive".into()));
        }
        let n = self.t_end / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "solver.t_end = {} is not a whole number of steps of {}",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Advective stability bound `0.5 dx / max|v|` of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preflight {
    pub dt_max: f64,
    pub max_speed: f64,
}

pub fn preflight(v: &SpectralField) -> Preflight {
    let g = v.grid;
    let p = grid::to_physical(v, g.dims());
    let (a, b) = p.values.split_at(p.points());
    let max_speed = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x * x + y * y).sqrt()));
    let dx = (1.0 / g.nx as f64).min(1.0 / g.ny as f64).min(2.0 / g.nz as f64);
    Preflight {
        dt_max: if max_speed > 0.0 { 0.5 * dx / max_speed } else { f64::INFINITY },
        max_speed,
    }
}

/// One recorded point of the energy bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// `||v||^2`
    pub e2: f64,
    /// `||grad v||^2`
    pub ebar2: f64,
    /// `||Delta v||^2`
    pub lbar2: f64,
    /// `int_0^t ||grad v||^2`, left endpoint.
    pub grad_int: f64,
    /// `int_0^t ||sigma(v)||_HS^2`, left endpoint.
    pub hs_int: f64,
    /// `sum <sigma(v_n) dW_n, v_n>`
    pub martingale: f64,
}

impl Sample {
    pub fn h2_norm(&self) -> f64 {
        (self.e2 + self.ebar2 + self.lbar2).sqrt()
    }

    /// `||v(t)||^2 + 2 int ||grad v||^2 - ||v(0)||^2 - int ||sigma||_HS^2`.
    pub fn energy_residual(&self, e2_initial: f64) -> f64 {
        self.e2 + 2.0 * self.grad_int - e2_initial - self.hs_int
    }
}

pub trait Observer {
    fn observe(&mut self, t: f64, v: &SpectralField) -> Result<()>;
}

impl<F: FnMut(f64, &SpectralField) -> Result<()>> Observer for F {
    fn observe(&mut self, t: f64, v: &SpectralField) -> Result<()> {
        self(t, v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub samples: Vec<Sample>,
    pub functionals: Vec<StateFunctionals>,
    pub snapshots: Vec<SpectralField>,
    pub final_state: SpectralField,
    pub stopping: Option<StoppingRecord>,
}

impl Trajectory {
    pub fn initial_energy(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.e2)
    }
}

/// Fixed per-run data for advancing one step.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    pub cfg: SolverConfig,
    pub model: &'a NoiseModel,
    heat: Vec<f64>,
    band: Band,
}

/// What a step needs to report besides the new state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepIncrement {
    pub hs: f64,
    pub martingale: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: Grid, cfg: SolverConfig, model: &'a NoiseModel) -> Result<Self> {
        cfg.validate()?;
        let heat = grid.k2_table().iter().map(|k2| (-k2 * cfg.dt).exp()).collect();
        Ok(Stepper {
            cfg,
            model,
            heat,
            band: cfg.dealias.band(grid),
        })
    }

    /// Advances `v` in place by one step with the given increments.
    pub fn step(&self, v: &mut SpectralField, inc: &WienerIncrement, t: f64) -> Result<StepIncrement> {
        let g = v.grid;
        if g.len() != self.heat.len() {
            return Err(Error::GridMismatch(format!(
                "stepper built for {} modes, state has {}",
                self.heat.len(),
                g.len()
            )));
        }
        let mut report = StepIncrement::default();
        let forcing = if self.model.is_empty() {
            None
        } else {
            let f = noise::apply_sigma(self.model, v, inc)?;
            report.hs = noise::hs_norm_sq(self.model, v);
            report.martingale = f.inner(v);
            Some(f)
        };
        if self.cfg.nonlinear {
            let n = spectral_ops::nonlinear_term(v, self.cfg.dealias)?;
            v.axpy(-self.cfg.dt, &grid::leray_project(&n));
        }
        if let Some(f) = forcing {
            v.axpy(1.0, &f);
        }
        let len = g.len();
        for (idx, h) in self.heat.iter().enumerate() {
            v.coeffs[idx] *= h;
            v.coeffs[len + idx] *= h;
        }
        v.truncate(self.band);
        *v = grid::leray_project(v);
        if !v.is_finite() {
            return Err(Error::NonFinite { time: t + self.cfg.dt });
        }
        Ok(report)
    }
}

/// Resumable state of one trajectory.
#[derive(Clone, Debug)]
pub struct RunState {
    pub step: usize,
    pub v: SpectralField,
    pub rng: StreamRng,
    pub grad_int: f64,
    pub hs_int: f64,
    pub martingale: f64,
    pub trajectory: Trajectory,
}

impl RunState {
    pub fn new(v0: SpectralField, cfg: &SolverConfig, stopping: Option<StoppingConfig>) -> Result<Self> {
        grid::check_in_h(&v0)?;
        if v0.mean_magnitude() > grid::CONSTRAINT_TOL * v0.norm().max(1.0) {
            return Err(Error::DomainError("initial state has nonzero mean".into()));
        }
        Ok(RunState {
            step: 0,
            rng: StreamRng::new(cfg.seed),
            grad_int: 0.0,
            hs_int: 0.0,
            martingale: 0.0,
            trajectory: Trajectory {
                times: Vec::new(),
                samples: Vec::new(),
                functionals: Vec::new(),
                snapshots: Vec::new(),
                final_state: v0.clone(),
                stopping: stopping.map(StoppingRecord::new),
            },
            v: v0,
        })
    }

    pub fn time(&self, cfg: &SolverConfig) -> f64 {
        cfg.time_of(self.step)
    }

    /// Bookkeeping at the current step: stopping update every step,
    /// samples and observers at the stride.
    fn record(
        &mut self,
        stepper: &Stepper,
        norms: &StepNorms,
        observers: &mut [&mut dyn Observer],
    ) -> Result<()> {
        let cfg = &stepper.cfg;
        let t = self.time(cfg);
        if let Some(r) = self.trajectory.stopping.as_mut() {
            r.update(PathPoint::new(t, norms))?;
        }
        let last = self.step == cfg.steps();
        if self.step % cfg.observer_stride == 0 || last {
            let tr = &mut self.trajectory;
            tr.times.push(t);
            tr.samples.push(Sample {
                t,
                e2: norms.e2,
                ebar2: norms.ebar2,
                lbar2: norms.lbar2,
                grad_int: self.grad_int,
                hs_int: self.hs_int,
                martingale: self.martingale,
            });
            if cfg.record_functionals {
                tr.functionals.push(functionals::compute_functionals(&self.v, cfg.epsilon)?);
            }
            if cfg.record_snapshots {
                tr.snapshots.push(self.v.clone());
            }
            for o in observers.iter_mut() {
                o.observe(t, &self.v)?;
            }
        }
        Ok(())
    }

    /// Step norms the stopping record needs; the `L^6` quadrature is only
    /// paid for when stopping times are tracked.
    fn norms(&self) -> StepNorms {
        if self.trajectory.stopping.is_some() {
            StepNorms::of(&self.v)
        } else {
            StepNorms::quadratic(&self.v)
        }
    }

    /// Records the initial state. Called once before the first step.
    pub fn start(&mut self, stepper: &Stepper, observers: &mut [&mut dyn Observer]) -> Result<()> {
        let norms = self.norms();
        self.record(stepper, &norms, observers)
    }

    /// Advances with externally supplied increments (for coupled runs).
    pub fn advance_with(
        &mut self,
        stepper: &Stepper,
        inc: &WienerIncrement,
        norms: &StepNorms,
        observers: &mut [&mut dyn Observer],
    ) -> Result<StepNorms> {
        let cfg = &stepper.cfg;
        let t = self.time(cfg);
        let report = stepper.step(&mut self.v, inc, t)?;
        self.grad_int += norms.ebar2 * cfg.dt;
        self.hs_int += report.hs * cfg.dt;
        self.martingale += report.martingale;
        self.step += 1;
        let next = self.norms();
        self.record(stepper, &next, observers)?;
        Ok(next)
    }

    /// Runs up to (not past) `until` steps, drawing increments from the
    /// run's own stream.
    pub fn advance_to(
        &mut self,
        stepper: &Stepper,
        until: usize,
        observers: &mut [&mut dyn Observer],
    ) -> Result<()> {
        let until = until.min(stepper.cfg.steps());
        let mut norms = self.norms();
        while self.step < until {
            let inc = if stepper.model.is_empty() {
                WienerIncrement::zeros(0)
            } else {
                noise::sample_increment(stepper.model, stepper.cfg.dt, &mut self.rng)?
            };
            norms = self.advance_with(stepper, &inc, &norms, observers)?;
        }
        Ok(())
    }

    pub fn finished(&self, cfg: &SolverConfig) -> bool {
        self.step >= cfg.steps()
    }

    pub fn into_trajectory(self) -> Trajectory {
        let mut tr = self.trajectory;
        tr.final_state = self.v;
        tr
    }
}

/// Runs one trajectory from `v0`.
pub fn integrate(
    v0: &SpectralField,
    cfg: &SolverConfig,
    model: &NoiseModel,
    stopping: Option<StoppingConfig>,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let stepper = Stepper::new(v0.grid, *cfg, model)?;
    check_stability(v0, cfg)?;
    let mut run = RunState::new(v0.clone(), cfg, stopping)?;
    run.start(&stepper, observers)?;
    run.advance_to(&stepper, cfg.steps(), observers)?;
    Ok(run.into_trajectory())
}

pub fn check_stability(v0: &SpectralField, cfg: &SolverConfig) -> Result<()> {
    if !cfg.nonlinear {
        return Ok(());
    }
    let pf = preflight(v0);
    if cfg.dt > pf.dt_max {
        return Err(Error::InvalidConfig(format!(
            "dt = {} exceeds the advective bound {:.3e} (max |v0| = {:.3e})",
            cfg.dt, pf.dt_max, pf.max_speed
        )));
    }
    Ok(())
}

/// Output of a coupled run.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    pub a: Trajectory,
    pub b: Trajectory,
    pub times: Vec<f64>,
    /// `||grad (v_a - v_b)||^2` at the recorded times.
    pub grad_diff_sq: Vec<f64>,
}

/// Two trajectories driven by one increment stream.
pub fn coupled_pair_integrate(
    v0a: &SpectralField,
    v0b: &SpectralField,
    cfg: &SolverConfig,
    model: &NoiseModel,
) -> Result<CoupledRun> {
    v0a.check_grid(v0b)?;
    let stepper = Stepper::new(v0a.grid, *cfg, model)?;
    check_stability(v0a, cfg)?;
    check_stability(v0b, cfg)?;
    let mut a = RunState::new(v0a.clone(), cfg, None)?;
    let mut b = RunState::new(v0b.clone(), cfg, None)?;
    let mut rng = StreamRng::new(cfg.seed);
    let mut times = Vec::new();
    let mut diff = Vec::new();
    let mut push = |t: f64, va: &SpectralField, vb: &SpectralField| {
        times.push(t);
        diff.push(StepNorms::quadratic(&(va - vb)).ebar2);
    };
    a.start(&stepper, &mut [])?;
    b.start(&stepper, &mut [])?;
    push(0.0, &a.v, &b.v);
    let (mut na, mut nb) = (a.norms(), b.norms());
    while !a.finished(cfg) {
        let inc = if model.is_empty() {
            WienerIncrement::zeros(0)
        } else {
            noise::sample_increment(model, cfg.dt, &mut rng)?
        };
        na = a.advance_with(&stepper, &inc, &na, &mut [])?;
        nb = b.advance_with(&stepper, &inc, &nb, &mut [])?;
        if a.step % cfg.observer_stride == 0 || a.finished(cfg) {
            push(a.time(cfg), &a.v, &b.v);
        }
    }
    Ok(CoupledRun {
        a: a.into_trajectory(),
        b: b.into_trajectory(),
        times,
        grad_diff_sq: diff,
    })
}

/// Exact one-mode decay factor used by the linear checks.
pub fn heat_factor(n: [i64; 3], t: f64) -> f64 {
    let k = grid::wavevector(n);
    (-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_field_in_h;
    use crate::noise::{Gain, ModeSpec, Polarization};
    use rustfft::num_complex::Complex64;

    fn g16() -> Grid {
        Grid::cube(16).unwrap()
    }

    fn small_field(g: Grid, seed: u64) -> SpectralField {
        let mut v = random_field_in_h(g, seed, 2.0).unwrap();
        v.scale(0.5 / v.norm());
        v
    }

    #[test]
    fn zero_state_without_noise_stays_zero() {
        let g = Grid::cube(8).unwrap();
        let cfg = SolverConfig::new(1e-3, 0.01);
        let tr = integrate(&SpectralField::zeros(g), &cfg, &NoiseModel::none(), None, &mut []).unwrap();
        assert_eq!(tr.final_state, SpectralField::zeros(g));
        assert_eq!(tr.times.len(), 11);
    }

    #[test]
    fn linear_mode_decays_exactly() {
        let g = Grid::cube(8).unwrap();
        let mut v = SpectralField::zeros(g);
        v.set_real_mode(0, [0, 1, 1], Complex64::new(0.3, 0.0));
        let mut cfg = SolverConfig::new(1e-2, 0.01);
        cfg.nonlinear = false;
        let tr = integrate(&v, &cfg, &NoiseModel::none(), None, &mut []).unwrap();
        let expect = 0.3 * heat_factor([0, 1, 1], 0.01);
        let got = tr.final_state.get(0, [0, 1, 1]).re;
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn t_end_zero_records_only_the_initial_state() {
        let g = Grid::cube(8).unwrap();
        let v = small_field(g, 1);
        let cfg = SolverConfig::new(1e-3, 0.0);
        let tr = integrate(&v, &cfg, &NoiseModel::none(), None, &mut []).unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.final_state, v);
    }

    #[test]
    fn runs_are_deterministic() {
        let g = Grid::cube(8).unwrap();
        let model = NoiseModel::default_spectrum(g, 8, 0.5, Gain::Bounded).unwrap();
        let mut cfg = SolverConfig::new(1e-3, 0.05);
        cfg.seed = 11;
        cfg.record_functionals = true;
        cfg.observer_stride = 10;
        let v = small_field(g, 2);
        let stop = Some(StoppingConfig::new(1.0, 1.0, 1.0).unwrap());
        let a = integrate(&v, &cfg, &model, stop, &mut []).unwrap();
        let b = integrate(&v, &cfg, &model, stop, &mut []).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        let c = integrate(&v, &cfg, &model, stop, &mut []).unwrap();
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn energy_decreases_without_noise() {
        let g = g16();
        for seed in 0..10 {
            let mut v = random_field_in_h(g, seed, 1.0).unwrap();
            v.scale(2.0 / v.norm());
            let mut cfg = SolverConfig::new(1e-3, 0.02);
            cfg.observer_stride = 1;
            let tr = integrate(&v, &cfg, &NoiseModel::none(), None, &mut []).unwrap();
            for w in tr.samples.windows(2) {
                assert!(w[1].e2 <= w[0].e2, "seed {seed}: {} > {}", w[1].e2, w[0].e2);
            }
        }
    }

    #[test]
    fn mean_constraint_and_parity_are_preserved() {
        let g = g16();
        let model = NoiseModel::default_spectrum(g, 16, 0.5, Gain::Additive).unwrap();
        let v = small_field(g, 4);
        let v = {
            // even part in z
            let p = grid::restrict(&v);
            grid::even_extend(&p).unwrap()
        };
        let v = grid::leray_project(&v);
        let mut worst = (0.0f64, 0.0f64, 0.0f64);
        let mut watch = |_t: f64, u: &SpectralField| -> Result<()> {
            worst.0 = worst.0.max(grid::mean_divergence_norm(u) / u.norm().max(1e-300));
            worst.1 = worst.1.max(u.mean_magnitude());
            worst.2 = worst.2.max(u.even_defect() / u.norm().max(1e-300));
            Ok(())
        };
        let mut cfg = SolverConfig::new(1e-3, 0.05);
        cfg.seed = 3;
        integrate(&v, &cfg, &model, None, &mut [&mut watch]).unwrap();
        assert!(worst.0 <= 1e-10, "{worst:?}");
        assert!(worst.1 <= 1e-12, "{worst:?}");
        assert!(worst.2 <= 1e-10, "{worst:?}");
    }

    #[test]
    fn observers_fire_at_the_stride() {
        let g = Grid::cube(8).unwrap();
        let mut seen = Vec::new();
        let mut obs = |t: f64, _: &SpectralField| -> Result<()> {
            seen.push(t);
            Ok(())
        };
        let mut cfg = SolverConfig::new(1e-3, 0.01);
        cfg.observer_stride = 4;
        integrate(&small_field(g, 0), &cfg, &NoiseModel::none(), None, &mut [&mut obs]).unwrap();
        let expect = [0.0, 0.004, 0.008, 0.01];
        assert_eq!(seen.len(), expect.len());
        for (a, b) in seen.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn split_run_equals_uninterrupted_run() {
        let g = Grid::cube(8).unwrap();
        let model = NoiseModel::default_spectrum(g, 6, 0.3, Gain::Additive).unwrap();
        let mut cfg = SolverConfig::new(1e-3, 0.02);
        cfg.seed = 9;
        let v = small_field(g, 5);
        let stop = Some(StoppingConfig::new(1.0, 0.1, 0.1).unwrap());
        let whole = integrate(&v, &cfg, &model, stop, &mut []).unwrap();
        let stepper = Stepper::new(g, cfg, &model).unwrap();
        let mut run = RunState::new(v, &cfg, stop).unwrap();
        run.start(&stepper, &mut []).unwrap();
        run.advance_to(&stepper, 7, &mut []).unwrap();
        let mut resumed = run.clone();
        resumed.advance_to(&stepper, cfg.steps(), &mut []).unwrap();
        assert_eq!(resumed.into_trajectory(), whole);
    }

    #[test]
    fn coupled_identical_starts_stay_identical() {
        let g = Grid::cube(8).unwrap();
        let model = NoiseModel::default_spectrum(g, 6, 0.3, Gain::Additive).unwrap();
        let mut cfg = SolverConfig::new(1e-3, 0.02);
        cfg.seed = 2;
        let v = small_field(g, 6);
        let run = coupled_pair_integrate(&v, &v, &cfg, &model).unwrap();
        assert!(run.grad_diff_sq.iter().all(|d| *d == 0.0));
        assert_eq!(run.a, run.b);
    }

    #[test]
    fn linear_difference_ignores_noise_amplitude() {
        let g = Grid::cube(8).unwrap();
        let specs = [ModeSpec { n1: 1, n2: 0, m: 1, pol: Polarization::X, alpha: 0.4 }];
        let m1 = NoiseModel::from_specs(g, &specs, Gain::Additive).unwrap();
        let m2 = NoiseModel::from_specs(g, &[ModeSpec { alpha: 0.8, ..specs[0] }], Gain::Additive).unwrap();
        let mut cfg = SolverConfig::new(1e-3, 0.05);
        cfg.nonlinear = false;
        let va = small_field(g, 7);
        let mut vb = va.clone();
        vb.axpy(1e-3, &small_field(g, 8));
        let r1 = coupled_pair_integrate(&va, &vb, &cfg, &m1).unwrap();
        let r2 = coupled_pair_integrate(&va, &vb, &cfg, &m2).unwrap();
        for (x, y) in r1.grad_diff_sq.iter().zip(&r2.grad_diff_sq) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn unstable_dt_is_rejected() {
        let g = g16();
        let mut v = random_field_in_h(g, 0, 1.0).unwrap();
        v.scale(1e3 / v.norm());
        let cfg = SolverConfig::new(1e-2, 0.01);
        assert!(matches!(
            integrate(&v, &cfg, &NoiseModel::none(), None, &mut []),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(1e-3, 0.0015).validate().is_err());
        let mut c = SolverConfig::new(1e-3, 1.0);
        c.epsilon = 0.5;
        assert!(c.validate().is_err());
        c.epsilon = functionals::EPSILON_MAX;
        assert!(c.validate().is_ok());
        assert_eq!(c.steps(), 1000);
    }
}
