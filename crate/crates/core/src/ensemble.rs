//! Monte Carlo ensembles: independent trajectories from a common initial
//! state, ensemble means with standard errors, the energy balance in
//! expectation, time-averaged tail profiles and stopping-time tables.
//!
//! Member `k` draws its increments from `splitmix64(base_seed + k)`.
//! Members run in parallel but every statistic is reduced in member order,
//! so results do not depend on scheduling.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::functionals::StateFunctionals;
use crate::grid::SpectralField;
use crate::integrator::{self, RunState, SolverConfig, Stepper, Trajectory};
use crate::noise::NoiseModel;
use crate::rng;
use crate::stats::MeanSe;
use crate::stopping::{self, Exceedance, HitTimes, StoppingConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub members: usize,
    pub base_seed: u64,
    pub solver: SolverConfig,
    pub noise: NoiseModel,
    pub stopping: Option<StoppingConfig>,
    /// Radii of the time-averaged tail profile.
    pub radii: Vec<f64>,
    /// Steps between checkpoints; zero disables them.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl EnsembleConfig {
    pub fn new(members: usize, base_seed: u64, solver: SolverConfig, noise: NoiseModel) -> Self {
        EnsembleConfig {
            members,
            base_seed,
            solver,
            noise,
            stopping: None,
            radii: Vec::new(),
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::EmptyEnsemble);
        }
        self.solver.validate()?;
        if self.radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidConfig("ensemble radii must be >= 0".into()));
        }
        if self.checkpoint_every > 0 && self.checkpoint_path.is_none() {
            return Err(Error::InvalidConfig(
                "checkpoint_every is set but no checkpoint path was given".into(),
            ));
        }
        Ok(())
    }

    /// Solver settings of member `k`.
    pub fn member_solver(&self, k: usize) -> SolverConfig {
        SolverConfig {
            seed: rng::member_seed(self.base_seed, k),
            ..self.solver
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Trajectory>,
    pub stats: EnsembleStats,
}

/// Runs all members from `v0`.
pub fn run_ensemble(cfg: &EnsembleConfig, v0: &SpectralField) -> Result<Ensemble> {
    let states = initial_states(cfg, v0)?;
    drive(cfg, v0, states)
}

/// Member states at step zero with the initial sample recorded.
pub fn initial_states(cfg: &EnsembleConfig, v0: &SpectralField) -> Result<Vec<RunState>> {
    cfg.validate()?;
    integrator::check_stability(v0, &cfg.solver)?;
    (0..cfg.members)
        .map(|k| {
            let solver = cfg.member_solver(k);
            let stepper = Stepper::new(v0.grid, solver, &cfg.noise)?;
            let mut s = RunState::new(v0.clone(), &solver, cfg.stopping)?;
            s.start(&stepper, &mut [])?;
            Ok(s)
        })
        .collect()
}

/// Advances every member to step `target` (capped at the run length).
pub fn advance_members(
    cfg: &EnsembleConfig,
    v0: &SpectralField,
    states: &mut [RunState],
    target: usize,
) -> Result<()> {
    let results: Vec<Result<()>> = states
        .par_iter_mut()
        .enumerate()
        .map(|(k, s)| {
            let stepper = Stepper::new(v0.grid, cfg.member_solver(k), &cfg.noise)?;
            s.advance_to(&stepper, target, &mut [])
        })
        .collect();
    for (member, r) in results.into_iter().enumerate() {
        if let Err(e) = r {
            return Err(Error::MemberFailed {
                member,
                source: Box::new(e),
            });
        }
    }
    Ok(())
}

/// Continues a run from a checkpoint written by [`run_ensemble`] with the
/// same configuration and initial state.
pub fn resume_ensemble(cfg: &EnsembleConfig, v0: &SpectralField, ck: Checkpoint) -> Result<Ensemble> {
    cfg.validate()?;
    let expected = checkpoint::config_hash(cfg, v0);
    if ck.config_hash != expected {
        return Err(Error::CorruptCheckpoint(
            "checkpoint was written for a different configuration".into(),
        ));
    }
    if ck.members.len() != cfg.members {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint holds {} members, config asks for {}",
            ck.members.len(),
            cfg.members
        )));
    }
    drive(cfg, v0, ck.members)
}

fn drive(cfg: &EnsembleConfig, v0: &SpectralField, mut states: Vec<RunState>) -> Result<Ensemble> {
    let total = cfg.solver.steps();
    let epoch = if cfg.checkpoint_every > 0 { cfg.checkpoint_every } else { total.max(1) };
    let hash = checkpoint::config_hash(cfg, v0);
    loop {
        let step = states.iter().map(|s| s.step).min().unwrap_or(total);
        if step >= total {
            break;
        }
        let target = (step / epoch + 1) * epoch;
        advance_members(cfg, v0, &mut states, target)?;
        if let (true, Some(path)) = (cfg.checkpoint_every > 0, &cfg.checkpoint_path) {
            checkpoint::save(path, &Checkpoint {
                config_hash: hash,
                members: states.clone(),
            })?;
        }
    }
    let members: Vec<Trajectory> = states.into_iter().map(RunState::into_trajectory).collect();
    let stats = compute_stats(&members, cfg)?;
    Ok(Ensemble { members, stats })
}

/// Column names of the per-time observable table, after `t`.
pub const OBSERVABLES: [&str; 11] = ["E", "Ebar", "J", "K", "L", "Lbar", "L_eps", "Y", "X", "Xbar", "phiX"];

pub fn observable_row(f: &StateFunctionals) -> [f64; 11] {
    [f.e, f.ebar, f.j, f.k, f.l, f.lbar, f.l_eps, f.y, f.x, f.xbar, f.phi_x]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KbPoint {
    pub radius: f64,
    /// Fraction of `(member, sample)` pairs with `||v||_{H^2} >= radius`.
    pub fraction: f64,
    /// Standard error of the member-level time fractions.
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub members: usize,
    pub times: Vec<f64>,
    /// `||v||^2`
    pub e2: Vec<MeanSe>,
    /// `||grad v||^2`
    pub ebar2: Vec<MeanSe>,
    /// `||v||_{H^2}`
    pub h2: Vec<MeanSe>,
    /// Means of [`OBSERVABLES`] per time; empty unless functionals were recorded.
    pub observables: Vec<Vec<MeanSe>>,
    /// `log(1 + Xbar)`; empty unless functionals were recorded.
    pub log1p_xbar: Vec<MeanSe>,
    pub energy_residual: Vec<MeanSe>,
    pub martingale: Vec<MeanSe>,
    pub kb_profile: Vec<KbPoint>,
    /// Stopping-time exceedance at the final time.
    pub exceedance: Option<Exceedance>,
}

impl EnsembleStats {
    /// Energy residual and its standard error at each recorded time.
    pub fn energy_balance_report(&self) -> Vec<(f64, MeanSe)> {
        self.times.iter().copied().zip(self.energy_residual.iter().copied()).collect()
    }

    /// Largest `|mean| / se` of the martingale over time (0 when `se` is 0).
    pub fn martingale_z(&self) -> f64 {
        self.martingale
            .iter()
            .map(|m| match m.se {
                Some(se) if se > 0.0 => m.mean.abs() / se,
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }
}

fn per_time(members: &[Trajectory], f: impl Fn(&Trajectory, usize) -> f64) -> Vec<MeanSe> {
    let n = members[0].times.len();
    (0..n)
        .map(|i| {
            let xs: Vec<f64> = members.iter().map(|m| f(m, i)).collect();
            MeanSe::of(&xs)
        })
        .collect()
}

pub fn compute_stats(members: &[Trajectory], cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    let first = members.first().ok_or(Error::EmptyEnsemble)?;
    if members.iter().any(|m| m.times != first.times) {
        return Err(Error::DomainError("members were recorded at different times".into()));
    }
    let with_functionals = members.iter().all(|m| m.functionals.len() == m.times.len());
    let observables = if with_functionals {
        (0..first.times.len())
            .map(|i| {
                (0..OBSERVABLES.len())
                    .map(|c| {
                        let xs: Vec<f64> =
                            members.iter().map(|m| observable_row(&m.functionals[i])[c]).collect();
                        MeanSe::of(&xs)
                    })
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let log1p_xbar = if with_functionals {
        per_time(members, |m, i| m.functionals[i].xbar.ln_1p())
    } else {
        Vec::new()
    };
    let t_end = *first.times.last().unwrap_or(&0.0);
    let exceedance = if cfg.stopping.is_some() {
        Some(stopping::exceedance_of(&hit_times(members), t_end)?)
    } else {
        None
    };
    Ok(EnsembleStats {
        members: members.len(),
        times: first.times.clone(),
        e2: per_time(members, |m, i| m.samples[i].e2),
        ebar2: per_time(members, |m, i| m.samples[i].ebar2),
        h2: per_time(members, |m, i| m.samples[i].h2_norm()),
        observables,
        log1p_xbar,
        energy_residual: per_time(members, |m, i| {
            m.samples[i].energy_residual(m.initial_energy())
        }),
        martingale: per_time(members, |m, i| m.samples[i].martingale),
        kb_profile: kb_profile(members, &cfg.radii, f64::INFINITY),
        exceedance,
    })
}

/// Hit times of every member that tracked stopping times.
pub fn hit_times(members: &[Trajectory]) -> Vec<HitTimes> {
    members
        .iter()
        .filter_map(|m| m.stopping.as_ref().map(|r| r.hits))
        .collect()
}

/// `mu_T(B_R^c)`: the fraction of recorded samples with `t < T` (all
/// samples when `T` is infinite) at which `||v||_{H^2} >= R`, uniformly
/// weighted.
pub fn kb_profile(members: &[Trajectory], radii: &[f64], t_window: f64) -> Vec<KbPoint> {
    radii
        .iter()
        .map(|&radius| {
            let fractions: Vec<f64> = members
                .iter()
                .filter_map(|m| {
                    let inside: Vec<_> = m
                        .samples
                        .iter()
                        .filter(|s| t_window.is_infinite() || s.t < t_window)
                        .collect();
                    if inside.is_empty() {
                        return None;
                    }
                    let hits = inside.iter().filter(|s| s.h2_norm() >= radius).count();
                    Some(hits as f64 / inside.len() as f64)
                })
                .collect();
            let m = MeanSe::of(&fractions);
            KbPoint {
                radius,
                fraction: m.mean,
                se: m.se,
            }
        })
        .collect()
}

/// `(1/T) int_0^T f dt` from uniformly weighted samples with `t < T`.
pub fn time_average(times: &[f64], values: &[f64], t_window: f64) -> Option<f64> {
    let inside: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t < t_window)
        .map(|(_, v)| *v)
        .collect();
    (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Member-level time averages of `log(1 + Xbar)` over `[0, T)`, as a mean
/// with standard error.
pub fn log_xbar_average(members: &[Trajectory], t_window: f64) -> Option<MeanSe> {
    let per: Option<Vec<f64>> = members
        .iter()
        .map(|m| {
            let v: Vec<f64> = m.functionals.iter().map(|f| f.xbar.ln_1p()).collect();
            time_average(&m.times, &v, t_window)
        })
        .collect();
    per.map(|p| MeanSe::of(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{random_field_in_h, Grid};
    use crate::noise::Gain;

    fn base(members: usize) -> (EnsembleConfig, SpectralField) {
        let g = Grid::cube(8).unwrap();
        let mut solver = SolverConfig::new(1e-3, 0.02);
        solver.observer_stride = 5;
        solver.record_functionals = true;
        let noise = NoiseModel::default_spectrum(g, 6, 0.5, Gain::Additive).unwrap();
        let mut cfg = EnsembleConfig::new(members, 42, solver, noise);
        cfg.stopping = Some(StoppingConfig::new(5.0, 1.0, 1.0).unwrap());
        cfg.radii = vec![0.0, 1.0, 1e9];
        let mut v0 = random_field_in_h(g, 3, 2.0).unwrap();
        v0.scale(0.3 / v0.norm());
        (cfg, v0)
    }

    #[test]
    fn single_member_has_no_standard_error() {
        let (cfg, v0) = base(1);
        let e = run_ensemble(&cfg, &v0).unwrap();
        let s = &e.stats;
        assert_eq!(s.members, 1);
        assert!(s.e2.iter().all(|m| m.se.is_none() && m.mean.is_finite()));
        assert_eq!(s.e2.last().unwrap().mean, e.members[0].samples.last().unwrap().e2);
    }

    #[test]
    fn noise_off_gives_identical_members() {
        let (mut cfg, v0) = base(3);
        cfg.noise = NoiseModel::none();
        let e = run_ensemble(&cfg, &v0).unwrap();
        assert_eq!(e.members[0].final_state, e.members[2].final_state);
        assert!(e.stats.e2.iter().all(|m| m.se == Some(0.0)));
    }

    #[test]
    fn kb_profile_edges_and_monotonicity() {
        let (cfg, v0) = base(4);
        let e = run_ensemble(&cfg, &v0).unwrap();
        let p = &e.stats.kb_profile;
        assert_eq!(p[0].fraction, 1.0);
        assert_eq!(p[2].fraction, 0.0);
        let radii: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let prof = kb_profile(&e.members, &radii, f64::INFINITY);
        for w in prof.windows(2) {
            assert!(w[1].fraction <= w[0].fraction);
        }
    }

    #[test]
    fn member_seeds_differ_and_results_are_reproducible() {
        let (cfg, v0) = base(3);
        let a = run_ensemble(&cfg, &v0).unwrap();
        let b = run_ensemble(&cfg, &v0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.members[0].final_state, a.members[1].final_state);
    }

    #[test]
    fn failures_name_the_member() {
        let (mut cfg, v0) = base(2);
        cfg.solver.epsilon = 0.5;
        assert!(run_ensemble(&cfg, &v0).is_err());
        let (mut cfg, v0) = base(0);
        cfg.members = 0;
        assert!(matches!(run_ensemble(&cfg, &v0), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn time_average_is_left_riemann() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(time_average(&t, &v, 2.0), Some(1.5));
        assert_eq!(time_average(&t, &v, 0.0), None);
    }
}
