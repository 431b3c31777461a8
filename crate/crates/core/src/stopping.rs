//! The three stopping times watched along a trajectory:
//!
//! * `sigma_gamma`: first `t` with `sup_{s<=t} ||v||_6^4 + int_0^t ||d_z v||^2 ||grad d_z v||^2 > gamma`,
//! * `tau_kappa`: first `t` with `int_0^t (||grad v||^2 + ||Delta v||^2 + ||grad v||^2 ||Delta v||^2) > kappa`,
//! * `rho_lambda`: first `t` with `t ||v(t)||_{H^2}^2 >= lambda` (and positive).
//!
//! Integrals use the left-endpoint rule on the step grid. Every step's
//! inputs are kept in a path so hit times for other thresholds can be
//! recomputed offline with exactly the same arithmetic.

use crate::error::{Error, Result};
use crate::functionals::{self, StepNorms};
use crate::grid::SpectralField;
use crate::stats::{wilson_interval, Z95};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingConfig {
    pub gamma: f64,
    pub kappa: f64,
    pub lambda: f64,
}

impl StoppingConfig {
    /// Thresholds must be finite and nonnegative; zero gives the degenerate
    /// "stop as soon as anything moves" times.
    pub fn new(gamma: f64, kappa: f64, lambda: f64) -> Result<Self> {
        for (name, x) in [("gamma", gamma), ("kappa", kappa), ("lambda", lambda)] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "stopping.{name} must be finite and >= 0, got {x}"
                )));
            }
        }
        Ok(StoppingConfig { gamma, kappa, lambda })
    }

    /// Warning text when `gamma < 2 + ||v0||_6^4`.
    pub fn gamma_warning(&self, v0: &SpectralField) -> Option<String> {
        let floor = 2.0 + functionals::l6_pow6(v0, functionals::DEFAULT_OVERSAMPLE).powf(2.0 / 3.0);
        (self.gamma < floor).then(|| {
            format!(
                "stopping.gamma = {} is below 2 + ||v0||_6^4 = {floor:.6}",
                self.gamma
            )
        })
    }
}

/// Per-step inputs of the stopping statistics, evaluated at the left
/// endpoint `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub l6_4: f64,
    /// `||d_z v||^2 ||grad d_z v||^2`
    pub sigma_rate: f64,
    /// `||grad v||^2 + ||Delta v||^2 + ||grad v||^2 ||Delta v||^2`
    pub tau_rate: f64,
    pub h2_sq: f64,
}

impl PathPoint {
    pub fn new(t: f64, n: &StepNorms) -> Self {
        PathPoint {
            t,
            l6_4: n.l6_4,
            sigma_rate: n.vz2 * n.grad_vz2,
            tau_rate: n.ebar2 + n.lbar2 + n.ebar2 * n.lbar2,
            h2_sq: n.h2_sq(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitTimes {
    pub sigma: f64,
    pub tau: f64,
    pub rho: f64,
}

impl HitTimes {
    pub const NEVER: HitTimes = HitTimes {
        sigma: f64::INFINITY,
        tau: f64::INFINITY,
        rho: f64::INFINITY,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingRecord {
    pub config: StoppingConfig,
    pub running_sup_l6_4: f64,
    pub running_int_sigma: f64,
    pub running_int_tau: f64,
    pub sup_t_h2: f64,
    pub hits: HitTimes,
    pub path: Vec<PathPoint>,
    last: Option<PathPoint>,
}

impl StoppingRecord {
    pub fn new(config: StoppingConfig) -> Self {
        StoppingRecord {
            config,
            running_sup_l6_4: 0.0,
            running_int_sigma: 0.0,
            running_int_tau: 0.0,
            sup_t_h2: 0.0,
            hits: HitTimes::NEVER,
            path: Vec::new(),
            last: None,
        }
    }

    /// Folds in the state at time `t`. The integrals first advance over
    /// `[t_prev, t]` with the previous point's rates, then the thresholds
    /// are tested at `t`.
    pub fn update(&mut self, point: PathPoint) -> Result<()> {
        if let Some(prev) = self.last {
            if !(point.t > prev.t) {
                return Err(Error::DomainError(format!(
                    "stopping times need increasing t, got {} after {}",
                    point.t, prev.t
                )));
            }
        }
        advance(self, point);
        self.path.push(point);
        Ok(())
    }

    pub fn hit_sigma(&self) -> f64 {
        self.hits.sigma
    }

    pub fn hit_tau(&self) -> f64 {
        self.hits.tau
    }

    pub fn hit_rho(&self) -> f64 {
        self.hits.rho
    }

    /// Rebuilds a record by feeding a stored path through [`Self::update`].
    pub fn replay(config: StoppingConfig, path: &[PathPoint]) -> Result<Self> {
        let mut r = StoppingRecord::new(config);
        for p in path {
            r.update(*p)?;
        }
        Ok(r)
    }

    /// Hit times of the stored path under other thresholds.
    pub fn recompute(&self, config: StoppingConfig) -> HitTimes {
        let mut r = StoppingRecord::new(config);
        for p in &self.path {
            advance(&mut r, *p);
        }
        r.hits
    }
}

fn advance(r: &mut StoppingRecord, p: PathPoint) {
    if let Some(prev) = r.last {
        let dt = p.t - prev.t;
        r.running_int_sigma += prev.sigma_rate * dt;
        r.running_int_tau += prev.tau_rate * dt;
    }
    r.last = Some(p);
    r.running_sup_l6_4 = r.running_sup_l6_4.max(p.l6_4);
    let t_h2 = p.t * p.h2_sq;
    r.sup_t_h2 = r.sup_t_h2.max(t_h2);
    let c = r.config;
    if r.hits.sigma.is_infinite() && r.running_sup_l6_4 + r.running_int_sigma > c.gamma {
        r.hits.sigma = p.t;
    }
    if r.hits.tau.is_infinite() && r.running_int_tau > c.kappa {
        r.hits.tau = p.t;
    }
    if r.hits.rho.is_infinite() && t_h2 >= c.lambda && t_h2 > 0.0 {
        r.hits.rho = p.t;
    }
}

/// Empirical probability with its Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportion {
    pub hits: usize,
    pub trials: usize,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(hits: usize, trials: usize) -> Self {
        let (lo, hi) = wilson_interval(hits, trials, Z95);
        Proportion {
            hits,
            trials,
            p: hits as f64 / trials as f64,
            lo,
            hi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exceedance {
    pub t: f64,
    /// `P[sigma_gamma <= t]`
    pub sigma: Proportion,
    /// `P[tau_kappa < t]`
    pub tau: Proportion,
    /// `P[rho_lambda < t]`
    pub rho: Proportion,
}

pub fn empirical_exceedance(records: &[StoppingRecord], t: f64) -> Result<Exceedance> {
    let hits: Vec<HitTimes> = records.iter().map(|r| r.hits).collect();
    exceedance_of(&hits, t)
}

pub fn exceedance_of(hits: &[HitTimes], t: f64) -> Result<Exceedance> {
    if hits.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = hits.len();
    let count = |f: &dyn Fn(&HitTimes) -> bool| hits.iter().filter(|h| f(h)).count();
    Ok(Exceedance {
        t,
        sigma: Proportion::new(count(&|h| h.sigma <= t), n),
        tau: Proportion::new(count(&|h| h.tau < t), n),
        rho: Proportion::new(count(&|h| h.rho < t), n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{random_field_in_h, Grid};

    fn cfg(g: f64, k: f64, l: f64) -> StoppingConfig {
        StoppingConfig::new(g, k, l).unwrap()
    }

    fn synthetic_path(n: usize) -> Vec<PathPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.01;
                let s = (1.0 + (3.0 * t).sin()).powi(2);
                PathPoint {
                    t,
                    l6_4: s,
                    sigma_rate: 2.0 * s,
                    tau_rate: 5.0 * s + 1.0,
                    h2_sq: 10.0 * s,
                }
            })
            .collect()
    }

    fn record_of(path: &[PathPoint], c: StoppingConfig) -> StoppingRecord {
        let mut r = StoppingRecord::new(c);
        for p in path {
            r.update(*p).unwrap();
        }
        r
    }

    #[test]
    fn zero_trajectory_never_hits() {
        let g = Grid::cube(8).unwrap();
        let v = SpectralField::zeros(g);
        let mut r = StoppingRecord::new(cfg(1.0, 1.0, 1.0));
        for i in 0..10 {
            r.update(PathPoint::new(i as f64 * 0.1, &StepNorms::of(&v))).unwrap();
        }
        assert_eq!(r.hits, HitTimes::NEVER);
        let r0 = r.recompute(cfg(0.0, 0.0, 0.0));
        assert_eq!(r0, HitTimes::NEVER);
    }

    #[test]
    fn zero_thresholds_hit_immediately() {
        let path = synthetic_path(5);
        let r = record_of(&path, cfg(0.0, 0.0, 0.0));
        assert_eq!(r.hits.sigma, 0.0);
        // the integral and t * H^2 are still zero at t = 0
        assert_eq!(r.hits.tau, path[1].t);
        assert_eq!(r.hits.rho, path[1].t);
    }

    #[test]
    fn running_statistics_are_monotone() {
        let path = synthetic_path(200);
        let mut r = StoppingRecord::new(cfg(1e9, 1e9, 1e9));
        let mut last = (0.0, 0.0, 0.0, 0.0);
        for p in &path {
            r.update(*p).unwrap();
            let now = (r.running_sup_l6_4, r.running_int_sigma, r.running_int_tau, r.sup_t_h2);
            assert!(now.0 >= last.0 && now.1 >= last.1 && now.2 >= last.2 && now.3 >= last.3);
            last = now;
        }
        // left-endpoint rule
        let expect: f64 = path.windows(2).map(|w| w[0].tau_rate * (w[1].t - w[0].t)).sum();
        assert!((r.running_int_tau - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn offline_recomputation_is_exact() {
        let path = synthetic_path(300);
        for c in [cfg(3.0, 2.0, 5.0), cfg(10.0, 30.0, 0.5), cfg(1e9, 1e9, 1e9)] {
            let r = record_of(&path, c);
            assert_eq!(record_of(&path, cfg(1e9, 1e9, 1e9)).recompute(c), r.hits);
        }
    }

    #[test]
    fn decreasing_time_is_rejected() {
        let mut r = StoppingRecord::new(cfg(1.0, 1.0, 1.0));
        let p = synthetic_path(2);
        r.update(p[1]).unwrap();
        assert!(r.update(p[0]).is_err());
    }

    #[test]
    fn exceedance_edges() {
        assert!(matches!(exceedance_of(&[], 1.0), Err(Error::EmptyEnsemble)));
        let never = vec![HitTimes::NEVER; 8];
        let e = exceedance_of(&never, 1.0).unwrap();
        assert_eq!((e.sigma.p, e.tau.p, e.rho.p), (0.0, 0.0, 0.0));
        let path = synthetic_path(20);
        let hits: Vec<_> = (0..8).map(|_| record_of(&path, cfg(0.0, 0.0, 0.0)).hits).collect();
        let e = exceedance_of(&hits, 1.0).unwrap();
        assert_eq!((e.sigma.p, e.tau.p, e.rho.p), (1.0, 1.0, 1.0));
        assert!(e.tau.lo > 0.6 && e.tau.hi == 1.0);
    }

    #[test]
    fn gamma_warning() {
        let g = Grid::cube(8).unwrap();
        let v = random_field_in_h(g, 0, 1.0).unwrap();
        assert!(cfg(1.0, 1.0, 1.0).gamma_warning(&v).is_some());
        assert!(cfg(1e6, 1.0, 1.0).gamma_warning(&v).is_none());
        assert!(StoppingConfig::new(-1.0, 1.0, 1.0).is_err());
        assert!(StoppingConfig::new(1.0, f64::NAN, 1.0).is_err());
    }

    mod nesting {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hit_times_nest_in_thresholds(
                a in 0.0f64..50.0, b in 0.0f64..50.0, len in 2usize..200,
            ) {
                let path = synthetic_path(len);
                let r = record_of(&path, cfg(1e9, 1e9, 1e9));
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let h_lo = r.recompute(cfg(lo, lo, lo));
                let h_hi = r.recompute(cfg(hi, hi, hi));
                prop_assert!(h_lo.sigma <= h_hi.sigma);
                prop_assert!(h_lo.tau <= h_hi.tau);
                prop_assert!(h_lo.rho <= h_hi.rho);
            }
        }
    }
}
