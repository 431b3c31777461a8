//! Small sample statistics used across the Monte Carlo harness.

/// Sample mean and standard error `s / sqrt(n)`; the error is `None` for
/// fewer than two samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: Option<f64>,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: None,
                n,
            };
        }
        if xs.iter().all(|x| *x == xs[0]) {
            return MeanSe {
                mean: xs[0],
                se: (n > 1).then_some(0.0),
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        MeanSe { mean, se, n }
    }

    /// Standard error with the single-sample case mapped to zero.
    pub fn se_or_zero(&self) -> f64 {
        self.se.unwrap_or(0.0)
    }

    /// `|mean - target| <= k * se`, treating a missing error as zero.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se_or_zero()
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        let single = MeanSe::of(&[3.0]);
        assert_eq!(single.se, None);
        assert!(single.within(3.0, 3.0));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 64, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.1);
        let (lo, hi) = wilson_interval(64, 64, Z95);
        assert!(lo > 0.9 && (hi - 1.0).abs() < 1e-12);
        let (lo, hi) = wilson_interval(20, 100, Z95);
        assert!(lo < 0.2 && 0.2 < hi);
    }
}
