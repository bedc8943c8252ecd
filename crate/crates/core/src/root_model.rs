//! Univariate probabilistic forecasters for the root series.
//!
//! The top-down pipeline only needs sample trajectories of the root, so any
//! model implementing [`RootForecaster`] can drive it. Two are built in: a
//! seasonal-naive forecaster with bootstrapped residuals and a Gaussian
//! autoregression fitted by least squares.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::lstsq;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// `n_samples × F` root trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    samples: Matrix,
}

impl PathEnsemble {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::Dimension(
                "path ensemble needs at least one sample and one step".into(),
            ));
        }
        if !samples.is_finite() {
            return Err(Error::Numerical("path ensemble has non-finite values".into()));
        }
        Ok(Self { samples })
    }

    /// Every sample equals `path`.
    pub fn deterministic(path: &[f64], n_samples: usize) -> Result<Self> {
        Self::new(Matrix::from_fn(n_samples, path.len(), |_, s| path[s]))
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn horizon(&self) -> usize {
        self.samples.cols()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            samples: self.samples.scale(c),
        }
    }
}

pub trait RootForecaster: Send + Sync + std::fmt::Debug {
    /// Noise-free point forecast for steps `1..=horizon`.
    fn point_forecast(&self, horizon: usize) -> Vec<f64>;

    /// Independent trajectories; the result depends only on the generator state.
    fn sample_paths(&self, horizon: usize, n_samples: usize, rng: &mut dyn RngCore) -> Result<PathEnsemble>;
}

/// `ŷ_{T+h} = y_{T+h−m⌈h/m⌉}` plus residuals resampled from the in-sample
/// seasonal differences `y_t − y_{t−m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalNaive {
    period: usize,
    last_season: Vec<f64>,
    residuals: Vec<f64>,
}

pub fn fit_seasonal_naive_bootstrap(series: &[f64], period: usize) -> Result<SeasonalNaive> {
    if period == 0 {
        return Err(Error::Config("seasonal period must be >= 1".into()));
    }
    if series.len() <= period {
        return Err(Error::Data(format!(
            "series of length {} is too short for seasonal period {period}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("root series has non-finite values".into()));
    }
    let residuals = (period..series.len()).map(|t| series[t] - series[t - period]).collect();
    Ok(SeasonalNaive {
        period,
        last_season: series[series.len() - period..].to_vec(),
        residuals,
    })
}

impl RootForecaster for SeasonalNaive {
    fn point_forecast(&self, horizon: usize) -> Vec<f64> {
        // last_season[k] is y_{T−m+k}; step h lands on k = (h−1) mod m
        (1..=horizon).map(|h| self.last_season[(h - 1) % self.period]).collect()
    }

    fn sample_paths(&self, horizon: usize, n_samples: usize, rng: &mut dyn RngCore) -> Result<PathEnsemble> {
        let point = self.point_forecast(horizon);
        let n_res = self.residuals.len();
        let samples = Matrix::from_fn(n_samples, horizon, |_, s| {
            point[s] + self.residuals[rng.random_range(0..n_res)]
        });
        PathEnsemble::new(samples)
    }
}

/// `y_t = c + Σ_k φ_k y_{t−k} + e_t`, `e_t ~ N(0, σ²)`; `c = 0` without drift.
#[derive(Debug, Clone, PartialEq)]
pub struct ArGaussian {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub sigma: f64,
    recent: Vec<f64>,
}

pub fn fit_ar_gaussian(series: &[f64], order: usize, with_drift: bool) -> Result<ArGaussian> {
    if order == 0 {
        return Err(Error::Config("autoregressive order must be >= 1".into()));
    }
    if series.len() <= 3 * order {
        return Err(Error::Data(format!(
            "series of length {} is too short for an AR({order}) fit",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("root series has non-finite values".into()));
    }
    let k = order + usize::from(with_drift);
    let n = series.len() - order;
    let design = DMatrix::from_fn(n, k, |i, j| {
        let t = i + order;
        match (with_drift, j) {
            (true, 0) => 1.0,
            (true, j) => series[t - j],
            (false, j) => series[t - j - 1],
        }
    });
    let target = DMatrix::from_fn(n, 1, |i, _| series[i + order]);
    let beta = lstsq(&design, &target)?;
    let resid = &target - &design * &beta;
    let dof = n.saturating_sub(k).max(1);
    let sigma = (resid.norm_squared() / dof as f64).sqrt();
    let (intercept, coefficients) = if with_drift {
        (beta[0], beta.iter().skip(1).copied().collect())
    } else {
        (0.0, beta.iter().copied().collect())
    };
    Ok(ArGaussian {
        coefficients,
        intercept,
        sigma,
        recent: series[series.len() - order..].to_vec(),
    })
}

impl ArGaussian {
    fn simulate(&self, horizon: usize, mut noise: impl FnMut() -> f64) -> Vec<f64> {
        let p = self.coefficients.len();
        let mut state = self.recent.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let n = state.len();
            let mean = self.intercept + (0..p).map(|k| self.coefficients[k] * state[n - 1 - k]).sum::<f64>();
            let y = mean + self.sigma * noise();
            state.push(y);
            out.push(y);
        }
        out
    }
}

impl RootForecaster for ArGaussian {
    fn point_forecast(&self, horizon: usize) -> Vec<f64> {
        self.simulate(horizon, || 0.0)
    }

    fn sample_paths(&self, horizon: usize, n_samples: usize, rng: &mut dyn RngCore) -> Result<PathEnsemble> {
        let mut data = Vec::with_capacity(n_samples * horizon);
        for _ in 0..n_samples {
            data.extend(self.simulate(horizon, || StandardNormal.sample(&mut *rng)));
        }
        PathEnsemble::new(Matrix::from_vec(n_samples, horizon, data))
    }
}

/// Root model choice as written in the pipeline config, e.g.
/// `{"kind":"seasonal_naive","period":7}` or `{"kind":"ar","order":2,"with_drift":true}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RootModelSpec {
    SeasonalNaive {
        period: usize,
    },
    Ar {
        order: usize,
        #[serde(default)]
        with_drift: bool,
    },
}

impl Default for RootModelSpec {
    fn default() -> Self {
        Self::SeasonalNaive { period: 7 }
    }
}

impl RootModelSpec {
    pub fn fit(&self, series: &[f64]) -> Result<Box<dyn RootForecaster>> {
        Ok(match *self {
            Self::SeasonalNaive { period } => Box::new(fit_seasonal_naive_bootstrap(series, period)?),
            Self::Ar { order, with_drift } => Box::new(fit_ar_gaussian(series, order, with_drift)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0];
        for _ in 1..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y.push(phi * y.last().unwrap() + e);
        }
        y
    }

    #[test]
    fn periodic_series_has_no_spread() {
        let y: Vec<f64> = (0..30).map(|t| [1.0, 5.0, 2.0][t % 3]).collect();
        let m = fit_seasonal_naive_bootstrap(&y, 3).unwrap();
        assert_eq!(m.point_forecast(5), vec![1.0, 5.0, 2.0, 1.0, 5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = m.sample_paths(5, 50, &mut rng).unwrap();
        for i in 0..50 {
            assert_eq!(e.path(i), &[1.0, 5.0, 2.0, 1.0, 5.0]);
        }
        let c = fit_seasonal_naive_bootstrap(&[4.0; 10], 7).unwrap();
        let e = c.sample_paths(3, 10, &mut rng).unwrap();
        assert!(e.samples().as_slice().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn seasonal_naive_errors() {
        assert!(fit_seasonal_naive_bootstrap(&[1.0; 7], 7).is_err());
        assert!(fit_seasonal_naive_bootstrap(&[1.0; 8], 0).is_err());
    }

    #[test]
    fn bootstrap_spread_matches_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 2.0;
        let y: Vec<f64> = (0..3000)
            .map(|t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                10.0 * ((t % 7) as f64) + sigma * e
            })
            .collect();
        let m = fit_seasonal_naive_bootstrap(&y, 7).unwrap();
        let e = m.sample_paths(1, 10_000, &mut rng).unwrap();
        let col = e.samples().column(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        let target = sigma * 2f64.sqrt();
        assert!((sd - target).abs() / target < 0.15, "{sd} vs {target}");
    }

    #[test]
    fn ar_estimates() {
        let fit = fit_ar_gaussian(&ar1(0.8, 2000, 2), 1, false).unwrap();
        assert!((fit.coefficients[0] - 0.8).abs() < 0.05, "{:?}", fit.coefficients);
        assert!((fit.sigma - 1.0).abs() < 0.1);
        let noise = fit_ar_gaussian(&ar1(0.0, 2000, 3), 1, true).unwrap();
        assert!(noise.coefficients[0].abs() < 0.1);
        assert!(noise.intercept.abs() < 0.2);
    }

    #[test]
    fn ar_errors() {
        assert!(fit_ar_gaussian(&[1.0, 2.0, 3.0], 1, false).is_err());
        // constant series with an intercept: the design is singular
        assert!(fit_ar_gaussian(&[3.0; 20], 1, true).is_err());
    }

    #[test]
    fn ar_paths() {
        let y = ar1(0.8, 500, 4);
        let fit = fit_ar_gaussian(&y, 1, false).unwrap();
        let sample = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fit.sample_paths(6, 4000, &mut rng).unwrap()
        };
        let a = sample(9);
        assert_eq!(a.samples().shape(), (4000, 6));
        assert_eq!(a, sample(9));
        assert_ne!(a, sample(10));

        let first = a.samples().column(0);
        let n = first.len() as f64;
        let mean = first.iter().sum::<f64>() / n;
        let expected = fit.coefficients[0] * y.last().unwrap();
        let se = fit.sigma / n.sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn spec_roundtrip() {
        let s: RootModelSpec = serde_json::from_str(r#"{"kind":"seasonal_naive","period":7}"#).unwrap();
        assert_eq!(s, RootModelSpec::SeasonalNaive { period: 7 });
        let a: RootModelSpec = serde_json::from_str(r#"{"kind":"ar","order":2}"#).unwrap();
        assert_eq!(
            a,
            RootModelSpec::Ar {
                order: 2,
                with_drift: false
            }
        );
        assert!(serde_json::from_str::<RootModelSpec>(r#"{"kind":"prophet"}"#).is_err());
    }
}
