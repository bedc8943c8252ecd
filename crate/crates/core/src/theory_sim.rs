//! Monte Carlo comparison of bottom-up and top-down least squares on a
//! two-level linear hierarchy.
//!
//! A root `y₀ = θ₀ᵀx + η` is split among `K` children by Dirichlet
//! proportions `a ~ Dir(α)`, so child `i` has regression function
//! `p_i θ₀ᵀx` with `p_i = α_i / Σα`. Bottom-up fits every child by OLS;
//! top-down fits the root by OLS and scales it by the average observed
//! proportion. The closed forms below give the expected total excess risk
//! of top-down and a lower bound for bottom-up.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet;
use crate::linalg::lstsq;
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Student-t with `dof > 2`, rescaled to variance σ².
    StudentT {
        dof: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub sigma2: f64,
    /// Covariance of `x`, row-major `d×d`; identity when absent.
    #[serde(rename = "Sigma")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Root coefficients; `(1/√d, …, 1/√d)` when absent, so `θ₀ᵀθ₀ = 1`.
    pub theta0: Option<Vec<f64>>,
    /// Dirichlet parameters; `1/K` each when absent.
    pub alpha: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseKind,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d: 5,
            k: 20,
            n: 200,
            sigma2: 1.0,
            covariance: None,
            theta0: None,
            alpha: None,
            trials: 2000,
            seed: 0,
            noise: NoiseKind::Gaussian,
        }
    }
}

/// Validated configuration with defaults filled in.
#[derive(Debug, Clone)]
struct Resolved {
    covariance: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    theta0: DVector<f64>,
    alpha: Vec<f64>,
}

impl SimConfig {
    fn resolve(&self) -> Result<Resolved> {
        let d = self.d;
        if d == 0 || self.k == 0 {
            return Err(Error::Config("d and K must be >= 1".into()));
        }
        if self.n <= d + 1 {
            return Err(Error::Config(format!("n ({}) must exceed d + 1 ({})", self.n, d + 1)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        if let NoiseKind::StudentT { dof } = self.noise {
            if !(dof > 2.0) {
                return Err(Error::Config(
                    "Student-t noise needs dof > 2 for finite variance".into(),
                ));
            }
        }
        let covariance = match &self.covariance {
            None => DMatrix::identity(d, d),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("Sigma must be {d}×{d}")));
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
        };
        if (0..d).any(|i| (0..d).any(|j| (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12)) {
            return Err(Error::Config("Sigma is not symmetric".into()));
        }
        let chol_l = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("Sigma is not positive definite".into()))?
            .l();
        let theta0 = match &self.theta0 {
            None => DVector::from_element(d, 1.0 / (d as f64).sqrt()),
            Some(t) if t.len() == d => DVector::from_column_slice(t),
            Some(t) => return Err(Error::Config(format!("theta0 has {} entries, d = {d}", t.len()))),
        };
        let alpha = match &self.alpha {
            None => vec![1.0 / self.k as f64; self.k],
            Some(a) if a.len() == self.k => a.clone(),
            Some(a) => return Err(Error::Config(format!("alpha has {} entries, K = {}", a.len(), self.k))),
        };
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("alpha entries must be positive".into()));
        }
        Ok(Resolved {
            covariance,
            chol_l,
            theta0,
            alpha,
        })
    }

    /// `(p_i, s_i)`: Dirichlet means and variances.
    pub fn proportion_moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.resolve()?;
        Ok((dirichlet::mean(&r.alpha), dirichlet::variance(&r.alpha)))
    }

    /// `σ² d / (n − d − 1)`.
    pub fn root_risk(&self) -> f64 {
        self.sigma2 * self.d as f64 / (self.n - self.d - 1) as f64
    }

    /// `(Σs/n)·θ₀ᵀΣθ₀ + (Σs/n + Σp²)·d/(n−d−1)·σ²`.
    pub fn closed_form_top_down(&self) -> Result<f64> {
        let r = self.resolve()?;
        let (p, s) = (dirichlet::mean(&r.alpha), dirichlet::variance(&r.alpha));
        let s_sum: f64 = s.iter().sum();
        let p2: f64 = p.iter().map(|v| v * v).sum();
        let signal = (r.theta0.transpose() * &r.covariance * &r.theta0)[(0, 0)];
        let n = self.n as f64;
        Ok(s_sum / n * signal + (s_sum / n + p2) * self.root_risk())
    }

    /// `Σ(s_i + p_i²)·d/(n−d−1)·σ²`.
    pub fn bottom_up_lower_bound(&self) -> Result<f64> {
        let (p, s) = self.proportion_moments()?;
        let total: f64 = p.iter().zip(&s).map(|(p, s)| s + p * p).sum();
        Ok(total * self.root_risk())
    }
}

/// One simulated sample of the hierarchy.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// n×d covariates
    pub x: DMatrix<f64>,
    pub y0: DVector<f64>,
    /// n×K proportions
    pub a: DMatrix<f64>,
    /// n×K children
    pub y: DMatrix<f64>,
}

fn noise_draw<R: Rng + ?Sized>(kind: NoiseKind, sigma2: f64, rng: &mut R) -> f64 {
    match kind {
        NoiseKind::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            sigma2.sqrt() * z
        }
        NoiseKind::StudentT { dof } => {
            let t = StudentT::new(dof).expect("dof validated").sample(rng);
            t * (sigma2 * (dof - 2.0) / dof).sqrt()
        }
    }
}

pub fn generate_dataset<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<Dataset> {
    let r = config.resolve()?;
    let (n, d, k) = (config.n, config.d, config.k);
    let mut x = DMatrix::zeros(n, d);
    let mut y0 = DVector::zeros(n);
    let mut a = DMatrix::zeros(n, k);
    let mut y = DMatrix::zeros(n, k);
    for t in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let xt = &r.chol_l * z;
        let root = r.theta0.dot(&xt) + noise_draw(config.noise, config.sigma2, rng);
        let at = dirichlet::sample(&r.alpha, rng);
        for j in 0..d {
            x[(t, j)] = xt[j];
        }
        y0[t] = root;
        for i in 0..k {
            a[(t, i)] = at[i];
            y[(t, i)] = at[i] * root;
        }
    }
    Ok(Dataset { x, y0, a, y })
}

/// Per-child OLS coefficients, d×K.
pub fn fit_bottom_up(data: &Dataset) -> Result<DMatrix<f64>> {
    lstsq(&data.x, &data.y)
}

#[derive(Debug, Clone)]
pub struct TopDownFit {
    pub theta0: DVector<f64>,
    /// `p̂_i = (1/n) Σ_t y_{t,i} / y_{t,0}`
    pub proportions: Vec<f64>,
    /// d×K, column `i` is `p̂_i θ̂₀`.
    pub theta: DMatrix<f64>,
}

pub fn fit_top_down(data: &Dataset) -> Result<TopDownFit> {
    if let Some(t) = data.y0.iter().position(|&v| v == 0.0) {
        return Err(Error::Numerical(format!(
            "root value at t = {t} is zero; the proportion estimate is undefined"
        )));
    }
    let y0 = DMatrix::from_column_slice(data.y0.len(), 1, data.y0.as_slice());
    let theta0 = DVector::from_column_slice(lstsq(&data.x, &y0)?.as_slice());
    let (n, k) = data.y.shape();
    let proportions: Vec<f64> = (0..k)
        .map(|i| (0..n).map(|t| data.y[(t, i)] / data.y0[t]).sum::<f64>() / n as f64)
        .collect();
    let theta = DMatrix::from_fn(theta0.len(), k, |j, i| proportions[i] * theta0[j]);
    Ok(TopDownFit {
        theta0,
        proportions,
        theta,
    })
}

/// `(θ̂ − θ)ᵀ Σ (θ̂ − θ)`.
pub fn excess_risk(estimate: &[f64], truth: &[f64], covariance: &DMatrix<f64>) -> Result<f64> {
    let d = truth.len();
    if estimate.len() != d || covariance.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "estimate {} / truth {d} / covariance {:?} disagree",
            estimate.len(),
            covariance.shape()
        )));
    }
    let diff = DVector::from_fn(d, |j, _| estimate[j] - truth[j]);
    Ok((diff.transpose() * covariance * &diff)[(0, 0)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    /// Total excess risk summed over children.
    pub bottom_up: Estimate,
    pub top_down: Estimate,
    /// Excess risk of the root OLS fit itself.
    pub root: Estimate,
    pub closed_form_top_down: f64,
    pub bottom_up_lower_bound: f64,
    pub closed_form_root: f64,
    /// Empirical bottom-up over empirical top-down.
    pub ratio: f64,
}

impl SimResult {
    /// `field,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["field", "value"])?;
        let rows = [
            ("d", self.config.d as f64),
            ("K", self.config.k as f64),
            ("n", self.config.n as f64),
            ("sigma2", self.config.sigma2),
            ("trials", self.config.trials as f64),
            ("bottom_up_mean", self.bottom_up.mean),
            ("bottom_up_se", self.bottom_up.se),
            ("top_down_mean", self.top_down.mean),
            ("top_down_se", self.top_down.se),
            ("root_mean", self.root.mean),
            ("root_se", self.root.se),
            ("closed_form_top_down", self.closed_form_top_down),
            ("bottom_up_lower_bound", self.bottom_up_lower_bound),
            ("closed_form_root", self.closed_form_root),
            ("ratio", self.ratio),
        ];
        for (k, v) in rows {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("simulation csv", e))?;
        Ok(())
    }
}

struct TrialRisk {
    bottom_up: f64,
    top_down: f64,
    root: f64,
}

fn run_trial(config: &SimConfig, r: &Resolved, trial: usize) -> Result<TrialRisk> {
    let mut rng = stream_rng(config.seed, trial as u64);
    let data = generate_dataset(config, &mut rng)?;
    let bu = fit_bottom_up(&data)?;
    let td = fit_top_down(&data)?;
    let p = dirichlet::mean(&r.alpha);
    let theta0 = r.theta0.as_slice();
    let mut bottom_up = 0.0;
    let mut top_down = 0.0;
    for (i, pi) in p.iter().enumerate() {
        let truth: Vec<f64> = theta0.iter().map(|t| pi * t).collect();
        bottom_up += excess_risk(bu.column(i).as_slice(), &truth, &r.covariance)?;
        top_down += excess_risk(td.theta.column(i).as_slice(), &truth, &r.covariance)?;
    }
    let root = excess_risk(td.theta0.as_slice(), theta0, &r.covariance)?;
    Ok(TrialRisk {
        bottom_up,
        top_down,
        root,
    })
}

/// Runs `trials` independent replications in parallel. Trial `t` draws
/// from generator stream `(seed, t)`, and results are reduced in trial
/// order, so the output is bitwise reproducible.
pub fn monte_carlo_compare(config: &SimConfig) -> Result<SimResult> {
    let r = config.resolve()?;
    if config.trials < 100 {
        return Err(Error::Config(format!(
            "trials = {} is below the minimum of 100",
            config.trials
        )));
    }
    let risks = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &r, t))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&TrialRisk) -> f64| Estimate::from_samples(&risks.iter().map(f).collect::<Vec<_>>());
    let bottom_up = pick(|t| t.bottom_up);
    let top_down = pick(|t| t.top_down);
    Ok(SimResult {
        config: config.clone(),
        bottom_up,
        top_down,
        root: pick(|t| t.root),
        closed_form_top_down: config.closed_form_top_down()?,
        bottom_up_lower_bound: config.bottom_up_lower_bound()?,
        closed_form_root: config.root_risk(),
        ratio: bottom_up.mean / top_down.mean,
    })
}
