//! Ask/tell CMA-ES with box constraints.
//!
//! Sampling is `x_k = m + σ B diag(√d) z_k`, `C = B diag(d) Bᵀ`. Infeasible
//! samples are clamped into the box for evaluation and charged a quadratic
//! penalty `κ ‖x_raw − x_clamped‖²`; the distribution update uses the raw
//! samples ranked by penalized fitness. Learning rates follow the usual
//! defaults for positive recombination weights.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CmaError;

/// Penalty weight per squared unit of bound violation.
pub const PENALTY_WEIGHT: f64 = 1e4;

/// `4 + ⌊3 ln D⌋`.
pub fn default_population_size(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    pub x0: Vec<f64>,
    pub sigma0: f64,
    pub lambda: usize,
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
    pub seed: u64,
    pub max_evals: usize,
    pub tol_fun: f64,
    pub tol_x: f64,
}

impl CmaConfig {
    /// Config with default population size and tolerances.
    pub fn new(x0: Vec<f64>, sigma0: f64, bounds_lo: Vec<f64>, bounds_hi: Vec<f64>) -> Self {
        let lambda = default_population_size(x0.len().max(1));
        Self {
            x0,
            sigma0,
            lambda,
            bounds_lo,
            bounds_hi,
            seed: 0,
            max_evals: 10_000,
            tol_fun: 1e-12,
            tol_x: 1e-12,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<(), CmaError> {
        let d = self.dim();
        let err = |m: String| Err(CmaError::Config(m));
        if d == 0 {
            return err("dimension must be at least 1".into());
        }
        if self.lambda < 2 {
            return err(format!("lambda must be >= 2, got {}", self.lambda));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return err(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if self.bounds_lo.len() != d || self.bounds_hi.len() != d {
            return err("bounds length differs from dimension".into());
        }
        for i in 0..d {
            let (lo, hi, x) = (self.bounds_lo[i], self.bounds_hi[i], self.x0[i]);
            if !(lo < hi) {
                return err(format!("bounds_lo < bounds_hi violated at {i}"));
            }
            if !(x >= lo && x <= hi) {
                return err(format!("x0[{i}] = {x} outside [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

/// Clamps `x_raw` into the box and returns the quadratic penalty.
pub fn repair_with_penalty(x_raw: &DVector<f64>, lo: &[f64], hi: &[f64]) -> (DVector<f64>, f64) {
    let mut penalty = 0.0;
    let x = DVector::from_iterator(
        x_raw.len(),
        x_raw.iter().enumerate().map(|(i, &v)| {
            let c = v.clamp(lo[i], hi[i]);
            penalty += (v - c) * (v - c);
            c
        }),
    );
    (x, PENALTY_WEIGHT * penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEvals,
    TolFun,
    TolX,
    Stagnation,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxEvals => "max_evals",
            StopReason::TolFun => "tol_fun",
            StopReason::TolX => "tol_x",
            StopReason::Stagnation => "stagnation",
        }
    }
}

/// One generation of samples.
#[derive(Debug, Clone)]
pub struct Population {
    /// Samples as drawn; pass these to [`CmaState::tell`].
    pub raw: Vec<DVector<f64>>,
    /// Samples clamped into the box; evaluate these.
    pub repaired: Vec<DVector<f64>>,
    pub penalties: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CmaState {
    config: CmaConfig,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    eig_basis: DMatrix<f64>,
    eig_values: DVector<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    generation: usize,
    eval_count: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    best_history: Vec<f64>,
    rng: ChaCha8Rng,
}

impl CmaState {
    pub fn new(config: CmaConfig) -> Result<Self, CmaError> {
        config.validate()?;
        let d = config.dim();
        let df = d as f64;
        let lambda = config.lambda;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (lambda as f64 / 2.0 + 0.5).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (df + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (df + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / df) / (df + 4.0 + 2.0 * mu_eff / df);
        let c_1 = 2.0 / ((df + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((df + 2.0).powi(2) + mu_eff));
        let chi_n = df.sqrt() * (1.0 - 1.0 / (4.0 * df) + 1.0 / (21.0 * df * df));

        Ok(Self {
            mean: DVector::from_vec(config.x0.clone()),
            sigma: config.sigma0,
            cov: DMatrix::identity(d, d),
            eig_basis: DMatrix::identity(d, d),
            eig_values: DVector::from_element(d, 1.0),
            path_sigma: DVector::zeros(d),
            path_c: DVector::zeros(d),
            generation: 0,
            eval_count: 0,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            best_history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn config(&self) -> &CmaConfig {
        &self.config
    }
    pub fn dim(&self) -> usize {
        self.config.dim()
    }
    pub fn lambda(&self) -> usize {
        self.config.lambda
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
    pub fn generation(&self) -> usize {
        self.generation
    }
    pub fn eval_count(&self) -> usize {
        self.eval_count
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn mu_eff(&self) -> f64 {
        self.mu_eff
    }
    /// Best fitness of each generation told so far.
    pub fn best_history(&self) -> &[f64] {
        &self.best_history
    }

    /// Counts evaluations made outside the ask/tell cycle (e.g. of `x0`).
    pub fn add_evaluations(&mut self, n: usize) {
        self.eval_count += n;
    }

    /// Overrides the current step size; used by tests probing limits.
    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn ask(&mut self) -> Result<Population, CmaError> {
        let d = self.dim();
        if self.eig_values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(CmaError::EigenFailure("non-positive eigenvalue".into()));
        }
        let scale = self.eig_values.map(f64::sqrt);
        let mut raw = Vec::with_capacity(self.lambda());
        for _ in 0..self.lambda() {
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut self.rng)));
            let y = &self.eig_basis * z.component_mul(&scale);
            raw.push(&self.mean + y * self.sigma);
        }
        let (repaired, penalties) = raw
            .iter()
            .map(|x| repair_with_penalty(x, &self.config.bounds_lo, &self.config.bounds_hi))
            .unzip();
        Ok(Population {
            raw,
            repaired,
            penalties,
        })
    }

    /// Rank-based distribution update from raw candidates and their fitness.
    pub fn tell(&mut self, candidates: &[DVector<f64>], fitness: &[f64]) -> Result<(), CmaError> {
        let d = self.dim();
        let lambda = self.lambda();
        if candidates.len() != lambda || fitness.len() != lambda {
            return Err(CmaError::ShapeMismatch(format!(
                "expected {lambda} candidates and fitnesses, got {} and {}",
                candidates.len(),
                fitness.len()
            )));
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != d) {
            return Err(CmaError::ShapeMismatch(format!(
                "candidate of length {} in dimension {d}",
                c.len()
            )));
        }
        if let Some((index, &value)) = fitness.iter().enumerate().find(|(_, f)| !f.is_finite()) {
            return Err(CmaError::NonFiniteFitness { index, value });
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..self.weights.len()]
            .iter()
            .map(|&k| (&candidates[k] - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(d);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w
        let inv_sqrt = self.eig_values.map(|v| 1.0 / v.sqrt());
        let whitened = &self.eig_basis * (self.eig_basis.tr_mul(&y_w)).component_mul(&inv_sqrt);
        let cs = self.c_sigma;
        self.path_sigma = &self.path_sigma * (1.0 - cs) + whitened * (cs * (2.0 - cs) * self.mu_eff).sqrt();

        let g1 = (self.generation + 1) as f64;
        let ps_norm = self.path_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g1)).sqrt()
            < (1.4 + 2.0 / (d as f64 + 1.0)) * self.chi_n;
        let cc = self.c_c;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.path_c = &self.path_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        let (c1, cmu) = (self.c_1, self.c_mu);
        let mut cov = &self.cov * (1.0 - c1 - cmu + (1.0 - h) * c1 * cc * (2.0 - cc));
        cov.ger(c1, &self.path_c, &self.path_c, 1.0);
        for (w, y) in self.weights.iter().zip(&steps) {
            cov.ger(cmu * w, y, y, 1.0);
        }
        // exact symmetry
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        self.cov = cov;
        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        let eig = SymmetricEigen::try_new(self.cov.clone(), f64::EPSILON, 0)
            .ok_or_else(|| CmaError::EigenFailure("eigensolver did not converge".into()))?;
        if eig.eigenvalues.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(CmaError::EigenFailure(format!(
                "covariance lost positive definiteness (min eigenvalue {})",
                eig.eigenvalues.min()
            )));
        }
        self.eig_basis = eig.eigenvectors;
        self.eig_values = eig.eigenvalues;

        self.generation += 1;
        self.eval_count += lambda;
        self.best_history.push(fitness[order[0]]);
        Ok(())
    }

    fn tol_fun_window(&self) -> usize {
        10 + (30.0 * self.dim() as f64 / self.lambda() as f64).ceil() as usize
    }

    /// Why the run should stop, if it should. The budget check stops before a
    /// generation that would exceed `max_evals`.
    pub fn converged(&self) -> Option<StopReason> {
        if self.eval_count + self.lambda() > self.config.max_evals {
            return Some(StopReason::MaxEvals);
        }
        let window = self.tol_fun_window();
        let hist = &self.best_history;
        if hist.len() >= window {
            let recent = &hist[hist.len() - window..];
            let (lo, hi) = recent
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| (lo.min(f), hi.max(f)));
            if hi - lo < self.config.tol_fun {
                return Some(StopReason::TolFun);
            }
        }
        let max_sd = self.cov.diagonal().iter().cloned().fold(0.0, f64::max).sqrt();
        if self.sigma * max_sd < self.config.tol_x {
            return Some(StopReason::TolX);
        }
        // median of the newest 20 generation-bests no better than the oldest
        // 20 within a long window
        let span = 120 + window;
        if hist.len() >= span {
            let w = &hist[hist.len() - span..];
            if median(&w[span - 20..]) >= median(&w[..20]) {
                return Some(StopReason::Stagnation);
            }
        }
        None
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
