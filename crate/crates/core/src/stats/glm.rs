//! Negative binomial regression with log link, variance mu + mu^2/theta.
//!
//! beta is fitted by IRLS for fixed theta, theta by safeguarded Newton on
//! log(theta) for fixed beta, alternating until both settle. Covariates are
//! RMS-scaled internally so the iterates do not depend on column units.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";
pub const THETA_MIN: f64 = 1e-4;
pub const THETA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    intercept: bool,
}

impl DesignMatrix {
    /// `columns` are covariates only; with `intercept` a column of ones is
    /// prepended under the name [`INTERCEPT`].
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, response: Vec<u64>, intercept: bool) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::invalid("column names and columns differ in length"));
        }
        let n = response.len();
        if let Some((name, _)) = names.iter().zip(&columns).find(|(_, c)| c.len() != n) {
            return Err(Error::invalid(format!("column {name} has the wrong length")));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariate value"));
        }
        let mut all_names = Vec::new();
        let mut cols = Vec::new();
        if intercept {
            all_names.push(INTERCEPT.to_string());
            cols.push(vec![1.0; n]);
        }
        all_names.extend(names);
        cols.extend(columns);
        let p = cols.len();
        if p == 0 {
            return Err(Error::invalid("design has no columns"));
        }
        if n <= p {
            return Err(Error::invalid(format!("need n > p, got n={n}, p={p}")));
        }
        let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        Ok(DesignMatrix { names: all_names, x, y: response.iter().map(|&v| v as f64).collect(), intercept })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of columns including the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Drop column `j`. The intercept cannot be dropped.
    pub fn without(&self, j: usize) -> Result<Self> {
        if self.intercept && j == 0 {
            return Err(Error::invalid("the intercept is never removed"));
        }
        let mut names = self.names.clone();
        names.remove(j);
        Ok(DesignMatrix { names, x: self.x.clone().remove_column(j), y: self.y.clone(), intercept: self.intercept })
    }

    /// Multiply column `j` by `c`.
    pub fn scaled(&self, j: usize, c: f64) -> Self {
        let mut out = self.clone();
        out.x.column_mut(j).iter_mut().for_each(|v| *v *= c);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    pub theta: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl RegressionFit {
    /// Parameters counted by AIC: coefficients plus theta.
    pub fn n_params(&self) -> usize {
        self.coefficients.len() + 1
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    /// CSV `variable,beta,se,z,p`.
    pub fn write_table<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variable", "beta", "se", "z", "p"])?;
        for i in 0..self.names.len() {
            w.write_record([
                self.names[i].clone(),
                self.coefficients[i].to_string(),
                self.std_errors[i].to_string(),
                self.z[i].to_string(),
                self.p_values[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 200, tolerance: 1e-8 }
    }
}

/// Log-likelihood of one observation, written to stay accurate as theta grows.
fn obs_loglik(y: f64, mu: f64, theta: f64) -> f64 {
    let k_max = y as u64;
    let mut s = 0.0;
    for k in 0..k_max {
        s += (k as f64 / theta).ln_1p();
    }
    let r = (mu / theta).ln_1p();
    s - ln_gamma(y + 1.0) + y * mu.ln() - y * r - theta * r
}

/// Full negative binomial log-likelihood at `beta` (original column units).
pub fn negbin_loglik(design: &DesignMatrix, beta: &[f64], theta: f64) -> f64 {
    let eta = &design.x * DVector::from_column_slice(beta);
    design.y.iter().zip(eta.iter()).map(|(&y, &e)| obs_loglik(y, e.exp(), theta)).sum()
}

/// Score vector: derivatives with respect to each beta, then theta.
pub fn negbin_score(design: &DesignMatrix, beta: &[f64], theta: f64) -> Vec<f64> {
    let eta = &design.x * DVector::from_column_slice(beta);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let r = DVector::from_iterator(mu.len(), design.y.iter().zip(&mu).map(|(&y, &m)| theta * (y - m) / (theta + m)));
    let mut g: Vec<f64> = (design.x.transpose() * r).iter().copied().collect();
    g.push(theta_derivs(&design.y, &mu, theta).0);
    g
}

/// First and second derivative of the log-likelihood in theta.
fn theta_derivs(y: &[f64], mu: &[f64], theta: f64) -> (f64, f64) {
    let (mut g, mut h) = (0.0, 0.0);
    for (&yi, &m) in y.iter().zip(mu) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 0..yi as u64 {
            let d = 1.0 / (theta + k as f64);
            s1 += d;
            s2 += d * d;
        }
        let tm = theta + m;
        g += s1 - (m / theta).ln_1p() + (m - yi) / tm;
        h += -s2 + m / (theta * tm) + (yi - m) / (tm * tm);
    }
    (g, h)
}

/// Working state in scaled coordinates.
struct Work<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
}

impl Work<'_> {
    fn mu(&self, beta: &DVector<f64>) -> Vec<f64> {
        (self.x * beta).iter().map(|e| e.exp()).collect()
    }

    fn loglik(&self, beta: &DVector<f64>, theta: Option<f64>) -> f64 {
        let mu = self.mu(beta);
        match theta {
            Some(t) => self.y.iter().zip(&mu).map(|(&y, &m)| obs_loglik(y, m, t)).sum(),
            None => self.y.iter().zip(&mu).map(|(&y, &m)| y * m.ln() - m - ln_gamma(y + 1.0)).sum(),
        }
    }

    /// Solve (X'WX) b = X'Wz; rank deficiency surfaces as a failed Cholesky
    /// or a vanishing pivot.
    fn weighted_solve(&self, w: &[f64], z: &[f64]) -> Result<DVector<f64>> {
        let p = self.x.ncols();
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..self.x.nrows() {
            let row = self.x.row(i);
            for a in 0..p {
                let wa = w[i] * row[a];
                xtwz[a] += wa * z[i];
                for b in 0..=a {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let chol = checked_cholesky(xtwx)?;
        Ok(chol.solve(&xtwz))
    }

    /// IRLS for fixed theta (`None` is the Poisson limit), with step halving
    /// whenever the likelihood drops.
    fn irls(&self, start: &DVector<f64>, theta: Option<f64>, tol: f64) -> Result<DVector<f64>> {
        let mut beta = start.clone();
        let mut ll = self.loglik(&beta, theta);
        for _ in 0..100 {
            let eta = self.x * &beta;
            let (w, z): (Vec<f64>, Vec<f64>) = eta
                .iter()
                .zip(self.y)
                .map(|(&e, &y)| {
                    let m = e.exp();
                    let w = match theta {
                        Some(t) => m / (1.0 + m / t),
                        None => m,
                    };
                    (w, e + (y - m) / m)
                })
                .unzip();
            let target = self.weighted_solve(&w, &z)?;
            let mut step = &target - &beta;
            let mut next = &beta + &step;
            let mut next_ll = self.loglik(&next, theta);
            let mut halvings = 0;
            while !(next_ll >= ll - 1e-12 * ll.abs()) && halvings < 30 {
                step *= 0.5;
                next = &beta + &step;
                next_ll = self.loglik(&next, theta);
                halvings += 1;
            }
            let delta = step.amax();
            if !next_ll.is_finite() {
                return Err(Error::invalid("likelihood became non-finite during IRLS"));
            }
            beta = next;
            ll = next_ll;
            if delta < tol {
                break;
            }
        }
        Ok(beta)
    }

    fn init_beta(&self) -> Result<DVector<f64>> {
        let (w, z): (Vec<f64>, Vec<f64>) = self
            .y
            .iter()
            .map(|&y| {
                let m = y + 0.5;
                (m, m.ln() + (y - m) / m)
            })
            .unzip();
        self.weighted_solve(&w, &z)
    }

    /// Maximize over log(theta) for fixed mu.
    fn update_theta(&self, mu: &[f64], theta: f64) -> f64 {
        let ll = |t: f64| -> f64 { self.y.iter().zip(mu).map(|(&y, &m)| obs_loglik(y, m, t)).sum() };
        let mut phi = theta.ln();
        let (lo, hi) = (THETA_MIN.ln(), THETA_MAX.ln());
        let mut cur = ll(theta);
        for _ in 0..100 {
            let t = phi.exp();
            let (g, h) = theta_derivs(self.y, mu, t);
            let g_phi = t * g;
            let h_phi = t * t * h + t * g;
            let mut step = if h_phi < 0.0 { -g_phi / h_phi } else { g_phi.signum() };
            step = step.clamp(-1.0, 1.0);
            let mut accepted = false;
            for _ in 0..40 {
                let cand = (phi + step).clamp(lo, hi);
                let cand_ll = ll(cand.exp());
                if cand_ll >= cur {
                    step = cand - phi;
                    phi = cand;
                    cur = cand_ll;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.abs() < 1e-12 {
                break;
            }
        }
        phi.exp()
    }
}

fn checked_cholesky(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = m.diagonal().amax();
    let chol = m.cholesky().ok_or(Error::RankDeficient)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot * min_pivot > 1e-12 * max_diag) {
        return Err(Error::RankDeficient);
    }
    Ok(chol)
}

fn column_scales(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let s = (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            if s > 0.0 {
                Ok(s)
            } else {
                Err(Error::RankDeficient)
            }
        })
        .collect()
}

fn scaled_matrix(x: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).iter_mut().for_each(|v| *v /= s);
    }
    xs
}

/// Poisson GLM with log link; used as the warm start.
pub fn fit_poisson(design: &DesignMatrix) -> Result<Vec<f64>> {
    let scales = column_scales(&design.x)?;
    let xs = scaled_matrix(&design.x, &scales);
    let work = Work { x: &xs, y: &design.y };
    let beta = work.irls(&work.init_beta()?, None, 1e-12)?;
    Ok(beta.iter().zip(&scales).map(|(b, s)| b / s).collect())
}

pub fn fit_negbin(design: &DesignMatrix) -> Result<RegressionFit> {
    fit_negbin_with(design, &FitOptions::default())
}

pub fn fit_negbin_with(design: &DesignMatrix, options: &FitOptions) -> Result<RegressionFit> {
    let scales = column_scales(&design.x)?;
    let xs = scaled_matrix(&design.x, &scales);
    let work = Work { x: &xs, y: &design.y };

    let mut beta = work.irls(&work.init_beta()?, None, 1e-12)?;
    let mu = work.mu(&beta);
    let denom: f64 = design.y.iter().zip(&mu).map(|(&y, &m)| (y - m).powi(2) - m).sum();
    let num: f64 = mu.iter().map(|m| m * m).sum();
    let mut theta = if denom > 0.0 { (num / denom).clamp(THETA_MIN, THETA_MAX) } else { THETA_MAX };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let next_beta = work.irls(&beta, Some(theta), 1e-12)?;
        let next_theta = work.update_theta(&work.mu(&next_beta), theta);
        let db = (&next_beta - &beta).amax();
        let dt = (next_theta.ln() - theta.ln()).abs();
        beta = next_beta;
        theta = next_theta;
        if db < options.tolerance && dt < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("negative binomial fit did not converge in {iterations} iterations");
    }
    let (beta, theta) = polish(&work, beta, theta);

    let mu = work.mu(&beta);
    // Observed information for beta in scaled coordinates.
    let w: Vec<f64> = design
        .y
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| theta * m * (y + theta) / ((theta + m) * (theta + m)))
        .collect();
    let p = xs.ncols();
    let mut info = DMatrix::<f64>::zeros(p, p);
    for i in 0..xs.nrows() {
        let row = xs.row(i);
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += w[i] * row[a] * row[b];
            }
        }
    }
    let cov = checked_cholesky(info)?.inverse();

    let coefficients: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt() / scales[j]).collect();
    let z: Vec<f64> = (0..p).map(|j| beta[j] / cov[(j, j)].sqrt()).collect();
    let p_values: Vec<f64> = z.iter().map(|z| erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)).collect();
    let log_likelihood = work.loglik(&beta, Some(theta));
    let aic = -2.0 * log_likelihood + 2.0 * (p + 1) as f64;
    Ok(RegressionFit {
        names: design.names.clone(),
        coefficients,
        std_errors,
        z,
        p_values,
        theta,
        log_likelihood,
        aic,
        converged,
        iterations,
    })
}

/// A few joint Newton steps on (beta, log theta) using the full observed
/// Hessian, kept only while they shrink the score.
fn polish(work: &Work, mut beta: DVector<f64>, mut theta: f64) -> (DVector<f64>, f64) {
    let p = beta.len();
    let free_theta = theta > THETA_MIN * 1.0001 && theta < THETA_MAX / 1.0001;
    let dim = if free_theta { p + 1 } else { p };
    let score_hess = |beta: &DVector<f64>, theta: f64| -> (DVector<f64>, DMatrix<f64>) {
        let mu = work.mu(beta);
        let mut g = DVector::<f64>::zeros(dim);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..work.x.nrows() {
            let (y, m) = (work.y[i], mu[i]);
            let tm = theta + m;
            let r = theta * (y - m) / tm;
            let w = theta * m * (y + theta) / (tm * tm);
            let c = theta * m * (y - m) / (tm * tm);
            let row = work.x.row(i);
            for a in 0..p {
                g[a] += row[a] * r;
                for b in 0..p {
                    h[(a, b)] -= w * row[a] * row[b];
                }
                if free_theta {
                    h[(a, p)] += c * row[a];
                    h[(p, a)] += c * row[a];
                }
            }
        }
        if free_theta {
            let (gt, ht) = theta_derivs(work.y, &mu, theta);
            g[p] = theta * gt;
            h[(p, p)] = theta * theta * ht + theta * gt;
        }
        (g, h)
    };
    let (mut g, mut h) = score_hess(&beta, theta);
    for _ in 0..5 {
        let Some(chol) = (-h.clone()).cholesky() else { break };
        let step = chol.solve(&g);
        let nb = &beta + step.rows(0, p);
        let nt = if free_theta { (theta.ln() + step[p]).exp().clamp(THETA_MIN, THETA_MAX) } else { theta };
        let (ng, nh) = score_hess(&nb, nt);
        if !(ng.amax() < g.amax()) {
            break;
        }
        beta = nb;
        theta = nt;
        g = ng;
        h = nh;
    }
    (beta, theta)
}
