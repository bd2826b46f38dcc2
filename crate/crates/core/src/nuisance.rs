//! First-step working models: logistic propensity scores (maximum likelihood
//! or inverse probability tilting) and linear outcome regressions (OLS or
//! odds-weighted least squares), each with per-observation linearizations.
//!
//! All fits accept optional case weights so the multiplier bootstrap can
//! refit them on reweighted samples. Linearizations are expressed over the
//! full sample: rows outside a regression's subsample contribute zeros.

use crate::error::{Error, Result};
use crate::numkit::{newton_maximize, sup_norm, weighted_lsq_factored, Cholesky, ConcaveObjective, Evaluation, Matrix, NewtonOptions};
use serde::{Deserialize, Serialize};
use std::cell::Cell;

/// Linear index bound applied inside `exp`.
pub const INDEX_CLAMP: f64 = 700.0;
/// Maximum likelihood fits with probabilities closer than this to 0 or 1 signal separation.
pub const SEPARATION_EPS: f64 = 10.0 * f64::EPSILON;
/// Smallest Fisher information per unit of design variance, in any direction, accepted
/// from a maximum likelihood fit; less means the coefficients are drifting to infinity.
pub const MIN_INFORMATION: f64 = 1e-6;
/// Controls with `1 - pi` below this are rejected by weighted fits and estimators.
pub const EXTREME_PS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsMethod {
    Mle,
    Ipt,
}

impl std::str::FromStr for PsMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(PsMethod::Mle),
            "ipt" => Ok(PsMethod::Ipt),
            other => Err(Error::Usage(format!("unknown propensity method '{other}' (expected mle or ipt)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub method: PsMethod,
    pub gamma: Vec<f64>,
    /// `pi_i = Lambda(x_i' gamma)`.
    pub fitted: Vec<f64>,
    /// `pi_i / (1 - pi_i) = exp(x_i' gamma)`.
    pub odds: Vec<f64>,
    /// `n x k` matrix whose rows are `l_ps(W_i)`; `None` for externally supplied fits.
    pub linearization: Option<Matrix>,
    pub converged: bool,
    pub iterations: usize,
    /// Controls with `pi > trim` get zero weight downstream.
    pub trim: Option<f64>,
}

impl PropensityFit {
    pub fn with_trim(mut self, trim: Option<f64>) -> Self {
        self.trim = trim;
        self
    }

    #[inline]
    pub fn kept(&self, i: usize) -> bool {
        self.trim.is_none_or(|t| self.fitted[i] <= t)
    }

    /// Odds used for control weights, zero for trimmed units.
    #[inline]
    pub fn control_odds(&self, i: usize) -> f64 {
        if self.kept(i) {
            self.odds[i]
        } else {
            0.0
        }
    }

    /// Rejects kept controls whose propensity is numerically one.
    pub fn check_overlap(&self, d: &[f64]) -> Result<()> {
        for (i, di) in d.iter().enumerate() {
            if *di == 0.0 && self.kept(i) && 1.0 - self.fitted[i] < EXTREME_PS_EPS {
                return Err(Error::ExtremePropensity { index: i, value: self.fitted[i] });
            }
        }
        Ok(())
    }

    /// Propensity fit from a known coefficient vector, without linearization.
    pub fn from_gamma(method: PsMethod, x: &Matrix, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != x.cols() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has length {}, design has {} columns",
                gamma.len(),
                x.cols()
            )));
        }
        let eta = x.matvec(&gamma);
        Ok(Self {
            method,
            fitted: eta.iter().map(|&e| logistic(e)).collect(),
            odds: eta.iter().map(|&e| e.clamp(-INDEX_CLAMP, INDEX_CLAMP).exp()).collect(),
            gamma,
            linearization: None,
            converged: true,
            iterations: 0,
            trim: None,
        })
    }

    /// Fit from known probabilities, e.g. oracle propensity scores.
    pub fn from_probabilities(method: PsMethod, p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::InvalidInput("propensity values must lie in (0, 1)".into()));
        }
        Ok(Self {
            method,
            gamma: Vec::new(),
            odds: p.iter().map(|v| v / (1.0 - v)).collect(),
            fitted: p,
            linearization: None,
            converged: true,
            iterations: 0,
            trim: None,
        })
    }

    pub fn require_linearization(&self) -> Result<&Matrix> {
        self.linearization.as_ref().ok_or(Error::MissingLinearization)
    }
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn check_binary(d: &[f64], case: &[f64], x: &Matrix) -> Result<()> {
    if d.len() != x.rows() || case.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, treatment {} and weights {}",
            x.rows(),
            d.len(),
            case.len()
        )));
    }
    if let Some(i) = d.iter().position(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput(format!("treatment indicator at row {i} is not binary")));
    }
    let treated = d.iter().zip(case).any(|(di, w)| *di == 1.0 && *w > 0.0);
    let control = d.iter().zip(case).any(|(di, w)| *di == 0.0 && *w > 0.0);
    if !(treated && control) {
        return Err(Error::AllTreatedOrAllControl);
    }
    let mut gram = x.weighted_gram(case);
    gram.scale(1.0 / x.rows() as f64);
    Cholesky::factor(&gram).map(|_| ())
}

struct LogitLikelihood<'a> {
    x: &'a Matrix,
    d: &'a [f64],
    case: &'a [f64],
}

impl ConcaveObjective for LogitLikelihood<'_> {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn evaluate(&self, g: &[f64]) -> Evaluation {
        let n = self.x.rows() as f64;
        let eta = self.x.matvec(g);
        let mut score_w = vec![0.0; eta.len()];
        let mut info_w = vec![0.0; eta.len()];
        for i in 0..eta.len() {
            let p = logistic(eta[i]);
            score_w[i] = self.case[i] * (self.d[i] - p);
            info_w[i] = -self.case[i] * p * (1.0 - p);
        }
        let mut gradient = self.x.weighted_xty(&score_w, &ones(eta.len()));
        gradient.iter_mut().for_each(|v| *v /= n);
        let mut hessian = self.x.weighted_gram(&info_w);
        hessian.scale(1.0 / n);
        Evaluation { value: self.value_at(&eta), gradient, hessian }
    }

    fn value(&self, g: &[f64]) -> f64 {
        self.value_at(&self.x.matvec(g))
    }
}

impl LogitLikelihood<'_> {
    fn value_at(&self, eta: &[f64]) -> f64 {
        let n = eta.len() as f64;
        crate::numkit::sum((0..eta.len()).map(|i| self.case[i] * (self.d[i] * eta[i] - softplus(eta[i])))) / n
    }
}

struct TiltingObjective<'a> {
    x: &'a Matrix,
    d: &'a [f64],
    case: &'a [f64],
    clamped: Cell<bool>,
}

impl TiltingObjective<'_> {
    fn value_at(&self, eta: &[f64]) -> f64 {
        let n = eta.len() as f64;
        crate::numkit::sum((0..eta.len()).map(|i| {
            let e = eta[i].clamp(-INDEX_CLAMP, INDEX_CLAMP).exp();
            self.case[i] * (self.d[i] * eta[i] - (1.0 - self.d[i]) * e)
        })) / n
    }
}

impl ConcaveObjective for TiltingObjective<'_> {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn evaluate(&self, g: &[f64]) -> Evaluation {
        let n = self.x.rows() as f64;
        let eta = self.x.matvec(g);
        let mut grad_w = vec![0.0; eta.len()];
        let mut hess_w = vec![0.0; eta.len()];
        for i in 0..eta.len() {
            if eta[i].abs() >= INDEX_CLAMP {
                self.clamped.set(true);
            }
            let e = eta[i].clamp(-INDEX_CLAMP, INDEX_CLAMP).exp();
            grad_w[i] = self.case[i] * (self.d[i] - (1.0 - self.d[i]) * e);
            hess_w[i] = -self.case[i] * (1.0 - self.d[i]) * e;
        }
        let mut gradient = self.x.weighted_xty(&grad_w, &ones(eta.len()));
        gradient.iter_mut().for_each(|v| *v /= n);
        let mut hessian = self.x.weighted_gram(&hess_w);
        hessian.scale(1.0 / n);
        Evaluation { value: self.value_at(&eta), gradient, hessian }
    }

    fn value(&self, g: &[f64]) -> f64 {
        self.value_at(&self.x.matvec(g))
    }
}

fn separation_as_error(e: Error) -> Error {
    match e {
        Error::MaxIterationsExceeded { .. } | Error::HessianSingular => Error::Separation,
        other => other,
    }
}

/// Rows `G^{-1} s_i` where `G = E_n[h_i x_i x_i']` and `s_i = r_i x_i`.
fn linearize(x: &Matrix, hess_w: &[f64], resid_w: &[f64]) -> Result<Matrix> {
    let n = x.rows();
    let mut gram = x.weighted_gram(hess_w);
    gram.scale(1.0 / n as f64);
    let chol = Cholesky::factor(&gram)?;
    let inv = chol.inverse();
    linearize_with(x, &inv, resid_w)
}

fn linearize_with(x: &Matrix, gram_inv: &Matrix, resid_w: &[f64]) -> Result<Matrix> {
    let n = x.rows();
    let k = x.cols();
    let mut out = Matrix::zeros(n, k);
    let mut s = vec![0.0; k];
    for i in 0..n {
        if resid_w[i] == 0.0 {
            continue;
        }
        for (sj, xj) in s.iter_mut().zip(x.row(i)) {
            *sj = resid_w[i] * xj;
        }
        out.row_mut(i).copy_from_slice(&gram_inv.matvec(&s));
    }
    Ok(out)
}

fn finish_ps(method: PsMethod, x: &Matrix, gamma: Vec<f64>, iterations: usize, converged: bool) -> Result<PropensityFit> {
    let eta = x.matvec(&gamma);
    if eta.iter().any(|e| !e.is_finite()) {
        return Err(Error::Separation);
    }
    let fitted: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let eps = if method == PsMethod::Mle { SEPARATION_EPS } else { 0.0 };
    if fitted.iter().any(|&p| p <= eps || p >= 1.0 - eps) {
        return Err(Error::Separation);
    }
    let odds = eta.iter().map(|&e| e.exp()).collect();
    Ok(PropensityFit { method, gamma, fitted, odds, linearization: None, converged, iterations, trim: None })
}

/// Logistic regression by maximum likelihood.
pub fn fit_logit_mle(x: &Matrix, d: &[f64]) -> Result<PropensityFit> {
    fit_logit_mle_weighted(x, d, &ones(x.rows()))
}

pub fn fit_logit_mle_weighted(x: &Matrix, d: &[f64], case: &[f64]) -> Result<PropensityFit> {
    check_binary(d, case, x)?;
    let obj = LogitLikelihood { x, d, case };
    let report = newton_maximize(&obj, &vec![0.0; x.cols()], NewtonOptions::default()).map_err(separation_as_error)?;
    let mut fit = finish_ps(PsMethod::Mle, x, report.solution, report.iterations, report.converged)?;
    let hess_w: Vec<f64> = fit.fitted.iter().zip(case).map(|(p, w)| w * p * (1.0 - p)).collect();
    let excess: Vec<f64> = hess_w.iter().zip(case).map(|(h, w)| h - MIN_INFORMATION * w).collect();
    if Cholesky::factor(&x.weighted_gram(&excess)).is_err() {
        return Err(Error::Separation);
    }
    let resid_w: Vec<f64> = (0..x.rows()).map(|i| case[i] * (d[i] - fit.fitted[i])).collect();
    fit.linearization = Some(linearize(x, &hess_w, &resid_w)?);
    Ok(fit)
}

/// Logistic propensity score by inverse probability tilting, maximizing
/// `E_n[D x'g - (1 - D) exp(x'g)]`.
pub fn fit_logit_ipt(x: &Matrix, d: &[f64]) -> Result<PropensityFit> {
    fit_logit_ipt_weighted(x, d, &ones(x.rows()))
}

pub fn fit_logit_ipt_weighted(x: &Matrix, d: &[f64], case: &[f64]) -> Result<PropensityFit> {
    check_binary(d, case, x)?;
    let obj = TiltingObjective { x, d, case, clamped: Cell::new(false) };
    let zero = vec![0.0; x.cols()];
    let warm = fit_logit_mle_weighted(x, d, case).map(|f| f.gamma).ok();
    let report = match warm.as_deref().map(|g| newton_maximize(&obj, g, NewtonOptions::default())) {
        Some(Ok(r)) => Ok(r),
        _ => {
            obj.clamped.set(false);
            newton_maximize(&obj, &zero, NewtonOptions::default())
        }
    };
    if obj.clamped.get() {
        return Err(Error::ObjectiveUnbounded);
    }
    let report = report.map_err(separation_as_error)?;
    let mut fit = finish_ps(PsMethod::Ipt, x, report.solution, report.iterations, report.converged)?;
    let hess_w: Vec<f64> = (0..x.rows()).map(|i| case[i] * (1.0 - d[i]) * fit.odds[i]).collect();
    let resid_w: Vec<f64> = (0..x.rows()).map(|i| case[i] * (d[i] - (1.0 - d[i]) * fit.odds[i])).collect();
    fit.linearization = Some(linearize(x, &hess_w, &resid_w)?);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrMethod {
    Ols,
    Wls,
}

/// Which conditional mean an outcome fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subgroup {
    /// Arbitrary row selection.
    Selected,
    /// `m_{d,t}`: outcome level in treatment group `d`, period `t`.
    Cell { d: u8, t: u8 },
    /// `m_{d,Delta}`: outcome change in treatment group `d`.
    Change { d: u8 },
}

#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub method: OrMethod,
    pub beta: Vec<f64>,
    pub subgroup: Subgroup,
    /// Predictions `x_i' beta` for every row.
    pub fitted: Vec<f64>,
    /// `n x k`, zero outside the subsample; `None` for externally supplied fits.
    pub linearization: Option<Matrix>,
    pub selected: usize,
}

impl OutcomeFit {
    pub fn with_subgroup(mut self, subgroup: Subgroup) -> Self {
        self.subgroup = subgroup;
        self
    }

    /// Fit with externally supplied predictions, e.g. oracle regressions.
    pub fn from_predictions(subgroup: Subgroup, fitted: Vec<f64>) -> Self {
        Self { method: OrMethod::Ols, beta: Vec::new(), subgroup, fitted, linearization: None, selected: 0 }
    }

    pub fn require_linearization(&self) -> Result<&Matrix> {
        self.linearization.as_ref().ok_or(Error::MissingLinearization)
    }
}

fn masked_weights(x: &Matrix, y: &[f64], mask: &[bool], case: &[f64]) -> Result<(Vec<f64>, usize)> {
    if y.len() != x.rows() || mask.len() != x.rows() || case.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response {}, mask {} and weights {}",
            x.rows(),
            y.len(),
            mask.len(),
            case.len()
        )));
    }
    let selected = mask.iter().filter(|m| **m).count();
    if selected < x.cols() {
        return Err(Error::InsufficientSubsample { selected, required: x.cols() });
    }
    let w = mask.iter().zip(case).map(|(m, c)| if *m { *c } else { 0.0 }).collect();
    Ok((w, selected))
}

fn fit_weighted(x: &Matrix, y: &[f64], w: &[f64], method: OrMethod, selected: usize) -> Result<OutcomeFit> {
    if y.iter().zip(w).any(|(yi, wi)| *wi != 0.0 && !yi.is_finite()) {
        return Err(Error::InvalidInput("non-finite response in regression subsample".into()));
    }
    let (beta, chol) = weighted_lsq_factored(x, y, w)?;
    let fitted = x.matvec(&beta);
    let n = x.rows() as f64;
    let mut inv = chol.inverse();
    inv.scale(n);
    let resid_w: Vec<f64> = (0..x.rows()).map(|i| w[i] * (y[i] - fitted[i])).collect();
    let linearization = Some(linearize_with(x, &inv, &resid_w)?);
    Ok(OutcomeFit { method, beta, subgroup: Subgroup::Selected, fitted, linearization, selected })
}

/// OLS of `y` on `x` over rows with `mask` set; predictions cover all rows.
pub fn fit_or_ols(x: &Matrix, y: &[f64], mask: &[bool]) -> Result<OutcomeFit> {
    fit_or_ols_weighted(x, y, mask, &ones(x.rows()))
}

pub fn fit_or_ols_weighted(x: &Matrix, y: &[f64], mask: &[bool], case: &[f64]) -> Result<OutcomeFit> {
    let (w, selected) = masked_weights(x, y, mask, case)?;
    fit_weighted(x, y, &w, OrMethod::Ols, selected)
}

/// Least squares over `mask` weighted by the fitted propensity odds `pi / (1 - pi)`.
pub fn fit_or_wls(x: &Matrix, y: &[f64], mask: &[bool], ps: &PropensityFit) -> Result<OutcomeFit> {
    fit_or_wls_weighted(x, y, mask, ps, &ones(x.rows()))
}

pub fn fit_or_wls_weighted(x: &Matrix, y: &[f64], mask: &[bool], ps: &PropensityFit, case: &[f64]) -> Result<OutcomeFit> {
    let (mut w, selected) = masked_weights(x, y, mask, case)?;
    if ps.odds.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "propensity fit has {} rows, design has {}",
            ps.odds.len(),
            x.rows()
        )));
    }
    for i in 0..x.rows() {
        if mask[i] {
            if ps.kept(i) && 1.0 - ps.fitted[i] < EXTREME_PS_EPS {
                return Err(Error::ExtremePropensity { index: i, value: ps.fitted[i] });
            }
            w[i] *= ps.control_odds(i);
        }
    }
    fit_weighted(x, y, &w, OrMethod::Wls, selected)
}

/// Sup-norm of the sample mean of linearization rows.
pub fn linearization_mean_norm(l: &Matrix) -> f64 {
    let means = l.weighted_column_means(&ones(l.rows()));
    sup_norm(&means)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept(n: usize) -> Matrix {
        Matrix::new(n, 1, vec![1.0; n]).unwrap()
    }

    #[test]
    fn mle_intercept_only_closed_form() {
        let d = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let fit = fit_logit_mle(&intercept(10), &d).unwrap();
        assert!((fit.gamma[0] - (3.0_f64 / 7.0).ln()).abs() < 1e-12);
        assert!(fit.fitted.iter().all(|p| (p - 0.3).abs() < 1e-12));
        assert!(linearization_mean_norm(fit.linearization.as_ref().unwrap()) < 1e-12);
    }

    #[test]
    fn mle_detects_perfect_separation() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, if i < 5 { 0.0 } else { 1.0 }]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let d: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        assert_eq!(fit_logit_mle(&x, &d).unwrap_err(), Error::Separation);
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, (i as f64 - 19.5) / 7.0, ((i * 7) % 11) as f64]).collect();
        let d: Vec<f64> = (0..40).map(|i| (i >= 20) as u8 as f64).collect();
        assert_eq!(fit_logit_mle(&Matrix::from_rows(&rows).unwrap(), &d).unwrap_err(), Error::Separation);
    }

    #[test]
    fn single_class_is_rejected() {
        assert_eq!(fit_logit_mle(&intercept(4), &[1.0; 4]).unwrap_err(), Error::AllTreatedOrAllControl);
        assert_eq!(fit_logit_ipt(&intercept(4), &[0.0; 4]).unwrap_err(), Error::AllTreatedOrAllControl);
    }

    /// Textbook IRLS written independently of the Newton solver.
    fn irls(x: &[[f64; 2]], d: &[f64]) -> [f64; 2] {
        let mut b = [0.0, 0.0];
        for _ in 0..200 {
            let mut a = [[0.0; 2]; 2];
            let mut rhs = [0.0; 2];
            for (xi, di) in x.iter().zip(d) {
                let eta = xi[0] * b[0] + xi[1] * b[1];
                let p = 1.0 / (1.0 + (-eta).exp());
                let w = p * (1.0 - p);
                let z = eta + (di - p) / w;
                for r in 0..2 {
                    rhs[r] += w * xi[r] * z;
                    for c in 0..2 {
                        a[r][c] += w * xi[r] * xi[c];
                    }
                }
            }
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            b = [
                (a[1][1] * rhs[0] - a[0][1] * rhs[1]) / det,
                (a[0][0] * rhs[1] - a[1][0] * rhs[0]) / det,
            ];
        }
        b
    }

    #[test]
    fn mle_matches_irls_oracle() {
        let xs = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let d = [0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let rows: Vec<[f64; 2]> = xs.iter().map(|&v| [1.0, v]).collect();
        let oracle = irls(&rows, &d);
        let x = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let fit = fit_logit_mle(&x, &d).unwrap();
        assert!((fit.gamma[0] - oracle[0]).abs() < 1e-8);
        assert!((fit.gamma[1] - oracle[1]).abs() < 1e-8);
    }

    #[test]
    fn ipt_intercept_only_closed_form() {
        let d = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let fit = fit_logit_ipt(&intercept(10), &d).unwrap();
        assert!((fit.gamma[0].exp() - 4.0 / 6.0).abs() < 1e-12);
        assert!(fit.fitted.iter().all(|p| (p - 0.4).abs() < 1e-12));
        let mle = fit_logit_mle(&intercept(10), &d).unwrap();
        for (a, b) in fit.fitted.iter().zip(&mle.fitted) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn ipt_objective(rows: &[[f64; 3]], d: &[f64], g: [f64; 3]) -> f64 {
        rows.iter()
            .zip(d)
            .map(|(r, di)| {
                let eta = r[0] * g[0] + r[1] * g[1] + r[2] * g[2];
                di * eta - (1.0 - di) * eta.exp()
            })
            .sum::<f64>()
            / rows.len() as f64
    }

    /// Coarse grid followed by coordinate-wise golden-section polishing.
    fn brute_force_ipt(rows: &[[f64; 3]], d: &[f64]) -> [f64; 3] {
        let mut best = [0.0; 3];
        let mut best_v = f64::NEG_INFINITY;
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.25).collect();
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let v = ipt_objective(rows, d, [a, b, c]);
                    if v > best_v {
                        best_v = v;
                        best = [a, b, c];
                    }
                }
            }
        }
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            for j in 0..3 {
                let (mut lo, mut hi) = (best[j] - 0.5, best[j] + 0.5);
                for _ in 0..100 {
                    let m1 = hi - phi * (hi - lo);
                    let m2 = lo + phi * (hi - lo);
                    let mut g1 = best;
                    g1[j] = m1;
                    let mut g2 = best;
                    g2[j] = m2;
                    if ipt_objective(rows, d, g1) < ipt_objective(rows, d, g2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                best[j] = 0.5 * (lo + hi);
            }
        }
        best
    }

    fn ten_row_fixture() -> (Vec<[f64; 3]>, Vec<f64>) {
        let rows = vec![
            [1.0, 0.2, -1.0],
            [1.0, -0.5, 0.3],
            [1.0, 1.1, 0.8],
            [1.0, -1.3, -0.2],
            [1.0, 0.7, 1.5],
            [1.0, 0.0, -0.7],
            [1.0, -0.9, 0.9],
            [1.0, 1.6, -1.2],
            [1.0, -0.2, 0.1],
            [1.0, 0.4, -0.4],
        ];
        let d = vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        (rows, d)
    }

    #[test]
    fn ipt_matches_brute_force_maximizer() {
        let (rows, d) = ten_row_fixture();
        let oracle = brute_force_ipt(&rows, &d);
        let x = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let fit = fit_logit_ipt(&x, &d).unwrap();
        for j in 0..3 {
            assert!((fit.gamma[j] - oracle[j]).abs() < 1e-6, "{:?} vs {:?}", fit.gamma, oracle);
        }
    }

    #[test]
    fn ipt_balances_covariates_exactly() {
        let (rows, d) = ten_row_fixture();
        let x = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let fit = fit_logit_ipt(&x, &d).unwrap();
        let n1: f64 = d.iter().sum();
        let w0: Vec<f64> = (0..10).map(|i| (1.0 - d[i]) * fit.odds[i]).collect();
        let s0: f64 = w0.iter().sum();
        for j in 0..3 {
            let treated: f64 = (0..10).map(|i| d[i] * rows[i][j]).sum::<f64>() / n1;
            let control: f64 = (0..10).map(|i| w0[i] * rows[i][j]).sum::<f64>() / s0;
            assert!((treated - control).abs() < 1e-8);
        }
        assert!(linearization_mean_norm(fit.linearization.as_ref().unwrap()) < 1e-8);
    }

    #[test]
    fn ols_examples() {
        let fit = fit_or_ols(&intercept(3), &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-14);
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 5.0]]).unwrap();
        let y = [3.0, 5.0, 7.0, 100.0];
        let fit = fit_or_ols(&x, &y, &[true, true, true, false]).unwrap();
        assert!((fit.beta[0] - 3.0).abs() < 1e-12 && (fit.beta[1] - 2.0).abs() < 1e-12);
        assert!((fit.fitted[3] - 13.0).abs() < 1e-12);
        let l = fit.linearization.unwrap();
        assert_eq!(l.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn ols_on_controls_matches_hand_normal_equations() {
        // controls: x = 0, 1, 3 with y = 1, 2, 6
        // sum x = 4, sum x^2 = 10, sum y = 9, sum xy = 20, n = 3
        // slope = (3*20 - 4*9) / (3*10 - 16) = 24/14, intercept = (9 - 4*24/14)/3
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 3.0],
            vec![1.0, 2.0],
            vec![1.0, 4.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let y = [1.0, 2.0, 6.0, 9.0, 9.0, 9.0];
        let mask = [true, true, true, false, false, false];
        let fit = fit_or_ols(&x, &y, &mask).unwrap();
        let slope = 24.0 / 14.0;
        let icpt = (9.0 - 4.0 * slope) / 3.0;
        assert!((fit.beta[0] - icpt).abs() < 1e-13);
        assert!((fit.beta[1] - slope).abs() < 1e-13);
    }

    #[test]
    fn ols_rejects_small_subsample() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let err = fit_or_ols(&x, &[1.0, 2.0, 3.0], &[true, false, false]).unwrap_err();
        assert_eq!(err, Error::InsufficientSubsample { selected: 1, required: 2 });
    }

    #[test]
    fn wls_examples() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 3.0],
            vec![1.0, 2.0],
            vec![1.0, 4.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let y = [1.0, 2.0, 6.0, 9.0, 9.0, 9.0];
        let mask = [true, true, true, true, false, false];
        let half = PropensityFit::from_probabilities(PsMethod::Mle, vec![0.5; 6]).unwrap();
        let ols = fit_or_ols(&x, &y, &mask).unwrap();
        let wls = fit_or_wls(&x, &y, &mask, &half).unwrap();
        for (a, b) in ols.beta.iter().zip(&wls.beta) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = vec![0.2, 0.6, 0.2, 0.6, 0.2, 0.6];
        let ps = PropensityFit::from_probabilities(PsMethod::Mle, p.clone()).unwrap();
        let wls = fit_or_wls(&x, &y, &mask, &ps).unwrap();
        let w: Vec<f64> = (0..6).map(|i| if mask[i] { p[i] / (1.0 - p[i]) } else { 0.0 }).collect();
        let oracle = crate::numkit::weighted_lsq(&x, &y, &w).unwrap();
        for (a, b) in oracle.iter().zip(&wls.beta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wls_intercept_is_odds_weighted_mean() {
        let d = [1.0, 0.0, 1.0, 0.0, 0.0];
        let rows: Vec<Vec<f64>> = [0.5, -1.0, 1.5, 0.2, 1.0].iter().map(|&v| vec![1.0, v]).collect();
        let xps = Matrix::from_rows(&rows).unwrap();
        let ps = fit_logit_mle(&xps, &d).unwrap();
        let y = [3.0, 1.0, 4.0, 1.0, 5.0];
        let mask: Vec<bool> = d.iter().map(|v| *v == 0.0).collect();
        let fit = fit_or_wls(&intercept(5), &y, &mask, &ps).unwrap();
        let num: f64 = (0..5).filter(|&i| mask[i]).map(|i| ps.odds[i] * y[i]).sum();
        let den: f64 = (0..5).filter(|&i| mask[i]).map(|i| ps.odds[i]).sum();
        assert!((fit.beta[0] - num / den).abs() < 1e-12);
    }

    #[test]
    fn wls_rejects_extreme_control_propensity() {
        let ps = PropensityFit::from_probabilities(PsMethod::Mle, vec![0.5, 1.0 - 1e-7, 0.5]).unwrap();
        let err = fit_or_wls(&intercept(3), &[1.0, 2.0, 3.0], &[true; 3], &ps).unwrap_err();
        assert!(matches!(err, Error::ExtremePropensity { index: 1, .. }));
    }
}
