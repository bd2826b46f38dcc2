//! Influence functions of the doubly robust estimators, plug-in standard
//! errors and the multiplier bootstrap used for the comparison estimators.

use crate::error::{Error, Result};
use crate::nuisance::{OutcomeFit, PropensityFit};
use crate::numkit::{mean, quantile_sorted, sum, Matrix};
use crate::panel_est::{panel_weights, PanelDataset};
use crate::rc_est::{rc_weights, RcDataset};
use crate::rng::{normal_quantile, Stream, Tag};
use rayon::prelude::*;

/// `Phi^{-1}(0.75) - Phi^{-1}(0.25)`.
pub const NORMAL_IQR: f64 = 1.348_979_500_392_163_4;

/// Per-observation influence values with their decomposition.
#[derive(Debug, Clone)]
pub struct EifVector {
    pub values: Vec<f64>,
    /// Treated-side term, `eta_1`.
    pub treated: Vec<f64>,
    /// Comparison-side term, `eta_0`.
    pub control: Vec<f64>,
    /// First-step estimation effect, `eta_est`; zeros when not requested.
    pub estimation: Vec<f64>,
}

impl EifVector {
    fn assemble(treated: Vec<f64>, control: Vec<f64>, estimation: Vec<f64>) -> Self {
        let values = (0..treated.len()).map(|i| treated[i] - control[i] - estimation[i]).collect();
        Self { values, treated, control, estimation }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `E_n[eta^2]`, the plug-in asymptotic variance.
    pub fn second_moment(&self) -> f64 {
        mean(&self.values.iter().map(|v| v * v).collect::<Vec<_>>())
    }
}

/// Two-sided critical value for confidence level `level`.
pub fn z_value(level: f64) -> f64 {
    normal_quantile(1.0 - (1.0 - level) / 2.0)
}

/// `se = sqrt(E_n[eta^2] / n)` and the normal interval around `att`.
pub fn se_ci_from_eif(values: &[f64], att: f64, level: f64) -> (f64, (f64, f64)) {
    let n = values.len() as f64;
    let v = sum(values.iter().map(|x| x * x)) / n;
    let se = (v / n).sqrt();
    let z = z_value(level);
    (se, (att - z * se, att + z * se))
}

/// `E_n[c_i x_i]` as a k-vector.
fn weighted_means(x: &Matrix, c: &[f64]) -> Vec<f64> {
    x.weighted_column_means(c)
}

/// Row-wise inner products `l_i' m`.
fn project(l: &Matrix, m: &[f64]) -> Vec<f64> {
    l.matvec(m)
}

/// Influence function of the panel DR estimator, optionally including the
/// first-step estimation effect of `ps` and `or_fit`.
pub fn eif_dr_panel(
    data: &PanelDataset,
    ps: &PropensityFit,
    or_fit: &OutcomeFit,
    _att: f64,
    include_est_effect: bool,
) -> Result<EifVector> {
    let n = data.n();
    let nf = n as f64;
    let w = panel_weights(data.d(), ps, &vec![1.0; n])?;
    let g: Vec<f64> = data.delta_y().iter().zip(&or_fit.fitted).map(|(a, b)| a - b).collect();
    let theta1 = sum((0..n).map(|i| w.w1[i] * g[i]));
    let theta0 = sum((0..n).map(|i| w.w0[i] * g[i]));
    let treated: Vec<f64> = (0..n).map(|i| nf * w.w1[i] * (g[i] - theta1)).collect();
    let control: Vec<f64> = (0..n).map(|i| nf * w.w0[i] * (g[i] - theta0)).collect();
    let estimation = if include_est_effect {
        let l_reg = or_fit.require_linearization()?;
        let l_ps = ps.require_linearization()?;
        let x = data.x();
        let diff: Vec<f64> = (0..n).map(|i| nf * (w.w1[i] - w.w0[i])).collect();
        let m_reg = weighted_means(x, &diff);
        let resid: Vec<f64> = (0..n).map(|i| nf * w.w0[i] * (g[i] - theta0)).collect();
        let m_ps = weighted_means(x, &resid);
        let a = project(l_reg, &m_reg);
        let b = project(l_ps, &m_ps);
        a.iter().zip(&b).map(|(u, v)| u + v).collect()
    } else {
        vec![0.0; n]
    };
    Ok(EifVector::assemble(treated, control, estimation))
}

/// `(w1 - w0)(dY - mu) - w1 * att` with Hajek weights and no estimation effect.
pub fn eif_dr_imp_panel(data: &PanelDataset, ps: &PropensityFit, or_fit: &OutcomeFit, att: f64) -> Result<EifVector> {
    let n = data.n();
    let nf = n as f64;
    let w = panel_weights(data.d(), ps, &vec![1.0; n])?;
    let g: Vec<f64> = data.delta_y().iter().zip(&or_fit.fitted).map(|(a, b)| a - b).collect();
    let treated: Vec<f64> = (0..n).map(|i| nf * w.w1[i] * (g[i] - att)).collect();
    let control: Vec<f64> = (0..n).map(|i| nf * w.w0[i] * g[i]).collect();
    Ok(EifVector::assemble(treated, control, vec![0.0; n]))
}

/// Nuisance fits entering the repeated cross-section DR estimators.
#[derive(Debug, Clone)]
pub struct RcFits {
    pub ps: PropensityFit,
    /// Comparison group, pre period.
    pub or00: OutcomeFit,
    /// Comparison group, post period.
    pub or01: OutcomeFit,
    /// Treated group, pre period; required for `j = 2`.
    pub or10: Option<OutcomeFit>,
    /// Treated group, post period; required for `j = 2`.
    pub or11: Option<OutcomeFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcVariant {
    /// Comparison-group regressions only.
    One,
    /// Adds treated-group regressions; locally efficient.
    Two,
}

/// Influence function of the repeated cross-section DR estimators.
///
/// The regression estimation effect pairs `l_{0,1} - l_{0,0}` with
/// `E_n[(D/E_n[D] - w_0) X]`, where `w_0` are comparison odds weights pooled
/// over periods; the two coincide in the population under stationarity.
pub fn eif_dr_rc(variant: RcVariant, data: &RcDataset, fits: &RcFits, _att: f64, include_est_effect: bool) -> Result<EifVector> {
    let n = data.n();
    let nf = n as f64;
    let ones = vec![1.0; n];
    let w = rc_weights(data.d(), data.t(), &fits.ps, &ones)?;
    let y = data.y();
    let mu00 = &fits.or00.fitted;
    let mu01 = &fits.or01.fitted;
    let g: Vec<f64> = (0..n).map(|i| y[i] - if data.t()[i] == 1.0 { mu01[i] } else { mu00[i] }).collect();
    let th = |wk: &[f64]| sum((0..n).map(|i| wk[i] * g[i]));
    let (t11, t10, t01, t00) = (th(&w.w11), th(&w.w10), th(&w.w01), th(&w.w00));
    let mut treated: Vec<f64> = (0..n).map(|i| nf * (w.w11[i] * (g[i] - t11) - w.w10[i] * (g[i] - t10))).collect();
    let control: Vec<f64> = (0..n).map(|i| nf * (w.w01[i] * (g[i] - t01) - w.w00[i] * (g[i] - t00))).collect();

    if variant == RcVariant::Two {
        let or10 = fits.or10.as_ref().ok_or_else(|| Error::InvalidInput("treated pre-period regression missing".into()))?;
        let or11 = fits.or11.as_ref().ok_or_else(|| Error::InvalidInput("treated post-period regression missing".into()))?;
        let d = data.d();
        let dsum = sum(d.iter().copied());
        let wd: Vec<f64> = d.iter().map(|v| v / dsum).collect();
        let h1: Vec<f64> = (0..n).map(|i| or11.fitted[i] - mu01[i]).collect();
        let h0: Vec<f64> = (0..n).map(|i| or10.fitted[i] - mu00[i]).collect();
        let m = |wk: &[f64], h: &[f64]| sum((0..n).map(|i| wk[i] * h[i]));
        let (phi1, psi1, phi0, psi0) = (m(&wd, &h1), m(&w.w11, &h1), m(&wd, &h0), m(&w.w10, &h0));
        for i in 0..n {
            treated[i] += nf
                * (wd[i] * (h1[i] - phi1) - w.w11[i] * (h1[i] - psi1) - wd[i] * (h0[i] - phi0) + w.w10[i] * (h0[i] - psi0));
        }
    }

    let estimation = if include_est_effect {
        let l_ps = fits.ps.require_linearization()?;
        let l01 = fits.or01.require_linearization()?;
        let l00 = fits.or00.require_linearization()?;
        let x = data.x();
        let d = data.d();
        let dsum = sum(d.iter().copied());
        let pooled: Vec<f64> = (0..n).map(|i| (1.0 - d[i]) * fits.ps.control_odds(i)).collect();
        let psum = sum(pooled.iter().copied());
        if !(psum > 0.0) {
            return Err(Error::InvalidInput("no comparison units carry positive weight".into()));
        }
        let diff: Vec<f64> = (0..n).map(|i| nf * (d[i] / dsum - pooled[i] / psum)).collect();
        let m_reg = weighted_means(x, &diff);
        let r1: Vec<f64> = (0..n).map(|i| nf * w.w01[i] * (g[i] - t01)).collect();
        let r0: Vec<f64> = (0..n).map(|i| nf * w.w00[i] * (g[i] - t00)).collect();
        let p1 = weighted_means(x, &r1);
        let p0 = weighted_means(x, &r0);
        let m_ps: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
        let a = project(l01, &m_reg);
        let b = project(l00, &m_reg);
        let c = project(l_ps, &m_ps);
        (0..n).map(|i| a[i] - b[i] + c[i]).collect()
    } else {
        vec![0.0; n]
    };
    Ok(EifVector::assemble(treated, control, estimation))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOutcome {
    pub se: f64,
    pub failed: usize,
    pub draws: usize,
}

/// Largest tolerated share of failed bootstrap draws.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.1;

/// Multiplier bootstrap with standard exponential case weights.
///
/// Draw `b` uses its own stream, so the outcome depends only on `seed`. The
/// standard error is the interquartile range of the draws over that of a
/// standard normal.
pub fn multiplier_bootstrap<F>(estimator: F, n: usize, draws: usize, seed: u64) -> Result<BootstrapOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let results: Vec<Option<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = Stream::new(seed, b as u64, Tag::Bootstrap);
            let case: Vec<f64> = (0..n).map(|_| rng.exponential()).collect();
            estimator(&case).ok().filter(|v| v.is_finite())
        })
        .collect();
    let mut ok: Vec<f64> = results.iter().flatten().copied().collect();
    let failed = draws - ok.len();
    if ok.len() < 2 || failed as f64 > MAX_BOOTSTRAP_FAILURE_RATE * draws as f64 {
        return Err(Error::NonFiniteDraw { failed, draws });
    }
    ok.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&ok, 0.75) - quantile_sorted(&ok, 0.25);
    Ok(BootstrapOutcome { se: iqr / NORMAL_IQR, failed, draws })
}
