//! ATT estimators for two-period panel data.

use crate::error::{Error, Result};
use crate::inference::{self, multiplier_bootstrap, se_ci_from_eif, EifVector};
use crate::nuisance::{
    fit_logit_ipt, fit_logit_ipt_weighted, fit_logit_mle, fit_logit_mle_weighted, fit_or_ols, fit_or_ols_weighted, fit_or_wls,
    OutcomeFit, PropensityFit, PsMethod, Subgroup,
};
use crate::numkit::{quantile_sorted, sum, sup_norm, weighted_lsq_factored, Matrix};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Moment vectors of the improved estimators must vanish to this level.
pub const MOMENT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct PanelDataset {
    y0: Vec<f64>,
    y1: Vec<f64>,
    d: Vec<f64>,
    dy: Vec<f64>,
    x: Matrix,
}

pub(crate) fn validate_treatment(d: &[f64]) -> Result<()> {
    if let Some(i) = d.iter().position(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput(format!("treatment indicator at row {i} is not binary")));
    }
    let n1 = d.iter().filter(|v| **v == 1.0).count();
    if n1 == 0 || n1 == d.len() {
        return Err(Error::AllTreatedOrAllControl);
    }
    Ok(())
}

pub(crate) fn validate_design(x: &Matrix, n: usize) -> Result<()> {
    if x.rows() != n {
        return Err(Error::DimensionMismatch(format!("design has {} rows, expected {n}", x.rows())));
    }
    if x.cols() == 0 || (0..n).any(|i| x.get(i, 0) != 1.0) {
        return Err(Error::InvalidInput("first design column must be the constant 1".into()));
    }
    Ok(())
}

impl PanelDataset {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>, d: Vec<f64>, x: Matrix) -> Result<Self> {
        let n = d.len();
        if y0.len() != n || y1.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "outcome vectors have lengths {} and {}, treatment has {n}",
                y0.len(),
                y1.len()
            )));
        }
        if y0.iter().chain(&y1).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcomes must be finite".into()));
        }
        validate_treatment(&d)?;
        validate_design(&x, n)?;
        let dy = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
        Ok(Self { y0, y1, d, dy, x })
    }

    /// Same outcomes and treatment with a different covariate design.
    pub fn with_design(&self, x: Matrix) -> Result<Self> {
        Self::new(self.y0.clone(), self.y1.clone(), self.d.clone(), x)
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn delta_y(&self) -> &[f64] {
        &self.dy
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn treated_count(&self) -> usize {
        self.d.iter().filter(|v| **v == 1.0).count()
    }

    pub fn controls(&self) -> Vec<bool> {
        self.d.iter().map(|v| *v == 0.0).collect()
    }
}

/// Estimator catalog shared by both designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Twfe,
    Or,
    Ipw,
    IpwStd,
    Dr,
    DrImp,
    Dr1,
    Dr2,
    Dr1Imp,
    Dr2Imp,
}

impl EstimatorTag {
    pub const PANEL: [EstimatorTag; 6] =
        [EstimatorTag::Twfe, EstimatorTag::Or, EstimatorTag::Ipw, EstimatorTag::IpwStd, EstimatorTag::Dr, EstimatorTag::DrImp];
    pub const RC: [EstimatorTag; 8] = [
        EstimatorTag::Twfe,
        EstimatorTag::Or,
        EstimatorTag::Ipw,
        EstimatorTag::IpwStd,
        EstimatorTag::Dr1,
        EstimatorTag::Dr2,
        EstimatorTag::Dr1Imp,
        EstimatorTag::Dr2Imp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Twfe => "twfe",
            EstimatorTag::Or => "or",
            EstimatorTag::Ipw => "ipw",
            EstimatorTag::IpwStd => "ipw_std",
            EstimatorTag::Dr => "dr",
            EstimatorTag::DrImp => "dr_imp",
            EstimatorTag::Dr1 => "dr1",
            EstimatorTag::Dr2 => "dr2",
            EstimatorTag::Dr1Imp => "dr1_imp",
            EstimatorTag::Dr2Imp => "dr2_imp",
        }
    }

    pub fn is_doubly_robust(self) -> bool {
        matches!(
            self,
            EstimatorTag::Dr | EstimatorTag::DrImp | EstimatorTag::Dr1 | EstimatorTag::Dr2 | EstimatorTag::Dr1Imp | EstimatorTag::Dr2Imp
        )
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorTag::PANEL
            .iter()
            .chain(EstimatorTag::RC.iter())
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    InfluenceFunction,
    ClusterRobust,
    HeteroskedasticityRobust,
    Bootstrap,
    /// Bootstrap disabled by configuration.
    Skipped,
}

/// Distribution of fitted propensity scores among comparison units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySummary {
    pub min: f64,
    pub max: f64,
    /// 10th through 90th percentiles.
    pub deciles: Vec<f64>,
    pub trimmed: usize,
}

impl PropensitySummary {
    pub fn from_fit(ps: &PropensityFit, d: &[f64]) -> Self {
        let mut p: Vec<f64> = (0..d.len()).filter(|&i| d[i] == 0.0).map(|i| ps.fitted[i]).collect();
        p.sort_by(f64::total_cmp);
        let trimmed = (0..d.len()).filter(|&i| d[i] == 0.0 && !ps.kept(i)).count();
        if p.is_empty() {
            return Self { min: f64::NAN, max: f64::NAN, deciles: Vec::new(), trimmed };
        }
        Self {
            min: p[0],
            max: p[p.len() - 1],
            deciles: (1..10).map(|k| quantile_sorted(&p, k as f64 / 10.0)).collect(),
            trimmed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub se_method: SeMethod,
    pub propensity: Option<PropensitySummary>,
    pub ps_method: Option<PsMethod>,
    pub ps_converged: Option<bool>,
    pub ps_iterations: Option<usize>,
    pub bootstrap_failures: Option<usize>,
    /// Largest first-order-condition residual of the improved first steps.
    pub moment_residual: Option<f64>,
}

impl Diagnostics {
    pub(crate) fn new(se_method: SeMethod) -> Self {
        Self {
            se_method,
            propensity: None,
            ps_method: None,
            ps_converged: None,
            ps_iterations: None,
            bootstrap_failures: None,
            moment_residual: None,
        }
    }

    pub(crate) fn with_ps(mut self, ps: &PropensityFit, d: &[f64]) -> Self {
        self.propensity = Some(PropensitySummary::from_fit(ps, d));
        self.ps_method = Some(ps.method);
        self.ps_converged = Some(ps.converged);
        self.ps_iterations = Some(ps.iterations);
        self
    }
}

#[derive(Debug, Clone)]
pub struct AttEstimate {
    pub method: EstimatorTag,
    pub att: f64,
    /// `None` when the bootstrap is disabled.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub level: f64,
    /// Influence values; empty when the standard error comes from the bootstrap.
    pub if_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub level: f64,
    /// Zero disables the bootstrap for OR and IPW estimators.
    pub bootstrap_draws: usize,
    pub seed: u64,
    /// Comparison units with fitted propensity above this are dropped.
    pub trim: Option<f64>,
    /// Propensity method of the non-improved estimators.
    pub ps_method: PsMethod,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { level: 0.95, bootstrap_draws: 999, seed: 0, trim: None, ps_method: PsMethod::Mle }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Usage(format!("confidence level {} is outside (0, 1)", self.level)));
        }
        if let Some(t) = self.trim {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Usage(format!("trim threshold {t} is outside (0, 1]")));
            }
        }
        Ok(())
    }
}

fn from_influence(method: EstimatorTag, att: f64, values: Vec<f64>, cfg: &InferenceConfig, diagnostics: Diagnostics) -> AttEstimate {
    let (se, ci) = se_ci_from_eif(&values, att, cfg.level);
    AttEstimate { method, att, se: Some(se), ci: Some(ci), level: cfg.level, if_values: values, diagnostics }
}

pub(crate) fn from_bootstrap<F>(
    method: EstimatorTag,
    att: f64,
    n: usize,
    cfg: &InferenceConfig,
    mut diagnostics: Diagnostics,
    estimator: F,
) -> Result<AttEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if cfg.bootstrap_draws == 0 {
        diagnostics.se_method = SeMethod::Skipped;
        return Ok(AttEstimate { method, att, se: None, ci: None, level: cfg.level, if_values: Vec::new(), diagnostics });
    }
    let out = multiplier_bootstrap(estimator, n, cfg.bootstrap_draws, cfg.seed)?;
    diagnostics.bootstrap_failures = Some(out.failed);
    let z = inference::z_value(cfg.level);
    Ok(AttEstimate {
        method,
        att,
        se: Some(out.se),
        ci: Some((att - z * out.se, att + z * out.se)),
        level: cfg.level,
        if_values: Vec::new(),
        diagnostics,
    })
}

/// Hajek weights for the panel estimators, each summing to one.
#[derive(Debug, Clone)]
pub struct PanelWeights {
    pub w1: Vec<f64>,
    pub w0: Vec<f64>,
}

pub fn panel_weights(d: &[f64], ps: &PropensityFit, case: &[f64]) -> Result<PanelWeights> {
    let n = d.len();
    if ps.fitted.len() != n || case.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "propensity fit has {} rows, weights {}, data {n}",
            ps.fitted.len(),
            case.len()
        )));
    }
    let a1: Vec<f64> = (0..n).map(|i| case[i] * d[i]).collect();
    let a0: Vec<f64> = (0..n).map(|i| case[i] * (1.0 - d[i]) * ps.control_odds(i)).collect();
    let s1 = sum(a1.iter().copied());
    let s0 = sum(a0.iter().copied());
    if !(s1 > 0.0) {
        return Err(Error::AllTreatedOrAllControl);
    }
    if !(s0 > 0.0) {
        return Err(Error::InvalidInput("no comparison units carry positive weight".into()));
    }
    Ok(PanelWeights { w1: a1.iter().map(|v| v / s1).collect(), w0: a0.iter().map(|v| v / s0).collect() })
}

pub(crate) fn fit_ps_weighted(x: &Matrix, d: &[f64], method: PsMethod, case: Option<&[f64]>) -> Result<PropensityFit> {
    match (method, case) {
        (PsMethod::Mle, None) => fit_logit_mle(x, d),
        (PsMethod::Ipt, None) => fit_logit_ipt(x, d),
        (PsMethod::Mle, Some(c)) => fit_logit_mle_weighted(x, d, c),
        (PsMethod::Ipt, Some(c)) => fit_logit_ipt_weighted(x, d, c),
    }
}

/// Refits `ps` on reweighted data, or keeps it fixed if it was supplied externally.
pub(crate) fn refit_ps(ps: &PropensityFit, x: &Matrix, d: &[f64], case: &[f64]) -> Result<PropensityFit> {
    if ps.gamma.is_empty() {
        return Ok(ps.clone());
    }
    Ok(fit_ps_weighted(x, d, ps.method, Some(case))?.with_trim(ps.trim))
}

// ---------------------------------------------------------------- TWFE

/// Stacked two-period design `(1, T, D, T*D, X without constant)`.
fn twfe_stack(x: &Matrix, d: &[f64], t: &[f64]) -> Matrix {
    let n = x.rows();
    let k = x.cols() - 1;
    let mut data = Vec::with_capacity(n * (4 + k));
    for i in 0..n {
        data.extend_from_slice(&[1.0, t[i], d[i], t[i] * d[i]]);
        data.extend_from_slice(&x.row(i)[1..]);
    }
    Matrix::new(n, 4 + k, data).expect("finite design")
}

/// OLS coefficient on `T*D` and per-cluster influence values.
///
/// `cluster[r]` maps stacked row `r` to its unit; influence values are
/// `[A^{-1} s_c]_3` with `A = X'X / n_clusters` and `s_c` the cluster score.
pub(crate) fn interaction_ols(z: &Matrix, y: &[f64], case: &[f64], cluster: &[usize], clusters: usize) -> Result<(f64, Vec<f64>)> {
    let (beta, chol) = weighted_lsq_factored(z, y, case)?;
    let fitted = z.matvec(&beta);
    let k = z.cols();
    let mut scores = vec![vec![0.0; k]; clusters];
    for r in 0..z.rows() {
        let e = case[r] * (y[r] - fitted[r]);
        for (s, xv) in scores[cluster[r]].iter_mut().zip(z.row(r)) {
            *s += e * xv;
        }
    }
    let mut e3 = vec![0.0; k];
    e3[3] = 1.0;
    let row3 = chol.solve(&e3);
    let nc = clusters as f64;
    let ifv = scores.iter().map(|s| nc * crate::numkit::dot(&row3, s)).collect();
    Ok((beta[3], ifv))
}

fn twfe_panel_point(data: &PanelDataset, case: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = data.n();
    let x2 = stack_rows(data.x());
    let d2: Vec<f64> = data.d.iter().chain(&data.d).copied().collect();
    let t2: Vec<f64> = (0..2 * n).map(|r| if r < n { 0.0 } else { 1.0 }).collect();
    let z = twfe_stack(&x2, &d2, &t2);
    let y: Vec<f64> = data.y0.iter().chain(&data.y1).copied().collect();
    let w: Vec<f64> = case.iter().chain(case).copied().collect();
    let cluster: Vec<usize> = (0..2 * n).map(|r| r % n).collect();
    interaction_ols(&z, &y, &w, &cluster, n)
}

fn stack_rows(x: &Matrix) -> Matrix {
    let mut data = x.as_slice().to_vec();
    data.extend_from_slice(x.as_slice());
    Matrix::new(2 * x.rows(), x.cols(), data).expect("finite design")
}

/// Two-way fixed effects regression with unit-clustered standard errors.
pub fn att_twfe_panel(data: &PanelDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let (att, ifv) = twfe_panel_point(data, &vec![1.0; data.n()])?;
    Ok(from_influence(EstimatorTag::Twfe, att, ifv, cfg, Diagnostics::new(SeMethod::ClusterRobust)))
}

// ------------------------------------------------------------------ OR

fn or_panel_point(data: &PanelDataset, case: &[f64]) -> Result<f64> {
    let fit = fit_or_ols_weighted(data.x(), data.delta_y(), &data.controls(), case)?;
    let n = data.n();
    let num = sum((0..n).map(|i| case[i] * data.d[i] * (data.dy[i] - fit.fitted[i])));
    let den = sum((0..n).map(|i| case[i] * data.d[i]));
    Ok(num / den)
}

/// Outcome regression: treated mean change minus predicted comparison change.
pub fn att_or_panel(data: &PanelDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = or_panel_point(data, &vec![1.0; data.n()])?;
    from_bootstrap(EstimatorTag::Or, att, data.n(), cfg, Diagnostics::new(SeMethod::Bootstrap), |c| or_panel_point(data, c))
}

// ----------------------------------------------------------------- IPW

fn ipw_panel_point(data: &PanelDataset, ps: &PropensityFit, case: &[f64]) -> Result<f64> {
    ps.check_overlap(&data.d)?;
    let n = data.n();
    let num = sum((0..n).map(|i| case[i] * (data.d[i] - (1.0 - data.d[i]) * ps.control_odds(i)) * data.dy[i]));
    let den = sum((0..n).map(|i| case[i] * data.d[i]));
    Ok(num / den)
}

/// Horvitz-Thompson inverse probability weighting.
pub fn att_ipw_panel(data: &PanelDataset, ps: &PropensityFit, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = ipw_panel_point(data, ps, &vec![1.0; data.n()])?;
    let diag = Diagnostics::new(SeMethod::Bootstrap).with_ps(ps, &data.d);
    from_bootstrap(EstimatorTag::Ipw, att, data.n(), cfg, diag, |c| {
        let ps_b = refit_ps(ps, data.x(), &data.d, c)?;
        ipw_panel_point(data, &ps_b, c)
    })
}

fn ipw_std_panel_point(data: &PanelDataset, ps: &PropensityFit, case: &[f64]) -> Result<f64> {
    ps.check_overlap(&data.d)?;
    let w = panel_weights(&data.d, ps, case)?;
    Ok(sum((0..data.n()).map(|i| (w.w1[i] - w.w0[i]) * data.dy[i])))
}

/// Hajek (normalized) inverse probability weighting.
pub fn att_ipw_std_panel(data: &PanelDataset, ps: &PropensityFit, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = ipw_std_panel_point(data, ps, &vec![1.0; data.n()])?;
    let diag = Diagnostics::new(SeMethod::Bootstrap).with_ps(ps, &data.d);
    from_bootstrap(EstimatorTag::IpwStd, att, data.n(), cfg, diag, |c| {
        let ps_b = refit_ps(ps, data.x(), &data.d, c)?;
        ipw_std_panel_point(data, &ps_b, c)
    })
}

// ------------------------------------------------------------------ DR

fn dr_panel_point(data: &PanelDataset, ps: &PropensityFit, or_fit: &OutcomeFit, case: &[f64]) -> Result<f64> {
    ps.check_overlap(&data.d)?;
    if or_fit.fitted.len() != data.n() {
        return Err(Error::DimensionMismatch("outcome fit does not match the data".into()));
    }
    let w = panel_weights(&data.d, ps, case)?;
    Ok(sum((0..data.n()).map(|i| (w.w1[i] - w.w0[i]) * (data.dy[i] - or_fit.fitted[i]))))
}

/// Doubly robust estimator with generic first steps; its influence function
/// carries the estimation effect of both fits.
pub fn att_dr_panel(data: &PanelDataset, ps: &PropensityFit, or_fit: &OutcomeFit, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = dr_panel_point(data, ps, or_fit, &vec![1.0; data.n()])?;
    let eif = inference::eif_dr_panel(data, ps, or_fit, att, true)?;
    let diag = Diagnostics::new(SeMethod::InfluenceFunction).with_ps(ps, &data.d);
    Ok(from_influence(EstimatorTag::Dr, att, eif.values, cfg, diag))
}

/// Sample analogues of the three moment conditions under which the first
/// steps leave no estimation effect.
#[derive(Debug, Clone)]
pub struct MomentResiduals {
    /// `E_n[(w1 - w0) X]`.
    pub balance: Vec<f64>,
    /// `E_n[(1 - D) pi/(1 - pi) (dY - mu) X]`.
    pub score: Vec<f64>,
    /// `E_n[w0 (dY - mu)]`.
    pub control_mean: f64,
}

impl MomentResiduals {
    pub fn max_abs(&self) -> f64 {
        sup_norm(&self.balance).max(sup_norm(&self.score)).max(self.control_mean.abs())
    }
}

pub fn moment_residuals_panel(data: &PanelDataset, ps: &PropensityFit, or_fit: &OutcomeFit) -> Result<MomentResiduals> {
    let n = data.n();
    let nf = n as f64;
    let w = panel_weights(&data.d, ps, &vec![1.0; n])?;
    let diff: Vec<f64> = (0..n).map(|i| nf * (w.w1[i] - w.w0[i])).collect();
    let sc: Vec<f64> =
        (0..n).map(|i| (1.0 - data.d[i]) * ps.control_odds(i) * (data.dy[i] - or_fit.fitted[i])).collect();
    Ok(MomentResiduals {
        balance: data.x.weighted_column_means(&diff),
        score: data.x.weighted_column_means(&sc),
        control_mean: sum((0..n).map(|i| w.w0[i] * (data.dy[i] - or_fit.fitted[i]))),
    })
}

/// First steps of the improved estimator: tilting propensity score and
/// odds-weighted regression of `dY` among comparison units.
pub fn fit_improved_panel(data: &PanelDataset, trim: Option<f64>) -> Result<(PropensityFit, OutcomeFit)> {
    let ps = fit_logit_ipt(data.x(), &data.d)?.with_trim(trim);
    ps.check_overlap(&data.d)?;
    let or_fit = fit_or_wls(data.x(), data.delta_y(), &data.controls(), &ps)?.with_subgroup(Subgroup::Change { d: 0 });
    Ok((ps, or_fit))
}

/// Improved doubly robust estimator; doubly robust for inference.
pub fn att_dr_imp_panel(data: &PanelDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let (ps, or_fit) = fit_improved_panel(data, cfg.trim)?;
    let att = dr_panel_point(data, &ps, &or_fit, &vec![1.0; data.n()])?;
    let moments = moment_residuals_panel(data, &ps, &or_fit)?;
    let eif = inference::eif_dr_imp_panel(data, &ps, &or_fit, att)?;
    let mut diag = Diagnostics::new(SeMethod::InfluenceFunction).with_ps(&ps, &data.d);
    diag.moment_residual = Some(moments.max_abs());
    Ok(from_influence(EstimatorTag::DrImp, att, eif.values, cfg, diag))
}

/// Influence function of the improved estimator evaluated with the generic
/// estimation-effect terms, for checking that they vanish.
pub fn eif_dr_imp_panel_with_correction(data: &PanelDataset, trim: Option<f64>) -> Result<(EifVector, EifVector)> {
    let (ps, or_fit) = fit_improved_panel(data, trim)?;
    let att = dr_panel_point(data, &ps, &or_fit, &vec![1.0; data.n()])?;
    let plain = inference::eif_dr_imp_panel(data, &ps, &or_fit, att)?;
    let corrected = inference::eif_dr_panel(data, &ps, &or_fit, att, true)?;
    Ok((plain, corrected))
}

/// Point estimate of `tag` on case-weighted data, refitting every first step.
pub fn reweighted_att_panel(tag: EstimatorTag, data: &PanelDataset, case: &[f64], cfg: &InferenceConfig) -> Result<f64> {
    match tag {
        EstimatorTag::Twfe => twfe_panel_point(data, case).map(|r| r.0),
        EstimatorTag::Or => or_panel_point(data, case),
        EstimatorTag::Ipw => {
            let ps = fit_ps_weighted(data.x(), &data.d, cfg.ps_method, Some(case))?.with_trim(cfg.trim);
            ipw_panel_point(data, &ps, case)
        }
        EstimatorTag::IpwStd => {
            let ps = fit_ps_weighted(data.x(), &data.d, cfg.ps_method, Some(case))?.with_trim(cfg.trim);
            ipw_std_panel_point(data, &ps, case)
        }
        EstimatorTag::Dr => {
            let ps = fit_ps_weighted(data.x(), &data.d, cfg.ps_method, Some(case))?.with_trim(cfg.trim);
            let or_fit = fit_or_ols_weighted(data.x(), data.delta_y(), &data.controls(), case)?;
            dr_panel_point(data, &ps, &or_fit, case)
        }
        EstimatorTag::DrImp => {
            let ps = fit_ps_weighted(data.x(), &data.d, PsMethod::Ipt, Some(case))?.with_trim(cfg.trim);
            let or_fit = crate::nuisance::fit_or_wls_weighted(data.x(), data.delta_y(), &data.controls(), &ps, case)?;
            dr_panel_point(data, &ps, &or_fit, case)
        }
        other => Err(Error::Usage(format!("estimator '{other}' is not available for panel data"))),
    }
}

/// Runs several estimators, sharing first-step fits between them. Each
/// estimator succeeds or fails on its own.
pub fn estimate_panel(data: &PanelDataset, tags: &[EstimatorTag], cfg: &InferenceConfig) -> Vec<(EstimatorTag, Result<AttEstimate>)> {
    let needs_ps = tags.iter().any(|t| matches!(t, EstimatorTag::Ipw | EstimatorTag::IpwStd | EstimatorTag::Dr));
    let ps = if needs_ps { Some(fit_ps_weighted(data.x(), &data.d, cfg.ps_method, None).map(|p| p.with_trim(cfg.trim))) } else { None };
    let or_fit = if tags.contains(&EstimatorTag::Dr) {
        Some(fit_or_ols(data.x(), data.delta_y(), &data.controls()).map(|f| f.with_subgroup(Subgroup::Change { d: 0 })))
    } else {
        None
    };
    tags.iter()
        .map(|&tag| {
            let res = match tag {
                EstimatorTag::Twfe => att_twfe_panel(data, cfg),
                EstimatorTag::Or => att_or_panel(data, cfg),
                EstimatorTag::Ipw => shared(&ps).and_then(|p| att_ipw_panel(data, p, cfg)),
                EstimatorTag::IpwStd => shared(&ps).and_then(|p| att_ipw_std_panel(data, p, cfg)),
                EstimatorTag::Dr => {
                    shared(&ps).and_then(|p| shared(&or_fit).and_then(|o| att_dr_panel(data, p, o, cfg)))
                }
                EstimatorTag::DrImp => att_dr_imp_panel(data, cfg),
                other => Err(Error::Usage(format!("estimator '{other}' is not available for panel data"))),
            };
            (tag, res)
        })
        .collect()
}

pub(crate) fn shared<T>(fit: &Option<Result<T>>) -> Result<&T> {
    match fit {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(e.clone()),
        None => Err(Error::InvalidInput("first step was not fitted".into())),
    }
}
