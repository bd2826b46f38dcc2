//! ATT estimators for repeated cross-sections.

use crate::error::{Error, Result};
use crate::inference::{self, se_ci_from_eif, EifVector, RcFits, RcVariant};
use crate::nuisance::{
    fit_or_ols, fit_or_ols_weighted, fit_or_wls, fit_or_wls_weighted, OutcomeFit, PropensityFit, PsMethod, Subgroup,
};
use crate::numkit::{sum, sup_norm, Matrix};
use crate::panel_est::{
    fit_ps_weighted, from_bootstrap, interaction_ols, refit_ps, shared, validate_design, validate_treatment, AttEstimate,
    Diagnostics, EstimatorTag, InferenceConfig, SeMethod,
};

#[derive(Debug, Clone)]
pub struct RcDataset {
    y: Vec<f64>,
    t: Vec<f64>,
    d: Vec<f64>,
    x: Matrix,
}

impl RcDataset {
    pub fn new(y: Vec<f64>, t: Vec<f64>, d: Vec<f64>, x: Matrix) -> Result<Self> {
        let n = d.len();
        if y.len() != n || t.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "outcome has {} rows and period indicator {}, treatment has {n}",
                y.len(),
                t.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcomes must be finite".into()));
        }
        if let Some(i) = t.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidInput(format!("period indicator at row {i} is not binary")));
        }
        validate_treatment(&d)?;
        validate_design(&x, n)?;
        for dv in 0..2u8 {
            for tv in 0..2u8 {
                if !(0..n).any(|i| d[i] == dv as f64 && t[i] == tv as f64) {
                    return Err(Error::EmptyCell { d: dv, t: tv });
                }
            }
        }
        Ok(Self { y, t, d, x })
    }

    pub fn with_design(&self, x: Matrix) -> Result<Self> {
        Self::new(self.y.clone(), self.t.clone(), self.d.clone(), x)
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// Share of post-period observations.
    pub fn lambda_hat(&self) -> f64 {
        sum(self.t.iter().copied()) / self.n() as f64
    }

    pub fn cell_mask(&self, d: u8, t: u8) -> Vec<bool> {
        (0..self.n()).map(|i| self.d[i] == d as f64 && self.t[i] == t as f64).collect()
    }

    fn cell_mean(&self, d: u8, t: u8, case: &[f64]) -> f64 {
        let m = self.cell_mask(d, t);
        let num = sum((0..self.n()).filter(|&i| m[i]).map(|i| case[i] * self.y[i]));
        let den = sum((0..self.n()).filter(|&i| m[i]).map(|i| case[i]));
        num / den
    }

    /// `(Ybar11 - Ybar10) - (Ybar01 - Ybar00)`.
    pub fn cell_means_did(&self) -> f64 {
        let one = vec![1.0; self.n()];
        (self.cell_mean(1, 1, &one) - self.cell_mean(1, 0, &one)) - (self.cell_mean(0, 1, &one) - self.cell_mean(0, 0, &one))
    }
}

/// Hajek weights of the four `(d, t)` cells, each summing to one.
#[derive(Debug, Clone)]
pub struct RcWeights {
    pub w11: Vec<f64>,
    pub w10: Vec<f64>,
    pub w01: Vec<f64>,
    pub w00: Vec<f64>,
}

pub fn rc_weights(d: &[f64], t: &[f64], ps: &PropensityFit, case: &[f64]) -> Result<RcWeights> {
    let n = d.len();
    if ps.fitted.len() != n || t.len() != n || case.len() != n {
        return Err(Error::DimensionMismatch(format!("propensity fit has {} rows, data {n}", ps.fitted.len())));
    }
    let norm = |a: Vec<f64>, dv: u8, tv: u8| -> Result<Vec<f64>> {
        let s = sum(a.iter().copied());
        if !(s > 0.0) {
            return Err(Error::EmptyCell { d: dv, t: tv });
        }
        Ok(a.into_iter().map(|v| v / s).collect())
    };
    let treated = |tv: f64| (0..n).map(|i| case[i] * d[i] * (t[i] == tv) as u8 as f64).collect::<Vec<_>>();
    let control = |tv: f64| {
        (0..n).map(|i| case[i] * (1.0 - d[i]) * (t[i] == tv) as u8 as f64 * ps.control_odds(i)).collect::<Vec<_>>()
    };
    Ok(RcWeights {
        w11: norm(treated(1.0), 1, 1)?,
        w10: norm(treated(0.0), 1, 0)?,
        w01: norm(control(1.0), 0, 1)?,
        w00: norm(control(0.0), 0, 0)?,
    })
}

fn from_influence(method: EstimatorTag, att: f64, values: Vec<f64>, cfg: &InferenceConfig, diagnostics: Diagnostics) -> AttEstimate {
    let (se, ci) = se_ci_from_eif(&values, att, cfg.level);
    AttEstimate { method, att, se: Some(se), ci: Some(ci), level: cfg.level, if_values: values, diagnostics }
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

// ---------------------------------------------------------------- TWFE

fn twfe_rc_point(data: &RcDataset, case: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = data.n();
    let k = data.x.cols() - 1;
    let mut z = Vec::with_capacity(n * (4 + k));
    for i in 0..n {
        z.extend_from_slice(&[1.0, data.t[i], data.d[i], data.t[i] * data.d[i]]);
        z.extend_from_slice(&data.x.row(i)[1..]);
    }
    let z = Matrix::new(n, 4 + k, z)?;
    let cluster: Vec<usize> = (0..n).collect();
    interaction_ols(&z, &data.y, case, &cluster, n)
}

/// Pooled two-way fixed effects regression with heteroskedasticity-robust errors.
pub fn att_twfe_rc(data: &RcDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let (att, ifv) = twfe_rc_point(data, &ones(data.n()))?;
    Ok(from_influence(EstimatorTag::Twfe, att, ifv, cfg, Diagnostics::new(SeMethod::HeteroskedasticityRobust)))
}

// ------------------------------------------------------------------ OR

fn or_rc_point(data: &RcDataset, case: &[f64]) -> Result<f64> {
    let or00 = fit_or_ols_weighted(&data.x, &data.y, &data.cell_mask(0, 0), case)?;
    let or01 = fit_or_ols_weighted(&data.x, &data.y, &data.cell_mask(0, 1), case)?;
    let n = data.n();
    let dsum = sum((0..n).map(|i| case[i] * data.d[i]));
    let shift = sum((0..n).map(|i| case[i] * data.d[i] * (or01.fitted[i] - or00.fitted[i]))) / dsum;
    Ok(data.cell_mean(1, 1, case) - data.cell_mean(1, 0, case) - shift)
}

/// Outcome regression using comparison-group regressions in each period.
pub fn att_or_rc(data: &RcDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = or_rc_point(data, &ones(data.n()))?;
    from_bootstrap(EstimatorTag::Or, att, data.n(), cfg, Diagnostics::new(SeMethod::Bootstrap), |c| or_rc_point(data, c))
}

// ----------------------------------------------------------------- IPW

fn ipw_rc_point(data: &RcDataset, ps: &PropensityFit, case: &[f64]) -> Result<f64> {
    ps.check_overlap(&data.d)?;
    let n = data.n();
    let csum = sum(case.iter().copied());
    let lambda = sum((0..n).map(|i| case[i] * data.t[i])) / csum;
    let scale = lambda * (1.0 - lambda);
    let num = sum((0..n).map(|i| {
        let a = data.d[i] - (1.0 - data.d[i]) * ps.control_odds(i);
        case[i] * a * (data.t[i] - lambda) / scale * data.y[i]
    }));
    let den = sum((0..n).map(|i| case[i] * data.d[i]));
    Ok(num / den)
}

/// Horvitz-Thompson inverse probability weighting with `lambda = E_n[T]`.
pub fn att_ipw_rc(data: &RcDataset, ps: &PropensityFit, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = ipw_rc_point(data, ps, &ones(data.n()))?;
    let diag = Diagnostics::new(SeMethod::Bootstrap).with_ps(ps, &data.d);
    from_bootstrap(EstimatorTag::Ipw, att, data.n(), cfg, diag, |c| {
        let ps_b = refit_ps(ps, &data.x, &data.d, c)?;
        ipw_rc_point(data, &ps_b, c)
    })
}

fn ipw_std_rc_point(data: &RcDataset, ps: &PropensityFit, case: &[f64]) -> Result<f64> {
    ps.check_overlap(&data.d)?;
    let w = rc_weights(&data.d, &data.t, ps, case)?;
    Ok(sum((0..data.n()).map(|i| (w.w11[i] - w.w10[i] - w.w01[i] + w.w00[i]) * data.y[i])))
}

/// Hajek inverse probability weighting.
pub fn att_ipw_std_rc(data: &RcDataset, ps: &PropensityFit, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = ipw_std_rc_point(data, ps, &ones(data.n()))?;
    let diag = Diagnostics::new(SeMethod::Bootstrap).with_ps(ps, &data.d);
    from_bootstrap(EstimatorTag::IpwStd, att, data.n(), cfg, diag, |c| {
        let ps_b = refit_ps(ps, &data.x, &data.d, c)?;
        ipw_std_rc_point(data, &ps_b, c)
    })
}

// ------------------------------------------------------------------ DR

fn check_fit(fit: &OutcomeFit, n: usize) -> Result<()> {
    if fit.fitted.len() != n {
        return Err(Error::DimensionMismatch(format!("outcome fit has {} rows, data {n}", fit.fitted.len())));
    }
    Ok(())
}

/// Evaluates the DR estimator of the given variant at fixed first steps.
pub fn dr_rc_point(variant: RcVariant, data: &RcDataset, fits: &RcFits, case: &[f64]) -> Result<f64> {
    let n = data.n();
    fits.ps.check_overlap(&data.d)?;
    check_fit(&fits.or00, n)?;
    check_fit(&fits.or01, n)?;
    let w = rc_weights(&data.d, &data.t, &fits.ps, case)?;
    let (mu00, mu01) = (&fits.or00.fitted, &fits.or01.fitted);
    let g = |i: usize| data.y[i] - if data.t[i] == 1.0 { mu01[i] } else { mu00[i] };
    let mut att = sum((0..n).map(|i| (w.w11[i] - w.w10[i] - w.w01[i] + w.w00[i]) * g(i)));
    if variant == RcVariant::Two {
        let or10 = fits.or10.as_ref().ok_or_else(|| Error::InvalidInput("treated pre-period regression missing".into()))?;
        let or11 = fits.or11.as_ref().ok_or_else(|| Error::InvalidInput("treated post-period regression missing".into()))?;
        check_fit(or10, n)?;
        check_fit(or11, n)?;
        let dsum = sum((0..n).map(|i| case[i] * data.d[i]));
        att += sum((0..n).map(|i| {
            let wd = case[i] * data.d[i] / dsum;
            (wd - w.w11[i]) * (or11.fitted[i] - mu01[i]) - (wd - w.w10[i]) * (or10.fitted[i] - mu00[i])
        }));
    }
    Ok(att)
}

fn variant_tag(variant: RcVariant, improved: bool) -> EstimatorTag {
    match (variant, improved) {
        (RcVariant::One, false) => EstimatorTag::Dr1,
        (RcVariant::Two, false) => EstimatorTag::Dr2,
        (RcVariant::One, true) => EstimatorTag::Dr1Imp,
        (RcVariant::Two, true) => EstimatorTag::Dr2Imp,
    }
}

/// DR estimators with generic first steps; the influence function carries
/// the estimation effect of the propensity and comparison-group fits.
pub fn att_dr_rc(variant: RcVariant, data: &RcDataset, fits: &RcFits, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let att = dr_rc_point(variant, data, fits, &ones(data.n()))?;
    let eif = inference::eif_dr_rc(variant, data, fits, att, true)?;
    let diag = Diagnostics::new(SeMethod::InfluenceFunction).with_ps(&fits.ps, &data.d);
    Ok(from_influence(variant_tag(variant, false), att, eif.values, cfg, diag))
}

pub fn att_dr1_rc(data: &RcDataset, fits: &RcFits, cfg: &InferenceConfig) -> Result<AttEstimate> {
    att_dr_rc(RcVariant::One, data, fits, cfg)
}

pub fn att_dr2_rc(data: &RcDataset, fits: &RcFits, cfg: &InferenceConfig) -> Result<AttEstimate> {
    att_dr_rc(RcVariant::Two, data, fits, cfg)
}

fn cell_fit(fit: Result<OutcomeFit>, d: u8, t: u8) -> Result<OutcomeFit> {
    fit.map(|f| f.with_subgroup(Subgroup::Cell { d, t }))
}

/// Logit propensity by `method` and OLS regressions in every cell.
pub fn fit_standard_rc(data: &RcDataset, method: PsMethod, trim: Option<f64>, case: Option<&[f64]>) -> Result<RcFits> {
    let ps = fit_ps_weighted(&data.x, &data.d, method, case)?.with_trim(trim);
    let ols = |d: u8, t: u8| {
        let m = data.cell_mask(d, t);
        let f = match case {
            Some(c) => fit_or_ols_weighted(&data.x, &data.y, &m, c),
            None => fit_or_ols(&data.x, &data.y, &m),
        };
        cell_fit(f, d, t)
    };
    Ok(RcFits { ps, or00: ols(0, 0)?, or01: ols(0, 1)?, or10: Some(ols(1, 0)?), or11: Some(ols(1, 1)?) })
}

/// Tilting propensity score, odds-weighted comparison-cell regressions and
/// OLS treated-cell regressions.
pub fn fit_improved_rc(data: &RcDataset, trim: Option<f64>, case: Option<&[f64]>) -> Result<RcFits> {
    let ps = fit_ps_weighted(&data.x, &data.d, PsMethod::Ipt, case)?.with_trim(trim);
    ps.check_overlap(&data.d)?;
    let wls = |t: u8| {
        let m = data.cell_mask(0, t);
        let f = match case {
            Some(c) => fit_or_wls_weighted(&data.x, &data.y, &m, &ps, c),
            None => fit_or_wls(&data.x, &data.y, &m, &ps),
        };
        cell_fit(f, 0, t)
    };
    let ols = |t: u8| {
        let m = data.cell_mask(1, t);
        let f = match case {
            Some(c) => fit_or_ols_weighted(&data.x, &data.y, &m, c),
            None => fit_or_ols(&data.x, &data.y, &m),
        };
        cell_fit(f, 1, t)
    };
    let (or00, or01) = (wls(0)?, wls(1)?);
    Ok(RcFits { or00, or01, or10: Some(ols(0)?), or11: Some(ols(1)?), ps })
}

/// Largest residual of the balance and weighted-score conditions met by the
/// improved first steps.
pub fn moment_residual_rc(data: &RcDataset, fits: &RcFits) -> f64 {
    let n = data.n();
    let ps = &fits.ps;
    let bal: Vec<f64> = (0..n).map(|i| data.d[i] - (1.0 - data.d[i]) * ps.control_odds(i)).collect();
    let mut worst = sup_norm(&data.x.weighted_column_means(&bal));
    for (tv, fit) in [(0.0, &fits.or00), (1.0, &fits.or01)] {
        let sc: Vec<f64> = (0..n)
            .map(|i| {
                let cell = (1.0 - data.d[i]) * (data.t[i] == tv) as u8 as f64;
                cell * ps.control_odds(i) * (data.y[i] - fit.fitted[i])
            })
            .collect();
        worst = worst.max(sup_norm(&data.x.weighted_column_means(&sc)));
    }
    worst
}

/// Improved DR estimators; the first steps leave no estimation effect.
pub fn att_dr_imp_rc(variant: RcVariant, data: &RcDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    let fits = fit_improved_rc(data, cfg.trim, None)?;
    let att = dr_rc_point(variant, data, &fits, &ones(data.n()))?;
    let eif = inference::eif_dr_rc(variant, data, &fits, att, false)?;
    let mut diag = Diagnostics::new(SeMethod::InfluenceFunction).with_ps(&fits.ps, &data.d);
    diag.moment_residual = Some(moment_residual_rc(data, &fits));
    Ok(from_influence(variant_tag(variant, true), att, eif.values, cfg, diag))
}

pub fn att_dr1_imp_rc(data: &RcDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    att_dr_imp_rc(RcVariant::One, data, cfg)
}

pub fn att_dr2_imp_rc(data: &RcDataset, cfg: &InferenceConfig) -> Result<AttEstimate> {
    att_dr_imp_rc(RcVariant::Two, data, cfg)
}

/// Influence function of an improved estimator without and with the generic
/// estimation-effect terms.
pub fn eif_dr_imp_rc_with_correction(variant: RcVariant, data: &RcDataset, trim: Option<f64>) -> Result<(EifVector, EifVector)> {
    let fits = fit_improved_rc(data, trim, None)?;
    let att = dr_rc_point(variant, data, &fits, &ones(data.n()))?;
    Ok((inference::eif_dr_rc(variant, data, &fits, att, false)?, inference::eif_dr_rc(variant, data, &fits, att, true)?))
}

/// Point estimate of `tag` on case-weighted data, refitting every first step.
pub fn reweighted_att_rc(tag: EstimatorTag, data: &RcDataset, case: &[f64], cfg: &InferenceConfig) -> Result<f64> {
    let ps = || fit_ps_weighted(&data.x, &data.d, cfg.ps_method, Some(case)).map(|p| p.with_trim(cfg.trim));
    match tag {
        EstimatorTag::Twfe => twfe_rc_point(data, case).map(|r| r.0),
        EstimatorTag::Or => or_rc_point(data, case),
        EstimatorTag::Ipw => ipw_rc_point(data, &ps()?, case),
        EstimatorTag::IpwStd => ipw_std_rc_point(data, &ps()?, case),
        EstimatorTag::Dr1 | EstimatorTag::Dr2 => {
            let fits = fit_standard_rc(data, cfg.ps_method, cfg.trim, Some(case))?;
            let v = if tag == EstimatorTag::Dr1 { RcVariant::One } else { RcVariant::Two };
            dr_rc_point(v, data, &fits, case)
        }
        EstimatorTag::Dr1Imp | EstimatorTag::Dr2Imp => {
            let fits = fit_improved_rc(data, cfg.trim, Some(case))?;
            let v = if tag == EstimatorTag::Dr1Imp { RcVariant::One } else { RcVariant::Two };
            dr_rc_point(v, data, &fits, case)
        }
        other => Err(Error::Usage(format!("estimator '{other}' is not available for repeated cross-sections"))),
    }
}

/// Runs several estimators, sharing first-step fits between them.
pub fn estimate_rc(data: &RcDataset, tags: &[EstimatorTag], cfg: &InferenceConfig) -> Vec<(EstimatorTag, Result<AttEstimate>)> {
    let needs = tags.iter().any(|t| matches!(t, EstimatorTag::Ipw | EstimatorTag::IpwStd | EstimatorTag::Dr1 | EstimatorTag::Dr2));
    let fits = if needs { Some(fit_standard_rc(data, cfg.ps_method, cfg.trim, None)) } else { None };
    tags.iter()
        .map(|&tag| {
            let res = match tag {
                EstimatorTag::Twfe => att_twfe_rc(data, cfg),
                EstimatorTag::Or => att_or_rc(data, cfg),
                EstimatorTag::Ipw => shared(&fits).and_then(|f| att_ipw_rc(data, &f.ps, cfg)),
                EstimatorTag::IpwStd => shared(&fits).and_then(|f| att_ipw_std_rc(data, &f.ps, cfg)),
                EstimatorTag::Dr1 => shared(&fits).and_then(|f| att_dr1_rc(data, f, cfg)),
                EstimatorTag::Dr2 => shared(&fits).and_then(|f| att_dr2_rc(data, f, cfg)),
                EstimatorTag::Dr1Imp => att_dr1_imp_rc(data, cfg),
                EstimatorTag::Dr2Imp => att_dr2_imp_rc(data, cfg),
                other => Err(Error::Usage(format!("estimator '{other}' is not available for repeated cross-sections"))),
            };
            (tag, res)
        })
        .collect()
}
