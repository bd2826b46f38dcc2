//! Simulation designs with known zero ATT and the Monte Carlo runner.

use crate::efficiency::{OracleDgp, OracleDraw};
use crate::error::{Error, Result};
use crate::nuisance::logistic;
use crate::numkit::{mean, median, sample_sd, Matrix};
use crate::panel_est::{estimate_panel, AttEstimate, EstimatorTag, InferenceConfig, PanelDataset};
use crate::rc_est::{estimate_rc, RcDataset};
use crate::rng::{Stream, Tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// `E[exp(X/2)]` and its standard deviation for standard normal `X`.
pub const Z1_MEAN: f64 = 1.133_148_453_066_826_3;
pub const Z1_SD: f64 = 0.603_900_533_210_881_2;
pub const Z2_MEAN: f64 = 10.0;
pub const Z2_SD: f64 = 0.541_644_750_605_129_5;
/// `0.6^3 + 3 * 0.6 / 25^2`.
pub const Z3_MEAN: f64 = 0.21888;
pub const Z3_SD: f64 = 0.044_534_067_858_213_89;
/// `(20 + X1 + X4)^2` has mean 402 and variance 3208.
pub const Z4_MEAN: f64 = 402.0;
pub const Z4_SD: f64 = 56.639_209_034_025_18;

/// Resampling attempts before a degenerate draw is reported.
pub const MAX_RESAMPLES: u32 = 100;
/// Largest tolerated share of failed replications per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.01;

pub fn f_reg(w: &[f64; 4]) -> f64 {
    210.0 + 27.4 * w[0] + 13.7 * (w[1] + w[2] + w[3])
}

pub fn f_ps(w: &[f64; 4]) -> f64 {
    0.75 * (-w[0] + 0.5 * w[1] - 0.25 * w[2] - 0.1 * w[3])
}

/// Standardized nonlinear transforms of the latent covariates.
pub fn transform(x: &[f64; 4]) -> [f64; 4] {
    let z1 = (0.5 * x[0]).exp();
    let z2 = 10.0 + x[1] / (1.0 + x[0].exp());
    let z3 = (0.6 + x[0] * x[2] / 25.0).powi(3);
    let z4 = (20.0 + x[0] + x[3]).powi(2);
    [(z1 - Z1_MEAN) / Z1_SD, (z2 - Z2_MEAN) / Z2_SD, (z3 - Z3_MEAN) / Z3_SD, (z4 - Z4_MEAN) / Z4_SD]
}

/// Recovers the latent covariates from their transforms where the map is
/// invertible (`20 + X1 + X4 > 0` and `X1 != 0`).
pub fn invert_transform(z: &[f64; 4]) -> [f64; 4] {
    let x1 = 2.0 * (z[0] * Z1_SD + Z1_MEAN).ln();
    let x2 = (z[1] * Z2_SD + Z2_MEAN - 10.0) * (1.0 + x1.exp());
    let x3 = ((z[2] * Z3_SD + Z3_MEAN).cbrt() - 0.6) * 25.0 / x1;
    let x4 = (z[3] * Z4_SD + Z4_MEAN).sqrt() - 20.0 - x1;
    [x1, x2, x3, x4]
}

/// `n` latent standard normal vectors and their transforms.
pub fn gen_latent(n: usize, rng: &mut Stream) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
    let x: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|_| rng.std_normal())).collect();
    let z = x.iter().map(transform).collect();
    (x, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Panel,
    Rc,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Panel => "panel",
            Design::Rc => "rc",
        })
    }
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "panel" => Ok(Design::Panel),
            "rc" => Ok(Design::Rc),
            _ => Err(Error::Usage(format!("unknown design '{s}', expected panel or rc"))),
        }
    }
}

/// One of the four designs. Designs 1 and 2 have outcome means linear in the
/// observed covariates; designs 1 and 3 have a logit propensity linear in them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp_id: u8,
    pub design: Design,
    pub n: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(dgp_id: u8, design: Design, n: usize, lambda: f64, seed: u64) -> Result<Self> {
        if !(1..=4).contains(&dgp_id) {
            return Err(Error::Usage(format!("design id {dgp_id} is not in 1..=4")));
        }
        if n < 100 {
            return Err(Error::Usage(format!("sample size {n} is below 100")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Usage(format!("lambda {lambda} is outside (0, 1)")));
        }
        Ok(Self { dgp_id, design, n, lambda, seed })
    }

    fn outcome_uses_z(&self) -> bool {
        self.dgp_id <= 2
    }

    fn ps_uses_z(&self) -> bool {
        self.dgp_id % 2 == 1
    }

    pub fn oracle(&self) -> DgpOracle {
        DgpOracle { spec: *self }
    }
}

/// One simulated unit with its observed covariates.
#[derive(Debug, Clone, Copy)]
pub struct Unit {
    pub z: [f64; 4],
    pub d: f64,
    pub y0: f64,
    pub y1: f64,
    pub t: f64,
    pub reg: f64,
    pub p: f64,
}

fn draw_unit(spec: &DgpSpec, rng: &mut Stream) -> Unit {
    let x: [f64; 4] = std::array::from_fn(|_| rng.std_normal());
    let z = transform(&x);
    let reg = f_reg(if spec.outcome_uses_z() { &z } else { &x });
    let p = logistic(f_ps(if spec.ps_uses_z() { &z } else { &x }));
    let d = (p >= rng.uniform_open()) as u8 as f64;
    let v = d * reg + rng.std_normal();
    let y0 = reg + v + rng.std_normal();
    let y1 = 2.0 * reg + v + rng.std_normal();
    let t = (rng.uniform_open() <= spec.lambda) as u8 as f64;
    Unit { z, d, y0, y1, t, reg, p }
}

/// True nuisance functions of a design, evaluated from the latent covariates.
#[derive(Debug, Clone, Copy)]
pub struct DgpOracle {
    spec: DgpSpec,
}

impl OracleDgp for DgpOracle {
    fn draw(&self, rng: &mut Stream) -> OracleDraw {
        let u = draw_unit(&self.spec, rng);
        let f = u.reg;
        OracleDraw { y0: u.y0, y1: u.y1, d: u.d, p: u.p, m00: f, m01: 2.0 * f, m10: 2.0 * f, m11: 3.0 * f }
    }
}

fn draw_units(spec: &DgpSpec, rng: &mut Stream, valid: impl Fn(&[Unit]) -> bool) -> Result<(Vec<Unit>, u32)> {
    for attempt in 0..MAX_RESAMPLES {
        let units: Vec<Unit> = (0..spec.n).map(|_| draw_unit(spec, rng)).collect();
        if valid(&units) {
            return Ok((units, attempt));
        }
    }
    Err(Error::DegenerateTreatment { attempts: MAX_RESAMPLES })
}

fn design(units: &[Unit]) -> Matrix {
    let cov: Vec<f64> = units.iter().flat_map(|u| u.z).collect();
    Matrix::with_intercept(units.len(), 4, &cov).expect("finite covariates")
}

/// Panel sample; the second value counts redraws after a single-class treatment.
pub fn gen_dgp_panel(spec: &DgpSpec, rng: &mut Stream) -> Result<(PanelDataset, u32)> {
    let (units, resampled) = draw_units(spec, rng, |u| {
        let n1 = u.iter().filter(|v| v.d == 1.0).count();
        n1 > 0 && n1 < u.len()
    })?;
    let data = PanelDataset::new(
        units.iter().map(|u| u.y0).collect(),
        units.iter().map(|u| u.y1).collect(),
        units.iter().map(|u| u.d).collect(),
        design(&units),
    )?;
    Ok((data, resampled))
}

/// Repeated cross-section sample keeping the outcome of the sampled period.
pub fn gen_dgp_rc(spec: &DgpSpec, rng: &mut Stream) -> Result<(RcDataset, u32)> {
    let (units, resampled) = draw_units(spec, rng, |u| {
        let mut cells = [false; 4];
        for v in u {
            cells[(2.0 * v.d + v.t) as usize] = true;
        }
        cells.iter().all(|c| *c)
    })?;
    let data = RcDataset::new(
        units.iter().map(|u| if u.t == 1.0 { u.y1 } else { u.y0 }).collect(),
        units.iter().map(|u| u.t).collect(),
        units.iter().map(|u| u.d).collect(),
        design(&units),
    )?;
    Ok((data, resampled))
}

/// Performance of one estimator across replications against a true ATT of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimator: EstimatorTag,
    pub avg_bias: f64,
    pub med_bias: f64,
    pub rmse: f64,
    /// Mean of `n * se^2`; absent when standard errors were skipped.
    pub mean_asy_var: Option<f64>,
    pub coverage: Option<f64>,
    pub ci_length: Option<f64>,
    pub reps: usize,
    pub failures: usize,
    pub mc_se_of_bias: f64,
}

impl McSummary {
    fn from_estimates(estimator: EstimatorTag, n: usize, ests: &[&AttEstimate], failures: usize) -> Self {
        let att: Vec<f64> = ests.iter().map(|e| e.att).collect();
        let reps = att.len();
        let with_se: Vec<&&AttEstimate> = ests.iter().filter(|e| e.se.is_some()).collect();
        let opt = |v: Vec<f64>| if v.is_empty() { None } else { Some(mean(&v)) };
        Self {
            estimator,
            avg_bias: mean(&att),
            med_bias: median(&att),
            rmse: mean(&att.iter().map(|a| a * a).collect::<Vec<_>>()).sqrt(),
            mean_asy_var: opt(with_se.iter().map(|e| n as f64 * e.se.unwrap().powi(2)).collect()),
            coverage: opt(
                with_se.iter().filter_map(|e| e.ci).map(|(lo, hi)| (lo <= 0.0 && 0.0 <= hi) as u8 as f64).collect(),
            ),
            ci_length: opt(with_se.iter().filter_map(|e| e.ci).map(|(lo, hi)| hi - lo).collect()),
            reps,
            failures,
            mc_se_of_bias: if reps > 1 { sample_sd(&att) / (reps as f64).sqrt() } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: DgpSpec,
    pub reps: usize,
    pub summaries: Vec<McSummary>,
    /// Redraws caused by single-class treatment or empty cells.
    pub resampled: u64,
}

/// Seed of the bootstrap inside replication `rep`.
fn replication_seed(seed: u64, rep: usize) -> u64 {
    let mut z = seed ^ (rep as u64).wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

type RepResult = (Vec<(EstimatorTag, Result<AttEstimate>)>, u32);

fn one_replication(spec: &DgpSpec, tags: &[EstimatorTag], cfg: &InferenceConfig, rep: usize) -> Result<RepResult> {
    let mut rng = Stream::new(spec.seed, rep as u64, Tag::Data);
    let cfg = InferenceConfig { seed: replication_seed(spec.seed, rep), ..*cfg };
    Ok(match spec.design {
        Design::Panel => {
            let (data, r) = gen_dgp_panel(spec, &mut rng)?;
            (estimate_panel(&data, tags, &cfg), r)
        }
        Design::Rc => {
            let (data, r) = gen_dgp_rc(spec, &mut rng)?;
            (estimate_rc(&data, tags, &cfg), r)
        }
    })
}

/// Runs `reps` replications of `spec`. Replication `r` draws from its own
/// stream, so summaries depend only on the seed and not on `threads`.
pub fn run_mc(spec: &DgpSpec, tags: &[EstimatorTag], reps: usize, cfg: &InferenceConfig, threads: Option<usize>) -> Result<McReport> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::Usage("at least one replication is required".into()));
    }
    let catalog: &[EstimatorTag] = match spec.design {
        Design::Panel => &EstimatorTag::PANEL,
        Design::Rc => &EstimatorTag::RC,
    };
    if let Some(bad) = tags.iter().find(|t| !catalog.contains(t)) {
        return Err(Error::Usage(format!("estimator '{bad}' is not available for the {} design", spec.design)));
    }
    let work = || -> Result<Vec<RepResult>> {
        (0..reps).into_par_iter().map(|r| one_replication(spec, tags, cfg, r)).collect()
    };
    let results = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {k} threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let resampled = results.iter().map(|r| r.1 as u64).sum();
    let mut summaries = Vec::with_capacity(tags.len());
    for (k, &tag) in tags.iter().enumerate() {
        let ok: Vec<&AttEstimate> = results.iter().filter_map(|r| r.0[k].1.as_ref().ok()).collect();
        let failed = reps - ok.len();
        if ok.is_empty() || failed as f64 > MAX_FAILURE_RATE * reps as f64 {
            return Err(Error::TooManyFailures { estimator: tag.to_string(), failed, reps });
        }
        summaries.push(McSummary::from_estimates(tag, spec.n, &ok, failed));
    }
    Ok(McReport { spec: *spec, reps, summaries, resampled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_functions() {
        assert_eq!(f_reg(&[0.0; 4]), 210.0);
        assert!((f_reg(&[1.0; 4]) - 278.5).abs() < 1e-12);
        assert!((f_reg(&[-1.0, 0.0, 0.0, 0.0]) - 182.6).abs() < 1e-12);
        assert_eq!(f_ps(&[0.0; 4]), 0.0);
        assert_eq!(f_ps(&[1.0, 0.0, 0.0, 0.0]), -0.75);
        assert_eq!(f_ps(&[0.0, 2.0, 0.0, 0.0]), 0.75);
    }

    #[test]
    fn lognormal_constants() {
        assert!((Z1_MEAN - 0.125f64.exp()).abs() < 1e-15);
        let var = (0.25f64.exp() - 1.0) * 0.25f64.exp();
        assert!((Z1_SD - var.sqrt()).abs() < 1e-15);
        assert!((Z4_SD - 3208f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn transform_is_invertible() {
        let mut rng = Stream::new(3, 0, Tag::Data);
        let (x, z) = gen_latent(1000, &mut rng);
        for (a, b) in x.iter().zip(&z) {
            let back = invert_transform(b);
            for k in 0..4 {
                assert!((a[k] - back[k]).abs() < 1e-6 * (1.0 + a[k].abs()), "{a:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn single_replication_has_zero_spread() {
        let spec = DgpSpec::new(1, Design::Panel, 200, 0.5, 1).unwrap();
        let cfg = InferenceConfig { bootstrap_draws: 0, ..Default::default() };
        let rep = run_mc(&spec, &[EstimatorTag::Dr, EstimatorTag::Or], 1, &cfg, Some(1)).unwrap();
        for s in &rep.summaries {
            assert!((s.rmse - s.avg_bias.abs()).abs() < 1e-12);
            assert_eq!(s.reps, 1);
        }
        assert!(rep.summaries[1].coverage.is_none());
    }

    #[test]
    fn rc_sample_uses_lambda() {
        let spec = DgpSpec::new(1, Design::Rc, 20_000, 0.3, 4).unwrap();
        let mut rng = Stream::new(4, 0, Tag::Data);
        let (data, _) = gen_dgp_rc(&spec, &mut rng).unwrap();
        assert!((data.lambda_hat() - 0.3).abs() < 0.015);
    }

    #[test]
    fn rejects_estimator_outside_design() {
        let spec = DgpSpec::new(1, Design::Panel, 200, 0.5, 1).unwrap();
        let err = run_mc(&spec, &[EstimatorTag::Dr1], 1, &InferenceConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
