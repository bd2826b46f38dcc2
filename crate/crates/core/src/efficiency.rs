//! Monte Carlo evaluation of semiparametric efficiency bounds from oracle
//! nuisance functions.

use crate::error::{Error, Result};
use crate::numkit::{sample_sd, CompensatedSum};
use crate::rng::{Stream, Tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Draws per integration chunk; each chunk owns one random stream.
pub const CHUNK: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 1_000_000;

/// One unit drawn from an oracle, with its true nuisance values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDraw {
    pub y0: f64,
    pub y1: f64,
    pub d: f64,
    /// True propensity score.
    pub p: f64,
    pub m00: f64,
    pub m01: f64,
    pub m10: f64,
    pub m11: f64,
}

impl OracleDraw {
    fn odds_sq(&self) -> f64 {
        let r = self.p / (1.0 - self.p);
        r * r
    }

    fn cate(&self) -> f64 {
        (self.m11 - self.m10) - (self.m01 - self.m00)
    }
}

/// Data-generating process with known nuisance functions.
pub trait OracleDgp: Sync {
    fn draw(&self, rng: &mut Stream) -> OracleDraw;
}

/// Single standard normal covariate, constant propensity and linear means.
///
/// `m_{d,0} = x`, `m_{0,1} = 2x`, `m_{1,1} = (2 + cate_slope) x`; period
/// residuals are independent normals with standard deviations `sd0`, `sd1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle {
    pub p: f64,
    pub sd0: f64,
    pub sd1: f64,
    pub cate_slope: f64,
}

impl GaussianOracle {
    /// Constant effect, `Var(dY | X, D) = 1` and `p = 0.5`.
    pub fn homogeneous() -> Self {
        Self { p: 0.5, sd0: std::f64::consts::FRAC_1_SQRT_2, sd1: std::f64::consts::FRAC_1_SQRT_2, cate_slope: 0.0 }
    }
}

impl OracleDgp for GaussianOracle {
    fn draw(&self, rng: &mut Stream) -> OracleDraw {
        let x = rng.std_normal();
        let d = (rng.uniform_open() <= self.p) as u8 as f64;
        let (m00, m01, m10, m11) = (x, 2.0 * x, x, (2.0 + self.cate_slope) * x);
        let e0 = self.sd0 * rng.std_normal();
        let e1 = self.sd1 * rng.std_normal();
        let (a0, a1) = if d == 1.0 { (m10, m11) } else { (m00, m01) };
        OracleDraw { y0: a0 + e0, y1: a1 + e1, d, p: self.p, m00, m01, m10, m11 }
    }
}

/// Value of an integral together with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub mc_se: f64,
    pub draws: usize,
}

/// Sums `f(draw, t)` over `draws` oracle units, with `T ~ Bernoulli(lambda)`
/// drawn after each unit. Returns per-chunk sums in chunk order.
fn integrate<const K: usize, F>(dgp: &dyn OracleDgp, draws: usize, seed: u64, lambda: f64, f: F) -> Result<Vec<[f64; K]>>
where
    F: Fn(&OracleDraw, f64) -> [f64; K] + Sync,
{
    if draws < 2 * CHUNK {
        return Err(Error::InvalidInput(format!("at least {} draws are required, got {draws}", 2 * CHUNK)));
    }
    let chunks = draws.div_ceil(CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = Stream::new(seed, c as u64, Tag::Bound);
            let mut acc = [CompensatedSum::new(); K];
            let len = CHUNK.min(draws - c * CHUNK);
            for _ in 0..len {
                let u = dgp.draw(&mut rng);
                let t = (rng.uniform_open() <= lambda) as u8 as f64;
                for (a, v) in acc.iter_mut().zip(f(&u, t)) {
                    a.add(v);
                }
            }
            let mut out = [0.0; K];
            out.iter_mut().zip(&acc).for_each(|(o, a)| *o = a.value());
            // slot 0 carries the draw count
            out[0] = len as f64;
            out
        })
        .collect())
}

/// Pools chunk sums for the estimate; the spread of chunk-level values gives
/// the Monte Carlo standard error.
fn finish<const K: usize>(chunks: &[[f64; K]], draws: usize, g: impl Fn(&[f64; K]) -> f64) -> BoundEstimate {
    let mut total = [CompensatedSum::new(); K];
    for c in chunks {
        for (t, v) in total.iter_mut().zip(c) {
            t.add(*v);
        }
    }
    let mut pooled = [0.0; K];
    pooled.iter_mut().zip(&total).for_each(|(p, t)| *p = t.value());
    let per_chunk: Vec<f64> = chunks.iter().map(&g).collect();
    BoundEstimate { value: g(&pooled), mc_se: sample_sd(&per_chunk) / (chunks.len() as f64).sqrt(), draws }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidInput(format!("lambda {lambda} is outside (0, 1)")));
    }
    Ok(())
}

/// Efficiency bound for panel data.
pub fn eff_bound_panel(dgp: &dyn OracleDgp, draws: usize, seed: u64) -> Result<BoundEstimate> {
    let sums = integrate::<5, _>(dgp, draws, seed, 0.5, |u, _| {
        let dy = u.y1 - u.y0;
        let c = u.cate();
        let r1 = dy - (u.m11 - u.m10);
        let r0 = dy - (u.m01 - u.m00);
        let resid = u.d * r1 * r1 + (1.0 - u.d) * u.odds_sq() * r0 * r0;
        [0.0, u.d, u.d * c, u.d * c * c, resid]
    })?;
    Ok(finish(&sums, draws, |s| {
        let (n, ed) = (s[0], s[1] / s[0]);
        let tau = s[2] / s[1];
        let heterogeneity = s[3] - 2.0 * tau * s[2] + tau * tau * s[1];
        (heterogeneity + s[4]) / n / (ed * ed)
    }))
}

/// Efficiency bound for repeated cross-sections sampled with post-period share `lambda`.
pub fn eff_bound_rc(dgp: &dyn OracleDgp, lambda: f64, draws: usize, seed: u64) -> Result<BoundEstimate> {
    check_lambda(lambda)?;
    let (l1, l0) = (lambda * lambda, (1.0 - lambda) * (1.0 - lambda));
    let sums = integrate::<5, _>(dgp, draws, seed, lambda, |u, t| {
        let c = u.cate();
        let y = if t == 1.0 { u.y1 } else { u.y0 };
        let treated = t / l1 * (y - u.m11).powi(2) + (1.0 - t) / l0 * (y - u.m10).powi(2);
        let control = t / l1 * (y - u.m01).powi(2) + (1.0 - t) / l0 * (y - u.m00).powi(2);
        let resid = u.d * treated + (1.0 - u.d) * u.odds_sq() * control;
        [0.0, u.d, u.d * c, u.d * c * c, resid]
    })?;
    Ok(finish(&sums, draws, |s| {
        let (n, ed) = (s[0], s[1] / s[0]);
        let tau = s[2] / s[1];
        let heterogeneity = s[3] - 2.0 * tau * s[2] + tau * tau * s[1];
        (heterogeneity + s[4]) / n / (ed * ed)
    }))
}

/// Excess of the repeated cross-section bound over the panel bound.
pub fn bound_gap_panel_rc(dgp: &dyn OracleDgp, lambda: f64, draws: usize, seed: u64) -> Result<BoundEstimate> {
    check_lambda(lambda)?;
    let a = ((1.0 - lambda) / lambda).sqrt();
    let b = (lambda / (1.0 - lambda)).sqrt();
    let sums = integrate::<3, _>(dgp, draws, seed, lambda, |u, _| {
        let tr = a * (u.y1 - u.m11) + b * (u.y0 - u.m10);
        let co = a * (u.y1 - u.m01) + b * (u.y0 - u.m00);
        [0.0, u.d, u.d * tr * tr + (1.0 - u.d) * u.odds_sq() * co * co]
    })?;
    Ok(finish(&sums, draws, |s| {
        let ed = s[1] / s[0];
        s[2] / s[0] / (ed * ed)
    }))
}

fn period_sums(dgp: &dyn OracleDgp, draws: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    integrate::<3, _>(dgp, draws, seed, 0.5, |u, _| {
        let r = u.odds_sq();
        let s0 = u.d * (u.y0 - u.m10).powi(2) + (1.0 - u.d) * r * (u.y0 - u.m00).powi(2);
        let s1 = u.d * (u.y1 - u.m11).powi(2) + (1.0 - u.d) * r * (u.y1 - u.m01).powi(2);
        [0.0, s0, s1]
    })
}

/// Per-period residual scales `(sigma_0^2, sigma_1^2)` that determine the
/// best post-period sampling share.
pub fn period_variances(dgp: &dyn OracleDgp, draws: usize, seed: u64) -> Result<(BoundEstimate, BoundEstimate)> {
    let sums = period_sums(dgp, draws, seed)?;
    Ok((finish(&sums, draws, |s| s[1] / s[0]), finish(&sums, draws, |s| s[2] / s[0])))
}

/// Post-period share `sigma_1 / (sigma_0 + sigma_1)` minimizing the repeated
/// cross-section bound.
pub fn optimal_lambda(dgp: &dyn OracleDgp, draws: usize, seed: u64) -> Result<BoundEstimate> {
    let sums = period_sums(dgp, draws, seed)?;
    Ok(finish(&sums, draws, |s| {
        let (a, b) = (s[1].sqrt(), s[2].sqrt());
        b / (a + b)
    }))
}

/// Asymptotic variance lost by the estimator that mimics the panel moment
/// instead of using the treated-group regressions.
pub fn dr1_dr2_gap_rc(dgp: &dyn OracleDgp, lambda: f64, draws: usize, seed: u64) -> Result<BoundEstimate> {
    check_lambda(lambda)?;
    let a = ((1.0 - lambda) / lambda).sqrt();
    let b = (lambda / (1.0 - lambda)).sqrt();
    let sums = integrate::<4, _>(dgp, draws, seed, lambda, |u, _| {
        let h = a * (u.m11 - u.m01) + b * (u.m10 - u.m00);
        [0.0, u.d, u.d * h, u.d * h * h]
    })?;
    Ok(finish(&sums, draws, |s| {
        let mean = s[2] / s[1];
        let var = (s[3] / s[1] - mean * mean).max(0.0);
        var / (s[1] / s[0])
    }))
}
