use super::*;
use drdid::nuisance::{fit_logit_ipt, fit_logit_mle, PsMethod};
use drdid::panel_est::*;
use drdid::rc_est::*;

fn cfg() -> InferenceConfig {
    InferenceConfig { bootstrap_draws: 0, ..Default::default() }
}

fn beta(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for (row, yi) in x.iter().zip(y) {
        for r in 0..k {
            b[r] += row[r] * yi;
            for c in 0..k {
                a[r][c] += row[r] * row[c];
            }
        }
    }
    gauss_solve(a, b)
}

fn sum(v: impl Iterator<Item = f64>) -> f64 {
    v.sum()
}

/// `(estimator, library value, direct formula)` for every panel estimator on the panel fixture.
pub fn panel_pairs() -> Vec<(&'static str, f64, f64)> {
    let data = panel_fixture();
    let n = data.n();
    let x = rows(data.x());
    let (d, dy) = (data.d(), data.delta_y());
    let c = cfg();
    let mut out = Vec::new();

    let mut stacked = Vec::new();
    let mut ys = Vec::new();
    for (t, y) in [(0.0, data.y0()), (1.0, data.y1())] {
        for i in 0..n {
            stacked.push(vec![1.0, t, d[i], t * d[i], x[i][1]]);
            ys.push(y[i]);
        }
    }
    out.push(("twfe", att_twfe_panel(&data, &c).unwrap().att, beta(&stacked, &ys)[3]));

    let ctrl: Vec<f64> = d.iter().map(|v| 1.0 - v).collect();
    let mu = wls_predict(&x, dy, &ctrl);
    let n1: f64 = d.iter().sum();
    let or_oracle = sum((0..n).map(|i| d[i] * (dy[i] - mu[i]))) / n1;
    out.push(("or", att_or_panel(&data, &c).unwrap().att, or_oracle));

    let ps = fit_logit_mle(data.x(), d).unwrap();
    let p = &ps.fitted;
    let odds: Vec<f64> = p.iter().map(|v| v / (1.0 - v)).collect();
    let ipw = sum((0..n).map(|i| (d[i] - (1.0 - d[i]) * odds[i]) * dy[i])) / n1;
    out.push(("ipw", att_ipw_panel(&data, &ps, &c).unwrap().att, ipw));

    let s0 = sum((0..n).map(|i| (1.0 - d[i]) * odds[i]));
    let hajek = |g: &dyn Fn(usize) -> f64| {
        sum((0..n).map(|i| d[i] * g(i))) / n1 - sum((0..n).map(|i| (1.0 - d[i]) * odds[i] * g(i))) / s0
    };
    out.push(("ipw_std", att_ipw_std_panel(&data, &ps, &c).unwrap().att, hajek(&|i| dy[i])));

    let or_fit = drdid::nuisance::fit_or_ols(data.x(), dy, &data.controls()).unwrap();
    out.push(("dr", att_dr_panel(&data, &ps, &or_fit, &c).unwrap().att, hajek(&|i| dy[i] - mu[i])));

    let ipt = fit_logit_ipt(data.x(), d).unwrap();
    let odds_t: Vec<f64> = ipt.fitted.iter().map(|v| v / (1.0 - v)).collect();
    let mu_w = wls_predict(&x, dy, &(0..n).map(|i| ctrl[i] * odds_t[i]).collect::<Vec<_>>());
    let s0t = sum((0..n).map(|i| ctrl[i] * odds_t[i]));
    let imp = sum((0..n).map(|i| d[i] * (dy[i] - mu_w[i]))) / n1 - sum((0..n).map(|i| ctrl[i] * odds_t[i] * (dy[i] - mu_w[i]))) / s0t;
    out.push(("dr_imp", att_dr_imp_panel(&data, &c).unwrap().att, imp));
    out
}

struct RcOracle {
    n: usize,
    y: Vec<f64>,
    d: Vec<f64>,
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
}

impl RcOracle {
    fn new(data: &RcDataset) -> Self {
        Self { n: data.n(), y: data.y().to_vec(), d: data.d().to_vec(), t: data.t().to_vec(), x: rows(data.x()) }
    }

    fn cell(&self, i: usize, d: f64, t: f64) -> f64 {
        (self.d[i] == d && self.t[i] == t) as u8 as f64
    }

    fn fit(&self, d: f64, t: f64, odds: Option<&[f64]>) -> Vec<f64> {
        let w: Vec<f64> = (0..self.n).map(|i| self.cell(i, d, t) * odds.map_or(1.0, |o| o[i])).collect();
        wls_predict(&self.x, &self.y, &w)
    }

    fn mean_in(&self, d: f64, t: f64, v: &[f64], wt: &[f64]) -> f64 {
        let num = sum((0..self.n).map(|i| self.cell(i, d, t) * wt[i] * v[i]));
        num / sum((0..self.n).map(|i| self.cell(i, d, t) * wt[i]))
    }

    /// DR1 and DR2 at the given propensity odds and cell predictions.
    fn dr(&self, odds: &[f64], mu: [&[f64]; 4]) -> (f64, f64) {
        let [mu00, mu01, mu10, mu11] = mu;
        let one = vec![1.0; self.n];
        let g: Vec<f64> = (0..self.n).map(|i| self.y[i] - if self.t[i] == 1.0 { mu01[i] } else { mu00[i] }).collect();
        let dr1 = self.mean_in(1.0, 1.0, &g, &one) - self.mean_in(1.0, 0.0, &g, &one)
            - (self.mean_in(0.0, 1.0, &g, odds) - self.mean_in(0.0, 0.0, &g, odds));
        let n1: f64 = self.d.iter().sum();
        let h1: Vec<f64> = (0..self.n).map(|i| mu11[i] - mu01[i]).collect();
        let h0: Vec<f64> = (0..self.n).map(|i| mu10[i] - mu00[i]).collect();
        let all1 = |h: &[f64]| sum((0..self.n).map(|i| self.d[i] * h[i])) / n1;
        let dr2 = dr1 + (all1(&h1) - self.mean_in(1.0, 1.0, &h1, &one)) - (all1(&h0) - self.mean_in(1.0, 0.0, &h0, &one));
        (dr1, dr2)
    }
}

/// `(estimator, library value, direct formula)` for every cross-section estimator on the fixture.
pub fn rc_pairs() -> Vec<(&'static str, f64, f64)> {
    let data = rc_fixture();
    let o = RcOracle::new(&data);
    let n = o.n;
    let c = cfg();
    let mut out = Vec::new();
    let one = vec![1.0; n];

    let z: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, o.t[i], o.d[i], o.t[i] * o.d[i], o.x[i][1]]).collect();
    out.push(("twfe", att_twfe_rc(&data, &c).unwrap().att, beta(&z, &o.y)[3]));

    let (mu00, mu01) = (o.fit(0.0, 0.0, None), o.fit(0.0, 1.0, None));
    let (mu10, mu11) = (o.fit(1.0, 0.0, None), o.fit(1.0, 1.0, None));
    let n1: f64 = o.d.iter().sum();
    let shift = sum((0..n).map(|i| o.d[i] * (mu01[i] - mu00[i]))) / n1;
    let or_oracle = o.mean_in(1.0, 1.0, &o.y, &one) - o.mean_in(1.0, 0.0, &o.y, &one) - shift;
    out.push(("or", att_or_rc(&data, &c).unwrap().att, or_oracle));

    let ps = fit_logit_mle(data.x(), data.d()).unwrap();
    let odds: Vec<f64> = ps.fitted.iter().map(|p| p / (1.0 - p)).collect();
    let lambda = o.t.iter().sum::<f64>() / n as f64;
    let ipw = sum((0..n).map(|i| {
        let a = (o.d[i] - ps.fitted[i]) / (1.0 - ps.fitted[i]);
        a * (o.t[i] - lambda) / (lambda * (1.0 - lambda)) * o.y[i]
    })) / n1;
    out.push(("ipw", att_ipw_rc(&data, &ps, &c).unwrap().att, ipw));

    let std = o.mean_in(1.0, 1.0, &o.y, &one) - o.mean_in(1.0, 0.0, &o.y, &one)
        - (o.mean_in(0.0, 1.0, &o.y, &odds) - o.mean_in(0.0, 0.0, &o.y, &odds));
    out.push(("ipw_std", att_ipw_std_rc(&data, &ps, &c).unwrap().att, std));

    let fits = fit_standard_rc(&data, PsMethod::Mle, None, None).unwrap();
    let (dr1, dr2) = o.dr(&odds, [&mu00, &mu01, &mu10, &mu11]);
    out.push(("dr1", att_dr1_rc(&data, &fits, &c).unwrap().att, dr1));
    out.push(("dr2", att_dr2_rc(&data, &fits, &c).unwrap().att, dr2));

    let ipt = fit_logit_ipt(data.x(), data.d()).unwrap();
    let odds_t: Vec<f64> = ipt.fitted.iter().map(|p| p / (1.0 - p)).collect();
    let (w00, w01) = (o.fit(0.0, 0.0, Some(&odds_t)), o.fit(0.0, 1.0, Some(&odds_t)));
    let (imp1, imp2) = o.dr(&odds_t, [&w00, &w01, &mu10, &mu11]);
    out.push(("dr1_imp", att_dr1_imp_rc(&data, &c).unwrap().att, imp1));
    out.push(("dr2_imp", att_dr2_imp_rc(&data, &c).unwrap().att, imp2));
    out
}
