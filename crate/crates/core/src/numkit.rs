//! Dense numerical kernel: compensated reductions, a small row-major matrix,
//! Cholesky solves for Gram systems, weighted least squares and a damped
//! Newton maximizer for smooth concave objectives.

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Sample standard deviation with divisor `n - 1`.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64).sqrt()
}

/// Linearly interpolated quantile of ascending `sorted` data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    /// Design matrix with a leading constant column followed by `covariates` (row-major, `k` columns).
    pub fn with_intercept(n: usize, k: usize, covariates: &[f64]) -> Result<Self> {
        if covariates.len() != n * k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} covariate entries, got {}",
                n * k,
                covariates.len()
            )));
        }
        let mut data = Vec::with_capacity(n * (k + 1));
        for i in 0..n {
            data.push(1.0);
            data.extend_from_slice(&covariates[i * k..(i + 1) * k]);
        }
        Self::new(n, k + 1, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = CompensatedSum::new();
                for l in 0..self.cols {
                    acc.add(self.get(i, l) * other.get(l, j));
                }
                out.set(i, j, acc.value());
            }
        }
        Ok(out)
    }

    /// `X' diag(w) X` accumulated with compensated sums.
    pub fn weighted_gram(&self, w: &[f64]) -> Matrix {
        debug_assert_eq!(w.len(), self.rows);
        let k = self.cols;
        let mut acc = vec![CompensatedSum::new(); k * (k + 1) / 2];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let r = self.row(i);
            let mut idx = 0;
            for a in 0..k {
                let ra = wi * r[a];
                for b in 0..=a {
                    acc[idx].add(ra * r[b]);
                    idx += 1;
                }
            }
        }
        let mut g = Matrix::zeros(k, k);
        let mut idx = 0;
        for a in 0..k {
            for b in 0..=a {
                let v = acc[idx].value();
                g.set(a, b, v);
                g.set(b, a, v);
                idx += 1;
            }
        }
        g
    }

    /// `X' diag(w) y`.
    pub fn weighted_xty(&self, w: &[f64], y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.rows);
        debug_assert_eq!(y.len(), self.rows);
        let k = self.cols;
        let mut acc = vec![CompensatedSum::new(); k];
        for i in 0..self.rows {
            let wy = w[i] * y[i];
            if wy == 0.0 {
                continue;
            }
            for (a, x) in self.row(i).iter().enumerate() {
                acc[a].add(wy * x);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    /// Column means of `diag(w) X`, i.e. `sum_i w_i x_i / n`.
    pub fn weighted_column_means(&self, w: &[f64]) -> Vec<f64> {
        let ones = vec![1.0; self.rows];
        let mut v = self.weighted_xty(w, &ones);
        for x in &mut v {
            *x /= self.rows as f64;
        }
        v
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    fn max_abs(&self) -> f64 {
        sup_norm(&self.data)
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

/// Pivots at or below this fraction of the largest diagonal entry are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", n, a.cols())));
        }
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a.get(i, i)));
        let floor = PIVOT_TOLERANCE * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut acc = CompensatedSum::new();
            acc.add(a.get(j, j));
            for k in 0..j {
                acc.add(-l.get(j, k) * l.get(j, k));
            }
            let pivot = acc.value();
            if !(pivot > floor) || max_diag <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j, dim: n });
            }
            let d = pivot.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut acc = CompensatedSum::new();
                acc.add(a.get(i, j));
                for k in 0..j {
                    acc.add(-l.get(i, k) * l.get(j, k));
                }
                l.set(i, j, acc.value() / d);
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut acc = CompensatedSum::new();
            acc.add(b[i]);
            for k in 0..i {
                acc.add(-l.get(i, k) * z[k]);
            }
            z[i] = acc.value() / l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = CompensatedSum::new();
            acc.add(z[i]);
            for k in (i + 1)..n {
                acc.add(-l.get(k, i) * x[k]);
            }
            x[i] = acc.value() / l.get(i, i);
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        // symmetrize rounding noise
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", n, a.cols())));
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Solves `A x = b` for symmetric positive definite `A`, with one step of
/// iterative refinement.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has length {}, expected {}",
            b.len(),
            a.rows()
        )));
    }
    let chol = Cholesky::factor(a)?;
    let mut x = chol.solve(b);
    let ax = a.matvec(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let dx = chol.solve(&r);
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi += di;
    }
    Ok(x)
}

/// Weighted least squares: `argmin_b sum_i w_i (y_i - x_i'b)^2`.
pub fn weighted_lsq(x: &Matrix, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    weighted_lsq_factored(x, y, w).map(|(beta, _)| beta)
}

/// As [`weighted_lsq`], also returning the factored weighted Gram matrix.
pub fn weighted_lsq_factored(x: &Matrix, y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Cholesky)> {
    if y.len() != x.rows() || w.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response {} and weights {}",
            x.rows(),
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if !(sum(w.iter().copied()) > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let gram = x.weighted_gram(w);
    let rhs = x.weighted_xty(w, y);
    let chol = Cholesky::factor(&gram)?;
    let mut beta = chol.solve(&rhs);
    // one refinement step on the normal equations
    let g_beta = gram.matvec(&beta);
    let r: Vec<f64> = rhs.iter().zip(&g_beta).map(|(a, b)| a - b).collect();
    for (b, d) in beta.iter_mut().zip(chol.solve(&r)) {
        *b += d;
    }
    Ok((beta, chol))
}

/// Value, gradient and Hessian of an objective at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
}

/// Smooth objective to be maximized.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Evaluation;

    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x).value
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub solution: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
}

/// One undamped Newton step from a converged point, kept only if it does not
/// worsen the gradient; removes the dependence of the solution on how the
/// tolerance interacts with the parametrization.
fn polish<O: ConcaveObjective + ?Sized>(objective: &O, x: Vec<f64>, eval: Evaluation) -> (Vec<f64>, Evaluation) {
    let mut neg_h = eval.hessian.clone();
    neg_h.scale(-1.0);
    let Ok(ch) = Cholesky::factor(&neg_h) else {
        return (x, eval);
    };
    let step = ch.solve(&eval.gradient);
    let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
    let next = objective.evaluate(&trial);
    let slack = 4.0 * f64::EPSILON * (1.0 + eval.value.abs());
    if next.value.is_finite() && next.value >= eval.value - slack && sup_norm(&next.gradient) <= sup_norm(&eval.gradient) {
        (trial, next)
    } else {
        (x, eval)
    }
}

/// Damped Newton ascent with step halving.
///
/// When `-H` is not positive definite the step falls back to the gradient
/// direction; if that also fails to increase the objective the Hessian is
/// reported singular.
pub fn newton_maximize<O: ConcaveObjective + ?Sized>(
    objective: &O,
    init: &[f64],
    opts: NewtonOptions,
) -> Result<NewtonReport> {
    if init.len() != objective.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial point has length {}, objective dimension is {}",
            init.len(),
            objective.dim()
        )));
    }
    let mut x = init.to_vec();
    let mut eval = objective.evaluate(&x);
    if !eval.value.is_finite() {
        return Err(Error::InvalidInput("objective is not finite at the initial point".into()));
    }
    for iter in 0..opts.max_iter {
        let gnorm = sup_norm(&eval.gradient);
        if gnorm <= opts.tol {
            let (x, eval) = polish(objective, x, eval);
            return Ok(NewtonReport {
                solution: x,
                value: eval.value,
                iterations: iter,
                final_gradient_norm: sup_norm(&eval.gradient),
                converged: true,
            });
        }
        if !gnorm.is_finite() {
            return Err(Error::HessianSingular);
        }
        let mut neg_h = eval.hessian.clone();
        neg_h.scale(-1.0);
        let (direction, is_newton) = match Cholesky::factor(&neg_h) {
            Ok(ch) => (ch.solve(&eval.gradient), true),
            Err(_) => (eval.gradient.clone(), false),
        };
        let slack = 4.0 * f64::EPSILON * (1.0 + eval.value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let v = objective.value(&trial);
            if v.is_finite() && v >= eval.value - slack {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(trial) => {
                x = trial;
                eval = objective.evaluate(&x);
            }
            None if is_newton => {
                // Newton direction stalled at rounding level: report where we are.
                let gnorm = sup_norm(&eval.gradient);
                return Err(Error::MaxIterationsExceeded { iterations: iter + 1, gradient_norm: gnorm });
            }
            None => return Err(Error::HessianSingular),
        }
    }
    let gnorm = sup_norm(&eval.gradient);
    if gnorm <= opts.tol {
        return Ok(NewtonReport {
            solution: x,
            value: eval.value,
            iterations: opts.max_iter,
            final_gradient_norm: gnorm,
            converged: true,
        });
    }
    Err(Error::MaxIterationsExceeded { iterations: opts.max_iter, gradient_norm: gnorm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn compensated_sum_recovers_cancelled_digits() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(vals), 2.0);
        let naive: f64 = vals.iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn solve_spd_identity() {
        let x = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_close(&x, &[1.0, 2.0, 3.0], 1e-15);
    }

    #[test]
    fn solve_spd_two_by_two_hand_elimination() {
        // 4a + b = 1, a + 3b = 2  =>  b = 7/11, a = 1/11
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        assert_close(&x, &[1.0 / 11.0, 7.0 / 11.0], 1e-15);
    }

    #[test]
    fn solve_spd_rejects_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&a, &[1.0, 0.0]), Err(Error::NotPositiveDefinite { pivot: 1, dim: 2 })));
    }

    #[test]
    fn solve_spd_rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(solve_spd(&a, &[1.0, 0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matrix_rejects_non_finite_and_bad_shape() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn weighted_lsq_examples() {
        let ones = Matrix::new(3, 1, vec![1.0; 3]).unwrap();
        let y = [2.0, 4.0, 6.0];
        assert_close(&weighted_lsq(&ones, &y, &[1.0, 1.0, 1.0]).unwrap(), &[4.0], 1e-14);
        assert_close(&weighted_lsq(&ones, &y, &[1.0, 0.0, 0.0]).unwrap(), &[2.0], 1e-14);
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_close(&weighted_lsq(&x, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap(), &[1.0, 1.0], 1e-14);
    }

    #[test]
    fn weighted_lsq_rejects_zero_and_negative_weights() {
        let ones = Matrix::new(2, 1, vec![1.0; 2]).unwrap();
        assert!(weighted_lsq(&ones, &[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(weighted_lsq(&ones, &[1.0, 2.0], &[1.0, -1.0]).is_err());
    }

    #[test]
    fn weighted_lsq_collinear_design_reports_pivot() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            weighted_lsq(&x, &[1.0, 2.0, 3.0], &[1.0; 3]),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    struct Quadratic;
    impl ConcaveObjective for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> Evaluation {
            Evaluation {
                value: -(x[0] - 3.0).powi(2),
                gradient: vec![-2.0 * (x[0] - 3.0)],
                hessian: Matrix::new(1, 1, vec![-2.0]).unwrap(),
            }
        }
    }

    struct Linear;
    impl ConcaveObjective for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> Evaluation {
            Evaluation { value: x[0], gradient: vec![1.0], hessian: Matrix::zeros(1, 1) }
        }
    }

    /// Intercept-only tilting objective: n1 * g - n0 * exp(g), averaged.
    struct InterceptTilt {
        n1: f64,
        n0: f64,
    }
    impl ConcaveObjective for InterceptTilt {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> Evaluation {
            let n = self.n1 + self.n0;
            let e = x[0].exp();
            Evaluation {
                value: (self.n1 * x[0] - self.n0 * e) / n,
                gradient: vec![(self.n1 - self.n0 * e) / n],
                hessian: Matrix::new(1, 1, vec![-self.n0 * e / n]).unwrap(),
            }
        }
    }

    #[test]
    fn newton_quadratic() {
        let r = newton_maximize(&Quadratic, &[0.0], NewtonOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.solution[0] - 3.0).abs() < 1e-12);
        assert!(r.final_gradient_norm <= 1e-9);
    }

    #[test]
    fn newton_intercept_tilting_closed_form() {
        let obj = InterceptTilt { n1: 3.0, n0: 7.0 };
        let r = newton_maximize(&obj, &[0.0], NewtonOptions::default()).unwrap();
        assert!((r.solution[0] - (3.0_f64 / 7.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn newton_linear_objective_has_no_maximizer() {
        let err = newton_maximize(&Linear, &[0.0], NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MaxIterationsExceeded { iterations: 100, .. }));
    }

    /// Logistic log-likelihood in a transformed parametrization `gamma = A theta`.
    struct Logit {
        x: Matrix,
        d: Vec<f64>,
    }
    impl ConcaveObjective for Logit {
        fn dim(&self) -> usize {
            self.x.cols()
        }
        fn evaluate(&self, g: &[f64]) -> Evaluation {
            let n = self.x.rows() as f64;
            let eta = self.x.matvec(g);
            let mut value = 0.0;
            let mut grad_w = vec![0.0; eta.len()];
            let mut hess_w = vec![0.0; eta.len()];
            for i in 0..eta.len() {
                let p = 1.0 / (1.0 + (-eta[i]).exp());
                value += self.d[i] * eta[i] - (1.0 + eta[i].exp()).ln();
                grad_w[i] = self.d[i] - p;
                hess_w[i] = -p * (1.0 - p);
            }
            let ones = vec![1.0; eta.len()];
            let mut gradient = self.x.weighted_xty(&grad_w, &ones);
            gradient.iter_mut().for_each(|v| *v /= n);
            let mut hessian = self.x.weighted_gram(&hess_w);
            hessian.scale(1.0 / n);
            Evaluation { value: value / n, gradient, hessian }
        }
    }

    fn spd_from(entries: &[f64], dim: usize) -> Matrix {
        let b = Matrix::new(dim, dim, entries.to_vec()).unwrap();
        let mut a = b.transpose().matmul(&b).unwrap();
        for i in 0..dim {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        a
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn solve_spd_residual_is_small(dim in 1usize..=50, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let entries: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = spd_from(&entries, dim);
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = solve_spd(&a, &b).unwrap();
            let ax = a.matvec(&x);
            let res: Vec<f64> = ax.iter().zip(&b).map(|(u, v)| u - v).collect();
            let rel = dot(&res, &res).sqrt() / dot(&b, &b).sqrt().max(1e-300);
            prop_assert!(rel <= 1e-10, "relative residual {rel}");
        }

        #[test]
        fn equal_weights_match_unweighted(c in 0.01f64..100.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b1 = weighted_lsq(&x, &y, &vec![1.0; n]).unwrap();
            let b2 = weighted_lsq(&x, &y, &vec![c; n]).unwrap();
            for (u, v) in b1.iter().zip(&b2) {
                prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
            }
        }

        #[test]
        fn newton_is_invariant_to_linear_reparametrization(seed in any::<u64>(), a12 in -2.0f64..2.0, s in 0.2f64..5.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let mut rows = Vec::new();
            let mut d = Vec::new();
            for i in 0..n {
                let z: f64 = rng.random_range(-2.0..2.0);
                rows.push(vec![1.0, z]);
                let p = 1.0 / (1.0 + (-(0.3 + 0.8 * z)).exp());
                d.push(if i < 2 { i as f64 } else if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            }
            // overlap guard so the MLE exists
            rows.push(vec![1.0, 2.0]); d.push(0.0);
            rows.push(vec![1.0, -2.0]); d.push(1.0);
            let x = Matrix::from_rows(&rows).unwrap();
            // reparametrize columns: X A with A = [[1, a12], [0, s]]
            let a = Matrix::from_rows(&[vec![1.0, a12], vec![0.0, s]]).unwrap();
            let xa = x.matmul(&a).unwrap();
            let r1 = newton_maximize(&Logit { x: x.clone(), d: d.clone() }, &[0.0, 0.0], NewtonOptions::default()).unwrap();
            let r2 = newton_maximize(&Logit { x: xa.clone(), d }, &[0.0, 0.0], NewtonOptions::default()).unwrap();
            let i1 = x.matvec(&r1.solution);
            let i2 = xa.matvec(&r2.solution);
            for (u, v) in i1.iter().zip(&i2) {
                prop_assert!((u - v).abs() <= 1e-8, "{u} vs {v}");
            }
        }
    }
}
