#![allow(dead_code)]

use drdid::numkit::Matrix;

pub mod hand;
use drdid::panel_est::PanelDataset;
use drdid::rc_est::RcDataset;
use drdid::rng::{Stream, Tag};
use drdid::simulation::{gen_dgp_panel, gen_dgp_rc, DgpSpec, Design};

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for j in c..k {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|j| a[r][j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weighted least squares from explicit normal equations; returns predictions for every row.
pub fn wls_predict(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for i in 0..x.len() {
        for r in 0..k {
            b[r] += w[i] * x[i][r] * y[i];
            for c in 0..k {
                a[r][c] += w[i] * x[i][r] * x[i][c];
            }
        }
    }
    let beta = gauss_solve(a, b);
    x.iter().map(|row| row.iter().zip(&beta).map(|(u, v)| u * v).sum()).collect()
}

pub fn rows(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| x.row(i).to_vec()).collect()
}

pub fn panel_sample(dgp: u8, n: usize, seed: u64) -> PanelDataset {
    let spec = DgpSpec::new(dgp, Design::Panel, n, 0.5, seed).unwrap();
    gen_dgp_panel(&spec, &mut Stream::new(seed, 0, Tag::Data)).unwrap().0
}

pub fn rc_sample(dgp: u8, n: usize, seed: u64) -> RcDataset {
    let spec = DgpSpec::new(dgp, Design::Rc, n, 0.5, seed).unwrap();
    gen_dgp_rc(&spec, &mut Stream::new(seed, 0, Tag::Data)).unwrap().0
}

/// Eight panel units with one covariate.
pub fn panel_fixture() -> PanelDataset {
    let x1 = [0.3, -1.2, 0.8, 1.5, -0.4, 0.1, -0.9, 0.6];
    let d = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let y0 = vec![2.0, 1.1, 3.5, 4.2, 0.7, 1.9, 0.2, 2.8];
    let y1 = vec![4.1, 1.9, 5.6, 7.0, 1.2, 2.7, 0.4, 5.3];
    let x = Matrix::from_rows(&x1.iter().map(|v| vec![1.0, *v]).collect::<Vec<_>>()).unwrap();
    PanelDataset::new(y0, y1, d, x).unwrap()
}

/// Twelve cross-section rows with one covariate, at least two per cell.
pub fn rc_fixture() -> RcDataset {
    let x1 = [0.5, -0.3, 1.1, 0.2, -0.8, 0.9, -1.4, 0.4, 1.6, -0.6, 0.0, 0.7];
    let d = vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let t = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let y = vec![5.2, 3.9, 2.8, 1.7, 4.4, 2.6, 0.9, 1.3, 2.9, 1.5, 0.6, 2.2];
    let x = Matrix::from_rows(&x1.iter().map(|v| vec![1.0, *v]).collect::<Vec<_>>()).unwrap();
    RcDataset::new(y, t, d, x).unwrap()
}
