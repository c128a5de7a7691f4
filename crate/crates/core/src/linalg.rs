//! Dense linear algebra on `Vec<Vec<S>>` for any [`Real`] scalar, so the same
//! routines serve plain values and jets. `nalgebra` is used where only `f64`
//! is needed (eigenvalues, reference inverses).

use nalgebra::DMatrix;

use crate::scalar::{Real, Scalar};

pub type Mat<S> = Vec<Vec<S>>;

pub fn zeros<S: Scalar>(r: usize, c: usize) -> Mat<S> {
    vec![vec![S::zero(); c]; r]
}

pub fn identity<S: Scalar>(n: usize) -> Mat<S> {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = S::cst(1.0);
    }
    m
}

pub fn transpose<S: Scalar>(a: &Mat<S>) -> Mat<S> {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j].clone()).collect()).collect()
}

pub fn matmul<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| {
                    let mut acc = S::zero();
                    for k in 0..inner {
                        acc = acc + row[k].clone() * b[k][j].clone();
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn matvec<S: Scalar>(a: &Mat<S>, v: &[S]) -> Vec<S> {
    a.iter()
        .map(|row| {
            let mut acc = S::zero();
            for (x, y) in row.iter().zip(v) {
                acc = acc + x.clone() * y.clone();
            }
            acc
        })
        .collect()
}

pub fn add<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.clone() + y.clone()).collect())
        .collect()
}

pub fn sub<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.clone() - y.clone()).collect())
        .collect()
}

pub fn scale<S: Scalar>(a: &Mat<S>, c: f64) -> Mat<S> {
    a.iter().map(|r| r.iter().map(|x| x.clone() * c).collect()).collect()
}

/// LU factorisation with partial pivoting on primal values.
struct Lu<S> {
    lu: Mat<S>,
    perm: Vec<usize>,
    sign: f64,
}

fn factor<S: Real>(a: &Mat<S>) -> Option<Lu<S>> {
    let n = a.len();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let scale = a
        .iter()
        .flat_map(|r| r.iter().map(|x| x.value().abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 && n > 0 {
        return None;
    }
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu[i][k].value().abs().total_cmp(&lu[j][k].value().abs()))
            .expect("nonempty pivot range");
        if !(lu[p][k].value().abs() > 1e-14 * scale) {
            return None;
        }
        if p != k {
            lu.swap(p, k);
            perm.swap(p, k);
            sign = -sign;
        }
        for i in k + 1..n {
            let f = lu[i][k].clone() / lu[k][k].clone();
            for j in k + 1..n {
                let t = f.clone() * lu[k][j].clone();
                lu[i][j] = lu[i][j].clone() - t;
            }
            lu[i][k] = f;
        }
    }
    Some(Lu { lu, perm, sign })
}

impl<S: Real> Lu<S> {
    fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.lu.len();
        let mut y: Vec<S> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.lu[i][j].clone() * y[j].clone();
                y[i] = y[i].clone() - t;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.lu[i][j].clone() * y[j].clone();
                y[i] = y[i].clone() - t;
            }
            y[i] = y[i].clone() / self.lu[i][i].clone();
        }
        y
    }
}

/// Solves `a x = b`; `None` when `a` is numerically singular.
pub fn solve<S: Real>(a: &Mat<S>, b: &[S]) -> Option<Vec<S>> {
    factor(a).map(|lu| lu.solve(b))
}

pub fn inverse<S: Real>(a: &Mat<S>) -> Option<Mat<S>> {
    let n = a.len();
    let lu = factor(a)?;
    let cols: Vec<Vec<S>> = (0..n)
        .map(|j| {
            let e: Vec<S> = (0..n).map(|i| S::cst(if i == j { 1.0 } else { 0.0 })).collect();
            lu.solve(&e)
        })
        .collect();
    Some(transpose(&cols))
}

pub fn det<S: Real>(a: &Mat<S>) -> S {
    match factor(a) {
        None => S::zero(),
        Some(lu) => {
            let mut d = S::cst(lu.sign);
            for i in 0..a.len() {
                d = d * lu.lu[i][i].clone();
            }
            d
        }
    }
}

/// Determinant by cofactor expansion. Works for symbolic scalars; intended
/// for the small blocks that appear here.
pub fn cofactor_det<S: Scalar>(a: &Mat<S>) -> S {
    let n = a.len();
    match n {
        0 => S::cst(1.0),
        1 => a[0][0].clone(),
        2 => a[0][0].clone() * a[1][1].clone() - a[0][1].clone() * a[1][0].clone(),
        _ => {
            let mut acc = S::zero();
            for j in 0..n {
                let term = a[0][j].clone() * cofactor_det(&minor(a, 0, j));
                acc = if j % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}

fn minor<S: Scalar>(a: &Mat<S>, r: usize, c: usize) -> Mat<S> {
    a.iter()
        .enumerate()
        .filter(|(i, _)| *i != r)
        .map(|(_, row)| {
            row.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, x)| x.clone()).collect()
        })
        .collect()
}

/// Adjugate inverse; the caller is responsible for a nonzero determinant.
pub fn cofactor_inverse<S: Scalar>(a: &Mat<S>) -> Mat<S> {
    let n = a.len();
    let d = cofactor_det(a);
    if n == 1 {
        return vec![vec![S::cst(1.0) / d]];
    }
    let mut inv = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let c = cofactor_det(&minor(a, j, i));
            let c = if (i + j) % 2 == 0 { c } else { -c };
            inv[i][j] = c / d.clone();
        }
    }
    inv
}

pub fn values<S: Real>(a: &Mat<S>) -> Mat<f64> {
    a.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect()
}

pub fn to_dmatrix(a: &Mat<f64>) -> DMatrix<f64> {
    let r = a.len();
    let c = if r == 0 { 0 } else { a[0].len() };
    DMatrix::from_fn(r, c, |i, j| a[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &Mat<f64>) -> f64 {
    let m = to_dmatrix(a);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_abs(a: &Mat<f64>) -> f64 {
    a.iter().flat_map(|r| r.iter().map(|x| x.abs())).fold(0.0, f64::max)
}

pub fn max_asymmetry(a: &Mat<f64>) -> f64 {
    let n = a.len();
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            m = m.max((a[i][j] - a[j][i]).abs());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use approx::assert_relative_eq;

    fn sample() -> Mat<f64> {
        vec![vec![4.0, 1.0, -2.0], vec![1.0, 0.0, 3.0], vec![-2.0, 3.0, 5.0]]
    }

    #[test]
    fn inverse_and_det_match_nalgebra() {
        let a = sample();
        let inv = inverse(&a).unwrap();
        let reference = to_dmatrix(&a).try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(inv[i][j], reference[(i, j)], epsilon = 1e-13);
            }
        }
        assert_relative_eq!(det(&a), to_dmatrix(&a).determinant(), epsilon = 1e-12);
        assert_relative_eq!(cofactor_det(&a), det(&a), epsilon = 1e-12);
        let cinv = cofactor_inverse(&a);
        assert_relative_eq!(cinv[1][2], inv[1][2], epsilon = 1e-13);
    }

    #[test]
    fn singular_is_reported() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 1.0]).is_none());
        assert_eq!(det(&a), 0.0);
    }

    #[test]
    fn symbolic_inverse_evaluates() {
        let x = Expr::var(0);
        let a = vec![
            vec![x.clone() + 2.0, x.sin()],
            vec![x.sin(), Expr::constant(3.0)],
        ];
        let inv = cofactor_inverse(&a);
        let xv = 0.3;
        let num = vec![vec![xv + 2.0, xv.sin()], vec![xv.sin(), 3.0]];
        let ninv = inverse(&num).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(inv[i][j].value(&[xv]), ninv[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn min_eigenvalue_of_diagonal() {
        let a = vec![vec![3.0, 0.0], vec![0.0, -1.5]];
        assert_relative_eq!(min_eigenvalue(&a), -1.5, epsilon = 1e-14);
    }
}
