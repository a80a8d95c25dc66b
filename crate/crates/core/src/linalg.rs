//! Small dense linear-algebra helpers shared by the feature and approximation code.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Condition estimate above which a linear solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Flips each column so that its largest-magnitude entry is positive.
///
/// Ties in magnitude resolve to the first index.
pub fn canonicalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if best_abs > 0.0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `‖UᵀU − I‖_F`.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let g = u.transpose() * u;
    let mut acc = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (g[(i, j)] - target).powi(2);
        }
    }
    acc.sqrt()
}

/// Thin SVD with singular values sorted in descending order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input contains non-finite entries".into()));
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD failed to converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD produced no U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD produced no V".into()))?;
    Ok(ThinSvd {
        u,
        s: svd.singular_values,
        v: v_t.transpose(),
    })
}

/// LU solve with a one-norm condition estimate; refuses systems beyond [`MAX_CONDITION`].
///
/// Returns the solution and the condition estimate.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, hint: &str) -> Result<(DVector<f64>, f64)> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "solve: matrix {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or_else(|| Error::IllConditioned {
        cond: f64::INFINITY,
        hint: hint.to_string(),
    })?;
    let cond = one_norm(a) * one_norm(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned { cond, hint: hint.to_string() });
    }
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::IllConditioned {
        cond,
        hint: hint.to_string(),
    })?;
    Ok((x, cond))
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orthonormal basis for the column span, sign-canonicalized.
///
/// Fails when the numerical rank is below the column count.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.ncols();
    if m.nrows() < d {
        return Err(Error::Numerical(format!(
            "cannot orthonormalize {} columns in dimension {}",
            d,
            m.nrows()
        )));
    }
    let svd = thin_svd(m)?;
    let top = svd.s.get(0).copied().unwrap_or(0.0);
    let tol = top * 1e-10 * (m.nrows().max(d) as f64);
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    if top == 0.0 || rank < d {
        return Err(Error::Numerical(format!(
            "rank collapse: numerical rank {rank} < {d} (singular values {:?})",
            svd.s.as_slice()
        )));
    }
    let mut u = svd.u.columns(0, d).into_owned();
    canonicalize_columns(&mut u);
    Ok(u)
}

/// Euclidean distance between two equal-length slices.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
