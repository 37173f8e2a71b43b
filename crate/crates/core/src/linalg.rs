//! Dense real linear algebra kernels.
//!
//! Everything here is a pure function of its inputs. Matrices are nalgebra
//! `DMatrix<f64>` values; every entry point rejects NaN/Inf before doing any
//! work so that downstream residuals are never silently poisoned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Condition-number ceiling above which a square system is treated as singular.
pub const CONDITION_CEILING: f64 = 1e12;

/// Thin singular value decomposition with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub singular_values: Vector,
    pub vt: Matrix,
    pub rank_tolerance: f64,
}

impl SvdFactors {
    /// Number of singular values above `rank_tolerance`.
    pub fn numerical_rank(&self) -> usize {
        self.singular_values.iter().filter(|&&s| s > self.rank_tolerance).count()
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }

    /// Pseudoinverse keeping at most `max_rank` singular values (and never
    /// any below the rank tolerance).
    fn pinv_truncated(&self, max_rank: usize) -> Matrix {
        let rank = self.numerical_rank().min(max_rank);
        let (m, n) = (self.u.nrows(), self.vt.ncols());
        let mut out = Matrix::zeros(n, m);
        for j in 0..rank {
            let s = self.singular_values[j];
            let v = self.vt.row(j).transpose();
            let u = self.u.column(j);
            out += (v / s) * u.transpose();
        }
        out
    }
}

pub fn ensure_finite_matrix(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_finite_vector(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// nalgebra's dynamic-size SVD can return mismatched `U`/`Vᵀ` for nearly
/// rank-deficient 2x2 input, so the factorisation is done here. The matrices
/// in this crate are tiny, and Jacobi is accurate to high relative precision.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    ensure_finite_matrix(a, "svd input")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::ShapeMismatch(format!("empty {m}x{n} matrix")));
    }
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(SvdFactors {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
            rank_tolerance: t.rank_tolerance,
        });
    }
    let (w, v) = jacobi_sweeps(a.clone());
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let singular_values = Vector::from_iterator(n, order.iter().map(|&i| norms[i]));
    let sigma_max = singular_values[0];
    let rank_tolerance = (m.max(n) as f64) * sigma_max * f64::EPSILON;

    let mut u = Matrix::zeros(m, n);
    let mut filled = 0;
    for (j, &i) in order.iter().enumerate() {
        if norms[i] > 0.0 && norms[i] > rank_tolerance * 1e-3 {
            u.set_column(j, &(w.column(i) / norms[i]));
            filled = j + 1;
        }
    }
    complete_orthonormal(&mut u, filled);
    let vt = Matrix::from_rows(&order.iter().map(|&i| v.column(i).transpose()).collect::<Vec<_>>());
    Ok(SvdFactors { u, singular_values, vt, rank_tolerance })
}

/// Orthogonalises the columns of `w` (m >= n) in place; returns `(A V, V)`.
fn jacobi_sweeps(mut w: Matrix) -> (Matrix, Matrix) {
    let n = w.ncols();
    let mut v = Matrix::identity(n, n);
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, p)], mat[(r, q)]);
                        mat[(r, p)] = c * x - s * y;
                        mat[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Fills columns `from..` of `u` with unit vectors orthogonal to all
/// earlier columns.
fn complete_orthonormal(u: &mut Matrix, from: usize) {
    let (m, n) = u.shape();
    let mut j = from;
    let mut e = 0;
    while j < n && e < m {
        let mut c = Vector::zeros(m);
        c[e] = 1.0;
        for _ in 0..2 {
            for i in 0..j {
                let proj = u.column(i).dot(&c);
                c -= proj * u.column(i);
            }
        }
        let norm = c.norm();
        if norm > 1e-8 {
            u.set_column(j, &(c / norm));
            j += 1;
        }
        e += 1;
    }
}

/// Moore–Penrose pseudoinverse via SVD.
pub fn pseudoinverse(a: &Matrix) -> Result<Matrix> {
    let f = svd(a)?;
    Ok(f.pinv_truncated(usize::MAX))
}

/// Pseudoinverse of a matrix whose rank is known a priori to be at most
/// `max_rank`. Singular values beyond the first `max_rank` are dropped even
/// when they exceed the round-off tolerance, which keeps finite-difference
/// noise in a structurally rank-deficient Jacobian from being inverted.
pub fn pseudoinverse_rank(a: &Matrix, max_rank: usize) -> Result<Matrix> {
    let f = svd(a)?;
    Ok(f.pinv_truncated(max_rank))
}

/// `I - A^+ A`, the orthogonal projector onto `ker A`.
pub fn projector_onto_kernel(a: &Matrix) -> Result<Matrix> {
    let q = projector_onto_rowspace(a)?;
    Ok(Matrix::identity(a.ncols(), a.ncols()) - q)
}

/// `A^+ A`, the orthogonal projector onto `(ker A)^⊥`.
pub fn projector_onto_rowspace(a: &Matrix) -> Result<Matrix> {
    projector_onto_rowspace_rank(a, usize::MAX)
}

pub fn projector_onto_rowspace_rank(a: &Matrix, max_rank: usize) -> Result<Matrix> {
    let f = svd(a)?;
    let rank = f.numerical_rank().min(max_rank);
    let n = a.ncols();
    let mut q = Matrix::zeros(n, n);
    for j in 0..rank {
        let v = f.vt.row(j).transpose();
        q += &v * v.transpose();
    }
    Ok(q)
}

/// Orthonormal basis (as columns) of `ker A`, assuming `rank(A) = rank`.
/// Pass `None` to use the numerical rank.
pub fn kernel_basis(a: &Matrix, rank: Option<usize>) -> Result<Matrix> {
    let (m, n) = a.shape();
    // pad with zero rows so the thin SVD returns a full n x n V^T
    let padded = if m < n {
        let mut p = Matrix::zeros(n, n);
        p.rows_mut(0, m).copy_from(a);
        p
    } else {
        a.clone()
    };
    let f = svd(&padded)?;
    let r = rank.unwrap_or_else(|| f.numerical_rank()).min(n);
    let rows: Vec<_> = (r..n).map(|i| f.vt.row(i).transpose()).collect();
    if rows.is_empty() {
        Ok(Matrix::zeros(n, 0))
    } else {
        Ok(Matrix::from_columns(&rows))
    }
}

/// Orthonormal basis (as columns) of the row space of `A`, assuming
/// `rank(A) = rank`. Each basis vector is oriented so that its
/// largest-magnitude component is positive.
pub fn rowspace_basis(a: &Matrix, rank: Option<usize>) -> Result<Matrix> {
    let f = svd(a)?;
    let r = rank.unwrap_or_else(|| f.numerical_rank()).min(f.vt.nrows());
    let cols: Vec<Vector> = (0..r)
        .map(|i| {
            let v = f.vt.row(i).transpose();
            let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();
    if cols.is_empty() {
        Ok(Matrix::zeros(a.ncols(), 0))
    } else {
        Ok(Matrix::from_columns(&cols))
    }
}

/// 2-norm condition number `σ_max / σ_min` of a square matrix.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let f = svd(a)?;
    let smin = f.singular_values[f.singular_values.len() - 1];
    Ok(if smin > 0.0 { f.sigma_max() / smin } else { f64::INFINITY })
}

/// A factored square matrix that applies `T^{-1}` (and `T^{-T}`) without ever
/// forming the inverse.
#[derive(Debug, Clone)]
pub struct SquareSolver {
    factors: SvdFactors,
    cond: f64,
}

impl SquareSolver {
    pub fn new(t: &Matrix) -> Result<Self> {
        if !t.is_square() {
            return Err(Error::ShapeMismatch(format!("expected square matrix, got {}x{}", t.nrows(), t.ncols())));
        }
        let factors = svd(t)?;
        let smin = factors.singular_values[factors.singular_values.len() - 1];
        let cond = if smin > 0.0 { factors.sigma_max() / smin } else { f64::INFINITY };
        if !(cond <= CONDITION_CEILING) {
            return Err(Error::SingularMatrix { cond });
        }
        Ok(Self { factors, cond })
    }

    pub fn condition(&self) -> f64 {
        self.cond
    }

    /// `T^{-1} B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let f = &self.factors;
        let mut y = f.u.transpose() * b;
        for (i, s) in f.singular_values.iter().enumerate() {
            y.row_mut(i).unscale_mut(*s);
        }
        f.vt.transpose() * y
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let f = &self.factors;
        let mut y = f.u.transpose() * b;
        y.component_div_assign(&f.singular_values);
        f.vt.transpose() * y
    }

    /// `B T^{-1}` for a matrix left factor.
    pub fn right_solve_matrix(&self, b: &Matrix) -> Matrix {
        let f = &self.factors;
        let mut y = b * f.vt.transpose();
        for (j, s) in f.singular_values.iter().enumerate() {
            y.column_mut(j).unscale_mut(*s);
        }
        y * f.u.transpose()
    }
}

/// Solution of a square system with its condition estimate.
#[derive(Debug, Clone)]
pub struct SquareSolution {
    pub x: Vector,
    pub cond: f64,
}

pub fn solve_square(t: &Matrix, b: &Vector) -> Result<SquareSolution> {
    ensure_finite_vector(b, "right-hand side")?;
    if b.len() != t.nrows() {
        return Err(Error::ShapeMismatch(format!("rhs length {} vs matrix {}x{}", b.len(), t.nrows(), t.ncols())));
    }
    let solver = SquareSolver::new(t)?;
    Ok(SquareSolution { x: solver.solve(b), cond: solver.condition() })
}

/// Determinant of the matrix obtained by stacking `blocks` vertically.
pub fn stacked_determinant(blocks: &[Matrix]) -> Result<f64> {
    let cols = blocks.first().map(|b| b.ncols()).ok_or_else(|| Error::ShapeMismatch("no blocks to stack".into()))?;
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::ShapeMismatch("blocks have differing column counts".into()));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    if rows != cols {
        return Err(Error::ShapeMismatch(format!("stacked matrix is {rows}x{cols}, not square")));
    }
    let mut stacked = Matrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        ensure_finite_matrix(b, "determinant block")?;
        stacked.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    Ok(stacked.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn max_abs(m: &Matrix) -> f64 {
        m.amax()
    }

    /// Closed-form pseudoinverse for surjective (full row rank) matrices.
    fn surjective_pinv(l: &Matrix) -> Matrix {
        l.transpose() * (l * l.transpose()).try_inverse().unwrap()
    }

    #[test]
    fn nearly_symmetric_rank_one_reconstructs() {
        // nalgebra's dynamic SVD reconstructs this with an error of about 0.2
        let a = dmatrix![0.009478952779492953, -0.09689737991141571; -0.09689737991141568, 0.9905210472205069];
        let f = svd(&a).unwrap();
        assert!(max_abs(&(f.reconstruct() - &a)) < 1e-15);
        assert!(max_abs(&(f.u.transpose() * &f.u - Matrix::identity(2, 2))) < 1e-15);
        let p = pseudoinverse_rank(&a, 1).unwrap();
        assert!(max_abs(&(&p - &a)) < 1e-14);
    }

    #[test]
    fn svd_shapes_and_order() {
        let a = dmatrix![1.0, 2.0, 0.0; 0.0, 3.0, -1.0];
        for m in [a.clone(), a.transpose()] {
            let f = svd(&m).unwrap();
            assert_eq!(f.singular_values.len(), 2);
            assert!(f.singular_values[0] >= f.singular_values[1]);
            assert!(max_abs(&(f.reconstruct() - &m)) < 1e-14);
        }
        let z = svd(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(z.numerical_rank(), 0);
        assert!(max_abs(&(z.u.transpose() * &z.u - Matrix::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn identity_pinv() {
        let i = Matrix::identity(2, 2);
        assert!(max_abs(&(pseudoinverse(&i).unwrap() - &i)) < 1e-15);
    }

    #[test]
    fn row_vector_pinv() {
        let a = dmatrix![1.0, 0.0];
        let p = pseudoinverse(&a).unwrap();
        assert_eq!(p.shape(), (2, 1));
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15 && p[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn full_rank_wide_matches_closed_form() {
        let a = dmatrix![
            0.3, -1.2, 0.5, 2.0, 0.1;
            1.1, 0.4, -0.7, 0.2, 0.9;
            -0.5, 0.8, 1.3, -0.4, 0.6
        ];
        let p = pseudoinverse(&a).unwrap();
        assert!(max_abs(&(&a * &p * &a - &a)) < 1e-10);
        let aap = &a * &p;
        assert!(max_abs(&(aap.transpose() - &aap)) < 1e-10);
        assert!(max_abs(&(&p - surjective_pinv(&a))) < 1e-12);
        assert!(max_abs(&(aap - Matrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn nonfinite_rejected() {
        let a = dmatrix![1.0, f64::NAN];
        assert!(matches!(pseudoinverse(&a), Err(Error::NonFinite(_))));
        assert!(matches!(projector_onto_kernel(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn kernel_projectors() {
        let k = projector_onto_kernel(&dmatrix![1.0, 0.0]).unwrap();
        assert!(max_abs(&(k - dmatrix![0.0, 0.0; 0.0, 1.0])) < 1e-15);
        let k = projector_onto_kernel(&Matrix::identity(2, 2)).unwrap();
        assert!(max_abs(&k) < 1e-15);
        // circle-system DP at (2,0)
        let dp = dmatrix![0.0, 0.0; 0.0, 0.5];
        let k = projector_onto_kernel(&dp).unwrap();
        assert!(max_abs(&(k - dmatrix![1.0, 0.0; 0.0, 0.0])) < 1e-15);
    }

    #[test]
    fn rowspace_projectors() {
        let q = projector_onto_rowspace(&dmatrix![2.0, 0.0]).unwrap();
        assert!(max_abs(&(q - dmatrix![1.0, 0.0; 0.0, 0.0])) < 1e-15);
        let q = projector_onto_rowspace(&Matrix::zeros(2, 2)).unwrap();
        assert!(max_abs(&q) == 0.0);
        let q = projector_onto_rowspace(&dmatrix![1.0, 1.0]).unwrap();
        assert!(max_abs(&(q - dmatrix![0.5, 0.5; 0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn solve_simple() {
        let s = solve_square(&Matrix::identity(2, 2), &Vector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(s.x.as_slice(), &[3.0, 4.0]);
        let s = solve_square(&dmatrix![2.0, 0.0; 0.0, 4.0], &Vector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && (s.x[1] - 1.0).abs() < 1e-15);
        assert!((s.cond - 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_singular_rejected() {
        let r = solve_square(&dmatrix![1.0, 2.0; 2.0, 4.0], &Vector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(r, Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn solver_transposed_paths() {
        let t = dmatrix![2.0, 1.0, 0.0; 0.5, 3.0, -1.0; 0.0, 0.2, 1.5];
        let s = SquareSolver::new(&t).unwrap();
        let inv = t.clone().try_inverse().unwrap();
        let b = dmatrix![1.0, 2.0, 3.0; -1.0, 0.5, 0.0];
        assert!(max_abs(&(s.right_solve_matrix(&b) - &b * &inv)) < 1e-13);
        assert!(max_abs(&(s.solve_matrix(&b.transpose()) - &inv * b.transpose())) < 1e-13);
    }

    #[test]
    fn determinants() {
        let d = stacked_determinant(&[dmatrix![1.0, 0.0], dmatrix![0.0, 1.0]]).unwrap();
        assert_eq!(d, 1.0);
        let d = stacked_determinant(&[dmatrix![1.0, 0.0], dmatrix![2.0, 0.0]]).unwrap();
        assert_eq!(d, 0.0);
        let e = stacked_determinant(&[dmatrix![1.0, 0.0]]);
        assert!(matches!(e, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn bases() {
        let a = dmatrix![1.0, 1.0, 0.0];
        let k = kernel_basis(&a, None).unwrap();
        assert_eq!(k.ncols(), 2);
        assert!(max_abs(&(&a * &k)) < 1e-15);
        assert!(max_abs(&(k.transpose() * &k - Matrix::identity(2, 2))) < 1e-14);
        let r = rowspace_basis(&a, None).unwrap();
        assert_eq!(r.ncols(), 1);
        assert!((r[(0, 0)] - r[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn projector_is_own_pseudoinverse() {
        let q = projector_onto_rowspace(&dmatrix![1.0, 2.0, -1.0]).unwrap();
        let p = pseudoinverse(&q).unwrap();
        assert!(max_abs(&(p - q)) < 1e-12);
    }
}
