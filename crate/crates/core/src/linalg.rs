//! Dense linear-algebra helpers shared by the decomposition modules.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = u * diag(s) * vᵀ` with singular values sorted descending.
///
/// `u` is `rows × k`, `v` is `cols × k`, `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.s.get(0).copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > rel_tol * smax).count()
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> ThinSvd {
        ThinSvd {
            u: self.u.columns(0, r).into_owned(),
            s: self.s.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        }
    }
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return ThinSvd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        };
    }
    if rows < cols {
        let t = thin_svd(&m.transpose());
        return ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    // Tall: QR first, then Jacobi on the small triangular factor.
    let (u, s, v) = if rows > 2 * cols {
        let qr = m.clone().qr();
        let (w, s, v) = jacobi_svd(qr.r());
        (qr.q() * w, s, v)
    } else {
        jacobi_svd(m.clone())
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    ThinSvd {
        u: DMatrix::from_fn(rows, k, |i, j| u[(i, order[j])]),
        s: DVector::from_fn(k, |j, _| s[order[j]]),
        v: DMatrix::from_fn(cols, k, |i, j| v[(i, order[j])]),
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD of a matrix with `rows >= cols`.
///
/// Column pairs are rotated until every pair is orthogonal to relative
/// precision. Exactly-zero columns get an orthonormal completion so `u`
/// always has orthonormal columns. The bidiagonal routine in nalgebra can lose
/// several digits in the left vectors of rank-deficient inputs, which this
/// avoids.
fn jacobi_svd(mut w: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = w.shape();
    debug_assert!(rows >= cols);
    let mut v = DMatrix::<f64>::identity(cols, cols);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
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
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let s = DVector::from_fn(cols, |j, _| w.column(j).norm());
    let mut missing = Vec::new();
    for j in 0..cols {
        if s[j] > f64::MIN_POSITIVE * 1e10 {
            let n = s[j];
            w.column_mut(j).unscale_mut(n);
        } else {
            missing.push(j);
        }
    }
    if !missing.is_empty() {
        let mut e = 0;
        for j in missing {
            loop {
                let mut cand = DVector::<f64>::zeros(rows);
                cand[e] = 1.0;
                e += 1;
                for _ in 0..2 {
                    for i in 0..cols {
                        if i != j && w.column(i).norm_squared() > 0.5 {
                            let proj = w.column(i).dot(&cand);
                            cand.axpy(-proj, &w.column(i).into_owned(), 1.0);
                        }
                    }
                }
                let n = cand.norm();
                if n > 0.5 {
                    w.set_column(j, &(cand / n));
                    break;
                }
            }
        }
    }
    (w, s, v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let x = m[(i, p)];
        let y = m[(i, q)];
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// `‖mᵀm − I‖_F`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let g = m.tr_mul(m);
    let k = g.nrows();
    (g - DMatrix::<f64>::identity(k, k)).norm()
}

/// Orthonormal basis of the column space, dropping directions whose
/// singular value is at most `rel_tol · σ_max`.
pub fn orthonormal_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = thin_svd(m);
    let r = svd.rank(rel_tol);
    svd.u.columns(0, r).into_owned()
}

/// Principal angles (radians, ascending) between the column spans of `a`
/// and `b`. Each input is orthonormalised first.
///
/// Sines and cosines are both computed so that tiny angles keep full
/// relative precision.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.nrows(), b.nrows(), "principal angles need equal row counts");
    let qa = orthonormal_basis(a, 1e-12);
    let qb = orthonormal_basis(b, 1e-12);
    let (big, small) = if qa.ncols() >= qb.ncols() {
        (qa, qb)
    } else {
        (qb, qa)
    };
    let k = small.ncols();
    if k == 0 {
        return Vec::new();
    }
    let cross = big.tr_mul(&small);
    let residual = &small - &big * &cross;
    let mut cos: Vec<f64> = thin_svd(&cross).s.iter().map(|c| c.min(1.0)).collect();
    let mut sin: Vec<f64> = thin_svd(&residual).s.iter().map(|s| s.min(1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    sin.sort_by(|x, y| x.total_cmp(y));
    // residual may have fewer singular values than k if rows < k
    sin.resize(k, 0.0);
    cos.resize(k, 0.0);
    let mut angles: Vec<f64> = cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| if s < 0.5 { s.asin() } else { c.acos() })
        .collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    angles
}

/// Largest principal angle; `0` when either span is empty and both are empty,
/// `π/2` when exactly one is empty.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    match (a.ncols(), b.ncols()) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => std::f64::consts::FRAC_PI_2,
        _ => principal_angles(a, b).last().copied().unwrap_or(0.0),
    }
}

/// Modified Gram-Schmidt with one re-orthogonalisation pass, in column
/// order. Returns `None` if some column collapses to (numerical) zero.
pub fn gram_schmidt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        let scale = q.column(j).norm();
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let n = q.column(j).norm();
        if n <= 1e-14 * scale.max(f64::MIN_POSITIVE) || n == 0.0 {
            return None;
        }
        q.column_mut(j).unscale_mut(n);
    }
    Some(q)
}

/// Flips column signs so each column's largest-magnitude entry is positive.
pub fn canonical_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Minimum-norm least-squares solution of `m x = b` via the thin SVD,
/// treating singular values at most `rel_tol · σ_max` as zero.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    pinv_apply(&thin_svd(m), b, rel_tol)
}

pub fn pinv_apply(svd: &ThinSvd, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let r = svd.rank(rel_tol);
    let mut coeff = svd.u.columns(0, r).tr_mul(b);
    for i in 0..r {
        coeff[i] /= svd.s[i];
    }
    svd.v.columns(0, r) * coeff
}

/// Moore-Penrose pseudo-inverse of a small matrix.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = thin_svd(m);
    let r = svd.rank(rel_tol);
    let mut v = svd.v.columns(0, r).into_owned();
    for j in 0..r {
        v.column_mut(j).unscale_mut(svd.s[j]);
    }
    v * svd.u.columns(0, r).transpose()
}

/// Horizontal concatenation.
pub fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        assert_eq!(p.nrows(), rows, "hstack row mismatch");
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    out
}

/// Pearson correlation of two equal-length vectors; `0` if either is constant.
pub fn correlation(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
