//! Dense helpers shared by the model and the synthesis code.

use nalgebra::{Complex, DMatrix, DVector};

use crate::scalar::Real;

fn padded<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let (r, c) = m.shape();
    if r >= c {
        return m.clone();
    }
    let mut p = DMatrix::zeros(c, c);
    p.view_mut((0, 0), (r, c)).copy_from(m);
    p
}

fn threshold<T: Real>(sv: &DVector<T>) -> T {
    let smax = sv.iter().fold(T::zero(), |a, &b| if b > a { b } else { a });
    smax * T::c(T::RANK_RTOL)
}

pub fn rank<T: Real>(m: &DMatrix<T>) -> usize {
    rank_scaled(m, T::zero())
}

pub fn rank_scaled<T: Real>(m: &DMatrix<T>, scale: T) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let tol = threshold(&sv).max(scale * T::c(T::RANK_RTOL));
    if tol == T::zero() {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol).count()
}

/// Orthonormal basis of the right null space.
pub fn null_space<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    null_space_scaled(m, T::zero())
}

/// Null space with the rank threshold taken relative to max(σ_max, scale).
pub fn null_space_scaled<T: Real>(m: &DMatrix<T>, scale: T) -> DMatrix<T> {
    let n = m.ncols();
    if m.nrows() == 0 || m.iter().all(|x| *x == T::zero()) {
        return DMatrix::identity(n, n);
    }
    let svd = padded(m).svd(false, true);
    let vt = svd.v_t.expect("v requested");
    let tol = threshold(&svd.singular_values).max(scale * T::c(T::RANK_RTOL));
    let cols: Vec<DVector<T>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space.
pub fn orth<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let r = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let tol = threshold(&svd.singular_values);
    let cols: Vec<DVector<T>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol && s > T::zero())
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(r, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of span(a) ∩ span(b).
pub fn intersect<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (n, ka) = a.shape();
    if ka == 0 || b.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let qa = orth(a);
    let qb = orth(b);
    let mut stacked = DMatrix::zeros(n, qa.ncols() + qb.ncols());
    stacked.view_mut((0, 0), (n, qa.ncols())).copy_from(&qa);
    stacked.view_mut((0, qa.ncols()), (n, qb.ncols())).copy_from(&(-&qb));
    let ns = null_space(&stacked);
    let part = ns.rows(0, qa.ncols()).into_owned();
    orth(&(qa * part))
}

pub fn hstack<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

pub fn vstack<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(*b);
        at += b.nrows();
    }
    out
}

/// Distance of each column of `m` from span(basis), basis orthonormal.
pub fn projection_residual<T: Real>(basis: &DMatrix<T>, m: &DMatrix<T>) -> T {
    let proj = basis * (basis.transpose() * m);
    (m - proj).norm()
}

pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    m.clone().singular_values().iter().fold(T::zero(), |a, &b| if b > a { b } else { a })
}

/// Eigenvalues via Hessenberg reduction and Francis double-shift QR with exceptional shifts.
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<Complex<f64>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigenvalues of a non-square matrix");
    if n == 0 {
        return Vec::new();
    }
    let h = to_f64(m).hessenberg().h();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| h[(i, j)]).collect()).collect();
    hqr(&mut a).expect("QR iteration did not converge")
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names, unused_assignments)]
fn hqr(a: &mut [Vec<f64>]) -> Option<Vec<Complex<f64>>> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0f64, 0.0f64, 0.0f64);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return None;
            }
            if its == 10 || its == 20 {
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            loop {
                let z = a[m][m];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k + 1 <= nu {
                let mut xk = 0.0;
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk != 0.0 {
                        p /= xk;
                        q /= xk;
                        r /= xk;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * xk;
                    }
                    p += s;
                    let x2 = p / s;
                    let y2 = q / s;
                    let z2 = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z2;
                        }
                        a[k + 1][j] -= pp * y2;
                        a[k][j] -= pp * x2;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x2 * row[k] + y2 * row[k + 1];
                        if k != nu - 1 {
                            pp += z2 * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Some(wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect())
}

/// Largest pairwise distance under a greedy nearest matching; infinite on size mismatch.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].re.partial_cmp(&a[j].re).unwrap_or(std::cmp::Ordering::Equal));
    for i in order {
        let mut best = None;
        for (j, bj) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (a[i] - bj).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.expect("sizes match");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

pub fn to_f64<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|x| x.f64())
}

pub fn from_f64<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::c)
}

pub fn cond<T: Real>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(0.0f64, |a, b| a.max(b.f64()));
    let min = sv.iter().fold(f64::INFINITY, |a, b| a.min(b.f64()));
    max / min
}
