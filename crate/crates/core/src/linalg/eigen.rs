use num_complex::Complex;

use super::Matrix;
use crate::{Error, Result, Scalar};

/// Complex eigenvalue.
pub type ComplexScalar<T> = Complex<T>;

/// All eigenvalues of a square matrix, with multiplicity, sorted by real part
/// then imaginary part.
///
/// 1x1 and 2x2 matrices use closed forms. Larger matrices are reduced to upper
/// Hessenberg form by Householder reflections and then deflated by Francis
/// double-shift QR sweeps. The deflation threshold is `1e-12 * ||M||` and the
/// total sweep budget is `100 n`.
pub fn eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<ComplexScalar<T>>> {
    m.require_square("eigenvalue argument")?;
    let n = m.rows();
    let mut eig = match n {
        1 => vec![Complex::new(m[(0, 0)], T::zero())],
        2 => quadratic(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec(),
        _ => {
            let mut h = m.clone();
            hessenberg(&mut h);
            francis_qr(&mut h, m.norm_inf())?
        }
    };
    eig.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    Ok(eig)
}

/// True iff every eigenvalue has real part below `-tol`.
pub fn is_hurwitz<T: Scalar>(m: &Matrix<T>, tol: T) -> Result<bool> {
    if !(tol > T::zero()) {
        return Err(Error::Domain("Hurwitz tolerance must be positive".into()));
    }
    Ok(eigenvalues(m)?.iter().all(|z| z.re < -tol))
}

/// Smallest real part over the spectrum.
pub fn min_real_part<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(T::infinity(), T::min))
}

/// Largest real part over the spectrum (the spectral abscissa).
pub fn max_real_part<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(T::neg_infinity(), T::max))
}

fn quadratic<T: Scalar>(a: T, b: T, c: T, d: T) -> [ComplexScalar<T>; 2] {
    let half = T::lit(0.5);
    let mean = (a + d) * half;
    let diff = (a - d) * half;
    let disc = diff * diff + b * c;
    if disc >= T::zero() {
        let r = disc.sqrt();
        // Avoid cancellation: compute the larger-magnitude root directly and
        // recover the other from the determinant.
        let big = if mean >= T::zero() { mean + r } else { mean - r };
        let det = a * d - b * c;
        let small = if big != T::zero() { det / big } else { mean - r };
        [Complex::new(big, T::zero()), Complex::new(small, T::zero())]
    } else {
        let r = (-disc).sqrt();
        [Complex::new(mean, r), Complex::new(mean, -r)]
    }
}

fn hessenberg<T: Scalar>(a: &mut Matrix<T>) {
    let n = a.rows();
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: T = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        if alpha_sq.is_zero() {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= T::zero() {
            -alpha_sq.sqrt()
        } else {
            alpha_sq.sqrt()
        };
        let mut v: Vec<T> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm_sq: T = v.iter().map(|&x| x * x).sum();
        if vnorm_sq.is_zero() {
            continue;
        }
        let two = T::lit(2.0);
        // A <- H A
        for j in 0..n {
            let dot: T = v.iter().enumerate().map(|(i, &vi)| vi * a[(k + 1 + i, j)]).sum();
            let f = two * dot / vnorm_sq;
            for (i, &vi) in v.iter().enumerate() {
                a[(k + 1 + i, j)] -= f * vi;
            }
        }
        // A <- A H
        for i in 0..n {
            let dot: T = v.iter().enumerate().map(|(j, &vj)| a[(i, k + 1 + j)] * vj).sum();
            let f = two * dot / vnorm_sq;
            for (j, &vj) in v.iter().enumerate() {
                a[(i, k + 1 + j)] -= f * vj;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = T::zero();
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix by implicit double-shift QR.
fn francis_qr<T: Scalar>(h: &mut Matrix<T>, scale: T) -> Result<Vec<ComplexScalar<T>>> {
    let n = h.rows();
    // 1-based working copy keeps the index arithmetic of the classic algorithm.
    let mut a = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = h[(i, j)];
        }
    }
    let mut anorm = T::zero();
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let defl = T::lit(1e-12) * scale;
    let eps = T::epsilon();
    let budget = 100 * n;
    let mut total_sweeps = 0usize;

    let mut wr = vec![T::zero(); n + 1];
    let mut wi = vec![T::zero(); n + 1];
    let mut nn = n;
    let mut t = T::zero();
    let half = T::lit(0.5);

    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s.is_zero() {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= (eps * s).max(defl) {
                    a[l][l - 1] = T::zero();
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = T::zero();
                nn -= 1;
                break;
            }
            let mut y = a[nn - 1][nn - 1];
            let mut w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                let p = half * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= T::zero() {
                    let z = p + z.copysign(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = if z.is_zero() { x + z } else { x - w / z };
                    wi[nn - 1] = T::zero();
                    wi[nn] = T::zero();
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if total_sweeps >= budget {
                return Err(Error::Numerical(format!(
                    "QR iteration did not converge within {budget} sweeps"
                )));
            }
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }
            its += 1;
            total_sweeps += 1;

            let (mut p, mut q, mut r): (T, T, T);
            let mut m = nn - 2;
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
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
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[i][i - 2] = T::zero();
                if i != m + 2 {
                    a[i][i - 3] = T::zero();
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nn - 1 { a[k + 2][k - 1] } else { T::zero() };
                    x = p.abs() + q.abs() + r.abs();
                    if !x.is_zero() {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if !s.is_zero() {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = nn.min(k + 3);
                    for i in l..=mmin {
                        let mut pp = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            pp += z * a[i][k + 2];
                            a[i][k + 2] -= pp * r;
                        }
                        a[i][k + 1] -= pp * q;
                        a[i][k] -= pp;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    let out: Vec<_> = (1..=n).map(|i| Complex::new(wr[i], wi[i])).collect();
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    Ok(out)
}
