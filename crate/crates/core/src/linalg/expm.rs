use super::Matrix;
use crate::{Result, Scalar};

// Degree-13 diagonal Padé coefficients of exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest norm for which the [13/13] approximant meets double-precision
// backward error without scaling.
const THETA13: f64 = 5.371920351148152;

/// `exp(m * t)` by scaling and squaring around a degree-13 Padé approximant.
///
/// `t` may be negative.
pub fn mat_exp<T: Scalar>(m: &Matrix<T>, t: T) -> Result<Matrix<T>> {
    m.require_square("matrix exponential argument")?;
    let a = m.scale(t);
    let norm = a.norm_inf();
    if !norm.is_finite() {
        return Err(crate::Error::NonFinite("matrix exponential argument"));
    }
    let squarings = if norm.as_f64() > THETA13 {
        (norm.as_f64() / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a.scale(T::lit(2f64.powi(-squarings)));
    let mut r = pade13(&a)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn pade13<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    let b: Vec<T> = PADE13.iter().map(|&c| T::lit(c)).collect();
    let ident = Matrix::<T>::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let lin = |c6: T, c4: T, c2: T, c0: Option<T>| {
        let mut m = &(&a6.scale(c6) + &a4.scale(c4)) + &a2.scale(c2);
        if let Some(c0) = c0 {
            m = &m + &ident.scale(c0);
        }
        m
    };

    let u_inner = &(&a6 * &lin(b[13], b[11], b[9], None)) + &lin(b[7], b[5], b[3], Some(b[1]));
    let u = a * &u_inner;
    let v = &(&a6 * &lin(b[12], b[10], b[8], None)) + &lin(b[6], b[4], b[2], Some(b[0]));

    let denom = &v - &u;
    let numer = &v + &u;
    denom.solve(&numer)
}
