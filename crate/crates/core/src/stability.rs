//! Local stabilizability and the divergence radius of everywhere-divergent
//! bounded-input systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::format::g9;
use crate::linalg::{
    eigenvalues, induced_inf_norm, is_hurwitz, mat_exp, min_real_part, vec_norm_inf, vec_sub, ComplexScalar, Matrix,
    HURWITZ_TOL,
};
use crate::report::{CheckReport, Counterexample, Reason};
use crate::system::{segments_in, simulate, LinearSystem, PiecewiseConstantInput};
use crate::trimming::OpenBox;
use crate::{Error, Result, Scalar};

/// Tolerance on `‖A x_eq + B u_eq‖` for an equilibrium pair.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// Relative slack granted to the measured separation in [`verify_divergence`].
pub const DIVERGENCE_SLACK: f64 = 1e-6;

fn serialize_spectrum<S: Serializer, T: Scalar + Serialize>(
    eig: &[ComplexScalar<T>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(eig.len()))?;
    for z in eig {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// Stability facts about a plant and its feedback gain.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct StabilizabilityReport<T> {
    /// Whether `A + BC` is Hurwitz.
    pub hurwitz: bool,
    #[serde(serialize_with = "serialize_spectrum")]
    pub eigenvalues_open_loop: Vec<ComplexScalar<T>>,
    #[serde(serialize_with = "serialize_spectrum")]
    pub eigenvalues_closed_loop: Vec<ComplexScalar<T>>,
    /// Radius around the equilibrium on which the feedback stays admissible;
    /// absent when `A + BC` is not Hurwitz or the equilibrium is invalid.
    pub local_radius: Option<T>,
    /// Largest ∞-norm over the input box.
    pub input_bound: T,
    /// Present only when every eigenvalue of `A` has positive real part.
    pub divergence_radius: Option<T>,
}

impl<T: Scalar + Serialize> StabilizabilityReport<T> {
    pub fn to_text(&self) -> String {
        let spectrum = |eig: &[ComplexScalar<T>]| {
            eig.iter()
                .map(|z| format!("{}{:+}i", g9(z.re.as_f64()), z.im.as_f64()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let opt = |v: Option<T>| match v {
            Some(r) if r.is_infinite() => "inf".to_string(),
            Some(r) => g9(r.as_f64()),
            None => "none".to_string(),
        };
        format!(
            "hurwitz {}\neigenvalues_open_loop {}\neigenvalues_closed_loop {}\nlocal_radius {}\ninput_bound {}\ndivergence_radius {}\n",
            self.hurwitz,
            spectrum(&self.eigenvalues_open_loop),
            spectrum(&self.eigenvalues_closed_loop),
            opt(self.local_radius),
            g9(self.input_bound.as_f64()),
            opt(self.divergence_radius)
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Assembles the report for the equilibrium `(x_eq, u_eq)`.
pub fn stabilizability_report<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    x_eq: &[T],
    u_eq: &[T],
) -> Result<StabilizabilityReport<T>> {
    let m = sys.closed_loop(c)?;
    let input_bound = input_bound(sys.input_box())?;
    let divergence = match divergence_radius(sys.a(), sys.b(), input_bound) {
        Ok(r) => Some(r),
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    let local = match local_stabilizability_radius(sys.a(), sys.b(), c, sys.input_box(), x_eq, u_eq) {
        Ok(r) => Some(r),
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(StabilizabilityReport {
        hurwitz: is_hurwitz(&m, T::lit(HURWITZ_TOL))?,
        eigenvalues_open_loop: eigenvalues(sys.a())?,
        eigenvalues_closed_loop: eigenvalues(&m)?,
        local_radius: local,
        input_bound,
        divergence_radius: divergence,
    })
}

/// `dist∞(u_eq, ∂box) / ‖C‖`: for `‖y - x_eq‖ < r` the feedback input
/// `u_eq + C (y - x_eq)` stays in the box. `+∞` when `C = 0`.
pub fn local_stabilizability_radius<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    input_box: &OpenBox<T>,
    x_eq: &[T],
    u_eq: &[T],
) -> Result<T> {
    let n = a.rows();
    let m = b.cols();
    if x_eq.len() != n || u_eq.len() != m || c.rows() != m || c.cols() != n || input_box.dim() != m {
        return Err(Error::Dimension(
            "equilibrium, gain and input box must match the plant".into(),
        ));
    }
    let drift: Vec<T> = a
        .mul_vec(x_eq)
        .iter()
        .zip(b.mul_vec(u_eq))
        .map(|(&p, q)| p + q)
        .collect();
    if vec_norm_inf(&drift).as_f64() > EQUILIBRIUM_TOL {
        return Err(Error::Domain(format!(
            "(x_eq, u_eq) is not an equilibrium: ‖A x + B u‖ = {}",
            vec_norm_inf(&drift)
        )));
    }
    let (lo, hi) = match (input_box.lower(), input_box.upper()) {
        (Some(l), Some(h)) => (l, h),
        _ => return Err(Error::Domain("input box is empty".into())),
    };
    if !input_box.contains(u_eq)? {
        return Err(Error::Domain("equilibrium input is not inside the input box".into()));
    }
    let closed = a.try_add(&b.matmul(c)?)?;
    if !is_hurwitz(&closed, T::lit(HURWITZ_TOL))? {
        return Err(Error::Domain("A + BC is not Hurwitz".into()));
    }
    let margin = u_eq
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&u, (&l, &h))| (u - l).min(h - u))
        .fold(T::infinity(), T::min);
    let norm = induced_inf_norm(c);
    if norm == T::zero() {
        return Ok(T::infinity());
    }
    Ok(margin / norm)
}

/// Largest ∞-norm over the closure of the box: the outer maximum of
/// `max(|lo_d|, |hi_d|)`.
pub fn input_bound<T: Scalar>(input_box: &OpenBox<T>) -> Result<T> {
    match (input_box.lower(), input_box.upper()) {
        (Some(l), Some(h)) => Ok(l
            .iter()
            .zip(h)
            .map(|(&a, &b)| a.abs().max(b.abs()))
            .fold(T::zero(), T::max)),
        _ => Err(Error::Domain("input box is empty".into())),
    }
}

/// `4 ‖B‖ M / min Re λ(A)`: closer initial states than this cannot be
/// steered together by inputs bounded by `M`.
pub fn divergence_radius<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, m: T) -> Result<T> {
    if !(m > T::zero()) || !m.is_finite() {
        return Err(Error::Domain("input bound must be positive and finite".into()));
    }
    let lambda = min_real_part(a)?;
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!(
            "A is not everywhere divergent (smallest real part {lambda})"
        )));
    }
    Ok(T::lit(4.0) * induced_inf_norm(b) * m / lambda)
}

/// `2 M ‖B‖ ‖exp(A t)‖ / min Re λ(A)`, the separation lower bound at time `t`.
pub fn separation_bound<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, m: T, t: T) -> Result<T> {
    let lambda = min_real_part(a)?;
    if !(lambda > T::zero()) {
        return Err(Error::Domain("A is not everywhere divergent".into()));
    }
    Ok(T::lit(2.0) * m * induced_inf_norm(b) * induced_inf_norm(&mat_exp(a, t)?) / lambda)
}

/// Offset `y0 - x0` of length `1.05 r` along the sign pattern of the row of
/// `exp(A horizon)` that attains its norm. The separation bound compares
/// against `‖exp(A t)‖`, so offsets aligned with the dominant row are the
/// ones for which it can hold.
pub fn default_divergence_offset<T: Scalar>(sys: &LinearSystem<T>, horizon: T) -> Result<Vec<T>> {
    let r = divergence_radius(sys.a(), sys.b(), input_bound(sys.input_box())?)?;
    let e = mat_exp(sys.a(), horizon)?;
    let row = (0..e.rows())
        .max_by(|&i, &j| {
            let s = |k: usize| e.row(k).iter().map(|v| v.abs()).fold(T::zero(), |a, b| a + b);
            s(i).partial_cmp(&s(j)).unwrap()
        })
        .unwrap_or(0);
    let scale = r * T::lit(1.05);
    Ok(e.row(row)
        .iter()
        .map(|&v| if v < T::zero() { -scale } else { scale })
        .collect())
}

/// Random bounded inputs cannot bring `x0` and `y0` together: for `trials`
/// pairs of random piecewise-constant inputs (segment length `h` of the
/// system), the simulated separation dominates [`separation_bound`] at every
/// sample up to `horizon`. Trial `i` uses its own generator seeded from
/// `seed` and `i`.
#[allow(clippy::too_many_arguments)]
pub fn verify_divergence<T: Scalar>(
    sys: &LinearSystem<T>,
    x0: &[T],
    y0: &[T],
    horizon: T,
    trials: usize,
    seed: u64,
    dt: T,
) -> Result<CheckReport> {
    let m = input_bound(sys.input_box())?;
    let radius = divergence_radius(sys.a(), sys.b(), m)?;
    if x0.len() != sys.state_dim() || y0.len() != sys.state_dim() {
        return Err(Error::Dimension("initial states must match the plant".into()));
    }
    let gap0 = vec_norm_inf(&vec_sub(x0, y0));
    if !(gap0 > radius) {
        return Err(Error::Domain(format!(
            "initial separation {gap0} does not exceed the divergence radius {radius}"
        )));
    }
    let segments = segments_in(horizon.as_f64(), sys.h().as_f64())?;
    let (lo, hi) = (sys.input_box().lower().unwrap(), sys.input_box().upper().unwrap());
    let random_input = |rng: &mut ChaCha8Rng| {
        let values = (0..segments)
            .map(|_| {
                lo.iter()
                    .zip(hi)
                    .map(|(&l, &h)| loop {
                        let v = l + (h - l) * T::lit(rng.gen::<f64>());
                        if l < v && v < h {
                            break v;
                        }
                    })
                    .collect()
            })
            .collect();
        PiecewiseConstantInput::new(sys.h(), values)
    };

    // The bound only depends on time; tabulate it on the sampling grid.
    let probe = simulate(
        sys,
        x0,
        &PiecewiseConstantInput::constant(vec![T::zero(); sys.input_dim()], horizon, 1)?,
        horizon,
        dt,
    )?;
    let times = probe.times().to_vec();
    let bounds: Vec<T> = times
        .iter()
        .map(|&t| separation_bound(sys.a(), sys.b(), m, t))
        .collect::<Result<_>>()?;

    let outcomes: Vec<Result<Option<Counterexample>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let u = random_input(&mut rng)?;
            let v = random_input(&mut rng)?;
            let xs = simulate(sys, x0, &u, horizon, dt)?;
            let ys = simulate(sys, y0, &v, horizon, dt)?;
            for (k, (x, y)) in xs.states().iter().zip(ys.states()).enumerate() {
                let sep = vec_norm_inf(&vec_sub(x, y));
                let bound = bounds[k];
                if sep < bound - T::lit(DIVERGENCE_SLACK) * bound.max(T::one()) {
                    return Ok(Some(Counterexample {
                        reason: Reason::Separation,
                        pair: (format!("trial {i}"), format!("seed {seed}")),
                        transition: None,
                        detail: format!(
                            "time={} separation={} bound={}",
                            g9(times[k].as_f64()),
                            g9(sep.as_f64()),
                            g9(bound.as_f64())
                        ),
                    }));
                }
            }
            Ok(None)
        })
        .collect();

    let mut report = CheckReport::new("divergence");
    report.set_meta("divergence_radius", g9(radius.as_f64()));
    report.set_meta("input_bound", g9(m.as_f64()));
    report.set_meta("initial_separation", g9(gap0.as_f64()));
    report.set_meta("horizon", g9(horizon.as_f64()));
    report.set_meta("dt", g9(dt.as_f64()));
    report.set_meta("trials", trials);
    report.set_meta("seed", seed);
    report.stats_mut().pairs_checked = trials as u64;
    report.stats_mut().transitions_checked = (trials * times.len()) as u64;
    for outcome in outcomes {
        if let Some(cx) = outcome? {
            report.push(cx);
        }
    }
    Ok(report.finish())
}
