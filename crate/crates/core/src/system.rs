//! The plant: linear dynamics driven by piecewise-constant inputs, exact
//! segment-wise reachability, and supervisory feedback simulation.

use crate::format::g9;
use crate::linalg::{mat_exp, vec_norm_inf, vec_sub, Matrix};
use crate::scalar::lattice_value;
use crate::trimming::OpenBox;
use crate::{BoxScalar, Error, Result, Scalar};

/// Relative tolerance used when deciding whether a horizon is a whole number
/// of segments.
const ALIGN_TOL: f64 = 1e-12;

/// Relative tolerance (in units of the step) for locating segment
/// boundaries inside a sampling step.
const BREAK_TOL: f64 = 1e-9;

/// Finite per-dimension sets of admissible input levels.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrid<T> {
    levels: Vec<Vec<T>>,
}

impl<T: Scalar> InputGrid<T> {
    pub fn new(levels: Vec<Vec<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Dimension("input grid needs at least one dimension".into()));
        }
        for (d, lv) in levels.iter().enumerate() {
            if lv.is_empty() {
                return Err(Error::Domain(format!("input grid dimension {d} has no levels")));
            }
            if lv.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("input grid levels"));
            }
            if lv.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain(format!(
                    "input grid levels in dimension {d} must be strictly increasing"
                )));
            }
        }
        Ok(InputGrid { levels })
    }

    /// All levels `offset + k*step` lying strictly inside `b`, per dimension.
    ///
    /// When `1/step` is an integer the levels are computed as `k / (1/step)`,
    /// which yields the correctly rounded decimal (e.g. `-4.9` rather than
    /// `-49 * 0.1`).
    pub fn uniform(b: &OpenBox<T>, step: T, offset: T) -> Result<Self> {
        if !(step > T::zero()) || !step.is_finite() || !offset.is_finite() {
            return Err(Error::Domain("input grid step must be positive and finite".into()));
        }
        let (lower, upper) = match (b.lower(), b.upper()) {
            (Some(l), Some(u)) => (l, u),
            _ => return Err(Error::Domain("cannot lay an input grid over an empty box".into())),
        };
        let level = |k: i64| offset + lattice_value(k, step);
        let mut levels = Vec::with_capacity(lower.len());
        for (&lo, &hi) in lower.iter().zip(upper) {
            let mut kmin = ((lo - offset) / step).ceil().to_i64().unwrap_or(i64::MAX);
            let mut kmax = ((hi - offset) / step).floor().to_i64().unwrap_or(i64::MIN);
            while level(kmin) <= lo {
                kmin += 1;
            }
            while level(kmin - 1) > lo {
                kmin -= 1;
            }
            while level(kmax) >= hi {
                kmax -= 1;
            }
            while level(kmax + 1) < hi {
                kmax += 1;
            }
            levels.push((kmin..=kmax).map(level).collect());
        }
        Self::new(levels)
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self, d: usize) -> &[T] {
        &self.levels[d]
    }

    pub fn all_levels(&self) -> &[Vec<T>] {
        &self.levels
    }

    /// Nearest level in dimension `d`; exact midpoints go to the lower level.
    pub fn nearest(&self, d: usize, v: T) -> T {
        let lv = &self.levels[d];
        let i = lv.partition_point(|&l| l < v);
        if i == 0 {
            return lv[0];
        }
        if i == lv.len() {
            return lv[i - 1];
        }
        let (lo, hi) = (lv[i - 1], lv[i]);
        if hi - v < v - lo {
            hi
        } else {
            lo
        }
    }

    pub fn nearest_point(&self, v: &[T]) -> Vec<T> {
        v.iter().enumerate().map(|(d, &x)| self.nearest(d, x)).collect()
    }

    /// True when `v` coincides with a level of dimension `d` up to rounding.
    pub fn is_level(&self, d: usize, v: T) -> bool {
        let tol = T::lit(1e-9) * v.abs().max(T::one());
        (self.nearest(d, v) - v).abs() <= tol
    }

    /// Levels lying strictly inside `b`; `None` when some dimension is left
    /// without levels or the box is empty.
    pub fn restricted_to(&self, b: &OpenBox<T>) -> Option<InputGrid<T>> {
        let (lower, upper) = (b.lower()?, b.upper()?);
        let mut levels = Vec::with_capacity(self.dim());
        for (d, lv) in self.levels.iter().enumerate() {
            let kept: Vec<T> = lv.iter().copied().filter(|&v| lower[d] < v && v < upper[d]).collect();
            if kept.is_empty() {
                return None;
            }
            levels.push(kept);
        }
        Some(InputGrid { levels })
    }

    /// Cartesian product of the levels in lexicographic order.
    pub fn points(&self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = vec![Vec::new()];
        for lv in &self.levels {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    lv.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn point_count(&self) -> usize {
        self.levels.iter().map(Vec::len).product()
    }
}

/// Input trajectory that holds `values[k]` on `[k*h, (k+1)*h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstantInput<T> {
    h: T,
    values: Vec<Vec<T>>,
}

impl<T: BoxScalar> PiecewiseConstantInput<T> {
    pub fn new(h: T, values: Vec<Vec<T>>) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite_bound() {
            return Err(Error::Domain("segment length must be positive and finite".into()));
        }
        let dim = match values.first() {
            Some(v) if !v.is_empty() => v.len(),
            _ => return Err(Error::Domain("input trajectory needs at least one segment".into())),
        };
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("input segments have differing dimensions".into()));
        }
        if values.iter().flatten().any(|x| !x.is_finite_bound()) {
            return Err(Error::NonFinite("input trajectory values"));
        }
        Ok(PiecewiseConstantInput { h, values })
    }

    /// `value` held for `segments` segments of length `h`.
    pub fn constant(value: Vec<T>, h: T, segments: usize) -> Result<Self> {
        Self::new(h, vec![value; segments])
    }

    pub fn segment_length(&self) -> T {
        self.h.clone()
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }
}

impl<T: Scalar> PiecewiseConstantInput<T> {
    pub fn duration(&self) -> T {
        self.h * T::from_usize(self.values.len()).expect("segment count fits scalar")
    }

    /// Index of the segment active at time `t` (right-continuous, clamped to
    /// the last segment at and beyond the end).
    pub fn segment_index(&self, t: T) -> usize {
        let k = (t / self.h + T::lit(BREAK_TOL)).floor();
        if k <= T::zero() {
            0
        } else {
            k.to_usize().unwrap_or(usize::MAX).min(self.values.len() - 1)
        }
    }

    pub fn value_at(&self, t: T) -> &[T] {
        &self.values[self.segment_index(t)]
    }
}

/// `x <- e x + g v`, the exact flow of `x' = Ax + Bv` over one segment.
#[derive(Clone, Debug)]
pub struct Propagator<T> {
    e: Matrix<T>,
    g: Matrix<T>,
}

impl<T: Scalar> Propagator<T> {
    pub fn new(a: &Matrix<T>, b: &Matrix<T>, h: T) -> Result<Self> {
        let (e, g) = discretize(a, b, h)?;
        Ok(Propagator { e, g })
    }

    pub fn state_map(&self) -> &Matrix<T> {
        &self.e
    }

    pub fn input_map(&self) -> &Matrix<T> {
        &self.g
    }

    pub fn step(&self, x: &[T], v: &[T]) -> Vec<T> {
        let ex = self.e.mul_vec(x);
        let gv = self.g.mul_vec(v);
        ex.into_iter().zip(gv).map(|(p, q)| p + q).collect()
    }
}

/// `(exp(Ah), ∫_0^h exp(As) ds B)` read off one exponential of the augmented
/// matrix `[[A, B], [0, 0]]`. Works for singular `A`.
pub fn discretize<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, h: T) -> Result<(Matrix<T>, Matrix<T>)> {
    a.require_square("state matrix")?;
    let (n, m) = (a.rows(), b.cols());
    if b.rows() != n {
        return Err(Error::Dimension(format!("B has {} rows, A is {n}x{n}", b.rows())));
    }
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, a);
    aug.set_block(0, n, b);
    let ex = mat_exp(&aug, h)?;
    Ok((ex.block(0, 0, n, n), ex.block(0, n, n, m)))
}

/// Linear control system `x' = Ax + Bu` with an open input box, a finite
/// grid of quantized input levels and a nominal segment length `h`.
#[derive(Clone, Debug)]
pub struct LinearSystem<T> {
    a: Matrix<T>,
    b: Matrix<T>,
    input_box: OpenBox<T>,
    quantized_inputs: InputGrid<T>,
    h: T,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn new(
        a: Matrix<T>,
        b: Matrix<T>,
        input_box: OpenBox<T>,
        quantized_inputs: InputGrid<T>,
        h: T,
    ) -> Result<Self> {
        a.require_square("state matrix A")?;
        if b.rows() != a.rows() {
            return Err(Error::Dimension(format!(
                "B has {} rows but A is {}x{}",
                b.rows(),
                a.rows(),
                a.rows()
            )));
        }
        if input_box.is_empty() {
            return Err(Error::Domain("input box must be non-empty".into()));
        }
        if input_box.dim() != b.cols() || quantized_inputs.dim() != b.cols() {
            return Err(Error::Dimension(format!(
                "B has {} columns, input box has dimension {}, input grid has dimension {}",
                b.cols(),
                input_box.dim(),
                quantized_inputs.dim()
            )));
        }
        let (lower, upper) = (input_box.lower().unwrap(), input_box.upper().unwrap());
        for (d, lv) in quantized_inputs.all_levels().iter().enumerate() {
            if lv.iter().any(|&v| !(lower[d] < v && v < upper[d])) {
                return Err(Error::Domain(format!(
                    "quantized input levels in dimension {d} must lie inside the input box"
                )));
            }
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::Domain("segment length h must be positive".into()));
        }
        Ok(LinearSystem {
            a,
            b,
            input_box,
            quantized_inputs,
            h,
        })
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn input_box(&self) -> &OpenBox<T> {
        &self.input_box
    }

    pub fn quantized_inputs(&self) -> &InputGrid<T> {
        &self.quantized_inputs
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// Checks that `c` is an `m x n` gain for this system.
    pub fn check_gain(&self, c: &Matrix<T>) -> Result<()> {
        if c.rows() != self.input_dim() || c.cols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "feedback gain must be {}x{}, got {}x{}",
                self.input_dim(),
                self.state_dim(),
                c.rows(),
                c.cols()
            )));
        }
        Ok(())
    }

    /// `A + BC`.
    pub fn closed_loop(&self, c: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_gain(c)?;
        self.a.try_add(&self.b.matmul(c)?)
    }

    pub fn propagator(&self, h: T) -> Result<Propagator<T>> {
        Propagator::new(&self.a, &self.b, h)
    }
}

/// Number of whole segments of length `h` in `tau`, or an alignment error.
pub fn segments_in(tau: f64, h: f64) -> Result<usize> {
    let k = (tau / h).round();
    if k < 1.0 || (k * h - tau).abs() > ALIGN_TOL * tau.abs().max(h) {
        return Err(Error::Alignment { tau, h });
    }
    Ok(k as usize)
}

fn check_horizon<T: Scalar>(u: &PiecewiseConstantInput<T>, tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {tau}")));
    }
    let available = u.duration();
    if tau > available * (T::one() + T::lit(ALIGN_TOL)) {
        return Err(Error::Coverage {
            requested: tau.as_f64(),
            available: available.as_f64(),
        });
    }
    Ok(())
}

fn check_vec<T>(v: &[T], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{what} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// State reached from `x0` after `tau` under `u`, computed segment by segment
/// with the exact discretization.
pub fn reach<T: Scalar>(sys: &LinearSystem<T>, x0: &[T], u: &PiecewiseConstantInput<T>, tau: T) -> Result<Vec<T>> {
    check_vec(x0, sys.state_dim(), "initial state")?;
    check_vec(u.values()[0].as_slice(), sys.input_dim(), "input value")?;
    check_horizon(u, tau)?;
    let k = segments_in(tau.as_f64(), u.segment_length().as_f64())?;
    let prop = sys.propagator(u.segment_length())?;
    let mut x = x0.to_vec();
    for v in &u.values()[..k] {
        x = prop.step(&x, v);
    }
    Ok(x)
}

/// Sampled trajectory: times, states and the inputs applied at those times.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTrace<T> {
    times: Vec<T>,
    states: Vec<Vec<T>>,
    inputs: Vec<Vec<T>>,
}

impl<T: Scalar> TrajectoryTrace<T> {
    pub fn new(times: Vec<T>, states: Vec<Vec<T>>, inputs: Vec<Vec<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != inputs.len() {
            return Err(Error::Dimension(
                "trace columns must have equal, positive length".into(),
            ));
        }
        if times[0] != T::zero() || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("trace times must start at 0 and increase".into()));
        }
        Ok(TrajectoryTrace { times, states, inputs })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<T>] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trace is non-empty")
    }

    /// CSV with header `t,x1..xn,u1..um` and `%.9g` values.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.inputs[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            let row: Vec<String> = std::iter::once(t).chain(x).chain(u).map(|v| g9(v.as_f64())).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Advances an affine system `z' = Fz + Gv` through sampling steps of length
/// `dt`, splitting a step wherever a segment boundary of the input falls
/// inside it.
struct Stepper<T> {
    f: Matrix<T>,
    g: Matrix<T>,
    dt: T,
    full: Propagator<T>,
}

impl<T: Scalar> Stepper<T> {
    fn new(f: Matrix<T>, g: Matrix<T>, dt: T) -> Result<Self> {
        let full = Propagator::new(&f, &g, dt)?;
        Ok(Stepper { f, g, dt, full })
    }

    fn advance(&self, z: &[T], u: &PiecewiseConstantInput<T>, t0: T) -> Result<Vec<T>> {
        let tol = T::lit(BREAK_TOL) * self.dt;
        let t1 = t0 + self.dt;
        let h = u.segment_length();
        let mut z = z.to_vec();
        let mut cursor = t0;
        while cursor < t1 - tol {
            let seg = u.segment_index(cursor);
            let seg_end = T::from_usize(seg + 1).expect("segment index fits scalar") * h;
            let end = if seg + 1 >= u.segments() || seg_end >= t1 - tol {
                t1
            } else {
                seg_end
            };
            let len = end - cursor;
            let v = &u.values()[seg];
            z = if (len - self.dt).abs() <= tol {
                self.full.step(&z, v)
            } else {
                Propagator::new(&self.f, &self.g, len)?.step(&z, v)
            };
            cursor = end;
        }
        Ok(z)
    }
}

fn sample_count<T: Scalar>(tau: T, dt: T, h: T) -> Result<usize> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::Domain(format!("sampling step must be positive, got {dt}")));
    }
    if dt > h * (T::one() + T::lit(ALIGN_TOL)) {
        return Err(Error::Domain(format!("sampling step {dt} exceeds segment length {h}")));
    }
    let k = (tau / dt).round();
    if k < T::one() || (k * dt - tau).abs() > T::lit(BREAK_TOL) * tau {
        return Err(Error::Alignment {
            tau: tau.as_f64(),
            h: dt.as_f64(),
        });
    }
    Ok(k.to_usize().expect("sample count fits usize"))
}

/// Sampled open-loop trajectory from `x0` under `u`.
pub fn simulate<T: Scalar>(
    sys: &LinearSystem<T>,
    x0: &[T],
    u: &PiecewiseConstantInput<T>,
    tau: T,
    dt: T,
) -> Result<TrajectoryTrace<T>> {
    check_vec(x0, sys.state_dim(), "initial state")?;
    check_horizon(u, tau)?;
    let steps = sample_count(tau, dt, u.segment_length())?;
    let stepper = Stepper::new(sys.a.clone(), sys.b.clone(), dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    for k in 0..=steps {
        let t = T::from_usize(k).unwrap() * dt;
        times.push(t);
        states.push(x.clone());
        inputs.push(u.value_at(t).to_vec());
        if k < steps {
            x = stepper.advance(&x, u, t)?;
        }
    }
    TrajectoryTrace::new(times, states, inputs)
}

/// Reference trajectory `x` under `u` together with the plant `y` tracking
/// it through the supervisory input `u + C(y - x)`.
#[derive(Clone, Debug)]
pub struct SupervisoryRun<T> {
    /// `x` with the reference input `u`.
    pub reference: TrajectoryTrace<T>,
    /// `y` with the supervisory input actually applied.
    pub plant: TrajectoryTrace<T>,
}

impl<T: Scalar> SupervisoryRun<T> {
    pub fn supervisory_inputs(&self) -> &[Vec<T>] {
        self.plant.inputs()
    }

    /// Largest `‖u_sup(t) - u(t)‖` over the samples.
    pub fn max_displacement(&self) -> T {
        self.plant
            .inputs()
            .iter()
            .zip(self.reference.inputs())
            .map(|(s, u)| vec_norm_inf(&vec_sub(s, u)))
            .fold(T::zero(), T::max)
    }

    /// `y(t) - x(t)` at every sample.
    pub fn errors(&self) -> Vec<Vec<T>> {
        self.plant
            .states()
            .iter()
            .zip(self.reference.states())
            .map(|(y, x)| vec_sub(y, x))
            .collect()
    }
}

/// Co-integrates `x' = Ax + Bu` and `y' = Ay + B(u + C(y - x))` from
/// `(x0, y0)` on a `dt` sampling grid.
pub fn simulate_supervisory<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    y0: &[T],
    x0: &[T],
    u: &PiecewiseConstantInput<T>,
    tau: T,
    dt: T,
) -> Result<SupervisoryRun<T>> {
    let n = sys.state_dim();
    check_vec(x0, n, "reference state")?;
    check_vec(y0, n, "plant state")?;
    check_horizon(u, tau)?;
    let steps = sample_count(tau, dt, u.segment_length())?;
    let bc = sys.b.matmul(c)?;
    let mut f = Matrix::zeros(2 * n, 2 * n);
    f.set_block(0, 0, &sys.a);
    f.set_block(n, 0, &bc.scale(-T::one()));
    f.set_block(n, n, &sys.closed_loop(c)?);
    let mut g = Matrix::zeros(2 * n, sys.input_dim());
    g.set_block(0, 0, &sys.b);
    g.set_block(n, 0, &sys.b);
    let stepper = Stepper::new(f, g, dt)?;

    let mut times = Vec::with_capacity(steps + 1);
    let (mut xs, mut ys) = (Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1));
    let (mut us, mut sups) = (Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1));
    let mut z: Vec<T> = x0.iter().chain(y0).copied().collect();
    for k in 0..=steps {
        let t = T::from_usize(k).unwrap() * dt;
        let (x, y) = z.split_at(n);
        let v = u.value_at(t);
        let correction = c.mul_vec(&vec_sub(y, x));
        times.push(t);
        xs.push(x.to_vec());
        ys.push(y.to_vec());
        us.push(v.to_vec());
        sups.push(v.iter().zip(correction).map(|(&a, b)| a + b).collect());
        if k < steps {
            z = stepper.advance(&z, u, t)?;
        }
    }
    Ok(SupervisoryRun {
        reference: TrajectoryTrace::new(times.clone(), xs, us)?,
        plant: TrajectoryTrace::new(times, ys, sups)?,
    })
}

/// Outcome of monitoring supervisory inputs against the input box.
#[derive(Clone, Debug, PartialEq)]
pub enum Membership<T> {
    Inside,
    /// First sample whose supervisory input left the box (boundary included).
    Exits {
        time: T,
        value: Vec<T>,
    },
}

impl<T> Membership<T> {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside)
    }
}

/// Precomputed `C exp((A+BC) t_k)` on a sampling grid, so that supervisory
/// inputs `u(t_k) + C e(t_k)` can be checked for many initial errors without
/// integrating.
#[derive(Clone, Debug)]
pub struct SupervisoryProbe<T> {
    times: Vec<T>,
    gains: Vec<Matrix<T>>,
    n: usize,
}

impl<T: Scalar> SupervisoryProbe<T> {
    pub fn new(sys: &LinearSystem<T>, c: &Matrix<T>, tau: T, dt: T) -> Result<Self> {
        let m = sys.closed_loop(c)?;
        let steps = sample_count(tau, dt, dt)?;
        let mut times = Vec::with_capacity(steps + 1);
        let mut gains = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = T::from_usize(k).unwrap() * dt;
            times.push(t);
            gains.push(c.matmul(&mat_exp(&m, t)?)?);
        }
        Ok(SupervisoryProbe {
            times,
            gains,
            n: sys.state_dim(),
        })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn horizon(&self) -> T {
        *self.times.last().unwrap()
    }

    /// `C e(t_k)` for sample `k`, where `e(0) = e0`.
    pub fn correction_at(&self, k: usize, e0: &[T]) -> Vec<T> {
        self.gains[k].mul_vec(e0)
    }

    /// `C e(t_k)` for every sample, where `e(0) = e0`.
    pub fn corrections(&self, e0: &[T]) -> Vec<Vec<T>> {
        self.gains.iter().map(|g| g.mul_vec(e0)).collect()
    }

    /// Largest `‖C e(t_k)‖` over the samples.
    pub fn max_displacement(&self, e0: &[T]) -> T {
        self.gains
            .iter()
            .map(|g| vec_norm_inf(&g.mul_vec(e0)))
            .fold(T::zero(), T::max)
    }

    pub fn check(
        &self,
        input_box: &OpenBox<T>,
        y0: &[T],
        x0: &[T],
        u: &PiecewiseConstantInput<T>,
    ) -> Result<Membership<T>> {
        check_vec(x0, self.n, "reference state")?;
        check_vec(y0, self.n, "plant state")?;
        self.check_corrections(input_box, &self.corrections(&vec_sub(y0, x0)), u)
    }

    /// Same as [`check`](Self::check) with precomputed
    /// [`corrections`](Self::corrections), for reuse across many inputs.
    pub fn check_corrections(
        &self,
        input_box: &OpenBox<T>,
        corrections: &[Vec<T>],
        u: &PiecewiseConstantInput<T>,
    ) -> Result<Membership<T>> {
        check_horizon(u, self.horizon())?;
        if corrections.len() != self.times.len() {
            return Err(Error::Dimension("one correction per sample is required".into()));
        }
        for (t, corr) in self.times.iter().zip(corrections) {
            let value: Vec<T> = u.value_at(*t).iter().zip(corr).map(|(&a, &b)| a + b).collect();
            if !input_box.contains(&value)? {
                return Ok(Membership::Exits { time: *t, value });
            }
        }
        Ok(Membership::Inside)
    }
}

/// Whether every sampled supervisory input `u(t) + C(y(t) - x(t))` stays in
/// the system's input box.
pub fn supervisory_in_bounds<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    y0: &[T],
    x0: &[T],
    u: &PiecewiseConstantInput<T>,
    tau: T,
    dt: T,
) -> Result<Membership<T>> {
    if dt > u.segment_length() * (T::one() + T::lit(ALIGN_TOL)) {
        return Err(Error::Domain(format!(
            "sampling step {dt} exceeds segment length {}",
            u.segment_length()
        )));
    }
    SupervisoryProbe::new(sys, c, tau, dt)?.check(sys.input_box(), y0, x0, u)
}

/// Piecewise-constant input on segments of length `h` whose value on
/// `[k h, (k+1) h)` is the grid point nearest to the traced input at `k h`.
pub fn quantize_feedback<T: Scalar>(
    trace: &TrajectoryTrace<T>,
    grid: &InputGrid<T>,
    h: T,
) -> Result<PiecewiseConstantInput<T>> {
    check_vec(trace.inputs()[0].as_slice(), grid.dim(), "traced input")?;
    if !(h > T::zero()) {
        return Err(Error::Domain("segment length must be positive".into()));
    }
    let end = *trace.times().last().unwrap();
    let segments = (end / h).round().to_usize().unwrap_or(0).max(1);
    let tol = T::lit(BREAK_TOL) * h;
    let values = (0..segments)
        .map(|k| {
            let t = T::from_usize(k).unwrap() * h;
            let idx = trace.times().partition_point(|&s| s < t - tol).min(trace.len() - 1);
            grid.nearest_point(&trace.inputs()[idx])
        })
        .collect();
    PiecewiseConstantInput::new(h, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn jordan_plant() -> LinearSystem<f64> {
        let a = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let ubox = OpenBox::from_pairs(&[(-5.0, 5.0)]).unwrap();
        let grid = InputGrid::uniform(&ubox, 0.1, 0.0).unwrap();
        LinearSystem::new(a, b, ubox, grid, 0.01).unwrap()
    }

    fn gain() -> Matrix<f64> {
        Matrix::from_rows(&[[0.0, -4.0]]).unwrap()
    }

    fn constant(v: f64, segments: usize) -> PiecewiseConstantInput<f64> {
        PiecewiseConstantInput::constant(vec![v], 0.01, segments).unwrap()
    }

    // Classical RK4 on x' = Ax + Bu, used as an independent oracle.
    fn rk4(sys: &LinearSystem<f64>, x0: &[f64], u: &PiecewiseConstantInput<f64>, tau: f64, dt: f64) -> Vec<f64> {
        let f = |x: &[f64], v: &[f64]| -> Vec<f64> {
            let ax = sys.a().mul_vec(x);
            let bv = sys.b().mul_vec(v);
            ax.iter().zip(bv).map(|(p, q)| p + q).collect()
        };
        let steps = (tau / dt).round() as usize;
        let mut x = x0.to_vec();
        for k in 0..steps {
            let v = u.value_at(k as f64 * dt).to_vec();
            let add = |x: &[f64], d: &[f64], s: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + s * b).collect() };
            let k1 = f(&x, &v);
            let k2 = f(&add(&x, &k1, dt / 2.0), &v);
            let k3 = f(&add(&x, &k2, dt / 2.0), &v);
            let k4 = f(&add(&x, &k3, dt), &v);
            x = (0..x.len())
                .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
        }
        x
    }

    #[test]
    fn uniform_grid_levels() {
        let g = jordan_plant().quantized_inputs().clone();
        let lv = g.levels(0);
        assert_eq!(lv.len(), 99);
        assert_eq!(lv[0], -4.9);
        assert_eq!(lv[98], 4.9);
        assert_eq!(lv[49], 0.0);
        assert_eq!(lv[60], 1.1);
        let trimmed = g
            .restricted_to(&OpenBox::from_pairs(&[(-4.52, 4.52)]).unwrap())
            .unwrap();
        assert_eq!(trimmed.levels(0).len(), 91);
        assert_eq!(trimmed.levels(0)[0], -4.5);
        let offset = InputGrid::uniform(&OpenBox::from_pairs(&[(0.0, 1.0)]).unwrap(), 0.25, 0.125).unwrap();
        assert_eq!(offset.levels(0), &[0.125, 0.375, 0.625, 0.875]);
        // Levels exactly on the bounds are excluded.
        let edge = InputGrid::uniform(&OpenBox::from_pairs(&[(-1.0, 1.0)]).unwrap(), 0.5, 0.0).unwrap();
        assert_eq!(edge.levels(0), &[-0.5, 0.0, 0.5]);
    }

    #[test]
    fn nearest_level_ties_go_down() {
        let g = InputGrid::new(vec![vec![0.0, 0.5, 1.0]]).unwrap();
        assert_eq!(g.nearest(0, 0.25), 0.0);
        assert_eq!(g.nearest(0, 0.26), 0.5);
        assert_eq!(g.nearest(0, 0.75), 0.5);
        assert_eq!(g.nearest(0, 0.5), 0.5);
        assert_eq!(g.nearest(0, -3.0), 0.0);
        assert_eq!(g.nearest(0, 7.0), 1.0);
        assert!(g.is_level(0, 0.5 + 1e-12));
        assert!(!g.is_level(0, 0.51));
        assert!(InputGrid::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(InputGrid::<f64>::new(vec![vec![]]).is_err());
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let g = InputGrid::new(vec![vec![0.0, 1.0], vec![5.0, 6.0, 7.0]]).unwrap();
        let p = g.points();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0.0, 5.0]);
        assert_eq!(p[1], vec![0.0, 6.0]);
        assert_eq!(p[3], vec![1.0, 5.0]);
    }

    #[test]
    fn system_invariants_enforced() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let ubox = OpenBox::from_pairs(&[(-5.0, 5.0)]).unwrap();
        let outside = InputGrid::new(vec![vec![0.0, 5.0]]).unwrap();
        assert!(LinearSystem::new(a.clone(), b.clone(), ubox.clone(), outside, 0.01).is_err());
        let grid = InputGrid::new(vec![vec![0.0]]).unwrap();
        assert!(LinearSystem::new(a.clone(), b.clone(), ubox.clone(), grid.clone(), 0.0).is_err());
        let b3 = Matrix::from_rows(&[[0.0], [1.0], [1.0]]).unwrap();
        assert!(matches!(
            LinearSystem::new(a, b3, ubox, grid, 0.01),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn value_at_uses_right_continuous_segments() {
        let u = PiecewiseConstantInput::new(0.01, vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(u.value_at(0.0), &[1.0]);
        assert_eq!(u.value_at(0.0099), &[1.0]);
        assert_eq!(u.value_at(0.01), &[2.0]);
        assert_eq!(u.value_at(0.03), &[3.0]);
        assert_eq!(u.value_at(10.0), &[3.0]);
        assert_abs_diff_eq!(u.duration(), 0.03, epsilon = 1e-15);
    }

    #[test]
    fn jordan_open_loop_reach() {
        let x = reach(&jordan_plant(), &[0.2, -0.2], &constant(1.1, 100), 1.0).unwrap();
        assert_abs_diff_eq!(x[0], 0.56, epsilon = 5e-3);
        assert_abs_diff_eq!(x[1], 1.36, epsilon = 5e-3);
    }

    #[test]
    fn reach_matches_closed_form_and_rk4() {
        let sys = jordan_plant();
        // x(t) = exp(At)(x0 - x_eq) + x_eq with x_eq = (u, 0) for constant u.
        let u = 1.1;
        let x0 = [0.2, -0.2];
        let e = mat_exp(sys.a(), 1.0).unwrap().mul_vec(&[x0[0] - u, x0[1]]);
        let exact = [e[0] + u, e[1]];
        let x = reach(&sys, &x0, &constant(u, 100), 1.0).unwrap();
        assert_abs_diff_eq!(x[0], exact[0], epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], exact[1], epsilon = 1e-12);
        let varying =
            PiecewiseConstantInput::new(0.01, (0..100).map(|k| vec![((k as f64) * 0.37).sin() * 3.0]).collect())
                .unwrap();
        let x = reach(&sys, &x0, &varying, 1.0).unwrap();
        let oracle = rk4(&sys, &x0, &varying, 1.0, 1e-4);
        assert_abs_diff_eq!(x[0], oracle[0], epsilon = 1e-8);
        assert_abs_diff_eq!(x[1], oracle[1], epsilon = 1e-8);
    }

    #[test]
    fn reach_trivial_cases() {
        let sys = jordan_plant();
        // Equilibrium: A x + B u = 0 for x = (u, 0).
        let x = reach(&sys, &[0.7, 0.0], &constant(0.7, 50), 0.5).unwrap();
        assert_abs_diff_eq!(x[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-12);

        let integ = LinearSystem::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            OpenBox::from_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            InputGrid::new(vec![vec![0.0], vec![0.0]]).unwrap(),
            0.1,
        )
        .unwrap();
        let u = PiecewiseConstantInput::constant(vec![0.3, -0.2], 0.1, 20).unwrap();
        let x = reach(&integ, &[0.0, 0.0], &u, 2.0).unwrap();
        assert_abs_diff_eq!(x[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -0.4, epsilon = 1e-12);
    }

    #[test]
    fn reach_errors() {
        let sys = jordan_plant();
        assert!(matches!(
            reach(&sys, &[0.0, 0.0], &constant(1.0, 10), 1.0),
            Err(Error::Coverage { .. })
        ));
        assert!(matches!(
            reach(&sys, &[0.0, 0.0], &constant(1.0, 100), 0.555),
            Err(Error::Alignment { .. })
        ));
        assert!(matches!(
            reach(&sys, &[0.0], &constant(1.0, 100), 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(reach(&sys, &[0.0, 0.0], &constant(1.0, 100), 0.0).is_err());
    }

    #[test]
    fn jordan_supervisory_run() {
        let sys = jordan_plant();
        let run = simulate_supervisory(
            &sys,
            &gain(),
            &[0.23, -0.24],
            &[0.2, -0.2],
            &constant(1.1, 100),
            1.0,
            1e-3,
        )
        .unwrap();
        let z = run.plant.final_state();
        assert_abs_diff_eq!(z[0], 0.56, epsilon = 5e-3);
        assert_abs_diff_eq!(z[1], 1.35, epsilon = 5e-3);
        let x = run.reference.final_state();
        let open = reach(&sys, &[0.2, -0.2], &constant(1.1, 100), 1.0).unwrap();
        assert_abs_diff_eq!(x[0], open[0], epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], open[1], epsilon = 1e-12);
        assert!(run.max_displacement() <= 4.0 * 0.04 + 1e-9);
    }

    #[test]
    fn error_follows_closed_loop_exponential() {
        let sys = jordan_plant();
        let c = gain();
        let m = sys.closed_loop(&c).unwrap();
        let e0 = [0.12, 0.12];
        let x0 = [0.3, -0.1];
        let y0 = [x0[0] + e0[0], x0[1] + e0[1]];
        let u =
            PiecewiseConstantInput::new(0.01, (0..300).map(|k| vec![(k as f64 * 0.1).cos() * 4.0]).collect()).unwrap();
        let run = simulate_supervisory(&sys, &c, &y0, &x0, &u, 3.0, 1e-3).unwrap();
        for (t, e) in run.plant.times().iter().zip(run.errors()) {
            let expected = mat_exp(&m, *t).unwrap().mul_vec(&e0);
            let diff = vec_norm_inf(&vec_sub(&e, &expected));
            assert!(diff <= 1e-6 * (1.0 + 0.12), "t={t} diff={diff}");
        }
        for (s, (u_ref, e)) in run
            .supervisory_inputs()
            .iter()
            .zip(run.reference.inputs().iter().zip(run.errors()))
        {
            let expected = u_ref[0] + c.mul_vec(&e)[0];
            assert_abs_diff_eq!(s[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_error_supervisory_is_reference() {
        let sys = jordan_plant();
        let u = constant(-2.0, 50);
        let run = simulate_supervisory(&sys, &gain(), &[0.1, 0.1], &[0.1, 0.1], &u, 0.5, 1e-3).unwrap();
        // Both halves of the augmented flow round slightly differently.
        for e in run.errors() {
            assert!(vec_norm_inf(&e) <= 1e-12);
        }
        assert!(run.max_displacement() <= 1e-11);
        let first = &run.supervisory_inputs()[0];
        assert_eq!(first, &run.reference.inputs()[0]);
    }

    #[test]
    fn breakpoints_inside_a_step_are_honoured() {
        // h = 0.015 is not a multiple of dt = 0.01, so steps straddle segment ends.
        let sys = jordan_plant();
        let u = PiecewiseConstantInput::new(
            0.015,
            (0..40).map(|k| vec![if k % 2 == 0 { 2.0 } else { -1.0 }]).collect(),
        )
        .unwrap();
        let tr = simulate(&sys, &[0.0, 0.0], &u, 0.6, 0.01).unwrap();
        let exact = reach(&sys, &[0.0, 0.0], &u, 0.6).unwrap();
        assert_abs_diff_eq!(tr.final_state()[0], exact[0], epsilon = 1e-12);
        assert_abs_diff_eq!(tr.final_state()[1], exact[1], epsilon = 1e-12);
    }

    #[test]
    fn supervisory_bounds_checks() {
        let sys = jordan_plant();
        let c = gain();
        let inside =
            supervisory_in_bounds(&sys, &c, &[0.32, -0.08], &[0.2, -0.2], &constant(4.5, 100), 1.0, 1e-3).unwrap();
        assert!(inside.is_inside());
        let same = supervisory_in_bounds(&sys, &c, &[1.0, 1.0], &[1.0, 1.0], &constant(4.9, 100), 1.0, 1e-3).unwrap();
        assert!(same.is_inside());
        // C e(0) = -0.48 pushes 4.9 towards -inf initially; the other sign exits.
        let exits =
            supervisory_in_bounds(&sys, &c, &[0.0, -0.12], &[0.0, 0.0], &constant(4.9, 100), 1.0, 1e-3).unwrap();
        assert!(matches!(exits, Membership::Exits { time, .. } if time == 0.0));
    }

    #[test]
    fn corner_error_with_untrimmed_input_exits() {
        let sys = jordan_plant();
        let c = gain();
        let u = constant(4.9, 100);
        let verdict = supervisory_in_bounds(&sys, &c, &[0.12, 0.12], &[0.0, 0.0], &u, 1.0, 1e-3).unwrap();
        // Fine sweep oracle: C e(t) = -4 e2(t) with e2(t) = e^{-t}(-0.12 t + 0.12 (1 - t)).
        let first = (0..=10_000)
            .map(|k| k as f64 * 1e-4)
            .find(|t| 4.9 - 4.0 * (-t).exp() * (0.12 - 0.24 * t) >= 5.0)
            .expect("oracle predicts an exit");
        match verdict {
            Membership::Exits { time, value } => {
                assert!(value[0] >= 5.0);
                assert!((time - first).abs() <= 1e-3 + 1e-12, "time={time} oracle={first}");
            }
            Membership::Inside => panic!("expected an exit"),
        }
    }

    #[test]
    fn boundary_value_counts_as_exit() {
        let sys = jordan_plant();
        let c = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let u = PiecewiseConstantInput::new(0.01, vec![vec![4.9]; 100]).unwrap();
        let mut values = u.values().to_vec();
        values[50] = vec![5.0];
        let u = PiecewiseConstantInput::new(0.01, values).unwrap();
        let v = supervisory_in_bounds(&sys, &c, &[0.0, 0.0], &[0.0, 0.0], &u, 1.0, 1e-3).unwrap();
        assert!(matches!(v, Membership::Exits { time, .. } if (time - 0.5).abs() < 1e-12));
    }

    #[test]
    fn quantized_feedback_lands_near_the_symbolic_successor() {
        let sys = jordan_plant();
        let run = simulate_supervisory(
            &sys,
            &gain(),
            &[0.23, -0.24],
            &[0.2, -0.2],
            &constant(1.1, 100),
            1.0,
            1e-3,
        )
        .unwrap();
        let q = quantize_feedback(&run.plant, sys.quantized_inputs(), 0.01).unwrap();
        assert_eq!(q.segments(), 100);
        assert!(q.values().iter().all(|v| sys.quantized_inputs().is_level(0, v[0])));
        let z2 = reach(&sys, &[0.23, -0.24], &q, 1.0).unwrap();
        let gap = vec_norm_inf(&vec_sub(&z2, &[0.6, 1.4]));
        assert!(gap < 0.12, "gap {gap}");
        let disp = q.values().iter().map(|v| (v[0] - 1.1).abs()).fold(0.0, f64::max);
        assert!(disp < 0.48);
    }

    #[test]
    fn quantize_feedback_on_grid_values() {
        let grid = InputGrid::new(vec![vec![-1.0, 0.0, 1.0]]).unwrap();
        let trace = TrajectoryTrace::new(
            vec![0.0, 0.5, 1.0, 1.5, 2.0],
            vec![vec![0.0]; 5],
            vec![vec![1.0], vec![0.2], vec![-0.5], vec![0.9], vec![0.0]],
        )
        .unwrap();
        let q = quantize_feedback(&trace, &grid, 1.0).unwrap();
        assert_eq!(q.values(), &[vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn csv_export() {
        let tr = TrajectoryTrace::new(
            vec![0.0, 0.5],
            vec![vec![1.0, 2.0], vec![1.0 / 3.0, 2.0]],
            vec![vec![1.1], vec![1.1]],
        )
        .unwrap();
        assert_eq!(tr.to_csv(), "t,x1,x2,u1\n0,1,2,1.1\n0.5,0.333333333,2,1.1\n");
        assert!(TrajectoryTrace::new(vec![0.0, 0.0], vec![vec![0.0]; 2], vec![vec![0.0]; 2]).is_err());
    }

    #[test]
    fn discretization_handles_singular_a() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let (e, g) = discretize(&a, &b, 0.5).unwrap();
        assert_abs_diff_eq!(e[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 0)], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], 0.5, epsilon = 1e-15);
    }
}
