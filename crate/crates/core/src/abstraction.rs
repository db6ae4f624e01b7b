//! Parameter synthesis and the state-time quantized symbolic model.
//!
//! A model is a finite transition system over the `eta` lattice points of a
//! region. From every lattice point and every catalog input, the exact
//! successor after `tau` is rounded back to the lattice.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::format::{g9, join_g9};
use crate::linalg::{induced_inf_norm, is_hurwitz, mat_exp, max_real_part, Matrix, HURWITZ_TOL};
use crate::scalar::lattice_value;
use crate::system::{reach, InputGrid, LinearSystem, PiecewiseConstantInput};
use crate::trimming::{trim_box, OpenBox};
use crate::{Error, Result, Scalar};

/// Proximity `epsilon`, state quantization `eta`, time quantization `tau`,
/// input trimming `rho` and the stabilizing gain `C`.
#[derive(Clone, Debug)]
pub struct AbstractionParams<T> {
    epsilon: T,
    eta: T,
    tau: T,
    rho: T,
    c: Matrix<T>,
    closed_loop_norm: T,
    hurwitz: bool,
    strict_eta_half: bool,
}

impl<T: Scalar> AbstractionParams<T> {
    /// Validated parameters. Fails unless `0 < eta < epsilon` (or
    /// `eta < epsilon/2` with `strict_eta_half`), `A + BC` is Hurwitz and
    /// `epsilon * ‖exp((A+BC) tau)‖ < eta / 2`.
    pub fn new(
        sys: &LinearSystem<T>,
        c: &Matrix<T>,
        epsilon: T,
        eta: T,
        tau: T,
        strict_eta_half: bool,
    ) -> Result<Self> {
        let p = Self::uncertified(sys, c, epsilon, eta, tau)?;
        check_eta(epsilon, eta, strict_eta_half)?;
        if !p.hurwitz {
            return Err(Error::Domain("A + BC is not Hurwitz".into()));
        }
        if !p.certificate_holds() {
            return Err(Error::Domain(format!(
                "time quantization {tau} fails eps*||exp((A+BC)tau)|| < eta/2: {} >= {}",
                p.certificate_value(),
                p.certificate_target()
            )));
        }
        Ok(AbstractionParams { strict_eta_half, ..p })
    }

    /// Parameters that only satisfy the structural checks (positive values,
    /// matching dimensions). Used to run checks at a deliberately bad `tau`.
    pub fn uncertified(sys: &LinearSystem<T>, c: &Matrix<T>, epsilon: T, eta: T, tau: T) -> Result<Self> {
        sys.check_gain(c)?;
        for (name, v) in [("epsilon", epsilon), ("eta", eta), ("tau", tau)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let m = sys.closed_loop(c)?;
        let hurwitz = is_hurwitz(&m, T::lit(HURWITZ_TOL))?;
        let closed_loop_norm = induced_inf_norm(&mat_exp(&m, tau)?);
        Ok(AbstractionParams {
            epsilon,
            eta,
            tau,
            rho: compute_trim(c, epsilon)?,
            c: c.clone(),
            closed_loop_norm,
            hurwitz,
            strict_eta_half: false,
        })
    }

    /// Synthesizes `tau` with [`synth_tau`] and validates the result.
    pub fn synthesize(
        sys: &LinearSystem<T>,
        c: &Matrix<T>,
        epsilon: T,
        eta: T,
        tau_step: T,
        tau_max: Option<T>,
        strict_eta_half: bool,
    ) -> Result<Self> {
        check_eta(epsilon, eta, strict_eta_half)?;
        let tau = synth_tau(sys.a(), sys.b(), c, epsilon, eta, tau_step, tau_max)?;
        Self::new(sys, c, epsilon, eta, tau, strict_eta_half)
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn gain(&self) -> &Matrix<T> {
        &self.c
    }

    pub fn is_hurwitz(&self) -> bool {
        self.hurwitz
    }

    pub fn strict_eta_half(&self) -> bool {
        self.strict_eta_half
    }

    /// `‖exp((A+BC) tau)‖`.
    pub fn closed_loop_norm(&self) -> T {
        self.closed_loop_norm
    }

    /// `epsilon * ‖exp((A+BC) tau)‖`.
    pub fn certificate_value(&self) -> T {
        self.epsilon * self.closed_loop_norm
    }

    /// `eta / 2`.
    pub fn certificate_target(&self) -> T {
        self.eta / T::lit(2.0)
    }

    pub fn certificate_holds(&self) -> bool {
        self.certificate_value() < self.certificate_target()
    }

    /// All invariants hold: Hurwitz, eta below epsilon and the certificate.
    pub fn is_certified(&self) -> bool {
        self.hurwitz && check_eta(self.epsilon, self.eta, self.strict_eta_half).is_ok() && self.certificate_holds()
    }
}

fn check_eta<T: Scalar>(epsilon: T, eta: T, strict_half: bool) -> Result<()> {
    let bound = if strict_half { epsilon / T::lit(2.0) } else { epsilon };
    if !(eta > T::zero() && eta < bound) {
        let rule = if strict_half {
            "0 < eta < epsilon/2"
        } else {
            "0 < eta < epsilon"
        };
        return Err(Error::Domain(format!(
            "need {rule}, got eta = {eta}, epsilon = {epsilon}"
        )));
    }
    Ok(())
}

/// `‖C‖ * epsilon`.
pub fn compute_trim<T: Scalar>(c: &Matrix<T>, epsilon: T) -> Result<T> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(induced_inf_norm(c) * epsilon)
}

/// `100 / |largest real part of an eigenvalue of m|`.
pub fn default_tau_max<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    let alpha = max_real_part(m)?;
    if !(alpha < T::zero()) {
        return Err(Error::Domain("closed-loop matrix is not Hurwitz".into()));
    }
    Ok(T::lit(100.0) / alpha.abs())
}

fn check_synthesis_inputs<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    epsilon: T,
    eta: T,
    tau_step: T,
) -> Result<Matrix<T>> {
    check_eta(epsilon, eta, false)?;
    if !(tau_step > T::zero()) || !tau_step.is_finite() {
        return Err(Error::Domain(format!("tau step must be positive, got {tau_step}")));
    }
    let m = a.try_add(&b.matmul(c)?)?;
    if !is_hurwitz(&m, T::lit(HURWITZ_TOL))? {
        return Err(Error::Domain("A + BC is not Hurwitz".into()));
    }
    Ok(m)
}

fn grid_steps<T: Scalar>(tau_step: T, tau_max: T) -> usize {
    (tau_max / tau_step * (T::one() + T::lit(1e-12)))
        .floor()
        .to_usize()
        .unwrap_or(0)
}

/// Smallest `tau` on the grid `tau_step, 2 tau_step, ...` (up to `tau_max`)
/// with `epsilon * ‖exp((A+BC) tau)‖ < eta / 2`.
///
/// Candidates are screened with an accumulated product of one-step
/// exponentials and confirmed with a direct exponential at the candidate.
pub fn synth_tau<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    epsilon: T,
    eta: T,
    tau_step: T,
    tau_max: Option<T>,
) -> Result<T> {
    let m = check_synthesis_inputs(a, b, c, epsilon, eta, tau_step)?;
    let tau_max = match tau_max {
        Some(t) => t,
        None => default_tau_max(&m)?,
    };
    let target = eta / T::lit(2.0);
    let step = mat_exp(&m, tau_step)?;
    let mut phi = step.clone();
    let (mut best_tau, mut best_value) = (T::nan(), T::infinity());
    for k in 1..=grid_steps(tau_step, tau_max) {
        let tau = lattice_value(k as i64, tau_step);
        let screened = epsilon * induced_inf_norm(&phi);
        if screened < target * T::lit(1.0 + 1e-6) {
            let value = epsilon * induced_inf_norm(&mat_exp(&m, tau)?);
            if value < best_value {
                best_tau = tau;
                best_value = value;
            }
            if value < target {
                return Ok(tau);
            }
        } else if screened < best_value {
            best_tau = tau;
            best_value = screened;
        }
        phi = phi.matmul(&step)?;
    }
    Err(Error::Synthesis {
        tau_max: tau_max.as_f64(),
        best_tau: best_tau.as_f64(),
        best_value: best_value.as_f64(),
        target: target.as_f64(),
    })
}

/// Smallest grid `tau` for which the spectral estimate
/// `epsilon * exp(alpha tau)`, with `alpha` the largest real part of an
/// eigenvalue of `A + BC`, drops below `eta / 2`.
///
/// This ignores the transient growth of non-normal matrices, so the returned
/// value need not satisfy the certificate; it is reported for comparison.
pub fn spectral_tau<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    epsilon: T,
    eta: T,
    tau_step: T,
    tau_max: Option<T>,
) -> Result<T> {
    let m = check_synthesis_inputs(a, b, c, epsilon, eta, tau_step)?;
    let alpha = max_real_part(&m)?;
    let tau_max = match tau_max {
        Some(t) => t,
        None => default_tau_max(&m)?,
    };
    let target = eta / T::lit(2.0);
    for k in 1..=grid_steps(tau_step, tau_max) {
        let tau = lattice_value(k as i64, tau_step);
        if epsilon * (alpha * tau).exp() < target {
            return Ok(tau);
        }
    }
    let value = epsilon * (alpha * tau_max).exp();
    Err(Error::Synthesis {
        tau_max: tau_max.as_f64(),
        best_tau: tau_max.as_f64(),
        best_value: value.as_f64(),
        target: target.as_f64(),
    })
}

/// `epsilon * ‖exp((A+BC) tau)‖` for an arbitrary `tau`.
pub fn certificate_value<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, c: &Matrix<T>, epsilon: T, tau: T) -> Result<T> {
    let m = a.try_add(&b.matmul(c)?)?;
    Ok(epsilon * induced_inf_norm(&mat_exp(&m, tau)?))
}

/// Lattice indices of the grid point nearest to `x`; a coordinate exactly
/// half-way between two lattice points goes to the lower one.
pub fn quantize_index<T: Scalar>(x: &[T], eta: T) -> Vec<i64> {
    let half = T::lit(0.5);
    x.iter()
        .map(|&v| (v / eta - half).ceil().to_i64().expect("state within lattice range"))
        .collect()
}

/// Coordinates of a lattice point.
pub fn lattice_coords<T: Scalar>(k: &[i64], eta: T) -> Vec<T> {
    k.iter().map(|&i| lattice_value(i, eta)).collect()
}

/// Grid point of `eta * Z^n` within `eta / 2` of `x` (ties toward -inf).
pub fn quantize_state<T: Scalar>(x: &[T], eta: T) -> Result<Vec<T>> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state to quantize"));
    }
    Ok(lattice_coords(&quantize_index(x, eta), eta))
}

/// Closed box `[lower, upper]` of the state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> Region<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Dimension("region bounds must have equal positive length".into()));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("region bounds"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Domain("region needs lower <= upper".into()));
        }
        Ok(Region { lower, upper })
    }

    pub fn from_pairs(pairs: &[(T, T)]) -> Result<Self> {
        let (lower, upper) = pairs.iter().copied().unzip();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Lattice points of `eta * Z^n` inside the region (with a `1e-9`
    /// relative allowance so that bounds on the grid are included).
    pub fn lattice(&self, eta: T) -> Lattice {
        let slack = T::lit(1e-9);
        let kmin = self
            .lower
            .iter()
            .map(|&l| (l / eta - slack).ceil().to_i64().expect("region within lattice range"))
            .collect();
        let kmax = self
            .upper
            .iter()
            .map(|&u| (u / eta + slack).floor().to_i64().expect("region within lattice range"))
            .collect();
        Lattice { kmin, kmax }
    }
}

/// Rectangular block of lattice indices `kmin..=kmax`, enumerated in
/// lexicographic order (first coordinate most significant).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    kmin: Vec<i64>,
    kmax: Vec<i64>,
}

impl Lattice {
    pub fn dim(&self) -> usize {
        self.kmin.len()
    }

    pub fn len(&self) -> usize {
        self.kmin
            .iter()
            .zip(&self.kmax)
            .map(|(a, b)| if b >= a { (b - a + 1) as usize } else { 0 })
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for ((&v, &lo), &hi) in k.iter().zip(&self.kmin).zip(&self.kmax) {
            if v < lo || v > hi {
                return None;
            }
            idx = idx * (hi - lo + 1) as usize + (v - lo) as usize;
        }
        Some(idx)
    }

    pub fn point(&self, mut idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            let width = (self.kmax[d] - self.kmin[d] + 1) as usize;
            out[d] = self.kmin[d] + (idx % width) as i64;
            idx /= width;
        }
        out
    }
}

/// Knobs of the input catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    /// Number of constant pieces per input over `[0, tau]`.
    pub segments: usize,
    /// Largest admissible catalog; larger catalogs are a construction error.
    pub catalog_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            segments: 1,
            catalog_cap: 10_000,
        }
    }
}

/// Transition whose rounded successor fell outside the region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutOfRegion {
    pub state: usize,
    pub input: usize,
    pub successor: Vec<i64>,
}

/// Finite transition system over the `eta` lattice points of a region.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicModel<T> {
    eta: T,
    tau: T,
    rho: T,
    lattice: Lattice,
    catalog: Vec<PiecewiseConstantInput<T>>,
    edges: Vec<(usize, usize, usize)>,
    out_of_region: Vec<OutOfRegion>,
}

impl<T: Scalar> SymbolicModel<T> {
    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn state_count(&self) -> usize {
        self.lattice.len()
    }

    pub fn state_index(&self, i: usize) -> Vec<i64> {
        self.lattice.point(i)
    }

    pub fn state_coords(&self, i: usize) -> Vec<T> {
        lattice_coords(&self.lattice.point(i), self.eta)
    }

    /// Index of the state with the given lattice coordinates.
    pub fn find_state(&self, k: &[i64]) -> Option<usize> {
        self.lattice.index_of(k)
    }

    pub fn catalog(&self) -> &[PiecewiseConstantInput<T>] {
        &self.catalog
    }

    /// `(source, input, target)` triples sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    pub fn out_of_region(&self) -> &[OutOfRegion] {
        &self.out_of_region
    }

    /// Edges leaving `state`.
    pub fn edges_from(&self, state: usize) -> &[(usize, usize, usize)] {
        let lo = self.edges.partition_point(|e| e.0 < state);
        let hi = self.edges.partition_point(|e| e.0 <= state);
        &self.edges[lo..hi]
    }

    /// Distinct successors of `state` inside the region.
    pub fn successors(&self, state: usize) -> BTreeSet<usize> {
        self.edges_from(state).iter().map(|e| e.2).collect()
    }

    /// Line-oriented text export.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("eta={}\n", g9(self.eta.as_f64())));
        out.push_str(&format!("tau={}\n", g9(self.tau.as_f64())));
        out.push_str(&format!("rho={}\n", g9(self.rho.as_f64())));
        for i in 0..self.state_count() {
            let coords = join_g9(self.state_coords(i).iter().map(|v| v.as_f64()));
            out.push_str(&format!("state {i} {coords}\n"));
        }
        for (i, u) in self.catalog.iter().enumerate() {
            let values = join_g9(u.values().iter().flatten().map(|v| v.as_f64()));
            out.push_str(&format!("input {i} {} {values}\n", g9(u.segment_length().as_f64())));
        }
        for (s, i, d) in &self.edges {
            out.push_str(&format!("edge {s} {i} {d}\n"));
        }
        for o in &self.out_of_region {
            let coords = join_g9(lattice_coords(&o.successor, self.eta).iter().map(|v| v.as_f64()));
            out.push_str(&format!("outside {} {} {coords}\n", o.state, o.input));
        }
        out
    }

    /// Graph description with one `src -> dst [label]` line per edge.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph symbolic_model {\n");
        for i in 0..self.state_count() {
            let coords = join_g9(self.state_coords(i).iter().map(|v| v.as_f64()));
            out.push_str(&format!("  {i} [label=\"({})\"];\n", coords.replace(' ', ", ")));
        }
        for (s, i, d) in &self.edges {
            out.push_str(&format!("  {s} -> {d} [label=\"u{i}\"];\n"));
        }
        out.push_str("}\n");
        out
    }

    /// Keeps the catalog entries selected by `keep`, renumbering inputs and
    /// dropping the edges of removed ones.
    fn retain_inputs(&self, keep: impl Fn(&PiecewiseConstantInput<T>) -> bool) -> Self {
        let mut remap = vec![None; self.catalog.len()];
        let mut catalog = Vec::new();
        for (i, u) in self.catalog.iter().enumerate() {
            if keep(u) {
                remap[i] = Some(catalog.len());
                catalog.push(u.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(s, i, d)| remap[i].map(|j| (s, j, d)))
            .collect();
        let out_of_region = self
            .out_of_region
            .iter()
            .filter_map(|o| remap[o.input].map(|j| OutOfRegion { input: j, ..o.clone() }))
            .collect();
        SymbolicModel {
            catalog,
            edges,
            out_of_region,
            ..self.clone()
        }
    }
}

/// Inputs of duration `tau` made of `options.segments` equal constant
/// pieces, each piece a quantized input level inside `U` trimmed by `rho`.
/// Ordered lexicographically by value.
pub fn input_catalog<T: Scalar>(
    sys: &LinearSystem<T>,
    rho: T,
    tau: T,
    options: &BuildOptions,
) -> Result<Vec<PiecewiseConstantInput<T>>> {
    let trimmed = trim_box(sys.input_box(), rho)?;
    let grid = sys.quantized_inputs().restricted_to(&trimmed).ok_or_else(|| {
        Error::Construction(format!(
            "no quantized input level lies inside the input box trimmed by {rho}; \
             choose a smaller epsilon"
        ))
    })?;
    grid_catalog(&grid, tau, options)
}

/// All `options.segments`-piece sequences over the points of `grid`.
pub fn grid_catalog<T: Scalar>(
    grid: &InputGrid<T>,
    tau: T,
    options: &BuildOptions,
) -> Result<Vec<PiecewiseConstantInput<T>>> {
    if options.segments == 0 {
        return Err(Error::Domain("inputs need at least one segment".into()));
    }
    let points = grid.points();
    let size = (points.len() as f64).powi(options.segments as i32);
    if size > options.catalog_cap as f64 {
        return Err(Error::Construction(format!(
            "input catalog would hold {size} inputs, above the cap of {}",
            options.catalog_cap
        )));
    }
    let h = tau / T::from_usize(options.segments).unwrap();
    let mut sequences: Vec<Vec<Vec<T>>> = vec![Vec::new()];
    for _ in 0..options.segments {
        sequences = sequences
            .into_iter()
            .flat_map(|prefix| {
                points.iter().map(move |p| {
                    let mut s = prefix.clone();
                    s.push(p.clone());
                    s
                })
            })
            .collect();
    }
    sequences
        .into_iter()
        .map(|values| PiecewiseConstantInput::new(h, values))
        .collect()
}

/// The trimmed symbolic model: lattice points of `region`, catalog from
/// [`input_catalog`] at the trimming radius of `params`.
pub fn build_symbolic_model<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    params: &AbstractionParams<T>,
    region: &Region<T>,
    options: &BuildOptions,
) -> Result<SymbolicModel<T>> {
    if c != params.gain() {
        return Err(Error::Domain(
            "feedback gain differs from the one in the parameters".into(),
        ));
    }
    let fresh = AbstractionParams::new(
        sys,
        c,
        params.epsilon(),
        params.eta(),
        params.tau(),
        params.strict_eta_half(),
    )?;
    let catalog = input_catalog(sys, fresh.rho(), fresh.tau(), options)?;
    build_over_catalog(sys, region, fresh.eta(), fresh.tau(), fresh.rho(), catalog)
}

/// Symbolic model over an arbitrary catalog (no trimming, no certificate).
/// `rho` is only recorded. Every input must last exactly `tau`.
pub fn build_over_catalog<T: Scalar>(
    sys: &LinearSystem<T>,
    region: &Region<T>,
    eta: T,
    tau: T,
    rho: T,
    catalog: Vec<PiecewiseConstantInput<T>>,
) -> Result<SymbolicModel<T>> {
    let n = sys.state_dim();
    if region.dim() != n {
        return Err(Error::Dimension(format!(
            "region has dimension {}, state space {n}",
            region.dim()
        )));
    }
    if !(eta > T::zero()) {
        return Err(Error::Domain("eta must be positive".into()));
    }
    // Each input acts affinely: reach(x, u) = E x + w(u).
    let zero = vec![T::zero(); n];
    let mut offsets = Vec::with_capacity(catalog.len());
    let mut state_map: Option<Matrix<T>> = None;
    for u in &catalog {
        let tol = T::lit(1e-12) * tau;
        if (u.duration() - tau).abs() > tol {
            return Err(Error::Construction(format!(
                "catalog input lasts {} but the time quantization is {tau}",
                u.duration()
            )));
        }
        offsets.push(reach(sys, &zero, u, tau)?);
        if state_map.is_none() {
            let prop = sys.propagator(u.segment_length())?;
            let mut e = Matrix::identity(n);
            for _ in 0..u.segments() {
                e = prop.state_map().matmul(&e)?;
            }
            state_map = Some(e);
        }
    }
    let lattice = region.lattice(eta);
    let e = state_map.unwrap_or_else(|| Matrix::identity(n));
    let per_state: Vec<(Vec<(usize, usize, usize)>, Vec<OutOfRegion>)> = (0..lattice.len())
        .into_par_iter()
        .map(|s| {
            let x = lattice_coords(&lattice.point(s), eta);
            let ex = e.mul_vec(&x);
            let mut edges = Vec::new();
            let mut outside = Vec::new();
            for (i, w) in offsets.iter().enumerate() {
                let y: Vec<T> = ex.iter().zip(w).map(|(&p, &q)| p + q).collect();
                let k = quantize_index(&y, eta);
                match lattice.index_of(&k) {
                    Some(d) => edges.push((s, i, d)),
                    None => outside.push(OutOfRegion {
                        state: s,
                        input: i,
                        successor: k,
                    }),
                }
            }
            (edges, outside)
        })
        .collect();
    let mut edges = Vec::new();
    let mut out_of_region = Vec::new();
    for (e, o) in per_state {
        edges.extend(e);
        out_of_region.extend(o);
    }
    Ok(SymbolicModel {
        eta,
        tau,
        rho,
        lattice,
        catalog,
        edges,
        out_of_region,
    })
}

/// Keeps the catalog entries whose every value is a level of `grid` lying
/// inside `b` trimmed by `rho`.
pub fn restrict_to_quantized_inputs<T: Scalar>(
    model: &SymbolicModel<T>,
    grid: &InputGrid<T>,
    b: &OpenBox<T>,
    rho: T,
) -> Result<SymbolicModel<T>> {
    let trimmed = trim_box(b, rho)?;
    if grid.dim() != b.dim() {
        return Err(Error::Dimension("input grid and box dimensions differ".into()));
    }
    Ok(model.retain_inputs(|u| {
        u.values().iter().all(|v| {
            v.len() == grid.dim()
                && v.iter().enumerate().all(|(d, &x)| grid.is_level(d, x))
                && trimmed.contains(v).unwrap_or(false)
        })
    }))
}

/// Per state, keeps a greedy minimal set of input labels that still reaches
/// every successor of the state. Ties go to the lowest input index.
pub fn reduce_edges<T: Scalar>(model: &SymbolicModel<T>) -> SymbolicModel<T> {
    let mut edges = Vec::with_capacity(model.edges.len());
    for s in 0..model.state_count() {
        let from = model.edges_from(s);
        let mut uncovered: BTreeSet<usize> = from.iter().map(|e| e.2).collect();
        // Inputs in ascending order, each with the successors it reaches.
        let mut by_input: Vec<(usize, BTreeSet<usize>)> = Vec::new();
        for &(_, i, d) in from {
            match by_input.last_mut() {
                Some((j, set)) if *j == i => {
                    set.insert(d);
                }
                _ => by_input.push((i, BTreeSet::from([d]))),
            }
        }
        let mut chosen = BTreeSet::new();
        while !uncovered.is_empty() {
            let (best, _) = by_input
                .iter()
                .enumerate()
                .map(|(pos, (_, set))| (pos, set.intersection(&uncovered).count()))
                .fold((usize::MAX, 0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let (input, set) = &by_input[best];
            for d in set {
                uncovered.remove(d);
            }
            chosen.insert(*input);
        }
        edges.extend(from.iter().filter(|e| chosen.contains(&e.1)).copied());
    }
    SymbolicModel { edges, ..model.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec_norm_inf;
    use crate::system::InputGrid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

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

    // Bisection on the closed form 0.12 e^{-t}(1 + 2t) - 0.05, decreasing for t >= 1/2.
    fn jordan_tau_root() -> f64 {
        let f = |t: f64| 0.12 * (-t).exp() * (1.0 + 2.0 * t) - 0.05;
        let (mut lo, mut hi) = (0.5, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    #[test]
    fn synthesized_tau_is_first_grid_point_past_the_root() {
        let root = jordan_tau_root();
        assert!((root - 2.7456).abs() < 1e-3, "root {root}");
        let sys = jordan_plant();
        let tau = synth_tau(sys.a(), sys.b(), &gain(), 0.12, 0.1, 0.01, None).unwrap();
        let expected = (root / 0.01).ceil() * 0.01;
        assert_abs_diff_eq!(tau, expected, epsilon = 1e-12);
        assert_eq!(tau, 2.75);
        let v = certificate_value(sys.a(), sys.b(), &gain(), 0.12, tau).unwrap();
        assert!(v < 0.05);
        let before = certificate_value(sys.a(), sys.b(), &gain(), 0.12, tau - 0.01).unwrap();
        assert!(before >= 0.05);
    }

    #[test]
    fn synthesized_tau_for_scalar_decay() {
        let a = Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        let b = Matrix::zeros(2, 1);
        let c = Matrix::zeros(1, 2);
        let tau = synth_tau(&a, &b, &c, 0.1, 0.05, 0.01, None).unwrap();
        assert_eq!(tau, 1.39);
        assert!(4f64.ln() < tau && tau - 0.01 < 4f64.ln());
    }

    #[test]
    fn first_grid_point_when_eta_is_generous() {
        let a = Matrix::from_rows(&[[-100.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0]]).unwrap();
        let c = Matrix::from_rows(&[[0.0]]).unwrap();
        // 0.1 * e^{-1} = 0.0368 < 0.045
        let tau = synth_tau(&a, &b, &c, 0.1, 0.09, 0.01, None).unwrap();
        assert_eq!(tau, 0.01);
    }

    #[test]
    fn synthesis_errors() {
        let sys = jordan_plant();
        let err = synth_tau(sys.a(), sys.b(), &gain(), 0.12, 0.1, 0.01, Some(1.0)).unwrap_err();
        match err {
            Error::Synthesis {
                best_tau,
                best_value,
                target,
                ..
            } => {
                assert!(best_value >= target);
                // e^{-t}(1 + 2t) rises on [0, 1/2], so the smallest value up to 1 is at the first step.
                assert_eq!(best_tau, 0.01);
                assert_abs_diff_eq!(best_value, 0.12 * 1.02 * (-0.01f64).exp(), epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let zero = Matrix::zeros(1, 2);
        assert!(matches!(
            synth_tau(sys.a(), sys.b(), &zero, 0.12, 0.1, 0.01, None),
            Err(Error::Domain(_))
        ));
        assert!(synth_tau(sys.a(), sys.b(), &gain(), 0.12, 0.2, 0.01, None).is_err());
        assert!(synth_tau(sys.a(), sys.b(), &gain(), 0.12, 0.1, 0.0, None).is_err());
    }

    #[test]
    fn spectral_shortcut_is_optimistic_for_the_jordan_plant() {
        let sys = jordan_plant();
        let fast = spectral_tau(sys.a(), sys.b(), &gain(), 0.12, 0.1, 0.01, None).unwrap();
        assert_eq!(fast, 0.88);
        // tau = 1 fails the certificate under the induced norm.
        let v = certificate_value(sys.a(), sys.b(), &gain(), 0.12, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.36 / 1f64.exp(), epsilon = 1e-12);
        assert!(v > 0.05);
    }

    #[test]
    fn trim_radius() {
        assert_eq!(compute_trim(&gain(), 0.12).unwrap(), 0.48);
        assert_eq!(compute_trim(&Matrix::zeros(1, 2), 0.12).unwrap(), 0.0);
        let c = Matrix::from_rows(&[[1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert_eq!(compute_trim(&c, 0.5).unwrap(), 1.0);
        assert!(compute_trim(&c, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        let sys = jordan_plant();
        let p = AbstractionParams::new(&sys, &gain(), 0.12, 0.1, 2.75, false).unwrap();
        assert_eq!(p.rho(), 0.48);
        assert!(p.is_certified());
        assert!(AbstractionParams::new(&sys, &gain(), 0.12, 0.1, 1.0, false).is_err());
        assert!(AbstractionParams::new(&sys, &gain(), 0.12, 0.1, 2.75, true).is_err());
        assert!(AbstractionParams::new(&sys, &gain(), 0.12, 0.12, 2.75, false).is_err());
        let loose = AbstractionParams::uncertified(&sys, &gain(), 0.12, 0.1, 1.0).unwrap();
        assert!(!loose.is_certified());
        assert!(!loose.certificate_holds());
        let s = AbstractionParams::synthesize(&sys, &gain(), 0.12, 0.1, 0.01, None, false).unwrap();
        assert_eq!(s.tau(), 2.75);
        let strict = AbstractionParams::synthesize(&sys, &gain(), 0.12, 0.05, 0.01, None, true).unwrap();
        assert!(strict.strict_eta_half() && strict.is_certified());
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize_state(&[0.56, 1.36], 0.1).unwrap(), vec![0.6, 1.4]);
        assert_eq!(quantize_state(&[0.3, -0.7], 0.1).unwrap(), vec![0.3, -0.7]);
        assert_eq!(quantize_state(&[0.15], 0.1).unwrap(), vec![0.1]);
        assert_eq!(quantize_state(&[0.25], 0.5).unwrap(), vec![0.0]);
        assert_eq!(quantize_state(&[-0.25], 0.5).unwrap(), vec![-0.5]);
        assert!(quantize_state(&[0.1], 0.0).is_err());
    }

    #[test]
    fn lattice_enumeration() {
        let r = Region::from_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let l = r.lattice(0.1);
        assert_eq!(l.len(), 441);
        assert_eq!(l.point(0), vec![-10, -10]);
        assert_eq!(l.point(1), vec![-10, -9]);
        assert_eq!(l.point(440), vec![10, 10]);
        for i in [0, 17, 230, 440] {
            assert_eq!(l.index_of(&l.point(i)), Some(i));
        }
        assert_eq!(l.index_of(&[11, 0]), None);
        let empty = Region::from_pairs(&[(0.01, 0.02)]).unwrap();
        assert!(empty.lattice(0.1).is_empty());
        assert!(Region::from_pairs(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn jordan_edge_appears() {
        let sys = jordan_plant();
        let region = Region::from_pairs(&[(-1.0, 2.0), (-1.0, 2.0)]).unwrap();
        let u = PiecewiseConstantInput::constant(vec![1.1], 1.0, 1).unwrap();
        let model = build_over_catalog(&sys, &region, 0.1, 1.0, 0.48, vec![u]).unwrap();
        let src = model.find_state(&[2, -2]).unwrap();
        let dst = model.find_state(&[6, 14]).unwrap();
        assert!(model.edges().contains(&(src, 0, dst)));
    }

    #[test]
    fn frozen_dynamics_give_self_loops() {
        let sys = LinearSystem::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            OpenBox::from_pairs(&[(-1.0, 1.0)]).unwrap(),
            InputGrid::new(vec![vec![-0.5, 0.0, 0.5]]).unwrap(),
            0.1,
        )
        .unwrap();
        let region = Region::from_pairs(&[(0.0, 0.3), (0.0, 0.2)]).unwrap();
        let catalog = input_catalog(&sys, 0.0, 1.0, &BuildOptions::default()).unwrap();
        let model = build_over_catalog(&sys, &region, 0.1, 1.0, 0.0, catalog).unwrap();
        assert_eq!(model.edges().len(), 12 * 3);
        assert!(model.edges().iter().all(|e| e.0 == e.2));
    }

    #[test]
    fn origin_equilibrium_self_loop() {
        let sys = jordan_plant();
        let region = Region::from_pairs(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let u = PiecewiseConstantInput::constant(vec![0.0], 2.75, 1).unwrap();
        let model = build_over_catalog(&sys, &region, 0.1, 2.75, 0.48, vec![u]).unwrap();
        assert_eq!(model.state_count(), 1);
        assert_eq!(model.edges(), &[(0, 0, 0)]);
    }

    fn jordan_model() -> SymbolicModel<f64> {
        let sys = jordan_plant();
        let params = AbstractionParams::synthesize(&sys, &gain(), 0.12, 0.1, 0.01, None, false).unwrap();
        let region = Region::from_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        build_symbolic_model(&sys, &gain(), &params, &region, &BuildOptions::default()).unwrap()
    }

    #[test]
    fn built_model_is_sound_and_well_formed() {
        let sys = jordan_plant();
        let model = jordan_model();
        assert_eq!(model.state_count(), 441);
        assert_eq!(model.catalog().len(), 91);
        assert_eq!(model.catalog()[0].values(), &[vec![-4.5]]);
        assert_eq!(model.edges().len() + model.out_of_region().len(), 441 * 91);
        for &(s, i, d) in model.edges() {
            let y = reach(&sys, &model.state_coords(s), &model.catalog()[i], model.tau()).unwrap();
            let g = model.state_coords(d);
            let gap = vec_norm_inf(&crate::linalg::vec_sub(&y, &g));
            assert!(gap <= 0.05 + 1e-9, "gap {gap}");
        }
        for i in 0..model.state_count() {
            for (c, k) in model.state_coords(i).iter().zip(model.state_index(i)) {
                assert!((c / 0.1 - k as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rebuild_is_identical() {
        let a = jordan_model();
        let b = jordan_model();
        assert_eq!(a, b);
        assert_eq!(a.export_text(), b.export_text());
    }

    #[test]
    fn build_rejects_uncertified_params_and_empty_catalogs() {
        let sys = jordan_plant();
        let region = Region::from_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let bad = AbstractionParams::uncertified(&sys, &gain(), 0.12, 0.1, 1.0).unwrap();
        assert!(build_symbolic_model(&sys, &gain(), &bad, &region, &BuildOptions::default()).is_err());
        let err = input_catalog(&sys, 5.0, 2.75, &BuildOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
        let capped = BuildOptions {
            segments: 3,
            catalog_cap: 10_000,
        };
        assert!(matches!(
            input_catalog(&sys, 0.48, 2.75, &capped),
            Err(Error::Construction(_))
        ));
        let two = BuildOptions {
            segments: 2,
            catalog_cap: 10_000,
        };
        let cat = input_catalog(&sys, 0.48, 2.75, &two).unwrap();
        assert_eq!(cat.len(), 91 * 91);
        assert_eq!(cat[1].values(), &[vec![-4.5], vec![-4.4]]);
    }

    #[test]
    fn restriction_to_quantized_inputs() {
        let sys = jordan_plant();
        let model = jordan_model();
        let same = restrict_to_quantized_inputs(&model, sys.quantized_inputs(), sys.input_box(), 0.48).unwrap();
        assert_eq!(same, model);
        let none = restrict_to_quantized_inputs(&model, sys.quantized_inputs(), sys.input_box(), 5.0).unwrap();
        assert!(none.edges().is_empty() && none.catalog().is_empty());
        let narrower = restrict_to_quantized_inputs(&model, sys.quantized_inputs(), sys.input_box(), 1.0).unwrap();
        assert_eq!(narrower.catalog().len(), 79);
        assert!(narrower.edges().iter().all(|e| e.1 < 79));

        // From an untrimmed catalog the 0.48 restriction keeps -4.5..4.5.
        let region = Region::from_pairs(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let full = input_catalog(&sys, 0.0, 2.75, &BuildOptions::default()).unwrap();
        let untrimmed = build_over_catalog(&sys, &region, 0.1, 2.75, 0.0, full).unwrap();
        let r = restrict_to_quantized_inputs(&untrimmed, sys.quantized_inputs(), sys.input_box(), 0.48).unwrap();
        let kept: Vec<f64> = r.catalog().iter().map(|u| u.values()[0][0]).collect();
        assert_eq!(kept.len(), 91);
        assert_eq!(kept[0], -4.5);
        assert_eq!(kept[90], 4.5);
    }

    fn hand_model(edges: Vec<(usize, usize, usize)>, inputs: usize) -> SymbolicModel<f64> {
        let catalog = (0..inputs)
            .map(|i| PiecewiseConstantInput::constant(vec![i as f64], 1.0, 1).unwrap())
            .collect();
        SymbolicModel {
            eta: 1.0,
            tau: 1.0,
            rho: 0.0,
            lattice: Lattice {
                kmin: vec![0],
                kmax: vec![3],
            },
            catalog,
            edges,
            out_of_region: Vec::new(),
        }
    }

    #[test]
    fn greedy_edge_reduction() {
        let m = hand_model(vec![(0, 0, 1), (0, 1, 1), (0, 2, 2)], 3);
        assert_eq!(reduce_edges(&m).edges(), &[(0, 0, 1), (0, 2, 2)]);
        let same = hand_model(vec![(1, 0, 3), (1, 1, 3), (1, 2, 3)], 3);
        assert_eq!(reduce_edges(&same).edges(), &[(1, 0, 3)]);
        let distinct = hand_model(vec![(2, 0, 0), (2, 1, 1), (2, 2, 3)], 3);
        assert_eq!(reduce_edges(&distinct).edges(), distinct.edges());
    }

    #[test]
    fn reduction_preserves_successor_sets_on_the_built_model() {
        let model = jordan_model();
        let reduced = reduce_edges(&model);
        assert!(reduced.edges().len() <= model.edges().len());
        for s in 0..model.state_count() {
            assert_eq!(model.successors(s), reduced.successors(s));
        }
    }

    #[test]
    fn text_export_layout() {
        let sys = jordan_plant();
        let region = Region::from_pairs(&[(0.0, 0.1), (0.0, 0.0)]).unwrap();
        let u = PiecewiseConstantInput::constant(vec![0.0], 2.75, 1).unwrap();
        let model = build_over_catalog(&sys, &region, 0.1, 2.75, 0.48, vec![u]).unwrap();
        let text = model.export_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..3], &["eta=0.1", "tau=2.75", "rho=0.48"]);
        assert_eq!(lines[3], "state 0 0 0");
        assert_eq!(lines[4], "state 1 0.1 0");
        assert_eq!(lines[5], "input 0 2.75 0");
        assert_eq!(lines[6], "edge 0 0 0");
        assert!(text.contains("outside 1 0 "));
        let dot = model.export_dot();
        assert!(dot.contains("  0 -> 0 [label=\"u0\"];"));
    }

    proptest! {
        #[test]
        fn quantization_is_within_half_a_cell(x in prop::collection::vec(-50.0f64..50.0, 1..4), eta in 0.01f64..2.0) {
            let g = quantize_state(&x, eta).unwrap();
            for (a, b) in x.iter().zip(&g) {
                prop_assert!((a - b).abs() <= eta / 2.0 + 1e-9);
            }
            prop_assert_eq!(quantize_state(&g, eta).unwrap(), g);
        }

        #[test]
        fn lattice_index_roundtrip(lo in -5i64..5, w in 0i64..6, lo2 in -5i64..5, w2 in 0i64..6, pick in 0usize..1000) {
            let l = Lattice { kmin: vec![lo, lo2], kmax: vec![lo + w, lo2 + w2] };
            let i = pick % l.len();
            prop_assert_eq!(l.index_of(&l.point(i)), Some(i));
        }
    }
}
