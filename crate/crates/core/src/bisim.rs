//! Finite metric transition systems, approximate (bi)simulation checkers and
//! the sampled verifiers that tie a plant to its symbolic model.
//!
//! All checkers are read-only over immutable models. Pairs are checked in
//! parallel and the resulting reports are sorted before they are returned.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::{
    build_over_catalog, build_symbolic_model, compute_trim, grid_catalog, input_catalog, lattice_coords,
    quantize_index, AbstractionParams, BuildOptions, Lattice, Region, SymbolicModel,
};
use crate::format::g9;
use crate::linalg::{induced_inf_norm, mat_exp, vec_norm_inf, vec_sub, Matrix};
use crate::report::{CheckReport, Counterexample, Reason};
use crate::system::{
    reach, segments_in, simulate_supervisory, LinearSystem, Membership, PiecewiseConstantInput, SupervisoryProbe,
};
use crate::trimming::{trajectory_in_trimmed_set, trim_box, OpenBox};
use crate::{Error, Result, Scalar};

/// Absolute allowance added to every `distance <= epsilon` test, so that
/// pairs exactly `epsilon` apart are not rejected by rounding.
pub const PROXIMITY_SLACK: f64 = 1e-9;

/// Finite transition system with real-valued outputs compared in L∞.
///
/// Every catalog input carries its value trajectory, which is what trimming
/// inspects.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMts<T> {
    outputs: Vec<Vec<T>>,
    catalog: Vec<PiecewiseConstantInput<T>>,
    transitions: Vec<(usize, usize, usize)>,
}

impl<T: Scalar> FiniteMts<T> {
    /// Transitions are `(source, input, target)`; duplicates are removed.
    pub fn new(
        outputs: Vec<Vec<T>>,
        catalog: Vec<PiecewiseConstantInput<T>>,
        mut transitions: Vec<(usize, usize, usize)>,
    ) -> Result<Self> {
        let k = outputs.first().map(Vec::len).unwrap_or(0);
        if outputs.iter().any(|o| o.len() != k) {
            return Err(Error::Dimension("outputs must share one dimension".into()));
        }
        if outputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state outputs"));
        }
        let n = outputs.len();
        if let Some(bad) = transitions
            .iter()
            .find(|t| t.0 >= n || t.2 >= n || t.1 >= catalog.len())
        {
            return Err(Error::Domain(format!(
                "transition {bad:?} references a missing state or input"
            )));
        }
        transitions.sort_unstable();
        transitions.dedup();
        Ok(FiniteMts {
            outputs,
            catalog,
            transitions,
        })
    }

    /// States, catalog and in-region edges of a symbolic model; outputs are
    /// the lattice coordinates.
    pub fn from_model(model: &SymbolicModel<T>) -> Self {
        let outputs = (0..model.state_count()).map(|i| model.state_coords(i)).collect();
        FiniteMts {
            outputs,
            catalog: model.catalog().to_vec(),
            transitions: model.edges().to_vec(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map(Vec::len).unwrap_or(0)
    }

    pub fn outputs(&self) -> &[Vec<T>] {
        &self.outputs
    }

    pub fn output(&self, s: usize) -> &[T] {
        &self.outputs[s]
    }

    pub fn catalog(&self) -> &[PiecewiseConstantInput<T>] {
        &self.catalog
    }

    pub fn transitions(&self) -> &[(usize, usize, usize)] {
        &self.transitions
    }

    pub fn transitions_from(&self, s: usize) -> &[(usize, usize, usize)] {
        let lo = self.transitions.partition_point(|t| t.0 < s);
        let hi = self.transitions.partition_point(|t| t.0 <= s);
        &self.transitions[lo..hi]
    }
}

/// Drops the catalog entries outside the `rho`-trimmed input set and the
/// transitions they label. States are untouched.
pub fn trim_model<T: Scalar>(t: &FiniteMts<T>, b: &OpenBox<T>, rho: T) -> Result<FiniteMts<T>> {
    let mut remap = vec![None; t.catalog.len()];
    let mut catalog = Vec::new();
    for (i, u) in t.catalog.iter().enumerate() {
        if trajectory_in_trimmed_set(u, b, rho)? {
            remap[i] = Some(catalog.len());
            catalog.push(u.clone());
        }
    }
    let transitions = t
        .transitions
        .iter()
        .filter_map(|&(s, i, d)| remap[i].map(|j| (s, j, d)))
        .collect();
    Ok(FiniteMts {
        outputs: t.outputs.clone(),
        catalog,
        transitions,
    })
}

/// Set of `(left state, right state)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Relation {
    pairs: BTreeSet<(usize, usize)>,
}

impl Relation {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Relation {
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| (i, i)))
    }

    /// All pairs whose outputs are within `epsilon` (plus
    /// [`PROXIMITY_SLACK`]), found by spatial hashing of `right`.
    pub fn proximity<T: Scalar>(left: &[Vec<T>], right: &[Vec<T>], epsilon: T) -> Self {
        let reach = epsilon.as_f64() + PROXIMITY_SLACK;
        let cell = reach.max(1e-6);
        let key = |v: &[T]| -> Vec<i64> { v.iter().map(|x| (x.as_f64() / cell).floor() as i64).collect() };
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (j, v) in right.iter().enumerate() {
            buckets.entry(key(v)).or_default().push(j);
        }
        let dim = left.first().map(Vec::len).unwrap_or(0);
        let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
            .map(|mut c| {
                (0..dim)
                    .map(|_| {
                        let o = (c % 3) as i64 - 1;
                        c /= 3;
                        o
                    })
                    .collect()
            })
            .collect();
        let mut pairs = BTreeSet::new();
        for (i, v) in left.iter().enumerate() {
            let base = key(v);
            for off in &offsets {
                let k: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(js) = buckets.get(&k) {
                    for &j in js {
                        if distance(v, &right[j]).as_f64() <= reach {
                            pairs.insert((i, j));
                        }
                    }
                }
            }
        }
        Relation { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&(a, b))
    }

    pub fn insert(&mut self, a: usize, b: usize) {
        self.pairs.insert((a, b));
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.pairs.iter().map(|&(a, b)| (b, a)))
    }
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    vec_norm_inf(&vec_sub(a, b))
}

fn within<T: Scalar>(d: T, epsilon: T) -> bool {
    d.as_f64() <= epsilon.as_f64() + PROXIMITY_SLACK
}

fn fmt_point<T: Scalar>(p: &[T]) -> String {
    let parts: Vec<String> = p.iter().map(|v| g9(v.as_f64())).collect();
    format!("({})", parts.join(","))
}

/// Checks that `r` is an `epsilon`-approximate simulation of `t1` by `t2`:
/// related outputs are within `epsilon`, and every transition of `t1` from a
/// related state is matched by some transition of `t2` (under any input)
/// into a related pair.
pub fn is_approx_simulation<T: Scalar>(
    r: &Relation,
    t1: &FiniteMts<T>,
    t2: &FiniteMts<T>,
    epsilon: T,
) -> Result<CheckReport> {
    if r.is_empty() {
        return Err(Error::Domain("a simulation relation must be non-empty".into()));
    }
    if t1.state_count() > 0 && t2.state_count() > 0 && t1.output_dim() != t2.output_dim() {
        return Err(Error::Dimension("the two systems have different output spaces".into()));
    }
    if let Some(bad) = r.pairs().find(|&(a, b)| a >= t1.state_count() || b >= t2.state_count()) {
        return Err(Error::Domain(format!(
            "relation pair {bad:?} references a missing state"
        )));
    }
    let pairs: Vec<(usize, usize)> = r.pairs().collect();
    let results: Vec<(Vec<Counterexample>, u64)> = pairs
        .par_iter()
        .map(|&(x, xp)| {
            let mut found = Vec::new();
            let d = distance(t1.output(x), t2.output(xp));
            if !within(d, epsilon) {
                found.push(Counterexample {
                    reason: Reason::Proximity,
                    pair: (x.to_string(), xp.to_string()),
                    transition: None,
                    detail: format!("distance={} epsilon={}", g9(d.as_f64()), g9(epsilon.as_f64())),
                });
            }
            let moves = t1.transitions_from(x);
            let answers = t2.transitions_from(xp);
            for &(_, u, y) in moves {
                if !answers.iter().any(|&(_, _, yp)| r.contains(y, yp)) {
                    found.push(Counterexample {
                        reason: Reason::NoMatchingMove,
                        pair: (x.to_string(), xp.to_string()),
                        transition: Some(format!("{x} -u{u}-> {y}")),
                        detail: format!("candidates={}", answers.len()),
                    });
                }
            }
            (found, moves.len() as u64)
        })
        .collect();
    let mut report = CheckReport::new("approx-simulation");
    report.set_meta("epsilon", g9(epsilon.as_f64()));
    report.set_meta("relation_size", r.len());
    report.stats_mut().pairs_checked = pairs.len() as u64;
    for (found, checked) in results {
        report.stats_mut().transitions_checked += checked;
        for cx in found {
            report.push(cx);
        }
    }
    Ok(report.finish())
}

/// `r` simulates `t` trimmed by `rho` with `t_prime`, and `r⁻¹` simulates
/// `t_prime` trimmed by `rho` with `t`, both at proximity `epsilon`.
pub fn is_trimmed_bisim<T: Scalar>(
    t: &FiniteMts<T>,
    t_prime: &FiniteMts<T>,
    r: &Relation,
    rho: T,
    epsilon: T,
    b: &OpenBox<T>,
) -> Result<CheckReport> {
    let mut forward = is_approx_simulation(r, &trim_model(t, b, rho)?, t_prime, epsilon)?;
    forward.tag_counterexamples("direction=forward");
    let mut backward = is_approx_simulation(&r.inverse(), &trim_model(t_prime, b, rho)?, t, epsilon)?;
    backward.tag_counterexamples("direction=backward");
    let mut report = CheckReport::new("trimmed-bisimulation");
    report.set_meta("rho", g9(rho.as_f64()));
    report.set_meta("epsilon", g9(epsilon.as_f64()));
    report.absorb(forward);
    report.absorb(backward);
    Ok(report.finish())
}

/// Order-independent view of a [`FiniteMts`]: sorted distinct outputs,
/// sorted distinct catalog entries and the edge set over those ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalMts<T> {
    pub states: Vec<Vec<T>>,
    pub catalog: Vec<(T, Vec<Vec<T>>)>,
    pub edges: BTreeSet<(usize, usize, usize)>,
}

fn cmp_slice<T: PartialOrd>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn cmp_input<T: PartialOrd>(a: &(T, Vec<Vec<T>>), b: &(T, Vec<Vec<T>>)) -> Ordering {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Equal) | None => {}
        Some(o) => return o,
    }
    for (x, y) in a.1.iter().zip(&b.1) {
        let o = cmp_slice(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.1.len().cmp(&b.1.len())
}

pub fn canonical_form<T: Scalar>(t: &FiniteMts<T>) -> CanonicalMts<T> {
    let mut states = t.outputs.clone();
    states.sort_by(|a, b| cmp_slice(a, b));
    states.dedup();
    let mut catalog: Vec<(T, Vec<Vec<T>>)> = t
        .catalog
        .iter()
        .map(|u| (u.segment_length(), u.values().to_vec()))
        .collect();
    catalog.sort_by(cmp_input);
    catalog.dedup();
    let state_rank = |s: usize| {
        states
            .binary_search_by(|p| cmp_slice(p, &t.outputs[s]))
            .expect("state present")
    };
    let input_rank = |i: usize| {
        let key = (t.catalog[i].segment_length(), t.catalog[i].values().to_vec());
        catalog.binary_search_by(|p| cmp_input(p, &key)).expect("input present")
    };
    let edges = t
        .transitions
        .iter()
        .map(|&(s, i, d)| (state_rank(s), input_rank(i), state_rank(d)))
        .collect();
    CanonicalMts { states, catalog, edges }
}

/// Certifies that `t_hat` is `(alpha + beta)`-near complete with respect to
/// `t`, using `t_prime` as the complete intermediate model:
///
/// 1. `t_prime` trimmed by `beta` equals `t_hat` (canonical form), and
/// 2. `t` trimmed by `alpha` is `epsilon`-approximately simulated by
///    `t_prime` under the proximity relation `‖H(x) - H'(x')‖ <= epsilon`.
pub fn near_completeness_certificate<T: Scalar>(
    t: &FiniteMts<T>,
    t_hat: &FiniteMts<T>,
    alpha: T,
    beta: T,
    t_prime: &FiniteMts<T>,
    b: &OpenBox<T>,
    epsilon: T,
) -> Result<CheckReport> {
    if !(alpha > T::zero()) || !(beta > T::zero()) {
        return Err(Error::Domain("near-completeness needs alpha > 0 and beta > 0".into()));
    }
    let mut report = CheckReport::new("near-completeness");
    report.set_meta("alpha", g9(alpha.as_f64()));
    report.set_meta("beta", g9(beta.as_f64()));
    report.set_meta("gamma", g9((alpha + beta).as_f64()));
    report.set_meta("epsilon", g9(epsilon.as_f64()));

    let trimmed = canonical_form(&trim_model(t_prime, b, beta)?);
    let expected = canonical_form(t_hat);
    if trimmed != expected {
        report.push(Counterexample {
            reason: Reason::ModelMismatch,
            pair: ("trimmed-complete-model".into(), "candidate-model".into()),
            transition: None,
            detail: format!(
                "states {} vs {}, inputs {} vs {}, edges {} vs {}",
                trimmed.states.len(),
                expected.states.len(),
                trimmed.catalog.len(),
                expected.catalog.len(),
                trimmed.edges.len(),
                expected.edges.len()
            ),
        });
    }
    let r = Relation::proximity(t.outputs(), t_prime.outputs(), epsilon);
    let sim = is_approx_simulation(&r, &trim_model(t, b, alpha)?, t_prime, epsilon)?;
    report.absorb(sim);
    Ok(report.finish())
}

/// Counts and seed for the sampled Result 1 and near-completeness checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan<T> {
    /// Low-discrepancy states in the region.
    pub states: usize,
    /// Grid points that receive `±epsilon` corner offsets (`2^n` states each).
    pub corner_anchors: usize,
    /// Inputs per state.
    pub inputs: usize,
    pub seed: u64,
    /// Sampling step for supervisory bound monitoring.
    pub dt: T,
    /// Samples re-run through the step integrator as a cross-check.
    pub cross_checks: usize,
}

impl<T: Scalar> SamplePlan<T> {
    pub fn new(states: usize, inputs: usize, seed: u64) -> Self {
        SamplePlan {
            states,
            corner_anchors: 8,
            inputs,
            seed,
            dt: T::lit(1e-3),
            cross_checks: 32,
        }
    }
}

/// Counts and seed for the sampled supervisory-admissibility check.
#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Plan<T> {
    pub pairs: usize,
    pub inputs: usize,
    pub seed: u64,
    pub dt: T,
    pub cross_checks: usize,
}

impl<T: Scalar> Theorem1Plan<T> {
    pub fn new(pairs: usize, inputs: usize, seed: u64) -> Self {
        Theorem1Plan {
            pairs,
            inputs,
            seed,
            dt: T::lit(1e-3),
            cross_checks: 16,
        }
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `count` Halton points in `[lower, upper]`, starting at an index derived
/// from `seed`.
fn halton<T: Scalar>(lower: &[T], upper: &[T], count: usize, seed: u64) -> Vec<Vec<T>> {
    let start = 1 + seed % 4096;
    (0..count as u64)
        .map(|i| {
            lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(d, (&lo, &hi))| lo + (hi - lo) * T::lit(radical_inverse(start + i, PRIMES[d % 12])))
                .collect()
        })
        .collect()
}

/// Halton states in the region (shrunk by `epsilon` when `interior`) plus
/// `±epsilon` corner offsets around random grid points.
fn sample_states<T: Scalar>(
    region: &Region<T>,
    plan: &SamplePlan<T>,
    eta: T,
    epsilon: T,
    interior: bool,
) -> Result<(Vec<Vec<T>>, usize)> {
    let margin = if interior {
        epsilon + T::lit(2.0 * PROXIMITY_SLACK)
    } else {
        T::zero()
    };
    let lower: Vec<T> = region.lower().iter().map(|&l| l + margin).collect();
    let upper: Vec<T> = region.upper().iter().map(|&u| u - margin).collect();
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::Domain(format!(
            "region is too small to sample states {} away from its boundary",
            margin
        )));
    }
    let inside = |x: &[T]| {
        x.iter()
            .zip(lower.iter().zip(&upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    };
    let mut states = halton(&lower, &upper, plan.states, plan.seed);
    let lattice = region.lattice(eta);
    let mut corners = 0;
    if !lattice.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let n = region.dim();
        for _ in 0..plan.corner_anchors {
            let g = lattice_coords(&lattice.point(rng.gen_range(0..lattice.len())), eta);
            for mask in 0..(1usize << n) {
                let x: Vec<T> = g
                    .iter()
                    .enumerate()
                    .map(|(d, &v)| if mask >> d & 1 == 1 { v + epsilon } else { v - epsilon })
                    .collect();
                if inside(&x) {
                    states.push(x);
                    corners += 1;
                }
            }
        }
    }
    Ok((states, corners))
}

/// Segment count and length used for sampled inputs of duration `tau`:
/// the system's `h` when it divides `tau`, otherwise the nearest finer split.
fn segmentation<T: Scalar>(tau: T, h: T) -> (usize, T) {
    match segments_in(tau.as_f64(), h.as_f64()) {
        Ok(k) => (k, h),
        Err(_) => {
            let k = (tau / h).ceil().to_usize().unwrap_or(1).max(1);
            (k, tau / T::from_usize(k).unwrap())
        }
    }
}

/// Roughly half constants spread evenly over the trimmed quantized levels
/// (extremes included), the rest random sequences of those levels.
fn trimmed_quantized_inputs<T: Scalar>(
    sys: &LinearSystem<T>,
    rho: T,
    tau: T,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PiecewiseConstantInput<T>>> {
    let trimmed = trim_box(sys.input_box(), rho)?;
    let grid = sys
        .quantized_inputs()
        .restricted_to(&trimmed)
        .ok_or_else(|| Error::Construction("no quantized input level survives trimming".into()))?;
    let points = grid.points();
    let constants = count.div_ceil(2).min(points.len()).max(1);
    let mut inputs = Vec::with_capacity(count);
    for j in evenly_spaced(points.len(), constants) {
        inputs.push(PiecewiseConstantInput::constant(points[j].clone(), tau, 1)?);
    }
    let (k, h) = segmentation(tau, sys.h());
    while inputs.len() < count {
        let values = (0..k).map(|_| points[rng.gen_range(0..points.len())].clone()).collect();
        inputs.push(PiecewiseConstantInput::new(h, values)?);
    }
    Ok(inputs)
}

fn evenly_spaced(len: usize, count: usize) -> Vec<usize> {
    if count <= 1 || len <= 1 {
        return vec![len / 2];
    }
    let mut idx: Vec<usize> = (0..count)
        .map(|j| ((j as f64) * (len - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Lattice points of `lattice` within `epsilon` of `x`.
fn related_grid_points<T: Scalar>(x: &[T], lattice: &Lattice, eta: T, epsilon: T) -> Vec<Vec<i64>> {
    let reach = epsilon + T::lit(PROXIMITY_SLACK);
    let ranges: Vec<(i64, i64)> = x
        .iter()
        .map(|&v| {
            let lo = ((v - reach) / eta).ceil().to_i64().unwrap_or(i64::MAX);
            let hi = ((v + reach) / eta).floor().to_i64().unwrap_or(i64::MIN);
            (lo, hi)
        })
        .collect();
    let mut out: Vec<Vec<i64>> = vec![Vec::new()];
    for &(lo, hi) in &ranges {
        out = out
            .into_iter()
            .flat_map(|p| {
                (lo..=hi).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out.retain(|k| lattice.index_of(k).is_some() && within(distance(&lattice_coords(k, eta), x), epsilon));
    out
}

fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Result 1 check on given states and inputs.
///
/// The relation pairs each state `x` with every region grid point `g` within
/// `epsilon`. For every pair and input `u`:
///
/// * completeness: `x -u-> y` is matched by `g` driven by the supervisory
///   input tracking `x`, rounded to the grid; the rounded endpoint must be
///   within `epsilon` of `y`;
/// * soundness: the grid move `g -u-> q` is matched by `x` driven by the
///   supervisory input tracking `g`; its endpoint must be within `epsilon`
///   of `q`;
/// * both supervisory inputs must stay inside the input box.
///
/// Endpoints use the closed form `x(tau) = exp(A tau) x + w(u)` and
/// `e(tau) = exp((A+BC) tau) e(0)`; the first `cross_checks` triples are
/// replayed through the step integrator.
#[allow(clippy::too_many_arguments)]
pub fn check_result1_at<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    params: &AbstractionParams<T>,
    region: &Region<T>,
    states: &[Vec<T>],
    inputs: &[PiecewiseConstantInput<T>],
    dt: T,
    cross_checks: usize,
) -> Result<CheckReport> {
    let (eps, eta, tau) = (params.epsilon(), params.eta(), params.tau());
    let n = sys.state_dim();
    if let Some(x) = states.iter().find(|x| x.len() != n) {
        return Err(Error::Dimension(format!("sampled state {x:?} has the wrong dimension")));
    }
    let phi_a = mat_exp(sys.a(), tau)?;
    let phi_m = mat_exp(&sys.closed_loop(c)?, tau)?;
    let probe = SupervisoryProbe::new(sys, c, tau, dt)?;
    let zero = vec![T::zero(); n];
    let offsets: Vec<Vec<T>> = inputs
        .iter()
        .map(|u| reach(sys, &zero, u, tau))
        .collect::<Result<_>>()?;
    let lattice = region.lattice(eta);
    let ubox = sys.input_box();

    let per_state: Vec<(Vec<Counterexample>, u64, u64)> = states
        .par_iter()
        .map(|x| {
            let mut found = Vec::new();
            let related = related_grid_points(x, &lattice, eta, eps);
            let ax = phi_a.mul_vec(x);
            for k in &related {
                let g = lattice_coords(k, eta);
                let ag = phi_a.mul_vec(&g);
                let shift_to_g = phi_m.mul_vec(&vec_sub(&g, x));
                let shift_to_x = phi_m.mul_vec(&vec_sub(x, &g));
                let track_x = probe.corrections(&vec_sub(&g, x));
                let track_g = probe.corrections(&vec_sub(x, &g));
                for (j, (u, w)) in inputs.iter().zip(&offsets).enumerate() {
                    let pair = (fmt_point(x), fmt_point(&g));
                    // Completeness: the grid point tracks x.
                    let y = add(&ax, w);
                    let yg = add(&y, &shift_to_g);
                    let q = lattice_coords(&quantize_index(&yg, eta), eta);
                    let d = distance(&y, &q);
                    if !within(d, eps) {
                        found.push(Counterexample {
                            reason: Reason::Proximity,
                            pair: pair.clone(),
                            transition: Some(format!("x -u{j}-> {}", fmt_point(&y))),
                            detail: format!(
                                "direction=completeness supervised_endpoint={} matched={} distance={} epsilon={}",
                                fmt_point(&yg),
                                fmt_point(&q),
                                g9(d.as_f64()),
                                g9(eps.as_f64())
                            ),
                        });
                    }
                    match probe.check_corrections(ubox, &track_x, u) {
                        Ok(Membership::Inside) => {}
                        Ok(Membership::Exits { time, value }) => found.push(Counterexample {
                            reason: Reason::InputBound,
                            pair: pair.clone(),
                            transition: Some(format!("x -u{j}-> {}", fmt_point(&y))),
                            detail: format!(
                                "direction=completeness supervisory_input={} time={}",
                                fmt_point(&value),
                                g9(time.as_f64())
                            ),
                        }),
                        Err(e) => found.push(numerical(pair.clone(), e)),
                    }
                    // Soundness: x tracks the grid point.
                    let yg0 = add(&ag, w);
                    let q0 = lattice_coords(&quantize_index(&yg0, eta), eta);
                    let yx = add(&yg0, &shift_to_x);
                    let d = distance(&yx, &q0);
                    if !within(d, eps) {
                        found.push(Counterexample {
                            reason: Reason::Proximity,
                            pair: pair.clone(),
                            transition: Some(format!("g -u{j}-> {}", fmt_point(&q0))),
                            detail: format!(
                                "direction=soundness supervised_endpoint={} distance={} epsilon={}",
                                fmt_point(&yx),
                                g9(d.as_f64()),
                                g9(eps.as_f64())
                            ),
                        });
                    }
                    match probe.check_corrections(ubox, &track_g, u) {
                        Ok(Membership::Inside) => {}
                        Ok(Membership::Exits { time, value }) => found.push(Counterexample {
                            reason: Reason::InputBound,
                            pair,
                            transition: Some(format!("g -u{j}-> {}", fmt_point(&q0))),
                            detail: format!(
                                "direction=soundness supervisory_input={} time={}",
                                fmt_point(&value),
                                g9(time.as_f64())
                            ),
                        }),
                        Err(e) => found.push(numerical(pair, e)),
                    }
                }
            }
            let pairs = related.len() as u64;
            (found, pairs, 2 * pairs * inputs.len() as u64)
        })
        .collect();

    let mut report = CheckReport::new("result1");
    let mut unrelated = 0;
    for (found, pairs, transitions) in per_state {
        if pairs == 0 {
            unrelated += 1;
        }
        report.stats_mut().pairs_checked += pairs;
        report.stats_mut().transitions_checked += transitions;
        for cx in found {
            report.push(cx);
        }
    }

    // Replay a few triples through the integrator.
    let mut replayed = 0;
    'outer: for (i, x) in states.iter().enumerate() {
        if inputs.is_empty() {
            break;
        }
        for k in related_grid_points(x, &lattice, eta, eps).into_iter().take(1) {
            if replayed >= cross_checks {
                break 'outer;
            }
            let g = lattice_coords(&k, eta);
            let j = i % inputs.len();
            let run = simulate_supervisory(sys, c, &g, x, &inputs[j], tau, dt)?;
            let y = add(&phi_a.mul_vec(x), &offsets[j]);
            let yg = add(&y, &phi_m.mul_vec(&vec_sub(&g, x)));
            let gap = distance(run.plant.final_state(), &yg).max(distance(run.reference.final_state(), &y));
            let tol = T::lit(1e-6) * (T::one() + vec_norm_inf(&yg));
            if gap > tol {
                report.push(Counterexample {
                    reason: Reason::Numerical,
                    pair: (fmt_point(x), fmt_point(&g)),
                    transition: Some(format!("u{j}")),
                    detail: format!("closed form and integrator differ by {}", g9(gap.as_f64())),
                });
            }
            replayed += 1;
        }
    }

    report.set_meta("epsilon", g9(eps.as_f64()));
    report.set_meta("eta", g9(eta.as_f64()));
    report.set_meta("tau", g9(tau.as_f64()));
    report.set_meta("rho", g9(params.rho().as_f64()));
    report.set_meta("certificate", g9(params.certificate_value().as_f64()));
    report.set_meta("certified", params.is_certified());
    report.set_meta("dt", g9(dt.as_f64()));
    report.set_meta("states", states.len());
    report.set_meta("inputs", inputs.len());
    report.set_meta("unrelated_states", unrelated);
    report.set_meta("cross_checks", replayed);
    Ok(report.finish())
}

fn numerical(pair: (String, String), e: Error) -> Counterexample {
    Counterexample {
        reason: Reason::Numerical,
        pair,
        transition: None,
        detail: e.to_string(),
    }
}

/// Sampled Result 1 check: Halton and corner states from `plan`, trimmed
/// quantized inputs (constants and random sequences), see
/// [`check_result1_at`].
pub fn check_result1_sampled<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    params: &AbstractionParams<T>,
    region: &Region<T>,
    plan: &SamplePlan<T>,
) -> Result<CheckReport> {
    let (states, corners) = sample_states(region, plan, params.eta(), params.epsilon(), false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(1));
    let inputs = trimmed_quantized_inputs(sys, params.rho(), params.tau(), plan.inputs, &mut rng)?;
    let mut report = check_result1_at(sys, c, params, region, &states, &inputs, plan.dt, plan.cross_checks)?;
    report.set_meta("seed", plan.seed);
    report.set_meta("corner_states", corners);
    Ok(report)
}

fn sample_open<T: Scalar>(lo: T, hi: T, rng: &mut ChaCha8Rng) -> T {
    loop {
        let v = lo + (hi - lo) * T::lit(rng.gen::<f64>());
        if lo < v && v < hi {
            return v;
        }
    }
}

/// Sampled supervisory admissibility: for random `(y0, x0)` with
/// `‖y0 - x0‖ <= epsilon` (all `±epsilon` corners first) and random
/// piecewise-constant inputs inside the `‖C‖ epsilon`-trimmed box, every
/// sampled supervisory input stays in the input box. Also checks
/// `max_t ‖C e(t)‖ <= ‖C‖ ‖e0‖` for every pair.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem1_sampled<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    epsilon: T,
    tau: T,
    region: &Region<T>,
    plan: &Theorem1Plan<T>,
) -> Result<CheckReport> {
    let rho = compute_trim(c, epsilon)?;
    let trimmed = trim_box(sys.input_box(), rho)?;
    let probe = SupervisoryProbe::new(sys, c, tau, plan.dt)?;
    let mut report = CheckReport::new("theorem1");
    report.set_meta("epsilon", g9(epsilon.as_f64()));
    report.set_meta("rho", g9(rho.as_f64()));
    report.set_meta("tau", g9(tau.as_f64()));
    report.set_meta("dt", g9(plan.dt.as_f64()));
    report.set_meta("pairs", plan.pairs);
    report.set_meta("inputs", plan.inputs);
    report.set_meta("seed", plan.seed);
    let (lower, upper) = match (trimmed.lower(), trimmed.upper()) {
        (Some(l), Some(u)) => (l.to_vec(), u.to_vec()),
        _ => {
            report.set_meta("trimmed_box", "empty");
            return Ok(report.finish());
        }
    };
    let n = sys.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let pairs: Vec<(Vec<T>, Vec<T>)> = (0..plan.pairs)
        .map(|i| {
            let e0: Vec<T> = if i < (1usize << n) {
                (0..n)
                    .map(|d| if i >> d & 1 == 1 { epsilon } else { -epsilon })
                    .collect()
            } else {
                (0..n).map(|_| epsilon * T::lit(rng.gen_range(-1.0..=1.0))).collect()
            };
            let x0: Vec<T> = region
                .lower()
                .iter()
                .zip(region.upper())
                .map(|(&l, &u)| l + (u - l) * T::lit(rng.gen::<f64>()))
                .collect();
            let y0 = add(&x0, &e0);
            (y0, x0)
        })
        .collect();
    let (k, h) = segmentation(tau, sys.h());
    let near = |lo: T, hi: T, top: bool| {
        let w = (hi - lo) * T::lit(1e-6);
        if top {
            hi - w
        } else {
            lo + w
        }
    };
    let inputs: Vec<PiecewiseConstantInput<T>> = (0..plan.inputs)
        .map(|j| {
            let values: Vec<Vec<T>> = if j < 2 {
                let v = lower.iter().zip(&upper).map(|(&l, &u)| near(l, u, j == 0)).collect();
                vec![v; k]
            } else {
                (0..k)
                    .map(|_| {
                        lower
                            .iter()
                            .zip(&upper)
                            .map(|(&l, &u)| sample_open(l, u, &mut rng))
                            .collect()
                    })
                    .collect()
            };
            PiecewiseConstantInput::new(h, values)
        })
        .collect::<Result<_>>()?;

    let c_norm = induced_inf_norm(c);
    let ubox = sys.input_box();
    let results: Vec<Vec<Counterexample>> = pairs
        .par_iter()
        .map(|(y0, x0)| {
            let mut found = Vec::new();
            let e0 = vec_sub(y0, x0);
            let disp = probe.max_displacement(&e0);
            let bound = c_norm * vec_norm_inf(&e0);
            if disp.as_f64() > bound.as_f64() + 1e-9 {
                found.push(Counterexample {
                    reason: Reason::Displacement,
                    pair: (fmt_point(y0), fmt_point(x0)),
                    transition: None,
                    detail: format!("max_displacement={} bound={}", g9(disp.as_f64()), g9(bound.as_f64())),
                });
            }
            let corrections = probe.corrections(&e0);
            for (j, u) in inputs.iter().enumerate() {
                match probe.check_corrections(ubox, &corrections, u) {
                    Ok(Membership::Inside) => {}
                    Ok(Membership::Exits { time, value }) => found.push(Counterexample {
                        reason: Reason::InputBound,
                        pair: (fmt_point(y0), fmt_point(x0)),
                        transition: Some(format!("u{j}")),
                        detail: format!("supervisory_input={} time={}", fmt_point(&value), g9(time.as_f64())),
                    }),
                    Err(e) => found.push(numerical((fmt_point(y0), fmt_point(x0)), e)),
                }
            }
            found
        })
        .collect();
    report.stats_mut().pairs_checked = pairs.len() as u64;
    report.stats_mut().transitions_checked = (pairs.len() * inputs.len()) as u64;
    for cx in results.into_iter().flatten() {
        report.push(cx);
    }

    let replays = plan.cross_checks.min(pairs.len());
    for (i, (y0, x0)) in pairs.iter().take(replays).enumerate() {
        if inputs.is_empty() {
            break;
        }
        let u = &inputs[i % inputs.len()];
        let run = simulate_supervisory(sys, c, y0, x0, u, tau, plan.dt)?;
        let e0 = vec_sub(y0, x0);
        let worst = run
            .supervisory_inputs()
            .iter()
            .enumerate()
            .map(|(s, v)| {
                let t = probe.times()[s];
                let expected = add(u.value_at(t), &probe.correction_at(s, &e0));
                distance(v, &expected)
            })
            .fold(T::zero(), T::max);
        if worst.as_f64() > 1e-6 {
            report.push(Counterexample {
                reason: Reason::Numerical,
                pair: (fmt_point(y0), fmt_point(x0)),
                transition: Some(format!("u{}", i % inputs.len())),
                detail: format!(
                    "integrated and closed-form supervisory inputs differ by {}",
                    g9(worst.as_f64())
                ),
            });
        }
    }
    report.set_meta("cross_checks", replays);
    Ok(report.finish())
}

struct Witness<T> {
    source: usize,
    input: PiecewiseConstantInput<T>,
    successor: Vec<i64>,
}

/// Sampled near-completeness run with `alpha = beta = rho`.
///
/// * `T` is a finite sample of the time-quantized plant: states drawn from
///   the region shrunk by `epsilon`, constant inputs spread over the whole
///   quantized grid (trimmed and untrimmed), and their exact successors as
///   leaf states.
/// * `T'` is the untrimmed grid model over the region (all quantized
///   constants), extended with the supervisory inputs that the grid points
///   use to track the sampled states. A supervisory input is added only if
///   its sampled values stay in the input box.
/// * `T-hat` is the trimmed symbolic model plus those supervisory inputs
///   whose values lie in the `beta`-trimmed box.
///
/// Grid successors outside the region are kept as sink states so that all
/// three systems share one state universe.
pub fn check_near_completeness_sampled<T: Scalar>(
    sys: &LinearSystem<T>,
    c: &Matrix<T>,
    params: &AbstractionParams<T>,
    region: &Region<T>,
    plan: &SamplePlan<T>,
) -> Result<CheckReport> {
    let (eps, eta, tau, rho) = (params.epsilon(), params.eta(), params.tau(), params.rho());
    let n = sys.state_dim();
    let ubox = sys.input_box();
    let (states, _) = sample_states(region, plan, eta, eps, true)?;

    // T: sampled plant.
    let full_points = sys.quantized_inputs().points();
    let t_inputs: Vec<PiecewiseConstantInput<T>> = evenly_spaced(full_points.len(), plan.inputs.max(1))
        .into_iter()
        .map(|j| PiecewiseConstantInput::constant(full_points[j].clone(), tau, 1))
        .collect::<Result<_>>()?;
    let zero = vec![T::zero(); n];
    let offsets: Vec<Vec<T>> = t_inputs
        .iter()
        .map(|u| reach(sys, &zero, u, tau))
        .collect::<Result<_>>()?;
    let phi_a = mat_exp(sys.a(), tau)?;
    let phi_m = mat_exp(&sys.closed_loop(c)?, tau)?;
    let mut t_outputs = states.clone();
    let mut t_transitions = Vec::new();
    let mut endpoints = vec![Vec::new(); states.len()];
    for (i, x) in states.iter().enumerate() {
        let ax = phi_a.mul_vec(x);
        for (j, w) in offsets.iter().enumerate() {
            let y = add(&ax, w);
            t_transitions.push((i, j, t_outputs.len()));
            t_outputs.push(y.clone());
            endpoints[i].push(y);
        }
    }
    let t = FiniteMts::new(t_outputs, t_inputs.clone(), t_transitions)?;

    // Grid models.
    let wide = BuildOptions {
        segments: 1,
        catalog_cap: usize::MAX,
    };
    let full_catalog = grid_catalog(sys.quantized_inputs(), tau, &wide)?;
    let complete = build_over_catalog(sys, region, eta, tau, T::zero(), full_catalog)?;
    let trimmed_model = if params.is_certified() {
        build_symbolic_model(sys, c, params, region, &BuildOptions::default())?
    } else {
        let catalog = input_catalog(sys, rho, tau, &BuildOptions::default())?;
        build_over_catalog(sys, region, eta, tau, rho, catalog)?
    };

    // Supervisory inputs of the grid points tracking the sampled states.
    let probe = SupervisoryProbe::new(sys, c, tau, plan.dt)?;
    let stride = {
        let s = (sys.h() / plan.dt).round().to_usize().unwrap_or(1).max(1);
        if segments_in(tau.as_f64(), (plan.dt * T::from_usize(s).unwrap()).as_f64()).is_ok() {
            s
        } else {
            1
        }
    };
    let wh = plan.dt * T::from_usize(stride).unwrap();
    let segments = segments_in(tau.as_f64(), wh.as_f64())?;
    let lattice = region.lattice(eta);
    let mut witnesses = Vec::new();
    let mut rejected = 0usize;
    for (i, x) in states.iter().enumerate() {
        for (j, u) in t_inputs.iter().enumerate() {
            if !trajectory_in_trimmed_set(u, ubox, rho)? {
                continue;
            }
            for k in related_grid_points(x, &lattice, eta, eps) {
                let g = lattice_coords(&k, eta);
                if !probe.check(ubox, &g, x, u)?.is_inside() {
                    rejected += 1;
                    continue;
                }
                let e0 = vec_sub(&g, x);
                let values = (0..segments)
                    .map(|s| {
                        let idx = s * stride;
                        add(u.value_at(probe.times()[idx]), &probe.correction_at(idx, &e0))
                    })
                    .collect();
                let yg = add(&endpoints[i][j], &phi_m.mul_vec(&e0));
                witnesses.push(Witness {
                    source: lattice.index_of(&k).expect("related points lie in the region"),
                    input: PiecewiseConstantInput::new(wh, values)?,
                    successor: quantize_index(&yg, eta),
                });
            }
        }
    }

    // Shared state universe: region lattice followed by sorted sinks.
    let mut sinks: BTreeSet<Vec<i64>> = complete.out_of_region().iter().map(|o| o.successor.clone()).collect();
    sinks.extend(trimmed_model.out_of_region().iter().map(|o| o.successor.clone()));
    sinks.extend(
        witnesses
            .iter()
            .filter(|w| lattice.index_of(&w.successor).is_none())
            .map(|w| w.successor.clone()),
    );
    let sinks: Vec<Vec<i64>> = sinks.into_iter().collect();
    let index = |k: &[i64]| match lattice.index_of(k) {
        Some(i) => i,
        None => lattice.len() + sinks.binary_search_by(|p| p.as_slice().cmp(k)).expect("sink recorded"),
    };
    let outputs: Vec<Vec<T>> = (0..lattice.len())
        .map(|i| lattice_coords(&lattice.point(i), eta))
        .chain(sinks.iter().map(|k| lattice_coords(k, eta)))
        .collect();
    let assemble = |model: &SymbolicModel<T>, extra: &[&Witness<T>]| -> Result<FiniteMts<T>> {
        let mut catalog = model.catalog().to_vec();
        let mut transitions = model.edges().to_vec();
        transitions.extend(
            model
                .out_of_region()
                .iter()
                .map(|o| (o.state, o.input, index(&o.successor))),
        );
        for w in extra {
            transitions.push((w.source, catalog.len(), index(&w.successor)));
            catalog.push(w.input.clone());
        }
        FiniteMts::new(outputs.clone(), catalog, transitions)
    };
    let trimmed_box = trim_box(ubox, rho)?;
    let all: Vec<&Witness<T>> = witnesses.iter().collect();
    let kept: Vec<&Witness<T>> = witnesses
        .iter()
        .filter(|w| {
            w.input
                .values()
                .iter()
                .all(|v| trimmed_box.contains(v).unwrap_or(false))
        })
        .collect();
    let t_prime = assemble(&complete, &all)?;
    let t_hat = assemble(&trimmed_model, &kept)?;

    let mut report = near_completeness_certificate(&t, &t_hat, rho, rho, &t_prime, ubox, eps)?;
    report.set_meta("seed", plan.seed);
    report.set_meta("states", states.len());
    report.set_meta("sampled_inputs", t.catalog().len());
    report.set_meta("supervisory_inputs", witnesses.len());
    report.set_meta("supervisory_inputs_rejected", rejected);
    report.set_meta("supervisory_inputs_trimmed", kept.len());
    report.set_meta("sink_states", sinks.len());
    report.set_meta("tau", g9(tau.as_f64()));
    Ok(report)
}
