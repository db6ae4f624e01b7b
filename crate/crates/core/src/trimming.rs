//! Open axis-aligned boxes and trimming.
//!
//! Trimming a set by `rho` keeps the points whose closed L∞ ball of radius
//! `rho` stays inside the set. For an open box that pulls every bound inward
//! by `rho`, and the result is again an open box (possibly empty).

use crate::system::PiecewiseConstantInput;
use crate::{BoxScalar, Error, Result};

/// Open hyper-rectangle `]lower[0], upper[0][ x ... x ]lower[m-1], upper[m-1][`.
///
/// The empty box is a distinguished value rather than an error, so pipelines
/// can carry a fully trimmed input set around and report on it.
#[derive(Clone, Debug, PartialEq)]
pub enum OpenBox<T> {
    Empty { dim: usize },
    Bounded { lower: Vec<T>, upper: Vec<T> },
}

impl<T: BoxScalar> OpenBox<T> {
    /// Non-empty open box. Requires `lower[i] < upper[i]` and finite bounds.
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds must have equal positive length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|b| !b.is_finite_bound()) {
            return Err(Error::NonFinite("box bounds"));
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Domain("box needs lower < upper in every dimension".into()));
        }
        Ok(OpenBox::Bounded { lower, upper })
    }

    /// Builds a box from per-dimension `(lo, hi)` pairs.
    pub fn from_pairs(pairs: &[(T, T)]) -> Result<Self> {
        let (lower, upper) = pairs.iter().cloned().unzip();
        Self::new(lower, upper)
    }

    pub fn empty(dim: usize) -> Self {
        OpenBox::Empty { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            OpenBox::Empty { dim } => *dim,
            OpenBox::Bounded { lower, .. } => lower.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, OpenBox::Empty { .. })
    }

    pub fn lower(&self) -> Option<&[T]> {
        match self {
            OpenBox::Bounded { lower, .. } => Some(lower),
            OpenBox::Empty { .. } => None,
        }
    }

    pub fn upper(&self) -> Option<&[T]> {
        match self {
            OpenBox::Bounded { upper, .. } => Some(upper),
            OpenBox::Empty { .. } => None,
        }
    }

    /// See [`trim_box`].
    pub fn trim(&self, rho: T) -> Result<Self> {
        trim_box(self, rho)
    }

    /// See [`contains`].
    pub fn contains(&self, p: &[T]) -> Result<bool> {
        contains(self, p)
    }

    /// Inclusion between open boxes, decided on bounds.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        match (self, other) {
            (OpenBox::Empty { .. }, _) => true,
            (_, OpenBox::Empty { .. }) => false,
            (OpenBox::Bounded { lower: l1, upper: u1 }, OpenBox::Bounded { lower: l2, upper: u2 }) => {
                l1.len() == l2.len() && l1.iter().zip(l2).all(|(a, b)| a >= b) && u1.iter().zip(u2).all(|(a, b)| a <= b)
            }
        }
    }
}

/// `{ s : closed L∞ ball of radius rho around s ⊆ box }`.
///
/// Each bound moves inward by `rho`; a dimension whose bounds meet or cross
/// collapses the whole box to [`OpenBox::Empty`].
pub fn trim_box<T: BoxScalar>(b: &OpenBox<T>, rho: T) -> Result<OpenBox<T>> {
    if rho < T::zero() {
        return Err(Error::Domain(format!("trimming radius must be >= 0, got {rho:?}")));
    }
    if !rho.is_finite_bound() {
        return Err(Error::NonFinite("trimming radius"));
    }
    let (lower, upper) = match b {
        OpenBox::Empty { dim } => return Ok(OpenBox::Empty { dim: *dim }),
        OpenBox::Bounded { lower, upper } => (lower, upper),
    };
    let lower: Vec<T> = lower.iter().map(|lo| lo.clone() + rho.clone()).collect();
    let upper: Vec<T> = upper.iter().map(|hi| hi.clone() - rho.clone()).collect();
    if lower.iter().zip(&upper).any(|(lo, hi)| hi <= lo) {
        return Ok(OpenBox::Empty { dim: lower.len() });
    }
    Ok(OpenBox::Bounded { lower, upper })
}

/// Strict membership: boundary points are outside. The empty box contains
/// nothing.
pub fn contains<T: BoxScalar>(b: &OpenBox<T>, p: &[T]) -> Result<bool> {
    if p.len() != b.dim() {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, box has dimension {}",
            p.len(),
            b.dim()
        )));
    }
    Ok(match b {
        OpenBox::Empty { .. } => false,
        OpenBox::Bounded { lower, upper } => p
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(x, (lo, hi))| lo < x && x < hi),
    })
}

/// Membership of a piecewise-constant trajectory in the `rho`-trimmed
/// trajectory set over `b`.
///
/// Trimming the trajectory set equals taking trajectories over the trimmed
/// box, so this checks every segment value against `trim_box(b, rho)`.
pub fn trajectory_in_trimmed_set<T: BoxScalar>(u: &PiecewiseConstantInput<T>, b: &OpenBox<T>, rho: T) -> Result<bool> {
    let trimmed = trim_box(b, rho)?;
    for v in u.values() {
        if !contains(&trimmed, v)? {
            return Ok(false);
        }
    }
    Ok(true)
}
