//! Verdicts of the relational and sampled checkers.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// Why a pair or sample failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    /// Related states are further apart than the proximity bound.
    Proximity,
    /// A transition has no matching transition into the relation.
    NoMatchingMove,
    /// A supervisory input left the input box.
    InputBound,
    /// The supervisory input moved further from the reference than `‖C‖‖e0‖`.
    Displacement,
    /// Two models that should coincide differ.
    ModelMismatch,
    /// Measured separation fell below an analytic lower bound.
    Separation,
    /// Closed-form and integrated results disagree.
    Numerical,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Reason::Proximity => "proximity",
            Reason::NoMatchingMove => "no-matching-move",
            Reason::InputBound => "input-bound",
            Reason::Displacement => "displacement",
            Reason::ModelMismatch => "model-mismatch",
            Reason::Separation => "separation",
            Reason::Numerical => "numerical",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Counterexample {
    pub reason: Reason,
    /// The related pair, rendered by the checker (indices or coordinates).
    pub pair: (String, String),
    /// The offending transition, when there is one.
    pub transition: Option<String>,
    /// Distances, endpoints and anything else needed to replay the failure.
    pub detail: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} pair=({}, {})", self.reason, self.pair.0, self.pair.1)?;
        if let Some(t) = &self.transition {
            write!(f, " transition={t}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CheckStats {
    pub pairs_checked: u64,
    pub transitions_checked: u64,
}

/// Outcome of one check. The verdict is true exactly when no counterexample
/// was recorded.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    name: String,
    verdict: bool,
    counterexample_count: u64,
    counterexamples: Vec<Counterexample>,
    stats: CheckStats,
    metadata: BTreeMap<String, String>,
}

/// Counterexamples kept verbatim per report; the total is always counted.
pub const MAX_STORED_COUNTEREXAMPLES: usize = 1000;

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            verdict: true,
            counterexample_count: 0,
            counterexamples: Vec::new(),
            stats: CheckStats::default(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn verdict(&self) -> bool {
        self.verdict
    }

    pub fn counterexamples(&self) -> &[Counterexample] {
        &self.counterexamples
    }

    /// Total number of counterexamples found, including any not stored.
    pub fn counterexample_count(&self) -> u64 {
        self.counterexample_count
    }

    pub fn stats(&self) -> &CheckStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut CheckStats {
        &mut self.stats
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn push(&mut self, cx: Counterexample) {
        self.verdict = false;
        self.counterexample_count += 1;
        if self.counterexamples.len() < MAX_STORED_COUNTEREXAMPLES {
            self.counterexamples.push(cx);
        }
    }

    /// Folds another report into this one. Metadata keys of `other` are
    /// prefixed with its name.
    pub fn absorb(&mut self, other: CheckReport) {
        self.stats.pairs_checked += other.stats.pairs_checked;
        self.stats.transitions_checked += other.stats.transitions_checked;
        for (k, v) in other.metadata {
            self.metadata.insert(format!("{}.{k}", other.name), v);
        }
        if !other.verdict {
            self.verdict = false;
        }
        self.counterexample_count += other.counterexample_count;
        let room = MAX_STORED_COUNTEREXAMPLES.saturating_sub(self.counterexamples.len());
        self.counterexamples
            .extend(other.counterexamples.into_iter().take(room));
    }

    /// Prefixes every stored counterexample detail with `tag`.
    pub fn tag_counterexamples(&mut self, tag: &str) {
        for cx in &mut self.counterexamples {
            cx.detail = if cx.detail.is_empty() {
                tag.to_string()
            } else {
                format!("{tag} {}", cx.detail)
            };
        }
    }

    /// Sorts counterexamples so reports merged from parallel workers are
    /// byte-stable.
    pub fn finish(mut self) -> Self {
        self.counterexamples.sort();
        self
    }

    /// Line-oriented text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("check {}\n", self.name));
        out.push_str(&format!("verdict {}\n", if self.verdict { "PASS" } else { "FAIL" }));
        out.push_str(&format!("pairs_checked {}\n", self.stats.pairs_checked));
        out.push_str(&format!("transitions_checked {}\n", self.stats.transitions_checked));
        for (k, v) in &self.metadata {
            out.push_str(&format!("{k} {v}\n"));
        }
        out.push_str(&format!("counterexamples {}\n", self.counterexample_count));
        for cx in &self.counterexamples {
            out.push_str(&format!("cx {cx}\n"));
        }
        out
    }

    /// Pretty-printed JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
