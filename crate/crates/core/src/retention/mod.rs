//! Number-of-components retention criteria.
//!
//! Each criterion implements [`RetentionCriterion`] and is registered by
//! name in [`criteria_registry`], so callers select one at runtime while
//! always being able to evaluate the full set side by side.

mod ekc;
mod kaiser;
mod parallel;
mod profile;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::IndicatorMatrix;
use crate::registry::Registry;

pub use ekc::{ekc, EmpiricalKaiser};
pub use kaiser::{kaiser, Kaiser};
pub use parallel::{parallel_analysis, ParallelAnalysis, MAX_DROPPED_FRACTION};
pub use profile::{profile_likelihood, ProfileLikelihood, VARIANCE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Parallel,
    Ekc,
    Kaiser,
    ProfileLikelihood,
}

impl CriterionKind {
    /// Reporting order: parallel analysis, EKC, Kaiser, profile likelihood.
    pub const ALL: [CriterionKind; 4] = [
        CriterionKind::Parallel,
        CriterionKind::Ekc,
        CriterionKind::Kaiser,
        CriterionKind::ProfileLikelihood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Parallel => "parallel",
            CriterionKind::Ekc => "ekc",
            CriterionKind::Kaiser => "kaiser",
            CriterionKind::ProfileLikelihood => "profile_likelihood",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "retention criterion",
                name: name.to_string(),
                available: Self::ALL.map(|c| c.name()).join(", "),
            })
    }
}

impl std::fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionDecision {
    pub criterion: CriterionKind,
    pub k_retained: usize,
    /// Reference eigenvalue per position for kaiser, ekc and parallel;
    /// profile log-likelihood per candidate split (q = 1..k-1) otherwise.
    pub diagnostics: Vec<f64>,
    pub converged: bool,
    /// Parallel analysis only: replications dropped as degenerate.
    pub dropped_replications: usize,
}

/// Everything a criterion may look at.
#[derive(Debug, Clone, Copy)]
pub struct RetentionInput<'a> {
    /// Descending.
    pub eigenvalues: &'a [f64],
    pub n: usize,
    /// Needed by resampling criteria.
    pub indicators: Option<&'a IndicatorMatrix>,
    /// Eigenvalues come from a reduced (communality-diagonal) matrix.
    pub reduced: bool,
    pub seed: u64,
}

impl<'a> RetentionInput<'a> {
    pub fn new(eigenvalues: &'a [f64], n: usize) -> Self {
        Self {
            eigenvalues,
            n,
            indicators: None,
            reduced: false,
            seed: 0,
        }
    }

    pub fn with_indicators(mut self, ind: &'a IndicatorMatrix) -> Self {
        self.indicators = Some(ind);
        self
    }

    pub fn reduced(mut self, reduced: bool) -> Self {
        self.reduced = reduced;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub trait RetentionCriterion: Send + Sync {
    fn kind(&self) -> CriterionKind;

    fn decide(&self, input: &RetentionInput<'_>) -> Result<RetentionDecision>;
}

/// All four criteria in reporting order.
pub fn criteria_registry(pa: ParallelAnalysis) -> Registry<dyn RetentionCriterion> {
    let mut reg: Registry<dyn RetentionCriterion> = Registry::new("retention criterion");
    reg.register(CriterionKind::Parallel.name(), Box::new(pa))
        .register(CriterionKind::Ekc.name(), Box::new(EmpiricalKaiser))
        .register(CriterionKind::Kaiser.name(), Box::new(Kaiser))
        .register(CriterionKind::ProfileLikelihood.name(), Box::new(ProfileLikelihood));
    reg
}

pub(crate) fn check_descending(eigenvalues: &[f64], min_len: usize) -> Result<()> {
    if eigenvalues.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} eigenvalue(s), got {}",
            eigenvalues.len()
        )));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) || eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("eigenvalues must be finite and sorted descending".into()));
    }
    Ok(())
}

/// Length of the leading run where `observed[j] > reference[j]`.
pub(crate) fn leading_exceedances(observed: &[f64], reference: &[f64]) -> usize {
    observed
        .iter()
        .zip(reference)
        .take_while(|(o, r)| o > r)
        .count()
}

/// Criterion recommended for a design: parallel analysis, except with at
/// least 5 items per component, fewer than 1000 cases and 3 or more
/// components, where EKC (n >= 250) or Kaiser (n < 250) is preferred.
pub fn guidance(n: usize, items_per_component: usize, expected_components: usize) -> CriterionKind {
    if items_per_component >= 5 && n < 1000 && expected_components >= 3 {
        if n >= 250 {
            CriterionKind::Ekc
        } else {
            CriterionKind::Kaiser
        }
    } else {
        CriterionKind::Parallel
    }
}

/// Scree-style diagnostics: position, observed eigenvalue, reference value.
/// Profile-likelihood decisions export their log-likelihood per split
/// instead of a reference value.
pub fn diagnostics_csv(eigenvalues: &[f64], decisions: &[RetentionDecision]) -> String {
    let mut out = String::from("criterion,position,observed,reference\n");
    for d in decisions {
        for (j, &v) in d.diagnostics.iter().enumerate() {
            let observed = eigenvalues.get(j).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{},{:.6},{:.6}", d.criterion, j + 1, observed, v);
        }
    }
    out
}
