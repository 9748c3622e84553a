//! Monte Carlo recovery study: block-correlated normal data dichotomized
//! at a missingness threshold, analyzed by every retention criterion.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{correlation_registry, repair_pd, CorrelationKind};
use crate::error::{Error, Result};
use crate::extraction::{extraction_registry, ExtractionMethod};
use crate::indicators::IndicatorMatrix;
use crate::retention::{criteria_registry, CriterionKind, ParallelAnalysis, RetentionInput};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::norm_quantile;

pub const COMPONENT_LEVELS: [usize; 4] = [1, 3, 5, 10];
pub const ITEM_LEVELS: [usize; 3] = [3, 5, 10];
pub const SAMPLE_SIZE_LEVELS: [usize; 3] = [100, 250, 1000];
pub const MISSING_LEVELS: [f64; 3] = [0.10, 0.25, 0.50];

pub const WITHIN_CORRELATION: f64 = 0.7;
pub const BETWEEN_CORRELATION: f64 = 0.3;
/// A criterion succeeds in a cell when at least this share of converged
/// replications recovers the true number of components.
pub const SUCCESS_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    pub n_components: usize,
    pub items_per_component: usize,
    pub n: usize,
    pub p_miss: f64,
    pub corr_kind: CorrelationKind,
    pub method: ExtractionMethod,
}

impl SimCondition {
    pub fn new(n_components: usize, items_per_component: usize, n: usize, p_miss: f64) -> Self {
        Self {
            n_components,
            items_per_component,
            n,
            p_miss,
            corr_kind: CorrelationKind::Pearson,
            method: ExtractionMethod::Pca,
        }
    }

    pub fn with_analysis(mut self, corr_kind: CorrelationKind, method: ExtractionMethod) -> Self {
        self.corr_kind = corr_kind;
        self.method = method;
        self
    }

    pub fn n_variables(&self) -> usize {
        self.n_components * self.items_per_component
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 || self.items_per_component < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least one component and two items per component, got {}x{}",
                self.n_components, self.items_per_component
            )));
        }
        if self.n < 3 {
            return Err(Error::InvalidArgument(format!("sample size {} is too small", self.n)));
        }
        if !(self.p_miss > 0.0 && self.p_miss < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "missingness probability must lie in (0, 1), got {}",
                self.p_miss
            )));
        }
        Ok(())
    }

    /// Seed key of the data-generating factors only, so the same
    /// replications are analyzed under every correlation kind and method.
    fn data_key(&self) -> u64 {
        derive_seed(
            0,
            &[
                self.n_components as u64,
                self.items_per_component as u64,
                self.n as u64,
                (self.p_miss * 10_000.0).round() as u64,
            ],
        )
    }

    /// Missingness threshold on the latent standard normal scale.
    pub fn threshold(&self) -> f64 {
        norm_quantile(1.0 - self.p_miss)
    }
}

/// The 108 between-subject cells for one correlation kind and method.
pub fn full_grid(corr_kind: CorrelationKind, method: ExtractionMethod) -> Vec<SimCondition> {
    let mut cells = Vec::with_capacity(108);
    for &c in &COMPONENT_LEVELS {
        for &i in &ITEM_LEVELS {
            for &n in &SAMPLE_SIZE_LEVELS {
                for &p in &MISSING_LEVELS {
                    cells.push(SimCondition::new(c, i, n, p).with_analysis(corr_kind, method));
                }
            }
        }
    }
    cells
}

/// Population correlation: 0.7 within a component's items, 0.3 between.
pub fn block_correlation(n_components: usize, items_per_component: usize) -> DMatrix<f64> {
    let k = n_components * items_per_component;
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if i / items_per_component == j / items_per_component {
            WITHIN_CORRELATION
        } else {
            BETWEEN_CORRELATION
        }
    })
}

/// Samples latent normals through the Cholesky factor of the block
/// correlation matrix and dichotomizes them.
#[derive(Debug, Clone)]
pub struct BlockGenerator {
    cond: SimCondition,
    lower_t: DMatrix<f64>,
    threshold: f64,
    names: Vec<String>,
}

impl BlockGenerator {
    pub fn new(cond: &SimCondition) -> Result<Self> {
        cond.validate()?;
        let chol = block_correlation(cond.n_components, cond.items_per_component)
            .cholesky()
            .ok_or_else(|| Error::Decomposition("block correlation is not positive definite".into()))?;
        Ok(Self {
            cond: *cond,
            lower_t: chol.l().transpose(),
            threshold: cond.threshold(),
            names: (1..=cond.n_variables()).map(|j| format!("v{j}")).collect(),
        })
    }

    pub fn latent(&self, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, &[0]);
        let k = self.cond.n_variables();
        let z = DMatrix::from_fn(self.cond.n, k, |_, _| StandardNormal.sample(&mut rng));
        z * &self.lower_t
    }

    pub fn generate(&self, seed: u64) -> IndicatorMatrix {
        let latent = self.latent(seed);
        let binary = latent.map(|v| if v > self.threshold { 1.0 } else { 0.0 });
        IndicatorMatrix::from_binary(self.names.clone(), &binary).expect("binary by construction")
    }
}

/// One replication's indicator matrix. Columns that came out constant are
/// listed as dropped.
pub fn generate(cond: &SimCondition, seed: u64) -> Result<IndicatorMatrix> {
    Ok(BlockGenerator::new(cond)?.generate(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub parallel: ParallelAnalysis,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            parallel: ParallelAnalysis::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionCell {
    pub criterion: CriterionKind,
    pub replications_run: usize,
    pub replications_converged: usize,
    pub correct: usize,
    /// Over converged replications; 0 when none converged.
    pub proportion_correct: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub condition: SimCondition,
    /// Replications lost before any criterion could run (constant
    /// indicator, failed estimation, non-convergent factoring).
    pub replications_failed: usize,
    pub criteria: Vec<CriterionCell>,
}

impl CellReport {
    pub fn criterion(&self, kind: CriterionKind) -> &CriterionCell {
        self.criteria
            .iter()
            .find(|c| c.criterion == kind)
            .expect("every criterion is reported")
    }
}

/// Per-criterion outcome of one replication: `(k_retained, converged)`,
/// or `None` when the replication failed upstream.
type RepOutcome = Option<Vec<(usize, bool)>>;

fn run_replication(
    cond: &SimCondition,
    generator: &BlockGenerator,
    seed: u64,
    rep: u64,
    options: &SimOptions,
) -> Result<RepOutcome> {
    let rep_seed = derive_seed(seed, &[cond.data_key(), rep]);
    let ind = generator.generate(rep_seed);
    if !ind.dropped_columns().is_empty() {
        return Ok(None);
    }
    let correlations = correlation_registry();
    let extractors = extraction_registry();
    let criteria = criteria_registry(options.parallel);
    let Ok(corr) = correlations.get(cond.corr_kind.name())?.estimate(&ind) else {
        return Ok(None);
    };
    let corr = repair_pd(&corr)?;
    let extractor = extractors.get(cond.method.name())?;
    let eigenvalues = extractor.retention_eigenvalues(&corr)?;
    if cond.method == ExtractionMethod::Paf {
        match extractor.extract(&corr, cond.n_components) {
            Ok(sol) if sol.converged => {}
            _ => return Ok(None),
        }
    }
    let input = RetentionInput::new(&eigenvalues, ind.n_rows())
        .with_indicators(&ind)
        .reduced(cond.method == ExtractionMethod::Paf)
        .seed(derive_seed(rep_seed, &[1]));
    let outcomes = CriterionKind::ALL
        .iter()
        .map(|kind| {
            let d = criteria.get(kind.name())?.decide(&input)?;
            Ok((d.k_retained, d.converged))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(outcomes))
}

/// Runs `reps` replications of one cell. Replication r of a cell always
/// uses the stream derived from `(seed, data factors, r)`.
pub fn run_condition(cond: &SimCondition, reps: usize, seed: u64) -> Result<CellReport> {
    run_condition_with(cond, reps, seed, &SimOptions::default())
}

pub fn run_condition_with(
    cond: &SimCondition,
    reps: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<CellReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    let generator = BlockGenerator::new(cond)?;
    let outcomes: Vec<RepOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replication(cond, &generator, seed, r, options))
        .collect::<Result<_>>()?;

    let replications_failed = outcomes.iter().filter(|o| o.is_none()).count();
    let criteria = CriterionKind::ALL
        .iter()
        .enumerate()
        .map(|(ci, &criterion)| {
            let mut converged = 0;
            let mut correct = 0;
            for (k, ok) in outcomes.iter().flatten().map(|o| o[ci]) {
                if ok {
                    converged += 1;
                    if k == cond.n_components {
                        correct += 1;
                    }
                }
            }
            let proportion_correct = if converged == 0 {
                0.0
            } else {
                correct as f64 / converged as f64
            };
            CriterionCell {
                criterion,
                replications_run: reps,
                replications_converged: converged,
                correct,
                proportion_correct,
                success: proportion_correct >= SUCCESS_THRESHOLD,
            }
        })
        .collect();
    Ok(CellReport {
        condition: *cond,
        replications_failed,
        criteria,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub corr_kind: CorrelationKind,
    pub method: ExtractionMethod,
    pub criterion: CriterionKind,
    /// Mean of per-cell proportions.
    pub mean_proportion: f64,
    pub cells_succeeded: usize,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub reps: usize,
    pub cells: Vec<CellReport>,
    pub aggregate: Vec<AggregateRow>,
}

impl SimReport {
    /// Assembles a report from cells in the given order; aggregates are
    /// grouped by (correlation kind, method) in order of first appearance.
    pub fn from_cells(seed: u64, reps: usize, cells: Vec<CellReport>) -> Self {
        let mut groups: Vec<(CorrelationKind, ExtractionMethod)> = Vec::new();
        for c in &cells {
            let key = (c.condition.corr_kind, c.condition.method);
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        let mut aggregate = Vec::new();
        for (corr_kind, method) in groups {
            let members: Vec<&CellReport> = cells
                .iter()
                .filter(|c| c.condition.corr_kind == corr_kind && c.condition.method == method)
                .collect();
            for criterion in CriterionKind::ALL {
                let props: Vec<&CriterionCell> = members.iter().map(|c| c.criterion(criterion)).collect();
                aggregate.push(AggregateRow {
                    corr_kind,
                    method,
                    criterion,
                    mean_proportion: props.iter().map(|c| c.proportion_correct).sum::<f64>()
                        / props.len() as f64,
                    cells_succeeded: props.iter().filter(|c| c.success).count(),
                    cells: props.len(),
                });
            }
        }
        Self {
            seed,
            reps,
            cells,
            aggregate,
        }
    }

    pub fn aggregate_for(&self, criterion: CriterionKind) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.criterion == criterion)
    }

    /// One row per cell: design factors, then proportion correct and
    /// converged count per criterion.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("n_components,items_per_component,n,p_miss,corr_kind,method,reps,failed");
        for c in CriterionKind::ALL {
            let _ = write!(out, ",{c}");
        }
        for c in CriterionKind::ALL {
            let _ = write!(out, ",{c}_converged");
        }
        out.push('\n');
        for cell in &self.cells {
            let d = &cell.condition;
            let _ = write!(
                out,
                "{},{},{},{:.2},{},{},{},{}",
                d.n_components,
                d.items_per_component,
                d.n,
                d.p_miss,
                d.corr_kind.name(),
                d.method.name(),
                self.reps,
                cell.replications_failed
            );
            for c in CriterionKind::ALL {
                let _ = write!(out, ",{:.4}", cell.criterion(c).proportion_correct);
            }
            for c in CriterionKind::ALL {
                let _ = write!(out, ",{}", cell.criterion(c).replications_converged);
            }
            out.push('\n');
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("corr_kind,method,criterion,mean_proportion,cells_succeeded,cells\n");
        for a in &self.aggregate {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{}",
                a.corr_kind.name(),
                a.method.name(),
                a.criterion,
                a.mean_proportion,
                a.cells_succeeded,
                a.cells
            );
        }
        out
    }
}

/// Runs every condition in order and aggregates.
pub fn run_grid(conditions: &[SimCondition], reps: usize, seed: u64) -> Result<SimReport> {
    run_grid_with(conditions, reps, seed, &SimOptions::default())
}

pub fn run_grid_with(
    conditions: &[SimCondition],
    reps: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<SimReport> {
    if conditions.is_empty() {
        return Err(Error::InvalidArgument("no conditions to simulate".into()));
    }
    let cells = conditions
        .iter()
        .map(|c| run_condition_with(c, reps, seed, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimReport::from_cells(seed, reps, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigenvalues;
    use approx::assert_abs_diff_eq;

    #[test]
    fn thresholds() {
        assert_eq!(SimCondition::new(1, 3, 100, 0.5).threshold(), 0.0);
        assert_abs_diff_eq!(SimCondition::new(1, 3, 100, 0.1).threshold(), 1.281_551_565_5, epsilon = 1e-9);
    }

    #[test]
    fn every_design_block_matrix_is_positive_definite() {
        for &c in &COMPONENT_LEVELS {
            for &i in &ITEM_LEVELS {
                let min = *sym_eigenvalues(&block_correlation(c, i)).unwrap().last().unwrap();
                assert!(min > 0.0, "{c}x{i}: {min}");
            }
        }
    }

    #[test]
    fn grid_shape() {
        let g = full_grid(CorrelationKind::Pearson, ExtractionMethod::Pca);
        assert_eq!(g.len(), 108);
        assert!(g.iter().all(|c| c.validate().is_ok()));
        assert!(SimCondition::new(1, 3, 100, 1.0).validate().is_err());
    }

    #[test]
    fn same_data_across_analysis_factors() {
        let a = SimCondition::new(3, 3, 100, 0.25);
        let b = a.with_analysis(CorrelationKind::Tetrachoric, ExtractionMethod::Paf);
        assert_eq!(a.data_key(), b.data_key());
    }

    #[test]
    fn single_rep_is_deterministic() {
        let cond = SimCondition::new(3, 5, 250, 0.25);
        let a = run_condition(&cond, 1, 7).unwrap();
        let b = run_condition(&cond, 1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_condition_grid_aggregate_equals_cell() {
        let cond = SimCondition::new(1, 5, 250, 0.25);
        let report = run_grid(&[cond], 5, 3).unwrap();
        for c in CriterionKind::ALL {
            assert_eq!(
                report.aggregate_for(c).unwrap().mean_proportion,
                report.cells[0].criterion(c).proportion_correct
            );
        }
        assert_eq!(report.aggregate.len(), 4);
        assert!(run_grid(&[], 5, 3).is_err());
    }

    #[test]
    fn bookkeeping_and_success_flag() {
        let cond = SimCondition::new(3, 3, 100, 0.1);
        let cell = run_condition(&cond, 20, 1).unwrap();
        for c in &cell.criteria {
            assert_eq!(c.replications_run, 20);
            assert!(c.replications_converged + cell.replications_failed <= 20);
            assert_eq!(c.success, c.proportion_correct >= SUCCESS_THRESHOLD);
            assert!((0.0..=1.0).contains(&c.proportion_correct));
        }
    }

    #[test]
    fn within_subject_variants_run() {
        for (kind, method) in [
            (CorrelationKind::Tetrachoric, ExtractionMethod::Pca),
            (CorrelationKind::Pearson, ExtractionMethod::Paf),
            (CorrelationKind::Tetrachoric, ExtractionMethod::Paf),
        ] {
            let cond = SimCondition::new(1, 5, 250, 0.25).with_analysis(kind, method);
            let cell = run_condition_with(
                &cond,
                4,
                2,
                &SimOptions { parallel: ParallelAnalysis { reps: 20, percentile: 0.95 } },
            )
            .unwrap();
            assert_eq!(cell.criteria.len(), 4);
            let kaiser = cell.criterion(CriterionKind::Kaiser);
            assert!(kaiser.replications_converged > 0, "{kind:?} {method:?}");
        }
    }
}
