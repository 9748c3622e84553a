use std::path::Path;

use anyhow::{bail, Context};
use misspattern::retention::ParallelAnalysis;
use misspattern::simulation::{
    full_grid, run_condition_with, SimCondition, SimOptions, SimReport, MISSING_LEVELS, SAMPLE_SIZE_LEVELS,
};
use misspattern::{CorrelationKind, ExtractionMethod};
use serde::Serialize;

use crate::analyze::{to_json, SCHEMA_VERSION, TOOL_VERSION};

/// Which cells to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    /// `(components, items per component)` pairs; ignored with `full`.
    pub cells: Vec<(usize, usize)>,
    /// Sample sizes; empty means every design level.
    pub n: Vec<usize>,
    /// Missingness probabilities; empty means every design level.
    pub p_miss: Vec<f64>,
    pub corr_kind: CorrelationKind,
    pub method: ExtractionMethod,
    pub full: bool,
    /// Add the other three correlation/method combinations.
    pub within: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells: Vec::new(),
            n: Vec::new(),
            p_miss: Vec::new(),
            corr_kind: CorrelationKind::Pearson,
            method: ExtractionMethod::Pca,
            full: false,
            within: false,
        }
    }
}

/// Parses `3x5` as three components of five items.
pub fn parse_cell(s: &str) -> anyhow::Result<(usize, usize)> {
    let (c, i) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("cell `{s}` is not of the form <components>x<items>"))?;
    let c = c.trim().parse().with_context(|| format!("bad component count in `{s}`"))?;
    let i = i.trim().parse().with_context(|| format!("bad item count in `{s}`"))?;
    Ok((c, i))
}

impl GridSpec {
    pub fn conditions(&self) -> anyhow::Result<Vec<SimCondition>> {
        let analyses: Vec<(CorrelationKind, ExtractionMethod)> = if self.within {
            vec![
                (CorrelationKind::Pearson, ExtractionMethod::Pca),
                (CorrelationKind::Pearson, ExtractionMethod::Paf),
                (CorrelationKind::Tetrachoric, ExtractionMethod::Pca),
                (CorrelationKind::Tetrachoric, ExtractionMethod::Paf),
            ]
        } else {
            vec![(self.corr_kind, self.method)]
        };
        let mut out = Vec::new();
        for (corr, method) in analyses {
            if self.full {
                out.extend(full_grid(corr, method));
                continue;
            }
            if self.cells.is_empty() {
                bail!("select cells with --cell or the whole design with --full");
            }
            let ns: &[usize] = if self.n.is_empty() { &SAMPLE_SIZE_LEVELS } else { &self.n };
            let ps: &[f64] = if self.p_miss.is_empty() { &MISSING_LEVELS } else { &self.p_miss };
            for &(c, i) in &self.cells {
                for &n in ns {
                    for &p in ps {
                        let cond = SimCondition::new(c, i, n, p).with_analysis(corr, method);
                        cond.validate()?;
                        out.push(cond);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub report: SimReport,
    pub grid_csv: String,
    pub aggregate_csv: String,
    pub manifest: String,
}

#[derive(Serialize)]
struct SimManifest<'a> {
    schema_version: u32,
    tool_version: &'a str,
    seed: u64,
    reps: usize,
    pa_reps: usize,
    grid: &'a GridSpec,
    cells: usize,
    outputs: [&'a str; 3],
}

/// Runs the selected cells in order. `progress` is called after each cell
/// with its index and the cell count.
pub fn simulate(
    spec: &GridSpec,
    reps: usize,
    seed: u64,
    pa_reps: usize,
    mut progress: impl FnMut(usize, usize, &SimCondition),
) -> anyhow::Result<SimulationRun> {
    let conditions = spec.conditions()?;
    let options = SimOptions {
        parallel: ParallelAnalysis {
            reps: pa_reps,
            percentile: 0.95,
        },
    };
    let mut cells = Vec::with_capacity(conditions.len());
    for (idx, cond) in conditions.iter().enumerate() {
        cells.push(run_condition_with(cond, reps, seed, &options).with_context(|| {
            format!(
                "simulation cell {}x{} n={} p_miss={}",
                cond.n_components, cond.items_per_component, cond.n, cond.p_miss
            )
        })?);
        progress(idx + 1, conditions.len(), cond);
    }
    let report = SimReport::from_cells(seed, reps, cells);
    let manifest = to_json(&SimManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        seed,
        reps,
        pa_reps,
        grid: spec,
        cells: report.cells.len(),
        outputs: ["grid.csv", "aggregate.csv", "manifest.json"],
    })?;
    Ok(SimulationRun {
        grid_csv: report.grid_csv(),
        aggregate_csv: report.aggregate_csv(),
        report,
        manifest,
    })
}

impl SimulationRun {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (name, contents) in [
            ("grid.csv", &self.grid_csv),
            ("aggregate.csv", &self.aggregate_csv),
            ("manifest.json", &self.manifest),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    }
}
