//! The eight-step pipeline: indicators and patterns, correlation and
//! spectrum, retention, extraction and scores, dichotomization, screens,
//! logistic fits, and stratified reruns.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use misspattern::correlation::{correlation_registry, repair_pd};
use misspattern::extraction::{
    extraction_registry, loadings_csv, ComponentScores, loadings_markdown, scores_with_cutoff, ExtractionMethod,
};
use misspattern::indicators::{build_indicators, tabulate_patterns, Column, Dataset, DroppedColumn, PatternTable};
use misspattern::mechanism::{
    fit_logistic_columns, screen, stratified_rerun, LogisticFit, ScreenResult, StratumOutcome, StratumReport,
};
use misspattern::retention::{
    criteria_registry, diagnostics_csv, guidance, CriterionKind, ParallelAnalysis, RetentionDecision,
    RetentionInput,
};
use misspattern::{CorrelationKind, Error, IndicatorMatrix};
use serde::Serialize;

use crate::config::{CriterionChoice, OutputFormat, RunConfig};
use crate::ingest::{ingest, CoercedColumn, IngestOptions};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedStep {
    pub step: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionSummary {
    pub criterion: CriterionKind,
    pub k_retained: Option<usize>,
    pub converged: Option<bool>,
    pub dropped_replications: usize,
    pub error: Option<String>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationSummary {
    pub kind: CorrelationKind,
    pub pd_repaired: bool,
    pub min_eigenvalue_before_repair: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionSummary {
    pub method: ExtractionMethod,
    pub converged: bool,
    pub iterations: usize,
    pub heywood: bool,
    pub eigenvalues: Vec<f64>,
    /// Oriented loadings, one row per indicator.
    pub loadings: Vec<Vec<f64>>,
    pub flipped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: String,
    pub fit: LogisticFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: usize,
    /// Rows entering the mechanism steps (fully missing rows excluded).
    pub n_analyzed: usize,
    pub n_flagged: usize,
    pub screens: Vec<ScreenResult>,
    pub models: Vec<ModelReport>,
    pub strata: Option<Vec<StratumReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub n_rows: usize,
    pub n_columns: usize,
    pub coerced: Vec<CoercedColumn>,
    pub indicators: Vec<String>,
    pub dropped_columns: Vec<DroppedColumn>,
    pub n_fully_missing_rows: usize,
    pub patterns: PatternTable,
    pub correlation: CorrelationSummary,
    pub retention_eigenvalues: Vec<f64>,
    pub criteria: Vec<CriterionSummary>,
    pub selected_criterion: CriterionKind,
    pub components_retained: usize,
    pub extraction: Option<ExtractionSummary>,
    pub components: Vec<ComponentReport>,
    /// Labels of logistic models flagged for separation.
    pub separation: Vec<String>,
    pub skipped_steps: Vec<SkippedStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool_version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    n_rows: usize,
    n_columns: usize,
    coerced: &'a [CoercedColumn],
    indicators: &'a [String],
    dropped_columns: &'a [DroppedColumn],
    pd_repaired: bool,
    criteria: &'a [CriterionSummary],
    selected_criterion: CriterionKind,
    components_retained: usize,
    separation: &'a [String],
    skipped_steps: &'a [SkippedStep],
    outputs: Vec<&'a str>,
}

/// Everything a run produces: the structured report and the rendered
/// files, in write order.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub files: Vec<(String, String)>,
}

impl Analysis {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    }
}

/// Fills in an explicit seed so the emitted config reproduces the run.
pub fn resolve_seed(config: &RunConfig) -> RunConfig {
    let mut resolved = config.clone();
    resolved.seed.get_or_insert_with(rand::random);
    resolved
}

/// Runs the pipeline and writes every artifact to `config.output_dir`.
pub fn run(config: &RunConfig) -> anyhow::Result<Analysis> {
    let analysis = analyze(config)?;
    analysis.write(&analysis.report.config.output_dir).context("writing outputs")?;
    Ok(analysis)
}

pub fn analyze(config: &RunConfig) -> anyhow::Result<Analysis> {
    let config = resolve_seed(config);
    config.validate().context("configuration")?;
    let options = IngestOptions {
        sentinels: config.missing_sentinels.clone(),
        delimiter: config.delimiter as u8,
    };
    let ingested = ingest(&config.input_path, &options).context("ingest")?;
    analyze_dataset(&config, ingested.dataset, ingested.coerced)
}

/// Pipeline on an already loaded dataset. `config.seed` must be set.
pub fn analyze_dataset(
    config: &RunConfig,
    data: Dataset,
    coerced: Vec<CoercedColumn>,
) -> anyhow::Result<Analysis> {
    let seed = config.seed.context("configuration: seed must be resolved")?;
    let mut skipped = Vec::new();

    let selection = config.columns.clone().unwrap_or_else(|| data.column_names());
    let ind = build_indicators(&data, &selection).map_err(|e| match e {
        Error::EmptyIndicators => anyhow::anyhow!("no selected column has missing values, nothing to analyze"),
        other => other.into(),
    });
    let ind = ind.context("step 1 (missingness indicators)")?;
    let patterns = tabulate_patterns(&ind, config.drop_fully_missing_patterns);

    let corr = correlation_registry()
        .get(config.correlation_kind.name())
        .and_then(|est| est.estimate(&ind))
        .and_then(|c| repair_pd(&c))
        .context("step 2 (correlation)")?;
    let extractors = extraction_registry();
    let extractor = extractors
        .get(config.extraction_method.name())
        .context("step 2 (extraction)")?;
    let eigenvalues = extractor
        .retention_eigenvalues(&corr)
        .context("step 2 (eigenvalues)")?;

    let selected_criterion = match config.criterion {
        CriterionChoice::Fixed(k) => k,
        CriterionChoice::Auto => guidance(
            ind.n_rows(),
            config.items_per_component.expect("validated"),
            config.expected_components.expect("validated"),
        ),
    };
    let registry = criteria_registry(ParallelAnalysis {
        reps: config.pa_reps,
        percentile: config.percentile,
    });
    let input = RetentionInput::new(&eigenvalues, ind.n_rows())
        .with_indicators(&ind)
        .reduced(config.extraction_method == ExtractionMethod::Paf)
        .seed(seed);
    let mut decisions: Vec<RetentionDecision> = Vec::new();
    let mut criteria = Vec::new();
    for kind in CriterionKind::ALL {
        let outcome = registry.get(kind.name()).and_then(|c| c.decide(&input));
        let selected = kind == selected_criterion;
        match outcome {
            Ok(d) => {
                criteria.push(CriterionSummary {
                    criterion: kind,
                    k_retained: Some(d.k_retained),
                    converged: Some(d.converged),
                    dropped_replications: d.dropped_replications,
                    error: None,
                    selected,
                });
                decisions.push(d);
            }
            Err(e) if selected => return Err(e).context(format!("step 3 (retention, {kind})")),
            Err(e) => {
                skipped.push(SkippedStep {
                    step: format!("step 3 (retention, {kind})"),
                    reason: e.to_string(),
                });
                criteria.push(CriterionSummary {
                    criterion: kind,
                    k_retained: None,
                    converged: None,
                    dropped_replications: 0,
                    error: Some(e.to_string()),
                    selected,
                });
            }
        }
    }
    let q = criteria
        .iter()
        .find(|c| c.selected)
        .and_then(|c| c.k_retained)
        .expect("selected criterion succeeded");

    let mut extraction = None;
    let mut components = Vec::new();
    let mut loadings_files = None;
    let mut scores_file = None;
    let k = ind.n_cols();
    let later = "steps 4-8 (extraction, scores, screens, logistic fits, strata)";
    if q == 0 {
        skipped.push(SkippedStep {
            step: later.into(),
            reason: format!("{selected_criterion} retained no components"),
        });
    } else if config.extraction_method == ExtractionMethod::Paf && q >= k {
        skipped.push(SkippedStep {
            step: later.into(),
            reason: format!("factoring needs fewer factors than indicators, {selected_criterion} retained {q} of {k}"),
        });
    } else {
        let sol = extractor.extract(&corr, q).context("step 4 (extraction)")?;
        if !sol.converged {
            skipped.push(SkippedStep {
                step: "step 4 (extraction convergence)".into(),
                reason: format!(
                    "factoring did not converge in {} iterations; loadings are from the last iterate",
                    sol.iterations
                ),
            });
        }
        let sc = scores_with_cutoff(&ind, &sol, q, config.cutoff).context("step 4 (component scores)")?;
        let names = ind.column_names().to_vec();
        loadings_files = Some((loadings_csv(&names, &sc.loadings), loadings_markdown(&names, &sc.loadings)));
        scores_file = Some(scores_csv(&sc));
        extraction = Some(ExtractionSummary {
            method: sol.method,
            converged: sol.converged,
            iterations: sol.iterations,
            heywood: sol.heywood,
            eigenvalues: sol.eigenvalues.clone(),
            loadings: (0..sc.loadings.nrows())
                .map(|i| sc.loadings.row(i).iter().copied().collect())
                .collect(),
            flipped: sc.flipped.clone(),
        });

        let (aug, indicator_names) = augmented(&data, &ind).context("step 6 (screen inputs)")?;
        let keep: Vec<usize> = (0..ind.n_rows()).filter(|&i| !sc.fully_missing[i]).collect();
        let sub = aug.select_rows(&keep);
        let screen_vars: Vec<String> = config
            .screen_columns
            .clone()
            .unwrap_or_else(|| data.column_names())
            .into_iter()
            .chain(indicator_names.iter().cloned())
            .collect();
        for (j, flags) in sc.dichotomized.iter().enumerate() {
            let component = j + 1;
            let flag: Vec<u8> = keep.iter().map(|&i| flags[i]).collect();
            let n_flagged = flag.iter().filter(|&&f| f == 1).count();
            if n_flagged == 0 || n_flagged == flag.len() {
                skipped.push(SkippedStep {
                    step: format!("steps 6-8 (component {component})"),
                    reason: format!(
                        "dichotomized component is constant ({n_flagged} of {} flagged) at cutoff {}",
                        flag.len(),
                        config.cutoff
                    ),
                });
                components.push(ComponentReport {
                    component,
                    n_analyzed: flag.len(),
                    n_flagged,
                    screens: Vec::new(),
                    models: Vec::new(),
                    strata: None,
                });
                continue;
            }
            let screens = screen(&sub, &flag, &screen_vars).with_context(|| format!("step 6 (screens, component {component})"))?;

            let mut models = Vec::new();
            let mut fit = |label: String, columns: &[String]| -> anyhow::Result<()> {
                let f = fit_logistic_columns(&sub, &flag, columns)
                    .with_context(|| format!("step 7 (logistic, component {component}, {label})"))?;
                models.push(ModelReport { model: label, fit: f });
                Ok(())
            };
            for name in &indicator_names {
                fit(format!("simple {name}"), std::slice::from_ref(name))?;
            }
            fit("all indicators".into(), &indicator_names)?;
            if !config.covariate_columns.is_empty() {
                fit("covariates".into(), &config.covariate_columns)?;
            }

            let strata = match &config.strata_column {
                Some(col) => {
                    let predictors: Vec<String> = indicator_names
                        .iter()
                        .chain(&config.covariate_columns)
                        .cloned()
                        .collect();
                    Some(
                        stratified_rerun(&sub, &flag, col, &screen_vars, &predictors)
                            .with_context(|| format!("step 8 (strata `{col}`, component {component})"))?,
                    )
                }
                None => None,
            };
            components.push(ComponentReport {
                component,
                n_analyzed: flag.len(),
                n_flagged,
                screens,
                models,
                strata,
            });
        }
        if config.strata_column.is_none() {
            skipped.push(SkippedStep {
                step: "step 8 (strata)".into(),
                reason: "no strata column configured".into(),
            });
        }
    }

    let separation = separation_labels(&components);
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        seed,
        config: config.clone(),
        n_rows: data.n_rows(),
        n_columns: data.n_cols(),
        coerced,
        indicators: ind.column_names().to_vec(),
        dropped_columns: ind.dropped_columns().to_vec(),
        n_fully_missing_rows: ind.fully_missing_rows().iter().filter(|&&f| f).count(),
        patterns,
        correlation: CorrelationSummary {
            kind: corr.kind,
            pd_repaired: corr.pd_repaired,
            min_eigenvalue_before_repair: corr.min_eigenvalue_before_repair,
        },
        retention_eigenvalues: eigenvalues.clone(),
        criteria,
        selected_criterion,
        components_retained: q,
        extraction,
        components,
        separation,
        skipped_steps: skipped,
    };

    let mut files: Vec<(String, String)> = Vec::new();
    if config.wants(OutputFormat::Csv) {
        files.push(("patterns.csv".into(), report.patterns.to_csv()));
        if let Some((csv, _)) = &loadings_files {
            files.push(("loadings.csv".into(), csv.clone()));
        }
        files.push(("retention.csv".into(), diagnostics_csv(&eigenvalues, &decisions)));
        if let Some(s) = scores_file {
            files.push(("scores.csv".into(), s));
        }
        files.push(("screens.csv".into(), screens_csv(&report.components)));
        files.push(("logistic.csv".into(), logistic_csv(&report.components)));
    }
    if config.wants(OutputFormat::Md) {
        files.push(("patterns.md".into(), report.patterns.to_markdown()));
        if let Some((_, md)) = &loadings_files {
            files.push(("loadings.md".into(), md.clone()));
        }
        files.push(("retention.md".into(), retention_markdown(&report)));
    }
    if config.wants(OutputFormat::Json) {
        files.push(("report.json".into(), to_json(&report)?));
    }
    let mut outputs: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    outputs.push("manifest.json");
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        seed,
        config: &report.config,
        n_rows: report.n_rows,
        n_columns: report.n_columns,
        coerced: &report.coerced,
        indicators: &report.indicators,
        dropped_columns: &report.dropped_columns,
        pd_repaired: report.correlation.pd_repaired,
        criteria: &report.criteria,
        selected_criterion,
        components_retained: q,
        separation: &report.separation,
        skipped_steps: &report.skipped_steps,
        outputs,
    };
    let manifest = to_json(&manifest)?;
    files.push(("manifest.json".into(), manifest));
    Ok(Analysis { report, files })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value).context("serializing report")?;
    s.push('\n');
    Ok(s)
}

/// The input plus one categorical 0/1 column per indicator, so screens
/// and fits can address indicators by name.
fn augmented(data: &Dataset, ind: &IndicatorMatrix) -> anyhow::Result<(Dataset, Vec<String>)> {
    let mut columns = data.columns().to_vec();
    let names = ind.column_names().to_vec();
    for (j, name) in names.iter().enumerate() {
        if data.column(name).is_ok() {
            bail!("input already has a column named `{name}`");
        }
        let labels = (0..ind.n_rows())
            .map(|i| Some(if ind.is_missing(i, j) { "1" } else { "0" }.to_string()))
            .collect();
        columns.push(Column::categorical(name.clone(), labels));
    }
    Ok((Dataset::new(columns)?, names))
}

fn separation_labels(components: &[ComponentReport]) -> Vec<String> {
    let mut out = Vec::new();
    for c in components {
        for m in &c.models {
            if m.fit.separated {
                out.push(format!("component {}: {}", c.component, m.model));
            }
        }
        for s in c.strata.iter().flatten() {
            if let StratumOutcome::Tested { fit: Some(fit), .. } = &s.outcome {
                if fit.separated {
                    out.push(format!("component {}: stratum {}", c.component, s.level));
                }
            }
        }
    }
    out
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn scores_csv(sc: &ComponentScores) -> String {
    let scores = &sc.scores;
    let q = scores.ncols();
    let mut out = String::from("row");
    for j in 1..=q {
        let _ = write!(out, ",score_{j}");
    }
    for j in 1..=q {
        let _ = write!(out, ",component_{j}");
    }
    out.push_str(",fully_missing\n");
    for i in 0..scores.nrows() {
        let _ = write!(out, "{}", i + 1);
        for j in 0..q {
            let _ = write!(out, ",{:.6}", scores[(i, j)]);
        }
        for f in &sc.dichotomized {
            let _ = write!(out, ",{}", f[i]);
        }
        let _ = writeln!(out, ",{}", u8::from(sc.fully_missing[i]));
    }
    out
}

fn push_screens(out: &mut String, component: usize, stratum: &str, screens: &[ScreenResult]) {
    for s in screens {
        let test = match s.test {
            misspattern::mechanism::ScreenTest::WelchT => "welch_t",
            misspattern::mechanism::ScreenTest::ChiSquare => "chi_square",
        };
        let _ = writeln!(
            out,
            "{component},{},{},{test},{},{},{},{},{},{},{}",
            csv_field(stratum),
            csv_field(&s.variable),
            opt(s.statistic, 4),
            opt(s.df, 2),
            opt(s.p_value, 6),
            s.testable,
            s.n_used,
            s.n_excluded,
            csv_field(s.note.as_deref().unwrap_or(""))
        );
    }
}

pub fn screens_csv(components: &[ComponentReport]) -> String {
    let mut out =
        String::from("component,stratum,variable,test,statistic,df,p_value,testable,n_used,n_excluded,note\n");
    for c in components {
        push_screens(&mut out, c.component, "", &c.screens);
        for s in c.strata.iter().flatten() {
            if let StratumOutcome::Tested { screens, .. } = &s.outcome {
                push_screens(&mut out, c.component, &s.level, screens);
            }
        }
    }
    out
}

fn push_fit(out: &mut String, component: usize, stratum: &str, model: &str, fit: &LogisticFit) {
    for (p, name) in fit.parameters.iter().enumerate() {
        let se = match &fit.standard_errors {
            Some(se) => format!("{:.4}", se[p]),
            None => "--".into(),
        };
        let _ = writeln!(
            out,
            "{component},{},{},{},{:.4},{se},{:.4},{:.4},{:.3},{:.3},{:.1},{:.1},{:.1},{},{},{}",
            csv_field(stratum),
            csv_field(model),
            csv_field(name),
            fit.coefficients[p],
            fit.log_likelihood,
            fit.lr_chi2,
            fit.pseudo_r2,
            fit.auc,
            100.0 * fit.sensitivity,
            100.0 * fit.specificity,
            100.0 * fit.correct_pct,
            fit.separated,
            fit.n,
            fit.n_excluded
        );
    }
}

/// One row per parameter; model-level statistics repeat on each row.
/// Standard errors suppressed under separation show as `--`.
pub fn logistic_csv(components: &[ComponentReport]) -> String {
    let mut out = String::from(
        "component,stratum,model,parameter,coefficient,se,log_likelihood,lr_chi2,pseudo_r2,auc,\
         sensitivity_pct,specificity_pct,correct_pct,separated,n,n_excluded\n",
    );
    for c in components {
        for m in &c.models {
            push_fit(&mut out, c.component, "", &m.model, &m.fit);
        }
        for s in c.strata.iter().flatten() {
            if let StratumOutcome::Tested { fit: Some(fit), .. } = &s.outcome {
                push_fit(&mut out, c.component, &s.level, "stratum", fit);
            }
        }
    }
    out
}

fn retention_markdown(report: &AnalysisReport) -> String {
    let mut out = String::from("| criterion | components | converged | selected |\n|---|---:|---|---|\n");
    for c in &report.criteria {
        let k = c.k_retained.map(|k| k.to_string()).unwrap_or_else(|| "n/a".into());
        let conv = c.converged.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into());
        let sel = if c.selected { "yes" } else { "" };
        let _ = writeln!(out, "| {} | {k} | {conv} | {sel} |", c.criterion);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn seed_is_filled_in() {
        let c = resolve_seed(&RunConfig::default());
        assert!(c.seed.is_some());
        let fixed = RunConfig { seed: Some(4), ..RunConfig::default() };
        assert_eq!(resolve_seed(&fixed).seed, Some(4));
    }
}
