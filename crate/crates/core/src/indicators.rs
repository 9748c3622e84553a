//! Missingness indicators and pattern tabulation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Suffix appended to a source column name to name its indicator.
pub const INDICATOR_SUFFIX: &str = "_m";

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// `None` and NaN both mean missing.
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none_or(f64::is_nan),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Categorical(values),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.data, ColumnData::Numeric(_))
    }

    /// Cell rendered as text, `None` when missing.
    pub fn label(&self, row: usize) -> Option<String> {
        if self.data.is_missing(row) {
            return None;
        }
        match &self.data {
            ColumnData::Numeric(v) => v[row].map(|x| format!("{x}")),
            ColumnData::Categorical(v) => v[row].clone(),
        }
    }
}

/// Rectangular table of observed variables with unique column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.data.len());
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
            if c.data.len() != n_rows {
                return Err(Error::Ragged {
                    name: c.name.clone(),
                    len: c.data.len(),
                    expected: n_rows,
                });
            }
        }
        Ok(Self { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// New dataset holding only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: c.data.select(rows),
                })
                .collect(),
            n_rows: rows.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    AllObserved,
    AllMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

/// n×k binary matrix, 1 = missing. Every retained column has a marginal
/// strictly between 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    marginals: Vec<f64>,
    dropped: Vec<DroppedColumn>,
}

impl IndicatorMatrix {
    /// Builds from an n×p 0/1 matrix, moving zero-variance columns to the
    /// dropped list.
    pub fn from_binary(names: Vec<String>, values: &DMatrix<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("indicator entries must be 0 or 1".into()));
        }
        let n = values.nrows();
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        let mut marginals = Vec::new();
        for (j, name) in names.into_iter().enumerate() {
            let ones = values.column(j).sum();
            if ones == 0.0 {
                dropped.push(DroppedColumn { name, reason: DropReason::AllObserved });
            } else if ones == n as f64 {
                dropped.push(DroppedColumn { name, reason: DropReason::AllMissing });
            } else {
                keep.push((j, name));
                marginals.push(ones / n as f64);
            }
        }
        let kept = DMatrix::from_fn(n, keep.len(), |i, c| values[(i, keep[c].0)]);
        Ok(Self {
            values: kept,
            column_names: keep.into_iter().map(|(_, n)| n).collect(),
            marginals,
            dropped,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn dropped_columns(&self) -> &[DroppedColumn] {
        &self.dropped
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.values[(row, col)] == 1.0
    }

    /// Rows missing on every retained indicator.
    pub fn fully_missing_rows(&self) -> Vec<bool> {
        (0..self.n_rows())
            .map(|i| self.values.row(i).iter().all(|&v| v == 1.0))
            .collect()
    }

    /// Bit pattern of a row, leftmost character = first column.
    pub fn pattern(&self, row: usize) -> String {
        self.values
            .row(row)
            .iter()
            .map(|&v| if v == 1.0 { '1' } else { '0' })
            .collect()
    }
}

/// Step 1: one indicator per selected column, 1 = missing.
pub fn build_indicators(data: &Dataset, selected_columns: &[String]) -> Result<IndicatorMatrix> {
    if selected_columns.is_empty() {
        return Err(Error::InvalidArgument("no columns selected".into()));
    }
    let cols = selected_columns
        .iter()
        .map(|name| data.column(name))
        .collect::<Result<Vec<_>>>()?;
    let n = data.n_rows();
    let values = DMatrix::from_fn(n, cols.len(), |i, j| {
        if cols[j].data.is_missing(i) {
            1.0
        } else {
            0.0
        }
    });
    let names = selected_columns
        .iter()
        .map(|s| format!("{s}{INDICATOR_SUFFIX}"))
        .collect();
    let ind = IndicatorMatrix::from_binary(names, &values)?;
    if ind.n_cols() == 0 {
        return Err(Error::EmptyIndicators);
    }
    Ok(ind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub rank: usize,
    pub pattern: String,
    pub n_missing_vars: usize,
    pub count: usize,
    /// Fraction of the percent base.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub rows: Vec<PatternRow>,
    /// `2^k - 1`, saturating.
    pub max_possible: u128,
    pub n_observed_patterns: usize,
    pub n_fully_missing: usize,
    pub dropped_fully_missing: bool,
    /// Denominator used for `percent`.
    pub base: usize,
}

pub fn max_patterns(k: usize) -> u128 {
    if k >= 128 {
        u128::MAX
    } else {
        (1u128 << k) - 1
    }
}

/// Tabulates distinct missingness patterns. With `drop_fully_missing`, rows
/// missing on every indicator are left out of both the table and the
/// percent base.
pub fn tabulate_patterns(ind: &IndicatorMatrix, drop_fully_missing: bool) -> PatternTable {
    let k = ind.n_cols();
    let all_ones: String = "1".repeat(k);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_fully_missing = 0;
    for i in 0..ind.n_rows() {
        let p = ind.pattern(i);
        if p == all_ones {
            n_fully_missing += 1;
            if drop_fully_missing {
                continue;
            }
        }
        *counts.entry(p).or_default() += 1;
    }
    let base = if drop_fully_missing {
        ind.n_rows() - n_fully_missing
    } else {
        ind.n_rows()
    };
    let mut rows: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is lexicographic, so a stable sort on count keeps
    // the pattern-string tie break.
    rows.sort_by(|a, b| b.1.cmp(&a.1));
    let rows: Vec<PatternRow> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (pattern, count))| PatternRow {
            rank: i + 1,
            n_missing_vars: pattern.bytes().filter(|&b| b == b'1').count(),
            pattern,
            count,
            percent: if base == 0 { 0.0 } else { count as f64 / base as f64 },
        })
        .collect();
    PatternTable {
        n_observed_patterns: rows.len(),
        rows,
        max_possible: max_patterns(k),
        n_fully_missing,
        dropped_fully_missing: drop_fully_missing,
        base,
    }
}

impl PatternTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,pattern,n_missing_vars,count,percent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.rank, r.pattern, r.n_missing_vars, r.count, r.percent
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| Freq. Rank | Missing on Variables | # of Var. with Mis. | Freq. | % of Cases |"
        );
        let _ = writeln!(out, "|---:|:---|---:|---:|---:|");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | `{}` | {} | {} | {:.1}% |",
                r.rank,
                r.pattern,
                r.n_missing_vars,
                r.count,
                100.0 * r.percent
            );
        }
        let _ = writeln!(
            out,
            "\n{} observed patterns of {} possible; base N = {}; {} case(s) missing on all variables{}.",
            self.n_observed_patterns,
            self.max_possible,
            self.base,
            self.n_fully_missing,
            if self.dropped_fully_missing { " (excluded)" } else { "" }
        );
        out
    }
}
