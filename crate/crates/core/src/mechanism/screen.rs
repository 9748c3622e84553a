use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::indicators::{ColumnData, Dataset};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenTest {
    WelchT,
    ChiSquare,
}

/// Per-group descriptive statistics; index 0 is flag = 0, index 1 flag = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupSummary {
    Moments {
        n: [usize; 2],
        mean: [f64; 2],
        sd: [f64; 2],
    },
    Counts {
        levels: Vec<String>,
        counts: Vec<[usize; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub variable: String,
    pub test: ScreenTest,
    /// `None` when the variable could not be tested.
    pub statistic: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub testable: bool,
    pub note: Option<String>,
    pub groups: GroupSummary,
    /// Rows with an observed value.
    pub n_used: usize,
    /// Rows skipped because the value was missing.
    pub n_excluded: usize,
}

pub(crate) fn check_flag(flag: &[u8], n: usize) -> Result<()> {
    if flag.len() != n {
        return Err(Error::Dimension(format!("flag has {} rows, data has {n}", flag.len())));
    }
    if flag.iter().any(|&f| f > 1) {
        return Err(Error::InvalidArgument("flag entries must be 0 or 1".into()));
    }
    if !flag.contains(&0) || !flag.contains(&1) {
        return Err(Error::SingleClass("component flag is constant".into()));
    }
    Ok(())
}

/// Step 6: compares each variable between rows with flag 0 and flag 1.
/// Numeric variables get a Welch t-test, categorical ones a χ² test of
/// independence. Missing values are skipped per variable.
pub fn screen(data: &Dataset, flag: &[u8], variables: &[String]) -> Result<Vec<ScreenResult>> {
    check_flag(flag, data.n_rows())?;
    variables
        .iter()
        .map(|name| {
            let col = data.column(name)?;
            Ok(match &col.data {
                ColumnData::Numeric(values) => welch(name, values, flag),
                ColumnData::Categorical(values) => {
                    let labels: Vec<Option<String>> = values.clone();
                    chi_square(name, &labels, flag)
                }
            })
        })
        .collect()
}

/// χ² screen on an arbitrary labelled variable, e.g. a 0/1 indicator.
pub fn screen_labels(name: &str, labels: &[Option<String>], flag: &[u8]) -> Result<ScreenResult> {
    check_flag(flag, labels.len())?;
    Ok(chi_square(name, labels, flag))
}

fn welch(name: &str, values: &[Option<f64>], flag: &[u8]) -> ScreenResult {
    let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (v, &f) in values.iter().zip(flag) {
        if let Some(x) = v.filter(|x| !x.is_nan()) {
            groups[f as usize].push(x);
        }
    }
    let n_used = groups[0].len() + groups[1].len();
    let summary_of = |g: &Vec<f64>| {
        let m = if g.is_empty() { f64::NAN } else { mean(g) };
        let sd = if g.len() < 2 { f64::NAN } else { sample_variance(g).sqrt() };
        (m, sd)
    };
    let (m0, sd0) = summary_of(&groups[0]);
    let (m1, sd1) = summary_of(&groups[1]);
    let mut result = ScreenResult {
        variable: name.to_string(),
        test: ScreenTest::WelchT,
        statistic: None,
        df: None,
        p_value: None,
        testable: false,
        note: None,
        groups: GroupSummary::Moments {
            n: [groups[0].len(), groups[1].len()],
            mean: [m0, m1],
            sd: [sd0, sd1],
        },
        n_used,
        n_excluded: values.len() - n_used,
    };
    if groups[0].len() < 2 || groups[1].len() < 2 {
        result.note = Some("fewer than 2 observed values in a group".into());
        return result;
    }
    let (n0, n1) = (groups[0].len() as f64, groups[1].len() as f64);
    let (v0, v1) = (sd0 * sd0 / n0, sd1 * sd1 / n1);
    let se2 = v0 + v1;
    let diff = m1 - m0;
    let (t, df) = if se2 > 0.0 {
        let df = se2 * se2 / (v0 * v0 / (n0 - 1.0) + v1 * v1 / (n1 - 1.0));
        (diff / se2.sqrt(), df)
    } else if diff == 0.0 {
        (0.0, n0 + n1 - 2.0)
    } else {
        (diff.signum() * f64::INFINITY, n0 + n1 - 2.0)
    };
    let p = if t.is_infinite() {
        0.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    result.statistic = Some(t);
    result.df = Some(df);
    result.p_value = Some(p);
    result.testable = true;
    result
}

fn chi_square(name: &str, labels: &[Option<String>], flag: &[u8]) -> ScreenResult {
    let levels: Vec<String> = labels
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = vec![[0usize; 2]; levels.len()];
    let mut n_used = 0;
    for (l, &f) in labels.iter().zip(flag) {
        if let Some(l) = l {
            let idx = levels.binary_search(l).expect("level collected above");
            counts[idx][f as usize] += 1;
            n_used += 1;
        }
    }
    let mut result = ScreenResult {
        variable: name.to_string(),
        test: ScreenTest::ChiSquare,
        statistic: None,
        df: None,
        p_value: None,
        testable: false,
        note: None,
        groups: GroupSummary::Counts {
            levels: levels.clone(),
            counts: counts.clone(),
        },
        n_used,
        n_excluded: labels.len() - n_used,
    };
    let col_totals = [
        counts.iter().map(|c| c[0]).sum::<usize>(),
        counts.iter().map(|c| c[1]).sum::<usize>(),
    ];
    if levels.len() < 2 || col_totals.contains(&0) {
        result.note = Some("fewer than 2 observed levels or an empty group".into());
        return result;
    }
    let total = n_used as f64;
    let mut stat = 0.0;
    for row in &counts {
        let row_total = (row[0] + row[1]) as f64;
        for g in 0..2 {
            let expected = row_total * col_totals[g] as f64 / total;
            let d = row[g] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = (levels.len() - 1) as f64;
    let p = ChiSquared::new(df).expect("positive df").sf(stat);
    result.statistic = Some(stat);
    result.df = Some(df);
    result.p_value = Some(p.clamp(0.0, 1.0));
    result.testable = true;
    result
}
