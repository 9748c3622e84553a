use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic_columns, LogisticFit};
use super::screen::{screen, ScreenResult};
use crate::error::{Error, Result};
use crate::indicators::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StratumOutcome {
    Tested {
        screens: Vec<ScreenResult>,
        /// Present when predictor columns were given.
        fit: Option<LogisticFit>,
        fit_note: Option<String>,
    },
    NotTestable {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub level: String,
    pub n: usize,
    pub outcome: StratumOutcome,
}

/// Step 8: screens and (optionally) a logistic fit repeated within each
/// level of `strata`. Rows with a missing stratum are skipped. Levels are
/// reported in sorted order.
pub fn stratified_rerun(
    data: &Dataset,
    flag: &[u8],
    strata: &str,
    variables: &[String],
    predictors: &[String],
) -> Result<Vec<StratumReport>> {
    if flag.len() != data.n_rows() {
        return Err(Error::Dimension(format!(
            "flag has {} rows, data has {}",
            flag.len(),
            data.n_rows()
        )));
    }
    let column = data.column(strata)?;
    let mut levels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..data.n_rows() {
        if let Some(label) = column.label(i) {
            levels.entry(label).or_default().push(i);
        }
    }
    if levels.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "stratifying column `{strata}` needs at least 2 levels, found {}",
            levels.len()
        )));
    }
    levels
        .into_iter()
        .map(|(level, rows)| {
            let sub = data.select_rows(&rows);
            let sub_flag: Vec<u8> = rows.iter().map(|&i| flag[i]).collect();
            let outcome = if !sub_flag.contains(&0) || !sub_flag.contains(&1) {
                StratumOutcome::NotTestable {
                    reason: "component flag is constant in this stratum".into(),
                }
            } else {
                let screens = screen(&sub, &sub_flag, variables)?;
                let (fit, fit_note) = if predictors.is_empty() {
                    (None, None)
                } else {
                    match fit_logistic_columns(&sub, &sub_flag, predictors) {
                        Ok(fit) => (Some(fit), None),
                        Err(Error::SingleClass(msg)) => (None, Some(msg)),
                        Err(e) => return Err(e),
                    }
                };
                StratumOutcome::Tested { screens, fit, fit_note }
            };
            Ok(StratumReport {
                level,
                n: rows.len(),
                outcome,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::Column;

    fn data(levels: &[&str], x: &[f64]) -> Dataset {
        Dataset::new(vec![
            Column::categorical("arm", levels.iter().map(|s| Some(s.to_string())).collect()),
            Column::numeric("x", x.iter().map(|&v| Some(v)).collect()),
        ])
        .unwrap()
    }

    #[test]
    fn identical_strata_give_identical_results() {
        let x = [1.0, 2.0, 4.0, 3.0, 5.0, 9.0, 1.0, 2.0, 4.0, 3.0, 5.0, 9.0];
        let arms = ["a", "a", "a", "a", "a", "a", "b", "b", "b", "b", "b", "b"];
        let flag = [0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1];
        let d = data(&arms, &x);
        let out = stratified_rerun(&d, &flag, "arm", &["x".into()], &["x".into()]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].outcome, out[1].outcome);
        assert_eq!((out[0].level.as_str(), out[1].level.as_str()), ("a", "b"));
    }

    #[test]
    fn constant_flag_stratum_is_marked() {
        let d = data(&["a", "a", "a", "b", "b", "b"], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = stratified_rerun(&d, &[0, 0, 0, 0, 1, 1], "arm", &["x".into()], &[]).unwrap();
        assert!(matches!(out[0].outcome, StratumOutcome::NotTestable { .. }));
        assert!(matches!(out[1].outcome, StratumOutcome::Tested { .. }));
    }

    #[test]
    fn needs_two_levels() {
        let d = data(&["a", "a"], &[1.0, 2.0]);
        assert!(stratified_rerun(&d, &[0, 1], "arm", &[], &[]).is_err());
    }
}
