//! Synthetic panel with attrition driven by one latent dropout propensity.
//! Handy for examples and end-to-end tests of the analysis pipeline.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::indicators::{Column, Dataset};
use crate::rng::stream_rng;
use crate::stats::norm_quantile;

/// Missingness rates of waves y1..y5.
pub const WAVE_MISSINGNESS: [f64; 5] = [0.26, 0.29, 0.32, 0.35, 0.38];
/// Loading of each wave's latent missingness on the shared propensity.
pub const PROPENSITY_LOADING: f64 = 0.8;

/// Columns: `y0` (always observed), `y1`..`y5` (missing when the latent
/// propensity plus wave noise exceeds its threshold), covariate `x`
/// (correlated with the propensity) and categorical `arm`.
pub fn attrition_panel(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, &[0]);
    let noise_sd = (1.0 - PROPENSITY_LOADING * PROPENSITY_LOADING).sqrt();
    let thresholds: Vec<f64> = WAVE_MISSINGNESS.iter().map(|p| norm_quantile(1.0 - p)).collect();

    let mut waves: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); 6];
    let mut x = Vec::with_capacity(n);
    let mut arm = Vec::with_capacity(n);
    for _ in 0..n {
        let propensity: f64 = StandardNormal.sample(&mut rng);
        let intercept: f64 = 50.0 + 10.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        let slope: f64 = 2.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng);
        for (t, wave) in waves.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = intercept + slope * t as f64 + 3.0 * e;
            let observed = if t == 0 {
                true
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                PROPENSITY_LOADING * propensity + noise_sd * z <= thresholds[t - 1]
            };
            wave.push(observed.then_some(y));
        }
        let ex: f64 = StandardNormal.sample(&mut rng);
        x.push(Some(0.5 * propensity + 0.75_f64.sqrt() * ex));
        let treated = rng.random_bool(0.5);
        arm.push(Some(if treated { "treatment" } else { "control" }.to_string()));
    }

    let mut columns: Vec<Column> = waves
        .into_iter()
        .enumerate()
        .map(|(t, v)| Column::numeric(format!("y{t}"), v))
        .collect();
    columns.push(Column::numeric("x", x));
    columns.push(Column::categorical("arm", arm));
    Dataset::new(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::build_indicators;

    #[test]
    fn shape_and_missingness() {
        let data = attrition_panel(20_000, 5).unwrap();
        assert_eq!(data.n_rows(), 20_000);
        assert_eq!(data.n_cols(), 8);
        let names: Vec<String> = (0..6).map(|t| format!("y{t}")).collect();
        let ind = build_indicators(&data, &names).unwrap();
        // y0 never missing
        assert_eq!(ind.n_cols(), 5);
        for (m, p) in ind.marginals().iter().zip(WAVE_MISSINGNESS) {
            assert!((m - p).abs() < 0.015, "{m} vs {p}");
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(attrition_panel(50, 9).unwrap(), attrition_panel(50, 9).unwrap());
    }
}
