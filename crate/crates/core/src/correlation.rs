//! Pearson (phi) and tetrachoric correlation matrices over binary
//! indicators, plus eigenvalue-clipping repair to positive definiteness.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::IndicatorMatrix;
use crate::linalg::{sym_eigen, sym_eigenvalues};
use crate::registry::Registry;
use crate::stats::{brent_minimize, bvn_upper, norm_quantile};

/// Smallest eigenvalue a repaired matrix is allowed to have.
pub const PD_FLOOR: f64 = 1e-6;
/// Tetrachoric estimates are confined to this magnitude.
pub const RHO_BOUND: f64 = 0.999;

const REPAIR_TARGET: f64 = 2.0 * PD_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Tetrachoric,
}

impl CorrelationKind {
    pub fn name(self) -> &'static str {
        match self {
            CorrelationKind::Pearson => "pearson",
            CorrelationKind::Tetrachoric => "tetrachoric",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: DMatrix<f64>,
    pub kind: CorrelationKind,
    /// Set when the last [`repair_pd`] pass changed the values.
    pub pd_repaired: bool,
    /// Filled in once [`repair_pd`] has inspected the spectrum.
    pub min_eigenvalue_before_repair: Option<f64>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// A way of turning an indicator matrix into a correlation matrix.
pub trait CorrelationEstimator: Send + Sync {
    fn kind(&self) -> CorrelationKind;

    fn estimate(&self, ind: &IndicatorMatrix) -> Result<CorrelationMatrix>;
}

pub struct Pearson;

impl CorrelationEstimator for Pearson {
    fn kind(&self) -> CorrelationKind {
        CorrelationKind::Pearson
    }

    fn estimate(&self, ind: &IndicatorMatrix) -> Result<CorrelationMatrix> {
        pearson(ind)
    }
}

pub struct Tetrachoric;

impl CorrelationEstimator for Tetrachoric {
    fn kind(&self) -> CorrelationKind {
        CorrelationKind::Tetrachoric
    }

    fn estimate(&self, ind: &IndicatorMatrix) -> Result<CorrelationMatrix> {
        tetrachoric(ind)
    }
}

pub fn correlation_registry() -> Registry<dyn CorrelationEstimator> {
    let mut reg: Registry<dyn CorrelationEstimator> = Registry::new("correlation kind");
    reg.register("pearson", Box::new(Pearson))
        .register("tetrachoric", Box::new(Tetrachoric));
    reg
}

/// Cross-product counts `X'X` of a 0/1 matrix: entry (i, j) is the number
/// of rows with both columns equal to 1.
/// `X'X` for a 0/1 matrix, by popcount over bit-packed columns.
pub(crate) fn cross_counts(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let words = n.div_ceil(64);
    let mut bits = vec![0u64; words * k];
    for (j, column) in x.column_iter().enumerate() {
        let packed = &mut bits[j * words..(j + 1) * words];
        for (i, &v) in column.iter().enumerate() {
            if v != 0.0 {
                packed[i / 64] |= 1 << (i % 64);
            }
        }
    }
    let mut counts = DMatrix::zeros(k, k);
    for a in 0..k {
        let col_a = &bits[a * words..(a + 1) * words];
        for b in a..k {
            let col_b = &bits[b * words..(b + 1) * words];
            let c: u32 = col_a.iter().zip(col_b).map(|(u, v)| (u & v).count_ones()).sum();
            counts[(a, b)] = f64::from(c);
            counts[(b, a)] = f64::from(c);
        }
    }
    counts
}

/// Phi coefficients from cross-product counts and column totals.
pub(crate) fn phi_from_counts(counts: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = counts.nrows();
    let n = n as f64;
    let p: Vec<f64> = (0..k).map(|i| counts[(i, i)] / n).collect();
    let sd: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).sqrt()).collect();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            let cov = counts[(i, j)] / n - p[i] * p[j];
            (cov / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    })
}

/// Product-moment correlation of the 0/1 columns.
pub fn pearson(ind: &IndicatorMatrix) -> Result<CorrelationMatrix> {
    check_pairs(ind)?;
    let counts = cross_counts(ind.values());
    for j in 0..ind.n_cols() {
        let ones = counts[(j, j)];
        if ones == 0.0 || ones == ind.n_rows() as f64 {
            return Err(Error::DegenerateColumn(ind.column_names()[j].clone()));
        }
    }
    Ok(CorrelationMatrix {
        values: phi_from_counts(&counts, ind.n_rows()),
        kind: CorrelationKind::Pearson,
        pd_repaired: false,
        min_eigenvalue_before_repair: None,
    })
}

fn check_pairs(ind: &IndicatorMatrix) -> Result<()> {
    if ind.n_cols() < 2 {
        return Err(Error::Dimension(format!(
            "correlation needs at least 2 indicators, got {}",
            ind.n_cols()
        )));
    }
    Ok(())
}

/// 2×2 table of two binary variables: `n11` both 1, `n10` first only,
/// `n01` second only, `n00` neither.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourfoldTable {
    pub n11: f64,
    pub n10: f64,
    pub n01: f64,
    pub n00: f64,
}

impl FourfoldTable {
    pub fn new(n11: f64, n10: f64, n01: f64, n00: f64) -> Self {
        Self { n11, n10, n01, n00 }
    }

    fn has_zero(&self) -> bool {
        [self.n11, self.n10, self.n01, self.n00].contains(&0.0)
    }

    fn smoothed(self) -> Self {
        if self.has_zero() {
            Self::new(self.n11 + 0.5, self.n10 + 0.5, self.n01 + 0.5, self.n00 + 0.5)
        } else {
            self
        }
    }

    fn total(&self) -> f64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

/// Two-step ML tetrachoric correlation of one 2×2 table: thresholds from
/// the margins, then a bounded scalar search on the multinomial
/// log-likelihood. Tables with an empty cell get 0.5 added to every cell.
/// Returns `None` when the likelihood is not finite at the optimum.
pub fn tetrachoric_pair(table: FourfoldTable) -> Option<f64> {
    let t = table.smoothed();
    let total = t.total();
    if !(total > 0.0) {
        return None;
    }
    let p1 = (t.n11 + t.n10) / total;
    let p2 = (t.n11 + t.n01) / total;
    if !(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0) {
        return None;
    }
    // latent z > tau  <=>  indicator = 1
    let tau1 = norm_quantile(1.0 - p1);
    let tau2 = norm_quantile(1.0 - p2);
    let neg_ll = |rho: f64| {
        let p11 = bvn_upper(tau1, tau2, rho);
        let cells = [
            (t.n11, p11),
            (t.n10, p1 - p11),
            (t.n01, p2 - p11),
            (t.n00, 1.0 - p1 - p2 + p11),
        ];
        let mut ll = 0.0;
        for (count, prob) in cells {
            if prob <= 0.0 {
                return f64::INFINITY;
            }
            ll += count * prob.ln();
        }
        -ll
    };
    let best = brent_minimize(neg_ll, -RHO_BOUND, RHO_BOUND, 1e-10);
    best.value
        .is_finite()
        .then(|| best.x.clamp(-RHO_BOUND, RHO_BOUND))
}

/// Pairwise tetrachoric correlations.
pub fn tetrachoric(ind: &IndicatorMatrix) -> Result<CorrelationMatrix> {
    check_pairs(ind)?;
    let k = ind.n_cols();
    let n = ind.n_rows() as f64;
    let counts = cross_counts(ind.values());
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();
    let estimates: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let n11 = counts[(i, j)];
            let n10 = counts[(i, i)] - n11;
            let n01 = counts[(j, j)] - n11;
            let n00 = n - n11 - n10 - n01;
            tetrachoric_pair(FourfoldTable::new(n11, n10, n01, n00))
                .ok_or(Error::PairEstimation(i, j))
        })
        .collect();
    let mut values = DMatrix::identity(k, k);
    for (&(i, j), est) in pairs.iter().zip(estimates) {
        let rho = est?;
        values[(i, j)] = rho;
        values[(j, i)] = rho;
    }
    Ok(CorrelationMatrix {
        values,
        kind: CorrelationKind::Tetrachoric,
        pd_repaired: false,
        min_eigenvalue_before_repair: None,
    })
}

/// Clips eigenvalues below [`PD_FLOOR`], reconstructs and rescales to unit
/// diagonal. Matrices already above the floor are returned unchanged.
pub fn repair_pd(c: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    let min_before = *sym_eigenvalues(&c.values)?
        .last()
        .expect("nonempty spectrum");
    let mut out = c.clone();
    out.min_eigenvalue_before_repair = Some(min_before);
    if min_before >= PD_FLOOR {
        out.pd_repaired = false;
        return Ok(out);
    }

    let k = c.dim();
    let eig = sym_eigen(&c.values)?;
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(REPAIR_TARGET)).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| eig.vectors[(i, j)] * clipped[j]);
    let rebuilt = &scaled * eig.vectors.transpose();
    let mut repaired = rescale_unit_diagonal(&rebuilt);

    // Rescaling can pull the smallest eigenvalue back under the floor;
    // shrinking toward the identity lifts it while keeping unit diagonal.
    let min_after = *sym_eigenvalues(&repaired)?.last().expect("nonempty spectrum");
    if min_after < REPAIR_TARGET {
        let delta = (REPAIR_TARGET - min_after) / (1.0 - REPAIR_TARGET);
        repaired = (repaired + DMatrix::identity(k, k) * delta) / (1.0 + delta);
    }
    symmetrize_unit(&mut repaired);
    out.values = repaired;
    out.pd_repaired = true;
    Ok(out)
}

fn rescale_unit_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let d: Vec<f64> = (0..k).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(k, k, |i, j| m[(i, j)] / (d[i] * d[j]))
}

fn symmetrize_unit(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        m[(i, i)] = 1.0;
        for j in i + 1..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Indicator matrix with two columns realizing a given 2×2 table.
    fn from_table(n11: usize, n10: usize, n01: usize, n00: usize) -> IndicatorMatrix {
        let mut rows = Vec::new();
        rows.extend(std::iter::repeat_n([1.0, 1.0], n11));
        rows.extend(std::iter::repeat_n([1.0, 0.0], n10));
        rows.extend(std::iter::repeat_n([0.0, 1.0], n01));
        rows.extend(std::iter::repeat_n([0.0, 0.0], n00));
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = DMatrix::from_row_slice(rows.len(), 2, &flat);
        IndicatorMatrix::from_binary(vec!["a".into(), "b".into()], &m).unwrap()
    }

    fn phi_closed_form(a: f64, b: f64, c: f64, d: f64) -> f64 {
        (a * d - b * c) / ((a + b) * (c + d) * (a + c) * (b + d)).sqrt()
    }

    #[test]
    fn phi_examples() {
        let r = |t: &IndicatorMatrix| pearson(t).unwrap().values[(0, 1)];
        assert_abs_diff_eq!(r(&from_table(10, 0, 0, 10)), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r(&from_table(25, 25, 25, 25)), 0.0, epsilon = 1e-14);
        // hand evaluation: (1600 - 100) / sqrt(50^4) = 0.6
        assert_abs_diff_eq!(phi_closed_form(40.0, 10.0, 10.0, 40.0), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(r(&from_table(40, 10, 10, 40)), 0.6, epsilon = 1e-14);
    }

    #[test]
    fn needs_two_indicators() {
        let m = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let one = IndicatorMatrix::from_binary(vec!["a".into()], &m).unwrap();
        assert!(matches!(pearson(&one), Err(Error::Dimension(_))));
        assert!(matches!(tetrachoric(&one), Err(Error::Dimension(_))));
    }

    #[test]
    fn tetrachoric_independence_is_zero() {
        let rho = tetrachoric_pair(FourfoldTable::new(25.0, 25.0, 25.0, 25.0)).unwrap();
        assert!(rho.abs() < 1e-6, "{rho}");
    }

    #[test]
    fn tetrachoric_zero_cell_is_finite_and_clipped() {
        let rho = tetrachoric_pair(FourfoldTable::new(30.0, 0.0, 10.0, 60.0)).unwrap();
        assert!(rho.is_finite());
        assert!(rho <= RHO_BOUND);
        assert!(rho > 0.5);
        let t = tetrachoric(&from_table(30, 0, 10, 60)).unwrap();
        assert_abs_diff_eq!(t.values[(0, 1)], rho, epsilon = 1e-15);
    }

    #[test]
    fn tetrachoric_matches_closed_form_at_median_split() {
        // with both thresholds at 0 the cell probability is 1/4 + asin(rho)/(2 pi),
        // so the ML estimate is sin(pi/2 * (4 n11/N - 1)) for symmetric tables
        let (a, b) = (35.0, 15.0);
        let rho = tetrachoric_pair(FourfoldTable::new(a, b, b, a)).unwrap();
        let want = (std::f64::consts::FRAC_PI_2 * (4.0 * a / 100.0 - 1.0)).sin();
        assert_abs_diff_eq!(rho, want, epsilon = 1e-7);
    }

    #[test]
    fn repair_leaves_pd_untouched() {
        let id = CorrelationMatrix {
            values: DMatrix::identity(4, 4),
            kind: CorrelationKind::Pearson,
            pd_repaired: false,
            min_eigenvalue_before_repair: None,
        };
        let out = repair_pd(&id).unwrap();
        assert!(!out.pd_repaired);
        assert_eq!(out.values, id.values);
        assert_eq!(out.min_eigenvalue_before_repair, Some(1.0));
    }

    #[test]
    fn repair_fixes_indefinite_matrix() {
        let values = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.9, 0.9, 1.0, -0.9, 0.9, -0.9, 1.0]);
        let before = sym_eigenvalues(&values).unwrap();
        assert!(*before.last().unwrap() < 0.0, "{before:?}");
        let c = CorrelationMatrix {
            values,
            kind: CorrelationKind::Tetrachoric,
            pd_repaired: false,
            min_eigenvalue_before_repair: None,
        };
        let out = repair_pd(&c).unwrap();
        assert!(out.pd_repaired);
        assert_abs_diff_eq!(out.min_eigenvalue_before_repair.unwrap(), before[2], epsilon = 1e-12);
        let after = sym_eigenvalues(&out.values).unwrap();
        assert!(*after.last().unwrap() >= PD_FLOOR, "{after:?}");
        for i in 0..3 {
            assert_eq!(out.values[(i, i)], 1.0);
            for j in 0..3 {
                assert_eq!(out.values[(i, j)], out.values[(j, i)]);
            }
        }
        let again = repair_pd(&out).unwrap();
        assert!(!again.pd_repaired);
        assert_eq!(again.values, out.values);
    }

    #[test]
    fn packed_counts_match_product() {
        let x = DMatrix::from_fn(130, 4, |i, j| f64::from(u8::from((i * (j + 3)) % 7 < 3)));
        assert_eq!(cross_counts(&x), x.tr_mul(&x));
    }

    #[test]
    fn registry_resolves_by_name() {
        let reg = correlation_registry();
        assert_eq!(reg.names(), vec!["pearson", "tetrachoric"]);
        assert_eq!(reg.get("tetrachoric").unwrap().kind(), CorrelationKind::Tetrachoric);
        assert!(reg.get("spearman").is_err());
    }

    fn table_strategy() -> impl Strategy<Value = (usize, usize, usize, usize)> {
        (1usize..80, 1usize..80, 1usize..80, 1usize..80)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn flip_symmetry((a, b, c, d) in table_strategy()) {
            let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
            let rho = tetrachoric_pair(FourfoldTable::new(a, b, c, d)).unwrap();
            // flipping both columns swaps n11 and n00
            let both = tetrachoric_pair(FourfoldTable::new(d, c, b, a)).unwrap();
            // flipping the first column swaps n11<->n01 and n10<->n00
            let one = tetrachoric_pair(FourfoldTable::new(c, d, a, b)).unwrap();
            prop_assert!((rho - both).abs() < 1e-6, "{} vs {}", rho, both);
            prop_assert!((rho + one).abs() < 1e-6, "{} vs {}", rho, one);
        }

        #[test]
        fn sign_agrees_with_phi((a, b, c, d) in table_strategy()) {
            let phi = phi_closed_form(a as f64, b as f64, c as f64, d as f64);
            let rho = tetrachoric_pair(FourfoldTable::new(a as f64, b as f64, c as f64, d as f64)).unwrap();
            if phi.abs() > 1e-9 {
                prop_assert_eq!(phi.signum(), rho.signum());
                prop_assert!(rho.abs() >= phi.abs() - 1e-6);
            }
        }

        #[test]
        fn repair_is_idempotent(entries in proptest::collection::vec(-0.99f64..0.99, 6)) {
            let mut values = DMatrix::identity(4, 4);
            let mut it = entries.into_iter();
            for i in 0..4 {
                for j in i + 1..4 {
                    let v = it.next().unwrap();
                    values[(i, j)] = v;
                    values[(j, i)] = v;
                }
            }
            let c = CorrelationMatrix { values, kind: CorrelationKind::Tetrachoric, pd_repaired: false, min_eigenvalue_before_repair: None };
            let once = repair_pd(&c).unwrap();
            let min = *sym_eigenvalues(&once.values).unwrap().last().unwrap();
            prop_assert!(min >= PD_FLOOR);
            let twice = repair_pd(&once).unwrap();
            prop_assert_eq!(&twice.values, &once.values);
            prop_assert!(!twice.pd_repaired);
        }
    }
}
