//! Fixed-effects OLS with cluster-robust (CR1) standard errors, plus the
//! named regression specifications used in the analysis: the strong-FTR
//! share gap, the proper-choice test, its same-period variant, and the
//! per-topic FTR prevalence regressions.
//!
//! All fixed-effect structures here are one-way categoricals, absorbed
//! by within-group demeaning; coefficients are recovered by QR on the
//! demeaned design.

use crate::storage::AnalysisRow;
use nalgebra::{DMatrix, DVector};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OlsError {
    #[error("empty sample")]
    EmptySample,
    #[error("design matrix is rank deficient (column {0})")]
    RankDeficient(usize),
    #[error("need at least two clusters, found {0}")]
    SingularClusters(usize),
    #[error("more parameters than observations")]
    Underdetermined,
}

#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub y: f64,
    pub x: Vec<f64>,
    pub fe_key: String,
    pub cluster_key: String,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Coefficients on the regressors of interest (plus the intercept as
    /// the final entry when no fixed effects are absorbed).
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov_clustered: Vec<Vec<f64>>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Residual degrees of freedom; absorbed fixed-effect levels count
    /// as estimated parameters.
    pub df_resid: usize,
}

impl OlsFit {
    /// Two-sided normal-approximation p-value for coefficient `j`.
    pub fn p_value(&self, j: usize) -> f64 {
        if self.se[j] == 0.0 {
            return 1.0;
        }
        let t = (self.coef[j] / self.se[j]).abs();
        2.0 * (1.0 - standard_normal_cdf(t))
    }

    pub fn stars(&self, j: usize) -> &'static str {
        let p = self.p_value(j);
        if p < 0.01 {
            "***"
        } else if p < 0.05 {
            "**"
        } else if p < 0.1 {
            "*"
        } else {
            ""
        }
    }
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// OLS with optional one-way fixed effects and CR1 cluster-robust
/// covariance.
///
/// With `include_fe`, y and x are within-demeaned by `fe_key` before the
/// solve; the intercept is absorbed. Without it, an intercept column is
/// appended. The clustered covariance is the CR1 sandwich
/// `(X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1` scaled by
/// `(G/(G-1)) * ((N-1)/(N-K))` with K counting absorbed fixed-effect
/// levels. R-squared is for the full model with the fixed-effect dummies
/// implicitly included.
pub fn ols_fe_cluster(samples: &[RegressionSample], include_fe: bool) -> Result<OlsFit, OlsError> {
    if samples.is_empty() {
        return Err(OlsError::EmptySample);
    }
    let n = samples.len();
    let k_interest = samples[0].x.len();
    let k = if include_fe { k_interest } else { k_interest + 1 };

    // Demean (or append intercept) into the working design.
    let mut y = DVector::from_iterator(n, samples.iter().map(|s| s.y));
    let mut x = DMatrix::zeros(n, k);
    for (row, sample) in samples.iter().enumerate() {
        for (col, &v) in sample.x.iter().enumerate() {
            x[(row, col)] = v;
        }
        if !include_fe {
            x[(row, k_interest)] = 1.0;
        }
    }

    let mut n_fe_levels = 0;
    if include_fe {
        let mut groups: HashMap<&str, (f64, Vec<f64>, f64)> = HashMap::new();
        for sample in samples {
            let entry = groups
                .entry(sample.fe_key.as_str())
                .or_insert_with(|| (0.0, vec![0.0; k_interest], 0.0));
            entry.0 += sample.y;
            for (col, &v) in sample.x.iter().enumerate() {
                entry.1[col] += v;
            }
            entry.2 += 1.0;
        }
        n_fe_levels = groups.len();
        for (row, sample) in samples.iter().enumerate() {
            let (y_sum, x_sums, count) = &groups[sample.fe_key.as_str()];
            y[row] -= y_sum / count;
            for col in 0..k_interest {
                x[(row, col)] -= x_sums[col] / count;
            }
        }
    }

    let n_params = k + n_fe_levels;
    if n <= n_params {
        return Err(OlsError::Underdetermined);
    }

    // QR solve on the demeaned design; a near-zero R diagonal flags a
    // collinear regressor of interest.
    let qr = x.clone().qr();
    let r = qr.r();
    let col_scale: Vec<f64> = (0..k)
        .map(|j| x.column(j).amax().max(1.0))
        .collect();
    let mut degenerate_cols = Vec::new();
    for j in 0..k {
        if r[(j, j)].abs() < 1e-10 * col_scale[j] {
            // A fully demeaned-away column (e.g. a regressor constant
            // within every FE group) is only an error when the column
            // had variation to begin with.
            let demeaned_norm = x.column(j).norm();
            if demeaned_norm > 1e-8 * (n as f64).sqrt() * col_scale[j] {
                return Err(OlsError::RankDeficient(j));
            }
            degenerate_cols.push(j);
        }
    }

    let coef: DVector<f64> = if degenerate_cols.len() == k {
        DVector::zeros(k)
    } else {
        let qty = qr.q().transpose() * &y;
        let mut beta = DVector::zeros(k);
        // Back substitution, treating degenerate columns as zero.
        for jj in (0..k).rev() {
            if degenerate_cols.contains(&jj) {
                continue;
            }
            let mut acc = qty[jj];
            for col in (jj + 1)..k {
                acc -= r[(jj, col)] * beta[col];
            }
            beta[jj] = acc / r[(jj, jj)];
        }
        beta
    };

    let residuals = &y - &x * &coef;

    // Cluster sums for the sandwich meat; ordered map so the summation
    // order (and hence the floating-point result) is deterministic.
    let mut cluster_sums: BTreeMap<&str, DVector<f64>> = BTreeMap::new();
    for (row, sample) in samples.iter().enumerate() {
        let entry = cluster_sums
            .entry(sample.cluster_key.as_str())
            .or_insert_with(|| DVector::zeros(k));
        for col in 0..k {
            entry[col] += x[(row, col)] * residuals[row];
        }
    }
    let n_clusters = cluster_sums.len();
    if n_clusters < 2 {
        return Err(OlsError::SingularClusters(n_clusters));
    }

    let mut meat = DMatrix::zeros(k, k);
    for s in cluster_sums.values() {
        meat += s * s.transpose();
    }

    // Bread from R: (X'X)^-1 = R^-1 R^-T, with degenerate columns zeroed.
    let xtx = x.transpose() * &x;
    let bread = pseudo_inverse_spd(&xtx, &degenerate_cols);

    let g = n_clusters as f64;
    let nf = n as f64;
    let kf = n_params as f64;
    let correction = (g / (g - 1.0)) * ((nf - 1.0) / (nf - kf));
    let vcov = &bread * meat * &bread * correction;

    let se: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();

    // R-squared on the un-demeaned outcome (FE dummies implicitly in the
    // fitted model, so residuals are shared with the dummy regression).
    let y_raw: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let y_mean = y_raw.iter().sum::<f64>() / nf;
    let sst: f64 = y_raw.iter().map(|v| (v - y_mean).powi(2)).sum();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    let df_resid = n - n_params;
    let adj_r2 = if sst > 0.0 {
        1.0 - (1.0 - r2) * (nf - 1.0) / (df_resid as f64)
    } else {
        0.0
    };

    Ok(OlsFit {
        coef: coef.iter().copied().collect(),
        se,
        vcov_clustered: (0..k)
            .map(|i| (0..k).map(|j| vcov[(i, j)]).collect())
            .collect(),
        r2,
        adj_r2,
        n_obs: n,
        n_clusters,
        df_resid,
    })
}

/// Inverse of a symmetric positive definite matrix with the listed
/// degenerate rows/columns forced to zero.
fn pseudo_inverse_spd(m: &DMatrix<f64>, degenerate: &[usize]) -> DMatrix<f64> {
    let k = m.nrows();
    let keep: Vec<usize> = (0..k).filter(|j| !degenerate.contains(j)).collect();
    let mut sub = DMatrix::zeros(keep.len(), keep.len());
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            sub[(a, b)] = m[(i, j)];
        }
    }
    let sub_inv = sub
        .try_inverse()
        .expect("non-degenerate block is invertible");
    let mut out = DMatrix::zeros(k, k);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[(i, j)] = sub_inv[(a, b)];
        }
    }
    out
}

/// Mean of `values` with a 95% CI from CR1 cluster-robust variance
/// (intercept-only regression). Degenerate inputs (fewer than three
/// observations or two clusters) collapse the interval to the mean.
pub fn clustered_mean_ci(values: &[(f64, String)]) -> (f64, f64, f64) {
    let n = values.len();
    let mean = values.iter().map(|(v, _)| v).sum::<f64>() / n as f64;
    let n_clusters = values
        .iter()
        .map(|(_, c)| c.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len();
    if n < 3 || n_clusters < 2 {
        return (mean, mean, mean);
    }
    let samples: Vec<RegressionSample> = values
        .iter()
        .map(|(v, cluster)| RegressionSample {
            y: *v,
            x: Vec::new(),
            fe_key: String::new(),
            cluster_key: cluster.clone(),
        })
        .collect();
    match ols_fe_cluster(&samples, false) {
        Ok(fit) => (mean, mean - 1.96 * fit.se[0], mean + 1.96 * fit.se[0]),
        Err(_) => (mean, mean, mean),
    }
}

/// Fixed-effect structure variants used across the specification tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeVariant {
    None,
    Delay,
    DelayInterest,
    Language,
    LanguageDelay,
}

impl FeVariant {
    pub fn label(&self) -> &'static str {
        match self {
            FeVariant::None => "none",
            FeVariant::Delay => "Delay FE",
            FeVariant::DelayInterest => "Delay-Interest FE",
            FeVariant::Language => "Language FE",
            FeVariant::LanguageDelay => "Language-Delay FE",
        }
    }
}

fn cell_cluster_key(row: &AnalysisRow) -> String {
    match (row.d, row.i) {
        (Some(d), Some(i)) => format!("{}:{}:{}", row.language, d, i),
        _ => format!("{}:{}:{}", row.language, row.t2, row.r2),
    }
}

fn fe_key_for(row: &AnalysisRow, variant: FeVariant) -> String {
    let d = row.d.unwrap_or(row.t2);
    match variant {
        FeVariant::None => String::new(),
        FeVariant::Delay => format!("d{d}"),
        FeVariant::DelayInterest => format!("d{}:i{}", d, row.i.unwrap_or(row.r2 as f64)),
        FeVariant::Language => row.language.clone(),
        FeVariant::LanguageDelay => format!("{}:d{d}", row.language),
    }
}

/// Share-gap specification: regress choosing the delayed reward on the
/// strong-FTR dummy, in the three FE variants of the published table
/// (none, delay, delay-interest). Clusters are language-delay-interest
/// cells.
pub fn spec_ftr_share(rows: &[AnalysisRow]) -> Result<Vec<(FeVariant, OlsFit)>, OlsError> {
    [FeVariant::None, FeVariant::Delay, FeVariant::DelayInterest]
        .into_iter()
        .map(|variant| {
            let samples: Vec<RegressionSample> = rows
                .iter()
                .map(|row| RegressionSample {
                    y: row.y_later as f64,
                    x: vec![row.ftr_strong as f64],
                    fe_key: fe_key_for(row, variant),
                    cluster_key: cell_cluster_key(row),
                })
                .collect();
            ols_fe_cluster(&samples, variant != FeVariant::None).map(|fit| (variant, fit))
        })
        .collect()
}

/// Proper-choice specification: regress choosing the larger reward on
/// the reward gap in 1000-token units, with none / language / language-
/// delay FE variants. Works for both the cross-period and the
/// same-period dataset (for same-period rows the delay key is t).
pub fn spec_proper_test(rows: &[AnalysisRow]) -> Result<Vec<(FeVariant, OlsFit)>, OlsError> {
    [FeVariant::None, FeVariant::Language, FeVariant::LanguageDelay]
        .into_iter()
        .map(|variant| {
            let samples: Vec<RegressionSample> = rows
                .iter()
                .map(|row| RegressionSample {
                    y: row.y_later as f64,
                    x: vec![(row.r2 as f64 - row.r1 as f64) / 1000.0],
                    fe_key: fe_key_for(row, variant),
                    cluster_key: cell_cluster_key(row),
                })
                .collect();
            ols_fe_cluster(&samples, variant != FeVariant::None).map(|fit| (variant, fit))
        })
        .collect()
}

/// One per-sample topic prevalence joined to its conditions.
#[derive(Debug, Clone)]
pub struct TopicSample {
    pub normalized_prevalence: f64,
    pub ftr_strong: bool,
    pub delay_months: u32,
    pub interest: f64,
    pub language: String,
}

/// Per-topic FTR regression: normalized prevalence on the strong-FTR
/// dummy with delay-interest FE, clustered at the cell. Returns one fit
/// per topic, shaped like the three-column published table.
pub fn spec_topic_ftr(
    topics: &[(String, Vec<TopicSample>)],
) -> Result<Vec<(String, OlsFit)>, OlsError> {
    topics
        .iter()
        .map(|(label, samples)| {
            let regression: Vec<RegressionSample> = samples
                .iter()
                .map(|s| RegressionSample {
                    y: s.normalized_prevalence,
                    x: vec![s.ftr_strong as u8 as f64],
                    fe_key: format!("d{}:i{}", s.delay_months, s.interest),
                    cluster_key: format!("{}:{}:{}", s.language, s.delay_months, s.interest),
                })
                .collect();
            ols_fe_cluster(&regression, true).map(|fit| (label.clone(), fit))
        })
        .collect()
}

/// Aligned plain-text regression table: coefficient rows with SEs in
/// parentheses and significance stars at the 10/5/1% levels.
pub fn render_regression_table(
    title: &str,
    coef_label: &str,
    columns: &[(String, OlsFit)],
) -> String {
    let width = 24;
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&"=".repeat(40 + width * columns.len()));
    out.push('\n');
    out.push_str(&format!("{:<40}", ""));
    for (idx, (label, _)) in columns.iter().enumerate() {
        out.push_str(&format!("{:>width$}", format!("({}) {label}", idx + 1)));
    }
    out.push('\n');
    out.push_str(&format!("{coef_label:<40}"));
    for (_, fit) in columns {
        out.push_str(&format!(
            "{:>width$}",
            format!("{:.4}{}", fit.coef[0], fit.stars(0))
        ));
    }
    out.push('\n');
    out.push_str(&format!("{:<40}", ""));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", format!("({:.4})", fit.se[0])));
    }
    out.push('\n');
    // Intercept row only for columns that carry one.
    if columns.iter().any(|(_, fit)| fit.coef.len() > 1) {
        out.push_str(&format!("{:<40}", "Constant"));
        for (_, fit) in columns {
            if fit.coef.len() > 1 {
                out.push_str(&format!(
                    "{:>width$}",
                    format!("{:.4}{}", fit.coef[1], fit.stars(1))
                ));
            } else {
                out.push_str(&format!("{:>width$}", ""));
            }
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<40}", "Observations"));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", fit.n_obs));
    }
    out.push('\n');
    out.push_str(&format!("{:<40}", "Clusters"));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", fit.n_clusters));
    }
    out.push('\n');
    out.push_str(&format!("{:<40}", "R2"));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", format!("{:.4}", fit.r2)));
    }
    out.push('\n');
    out.push_str(&format!("{:<40}", "Adjusted R2"));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", format!("{:.4}", fit.adj_r2)));
    }
    out.push('\n');
    out.push_str(&format!("{:<40}", "Residual df"));
    for (_, fit) in columns {
        out.push_str(&format!("{:>width$}", fit.df_resid));
    }
    out.push('\n');
    out.push_str("Note: *p<0.1; **p<0.05; ***p<0.01. SEs clustered at the experimental cell.\n");
    out
}

/// CSV export of a specification table.
pub fn regression_to_csv(coef_label: &str, columns: &[(String, OlsFit)]) -> String {
    let mut out = String::from(
        "column,coef_label,coef,se,p_value,stars,constant,constant_se,n_obs,n_clusters,r2,adj_r2,df_resid\n",
    );
    for (label, fit) in columns {
        let (constant, constant_se) = if fit.coef.len() > 1 {
            (fit.coef[1].to_string(), fit.se[1].to_string())
        } else {
            (String::new(), String::new())
        };
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{:.6},{:.6},{}\n",
            label,
            coef_label,
            fit.coef[0],
            fit.se[0],
            fit.p_value(0),
            fit.stars(0),
            constant,
            constant_se,
            fit.n_obs,
            fit.n_clusters,
            fit.r2,
            fit.adj_r2,
            fit.df_resid,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(y: f64, x: Vec<f64>, fe: &str, cluster: &str) -> RegressionSample {
        RegressionSample {
            y,
            x,
            fe_key: fe.into(),
            cluster_key: cluster.into(),
        }
    }

    /// Brute-force CR1 sandwich on an explicit design matrix.
    fn brute_force_cluster_vcov(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        clusters: &[&str],
        k_model: usize,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * y;
        let e = y - x * &beta;
        let mut meat = DMatrix::zeros(x.ncols(), x.ncols());
        let unique: Vec<&str> = {
            let mut u: Vec<&str> = clusters.to_vec();
            u.sort();
            u.dedup();
            u
        };
        for g in &unique {
            let mut s: DVector<f64> = DVector::zeros(x.ncols());
            for (row, cl) in clusters.iter().enumerate() {
                if cl == g {
                    for col in 0..x.ncols() {
                        s[col] += x[(row, col)] * e[row];
                    }
                }
            }
            meat += &s * s.transpose();
        }
        let gn = unique.len() as f64;
        let n = x.nrows() as f64;
        let c = (gn / (gn - 1.0)) * ((n - 1.0) / (n - k_model as f64));
        (beta, &xtx_inv * meat * &xtx_inv * c)
    }

    #[test]
    fn six_point_hand_dataset_matches_brute_force() {
        let data = [
            (1.0, 0.5, "a"),
            (2.0, 1.0, "a"),
            (2.5, 1.5, "a"),
            (3.1, 2.0, "b"),
            (4.2, 2.5, "b"),
            (4.4, 3.0, "b"),
        ];
        let samples: Vec<RegressionSample> = data
            .iter()
            .map(|&(y, x, c)| sample(y, vec![x], "", c))
            .collect();
        let fit = ols_fe_cluster(&samples, false).unwrap();

        let x = DMatrix::from_fn(6, 2, |r, c| if c == 0 { data[r].1 } else { 1.0 });
        let y = DVector::from_iterator(6, data.iter().map(|d| d.0));
        let clusters: Vec<&str> = data.iter().map(|d| d.2).collect();
        let (beta, vcov) = brute_force_cluster_vcov(&x, &y, &clusters, 2);

        for j in 0..2 {
            assert!((fit.coef[j] - beta[j]).abs() < 1e-10);
            for l in 0..2 {
                assert!(
                    (fit.vcov_clustered[j][l] - vcov[(j, l)]).abs() < 1e-10,
                    "vcov[{j}][{l}]"
                );
            }
        }
        assert_eq!(fit.n_clusters, 2);
    }

    #[test]
    fn fe_path_matches_explicit_dummy_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200;
        let n_groups = 8;
        let mut samples = Vec::with_capacity(n);
        let mut x_dummy = DMatrix::zeros(n, 2 + n_groups);
        let mut y_vec = DVector::zeros(n);
        let mut clusters = Vec::with_capacity(n);
        let cluster_names: Vec<String> = (0..10).map(|c| format!("c{c}")).collect();
        for row in 0..n {
            let g = rng.gen_range(0..n_groups);
            let x1: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let x2: f64 = rng.gen::<f64>() * 3.0;
            let y = 1.5 * x1 - 0.7 * x2 + (g as f64) * 0.4 + rng.gen::<f64>() * 0.3;
            let cluster = cluster_names[rng.gen_range(0..10)].clone();
            samples.push(sample(y, vec![x1, x2], &format!("g{g}"), &cluster));
            x_dummy[(row, 0)] = x1;
            x_dummy[(row, 1)] = x2;
            x_dummy[(row, 2 + g)] = 1.0;
            y_vec[row] = y;
            clusters.push(());
        }
        let fit = ols_fe_cluster(&samples, true).unwrap();
        let beta_dummy = (x_dummy.transpose() * &x_dummy).try_inverse().unwrap()
            * x_dummy.transpose()
            * &y_vec;
        assert!((fit.coef[0] - beta_dummy[0]).abs() < 1e-8);
        assert!((fit.coef[1] - beta_dummy[1]).abs() < 1e-8);
    }

    #[test]
    fn constant_outcome_gives_zero_slopes_and_r2() {
        let samples: Vec<RegressionSample> = (0..20)
            .map(|k| sample(3.0, vec![k as f64], "", if k % 2 == 0 { "a" } else { "b" }))
            .collect();
        let fit = ols_fe_cluster(&samples, false).unwrap();
        assert!(fit.coef[0].abs() < 1e-12);
        assert_eq!(fit.r2, 0.0);
    }

    #[test]
    fn demeaning_leaves_group_means_at_zero() {
        // Checked indirectly: a regressor constant within each FE group
        // is fully absorbed and reports a zero coefficient.
        let samples: Vec<RegressionSample> = (0..40)
            .map(|k| {
                let g = k % 4;
                sample(
                    (k as f64).sin() + g as f64,
                    vec![g as f64 * 10.0],
                    &format!("g{g}"),
                    &format!("c{}", k % 5),
                )
            })
            .collect();
        let fit = ols_fe_cluster(&samples, true).unwrap();
        assert!(fit.coef[0].abs() < 1e-10);
    }

    #[test]
    fn singleton_clusters_reduce_to_hc1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let mut samples = Vec::new();
        let mut x = DMatrix::zeros(n, 2);
        let mut y = DVector::zeros(n);
        for row in 0..n {
            let x1: f64 = rng.gen::<f64>() * 4.0;
            let yv = 2.0 + 0.5 * x1 + rng.gen::<f64>();
            samples.push(sample(yv, vec![x1], "", &format!("row{row}")));
            x[(row, 0)] = x1;
            x[(row, 1)] = 1.0;
            y[row] = yv;
        }
        let fit = ols_fe_cluster(&samples, false).unwrap();
        // HC1: (n/(n-k)) * (X'X)^-1 [sum_i x_i x_i' e_i^2] (X'X)^-1
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &y;
        let e = &y - &x * &beta;
        let mut meat = DMatrix::zeros(2, 2);
        for row in 0..n {
            let xi = DVector::from_column_slice(&[x[(row, 0)], x[(row, 1)]]);
            meat += &xi * xi.transpose() * e[row] * e[row];
        }
        let hc1 = &xtx_inv * meat * &xtx_inv * (n as f64 / (n as f64 - 2.0));
        // CR1 with G=N: (N/(N-1))*((N-1)/(N-K)) = N/(N-K), identical.
        for j in 0..2 {
            for l in 0..2 {
                assert!((fit.vcov_clustered[j][l] - hc1[(j, l)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn invariant_to_cluster_relabeling_and_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut samples: Vec<RegressionSample> = (0..50)
            .map(|k| {
                sample(
                    rng.gen::<f64>() + (k % 3) as f64,
                    vec![rng.gen::<f64>()],
                    &format!("g{}", k % 3),
                    &format!("c{}", k % 6),
                )
            })
            .collect();
        let fit_a = ols_fe_cluster(&samples, true).unwrap();
        // Relabel clusters and shuffle rows.
        for s in samples.iter_mut() {
            s.cluster_key = format!("renamed-{}", s.cluster_key);
        }
        samples.reverse();
        samples.rotate_left(17);
        let fit_b = ols_fe_cluster(&samples, true).unwrap();
        assert!((fit_a.coef[0] - fit_b.coef[0]).abs() < 1e-12);
        assert!((fit_a.se[0] - fit_b.se[0]).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let samples: Vec<RegressionSample> = (0..20)
            .map(|k| {
                let x1 = k as f64;
                sample(
                    k as f64 * 0.5,
                    vec![x1, 2.0 * x1],
                    "",
                    if k % 2 == 0 { "a" } else { "b" },
                )
            })
            .collect();
        assert!(matches!(
            ols_fe_cluster(&samples, false),
            Err(OlsError::RankDeficient(_))
        ));
    }

    #[test]
    fn vcov_is_symmetric_and_psd_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<RegressionSample> = (0..80)
            .map(|k| {
                sample(
                    rng.gen::<f64>() * 2.0,
                    vec![rng.gen::<f64>(), rng.gen::<f64>()],
                    "",
                    &format!("c{}", k % 7),
                )
            })
            .collect();
        let fit = ols_fe_cluster(&samples, false).unwrap();
        for j in 0..3 {
            assert!(fit.vcov_clustered[j][j] >= 0.0);
            for l in 0..3 {
                assert!((fit.vcov_clustered[j][l] - fit.vcov_clustered[l][j]).abs() < 1e-12);
            }
            assert!((fit.se[j] - fit.vcov_clustered[j][j].sqrt()).abs() < 1e-12);
        }
    }
}
