//! Maximum-likelihood estimation of the discounted random-utility model:
//! exponential yearly discount rate delta and Luce noise mu, fitted by
//! derivative-free simplex search in (ln delta, ln mu) space with
//! numerical-Hessian standard errors.

use crate::agents::choice_prob_from_utilities;
use crate::design::{FtrClass, RewardOption};
use crate::storage::AnalysisRow;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("empty dataset")]
    EmptyData,
    #[error("degenerate data: every observation chose the {0} option")]
    DegenerateData(&'static str),
    #[error("optimizer failed to converge within the evaluation budget")]
    NonConvergence,
    #[error("non-finite log-likelihood at delta={delta}, mu={mu}")]
    NonFinite { delta: f64, mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiceObservation {
    pub sooner: RewardOption,
    pub later: RewardOption,
    pub y_sooner: bool,
}

impl ChoiceObservation {
    pub fn new(sooner: RewardOption, later: RewardOption, y_sooner: bool) -> Self {
        debug_assert!(later.amount > sooner.amount);
        debug_assert!(later.delivery_months > sooner.delivery_months);
        Self {
            sooner,
            later,
            y_sooner,
        }
    }
}

/// Cross-period analysis rows as choice observations (y_sooner is the
/// complement of the exported y_later flag).
pub fn observations_from_rows<'a>(
    rows: impl IntoIterator<Item = &'a AnalysisRow>,
) -> Vec<ChoiceObservation> {
    rows.into_iter()
        .filter(|r| r.t2 > r.t1)
        .map(|r| ChoiceObservation {
            sooner: RewardOption {
                delivery_months: r.t1,
                amount: r.r1,
            },
            later: RewardOption {
                delivery_months: r.t2,
                amount: r.r2,
            },
            y_sooner: r.y_later == 0,
        })
        .collect()
}

fn prob_sooner(delta: f64, mu: f64, sooner: RewardOption, later: RewardOption) -> f64 {
    let eu_s = sooner.amount as f64 / (1.0 + delta).powf(sooner.delivery_months as f64 / 12.0);
    let eu_l = later.amount as f64 / (1.0 + delta).powf(later.delivery_months as f64 / 12.0);
    choice_prob_from_utilities(eu_s, eu_l, mu)
}

/// Binomial log-likelihood of the observed choices under Exponential
/// discounting with parameters (delta, mu). Probabilities are clamped to
/// [1e-12, 1 - 1e-12] before logging.
pub fn log_likelihood(
    delta: f64,
    mu: f64,
    data: &[ChoiceObservation],
) -> Result<f64, EstimationError> {
    if data.is_empty() {
        return Err(EstimationError::EmptyData);
    }
    let counts = aggregate(data);
    let ll = aggregated_log_likelihood(delta, mu, &counts);
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(EstimationError::NonFinite { delta, mu })
    }
}

/// Unique (sooner, later) pairs with (sooner, later) choice counts.
/// Collapsing identical cells makes the likelihood cost independent of
/// the number of raw observations.
type CellCounts = BTreeMap<(u32, u64, u32, u64), (u64, u64)>;

fn aggregate(data: &[ChoiceObservation]) -> CellCounts {
    let mut counts: CellCounts = BTreeMap::new();
    for obs in data {
        let key = (
            obs.sooner.delivery_months,
            obs.sooner.amount,
            obs.later.delivery_months,
            obs.later.amount,
        );
        let entry = counts.entry(key).or_default();
        if obs.y_sooner {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    counts
}

fn aggregated_log_likelihood(delta: f64, mu: f64, counts: &CellCounts) -> f64 {
    let mut ll = 0.0;
    for (&(t1, r1, t2, r2), &(n_sooner, n_later)) in counts {
        let p = prob_sooner(
            delta,
            mu,
            RewardOption {
                delivery_months: t1,
                amount: r1,
            },
            RewardOption {
                delivery_months: t2,
                amount: r2,
            },
        )
        .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        ll += n_sooner as f64 * p.ln() + n_later as f64 * (1.0 - p).ln();
    }
    ll
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleFit {
    pub delta_hat: f64,
    pub mu_hat: f64,
    pub se_delta: f64,
    pub se_mu: f64,
    pub ci95_delta: (f64, f64),
    pub ci95_mu: (f64, f64),
    pub loglik: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub n_evals: usize,
}

/// Simplex search controls; defaults match the shipped convention
/// (tolerance 1e-8 in transformed space, 10,000 evaluations per start).
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub simplex_tolerance: f64,
    pub max_evals_per_start: usize,
    pub delta_starts: Vec<f64>,
    pub mu_starts: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            simplex_tolerance: 1e-8,
            max_evals_per_start: 10_000,
            delta_starts: vec![0.1, 0.5, 1.0, 2.0],
            mu_starts: vec![0.1, 0.5],
        }
    }
}

/// Fit (delta, mu) by maximizing the log-likelihood over (ln delta,
/// ln mu) with multi-start Nelder-Mead. Standard errors come from the
/// inverse negative numerical Hessian at the optimum, mapped back with
/// the delta method; CIs are Wald +/- 1.96 SE.
pub fn fit_mle(
    data: &[ChoiceObservation],
    init: Option<(f64, f64)>,
    options: &FitOptions,
) -> Result<MleFit, EstimationError> {
    if data.is_empty() {
        return Err(EstimationError::EmptyData);
    }
    let n_sooner = data.iter().filter(|o| o.y_sooner).count();
    if n_sooner == data.len() {
        return Err(EstimationError::DegenerateData("sooner"));
    }
    if n_sooner == 0 {
        return Err(EstimationError::DegenerateData("later"));
    }

    let counts = aggregate(data);
    let objective = |x: &[f64; 2]| -aggregated_log_likelihood(x[0].exp(), x[1].exp(), &counts);

    let mut starts: Vec<[f64; 2]> = Vec::new();
    if let Some((d0, m0)) = init {
        starts.push([d0.ln(), m0.ln()]);
    }
    for &d0 in &options.delta_starts {
        for &m0 in &options.mu_starts {
            starts.push([d0.ln(), m0.ln()]);
        }
    }

    let mut best: Option<SimplexResult> = None;
    let mut total_evals = 0;
    for start in starts {
        let result = nelder_mead(
            &objective,
            start,
            options.simplex_tolerance,
            options.max_evals_per_start,
        );
        total_evals += result.n_evals;
        if best.as_ref().map_or(true, |b| result.fmin < b.fmin) {
            best = Some(result);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(EstimationError::NonConvergence);
    }

    let xmin = best.xmin;
    let delta_hat = xmin[0].exp();
    let mu_hat = xmin[1].exp();
    let loglik = -best.fmin;

    // Observed information in transformed space, then the delta method:
    // se(delta) = delta * se(ln delta).
    let hessian = numerical_hessian(&objective, xmin);
    let (se_log_delta, se_log_mu) = invert_2x2_for_se(hessian);
    let se_delta = delta_hat * se_log_delta;
    let se_mu = mu_hat * se_log_mu;

    Ok(MleFit {
        delta_hat,
        mu_hat,
        se_delta,
        se_mu,
        ci95_delta: (delta_hat - 1.96 * se_delta, delta_hat + 1.96 * se_delta),
        ci95_mu: (mu_hat - 1.96 * se_mu, mu_hat + 1.96 * se_mu),
        loglik,
        n_obs: data.len(),
        converged: true,
        n_evals: total_evals,
    })
}

/// Central-difference gradient of the log-likelihood in (ln delta,
/// ln mu) space with an adaptive step; used for first-order-condition
/// checks.
pub fn loglik_gradient_at(delta: f64, mu: f64, data: &[ChoiceObservation]) -> [f64; 2] {
    let counts = aggregate(data);
    let f = |x: &[f64; 2]| aggregated_log_likelihood(x[0].exp(), x[1].exp(), &counts);
    let x = [delta.ln(), mu.ln()];
    let mut grad = [0.0; 2];
    for j in 0..2 {
        let h = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x;
        xp[j] += h;
        let mut xm = x;
        xm[j] -= h;
        grad[j] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    // Per-observation scale so the check is sample-size independent.
    let n = data.len() as f64;
    [grad[0] / n, grad[1] / n]
}

struct SimplexResult {
    xmin: [f64; 2],
    fmin: f64,
    n_evals: usize,
    converged: bool,
}

/// Standard Nelder-Mead in two dimensions (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5), terminating on simplex diameter.
fn nelder_mead<F: Fn(&[f64; 2]) -> f64>(
    f: &F,
    start: [f64; 2],
    tolerance: f64,
    max_evals: usize,
) -> SimplexResult {
    let mut evals = 0;
    let eval = |x: &[f64; 2], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let step = 0.25;
    let mut simplex: Vec<([f64; 2], f64)> = Vec::with_capacity(3);
    simplex.push((start, eval(&start, &mut evals)));
    for j in 0..2 {
        let mut v = start;
        v[j] += step;
        simplex.push((v, eval(&v, &mut evals)));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(v, _)| {
                ((v[0] - simplex[0].0[0]).powi(2) + (v[1] - simplex[0].0[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        if diameter < tolerance {
            return SimplexResult {
                xmin: simplex[0].0,
                fmin: simplex[0].1,
                n_evals: evals,
                converged: true,
            };
        }
        if evals >= max_evals {
            return SimplexResult {
                xmin: simplex[0].0,
                fmin: simplex[0].1,
                n_evals: evals,
                converged: false,
            };
        }

        let centroid = [
            (simplex[0].0[0] + simplex[1].0[0]) / 2.0,
            (simplex[0].0[1] + simplex[1].0[1]) / 2.0,
        ];
        let worst = simplex[2];
        let reflect = [
            centroid[0] + (centroid[0] - worst.0[0]),
            centroid[1] + (centroid[1] - worst.0[1]),
        ];
        let f_reflect = eval(&reflect, &mut evals);

        if f_reflect < simplex[0].1 {
            let expand = [
                centroid[0] + 2.0 * (centroid[0] - worst.0[0]),
                centroid[1] + 2.0 * (centroid[1] - worst.0[1]),
            ];
            let f_expand = eval(&expand, &mut evals);
            simplex[2] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[1].1 {
            simplex[2] = (reflect, f_reflect);
        } else {
            let (towards, f_towards) = if f_reflect < worst.1 {
                (reflect, f_reflect)
            } else {
                (worst.0, worst.1)
            };
            let contract = [
                centroid[0] + 0.5 * (towards[0] - centroid[0]),
                centroid[1] + 0.5 * (towards[1] - centroid[1]),
            ];
            let f_contract = eval(&contract, &mut evals);
            if f_contract < f_towards {
                simplex[2] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                for k in 1..3 {
                    let v = [
                        simplex[0].0[0] + 0.5 * (simplex[k].0[0] - simplex[0].0[0]),
                        simplex[0].0[1] + 0.5 * (simplex[k].0[1] - simplex[0].0[1]),
                    ];
                    simplex[k] = (v, eval(&v, &mut evals));
                }
            }
        }
    }
}

fn numerical_hessian<F: Fn(&[f64; 2]) -> f64>(f: &F, x: [f64; 2]) -> [[f64; 2]; 2] {
    let h = [1e-4 * x[0].abs().max(1.0), 1e-4 * x[1].abs().max(1.0)];
    let mut hess = [[0.0; 2]; 2];
    let f0 = f(&x);
    for j in 0..2 {
        let mut xp = x;
        xp[j] += h[j];
        let mut xm = x;
        xm[j] -= h[j];
        hess[j][j] = (f(&xp) - 2.0 * f0 + f(&xm)) / (h[j] * h[j]);
    }
    let mut xpp = x;
    xpp[0] += h[0];
    xpp[1] += h[1];
    let mut xpm = x;
    xpm[0] += h[0];
    xpm[1] -= h[1];
    let mut xmp = x;
    xmp[0] -= h[0];
    xmp[1] += h[1];
    let mut xmm = x;
    xmm[0] -= h[0];
    xmm[1] -= h[1];
    let cross = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h[0] * h[1]);
    hess[0][1] = cross;
    hess[1][0] = cross;
    hess
}

/// SEs from the inverse of the (positive definite) Hessian of the
/// negative log-likelihood.
fn invert_2x2_for_se(h: [[f64; 2]; 2]) -> (f64, f64) {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if det <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let var0 = h[1][1] / det;
    let var1 = h[0][0] / det;
    (var0.max(0.0).sqrt(), var1.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    PerLanguage,
    FtrPooled,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupFit {
    pub group: String,
    pub ftr_class: FtrClass,
    #[serde(flatten)]
    pub fit: MleFit,
}

/// Independent fits per group; groups are ordered with strong-FTR first
/// (the figure layout), then alphabetically. Per-group failures are
/// reported without affecting other groups.
pub fn fit_by_group(
    rows: &[AnalysisRow],
    grouping: Grouping,
    options: &FitOptions,
) -> Vec<(String, FtrClass, Result<MleFit, EstimationError>)> {
    let mut groups: BTreeMap<(u8, String), Vec<&AnalysisRow>> = BTreeMap::new();
    for row in rows {
        let ftr_rank = if row.ftr_strong == 1 { 0 } else { 1 };
        let key = match grouping {
            Grouping::PerLanguage => (ftr_rank, row.language.clone()),
            Grouping::FtrPooled => (
                ftr_rank,
                if row.ftr_strong == 1 { "strong_ftr" } else { "weak_ftr" }.to_string(),
            ),
        };
        groups.entry(key).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((ftr_rank, name), group_rows)| {
            let data = observations_from_rows(group_rows.iter().copied());
            let ftr = if ftr_rank == 0 {
                FtrClass::Strong
            } else {
                FtrClass::Weak
            };
            (name, ftr, fit_mle(&data, None, options))
        })
        .collect()
}

/// CSV export of group fits (group, delta, se, ci, mu, se, loglik, n).
pub fn fits_to_csv(fits: &[(String, FtrClass, Result<MleFit, EstimationError>)]) -> String {
    let mut out = String::from(
        "group,ftr_class,delta,se_delta,ci_delta_lo,ci_delta_hi,mu,se_mu,loglik,n_obs,converged\n",
    );
    for (group, ftr, fit) in fits {
        match fit {
            Ok(f) => out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{},{}\n",
                group,
                ftr.as_str(),
                f.delta_hat,
                f.se_delta,
                f.ci95_delta.0,
                f.ci95_delta.1,
                f.mu_hat,
                f.se_mu,
                f.loglik,
                f.n_obs,
                f.converged,
            )),
            Err(e) => out.push_str(&format!("{},{},,,,,,,,,error: {e}\n", group, ftr.as_str())),
        }
    }
    out
}
