//! Experiment grids: cross-period and same-period cells, delayed-reward
//! arithmetic, the language registry with future-time-reference classes,
//! and balanced option-order planning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Delay conditions in months between the sooner and the later option.
pub const DELAYS_MONTHS: [u32; 9] = [1, 2, 3, 4, 6, 12, 18, 24, 36];

/// Yearly interest-rate conditions applied to the later option.
pub const INTEREST_RATES: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 1.00, 2.00];

/// Delivery times for the same-period study, months from now.
pub const SAME_PERIOD_TIMES: [u32; 7] = [2, 3, 4, 5, 7, 13, 25];

/// Larger-reward values for the same-period study.
pub const SAME_PERIOD_REWARDS: [u64; 7] = [1041, 1082, 1401, 1781, 3174, 5061, 7376];

/// Sooner option is fixed at 1000 tokens one month from now.
pub const SOONER_AMOUNT: u64 = 1000;
pub const SOONER_MONTHS: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("negative or zero input: {0}")]
    InvalidInput(&'static str),
    #[error("language registry error: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FtrClass {
    Strong,
    Weak,
}

impl FtrClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FtrClass::Strong => "strong",
            FtrClass::Weak => "weak",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Language {
    pub code: String,
    pub display_name: String,
    pub ftr_class: FtrClass,
}

static LANGUAGES_JSON: &str = include_str!("assets/languages.json");

/// The shipped 22-language registry (10 weak FTR, 12 strong FTR).
pub fn language_registry() -> Vec<Language> {
    serde_json::from_str(LANGUAGES_JSON).expect("embedded language registry is valid")
}

/// Load a registry from an external JSON file with the same schema as the
/// shipped asset, so the language set is editable without recompilation.
pub fn load_language_registry(path: &std::path::Path) -> Result<Vec<Language>, DesignError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DesignError::Registry(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DesignError::Registry(e.to_string()))
}

pub fn find_language(registry: &[Language], code: &str) -> Option<Language> {
    let code = code.to_ascii_lowercase();
    registry.iter().find(|l| l.code == code).cloned()
}

/// A single reward: an amount delivered a whole number of months from now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RewardOption {
    pub delivery_months: u32,
    pub amount: u64,
}

impl RewardOption {
    pub fn new(delivery_months: u32, amount: u64) -> Result<Self, DesignError> {
        if amount == 0 {
            return Err(DesignError::InvalidInput("amount must be > 0"));
        }
        if delivery_months == 0 {
            return Err(DesignError::InvalidInput("delivery_months must be >= 1"));
        }
        Ok(Self {
            delivery_months,
            amount,
        })
    }
}

/// Later reward under yearly interest `i` compounded over `d` months,
/// truncated to whole tokens. Truncation (rather than nearest rounding)
/// is pinned by the (10%, 18) -> 1153 and (25%, 18) -> 1397 cells.
pub fn compute_delayed_reward(r1: u64, interest: f64, delay_months: u32) -> Result<u64, DesignError> {
    if r1 == 0 {
        return Err(DesignError::InvalidInput("r1 must be > 0"));
    }
    if interest < 0.0 || !interest.is_finite() {
        return Err(DesignError::InvalidInput("interest must be >= 0"));
    }
    let exact = r1 as f64 * (1.0 + interest).powf(delay_months as f64 / 12.0);
    // Guard against powf landing a few ulps under an exact integer.
    Ok((exact * (1.0 + 1e-13)).floor() as u64)
}

/// One cross-period condition: (language, delay, interest) with the sooner
/// option fixed at 1000 tokens one month out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPeriodCell {
    pub language: Language,
    pub delay_months: u32,
    pub interest: f64,
    pub sooner: RewardOption,
    pub later: RewardOption,
}

/// One same-period condition: both options delivered `t` months from now.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamePeriodCell {
    pub language: Language,
    pub t_months: u32,
    pub smaller: RewardOption,
    pub larger: RewardOption,
}

/// Either study's cell, as seen by prompting and run orchestration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    CrossPeriod(CrossPeriodCell),
    SamePeriod(SamePeriodCell),
}

impl Cell {
    pub fn language(&self) -> &Language {
        match self {
            Cell::CrossPeriod(c) => &c.language,
            Cell::SamePeriod(c) => &c.language,
        }
    }

    /// First-listed reward when the sooner/smaller option leads.
    pub fn sooner(&self) -> RewardOption {
        match self {
            Cell::CrossPeriod(c) => c.sooner,
            Cell::SamePeriod(c) => c.smaller,
        }
    }

    pub fn later(&self) -> RewardOption {
        match self {
            Cell::CrossPeriod(c) => c.later,
            Cell::SamePeriod(c) => c.larger,
        }
    }

    /// Stable key identifying the cell's coordinates within a run.
    pub fn key(&self) -> String {
        match self {
            Cell::CrossPeriod(c) => format!(
                "{}:d{}:i{}",
                c.language.code,
                c.delay_months,
                format_interest(c.interest)
            ),
            Cell::SamePeriod(c) => {
                format!("{}:t{}:r{}", c.language.code, c.t_months, c.larger.amount)
            }
        }
    }
}

fn format_interest(i: f64) -> String {
    // 0.05 -> "5", 2.00 -> "200"; percent form keeps keys integral.
    format!("{}", (i * 100.0).round() as u64)
}

/// Full cross-period grid, ordered by (language, delay, interest).
pub fn build_cross_period_grid(languages: &[Language]) -> Vec<CrossPeriodCell> {
    let mut cells = Vec::with_capacity(languages.len() * DELAYS_MONTHS.len() * INTEREST_RATES.len());
    for language in languages {
        for &d in &DELAYS_MONTHS {
            for &i in &INTEREST_RATES {
                let r2 = compute_delayed_reward(SOONER_AMOUNT, i, d)
                    .expect("grid constants are valid");
                cells.push(CrossPeriodCell {
                    language: language.clone(),
                    delay_months: d,
                    interest: i,
                    sooner: RewardOption {
                        delivery_months: SOONER_MONTHS,
                        amount: SOONER_AMOUNT,
                    },
                    later: RewardOption {
                        delivery_months: SOONER_MONTHS + d,
                        amount: r2,
                    },
                });
            }
        }
    }
    cells
}

/// Full same-period grid, ordered by (language, t, r2).
pub fn build_same_period_grid(languages: &[Language]) -> Vec<SamePeriodCell> {
    let mut cells =
        Vec::with_capacity(languages.len() * SAME_PERIOD_TIMES.len() * SAME_PERIOD_REWARDS.len());
    for language in languages {
        for &t in &SAME_PERIOD_TIMES {
            for &r2 in &SAME_PERIOD_REWARDS {
                cells.push(SamePeriodCell {
                    language: language.clone(),
                    t_months: t,
                    smaller: RewardOption {
                        delivery_months: t,
                        amount: SOONER_AMOUNT,
                    },
                    larger: RewardOption {
                        delivery_months: t,
                        amount: r2,
                    },
                });
            }
        }
    }
    cells
}

/// Which slot the sooner/smaller option is listed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PresentationOrder {
    pub sooner_listed_first: bool,
}

/// Balanced order plan for one cell: alternating orders, with the odd
/// extra sample decided by the cell index parity so the global balance
/// stays within one.
pub fn plan_orders(n_samples: usize, cell_index: usize) -> Vec<PresentationOrder> {
    let mut orders = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let sooner_first = if k + 1 == n_samples && n_samples % 2 == 1 {
            cell_index % 2 == 0
        } else {
            k % 2 == 0
        };
        orders.push(PresentationOrder {
            sooner_listed_first: sooner_first,
        });
    }
    orders
}

/// Canonical CSV export of a cell list. Column layout is shared by both
/// studies; `d` and `interest` are empty for same-period cells.
pub fn grid_to_csv(cells: &[Cell], unit: &str) -> String {
    let mut out = String::from("language,ftr_class,study,t1,r1,t2,r2,d,interest,unit\n");
    for cell in cells {
        match cell {
            Cell::CrossPeriod(c) => {
                out.push_str(&format!(
                    "{},{},cross_period,{},{},{},{},{},{},{}\n",
                    c.language.code,
                    c.language.ftr_class.as_str(),
                    c.sooner.delivery_months,
                    c.sooner.amount,
                    c.later.delivery_months,
                    c.later.amount,
                    c.delay_months,
                    c.interest,
                    unit,
                ));
            }
            Cell::SamePeriod(c) => {
                out.push_str(&format!(
                    "{},{},same_period,{},{},{},{},,,{}\n",
                    c.language.code,
                    c.language.ftr_class.as_str(),
                    c.smaller.delivery_months,
                    c.smaller.amount,
                    c.larger.delivery_months,
                    c.larger.amount,
                    unit,
                ));
            }
        }
    }
    out
}

/// Render the cross-period reward matrix as an aligned text table
/// (interest rate rows, delay columns).
pub fn render_reward_table() -> String {
    let mut out = String::new();
    out.push_str("Values of r2 across experimental cells (r1 = 1000, t1 = 1 month)\n");
    out.push_str(&format!("{:>8} |", "i (%/yr)"));
    for d in DELAYS_MONTHS {
        out.push_str(&format!("{d:>7}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(10 + 7 * DELAYS_MONTHS.len()));
    out.push('\n');
    for i in INTEREST_RATES {
        out.push_str(&format!("{:>8} |", format_interest(i)));
        for d in DELAYS_MONTHS {
            let r2 = compute_delayed_reward(SOONER_AMOUNT, i, d).unwrap();
            out.push_str(&format!("{r2:>7}"));
        }
        out.push('\n');
    }
    out
}
