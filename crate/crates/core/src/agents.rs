//! Simulated survey respondents with known ground-truth preferences.
//!
//! Two families: discounted random-utility agents (exponential,
//! hyperbolic, or quasi-hyperbolic present value with Luce choice noise)
//! and lexicographic agents whose cross-period choices ignore reward
//! magnitudes. Used as estimation oracles and as respondents in
//! simulated dress-rehearsal runs.

use crate::design::{Cell, FtrClass, Language, PresentationOrder, RewardOption};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DiscountSpec {
    Exponential { delta: f64 },
    Hyperbolic { delta: f64 },
    QuasiHyperbolic { delta: f64, beta: f64 },
}

impl DiscountSpec {
    pub fn delta(&self) -> f64 {
        match *self {
            DiscountSpec::Exponential { delta }
            | DiscountSpec::Hyperbolic { delta }
            | DiscountSpec::QuasiHyperbolic { delta, .. } => delta,
        }
    }
}

/// Present value of reward `r` delivered `t_months` from now. Times are
/// absolute delivery times, so the sooner option at one month is itself
/// discounted.
pub fn present_value(discount: DiscountSpec, r: f64, t_months: f64) -> f64 {
    let years = t_months / 12.0;
    match discount {
        DiscountSpec::Exponential { delta } => r / (1.0 + delta).powf(years),
        DiscountSpec::Hyperbolic { delta } => r / (1.0 + delta * years),
        DiscountSpec::QuasiHyperbolic { delta, beta } => {
            if t_months == 0.0 {
                r
            } else {
                beta * r / (1.0 + delta).powf(years)
            }
        }
    }
}

/// Discounted random-utility agent: Luce choice over present values with
/// noise parameter mu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RumAgent {
    pub discount: DiscountSpec,
    pub mu: f64,
}

impl RumAgent {
    pub fn exponential(delta: f64, mu: f64) -> Self {
        assert!(delta > 0.0 && mu > 0.0);
        Self {
            discount: DiscountSpec::Exponential { delta },
            mu,
        }
    }

    /// Probability of choosing the sooner option:
    /// EU_s^(1/mu) / (EU_s^(1/mu) + EU_l^(1/mu)), evaluated in log space
    /// as logistic((ln EU_s - ln EU_l)/mu).
    pub fn choice_prob_sooner(&self, sooner: RewardOption, later: RewardOption) -> f64 {
        let eu_s = present_value(self.discount, sooner.amount as f64, sooner.delivery_months as f64);
        let eu_l = present_value(self.discount, later.amount as f64, later.delivery_months as f64);
        choice_prob_from_utilities(eu_s, eu_l, self.mu)
    }
}

/// Luce choice probability for the first option given two positive
/// utilities, computed in log space.
pub fn choice_prob_from_utilities(eu_first: f64, eu_second: f64, mu: f64) -> f64 {
    let z = (eu_first.ln() - eu_second.ln()) / mu;
    logistic(z)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Lexicographic agent: cross-period choices depend only on the delay,
/// same-period choices respond to the reward gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicographicAgent {
    /// Later-choice log-odds intercept for the delay response.
    pub a: f64,
    /// Later-choice log-odds slope per month of delay.
    pub b: f64,
    /// Same-period sensitivity to the reward gap, per 1000 tokens.
    pub gamma: f64,
}

impl LexicographicAgent {
    /// Probability of the later (cross-period) or larger (same-period)
    /// option for a given cell.
    pub fn choice_prob_later(&self, cell: &Cell) -> f64 {
        match cell {
            Cell::CrossPeriod(c) => logistic(self.a + self.b * c.delay_months as f64),
            Cell::SamePeriod(c) => {
                let gap = (c.larger.amount as f64 - c.smaller.amount as f64) / 1000.0;
                logistic(self.gamma * gap)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Agent {
    Rum(RumAgent),
    Lexicographic(LexicographicAgent),
}

impl Agent {
    pub fn choice_prob_later(&self, cell: &Cell) -> f64 {
        match self {
            Agent::Rum(a) => 1.0 - a.choice_prob_sooner(cell.sooner(), cell.later()),
            Agent::Lexicographic(a) => a.choice_prob_later(cell),
        }
    }

    /// Draw one reply, rendered as "(1)" or "(2)" consistent with the
    /// presentation order. Deterministic given the seed.
    pub fn respond(&self, cell: &Cell, order: PresentationOrder, seed: u64) -> String {
        let p_later = self.choice_prob_later(cell);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let later_chosen = rng.gen::<f64>() < p_later;
        let slot = match (later_chosen, order.sooner_listed_first) {
            (true, true) | (false, false) => 2,
            (true, false) | (false, true) => 1,
        };
        format!("({slot})")
    }

    /// Like `respond`, wrapping the index in filler phrasing so the reply
    /// parser gets exercised on non-minimal text.
    pub fn respond_noisy(&self, cell: &Cell, order: PresentationOrder, seed: u64) -> String {
        let bare = self.respond(cell, order, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        match rng.gen_range(0..3) {
            0 => format!("I prefer option {bare}."),
            1 => format!("After considering both, my answer is {bare}"),
            _ => bare,
        }
    }
}

/// Population of simulated respondents, one agent per language, used for
/// calibrated dress rehearsals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Default agents per FTR class; per-language entries override.
    pub weak_ftr: Agent,
    pub strong_ftr: Agent,
    #[serde(default)]
    pub overrides: std::collections::BTreeMap<String, Agent>,
}

impl PopulationSpec {
    /// Calibrated default: weak-FTR agents are more patient (smaller
    /// delta) than strong-FTR agents.
    pub fn default_calibrated() -> Self {
        Self {
            weak_ftr: Agent::Rum(RumAgent::exponential(0.8, 0.5)),
            strong_ftr: Agent::Rum(RumAgent::exponential(1.2, 0.5)),
            overrides: Default::default(),
        }
    }

    /// Lexicographic population with a small weak/strong gap in the
    /// delay intercept.
    pub fn default_lexicographic() -> Self {
        Self {
            weak_ftr: Agent::Lexicographic(LexicographicAgent {
                a: -1.0,
                b: -0.02,
                gamma: 0.6,
            }),
            strong_ftr: Agent::Lexicographic(LexicographicAgent {
                a: -1.2,
                b: -0.02,
                gamma: 0.6,
            }),
            overrides: Default::default(),
        }
    }

    pub fn agent_for(&self, language: &Language) -> Agent {
        if let Some(agent) = self.overrides.get(&language.code) {
            return *agent;
        }
        match language.ftr_class {
            FtrClass::Weak => self.weak_ftr,
            FtrClass::Strong => self.strong_ftr,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Deterministic per-sample seed derived from the run seed, cell index,
/// and sample index.
pub fn sample_seed(run_seed: u64, cell_index: usize, sample_index: usize) -> u64 {
    let mut h = run_seed
        .wrapping_mul(0x100000001b3)
        .wrapping_add(cell_index as u64);
    h = h.wrapping_mul(0x100000001b3).wrapping_add(sample_index as u64);
    h ^ (h >> 31)
}

/// Synthetic chain-of-thought explanation for simulated CoT runs.
///
/// Topic mixture shifts with the cell the way the live corpus does:
/// risk talk rises with delay, urgency talk rises with interest, and
/// strong-FTR languages lean away from risk toward opportunity cost.
pub fn synthetic_explanation(cell: &Cell, seed: u64) -> String {
    const RISK: &[&str] = &[
        "risk", "uncertainty", "future", "change", "guarantee", "inflation", "waiting", "value",
        "conditions", "doubt",
    ];
    const OPPORTUNITY: &[&str] = &[
        "invest", "opportunity", "interest", "return", "growth", "alternative", "earn", "worth",
        "potential", "compound",
    ];
    const URGENCY: &[&str] = &[
        "immediate", "urgent", "need", "now", "sooner", "spend", "liquidity", "today", "pressing",
        "cash",
    ];
    let (d, i) = match cell {
        Cell::CrossPeriod(c) => (c.delay_months as f64, c.interest),
        Cell::SamePeriod(c) => (c.t_months as f64, 0.0),
    };
    let strong = cell.language().ftr_class == FtrClass::Strong;
    let mut w_risk = 0.30 + 0.40 * (d / 36.0) - if strong { 0.06 } else { 0.0 };
    let mut w_urgency = 0.20 + 0.10 * (i / 2.0) - if strong { 0.02 } else { 0.0 };
    w_risk = w_risk.max(0.05);
    w_urgency = w_urgency.max(0.05);
    let w_opp = (1.0 - w_risk - w_urgency).max(0.05);
    let total = w_risk + w_urgency + w_opp;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut words = Vec::with_capacity(36);
    words.extend_from_slice(&["considering", "the", "two", "options"]);
    for _ in 0..32 {
        let u: f64 = rng.gen::<f64>() * total;
        let pool = if u < w_risk {
            RISK
        } else if u < w_risk + w_opp {
            OPPORTUNITY
        } else {
            URGENCY
        };
        words.push(pool[rng.gen_range(0..pool.len())]);
    }
    words.join(" ")
}
