//! Measurement harness for eliciting intertemporal preferences from
//! chat-based language models.
//!
//! The crate covers the full instrument: experiment-grid construction
//! ([`design`]), the two survey protocols and reply parsing ([`prompting`]),
//! a chat-completions client with a pluggable transport ([`client`]),
//! simulated respondents with known ground truth ([`agents`]), durable
//! resumable run state ([`storage`]), discount-rate maximum likelihood
//! ([`estimation`]), fixed-effects regressions with cluster-robust errors
//! ([`econometrics`]), the chain-of-thought topic pipeline ([`topics`]),
//! and report/figure emission ([`report`]).

pub mod agents;
pub mod client;
pub mod design;
pub mod econometrics;
pub mod estimation;
pub mod prompting;
pub mod report;
pub mod storage;
pub mod topics;

pub use design::{
    build_cross_period_grid, build_same_period_grid, compute_delayed_reward, plan_orders,
    CrossPeriodCell, FtrClass, Language, PresentationOrder, RewardOption, SamePeriodCell,
};
pub use prompting::{ChatMessage, ChoiceOutcome, ProtocolVariant, Role};
