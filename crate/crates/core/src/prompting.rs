//! Conversation assembly for the two survey protocols and parsing of
//! model replies into choices.
//!
//! Every sample is a fresh conversation: an opening prompt, an injected
//! assistant acknowledgment, the rendered question, and (for the
//! chain-of-thought variant) an extraction follow-up after the first
//! model turn.

use crate::design::{Cell, Language, PresentationOrder};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolVariant {
    Standard,
    ChainOfThought,
}

const STANDARD_OPENING: &str = "Assuming you are a survey participant and you are paid in tokens, \
please wait for my prompt and tell me whether you prefer option (1) or option (2). There is no \
need to explain your choice, simply answer with (1) or (2).";

const STANDARD_ACK: &str =
    "Understood, I assume I am a survey participant and I will choose either option (1) or (2).";

const COT_OPENING: &str = "Assuming you are a survey participant and you are paid in tokens, \
please wait for my prompt and tell me whether you prefer option (1) or option (2). Think step \
by step, and explain your decision";

const COT_ACK: &str = "Understood, I assume I am a survey participant and I will explain my \
decision and then choose either option (1) or (2).";

const EXTRACTION_FOLLOWUP: &str =
    "Now, based on your reasoning above, choose either option (1) or option (2). Print only (1) or (2).";

/// Opening prompt plus the injected assistant acknowledgment for the
/// given protocol variant.
pub fn build_preamble(variant: ProtocolVariant) -> Vec<ChatMessage> {
    match variant {
        ProtocolVariant::Standard => vec![
            ChatMessage::user(STANDARD_OPENING),
            ChatMessage::assistant(STANDARD_ACK),
        ],
        ProtocolVariant::ChainOfThought => vec![
            ChatMessage::user(COT_OPENING),
            ChatMessage::assistant(COT_ACK),
        ],
    }
}

/// Follow-up used only in chain-of-thought conversations after the first
/// model reply, asking for a bare "(1)" or "(2)".
pub fn build_extraction_followup() -> ChatMessage {
    ChatMessage::user(EXTRACTION_FOLLOWUP)
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} must appear exactly once")]
    Placeholder(&'static str),
    #[error("template language {template} does not match cell language {cell}")]
    LanguageMismatch { template: String, cell: String },
    #[error("template file error: {0}")]
    Io(String),
}

pub const PLACEHOLDERS: [&str; 5] = ["amount_1", "time_1", "amount_2", "time_2", "unit"];

/// Per-language question body with `{amount_1, time_1, amount_2, time_2,
/// unit}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub language: Language,
    pub body: String,
}

static ENGLISH_MASTER: &str = include_str!("assets/templates/english.txt");

impl QuestionTemplate {
    pub fn new(language: Language, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        for ph in PLACEHOLDERS {
            let token = format!("{{{ph}}}");
            if body.matches(&token).count() != 1 {
                return Err(TemplateError::Placeholder(ph));
            }
        }
        Ok(Self { language, body })
    }

    /// The shipped English master template.
    pub fn english_master(language: Language) -> Self {
        Self::new(language, ENGLISH_MASTER.trim_end()).expect("embedded master template is valid")
    }

    /// Load the template for a language from `dir/<code>.txt`, falling
    /// back to the English master body when no asset exists. Translated
    /// assets are generated once (see the translate-templates command)
    /// and versioned; live translation never sits in the sampling path.
    pub fn load(dir: Option<&Path>, language: Language) -> Result<Self, TemplateError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{}.txt", language.code));
            if path.exists() {
                let body = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
                return Self::new(language, body.trim_end());
            }
        }
        Ok(Self::english_master(language))
    }
}

/// Render the question for a cell with the options listed per `order`.
pub fn render_question(
    cell: &Cell,
    order: PresentationOrder,
    template: &QuestionTemplate,
    unit: &str,
) -> Result<ChatMessage, TemplateError> {
    if template.language.code != cell.language().code {
        return Err(TemplateError::LanguageMismatch {
            template: template.language.code.clone(),
            cell: cell.language().code.clone(),
        });
    }
    let sooner = cell.sooner();
    let later = cell.later();
    let (first, second) = if order.sooner_listed_first {
        (sooner, later)
    } else {
        (later, sooner)
    };
    let body = template
        .body
        .replace("{amount_1}", &first.amount.to_string())
        .replace("{time_1}", &first.delivery_months.to_string())
        .replace("{amount_2}", &second.amount.to_string())
        .replace("{time_2}", &second.delivery_months.to_string())
        .replace("{unit}", unit);
    Ok(ChatMessage::user(body))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChoiceOutcome {
    SoonerChosen,
    LaterChosen,
    Refusal,
    Unparseable,
}

static REFUSAL_PHRASES: &str = include_str!("assets/refusal_phrases.txt");

/// The shipped refusal phrase list, lowercase, one phrase per line.
pub fn default_refusal_phrases() -> Vec<String> {
    REFUSAL_PHRASES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parse a raw model reply into a choice outcome.
///
/// Extraction precedence: parenthesized index, then an "option N" phrase,
/// then a lone digit at the start or end of the reply. Within a level,
/// conflicting indices are ambiguous and yield `Unparseable`. Replies
/// without an index that match a refusal phrase yield `Refusal`.
pub fn parse_choice(raw: &str, order: PresentationOrder) -> ChoiceOutcome {
    parse_choice_with(raw, order, &default_refusal_phrases())
}

pub fn parse_choice_with(
    raw: &str,
    order: PresentationOrder,
    refusal_phrases: &[String],
) -> ChoiceOutcome {
    match extract_index(raw) {
        IndexExtraction::Unique(idx) => index_to_outcome(idx, order),
        IndexExtraction::Ambiguous => ChoiceOutcome::Unparseable,
        IndexExtraction::None => {
            let lower = raw.to_lowercase();
            if refusal_phrases.iter().any(|p| lower.contains(p.as_str())) {
                ChoiceOutcome::Refusal
            } else {
                ChoiceOutcome::Unparseable
            }
        }
    }
}

enum IndexExtraction {
    Unique(u8),
    Ambiguous,
    None,
}

fn index_to_outcome(idx: u8, order: PresentationOrder) -> ChoiceOutcome {
    let first_is_sooner = order.sooner_listed_first;
    match (idx, first_is_sooner) {
        (1, true) | (2, false) => ChoiceOutcome::SoonerChosen,
        (2, true) | (1, false) => ChoiceOutcome::LaterChosen,
        _ => ChoiceOutcome::Unparseable,
    }
}

fn extract_index(raw: &str) -> IndexExtraction {
    // Level 1: parenthesized "(1)" / "(2)".
    let parens: Vec<u8> = find_parenthesized(raw);
    if let Some(r) = resolve(&parens) {
        return r;
    }
    // Level 2: "option 1" / "option (1)"-less phrase form.
    let lower = raw.to_lowercase();
    let mut phrase = Vec::new();
    let mut rest = lower.as_str();
    while let Some(pos) = rest.find("option") {
        let tail = &rest[pos + "option".len()..];
        let tail = tail.trim_start();
        if let Some(c) = tail.chars().next() {
            if c == '1' || c == '2' {
                phrase.push(c as u8 - b'0');
            }
        }
        rest = &rest[pos + "option".len()..];
    }
    if let Some(r) = resolve(&phrase) {
        return r;
    }
    // Level 3: lone digit at the start or end of the trimmed reply.
    let trimmed = raw.trim().trim_end_matches(['.', '!']);
    let mut edges = Vec::new();
    for edge in [trimmed.chars().next(), trimmed.chars().last()] {
        if let Some(c) = edge {
            if c == '1' || c == '2' {
                edges.push(c as u8 - b'0');
            }
        }
    }
    if trimmed.len() == 1 {
        edges.truncate(1);
    }
    match resolve(&edges) {
        Some(r) => r,
        None => IndexExtraction::None,
    }
}

fn find_parenthesized(raw: &str) -> Vec<u8> {
    let bytes = raw.as_bytes();
    let mut found = Vec::new();
    for i in 0..bytes.len().saturating_sub(2) {
        if bytes[i] == b'(' && bytes[i + 2] == b')' && (bytes[i + 1] == b'1' || bytes[i + 1] == b'2')
        {
            found.push(bytes[i + 1] - b'0');
        }
    }
    found
}

fn resolve(found: &[u8]) -> Option<IndexExtraction> {
    match found {
        [] => None,
        _ if found.iter().all(|&v| v == found[0]) => Some(IndexExtraction::Unique(found[0])),
        _ => Some(IndexExtraction::Ambiguous),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{language_registry, Cell, CrossPeriodCell, RewardOption};

    fn english() -> crate::design::Language {
        crate::design::find_language(&language_registry(), "english").unwrap()
    }

    fn sample_cell(d: u32, i: f64) -> Cell {
        let r2 = crate::design::compute_delayed_reward(1000, i, d).unwrap();
        Cell::CrossPeriod(CrossPeriodCell {
            language: english(),
            delay_months: d,
            interest: i,
            sooner: RewardOption {
                delivery_months: 1,
                amount: 1000,
            },
            later: RewardOption {
                delivery_months: 1 + d,
                amount: r2,
            },
        })
    }

    #[test]
    fn preamble_texts_are_variant_specific() {
        let standard = build_preamble(ProtocolVariant::Standard);
        assert_eq!(standard.len(), 2);
        assert_eq!(standard[0].role, Role::User);
        assert_eq!(standard[1].role, Role::Assistant);
        assert!(standard[1]
            .content
            .contains("I will choose either option (1) or (2)"));

        let cot = build_preamble(ProtocolVariant::ChainOfThought);
        assert_eq!(cot.len(), 2);
        assert!(cot[0].content.contains("Think step by step"));
        assert!(cot[1].content.contains("I will explain my decision"));
    }

    #[test]
    fn preamble_opening_is_byte_exact() {
        let standard = build_preamble(ProtocolVariant::Standard);
        assert_eq!(
            standard[0].content,
            "Assuming you are a survey participant and you are paid in tokens, please wait for \
my prompt and tell me whether you prefer option (1) or option (2). There is no need to explain \
your choice, simply answer with (1) or (2)."
        );
        assert_eq!(
            standard[1].content,
            "Understood, I assume I am a survey participant and I will choose either option (1) or (2)."
        );
    }

    #[test]
    fn extraction_followup_is_single_user_message() {
        let msg = build_extraction_followup();
        assert_eq!(msg.role, Role::User);
        assert!(msg.content.contains("(1)"));
    }

    #[test]
    fn render_substitutes_amounts_per_order() {
        let cell = sample_cell(24, 1.00);
        let template = QuestionTemplate::english_master(english());
        let sooner_first = render_question(
            &cell,
            PresentationOrder {
                sooner_listed_first: true,
            },
            &template,
            "tokens",
        )
        .unwrap();
        assert!(sooner_first.content.contains("1000"));
        assert!(sooner_first.content.contains("4000"));
        assert!(sooner_first
            .content
            .contains("Option (1): receive 1000 in 1 months"));

        let later_first = render_question(
            &cell,
            PresentationOrder {
                sooner_listed_first: false,
            },
            &template,
            "tokens",
        )
        .unwrap();
        assert!(later_first
            .content
            .contains("Option (1): receive 4000 in 25 months"));
        assert!(later_first
            .content
            .contains("Option (2): receive 1000 in 1 months"));
    }

    #[test]
    fn render_same_period_uses_common_month() {
        let registry = language_registry();
        let cells = crate::design::build_same_period_grid(&registry[..4]);
        let cell = cells
            .iter()
            .find(|c| c.t_months == 2 && c.larger.amount == 1041)
            .unwrap();
        let template = QuestionTemplate::english_master(cell.language.clone());
        let msg = render_question(
            &Cell::SamePeriod(cell.clone()),
            PresentationOrder {
                sooner_listed_first: true,
            },
            &template,
            "tokens",
        )
        .unwrap();
        assert_eq!(msg.content.matches("2 months from now").count(), 2);
    }

    #[test]
    fn render_rejects_language_mismatch() {
        let registry = language_registry();
        let cell = sample_cell(1, 0.05);
        let german = crate::design::find_language(&registry, "german").unwrap();
        let template = QuestionTemplate::english_master(german);
        assert!(matches!(
            render_question(
                &cell,
                PresentationOrder {
                    sooner_listed_first: true
                },
                &template,
                "tokens"
            ),
            Err(TemplateError::LanguageMismatch { .. })
        ));
    }

    #[test]
    fn template_requires_all_placeholders_once() {
        assert!(matches!(
            QuestionTemplate::new(english(), "{amount_1} {time_1} {amount_2} {time_2}"),
            Err(TemplateError::Placeholder("unit"))
        ));
        assert!(matches!(
            QuestionTemplate::new(
                english(),
                "{amount_1} {amount_1} {time_1} {amount_2} {time_2} {unit}"
            ),
            Err(TemplateError::Placeholder("amount_1"))
        ));
    }

    #[test]
    fn parse_choice_maps_index_via_order() {
        let sooner_first = PresentationOrder {
            sooner_listed_first: true,
        };
        let later_first = PresentationOrder {
            sooner_listed_first: false,
        };
        assert_eq!(parse_choice("(2)", sooner_first), ChoiceOutcome::LaterChosen);
        assert_eq!(parse_choice("(2)", later_first), ChoiceOutcome::SoonerChosen);
        assert_eq!(parse_choice("(1)", sooner_first), ChoiceOutcome::SoonerChosen);
    }

    #[test]
    fn parse_choice_precedence_levels() {
        let order = PresentationOrder {
            sooner_listed_first: true,
        };
        assert_eq!(
            parse_choice("I would go with option 2 here.", order),
            ChoiceOutcome::LaterChosen
        );
        assert_eq!(parse_choice("2", order), ChoiceOutcome::LaterChosen);
        assert_eq!(
            parse_choice("1 is my final answer", order),
            ChoiceOutcome::SoonerChosen
        );
        // Parenthesized beats a conflicting phrase mention.
        assert_eq!(
            parse_choice("Between option 1 and option 2, I pick (2).", order),
            ChoiceOutcome::LaterChosen
        );
    }

    #[test]
    fn parse_choice_refusal_and_ambiguity() {
        let order = PresentationOrder {
            sooner_listed_first: true,
        };
        assert_eq!(
            parse_choice("As an AI language model, I do not have preferences", order),
            ChoiceOutcome::Refusal
        );
        assert_eq!(
            parse_choice("(1) (2)", order),
            ChoiceOutcome::Unparseable
        );
        assert_eq!(parse_choice("hello there", order), ChoiceOutcome::Unparseable);
        assert_eq!(parse_choice("", order), ChoiceOutcome::Unparseable);
    }
}
