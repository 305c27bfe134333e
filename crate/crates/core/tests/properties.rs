//! Property-based invariants over the design, prompting, and text
//! pipeline, complementing the example-based unit tests.

use proptest::prelude::*;
use timepref::design::{
    build_cross_period_grid, build_same_period_grid, compute_delayed_reward, language_registry,
    Cell, PresentationOrder,
};
use timepref::prompting::{parse_choice, render_question, ChoiceOutcome, QuestionTemplate};
use timepref::topics::{default_stopwords, porter_stem, preprocess};

const DELAYS: [u32; 9] = [1, 2, 3, 4, 6, 12, 18, 24, 36];
const INTERESTS: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 1.00, 2.00];

proptest! {
    /// The later reward never undercuts the principal and is weakly
    /// monotone in both delay and interest along the grid axes.
    #[test]
    fn delayed_reward_monotone(di in 0usize..9, ii in 0usize..7) {
        let d = DELAYS[di];
        let i = INTERESTS[ii];
        let r2 = compute_delayed_reward(1000, i, d).unwrap();
        prop_assert!(r2 >= 1000);
        if di + 1 < DELAYS.len() {
            prop_assert!(compute_delayed_reward(1000, i, DELAYS[di + 1]).unwrap() >= r2);
        }
        if ii + 1 < INTERESTS.len() {
            prop_assert!(compute_delayed_reward(1000, INTERESTS[ii + 1], d).unwrap() >= r2);
        }
    }

    /// Rendering a question and replying with a rendered option index
    /// always parses back to that option, for any cell and order.
    #[test]
    fn prompt_round_trip(
        lang_idx in 0usize..22,
        cell_idx in 0usize..63,
        same_period in any::<bool>(),
        sooner_first in any::<bool>(),
        pick_sooner in any::<bool>(),
    ) {
        let language = language_registry()[lang_idx].clone();
        let cell = if same_period {
            let cells = build_same_period_grid(&[language.clone()]);
            Cell::SamePeriod(cells[cell_idx % cells.len()].clone())
        } else {
            let cells = build_cross_period_grid(&[language.clone()]);
            Cell::CrossPeriod(cells[cell_idx % cells.len()].clone())
        };
        let order = PresentationOrder { sooner_listed_first: sooner_first };
        let template = QuestionTemplate::english_master(language);
        let question = render_question(&cell, order, &template, "tokens").unwrap();
        prop_assert!(question.content.contains("(1)") && question.content.contains("(2)"));

        let index = if pick_sooner == sooner_first { 1 } else { 2 };
        let expected = if pick_sooner {
            ChoiceOutcome::SoonerChosen
        } else {
            ChoiceOutcome::LaterChosen
        };
        prop_assert_eq!(parse_choice(&format!("({index})"), order), expected);
    }

    /// Stems never grow, are lowercase-alphabetic for lowercase input,
    /// and short words pass through unchanged.
    #[test]
    fn porter_stem_invariants(word in "[a-z]{1,12}") {
        let stem = porter_stem(&word);
        prop_assert!(stem.len() <= word.len());
        prop_assert!(!stem.is_empty());
        prop_assert!(stem.chars().all(|c| c.is_ascii_lowercase()));
        if word.len() <= 2 {
            prop_assert_eq!(stem, word);
        }
    }

    /// Preprocessing output contains no stopwords, nothing shorter than
    /// three characters pre-stemming, and no numerics.
    #[test]
    fn preprocess_invariants(text in "[a-zA-Z0-9 .,!?']{0,200}") {
        let stopwords = default_stopwords();
        let tokens = preprocess(&text, &stopwords, &Default::default());
        for token in tokens {
            prop_assert!(!token.is_empty());
            prop_assert!(token.chars().all(|c| c.is_ascii_lowercase()));
        }
    }
}
