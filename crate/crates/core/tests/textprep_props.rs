mod common;

use locmt_core::textprep::{self, presets, StepId, StepSpec};
use proptest::prelude::*;

fn compiled(id: StepId) -> textprep::CompiledStep {
    let spec = match id {
        StepId::RemoveStopwords => StepSpec::new(id).with_param("lists", "ar,es,fr"),
        _ => StepSpec::new(id),
    };
    spec.compile().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn every_step_is_idempotent(text in common::wild_text()) {
        for id in StepId::ALL {
            let step = compiled(id);
            let once = step.apply(&text);
            prop_assert_eq!(step.apply(&once), once.clone(), "step {}", id);
        }
    }

    #[test]
    fn pipelines_are_idempotent(text in common::wild_text()) {
        for spec in [presets::nmt_clean(), presets::osb_clean()] {
            let p = spec.compile().unwrap();
            let once = p.apply(&text);
            prop_assert_eq!(p.apply(&once), once.clone(), "pipeline {}", spec.name);
        }
    }

    #[test]
    fn nmt_is_a_prefix_of_osb(text in common::wild_text()) {
        let osb = presets::osb_clean();
        let prefix = textprep::PipelineSpec { name: "prefix".into(), steps: osb.steps[..6].to_vec() };
        prop_assert_eq!(
            textprep::apply_pipeline(&prefix, &text).unwrap(),
            textprep::apply_pipeline(&presets::nmt_clean(), &text).unwrap()
        );
    }

    #[test]
    fn character_set_guarantees(text in common::wild_text()) {
        let stripped = textprep::strip_diacritics(&text);
        prop_assert!(!stripped.chars().any(locmt_core::unicode::is_default_diacritic));
        let kept: String = text.chars().filter(|c| !locmt_core::unicode::is_default_diacritic(*c)).collect();
        prop_assert_eq!(stripped, kept);
        let h = textprep::normalize_hamza(&text);
        let has_hamza_alef = h.chars().any(|c| matches!(c, '\u{0622}' | '\u{0623}' | '\u{0625}'));
        prop_assert!(!has_hamza_alef);
        prop_assert_eq!(h.chars().count(), text.chars().count());
    }

    #[test]
    fn lowercase_leaves_arabic_alone(text in common::wild_text()) {
        let arabic = |s: &str| s.chars().filter(|c| ('\u{0600}'..='\u{06FF}').contains(c)).collect::<String>();
        let out = compiled(StepId::Lowercase).apply(&text);
        prop_assert_eq!(arabic(&out), arabic(&text));
    }

    #[test]
    fn removal_steps_keep_token_order(text in common::mixed_text()) {
        // surviving characters appear as a subsequence of the input
        for id in [StepId::StripUrls, StepId::StripMentions, StepId::StripSpecialsNumbers, StepId::RemoveStopwords] {
            let out = compiled(id).apply(&text);
            let mut input = text.chars().filter(|c| !c.is_whitespace());
            for c in out.chars().filter(|c| !c.is_whitespace()) {
                prop_assert!(input.any(|i| i == c), "{} reordered {:?}", id, text);
            }
        }
    }
}
